use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::EnvStepResult;
use crate::error::{Error, Result};
use crate::mdp::TabularMdp;

/// One-step two-armed bandit with a random context: arm 1 pays 1, arm 0
/// pays 0, whatever the context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bandit {
    rng: ChaCha8Rng,
    done: bool,
}

impl Bandit {
    pub const WIDTH: usize = 2;

    pub fn new(rng: ChaCha8Rng) -> Self {
        Self { rng, done: true }
    }

    pub fn reset(&mut self) -> Vec<f32> {
        self.done = false;
        (0..Self::WIDTH).map(|_| self.rng.random_range(-1.0f32..1.0)).collect()
    }

    pub fn step(&mut self, action: usize) -> Result<EnvStepResult> {
        if self.done {
            return Err(Error::EpisodeOver);
        }
        self.done = true;
        Ok(EnvStepResult {
            observation: vec![0.0; Self::WIDTH],
            reward: action as f64,
            terminal: true,
            truncated: false,
        })
    }
}

/// Constant observation, any action pays 1 and ends the episode; `q ≡ 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OneStep {
    done: bool,
}

impl OneStep {
    pub fn new() -> Self {
        Self { done: true }
    }

    pub fn reset(&mut self) -> Vec<f32> {
        self.done = false;
        vec![1.0]
    }

    pub fn step(&mut self, _action: usize) -> Result<EnvStepResult> {
        if self.done {
            return Err(Error::EpisodeOver);
        }
        self.done = true;
        Ok(EnvStepResult { observation: vec![0.0], reward: 1.0, terminal: true, truncated: false })
    }
}

impl Default for OneStep {
    fn default() -> Self {
        Self::new()
    }
}

/// Deterministic chain: action 0 moves left, action 1 moves right, both
/// clamped at the ends. Taking any action in the rightmost state pays 1.
///
/// With this convention the optimal policy always moves right and
/// `v*(s) = γ^(n-1-s) / (1 - γ)`.
pub fn make_chain_mdp(n: usize, gamma: f64) -> Result<TabularMdp> {
    if n < 2 {
        return Err(Error::InvalidMdp(format!("a chain needs at least 2 states, got {n}")));
    }
    let mut transition = vec![0.0; n * 2 * n];
    let mut reward = vec![0.0; n * 2];
    for s in 0..n {
        let left = s.saturating_sub(1);
        let right = (s + 1).min(n - 1);
        transition[(s * 2) * n + left] = 1.0;
        transition[(s * 2 + 1) * n + right] = 1.0;
        if s == n - 1 {
            reward[s * 2] = 1.0;
            reward[s * 2 + 1] = 1.0;
        }
    }
    TabularMdp::new(n, 2, transition, reward, gamma, Some(1.0))
}

/// The chain as an episodic environment with one-hot observations, starting
/// at the left end and truncated after `4n` steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainWalk {
    n: usize,
    position: usize,
    steps: usize,
    done: bool,
}

impl ChainWalk {
    pub fn new(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidConfig(format!("a chain needs at least 2 states, got {n}")));
        }
        Ok(Self { n, position: 0, steps: 0, done: true })
    }

    pub fn n_states(&self) -> usize {
        self.n
    }

    fn observation(&self) -> Vec<f32> {
        let mut obs = vec![0.0; self.n];
        obs[self.position] = 1.0;
        obs
    }

    pub fn reset(&mut self) -> Vec<f32> {
        self.position = 0;
        self.steps = 0;
        self.done = false;
        self.observation()
    }

    pub fn step(&mut self, action: usize) -> Result<EnvStepResult> {
        if self.done {
            return Err(Error::EpisodeOver);
        }
        let reward = if self.position == self.n - 1 { 1.0 } else { 0.0 };
        self.position = if action == 1 { (self.position + 1).min(self.n - 1) } else { self.position.saturating_sub(1) };
        self.steps += 1;
        let truncated = self.steps >= 4 * self.n;
        self.done = truncated;
        Ok(EnvStepResult { observation: self.observation(), reward, terminal: false, truncated })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::ValueVector;
    use rand::SeedableRng;

    #[test]
    fn two_state_chain_value_matches_closed_form() {
        let mdp = make_chain_mdp(2, 0.5).unwrap();
        // Value iteration from zero, run to numerical convergence.
        let mut v = ValueVector::zeros(2);
        for _ in 0..200 {
            v = mdp.apply_optimality_operator(&v).unwrap();
        }
        assert!((v[0] - 0.5 / 0.5).abs() < 1e-12);
        assert!((v[1] - 1.0 / 0.5).abs() < 1e-12);
    }

    #[test]
    fn chain_optimum_always_moves_right() {
        for n in [2, 5, 9] {
            let gamma = 0.9;
            let mdp = make_chain_mdp(n, gamma).unwrap();
            let (v, pi) = mdp.solve_optimal();
            assert_eq!(pi.actions(), vec![1; n]);
            for s in 0..n {
                let closed = gamma.powi((n - 1 - s) as i32) / (1.0 - gamma);
                assert!((v[s] - closed).abs() < 1e-9);
            }
            assert_eq!(mdp.reward_bound(), 1.0);
        }
        assert!(make_chain_mdp(1, 0.9).is_err());
    }

    #[test]
    fn bandit_pays_arm_one() {
        let mut b = Bandit::new(ChaCha8Rng::seed_from_u64(0));
        let obs = b.reset();
        assert_eq!(obs.len(), 2);
        let r = b.step(1).unwrap();
        assert!(r.terminal && r.reward == 1.0);
        assert!(b.step(0).is_err());
        b.reset();
        assert_eq!(b.step(0).unwrap().reward, 0.0);
    }

    #[test]
    fn one_step_terminates_with_unit_reward() {
        let mut e = OneStep::new();
        e.reset();
        let r = e.step(0).unwrap();
        assert!(r.terminal && r.reward == 1.0);
    }

    #[test]
    fn chain_walk_reaches_goal() {
        let mut c = ChainWalk::new(3).unwrap();
        c.reset();
        let rewards: Vec<f64> = (0..4).map(|_| c.step(1).unwrap().reward).collect();
        assert_eq!(rewards, vec![0.0, 0.0, 1.0, 1.0]);
    }
}
