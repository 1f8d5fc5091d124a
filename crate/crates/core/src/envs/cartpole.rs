use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::EnvStepResult;
use crate::error::{Error, Result};

// Classic-control constants.
const GRAVITY: f64 = 9.8;
const MASS_CART: f64 = 1.0;
const MASS_POLE: f64 = 0.1;
const TOTAL_MASS: f64 = MASS_CART + MASS_POLE;
const HALF_LENGTH: f64 = 0.5;
const POLE_MASS_LENGTH: f64 = MASS_POLE * HALF_LENGTH;
const FORCE_MAG: f64 = 10.0;
const TAU: f64 = 0.02;
const X_THRESHOLD: f64 = 2.4;
const THETA_THRESHOLD: f64 = 12.0 * 2.0 * std::f64::consts::PI / 360.0;

pub const CARTPOLE_MAX_STEPS: u32 = 500;

/// Reward paid on the step that knocks the pole over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RewardConvention {
    /// `+1` while the pole is up, `0` on the step it falls.
    #[default]
    ZeroOnFailure,
    /// `+1` on every step, including the one that ends the episode.
    AlwaysOne,
}

impl std::str::FromStr for RewardConvention {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zero_on_failure" => Ok(RewardConvention::ZeroOnFailure),
            "always_one" => Ok(RewardConvention::AlwaysOne),
            _ => Err(Error::InvalidConfig(format!("unknown reward convention `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CartPoleState {
    pub x: f64,
    pub x_dot: f64,
    pub theta: f64,
    pub theta_dot: f64,
    pub steps: u32,
}

impl CartPoleState {
    pub fn zero() -> Self {
        Self { x: 0.0, x_dot: 0.0, theta: 0.0, theta_dot: 0.0, steps: 0 }
    }

    pub fn in_bounds(&self) -> bool {
        self.x.abs() <= X_THRESHOLD && self.theta.abs() <= THETA_THRESHOLD
    }

    pub fn observation(&self) -> Vec<f32> {
        vec![self.x as f32, self.x_dot as f32, self.theta as f32, self.theta_dot as f32]
    }

    /// One Euler step under `action` (0 pushes left, 1 pushes right).
    pub fn advance(&self, action: usize) -> Self {
        let force = if action == 1 { FORCE_MAG } else { -FORCE_MAG };
        let (sin, cos) = (self.theta.sin(), self.theta.cos());
        let temp = (force + POLE_MASS_LENGTH * self.theta_dot * self.theta_dot * sin) / TOTAL_MASS;
        let theta_acc = (GRAVITY * sin - cos * temp) / (HALF_LENGTH * (4.0 / 3.0 - MASS_POLE * cos * cos / TOTAL_MASS));
        let x_acc = temp - POLE_MASS_LENGTH * theta_acc * cos / TOTAL_MASS;
        Self {
            x: self.x + TAU * self.x_dot,
            x_dot: self.x_dot + TAU * x_acc,
            theta: self.theta + TAU * self.theta_dot,
            theta_dot: self.theta_dot + TAU * theta_acc,
            steps: self.steps + 1,
        }
    }
}

/// Cart-pole balancing with a 500-step limit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CartPole {
    state: CartPoleState,
    done: bool,
    convention: RewardConvention,
    rng: ChaCha8Rng,
}

impl CartPole {
    /// Created in the finished state; call [`CartPole::reset`] first.
    pub fn new(convention: RewardConvention, rng: ChaCha8Rng) -> Self {
        Self { state: CartPoleState::zero(), done: true, convention, rng }
    }

    pub fn state(&self) -> CartPoleState {
        self.state
    }

    /// Places the system in `state` with the episode alive.
    pub fn set_state(&mut self, state: CartPoleState) {
        self.state = state;
        self.done = false;
    }

    pub fn reset(&mut self) -> Vec<f32> {
        let mut draw = || self.rng.random_range(-0.05..=0.05);
        self.state = CartPoleState { x: draw(), x_dot: draw(), theta: draw(), theta_dot: draw(), steps: 0 };
        self.done = false;
        self.state.observation()
    }

    pub fn step(&mut self, action: usize) -> Result<EnvStepResult> {
        if self.done {
            return Err(Error::EpisodeOver);
        }
        if action > 1 {
            return Err(Error::InvalidAction { action, n_actions: 2 });
        }
        self.state = self.state.advance(action);
        let terminal = !self.state.in_bounds();
        let truncated = !terminal && self.state.steps >= CARTPOLE_MAX_STEPS;
        self.done = terminal || truncated;
        let reward = match (terminal, self.convention) {
            (true, RewardConvention::ZeroOnFailure) => 0.0,
            _ => 1.0,
        };
        Ok(EnvStepResult { observation: self.state.observation(), reward, terminal, truncated })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn env(seed: u64) -> CartPole {
        CartPole::new(RewardConvention::ZeroOnFailure, ChaCha8Rng::seed_from_u64(seed))
    }

    #[test]
    fn push_right_from_rest() {
        let next = CartPoleState::zero().advance(1);
        // Hand evaluation: temp = 10 / 1.1, θ'' = -temp / (0.5 (4/3 - 0.1/1.1)),
        // x'' = temp - 0.05 θ'' / 1.1.
        let temp = 10.0 / 1.1;
        let theta_acc = -temp / (0.5 * (4.0 / 3.0 - 0.1 / 1.1));
        let x_acc = temp - 0.05 * theta_acc / 1.1;
        assert_eq!(next.x, 0.0);
        assert_eq!(next.theta, 0.0);
        assert!((next.x_dot - 0.02 * x_acc).abs() < 1e-12);
        assert!((next.theta_dot - 0.02 * theta_acc).abs() < 1e-12);
        assert!((next.x_dot - 0.195_122).abs() < 1e-6);
        assert!((next.theta_dot + 0.292_683).abs() < 1e-6);
    }

    #[test]
    fn mirrored_trajectories_are_exact_mirrors() {
        let mut e = env(3);
        e.reset();
        let start = e.state();
        let mirror = CartPoleState {
            x: -start.x,
            x_dot: -start.x_dot,
            theta: -start.theta,
            theta_dot: -start.theta_dot,
            steps: 0,
        };
        let (mut a, mut b) = (start, mirror);
        for k in 0..200 {
            let action = (k * 7 % 3 == 0) as usize;
            a = a.advance(action);
            b = b.advance(1 - action);
            assert_eq!((a.x, a.x_dot, a.theta, a.theta_dot), (-b.x, -b.x_dot, -b.theta, -b.theta_dot));
        }
    }

    fn balance(state: &CartPoleState) -> usize {
        (state.theta + 0.5 * state.theta_dot > 0.0) as usize
    }

    #[test]
    fn time_limit_truncates_without_terminal() {
        let mut e = env(0);
        e.reset();
        let mut last = None;
        for _ in 0..CARTPOLE_MAX_STEPS {
            let r = e.step(balance(&e.state())).unwrap();
            assert_eq!(r.reward, 1.0);
            assert!(!r.terminal);
            last = Some(r);
        }
        let last = last.unwrap();
        assert!(last.truncated && !last.terminal);
        assert!(matches!(e.step(0), Err(Error::EpisodeOver)));
    }

    #[test]
    fn hand_policy_survives() {
        for seed in 0..20 {
            let mut e = env(seed);
            e.reset();
            let mut steps = 0;
            loop {
                let r = e.step(balance(&e.state())).unwrap();
                steps += 1;
                if r.done() {
                    break;
                }
            }
            assert!(steps >= 50, "seed {seed}: {steps}");
        }
    }

    #[test]
    fn falling_pole_reward_follows_convention() {
        for (convention, expected) in [(RewardConvention::ZeroOnFailure, 0.0), (RewardConvention::AlwaysOne, 1.0)] {
            let mut e = CartPole::new(convention, ChaCha8Rng::seed_from_u64(1));
            e.reset();
            let last = loop {
                let r = e.step(1).unwrap();
                if r.done() {
                    break r;
                }
                assert_eq!(r.reward, 1.0);
            };
            assert!(last.terminal && !last.truncated);
            assert_eq!(last.reward, expected);
        }
    }

    #[test]
    fn resets_are_reproducible_and_centred() {
        let (mut a, mut b) = (env(5), env(5));
        assert_eq!(a.reset(), b.reset());
        let mut sums = [0.0f64; 4];
        let n = 10_000;
        for _ in 0..n {
            a.reset();
            let s = a.state();
            for (acc, v) in sums.iter_mut().zip([s.x, s.x_dot, s.theta, s.theta_dot]) {
                assert!(v.abs() <= 0.05);
                *acc += v;
            }
            assert_eq!(s.steps, 0);
        }
        for acc in sums {
            assert!((acc / n as f64).abs() < 0.005);
        }
    }

    #[test]
    fn same_actions_same_trajectory() {
        let run = || {
            let mut e = env(9);
            let mut obs = vec![e.reset()];
            for k in 0..30 {
                let r = e.step(k % 2).unwrap();
                let done = r.done();
                obs.push(r.observation);
                if done {
                    break;
                }
            }
            obs
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn must_reset_before_stepping() {
        assert!(matches!(env(0).step(0), Err(Error::EpisodeOver)));
    }
}
