//! Environments for the deep agents, plus the chain MDP generator used by
//! the exact tier.

mod cartpole;
mod toy;

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use cartpole::{CartPole, CartPoleState, RewardConvention, CARTPOLE_MAX_STEPS};
pub use toy::{make_chain_mdp, Bandit, ChainWalk, OneStep};

/// Outcome of one environment step.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvStepResult {
    pub observation: Vec<f32>,
    pub reward: f64,
    /// The episode ended inside the MDP; no bootstrapping past it.
    pub terminal: bool,
    /// The episode was cut by a time limit.
    pub truncated: bool,
}

impl EnvStepResult {
    pub fn done(&self) -> bool {
        self.terminal || self.truncated
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvName {
    Cartpole,
    Bandit,
    OneStep,
    Chain,
}

impl EnvName {
    const ALL: [EnvName; 4] = [EnvName::Cartpole, EnvName::Bandit, EnvName::OneStep, EnvName::Chain];

    fn name(self) -> &'static str {
        match self {
            EnvName::Cartpole => "cartpole",
            EnvName::Bandit => "bandit",
            EnvName::OneStep => "one_step",
            EnvName::Chain => "chain",
        }
    }
}

impl fmt::Display for EnvName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EnvName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EnvName::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown environment `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub name: EnvName,
    /// Fixes the environment seed; otherwise it is derived from the run seed.
    pub seed: Option<u64>,
    pub reward_convention: RewardConvention,
    /// Number of states of the chain walk.
    pub chain_states: usize,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            name: EnvName::Cartpole,
            seed: None,
            reward_convention: RewardConvention::ZeroOnFailure,
            chain_states: 8,
        }
    }
}

/// A concrete environment. An enum rather than a trait object so that the
/// whole thing, random state included, serializes into checkpoints.
/// Externally tagged: internal tagging buffers the payload and cannot
/// carry the u128 counters inside the generator state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Env {
    Cartpole(CartPole),
    Bandit(Bandit),
    OneStep(OneStep),
    Chain(ChainWalk),
}

impl Env {
    pub fn new(config: &EnvConfig, seed: u64) -> Result<Self> {
        let rng = ChaCha8Rng::seed_from_u64(config.seed.unwrap_or(seed));
        Ok(match config.name {
            EnvName::Cartpole => Env::Cartpole(CartPole::new(config.reward_convention, rng)),
            EnvName::Bandit => Env::Bandit(Bandit::new(rng)),
            EnvName::OneStep => Env::OneStep(OneStep::new()),
            EnvName::Chain => Env::Chain(ChainWalk::new(config.chain_states)?),
        })
    }

    pub fn observation_width(&self) -> usize {
        match self {
            Env::Cartpole(_) => 4,
            Env::Bandit(_) => Bandit::WIDTH,
            Env::OneStep(_) => 1,
            Env::Chain(c) => c.n_states(),
        }
    }

    pub fn n_actions(&self) -> usize {
        2
    }

    /// Starts a new episode and returns its first observation.
    pub fn reset(&mut self) -> Vec<f32> {
        match self {
            Env::Cartpole(e) => e.reset(),
            Env::Bandit(e) => e.reset(),
            Env::OneStep(e) => e.reset(),
            Env::Chain(e) => e.reset(),
        }
    }

    pub fn step(&mut self, action: usize) -> Result<EnvStepResult> {
        if action >= self.n_actions() {
            return Err(Error::InvalidAction { action, n_actions: self.n_actions() });
        }
        match self {
            Env::Cartpole(e) => e.step(action),
            Env::Bandit(e) => e.step(action),
            Env::OneStep(e) => e.step(action),
            Env::Chain(e) => e.step(action),
        }
    }
}
