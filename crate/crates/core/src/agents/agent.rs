use std::path::Path;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::buffer::{ReplayBuffer, Transition};
use super::targets::{act, compute_policy_targets, compute_q_targets, greedy_rows, stack, Behavior, TargetPolicy};
use crate::envs::Env;
use crate::error::{Error, Result};
use crate::neural::{
    load_versioned, pi_loss_from_pass, q_loss_and_grad, save_versioned, Head, MlpNet, OptimizerConfig, OptimizerState,
};
use crate::rates::{batch_stats, RateConfig, RateKind, RateState};

pub const AGENT_CHECKPOINT_FORMAT: &str = "dcpi-agent";

// Independent random streams of the run seed, one per purpose, so that the
// DQN and DCPI agents consume identical randomness for their shared parts.
const STREAM_Q_INIT: u64 = 1;
const STREAM_PI_INIT: u64 = 2;
const STREAM_ACT: u64 = 3;
const STREAM_Q_BATCH: u64 = 4;
const STREAM_PI_BATCH: u64 = 5;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    Dqn,
    Dcpi,
}

/// Which network picks the non-exploratory actions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BehaviorMode {
    Actor,
    GreedyCritic,
}

/// How DCPI represents its policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyMode {
    /// A softmax network fitted by KL distillation.
    Network,
    /// The exact greedy policy of the q-network, with no policy network.
    /// Combined with α ≡ 1 this is DQN computed through the DCPI code path.
    GreedyOracle,
}

/// Linear decay from `start` to `end` over `decay_steps` interactions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    pub decay_steps: u64,
}

impl EpsilonSchedule {
    pub fn constant(epsilon: f64) -> Self {
        Self { start: epsilon, end: epsilon, decay_steps: 0 }
    }

    pub fn at(&self, step: u64) -> f64 {
        if step >= self.decay_steps {
            return self.end;
        }
        let frac = step as f64 / self.decay_steps as f64;
        self.start + (self.end - self.start) * frac
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub kind: AgentKind,
    /// Target networks are refreshed every `target_period` interactions (C).
    pub target_period: u64,
    /// One gradient step per network every `interaction_period` interactions (F).
    pub interaction_period: u64,
    pub gamma: f64,
    pub epsilon: EpsilonSchedule,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    /// No learning until the buffer holds this many transitions.
    pub min_fill: usize,
    pub behavior: BehaviorMode,
    pub policy_mode: PolicyMode,
    pub hidden: Vec<usize>,
    /// Width of the last layer; must equal the action count.
    pub output_width: Option<usize>,
    pub optimizer: OptimizerConfig,
    pub rate: RateConfig,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            kind: AgentKind::Dcpi,
            target_period: 100,
            interaction_period: 4,
            gamma: 0.99,
            epsilon: EpsilonSchedule::constant(0.01),
            batch_size: 128,
            buffer_capacity: 50_000,
            min_fill: 500,
            behavior: BehaviorMode::Actor,
            policy_mode: PolicyMode::Network,
            hidden: vec![512, 512],
            output_width: None,
            optimizer: OptimizerConfig::adam(1e-3),
            rate: RateConfig::default(),
        }
    }
}

impl AgentConfig {
    pub fn dqn() -> Self {
        Self { kind: AgentKind::Dqn, behavior: BehaviorMode::GreedyCritic, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.target_period == 0 || self.interaction_period == 0 {
            return bad("agent.target_period and agent.interaction_period must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.gamma) || self.gamma == 1.0 {
            return bad(format!("agent.gamma must lie in [0, 1), got {}", self.gamma));
        }
        let eps = self.epsilon;
        if !(0.0..=1.0).contains(&eps.start) || !(0.0..=1.0).contains(&eps.end) {
            return bad(format!("epsilon must lie in [0, 1], got {eps:?}"));
        }
        if self.batch_size == 0 {
            return bad("agent.batch_size must be positive".into());
        }
        if self.hidden.contains(&0) {
            return bad("hidden layer sizes must be positive".into());
        }
        self.optimizer.validate()?;
        self.rate.validate()
    }

    fn layer_sizes(&self, input: usize, n_actions: usize) -> Result<Vec<usize>> {
        let out = self.output_width.unwrap_or(n_actions);
        if out != n_actions {
            return Err(Error::InvalidConfig(format!(
                "network output width {out} differs from the {n_actions} actions of the environment"
            )));
        }
        Ok(std::iter::once(input).chain(self.hidden.iter().copied()).chain(std::iter::once(out)).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub score: f64,
    pub length: u64,
}

/// Losses and rate from one learning update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateReport {
    pub q_loss: f64,
    /// `None` for DQN and for the greedy oracle.
    pub pi_loss: Option<f64>,
    pub alpha: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepReport {
    pub episode: Option<EpisodeRecord>,
    pub update: Option<UpdateReport>,
    pub targets_updated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct PolicyNets {
    online: MlpNet<f32>,
    target: MlpNet<f32>,
    optimizer: OptimizerState<f32>,
}

/// A learner together with its environment and all random state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Agent {
    config: AgentConfig,
    env: Env,
    q: MlpNet<f32>,
    q_target: MlpNet<f32>,
    q_optimizer: OptimizerState<f32>,
    policy: Option<PolicyNets>,
    rate: RateState,
    buffer: ReplayBuffer,
    act_rng: ChaCha8Rng,
    q_batch_rng: ChaCha8Rng,
    pi_batch_rng: ChaCha8Rng,
    observation: Vec<f32>,
    episode_score: f64,
    episode_length: u64,
    step: u64,
    grad_steps: u64,
}

impl Agent {
    pub fn new(config: AgentConfig, mut env: Env, seed: u64) -> Result<Self> {
        config.validate()?;
        let sizes = config.layer_sizes(env.observation_width(), env.n_actions())?;
        let q = MlpNet::new(&sizes, Head::Linear, &mut stream(seed, STREAM_Q_INIT))?;
        let q_optimizer = OptimizerState::new(config.optimizer, &q)?;
        let policy = match (config.kind, config.policy_mode) {
            (AgentKind::Dcpi, PolicyMode::Network) => {
                let online = MlpNet::new(&sizes, Head::Softmax, &mut stream(seed, STREAM_PI_INIT))?;
                let optimizer = OptimizerState::new(config.optimizer, &online)?;
                Some(PolicyNets { target: online.clone(), online, optimizer })
            }
            _ => None,
        };
        let observation = env.reset();
        Ok(Self {
            rate: RateState::new(config.rate)?,
            buffer: ReplayBuffer::new(config.buffer_capacity)?,
            q_target: q.clone(),
            q,
            q_optimizer,
            policy,
            act_rng: stream(seed, STREAM_ACT),
            q_batch_rng: stream(seed, STREAM_Q_BATCH),
            pi_batch_rng: stream(seed, STREAM_PI_BATCH),
            observation,
            episode_score: 0.0,
            episode_length: 0,
            step: 0,
            grad_steps: 0,
            env,
            config,
        })
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    /// Interactions performed so far.
    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn grad_steps(&self) -> u64 {
        self.grad_steps
    }

    pub fn q_net(&self) -> &MlpNet<f32> {
        &self.q
    }

    pub fn q_target(&self) -> &MlpNet<f32> {
        &self.q_target
    }

    pub fn policy_net(&self) -> Option<&MlpNet<f32>> {
        self.policy.as_ref().map(|p| &p.online)
    }

    pub fn policy_target(&self) -> Option<&MlpNet<f32>> {
        self.policy.as_ref().map(|p| &p.target)
    }

    pub fn rate_state(&self) -> &RateState {
        &self.rate
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    pub fn env(&self) -> &Env {
        &self.env
    }

    /// The q-network's greedy action for `observation`.
    pub fn greedy_action(&self, observation: &[f32]) -> Result<usize> {
        let mut unused = ChaCha8Rng::seed_from_u64(0);
        act(observation, Behavior::GreedyCritic(&self.q), 0.0, &mut unused)
    }

    /// One interaction with the environment, followed by the learning update
    /// and target refresh when their periods come due.
    pub fn train_step(&mut self) -> Result<StepReport> {
        self.step += 1;
        let k = self.step;
        let epsilon = self.config.epsilon.at(k - 1);
        let behavior = match (&self.policy, self.config.behavior) {
            (Some(p), BehaviorMode::Actor) => Behavior::Actor(&p.online),
            _ => Behavior::GreedyCritic(&self.q),
        };
        let action = act(&self.observation, behavior, epsilon, &mut self.act_rng)?;
        let result = self.env.step(action)?;
        self.episode_score += result.reward;
        self.episode_length += 1;
        let next = result.observation.clone();
        self.buffer.push(Transition {
            state: std::mem::replace(&mut self.observation, next),
            action,
            reward: result.reward,
            next_state: result.observation,
            terminal: result.terminal,
        });

        let mut report = StepReport::default();
        if result.terminal || result.truncated {
            report.episode = Some(EpisodeRecord { score: self.episode_score, length: self.episode_length });
            self.episode_score = 0.0;
            self.episode_length = 0;
            self.observation = self.env.reset();
        }
        if k.is_multiple_of(self.config.interaction_period) && self.buffer.len() >= self.config.min_fill.max(1) {
            report.update = Some(match self.config.kind {
                AgentKind::Dqn => self.dqn_update()?,
                AgentKind::Dcpi => self.dcpi_update()?,
            });
            self.grad_steps += 1;
        }
        if k.is_multiple_of(self.config.target_period) {
            self.q_target.copy_from(&self.q);
            if let Some(p) = &mut self.policy {
                p.target.copy_from(&p.online);
            }
            report.targets_updated = true;
        }
        Ok(report)
    }

    fn q_step(&mut self, target_pi: TargetPolicy<'_>) -> Result<f64> {
        let batch = self.buffer.sample(self.config.batch_size, &mut self.q_batch_rng)?;
        let targets = compute_q_targets(&batch, &self.q_target, target_pi, self.config.gamma)?;
        let states = stack(batch.iter().map(|t| t.state.as_slice()), self.q.input_width())?;
        let actions: Vec<usize> = batch.iter().map(|t| t.action).collect();
        let (loss, grads) = q_loss_and_grad(&self.q, states.view(), &actions, &targets)?;
        self.q_optimizer.step(&mut self.q, &grads)?;
        Ok(loss as f64)
    }

    fn dqn_update(&mut self) -> Result<UpdateReport> {
        let q_loss = self.q_step(TargetPolicy::Max)?;
        Ok(UpdateReport { q_loss, pi_loss: None, alpha: None })
    }

    fn dcpi_update(&mut self) -> Result<UpdateReport> {
        // Borrow the policy out so the q-step can take `self` mutably.
        let mut policy = self.policy.take();
        let target_pi = match &policy {
            Some(p) => TargetPolicy::Network(&p.target),
            None => TargetPolicy::Greedy,
        };
        let q_loss = self.q_step(target_pi);
        let result = q_loss.and_then(|q_loss| self.policy_step(policy.as_mut(), q_loss));
        self.policy = policy;
        result
    }

    /// Policy half of a DCPI update. The same batch feeds the rate
    /// statistics and the distillation loss.
    fn policy_step(&mut self, policy: Option<&mut PolicyNets>, q_loss: f64) -> Result<UpdateReport> {
        let batch = self.buffer.sample(self.config.batch_size, &mut self.pi_batch_rng)?;
        let states = stack(batch.iter().map(|t| t.state.as_slice()), self.q.input_width())?;
        let q_values = self.q.forward(states.view())?;
        let (pass, target_probs) = match &policy {
            Some(p) => (Some(p.online.forward_pass(states.view())?), p.target.forward(states.view())?),
            None => (None, greedy_rows(self.q_target.forward(states.view())?.view())),
        };
        let online_probs: Array2<f32> = match &pass {
            Some(pass) => pass.output.clone(),
            None => greedy_rows(q_values.view()),
        };
        self.rate.update(&batch_stats(q_values.view(), online_probs.view())?);
        let alpha = self.rate.current_alpha()?;
        let targets = compute_policy_targets(target_probs.view(), q_values.view(), alpha)?;

        let pi_loss = match (policy, pass) {
            (Some(p), Some(pass)) => {
                let targets = targets.mapv(|t| t as f32);
                let (loss, grads) = pi_loss_from_pass(&p.online, &pass, targets.view())?;
                p.optimizer.step(&mut p.online, &grads)?;
                Some(loss as f64)
            }
            _ => None,
        };
        Ok(UpdateReport { q_loss, pi_loss, alpha: Some(alpha) })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        save_versioned(path, AGENT_CHECKPOINT_FORMAT, self)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let agent: Agent = load_versioned(path, AGENT_CHECKPOINT_FORMAT)?;
        agent.config.validate()?;
        Ok(agent)
    }

    /// Configuration for the DQN-reduction check: DCPI with a constant unit
    /// rate and the exact greedy policy.
    pub fn reduction_config(base: &AgentConfig) -> AgentConfig {
        AgentConfig {
            kind: AgentKind::Dcpi,
            behavior: BehaviorMode::GreedyCritic,
            policy_mode: PolicyMode::GreedyOracle,
            rate: RateConfig { kind: RateKind::Constant, alpha0: 1.0, ..base.rate },
            ..base.clone()
        }
    }
}
