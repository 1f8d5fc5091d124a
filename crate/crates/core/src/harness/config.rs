use std::path::{Path, PathBuf};

use serde::Deserialize;
use toml::{Table, Value};

use crate::agents::{AgentConfig, AgentKind, BehaviorMode, EpsilonSchedule, PolicyMode};
use crate::envs::{EnvConfig, EnvName, RewardConvention};
use crate::error::{Error, Result};
use crate::neural::OptimizerConfig;
use crate::rates::{RateConfig, RateKind};

/// Everything needed to run a seed sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub env: EnvConfig,
    pub agent: AgentConfig,
    pub seeds: Vec<u64>,
    pub total_steps: u64,
    /// Interactions per reporting iteration.
    pub iteration_length: u64,
    pub output_dir: PathBuf,
    /// Write a resumable checkpoint every this many iterations.
    pub checkpoint_every: Option<u64>,
    /// Seeds run concurrently.
    pub workers: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            env: EnvConfig::default(),
            agent: AgentConfig::default(),
            seeds: vec![0],
            total_steps: 200_000,
            iteration_length: 1000,
            output_dir: PathBuf::from("runs"),
            checkpoint_every: None,
            workers: 1,
        }
    }
}

// File layout: every key is optional and falls back to the defaults above.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FileConfig {
    run: RunSection,
    env: EnvSection,
    agent: AgentSection,
    rate: RateSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RunSection {
    seeds: Option<Vec<u64>>,
    steps: Option<u64>,
    iteration_length: Option<u64>,
    output_dir: Option<PathBuf>,
    checkpoint_every: Option<u64>,
    workers: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct EnvSection {
    name: Option<String>,
    seed: Option<u64>,
    reward_convention: Option<String>,
    chain_states: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct AgentSection {
    kind: Option<String>,
    target_period: Option<u64>,
    interaction_period: Option<u64>,
    gamma: Option<f64>,
    epsilon: Option<f64>,
    epsilon_start: Option<f64>,
    epsilon_end: Option<f64>,
    epsilon_decay_steps: Option<u64>,
    batch_size: Option<usize>,
    buffer_capacity: Option<usize>,
    min_fill: Option<usize>,
    behavior: Option<String>,
    policy: Option<String>,
    hidden: Option<Vec<usize>>,
    output_width: Option<usize>,
    optimizer: Option<String>,
    lr: Option<f64>,
    adam_beta1: Option<f64>,
    adam_beta2: Option<f64>,
    adam_eps: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RateSection {
    kind: Option<String>,
    alpha0: Option<f64>,
    beta1: Option<f64>,
    beta2: Option<f64>,
}

fn parse_enum<T: for<'de> Deserialize<'de>>(key: &str, value: &str) -> Result<T> {
    T::deserialize(serde::de::value::StrDeserializer::<serde::de::value::Error>::new(value))
        .map_err(|_| Error::InvalidConfig(format!("{key}: unknown value `{value}`")))
}

impl RunConfig {
    /// Parses a TOML document with dotted keys such as `rate.alpha0 = 0.1`.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        Self::from_table(text.parse::<Table>()?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    /// Builds a configuration from `table` after applying `key=value`
    /// overrides. Values are read as TOML, falling back to plain strings.
    pub fn from_table_with_overrides(mut table: Table, overrides: &[(String, String)]) -> Result<Self> {
        for (key, raw) in overrides {
            set_dotted(&mut table, key, parse_value(raw))?;
        }
        Self::from_table(table)
    }

    pub fn from_table(table: Table) -> Result<Self> {
        let file: FileConfig =
            FileConfig::deserialize(Value::Table(table)).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        let mut config = RunConfig::default();

        let r = file.run;
        if let Some(seeds) = r.seeds {
            config.seeds = seeds;
        }
        config.total_steps = r.steps.unwrap_or(config.total_steps);
        config.iteration_length = r.iteration_length.unwrap_or(config.iteration_length);
        config.output_dir = r.output_dir.unwrap_or(config.output_dir);
        config.checkpoint_every = r.checkpoint_every.or(config.checkpoint_every);
        config.workers = r.workers.unwrap_or(config.workers);

        let e = file.env;
        if let Some(name) = e.name {
            config.env.name = name.parse::<EnvName>()?;
        }
        config.env.seed = e.seed;
        if let Some(c) = e.reward_convention {
            config.env.reward_convention = c.parse::<RewardConvention>()?;
        }
        config.env.chain_states = e.chain_states.unwrap_or(config.env.chain_states);

        let a = file.agent;
        let kind: AgentKind = match &a.kind {
            Some(k) => parse_enum("agent.kind", k)?,
            None => AgentKind::Dcpi,
        };
        let mut agent = match kind {
            AgentKind::Dqn => AgentConfig::dqn(),
            AgentKind::Dcpi => AgentConfig::default(),
        };
        agent.target_period = a.target_period.unwrap_or(agent.target_period);
        agent.interaction_period = a.interaction_period.unwrap_or(agent.interaction_period);
        agent.gamma = a.gamma.unwrap_or(agent.gamma);
        if let Some(eps) = a.epsilon {
            agent.epsilon = EpsilonSchedule::constant(eps);
        }
        agent.epsilon = EpsilonSchedule {
            start: a.epsilon_start.unwrap_or(agent.epsilon.start),
            end: a.epsilon_end.unwrap_or(agent.epsilon.end),
            decay_steps: a.epsilon_decay_steps.unwrap_or(agent.epsilon.decay_steps),
        };
        agent.batch_size = a.batch_size.unwrap_or(agent.batch_size);
        agent.buffer_capacity = a.buffer_capacity.unwrap_or(agent.buffer_capacity);
        agent.min_fill = a.min_fill.unwrap_or(agent.min_fill);
        if let Some(b) = &a.behavior {
            agent.behavior = parse_enum::<BehaviorMode>("agent.behavior", b)?;
        }
        if let Some(p) = &a.policy {
            agent.policy_mode = parse_enum::<PolicyMode>("agent.policy", p)?;
        }
        agent.hidden = a.hidden.unwrap_or(agent.hidden);
        agent.output_width = a.output_width.or(agent.output_width);
        let lr = a.lr.unwrap_or(1e-3);
        agent.optimizer = match a.optimizer.as_deref().unwrap_or("adam") {
            "adam" => {
                let OptimizerConfig::Adam { beta1, beta2, eps, .. } = OptimizerConfig::adam(lr) else { unreachable!() };
                OptimizerConfig::Adam {
                    lr,
                    beta1: a.adam_beta1.unwrap_or(beta1),
                    beta2: a.adam_beta2.unwrap_or(beta2),
                    eps: a.adam_eps.unwrap_or(eps),
                }
            }
            "sgd" => OptimizerConfig::Sgd { lr },
            other => return Err(Error::InvalidConfig(format!("agent.optimizer: unknown value `{other}`"))),
        };

        let rt = file.rate;
        let mut rate = RateConfig::default();
        if let Some(k) = rt.kind {
            rate.kind = k.parse::<RateKind>()?;
        }
        rate.alpha0 = rt.alpha0.unwrap_or(rate.alpha0);
        rate.beta1 = rt.beta1.unwrap_or(rate.beta1);
        rate.beta2 = rt.beta2.unwrap_or(rate.beta2);
        agent.rate = rate;
        config.agent = agent;

        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::InvalidConfig("run.seeds must not be empty".into()));
        }
        if self.iteration_length == 0 || self.total_steps == 0 {
            return Err(Error::InvalidConfig("run.steps and run.iteration_length must be positive".into()));
        }
        if self.checkpoint_every == Some(0) || self.workers == 0 {
            return Err(Error::InvalidConfig("run.checkpoint_every and run.workers must be positive".into()));
        }
        self.agent.validate()
    }

    /// Completed iterations in the budget; a trailing partial block is not
    /// reported.
    pub fn iterations(&self) -> u64 {
        self.total_steps / self.iteration_length
    }
}

fn parse_value(raw: &str) -> Value {
    format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

fn set_dotted(table: &mut Table, key: &str, value: Value) -> Result<()> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().filter(|k| !k.is_empty()).ok_or_else(|| Error::InvalidConfig(format!("bad key `{key}`")))?;
    let mut node = table;
    for part in parts {
        node = match node.entry(part.to_string()).or_insert_with(|| Value::Table(Table::new())) {
            Value::Table(t) => t,
            _ => return Err(Error::InvalidConfig(format!("`{part}` in `{key}` is not a table"))),
        };
    }
    node.insert(last.to_string(), value);
    Ok(())
}
