use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::metrics::{
    aggregate, read_metrics, write_aggregate, write_metrics, AggregateRow, IterationAccumulator, IterationMetrics,
};
use crate::agents::Agent;
use crate::envs::{Env, EnvConfig};
use crate::error::{Error, Result};
use crate::neural::{load_versioned, save_versioned};

const SEED_CHECKPOINT_FORMAT: &str = "dcpi-seed-run";

pub fn seed_metrics_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("seed-{seed}.csv"))
}

fn checkpoint_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("seed-{seed}.checkpoint.json"))
}

pub fn aggregate_path(dir: &Path) -> PathBuf {
    dir.join("aggregate.csv")
}

// Metrics live in the seed's CSV file (NaN-safe); the checkpoint records how
// many of its rows are covered.
#[derive(Serialize, Deserialize)]
struct SeedCheckpoint {
    seed: u64,
    env: EnvConfig,
    iteration_length: u64,
    completed: u64,
    agent: Agent,
}

/// Trains one seed, writing its metrics file. With `resume`, continues from
/// the seed's checkpoint when one matching this configuration exists; the
/// total budget may differ from the interrupted run's.
pub fn run_seed(config: &RunConfig, seed: u64, resume: bool) -> Result<Vec<IterationMetrics>> {
    let dir = &config.output_dir;
    fs::create_dir_all(dir)?;
    let (mut agent, mut rows) = match resume.then(|| load_checkpoint(config, seed)).transpose()?.flatten() {
        Some(found) => found,
        None => (Agent::new(config.agent.clone(), Env::new(&config.env, seed)?, seed)?, Vec::new()),
    };
    let mut acc = IterationAccumulator::default();
    for iteration in rows.len() as u64 + 1..=config.iterations() {
        for _ in 0..config.iteration_length {
            acc.record(&agent.train_step()?);
        }
        let m = acc.finish(iteration, agent.step());
        if iteration % 10 == 0 {
            info!("seed {seed}: iteration {iteration}, score {:.1}, alpha {:.4}", m.score, m.alpha_mean);
        }
        rows.push(m);
        if config.checkpoint_every.is_some_and(|every| iteration % every == 0) {
            write_metrics(seed_metrics_path(dir, seed), &rows)?;
            let ckpt = SeedCheckpoint {
                seed,
                env: config.env.clone(),
                iteration_length: config.iteration_length,
                completed: iteration,
                agent: agent.clone(),
            };
            save_versioned(checkpoint_path(dir, seed), SEED_CHECKPOINT_FORMAT, &ckpt)?;
        }
    }
    rows.truncate(config.iterations() as usize);
    write_metrics(seed_metrics_path(dir, seed), &rows)?;
    Ok(rows)
}

fn load_checkpoint(config: &RunConfig, seed: u64) -> Result<Option<(Agent, Vec<IterationMetrics>)>> {
    let path = checkpoint_path(&config.output_dir, seed);
    if !path.exists() {
        return Ok(None);
    }
    let ckpt: SeedCheckpoint = load_versioned(&path, SEED_CHECKPOINT_FORMAT)?;
    let matches = ckpt.seed == seed
        && ckpt.env == config.env
        && ckpt.iteration_length == config.iteration_length
        && ckpt.agent.config() == &config.agent;
    if !matches {
        return Err(Error::InvalidConfig(format!("{} was written by a different configuration", path.display())));
    }
    let mut rows = read_metrics(seed_metrics_path(&config.output_dir, seed))?;
    if (rows.len() as u64) < ckpt.completed {
        return Err(Error::Format(format!("metrics for seed {seed} are shorter than its checkpoint")));
    }
    rows.truncate(ckpt.completed as usize);
    info!("seed {seed}: resuming after iteration {}", ckpt.completed);
    Ok(Some((ckpt.agent, rows)))
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub completed: Vec<(u64, Vec<IterationMetrics>)>,
    pub failed: Vec<(u64, String)>,
    pub aggregate: Vec<AggregateRow>,
}

impl SweepOutcome {
    /// 0 when every seed finished, 2 otherwise.
    pub fn exit_code(&self) -> i32 {
        if self.failed.is_empty() {
            0
        } else {
            2
        }
    }
}

/// Runs every seed, then writes the cross-seed aggregate of the seeds that
/// finished. A failing seed is recorded and does not stop the others.
pub fn run_sweep(config: &RunConfig, resume: bool) -> Result<SweepOutcome> {
    config.validate()?;
    fs::create_dir_all(&config.output_dir)?;
    let results = Mutex::new(Vec::new());
    let next = Mutex::new(config.seeds.iter().copied());
    std::thread::scope(|scope| {
        for _ in 0..config.workers.min(config.seeds.len()) {
            scope.spawn(|| loop {
                let Some(seed) = next.lock().expect("seed queue").next() else { break };
                let outcome = run_seed(config, seed, resume);
                if let Err(e) = &outcome {
                    warn!("seed {seed} failed: {e}");
                }
                results.lock().expect("results").push((seed, outcome));
            });
        }
    });
    let mut results = results.into_inner().expect("results");
    results.sort_by_key(|(seed, _)| config.seeds.iter().position(|s| s == seed));

    let mut outcome = SweepOutcome { completed: Vec::new(), failed: Vec::new(), aggregate: Vec::new() };
    for (seed, r) in results {
        match r {
            Ok(rows) => outcome.completed.push((seed, rows)),
            Err(e) => outcome.failed.push((seed, e.to_string())),
        }
    }
    let curves: Vec<Vec<IterationMetrics>> = outcome.completed.iter().map(|(_, r)| r.clone()).collect();
    if !curves.is_empty() {
        outcome.aggregate = aggregate(&curves)?;
        write_aggregate(aggregate_path(&config.output_dir), &outcome.aggregate)?;
    }
    Ok(outcome)
}
