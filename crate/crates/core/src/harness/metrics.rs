use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::agents::StepReport;
use crate::error::{mismatch, Error, Result};

pub const METRICS_HEADER: &str = "# dcpi-metrics v1";
pub const AGGREGATE_HEADER: &str = "# dcpi-aggregate v1";

/// One reporting iteration of one seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationMetrics {
    pub iteration: u64,
    /// Interactions performed by the end of the iteration.
    pub steps: u64,
    /// Episodes that ended during the iteration.
    pub episodes: u64,
    /// Mean undiscounted score of those episodes; NaN when none ended.
    pub score: f64,
    pub alpha_mean: f64,
    pub q_loss_mean: f64,
    pub pi_loss_mean: f64,
    pub grad_steps: u64,
}

impl IterationMetrics {
    /// Bitwise equality, so NaN fields compare equal to themselves.
    pub fn same_bits(&self, other: &Self) -> bool {
        let bits = |m: &Self| {
            (
                m.iteration,
                m.steps,
                m.episodes,
                m.grad_steps,
                [m.score, m.alpha_mean, m.q_loss_mean, m.pi_loss_mean].map(f64::to_bits),
            )
        };
        bits(self) == bits(other)
    }
}

#[derive(Debug, Default, Clone, Copy)]
struct Mean {
    sum: f64,
    count: u64,
}

impl Mean {
    fn add(&mut self, x: f64) {
        self.sum += x;
        self.count += 1;
    }

    fn value(&self) -> f64 {
        if self.count == 0 {
            f64::NAN
        } else {
            self.sum / self.count as f64
        }
    }
}

/// Collects step reports until an iteration boundary.
///
/// An episode counts towards the iteration in which it ends.
#[derive(Debug, Default, Clone)]
pub struct IterationAccumulator {
    score: Mean,
    alpha: Mean,
    q_loss: Mean,
    pi_loss: Mean,
}

impl IterationAccumulator {
    pub fn record(&mut self, report: &StepReport) {
        if let Some(e) = report.episode {
            self.score.add(e.score);
        }
        if let Some(u) = report.update {
            self.q_loss.add(u.q_loss);
            if let Some(a) = u.alpha {
                self.alpha.add(a);
            }
            if let Some(l) = u.pi_loss {
                self.pi_loss.add(l);
            }
        }
    }

    /// Closes the iteration and starts a fresh one.
    pub fn finish(&mut self, iteration: u64, steps: u64) -> IterationMetrics {
        let m = IterationMetrics {
            iteration,
            steps,
            episodes: self.score.count,
            score: self.score.value(),
            alpha_mean: self.alpha.value(),
            q_loss_mean: self.q_loss.value(),
            pi_loss_mean: self.pi_loss.value(),
            grad_steps: self.q_loss.count,
        };
        *self = Self::default();
        m
    }
}

fn write_versioned<T: Serialize>(path: &Path, header: &str, rows: &[T]) -> Result<()> {
    let mut file = File::create(path)?;
    writeln!(file, "{header}")?;
    let mut writer = csv::Writer::from_writer(file);
    for row in rows {
        writer.serialize(row).map_err(csv_error)?;
    }
    writer.flush()?;
    Ok(())
}

fn read_versioned<T: for<'de> Deserialize<'de>>(path: &Path, header: &str) -> Result<Vec<T>> {
    let mut reader = BufReader::new(File::open(path)?);
    let mut first = String::new();
    reader.read_line(&mut first)?;
    if first.trim_end() != header {
        return Err(Error::Format(format!(
            "{}: expected header `{header}`, found `{}`",
            path.display(),
            first.trim_end()
        )));
    }
    csv::Reader::from_reader(reader).deserialize().map(|r| r.map_err(csv_error)).collect()
}

fn csv_error(e: csv::Error) -> Error {
    Error::Format(e.to_string())
}

pub fn write_metrics(path: impl AsRef<Path>, rows: &[IterationMetrics]) -> Result<()> {
    write_versioned(path.as_ref(), METRICS_HEADER, rows)
}

pub fn read_metrics(path: impl AsRef<Path>) -> Result<Vec<IterationMetrics>> {
    read_versioned(path.as_ref(), METRICS_HEADER)
}

/// Cross-seed statistics of one iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub iteration: u64,
    pub mean: f64,
    /// Population standard deviation across seeds.
    pub std: f64,
    /// Seeds with at least one finished episode in this iteration.
    pub n_seeds: usize,
}

/// Per-iteration mean and standard deviation of the scores across seeds.
/// Seeds without a finished episode in an iteration are left out of it.
pub fn aggregate(per_seed: &[Vec<IterationMetrics>]) -> Result<Vec<AggregateRow>> {
    let len = per_seed.first().map_or(0, Vec::len);
    if let Some(bad) = per_seed.iter().find(|s| s.len() != len) {
        return Err(mismatch(format!("{len} iterations per seed"), bad.len()));
    }
    Ok((0..len)
        .map(|i| {
            let scores: Vec<f64> = per_seed.iter().map(|s| s[i].score).filter(|x| x.is_finite()).collect();
            let (mean, std) = mean_std(&scores);
            AggregateRow { iteration: per_seed[0][i].iteration, mean, std, n_seeds: scores.len() }
        })
        .collect())
}

/// Mean and population standard deviation; NaN for an empty slice.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn write_aggregate(path: impl AsRef<Path>, rows: &[AggregateRow]) -> Result<()> {
    write_versioned(path.as_ref(), AGGREGATE_HEADER, rows)
}

pub fn read_aggregate(path: impl AsRef<Path>) -> Result<Vec<AggregateRow>> {
    read_versioned(path.as_ref(), AGGREGATE_HEADER)
}

/// Normalized area between two curves, `(S_a - S_b) / |S_b|` with `S` the
/// sum of per-iteration scores.
pub fn auc_improvement(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(mismatch(format!("{} iterations", b.len()), a.len()));
    }
    let (sa, sb): (f64, f64) = (a.iter().sum(), b.iter().sum());
    if sb == 0.0 {
        return Err(Error::ZeroReference);
    }
    Ok((sa - sb) / sb.abs())
}

/// Writes `iteration mean lower upper` columns, with the band at one
/// standard deviation.
pub fn emit_plot_data(aggregate_path: impl AsRef<Path>, out: impl AsRef<Path>) -> Result<()> {
    let rows = read_aggregate(aggregate_path)?;
    let mut file = File::create(out)?;
    writeln!(file, "# iteration mean lower upper")?;
    for r in rows {
        writeln!(file, "{} {} {} {}", r.iteration, r.mean, r.mean - r.std, r.mean + r.std)?;
    }
    Ok(())
}

/// Reads a file written by [`emit_plot_data`] back into aggregate rows
/// (`n_seeds` is not stored and comes back as 0).
pub fn read_plot_data(path: impl AsRef<Path>) -> Result<Vec<AggregateRow>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
        .map(|line| {
            let cols: Vec<&str> = line.split_whitespace().collect();
            let num = |i: usize| -> Result<f64> {
                cols.get(i)
                    .ok_or_else(|| Error::Format(format!("short plot row `{line}`")))?
                    .parse::<f64>()
                    .map_err(|e| Error::Format(e.to_string()))
            };
            let iteration = cols
                .first()
                .and_then(|c| c.parse::<u64>().ok())
                .ok_or_else(|| Error::Format(format!("bad row `{line}`")))?;
            let (mean, upper) = (num(1)?, num(3)?);
            Ok(AggregateRow { iteration, mean, std: upper - mean, n_seeds: 0 })
        })
        .collect()
}

/// Mean score and mean cross-seed spread over the last `window` iterations
/// of an aggregate curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowSummary {
    pub mean: f64,
    pub std: f64,
}

pub fn final_window(rows: &[AggregateRow], window: usize) -> Result<WindowSummary> {
    if rows.len() < window || window == 0 {
        return Err(mismatch(format!("at least {window} iterations"), rows.len()));
    }
    let tail = &rows[rows.len() - window..];
    let finite = |f: fn(&AggregateRow) -> f64| {
        let xs: Vec<f64> = tail.iter().map(f).filter(|x| x.is_finite()).collect();
        mean_std(&xs).0
    };
    Ok(WindowSummary { mean: finite(|r| r.mean), std: finite(|r| r.std) })
}
