use ndarray::{Array2, ArrayView2};
use rand::Rng;

use super::buffer::Transition;
use crate::error::{mismatch, Error, Result};
use crate::mdp::argmax;
use crate::neural::MlpNet;

/// How the behavior policy picks its non-random actions.
#[derive(Debug, Clone, Copy)]
pub enum Behavior<'a> {
    /// Sample from the policy network's distribution.
    Actor(&'a MlpNet<f32>),
    /// Take the q-network's argmax, lowest index on ties.
    GreedyCritic(&'a MlpNet<f32>),
}

/// ε-soft action choice. One uniform draw decides exploration; the network
/// is only evaluated when it is needed.
pub fn act<R: Rng + ?Sized>(state: &[f32], behavior: Behavior<'_>, epsilon: f64, rng: &mut R) -> Result<usize> {
    let net = match behavior {
        Behavior::Actor(n) | Behavior::GreedyCritic(n) => n,
    };
    let n_actions = net.output_width();
    if rng.random::<f64>() < epsilon {
        return Ok(rng.random_range(0..n_actions));
    }
    let row = ArrayView2::from_shape((1, state.len()), state).map_err(|_| mismatch("row vector", state.len()))?;
    let out = net.forward(row)?;
    Ok(match behavior {
        Behavior::GreedyCritic(_) => argmax(out.iter().map(|&q| q as f64)),
        Behavior::Actor(_) => {
            let u = rng.random::<f32>();
            let mut acc = 0.0;
            out.iter()
                .position(|&p| {
                    acc += p;
                    u < acc
                })
                // Probabilities summing slightly below 1 leave a sliver past
                // the last bin; it belongs to the last action.
                .unwrap_or(n_actions - 1)
        }
    })
}

/// Policy used to average the target q-values at the next state.
#[derive(Debug, Clone, Copy)]
pub enum TargetPolicy<'a> {
    /// A target policy network.
    Network(&'a MlpNet<f32>),
    /// The greedy policy of the target q-network, as a one-hot distribution.
    Greedy,
    /// `max_a q⁻(s', a)` directly (DQN).
    Max,
}

/// One-hot rows on each row's argmax.
pub fn greedy_rows(values: ArrayView2<f32>) -> Array2<f32> {
    let mut out = Array2::zeros(values.raw_dim());
    for (i, row) in values.rows().into_iter().enumerate() {
        out[[i, argmax(row.iter().map(|&q| q as f64))]] = 1.0;
    }
    out
}

pub(crate) fn stack<'a>(rows: impl ExactSizeIterator<Item = &'a [f32]>, width: usize) -> Result<Array2<f32>> {
    let n = rows.len();
    let mut flat = Vec::with_capacity(n * width);
    for r in rows {
        if r.len() != width {
            return Err(mismatch(format!("observation width {width}"), r.len()));
        }
        flat.extend_from_slice(r);
    }
    Ok(Array2::from_shape_vec((n, width), flat).expect("sized above"))
}

/// `r + γ Σ_a' π⁻(a'|s') q⁻(s', a')`, or just `r` on terminal transitions.
pub fn compute_q_targets(
    batch: &[&Transition],
    target_q: &MlpNet<f32>,
    target_pi: TargetPolicy<'_>,
    gamma: f64,
) -> Result<Vec<f32>> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let next = stack(batch.iter().map(|t| t.next_state.as_slice()), target_q.input_width())?;
    let q_next = target_q.forward(next.view())?;
    let bootstrap: Vec<f32> = match target_pi {
        TargetPolicy::Max => {
            q_next.rows().into_iter().map(|r| r.iter().copied().fold(f32::NEG_INFINITY, f32::max)).collect()
        }
        TargetPolicy::Greedy => expectation(greedy_rows(q_next.view()).view(), q_next.view()),
        TargetPolicy::Network(pi) => expectation(pi.forward(next.view())?.view(), q_next.view()),
    };
    let gamma = gamma as f32;
    Ok(batch
        .iter()
        .zip(bootstrap)
        .map(|(t, b)| if t.terminal { t.reward as f32 } else { t.reward as f32 + gamma * b })
        .collect())
}

fn expectation(probs: ArrayView2<f32>, values: ArrayView2<f32>) -> Vec<f32> {
    probs
        .rows()
        .into_iter()
        .zip(values.rows())
        .map(|(p, q)| p.iter().zip(q.iter()).fold(0.0, |acc, (p, q)| acc + p * q))
        .collect()
}

/// `(1 - α) π⁻(·|s) + α 𝒢(q)(·|s)` for each row, in double precision.
pub fn compute_policy_targets(
    target_pi: ArrayView2<f32>,
    online_q: ArrayView2<f32>,
    alpha: f64,
) -> Result<Array2<f64>> {
    if target_pi.dim() != online_q.dim() {
        return Err(mismatch(format!("{:?}", target_pi.dim()), format!("{:?}", online_q.dim())));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidConfig(format!("mixture rate {alpha} outside [0, 1]")));
    }
    let mut out = target_pi.mapv(|p| (1.0 - alpha) * p as f64);
    for (i, row) in online_q.rows().into_iter().enumerate() {
        out[[i, argmax(row.iter().map(|&q| q as f64))]] += alpha;
    }
    Ok(out)
}
