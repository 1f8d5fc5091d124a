//! The relaxed conservative scheme run exactly on tabular MDPs.
//!
//! One iteration of the scheme, in value-function form, is
//!
//! ```text
//! π_{k+1} = (1 - α_{k+1}) π_k + α_{k+1} G(v_k) + ε'_{k+1}
//! v_{k+1} = T_{π_{k+1}}^m v_k + ε_{k+1}
//! ```
//!
//! where `G(v)` is the greedy policy of `q_from_v(v)`. The mixture is computed
//! in closed form on the policy table, so the only approximation is whatever
//! error the caller injects. Every iteration also records the loss, distance,
//! shift and Bellman residual used by the error-propagation relations checked
//! in [`verify_error_bounds`].

use log::info;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{sup_distance, TabularMdp, TabularPolicy, ValueVector};

/// Slack allowed on each checked relation.
pub const BOUND_TOL: f64 = 1e-9;

/// Number of applications of the evaluation operator per iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Depth {
    Steps(usize),
    /// Full evaluation, realized with an exact linear solve.
    Infinite,
}

impl std::str::FromStr for Depth {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "inf" | "infinity" | "∞" => Ok(Depth::Infinite),
            _ => match s.parse::<usize>() {
                Ok(m) if m >= 1 => Ok(Depth::Steps(m)),
                _ => Err(Error::InvalidConfig(format!("depth must be a positive integer or `inf`, got `{s}`"))),
            },
        }
    }
}

impl std::fmt::Display for Depth {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Depth::Steps(m) => write!(f, "{m}"),
            Depth::Infinite => f.write_str("inf"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum RateSource {
    Constant(f64),
    /// `(1-γ) A / (4R)` evaluated exactly at the current policy.
    ExactKakade,
    /// The safe-policy-iteration rate evaluated exactly at the current policy.
    ExactSpi,
    /// `α_1, α_2, ...`; the last entry repeats once the list runs out.
    Schedule(Vec<f64>),
}

/// Errors added to the scheme.
#[derive(Debug, Clone, PartialEq)]
pub enum ErrorInjector {
    /// `ε_k` uniform in `[-value_scale, value_scale]` per state, and `ε'_k`
    /// uniform in `[-policy_scale, policy_scale]` then centred per row.
    Random { value_scale: f64, policy_scale: f64, seed: u64 },
    /// Explicit per-iteration errors; entry `i` is used for iteration `i + 1`.
    /// Missing entries count as zero.
    Explicit { value: Vec<ValueVector>, policy: Vec<DMatrix<f64>> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SchemeConfig {
    pub depth: Depth,
    pub rate: RateSource,
    pub iterations: usize,
    pub errors: Option<ErrorInjector>,
    /// Start distribution for the exact rates; uniform when `None`.
    pub start_distribution: Option<Vec<f64>>,
    /// Stop early once `‖v* - v_{π_k}‖∞` drops below this.
    pub stop_when_loss_below: Option<f64>,
}

impl SchemeConfig {
    pub fn new(depth: Depth, rate: RateSource, iterations: usize) -> Self {
        Self { depth, rate, iterations, errors: None, start_distribution: None, stop_when_loss_below: None }
    }

    pub fn with_errors(mut self, errors: ErrorInjector) -> Self {
        self.errors = Some(errors);
        self
    }

    fn validate(&self, n_states: usize) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::InvalidConfig("iterations must be at least 1".into()));
        }
        if self.depth == Depth::Steps(0) {
            return Err(Error::InvalidConfig("depth must be at least 1".into()));
        }
        let check_alpha = |a: f64| {
            if a > 0.0 && a <= 1.0 {
                Ok(())
            } else {
                Err(Error::InvalidConfig(format!("mixture rate must lie in (0, 1], got {a}")))
            }
        };
        match &self.rate {
            RateSource::Constant(a) => check_alpha(*a)?,
            RateSource::Schedule(list) => {
                if list.is_empty() {
                    return Err(Error::InvalidConfig("empty rate schedule".into()));
                }
                list.iter().try_for_each(|a| check_alpha(*a))?;
            }
            RateSource::ExactKakade | RateSource::ExactSpi => {}
        }
        if let Some(mu) = &self.start_distribution {
            if mu.len() != n_states {
                return Err(crate::error::mismatch(n_states, mu.len()));
            }
        }
        Ok(())
    }
}

/// Everything recorded for iteration `k`.
///
/// Quantities that need the next iterate (`b_k`, `x_k`, `y_k`) are `None` on
/// the final record; the injected errors are `None` on record 0.
#[derive(Debug, Clone)]
pub struct SchemeRecord {
    pub k: usize,
    pub policy: TabularPolicy,
    pub value: ValueVector,
    /// `α_k`, the rate that produced `π_k`.
    pub alpha: Option<f64>,
    /// `ε_k`.
    pub value_error: Option<ValueVector>,
    /// `ε'_k`, after simplex projection.
    pub policy_error: Option<DMatrix<f64>>,
    /// Exact `v_{π_k}`.
    pub policy_value: ValueVector,
    /// `l_k = v* - v_{π_k}`.
    pub loss: ValueVector,
    /// `d_k = v* - (v_k - ε_k)`.
    pub distance: ValueVector,
    /// `s_k = (v_k - ε_k) - v_{π_k}`.
    pub shift: ValueVector,
    /// `b_k = v_k - T_{π_{k+1}} v_k`.
    pub residual: Option<ValueVector>,
    pub x: Option<ValueVector>,
    pub y: Option<ValueVector>,
}

#[derive(Debug, Clone)]
pub struct SchemeTrace {
    pub depth: Depth,
    pub optimal_value: ValueVector,
    pub optimal_policy: TabularPolicy,
    pub records: Vec<SchemeRecord>,
}

impl SchemeTrace {
    /// `‖l_k‖∞` per record.
    pub fn loss_norms(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.loss.sup_norm()).collect()
    }

    /// `α_1, α_2, ...`.
    pub fn alphas(&self) -> Vec<f64> {
        self.records.iter().filter_map(|r| r.alpha).collect()
    }

    /// CSV with one row per iteration: `iteration,alpha,loss_inf,bound`.
    /// `bound` is the exponential envelope scaled by `‖l_0‖∞`.
    pub fn to_csv(&self, gamma: f64) -> String {
        let gap = self.records[0].loss.sup_norm();
        let envelope = contraction_envelope(&self.alphas(), gamma, gap);
        let mut out = String::from("iteration,alpha,loss_inf,bound\n");
        for (i, r) in self.records.iter().enumerate() {
            let alpha = r.alpha.map_or(String::new(), |a| format!("{a:.12e}"));
            let bound = if i == 0 { gap } else { envelope.bound[i - 1] };
            out.push_str(&format!("{},{},{:.12e},{:.12e}\n", r.k, alpha, r.loss.sup_norm(), bound));
        }
        out
    }
}

fn uniform(n: usize) -> Vec<f64> {
    vec![1.0 / n as f64; n]
}

/// Runs the scheme for `config.iterations` steps from `(initial_v, initial_pi)`.
pub fn run_scheme(
    mdp: &TabularMdp,
    config: &SchemeConfig,
    initial_v: &ValueVector,
    initial_pi: &TabularPolicy,
) -> Result<SchemeTrace> {
    let n_s = mdp.n_states();
    let n_a = mdp.n_actions();
    config.validate(n_s)?;
    if initial_v.len() != n_s || initial_v.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidConfig("initial value must be finite with one entry per state".into()));
    }
    let initial_pi = TabularPolicy::new(initial_pi.probs().clone())?;
    mdp.policy_kernel(&initial_pi)?;

    let mu = config.start_distribution.clone().unwrap_or_else(|| uniform(n_s));
    let (v_star, pi_star) = mdp.solve_optimal();
    let mut noise = match &config.errors {
        Some(ErrorInjector::Random { seed, .. }) => Some(ChaCha8Rng::seed_from_u64(*seed)),
        _ => None,
    };

    // Raw iterates: (π_k, v_k, α_k, ε_k, ε'_k).
    let mut policies = vec![initial_pi];
    let mut values = vec![initial_v.clone()];
    let mut alphas: Vec<Option<f64>> = vec![None];
    let mut value_errors: Vec<Option<ValueVector>> = vec![None];
    let mut policy_errors: Vec<Option<DMatrix<f64>>> = vec![None];
    let mut policy_values = vec![mdp.solve_policy_value(&policies[0])?];

    for k in 0..config.iterations {
        if let Some(threshold) = config.stop_when_loss_below {
            if sup_distance(&v_star, &policy_values[k]) < threshold {
                break;
            }
        }
        let pi_k = &policies[k];
        let v_k = &values[k];
        let greedy = mdp.q_from_v(v_k)?.greedy_policy();
        let alpha = match &config.rate {
            RateSource::Constant(a) => *a,
            RateSource::ExactKakade => exact_kakade_rate(mdp, pi_k, &mu)?,
            RateSource::ExactSpi => exact_spi_rate(mdp, pi_k, &mu)?,
            RateSource::Schedule(list) => list[k.min(list.len() - 1)],
        };
        let mixture = pi_k.probs() * (1.0 - alpha) + greedy.probs() * alpha;

        let (raw_policy_error, value_error) = match (&config.errors, noise.as_mut()) {
            (Some(ErrorInjector::Random { value_scale, policy_scale, .. }), Some(rng)) => {
                let mut pe = DMatrix::from_fn(n_s, n_a, |_, _| rng.random_range(-1.0..=1.0) * policy_scale);
                for s in 0..n_s {
                    let mean = pe.row(s).mean();
                    pe.row_mut(s).iter_mut().for_each(|e| *e -= mean);
                }
                let ve = DVector::from_fn(n_s, |_, _| rng.random_range(-1.0..=1.0) * value_scale);
                (pe, ve)
            }
            (Some(ErrorInjector::Explicit { value, policy }), _) => (
                policy.get(k).cloned().unwrap_or_else(|| DMatrix::zeros(n_s, n_a)),
                value.get(k).map(|v| v.0.clone()).unwrap_or_else(|| DVector::zeros(n_s)),
            ),
            _ => (DMatrix::zeros(n_s, n_a), DVector::zeros(n_s)),
        };
        if raw_policy_error.shape() != (n_s, n_a) || value_error.len() != n_s {
            return Err(crate::error::mismatch(format!("{n_s}x{n_a} errors"), "explicit error of another shape"));
        }

        let mut next_probs = &mixture + &raw_policy_error;
        for s in 0..n_s {
            if next_probs.row(s).iter().any(|p| *p < 0.0) {
                let row: Vec<f64> = next_probs.row(s).iter().copied().collect();
                let projected = project_to_simplex(&row);
                next_probs.row_mut(s).iter_mut().zip(projected).for_each(|(p, q)| *p = q);
            }
        }
        let policy_error = &next_probs - &mixture;
        let next_pi = TabularPolicy::from_matrix_unchecked(next_probs);

        let evaluated = match config.depth {
            Depth::Steps(m) => mdp.apply_eval_operator_n(&next_pi, v_k, m)?,
            Depth::Infinite => mdp.solve_policy_value(&next_pi)?,
        };
        let next_v = ValueVector(evaluated.0 + &value_error);

        policy_values.push(mdp.solve_policy_value(&next_pi)?);
        policies.push(next_pi);
        values.push(next_v);
        alphas.push(Some(alpha));
        value_errors.push(Some(ValueVector(value_error)));
        policy_errors.push(Some(policy_error));
    }

    let gamma = mdp.gamma();
    let p_star = mdp.policy_kernel(&pi_star)?;
    let last = policies.len() - 1;
    let mut records = Vec::with_capacity(policies.len());
    for k in 0..=last {
        let eps = value_errors[k].as_ref().map(|e| e.0.clone()).unwrap_or_else(|| DVector::zeros(n_s));
        let evaluated = &values[k].0 - &eps;
        let residual = if k < last {
            let next = mdp.apply_eval_operator(&policies[k + 1], &values[k])?;
            Some(ValueVector(&values[k].0 - &next.0))
        } else {
            None
        };
        let (x, y) = if k >= 1 && k < last {
            let p_k = mdp.policy_kernel(&policies[k])?;
            let inner = policy_error_inner(mdp, &values[k], policy_errors[k + 1].as_ref().expect("recorded"))?;
            let x = &eps - &p_k * &eps * gamma - &inner;
            let alpha_next = alphas[k + 1].expect("recorded");
            let y = -((&p_k * &eps) * ((1.0 - alpha_next) * gamma) + (&p_star * &eps) * (alpha_next * gamma)) - &inner;
            (Some(ValueVector(x)), Some(ValueVector(y)))
        } else {
            (None, None)
        };
        records.push(SchemeRecord {
            k,
            policy: policies[k].clone(),
            value: values[k].clone(),
            alpha: alphas[k],
            value_error: value_errors[k].clone(),
            policy_error: policy_errors[k].clone(),
            policy_value: policy_values[k].clone(),
            loss: ValueVector(&v_star.0 - &policy_values[k].0),
            distance: ValueVector(&v_star.0 - &evaluated),
            shift: ValueVector(&evaluated - &policy_values[k].0),
            residual,
            x,
            y,
        });
    }

    Ok(SchemeTrace { depth: config.depth, optimal_value: v_star, optimal_policy: pi_star, records })
}

/// `⟨q, ε'⟩(s) = Σ_a ε'(s,a) (r(s,a) + γ E[v(s')])`.
fn policy_error_inner(mdp: &TabularMdp, v: &ValueVector, policy_error: &DMatrix<f64>) -> Result<DVector<f64>> {
    let q = mdp.q_from_v(v)?;
    Ok(DVector::from_fn(mdp.n_states(), |s, _| (0..mdp.n_actions()).map(|a| policy_error[(s, a)] * q[(s, a)]).sum()))
}

/// Euclidean projection onto the probability simplex.
pub fn project_to_simplex(v: &[f64]) -> Vec<f64> {
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut theta = 0.0;
    for (j, u) in sorted.iter().enumerate() {
        cumulative += u;
        let candidate = (cumulative - 1.0) / (j + 1) as f64;
        if u - candidate > 0.0 {
            theta = candidate;
        }
    }
    v.iter().map(|x| (x - theta).max(0.0)).collect()
}

/// `(1-γ) A^{π̄}_{π,μ} / (4R)`, clipped to `[0, 1]`. Zero when `R = 0`.
pub fn exact_kakade_rate(mdp: &TabularMdp, pi: &TabularPolicy, mu: &[f64]) -> Result<f64> {
    if mdp.reward_bound() == 0.0 {
        return Ok(0.0);
    }
    let adv = mdp.advantage_of_greedy(pi, mu)?;
    Ok(((1.0 - mdp.gamma()) * adv.aggregated / (4.0 * mdp.reward_bound())).clamp(0.0, 1.0))
}

/// Which spread of the per-state advantage sits in the denominator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Spread {
    /// `max_s A(s) - min_s A(s)`.
    Range,
    /// `max_s A(s)`.
    Max,
}

fn exact_safe_rate(mdp: &TabularMdp, pi: &TabularPolicy, mu: &[f64], spread: Spread) -> Result<f64> {
    let gamma = mdp.gamma();
    let adv = mdp.advantage_of_greedy(pi, mu)?;
    let greedy = adv.q.greedy_policy();
    let variation = greedy.max_l1_distance(pi);
    let max_adv = adv.per_state.max();
    let spread = match spread {
        Spread::Range => max_adv - adv.per_state.min(),
        Spread::Max => max_adv,
    };
    if spread < 1e-12 || variation < 1e-12 {
        info!("degenerate safe rate (spread {spread:e}, variation {variation:e}); using 1");
        return Ok(1.0);
    }
    let rate = (1.0 - gamma).powi(2) * adv.aggregated / (gamma * variation * spread);
    Ok(rate.clamp(0.0, 1.0))
}

/// `(1-γ)² A^{π̄}_{π,μ} / (γ ‖π̄ - π‖∞ ΔA)`, clipped to `[0, 1]`.
///
/// `‖π̄ - π‖∞` is the largest per-state L1 distance and `ΔA` the spread of
/// the per-state greedy advantage. A zero spread or zero distance returns 1.
pub fn exact_spi_rate(mdp: &TabularMdp, pi: &TabularPolicy, mu: &[f64]) -> Result<f64> {
    exact_safe_rate(mdp, pi, mu, Spread::Range)
}

/// [`exact_spi_rate`] with the spread replaced by `max_s A(s)`; never larger
/// than the SPI rate because the per-state advantage is nonnegative.
pub fn exact_adx_rate(mdp: &TabularMdp, pi: &TabularPolicy, mu: &[f64]) -> Result<f64> {
    exact_safe_rate(mdp, pi, mu, Spread::Max)
}

/// Slack of each relation at one iteration. Positive is good.
#[derive(Debug, Clone, Serialize)]
pub struct IterationSlack {
    pub k: usize,
    /// `min_s [(γP_k)^m b_{k-1} + x_k - b_k](s)`.
    pub residual_slack: f64,
    /// Same for the distance relation; `None` on the final iteration.
    pub distance_slack: Option<f64>,
    /// `-max_s |s_k - (γP_k)^m (I-γP_k)^{-1} b_{k-1}|`.
    pub shift_slack: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BoundReport {
    pub iterations: Vec<IterationSlack>,
    pub violations: usize,
    /// Largest amount by which any relation missed, 0 when none did.
    pub max_violation: f64,
}

impl BoundReport {
    pub fn to_toml(&self) -> String {
        #[derive(Serialize)]
        struct Summary {
            checked_iterations: usize,
            violations: usize,
            max_violation: f64,
            min_residual_slack: f64,
            min_distance_slack: f64,
            max_shift_error: f64,
        }
        let fold_min = |it: &mut dyn Iterator<Item = f64>| it.fold(f64::INFINITY, f64::min);
        let summary = Summary {
            checked_iterations: self.iterations.len(),
            violations: self.violations,
            max_violation: self.max_violation,
            min_residual_slack: fold_min(&mut self.iterations.iter().map(|i| i.residual_slack)),
            min_distance_slack: fold_min(&mut self.iterations.iter().filter_map(|i| i.distance_slack)),
            max_shift_error: -fold_min(&mut self.iterations.iter().map(|i| i.shift_slack)),
        };
        toml::to_string(&summary).expect("report serializes")
    }
}

/// `(γ P)^m` as a matrix, zero for infinite depth.
fn discounted_power(kernel: &DMatrix<f64>, gamma: f64, depth: Depth) -> DMatrix<f64> {
    let n = kernel.nrows();
    match depth {
        Depth::Infinite => DMatrix::zeros(n, n),
        Depth::Steps(m) => {
            let step = kernel * gamma;
            (0..m).fold(DMatrix::identity(n, n), |acc, _| &acc * &step)
        }
    }
}

/// `Σ_{j=1}^{m-1} (γP)^j`; for infinite depth `γP (I - γP)^{-1}`.
fn partial_evaluation_sum(kernel: &DMatrix<f64>, gamma: f64, depth: Depth) -> Result<DMatrix<f64>> {
    let n = kernel.nrows();
    let step = kernel * gamma;
    match depth {
        Depth::Steps(m) => {
            let mut power = DMatrix::identity(n, n);
            let mut sum = DMatrix::zeros(n, n);
            for _ in 1..m {
                power = &power * &step;
                sum += &power;
            }
            Ok(sum)
        }
        Depth::Infinite => {
            let inverse = (DMatrix::identity(n, n) - &step).try_inverse().ok_or(Error::Singular)?;
            Ok(&step * inverse)
        }
    }
}

fn missing(record: &SchemeRecord) -> Error {
    Error::MissingErrorRecords(record.k)
}

/// Checks the residual, distance and shift relations element-wise at every
/// iteration `k >= 1` of `trace`, using exact kernel matrix powers.
pub fn verify_error_bounds(mdp: &TabularMdp, trace: &SchemeTrace) -> Result<BoundReport> {
    let records = &trace.records;
    for r in records.iter().skip(1) {
        if r.value_error.is_none() || r.policy_error.is_none() || r.alpha.is_none() {
            return Err(missing(r));
        }
    }
    let gamma = mdp.gamma();
    let n = mdp.n_states();
    let depth = trace.depth;
    let p_star = mdp.policy_kernel(&mdp.solve_optimal().1)?;
    let identity = DMatrix::<f64>::identity(n, n);

    let mut iterations = Vec::new();
    let mut violations = 0;
    let mut max_violation: f64 = 0.0;
    let mut note = |slack: f64| {
        if slack < -BOUND_TOL {
            violations += 1;
            max_violation = max_violation.max(-slack);
        }
    };

    let last = records.len() - 1;
    for k in 1..=last {
        let rec = &records[k];
        let prev = &records[k - 1];
        let p_k = mdp.policy_kernel(&rec.policy)?;
        let power_k = discounted_power(&p_k, gamma, depth);
        let b_prev = &prev.residual.as_ref().expect("b_{k-1} exists for k <= last").0;

        let inverse = (&identity - &p_k * gamma).try_inverse().ok_or(Error::Singular)?;
        let shift_rhs = &power_k * (inverse * b_prev);
        let shift_slack = -(&rec.shift.0 - shift_rhs).amax();
        note(shift_slack);

        let (residual_slack, distance_slack) = if k < last {
            let next = &records[k + 1];
            let b_k = &rec.residual.as_ref().ok_or_else(|| missing(rec))?.0;
            let eps = &rec.value_error.as_ref().ok_or_else(|| missing(rec))?.0;
            let eps_next = next.policy_error.as_ref().ok_or_else(|| missing(next))?;
            let alpha_next = next.alpha.ok_or_else(|| missing(next))?;
            let inner = policy_error_inner(mdp, &rec.value, eps_next)?;
            let x = eps - (&p_k * eps) * gamma - &inner;
            let y = -((&p_k * eps) * ((1.0 - alpha_next) * gamma) + (&p_star * eps) * (alpha_next * gamma)) - &inner;

            let residual_rhs = &power_k * b_prev + x;
            let residual_slack = (residual_rhs - b_k).min();
            note(residual_slack);

            let p_next = mdp.policy_kernel(&next.policy)?;
            let lead = &identity * (1.0 - alpha_next) + &p_star * (alpha_next * gamma);
            let distance_rhs = lead * &rec.distance.0
                + y
                + partial_evaluation_sum(&p_next, gamma, depth)? * b_k
                + (&power_k * b_prev) * (1.0 - alpha_next);
            let distance_slack = (distance_rhs - &next.distance.0).min();
            note(distance_slack);
            (residual_slack, Some(distance_slack))
        } else {
            // No successor: both relations involving π_{k+1} are vacuous.
            (f64::INFINITY, None)
        };

        iterations.push(IterationSlack { k, residual_slack, distance_slack, shift_slack });
    }
    Ok(BoundReport { iterations, violations, max_violation })
}

/// `Π_{i<=k} η_i · gap` with `η_i = 1 - α_i (1-γ)` and its upper bound
/// `exp(-(1-γ) Σ_{i<=k} α_i) · gap`, for `k = 1..=alphas.len()`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContractionEnvelope {
    pub product: Vec<f64>,
    pub bound: Vec<f64>,
}

pub fn contraction_envelope(alphas: &[f64], gamma: f64, initial_gap: f64) -> ContractionEnvelope {
    let mut product = Vec::with_capacity(alphas.len());
    let mut bound = Vec::with_capacity(alphas.len());
    let mut running = initial_gap;
    let mut alpha_sum = 0.0;
    for alpha in alphas {
        running *= 1.0 - alpha * (1.0 - gamma);
        alpha_sum += alpha;
        product.push(running);
        bound.push((-(1.0 - gamma) * alpha_sum).exp() * initial_gap);
    }
    ContractionEnvelope { product, bound }
}

/// Iterations until the exponential envelope from `initial_gap` falls below
/// `target` under a constant rate.
pub fn envelope_horizon(alpha: f64, gamma: f64, initial_gap: f64, target: f64) -> usize {
    if initial_gap <= target {
        return 0;
    }
    ((initial_gap / target).ln() / ((1.0 - gamma) * alpha)).ceil() as usize
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::fixtures::*;
    use proptest::prelude::{any, prop_assert, proptest};

    fn random_mdp(seed: u64, n_s: usize, n_a: usize, gamma: f64) -> TabularMdp {
        TabularMdp::random(n_s, n_a, gamma, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    fn zeros(mdp: &TabularMdp) -> (ValueVector, TabularPolicy) {
        (ValueVector::zeros(mdp.n_states()), TabularPolicy::uniform(mdp.n_states(), mdp.n_actions()))
    }

    #[test]
    fn full_rate_one_step_is_value_iteration() {
        let mdp = random_mdp(1, 6, 3, 0.9);
        let (v0, pi0) = zeros(&mdp);
        let trace =
            run_scheme(&mdp, &SchemeConfig::new(Depth::Steps(1), RateSource::Constant(1.0), 40), &v0, &pi0).unwrap();
        let mut v = v0;
        for rec in &trace.records {
            assert!(sup_distance(&rec.value, &v) <= 1e-12, "k = {}", rec.k);
            v = mdp.apply_optimality_operator(&v).unwrap();
        }
    }

    #[test]
    fn full_rate_infinite_depth_is_policy_iteration() {
        let mdp = random_mdp(2, 5, 3, 0.9);
        let (v0, pi0) = zeros(&mdp);
        // Policy iteration terminates in at most |A|^|S| steps.
        let trace =
            run_scheme(&mdp, &SchemeConfig::new(Depth::Infinite, RateSource::Constant(1.0), 243), &v0, &pi0).unwrap();
        let mut vi = ValueVector::zeros(5);
        for _ in 0..2000 {
            vi = mdp.apply_optimality_operator(&vi).unwrap();
        }
        let first_exact = trace.records.iter().position(|r| sup_distance(&r.policy_value, &vi) < 1e-9);
        assert!(first_exact.is_some());
        assert!(sup_distance(&trace.records.last().unwrap().value, &vi) < 1e-9);
        for rec in &trace.records[1..] {
            assert!(rec.shift.sup_norm() < 1e-9);
        }
    }

    #[test]
    fn half_rate_converges() {
        let mdp = random_mdp(3, 5, 3, 0.9);
        let (v0, pi0) = zeros(&mdp);
        let trace =
            run_scheme(&mdp, &SchemeConfig::new(Depth::Steps(1), RateSource::Constant(0.5), 500), &v0, &pi0).unwrap();
        assert!(trace.records.last().unwrap().loss.sup_norm() < 1e-6);
        for rec in &trace.records {
            assert!(rec.loss.min() >= -1e-10);
            assert!(rec.policy.max_row_sum_error() <= 1e-12);
        }
    }

    #[test]
    fn kakade_rate_examples() {
        let mdp = two_state_with_stay(0.5);
        let star = mdp.solve_optimal().1;
        assert_eq!(exact_kakade_rate(&mdp, &star, &[1.0, 0.0]).unwrap(), 0.0);

        let flat =
            TabularMdp::new(2, 2, vec![1.0, 0.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0], vec![0.0; 4], 0.5, None).unwrap();
        assert_eq!(exact_kakade_rate(&flat, &TabularPolicy::uniform(2, 2), &[0.5, 0.5]).unwrap(), 0.0);

        // Brute force: the uniform policy in s0 stays half the time.
        // v(s0) = 0.5 + 0.5·0.5·v(s0) => v(s0) = 2/3; q(s0, move) = 1, so
        // A(s0) = 1/3 and A(s1) = 0. The occupancy of s0 from s0 is
        // (1-γ) Σ_t (γ/2)^t = 0.5 / 0.75 = 2/3.
        let pi = TabularPolicy::uniform(2, 2);
        let advantage = (2.0 / 3.0) * (1.0 / 3.0);
        let expected = 0.5 * advantage / 4.0;
        let rate = exact_kakade_rate(&mdp, &pi, &[1.0, 0.0]).unwrap();
        assert!((rate - expected).abs() < 1e-12, "{rate} vs {expected}");
    }

    #[test]
    fn spi_rate_degenerate_cases() {
        let mdp = two_state_with_stay(0.5);
        let (_, star) = mdp.solve_optimal();
        assert_eq!(exact_spi_rate(&mdp, &star, &[0.5, 0.5]).unwrap(), 1.0);

        // Two identical absorbing states: the advantage is the same everywhere.
        let twin =
            TabularMdp::new(2, 2, vec![1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0], vec![0.0, 1.0, 0.0, 1.0], 0.5, None)
                .unwrap();
        let pi = TabularPolicy::uniform(2, 2);
        let adv = twin.advantage_of_greedy(&pi, &[0.5, 0.5]).unwrap();
        assert!((adv.per_state[0] - adv.per_state[1]).abs() < 1e-15);
        assert_eq!(exact_spi_rate(&twin, &pi, &[0.5, 0.5]).unwrap(), 1.0);
    }

    /// Re-derives the SPI rate through value iteration on `T_π`, explicit
    /// loops for q, and a truncated power series for the occupancy.
    fn spi_by_definition(mdp: &TabularMdp, pi: &TabularPolicy, mu: &[f64]) -> f64 {
        let (n_s, n_a, gamma) = (mdp.n_states(), mdp.n_actions(), mdp.gamma());
        let mut v = vec![0.0; n_s];
        for _ in 0..5000 {
            v = (0..n_s)
                .map(|s| {
                    (0..n_a)
                        .map(|a| {
                            let next: f64 = (0..n_s).map(|t| mdp.p(s, a, t) * v[t]).sum();
                            pi.prob(s, a) * (mdp.r(s, a) + gamma * next)
                        })
                        .sum()
                })
                .collect();
        }
        let q = |s: usize, a: usize| mdp.r(s, a) + gamma * (0..n_s).map(|t| mdp.p(s, a, t) * v[t]).sum::<f64>();
        let mut advantage = vec![0.0; n_s];
        let mut variation: f64 = 0.0;
        for s in 0..n_s {
            let mut best = 0;
            for a in 1..n_a {
                if q(s, a) > q(s, best) {
                    best = a;
                }
            }
            advantage[s] = q(s, best) - v[s];
            let tv: f64 = (0..n_a).map(|a| ((a == best) as u8 as f64 - pi.prob(s, a)).abs()).sum();
            variation = variation.max(tv);
        }
        let mut occupancy = vec![0.0; n_s];
        let mut visit = mu.to_vec();
        let mut discount = 1.0 - gamma;
        for _ in 0..5000 {
            for s in 0..n_s {
                occupancy[s] += discount * visit[s];
            }
            let mut next = vec![0.0; n_s];
            for s in 0..n_s {
                for a in 0..n_a {
                    for t in 0..n_s {
                        next[t] += visit[s] * pi.prob(s, a) * mdp.p(s, a, t);
                    }
                }
            }
            visit = next;
            discount *= gamma;
        }
        let aggregated: f64 = occupancy.iter().zip(&advantage).map(|(d, a)| d * a).sum();
        let spread =
            advantage.iter().cloned().fold(f64::MIN, f64::max) - advantage.iter().cloned().fold(f64::MAX, f64::min);
        ((1.0 - gamma).powi(2) * aggregated / (gamma * variation * spread)).clamp(0.0, 1.0)
    }

    #[test]
    fn spi_rate_matches_independent_computation() {
        for seed in 0..5 {
            let mdp = random_mdp(100 + seed, 4, 3, 0.8);
            let pi = TabularPolicy::uniform(4, 3);
            let mu = vec![0.25; 4];
            let fast = exact_spi_rate(&mdp, &pi, &mu).unwrap();
            let slow = spi_by_definition(&mdp, &pi, &mu);
            assert!((fast - slow).abs() < 1e-9, "seed {seed}: {fast} vs {slow}");
        }
    }

    #[test]
    fn adaptive_exact_rates_drive_the_scheme() {
        let mdp = random_mdp(7, 5, 2, 0.9);
        let (v0, pi0) = zeros(&mdp);
        for rate in [RateSource::ExactKakade, RateSource::ExactSpi] {
            let trace = run_scheme(&mdp, &SchemeConfig::new(Depth::Steps(2), rate, 30), &v0, &pi0).unwrap();
            assert!(trace.alphas().iter().all(|a| (0.0..=1.0).contains(a)));
            let report = verify_error_bounds(&mdp, &trace).unwrap();
            assert_eq!(report.violations, 0, "{:?}", report.max_violation);
        }
    }

    #[test]
    fn bounds_hold_without_errors() {
        for (seed, m) in [(10, 1), (11, 2), (12, 5)] {
            let mdp = random_mdp(seed, 6, 3, 0.9);
            let (v0, pi0) = zeros(&mdp);
            let trace = run_scheme(&mdp, &SchemeConfig::new(Depth::Steps(m), RateSource::Constant(0.3), 30), &v0, &pi0)
                .unwrap();
            let report = verify_error_bounds(&mdp, &trace).unwrap();
            assert_eq!(report.violations, 0);
            assert_eq!(report.iterations.len(), 30);
        }
    }

    #[test]
    fn bounds_hold_with_errors() {
        for (seed, depth) in [(20, Depth::Steps(1)), (21, Depth::Steps(3)), (22, Depth::Infinite)] {
            let mdp = random_mdp(seed, 7, 3, 0.9);
            let (v0, pi0) = zeros(&mdp);
            let config = SchemeConfig::new(depth, RateSource::Constant(0.5), 25).with_errors(ErrorInjector::Random {
                value_scale: 0.1,
                policy_scale: 0.1,
                seed,
            });
            let trace = run_scheme(&mdp, &config, &v0, &pi0).unwrap();
            assert!(trace.records[1..].iter().all(|r| r.value_error.as_ref().unwrap().sup_norm() <= 0.1));
            for rec in &trace.records {
                assert!(rec.policy.max_row_sum_error() <= 1e-12);
                assert!(rec.policy.probs().iter().all(|p| *p >= 0.0));
            }
            let report = verify_error_bounds(&mdp, &trace).unwrap();
            assert_eq!(report.violations, 0, "max violation {}", report.max_violation);
        }
    }

    #[test]
    fn one_step_distance_relation_has_no_partial_sum() {
        let mdp = random_mdp(30, 5, 2, 0.7);
        let (v0, pi0) = zeros(&mdp);
        let alpha = 0.4;
        let config = SchemeConfig::new(Depth::Steps(1), RateSource::Constant(alpha), 6)
            .with_errors(ErrorInjector::Random { value_scale: 0.05, policy_scale: 0.05, seed: 3 });
        let trace = run_scheme(&mdp, &config, &v0, &pi0).unwrap();
        let report = verify_error_bounds(&mdp, &trace).unwrap();
        let gamma = mdp.gamma();
        let p_star = mdp.policy_kernel(&trace.optimal_policy).unwrap();
        for k in 1..trace.records.len() - 1 {
            let (prev, rec, next) = (&trace.records[k - 1], &trace.records[k], &trace.records[k + 1]);
            let p_k = mdp.policy_kernel(&rec.policy).unwrap();
            let n = mdp.n_states();
            let reduced = (DMatrix::identity(n, n) * (1.0 - alpha) + &p_star * (alpha * gamma)) * &rec.distance.0
                + &rec.y.as_ref().unwrap().0
                + (&p_k * &prev.residual.as_ref().unwrap().0) * ((1.0 - alpha) * gamma);
            let slack = (reduced - &next.distance.0).min();
            let reported = report.iterations[k - 1].distance_slack.unwrap();
            assert!((slack - reported).abs() < 1e-12, "k = {k}");
        }
    }

    #[test]
    fn verification_rejects_missing_errors() {
        let mdp = random_mdp(40, 3, 2, 0.9);
        let (v0, pi0) = zeros(&mdp);
        let mut trace =
            run_scheme(&mdp, &SchemeConfig::new(Depth::Steps(1), RateSource::Constant(0.5), 4), &v0, &pi0).unwrap();
        trace.records[2].value_error = None;
        assert!(matches!(verify_error_bounds(&mdp, &trace), Err(Error::MissingErrorRecords(2))));
    }

    #[test]
    fn projection_lands_on_the_simplex() {
        let p = project_to_simplex(&[0.7, 0.5, -0.2]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!(p.iter().all(|x| *x >= 0.0));
        assert_eq!(project_to_simplex(&[0.25, 0.75]), vec![0.25, 0.75]);
    }

    #[test]
    fn envelope_examples() {
        let full = contraction_envelope(&[1.0; 5], 0.9, 2.0);
        for (k, p) in full.product.iter().enumerate() {
            assert!((p - 2.0 * 0.9f64.powi(k as i32 + 1)).abs() < 1e-14);
        }
        let idle = contraction_envelope(&[0.0; 5], 0.9, 3.0);
        assert!(idle.product.iter().all(|p| *p == 3.0));

        let half = contraction_envelope(&[0.5; 10], 0.9, 1.0);
        assert!((half.product[9] - 0.5987).abs() < 5e-5);
        assert!((half.bound[9] - 0.6065).abs() < 5e-5);
        assert!(half.product[9] <= half.bound[9]);
    }

    #[test]
    fn depth_parsing() {
        assert_eq!("inf".parse::<Depth>().unwrap(), Depth::Infinite);
        assert_eq!("3".parse::<Depth>().unwrap(), Depth::Steps(3));
        assert!("0".parse::<Depth>().is_err());
    }

    proptest! {
        #[test]
        fn envelope_product_below_bound(alphas in proptest::collection::vec(0.0f64..=1.0, 1..50), gamma in 0.01f64..0.999) {
            let env = contraction_envelope(&alphas, gamma, 1.0);
            for (p, b) in env.product.iter().zip(&env.bound) {
                prop_assert!(p <= &(b * (1.0 + 1e-12)));
            }
        }

        #[test]
        fn spi_rate_dominates_adx_rate(seed in any::<u64>()) {
            let mdp = random_mdp(seed, 4, 3, 0.9);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
            let mut probs = DMatrix::from_fn(4, 3, |_, _| rng.random_range(0.0..1.0));
            for s in 0..4 {
                let total = probs.row(s).sum();
                probs.row_mut(s).iter_mut().for_each(|p| *p /= total);
            }
            let pi = TabularPolicy::from_matrix_unchecked(probs);
            let mu = [0.25; 4];
            prop_assert!(exact_adx_rate(&mdp, &pi, &mu).unwrap() <= exact_spi_rate(&mdp, &pi, &mu).unwrap());
        }
    }
}
