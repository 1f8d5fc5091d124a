//! Finite MDPs and the exact Bellman machinery on them.
//!
//! Everything here is dense and double precision. Policies are row-stochastic
//! `(state, action)` tables, values are state-indexed vectors, and all solves
//! go through a direct LU factorization of `I - γ P_π`.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{mismatch, Error, Result};

/// Row sums of transition kernels and policies must hit 1 within this.
pub const DISTRIBUTION_TOL: f64 = 1e-12;

/// A finite discounted MDP.
///
/// `transition` is stored flat in `(s, a, s')` row-major order and `reward`
/// in `(s, a)` order, which is also the on-disk layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MdpFile", into = "MdpFile")]
pub struct TabularMdp {
    n_states: usize,
    n_actions: usize,
    transition: Vec<f64>,
    reward: Vec<f64>,
    gamma: f64,
    reward_bound: f64,
}

#[derive(Serialize, Deserialize)]
struct MdpFile {
    n_states: usize,
    n_actions: usize,
    gamma: f64,
    transition: Vec<f64>,
    reward: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    reward_bound: Option<f64>,
}

impl TryFrom<MdpFile> for TabularMdp {
    type Error = Error;

    fn try_from(f: MdpFile) -> Result<Self> {
        TabularMdp::new(f.n_states, f.n_actions, f.transition, f.reward, f.gamma, f.reward_bound)
    }
}

impl From<TabularMdp> for MdpFile {
    fn from(m: TabularMdp) -> Self {
        MdpFile {
            n_states: m.n_states,
            n_actions: m.n_actions,
            gamma: m.gamma,
            transition: m.transition,
            reward: m.reward,
            reward_bound: Some(m.reward_bound),
        }
    }
}

impl TabularMdp {
    /// Builds and validates an MDP. When `reward_bound` is `None` it is taken
    /// as `max |r(s, a)|`.
    pub fn new(
        n_states: usize,
        n_actions: usize,
        transition: Vec<f64>,
        reward: Vec<f64>,
        gamma: f64,
        reward_bound: Option<f64>,
    ) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(Error::InvalidMdp("need at least one state and one action".into()));
        }
        if transition.len() != n_states * n_actions * n_states {
            return Err(mismatch(format!("{} transition entries", n_states * n_actions * n_states), transition.len()));
        }
        if reward.len() != n_states * n_actions {
            return Err(mismatch(format!("{} reward entries", n_states * n_actions), reward.len()));
        }
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::InvalidMdp(format!("gamma must lie in (0, 1), got {gamma}")));
        }
        for (row_idx, row) in transition.chunks(n_states).enumerate() {
            check_distribution(row).map_err(|e| {
                Error::InvalidMdp(format!("transition row (s={}, a={}): {e}", row_idx / n_actions, row_idx % n_actions))
            })?;
        }
        if reward.iter().any(|r| !r.is_finite()) {
            return Err(Error::InvalidMdp("non-finite reward".into()));
        }
        let observed = reward.iter().fold(0.0_f64, |m, r| m.max(r.abs()));
        let reward_bound = reward_bound.unwrap_or(observed);
        if reward_bound < observed {
            return Err(Error::InvalidMdp(format!("reward bound {reward_bound} below max |r| = {observed}")));
        }
        Ok(Self { n_states, n_actions, transition, reward, gamma, reward_bound })
    }

    /// Random MDP with rewards uniform in `[-1, 1]` and transition rows
    /// supported on a random subset of states.
    pub fn random<R: Rng + ?Sized>(n_states: usize, n_actions: usize, gamma: f64, rng: &mut R) -> Self {
        let mut transition = vec![0.0; n_states * n_actions * n_states];
        for row in transition.chunks_mut(n_states) {
            let support = rng.random_range(1..=n_states);
            for _ in 0..support {
                row[rng.random_range(0..n_states)] += rng.random_range(0.05..1.0);
            }
            let total: f64 = row.iter().sum();
            row.iter_mut().for_each(|p| *p /= total);
        }
        let reward = (0..n_states * n_actions).map(|_| rng.random_range(-1.0..=1.0)).collect();
        Self::new(n_states, n_actions, transition, reward, gamma, Some(1.0)).expect("generated MDP is valid")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(toml::from_str(&text)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("MDP serializes")
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn reward_bound(&self) -> f64 {
        self.reward_bound
    }

    #[inline]
    pub fn p(&self, s: usize, a: usize, next: usize) -> f64 {
        self.transition[(s * self.n_actions + a) * self.n_states + next]
    }

    #[inline]
    pub fn r(&self, s: usize, a: usize) -> f64 {
        self.reward[s * self.n_actions + a]
    }

    /// `P(· | s, a)` as a slice.
    pub fn transition_row(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.n_actions + a) * self.n_states;
        &self.transition[start..start + self.n_states]
    }

    pub fn reward_table(&self) -> QTable {
        QTable(DMatrix::from_fn(self.n_states, self.n_actions, |s, a| self.r(s, a)))
    }

    fn check_policy(&self, pi: &TabularPolicy) -> Result<()> {
        if pi.n_states() != self.n_states || pi.n_actions() != self.n_actions {
            return Err(mismatch(
                format!("{}x{} policy", self.n_states, self.n_actions),
                format!("{}x{}", pi.n_states(), pi.n_actions()),
            ));
        }
        Ok(())
    }

    fn check_values(&self, v: &ValueVector) -> Result<()> {
        if v.len() != self.n_states {
            return Err(mismatch(format!("{} values", self.n_states), v.len()));
        }
        Ok(())
    }

    /// The state kernel `P_π(s' | s) = Σ_a π(a|s) P(s'|s,a)`.
    pub fn policy_kernel(&self, pi: &TabularPolicy) -> Result<DMatrix<f64>> {
        self.check_policy(pi)?;
        let mut kernel = DMatrix::zeros(self.n_states, self.n_states);
        for s in 0..self.n_states {
            for a in 0..self.n_actions {
                let w = pi.prob(s, a);
                if w == 0.0 {
                    continue;
                }
                for (next, p) in self.transition_row(s, a).iter().enumerate() {
                    kernel[(s, next)] += w * p;
                }
            }
        }
        Ok(kernel)
    }

    /// `r_π(s) = Σ_a π(a|s) r(s,a)`.
    pub fn policy_reward(&self, pi: &TabularPolicy) -> Result<DVector<f64>> {
        self.check_policy(pi)?;
        Ok(DVector::from_fn(self.n_states, |s, _| (0..self.n_actions).map(|a| pi.prob(s, a) * self.r(s, a)).sum()))
    }

    /// `I - γ P_π`.
    pub fn evaluation_matrix(&self, pi: &TabularPolicy) -> Result<DMatrix<f64>> {
        let kernel = self.policy_kernel(pi)?;
        Ok(DMatrix::identity(self.n_states, self.n_states) - kernel * self.gamma)
    }

    /// Exact `v_π = (I - γ P_π)^{-1} r_π`.
    pub fn solve_policy_value(&self, pi: &TabularPolicy) -> Result<ValueVector> {
        let a = self.evaluation_matrix(pi)?;
        let r = self.policy_reward(pi)?;
        a.lu().solve(&r).map(ValueVector).ok_or(Error::Singular)
    }

    /// `T_π v = r_π + γ P_π v`.
    pub fn apply_eval_operator(&self, pi: &TabularPolicy, v: &ValueVector) -> Result<ValueVector> {
        self.check_policy(pi)?;
        let q = self.q_from_v(v)?;
        Ok(ValueVector(DVector::from_fn(self.n_states, |s, _| {
            (0..self.n_actions).map(|a| pi.prob(s, a) * q[(s, a)]).sum()
        })))
    }

    /// `T_π^m v`, applying the evaluation operator `m` times.
    pub fn apply_eval_operator_n(&self, pi: &TabularPolicy, v: &ValueVector, m: usize) -> Result<ValueVector> {
        let mut out = v.clone();
        for _ in 0..m {
            out = self.apply_eval_operator(pi, &out)?;
        }
        Ok(out)
    }

    /// `T_* v`: per-state max over actions of the one-step backup.
    pub fn apply_optimality_operator(&self, v: &ValueVector) -> Result<ValueVector> {
        let q = self.q_from_v(v)?;
        Ok(ValueVector(DVector::from_fn(self.n_states, |s, _| q.row_max(s))))
    }

    /// `q(s,a) = r(s,a) + γ Σ_{s'} P(s'|s,a) v(s')`.
    pub fn q_from_v(&self, v: &ValueVector) -> Result<QTable> {
        self.check_values(v)?;
        Ok(QTable(DMatrix::from_fn(self.n_states, self.n_actions, |s, a| {
            let backup: f64 = self.transition_row(s, a).iter().zip(v.iter()).map(|(p, x)| p * x).sum();
            self.r(s, a) + self.gamma * backup
        })))
    }

    /// Discounted occupancy `d = (1-γ) μ (I - γ P_π)^{-1}`, solved as a
    /// transposed system.
    pub fn occupancy_measure(&self, pi: &TabularPolicy, mu: &[f64]) -> Result<Vec<f64>> {
        if mu.len() != self.n_states {
            return Err(mismatch(format!("{} start probabilities", self.n_states), mu.len()));
        }
        check_distribution(mu)?;
        let a = self.evaluation_matrix(pi)?.transpose();
        let rhs = DVector::from_iterator(self.n_states, mu.iter().map(|m| (1.0 - self.gamma) * m));
        let d = a.lu().solve(&rhs).ok_or(Error::Singular)?;
        Ok(d.iter().copied().collect())
    }

    /// Advantage of the greedy policy over `pi`, per state and aggregated
    /// under the occupancy of `pi` from `mu`.
    pub fn advantage_of_greedy(&self, pi: &TabularPolicy, mu: &[f64]) -> Result<GreedyAdvantage> {
        let v = self.solve_policy_value(pi)?;
        let q = self.q_from_v(&v)?;
        let per_state = ValueVector(DVector::from_fn(self.n_states, |s, _| q.row_max(s) - v[s]));
        let d = self.occupancy_measure(pi, mu)?;
        let aggregated = d.iter().zip(per_state.iter()).map(|(w, a)| w * a).sum();
        Ok(GreedyAdvantage { per_state, aggregated, q })
    }

    /// Optimal value and a deterministic optimal policy, by policy iteration
    /// from the greedy policy of the reward table. Stops once the greedy step
    /// no longer improves any state by more than round-off.
    pub fn solve_optimal(&self) -> (ValueVector, TabularPolicy) {
        let mut pi = self.reward_table().greedy_policy();
        let mut value = self.solve_policy_value(&pi).expect("non-singular for gamma < 1");
        loop {
            let next_pi = self.q_from_v(&value).expect("dimensions match").greedy_policy();
            let next_value = self.solve_policy_value(&next_pi).expect("non-singular for gamma < 1");
            let improved = next_value.iter().zip(value.iter()).any(|(n, o)| *n > o + 1e-13 * (1.0 + o.abs()));
            if !improved {
                return (value, pi);
            }
            pi = next_pi;
            value = next_value;
        }
    }

    /// `v*`, see [`TabularMdp::solve_optimal`].
    pub fn optimal_value(&self) -> ValueVector {
        self.solve_optimal().0
    }
}

/// Result of [`TabularMdp::advantage_of_greedy`].
#[derive(Debug, Clone)]
pub struct GreedyAdvantage {
    /// `max_a q_π(s,a) - v_π(s)`.
    pub per_state: ValueVector,
    /// `Σ_s d_{π,μ}(s) · per_state(s)`.
    pub aggregated: f64,
    /// `q_π` used for the greedy step.
    pub q: QTable,
}

fn check_distribution(row: &[f64]) -> Result<()> {
    if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(Error::InvalidDistribution("negative or non-finite entry".into()));
    }
    let total: f64 = row.iter().sum();
    if (total - 1.0).abs() > DISTRIBUTION_TOL {
        return Err(Error::InvalidDistribution(format!("sums to {total}")));
    }
    Ok(())
}

/// Stochastic policy as a `(state, action)` probability table.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularPolicy(DMatrix<f64>);

impl TabularPolicy {
    pub fn new(probs: DMatrix<f64>) -> Result<Self> {
        for s in 0..probs.nrows() {
            let row: Vec<f64> = probs.row(s).iter().copied().collect();
            check_distribution(&row).map_err(|e| Error::InvalidDistribution(format!("state {s}: {e}")))?;
        }
        Ok(Self(probs))
    }

    /// Wraps a table without validation. Callers guarantee the rows are
    /// distributions.
    pub(crate) fn from_matrix_unchecked(probs: DMatrix<f64>) -> Self {
        Self(probs)
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Self(DMatrix::from_element(n_states, n_actions, 1.0 / n_actions as f64))
    }

    pub fn deterministic(actions: &[usize], n_actions: usize) -> Self {
        let mut probs = DMatrix::zeros(actions.len(), n_actions);
        for (s, &a) in actions.iter().enumerate() {
            probs[(s, a)] = 1.0;
        }
        Self(probs)
    }

    pub fn n_states(&self) -> usize {
        self.0.nrows()
    }

    pub fn n_actions(&self) -> usize {
        self.0.ncols()
    }

    #[inline]
    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.0[(s, a)]
    }

    pub fn probs(&self) -> &DMatrix<f64> {
        &self.0
    }

    /// Most likely action per state, lowest index on ties.
    pub fn actions(&self) -> Vec<usize> {
        (0..self.n_states()).map(|s| argmax(self.0.row(s).iter().copied())).collect()
    }

    /// `max_s Σ_a |π(a|s) - other(a|s)|`.
    pub fn max_l1_distance(&self, other: &TabularPolicy) -> f64 {
        (0..self.n_states())
            .map(|s| (0..self.n_actions()).map(|a| (self.prob(s, a) - other.prob(s, a)).abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// Largest deviation of any row sum from 1.
    pub fn max_row_sum_error(&self) -> f64 {
        (0..self.n_states()).map(|s| (self.0.row(s).sum() - 1.0).abs()).fold(0.0, f64::max)
    }
}

/// State-indexed real vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueVector(pub DVector<f64>);

impl ValueVector {
    pub fn zeros(n: usize) -> Self {
        Self(DVector::zeros(n))
    }

    pub fn from_vec(values: Vec<f64>) -> Self {
        Self(DVector::from_vec(values))
    }

    pub fn sup_norm(&self) -> f64 {
        self.0.amax()
    }
}

impl std::ops::Deref for ValueVector {
    type Target = DVector<f64>;

    fn deref(&self) -> &Self::Target {
        &self.0
    }
}

/// `(state, action)` quality table.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable(pub DMatrix<f64>);

impl QTable {
    pub fn row_max(&self, s: usize) -> f64 {
        self.0.row(s).iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Deterministic argmax policy, lowest action index on ties.
    pub fn greedy_policy(&self) -> TabularPolicy {
        let actions: Vec<usize> = (0..self.0.nrows()).map(|s| argmax(self.0.row(s).iter().copied())).collect();
        TabularPolicy::deterministic(&actions, self.0.ncols())
    }
}

impl std::ops::Deref for QTable {
    type Target = DMatrix<f64>;

    fn deref(&self) -> &Self::Target {
        &self.0
    }
}

/// Index of the first maximum.
pub fn argmax(values: impl IntoIterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_value = f64::NEG_INFINITY;
    for (i, v) in values.into_iter().enumerate() {
        if v > best_value {
            best = i;
            best_value = v;
        }
    }
    best
}

pub fn sup_distance(a: &ValueVector, b: &ValueVector) -> f64 {
    (&a.0 - &b.0).amax()
}
