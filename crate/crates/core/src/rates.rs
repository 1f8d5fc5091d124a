//! Mixture-rate schedules for the deep agent.
//!
//! The adaptive kinds scale `alpha0` by a moving average of the estimated
//! greedy advantage `Â(s) = max_a q(s,a) - Σ_a π(a|s) q(s,a)` over the
//! policy batch, divided by a slowly decaying scale statistic:
//!
//! | kind  | rate                    |
//! |-------|-------------------------|
//! | `cpi` | `α0 · m / Q⁺`           |
//! | `spi` | `α0 · m / (M⁺ - M⁻)`    |
//! | `adx` | `α0 · m / M⁺`           |
//!
//! Every rate is clipped to `[0, 1]`.

use std::fmt;
use std::str::FromStr;

use log::debug;
use ndarray::ArrayView2;
use num_traits::ToPrimitive;
use serde::{Deserialize, Serialize};

use crate::error::{mismatch, Error, Result};

/// Denominators below this are treated as zero.
pub const ZERO_DENOMINATOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateKind {
    Constant,
    Hyperbolic,
    Cpi,
    Spi,
    Adx,
}

impl RateKind {
    pub const ALL: [RateKind; 5] =
        [RateKind::Constant, RateKind::Hyperbolic, RateKind::Cpi, RateKind::Spi, RateKind::Adx];

    pub fn is_adaptive(self) -> bool {
        matches!(self, RateKind::Cpi | RateKind::Spi | RateKind::Adx)
    }

    fn name(self) -> &'static str {
        match self {
            RateKind::Constant => "constant",
            RateKind::Hyperbolic => "hyperbolic",
            RateKind::Cpi => "cpi",
            RateKind::Spi => "spi",
            RateKind::Adx => "adx",
        }
    }
}

impl fmt::Display for RateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RateKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        RateKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown rate kind `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateConfig {
    pub kind: RateKind,
    pub alpha0: f64,
    pub beta1: f64,
    pub beta2: f64,
}

impl Default for RateConfig {
    fn default() -> Self {
        Self { kind: RateKind::Cpi, alpha0: 0.1, beta1: 0.99, beta2: 0.9999 }
    }
}

impl RateConfig {
    pub fn constant(alpha0: f64) -> Self {
        Self { kind: RateKind::Constant, alpha0, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let open_unit = |b: f64| b > 0.0 && b < 1.0;
        if !(self.alpha0 > 0.0 && self.alpha0.is_finite()) {
            return Err(Error::InvalidConfig(format!("rate.alpha0 must be positive, got {}", self.alpha0)));
        }
        if !open_unit(self.beta1) || !open_unit(self.beta2) {
            return Err(Error::InvalidConfig(format!(
                "rate.beta1 and rate.beta2 must lie in (0, 1), got {} and {}",
                self.beta1, self.beta2
            )));
        }
        Ok(())
    }
}

/// Advantage statistics of one policy batch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatchAdvantageStats {
    pub a_hat_mean: f64,
    pub a_hat_max: f64,
    pub a_hat_min: f64,
    pub q_abs_max: f64,
}

impl BatchAdvantageStats {
    pub fn zero() -> Self {
        Self { a_hat_mean: 0.0, a_hat_max: 0.0, a_hat_min: 0.0, q_abs_max: 0.0 }
    }
}

/// Per-row `Â(s)`, computed in double precision.
///
/// Rounding in low-precision probabilities can push `Σ π q` a hair above the
/// maximum; such rows are reported as zero advantage.
pub fn advantages<F: ToPrimitive + Copy>(q_values: ArrayView2<F>, pi_probs: ArrayView2<F>) -> Result<Vec<f64>> {
    if q_values.dim() != pi_probs.dim() {
        return Err(mismatch(format!("{:?}", q_values.dim()), format!("{:?}", pi_probs.dim())));
    }
    if q_values.nrows() == 0 || q_values.ncols() == 0 {
        return Err(Error::EmptyBatch);
    }
    let f = |x: &F| x.to_f64().expect("finite");
    Ok(q_values
        .rows()
        .into_iter()
        .zip(pi_probs.rows())
        .map(|(q, p)| {
            let max = q.iter().map(f).fold(f64::NEG_INFINITY, f64::max);
            let expected: f64 = q.iter().zip(p.iter()).map(|(q, p)| f(q) * f(p)).sum();
            (max - expected).max(0.0)
        })
        .collect())
}

/// Batch statistics from the online q-values and policy probabilities.
pub fn batch_stats<F: ToPrimitive + Copy>(
    q_values: ArrayView2<F>,
    pi_probs: ArrayView2<F>,
) -> Result<BatchAdvantageStats> {
    let a_hat = advantages(q_values, pi_probs)?;
    let n = a_hat.len() as f64;
    Ok(BatchAdvantageStats {
        a_hat_mean: a_hat.iter().sum::<f64>() / n,
        a_hat_max: a_hat.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        a_hat_min: a_hat.iter().copied().fold(f64::INFINITY, f64::min),
        q_abs_max: q_values.iter().map(|q| q.to_f64().expect("finite").abs()).fold(0.0, f64::max),
    })
}

/// Moving statistics behind the adaptive rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateState {
    config: RateConfig,
    m: f64,
    q_plus: f64,
    m_plus: f64,
    /// `None` until the first update.
    m_minus: Option<f64>,
    steps: u64,
}

impl RateState {
    pub fn new(config: RateConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config, m: 0.0, q_plus: 0.0, m_plus: 0.0, m_minus: None, steps: 0 })
    }

    pub fn config(&self) -> RateConfig {
        self.config
    }

    pub fn m(&self) -> f64 {
        self.m
    }

    pub fn q_plus(&self) -> f64 {
        self.q_plus
    }

    pub fn m_plus(&self) -> f64 {
        self.m_plus
    }

    /// `+∞` before the first update.
    pub fn m_minus(&self) -> f64 {
        self.m_minus.unwrap_or(f64::INFINITY)
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn update(&mut self, stats: &BatchAdvantageStats) {
        let RateConfig { beta1, beta2, .. } = self.config;
        self.m = beta1 * self.m + (1.0 - beta1) * stats.a_hat_mean;
        self.q_plus = (beta2 * self.q_plus).max(stats.q_abs_max);
        self.m_plus = (beta2 * self.m_plus).max(stats.a_hat_max);
        self.m_minus = Some(match self.m_minus {
            Some(prev) => (prev / beta2).min(stats.a_hat_min),
            None => stats.a_hat_min,
        });
        self.steps += 1;
    }

    /// The rate before clipping to `[0, 1]`.
    ///
    /// A denominator below [`ZERO_DENOMINATOR`] gives 0, except for `spi`
    /// with a positive numerator: there a collapsed advantage spread means an
    /// unbounded rate, returned as `+∞`, which keeps `α_adx ≤ α_spi`.
    pub fn unclipped_alpha(&self) -> Result<f64> {
        let RateConfig { kind, alpha0, .. } = self.config;
        if kind.is_adaptive() && self.steps == 0 {
            return Err(Error::RateNotReady(kind.name()));
        }
        let ratio = |denominator: f64| {
            if denominator < ZERO_DENOMINATOR {
                debug!("{kind} rate: denominator {denominator:e} treated as zero");
                None
            } else {
                Some(alpha0 * self.m / denominator)
            }
        };
        Ok(match kind {
            RateKind::Constant => alpha0,
            RateKind::Hyperbolic => alpha0 / (1.0 + self.steps as f64),
            RateKind::Cpi => ratio(self.q_plus).unwrap_or(0.0),
            RateKind::Spi => {
                ratio(self.m_plus - self.m_minus()).unwrap_or(if self.m > 0.0 { f64::INFINITY } else { 0.0 })
            }
            RateKind::Adx => ratio(self.m_plus).unwrap_or(0.0),
        })
    }

    pub fn current_alpha(&self) -> Result<f64> {
        Ok(self.unclipped_alpha()?.clamp(0.0, 1.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};
    use proptest::prelude::{prop_assert, proptest};

    fn state(kind: RateKind, alpha0: f64) -> RateState {
        RateState::new(RateConfig { kind, alpha0, ..RateConfig::default() }).unwrap()
    }

    #[test]
    fn greedy_policy_has_zero_advantage() {
        let q = array![[1.0, 3.0], [2.0, -1.0]];
        let pi = array![[0.0, 1.0], [1.0, 0.0]];
        let s = batch_stats(q.view(), pi.view()).unwrap();
        assert_eq!((s.a_hat_mean, s.a_hat_max, s.a_hat_min), (0.0, 0.0, 0.0));
        assert_eq!(s.q_abs_max, 3.0);
    }

    #[test]
    fn uniform_policy_advantage() {
        let s = batch_stats(array![[0.0, 1.0]].view(), array![[0.5, 0.5]].view()).unwrap();
        assert_eq!(s.a_hat_mean, 0.5);
        assert_eq!(s.q_abs_max, 1.0);
    }

    #[test]
    fn stats_reject_bad_shapes() {
        let q = Array2::<f64>::zeros((0, 2));
        assert!(matches!(batch_stats(q.view(), q.view()), Err(Error::EmptyBatch)));
        assert!(batch_stats(Array2::<f64>::zeros((2, 2)).view(), Array2::<f64>::zeros((2, 3)).view()).is_err());
    }

    #[test]
    fn moving_average_reaches_fixed_point() {
        let mut s = state(RateKind::Cpi, 0.1);
        let stats = BatchAdvantageStats { a_hat_mean: 0.3, a_hat_max: 0.5, a_hat_min: 0.1, q_abs_max: 2.0 };
        for _ in 0..5000 {
            s.update(&stats);
        }
        assert!((s.m() - 0.3).abs() < 1e-12);
    }

    #[test]
    fn moving_max_decays_slowly() {
        let mut s = state(RateKind::Cpi, 0.1);
        s.q_plus = 1.0;
        s.update(&BatchAdvantageStats::zero());
        assert_eq!(s.q_plus(), 0.9999);
    }

    #[test]
    fn first_update_sets_moving_min() {
        let mut s = state(RateKind::Spi, 0.1);
        assert_eq!(s.m_minus(), f64::INFINITY);
        s.update(&BatchAdvantageStats { a_hat_mean: 0.4, a_hat_max: 0.7, a_hat_min: 0.2, q_abs_max: 1.0 });
        assert_eq!(s.m_minus(), 0.2);
        s.update(&BatchAdvantageStats { a_hat_mean: 0.4, a_hat_max: 0.7, a_hat_min: 0.5, q_abs_max: 1.0 });
        assert_eq!(s.m_minus(), 0.2 / 0.9999);
    }

    #[test]
    fn direct_formulas() {
        let mut adx = state(RateKind::Adx, 1.0);
        adx.steps = 1;
        adx.m = 0.5;
        adx.m_plus = 1.0;
        assert_eq!(adx.current_alpha().unwrap(), 0.5);

        let mut cpi = state(RateKind::Cpi, 0.1);
        cpi.steps = 1;
        cpi.m = 0.7;
        cpi.q_plus = 0.7;
        assert!((cpi.current_alpha().unwrap() - 0.1).abs() < 1e-15);

        assert_eq!(state(RateKind::Constant, 0.25).current_alpha().unwrap(), 0.25);
        let mut hyp = state(RateKind::Hyperbolic, 1.0);
        assert_eq!(hyp.current_alpha().unwrap(), 1.0);
        hyp.update(&BatchAdvantageStats::zero());
        hyp.update(&BatchAdvantageStats::zero());
        assert!((hyp.current_alpha().unwrap() - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn adaptive_rates_need_an_update() {
        for kind in [RateKind::Cpi, RateKind::Spi, RateKind::Adx] {
            assert!(matches!(state(kind, 0.1).current_alpha(), Err(Error::RateNotReady(_))));
        }
    }

    #[test]
    fn zero_statistics_give_zero_rate() {
        for kind in [RateKind::Cpi, RateKind::Spi, RateKind::Adx] {
            let mut s = state(kind, 1.0);
            for _ in 0..50 {
                s.update(&BatchAdvantageStats::zero());
                assert_eq!(s.current_alpha().unwrap(), 0.0);
            }
        }
    }

    #[test]
    fn collapsed_spread_keeps_spi_above_adx() {
        let stats = BatchAdvantageStats { a_hat_mean: 0.2, a_hat_max: 0.2, a_hat_min: 0.2, q_abs_max: 1.0 };
        let mut spi = state(RateKind::Spi, 0.5);
        let mut adx = state(RateKind::Adx, 0.5);
        spi.update(&stats);
        adx.update(&stats);
        assert_eq!(spi.unclipped_alpha().unwrap(), f64::INFINITY);
        assert_eq!(spi.current_alpha().unwrap(), 1.0);
        assert!(adx.unclipped_alpha().unwrap() <= spi.unclipped_alpha().unwrap());
    }

    #[test]
    fn rate_kind_parses() {
        for kind in RateKind::ALL {
            assert_eq!(kind.to_string().parse::<RateKind>().unwrap(), kind);
        }
        assert!("fast".parse::<RateKind>().is_err());
    }

    #[test]
    fn config_validation() {
        assert!(RateState::new(RateConfig { beta1: 1.0, ..RateConfig::default() }).is_err());
        assert!(RateState::new(RateConfig { alpha0: 0.0, ..RateConfig::default() }).is_err());
    }

    proptest! {
        #[test]
        fn advantages_are_nonnegative(
            q in proptest::collection::vec(-100.0f64..100.0, 12),
            w in proptest::collection::vec(0.0f64..1.0, 12),
        ) {
            let q = Array2::from_shape_vec((4, 3), q).unwrap();
            let mut pi = Array2::from_shape_vec((4, 3), w).unwrap();
            for mut row in pi.rows_mut() {
                let total = row.sum() + 1e-9;
                row.mapv_inplace(|x| x / total);
            }
            let s = batch_stats(q.view(), pi.view()).unwrap();
            prop_assert!(s.a_hat_min >= 0.0);
            prop_assert!(s.a_hat_min <= s.a_hat_mean + 1e-12 && s.a_hat_mean <= s.a_hat_max + 1e-12);
        }

        #[test]
        fn same_stats_same_rates(seq in proptest::collection::vec((0.0f64..1.0, 0.0f64..1.0, 0.0f64..5.0), 1..30)) {
            let run = || {
                let mut s = state(RateKind::Spi, 0.5);
                seq.iter().map(|&(a, b, q)| {
                    let (lo, hi) = if a < b { (a, b) } else { (b, a) };
                    s.update(&BatchAdvantageStats { a_hat_mean: (lo + hi) / 2.0, a_hat_max: hi, a_hat_min: lo, q_abs_max: q });
                    s.current_alpha().unwrap().to_bits()
                }).collect::<Vec<_>>()
            };
            prop_assert!(run() == run());
        }
    }
}
