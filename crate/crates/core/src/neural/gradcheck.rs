use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::loss::{pi_loss_and_grad, q_loss_and_grad};
use super::mlp::{Gradients, Head, MlpNet};
use crate::error::{Error, Result};

/// Networks with more parameters than this are checked on a subsample.
const FULL_CHECK_LIMIT: usize = 2000;
const SUBSAMPLE: usize = 256;

/// `|a - n| / (|a| + |n| + 1e-12)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs() + 1e-12)
}

/// Largest relative error between the gradient `loss` reports and central
/// differences of its value, over every parameter (or a fixed random
/// subsample of 256 for large networks).
pub fn finite_diff_check<L>(net: &MlpNet<f64>, loss: L, perturbation: f64) -> Result<f64>
where
    L: Fn(&MlpNet<f64>) -> Result<(f64, Gradients<f64>)>,
{
    Ok(check(net, None, loss, perturbation)?.max_error)
}

/// Outcome of [`finite_diff_check_on`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_error: f64,
    pub checked: usize,
    /// Parameters left out because the `±h` stencil switched a rectifier
    /// on the probe batch, where a central difference does not estimate the
    /// derivative.
    pub skipped_kinks: usize,
}

/// [`finite_diff_check`] for a loss evaluated on the batch `states`,
/// skipping parameters whose stencil crosses a rectifier kink on it.
pub fn finite_diff_check_on<L>(
    net: &MlpNet<f64>,
    states: ArrayView2<f64>,
    loss: L,
    perturbation: f64,
) -> Result<GradCheckReport>
where
    L: Fn(&MlpNet<f64>) -> Result<(f64, Gradients<f64>)>,
{
    check(net, Some(states), loss, perturbation)
}

fn check<L>(net: &MlpNet<f64>, probe: Option<ArrayView2<f64>>, loss: L, perturbation: f64) -> Result<GradCheckReport>
where
    L: Fn(&MlpNet<f64>) -> Result<(f64, Gradients<f64>)>,
{
    if !(1e-6..=1e-4).contains(&perturbation) {
        return Err(Error::InvalidConfig(format!("perturbation {perturbation} outside [1e-6, 1e-4]")));
    }
    let (_, grads) = loss(net)?;
    let analytic: Vec<f64> = grads.iter().collect();
    let count = net.param_count();
    let indices: Vec<usize> = if count <= FULL_CHECK_LIMIT {
        (0..count).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut picked = rand::seq::index::sample(&mut rng, count, SUBSAMPLE).into_vec();
        picked.sort_unstable();
        picked
    };
    let pattern = |n: &MlpNet<f64>| probe.map(|x| n.rectifier_pattern(x)).transpose();
    let base = pattern(net)?;

    let mut probe_net = net.clone();
    let mut report = GradCheckReport { max_error: 0.0, checked: 0, skipped_kinks: 0 };
    for i in indices {
        let original = probe_net.param(i);
        probe_net.set_param(i, original + perturbation);
        let (up, _) = loss(&probe_net)?;
        let up_pattern = pattern(&probe_net)?;
        probe_net.set_param(i, original - perturbation);
        let (down, _) = loss(&probe_net)?;
        let down_pattern = pattern(&probe_net)?;
        probe_net.set_param(i, original);
        if up_pattern != base || down_pattern != base {
            report.skipped_kinks += 1;
            continue;
        }
        let numeric = (up - down) / (2.0 * perturbation);
        report.max_error = report.max_error.max(relative_error(analytic[i], numeric));
        report.checked += 1;
    }
    Ok(report)
}

/// Worst relative errors of the two training losses on one random network
/// pair and batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossCheck {
    pub q_loss: GradCheckReport,
    pub pi_loss: GradCheckReport,
}

/// Builds seeded random q- and policy networks of shape `sizes`, a random
/// batch of `batch` rows with random actions, regression targets and target
/// distributions, and finite-difference checks both losses on that batch.
pub fn check_random_losses(sizes: &[usize], batch: usize, seed: u64, perturbation: f64) -> Result<LossCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let q_net = MlpNet::<f64>::new(sizes, Head::Linear, &mut rng)?;
    let pi_net = MlpNet::<f64>::new(sizes, Head::Softmax, &mut rng)?;
    let (width, n_out) = (q_net.input_width(), q_net.output_width());
    let states = Array2::from_shape_fn((batch, width), |_| rng.random_range(-1.0..1.0));
    let actions: Vec<usize> = (0..batch).map(|_| rng.random_range(0..n_out)).collect();
    let q_targets: Vec<f64> = (0..batch).map(|_| rng.random_range(-2.0..2.0)).collect();
    let mut dists = Array2::from_shape_fn((batch, n_out), |_| rng.random_range(0.0..1.0));
    for mut row in dists.rows_mut() {
        let total = row.sum();
        row.mapv_inplace(|x| x / total);
    }
    Ok(LossCheck {
        q_loss: finite_diff_check_on(
            &q_net,
            states.view(),
            |n| q_loss_and_grad(n, states.view(), &actions, &q_targets),
            perturbation,
        )?,
        pi_loss: finite_diff_check_on(
            &pi_net,
            states.view(),
            |n| pi_loss_and_grad(n, states.view(), dists.view()),
            perturbation,
        )?,
    })
}
