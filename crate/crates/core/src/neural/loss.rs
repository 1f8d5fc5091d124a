use log::debug;
use ndarray::{Array2, ArrayView2};

use super::mlp::{log_softmax_rows, ForwardPass, Gradients, Head, MlpNet};
use super::Scalar;
use crate::error::{mismatch, Error, Result};

/// Floor applied to the online probability inside the log of the KL loss.
pub const MIN_PROBABILITY: f64 = 1e-8;

/// Mean squared error between `targets` and the q-value of each taken action.
pub fn q_loss_and_grad<F: Scalar>(
    net: &MlpNet<F>,
    states: ArrayView2<F>,
    actions: &[usize],
    targets: &[F],
) -> Result<(F, Gradients<F>)> {
    let pass = net.forward_pass(states)?;
    q_loss_from_pass(net, &pass, actions, targets)
}

/// [`q_loss_and_grad`] on an existing forward pass.
pub fn q_loss_from_pass<F: Scalar>(
    net: &MlpNet<F>,
    pass: &ForwardPass<F>,
    actions: &[usize],
    targets: &[F],
) -> Result<(F, Gradients<F>)> {
    let batch = actions.len();
    if batch == 0 {
        return Err(Error::EmptyBatch);
    }
    if pass.output.nrows() != batch || targets.len() != batch {
        return Err(mismatch(
            format!("{batch} rows and targets"),
            format!("{} rows, {} targets", pass.output.nrows(), targets.len()),
        ));
    }
    let n_actions = pass.output.ncols();
    let scale = F::from_usize(batch).expect("batch fits");
    let two = F::from_f64(2.0).expect("2");
    let mut d_logits = Array2::zeros(pass.output.raw_dim());
    let mut loss = F::zero();
    for (i, (&action, &target)) in actions.iter().zip(targets).enumerate() {
        if action >= n_actions {
            return Err(Error::InvalidAction { action, n_actions });
        }
        let diff = target - pass.output[[i, action]];
        loss += diff * diff;
        d_logits[[i, action]] = -two * diff / scale;
    }
    Ok((loss / scale, net.backward(pass, d_logits)))
}

/// Mean KL divergence `KL(target ‖ π(·|s))` over the batch, with its
/// gradient through the softmax head. Targets are constants.
pub fn pi_loss_and_grad<F: Scalar>(
    net: &MlpNet<F>,
    states: ArrayView2<F>,
    targets: ArrayView2<F>,
) -> Result<(F, Gradients<F>)> {
    let pass = net.forward_pass(states)?;
    pi_loss_from_pass(net, &pass, targets)
}

/// [`pi_loss_and_grad`] on an existing forward pass.
///
/// The gradient with respect to the logits is `(π - target) / B`, the
/// cross-entropy gradient; the target entropy only shifts the loss value.
pub fn pi_loss_from_pass<F: Scalar>(
    net: &MlpNet<F>,
    pass: &ForwardPass<F>,
    targets: ArrayView2<F>,
) -> Result<(F, Gradients<F>)> {
    if net.head() != Head::Softmax {
        return Err(Error::InvalidConfig("policy loss needs a softmax head".into()));
    }
    let batch = targets.nrows();
    if batch == 0 {
        return Err(Error::EmptyBatch);
    }
    if targets.dim() != pass.output.dim() {
        return Err(mismatch(format!("{:?} targets", pass.output.dim()), format!("{:?}", targets.dim())));
    }
    let tol = F::epsilon().sqrt();
    for row in targets.rows() {
        if row.iter().any(|t| *t < F::zero()) || (row.sum() - F::one()).abs() > tol {
            return Err(Error::InvalidDistribution("policy target row".into()));
        }
    }

    let log_floor = F::from_f64(MIN_PROBABILITY.ln()).expect("finite");
    let log_probs = log_softmax_rows(&pass.logits);
    let mut floored = 0usize;
    let mut loss = F::zero();
    for (t_row, lp_row) in targets.rows().into_iter().zip(log_probs.rows()) {
        for (&t, &lp) in t_row.iter().zip(lp_row.iter()) {
            if t > F::zero() {
                let lp = if lp < log_floor {
                    floored += 1;
                    log_floor
                } else {
                    lp
                };
                loss += t * (t.ln() - lp);
            }
        }
    }
    if floored > 0 {
        debug!("policy loss: {floored} log-probabilities floored at ln({MIN_PROBABILITY})");
    }
    let scale = F::from_usize(batch).expect("batch fits");
    let d_logits = (&pass.output - &targets).mapv(|d| d / scale);
    Ok((loss / scale, net.backward(pass, d_logits)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::finite_diff_check;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_batch(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
        Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
    }

    fn random_targets(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
        let mut t = Array2::from_shape_fn((rows, cols), |_| rng.random_range(0.0..1.0));
        for mut row in t.rows_mut() {
            let total = row.sum();
            row.mapv_inplace(|x| x / total);
        }
        t
    }

    #[test]
    fn q_loss_is_zero_at_targets() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = MlpNet::<f64>::new(&[3, 5, 2], Head::Linear, &mut rng).unwrap();
        let states = random_batch(&mut rng, 4, 3);
        let out = net.forward(states.view()).unwrap();
        let actions = [0, 1, 1, 0];
        let targets: Vec<f64> = actions.iter().enumerate().map(|(i, &a)| out[[i, a]]).collect();
        let (loss, grads) = q_loss_and_grad(&net, states.view(), &actions, &targets).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grads.iter().all(|g| g == 0.0));
    }

    #[test]
    fn q_loss_single_transition() {
        let net = MlpNet::<f64>::zeros(&[2, 2], Head::Linear).unwrap();
        let (loss, _) = q_loss_and_grad(&net, array![[1.0, 1.0]].view(), &[1], &[1.0]).unwrap();
        assert_eq!(loss, 1.0);
    }

    #[test]
    fn q_loss_rejects_empty_batch_and_bad_actions() {
        let net = MlpNet::<f64>::zeros(&[2, 2], Head::Linear).unwrap();
        let empty = Array2::<f64>::zeros((0, 2));
        assert!(matches!(q_loss_and_grad(&net, empty.view(), &[], &[]), Err(Error::EmptyBatch)));
        assert!(matches!(
            q_loss_and_grad(&net, array![[0.0, 0.0]].view(), &[2], &[0.0]),
            Err(Error::InvalidAction { .. })
        ));
    }

    #[test]
    fn pi_loss_is_zero_at_own_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = MlpNet::<f64>::new(&[3, 6, 4], Head::Softmax, &mut rng).unwrap();
        let states = random_batch(&mut rng, 5, 3);
        let own = net.forward(states.view()).unwrap();
        let (loss, grads) = pi_loss_and_grad(&net, states.view(), own.view()).unwrap();
        assert!(loss.abs() < 1e-9);
        assert!(grads.iter().all(|g| g.abs() < 1e-12));
    }

    #[test]
    fn pi_loss_one_hot_against_uniform() {
        let net = MlpNet::<f64>::zeros(&[2, 2], Head::Softmax).unwrap();
        let (loss, _) = pi_loss_and_grad(&net, array![[0.3, -0.1]].view(), array![[0.0, 1.0]].view()).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn pi_loss_floors_vanishing_probabilities() {
        let mut net = MlpNet::<f64>::zeros(&[1, 2], Head::Softmax).unwrap();
        net.set_param(2, 100.0);
        let (loss, _) = pi_loss_and_grad(&net, array![[1.0]].view(), array![[0.0, 1.0]].view()).unwrap();
        assert!((loss - -(MIN_PROBABILITY.ln())).abs() < 1e-9);
    }

    #[test]
    fn losses_are_nonnegative() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let q_net = MlpNet::<f64>::new(&[3, 4, 2], Head::Linear, &mut rng).unwrap();
            let pi_net = MlpNet::<f64>::new(&[3, 4, 2], Head::Softmax, &mut rng).unwrap();
            let states = random_batch(&mut rng, 6, 3);
            let targets = random_targets(&mut rng, 6, 2);
            let q_targets: Vec<f64> = (0..6).map(|_| rng.random_range(-2.0..2.0)).collect();
            assert!(q_loss_and_grad(&q_net, states.view(), &[0, 1, 0, 1, 1, 0], &q_targets).unwrap().0 >= 0.0);
            assert!(pi_loss_and_grad(&pi_net, states.view(), targets.view()).unwrap().0 >= -1e-15);
        }
    }

    #[test]
    fn q_gradient_matches_finite_differences() {
        for seed in 0..5 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let net = MlpNet::<f64>::new(&[4, 8, 8, 3], Head::Linear, &mut rng).unwrap();
            let states = random_batch(&mut rng, 6, 4);
            let actions: Vec<usize> = (0..6).map(|_| rng.random_range(0..3)).collect();
            let targets: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
            let err = finite_diff_check(&net, |n| q_loss_and_grad(n, states.view(), &actions, &targets), 1e-5).unwrap();
            assert!(err < 1e-5, "seed {seed}: {err}");
        }
    }

    #[test]
    fn pi_gradient_matches_finite_differences() {
        for seed in 0..5 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let net = MlpNet::<f64>::new(&[4, 8, 3], Head::Softmax, &mut rng).unwrap();
            let states = random_batch(&mut rng, 6, 4);
            let targets = random_targets(&mut rng, 6, 3);
            let err = finite_diff_check(&net, |n| pi_loss_and_grad(n, states.view(), targets.view()), 1e-5).unwrap();
            assert!(err < 1e-5, "seed {seed}: {err}");
        }
    }
}
