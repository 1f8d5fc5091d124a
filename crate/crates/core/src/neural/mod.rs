//! Dense networks with hand-written backpropagation.
//!
//! Only the two loss graphs the agents need are supported: a squared error
//! on the taken action's q-value, and a KL divergence from a target
//! distribution to a softmax head. Networks are generic over `f32` (training)
//! and `f64` (gradient checks).

mod checkpoint;
mod gradcheck;
mod loss;
mod mlp;
mod optim;

use std::fmt::{Debug, Display};
use std::ops::AddAssign;

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

pub use checkpoint::{load_versioned, save_versioned, CHECKPOINT_VERSION};
pub use gradcheck::{
    check_random_losses, finite_diff_check, finite_diff_check_on, relative_error, GradCheckReport, LossCheck,
};
pub use loss::{pi_loss_and_grad, pi_loss_from_pass, q_loss_and_grad, q_loss_from_pass, MIN_PROBABILITY};
pub use mlp::{log_softmax_rows, softmax_rows, Dense, ForwardPass, Gradients, Head, MlpNet};
pub use optim::{OptimizerConfig, OptimizerState};

/// Floating-point element type for networks.
pub trait Scalar:
    LinalgScalar
    + ScalarOperand
    + Float
    + AddAssign
    + FromPrimitive
    + Debug
    + Display
    + Send
    + Sync
    + Serialize
    + DeserializeOwned
{
}

impl<T> Scalar for T where
    T: LinalgScalar
        + ScalarOperand
        + Float
        + AddAssign
        + FromPrimitive
        + Debug
        + Display
        + Send
        + Sync
        + Serialize
        + DeserializeOwned
{
}
