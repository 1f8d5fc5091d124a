use ndarray::Zip;
use serde::{Deserialize, Serialize};

use super::mlp::{Gradients, MlpNet};
use super::Scalar;
use crate::error::{mismatch, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerConfig {
    Sgd { lr: f64 },
    Adam { lr: f64, beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerConfig {
    pub fn adam(lr: f64) -> Self {
        OptimizerConfig::Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            OptimizerConfig::Sgd { lr } => lr > 0.0,
            OptimizerConfig::Adam { lr, beta1, beta2, eps } => {
                lr > 0.0 && (0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && eps > 0.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("optimizer {self:?}")))
        }
    }
}

/// Optimizer moments and step count for one network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct OptimizerState<F> {
    config: OptimizerConfig,
    steps: u64,
    /// Adam first and second moments; empty for SGD.
    moments: Option<(Gradients<F>, Gradients<F>)>,
}

impl<F: Scalar> OptimizerState<F> {
    pub fn new(config: OptimizerConfig, net: &MlpNet<F>) -> Result<Self> {
        config.validate()?;
        let moments = match config {
            OptimizerConfig::Sgd { .. } => None,
            OptimizerConfig::Adam { .. } => Some((Gradients::zeros_like(net), Gradients::zeros_like(net))),
        };
        Ok(Self { config, steps: 0, moments })
    }

    pub fn config(&self) -> OptimizerConfig {
        self.config
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Applies one descent step to `net`.
    pub fn step(&mut self, net: &mut MlpNet<F>, grads: &Gradients<F>) -> Result<()> {
        if !grads.same_shape(net) {
            return Err(mismatch(format!("gradients shaped like {:?}", net.sizes()), "other shapes"));
        }
        if let Some((first, _)) = &self.moments {
            if !first.same_shape(net) {
                return Err(mismatch("optimizer state for this network", "state of another shape"));
            }
        }
        self.steps += 1;
        let cast = |x: f64| F::from_f64(x).expect("finite");
        match (self.config, &mut self.moments) {
            (OptimizerConfig::Sgd { lr }, _) => {
                let lr = cast(lr);
                for (layer, g) in net.layers_mut().iter_mut().zip(&grads.layers) {
                    Zip::from(&mut layer.weight).and(&g.weight).for_each(|w, &g| *w = *w - lr * g);
                    Zip::from(&mut layer.bias).and(&g.bias).for_each(|w, &g| *w = *w - lr * g);
                }
            }
            (OptimizerConfig::Adam { lr, beta1, beta2, eps }, Some((first, second))) => {
                let t = self.steps as i32;
                let (lr, eps) = (cast(lr), cast(eps));
                let (b1, b2) = (cast(beta1), cast(beta2));
                let bc1 = cast(1.0 - beta1.powi(t));
                let bc2 = cast(1.0 - beta2.powi(t));
                let update = |w: &mut F, m: &mut F, v: &mut F, g: F| {
                    *m = b1 * *m + (F::one() - b1) * g;
                    *v = b2 * *v + (F::one() - b2) * g * g;
                    *w = *w - lr * (*m / bc1) / ((*v / bc2).sqrt() + eps);
                };
                let layers = net.layers_mut().iter_mut().zip(&grads.layers);
                for (((layer, g), m), v) in layers.zip(&mut first.layers).zip(&mut second.layers) {
                    Zip::from(&mut layer.weight)
                        .and(&mut m.weight)
                        .and(&mut v.weight)
                        .and(&g.weight)
                        .for_each(|w, m, v, &g| update(w, m, v, g));
                    Zip::from(&mut layer.bias)
                        .and(&mut m.bias)
                        .and(&mut v.bias)
                        .and(&g.bias)
                        .for_each(|w, m, v, &g| update(w, m, v, g));
                }
            }
            (OptimizerConfig::Adam { .. }, None) => unreachable!("adam state always carries moments"),
        }
        Ok(())
    }
}
