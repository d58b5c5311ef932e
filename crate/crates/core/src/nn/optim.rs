use serde::{Deserialize, Serialize};

use super::real::Real;
use super::spec::Head;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerChoice {
    /// SGD with momentum for two-node heads, Adam for one-node heads.
    #[default]
    Auto,
    SgdMomentum,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub batch_size: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub optimizer: OptimizerChoice,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            batch_size: 16,
            momentum: 0.1,
            weight_decay: 1e-5,
            learning_rate: 5e-4,
            epochs: 200,
            optimizer: OptimizerChoice::Auto,
            seed: 0,
        }
    }
}

impl TrainingConfig {
    pub fn optimizer_for(&self, head: Head) -> OptimizerChoice {
        match (self.optimizer, head) {
            (OptimizerChoice::Auto, Head::TwoNode) => OptimizerChoice::SgdMomentum,
            (OptimizerChoice::Auto, Head::OneNode) => OptimizerChoice::Adam,
            (explicit, _) => explicit,
        }
    }
}

/// Optimizer state, shaped like the parameter tensors it updates.
#[derive(Debug, Clone, PartialEq)]
pub enum Optimizer<T> {
    /// `v <- momentum * v + g + wd * w`, `w <- w - lr * v`.
    Sgd {
        lr: T,
        momentum: T,
        weight_decay: T,
        velocity: Vec<Vec<T>>,
    },
    /// Bias-corrected Adam with an L2 term folded into the gradient.
    Adam {
        lr: T,
        weight_decay: T,
        step: i32,
        first: Vec<Vec<T>>,
        second: Vec<Vec<T>>,
    },
}

fn zeros_like<T: Real>(params: &[Vec<T>]) -> Vec<Vec<T>> {
    params.iter().map(|p| vec![T::zero(); p.len()]).collect()
}

impl<T: Real> Optimizer<T> {
    pub fn sgd(params: &[Vec<T>], lr: f64, momentum: f64, weight_decay: f64) -> Self {
        Optimizer::Sgd {
            lr: T::lit(lr),
            momentum: T::lit(momentum),
            weight_decay: T::lit(weight_decay),
            velocity: zeros_like(params),
        }
    }

    pub fn adam(params: &[Vec<T>], lr: f64, weight_decay: f64) -> Self {
        Optimizer::Adam {
            lr: T::lit(lr),
            weight_decay: T::lit(weight_decay),
            step: 0,
            first: zeros_like(params),
            second: zeros_like(params),
        }
    }

    pub fn for_config(params: &[Vec<T>], config: &TrainingConfig, head: Head) -> Self {
        match config.optimizer_for(head) {
            OptimizerChoice::Adam => Self::adam(params, config.learning_rate, config.weight_decay),
            _ => Self::sgd(params, config.learning_rate, config.momentum, config.weight_decay),
        }
    }

    pub fn step(&mut self, params: &mut [Vec<T>], grads: &[Vec<T>]) {
        assert_eq!(params.len(), grads.len());
        match self {
            Optimizer::Sgd {
                lr,
                momentum,
                weight_decay,
                velocity,
            } => {
                for ((w, g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
                    for ((wi, &gi), vi) in w.iter_mut().zip(g).zip(v.iter_mut()) {
                        *vi = *momentum * *vi + gi + *weight_decay * *wi;
                        *wi = *wi - *lr * *vi;
                    }
                }
            }
            Optimizer::Adam {
                lr,
                weight_decay,
                step,
                first,
                second,
            } => {
                *step += 1;
                let (b1, b2) = (T::lit(ADAM_BETA1), T::lit(ADAM_BETA2));
                let c1 = T::one() - b1.powi(*step);
                let c2 = T::one() - b2.powi(*step);
                let eps = T::lit(ADAM_EPS);
                for (((w, g), m), v) in params
                    .iter_mut()
                    .zip(grads)
                    .zip(first.iter_mut())
                    .zip(second.iter_mut())
                {
                    for (((wi, &gi), mi), vi) in w.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                        let g = gi + *weight_decay * *wi;
                        *mi = b1 * *mi + (T::one() - b1) * g;
                        *vi = b2 * *vi + (T::one() - b2) * g * g;
                        let m_hat = *mi / c1;
                        let v_hat = *vi / c2;
                        *wi = *wi - *lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
        }
    }
}
