//! SGD and Adam parameter updates.

use alloc::vec;
use alloc::vec::Vec;

use crate::math;
use crate::tensor::Tensor;

/// Optimizer selection. Adam is the default; SGD stays available because
/// plain descent makes loss-decrease arguments directly checkable.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum OptimizerKind {
    Sgd,
    Adam {
        beta1: f64,
        beta2: f64,
        epsilon: f64,
    },
}

impl OptimizerKind {
    pub fn adam_default() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl Default for OptimizerKind {
    fn default() -> Self {
        Self::adam_default()
    }
}

/// Adam moment estimates for one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamSlot {
    pub m: Tensor,
    pub v: Tensor,
    pub step: u64,
}

/// Optimizer state, one slot per parameter (indexed like the model's
/// canonical parameter list). A slot stays empty until its parameter first
/// receives a gradient; parameters without a gradient in a batch are left
/// untouched.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub slots: Vec<Option<AdamSlot>>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, n_params: usize) -> Self {
        Optimizer {
            kind,
            slots: vec![None; n_params],
        }
    }

    /// Apply one update to `param` from `grad` at learning rate `lr`.
    pub fn step(&mut self, index: usize, param: &mut Tensor, grad: &Tensor, lr: f64) {
        debug_assert_eq!(param.shape(), grad.shape());
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in param.data_mut().iter_mut().zip(grad.data()) {
                    *p -= lr * g;
                }
            }
            OptimizerKind::Adam {
                beta1,
                beta2,
                epsilon,
            } => {
                let slot = self.slots[index].get_or_insert_with(|| AdamSlot {
                    m: Tensor::zeros(param.shape().to_vec()),
                    v: Tensor::zeros(param.shape().to_vec()),
                    step: 0,
                });
                slot.step += 1;
                let t = slot.step as i32;
                let bc1 = 1.0 - libm::pow(beta1, t as f64);
                let bc2 = 1.0 - libm::pow(beta2, t as f64);
                for ((p, g), (m, v)) in param
                    .data_mut()
                    .iter_mut()
                    .zip(grad.data())
                    .zip(slot.m.data_mut().iter_mut().zip(slot.v.data_mut()))
                {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    let m_hat = *m / bc1;
                    let v_hat = *v / bc2;
                    *p -= lr * m_hat / (math::sqrt(v_hat) + epsilon);
                }
            }
        }
    }
}
