//! SGD and Adam parameter updates.

use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use super::params::ParamSet;
use super::NnError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// Optimizer state: per-parameter moment accumulators are allocated lazily on
/// the first step and must then match the parameter set.
#[derive(Debug, Clone)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step_count: u64,
    first_moments: Vec<Matrix>,
    second_moments: Vec<Matrix>,
}

impl Optimizer {
    pub fn sgd(learning_rate: f64) -> Optimizer {
        assert!(learning_rate > 0.0, "learning rate must be positive");
        Optimizer {
            kind: OptimizerKind::Sgd,
            learning_rate,
            beta1: 0.0,
            beta2: 0.0,
            epsilon: 0.0,
            step_count: 0,
            first_moments: Vec::new(),
            second_moments: Vec::new(),
        }
    }

    pub fn adam(learning_rate: f64) -> Optimizer {
        assert!(learning_rate > 0.0, "learning rate must be positive");
        Optimizer {
            kind: OptimizerKind::Adam,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step_count: 0,
            first_moments: Vec::new(),
            second_moments: Vec::new(),
        }
    }

    /// Applies one update from the accumulated gradients, then zeroes them.
    /// A non-finite gradient aborts with a diverged-training error before any
    /// parameter is touched.
    pub fn step(&mut self, params: &mut ParamSet) -> Result<(), NnError> {
        if let Some(name) = params.first_nonfinite_grad() {
            return Err(NnError::NonFiniteGradient(name.to_string()));
        }
        self.step_count += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for id in params.ids().collect::<Vec<_>>() {
                    let p = params.get_mut(id);
                    let grad = p.grad.clone();
                    p.value.add_scaled(&grad, -self.learning_rate);
                }
            }
            OptimizerKind::Adam => {
                if self.first_moments.is_empty() {
                    self.first_moments = params
                        .iter()
                        .map(|p| Matrix::zeros(p.value.rows(), p.value.cols()))
                        .collect();
                    self.second_moments = self.first_moments.clone();
                }
                assert_eq!(
                    self.first_moments.len(),
                    params.len(),
                    "optimizer state does not match parameter set"
                );
                let bc1 = 1.0 - self.beta1.powi(self.step_count as i32);
                let bc2 = 1.0 - self.beta2.powi(self.step_count as i32);
                for (idx, id) in params.ids().collect::<Vec<_>>().into_iter().enumerate() {
                    let p = params.get_mut(id);
                    let m = &mut self.first_moments[idx];
                    let v = &mut self.second_moments[idx];
                    for k in 0..p.value.len() {
                        let g = p.grad.data()[k];
                        let mk = self.beta1 * m.data()[k] + (1.0 - self.beta1) * g;
                        let vk = self.beta2 * v.data()[k] + (1.0 - self.beta2) * g * g;
                        m.data_mut()[k] = mk;
                        v.data_mut()[k] = vk;
                        let m_hat = mk / bc1;
                        let v_hat = vk / bc2;
                        p.value.data_mut()[k] -=
                            self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
                    }
                }
            }
        }
        params.zero_grads();
        Ok(())
    }
}
