//! Numeric core: matrices, the differentiation graph, optimizers, stable
//! reductions, and gradient checking. Everything is double precision.

mod gradcheck;
mod graph;
mod matrix;
mod optim;
mod params;

pub use gradcheck::{finite_diff_gradcheck, GradcheckReport};
pub use graph::{Graph, VarId};
pub use matrix::Matrix;
pub use optim::{Optimizer, OptimizerKind};
pub use params::{ParamId, ParamSet, Parameter};

use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("{context}: shape mismatch {left:?} vs {right:?}")]
    ShapeMismatch {
        context: String,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("training diverged: non-finite gradient in parameter {0}")]
    NonFiniteGradient(String),
    #[error("gradient check invalid: {0}")]
    CheckInvalid(String),
    #[error("sequence length {length} exceeds maximum {max}")]
    LengthExceeded { length: usize, max: usize },
}

/// Numerically stable softmax: shifts by the maximum before exponentiating.
pub fn softmax(v: &[f64]) -> Result<Vec<f64>, NnError> {
    if v.is_empty() {
        return Err(NnError::InvalidArgument("softmax of empty vector".into()));
    }
    Ok(softmax_slice(v))
}

pub(crate) fn softmax_slice(v: &[f64]) -> Vec<f64> {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = v.iter().map(|&x| (x - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Numerically stable `log(sum(exp(v_i)))`.
pub fn log_sum_exp(v: &[f64]) -> Result<f64, NnError> {
    if v.is_empty() {
        return Err(NnError::InvalidArgument(
            "log_sum_exp of empty vector".into(),
        ));
    }
    Ok(log_sum_exp_slice(v))
}

pub(crate) fn log_sum_exp_slice(v: &[f64]) -> f64 {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let total: f64 = v.iter().map(|&x| (x - max).exp()).sum();
    max + total.ln()
}

/// Value-level inverted dropout: in training mode each entry is zeroed with
/// probability `rate` and survivors scaled by `1/(1-rate)`; otherwise the
/// identity.
pub fn dropout_apply(
    x: &Matrix,
    rate: f64,
    training: bool,
    rng: &mut impl Rng,
) -> Result<Matrix, NnError> {
    if !(0.0..1.0).contains(&rate) {
        return Err(NnError::InvalidArgument(format!(
            "dropout rate {rate} outside [0, 1)"
        )));
    }
    if !training || rate == 0.0 {
        return Ok(x.clone());
    }
    let keep = 1.0 - rate;
    Ok(Matrix::from_fn(x.rows(), x.cols(), |i, j| {
        if rng.gen::<f64>() < rate {
            0.0
        } else {
            x.get(i, j) / keep
        }
    }))
}
