//! Sentence encoders: map a sentence to an `n x 2` matrix of per-token
//! emission scores for the CRF (or softmax) head.
//!
//! Two topologies are provided. [`LstmEncoder`] runs each embedding stream
//! through its own LSTM and linear layer, concatenates the stream outputs per
//! token (plus the POS one-hot when enabled), and feeds a larger bidirectional
//! LSTM followed by a final projection. [`TransformerEncoder`] replaces all of
//! that with token+position embeddings and a stack of pre-norm self-attention
//! blocks.

mod lstm;
mod transformer;

pub use lstm::{lstm_cell_step, lstm_sequence, Direction, LstmCellParams, LstmCellVars, LstmDims, LstmEncoder};
pub use transformer::{
    self_attention, AttentionParams, AttentionVars, TransformerDims, TransformerEncoder,
};

use rand::Rng;

use crate::nn::{Graph, Matrix, ParamId, ParamSet, VarId};

/// Weight and bias of one affine layer.
#[derive(Debug, Clone, Copy)]
pub struct LinearParams {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl LinearParams {
    pub fn new(
        params: &mut ParamSet,
        name: &str,
        input_dim: usize,
        output_dim: usize,
        rng: &mut impl Rng,
    ) -> LinearParams {
        LinearParams {
            weight: params.add_glorot(format!("{name}.weight"), input_dim, output_dim, rng),
            bias: params.add(format!("{name}.bias"), Matrix::zeros(1, output_dim)),
        }
    }

    pub fn vars(&self, g: &mut Graph, params: &ParamSet) -> (VarId, VarId) {
        (g.param(params, self.weight), g.param(params, self.bias))
    }
}
