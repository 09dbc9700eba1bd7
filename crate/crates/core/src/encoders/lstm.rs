//! LSTM cells, sequence runners, and the multi-stream LSTM encoder.

use rand::Rng;

use super::LinearParams;
use crate::corpus::{Sentence, NUM_LABELS};
use crate::embeddings::FeatureConfig;
use crate::nn::{Graph, Matrix, NnError, ParamId, ParamSet, VarId};

/// Packed LSTM cell parameters. Gate columns are ordered `[input, forget,
/// cell, output]`, each `hidden_dim` wide; the forget-gate bias starts at 1.
#[derive(Debug, Clone, Copy)]
pub struct LstmCellParams {
    /// `input_dim x 4*hidden_dim`
    pub input_weights: ParamId,
    /// `hidden_dim x 4*hidden_dim`
    pub recurrent_weights: ParamId,
    /// `1 x 4*hidden_dim`
    pub bias: ParamId,
    pub input_dim: usize,
    pub hidden_dim: usize,
}

impl LstmCellParams {
    pub fn new(
        params: &mut ParamSet,
        name: &str,
        input_dim: usize,
        hidden_dim: usize,
        rng: &mut impl Rng,
    ) -> LstmCellParams {
        let input_weights =
            params.add_glorot(format!("{name}.input_weights"), input_dim, 4 * hidden_dim, rng);
        let recurrent_weights = params.add_glorot(
            format!("{name}.recurrent_weights"),
            hidden_dim,
            4 * hidden_dim,
            rng,
        );
        let mut bias = Matrix::zeros(1, 4 * hidden_dim);
        for j in hidden_dim..2 * hidden_dim {
            bias.set(0, j, 1.0);
        }
        let bias = params.add(format!("{name}.bias"), bias);
        LstmCellParams {
            input_weights,
            recurrent_weights,
            bias,
            input_dim,
            hidden_dim,
        }
    }

    pub fn vars(&self, g: &mut Graph, params: &ParamSet) -> LstmCellVars {
        LstmCellVars {
            input_weights: g.param(params, self.input_weights),
            recurrent_weights: g.param(params, self.recurrent_weights),
            bias: g.param(params, self.bias),
            hidden_dim: self.hidden_dim,
        }
    }
}

/// Graph handles for one forward pass over an LSTM cell's parameters.
#[derive(Debug, Clone, Copy)]
pub struct LstmCellVars {
    pub input_weights: VarId,
    pub recurrent_weights: VarId,
    pub bias: VarId,
    pub hidden_dim: usize,
}

/// One LSTM step: `i,f,o = sigmoid(..), g = tanh(..)`,
/// `c = f*c_prev + i*g`, `h = o*tanh(c)`. All vectors are `1 x hidden_dim`.
pub fn lstm_cell_step(
    g: &mut Graph,
    cell: &LstmCellVars,
    x: VarId,
    h_prev: VarId,
    c_prev: VarId,
) -> Result<(VarId, VarId), NnError> {
    let h = cell.hidden_dim;
    let xw = g.matmul(x, cell.input_weights)?;
    let hu = g.matmul(h_prev, cell.recurrent_weights)?;
    let pre = g.add(xw, hu)?;
    let pre = g.add_row(pre, cell.bias)?;

    let i_gate = g.slice_cols(pre, 0, h)?;
    let f_gate = g.slice_cols(pre, h, h)?;
    let g_cell = g.slice_cols(pre, 2 * h, h)?;
    let o_gate = g.slice_cols(pre, 3 * h, h)?;

    let i_gate = g.sigmoid(i_gate);
    let f_gate = g.sigmoid(f_gate);
    let g_cell = g.tanh(g_cell);
    let o_gate = g.sigmoid(o_gate);

    let keep = g.mul(f_gate, c_prev)?;
    let write = g.mul(i_gate, g_cell)?;
    let c = g.add(keep, write)?;
    let c_squashed = g.tanh(c);
    let h_out = g.mul(o_gate, c_squashed)?;
    Ok((h_out, c))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

/// Runs a cell over a sequence from a zero initial state, in the requested
/// direction. Hidden states are returned in original token order either way.
pub fn lstm_sequence(
    g: &mut Graph,
    cell: &LstmCellVars,
    inputs: &[VarId],
    direction: Direction,
) -> Result<Vec<VarId>, NnError> {
    if inputs.is_empty() {
        return Err(NnError::InvalidArgument("empty input sequence".into()));
    }
    let mut h = g.constant(Matrix::zeros(1, cell.hidden_dim));
    let mut c = g.constant(Matrix::zeros(1, cell.hidden_dim));
    let mut states = Vec::with_capacity(inputs.len());
    let order: Vec<usize> = match direction {
        Direction::Forward => (0..inputs.len()).collect(),
        Direction::Backward => (0..inputs.len()).rev().collect(),
    };
    for &idx in &order {
        let (h_new, c_new) = lstm_cell_step(g, cell, inputs[idx], h, c)?;
        h = h_new;
        c = c_new;
        states.push(h_new);
    }
    if direction == Direction::Backward {
        states.reverse();
    }
    Ok(states)
}

/// Hidden-layer sizes for the LSTM encoder.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LstmDims {
    pub stream_hidden: usize,
    pub stream_linear: usize,
    pub combined_hidden: usize,
    pub dropout: f64,
}

impl Default for LstmDims {
    fn default() -> LstmDims {
        LstmDims {
            stream_hidden: 32,
            stream_linear: 32,
            combined_hidden: 64,
            dropout: 0.1,
        }
    }
}

/// Multi-stream LSTM encoder. Each embedding stream feeds its own LSTM and
/// linear layer; per-token outputs are concatenated (with the POS one-hot
/// appended when enabled), passed through dropout, a larger bidirectional
/// LSTM, dropout again, and a final projection to the two label scores.
#[derive(Debug, Clone)]
pub struct LstmEncoder {
    pub features: FeatureConfig,
    pub dims: LstmDims,
    stream_cells: Vec<LstmCellParams>,
    stream_linears: Vec<LinearParams>,
    forward_cell: LstmCellParams,
    backward_cell: LstmCellParams,
    output: LinearParams,
}

impl LstmEncoder {
    pub fn new(
        features: FeatureConfig,
        dims: LstmDims,
        params: &mut ParamSet,
        rng: &mut impl Rng,
    ) -> LstmEncoder {
        let mut stream_cells = Vec::new();
        let mut stream_linears = Vec::new();
        for (idx, stream) in features.streams.iter().enumerate() {
            stream_cells.push(LstmCellParams::new(
                params,
                &format!("lstm.stream{idx}.cell"),
                stream.dim(),
                dims.stream_hidden,
                rng,
            ));
            stream_linears.push(LinearParams::new(
                params,
                &format!("lstm.stream{idx}.linear"),
                dims.stream_hidden,
                dims.stream_linear,
                rng,
            ));
        }
        let combined_input = dims.stream_linear * features.streams.len() + features.pos_onehot_dim();
        let forward_cell = LstmCellParams::new(
            params,
            "lstm.combined.forward",
            combined_input,
            dims.combined_hidden,
            rng,
        );
        let backward_cell = LstmCellParams::new(
            params,
            "lstm.combined.backward",
            combined_input,
            dims.combined_hidden,
            rng,
        );
        let output = LinearParams::new(
            params,
            "lstm.output",
            2 * dims.combined_hidden,
            NUM_LABELS,
            rng,
        );
        LstmEncoder {
            features,
            dims,
            stream_cells,
            stream_linears,
            forward_cell,
            backward_cell,
            output,
        }
    }

    /// Builds the per-token emission scores (`n x 2`) for a sentence.
    /// Dropout is applied only in training mode; inference ignores the RNG.
    pub fn emissions_graph(
        &self,
        g: &mut Graph,
        params: &ParamSet,
        sentence: &Sentence,
        training: bool,
        rng: &mut impl Rng,
    ) -> Result<VarId, NnError> {
        let n = sentence.len();
        if n == 0 {
            return Err(NnError::InvalidArgument("empty sentence".into()));
        }

        // per-stream LSTM + linear, collected per token
        let mut per_token: Vec<Vec<VarId>> = vec![Vec::new(); n];
        for ((stream, cell), linear) in self
            .features
            .streams
            .iter()
            .zip(&self.stream_cells)
            .zip(&self.stream_linears)
        {
            let inputs: Vec<VarId> = sentence
                .tokens
                .iter()
                .map(|t| stream.lookup_var(g, params, &t.surface))
                .collect();
            let cell_vars = cell.vars(g, params);
            let states = lstm_sequence(g, &cell_vars, &inputs, Direction::Forward)?;
            let (w, b) = linear.vars(g, params);
            for (i, state) in states.into_iter().enumerate() {
                let projected = g.linear(state, w, b)?;
                per_token[i].push(projected);
            }
        }

        // concatenate streams (+ POS one-hot), then dropout
        let mut combined = Vec::with_capacity(n);
        for (i, mut parts) in per_token.into_iter().enumerate() {
            if self.features.use_pos {
                let onehot = self
                    .features
                    .pos_onehot(sentence.tokens[i].pos.as_deref());
                parts.push(g.constant(Matrix::row_vector(&onehot)));
            }
            let cat = g.concat_cols(&parts)?;
            combined.push(g.dropout(cat, self.dims.dropout, training, rng)?);
        }

        // larger bidirectional LSTM over the combined features
        let fwd_vars = self.forward_cell.vars(g, params);
        let bwd_vars = self.backward_cell.vars(g, params);
        let forward_states = lstm_sequence(g, &fwd_vars, &combined, Direction::Forward)?;
        let backward_states = lstm_sequence(g, &bwd_vars, &combined, Direction::Backward)?;

        let (out_w, out_b) = self.output.vars(g, params);
        let mut rows = Vec::with_capacity(n);
        for (f, b) in forward_states.into_iter().zip(backward_states) {
            let both = g.concat_cols(&[f, b])?;
            let both = g.dropout(both, self.dims.dropout, training, rng)?;
            rows.push(g.linear(both, out_w, out_b)?);
        }
        g.concat_rows(&rows)
    }
}
