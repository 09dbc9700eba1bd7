//! Toy-scale transformer encoder: token + learned position embeddings and a
//! stack of pre-norm residual blocks with multi-head self-attention. Weights
//! are always randomly initialized; no pretrained checkpoints are loaded.

use rand::Rng;

use super::LinearParams;
use crate::corpus::{Sentence, NUM_LABELS};
use crate::embeddings::EmbeddingTable;
use crate::nn::{Graph, Matrix, NnError, ParamId, ParamSet, VarId};

/// Hyperparameters for the transformer encoder.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TransformerDims {
    pub layers: usize,
    pub model_dim: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub max_len: usize,
    pub dropout: f64,
}

impl Default for TransformerDims {
    fn default() -> TransformerDims {
        TransformerDims {
            layers: 2,
            model_dim: 64,
            heads: 4,
            ff_dim: 128,
            max_len: 256,
            dropout: 0.1,
        }
    }
}

/// Query/key/value/output projections of one attention block.
#[derive(Debug, Clone, Copy)]
pub struct AttentionParams {
    pub query: LinearParams,
    pub key: LinearParams,
    pub value: LinearParams,
    pub output: LinearParams,
    pub heads: usize,
}

impl AttentionParams {
    pub fn new(
        params: &mut ParamSet,
        name: &str,
        model_dim: usize,
        heads: usize,
        rng: &mut impl Rng,
    ) -> AttentionParams {
        assert!(
            model_dim.is_multiple_of(heads),
            "model dimension {model_dim} not divisible by {heads} heads"
        );
        AttentionParams {
            query: LinearParams::new(params, &format!("{name}.query"), model_dim, model_dim, rng),
            key: LinearParams::new(params, &format!("{name}.key"), model_dim, model_dim, rng),
            value: LinearParams::new(params, &format!("{name}.value"), model_dim, model_dim, rng),
            output: LinearParams::new(params, &format!("{name}.output"), model_dim, model_dim, rng),
            heads,
        }
    }

    pub fn vars(&self, g: &mut Graph, params: &ParamSet) -> AttentionVars {
        AttentionVars {
            query: self.query.vars(g, params),
            key: self.key.vars(g, params),
            value: self.value.vars(g, params),
            output: self.output.vars(g, params),
            heads: self.heads,
        }
    }
}

/// Graph handles for one forward pass over an attention block.
#[derive(Debug, Clone, Copy)]
pub struct AttentionVars {
    pub query: (VarId, VarId),
    pub key: (VarId, VarId),
    pub value: (VarId, VarId),
    pub output: (VarId, VarId),
    pub heads: usize,
}

/// Scaled dot-product self-attention over `x` (`n x d`): per head,
/// `softmax(Q Kᵀ / sqrt(d_k)) V`; heads are concatenated and output-projected.
pub fn self_attention(g: &mut Graph, attn: &AttentionVars, x: VarId) -> Result<VarId, NnError> {
    let (_, d) = g.shape(x);
    if d % attn.heads != 0 {
        return Err(NnError::InvalidArgument(format!(
            "model dimension {d} not divisible by {} heads",
            attn.heads
        )));
    }
    let head_dim = d / attn.heads;
    let q = g.linear(x, attn.query.0, attn.query.1)?;
    let k = g.linear(x, attn.key.0, attn.key.1)?;
    let v = g.linear(x, attn.value.0, attn.value.1)?;

    let mut heads = Vec::with_capacity(attn.heads);
    for h in 0..attn.heads {
        let qh = g.slice_cols(q, h * head_dim, head_dim)?;
        let kh = g.slice_cols(k, h * head_dim, head_dim)?;
        let vh = g.slice_cols(v, h * head_dim, head_dim)?;
        let kt = g.transpose(kh);
        let scores = g.matmul(qh, kt)?;
        let scaled = g.scale(scores, 1.0 / (head_dim as f64).sqrt());
        let weights = g.softmax_rows(scaled);
        heads.push(g.matmul(weights, vh)?);
    }
    let concat = g.concat_cols(&heads)?;
    g.linear(concat, attn.output.0, attn.output.1)
}

#[derive(Debug, Clone)]
struct TransformerLayer {
    norm1_gain: ParamId,
    norm1_bias: ParamId,
    attention: AttentionParams,
    norm2_gain: ParamId,
    norm2_bias: ParamId,
    ff_inner: LinearParams,
    ff_outer: LinearParams,
}

/// Transformer token classifier producing `n x 2` emissions.
#[derive(Debug, Clone)]
pub struct TransformerEncoder {
    pub dims: TransformerDims,
    pub use_pos: bool,
    pub pos_tagset: Vec<String>,
    token_table: EmbeddingTable,
    positions: ParamId,
    pos_projection: Option<LinearParams>,
    layers: Vec<TransformerLayer>,
    output: LinearParams,
}

impl TransformerEncoder {
    pub fn new(
        vocab: Vec<String>,
        pos_tagset: Vec<String>,
        use_pos: bool,
        dims: TransformerDims,
        params: &mut ParamSet,
        rng: &mut impl Rng,
    ) -> TransformerEncoder {
        let token_table =
            EmbeddingTable::trainable("transformer.tokens", vocab, dims.model_dim, params, rng);
        let positions = params.add_glorot(
            "transformer.positions",
            dims.max_len,
            dims.model_dim,
            rng,
        );
        let pos_projection = use_pos.then(|| {
            LinearParams::new(
                params,
                "transformer.pos_projection",
                pos_tagset.len() + 1,
                dims.model_dim,
                rng,
            )
        });
        let layers = (0..dims.layers)
            .map(|l| {
                let prefix = format!("transformer.layer{l}");
                TransformerLayer {
                    norm1_gain: params
                        .add(format!("{prefix}.norm1.gain"), Matrix::filled(1, dims.model_dim, 1.0)),
                    norm1_bias: params
                        .add(format!("{prefix}.norm1.bias"), Matrix::zeros(1, dims.model_dim)),
                    attention: AttentionParams::new(
                        params,
                        &format!("{prefix}.attention"),
                        dims.model_dim,
                        dims.heads,
                        rng,
                    ),
                    norm2_gain: params
                        .add(format!("{prefix}.norm2.gain"), Matrix::filled(1, dims.model_dim, 1.0)),
                    norm2_bias: params
                        .add(format!("{prefix}.norm2.bias"), Matrix::zeros(1, dims.model_dim)),
                    ff_inner: LinearParams::new(
                        params,
                        &format!("{prefix}.ff_inner"),
                        dims.model_dim,
                        dims.ff_dim,
                        rng,
                    ),
                    ff_outer: LinearParams::new(
                        params,
                        &format!("{prefix}.ff_outer"),
                        dims.ff_dim,
                        dims.model_dim,
                        rng,
                    ),
                }
            })
            .collect();
        let output = LinearParams::new(params, "transformer.output", dims.model_dim, NUM_LABELS, rng);
        TransformerEncoder {
            dims,
            use_pos,
            pos_tagset,
            token_table,
            positions,
            pos_projection,
            layers,
            output,
        }
    }

    pub fn token_table(&self) -> &EmbeddingTable {
        &self.token_table
    }

    fn pos_onehot(&self, pos: Option<&str>) -> Vec<f64> {
        let mut v = vec![0.0; self.pos_tagset.len() + 1];
        let slot = pos
            .and_then(|p| self.pos_tagset.iter().position(|t| t == p))
            .unwrap_or(self.pos_tagset.len());
        v[slot] = 1.0;
        v
    }

    /// Builds the per-token emission scores (`n x 2`) for a sentence.
    /// Sentences longer than the position table are rejected.
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
        if n > self.dims.max_len {
            return Err(NnError::LengthExceeded {
                length: n,
                max: self.dims.max_len,
            });
        }

        let pos_proj_vars = self
            .pos_projection
            .as_ref()
            .map(|p| p.vars(g, params));
        let mut rows = Vec::with_capacity(n);
        for (i, token) in sentence.tokens.iter().enumerate() {
            let tok = self.token_table.lookup_var(g, params, &token.surface);
            let pos_emb = g.param_row(params, self.positions, i);
            let mut row = g.add(tok, pos_emb)?;
            if let Some((w, b)) = pos_proj_vars {
                let onehot = self.pos_onehot(token.pos.as_deref());
                let onehot = g.constant(Matrix::row_vector(&onehot));
                let projected = g.linear(onehot, w, b)?;
                row = g.add(row, projected)?;
            }
            rows.push(row);
        }
        let mut x = g.concat_rows(&rows)?;
        x = g.dropout(x, self.dims.dropout, training, rng)?;

        for layer in &self.layers {
            let norm1_gain = g.param(params, layer.norm1_gain);
            let norm1_bias = g.param(params, layer.norm1_bias);
            let normed = g.layer_norm_rows(x, norm1_gain, norm1_bias)?;
            let attn_vars = layer.attention.vars(g, params);
            let attended = self_attention(g, &attn_vars, normed)?;
            let attended = g.dropout(attended, self.dims.dropout, training, rng)?;
            x = g.add(x, attended)?;

            let norm2_gain = g.param(params, layer.norm2_gain);
            let norm2_bias = g.param(params, layer.norm2_bias);
            let normed = g.layer_norm_rows(x, norm2_gain, norm2_bias)?;
            let (w1, b1) = layer.ff_inner.vars(g, params);
            let (w2, b2) = layer.ff_outer.vars(g, params);
            let inner = g.linear(normed, w1, b1)?;
            let activated = g.relu(inner);
            let ff = g.linear(activated, w2, b2)?;
            let ff = g.dropout(ff, self.dims.dropout, training, rng)?;
            x = g.add(x, ff)?;
        }

        let (out_w, out_b) = self.output.vars(g, params);
        g.linear(x, out_w, out_b)
    }

    /// Zeroes the final projection (test hook).
    #[cfg(test)]
    fn zero_output(&self, params: &mut ParamSet) {
        params.get_mut(self.output.weight).value.fill(0.0);
        params.get_mut(self.output.bias).value.fill(0.0);
    }
}
