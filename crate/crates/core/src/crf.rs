//! Linear-chain CRF inference layer for the binary label scheme.
//!
//! A lattice is an [`EmissionMatrix`] (per-token, per-label scores from an
//! encoder) plus a [`TransitionMatrix`] (label-to-label scores with explicit
//! start/stop boundary scores). The training loss is the negative
//! log-likelihood: log-partition minus gold-path score, computed by the
//! forward algorithm entirely in the log domain. Decoding is Viterbi.
//!
//! The per-token cross-entropy head over the same emissions is also here; it
//! ignores transitions and decodes by row-wise argmax.

use crate::corpus::{Label, NUM_LABELS};
use crate::nn::{Graph, Matrix, NnError, ParamId, ParamSet, VarId};

/// Label-to-label transition scores plus start/stop boundary scores.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    /// `weights[y_prev][y_cur]`, indexed by [`Label::index`].
    pub weights: Matrix,
    pub start: [f64; NUM_LABELS],
    pub stop: [f64; NUM_LABELS],
}

impl TransitionMatrix {
    pub fn zeros() -> TransitionMatrix {
        TransitionMatrix {
            weights: Matrix::zeros(NUM_LABELS, NUM_LABELS),
            start: [0.0; NUM_LABELS],
            stop: [0.0; NUM_LABELS],
        }
    }

    pub fn new(
        weights: Matrix,
        start: [f64; NUM_LABELS],
        stop: [f64; NUM_LABELS],
    ) -> Result<TransitionMatrix, NnError> {
        if weights.shape() != (NUM_LABELS, NUM_LABELS) {
            return Err(NnError::ShapeMismatch {
                context: "transition matrix".to_string(),
                left: weights.shape(),
                right: (NUM_LABELS, NUM_LABELS),
            });
        }
        if !weights.all_finite() || !start.iter().chain(&stop).all(|x| x.is_finite()) {
            return Err(NnError::InvalidArgument(
                "non-finite transition score".to_string(),
            ));
        }
        Ok(TransitionMatrix {
            weights,
            start,
            stop,
        })
    }
}

/// Per-token, per-label scores: row `i` holds the two label scores for token
/// `i`. Always `n x 2` with `n >= 1` and finite entries.
#[derive(Debug, Clone, PartialEq)]
pub struct EmissionMatrix(Matrix);

impl EmissionMatrix {
    pub fn new(matrix: Matrix) -> Result<EmissionMatrix, NnError> {
        if matrix.rows() == 0 || matrix.cols() != NUM_LABELS {
            return Err(NnError::ShapeMismatch {
                context: "emission matrix".to_string(),
                left: matrix.shape(),
                right: (1, NUM_LABELS),
            });
        }
        if !matrix.all_finite() {
            return Err(NnError::InvalidArgument(
                "non-finite emission score".to_string(),
            ));
        }
        Ok(EmissionMatrix(matrix))
    }

    /// Number of tokens.
    pub fn len(&self) -> usize {
        self.0.rows()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn score(&self, token: usize, label: Label) -> f64 {
        self.0.get(token, label.index())
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }
}

fn check_len(e: &EmissionMatrix, y: &[Label]) -> Result<(), NnError> {
    if e.len() != y.len() {
        return Err(NnError::InvalidArgument(format!(
            "label sequence length {} does not match {} tokens",
            y.len(),
            e.len()
        )));
    }
    Ok(())
}

/// Unnormalized path score: start + transitions + emissions + stop along `y`.
pub fn sequence_score(
    t: &TransitionMatrix,
    e: &EmissionMatrix,
    y: &[Label],
) -> Result<f64, NnError> {
    check_len(e, y)?;
    let mut score = t.start[y[0].index()] + e.score(0, y[0]);
    for i in 1..y.len() {
        score += t.weights.get(y[i - 1].index(), y[i].index()) + e.score(i, y[i]);
    }
    score += t.stop[y[y.len() - 1].index()];
    Ok(score)
}

/// Log of the sum over all `2^n` label sequences of `exp(sequence_score)`,
/// computed by the forward algorithm in the log domain.
pub fn forward_log_partition(t: &TransitionMatrix, e: &EmissionMatrix) -> f64 {
    let n = e.len();
    let mut alpha = [0.0f64; NUM_LABELS];
    for (y, a) in alpha.iter_mut().enumerate() {
        *a = t.start[y] + e.matrix().get(0, y);
    }
    for i in 1..n {
        let mut next = [0.0f64; NUM_LABELS];
        for (y, slot) in next.iter_mut().enumerate() {
            let paths: Vec<f64> = (0..NUM_LABELS)
                .map(|y_prev| alpha[y_prev] + t.weights.get(y_prev, y))
                .collect();
            *slot = crate::nn::log_sum_exp(&paths).expect("non-empty") + e.matrix().get(i, y);
        }
        alpha = next;
    }
    let finals: Vec<f64> = (0..NUM_LABELS).map(|y| alpha[y] + t.stop[y]).collect();
    crate::nn::log_sum_exp(&finals).expect("non-empty")
}

/// CRF negative log-likelihood of the gold sequence: log-partition minus gold
/// path score. Always non-negative.
pub fn crf_negative_log_likelihood(
    t: &TransitionMatrix,
    e: &EmissionMatrix,
    gold: &[Label],
) -> Result<f64, NnError> {
    Ok(forward_log_partition(t, e) - sequence_score(t, e, gold)?)
}

/// Highest-scoring label sequence and its score. Ties break toward the lower
/// label index (`O` before `SHELL`) at every backtracking step.
pub fn viterbi_decode(t: &TransitionMatrix, e: &EmissionMatrix) -> (Vec<Label>, f64) {
    let n = e.len();
    let mut delta = [0.0f64; NUM_LABELS];
    for (y, d) in delta.iter_mut().enumerate() {
        *d = t.start[y] + e.matrix().get(0, y);
    }
    let mut backpointers: Vec<[usize; NUM_LABELS]> = Vec::with_capacity(n);
    for i in 1..n {
        let mut next = [f64::NEG_INFINITY; NUM_LABELS];
        let mut back = [0usize; NUM_LABELS];
        for y in 0..NUM_LABELS {
            for (y_prev, &d) in delta.iter().enumerate() {
                let cand = d + t.weights.get(y_prev, y);
                // strictly greater keeps the lowest previous index on ties
                if cand > next[y] {
                    next[y] = cand;
                    back[y] = y_prev;
                }
            }
            next[y] += e.matrix().get(i, y);
        }
        delta = next;
        backpointers.push(back);
    }
    let mut best_last = 0usize;
    let mut best_score = f64::NEG_INFINITY;
    for (y, d) in delta.iter().enumerate() {
        let total = d + t.stop[y];
        if total > best_score {
            best_score = total;
            best_last = y;
        }
    }
    let mut path_indices = vec![best_last];
    for back in backpointers.iter().rev() {
        let prev = back[*path_indices.last().expect("non-empty path")];
        path_indices.push(prev);
    }
    path_indices.reverse();
    let path = path_indices
        .into_iter()
        .map(|i| Label::from_index(i).expect("valid label index"))
        .collect();
    (path, best_score)
}

/// Mean per-token cross-entropy of the gold labels under row-wise softmax of
/// the emissions.
pub fn token_cross_entropy(e: &EmissionMatrix, gold: &[Label]) -> Result<f64, NnError> {
    check_len(e, gold)?;
    let n = e.len();
    let mut total = 0.0;
    for (i, label) in gold.iter().enumerate() {
        let row = e.matrix().row(i);
        let lse = crate::nn::log_sum_exp(row)?;
        total += lse - row[label.index()];
    }
    Ok(total / n as f64)
}

/// Per-token argmax decoding for the cross-entropy head. Ties break toward
/// the lower label index.
pub fn argmax_decode(e: &EmissionMatrix) -> Vec<Label> {
    (0..e.len())
        .map(|i| {
            let row = e.matrix().row(i);
            let mut best = 0usize;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            Label::from_index(best).expect("valid label index")
        })
        .collect()
}

/// Trainable CRF parameters registered in a [`ParamSet`]: a 2x2 transition
/// matrix plus 1x2 start and stop boundary scores, all zero-initialized.
#[derive(Debug, Clone, Copy)]
pub struct CrfParams {
    pub transitions: ParamId,
    pub start: ParamId,
    pub stop: ParamId,
}

impl CrfParams {
    pub fn new(params: &mut ParamSet, prefix: &str) -> CrfParams {
        CrfParams {
            transitions: params.add(
                format!("{prefix}.transitions"),
                Matrix::zeros(NUM_LABELS, NUM_LABELS),
            ),
            start: params.add(format!("{prefix}.start"), Matrix::zeros(1, NUM_LABELS)),
            stop: params.add(format!("{prefix}.stop"), Matrix::zeros(1, NUM_LABELS)),
        }
    }

    /// Current values as a plain [`TransitionMatrix`] for decoding.
    pub fn extract(&self, params: &ParamSet) -> TransitionMatrix {
        let start_row = params.value(self.start).row(0);
        let stop_row = params.value(self.stop).row(0);
        TransitionMatrix {
            weights: params.value(self.transitions).clone(),
            start: [start_row[0], start_row[1]],
            stop: [stop_row[0], stop_row[1]],
        }
    }

    /// Injects the CRF parameters into a graph.
    pub fn vars(&self, g: &mut Graph, params: &ParamSet) -> CrfVars {
        CrfVars {
            transitions: g.param(params, self.transitions),
            start: g.param(params, self.start),
            stop: g.param(params, self.stop),
        }
    }
}

/// Graph handles for one forward pass over the CRF parameters.
#[derive(Debug, Clone, Copy)]
pub struct CrfVars {
    pub transitions: VarId,
    pub start: VarId,
    pub stop: VarId,
}

/// Differentiable CRF negative log-likelihood over graph-valued emissions
/// (`n x 2`). Gradients flow to the transitions, the boundary scores, and the
/// emissions.
pub fn crf_nll_graph(
    g: &mut Graph,
    crf: &CrfVars,
    emissions: VarId,
    gold: &[Label],
) -> Result<VarId, NnError> {
    let (n, cols) = g.shape(emissions);
    if cols != NUM_LABELS || n == 0 {
        return Err(NnError::ShapeMismatch {
            context: "crf emissions".to_string(),
            left: (n, cols),
            right: (1, NUM_LABELS),
        });
    }
    if gold.len() != n {
        return Err(NnError::InvalidArgument(format!(
            "label sequence length {} does not match {} tokens",
            gold.len(),
            n
        )));
    }

    // log-partition by the forward recursion
    let e0 = g.row(emissions, 0)?;
    let mut alpha = g.add(crf.start, e0)?;
    for i in 1..n {
        let alpha_col = g.transpose(alpha);
        let lattice = g.add_col(crf.transitions, alpha_col)?;
        let reduced = g.log_sum_exp_cols(lattice);
        let ei = g.row(emissions, i)?;
        alpha = g.add(reduced, ei)?;
    }
    let with_stop = g.add(alpha, crf.stop)?;
    let log_partition = g.log_sum_exp_rows(with_stop);

    // gold path score
    let mut score = g.get(crf.start, 0, gold[0].index())?;
    let first_emit = g.get(emissions, 0, gold[0].index())?;
    score = g.add(score, first_emit)?;
    for i in 1..n {
        let trans = g.get(crf.transitions, gold[i - 1].index(), gold[i].index())?;
        let emit = g.get(emissions, i, gold[i].index())?;
        score = g.add(score, trans)?;
        score = g.add(score, emit)?;
    }
    let stop = g.get(crf.stop, 0, gold[n - 1].index())?;
    score = g.add(score, stop)?;

    g.sub(log_partition, score)
}

/// Differentiable total (summed over tokens) cross-entropy of the gold labels
/// under row-wise softmax of graph-valued emissions. Divide by `n` for the
/// per-token mean.
pub fn token_cross_entropy_sum_graph(
    g: &mut Graph,
    emissions: VarId,
    gold: &[Label],
) -> Result<VarId, NnError> {
    let (n, cols) = g.shape(emissions);
    if cols != NUM_LABELS || n == 0 {
        return Err(NnError::ShapeMismatch {
            context: "cross-entropy emissions".to_string(),
            left: (n, cols),
            right: (1, NUM_LABELS),
        });
    }
    if gold.len() != n {
        return Err(NnError::InvalidArgument(format!(
            "label sequence length {} does not match {} tokens",
            gold.len(),
            n
        )));
    }
    let lses = g.log_sum_exp_rows(emissions);
    let lse_total = g.sum_all(lses);
    let mut gold_total = g.get(emissions, 0, gold[0].index())?;
    for (i, label) in gold.iter().enumerate().skip(1) {
        let term = g.get(emissions, i, label.index())?;
        gold_total = g.add(gold_total, term)?;
    }
    g.sub(lse_total, gold_total)
}

/// Differentiable mean per-token cross-entropy.
pub fn token_cross_entropy_graph(
    g: &mut Graph,
    emissions: VarId,
    gold: &[Label],
) -> Result<VarId, NnError> {
    let n = g.shape(emissions).0;
    let total = token_cross_entropy_sum_graph(g, emissions, gold)?;
    Ok(g.scale(total, 1.0 / n as f64))
}
