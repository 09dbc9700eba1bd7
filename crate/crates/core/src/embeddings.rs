//! Per-token feature vectors: static word-vector tables loaded from text
//! files, trainable embedding tables, and the optional POS one-hot feature.
//!
//! Vector file format: UTF-8 text, one entry per line as
//! `word v1 v2 ... vd` with a constant dimension (the common pretrained
//! vector distribution format). Out-of-vocabulary words map to a designated
//! unknown vector, so unseen words never fail.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::Rng;
use thiserror::Error;

use crate::corpus::Token;
use crate::nn::{Graph, Matrix, ParamId, ParamSet, VarId};

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
}

#[derive(Debug, Clone)]
enum TableStorage {
    /// Fixed vectors plus an all-zeros unknown vector.
    Static { matrix: Matrix, unk: Vec<f64> },
    /// Rows live in a [`ParamSet`] parameter; row 0 is the trained unknown
    /// vector, vocabulary entries start at row 1.
    Trainable { param: ParamId },
}

/// A word-to-vector table, either static (loaded) or trainable.
#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    name: String,
    dim: usize,
    lowercase: bool,
    /// Surface form to row index, in insertion order via `vocab`.
    index: HashMap<String, usize>,
    /// Row-ordered vocabulary (used to rebuild `index` and to serialize).
    vocab: Vec<String>,
    storage: TableStorage,
}

impl EmbeddingTable {
    /// Loads a static table from `word v1 ... vd` lines. Duplicate words keep
    /// the first occurrence; the unknown vector is all zeros.
    pub fn load(path: impl AsRef<Path>, lowercase: bool) -> Result<EmbeddingTable, EmbeddingError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| EmbeddingError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text, &path.display().to_string(), lowercase)
    }

    /// Parses the static-table text format; `name` is used in errors.
    pub fn parse(text: &str, name: &str, lowercase: bool) -> Result<EmbeddingTable, EmbeddingError> {
        let mut dim: Option<usize> = None;
        let mut index = HashMap::new();
        let mut vocab = Vec::new();
        let mut rows: Vec<f64> = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            let line_no = idx + 1;
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split_whitespace();
            let word = fields.next().ok_or(EmbeddingError::Format {
                line: line_no,
                message: "missing word".to_string(),
            })?;
            let word = if lowercase {
                word.to_lowercase()
            } else {
                word.to_string()
            };
            let values: Vec<f64> = fields
                .map(|f| {
                    f.parse::<f64>().map_err(|_| EmbeddingError::Format {
                        line: line_no,
                        message: format!("non-numeric field {f:?}"),
                    })
                })
                .collect::<Result<_, _>>()?;
            if values.is_empty() {
                return Err(EmbeddingError::Format {
                    line: line_no,
                    message: "entry has no vector components".to_string(),
                });
            }
            match dim {
                None => dim = Some(values.len()),
                Some(d) if d != values.len() => {
                    return Err(EmbeddingError::Format {
                        line: line_no,
                        message: format!("dimension {} does not match {}", values.len(), d),
                    });
                }
                Some(_) => {}
            }
            if index.contains_key(&word) {
                continue;
            }
            index.insert(word.clone(), vocab.len());
            vocab.push(word);
            rows.extend(values);
        }
        let dim = dim.ok_or(EmbeddingError::Format {
            line: 0,
            message: "no entries".to_string(),
        })?;
        let matrix = Matrix::from_vec(vocab.len(), dim, rows);
        Ok(EmbeddingTable {
            name: name.to_string(),
            dim,
            lowercase,
            index,
            vocab,
            storage: TableStorage::Static {
                matrix,
                unk: vec![0.0; dim],
            },
        })
    }

    /// Builds a static table from parts (used when reloading an archive).
    pub fn from_static_parts(
        name: impl Into<String>,
        vocab: Vec<String>,
        matrix: Matrix,
        unk: Vec<f64>,
        lowercase: bool,
    ) -> EmbeddingTable {
        assert_eq!(matrix.rows(), vocab.len());
        assert_eq!(matrix.cols(), unk.len());
        let index = vocab
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i))
            .collect();
        EmbeddingTable {
            name: name.into(),
            dim: matrix.cols(),
            lowercase,
            index,
            vocab,
            storage: TableStorage::Static { matrix, unk },
        }
    }

    /// Creates a trainable table over the given vocabulary. Row 0 of the
    /// backing parameter is the unknown vector; vocabulary rows follow in
    /// order. Initialization is uniform, scaled by the dimension.
    pub fn trainable(
        name: impl Into<String>,
        vocab: Vec<String>,
        dim: usize,
        params: &mut ParamSet,
        rng: &mut impl Rng,
    ) -> EmbeddingTable {
        let name = name.into();
        let s = (3.0 / dim as f64).sqrt();
        let value = Matrix::from_fn(vocab.len() + 1, dim, |_, _| rng.gen_range(-s..=s));
        let param = params.add(format!("{name}.table"), value);
        let index = vocab
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i + 1))
            .collect();
        EmbeddingTable {
            name,
            dim,
            lowercase: false,
            index,
            vocab,
            storage: TableStorage::Trainable { param },
        }
    }

    /// Rebuilds a trainable table around an existing parameter (archive
    /// reload path).
    pub fn trainable_from_parts(
        name: impl Into<String>,
        vocab: Vec<String>,
        dim: usize,
        param: ParamId,
    ) -> EmbeddingTable {
        let index = vocab
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i + 1))
            .collect();
        EmbeddingTable {
            name: name.into(),
            dim,
            lowercase: false,
            index,
            vocab,
            storage: TableStorage::Trainable { param },
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lowercase(&self) -> bool {
        self.lowercase
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn len(&self) -> usize {
        self.vocab.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vocab.is_empty()
    }

    pub fn is_trainable(&self) -> bool {
        matches!(self.storage, TableStorage::Trainable { .. })
    }

    pub fn param(&self) -> Option<ParamId> {
        match self.storage {
            TableStorage::Trainable { param } => Some(param),
            TableStorage::Static { .. } => None,
        }
    }

    /// Static matrix and unknown vector, when this table is static.
    pub fn static_parts(&self) -> Option<(&Matrix, &[f64])> {
        match &self.storage {
            TableStorage::Static { matrix, unk } => Some((matrix, unk)),
            TableStorage::Trainable { .. } => None,
        }
    }

    fn key(&self, surface: &str) -> String {
        if self.lowercase {
            surface.to_lowercase()
        } else {
            surface.to_string()
        }
    }

    /// Current vector for a surface form; unknown words get the unknown
    /// vector. For trainable tables the values come from the parameter set.
    pub fn lookup(&self, params: &ParamSet, surface: &str) -> Vec<f64> {
        let key = self.key(surface);
        match &self.storage {
            TableStorage::Static { matrix, unk } => match self.index.get(&key) {
                Some(&row) => matrix.row(row).to_vec(),
                None => unk.clone(),
            },
            TableStorage::Trainable { param } => {
                let row = self.index.get(&key).copied().unwrap_or(0);
                params.value(*param).row(row).to_vec()
            }
        }
    }

    /// Graph-valued lookup (`1 x dim`). For trainable tables the returned
    /// node is bound to exactly the looked-up row, so gradient flows only
    /// there; static tables produce constants.
    pub fn lookup_var(&self, g: &mut Graph, params: &ParamSet, surface: &str) -> VarId {
        let key = self.key(surface);
        match &self.storage {
            TableStorage::Static { matrix, unk } => {
                let values = match self.index.get(&key) {
                    Some(&row) => matrix.row(row).to_vec(),
                    None => unk.clone(),
                };
                g.constant(Matrix::row_vector(&values))
            }
            TableStorage::Trainable { param } => {
                let row = self.index.get(&key).copied().unwrap_or(0);
                g.param_row(params, *param, row)
            }
        }
    }
}

/// Which feature streams feed the encoder, plus the optional POS one-hot.
#[derive(Debug, Clone)]
pub struct FeatureConfig {
    pub streams: Vec<EmbeddingTable>,
    pub use_pos: bool,
    /// Ordered tagset; the one-hot has `pos_tagset.len() + 1` slots, the last
    /// being the reserved unknown-POS slot.
    pub pos_tagset: Vec<String>,
}

impl FeatureConfig {
    pub fn new(
        streams: Vec<EmbeddingTable>,
        use_pos: bool,
        pos_tagset: Vec<String>,
    ) -> FeatureConfig {
        assert!(!streams.is_empty(), "at least one embedding stream required");
        FeatureConfig {
            streams,
            use_pos,
            pos_tagset,
        }
    }

    pub fn pos_onehot_dim(&self) -> usize {
        if self.use_pos {
            self.pos_tagset.len() + 1
        } else {
            0
        }
    }

    /// Total feature dimension: sum of stream dimensions plus the POS one-hot.
    pub fn total_dim(&self) -> usize {
        self.streams.iter().map(EmbeddingTable::dim).sum::<usize>() + self.pos_onehot_dim()
    }

    /// One-hot encoding of a POS tag over the tagset plus the unknown slot.
    pub fn pos_onehot(&self, pos: Option<&str>) -> Vec<f64> {
        let mut v = vec![0.0; self.pos_tagset.len() + 1];
        let slot = pos
            .and_then(|p| self.pos_tagset.iter().position(|t| t == p))
            .unwrap_or(self.pos_tagset.len());
        v[slot] = 1.0;
        v
    }

    /// Concatenates every stream's lookup and then the POS one-hot (when
    /// enabled). Output length equals [`FeatureConfig::total_dim`].
    pub fn build_feature_vector(&self, params: &ParamSet, token: &Token) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.total_dim());
        for stream in &self.streams {
            out.extend(stream.lookup(params, &token.surface));
        }
        if self.use_pos {
            out.extend(self.pos_onehot(token.pos.as_deref()));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::finite_diff_gradcheck;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn load_simple_table_and_look_up() {
        let table = EmbeddingTable::parse("cat 1.0 0.0\n", "t", false).unwrap();
        assert_eq!(table.dim(), 2);
        let params = ParamSet::new();
        assert_eq!(table.lookup(&params, "cat"), vec![1.0, 0.0]);
    }

    #[test]
    fn unknown_word_maps_to_zero_unk_vector() {
        let table = EmbeddingTable::parse("cat 1.0 0.0\n", "t", false).unwrap();
        let params = ParamSet::new();
        assert_eq!(table.lookup(&params, "dog"), vec![0.0, 0.0]);
    }

    #[test]
    fn inconsistent_dimension_errors_with_line() {
        let err = EmbeddingTable::parse("cat 1.0 0.0\ndog 1.0 2.0 3.0\n", "t", false).unwrap_err();
        match err {
            EmbeddingError::Format { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn non_numeric_field_is_a_format_error() {
        let err = EmbeddingTable::parse("cat 1.0 oops\n", "t", false).unwrap_err();
        assert!(matches!(err, EmbeddingError::Format { line: 1, .. }));
    }

    #[test]
    fn duplicates_keep_first_occurrence() {
        let table = EmbeddingTable::parse("cat 1.0 0.0\ncat 9.0 9.0\n", "t", false).unwrap();
        let params = ParamSet::new();
        assert_eq!(table.lookup(&params, "cat"), vec![1.0, 0.0]);
        assert_eq!(table.len(), 1);
    }

    #[test]
    fn lowercasing_applies_to_keys_and_queries() {
        let table = EmbeddingTable::parse("Cat 1.0 0.0\n", "t", true).unwrap();
        let params = ParamSet::new();
        assert_eq!(table.lookup(&params, "CAT"), vec![1.0, 0.0]);
        assert_eq!(table.lookup(&params, "cat"), vec![1.0, 0.0]);
    }

    #[test]
    fn trainable_lookup_gradient_flows_to_exactly_one_row() {
        let mut params = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let table = EmbeddingTable::trainable(
            "emb",
            vec!["cat".to_string(), "dog".to_string()],
            3,
            &mut params,
            &mut rng,
        );
        let pid = table.param().unwrap();
        {
            let mut g = Graph::new();
            let v = table.lookup_var(&mut g, &params, "dog");
            let s = g.sum_all(v);
            let sq = g.mul(s, s).unwrap();
            g.backward(sq).unwrap();
            g.accumulate_param_grads(&mut params);
        }
        // rows: 0 = unk, 1 = cat, 2 = dog; only dog's row may be nonzero
        let grad = params.grad(pid);
        assert!(grad.row(0).iter().all(|&x| x == 0.0));
        assert!(grad.row(1).iter().all(|&x| x == 0.0));
        assert!(grad.row(2).iter().any(|&x| x != 0.0));

        let report = finite_diff_gradcheck(
            &mut params,
            |p| {
                let mut g = Graph::new();
                let v = table.lookup_var(&mut g, p, "dog");
                let s = g.sum_all(v);
                let sq = g.mul(s, s).unwrap();
                g.value(sq).scalar()
            },
            1e-4,
            None,
            &mut rng,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-7, "{}", report.max_rel_error);
    }

    #[test]
    fn unknown_word_hits_trainable_unk_row() {
        let mut params = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let table =
            EmbeddingTable::trainable("emb", vec!["cat".to_string()], 2, &mut params, &mut rng);
        let pid = table.param().unwrap();
        let unk = table.lookup(&params, "zebra");
        assert_eq!(unk, params.value(pid).row(0).to_vec());
        assert!(unk.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn feature_vector_without_pos_has_stream_length() {
        let table = EmbeddingTable::parse("cat 1.0 0.0\n", "t", false).unwrap();
        let config = FeatureConfig::new(vec![table], false, vec![]);
        let params = ParamSet::new();
        let token = Token::new("cat").with_pos("NN");
        assert_eq!(config.build_feature_vector(&params, &token).len(), 2);
    }

    #[test]
    fn pos_onehot_is_placed_after_streams() {
        let table = EmbeddingTable::parse("cat 1.0 0.5\n", "t", false).unwrap();
        let tagset = vec!["DT".to_string(), "NN".to_string(), "VB".to_string()];
        let config = FeatureConfig::new(vec![table], true, tagset);
        let params = ParamSet::new();
        let token = Token::new("cat").with_pos("NN");
        let v = config.build_feature_vector(&params, &token);
        assert_eq!(v.len(), 6);
        assert_eq!(v[..2], [1.0, 0.5]);
        // second tag of the set is hot: position 2 (streams) + 1
        assert_eq!(v[2..], [0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn unknown_pos_maps_to_reserved_slot() {
        let table = EmbeddingTable::parse("cat 1.0 0.5\n", "t", false).unwrap();
        let tagset = vec!["DT".to_string(), "NN".to_string()];
        let config = FeatureConfig::new(vec![table], true, tagset);
        let params = ParamSet::new();
        let token = Token::new("cat").with_pos("XYZ");
        let v = config.build_feature_vector(&params, &token);
        assert_eq!(v[2..], [0.0, 0.0, 1.0]);
        let no_pos = Token::new("cat");
        let v2 = config.build_feature_vector(&params, &no_pos);
        assert_eq!(v2[2..], [0.0, 0.0, 1.0]);
    }

    #[test]
    fn three_streams_concatenate_in_declared_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut params = ParamSet::new();
        let a = EmbeddingTable::parse("w 1 2 3 4\n", "a", false).unwrap();
        let b = EmbeddingTable::parse("w 5 6 7\n", "b", false).unwrap();
        let c = EmbeddingTable::trainable("c", vec!["w".to_string()], 3, &mut params, &mut rng);
        let expect_c = c.lookup(&params, "w");
        let config = FeatureConfig::new(vec![a, b, c], false, vec![]);
        let token = Token::new("w");
        let v = config.build_feature_vector(&params, &token);
        assert_eq!(v.len(), 10);
        assert_eq!(v[..4], [1.0, 2.0, 3.0, 4.0]);
        assert_eq!(v[4..7], [5.0, 6.0, 7.0]);
        assert_eq!(v[7..], expect_c[..]);
    }

    #[test]
    fn feature_vector_ignores_pos_when_disabled() {
        let table = EmbeddingTable::parse("cat 1.0 0.0\n", "t", false).unwrap();
        let config = FeatureConfig::new(vec![table], false, vec!["NN".to_string()]);
        let params = ParamSet::new();
        let with_pos = Token::new("cat").with_pos("NN");
        let without = Token::new("cat");
        assert_eq!(
            config.build_feature_vector(&params, &with_pos),
            config.build_feature_vector(&params, &without)
        );
    }
}
