//! Model assembly and serialization.
//!
//! A [`Model`] bundles an encoder (LSTM or transformer), the CRF parameters,
//! the loss/decoding mode, and everything needed to rebuild it: vocabulary,
//! POS tagset, dimensions, and any static embedding streams.
//!
//! # Archive format
//!
//! Models serialize to a single JSON document:
//!
//! ```json
//! {
//!   "format": "shellnouns-model",
//!   "version": 1,
//!   "config": { ... },
//!   "vocab": ["the", ...],
//!   "pos_tagset": ["DT", ...],
//!   "static_streams": [ {"name", "lowercase", "dim", "vocab", "data", "unk"} ],
//!   "params": [ {"name", "rows", "cols", "data"}, ... ]
//! }
//! ```
//!
//! Parameter entries appear in creation order and `f64` values are written in
//! shortest round-trip decimal form, so save/load is bit-exact and two
//! identical training runs produce byte-identical archives.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Label, Sentence};
use crate::crf::{
    argmax_decode, crf_nll_graph, token_cross_entropy_sum_graph, viterbi_decode, CrfParams,
    EmissionMatrix,
};
use crate::embeddings::{EmbeddingTable, FeatureConfig};
use crate::encoders::{LstmDims, LstmEncoder, TransformerDims, TransformerEncoder};
use crate::nn::{Graph, Matrix, NnError, ParamSet, VarId};

pub const ARCHIVE_FORMAT: &str = "shellnouns-model";
pub const ARCHIVE_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    Lstm,
    Transformer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    /// CRF negative log-likelihood; decoding via Viterbi.
    Crf,
    /// Per-token cross-entropy; decoding via per-token argmax.
    Softmax,
}

/// Structural hyperparameters of a model (everything except the weights).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub arch: Arch,
    pub loss: LossKind,
    pub use_pos: bool,
    /// Dimension of the trainable embedding stream (LSTM architecture).
    pub embed_dim: usize,
    pub lstm: LstmDims,
    pub transformer: TransformerDims,
    /// Inference windowing: sentences longer than this are split into
    /// consecutive windows and decoded per window. The transformer is always
    /// additionally capped by its position-table length.
    pub max_len: Option<usize>,
}

impl Default for ModelConfig {
    fn default() -> ModelConfig {
        ModelConfig {
            arch: Arch::Lstm,
            loss: LossKind::Crf,
            use_pos: false,
            embed_dim: 50,
            lstm: LstmDims::default(),
            transformer: TransformerDims::default(),
            max_len: None,
        }
    }
}

#[derive(Debug, Error)]
pub enum ModelIoError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("archive is not valid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("not a model archive (format {0:?})")]
    BadFormat(String),
    #[error("unsupported archive version {0}")]
    Version(u32),
    #[error("archive is missing parameter {0}")]
    MissingParam(String),
    #[error("archive parameter {name} has shape {found:?}, expected {expected:?}")]
    ParamShape {
        name: String,
        expected: (usize, usize),
        found: (usize, usize),
    },
}

#[derive(Debug, Clone)]
pub enum Encoder {
    Lstm(LstmEncoder),
    Transformer(TransformerEncoder),
}

/// A complete detector: encoder + CRF parameters + configuration.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamSet,
    pub encoder: Encoder,
    pub crf: CrfParams,
    pub vocab: Vec<String>,
    pub pos_tagset: Vec<String>,
}

impl Model {
    /// Builds a freshly initialized model. `static_streams` are prepended to
    /// the trainable embedding stream for the LSTM architecture (the
    /// transformer uses only its own token embeddings).
    pub fn build(
        config: ModelConfig,
        vocab: Vec<String>,
        pos_tagset: Vec<String>,
        static_streams: Vec<EmbeddingTable>,
        rng: &mut impl Rng,
    ) -> Model {
        let mut params = ParamSet::new();
        let encoder = match config.arch {
            Arch::Lstm => {
                let mut streams = static_streams;
                streams.push(EmbeddingTable::trainable(
                    "lstm.embed",
                    vocab.clone(),
                    config.embed_dim,
                    &mut params,
                    rng,
                ));
                let features =
                    FeatureConfig::new(streams, config.use_pos, pos_tagset.clone());
                Encoder::Lstm(LstmEncoder::new(features, config.lstm, &mut params, rng))
            }
            Arch::Transformer => Encoder::Transformer(TransformerEncoder::new(
                vocab.clone(),
                pos_tagset.clone(),
                config.use_pos,
                config.transformer,
                &mut params,
                rng,
            )),
        };
        let crf = CrfParams::new(&mut params, "crf");
        Model {
            config,
            params,
            encoder,
            crf,
            vocab,
            pos_tagset,
        }
    }

    /// Graph-valued emissions (`n x 2`) for one sentence.
    pub fn emissions_graph(
        &self,
        g: &mut Graph,
        sentence: &Sentence,
        training: bool,
        rng: &mut impl Rng,
    ) -> Result<VarId, NnError> {
        match &self.encoder {
            Encoder::Lstm(enc) => enc.emissions_graph(g, &self.params, sentence, training, rng),
            Encoder::Transformer(enc) => {
                enc.emissions_graph(g, &self.params, sentence, training, rng)
            }
        }
    }

    /// Inference-mode emissions as a plain matrix.
    pub fn emissions(&self, sentence: &Sentence) -> Result<EmissionMatrix, NnError> {
        let mut g = Graph::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let e = self.emissions_graph(&mut g, sentence, false, &mut rng)?;
        EmissionMatrix::new(g.value(e).clone())
    }

    /// Per-sentence training loss (summed over tokens, not averaged), so a
    /// batch can be normalized by its total token count.
    pub fn sentence_loss_graph(
        &self,
        g: &mut Graph,
        sentence: &Sentence,
        gold: &[Label],
        rng: &mut impl Rng,
    ) -> Result<VarId, NnError> {
        let emissions = self.emissions_graph(g, sentence, true, rng)?;
        match self.config.loss {
            LossKind::Crf => {
                let crf_vars = self.crf.vars(g, &self.params);
                crf_nll_graph(g, &crf_vars, emissions, gold)
            }
            LossKind::Softmax => token_cross_entropy_sum_graph(g, emissions, gold),
        }
    }

    /// Window size for decoding long sentences: the configured cap, further
    /// limited by the transformer's position table.
    fn decode_window(&self) -> Option<usize> {
        match self.config.arch {
            Arch::Lstm => self.config.max_len,
            Arch::Transformer => {
                let hard = self.config.transformer.max_len;
                Some(self.config.max_len.map_or(hard, |m| m.min(hard)))
            }
        }
    }

    /// Decodes one sentence: Viterbi under the CRF loss, per-token argmax
    /// under the softmax loss. Sentences longer than the decode window are
    /// split into consecutive windows decoded independently.
    pub fn decode(&self, sentence: &Sentence) -> Result<Vec<Label>, NnError> {
        let window = self.decode_window().unwrap_or(usize::MAX).max(1);
        if sentence.len() <= window {
            return self.decode_whole(sentence);
        }
        let mut labels = Vec::with_capacity(sentence.len());
        let mut start = 0;
        while start < sentence.len() {
            let end = (start + window).min(sentence.len());
            let chunk = Sentence::new(sentence.tokens[start..end].to_vec());
            labels.extend(self.decode_whole(&chunk)?);
            start = end;
        }
        Ok(labels)
    }

    fn decode_whole(&self, sentence: &Sentence) -> Result<Vec<Label>, NnError> {
        let emissions = self.emissions(sentence)?;
        Ok(match self.config.loss {
            LossKind::Crf => viterbi_decode(&self.crf.extract(&self.params), &emissions).0,
            LossKind::Softmax => argmax_decode(&emissions),
        })
    }

    pub fn to_json(&self) -> Result<String, ModelIoError> {
        let static_streams = match &self.encoder {
            Encoder::Lstm(enc) => enc
                .features
                .streams
                .iter()
                .filter_map(|s| {
                    s.static_parts().map(|(matrix, unk)| ArchiveStream {
                        name: s.name().to_string(),
                        lowercase: s.lowercase(),
                        dim: s.dim(),
                        vocab: s.vocab().to_vec(),
                        data: matrix.data().to_vec(),
                        unk: unk.to_vec(),
                    })
                })
                .collect(),
            Encoder::Transformer(_) => Vec::new(),
        };
        let archive = ModelArchive {
            format: ARCHIVE_FORMAT.to_string(),
            version: ARCHIVE_VERSION,
            config: self.config.clone(),
            vocab: self.vocab.clone(),
            pos_tagset: self.pos_tagset.clone(),
            static_streams,
            params: self
                .params
                .iter()
                .map(|p| ArchiveParam {
                    name: p.name.clone(),
                    rows: p.value.rows(),
                    cols: p.value.cols(),
                    data: p.value.data().to_vec(),
                })
                .collect(),
        };
        Ok(serde_json::to_string(&archive)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ModelIoError> {
        let path = path.as_ref();
        let json = self.to_json()?;
        fs::write(path, json).map_err(|source| ModelIoError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn from_json(json: &str) -> Result<Model, ModelIoError> {
        let archive: ModelArchive = serde_json::from_str(json)?;
        if archive.format != ARCHIVE_FORMAT {
            return Err(ModelIoError::BadFormat(archive.format));
        }
        if archive.version != ARCHIVE_VERSION {
            return Err(ModelIoError::Version(archive.version));
        }
        let static_streams = archive
            .static_streams
            .into_iter()
            .map(|s| {
                let matrix = Matrix::from_vec(s.vocab.len(), s.dim, s.data);
                EmbeddingTable::from_static_parts(s.name, s.vocab, matrix, s.unk, s.lowercase)
            })
            .collect();
        // rebuild the structure deterministically, then overwrite every
        // parameter from the archive
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut model = Model::build(
            archive.config,
            archive.vocab,
            archive.pos_tagset,
            static_streams,
            &mut rng,
        );
        for entry in &archive.params {
            let id = model
                .params
                .find(&entry.name)
                .ok_or_else(|| ModelIoError::MissingParam(entry.name.clone()))?;
            let expected = model.params.value(id).shape();
            if expected != (entry.rows, entry.cols) {
                return Err(ModelIoError::ParamShape {
                    name: entry.name.clone(),
                    expected,
                    found: (entry.rows, entry.cols),
                });
            }
            model.params.get_mut(id).value =
                Matrix::from_vec(entry.rows, entry.cols, entry.data.clone());
        }
        // every live parameter must have been provided
        for p in model.params.iter() {
            if !archive.params.iter().any(|e| e.name == p.name) {
                return Err(ModelIoError::MissingParam(p.name.clone()));
            }
        }
        Ok(model)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Model, ModelIoError> {
        let path = path.as_ref();
        let json = fs::read_to_string(path).map_err(|source| ModelIoError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Model::from_json(&json)
    }
}

#[derive(Serialize, Deserialize)]
struct ArchiveParam {
    name: String,
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ArchiveStream {
    name: String,
    lowercase: bool,
    dim: usize,
    vocab: Vec<String>,
    data: Vec<f64>,
    unk: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ModelArchive {
    format: String,
    version: u32,
    config: ModelConfig,
    vocab: Vec<String>,
    pos_tagset: Vec<String>,
    static_streams: Vec<ArchiveStream>,
    params: Vec<ArchiveParam>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Token;

    fn sentence(words: &[(&str, &str)]) -> Sentence {
        Sentence::new(
            words
                .iter()
                .map(|(w, p)| Token::new(*w).with_pos(*p))
                .collect(),
        )
    }

    fn small_config(arch: Arch) -> ModelConfig {
        ModelConfig {
            arch,
            loss: LossKind::Crf,
            use_pos: true,
            embed_dim: 6,
            lstm: LstmDims {
                stream_hidden: 4,
                stream_linear: 4,
                combined_hidden: 5,
                dropout: 0.1,
            },
            transformer: TransformerDims {
                layers: 1,
                model_dim: 8,
                heads: 2,
                ff_dim: 10,
                max_len: 16,
                dropout: 0.1,
            },
            max_len: None,
        }
    }

    fn vocab() -> Vec<String> {
        ["the", "fact", "that", "dog", "ran"]
            .iter()
            .map(|s| s.to_string())
            .collect()
    }

    fn tagset() -> Vec<String> {
        ["DT", "IN", "NN", "VBD"].iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn archive_round_trip_is_bit_exact() {
        for arch in [Arch::Lstm, Arch::Transformer] {
            let mut rng = ChaCha8Rng::seed_from_u64(42);
            let static_stream =
                EmbeddingTable::parse("the 0.5 -0.25\nfact 1.0 2.0\n", "glove", true).unwrap();
            let statics = match arch {
                Arch::Lstm => vec![static_stream],
                Arch::Transformer => vec![],
            };
            let model = Model::build(small_config(arch), vocab(), tagset(), statics, &mut rng);
            let json = model.to_json().unwrap();
            let reloaded = Model::from_json(&json).unwrap();
            for (a, b) in model.params.iter().zip(reloaded.params.iter()) {
                assert_eq!(a.name, b.name);
                assert_eq!(a.value, b.value, "parameter {} drifted", a.name);
            }
            // serialization is deterministic
            assert_eq!(json, reloaded.to_json().unwrap());

            // reloaded model decodes identically
            let s = sentence(&[("the", "DT"), ("fact", "NN"), ("ran", "VBD")]);
            assert_eq!(model.decode(&s).unwrap(), reloaded.decode(&s).unwrap());
        }
    }

    #[test]
    fn bad_format_and_version_are_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let model = Model::build(small_config(Arch::Lstm), vocab(), tagset(), vec![], &mut rng);
        let json = model.to_json().unwrap();
        let wrong_format = json.replacen("shellnouns-model", "something-else", 1);
        assert!(matches!(
            Model::from_json(&wrong_format),
            Err(ModelIoError::BadFormat(_))
        ));
        let wrong_version = json.replacen("\"version\":1", "\"version\":99", 1);
        assert!(matches!(
            Model::from_json(&wrong_version),
            Err(ModelIoError::Version(99))
        ));
    }

    #[test]
    fn missing_parameter_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let model = Model::build(small_config(Arch::Lstm), vocab(), tagset(), vec![], &mut rng);
        let json = model.to_json().unwrap();
        let mut archive: serde_json::Value = serde_json::from_str(&json).unwrap();
        let params = archive["params"].as_array_mut().unwrap();
        params.pop();
        let trimmed = serde_json::to_string(&archive).unwrap();
        assert!(matches!(
            Model::from_json(&trimmed),
            Err(ModelIoError::MissingParam(_))
        ));
    }

    #[test]
    fn decoding_routes_by_loss_kind() {
        let s = sentence(&[("the", "DT"), ("fact", "NN"), ("that", "IN"), ("ran", "VBD")]);
        for loss in [LossKind::Crf, LossKind::Softmax] {
            let mut config = small_config(Arch::Lstm);
            config.loss = loss;
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            let mut model = Model::build(config, vocab(), tagset(), vec![], &mut rng);
            // non-trivial transitions so Viterbi and argmax can disagree
            let t_id = model.crf.transitions;
            model.params.get_mut(t_id).value =
                Matrix::from_vec(2, 2, vec![0.4, -0.3, -0.8, 0.9]);
            let emissions = model.emissions(&s).unwrap();
            let expect = match loss {
                LossKind::Crf => {
                    crate::crf::viterbi_decode(&model.crf.extract(&model.params), &emissions).0
                }
                LossKind::Softmax => crate::crf::argmax_decode(&emissions),
            };
            assert_eq!(model.decode(&s).unwrap(), expect);
        }
    }

    #[test]
    fn long_sentences_decode_in_windows() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut config = small_config(Arch::Transformer);
        config.transformer.max_len = 4;
        let model = Model::build(config, vocab(), tagset(), vec![], &mut rng);
        let words: Vec<(&str, &str)> = (0..11).map(|_| ("dog", "NN")).collect();
        let s = sentence(&words);
        let labels = model.decode(&s).unwrap();
        assert_eq!(labels.len(), 11);
    }

    #[test]
    fn lstm_max_len_windowing_matches_chunked_decoding() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut config = small_config(Arch::Lstm);
        config.max_len = Some(3);
        let model = Model::build(config, vocab(), tagset(), vec![], &mut rng);
        let words: Vec<(&str, &str)> = vec![
            ("the", "DT"),
            ("fact", "NN"),
            ("that", "IN"),
            ("dog", "NN"),
            ("ran", "VBD"),
        ];
        let s = sentence(&words);
        let whole = model.decode(&s).unwrap();
        assert_eq!(whole.len(), 5);
        // first window decodes exactly like the standalone prefix
        let prefix = Sentence::new(s.tokens[..3].to_vec());
        assert_eq!(whole[..3], model.decode(&prefix).unwrap()[..]);
    }
}
