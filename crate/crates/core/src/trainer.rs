//! Training loop with early stopping, split evaluation, and shell-noun-type
//! discovery.
//!
//! Training is mini-batch gradient descent (Adam by default) on the
//! configured loss. Sentences are shuffled each epoch with the run seed; all
//! randomness (initialization, shuffling, dropout) flows from that one seed,
//! so identical config+seed+data reproduce bit-identical parameters.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, Label, Sentence};
use crate::embeddings::EmbeddingTable;
use crate::encoders::{LstmDims, TransformerDims};
use crate::metrics::{prf_from_counts, ConfusionCounts, Metrics, MetricsError};
use crate::model::{Arch, LossKind, Model, ModelConfig};
use crate::nn::{Graph, NnError, Optimizer};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("corpus {0:?} is missing gold labels")]
    MissingGold(String),
    #[error("configuration requires POS tags but corpus {0:?} lacks them")]
    MissingPos(String),
    #[error("corpus {0:?} is missing predicted labels")]
    MissingPredictions(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("training diverged at epoch {epoch}, batch {batch}: {source}")]
    Diverged {
        epoch: usize,
        batch: usize,
        #[source]
        source: NnError,
    },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// Hyperparameters for one training run. The eight standard ablation
/// configurations are the cross product of `arch`, `use_pos`, and `loss`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub arch: Arch,
    pub loss: LossKind,
    pub use_pos: bool,
    pub seed: u64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub early_stop_patience: usize,
    pub dropout_rate: f64,
    pub embed_dim: usize,
    pub lstm: LstmDims,
    pub transformer: TransformerDims,
}

impl TrainConfig {
    /// Defaults for an architecture/loss pair. The transformer fine-tunes at
    /// a lower learning rate than the LSTM.
    pub fn new(arch: Arch, loss: LossKind) -> TrainConfig {
        TrainConfig {
            arch,
            loss,
            use_pos: false,
            seed: 42,
            learning_rate: match arch {
                Arch::Lstm => 1e-3,
                Arch::Transformer => 1e-4,
            },
            batch_size: 8,
            max_epochs: 30,
            early_stop_patience: 5,
            dropout_rate: 0.1,
            embed_dim: 50,
            lstm: LstmDims::default(),
            transformer: TransformerDims::default(),
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.learning_rate <= 0.0 {
            return Err(TrainError::Config("learning rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(TrainError::Config(format!(
                "dropout rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        if self.embed_dim == 0 {
            return Err(TrainError::Config("embedding dimension must be positive".into()));
        }
        Ok(())
    }

    fn model_config(&self) -> ModelConfig {
        let mut lstm = self.lstm;
        lstm.dropout = self.dropout_rate;
        let mut transformer = self.transformer;
        transformer.dropout = self.dropout_rate;
        ModelConfig {
            arch: self.arch,
            loss: self.loss,
            use_pos: self.use_pos,
            embed_dim: self.embed_dim,
            lstm,
            transformer,
            max_len: None,
        }
    }
}

/// One line of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_precision: f64,
    pub dev_recall: f64,
    pub dev_f1: f64,
    pub seconds: f64,
}

impl EpochLog {
    /// `epoch, train_loss, dev_P, dev_R, dev_F1, seconds`
    pub fn to_line(&self) -> String {
        format!(
            "{}, {:.6}, {:.2}, {:.2}, {:.2}, {:.2}",
            self.epoch,
            self.train_loss,
            self.dev_precision,
            self.dev_recall,
            self.dev_f1,
            self.seconds
        )
    }
}

/// The trained model plus its training history.
pub struct TrainOutcome {
    pub model: Model,
    pub log: Vec<EpochLog>,
    /// Epoch whose parameters were kept (best dev F1), when dev was evaluated.
    pub best_epoch: Option<usize>,
    /// Per-batch losses of the first epoch (for descent smoke checks).
    pub first_epoch_batch_losses: Vec<f64>,
}

/// Evaluation result on one split.
#[derive(Debug, Clone, Copy)]
pub struct Evaluation {
    pub metrics: Metrics,
    pub counts: ConfusionCounts,
    /// Informational decode throughput.
    pub words_per_second: f64,
}

/// Extracts the vocabulary (first-occurrence order) and sorted POS tagset
/// from a training corpus.
pub fn corpus_vocabulary(corpus: &Corpus) -> (Vec<String>, Vec<String>) {
    let mut vocab = Vec::new();
    let mut seen = HashSet::new();
    let mut tags = BTreeSet::new();
    for token in corpus.tokens() {
        if seen.insert(token.surface.clone()) {
            vocab.push(token.surface.clone());
        }
        if let Some(pos) = &token.pos {
            tags.insert(pos.clone());
        }
    }
    (vocab, tags.into_iter().collect())
}

/// Splits a corpus 80/10/10 by sentence, shuffled with the given seed.
pub fn split_corpus(corpus: &Corpus, seed: u64) -> (Corpus, Corpus, Corpus) {
    let mut indices: Vec<usize> = (0..corpus.sentences.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    indices.shuffle(&mut rng);
    let n = indices.len();
    let n_train = n * 8 / 10;
    let n_dev = n / 10;
    let take = |slice: &[usize]| -> Vec<Sentence> {
        slice.iter().map(|&i| corpus.sentences[i].clone()).collect()
    };
    (
        Corpus::new(format!("{}-train", corpus.name), take(&indices[..n_train])),
        Corpus::new(
            format!("{}-dev", corpus.name),
            take(&indices[n_train..n_train + n_dev]),
        ),
        Corpus::new(
            format!("{}-test", corpus.name),
            take(&indices[n_train + n_dev..]),
        ),
    )
}

/// Trains a model. `static_streams` are extra fixed embedding streams for the
/// LSTM architecture (loaded word-vector files); they may be empty.
///
/// Keeps the parameters of the epoch with the best dev F1 and stops early
/// after `early_stop_patience` epochs without improvement. With
/// `max_epochs = 0` the freshly initialized parameters are returned as-is.
pub fn train(
    config: &TrainConfig,
    train_corpus: &Corpus,
    dev_corpus: &Corpus,
    static_streams: Vec<EmbeddingTable>,
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    if !train_corpus.has_gold_labels() {
        return Err(TrainError::MissingGold(train_corpus.name.clone()));
    }
    if config.use_pos && !train_corpus.has_pos() {
        return Err(TrainError::MissingPos(train_corpus.name.clone()));
    }

    let (vocab, tagset) = corpus_vocabulary(train_corpus);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = Model::build(
        config.model_config(),
        vocab,
        tagset,
        static_streams,
        &mut rng,
    );
    let mut optimizer = Optimizer::adam(config.learning_rate);

    let mut log = Vec::new();
    let mut first_epoch_batch_losses = Vec::new();
    // without a dev split there is nothing to select on: keep final params
    let track_best = !dev_corpus.sentences.is_empty();
    let mut best: Option<(f64, usize, Vec<crate::nn::Matrix>)> = None;
    let mut epochs_since_improvement = 0;

    for epoch in 1..=config.max_epochs {
        let started = Instant::now();
        let mut order: Vec<usize> = (0..train_corpus.sentences.len()).collect();
        order.shuffle(&mut rng);

        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for (batch_idx, batch) in order.chunks(config.batch_size).enumerate() {
            model.params.zero_grads();
            let mut g = Graph::new();
            let mut token_total = 0usize;
            let mut batch_loss = None;
            for &sentence_idx in batch {
                let sentence = &train_corpus.sentences[sentence_idx];
                let gold = sentence
                    .gold_labels()
                    .ok_or_else(|| TrainError::MissingGold(train_corpus.name.clone()))?;
                token_total += sentence.len();
                let loss = model.sentence_loss_graph(&mut g, sentence, &gold, &mut rng)?;
                batch_loss = Some(match batch_loss {
                    None => loss,
                    Some(acc) => g.add(acc, loss)?,
                });
            }
            let total = batch_loss.expect("non-empty batch");
            let scaled = g.scale(total, 1.0 / token_total as f64);
            g.backward(scaled)?;
            g.accumulate_param_grads(&mut model.params);
            optimizer
                .step(&mut model.params)
                .map_err(|source| TrainError::Diverged {
                    epoch,
                    batch: batch_idx,
                    source,
                })?;
            let loss_value = g.value(scaled).scalar();
            if !loss_value.is_finite() {
                return Err(TrainError::Diverged {
                    epoch,
                    batch: batch_idx,
                    source: NnError::InvalidArgument(format!("loss {loss_value}")),
                });
            }
            epoch_loss += loss_value;
            batches += 1;
            if epoch == 1 {
                first_epoch_batch_losses.push(loss_value);
            }
        }

        let train_loss = epoch_loss / batches.max(1) as f64;
        let (dev_p, dev_r, dev_f1) = if dev_corpus.sentences.is_empty() {
            (0.0, 0.0, 0.0)
        } else {
            let eval = evaluate_split(&model, dev_corpus)?;
            (
                eval.metrics.precision,
                eval.metrics.recall,
                eval.metrics.f1,
            )
        };
        log.push(EpochLog {
            epoch,
            train_loss,
            dev_precision: dev_p,
            dev_recall: dev_r,
            dev_f1,
            seconds: started.elapsed().as_secs_f64(),
        });

        if track_best {
            let improved = best.as_ref().is_none_or(|(f1, _, _)| dev_f1 > *f1);
            if improved {
                best = Some((dev_f1, epoch, model.params.snapshot()));
                epochs_since_improvement = 0;
            } else {
                epochs_since_improvement += 1;
                if epochs_since_improvement >= config.early_stop_patience {
                    break;
                }
            }
        }
    }

    let best_epoch = match best {
        Some((_, epoch, snapshot)) => {
            model.params.restore(&snapshot)?;
            Some(epoch)
        }
        None => None,
    };
    Ok(TrainOutcome {
        model,
        log,
        best_epoch,
        first_epoch_batch_losses,
    })
}

/// Tags every sentence of a corpus with the model's predictions. Returns the
/// tagged corpus and the decode throughput in words/second (informational).
pub fn tag_corpus(model: &Model, corpus: &Corpus) -> Result<(Corpus, f64), TrainError> {
    if model.config.use_pos && !corpus.has_pos() {
        return Err(TrainError::MissingPos(corpus.name.clone()));
    }
    let started = Instant::now();
    let mut tagged = corpus.clone();
    let mut words = 0usize;
    for sentence in &mut tagged.sentences {
        let labels = model.decode(sentence)?;
        words += sentence.len();
        for (token, label) in sentence.tokens.iter_mut().zip(labels) {
            token.predicted_label = Some(label);
        }
    }
    let elapsed = started.elapsed().as_secs_f64().max(1e-9);
    Ok((tagged, words as f64 / elapsed))
}

/// Decodes a gold-labeled corpus and scores it.
pub fn evaluate_split(model: &Model, corpus: &Corpus) -> Result<Evaluation, TrainError> {
    if !corpus.has_gold_labels() {
        return Err(TrainError::MissingGold(corpus.name.clone()));
    }
    let (tagged, words_per_second) = tag_corpus(model, corpus)?;
    let counts = ConfusionCounts::from_corpus(&tagged)?;
    Ok(Evaluation {
        metrics: prf_from_counts(&counts),
        counts,
        words_per_second,
    })
}

/// Aggregated shell-noun types discovered in a tagged corpus.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DiscoveryReport {
    /// Normalized type -> occurrence count, sorted by descending count then
    /// alphabetically.
    pub type_frequencies: Vec<(String, u64)>,
    pub total_types: usize,
    /// Types absent from the known lexicon.
    pub new_types: BTreeSet<String>,
}

impl DiscoveryReport {
    pub fn frequency_sum(&self) -> u64 {
        self.type_frequencies.iter().map(|(_, c)| c).sum()
    }

    /// TSV lines `type<TAB>count`, plus totals for the report footer.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (t, c) in &self.type_frequencies {
            out.push_str(&format!("{t}\t{c}\n"));
        }
        out
    }
}

/// Collects tokens predicted SHELL, normalizes them (lowercase, then merge a
/// trailing-`s` form into its singular when the singular also occurs), and
/// diffs the resulting types against a known-noun lexicon.
pub fn discover_shell_types(
    tagged_corpus: &Corpus,
    known_lexicon: &HashSet<String>,
) -> Result<DiscoveryReport, TrainError> {
    let mut raw: HashMap<String, u64> = HashMap::new();
    for token in tagged_corpus.tokens() {
        match token.predicted_label {
            None => return Err(TrainError::MissingPredictions(tagged_corpus.name.clone())),
            Some(Label::Shell) => {
                *raw.entry(token.surface.to_lowercase()).or_insert(0) += 1;
            }
            Some(Label::O) => {}
        }
    }
    // merge plural spellings into the singular when both occur
    let mut merged: HashMap<String, u64> = HashMap::new();
    let mut keys: Vec<String> = raw.keys().cloned().collect();
    keys.sort();
    for key in keys {
        let count = raw[&key];
        let target = match key.strip_suffix('s') {
            Some(singular) if raw.contains_key(singular) => singular.to_string(),
            _ => key,
        };
        *merged.entry(target).or_insert(0) += count;
    }

    let mut type_frequencies: Vec<(String, u64)> = merged.into_iter().collect();
    type_frequencies.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let new_types = type_frequencies
        .iter()
        .map(|(t, _)| t)
        .filter(|t| !known_lexicon.contains(*t))
        .cloned()
        .collect();
    Ok(DiscoveryReport {
        total_types: type_frequencies.len(),
        type_frequencies,
        new_types,
    })
}
