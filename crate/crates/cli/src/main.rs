//! `shellnouns` — detect shell nouns in English text.
//!
//! Subcommands: `train`, `tag`, `eval`, `stats`, `patterns`, `discover`,
//! `gradcheck`. Reports go to stdout, logs and progress to stderr. Exit
//! codes: 0 success, 1 data/runtime error, 2 usage error.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use shellnouns_core::corpus::{
    parse_annotated_corpus, parse_raw_text, tagged_output_string, CorpusStats, Label,
};
use shellnouns_core::crf::{
    crf_negative_log_likelihood, crf_nll_graph, CrfParams, EmissionMatrix, TransitionMatrix,
};
use shellnouns_core::embeddings::EmbeddingTable;
use shellnouns_core::encoders::{LstmDims, TransformerDims};
use shellnouns_core::metrics::{prf_from_counts, ConfusionCounts};
use shellnouns_core::model::{Arch, LossKind, Model, ModelConfig};
use shellnouns_core::nn::{finite_diff_gradcheck, Graph, Matrix, ParamSet};
use shellnouns_core::patterns::{compile_rules, match_report, tag_with_patterns};
use shellnouns_core::trainer::{
    discover_shell_types, evaluate_split, split_corpus, tag_corpus, train, TrainConfig,
};
use shellnouns_core::{Sentence, Token};

#[derive(Parser)]
#[command(
    name = "shellnouns",
    version,
    about = "Detect shell nouns in English text: train and run LSTM/transformer token \
             classifiers with CRF decoding, run the pattern baseline, and analyze results"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ArchArg {
    Lstm,
    Transformer,
}

impl From<ArchArg> for Arch {
    fn from(a: ArchArg) -> Arch {
        match a {
            ArchArg::Lstm => Arch::Lstm,
            ArchArg::Transformer => Arch::Transformer,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum LossArg {
    Crf,
    Softmax,
}

impl From<LossArg> for LossKind {
    fn from(l: LossArg) -> LossKind {
        match l {
            LossArg::Crf => LossKind::Crf,
            LossArg::Softmax => LossKind::Softmax,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum InputFormat {
    /// Whitespace-tokenized plain text.
    Raw,
    /// Annotated TSV (`surface<TAB>pos<TAB>label`).
    Tsv,
}

#[derive(Subcommand)]
enum Command {
    /// Train a detector on an annotated corpus
    Train {
        /// Annotated training corpus (TSV)
        #[arg(long)]
        input: PathBuf,
        /// Where to write the model archive
        #[arg(long)]
        model: PathBuf,
        /// Annotated dev corpus; without it the input is split 80/10/10
        #[arg(long)]
        dev: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = ArchArg::Lstm)]
        arch: ArchArg,
        #[arg(long, value_enum, default_value_t = LossArg::Crf)]
        loss: LossArg,
        /// Concatenate a POS one-hot feature onto the token features
        #[arg(long)]
        use_pos: bool,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Static word-vector file (repeatable, one per stream)
        #[arg(long = "embeddings")]
        embeddings: Vec<PathBuf>,
        /// Lowercase keys and queries of loaded embedding files
        #[arg(long)]
        lowercase_embeddings: bool,
        /// Default: 1e-3 for lstm, 1e-4 for transformer
        #[arg(long)]
        learning_rate: Option<f64>,
        #[arg(long, default_value_t = 8)]
        batch_size: usize,
        #[arg(long, default_value_t = 30)]
        epochs: usize,
        #[arg(long, default_value_t = 5)]
        patience: usize,
        #[arg(long, default_value_t = 0.1)]
        dropout: f64,
        /// Dimension of the trainable embedding stream
        #[arg(long, default_value_t = 50)]
        embed_dim: usize,
    },
    /// Tag a corpus with a trained model
    Tag {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, value_enum, default_value_t = InputFormat::Raw)]
        format: InputFormat,
        /// Split longer sentences into windows of this many tokens
        #[arg(long)]
        max_len: Option<usize>,
    },
    /// Evaluate a trained model on a gold-labeled corpus
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
    },
    /// Report corpus statistics (word/noun/shell counts and frequencies)
    Stats {
        #[arg(long)]
        input: PathBuf,
    },
    /// Run the lexico-grammatical pattern baseline over a POS-tagged corpus
    Patterns {
        #[arg(long)]
        input: PathBuf,
        /// Candidate-noun lexicon: one lowercase noun per line
        #[arg(long)]
        known_nouns: Option<PathBuf>,
        /// Write the match report here instead of stdout
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Aggregate predicted shell-noun types and diff against a known list
    Discover {
        /// Tagged corpus (TSV; the label column is read as predictions)
        #[arg(long)]
        input: PathBuf,
        /// Known-noun lexicon: one lowercase noun per line
        #[arg(long)]
        known_nouns: Option<PathBuf>,
        /// Write the frequency table here instead of stdout
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Check analytic gradients against central finite differences
    Gradcheck {
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Train {
            input,
            model,
            dev,
            arch,
            loss,
            use_pos,
            seed,
            embeddings,
            lowercase_embeddings,
            learning_rate,
            batch_size,
            epochs,
            patience,
            dropout,
            embed_dim,
        } => cmd_train(TrainArgs {
            input,
            model,
            dev,
            arch: arch.into(),
            loss: loss.into(),
            use_pos,
            seed,
            embeddings,
            lowercase_embeddings,
            learning_rate,
            batch_size,
            epochs,
            patience,
            dropout,
            embed_dim,
        }),
        Command::Tag {
            model,
            input,
            output,
            format,
            max_len,
        } => cmd_tag(&model, &input, &output, format, max_len),
        Command::Eval { model, input } => cmd_eval(&model, &input),
        Command::Stats { input } => cmd_stats(&input),
        Command::Patterns {
            input,
            known_nouns,
            output,
        } => cmd_patterns(&input, known_nouns.as_deref(), output.as_deref()),
        Command::Discover {
            input,
            known_nouns,
            output,
        } => cmd_discover(&input, known_nouns.as_deref(), output.as_deref()),
        Command::Gradcheck { seed } => cmd_gradcheck(seed),
    }
}

struct TrainArgs {
    input: PathBuf,
    model: PathBuf,
    dev: Option<PathBuf>,
    arch: Arch,
    loss: LossKind,
    use_pos: bool,
    seed: u64,
    embeddings: Vec<PathBuf>,
    lowercase_embeddings: bool,
    learning_rate: Option<f64>,
    batch_size: usize,
    epochs: usize,
    patience: usize,
    dropout: f64,
    embed_dim: usize,
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let corpus = parse_annotated_corpus(&args.input)
        .with_context(|| format!("reading {}", args.input.display()))?;

    let mut config = TrainConfig::new(args.arch, args.loss);
    config.use_pos = args.use_pos;
    config.seed = args.seed;
    if let Some(lr) = args.learning_rate {
        config.learning_rate = lr;
    }
    config.batch_size = args.batch_size;
    config.max_epochs = args.epochs;
    config.early_stop_patience = args.patience;
    config.dropout_rate = args.dropout;
    config.embed_dim = args.embed_dim;

    // echo the effective configuration into the run log
    eprintln!(
        "config: {}",
        serde_json::to_string(&config).context("serializing config")?
    );

    let streams = args
        .embeddings
        .iter()
        .map(|path| {
            EmbeddingTable::load(path, args.lowercase_embeddings)
                .with_context(|| format!("loading embeddings {}", path.display()))
        })
        .collect::<Result<Vec<_>>>()?;

    let (train_split, dev_split, test_split) = match &args.dev {
        Some(dev_path) => {
            let dev = parse_annotated_corpus(dev_path)
                .with_context(|| format!("reading {}", dev_path.display()))?;
            (corpus, dev, None)
        }
        None => {
            let (tr, de, te) = split_corpus(&corpus, args.seed);
            eprintln!(
                "split: {} train / {} dev / {} test sentences (seed {})",
                tr.sentences.len(),
                de.sentences.len(),
                te.sentences.len(),
                args.seed
            );
            (tr, de, Some(te))
        }
    };

    eprintln!("epoch, train_loss, dev_P, dev_R, dev_F1, seconds");
    let outcome = train(&config, &train_split, &dev_split, streams)?;
    for line in &outcome.log {
        eprintln!("{}", line.to_line());
    }
    if let Some(best) = outcome.best_epoch {
        eprintln!("kept parameters from epoch {best}");
    }

    if let Some(test) = test_split {
        if !test.sentences.is_empty() {
            let eval = evaluate_split(&outcome.model, &test)?;
            eprintln!("held-out test: {}", eval.metrics);
        }
    }

    outcome
        .model
        .save(&args.model)
        .with_context(|| format!("writing {}", args.model.display()))?;
    eprintln!("model written to {}", args.model.display());
    Ok(())
}

fn cmd_tag(
    model_path: &Path,
    input: &Path,
    output: &Path,
    format: InputFormat,
    max_len: Option<usize>,
) -> Result<()> {
    let mut model =
        Model::load(model_path).with_context(|| format!("loading {}", model_path.display()))?;
    if max_len.is_some() {
        model.config.max_len = max_len;
    }
    let corpus = match format {
        InputFormat::Raw => parse_raw_text(input)?,
        InputFormat::Tsv => parse_annotated_corpus(input)?,
    };
    let (tagged, words_per_second) = tag_corpus(&model, &corpus)?;
    let text = tagged_output_string(&tagged)?;
    fs::write(output, text).with_context(|| format!("writing {}", output.display()))?;
    eprintln!(
        "tagged {} tokens in {} sentences ({words_per_second:.0} words/second)",
        tagged.token_count(),
        tagged.sentences.len()
    );
    Ok(())
}

fn cmd_eval(model_path: &Path, input: &Path) -> Result<()> {
    let model =
        Model::load(model_path).with_context(|| format!("loading {}", model_path.display()))?;
    let corpus = parse_annotated_corpus(input)?;
    let eval = evaluate_split(&model, &corpus)?;
    for line in eval.metrics.report_lines(&eval.counts) {
        println!("{line}");
    }
    eprintln!("decode throughput: {:.0} words/second", eval.words_per_second);
    Ok(())
}

fn cmd_stats(input: &Path) -> Result<()> {
    let corpus = parse_annotated_corpus(input)?;
    let stats = CorpusStats::from_corpus(&corpus)?;
    println!("{stats}");
    Ok(())
}

fn read_lexicon(path: &Path) -> Result<HashSet<String>> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(text
        .lines()
        .map(|l| l.trim().to_lowercase())
        .filter(|l| !l.is_empty())
        .collect())
}

fn cmd_patterns(input: &Path, known_nouns: Option<&Path>, output: Option<&Path>) -> Result<()> {
    let corpus = parse_annotated_corpus(input)?;
    let lexicon = known_nouns.map(read_lexicon).transpose()?;
    let set = compile_rules(lexicon);
    let (tagged, matches) = tag_with_patterns(&corpus, &set)?;
    let report = match_report(&matches, &tagged);
    match output {
        Some(path) => {
            fs::write(path, &report).with_context(|| format!("writing {}", path.display()))?
        }
        None => print!("{report}"),
    }
    eprintln!(
        "{} matches over {} sentences",
        matches.len(),
        tagged.sentences.len()
    );
    if tagged.has_gold_labels() {
        let counts = ConfusionCounts::from_corpus(&tagged)?;
        let metrics = prf_from_counts(&counts);
        println!("baseline vs gold labels: {metrics}");
    }
    Ok(())
}

fn cmd_discover(input: &Path, known_nouns: Option<&Path>, output: Option<&Path>) -> Result<()> {
    let parsed = parse_annotated_corpus(input)?;
    // the label column of a tagged file holds predictions
    let mut corpus = parsed;
    for s in &mut corpus.sentences {
        for t in &mut s.tokens {
            t.predicted_label = t.gold_label.take();
        }
    }
    let lexicon = match known_nouns {
        Some(path) => read_lexicon(path)?,
        None => HashSet::new(),
    };
    let report = discover_shell_types(&corpus, &lexicon)?;
    let table = report.to_tsv();
    match output {
        Some(path) => {
            fs::write(path, &table).with_context(|| format!("writing {}", path.display()))?
        }
        None => print!("{table}"),
    }
    println!("total_types={}", report.total_types);
    println!("new_types={}", report.new_types.len());
    for t in &report.new_types {
        println!("new\t{t}");
    }
    Ok(())
}

fn gauss(rng: &mut dyn RngCore) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

fn cmd_gradcheck(seed: u64) -> Result<()> {
    // CRF loss on random 4-token lattices
    let mut worst_crf = 0.0f64;
    for trial in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(trial));
        let mut params = ParamSet::new();
        let crf = CrfParams::new(&mut params, "crf");
        for id in [crf.transitions, crf.start, crf.stop] {
            let shape = params.value(id).shape();
            params.get_mut(id).value = Matrix::from_fn(shape.0, shape.1, |_, _| gauss(&mut rng));
        }
        let emissions = params.add("emissions", Matrix::from_fn(4, 2, |_, _| gauss(&mut rng)));
        let gold: Vec<Label> = (0..4)
            .map(|_| Label::from_index(rng.gen_range(0..2)).unwrap())
            .collect();
        {
            let mut g = Graph::new();
            let vars = crf.vars(&mut g, &params);
            let e = g.param(&params, emissions);
            let nll = crf_nll_graph(&mut g, &vars, e, &gold)?;
            g.backward(nll)?;
            g.accumulate_param_grads(&mut params);
        }
        let report = finite_diff_gradcheck(
            &mut params,
            |p| {
                let t: TransitionMatrix = crf.extract(p);
                let e = EmissionMatrix::new(p.value(emissions).clone()).unwrap();
                crf_negative_log_likelihood(&t, &e, &gold).unwrap()
            },
            1e-4,
            None,
            &mut rng,
        )?;
        worst_crf = worst_crf.max(report.max_rel_error);
    }
    println!("crf: max relative error {worst_crf:.3e} over 10 lattices");
    if worst_crf > 1e-4 {
        bail!("crf gradient check failed: {worst_crf:.3e} > 1e-4");
    }

    // composite encoder + CRF, both architectures, tiny dimensions
    let words = [("the", "DT"), ("fact", "NN"), ("ran", "VBD")];
    let sentence = Sentence::new(
        words
            .iter()
            .map(|(w, p)| Token::new(*w).with_pos(*p))
            .collect(),
    );
    let gold = vec![Label::O, Label::Shell, Label::O];
    for arch in [Arch::Lstm, Arch::Transformer] {
        let config = ModelConfig {
            arch,
            loss: LossKind::Crf,
            use_pos: true,
            embed_dim: 5,
            lstm: LstmDims {
                stream_hidden: 4,
                stream_linear: 4,
                combined_hidden: 6,
                dropout: 0.1,
            },
            transformer: TransformerDims {
                layers: 1,
                model_dim: 8,
                heads: 2,
                ff_dim: 8,
                max_len: 8,
                dropout: 0.1,
            },
            max_len: None,
        };
        let vocab = words.iter().map(|(w, _)| w.to_string()).collect();
        let tagset = ["DT", "NN", "VBD"].iter().map(|s| s.to_string()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut model = Model::build(config, vocab, tagset, vec![], &mut rng);
        let loss = |model: &Model| {
            let mut g = Graph::new();
            let mut r = ChaCha8Rng::seed_from_u64(0);
            let e = model
                .emissions_graph(&mut g, &sentence, false, &mut r)
                .unwrap();
            let vars = model.crf.vars(&mut g, &model.params);
            let nll = crf_nll_graph(&mut g, &vars, e, &gold).unwrap();
            (g, nll)
        };
        {
            let (mut g, nll) = loss(&model);
            g.backward(nll)?;
            g.accumulate_param_grads(&mut model.params);
        }
        let mut params = std::mem::take(&mut model.params);
        let report = finite_diff_gradcheck(
            &mut params,
            |p| {
                let mut probe = model.clone();
                probe.params = p.clone();
                let (g, nll) = loss(&probe);
                g.value(nll).scalar()
            },
            1e-4,
            Some(30),
            &mut ChaCha8Rng::seed_from_u64(seed ^ 0x5eed),
        )?;
        let label = match arch {
            Arch::Lstm => "lstm",
            Arch::Transformer => "transformer",
        };
        println!(
            "{label}: max relative error {:.3e} over {} sampled coordinates",
            report.max_rel_error, report.coords_checked
        );
        if report.max_rel_error > 1e-3 {
            bail!(
                "{label} composite gradient check failed: {:.3e} > 1e-3",
                report.max_rel_error
            );
        }
    }
    println!("all gradient checks passed");
    Ok(())
}
