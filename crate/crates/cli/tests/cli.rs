//! End-to-end tests of the `shellnouns` binary: exit codes, report formats,
//! and the train/tag/eval pipeline.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use shellnouns_core::corpus::tagged_output_string;
use shellnouns_core::synth::{generate, SynthConfig};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_shellnouns"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).to_string()
}

/// Writes a synthetic gold-labeled corpus in the annotated TSV format.
fn write_fixture_corpus(path: &Path, sentences: usize, seed: u64) {
    let mut corpus = generate(&SynthConfig {
        sentences,
        seed,
        exception_rate: 0.1,
    });
    for s in &mut corpus.sentences {
        for t in &mut s.tokens {
            t.predicted_label = t.gold_label;
        }
    }
    fs::write(path, tagged_output_string(&corpus).unwrap()).unwrap();
}

const CLASSIC_SENTENCES: &str = "\
The\tDT\tO
fact\tNN\tSHELL
that\tIN\tO
a\tDT\tO
major\tJJ\tO
label\tNN\tO
hadn't\tVBD\tO
been\tVBN\tO
at\tIN\tO
liberty\tNN\tO
to\tTO\tO
exploit\tVB\tO
.\t.\tO

The\tDT\tO
issue\tNN\tSHELL
that\tIN\tO
this\tDT\tO
country\tNN\tO
and\tCC\tO
Congress\tNNP\tO
must\tMD\tO
address\tVB\tO
is\tVBZ\tO
how\tWRB\tO
.\t.\tO

but\tCC\tO
this\tDT\tO
fact\tNN\tSHELL
is\tVBZ\tO
not\tRB\tO
fully\tRB\tO
captured\tVBN\tO
.\t.\tO
";

#[test]
fn stats_reports_counts_and_percentages() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("annotated.tsv");
    fs::write(
        &input,
        "The\tDT\tO\nfact\tNN\tSHELL\nheld\tVBD\tO\n\nA\tDT\tO\ndog\tNN\tO\n",
    )
    .unwrap();
    let out = run(&["stats", "--input", input.to_str().unwrap()]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("word_count\t5"), "{text}");
    assert!(text.contains("noun_count\t2"), "{text}");
    assert!(text.contains("shell_count\t1"), "{text}");
    assert!(text.contains("noun_freq\t40.00%"), "{text}");
    assert!(text.contains("shell_freq\t20.00%"), "{text}");
    assert!(text.contains("shell_proportion\t50.00%"), "{text}");
}

#[test]
fn patterns_flags_the_classic_nouns_with_a_lexicon() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("classic.tsv");
    fs::write(&input, CLASSIC_SENTENCES).unwrap();
    let nouns = dir.path().join("nouns.txt");
    fs::write(&nouns, "fact\nissue\nidea\nproblem\n").unwrap();

    let out = run(&[
        "patterns",
        "--input",
        input.to_str().unwrap(),
        "--known-nouns",
        nouns.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("0\t1\tfact\tNoun-that"), "{text}");
    assert!(text.contains("1\t1\tissue\tNoun-that"), "{text}");
    assert!(text.contains("2\t2\tfact\tth-Noun"), "{text}");
    // gold labels were present, so the baseline gets scored
    assert!(text.contains("baseline vs gold labels"), "{text}");
    assert!(text.contains("F1 100.00%"), "{text}");
}

#[test]
fn train_tag_eval_pipeline_is_deterministic_and_consistent() {
    let dir = tempfile::tempdir().unwrap();
    let corpus_path = dir.path().join("train.tsv");
    write_fixture_corpus(&corpus_path, 80, 5);
    let model_path = dir.path().join("model.json");

    let out = run(&[
        "train",
        "--input",
        corpus_path.to_str().unwrap(),
        "--model",
        model_path.to_str().unwrap(),
        "--epochs",
        "2",
        "--seed",
        "7",
        "--embed-dim",
        "8",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(model_path.exists());

    // tagging the same input twice is byte-identical
    let tagged_a = dir.path().join("a.tsv");
    let tagged_b = dir.path().join("b.tsv");
    for out_path in [&tagged_a, &tagged_b] {
        let out = run(&[
            "tag",
            "--model",
            model_path.to_str().unwrap(),
            "--input",
            corpus_path.to_str().unwrap(),
            "--output",
            out_path.to_str().unwrap(),
            "--format",
            "tsv",
        ]);
        assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
    let bytes_a = fs::read(&tagged_a).unwrap();
    let bytes_b = fs::read(&tagged_b).unwrap();
    assert_eq!(bytes_a, bytes_b);

    // eval metrics equal metrics recomputed from the tag output
    let out = run(&[
        "eval",
        "--model",
        model_path.to_str().unwrap(),
        "--input",
        corpus_path.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let eval_text = stdout(&out);

    let gold = shellnouns_core::corpus::parse_annotated_corpus(&corpus_path).unwrap();
    let predicted = shellnouns_core::corpus::parse_annotated_corpus(&tagged_a).unwrap();
    let mut merged = gold.clone();
    for (m, p) in merged.sentences.iter_mut().zip(&predicted.sentences) {
        for (t, q) in m.tokens.iter_mut().zip(&p.tokens) {
            t.predicted_label = q.gold_label;
        }
    }
    let counts = shellnouns_core::metrics::ConfusionCounts::from_corpus(&merged).unwrap();
    let metrics = shellnouns_core::metrics::prf_from_counts(&counts);
    for line in metrics.report_lines(&counts) {
        assert!(eval_text.contains(&line), "missing {line:?} in {eval_text}");
    }
}

#[test]
fn raw_text_tagging_works() {
    let dir = tempfile::tempdir().unwrap();
    let corpus_path = dir.path().join("train.tsv");
    write_fixture_corpus(&corpus_path, 40, 6);
    let model_path = dir.path().join("model.json");
    let out = run(&[
        "train",
        "--input",
        corpus_path.to_str().unwrap(),
        "--model",
        model_path.to_str().unwrap(),
        "--epochs",
        "1",
        "--embed-dim",
        "8",
    ]);
    assert!(out.status.success());

    let raw = dir.path().join("raw.txt");
    fs::write(&raw, "The fact that he saw the dog . This issue was big .\n").unwrap();
    let tagged = dir.path().join("tagged.tsv");
    let out = run(&[
        "tag",
        "--model",
        model_path.to_str().unwrap(),
        "--input",
        raw.to_str().unwrap(),
        "--output",
        tagged.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = fs::read_to_string(&tagged).unwrap();
    // two sentences, POS written as absent, labels from the scheme
    assert_eq!(text.matches("\n\n").count(), 2);
    assert!(text.lines().filter(|l| !l.is_empty()).all(|l| {
        let fields: Vec<&str> = l.split('\t').collect();
        fields.len() == 3 && fields[1] == "_" && (fields[2] == "O" || fields[2] == "SHELL")
    }));
    let throughput = String::from_utf8_lossy(&out.stderr).to_string();
    assert!(throughput.contains("words/second"), "{throughput}");
}

#[test]
fn discover_reports_frequencies_and_new_types() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("tagged.tsv");
    fs::write(
        &input,
        "fact\tNN\tSHELL\nname\tNN\tSHELL\n\nname\tNN\tSHELL\ndog\tNN\tO\n",
    )
    .unwrap();
    let nouns = dir.path().join("known.txt");
    fs::write(&nouns, "fact\n").unwrap();
    let out = run(&[
        "discover",
        "--input",
        input.to_str().unwrap(),
        "--known-nouns",
        nouns.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("name\t2"), "{text}");
    assert!(text.contains("fact\t1"), "{text}");
    assert!(text.contains("total_types=2"), "{text}");
    assert!(text.contains("new_types=1"), "{text}");
    assert!(text.contains("new\tname"), "{text}");
}

#[test]
fn gradcheck_command_passes() {
    let out = run(&["gradcheck", "--seed", "11"]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = stdout(&out);
    assert!(text.contains("all gradient checks passed"), "{text}");
}

#[test]
fn usage_errors_exit_2_and_data_errors_exit_1() {
    let out = run(&["no-such-command"]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(&["stats", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(&["stats"]);
    assert_eq!(out.status.code(), Some(2), "missing required flag is usage");

    let out = run(&["stats", "--input", "/nonexistent/corpus.tsv"]);
    assert_eq!(out.status.code(), Some(1));

    // malformed corpus: bad label on line 2
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("bad.tsv");
    fs::write(&input, "a\tDT\tO\nb\tNN\tX\n").unwrap();
    let out = run(&["stats", "--input", input.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr).to_string();
    assert!(err.contains("line 2"), "{err}");
}
