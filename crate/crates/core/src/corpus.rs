//! Corpus reading, writing, the label scheme, and corpus statistics.
//!
//! Two on-disk formats are supported:
//!
//! - **Annotated**: UTF-8 text, one token per line as
//!   `surface<TAB>pos<TAB>label`, blank line between sentences. Labels are
//!   exactly `O` or `SHELL`; a POS of `_` means "absent".
//! - **Raw**: UTF-8 plain text, whitespace-tokenized (pre-tokenized input is
//!   assumed). Sentences end at line boundaries and after `.`, `!`, `?`
//!   tokens.

use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of labels in the scheme (`O`, `SHELL`).
pub const NUM_LABELS: usize = 2;

/// The binary token label scheme. `O` has index 0, `SHELL` index 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    O,
    Shell,
}

impl Label {
    pub fn index(self) -> usize {
        match self {
            Label::O => 0,
            Label::Shell => 1,
        }
    }

    pub fn from_index(index: usize) -> Option<Label> {
        match index {
            0 => Some(Label::O),
            1 => Some(Label::Shell),
            _ => None,
        }
    }

    pub fn parse(text: &str) -> Option<Label> {
        match text {
            "O" => Some(Label::O),
            "SHELL" => Some(Label::Shell),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::O => "O",
            Label::Shell => "SHELL",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A single token: surface form, optional Penn Treebank POS tag, and the
/// gold/predicted labels when known.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub surface: String,
    pub pos: Option<String>,
    pub gold_label: Option<Label>,
    pub predicted_label: Option<Label>,
}

impl Token {
    pub fn new(surface: impl Into<String>) -> Token {
        Token {
            surface: surface.into(),
            pos: None,
            gold_label: None,
            predicted_label: None,
        }
    }

    pub fn with_pos(mut self, pos: impl Into<String>) -> Token {
        self.pos = Some(pos.into());
        self
    }

    pub fn with_gold(mut self, label: Label) -> Token {
        self.gold_label = Some(label);
        self
    }

    /// True when the POS tag starts with `NN` (any noun, including proper).
    pub fn is_noun(&self) -> bool {
        self.pos.as_deref().is_some_and(|p| p.starts_with("NN"))
    }
}

/// An ordered, non-empty sequence of tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sentence {
    pub tokens: Vec<Token>,
}

impl Sentence {
    pub fn new(tokens: Vec<Token>) -> Sentence {
        Sentence { tokens }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Gold labels for every token, or `None` if any token lacks one.
    pub fn gold_labels(&self) -> Option<Vec<Label>> {
        self.tokens.iter().map(|t| t.gold_label).collect()
    }
}

/// An ordered sequence of sentences, in source-file order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    pub name: String,
    pub sentences: Vec<Sentence>,
}

impl Corpus {
    pub fn new(name: impl Into<String>, sentences: Vec<Sentence>) -> Corpus {
        Corpus {
            name: name.into(),
            sentences,
        }
    }

    pub fn token_count(&self) -> usize {
        self.sentences.iter().map(Sentence::len).sum()
    }

    pub fn tokens(&self) -> impl Iterator<Item = &Token> {
        self.sentences.iter().flat_map(|s| s.tokens.iter())
    }

    /// True when every token carries a gold label.
    pub fn has_gold_labels(&self) -> bool {
        self.tokens().all(|t| t.gold_label.is_some())
    }

    /// True when every token carries a POS tag.
    pub fn has_pos(&self) -> bool {
        self.tokens().all(|t| t.pos.is_some())
    }
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("empty corpus: {0}")]
    Empty(String),
    #[error("sentence {sentence}, token {token}: missing predicted label")]
    MissingPrediction { sentence: usize, token: usize },
    #[error("invalid counts: need shell <= noun <= word, got word={word} noun={noun} shell={shell}")]
    InvalidCounts { word: u64, noun: u64, shell: u64 },
}

/// Parses an annotated corpus file (`surface<TAB>pos<TAB>label` lines, blank
/// line between sentences). The returned corpus has POS and gold labels
/// populated; a POS column of `_` is read as absent.
pub fn parse_annotated_corpus(path: impl AsRef<Path>) -> Result<Corpus, CorpusError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_annotated_str(&text, &path.display().to_string())
}

/// Parses annotated-format text. `name` is used for the corpus name and in
/// error messages.
pub fn parse_annotated_str(text: &str, name: &str) -> Result<Corpus, CorpusError> {
    let mut sentences = Vec::new();
    let mut current: Vec<Token> = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            if !current.is_empty() {
                sentences.push(Sentence::new(std::mem::take(&mut current)));
            }
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(CorpusError::Parse {
                line: line_no,
                message: format!("expected 3 tab-separated fields, got {}", fields.len()),
            });
        }
        let surface = fields[0];
        if surface.is_empty() {
            return Err(CorpusError::Parse {
                line: line_no,
                message: "empty surface form".to_string(),
            });
        }
        let pos = match fields[1] {
            "_" => None,
            p => Some(p.to_string()),
        };
        let label = Label::parse(fields[2]).ok_or_else(|| CorpusError::Parse {
            line: line_no,
            message: format!("unknown label {:?} (expected O or SHELL)", fields[2]),
        })?;
        current.push(Token {
            surface: surface.to_string(),
            pos,
            gold_label: Some(label),
            predicted_label: None,
        });
    }
    if !current.is_empty() {
        sentences.push(Sentence::new(current));
    }
    if sentences.is_empty() {
        return Err(CorpusError::Empty(name.to_string()));
    }
    Ok(Corpus::new(name, sentences))
}

/// Parses a raw, pre-tokenized text file: tokens split on whitespace,
/// sentences split at line boundaries and after `.`, `!`, `?` tokens. No POS
/// tags or labels are populated.
pub fn parse_raw_text(path: impl AsRef<Path>) -> Result<Corpus, CorpusError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(parse_raw_str(&text, &path.display().to_string()))
}

/// Raw-text parsing over an in-memory string. Empty input yields an empty
/// corpus (no error: raw text is tagged later, an empty result is meaningful).
pub fn parse_raw_str(text: &str, name: &str) -> Corpus {
    let mut sentences = Vec::new();
    for line in text.lines() {
        let mut current: Vec<Token> = Vec::new();
        for word in line.split_whitespace() {
            current.push(Token::new(word));
            if word == "." || word == "!" || word == "?" {
                sentences.push(Sentence::new(std::mem::take(&mut current)));
            }
        }
        if !current.is_empty() {
            sentences.push(Sentence::new(current));
        }
    }
    Corpus::new(name, sentences)
}

/// Writes a corpus in the annotated format with *predicted* labels in the
/// label column. POS is written as `_` when absent. Every token must carry a
/// predicted label.
pub fn write_tagged_output(corpus: &Corpus, path: impl AsRef<Path>) -> Result<(), CorpusError> {
    let path = path.as_ref();
    let text = tagged_output_string(corpus)?;
    fs::write(path, text).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Renders the annotated format (predicted labels) as a string.
pub fn tagged_output_string(corpus: &Corpus) -> Result<String, CorpusError> {
    let mut out = String::new();
    for (s_idx, sentence) in corpus.sentences.iter().enumerate() {
        for (t_idx, token) in sentence.tokens.iter().enumerate() {
            let label = token
                .predicted_label
                .ok_or(CorpusError::MissingPrediction {
                    sentence: s_idx,
                    token: t_idx,
                })?;
            out.push_str(&token.surface);
            out.push('\t');
            out.push_str(token.pos.as_deref().unwrap_or("_"));
            out.push('\t');
            out.push_str(label.as_str());
            out.push('\n');
        }
        out.push('\n');
    }
    Ok(out)
}

/// Corpus-level counts and the derived percentages. Percentages are exact
/// doubles internally; rounding to two decimals happens only at display time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub word_count: u64,
    pub noun_count: u64,
    pub shell_count: u64,
    /// Percent of words that are nouns.
    pub noun_freq: f64,
    /// Percent of words that are shell nouns.
    pub shell_freq: f64,
    /// Percent of nouns that are shell nouns.
    pub shell_proportion: f64,
}

/// Builds [`CorpusStats`] from raw counts. Requires
/// `shell_count <= noun_count <= word_count`; each ratio is 0 when its
/// denominator is 0.
pub fn corpus_stats(
    word_count: u64,
    noun_count: u64,
    shell_count: u64,
) -> Result<CorpusStats, CorpusError> {
    if !(shell_count <= noun_count && noun_count <= word_count) {
        return Err(CorpusError::InvalidCounts {
            word: word_count,
            noun: noun_count,
            shell: shell_count,
        });
    }
    let pct = |num: u64, den: u64| {
        if den == 0 {
            0.0
        } else {
            100.0 * num as f64 / den as f64
        }
    };
    Ok(CorpusStats {
        word_count,
        noun_count,
        shell_count,
        noun_freq: pct(noun_count, word_count),
        shell_freq: pct(shell_count, word_count),
        shell_proportion: pct(shell_count, noun_count),
    })
}

impl CorpusStats {
    /// Counts tokens, nouns (POS starting with `NN`), and gold SHELL tokens.
    pub fn from_corpus(corpus: &Corpus) -> Result<CorpusStats, CorpusError> {
        let mut words = 0u64;
        let mut nouns = 0u64;
        let mut shells = 0u64;
        for token in corpus.tokens() {
            words += 1;
            if token.is_noun() {
                nouns += 1;
            }
            if token.gold_label == Some(Label::Shell) {
                shells += 1;
            }
        }
        corpus_stats(words, nouns, shells)
    }
}

/// Rounds to two decimals, half away from zero (for display).
pub fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

impl fmt::Display for CorpusStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "word_count\t{}", self.word_count)?;
        writeln!(f, "noun_count\t{}", self.noun_count)?;
        writeln!(f, "shell_count\t{}", self.shell_count)?;
        writeln!(f, "noun_freq\t{:.2}%", round2(self.noun_freq))?;
        writeln!(f, "shell_freq\t{:.2}%", round2(self.shell_freq))?;
        write!(f, "shell_proportion\t{:.2}%", round2(self.shell_proportion))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_two_token_sentence() {
        let corpus = parse_annotated_str("The\tDT\tO\nfact\tNN\tSHELL\n\n", "t").unwrap();
        assert_eq!(corpus.sentences.len(), 1);
        assert_eq!(corpus.token_count(), 2);
        let second = &corpus.sentences[0].tokens[1];
        assert_eq!(second.surface, "fact");
        assert_eq!(second.pos.as_deref(), Some("NN"));
        assert_eq!(second.gold_label, Some(Label::Shell));
    }

    #[test]
    fn parse_rejects_unknown_label_with_line_number() {
        let err = parse_annotated_str("a\tDT\tO\nb\tNN\tO\nc\tNN\tX\n", "t").unwrap_err();
        match err {
            CorpusError::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other}"),
        }
    }

    #[test]
    fn parse_rejects_wrong_column_count() {
        let err = parse_annotated_str("a\tDT\n", "t").unwrap_err();
        match err {
            CorpusError::Parse { line, message } => {
                assert_eq!(line, 1);
                assert!(message.contains("3"));
            }
            other => panic!("expected parse error, got {other}"),
        }
    }

    #[test]
    fn parse_empty_file_is_an_error() {
        assert!(matches!(
            parse_annotated_str("", "t"),
            Err(CorpusError::Empty(_))
        ));
        assert!(matches!(
            parse_annotated_str("\n\n\n", "t"),
            Err(CorpusError::Empty(_))
        ));
    }

    #[test]
    fn raw_text_splits_on_terminal_punctuation() {
        let corpus = parse_raw_str("A b . C d", "t");
        assert_eq!(corpus.sentences.len(), 2);
        let first: Vec<&str> = corpus.sentences[0]
            .tokens
            .iter()
            .map(|t| t.surface.as_str())
            .collect();
        assert_eq!(first, ["A", "b", "."]);
        let second: Vec<&str> = corpus.sentences[1]
            .tokens
            .iter()
            .map(|t| t.surface.as_str())
            .collect();
        assert_eq!(second, ["C", "d"]);
    }

    #[test]
    fn raw_text_skips_empty_lines() {
        let corpus = parse_raw_str("\n\n", "t");
        assert!(corpus.sentences.is_empty());
    }

    #[test]
    fn raw_text_single_token() {
        let corpus = parse_raw_str("x", "t");
        assert_eq!(corpus.sentences.len(), 1);
        assert_eq!(corpus.sentences[0].len(), 1);
    }

    #[test]
    fn stats_rounding_matches_reference_counts() {
        let s = corpus_stats(76_736, 18_367, 1_041).unwrap();
        assert_eq!(round2(s.noun_freq), 23.94);
        assert_eq!(round2(s.shell_freq), 1.36);
        assert_eq!(round2(s.shell_proportion), 5.67);

        let s = corpus_stats(2_472_519, 749_016, 21_021).unwrap();
        assert_eq!(round2(s.noun_freq), 30.29);
        assert_eq!(round2(s.shell_freq), 0.85);
        assert_eq!(round2(s.shell_proportion), 2.81);
    }

    #[test]
    fn stats_empty_corpus_is_all_zero() {
        let s = corpus_stats(0, 0, 0).unwrap();
        assert_eq!(s.noun_freq, 0.0);
        assert_eq!(s.shell_freq, 0.0);
        assert_eq!(s.shell_proportion, 0.0);
    }

    #[test]
    fn stats_rejects_bad_ordering() {
        assert!(matches!(
            corpus_stats(10, 20, 5),
            Err(CorpusError::InvalidCounts { .. })
        ));
        assert!(matches!(
            corpus_stats(10, 5, 7),
            Err(CorpusError::InvalidCounts { .. })
        ));
    }

    #[test]
    fn stats_ratio_identity() {
        // shell_proportion * noun_freq == shell_freq * 100 (both in percent)
        let s = corpus_stats(1000, 300, 30).unwrap();
        let lhs = s.shell_proportion * s.noun_freq;
        let rhs = s.shell_freq * 100.0;
        assert!((lhs - rhs).abs() < 1e-9);
        assert!(s.shell_freq <= s.noun_freq);
    }

    #[test]
    fn write_requires_predictions() {
        let corpus = parse_annotated_str("a\tDT\tO\n", "t").unwrap();
        let err = tagged_output_string(&corpus).unwrap_err();
        assert!(matches!(
            err,
            CorpusError::MissingPrediction {
                sentence: 0,
                token: 0
            }
        ));
    }

    #[test]
    fn write_emits_one_line_per_token_plus_blank() {
        let mut corpus = parse_annotated_str("a\tDT\tO\nfact\tNN\tSHELL\n", "t").unwrap();
        for s in &mut corpus.sentences {
            for t in &mut s.tokens {
                t.predicted_label = t.gold_label;
            }
        }
        let text = tagged_output_string(&corpus).unwrap();
        assert_eq!(text, "a\tDT\tO\nfact\tNN\tSHELL\n\n");
    }

    #[test]
    fn write_then_parse_round_trips() {
        let mut corpus = parse_annotated_str("a\t_\tO\nfact\tNN\tSHELL\n\nb\tVB\tO\n", "t").unwrap();
        for s in &mut corpus.sentences {
            for t in &mut s.tokens {
                t.predicted_label = t.gold_label;
            }
        }
        let text = tagged_output_string(&corpus).unwrap();
        let reparsed = parse_annotated_str(&text, "t").unwrap();
        assert_eq!(reparsed.sentences.len(), corpus.sentences.len());
        for (a, b) in reparsed.sentences.iter().zip(&corpus.sentences) {
            for (x, y) in a.tokens.iter().zip(&b.tokens) {
                assert_eq!(x.surface, y.surface);
                assert_eq!(x.pos, y.pos);
                assert_eq!(x.gold_label, y.predicted_label);
            }
        }
    }

    #[test]
    fn token_count_is_sum_of_sentence_lengths() {
        let corpus = parse_raw_str("a b c\nd e", "t");
        assert_eq!(
            corpus.token_count(),
            corpus.sentences.iter().map(Sentence::len).sum::<usize>()
        );
    }
}
