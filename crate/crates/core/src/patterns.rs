//! The traditional baseline: ten lexico-grammatical patterns matched over
//! POS-tagged sentences, optionally gated by a candidate-noun lexicon.
//!
//! Pattern names follow the classic inventory (`Noun-be-to`, `th-Noun`, ...).
//! Only the names are canonical; the window operationalizations here are this
//! crate's, built from POS and surface tests:
//!
//! - `N`: common noun, POS exactly `NN` or `NNS` (proper nouns excluded)
//! - `BE`: surface in `is are was were be been being 's` (case-insensitive)
//! - `TH`: surface in `this that these those` with POS `DT`
//! - `WH`: surface in `what how why whether who where when which`
//! - gaps marked `*` allow up to two adverb/determiner/adjective tokens
//!
//! Each rule designates exactly one noun token per match as the candidate
//! shell noun. When a candidate lexicon is supplied, a match is kept only if
//! the candidate's lowercased surface (or its naive singular, trailing `s`
//! stripped) is in the lexicon. Rules can be toggled individually.

use std::collections::HashSet;

use thiserror::Error;

use crate::corpus::{Corpus, Label, Sentence};

#[derive(Debug, Error)]
pub enum PatternError {
    #[error("token {index} ({surface:?}) has no POS tag")]
    MissingPos { index: usize, surface: String },
}

/// The ten canonical pattern names, in inventory order.
pub const RULE_NAMES: [&str; 10] = [
    "Noun-be-to",
    "Noun-be-that",
    "Noun-be-wh",
    "Noun-to",
    "Noun-that",
    "Noun-wh",
    "Noun-of",
    "th-Noun",
    "th-be-Noun",
    "Sub-be-Noun",
];

/// A single window match: the rule that fired, where, and which token is the
/// candidate shell noun.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatternMatch {
    pub rule_name: &'static str,
    pub sentence_index: usize,
    /// Index of the designated candidate noun within the sentence.
    pub token_index: usize,
    /// Inclusive token range covered by the match window.
    pub window: (usize, usize),
}

/// One operationalized pattern. The matcher is anchored at a start position
/// and reports the candidate token and window end on success.
#[derive(Clone)]
pub struct PatternRule {
    pub name: &'static str,
    pub enabled: bool,
    matcher: Matcher,
}

impl std::fmt::Debug for PatternRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PatternRule")
            .field("name", &self.name)
            .field("enabled", &self.enabled)
            .finish()
    }
}

/// The compiled rule set plus the optional candidate lexicon.
#[derive(Debug, Clone)]
pub struct PatternSet {
    pub rules: Vec<PatternRule>,
    pub lexicon: Option<HashSet<String>>,
}

struct Tok {
    lower: String,
    pos: String,
}

type Matcher = fn(&[Tok], usize) -> Option<(usize, usize)>;

fn is_noun(t: &Tok) -> bool {
    t.pos == "NN" || t.pos == "NNS"
}

fn is_be(t: &Tok) -> bool {
    matches!(
        t.lower.as_str(),
        "is" | "are" | "was" | "were" | "be" | "been" | "being" | "'s"
    )
}

fn is_th(t: &Tok) -> bool {
    t.pos == "DT" && matches!(t.lower.as_str(), "this" | "that" | "these" | "those")
}

fn is_wh(t: &Tok) -> bool {
    matches!(
        t.lower.as_str(),
        "what" | "how" | "why" | "whether" | "who" | "where" | "when" | "which"
    )
}

fn is_verb(t: &Tok) -> bool {
    t.pos.starts_with("VB")
}

fn is_adjective(t: &Tok) -> bool {
    t.pos.starts_with("JJ")
}

/// Tokens allowed inside a `*` gap: adverbs, determiners, adjectives.
fn is_gap(t: &Tok) -> bool {
    t.pos.starts_with("RB") || t.pos.starts_with("JJ") || t.pos == "DT" || t.pos == "PDT"
}

/// Positions reachable from `start` by skipping 0..=max gap tokens.
fn gap_positions(toks: &[Tok], start: usize, max_gap: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut pos = start;
    for skipped in 0..=max_gap {
        if pos >= toks.len() {
            break;
        }
        out.push(pos);
        if skipped < max_gap {
            if !is_gap(&toks[pos]) {
                break;
            }
            pos += 1;
        }
    }
    out
}

fn noun_that(toks: &[Tok], i: usize) -> Option<(usize, usize)> {
    (is_noun(&toks[i]) && toks.get(i + 1).is_some_and(|t| t.lower == "that"))
        .then_some((i, i + 1))
}

fn noun_to(toks: &[Tok], i: usize) -> Option<(usize, usize)> {
    (is_noun(&toks[i])
        && toks.get(i + 1).is_some_and(|t| t.lower == "to")
        && toks.get(i + 2).is_some_and(is_verb))
    .then_some((i, i + 2))
}

fn noun_wh(toks: &[Tok], i: usize) -> Option<(usize, usize)> {
    (is_noun(&toks[i]) && toks.get(i + 1).is_some_and(is_wh)).then_some((i, i + 1))
}

fn noun_of(toks: &[Tok], i: usize) -> Option<(usize, usize)> {
    (is_noun(&toks[i]) && toks.get(i + 1).is_some_and(|t| t.lower == "of"))
        .then_some((i, i + 1))
}

/// Shared prefix of the `Noun-be-*` rules: a noun, up to two gap tokens, then
/// a BE form. Returns the BE position.
fn noun_be_prefix(toks: &[Tok], i: usize) -> Option<usize> {
    if !is_noun(&toks[i]) {
        return None;
    }
    gap_positions(toks, i + 1, 2)
        .into_iter()
        .find(|&j| is_be(&toks[j]))
}

fn noun_be_that(toks: &[Tok], i: usize) -> Option<(usize, usize)> {
    let be = noun_be_prefix(toks, i)?;
    toks.get(be + 1)
        .is_some_and(|t| t.lower == "that")
        .then_some((i, be + 1))
}

fn noun_be_to(toks: &[Tok], i: usize) -> Option<(usize, usize)> {
    let be = noun_be_prefix(toks, i)?;
    (toks.get(be + 1).is_some_and(|t| t.lower == "to") && toks.get(be + 2).is_some_and(is_verb))
        .then_some((i, be + 2))
}

fn noun_be_wh(toks: &[Tok], i: usize) -> Option<(usize, usize)> {
    let be = noun_be_prefix(toks, i)?;
    toks.get(be + 1).is_some_and(is_wh).then_some((i, be + 1))
}

fn th_noun(toks: &[Tok], i: usize) -> Option<(usize, usize)> {
    if !is_th(&toks[i]) {
        return None;
    }
    // an optional single adjective may sit between the demonstrative and noun
    if toks.get(i + 1).is_some_and(is_noun) {
        return Some((i + 1, i + 1));
    }
    if toks.get(i + 1).is_some_and(is_adjective) && toks.get(i + 2).is_some_and(is_noun) {
        return Some((i + 2, i + 2));
    }
    None
}

fn th_be_noun(toks: &[Tok], i: usize) -> Option<(usize, usize)> {
    if !is_th(&toks[i]) || !toks.get(i + 1).is_some_and(is_be) {
        return None;
    }
    gap_positions(toks, i + 2, 2)
        .into_iter()
        .find(|&j| is_noun(&toks[j]))
        .map(|j| (j, j))
}

fn sub_be_noun(toks: &[Tok], i: usize) -> Option<(usize, usize)> {
    let subject = &toks[i];
    if !(subject.pos == "PRP" || is_noun(subject)) || !toks.get(i + 1).is_some_and(is_be) {
        return None;
    }
    gap_positions(toks, i + 2, 2)
        .into_iter()
        .find(|&j| is_noun(&toks[j]))
        .map(|j| (j, j))
}

/// Builds the ten rules, all enabled, with the optional candidate lexicon
/// (lowercase nouns, one per entry). An empty lexicon filters every match.
pub fn compile_rules(candidate_lexicon: Option<HashSet<String>>) -> PatternSet {
    let matchers: [(&'static str, Matcher); 10] = [
        ("Noun-be-to", noun_be_to),
        ("Noun-be-that", noun_be_that),
        ("Noun-be-wh", noun_be_wh),
        ("Noun-to", noun_to),
        ("Noun-that", noun_that),
        ("Noun-wh", noun_wh),
        ("Noun-of", noun_of),
        ("th-Noun", th_noun),
        ("th-be-Noun", th_be_noun),
        ("Sub-be-Noun", sub_be_noun),
    ];
    PatternSet {
        rules: matchers
            .into_iter()
            .map(|(name, matcher)| PatternRule {
                name,
                enabled: true,
                matcher,
            })
            .collect(),
        lexicon: candidate_lexicon,
    }
}

impl PatternSet {
    /// Enables or disables one rule by name; false when the name is unknown.
    pub fn set_enabled(&mut self, name: &str, enabled: bool) -> bool {
        match self.rules.iter_mut().find(|r| r.name == name) {
            Some(rule) => {
                rule.enabled = enabled;
                true
            }
            None => false,
        }
    }

    fn lexicon_allows(&self, candidate_lower: &str) -> bool {
        match &self.lexicon {
            None => true,
            Some(lex) => {
                lex.contains(candidate_lower)
                    || candidate_lower
                        .strip_suffix('s')
                        .is_some_and(|singular| lex.contains(singular))
            }
        }
    }
}

/// Matches all enabled rules against one POS-tagged sentence. Every token
/// must carry a POS tag. Matches are deduplicated per (rule, candidate).
pub fn match_patterns(
    set: &PatternSet,
    sentence: &Sentence,
    sentence_index: usize,
) -> Result<Vec<PatternMatch>, PatternError> {
    let toks: Vec<Tok> = sentence
        .tokens
        .iter()
        .enumerate()
        .map(|(index, t)| {
            t.pos
                .as_deref()
                .map(|pos| Tok {
                    lower: t.surface.to_lowercase(),
                    pos: pos.to_string(),
                })
                .ok_or_else(|| PatternError::MissingPos {
                    index,
                    surface: t.surface.clone(),
                })
        })
        .collect::<Result<_, _>>()?;

    let mut matches = Vec::new();
    let mut seen = HashSet::new();
    for rule in set.rules.iter().filter(|r| r.enabled) {
        for start in 0..toks.len() {
            if let Some((candidate, end)) = (rule.matcher)(&toks, start) {
                if !set.lexicon_allows(&toks[candidate].lower) {
                    continue;
                }
                if seen.insert((rule.name, candidate)) {
                    matches.push(PatternMatch {
                        rule_name: rule.name,
                        sentence_index,
                        token_index: candidate,
                        window: (start, end),
                    });
                }
            }
        }
    }
    Ok(matches)
}

/// Runs the pattern baseline over a corpus: every token flagged by at least
/// one rule is predicted SHELL, all others O. Returns the tagged corpus and
/// the full match list.
pub fn tag_with_patterns(
    corpus: &Corpus,
    set: &PatternSet,
) -> Result<(Corpus, Vec<PatternMatch>), PatternError> {
    let mut tagged = corpus.clone();
    let mut all_matches = Vec::new();
    for (s_idx, sentence) in tagged.sentences.iter_mut().enumerate() {
        let matches = match_patterns(set, sentence, s_idx)?;
        for token in &mut sentence.tokens {
            token.predicted_label = Some(Label::O);
        }
        for m in &matches {
            sentence.tokens[m.token_index].predicted_label = Some(Label::Shell);
        }
        all_matches.extend(matches);
    }
    Ok((tagged, all_matches))
}

/// TSV report: `sentence_idx<TAB>token_idx<TAB>surface<TAB>rule_name`.
pub fn match_report(matches: &[PatternMatch], corpus: &Corpus) -> String {
    let mut out = String::new();
    for m in matches {
        let surface = &corpus.sentences[m.sentence_index].tokens[m.token_index].surface;
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            m.sentence_index, m.token_index, surface, m.rule_name
        ));
    }
    out
}
