//! Seeded synthetic corpus generator used by tests, the acceptance suite, and
//! benchmarks.
//!
//! Sentences come from a small template grammar over a ~200-word vocabulary.
//! A designated set of "shellish" nouns is labeled SHELL exactly when it
//! occurs inside one of three planted trigger contexts (noun+that,
//! demonstrative+noun, noun+to+verb); a configurable fraction of those
//! instances are rule-violating exceptions labeled O instead. Ordinary nouns
//! occur in the same contexts but are never SHELL, and shellish nouns also
//! appear in neutral contexts, so neither the word nor the context alone
//! decides the label.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Corpus, Label, Sentence, Token};

/// Nouns that the planted rules treat as shell nouns.
pub const SHELL_NOUNS: [&str; 12] = [
    "fact", "issue", "idea", "claim", "point", "notion", "problem", "question", "reason",
    "belief", "view", "plan",
];

const PLAIN_NOUNS: [&str; 60] = [
    "dog", "tree", "house", "river", "car", "book", "road", "city", "garden", "child",
    "teacher", "market", "song", "stone", "bird", "window", "door", "table", "chair",
    "mountain", "lake", "bridge", "letter", "farm", "horse", "village", "ship", "forest",
    "field", "street", "cloud", "valley", "castle", "engine", "flower", "island", "kitchen",
    "ladder", "mirror", "needle", "ocean", "palace", "pencil", "rabbit", "saddle", "tailor",
    "umbrella", "wagon", "yard", "anchor", "basket", "candle", "drum", "eagle", "fence",
    "guitar", "hammer", "iron", "jacket", "kettle",
];

const VERBS_BASE: [&str; 25] = [
    "see", "know", "make", "take", "find", "give", "tell", "ask", "keep", "help", "show",
    "hear", "play", "run", "move", "bring", "write", "read", "hold", "turn", "open", "close",
    "carry", "follow", "watch",
];

const VERBS_PAST: [&str; 25] = [
    "saw", "knew", "made", "took", "found", "gave", "told", "asked", "kept", "helped",
    "showed", "heard", "played", "ran", "moved", "brought", "wrote", "held", "turned",
    "opened", "closed", "carried", "followed", "watched", "left",
];

const ADJECTIVES: [&str; 18] = [
    "big", "small", "old", "new", "good", "bad", "long", "short", "high", "low", "young",
    "late", "hard", "soft", "bright", "dark", "quiet", "strange",
];

const ADVERBS: [&str; 8] = [
    "quickly", "slowly", "often", "never", "always", "really", "quite", "clearly",
];

const PREPOSITIONS: [&str; 8] = ["in", "on", "at", "with", "from", "by", "about", "over"];

const PRONOUNS: [&str; 6] = ["he", "she", "they", "we", "it", "you"];

/// Generator settings. The defaults match the end-to-end fixture: 2,000
/// sentences with a 10% exception rate.
#[derive(Debug, Clone, Copy)]
pub struct SynthConfig {
    pub sentences: usize,
    pub seed: u64,
    pub exception_rate: f64,
}

impl Default for SynthConfig {
    fn default() -> SynthConfig {
        SynthConfig {
            sentences: 2000,
            seed: 7,
            exception_rate: 0.1,
        }
    }
}

struct Builder {
    tokens: Vec<Token>,
}

impl Builder {
    fn new() -> Builder {
        Builder { tokens: Vec::new() }
    }

    fn push(&mut self, surface: &str, pos: &str, label: Label) -> &mut Builder {
        self.tokens.push(
            Token::new(surface)
                .with_pos(pos)
                .with_gold(label),
        );
        self
    }

    fn word(&mut self, surface: &str, pos: &str) -> &mut Builder {
        self.push(surface, pos, Label::O)
    }
}

fn pick<'a>(rng: &mut ChaCha8Rng, words: &[&'a str]) -> &'a str {
    words.choose(rng).expect("non-empty word list")
}

/// Any noun: shellish or plain with equal chance per class pick.
fn any_noun<'a>(rng: &mut ChaCha8Rng) -> &'a str {
    if rng.gen_bool(0.25) {
        pick(rng, &SHELL_NOUNS)
    } else {
        pick(rng, &PLAIN_NOUNS)
    }
}

/// Generates the labeled corpus.
pub fn generate(config: &SynthConfig) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut sentences = Vec::with_capacity(config.sentences);
    for _ in 0..config.sentences {
        sentences.push(generate_sentence(&mut rng, config.exception_rate));
    }
    Corpus::new("synthetic", sentences)
}

fn generate_sentence(rng: &mut ChaCha8Rng, exception_rate: f64) -> Sentence {
    let trigger = rng.gen_bool(0.5);
    let mut b = Builder::new();
    if trigger {
        // candidate noun: half shellish (labeled SHELL minus exceptions),
        // half plain (always O)
        let shellish = rng.gen_bool(0.5);
        let noun = if shellish {
            pick(rng, &SHELL_NOUNS)
        } else {
            pick(rng, &PLAIN_NOUNS)
        };
        let label = if shellish && !rng.gen_bool(exception_rate) {
            Label::Shell
        } else {
            Label::O
        };
        match rng.gen_range(0..3) {
            0 => {
                // "The NOUN that PRON VBD the NOUN2 ."
                b.word("The", "DT");
                b.push(noun, "NN", label);
                b.word("that", "IN");
                b.word(pick(rng, &PRONOUNS), "PRP");
                b.word(pick(rng, &VERBS_PAST), "VBD");
                b.word("the", "DT");
                b.word(pick(rng, &PLAIN_NOUNS), "NN");
                b.word(".", ".");
            }
            1 => {
                // "This|That NOUN is|was (ADV) ADJ ."
                b.word(if rng.gen_bool(0.5) { "This" } else { "That" }, "DT");
                b.push(noun, "NN", label);
                if rng.gen_bool(0.5) {
                    b.word("is", "VBZ");
                } else {
                    b.word("was", "VBD");
                }
                if rng.gen_bool(0.3) {
                    b.word(pick(rng, &ADVERBS), "RB");
                }
                b.word(pick(rng, &ADJECTIVES), "JJ");
                b.word(".", ".");
            }
            _ => {
                // "PRON VBD the NOUN to VB the NOUN2 ."
                b.word(pick(rng, &PRONOUNS), "PRP");
                b.word(pick(rng, &VERBS_PAST), "VBD");
                b.word("the", "DT");
                b.push(noun, "NN", label);
                b.word("to", "TO");
                b.word(pick(rng, &VERBS_BASE), "VB");
                b.word("the", "DT");
                b.word(pick(rng, &PLAIN_NOUNS), "NN");
                b.word(".", ".");
            }
        }
    } else {
        match rng.gen_range(0..3) {
            0 => {
                // "The ADJ NOUN VBD PREP the NOUN ."
                b.word("The", "DT");
                b.word(pick(rng, &ADJECTIVES), "JJ");
                b.word(any_noun(rng), "NN");
                b.word(pick(rng, &VERBS_PAST), "VBD");
                b.word(pick(rng, &PREPOSITIONS), "IN");
                b.word("the", "DT");
                b.word(any_noun(rng), "NN");
                b.word(".", ".");
            }
            1 => {
                // "PRON ADV VBD the NOUN ."
                b.word(pick(rng, &PRONOUNS), "PRP");
                b.word(pick(rng, &ADVERBS), "RB");
                b.word(pick(rng, &VERBS_PAST), "VBD");
                b.word("the", "DT");
                b.word(any_noun(rng), "NN");
                b.word(".", ".");
            }
            _ => {
                // "The NOUN of the NOUN VBD ADJ ."
                b.word("The", "DT");
                b.word(any_noun(rng), "NN");
                b.word("of", "IN");
                b.word("the", "DT");
                b.word(any_noun(rng), "NN");
                b.word(pick(rng, &VERBS_PAST), "VBD");
                b.word(pick(rng, &ADJECTIVES), "JJ");
                b.word(".", ".");
            }
        }
    }
    Sentence::new(b.tokens)
}
