//! Round-trip oracle for the annotated corpus format: writing a tagged
//! corpus and parsing it back preserves every field.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use shellnouns_core::corpus::{
    parse_annotated_str, tagged_output_string, Corpus, Label, Sentence, Token,
};

const SURFACES: [&str; 12] = [
    "the", "fact", "Fast-Track", "issue", "dog's", "(bracketed)", "x", "Straße", "1,024",
    "semi;colon", "um...", "quote\"mark",
];
const POS_TAGS: [&str; 6] = ["NN", "NNS", "DT", "VBD", "JJ", "."];

fn random_corpus(sentences: usize, seed: u64) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sentences = (0..sentences)
        .map(|_| {
            let len = rng.gen_range(1..=12);
            Sentence::new(
                (0..len)
                    .map(|_| {
                        let mut t = Token::new(SURFACES[rng.gen_range(0..SURFACES.len())]);
                        if rng.gen_bool(0.8) {
                            t.pos = Some(POS_TAGS[rng.gen_range(0..POS_TAGS.len())].to_string());
                        }
                        t.predicted_label = Some(if rng.gen_bool(0.2) {
                            Label::Shell
                        } else {
                            Label::O
                        });
                        t
                    })
                    .collect(),
            )
        })
        .collect();
    Corpus::new("random", sentences)
}

fn assert_round_trips(corpus: &Corpus) {
    let written = tagged_output_string(corpus).expect("predictions present");
    let reparsed = parse_annotated_str(&written, "random").expect("well formed");
    assert_eq!(reparsed.sentences.len(), corpus.sentences.len());
    for (a, b) in reparsed.sentences.iter().zip(&corpus.sentences) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.tokens.iter().zip(&b.tokens) {
            assert_eq!(x.surface, y.surface);
            assert_eq!(x.pos, y.pos);
            // the label column round-trips: predictions come back as the
            // parsed file's labels
            assert_eq!(x.gold_label, y.predicted_label);
        }
    }
    // writing the reparsed corpus again is byte-identical (idempotence)
    let mut relabeled = reparsed.clone();
    for s in &mut relabeled.sentences {
        for t in &mut s.tokens {
            t.predicted_label = t.gold_label;
        }
    }
    assert_eq!(tagged_output_string(&relabeled).unwrap(), written);
}

#[test]
fn hundred_random_sentences_round_trip() {
    let corpus = random_corpus(100, 20240);
    assert_eq!(corpus.sentences.len(), 100);
    assert_round_trips(&corpus);
}

proptest! {
    #[test]
    fn arbitrary_well_formed_corpora_round_trip(
        sentence_specs in proptest::collection::vec(
            proptest::collection::vec(
                ("[a-zA-Z0-9,.;:'()]{1,10}", proptest::option::of("[A-Z.]{1,4}"), any::<bool>()),
                1..8,
            ),
            1..10,
        )
    ) {
        let sentences = sentence_specs
            .into_iter()
            .map(|tokens| {
                Sentence::new(
                    tokens
                        .into_iter()
                        .map(|(surface, pos, shell)| {
                            // "_" in the POS column means absent by convention
                            let pos = pos.filter(|p| p != "_");
                            let mut t = Token::new(surface);
                            t.pos = pos;
                            t.predicted_label =
                                Some(if shell { Label::Shell } else { Label::O });
                            t
                        })
                        .collect(),
                )
            })
            .collect();
        let corpus = Corpus::new("prop", sentences);
        assert_round_trips(&corpus);
    }
}
