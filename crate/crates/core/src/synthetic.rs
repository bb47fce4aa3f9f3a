//! Generated datasets with hand-built parses, for tests, benchmarks and demos.
//!
//! In every generated example the correct option restates a fact from the
//! context, and the distractors state facts about unseen entities.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{CorefMention, Example, ParsedSentence, Token, TokenRange};

const NAMES: [&str; 12] = [
    "Ann", "Bob", "Carl", "Dana", "Eve", "Finn", "Gina", "Hugo", "Ivy", "Jack", "Kate", "Liam",
];
const VERBS: [&str; 6] = ["likes", "sees", "helps", "calls", "meets", "trusts"];
const OBJECTS: [&str; 8] = [
    "apples", "books", "cars", "dogs", "films", "games", "hats", "kites",
];

/// `subject verb object .` with `nsubj` and `obj` arcs.
pub fn svo(
    sent_id: u32,
    subject: &str,
    subject_pos: &str,
    verb: &str,
    object: &str,
) -> ParsedSentence {
    ParsedSentence {
        sent_id,
        tokens: vec![
            Token::new(0, subject, subject_pos, Some(1), "nsubj"),
            Token::new(1, verb, "VERB", None, "root"),
            Token::new(2, object, "NOUN", Some(1), "obj"),
            Token::new(3, ".", "PUNCT", Some(1), "punct"),
        ],
        coref_mentions: vec![],
    }
}

/// `subject verb .`, which yields no triplet.
pub fn intransitive(sent_id: u32, subject: &str, verb: &str) -> ParsedSentence {
    ParsedSentence {
        sent_id,
        tokens: vec![
            Token::new(0, subject, "NOUN", Some(1), "nsubj"),
            Token::new(1, verb, "VERB", None, "root"),
            Token::new(2, ".", "PUNCT", Some(1), "punct"),
        ],
        coref_mentions: vec![],
    }
}

/// "Which one follows ?" or, when `negative`, "Which one weakens the claim ?".
pub fn question(sent_id: u32, negative: bool) -> ParsedSentence {
    let tokens = if negative {
        vec![
            Token::new(0, "Which", "DET", Some(1), "det"),
            Token::new(1, "one", "NOUN", Some(2), "nsubj"),
            Token::new(2, "weakens", "VERB", None, "root"),
            Token::new(3, "the", "DET", Some(4), "det"),
            Token::new(4, "claim", "NOUN", Some(2), "obj"),
            Token::new(5, "?", "PUNCT", Some(2), "punct"),
        ]
    } else {
        vec![
            Token::new(0, "Which", "DET", Some(1), "det"),
            Token::new(1, "one", "NOUN", Some(2), "nsubj"),
            Token::new(2, "follows", "VERB", None, "root"),
            Token::new(3, "?", "PUNCT", Some(2), "punct"),
        ]
    };
    ParsedSentence {
        sent_id,
        tokens,
        coref_mentions: vec![],
    }
}

fn mention(cluster: u32, start: usize, end: usize) -> CorefMention {
    CorefMention {
        cluster,
        span: TokenRange::new(start, end),
    }
}

/// A four-option example with exactly two facts: one in the context and the
/// same one restated by option 0, linked by coreference.
pub fn tiny_example(id: &str) -> Example {
    let mut ctx = svo(0, "Ann", "PROPN", "likes", "apples");
    ctx.coref_mentions.push(mention(0, 0, 1));
    let mut correct = svo(2, "Ann", "PROPN", "likes", "apples");
    correct.coref_mentions.push(mention(0, 0, 1));
    Example {
        example_id: id.to_string(),
        context_sentences: vec![ctx],
        question: question(1, false),
        options: vec![
            vec![correct],
            vec![intransitive(3, "Birds", "sing")],
            vec![intransitive(4, "Dogs", "bark")],
            vec![intransitive(5, "Cats", "sleep")],
        ],
        label: Some(0),
        qtype: Some("inference".into()),
    }
}

/// `n` examples: a two-sentence context whose second sentence refers back to
/// the first subject with a pronoun, and four single-fact options.
pub fn fact_matching_dataset(n: usize, seed: u64) -> Vec<Example> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|k| {
            let mut names = NAMES.to_vec();
            names.shuffle(&mut rng);
            let mut verbs = VERBS.to_vec();
            verbs.shuffle(&mut rng);
            let mut objects = OBJECTS.to_vec();
            objects.shuffle(&mut rng);
            let hero = names[0];
            let pronoun = if k % 2 == 0 { "She" } else { "He" };

            let mut s0 = svo(0, hero, "PROPN", verbs[0], objects[0]);
            s0.coref_mentions.push(mention(0, 0, 1));
            let mut s1 = svo(1, pronoun, "PRON", verbs[1], objects[1]);
            s1.coref_mentions.push(mention(0, 0, 1));
            let negative = k % 4 == 3;
            let q = question(2, negative);

            let label = rng.gen_range(0..4);
            let which = rng.gen_range(0..2);
            let mut options = Vec::with_capacity(4);
            for slot in 0..4 {
                let sent_id = 3 + slot as u32;
                let sentence = if slot == label {
                    let mut s = svo(sent_id, hero, "PROPN", verbs[which], objects[which]);
                    s.coref_mentions.push(mention(0, 0, 1));
                    s
                } else {
                    svo(
                        sent_id,
                        names[1 + slot],
                        "PROPN",
                        verbs[2 + slot],
                        objects[2 + slot],
                    )
                };
                options.push(vec![sentence]);
            }
            Example {
                example_id: format!("syn-{k:03}"),
                context_sentences: vec![s0, s1],
                question: q,
                options,
                label: Some(label),
                qtype: Some(if negative { "weaken" } else { "inference" }.into()),
            }
        })
        .collect()
}
