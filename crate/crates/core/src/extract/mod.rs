//! Entity-predicate-entity triplets from dependency parses, question negation
//! detection and polarity-marked question reformulation.
//!
//! Both Universal Dependencies labels (`nsubj:pass`, `obj`, `obl:agent`,
//! `compound:prt`) and the older Stanford/spaCy labels (`nsubjpass`, `dobj`,
//! `agent`, `prt`, `prep`/`pobj`) are recognised.

mod lexicon;
mod negation;

use serde::{Deserialize, Serialize};

use crate::corpus::{Example, ParsedSentence, Part, Token, TokenRange};
use crate::error::{Error, Result};

pub use lexicon::{polarity_of, PolarityLexicon};
pub use negation::{
    detect_negation, noun_verb_chunks, reformulate_question, NegationTrigger, QuestionPolarity,
    NEGATIVE_CUES, NEG_MARKER, POS_MARKER,
};

/// A token range inside one sentence of an example.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Span {
    pub sent_id: u32,
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(sent_id: u32, range: TokenRange) -> Self {
        Span {
            sent_id,
            start: range.start,
            end: range.end,
        }
    }

    pub fn range(&self) -> TokenRange {
        TokenRange::new(self.start, self.end)
    }

    pub fn overlaps(&self, other: &Span) -> bool {
        self.sent_id == other.sent_id && self.range().overlaps(&other.range())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Phrase {
    pub span: Span,
    pub text: String,
}

impl Phrase {
    fn from_range(sentence: &ParsedSentence, range: TokenRange) -> Self {
        Phrase {
            span: Span::new(sentence.sent_id, range),
            text: sentence.text(range),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Triplet {
    pub source: Part,
    pub subject: Phrase,
    pub predicate: Phrase,
    pub object: Phrase,
}

impl Triplet {
    pub fn spans(&self) -> [Span; 3] {
        [self.subject.span, self.predicate.span, self.object.span]
    }

    pub fn surface(&self) -> (&str, &str, &str) {
        (&self.subject.text, &self.predicate.text, &self.object.text)
    }
}

fn rel(tok: &Token) -> String {
    tok.deprel.to_ascii_lowercase()
}

fn is_subject(r: &str) -> bool {
    r == "nsubj"
}

fn is_passive_subject(r: &str) -> bool {
    r == "nsubj:pass" || r == "nsubjpass"
}

fn is_direct_object(r: &str) -> bool {
    matches!(r, "obj" | "dobj" | "attr")
}

fn is_particle(r: &str) -> bool {
    r == "compound:prt" || r == "prt"
}

fn is_nominal_internal(r: &str) -> bool {
    matches!(
        r,
        "amod" | "compound" | "flat" | "flat:name" | "nummod" | "nmod:poss" | "poss" | "fixed"
    )
}

fn is_nominal_pos(pos: &str) -> bool {
    matches!(pos, "NOUN" | "PROPN" | "PRON" | "NUM" | "ADJ" | "X")
}

/// Token range covering `head` and its noun-phrase-internal modifiers.
fn entity_range(sentence: &ParsedSentence, head: usize) -> TokenRange {
    let mut lo = head;
    let mut hi = head;
    let adjectival = sentence.tokens[head].pos == "ADJ";
    let mut stack = vec![head];
    while let Some(h) = stack.pop() {
        for child in sentence.children(h) {
            let r = rel(child);
            if is_nominal_internal(&r) || (adjectival && h == head && r == "advmod") {
                lo = lo.min(child.index);
                hi = hi.max(child.index);
                stack.push(child.index);
            }
        }
    }
    TokenRange::new(lo, hi + 1)
}

/// `head` plus its nominal conjuncts that do not open a clause of their own.
fn with_conjuncts(sentence: &ParsedSentence, head: usize) -> Vec<usize> {
    let mut out = vec![head];
    let mut i = 0;
    while i < out.len() {
        let h = out[i];
        for child in sentence.children(h) {
            let opens_clause = sentence
                .children(child.index)
                .any(|c| is_subject(&rel(c)) || is_passive_subject(&rel(c)));
            if rel(child) == "conj" && is_nominal_pos(&child.pos) && !opens_clause {
                out.push(child.index);
            }
        }
        i += 1;
    }
    out
}

/// Head of the nominal inside a prepositional phrase, for either the UD
/// (`obl` with a `case` dependent) or the spaCy (`prep` -> `pobj`) analysis.
fn prepositional_objects(sentence: &ParsedSentence, verb: usize) -> Vec<(usize, Option<String>)> {
    let mut out = Vec::new();
    for child in sentence.children(verb) {
        match rel(child).as_str() {
            "obl" | "obl:agent" => {
                let case = sentence
                    .children(child.index)
                    .find(|c| rel(c) == "case")
                    .map(|c| c.text.to_ascii_lowercase());
                let case = if rel(child) == "obl:agent" {
                    Some("by".to_string())
                } else {
                    case
                };
                out.push((child.index, case));
            }
            "prep" | "agent" => {
                if let Some(pobj) = sentence.children(child.index).find(|c| rel(c) == "pobj") {
                    out.push((pobj.index, Some(child.text.to_ascii_lowercase())));
                }
            }
            _ => {}
        }
    }
    out
}

fn direct_subjects(sentence: &ParsedSentence, verb: usize) -> (Vec<usize>, Vec<usize>) {
    let mut active = Vec::new();
    let mut passive = Vec::new();
    for child in sentence.children(verb) {
        let r = rel(child);
        if is_subject(&r) {
            active.push(child.index);
        } else if is_passive_subject(&r) {
            passive.push(child.index);
        }
    }
    (active, passive)
}

/// Predicate range: the verb and directly adjacent particles.
fn predicate_range(sentence: &ParsedSentence, verb: usize) -> TokenRange {
    let particles: Vec<usize> = sentence
        .children(verb)
        .filter(|c| is_particle(&rel(c)))
        .map(|c| c.index)
        .collect();
    let mut lo = verb;
    let mut hi = verb;
    while lo > 0 && particles.contains(&(lo - 1)) {
        lo -= 1;
    }
    while particles.contains(&(hi + 1)) {
        hi += 1;
    }
    TokenRange::new(lo, hi + 1)
}

/// Extracts one triplet per (subject conjunct, object conjunct) for every
/// predicate that has both a subject and an object-like argument.
///
/// * verbs: subject via `nsubj`; object via `obj`/`dobj`/`attr`, falling back to
///   the first prepositional object. A verb conjoined to another verb inherits
///   its subject when it has none.
/// * passives: an agent phrase (`by ...`) becomes the subject and the passive
///   subject becomes the object; without an agent the passive subject is
///   treated as the subject.
/// * copulas: `A is B` yields (A, is, B) with the copula as predicate.
pub fn extract_triplets(sentence: &ParsedSentence, source: Part) -> Result<Vec<Triplet>> {
    sentence
        .check_well_formed()
        .map_err(|reason| Error::MalformedParse {
            sent_id: sentence.sent_id,
            reason,
        })?;

    let mut out = Vec::new();
    for tok in &sentence.tokens {
        let r = rel(tok);
        if matches!(r.as_str(), "aux" | "aux:pass" | "auxpass" | "cop") {
            continue;
        }
        let copula = sentence.children(tok.index).find(|c| rel(c) == "cop");

        let (subject_heads, object_heads, predicate) = if let Some(cop) = copula {
            let (subjects, _) = direct_subjects(sentence, tok.index);
            (
                subjects,
                vec![tok.index],
                TokenRange::new(cop.index, cop.index + 1),
            )
        } else if matches!(tok.pos.as_str(), "VERB" | "AUX") {
            let (mut active, passive) = direct_subjects(sentence, tok.index);
            if active.is_empty() && passive.is_empty() && r == "conj" {
                if let Some(h) = tok.head {
                    let (inherited, _) = direct_subjects(sentence, h);
                    active = inherited;
                }
            }
            let preps = prepositional_objects(sentence, tok.index);
            let agent = preps
                .iter()
                .find(|(_, case)| case.as_deref() == Some("by"))
                .map(|(i, _)| *i);
            let direct: Vec<usize> = sentence
                .children(tok.index)
                .filter(|c| is_direct_object(&rel(c)))
                .map(|c| c.index)
                .collect();
            let first_prep = preps.first().map(|(i, _)| *i);

            let (subjects, object) = match (passive.first(), agent) {
                (Some(&pass), Some(agent)) => (vec![agent], Some(pass)),
                (Some(&pass), None) => (vec![pass], direct.first().copied().or(first_prep)),
                (None, _) => (active, direct.first().copied().or(first_prep)),
            };
            (
                subjects,
                object.into_iter().collect(),
                predicate_range(sentence, tok.index),
            )
        } else {
            continue;
        };

        if subject_heads.is_empty() || object_heads.is_empty() {
            continue;
        }
        let predicate = Phrase::from_range(sentence, predicate);
        for &s in &subject_heads {
            for subject in with_conjuncts(sentence, s) {
                for &o in &object_heads {
                    for object in with_conjuncts(sentence, o) {
                        let subj = entity_range(sentence, subject);
                        let obj = entity_range(sentence, object);
                        let pred = predicate.span.range();
                        if subj.overlaps(&obj) || subj.overlaps(&pred) || obj.overlaps(&pred) {
                            log::debug!(
                                "sentence {}: skipping triplet with overlapping spans",
                                sentence.sent_id
                            );
                            continue;
                        }
                        out.push(Triplet {
                            source,
                            subject: Phrase::from_range(sentence, subj),
                            predicate: predicate.clone(),
                            object: Phrase::from_range(sentence, obj),
                        });
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Triplets from the context and option sentences of an example, in sequence order.
/// Question sentences are not mined.
pub fn extract_example(example: &Example) -> Result<Vec<Triplet>> {
    let mut out = Vec::new();
    for (part, sentence) in example.sentences() {
        if part == Part::Question {
            continue;
        }
        out.extend(extract_triplets(sentence, part)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(sent_id: u32, rows: &[(&str, &str, i64, &str)]) -> ParsedSentence {
        ParsedSentence {
            sent_id,
            tokens: rows
                .iter()
                .enumerate()
                .map(|(i, (t, p, h, r))| Token::new(i, t, p, (*h >= 0).then_some(*h as usize), r))
                .collect(),
            coref_mentions: vec![],
        }
    }

    fn surfaces(s: &ParsedSentence) -> Vec<(String, String, String)> {
        extract_triplets(s, Part::Context)
            .unwrap()
            .iter()
            .map(|t| {
                let (a, b, c) = t.surface();
                (a.into(), b.into(), c.into())
            })
            .collect()
    }

    fn trip(a: &str, b: &str, c: &str) -> (String, String, String) {
        (a.into(), b.into(), c.into())
    }

    #[test]
    fn canonical_svo() {
        let s = parse(
            0,
            &[
                ("Ann", "PROPN", 1, "nsubj"),
                ("likes", "VERB", -1, "root"),
                ("apples", "NOUN", 1, "obj"),
            ],
        );
        let t = extract_triplets(&s, Part::Context).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(
            t[0].subject.span,
            Span {
                sent_id: 0,
                start: 0,
                end: 1
            }
        );
        assert_eq!(
            t[0].predicate.span,
            Span {
                sent_id: 0,
                start: 1,
                end: 2
            }
        );
        assert_eq!(
            t[0].object.span,
            Span {
                sent_id: 0,
                start: 2,
                end: 3
            }
        );
    }

    #[test]
    fn passive_with_agent_flips() {
        // The ball was kicked by John
        let s = parse(
            0,
            &[
                ("The", "DET", 1, "det"),
                ("ball", "NOUN", 3, "nsubj:pass"),
                ("was", "AUX", 3, "aux:pass"),
                ("kicked", "VERB", -1, "root"),
                ("by", "ADP", 5, "case"),
                ("John", "PROPN", 3, "obl:agent"),
            ],
        );
        assert_eq!(surfaces(&s), vec![trip("John", "kicked", "ball")]);
    }

    #[test]
    fn passive_spacy_labels() {
        let s = parse(
            0,
            &[
                ("The", "DET", 1, "det"),
                ("ball", "NOUN", 3, "nsubjpass"),
                ("was", "AUX", 3, "auxpass"),
                ("kicked", "VERB", -1, "ROOT"),
                ("by", "ADP", 3, "agent"),
                ("John", "PROPN", 4, "pobj"),
            ],
        );
        assert_eq!(surfaces(&s), vec![trip("John", "kicked", "ball")]);
    }

    #[test]
    fn intransitive_yields_nothing() {
        let s = parse(
            0,
            &[("Birds", "NOUN", 1, "nsubj"), ("fly", "VERB", -1, "root")],
        );
        assert!(surfaces(&s).is_empty());
    }

    #[test]
    fn copula_is_predicate() {
        let s = parse(
            0,
            &[
                ("Bill", "PROPN", 3, "nsubj"),
                ("is", "AUX", 3, "cop"),
                ("a", "DET", 3, "det"),
                ("doctor", "NOUN", -1, "root"),
            ],
        );
        assert_eq!(surfaces(&s), vec![trip("Bill", "is", "doctor")]);
    }

    #[test]
    fn conjoined_subjects_split() {
        let s = parse(
            0,
            &[
                ("Mary", "PROPN", 3, "nsubj"),
                ("and", "CCONJ", 2, "cc"),
                ("Tom", "PROPN", 0, "conj"),
                ("bought", "VERB", -1, "root"),
                ("a", "DET", 6, "det"),
                ("new", "ADJ", 6, "amod"),
                ("car", "NOUN", 3, "obj"),
            ],
        );
        assert_eq!(
            surfaces(&s),
            vec![
                trip("Mary", "bought", "new car"),
                trip("Tom", "bought", "new car")
            ]
        );
    }

    #[test]
    fn particle_joins_predicate() {
        let s = parse(
            0,
            &[
                ("They", "PRON", 1, "nsubj"),
                ("gave", "VERB", -1, "root"),
                ("up", "ADP", 1, "compound:prt"),
                ("hope", "NOUN", 1, "obj"),
            ],
        );
        assert_eq!(surfaces(&s), vec![trip("They", "gave up", "hope")]);
    }

    #[test]
    fn prepositional_object_fallback() {
        let s = parse(
            0,
            &[
                ("Kids", "NOUN", 1, "nsubj"),
                ("looked", "VERB", -1, "root"),
                ("at", "ADP", 4, "case"),
                ("the", "DET", 4, "det"),
                ("stars", "NOUN", 1, "obl"),
            ],
        );
        assert_eq!(surfaces(&s), vec![trip("Kids", "looked", "stars")]);
    }

    #[test]
    fn conjoined_verb_inherits_subject() {
        let s = parse(
            0,
            &[
                ("She", "PRON", 1, "nsubj"),
                ("reads", "VERB", -1, "root"),
                ("books", "NOUN", 1, "obj"),
                ("and", "CCONJ", 4, "cc"),
                ("writes", "VERB", 1, "conj"),
                ("poems", "NOUN", 4, "obj"),
            ],
        );
        assert_eq!(
            surfaces(&s),
            vec![
                trip("She", "reads", "books"),
                trip("She", "writes", "poems")
            ]
        );
    }

    #[test]
    fn malformed_parse_is_an_error() {
        let s = parse(0, &[("a", "X", -1, "root"), ("b", "X", -1, "root")]);
        assert!(matches!(
            extract_triplets(&s, Part::Context),
            Err(Error::MalformedParse { sent_id: 0, .. })
        ));
    }
}
