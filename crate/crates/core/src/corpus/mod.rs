//! Dataset and annotation model: examples with four options, dependency-parsed
//! sentences and document-scoped coreference mentions.
//!
//! The on-disk interchange format is a JSON array of examples. Token heads use
//! `-1` as the root sentinel; labels may be integers `0..=3` or letters `A`-`D`.

mod embeddings;

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

pub use embeddings::{load_embeddings, EmbeddingFile, TokenAddr, EMBEDDING_MAGIC};

/// Number of candidate answers per example.
pub const NUM_OPTIONS: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    #[serde(rename = "i")]
    pub index: usize,
    pub text: String,
    pub pos: String,
    /// `None` marks the root.
    #[serde(with = "root_sentinel")]
    pub head: Option<usize>,
    pub deprel: String,
}

impl Token {
    pub fn new(index: usize, text: &str, pos: &str, head: Option<usize>, deprel: &str) -> Self {
        Token {
            index,
            text: text.to_string(),
            pos: pos.to_string(),
            head,
            deprel: deprel.to_string(),
        }
    }
}

mod root_sentinel {
    use super::*;

    pub fn serialize<S: Serializer>(head: &Option<usize>, s: S) -> Result<S::Ok, S::Error> {
        match head {
            Some(h) => s.serialize_i64(*h as i64),
            None => s.serialize_i64(-1),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<usize>, D::Error> {
        let raw = i64::deserialize(d)?;
        match raw {
            -1 => Ok(None),
            h if h >= 0 => Ok(Some(h as usize)),
            h => Err(serde::de::Error::custom(format!(
                "head must be >= 0 or -1 for root, got {h}"
            ))),
        }
    }
}

/// Half-open token range `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TokenRange {
    pub start: usize,
    pub end: usize,
}

impl TokenRange {
    pub fn new(start: usize, end: usize) -> Self {
        TokenRange { start, end }
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn overlaps(&self, other: &TokenRange) -> bool {
        self.start < other.end && other.start < self.end
    }

    pub fn contains(&self, index: usize) -> bool {
        self.start <= index && index < self.end
    }
}

impl Serialize for TokenRangeJson {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        [self.0.start, self.0.end].serialize(s)
    }
}

impl<'de> Deserialize<'de> for TokenRangeJson {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let [start, end] = <[usize; 2]>::deserialize(d)?;
        Ok(TokenRangeJson(TokenRange { start, end }))
    }
}

/// `[start, end_exclusive]` as it appears in the interchange format.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct TokenRangeJson(TokenRange);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorefMention {
    pub cluster: u32,
    #[serde(with = "range_as_pair")]
    pub span: TokenRange,
}

mod range_as_pair {
    use super::*;

    pub fn serialize<S: Serializer>(r: &TokenRange, s: S) -> Result<S::Ok, S::Error> {
        TokenRangeJson(*r).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<TokenRange, D::Error> {
        TokenRangeJson::deserialize(d).map(|r| r.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedSentence {
    pub sent_id: u32,
    pub tokens: Vec<Token>,
    #[serde(default, rename = "coref")]
    pub coref_mentions: Vec<CorefMention>,
}

impl ParsedSentence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn text(&self, range: TokenRange) -> String {
        self.tokens[range.start..range.end]
            .iter()
            .map(|t| t.text.as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn root(&self) -> Option<usize> {
        self.tokens.iter().position(|t| t.head.is_none())
    }

    /// Dependents of `head`, in token order.
    pub fn children(&self, head: usize) -> impl Iterator<Item = &Token> + '_ {
        self.tokens.iter().filter(move |t| t.head == Some(head))
    }

    /// Checks the parse-level invariants: dense indices, heads in range and not
    /// self-referential, exactly one root, no cycles, coref spans in bounds.
    pub fn check_well_formed(&self) -> std::result::Result<(), String> {
        let n = self.tokens.len();
        for (pos, tok) in self.tokens.iter().enumerate() {
            if tok.index != pos {
                return Err(format!(
                    "sentence {}: token index {} at position {} (indices must be dense 0..n-1)",
                    self.sent_id, tok.index, pos
                ));
            }
            if let Some(h) = tok.head {
                if h >= n {
                    return Err(format!(
                        "sentence {}: token {} head {} out of range",
                        self.sent_id, pos, h
                    ));
                }
                if h == pos {
                    return Err(format!(
                        "sentence {}: token {} is its own head",
                        self.sent_id, pos
                    ));
                }
            }
        }
        if n > 0 {
            let roots = self.tokens.iter().filter(|t| t.head.is_none()).count();
            if roots != 1 {
                return Err(format!(
                    "sentence {}: expected exactly one root, found {}",
                    self.sent_id, roots
                ));
            }
            for start in 0..n {
                let mut cur = start;
                let mut steps = 0;
                while let Some(h) = self.tokens[cur].head {
                    cur = h;
                    steps += 1;
                    if steps > n {
                        return Err(format!(
                            "sentence {}: dependency cycle through token {}",
                            self.sent_id, start
                        ));
                    }
                }
            }
        }
        for m in &self.coref_mentions {
            if m.span.is_empty() {
                return Err(format!(
                    "sentence {}: empty coref span [{}, {})",
                    self.sent_id, m.span.start, m.span.end
                ));
            }
            if m.span.end > n {
                return Err(format!(
                    "sentence {}: coref span [{}, {}) out of bounds for {} tokens",
                    self.sent_id, m.span.start, m.span.end, n
                ));
            }
        }
        Ok(())
    }
}

/// Where a sentence sits inside an example.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Part {
    Context,
    Question,
    Option(usize),
}

impl fmt::Display for Part {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Part::Context => f.write_str("context"),
            Part::Question => f.write_str("question"),
            Part::Option(k) => write!(f, "option{k}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    #[serde(rename = "id")]
    pub example_id: String,
    #[serde(rename = "context")]
    pub context_sentences: Vec<ParsedSentence>,
    pub question: ParsedSentence,
    pub options: Vec<Vec<ParsedSentence>>,
    #[serde(default, with = "label_format")]
    pub label: Option<usize>,
    /// Optional question-type tag used for per-type accuracy breakdowns.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qtype: Option<String>,
}

mod label_format {
    use super::*;

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum RawLabel {
        Index(i64),
        Letter(String),
    }

    pub fn serialize<S: Serializer>(label: &Option<usize>, s: S) -> Result<S::Ok, S::Error> {
        label.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<usize>, D::Error> {
        let raw = Option::<RawLabel>::deserialize(d)?;
        match raw {
            None => Ok(None),
            // out-of-range integers are reported by validation with the example id
            Some(RawLabel::Index(i)) if i >= 0 => Ok(Some(i as usize)),
            Some(RawLabel::Index(_)) => Ok(Some(usize::MAX)),
            Some(RawLabel::Letter(s)) => match s.trim() {
                "A" | "a" => Ok(Some(0)),
                "B" | "b" => Ok(Some(1)),
                "C" | "c" => Ok(Some(2)),
                "D" | "d" => Ok(Some(3)),
                other => Err(serde::de::Error::custom(format!(
                    "label letter must be A-D, got '{other}'"
                ))),
            },
        }
    }
}

impl Example {
    /// All sentences with their part, in sequence order: context, question, options.
    pub fn sentences(&self) -> impl Iterator<Item = (Part, &ParsedSentence)> + '_ {
        self.context_sentences
            .iter()
            .map(|s| (Part::Context, s))
            .chain(std::iter::once((Part::Question, &self.question)))
            .chain(
                self.options
                    .iter()
                    .enumerate()
                    .flat_map(|(k, opt)| opt.iter().map(move |s| (Part::Option(k), s))),
            )
    }

    pub fn sentence(&self, sent_id: u32) -> Option<(Part, &ParsedSentence)> {
        self.sentences().find(|(_, s)| s.sent_id == sent_id)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |rule: String| Err(Error::validation(self.example_id.clone(), rule));
        if self.options.len() != NUM_OPTIONS {
            return fail(format!(
                "options != 4 (found {} options)",
                self.options.len()
            ));
        }
        if let Some(label) = self.label {
            if label >= NUM_OPTIONS {
                return fail("label out of range 0..=3".to_string());
            }
        }
        let mut seen = HashSet::new();
        for (part, sentence) in self.sentences() {
            if !seen.insert(sentence.sent_id) {
                return fail(format!(
                    "duplicate sent_id {} (in {part})",
                    sentence.sent_id
                ));
            }
            if let Err(rule) = sentence.check_well_formed() {
                return fail(rule);
            }
        }
        Ok(())
    }
}

/// Parses and validates a dataset from interchange JSON text.
pub fn parse_dataset(text: &str, origin: &Path) -> Result<Vec<Example>> {
    let examples: Vec<Example> = serde_json::from_str(text).map_err(|e| Error::Parse {
        path: origin.to_path_buf(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let mut ids = HashSet::new();
    for ex in &examples {
        ex.validate()?;
        if !ids.insert(ex.example_id.as_str()) {
            return Err(Error::validation(
                ex.example_id.clone(),
                "duplicate example id",
            ));
        }
    }
    Ok(examples)
}

/// Loads a dataset file. Examples are returned in file order.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<Example>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&text, path)
}

pub fn dataset_to_json(examples: &[Example]) -> String {
    serde_json::to_string_pretty(examples).expect("dataset serialization cannot fail")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sentence(sent_id: u32, words: &[(&str, &str, i64, &str)]) -> ParsedSentence {
        ParsedSentence {
            sent_id,
            tokens: words
                .iter()
                .enumerate()
                .map(|(i, (t, p, h, r))| {
                    Token::new(i, t, p, if *h < 0 { None } else { Some(*h as usize) }, r)
                })
                .collect(),
            coref_mentions: vec![],
        }
    }

    fn example(n_options: usize) -> Example {
        Example {
            example_id: "ex".into(),
            context_sentences: vec![sentence(
                0,
                &[("Ann", "PROPN", 1, "nsubj"), ("runs", "VERB", -1, "root")],
            )],
            question: sentence(1, &[("Why", "ADV", -1, "root")]),
            options: (0..n_options)
                .map(|k| vec![sentence(2 + k as u32, &[("Yes", "INTJ", -1, "root")])])
                .collect(),
            label: Some(0),
            qtype: None,
        }
    }

    #[test]
    fn three_options_rejected() {
        let err = example(3).validate().unwrap_err();
        assert!(err.to_string().contains("options != 4"), "{err}");
    }

    #[test]
    fn label_letters_map_to_indices() {
        let mut ex = example(4);
        ex.label = None;
        let mut json = serde_json::to_value(&ex).unwrap();
        json["label"] = serde_json::json!("C");
        let back: Example = serde_json::from_value(json).unwrap();
        assert_eq!(back.label, Some(2));
    }

    #[test]
    fn negative_label_rejected_with_id() {
        let ex = example(4);
        let mut json = serde_json::to_value(vec![&ex]).unwrap();
        json[0]["label"] = serde_json::json!(-2);
        let err = parse_dataset(&json.to_string(), Path::new("mem")).unwrap_err();
        assert!(matches!(err, Error::Validation { ref example_id, .. } if example_id == "ex"));
    }

    #[test]
    fn two_roots_rejected() {
        let mut ex = example(4);
        ex.context_sentences[0].tokens[0].head = None;
        let err = ex.validate().unwrap_err();
        assert!(err.to_string().contains("exactly one root"), "{err}");
    }

    #[test]
    fn cycle_rejected() {
        let mut ex = example(4);
        ex.context_sentences[0] = sentence(
            0,
            &[
                ("a", "X", 1, "dep"),
                ("b", "X", 0, "dep"),
                ("c", "X", -1, "root"),
            ],
        );
        assert!(ex.validate().unwrap_err().to_string().contains("cycle"));
    }

    #[test]
    fn duplicate_sent_ids_rejected() {
        let mut ex = example(4);
        ex.options[3][0].sent_id = 0;
        assert!(ex
            .validate()
            .unwrap_err()
            .to_string()
            .contains("duplicate sent_id"));
    }

    #[test]
    fn coref_span_out_of_bounds_rejected() {
        let mut ex = example(4);
        ex.context_sentences[0].coref_mentions.push(CorefMention {
            cluster: 1,
            span: TokenRange::new(1, 3),
        });
        assert!(ex
            .validate()
            .unwrap_err()
            .to_string()
            .contains("out of bounds"));
    }

    #[test]
    fn malformed_json_reports_line() {
        let err = parse_dataset("[\n{\"id\": 3}\n]", Path::new("bad.json")).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn sentences_iterate_in_sequence_order() {
        let ex = example(4);
        let parts: Vec<Part> = ex.sentences().map(|(p, _)| p).collect();
        assert_eq!(parts[0], Part::Context);
        assert_eq!(parts[1], Part::Question);
        assert_eq!(parts[5], Part::Option(3));
    }
}
