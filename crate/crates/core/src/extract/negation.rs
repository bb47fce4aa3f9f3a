use serde::{Deserialize, Serialize};

use super::lexicon::polarity_of;
use crate::corpus::{ParsedSentence, TokenRange};

pub const POS_MARKER: &str = "<pos>";
pub const NEG_MARKER: &str = "<neg>";

/// Negation cues, each a token sequence matched case-insensitively.
pub const NEGATIVE_CUES: &[&[&str]] = &[
    &["not"],
    &["n't"],
    &["unable"],
    &["no"],
    &["few"],
    &["little"],
    &["neither"],
    &["none", "of"],
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegationTrigger {
    /// Summed lexicon polarity of the content words was below zero.
    Sentiment { score: i32 },
    /// A cue sat inside or immediately before a noun or verb chunk.
    Cue(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionPolarity {
    pub is_negative: bool,
    pub trigger: Option<NegationTrigger>,
}

impl QuestionPolarity {
    pub fn positive() -> Self {
        QuestionPolarity {
            is_negative: false,
            trigger: None,
        }
    }

    pub fn negative(trigger: NegationTrigger) -> Self {
        QuestionPolarity {
            is_negative: true,
            trigger: Some(trigger),
        }
    }

    pub fn marker(&self) -> &'static str {
        if self.is_negative {
            NEG_MARKER
        } else {
            POS_MARKER
        }
    }
}

fn is_content_pos(pos: &str) -> bool {
    matches!(pos, "NOUN" | "PROPN" | "VERB" | "ADJ" | "ADV")
}

fn normalize(text: &str) -> String {
    text.to_lowercase().replace('\u{2019}', "'")
}

/// Noun chunks (`DET? ADJ* NOUN+`) and verb chunks (`AUX* VERB+`) read off
/// the POS sequence, left to right and non-overlapping.
pub fn noun_verb_chunks(sentence: &ParsedSentence) -> Vec<TokenRange> {
    let pos: Vec<&str> = sentence.tokens.iter().map(|t| t.pos.as_str()).collect();
    let nounish = |p: &str| p == "NOUN" || p == "PROPN";
    let n = pos.len();
    let mut out = Vec::new();
    let mut i = 0;
    while i < n {
        let mut j = i;
        if pos[j] == "DET" {
            j += 1;
        }
        while j < n && pos[j] == "ADJ" {
            j += 1;
        }
        let mut k = j;
        while k < n && nounish(pos[k]) {
            k += 1;
        }
        if k > j {
            out.push(TokenRange::new(i, k));
            i = k;
            continue;
        }
        let mut j = i;
        while j < n && pos[j] == "AUX" {
            j += 1;
        }
        let mut k = j;
        while k < n && pos[k] == "VERB" {
            k += 1;
        }
        if k > j {
            out.push(TokenRange::new(i, k));
            i = k;
            continue;
        }
        i += 1;
    }
    out
}

/// Decides question polarity. Sentiment is consulted first, then cues; the
/// trigger records whichever fired first.
pub fn detect_negation(question: &ParsedSentence) -> QuestionPolarity {
    let score: i32 = question
        .tokens
        .iter()
        .filter(|t| is_content_pos(&t.pos))
        .map(|t| polarity_of(&t.text))
        .sum();
    if score < 0 {
        return QuestionPolarity::negative(NegationTrigger::Sentiment { score });
    }

    let words: Vec<String> = question.tokens.iter().map(|t| normalize(&t.text)).collect();
    let chunks = noun_verb_chunks(question);
    for start in 0..words.len() {
        for cue in NEGATIVE_CUES {
            let end = start + cue.len();
            if end > words.len()
                || words[start..end]
                    .iter()
                    .zip(cue.iter())
                    .any(|(w, c)| w != c)
            {
                continue;
            }
            let cue_range = TokenRange::new(start, end);
            if chunks
                .iter()
                .any(|c| c.overlaps(&cue_range) || c.start == end)
            {
                return QuestionPolarity::negative(NegationTrigger::Cue(cue.join(" ")));
            }
        }
    }
    QuestionPolarity::positive()
}

/// The question's tokens prefixed with the polarity marker.
pub fn reformulate_question(question: &ParsedSentence, polarity: &QuestionPolarity) -> Vec<String> {
    std::iter::once(polarity.marker().to_string())
        .chain(question.tokens.iter().map(|t| t.text.clone()))
        .collect()
}
