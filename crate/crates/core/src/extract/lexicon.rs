//! Word polarity lexicon used for question sentiment.
//!
//! Entries are base forms; lookups also try common inflectional suffixes so
//! "weakens", "weakened" and "weakening" all resolve to "weaken".

use std::collections::HashMap;

const NEGATIVE: &[&str] = &[
    "weaken",
    "undermine",
    "undercut",
    "challenge",
    "refute",
    "contradict",
    "flaw",
    "flawed",
    "doubt",
    "dispute",
    "wrong",
    "false",
    "fail",
    "failure",
    "bad",
    "worse",
    "worst",
    "poor",
    "unlikely",
    "incorrect",
    "invalid",
    "vulnerable",
    "criticism",
    "criticize",
    "counter",
    "damage",
    "harm",
    "problem",
    "error",
    "mistake",
    "weak",
    "impossible",
    "unreasonable",
    "questionable",
    "unsupported",
    "oppose",
    "deny",
    "reject",
    "discredit",
    "jeopardize",
    "unfounded",
    "inconsistent",
    "objection",
];

const POSITIVE: &[&str] = &[
    "strengthen",
    "support",
    "justify",
    "strong",
    "good",
    "best",
    "better",
    "valid",
    "correct",
    "reasonable",
    "likely",
    "help",
    "improve",
    "benefit",
    "confirm",
    "bolster",
    "reinforce",
    "right",
    "success",
    "successful",
    "consistent",
    "sound",
    "agree",
    "accurate",
    "prove",
];

#[derive(Debug, Clone)]
pub struct PolarityLexicon {
    entries: HashMap<&'static str, i32>,
}

impl Default for PolarityLexicon {
    fn default() -> Self {
        let mut entries = HashMap::new();
        for w in NEGATIVE {
            entries.insert(*w, -1);
        }
        for w in POSITIVE {
            entries.insert(*w, 1);
        }
        PolarityLexicon { entries }
    }
}

impl PolarityLexicon {
    /// Polarity in {-1, 0, +1}; 0 for unknown words.
    pub fn polarity(&self, word: &str) -> i32 {
        let w = word.to_lowercase();
        if let Some(p) = self.entries.get(w.as_str()) {
            return *p;
        }
        for candidate in stems(&w) {
            if let Some(p) = self.entries.get(candidate.as_str()) {
                return *p;
            }
        }
        0
    }
}

fn stems(w: &str) -> Vec<String> {
    let mut out = Vec::new();
    if let Some(s) = w.strip_suffix("ies") {
        out.push(format!("{s}y"));
    }
    if let Some(s) = w.strip_suffix("ied") {
        out.push(format!("{s}y"));
    }
    for suffix in ["es", "s", "ed", "d", "ing", "ly"] {
        if let Some(s) = w.strip_suffix(suffix) {
            if s.len() >= 3 {
                out.push(s.to_string());
                // "supporting" -> "support", but "making" -> "make"
                if suffix == "ing" || suffix == "ed" {
                    out.push(format!("{s}e"));
                }
            }
        }
    }
    out
}

pub fn polarity_of(word: &str) -> i32 {
    thread_local! {
        static LEXICON: PolarityLexicon = PolarityLexicon::default();
    }
    LEXICON.with(|l| l.polarity(word))
}
