//! Extraction of a binary satire verdict from free-form model output.
//!
//! The prompt contract asks for a bare `1` (satire) or `0` (serious). The
//! first standalone `0`/`1` token wins; Arabic-Indic and Eastern
//! Arabic-Indic digits are folded to ASCII first. When no digit token is
//! present, a keyword scan in English and Arabic is used as a fallback, with
//! a preceding negation word (within three tokens) flipping the keyword.

use std::ops::Range;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PredictedLabel {
    Satire,
    NonSatire,
    Unparseable,
}

impl PredictedLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            PredictedLabel::Satire => "satire",
            PredictedLabel::NonSatire => "non-satire",
            PredictedLabel::Unparseable => "unparseable",
        }
    }
}

impl std::str::FromStr for PredictedLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "satire" | "1" => Ok(PredictedLabel::Satire),
            "non-satire" | "nonsatire" | "0" => Ok(PredictedLabel::NonSatire),
            "unparseable" | "?" => Ok(PredictedLabel::Unparseable),
            other => Err(format!("unknown label {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedPrediction {
    pub label: PredictedLabel,
    pub raw: String,
    /// Character (not byte) range of the decisive token in `raw`.
    pub matched_span: Option<Range<usize>>,
}

impl ParsedPrediction {
    pub fn unparseable(raw: impl Into<String>) -> ParsedPrediction {
        ParsedPrediction {
            label: PredictedLabel::Unparseable,
            raw: raw.into(),
            matched_span: None,
        }
    }

    pub fn is_parsed(&self) -> bool {
        self.label != PredictedLabel::Unparseable
    }

    /// The decisive substring of `raw`, if any.
    pub fn matched_text(&self) -> Option<String> {
        let span = self.matched_span.as_ref()?;
        Some(self.raw.chars().skip(span.start).take(span.len()).collect())
    }
}

fn fold_digit(c: char) -> char {
    match c {
        '\u{0660}'..='\u{0669}' => char::from(b'0' + (c as u32 - 0x0660) as u8),
        '\u{06F0}'..='\u{06F9}' => char::from(b'0' + (c as u32 - 0x06F0) as u8),
        _ => c,
    }
}

/// Maps Arabic-Indic (U+0660..U+0669) and Eastern Arabic-Indic
/// (U+06F0..U+06F9) digits to ASCII; everything else is left alone.
pub fn normalize_digits(text: &str) -> String {
    text.chars().map(fold_digit).collect()
}

/// Alphanumeric runs of the digit-folded text, with character offsets.
fn tokens(chars: &[char]) -> Vec<(Range<usize>, String)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, c) in chars.iter().enumerate() {
        match (c.is_alphanumeric(), start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                out.push((s..i, chars[s..i].iter().collect()));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push((s..chars.len(), chars[s..].iter().collect()));
    }
    out
}

const NEGATIONS: &[&str] = &[
    "not", "no", "non", "never", "isn", "aren", "wasn", "doesn", "don", "neither", "nor", "ليس",
    "ليست", "لا", "لم", "غير",
];

const NEGATION_WINDOW: usize = 3;

fn keyword_polarity(token: &str) -> Option<PredictedLabel> {
    let lower = token.to_lowercase();
    match lower.as_str() {
        "satire" | "satirical" | "satiric" => return Some(PredictedLabel::Satire),
        "serious" => return Some(PredictedLabel::NonSatire),
        _ => {}
    }
    // Arabic keywords may carry the definite article and inflectional
    // suffixes (ساخرة, الساخر, جادة).
    let stem = lower.strip_prefix("ال").unwrap_or(&lower);
    let arabic = |base: &str, suffixes: &[&str]| {
        stem.strip_prefix(base)
            .is_some_and(|rest| suffixes.contains(&rest))
    };
    if arabic("ساخر", &["", "ة", "ا"]) || arabic("سخرية", &[""]) || arabic("تهكمي", &["", "ة"])
    {
        Some(PredictedLabel::Satire)
    } else if arabic("جاد", &["", "ة", "ا"]) || arabic("جدي", &["", "ة"]) {
        Some(PredictedLabel::NonSatire)
    } else {
        None
    }
}

fn flip(label: PredictedLabel) -> PredictedLabel {
    match label {
        PredictedLabel::Satire => PredictedLabel::NonSatire,
        PredictedLabel::NonSatire => PredictedLabel::Satire,
        PredictedLabel::Unparseable => PredictedLabel::Unparseable,
    }
}

/// Parses a model response into a satire verdict. Total: every input
/// yields a [`ParsedPrediction`], possibly `Unparseable`.
pub fn parse_label(text: &str) -> ParsedPrediction {
    let chars: Vec<char> = text.chars().map(fold_digit).collect();
    let toks = tokens(&chars);

    for (span, tok) in &toks {
        let label = match tok.as_str() {
            "1" => PredictedLabel::Satire,
            "0" => PredictedLabel::NonSatire,
            _ => continue,
        };
        return ParsedPrediction {
            label,
            raw: text.to_string(),
            matched_span: Some(span.clone()),
        };
    }

    for (i, (span, tok)) in toks.iter().enumerate() {
        let Some(mut label) = keyword_polarity(tok) else {
            continue;
        };
        let window = &toks[i.saturating_sub(NEGATION_WINDOW)..i];
        if window
            .iter()
            .any(|(_, w)| NEGATIONS.contains(&w.to_lowercase().as_str()))
        {
            label = flip(label);
        }
        return ParsedPrediction {
            label,
            raw: text.to_string(),
            matched_span: Some(span.clone()),
        };
    }

    ParsedPrediction::unparseable(text)
}
