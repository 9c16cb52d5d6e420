use std::sync::LazyLock;

use regex::Regex;

use crate::qa::QaFormat;

static MCQ_MARKER: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)\b(?:answer|option|choice)\s*(?:is|would be|:)?\s*[:\-]?\s*\**\(?([abcd])\)?\**(?:[^a-z0-9]|$)")
        .expect("valid regex")
});
static MCQ_PAREN: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\(([ABCD])\)").expect("valid regex"));
static TF_MARKER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\banswer\s*(?:is|:)?\s*[:\-]?\s*\**(true|false)\b").expect("valid regex"));

fn strip_token(token: &str) -> &str {
    token.trim_matches(|c: char| !c.is_ascii_alphanumeric())
}

fn pick<T>(mut it: impl DoubleEndedIterator<Item = T>, from_end: bool) -> Option<T> {
    if from_end {
        it.next_back()
    } else {
        it.next()
    }
}

/// Normalize a model reply to `"True"`, `"False"` or `"A"`..`"D"`.
///
/// Explicit markers (`answer is B`, `Answer: (C)`) win over bare tokens.
/// With `from_end` the last match is taken, so a closing verdict overrides
/// letters mentioned while reasoning. `None` means unparseable.
pub fn parse_answer_with(raw: &str, format: QaFormat, from_end: bool) -> Option<String> {
    let text = raw.trim();
    match format {
        QaFormat::Tf => {
            if let Some(c) = pick(TF_MARKER.captures_iter(text).collect::<Vec<_>>().into_iter(), from_end) {
                return Some(capitalize(&c[1]));
            }
            let tokens = text.split_whitespace().map(strip_token).map(str::to_ascii_lowercase);
            let hit = pick(tokens.filter(|t| t == "true" || t == "false").collect::<Vec<_>>().into_iter(), from_end)?;
            Some(capitalize(&hit))
        }
        QaFormat::Mcq => {
            let whole = strip_token(text);
            if whole.len() == 1 && "abcdABCD".contains(whole) {
                return Some(whole.to_ascii_uppercase());
            }
            if let Some(c) = pick(MCQ_MARKER.captures_iter(text).collect::<Vec<_>>().into_iter(), from_end) {
                return Some(c[1].to_ascii_uppercase());
            }
            if let Some(c) = pick(MCQ_PAREN.captures_iter(text).collect::<Vec<_>>().into_iter(), from_end) {
                return Some(c[1].to_string());
            }
            let tokens = text.split_whitespace().map(strip_token);
            pick(tokens.filter(|t| matches!(*t, "A" | "B" | "C" | "D")).collect::<Vec<_>>().into_iter(), from_end)
                .map(str::to_string)
        }
    }
}

/// First answer in the reply.
pub fn parse_answer(raw: &str, format: QaFormat) -> Option<String> {
    parse_answer_with(raw, format, false)
}

/// Last answer in the reply, for step-by-step outputs.
pub fn parse_answer_cot(raw: &str, format: QaFormat) -> Option<String> {
    parse_answer_with(raw, format, true)
}

fn capitalize(word: &str) -> String {
    let lower = word.to_ascii_lowercase();
    let mut chars = lower.chars();
    match chars.next() {
        Some(c) => c.to_ascii_uppercase().to_string() + chars.as_str(),
        None => String::new(),
    }
}
