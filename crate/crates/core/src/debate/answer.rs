//! Answer extraction and majority voting.

use super::AnswerFormat;
use crate::error::{Error, Result};

const BOXED: &str = "\\boxed{";

/// Content of the last `\boxed{...}` in `text`, braces balanced.
fn last_boxed(text: &str) -> Option<&str> {
    let start = text.rfind(BOXED)? + BOXED.len();
    let mut depth = 1usize;
    for (k, c) in text[start..].char_indices() {
        match c {
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(&text[start..start + k]);
                }
            }
            _ => {}
        }
    }
    None
}

fn strip_wrappers(mut s: &str) -> &str {
    loop {
        let t = s.trim();
        if let Some(inner) = t.strip_prefix('{').and_then(|r| r.strip_suffix('}')) {
            s = inner;
        } else if let Some(inner) = t.strip_prefix("\\text{").and_then(|r| r.strip_suffix('}')) {
            s = inner;
        } else {
            return t;
        }
    }
}

/// `"D) mental map."` → `"D"`, `"(b)"` → `"B"`.
fn canonical_choice(content: &str) -> Option<String> {
    let s = strip_wrappers(content).trim_start_matches(['(', '[', ' ']);
    let mut chars = s.chars();
    let first = chars.next()?;
    if !first.is_ascii_alphabetic() {
        return None;
    }
    match chars.next() {
        Some(c) if c.is_alphanumeric() => None,
        _ => Some(first.to_ascii_uppercase().to_string()),
    }
}

/// Parses a numeral, dropping commas, dollar signs and a trailing period.
/// Integral values print without a fractional part.
pub fn canonical_numeric(content: &str) -> Option<String> {
    let cleaned: String = strip_wrappers(content).chars().filter(|c| !matches!(c, ',' | '$' | ' ' | '\\')).collect();
    let cleaned = cleaned.trim_end_matches('.');
    let value: f64 = cleaned.parse().ok()?;
    if !value.is_finite() {
        return None;
    }
    if value.fract() == 0.0 && value.abs() < 1e15 {
        Some(format!("{}", value as i64))
    } else {
        Some(format!("{value}"))
    }
}

/// Canonical answer label, or `None` when no boxed answer can be parsed.
pub fn extract_answer(text: &str, format: AnswerFormat) -> Option<String> {
    let content = last_boxed(text)?;
    match format {
        AnswerFormat::Choice => canonical_choice(content),
        AnswerFormat::Numeric => canonical_numeric(content),
    }
}

/// Plurality over parsed answers; ties go to the label held by the lowest agent index.
pub fn majority_vote(answers: &[Option<String>]) -> Result<String> {
    let mut tally: Vec<(&str, usize)> = Vec::new();
    for a in answers.iter().flatten() {
        match tally.iter_mut().find(|(l, _)| *l == a.as_str()) {
            Some((_, c)) => *c += 1,
            None => tally.push((a, 1)),
        }
    }
    // tally is in order of first holder, so the first maximum is the tie winner
    let mut best: Option<(&str, usize)> = None;
    for &(label, count) in &tally {
        if best.is_none_or(|(_, c)| count > c) {
            best = Some((label, count));
        }
    }
    best.map(|(l, _)| l.to_string()).ok_or(Error::VoteFailure)
}
