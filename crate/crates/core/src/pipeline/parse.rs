//! Closed-vocabulary parsers for model answers.
//!
//! Each parser looks at the answer line (the last line carrying an
//! `Answer:` prefix, otherwise the last non-empty line), lowercases it,
//! strips the prefix and surrounding punctuation, then matches exactly.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::engine::Preference;
use crate::factor_model::Support;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParseError(pub String);

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

fn fail<T>(what: &str, text: &str) -> Result<T, ParseError> {
    let shown: String = text.chars().take(80).collect();
    Err(ParseError(format!("expected {what}, got {shown:?}")))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerbalLevel {
    VeryUnlikely,
    Unlikely,
    SomewhatUnlikely,
    Neutral,
    SomewhatLikely,
    Likely,
    VeryLikely,
}

impl VerbalLevel {
    pub const ALL: [VerbalLevel; 7] = [
        VerbalLevel::VeryUnlikely,
        VerbalLevel::Unlikely,
        VerbalLevel::SomewhatUnlikely,
        VerbalLevel::Neutral,
        VerbalLevel::SomewhatLikely,
        VerbalLevel::Likely,
        VerbalLevel::VeryLikely,
    ];

    pub fn phrase(self) -> &'static str {
        match self {
            VerbalLevel::VeryUnlikely => "very unlikely",
            VerbalLevel::Unlikely => "unlikely",
            VerbalLevel::SomewhatUnlikely => "somewhat unlikely",
            VerbalLevel::Neutral => "neutral",
            VerbalLevel::SomewhatLikely => "somewhat likely",
            VerbalLevel::Likely => "likely",
            VerbalLevel::VeryLikely => "very likely",
        }
    }

    /// Fixed numeric target for the level.
    pub fn probability(self) -> f64 {
        match self {
            VerbalLevel::VeryUnlikely => 0.0,
            VerbalLevel::Unlikely => 0.2,
            VerbalLevel::SomewhatUnlikely => 0.4,
            VerbalLevel::Neutral => 0.5,
            VerbalLevel::SomewhatLikely => 0.6,
            VerbalLevel::Likely => 0.8,
            VerbalLevel::VeryLikely => 1.0,
        }
    }
}

impl fmt::Display for VerbalLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.phrase())
    }
}

impl FromStr for VerbalLevel {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, ParseError> {
        parse_verbal_level(s)
    }
}

/// The line most likely to hold the final answer.
pub fn answer_line(text: &str) -> &str {
    let lines: Vec<&str> = text.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
    lines
        .iter()
        .rev()
        .find(|l| l.to_ascii_lowercase().trim_start_matches(['*', '#', ' ']).starts_with("answer"))
        .or(lines.last())
        .copied()
        .unwrap_or("")
}

fn is_edge_punct(c: char) -> bool {
    matches!(c, '.' | ',' | '!' | ';' | ':' | '"' | '\'' | '*' | '`' | '(' | ')' | '[' | ']' | '_' | '#')
        || c.is_whitespace()
}

/// Lowercased answer with any `answer:` prefix and edge punctuation removed.
pub fn normalize_answer(text: &str) -> String {
    let line = answer_line(text).to_lowercase();
    let mut s = line.trim_matches(is_edge_punct);
    if let Some(rest) = s.strip_prefix("answer") {
        s = rest.trim_start_matches(is_edge_punct);
    }
    let s = s.trim_matches(is_edge_punct);
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub fn parse_verbal_level(text: &str) -> Result<VerbalLevel, ParseError> {
    let norm = normalize_answer(text);
    VerbalLevel::ALL
        .into_iter()
        .find(|l| l.phrase() == norm)
        .map_or_else(|| fail("a likelihood level", text), Ok)
}

pub fn parse_support_label(text: &str) -> Result<Support, ParseError> {
    match normalize_answer(text).as_str() {
        "outcome 1" | "outcome1" => Ok(Support::Outcome1),
        "outcome 2" | "outcome2" => Ok(Support::Outcome2),
        "neutral" => Ok(Support::Neutral),
        _ => fail("Outcome 1, Outcome 2 or Neutral", text),
    }
}

pub fn parse_preference(text: &str) -> Result<Preference, ParseError> {
    match normalize_answer(text).as_str() {
        "condition 1" | "condition1" => Ok(Preference::Condition1),
        "condition 2" | "condition2" => Ok(Preference::Condition2),
        "same" => Ok(Preference::Same),
        _ => fail("Condition 1, Condition 2 or Same", text),
    }
}

pub fn parse_yes_no(text: &str) -> Result<bool, ParseError> {
    let norm = normalize_answer(text);
    match norm.split(|c: char| !c.is_alphanumeric()).next() {
        Some("yes") => Ok(true),
        Some("no") => Ok(false),
        _ => fail("Yes or No", text),
    }
}

fn numbers(s: &str) -> Vec<usize> {
    s.split(|c: char| !c.is_ascii_digit()).filter(|t| !t.is_empty()).filter_map(|t| t.parse().ok()).collect()
}

/// Comma-separated 1-based indices into a list of `count` items, or `None`.
/// Returns 0-based indices, sorted and deduplicated.
pub fn parse_index_list(text: &str, count: usize) -> Result<Vec<usize>, ParseError> {
    let norm = normalize_answer(text);
    let found = numbers(&norm);
    if found.is_empty() {
        return if norm == "none" { Ok(Vec::new()) } else { fail("a list of numbers or None", text) };
    }
    let mut out = Vec::with_capacity(found.len());
    for k in found {
        if k == 0 || k > count {
            return fail(&format!("numbers between 1 and {count}"), text);
        }
        out.push(k - 1);
    }
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

/// A single 1-based index into `count` items, or `None`.
pub fn parse_choice(text: &str, count: usize) -> Result<Option<usize>, ParseError> {
    let norm = normalize_answer(text);
    if norm == "none" {
        return Ok(None);
    }
    match numbers(&norm).as_slice() {
        [k] if (1..=count).contains(k) => Ok(Some(k - 1)),
        _ => fail(&format!("a number between 1 and {count} or None"), text),
    }
}

/// A percentage in the answer line, as a probability in [0, 1].
pub fn parse_percentage(text: &str) -> Result<f64, ParseError> {
    let line = answer_line(text);
    let lower = line.to_lowercase();
    let body = lower.trim_start_matches(is_edge_punct);
    let body = body.strip_prefix("answer").unwrap_or(body);
    let head = match body.rfind('%') {
        Some(i) => &body[..i],
        None => body.trim_matches(is_edge_punct),
    };
    let digits: String = {
        let tail: Vec<char> = head.trim_end().chars().rev().take_while(|c| c.is_ascii_digit() || *c == '.').collect();
        tail.into_iter().rev().collect()
    };
    if body.rfind('%').is_none() && digits.len() != head.trim_matches(is_edge_punct).len() {
        return fail("a percentage", text);
    }
    match digits.trim_matches('.').parse::<f64>() {
        Ok(v) if (0.0..=100.0).contains(&v) => Ok(v / 100.0),
        _ => fail("a percentage between 0% and 100%", text),
    }
}

/// Summarization output: `Factor k: name` headers followed by `- value` lines.
pub fn parse_factor_list(text: &str) -> Result<Vec<(String, Vec<String>)>, ParseError> {
    let mut factors: Vec<(String, Vec<String>)> = Vec::new();
    for raw in text.lines() {
        let line = raw.trim().trim_start_matches("**").trim_end_matches("**").trim();
        if line.is_empty() {
            continue;
        }
        let lower = line.to_ascii_lowercase();
        if let Some(rest) = lower.strip_prefix("factor") {
            let rest_orig = &line[line.len() - rest.len()..];
            if let Some(colon) = rest_orig.find(':') {
                let label = rest_orig[..colon].trim();
                if !label.is_empty() && label.chars().all(|c| c.is_ascii_digit()) {
                    let name = rest_orig[colon + 1..].trim().trim_matches('*').trim();
                    if name.is_empty() {
                        return fail("a factor name", raw);
                    }
                    factors.push((name.to_string(), Vec::new()));
                    continue;
                }
            }
        }
        if let Some(value) = line.strip_prefix(['-', '*', '•']) {
            let value = value.trim();
            if let (Some(current), false) = (factors.last_mut(), value.is_empty()) {
                if !current.1.iter().any(|v| v.eq_ignore_ascii_case(value)) {
                    current.1.push(value.to_string());
                }
            }
        }
    }
    let before = factors.len();
    factors.retain(|(_, values)| values.len() >= 2);
    if factors.len() < before {
        log::warn!("dropped {} factor(s) with fewer than two values", before - factors.len());
    }
    if factors.is_empty() {
        return fail("at least one `Factor k: name` block with two or more `- value` lines", text);
    }
    Ok(factors)
}

/// One generated sentence: the first non-empty line without list markers.
pub fn parse_sentence(text: &str) -> Result<String, ParseError> {
    let line = text.lines().map(str::trim).find(|l| !l.is_empty()).unwrap_or("");
    let mut s = line;
    if s.to_ascii_lowercase().starts_with("sentence:") {
        s = &s["sentence:".len()..];
    }
    let s = s.trim_start_matches(|c: char| c.is_ascii_digit() || matches!(c, '.' | ')' | '-' | '*' | ' '));
    let s = s.trim().trim_matches('"').trim();
    if s.is_empty() {
        return fail("a sentence", text);
    }
    Ok(s.to_string())
}

/// A single yes/no question ending in `?`.
pub fn parse_question(text: &str) -> Result<String, ParseError> {
    let line = text.lines().map(str::trim).find(|l| !l.is_empty()).unwrap_or("");
    let line = match line.get(..9) {
        Some(p) if p.eq_ignore_ascii_case("question:") => line[9..].trim(),
        _ => line,
    };
    let line = line.trim_matches('"').trim();
    let words = line.trim_end_matches('?').split_whitespace().count();
    if line.ends_with('?') && line.matches('?').count() == 1 && words >= 2 {
        Ok(line.to_string())
    } else {
        fail("a single yes-or-no question", text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn verbal_levels() {
        assert_eq!(parse_verbal_level("likely").unwrap().probability(), 0.8);
        assert_eq!(parse_verbal_level("NEUTRAL.").unwrap().probability(), 0.5);
        assert_eq!(parse_verbal_level("Answer: Very Likely").unwrap(), VerbalLevel::VeryLikely);
        assert_eq!(parse_verbal_level("It depends.\nAnswer: somewhat unlikely").unwrap(), VerbalLevel::SomewhatUnlikely);
        assert!(parse_verbal_level("probably").is_err());
        assert!(parse_verbal_level("likely or unlikely").is_err());
        assert!(parse_verbal_level("").is_err());
    }

    #[test]
    fn support_labels() {
        assert_eq!(parse_support_label("Outcome 1").unwrap(), Support::Outcome1);
        assert_eq!(parse_support_label("answer: outcome 2.").unwrap(), Support::Outcome2);
        assert_eq!(parse_support_label("Neutral").unwrap(), Support::Neutral);
        assert!(parse_support_label("Outcome 3").is_err());
    }

    #[test]
    fn indices_and_choices() {
        assert_eq!(parse_index_list("1, 3", 3).unwrap(), vec![0, 2]);
        assert_eq!(parse_index_list("None", 3).unwrap(), Vec::<usize>::new());
        assert!(parse_index_list("4", 3).is_err());
        assert!(parse_index_list("maybe", 3).is_err());
        assert_eq!(parse_choice("Answer: 2", 2).unwrap(), Some(1));
        assert_eq!(parse_choice("none.", 2).unwrap(), None);
        assert!(parse_choice("1, 2", 2).is_err());
    }

    #[test]
    fn yes_no() {
        assert!(parse_yes_no("Yes.").unwrap());
        assert!(!parse_yes_no("Answer: no, it does not").unwrap());
        assert!(parse_yes_no("unclear").is_err());
    }

    #[test]
    fn percentages() {
        assert_eq!(parse_percentage("70%").unwrap(), 0.7);
        assert_eq!(parse_percentage("Answer: 65.5 %").unwrap(), 0.655);
        assert_eq!(parse_percentage("Step 1: 20% of people...\nAnswer: 40%").unwrap(), 0.4);
        assert_eq!(parse_percentage("55").unwrap(), 0.55);
        assert!(parse_percentage("I cannot say").is_err());
        assert!(parse_percentage("140%").is_err());
        assert!(parse_percentage("about seventy percent").is_err());
    }

    #[test]
    fn preferences() {
        assert_eq!(parse_preference("Condition 1").unwrap(), Preference::Condition1);
        assert_eq!(parse_preference("condition2.").unwrap(), Preference::Condition2);
        assert_eq!(parse_preference("Same").unwrap(), Preference::Same);
        assert!(parse_preference("both").is_err());
    }

    #[test]
    fn factor_lists() {
        let text = "Here are the factors.\n\nFactor 1: Movement\n- You stay put\n- You walk around\n\
                    **Factor 2: Charger distance**\n* Near\n* Far\n* near\nFactor 3: Lonely\n- Only one\n";
        let parsed = parse_factor_list(text).unwrap();
        assert_eq!(parsed.len(), 2);
        assert_eq!(parsed[0], ("Movement".into(), vec!["You stay put".into(), "You walk around".into()]));
        assert_eq!(parsed[1].1, vec!["Near".to_string(), "Far".to_string()]);
        assert!(parse_factor_list("no factors here").is_err());
    }

    #[test]
    fn sentences_and_questions() {
        assert_eq!(parse_sentence("1. You move a lot.\nmore").unwrap(), "You move a lot.");
        assert_eq!(parse_sentence("Sentence: \"The desk is small.\"").unwrap(), "The desk is small.");
        assert!(parse_sentence("  \n").is_err());
        assert_eq!(parse_question("Will you walk around the room?").unwrap(), "Will you walk around the room?");
        assert_eq!(parse_question("Question: Is it raining?").unwrap(), "Is it raining?");
        assert!(parse_question("You will walk.").is_err());
        assert!(parse_question("Why? Who?").is_err());
    }
}
