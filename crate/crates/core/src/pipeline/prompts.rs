//! Prompt templates.
//!
//! Templates are plain text with `{{slot}}` placeholders. The built-in set is
//! compiled in; a directory holding files named `<name>.v1.txt` overrides any
//! template it contains.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{BirdError, Result};

pub const PROMPT_VERSION: &str = "v1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptKind {
    GenerateSentences,
    SummarizeFactors,
    DirectFactors,
    ClassifyValue,
    EntailFactors,
    EntailValue,
    EntailDirect,
    ElicitProbability,
    RephraseQuestion,
    BaselineVanilla,
    BaselineCot,
    BaselineEc,
}

impl PromptKind {
    pub const ALL: [PromptKind; 12] = [
        PromptKind::GenerateSentences,
        PromptKind::SummarizeFactors,
        PromptKind::DirectFactors,
        PromptKind::ClassifyValue,
        PromptKind::EntailFactors,
        PromptKind::EntailValue,
        PromptKind::EntailDirect,
        PromptKind::ElicitProbability,
        PromptKind::RephraseQuestion,
        PromptKind::BaselineVanilla,
        PromptKind::BaselineCot,
        PromptKind::BaselineEc,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PromptKind::GenerateSentences => "generate_sentences",
            PromptKind::SummarizeFactors => "summarize_factors",
            PromptKind::DirectFactors => "direct_factors",
            PromptKind::ClassifyValue => "classify_value",
            PromptKind::EntailFactors => "entail_factors",
            PromptKind::EntailValue => "entail_value",
            PromptKind::EntailDirect => "entail_direct",
            PromptKind::ElicitProbability => "elicit_probability",
            PromptKind::RephraseQuestion => "rephrase_question",
            PromptKind::BaselineVanilla => "baseline_vanilla",
            PromptKind::BaselineCot => "baseline_cot",
            PromptKind::BaselineEc => "baseline_ec",
        }
    }

    pub fn file_name(self) -> String {
        format!("{}.{PROMPT_VERSION}.txt", self.name())
    }

    fn builtin(self) -> &'static str {
        match self {
            PromptKind::GenerateSentences => include_str!("../../prompts/generate_sentences.v1.txt"),
            PromptKind::SummarizeFactors => include_str!("../../prompts/summarize_factors.v1.txt"),
            PromptKind::DirectFactors => include_str!("../../prompts/direct_factors.v1.txt"),
            PromptKind::ClassifyValue => include_str!("../../prompts/classify_value.v1.txt"),
            PromptKind::EntailFactors => include_str!("../../prompts/entail_factors.v1.txt"),
            PromptKind::EntailValue => include_str!("../../prompts/entail_value.v1.txt"),
            PromptKind::EntailDirect => include_str!("../../prompts/entail_direct.v1.txt"),
            PromptKind::ElicitProbability => include_str!("../../prompts/elicit_probability.v1.txt"),
            PromptKind::RephraseQuestion => include_str!("../../prompts/rephrase_question.v1.txt"),
            PromptKind::BaselineVanilla => include_str!("../../prompts/baseline_vanilla.v1.txt"),
            PromptKind::BaselineCot => include_str!("../../prompts/baseline_cot.v1.txt"),
            PromptKind::BaselineEc => include_str!("../../prompts/baseline_ec.v1.txt"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct PromptSet {
    templates: BTreeMap<PromptKind, String>,
}

impl Default for PromptSet {
    fn default() -> Self {
        PromptSet::builtin()
    }
}

impl PromptSet {
    pub fn builtin() -> Self {
        PromptSet { templates: PromptKind::ALL.iter().map(|&k| (k, k.builtin().to_string())).collect() }
    }

    /// Built-in templates, replaced by any `<name>.v1.txt` found in `dir`.
    pub fn with_overrides(dir: impl AsRef<Path>) -> Result<Self> {
        let mut set = PromptSet::builtin();
        for kind in PromptKind::ALL {
            let path = dir.as_ref().join(kind.file_name());
            if path.exists() {
                set.templates.insert(kind, std::fs::read_to_string(path)?);
            }
        }
        Ok(set)
    }

    pub fn template(&self, kind: PromptKind) -> &str {
        &self.templates[&kind]
    }

    pub fn set(&mut self, kind: PromptKind, template: impl Into<String>) {
        self.templates.insert(kind, template.into());
    }

    /// `name.version` labels for provenance records.
    pub fn versions(&self) -> Vec<String> {
        PromptKind::ALL.iter().map(|k| format!("{}.{PROMPT_VERSION}", k.name())).collect()
    }

    pub fn render(&self, kind: PromptKind, slots: &[(&str, &str)]) -> Result<String> {
        render(self.template(kind), slots)
            .map_err(|e| BirdError::validation(format!("template {}: {e}", kind.file_name())))
    }
}

/// Fills `{{slot}}` placeholders. Every placeholder must have a value.
pub fn render(template: &str, slots: &[(&str, &str)]) -> std::result::Result<String, String> {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(start) = rest.find("{{") {
        out.push_str(&rest[..start]);
        let after = &rest[start + 2..];
        let end = after.find("}}").ok_or("unterminated `{{`")?;
        let name = after[..end].trim();
        let value = slots
            .iter()
            .find(|(k, _)| *k == name)
            .map(|(_, v)| *v)
            .ok_or_else(|| format!("no value for slot `{name}`"))?;
        out.push_str(value);
        rest = &after[end + 2..];
    }
    out.push_str(rest);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fills_slots() {
        assert_eq!(render("a {{x}} b {{ y }}", &[("x", "1"), ("y", "2")]).unwrap(), "a 1 b 2");
        assert!(render("{{missing}}", &[]).is_err());
        assert!(render("{{open", &[("open", "")]).is_err());
    }

    #[test]
    fn builtin_templates_render() {
        let set = PromptSet::builtin();
        let all: Vec<(&str, &str)> = [
            "scenario", "outcome", "outcome1", "outcome2", "sentences1", "sentences2", "factor", "value",
            "condition", "factors", "values", "facts", "statement", "condition1", "condition2",
        ]
        .iter()
        .map(|s| (*s, "x"))
        .collect();
        for kind in PromptKind::ALL {
            let text = set.render(kind, &all).unwrap();
            assert!(!text.contains("{{"), "{}", kind.name());
        }
    }

    #[test]
    fn directory_overrides() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("rephrase_question.v1.txt"), "Q: {{statement}}").unwrap();
        let set = PromptSet::with_overrides(dir.path()).unwrap();
        assert_eq!(set.render(PromptKind::RephraseQuestion, &[("statement", "s")]).unwrap(), "Q: s");
        assert_eq!(set.template(PromptKind::ClassifyValue), PromptSet::builtin().template(PromptKind::ClassifyValue));
    }
}
