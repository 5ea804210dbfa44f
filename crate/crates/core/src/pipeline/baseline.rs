use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::parse::{parse_percentage, parse_preference};
use super::vote::{majority_preference, majority_probability};
use super::{Pipeline, PromptKind};
use crate::engine::Preference;
use crate::error::{BirdError, Result};
use crate::factor_model::Scenario;
use crate::llm::CompletionProvider;

/// Direct verbalization baselines.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineMode {
    /// Ask for a probability.
    Vanilla,
    /// Ask for step-by-step reasoning ending in a probability.
    Cot,
    /// Ask which of two conditions better supports outcome 1.
    Ec,
}

impl fmt::Display for BaselineMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BaselineMode::Vanilla => "vanilla",
            BaselineMode::Cot => "cot",
            BaselineMode::Ec => "ec",
        })
    }
}

impl FromStr for BaselineMode {
    type Err = BirdError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "vanilla" => Ok(BaselineMode::Vanilla),
            "cot" => Ok(BaselineMode::Cot),
            "ec" => Ok(BaselineMode::Ec),
            other => Err(BirdError::validation(format!("unknown baseline mode `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineAnswer {
    /// Verbalized probability of outcome 1.
    Probability(f64),
    Preference(Preference),
}

impl<P: CompletionProvider> Pipeline<P> {
    /// Majority answer over `baseline_samples` samples. `Ec` takes two
    /// conditions, the other modes one.
    pub fn verbalize_baseline(&self, scenario: &Scenario, conditions: &[&str], mode: BaselineMode) -> Result<BaselineAnswer> {
        scenario.validate()?;
        let expected = if mode == BaselineMode::Ec { 2 } else { 1 };
        if conditions.len() != expected || conditions.iter().any(|c| c.trim().is_empty()) {
            return Err(BirdError::validation(format!("{mode} baseline needs {expected} non-empty condition(s)")));
        }
        let samples = 0..self.config.baseline_samples;
        let base = [("scenario", scenario.text.as_str()), ("outcome1", scenario.outcome1.as_str())];
        match mode {
            BaselineMode::Vanilla | BaselineMode::Cot => {
                let kind = if mode == BaselineMode::Vanilla { PromptKind::BaselineVanilla } else { PromptKind::BaselineCot };
                let prompt = self.render(kind, &[base[0], base[1], ("condition", conditions[0])])?;
                let votes = samples.map(|i| self.ask(&prompt, i, parse_percentage)).collect::<Result<Vec<_>>>()?;
                let p = majority_probability(&votes).expect("at least one finite vote");
                Ok(BaselineAnswer::Probability(p))
            }
            BaselineMode::Ec => {
                let prompt = self.render(
                    PromptKind::BaselineEc,
                    &[base[0], base[1], ("condition1", conditions[0]), ("condition2", conditions[1])],
                )?;
                let votes = samples.map(|i| self.ask(&prompt, i, parse_preference)).collect::<Result<Vec<_>>>()?;
                Ok(BaselineAnswer::Preference(majority_preference(&votes)))
            }
        }
    }
}
