use std::collections::HashMap;

use super::parse::{parse_question, parse_verbal_level};
use super::{Pipeline, PromptKind};
use crate::engine::template_question;
use crate::error::{BirdError, Result};
use crate::factor_model::{CompleteAssignment, FactorSpace};
use crate::llm::CompletionProvider;
use crate::trainer::TrainingSample;

/// Bullet list of the value statements an assignment selects.
pub fn render_facts(space: &FactorSpace, assignment: &CompleteAssignment) -> String {
    space.describe(assignment).iter().map(|t| format!("- {t}")).collect::<Vec<_>>().join("\n")
}

impl<P: CompletionProvider> Pipeline<P> {
    /// Verbal likelihood of outcome 1 under each complete assignment, mapped
    /// to its numeric target. The k-th repeat of an assignment reads sample k.
    pub fn elicit_targets(&self, space: &FactorSpace, assignments: &[CompleteAssignment]) -> Result<Vec<TrainingSample>> {
        let mut seen: HashMap<&CompleteAssignment, usize> = HashMap::new();
        let jobs: Vec<(&CompleteAssignment, usize)> = assignments
            .iter()
            .map(|a| {
                let n = seen.entry(a).or_default();
                *n += 1;
                (a, *n - 1)
            })
            .collect();
        let scenario = space.scenario();
        self.par_map(&jobs, |&(assignment, occurrence)| {
            space.check_assignment(assignment)?;
            let prompt = self.render(
                PromptKind::ElicitProbability,
                &[
                    ("scenario", &scenario.text),
                    ("facts", &render_facts(space, assignment)),
                    ("outcome", &scenario.outcome1),
                ],
            )?;
            let level = self.ask(&prompt, occurrence, parse_verbal_level)?;
            Ok(TrainingSample { assignment: assignment.clone(), target: level.probability() })
        })
    }

    /// Yes/no question for a value statement. Falls back to the fixed
    /// template when the model's answer is not a single question.
    pub fn rephrase_question(&self, value_text: &str) -> Result<String> {
        if value_text.trim().is_empty() {
            return Err(BirdError::validation("cannot rephrase an empty statement"));
        }
        let prompt = self.render(PromptKind::RephraseQuestion, &[("statement", value_text.trim())])?;
        match self.ask(&prompt, 0, parse_question) {
            Ok(q) => Ok(q),
            Err(BirdError::Parse { message, .. }) => {
                log::warn!("rephrasing fell back to the template: {message}");
                Ok(template_question(value_text))
            }
            Err(e) => Err(e),
        }
    }
}

/// Question text without a model.
pub fn fallback_question(value_text: &str) -> Result<String> {
    if value_text.trim().is_empty() {
        return Err(BirdError::validation("cannot rephrase an empty statement"));
    }
    Ok(template_question(value_text))
}
