use serde::{Deserialize, Serialize};

use super::parse::{parse_factor_list, parse_sentence, parse_support_label};
use super::vote::majority_support;
use super::{Pipeline, PromptKind};
use crate::error::{BirdError, Result};
use crate::factor_model::{Factor, FactorSpace, FactorValue, Outcome, Scenario, Support};
use crate::llm::CompletionProvider;

/// Intermediate output of factor generation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AbductionDraft {
    pub sentences1: Vec<String>,
    pub sentences2: Vec<String>,
    pub summary: String,
    pub factors: Vec<(String, Vec<String>)>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassificationVerdict {
    pub factor_id: String,
    pub value_id: String,
    pub votes: Vec<Support>,
    pub decided: Support,
}

/// `A`, `B`, ... then `F27`, `F28`, ...
fn factor_id(index: usize) -> String {
    if index < 26 {
        char::from(b'A' + index as u8).to_string()
    } else {
        format!("F{}", index + 1)
    }
}

fn value_id(factor_id: &str, index: usize) -> String {
    format!("{}{}", factor_id.to_ascii_lowercase(), index + 1)
}

/// Builds a space from parsed `(name, values)` pairs. All labels start Neutral.
pub fn space_from_factors(scenario: &Scenario, factors: &[(String, Vec<String>)]) -> Result<FactorSpace> {
    let factors = factors
        .iter()
        .enumerate()
        .map(|(j, (name, values))| {
            let id = factor_id(j);
            Factor {
                values: values
                    .iter()
                    .enumerate()
                    .map(|(k, text)| FactorValue { value_id: value_id(&id, k), text: text.clone(), support: Support::Neutral })
                    .collect(),
                factor_id: id,
                name: name.clone(),
            }
        })
        .collect();
    FactorSpace::new(scenario.clone(), factors)
}

impl<P: CompletionProvider> Pipeline<P> {
    fn scenario_slots(scenario: &Scenario) -> [(&'static str, &str); 3] {
        [("scenario", &scenario.text), ("outcome1", &scenario.outcome1), ("outcome2", &scenario.outcome2)]
    }

    fn sample_sentences(&self, scenario: &Scenario, outcome: Outcome) -> Result<Vec<String>> {
        let [s, o1, o2] = Self::scenario_slots(scenario);
        let prompt = self.render(
            PromptKind::GenerateSentences,
            &[s, o1, o2, ("outcome", scenario.outcome_text(outcome))],
        )?;
        let indices: Vec<usize> = (0..self.config.sentences_per_outcome).collect();
        let mut sentences = self.par_map(&indices, |&i| self.ask(&prompt, i, parse_sentence))?;
        let mut seen = std::collections::HashSet::new();
        sentences.retain(|s| seen.insert(s.to_lowercase()));
        Ok(sentences)
    }

    /// Samples supporting situations per outcome, then summarizes them into
    /// factors. With `direct_generation` the factors are requested at once.
    pub fn generate_draft(&self, scenario: &Scenario) -> Result<AbductionDraft> {
        scenario.validate()?;
        let [s, o1, o2] = Self::scenario_slots(scenario);
        let (sentences1, sentences2, prompt) = if self.config.direct_generation {
            (Vec::new(), Vec::new(), self.render(PromptKind::DirectFactors, &[s, o1, o2])?)
        } else {
            let sentences1 = self.sample_sentences(scenario, Outcome::Outcome1)?;
            let sentences2 = self.sample_sentences(scenario, Outcome::Outcome2)?;
            if sentences1.is_empty() || sentences2.is_empty() {
                return Err(BirdError::validation("no situations were generated for an outcome"));
            }
            let list = |v: &[String]| v.iter().map(|s| format!("- {s}")).collect::<Vec<_>>().join("\n");
            let prompt = self.render(
                PromptKind::SummarizeFactors,
                &[s, o1, o2, ("sentences1", &list(&sentences1)), ("sentences2", &list(&sentences2))],
            )?;
            (sentences1, sentences2, prompt)
        };
        let (summary, factors) =
            self.ask(&prompt, 0, |text| parse_factor_list(text).map(|f| (text.to_string(), f)))?;
        Ok(AbductionDraft { sentences1, sentences2, summary, factors })
    }

    pub fn generate_factors(&self, scenario: &Scenario) -> Result<FactorSpace> {
        let draft = self.generate_draft(scenario)?;
        space_from_factors(scenario, &draft.factors)
    }

    /// Labels every value by majority vote and drops factors whose values
    /// all share one label.
    pub fn classify_and_prune(&self, space: &FactorSpace) -> Result<(FactorSpace, Vec<ClassificationVerdict>)> {
        let scenario = space.scenario();
        let [s, o1, o2] = Self::scenario_slots(scenario);
        let cells: Vec<(usize, usize)> = space
            .factors()
            .iter()
            .enumerate()
            .flat_map(|(j, f)| (0..f.cardinality()).map(move |k| (j, k)))
            .collect();
        let votes = self.par_map(&cells, |&(j, k)| {
            let factor = space.factor(j);
            let prompt = self.render(
                PromptKind::ClassifyValue,
                &[s, o1, o2, ("factor", &factor.name), ("value", &factor.values[k].text)],
            )?;
            (0..self.config.classification_votes)
                .map(|i| self.ask(&prompt, i, parse_support_label))
                .collect::<Result<Vec<_>>>()
        })?;

        let mut supports: Vec<Vec<Support>> = space.factors().iter().map(|f| Vec::with_capacity(f.cardinality())).collect();
        let mut verdicts = Vec::with_capacity(cells.len());
        for (&(j, k), votes) in cells.iter().zip(votes) {
            let decided = majority_support(&votes);
            supports[j].push(decided);
            verdicts.push(ClassificationVerdict {
                factor_id: space.factor(j).factor_id.clone(),
                value_id: space.factor(j).values[k].value_id.clone(),
                votes,
                decided,
            });
        }
        let labelled = space.with_supports(&supports)?;
        let pruned: Vec<&str> =
            labelled.factors().iter().filter(|f| f.is_prunable()).map(|f| f.factor_id.as_str()).collect();
        if pruned.len() == labelled.len() {
            return Err(BirdError::validation("every factor was pruned: no factor separates the outcomes"));
        }
        if !pruned.is_empty() {
            log::info!("pruning factors {pruned:?}");
        }
        Ok((labelled.without_factors(&pruned)?, verdicts))
    }
}
