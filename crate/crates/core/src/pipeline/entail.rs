use super::parse::{parse_choice, parse_index_list, parse_yes_no};
use super::{numbered, Pipeline, PromptKind};
use crate::error::{BirdError, Result};
use crate::factor_model::{FactorSpace, PartialObservation};
use crate::llm::CompletionProvider;

impl<P: CompletionProvider> Pipeline<P> {
    /// Picks one of `candidates` (value indices of factor `j`), or none.
    fn select_value(&self, space: &FactorSpace, condition: &str, j: usize, candidates: &[usize], pass: usize) -> Result<Option<usize>> {
        let factor = space.factor(j);
        let values = numbered(candidates.iter().map(|&k| factor.values[k].text.as_str()));
        let prompt = self.render(
            PromptKind::EntailValue,
            &[
                ("scenario", &space.scenario().text),
                ("condition", condition),
                ("factor", &factor.name),
                ("values", &values),
            ],
        )?;
        Ok(self.ask(&prompt, pass, |t| parse_choice(t, candidates.len()))?.map(|i| candidates[i]))
    }

    fn hierarchy_pass(&self, space: &FactorSpace, condition: &str, pass: usize) -> Result<Vec<Option<usize>>> {
        let factors = numbered(space.factors().iter().map(|f| f.name.as_str()));
        let prompt = self.render(
            PromptKind::EntailFactors,
            &[("scenario", &space.scenario().text), ("condition", condition), ("factors", &factors)],
        )?;
        let implied = self.ask(&prompt, pass, |t| parse_index_list(t, space.len()))?;
        let mut picks = vec![None; space.len()];
        for j in implied {
            let all: Vec<usize> = (0..space.factor(j).cardinality()).collect();
            picks[j] = self.select_value(space, condition, j, &all, pass)?;
        }
        Ok(picks)
    }

    fn direct_pass(&self, space: &FactorSpace, condition: &str, pass: usize) -> Result<Vec<Option<usize>>> {
        let mut picks = Vec::with_capacity(space.len());
        for (j, factor) in space.factors().iter().enumerate() {
            let mut yes = Vec::new();
            for (k, value) in factor.values.iter().enumerate() {
                let prompt = self.render(
                    PromptKind::EntailDirect,
                    &[
                        ("scenario", &space.scenario().text),
                        ("condition", condition),
                        ("factor", &factor.name),
                        ("value", &value.text),
                    ],
                )?;
                if self.ask(&prompt, pass, parse_yes_no)? {
                    yes.push(k);
                }
            }
            picks.push(match yes.len() {
                0 => None,
                1 => Some(yes[0]),
                _ => self.select_value(space, condition, j, &yes, pass)?,
            });
        }
        Ok(picks)
    }

    /// Per-pass value picks, one entry per factor.
    pub fn entailment_passes(&self, space: &FactorSpace, condition: &str) -> Result<Vec<Vec<Option<usize>>>> {
        if condition.trim().is_empty() {
            return Err(BirdError::validation("condition text is empty"));
        }
        let config = self.config.entailment;
        let passes: Vec<usize> = (0..config.total_samples).collect();
        self.par_map(&passes, |&p| {
            if p < config.hierarchy_count {
                self.hierarchy_pass(space, condition, p)
            } else {
                self.direct_pass(space, condition, p)
            }
        })
    }

    /// Factor values implied by a condition. A value is observed when a
    /// strict majority of passes pick it.
    pub fn entail(&self, space: &FactorSpace, condition: &str) -> Result<PartialObservation> {
        let passes = self.entailment_passes(space, condition)?;
        Ok(space.observation_from_indices(&majority_picks(&passes, space.len())))
    }
}

pub(crate) fn majority_picks(passes: &[Vec<Option<usize>>], factors: usize) -> Vec<Option<usize>> {
    (0..factors)
        .map(|j| {
            let mut counts = std::collections::BTreeMap::new();
            for pick in passes.iter().filter_map(|p| p[j]) {
                *counts.entry(pick).or_insert(0usize) += 1;
            }
            counts.into_iter().find(|&(_, c)| 2 * c > passes.len()).map(|(k, _)| k)
        })
        .collect()
}
