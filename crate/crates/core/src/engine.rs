//! Deductive inference: outcome probabilities for a partial observation by
//! marginalizing over the complete-information space.
//!
//! Observed factors put all their mass on one value; unobserved factors are
//! uniform over their values. Only consistent assignments carry weight, so
//! the sum walks those alone.

use std::borrow::Cow;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{BirdError, Result};
use crate::factor_model::{
    consistent_resolved, enumerate_consistent, CompleteAssignment, FactorSpace, Outcome, PartialObservation,
    DEFAULT_SPACE_CAP,
};
use crate::pool::{outcome_scores, EstimatorKind, ProbabilityTable};

pub const DEFAULT_TIE_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub space_cap: u64,
    pub tie_tolerance: f64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig { space_cap: DEFAULT_SPACE_CAP, tie_tolerance: DEFAULT_TIE_TOLERANCE }
    }
}

/// Per-factor belief given a context.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum FactorDistribution {
    Point(usize),
    Uniform,
}

impl FactorDistribution {
    pub fn probability(&self, value: usize, cardinality: usize) -> f64 {
        match *self {
            FactorDistribution::Point(v) => {
                if v == value {
                    1.0
                } else {
                    0.0
                }
            }
            FactorDistribution::Uniform => 1.0 / cardinality as f64,
        }
    }
}

pub fn observation_distribution(space: &FactorSpace, obs: &PartialObservation) -> Result<Vec<FactorDistribution>> {
    Ok(space
        .resolve(obs)?
        .into_iter()
        .map(|p| p.map_or(FactorDistribution::Uniform, FactorDistribution::Point))
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Outcome1,
    Outcome2,
    Tie,
    Unknown,
}

/// One consistent assignment's share of the marginal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Contribution {
    /// Value ids in factor order.
    pub values: Vec<String>,
    pub weight: f64,
    pub p_outcome1: f64,
    pub p_outcome2: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutcomeEstimate {
    pub p_outcome1: f64,
    pub p_outcome2: f64,
    pub verdict: Verdict,
    pub contributions: Vec<Contribution>,
}

impl OutcomeEstimate {
    pub fn probability(&self, outcome: Outcome) -> f64 {
        match outcome {
            Outcome::Outcome1 => self.p_outcome1,
            Outcome::Outcome2 => self.p_outcome2,
        }
    }

    /// The outcome with the higher probability; outcome 1 on exact ties.
    pub fn leader(&self) -> Outcome {
        if self.p_outcome1 >= self.p_outcome2 {
            Outcome::Outcome1
        } else {
            Outcome::Outcome2
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OverrideEntry {
    pub factor_id: String,
    pub value_id: String,
    pub p: f64,
}

/// Human-supplied replacements for table entries.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PreferenceOverride(Vec<OverrideEntry>);

impl PreferenceOverride {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds or replaces the override for one value.
    pub fn set(&mut self, factor_id: &str, value_id: &str, p: f64) {
        match self.0.iter_mut().find(|e| e.factor_id == factor_id && e.value_id == value_id) {
            Some(entry) => entry.p = p,
            None => self.0.push(OverrideEntry { factor_id: factor_id.into(), value_id: value_id.into(), p }),
        }
    }

    pub fn entries(&self) -> &[OverrideEntry] {
        &self.0
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Checks ids and that every probability lies in `[delta, 1 - delta]`.
    pub fn validate(&self, space: &FactorSpace, delta: f64) -> Result<()> {
        for e in &self.0 {
            let fi = space
                .factor_index(&e.factor_id)
                .ok_or_else(|| BirdError::UnknownFactor(e.factor_id.clone()))?;
            space.factor(fi).value_index(&e.value_id).ok_or_else(|| BirdError::UnknownValue {
                factor: e.factor_id.clone(),
                value: e.value_id.clone(),
            })?;
            if !(e.p >= delta && e.p <= 1.0 - delta) {
                return Err(BirdError::Domain(e.p));
            }
        }
        Ok(())
    }

    /// A copy of `table` with the overrides written in.
    pub fn apply(&self, space: &FactorSpace, table: &ProbabilityTable) -> Result<ProbabilityTable> {
        self.validate(space, table.delta())?;
        let mut out = table.clone();
        for e in &self.0 {
            let fi = space.factor_index(&e.factor_id).expect("validated");
            let vi = space.factor(fi).value_index(&e.value_id).expect("validated");
            out.set(fi, vi, e.p);
        }
        Ok(out)
    }
}

/// `P(f | C)`: zero on conflict, otherwise the product of `1 / card` over
/// unobserved factors.
pub fn assignment_weight(obs: &PartialObservation, f: &CompleteAssignment, space: &FactorSpace) -> Result<f64> {
    space.check_assignment(f)?;
    let pinned = space.resolve(obs)?;
    if !consistent_resolved(f, &pinned) {
        return Ok(0.0);
    }
    Ok(consistent_weight(space, &pinned))
}

fn consistent_weight(space: &FactorSpace, pinned: &[Option<usize>]) -> f64 {
    space
        .factors()
        .iter()
        .zip(pinned)
        .filter(|(_, p)| p.is_none())
        .fold(1.0, |acc, (f, _)| acc * (1.0 / f.cardinality() as f64))
}

fn verdict_for(p1: f64, p2: f64, tolerance: f64) -> Verdict {
    // With complementary scores |p1 - p2| = 2 |p1 - 0.5|.
    if (p1 - p2).abs() < 2.0 * tolerance {
        Verdict::Tie
    } else if p1 > p2 {
        Verdict::Outcome1
    } else {
        Verdict::Outcome2
    }
}

pub fn infer(
    space: &FactorSpace,
    table: &ProbabilityTable,
    obs: &PartialObservation,
    kind: EstimatorKind,
    overrides: Option<&PreferenceOverride>,
) -> Result<OutcomeEstimate> {
    infer_with(&EngineConfig::default(), space, table, obs, kind, overrides)
}

pub fn infer_with(
    config: &EngineConfig,
    space: &FactorSpace,
    table: &ProbabilityTable,
    obs: &PartialObservation,
    kind: EstimatorKind,
    overrides: Option<&PreferenceOverride>,
) -> Result<OutcomeEstimate> {
    if !table.covers(space) {
        return Err(BirdError::validation("probability table does not cover the factor space"));
    }
    // Fixed-init scoring is the trained pool over the initial table, with
    // any overrides written on top.
    let (mut table, kind) = match kind {
        EstimatorKind::FixedInit => (Cow::Owned(table.to_initial()), EstimatorKind::Trained),
        other => (Cow::Borrowed(table), other),
    };
    if let Some(o) = overrides.filter(|o| !o.is_empty()) {
        table = Cow::Owned(o.apply(space, &table)?);
    }
    let table = table.as_ref();
    let pinned = space.resolve(obs)?;
    let weight = consistent_weight(space, &pinned);
    let mut p1 = 0.0;
    let mut p2 = 0.0;
    let mut contributions = Vec::new();
    for f in enumerate_consistent(space, &pinned, config.space_cap)? {
        let scores = outcome_scores(kind, table, &f)?;
        p1 += scores.outcome1 * weight;
        p2 += scores.outcome2 * weight;
        contributions.push(Contribution {
            values: f.value_ids(space).into_iter().map(|(_, v)| v.to_string()).collect(),
            weight,
            p_outcome1: scores.outcome1,
            p_outcome2: scores.outcome2,
        });
    }
    let verdict = if obs.is_empty() { Verdict::Unknown } else { verdict_for(p1, p2, config.tie_tolerance) };
    Ok(OutcomeEstimate { p_outcome1: p1, p_outcome2: p2, verdict, contributions })
}

/// Which of two conditions better supports an outcome.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preference {
    Condition1,
    Condition2,
    Same,
}

/// Scores each observation on its own and compares the target outcome's
/// probability.
pub fn pairwise_prefer(
    space: &FactorSpace,
    table: &ProbabilityTable,
    obs1: &PartialObservation,
    obs2: &PartialObservation,
    target: Outcome,
    kind: EstimatorKind,
) -> Result<Preference> {
    pairwise_prefer_with(&EngineConfig::default(), space, table, obs1, obs2, target, kind)
}

pub fn pairwise_prefer_with(
    config: &EngineConfig,
    space: &FactorSpace,
    table: &ProbabilityTable,
    obs1: &PartialObservation,
    obs2: &PartialObservation,
    target: Outcome,
    kind: EstimatorKind,
) -> Result<Preference> {
    if obs1.is_empty() || obs2.is_empty() {
        let which = if obs1.is_empty() { "condition 1" } else { "condition 2" };
        return Err(BirdError::NotComparable(format!("{which} implies no factor value")));
    }
    let e1 = infer_with(config, space, table, obs1, kind, None)?;
    let e2 = infer_with(config, space, table, obs2, kind, None)?;
    Ok(compare_scores(e1.probability(target), e2.probability(target), config.tie_tolerance))
}

pub fn compare_scores(s1: f64, s2: f64, tolerance: f64) -> Preference {
    if (s1 - s2).abs() < tolerance {
        Preference::Same
    } else if s1 > s2 {
        Preference::Condition1
    } else {
        Preference::Condition2
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FollowupQuestion {
    pub factor_id: String,
    pub value_id: String,
    pub question_text: String,
}

/// How the follow-up factor is chosen.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FollowupStrategy {
    /// Uniformly random unobserved factor (seeded).
    #[default]
    Random,
    /// The unobserved value that raises the leading outcome the most.
    MaxShift,
}

/// Yes/no question used when no model is available to rephrase.
pub fn template_question(value_text: &str) -> String {
    let text = value_text.trim().trim_end_matches(['.', '!', '?', ';']).trim_end();
    let mut chars = text.chars();
    let body = match (chars.next(), chars.clone().next()) {
        (Some(first), Some(second)) if first.is_uppercase() && !second.is_uppercase() => {
            first.to_lowercase().chain(chars).collect::<String>()
        }
        _ => text.to_string(),
    };
    format!("Is it the case that {body}?")
}

pub fn select_followup(
    space: &FactorSpace,
    table: &ProbabilityTable,
    obs: &PartialObservation,
    seed: u64,
) -> Result<FollowupQuestion> {
    select_followup_with(&EngineConfig::default(), space, table, obs, seed, FollowupStrategy::Random)
}

pub fn select_followup_with(
    config: &EngineConfig,
    space: &FactorSpace,
    table: &ProbabilityTable,
    obs: &PartialObservation,
    seed: u64,
    strategy: FollowupStrategy,
) -> Result<FollowupQuestion> {
    let pinned = space.resolve(obs)?;
    let unobserved: Vec<usize> = (0..space.len()).filter(|&j| pinned[j].is_none()).collect();
    if unobserved.is_empty() {
        return Err(BirdError::NothingToAsk);
    }
    let current = infer_with(config, space, table, obs, EstimatorKind::Trained, None)?;
    let leader = current.leader();

    let score = |factor: usize, value: usize| -> Result<f64> {
        let f = space.factor(factor);
        let extended = obs.clone().with(&f.factor_id, &f.values[value].value_id);
        Ok(infer_with(config, space, table, &extended, EstimatorKind::Trained, None)?.probability(leader))
    };
    let best_in = |factor: usize| -> Result<(usize, f64)> {
        let mut best = (0, score(factor, 0)?);
        for v in 1..space.factor(factor).cardinality() {
            let s = score(factor, v)?;
            if s > best.1 {
                best = (v, s);
            }
        }
        Ok(best)
    };

    let (factor, value) = match strategy {
        FollowupStrategy::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let factor = unobserved[rng.random_range(0..unobserved.len())];
            (factor, best_in(factor)?.0)
        }
        FollowupStrategy::MaxShift => {
            let mut best: Option<(usize, usize, f64)> = None;
            for &j in &unobserved {
                let (v, s) = best_in(j)?;
                if best.is_none_or(|b| s > b.2) {
                    best = Some((j, v, s));
                }
            }
            let (j, v, _) = best.expect("at least one unobserved factor");
            (j, v)
        }
    };
    let f = space.factor(factor);
    Ok(FollowupQuestion {
        factor_id: f.factor_id.clone(),
        value_id: f.values[value].value_id.clone(),
        question_text: template_question(&f.values[value].text),
    })
}

/// Folds a yes/no answer into the observation.
///
/// "No" on a binary factor observes the other value; on a larger factor it
/// leaves the factor unobserved.
pub fn apply_answer(
    space: &FactorSpace,
    obs: &PartialObservation,
    question: &FollowupQuestion,
    answer: bool,
) -> Result<PartialObservation> {
    let fi = space
        .factor_index(&question.factor_id)
        .ok_or_else(|| BirdError::UnknownFactor(question.factor_id.clone()))?;
    let factor = space.factor(fi);
    let vi = factor.value_index(&question.value_id).ok_or_else(|| BirdError::UnknownValue {
        factor: question.factor_id.clone(),
        value: question.value_id.clone(),
    })?;
    if obs.contains(&question.factor_id) {
        return Err(BirdError::AlreadyObserved(question.factor_id.clone()));
    }
    let mut out = obs.clone();
    if answer {
        out.insert(&factor.factor_id, &factor.values[vi].value_id);
    } else if factor.cardinality() == 2 {
        out.insert(&factor.factor_id, &factor.values[1 - vi].value_id);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::factor_model::testing::space_with;
    use crate::factor_model::{enumerate_space, Support};
    use crate::pool::{pool_equal, DEFAULT_DELTA};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    /// Two binary factors with p(a1)=0.75, p(a2)=0.25, p(b1)=0.75, p(b2)=0.5.
    fn worked() -> (FactorSpace, ProbabilityTable) {
        let space = space_with(&[2, 2])
            .with_supports(&[
                vec![Support::Outcome1, Support::Outcome2],
                vec![Support::Outcome1, Support::Neutral],
            ])
            .unwrap();
        let table = ProbabilityTable::from_probabilities(&space, &[vec![0.75, 0.25], vec![0.75, 0.5]], DEFAULT_DELTA)
            .unwrap();
        (space, table)
    }

    fn oracle_infer(space: &FactorSpace, table: &ProbabilityTable, obs: &PartialObservation) -> f64 {
        let dist = observation_distribution(space, obs).unwrap();
        enumerate_space(space)
            .unwrap()
            .map(|f| {
                let w: f64 = f
                    .0
                    .iter()
                    .enumerate()
                    .map(|(j, &v)| dist[j].probability(v, space.factor(j).cardinality()))
                    .product();
                w * pool_equal(table, &f).unwrap()
            })
            .sum()
    }

    #[test]
    fn weights_follow_observation() {
        let space = space_with(&[2, 2, 2]);
        let all = PartialObservation::new().with("f0", "f0v0").with("f1", "f1v1").with("f2", "f2v0");
        assert_eq!(assignment_weight(&all, &CompleteAssignment(vec![0, 1, 0]), &space).unwrap(), 1.0);
        assert_eq!(assignment_weight(&all, &CompleteAssignment(vec![1, 1, 0]), &space).unwrap(), 0.0);
        let one = PartialObservation::new().with("f1", "f1v0");
        assert_eq!(assignment_weight(&one, &CompleteAssignment(vec![1, 0, 1]), &space).unwrap(), 0.25);
    }

    #[test]
    fn worked_marginalization() {
        let (space, table) = worked();
        let obs = PartialObservation::new().with("f0", "f0v0");
        let est = infer(&space, &table, &obs, EstimatorKind::Trained, None).unwrap();
        assert_abs_diff_eq!(est.p_outcome1, 0.825, epsilon = 1e-12);
        assert_abs_diff_eq!(est.p_outcome1 + est.p_outcome2, 1.0, epsilon = 1e-12);
        assert_eq!(est.verdict, Verdict::Outcome1);
        assert_eq!(est.contributions.len(), 2);
        assert_abs_diff_eq!(est.contributions[0].p_outcome1, 0.9, epsilon = 1e-12);
        assert_eq!(est.contributions[0].weight, 0.5);
    }

    #[test]
    fn fully_observed_equals_single_pool() {
        let (space, table) = worked();
        let obs = PartialObservation::new().with("f0", "f0v1").with("f1", "f1v0");
        let est = infer(&space, &table, &obs, EstimatorKind::Trained, None).unwrap();
        assert_eq!(est.p_outcome1, pool_equal(&table, &CompleteAssignment(vec![1, 0])).unwrap());
        assert_eq!(est.verdict, Verdict::Tie);
    }

    #[test]
    fn neutral_table_gives_half() {
        let space = space_with(&[3, 2]);
        let table = ProbabilityTable::initial(&space, DEFAULT_DELTA).unwrap();
        let obs = PartialObservation::new().with("f0", "f0v2");
        let est = infer(&space, &table, &obs, EstimatorKind::Trained, None).unwrap();
        assert_eq!(est.p_outcome1, 0.5);
        assert_eq!(est.verdict, Verdict::Tie);
    }

    #[test]
    fn empty_observation_is_unknown_but_scored() {
        let (space, table) = worked();
        let est = infer(&space, &table, &PartialObservation::new(), EstimatorKind::Trained, None).unwrap();
        assert_eq!(est.verdict, Verdict::Unknown);
        assert_eq!(est.contributions.len(), 4);
        assert_abs_diff_eq!(est.p_outcome1, oracle_infer(&space, &table, &PartialObservation::new()), epsilon = 1e-12);
    }

    #[test]
    fn overrides_change_estimate_and_restating_is_identity() {
        let (space, table) = worked();
        let obs = PartialObservation::new().with("f0", "f0v0");
        let base = infer(&space, &table, &obs, EstimatorKind::Trained, None).unwrap();

        let mut restate = PreferenceOverride::new();
        restate.set("f0", "f0v0", 0.75);
        restate.set("f1", "f1v1", 0.5);
        assert_eq!(infer(&space, &table, &obs, EstimatorKind::Trained, Some(&restate)).unwrap(), base);

        let mut o = PreferenceOverride::new();
        o.set("f0", "f0v0", 0.9);
        let changed = infer(&space, &table, &obs, EstimatorKind::Trained, Some(&o)).unwrap();
        assert!(changed.p_outcome1 > base.p_outcome1);

        let mut bad = PreferenceOverride::new();
        bad.set("f0", "f0v0", 1.0);
        assert!(matches!(
            infer(&space, &table, &obs, EstimatorKind::Trained, Some(&bad)),
            Err(BirdError::Domain(_))
        ));
    }

    #[test]
    fn pairwise_examples() {
        let (space, table) = worked();
        let obs1 = PartialObservation::new().with("f0", "f0v0").with("f1", "f1v0");
        let obs2 = PartialObservation::new().with("f0", "f0v0");
        let kind = EstimatorKind::Trained;
        assert_eq!(
            pairwise_prefer(&space, &table, &obs1, &obs2, Outcome::Outcome1, kind).unwrap(),
            Preference::Condition1
        );
        assert_eq!(
            pairwise_prefer(&space, &table, &obs1, &obs2, Outcome::Outcome2, kind).unwrap(),
            Preference::Condition2
        );
        assert_eq!(
            pairwise_prefer(&space, &table, &obs2, &obs2, Outcome::Outcome1, kind).unwrap(),
            Preference::Same
        );
        assert!(matches!(
            pairwise_prefer(&space, &table, &obs1, &PartialObservation::new(), Outcome::Outcome1, kind),
            Err(BirdError::NotComparable(_))
        ));
    }

    #[test]
    fn followup_targets_leading_direction() {
        let space = space_with(&[2, 2]);
        let table =
            ProbabilityTable::from_probabilities(&space, &[vec![0.7, 0.4], vec![0.8, 0.3]], DEFAULT_DELTA).unwrap();
        let obs = PartialObservation::new().with("f0", "f0v0");
        let q = select_followup(&space, &table, &obs, 1).unwrap();
        assert_eq!((q.factor_id.as_str(), q.value_id.as_str()), ("f1", "f1v0"));
        assert_eq!(q.question_text, "Is it the case that factor 1 takes value 0?");

        // Leader is outcome 2 here, so the low-p value is targeted.
        let obs = PartialObservation::new().with("f0", "f0v1");
        let table2 =
            ProbabilityTable::from_probabilities(&space, &[vec![0.7, 0.2], vec![0.6, 0.45]], DEFAULT_DELTA).unwrap();
        let q = select_followup(&space, &table2, &obs, 1).unwrap();
        assert_eq!(q.value_id, "f1v1");
    }

    #[test]
    fn followup_tie_defaults_to_outcome1() {
        let space = space_with(&[2, 2]);
        let table =
            ProbabilityTable::from_probabilities(&space, &[vec![0.5, 0.5], vec![0.3, 0.8]], DEFAULT_DELTA).unwrap();
        let obs = PartialObservation::new().with("f0", "f0v0");
        // Current estimate is exactly 0.5, so the outcome-1 side wins.
        let q = select_followup(&space, &table, &obs, 9).unwrap();
        assert_eq!(q.value_id, "f1v1");
    }

    #[test]
    fn followup_errors_when_nothing_left() {
        let (space, table) = worked();
        let obs = PartialObservation::new().with("f0", "f0v0").with("f1", "f1v0");
        assert!(matches!(select_followup(&space, &table, &obs, 0), Err(BirdError::NothingToAsk)));
    }

    #[test]
    fn followup_random_choice_is_seeded_and_covers_factors() {
        let space = space_with(&[2, 2, 2, 2]);
        let table = ProbabilityTable::initial(&space, DEFAULT_DELTA).unwrap();
        let obs = PartialObservation::new();
        let picks: std::collections::HashSet<String> =
            (0..64).map(|s| select_followup(&space, &table, &obs, s).unwrap().factor_id).collect();
        assert_eq!(picks.len(), 4);
        assert_eq!(select_followup(&space, &table, &obs, 5).unwrap(), select_followup(&space, &table, &obs, 5).unwrap());
    }

    #[test]
    fn max_shift_picks_strongest_value() {
        let space = space_with(&[2, 2, 2]);
        let table = ProbabilityTable::from_probabilities(
            &space,
            &[vec![0.7, 0.4], vec![0.6, 0.45], vec![0.9, 0.2]],
            DEFAULT_DELTA,
        )
        .unwrap();
        let obs = PartialObservation::new().with("f0", "f0v0");
        let q = select_followup_with(&EngineConfig::default(), &space, &table, &obs, 0, FollowupStrategy::MaxShift)
            .unwrap();
        assert_eq!(q.value_id, "f2v0");
    }

    #[test]
    fn answers_update_observation() {
        let space = space_with(&[2, 3]);
        let obs = PartialObservation::new();
        let q = FollowupQuestion { factor_id: "f0".into(), value_id: "f0v1".into(), question_text: String::new() };
        assert_eq!(apply_answer(&space, &obs, &q, true).unwrap().get("f0"), Some("f0v1"));
        assert_eq!(apply_answer(&space, &obs, &q, false).unwrap().get("f0"), Some("f0v0"));
        let q3 = FollowupQuestion { factor_id: "f1".into(), value_id: "f1v2".into(), question_text: String::new() };
        assert_eq!(apply_answer(&space, &obs, &q3, false).unwrap(), obs);
        let observed = obs.with("f0", "f0v0");
        assert!(matches!(apply_answer(&space, &observed, &q, true), Err(BirdError::AlreadyObserved(_))));
    }

    #[test]
    fn template_question_forms() {
        assert_eq!(template_question("You will walk around the room."), "Is it the case that you will walk around the room?");
        assert_eq!(template_question("USB cables are short"), "Is it the case that USB cables are short?");
    }

    fn table_strategy() -> impl Strategy<Value = Vec<Vec<f64>>> {
        prop::collection::vec(prop::collection::vec(0.02f64..0.98, 2..4), 1..5)
    }

    proptest! {
        #[test]
        fn total_probability_and_oracle_agreement(rows in table_strategy(), picks in prop::collection::vec(prop::option::of(0usize..3), 5)) {
            let cards: Vec<usize> = rows.iter().map(Vec::len).collect();
            let space = space_with(&cards);
            let table = ProbabilityTable::from_probabilities(&space, &rows, DEFAULT_DELTA).unwrap();
            let pinned: Vec<Option<usize>> = cards.iter().zip(&picks).map(|(&c, p)| p.map(|v| v % c)).collect();
            let obs = space.observation_from_indices(&pinned);
            let total: f64 = enumerate_space(&space).unwrap().map(|f| assignment_weight(&obs, &f, &space).unwrap()).sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
            let est = infer(&space, &table, &obs, EstimatorKind::Trained, None).unwrap();
            prop_assert!((est.p_outcome1 - oracle_infer(&space, &table, &obs)).abs() < 1e-12);
            if !obs.is_empty() {
                prop_assert!((est.p_outcome1 + est.p_outcome2 - 1.0).abs() < 1e-9);
            }
        }

        #[test]
        fn aligned_observation_never_lowers_leader(
            rows in table_strategy(),
            picks in prop::collection::vec(prop::option::of(0usize..3), 5),
            factor in 0usize..5,
            value in 0usize..3,
            lift in 0.0f64..0.45,
            drops in prop::collection::vec(0.001f64..0.45, 3),
        ) {
            let cards: Vec<usize> = rows.iter().map(Vec::len).collect();
            let space = space_with(&cards);
            let j = factor % cards.len();
            let v = value % cards[j];
            let mut pinned: Vec<Option<usize>> = cards.iter().zip(&picks).map(|(&c, p)| p.map(|v| v % c)).collect();
            pinned[j] = None;
            let obs = space.observation_from_indices(&pinned);
            let f = space.factor(j);
            let extended = obs.clone().with(&f.factor_id, &f.values[v].value_id);
            // Value v on one side of 0.5, its siblings on the other; try both orientations.
            for mirrored in [false, true] {
                let mut rows = rows.clone();
                for (u, p) in rows[j].iter_mut().enumerate() {
                    let raw = if u == v { 0.5 + lift } else { 0.5 - drops[u] };
                    *p = if mirrored { 1.0 - raw } else { raw };
                }
                let table = ProbabilityTable::from_probabilities(&space, &rows, DEFAULT_DELTA).unwrap();
                let before = infer(&space, &table, &obs, EstimatorKind::Trained, None).unwrap();
                let leader = before.leader();
                let aligned = match leader { Outcome::Outcome1 => !mirrored, Outcome::Outcome2 => mirrored };
                if !aligned {
                    continue;
                }
                let after = infer(&space, &table, &extended, EstimatorKind::Trained, None).unwrap();
                prop_assert!(after.probability(leader) >= before.probability(leader) - 1e-12);
            }
        }

        #[test]
        fn identical_maps_give_identical_estimates(rows in table_strategy(), picks in prop::collection::vec(prop::option::of(0usize..3), 5)) {
            let cards: Vec<usize> = rows.iter().map(Vec::len).collect();
            let space = space_with(&cards);
            let table = ProbabilityTable::from_probabilities(&space, &rows, DEFAULT_DELTA).unwrap();
            let pinned: Vec<Option<usize>> = cards.iter().zip(&picks).map(|(&c, p)| p.map(|v| v % c)).collect();
            let a = space.observation_from_indices(&pinned);
            // Built in reverse insertion order; the map is the same.
            let b: PartialObservation = a.iter().collect::<Vec<_>>().into_iter().rev().collect();
            for kind in EstimatorKind::ALL {
                prop_assert_eq!(
                    infer(&space, &table, &a, kind, None).unwrap(),
                    infer(&space, &table, &b, kind, None).unwrap()
                );
            }
        }
    }
}
