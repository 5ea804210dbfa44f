//! Opinion-pool aggregation of per-value probabilities into `P(O1 | f)`,
//! and the closed-form baseline estimators.
//!
//! The pool is evaluated in log-odds space: with prior `π` and weights `w_j`
//! the pooled log-odds are `logit(π) + Σ w_j (logit(p_j) − logit(π))`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{BirdError, Result};
use crate::factor_model::{CompleteAssignment, FactorSpace, Support};

pub const DEFAULT_DELTA: f64 = 1e-3;

/// Initial `P(O1 | value)` for a value supporting outcome 1.
pub const INIT_SUPPORTS_OUTCOME1: f64 = 0.75;
pub const INIT_NEUTRAL: f64 = 0.5;
pub const INIT_SUPPORTS_OUTCOME2: f64 = 0.25;

pub fn initial_probability(support: Support) -> f64 {
    match support {
        Support::Outcome1 => INIT_SUPPORTS_OUTCOME1,
        Support::Neutral => INIT_NEUTRAL,
        Support::Outcome2 => INIT_SUPPORTS_OUTCOME2,
    }
}

pub fn logit(p: f64) -> f64 {
    p.ln() - (-p).ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableEntry {
    pub p: f64,
    pub support: Support,
}

/// `P(O1 | value)` for every value of every factor, indexed like the space.
///
/// Entries always lie in `[delta, 1 - delta]`; `P(O2 | value)` is `1 - p`.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbabilityTable {
    delta: f64,
    entries: Vec<Vec<TableEntry>>,
}

impl ProbabilityTable {
    /// Table holding the given probabilities, clamped into `[delta, 1 - delta]`.
    pub fn from_probabilities(space: &FactorSpace, probs: &[Vec<f64>], delta: f64) -> Result<Self> {
        if !(delta > 0.0 && delta < 0.5) {
            return Err(BirdError::validation(format!("clamp delta {delta} must lie in (0, 0.5)")));
        }
        if probs.len() != space.len()
            || probs.iter().zip(space.factors()).any(|(row, f)| row.len() != f.cardinality())
        {
            return Err(BirdError::validation("probability rows do not match the factor space"));
        }
        let entries = probs
            .iter()
            .zip(space.factors())
            .map(|(row, factor)| {
                row.iter()
                    .zip(&factor.values)
                    .map(|(&p, v)| {
                        if !p.is_finite() {
                            return Err(BirdError::Domain(p));
                        }
                        Ok(TableEntry { p: p.clamp(delta, 1.0 - delta), support: v.support })
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ProbabilityTable { delta, entries })
    }

    /// Table of the fixed initial values derived from each value's support label.
    pub fn initial(space: &FactorSpace, delta: f64) -> Result<Self> {
        let probs: Vec<Vec<f64>> = space
            .factors()
            .iter()
            .map(|f| f.values.iter().map(|v| initial_probability(v.support)).collect())
            .collect();
        Self::from_probabilities(space, &probs, delta)
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn p(&self, factor: usize, value: usize) -> f64 {
        self.entries[factor][value].p
    }

    pub fn support(&self, factor: usize, value: usize) -> Support {
        self.entries[factor][value].support
    }

    /// Sets an entry, clamping into `[delta, 1 - delta]`.
    pub fn set(&mut self, factor: usize, value: usize, p: f64) {
        self.entries[factor][value].p = p.clamp(self.delta, 1.0 - self.delta);
    }

    pub fn rows(&self) -> &[Vec<TableEntry>] {
        &self.entries
    }

    pub fn probabilities(&self) -> Vec<Vec<f64>> {
        self.entries.iter().map(|row| row.iter().map(|e| e.p).collect()).collect()
    }

    /// Number of stored values across all factors.
    pub fn value_count(&self) -> usize {
        self.entries.iter().map(Vec::len).sum()
    }

    pub fn covers(&self, space: &FactorSpace) -> bool {
        self.entries.len() == space.len()
            && self.entries.iter().zip(space.factors()).all(|(row, f)| row.len() == f.cardinality())
    }

    /// Same shape, every entry replaced by its support's initial value.
    pub fn to_initial(&self) -> Self {
        let entries = self
            .entries
            .iter()
            .map(|row| {
                row.iter()
                    .map(|e| TableEntry {
                        p: initial_probability(e.support).clamp(self.delta, 1.0 - self.delta),
                        support: e.support,
                    })
                    .collect()
            })
            .collect();
        ProbabilityTable { delta: self.delta, entries }
    }

    fn check_assignment(&self, f: &CompleteAssignment) -> Result<()> {
        if f.0.len() != self.entries.len()
            || f.0.iter().zip(&self.entries).any(|(&v, row)| v >= row.len())
        {
            return Err(BirdError::validation("assignment does not fit the probability table"));
        }
        Ok(())
    }

    pub(crate) fn supports_of(&self, f: &CompleteAssignment) -> Vec<Support> {
        f.0.iter().enumerate().map(|(j, &v)| self.entries[j][v].support).collect()
    }

    /// Pooled log-odds of outcome 1 with equal weights and a 0.5 prior.
    pub(crate) fn pooled_logit(&self, f: &CompleteAssignment) -> f64 {
        f.0.iter().enumerate().map(|(j, &v)| logit(self.entries[j][v].p)).sum()
    }
}

/// Per-factor pool weights and the outcome-1 prior.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoolWeights {
    pub weights: Vec<f64>,
    pub prior: f64,
}

impl PoolWeights {
    pub fn equal(n: usize) -> Self {
        PoolWeights { weights: vec![1.0; n], prior: 0.5 }
    }
}

fn check_open(p: f64) -> Result<()> {
    if p > 0.0 && p < 1.0 {
        Ok(())
    } else {
        Err(BirdError::Domain(p))
    }
}

/// Weighted logarithmic opinion pool of per-factor probabilities for outcome 1.
pub fn pool_weighted(probs: &[f64], weights: &PoolWeights) -> Result<f64> {
    if probs.is_empty() {
        return Err(BirdError::validation("cannot pool an empty list of probabilities"));
    }
    if probs.len() != weights.weights.len() {
        return Err(BirdError::validation(format!(
            "{} probabilities but {} weights",
            probs.len(),
            weights.weights.len()
        )));
    }
    if let Some(w) = weights.weights.iter().find(|w| !(**w > 0.0 && w.is_finite())) {
        return Err(BirdError::validation(format!("pool weight {w} must be positive")));
    }
    check_open(weights.prior)?;
    for &p in probs {
        check_open(p)?;
    }
    let prior_logit = logit(weights.prior);
    let pooled = probs
        .iter()
        .zip(&weights.weights)
        .fold(prior_logit, |acc, (&p, &w)| acc + w * (logit(p) - prior_logit));
    Ok(sigmoid(pooled))
}

/// Equal-weight pool with a 0.5 prior: `P_estimated(O1 | f)`.
pub fn pool_equal(table: &ProbabilityTable, f: &CompleteAssignment) -> Result<f64> {
    table.check_assignment(f)?;
    Ok(sigmoid(table.pooled_logit(f)))
}

/// Outcome-1 estimate that is 1 when every non-neutral label supports
/// outcome 1, 0 when every non-neutral label supports outcome 2, and 0.5
/// when labels are mixed or all neutral.
pub fn estimate_half(supports: &[Support]) -> f64 {
    let any1 = supports.contains(&Support::Outcome1);
    let any2 = supports.contains(&Support::Outcome2);
    match (any1, any2) {
        (true, false) => 1.0,
        (false, true) => 0.0,
        _ => 0.5,
    }
}

/// Fraction of labels supporting the given outcome.
pub fn one_over_n_score(supports: &[Support], outcome: crate::factor_model::Outcome) -> f64 {
    if supports.is_empty() {
        return 0.0;
    }
    let wanted = match outcome {
        crate::factor_model::Outcome::Outcome1 => Support::Outcome1,
        crate::factor_model::Outcome::Outcome2 => Support::Outcome2,
    };
    supports.iter().filter(|s| **s == wanted).count() as f64 / supports.len() as f64
}

/// Fraction of labels supporting outcome 1. All-neutral input scores 0.
pub fn estimate_one_over_n(supports: &[Support]) -> f64 {
    one_over_n_score(supports, crate::factor_model::Outcome::Outcome1)
}

/// How `P(O | f)` is obtained for a complete assignment.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Trained,
    FixedInit,
    HalfAssumption,
    OneOverN,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 4] = [
        EstimatorKind::Trained,
        EstimatorKind::FixedInit,
        EstimatorKind::HalfAssumption,
        EstimatorKind::OneOverN,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EstimatorKind::Trained => "trained",
            EstimatorKind::FixedInit => "fixed",
            EstimatorKind::HalfAssumption => "half",
            EstimatorKind::OneOverN => "one-over-n",
        }
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EstimatorKind {
    type Err = BirdError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "trained" => Ok(EstimatorKind::Trained),
            "fixed" | "fixed-init" | "fixed_init" => Ok(EstimatorKind::FixedInit),
            "half" | "half-assumption" | "half_assumption" => Ok(EstimatorKind::HalfAssumption),
            "one-over-n" | "one_over_n" | "1/n" => Ok(EstimatorKind::OneOverN),
            other => Err(BirdError::validation(format!("unknown estimator `{other}`"))),
        }
    }
}

/// Scores for both outcomes under one estimator.
///
/// For every kind except `OneOverN` the two scores sum to one. The 1/N
/// counts are reported as-is, so all-neutral assignments score 0 for both.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutcomeScores {
    pub outcome1: f64,
    pub outcome2: f64,
}

/// `P(O1 | f)` under the chosen estimator.
pub fn estimate_outcome_given_f(kind: EstimatorKind, table: &ProbabilityTable, f: &CompleteAssignment) -> Result<f64> {
    Ok(outcome_scores(kind, table, f)?.outcome1)
}

pub fn outcome_scores(kind: EstimatorKind, table: &ProbabilityTable, f: &CompleteAssignment) -> Result<OutcomeScores> {
    table.check_assignment(f)?;
    let complementary = |p: f64| OutcomeScores { outcome1: p, outcome2: 1.0 - p };
    Ok(match kind {
        EstimatorKind::Trained => complementary(sigmoid(table.pooled_logit(f))),
        EstimatorKind::FixedInit => complementary(sigmoid(table.to_initial().pooled_logit(f))),
        EstimatorKind::HalfAssumption => complementary(estimate_half(&table.supports_of(f))),
        EstimatorKind::OneOverN => {
            let supports = table.supports_of(f);
            OutcomeScores {
                outcome1: one_over_n_score(&supports, crate::factor_model::Outcome::Outcome1),
                outcome2: one_over_n_score(&supports, crate::factor_model::Outcome::Outcome2),
            }
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::factor_model::testing::space_with;
    use crate::factor_model::Outcome;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn naive_pool(probs: &[f64], weights: &[f64], prior: f64) -> f64 {
        let num: f64 = probs.iter().zip(weights).map(|(p, w)| (p / prior).powf(*w)).product::<f64>() * prior;
        let den: f64 = probs
            .iter()
            .zip(weights)
            .map(|(p, w)| ((1.0 - p) / (1.0 - prior)).powf(*w))
            .product::<f64>()
            * (1.0 - prior);
        num / (num + den)
    }

    fn table_of(rows: &[Vec<f64>]) -> (FactorSpace, ProbabilityTable) {
        let cards: Vec<usize> = rows.iter().map(Vec::len).collect();
        let space = space_with(&cards);
        let table = ProbabilityTable::from_probabilities(&space, rows, DEFAULT_DELTA).unwrap();
        (space, table)
    }

    #[test]
    fn worked_pool_values() {
        let w = |n| PoolWeights::equal(n);
        assert_eq!(pool_weighted(&[0.5, 0.5, 0.5], &w(3)).unwrap(), 0.5);
        assert_abs_diff_eq!(pool_weighted(&[0.75, 0.75], &w(2)).unwrap(), 0.9, epsilon = 1e-12);
        assert_abs_diff_eq!(pool_weighted(&[0.75, 0.25], &w(2)).unwrap(), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn pool_rejects_degenerate_probabilities() {
        let w = PoolWeights::equal(2);
        assert!(matches!(pool_weighted(&[1.0, 0.5], &w), Err(BirdError::Domain(_))));
        assert!(matches!(pool_weighted(&[0.0, 0.5], &w), Err(BirdError::Domain(_))));
        assert!(pool_weighted(&[], &PoolWeights::equal(0)).is_err());
        assert!(pool_weighted(&[0.5], &w).is_err());
    }

    #[test]
    fn pool_equal_examples() {
        let (_, table) = table_of(&[vec![0.75, 0.3]]);
        assert_abs_diff_eq!(pool_equal(&table, &CompleteAssignment(vec![0])).unwrap(), 0.75, epsilon = 1e-12);

        let (_, table) = table_of(&[vec![0.75, 0.5], vec![0.75, 0.5], vec![0.25, 0.5]]);
        let f = CompleteAssignment(vec![0, 0, 0]);
        // 0.140625 / (0.140625 + 0.046875)
        assert_abs_diff_eq!(pool_equal(&table, &f).unwrap(), 0.75, epsilon = 1e-12);

        let (_, permuted) = table_of(&[vec![0.25, 0.5], vec![0.75, 0.5], vec![0.75, 0.5]]);
        assert_abs_diff_eq!(
            pool_equal(&permuted, &f).unwrap(),
            pool_equal(&table, &f).unwrap(),
            epsilon = 1e-15
        );
    }

    #[test]
    fn table_clamps_entries() {
        let (_, table) = table_of(&[vec![0.0, 1.0]]);
        assert_eq!(table.p(0, 0), DEFAULT_DELTA);
        assert_eq!(table.p(0, 1), 1.0 - DEFAULT_DELTA);
    }

    #[test]
    fn half_assumption() {
        use Support::*;
        assert_eq!(estimate_half(&[Outcome1, Neutral, Outcome1]), 1.0);
        assert_eq!(estimate_half(&[Outcome1, Outcome2]), 0.5);
        assert_eq!(estimate_half(&[Neutral, Neutral]), 0.5);
        assert_eq!(estimate_half(&[Outcome2, Neutral]), 0.0);
    }

    #[test]
    fn one_over_n_assumption() {
        use Support::*;
        assert_abs_diff_eq!(estimate_one_over_n(&[Outcome1, Outcome1, Outcome2]), 2.0 / 3.0);
        assert_eq!(estimate_one_over_n(&[Neutral; 4]), 0.0);
        assert_eq!(one_over_n_score(&[Neutral; 4], Outcome::Outcome2), 0.0);
        assert_eq!(estimate_one_over_n(&[Outcome1; 5]), 1.0);
    }

    #[test]
    fn estimator_dispatch() {
        let space = space_with(&[2, 2]);
        let space = space
            .with_supports(&[
                vec![Support::Outcome1, Support::Outcome2],
                vec![Support::Outcome1, Support::Outcome2],
            ])
            .unwrap();
        let init = ProbabilityTable::initial(&space, DEFAULT_DELTA).unwrap();
        let mut trained = init.clone();
        trained.set(0, 0, 0.95);
        let both1 = CompleteAssignment(vec![0, 0]);
        let mixed = CompleteAssignment(vec![0, 1]);
        assert_abs_diff_eq!(
            estimate_outcome_given_f(EstimatorKind::FixedInit, &trained, &both1).unwrap(),
            0.9,
            epsilon = 1e-12
        );
        assert_eq!(estimate_outcome_given_f(EstimatorKind::HalfAssumption, &trained, &mixed).unwrap(), 0.5);
        assert_eq!(
            estimate_outcome_given_f(EstimatorKind::Trained, &init, &both1).unwrap(),
            estimate_outcome_given_f(EstimatorKind::FixedInit, &init, &both1).unwrap()
        );
        assert!(estimate_outcome_given_f(EstimatorKind::Trained, &trained, &both1).unwrap() > 0.9);
        let s = outcome_scores(EstimatorKind::OneOverN, &init, &mixed).unwrap();
        assert_eq!((s.outcome1, s.outcome2), (0.5, 0.5));
    }

    #[test]
    fn estimator_names_parse() {
        for kind in EstimatorKind::ALL {
            assert_eq!(kind.as_str().parse::<EstimatorKind>().unwrap(), kind);
        }
        assert!("bogus".parse::<EstimatorKind>().is_err());
    }

    fn probs_strategy() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.01f64..0.99, 1..8)
    }

    proptest! {
        #[test]
        fn complementarity(probs in probs_strategy()) {
            let w = PoolWeights::equal(probs.len());
            let flipped: Vec<f64> = probs.iter().map(|p| 1.0 - p).collect();
            let total = pool_weighted(&probs, &w).unwrap() + pool_weighted(&flipped, &w).unwrap();
            prop_assert!((total - 1.0).abs() < 1e-12);
        }

        #[test]
        fn log_space_matches_naive_product(
            probs in probs_strategy(),
            raw_w in prop::collection::vec(0.2f64..3.0, 8),
            prior in 0.1f64..0.9,
        ) {
            let weights = raw_w[..probs.len()].to_vec();
            let pooled = pool_weighted(&probs, &PoolWeights { weights: weights.clone(), prior }).unwrap();
            prop_assert!((pooled - naive_pool(&probs, &weights, prior)).abs() < 1e-10);
        }

        #[test]
        fn increasing_one_entry_increases_pool(probs in probs_strategy(), idx in 0usize..8, bump in 0.001f64..0.5) {
            let j = idx % probs.len();
            let rows: Vec<Vec<f64>> = probs.iter().map(|&p| vec![p, 0.5]).collect();
            let (space, table) = table_of(&rows);
            let f = CompleteAssignment(vec![0; space.len()]);
            let mut raised = table.clone();
            raised.set(j, 0, (probs[j] + bump).min(0.995));
            prop_assume!(raised.p(j, 0) > table.p(j, 0));
            prop_assert!(pool_equal(&raised, &f).unwrap() > pool_equal(&table, &f).unwrap());
        }

        #[test]
        fn weight_scaling_preserves_argmax(
            probs in probs_strategy(),
            raw_w in prop::collection::vec(0.2f64..3.0, 8),
            scale in 0.1f64..10.0,
        ) {
            let weights = raw_w[..probs.len()].to_vec();
            let base = pool_weighted(&probs, &PoolWeights { weights: weights.clone(), prior: 0.5 }).unwrap();
            prop_assume!((base - 0.5).abs() > 1e-9);
            let scaled: Vec<f64> = weights.iter().map(|w| w * scale).collect();
            let other = pool_weighted(&probs, &PoolWeights { weights: scaled, prior: 0.5 }).unwrap();
            prop_assert_eq!(base > 0.5, other > 0.5);
        }
    }
}
