//! Scenarios, factors and the complete-information product space.
//!
//! A [`FactorSpace`] fixes the factor order once at construction. Every
//! [`CompleteAssignment`] is an index vector in that order, and enumeration
//! walks the product space lexicographically with the last factor varying
//! fastest.

use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{BirdError, Result};

/// Upper bound on the number of assignments any enumeration may visit.
pub const DEFAULT_SPACE_CAP: u64 = 1 << 20;

/// Which outcome a factor value pushes the decision towards.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Support {
    Outcome1,
    Outcome2,
    Neutral,
}

/// One of the two complementary outcomes of a scenario.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Outcome1,
    Outcome2,
}

impl Outcome {
    pub fn other(self) -> Self {
        match self {
            Outcome::Outcome1 => Outcome::Outcome2,
            Outcome::Outcome2 => Outcome::Outcome1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scenario {
    pub id: String,
    pub text: String,
    pub outcome1: String,
    pub outcome2: String,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        if self.text.trim().is_empty() {
            return Err(BirdError::validation("scenario text is empty"));
        }
        if self.outcome1.trim().is_empty() || self.outcome2.trim().is_empty() {
            return Err(BirdError::validation("scenario outcomes must be non-empty"));
        }
        if self.outcome1.trim() == self.outcome2.trim() {
            return Err(BirdError::validation("scenario outcomes must differ"));
        }
        Ok(())
    }

    pub fn outcome_text(&self, outcome: Outcome) -> &str {
        match outcome {
            Outcome::Outcome1 => &self.outcome1,
            Outcome::Outcome2 => &self.outcome2,
        }
    }
}

/// Additional condition attached to a scenario.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Condition {
    pub id: String,
    pub text: String,
    pub scenario_id: String,
}

impl Condition {
    pub fn validate(&self) -> Result<()> {
        if self.text.trim().is_empty() {
            return Err(BirdError::validation("condition text is empty"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactorValue {
    pub value_id: String,
    pub text: String,
    pub support: Support,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Factor {
    pub factor_id: String,
    pub name: String,
    pub values: Vec<FactorValue>,
}

impl Factor {
    pub fn cardinality(&self) -> usize {
        self.values.len()
    }

    pub fn value_index(&self, value_id: &str) -> Option<usize> {
        self.values.iter().position(|v| v.value_id == value_id)
    }

    /// True when every value carries the same support label.
    pub fn is_prunable(&self) -> bool {
        match self.values.first() {
            Some(first) => self.values.iter().all(|v| v.support == first.support),
            None => true,
        }
    }
}

#[derive(Deserialize)]
struct RawFactorSpace {
    scenario: Scenario,
    factors: Vec<Factor>,
}

/// The factors of one scenario. Serialized as `factor_space.v1`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawFactorSpace")]
pub struct FactorSpace {
    scenario: Scenario,
    factors: Vec<Factor>,
}

impl TryFrom<RawFactorSpace> for FactorSpace {
    type Error = BirdError;

    fn try_from(raw: RawFactorSpace) -> Result<Self> {
        FactorSpace::new(raw.scenario, raw.factors)
    }
}

impl FactorSpace {
    pub fn new(scenario: Scenario, factors: Vec<Factor>) -> Result<Self> {
        scenario.validate()?;
        if factors.is_empty() {
            return Err(BirdError::validation("a factor space needs at least one factor"));
        }
        let mut seen = HashSet::new();
        for factor in &factors {
            if !seen.insert(factor.factor_id.as_str()) {
                return Err(BirdError::validation(format!(
                    "duplicate factor id `{}`",
                    factor.factor_id
                )));
            }
            if factor.values.len() < 2 {
                return Err(BirdError::validation(format!(
                    "factor `{}` has {} value(s), at least 2 are required",
                    factor.factor_id,
                    factor.values.len()
                )));
            }
            let mut value_ids = HashSet::new();
            for value in &factor.values {
                if !value_ids.insert(value.value_id.as_str()) {
                    return Err(BirdError::validation(format!(
                        "duplicate value id `{}` in factor `{}`",
                        value.value_id, factor.factor_id
                    )));
                }
            }
        }
        let space = FactorSpace { scenario, factors };
        space.checked_cardinality()?;
        Ok(space)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json_pretty(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn factors(&self) -> &[Factor] {
        &self.factors
    }

    pub fn factor(&self, index: usize) -> &Factor {
        &self.factors[index]
    }

    pub fn len(&self) -> usize {
        self.factors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.factors.is_empty()
    }

    pub fn factor_index(&self, factor_id: &str) -> Option<usize> {
        self.factors.iter().position(|f| f.factor_id == factor_id)
    }

    pub fn radices(&self) -> Vec<usize> {
        self.factors.iter().map(Factor::cardinality).collect()
    }

    fn checked_cardinality(&self) -> Result<u128> {
        self.factors.iter().try_fold(1u128, |acc, f| {
            acc.checked_mul(f.cardinality() as u128).ok_or(BirdError::SpaceTooLarge {
                cardinality: u128::MAX,
                cap: DEFAULT_SPACE_CAP,
            })
        })
    }

    /// Exact size of the product space.
    pub fn cardinality(&self) -> u128 {
        // Overflow is rejected in `new`.
        self.factors.iter().map(|f| f.cardinality() as u128).product()
    }

    /// Copy of this space with the given factors removed.
    pub fn without_factors(&self, factor_ids: &[&str]) -> Result<Self> {
        let kept = self
            .factors
            .iter()
            .filter(|f| !factor_ids.contains(&f.factor_id.as_str()))
            .cloned()
            .collect();
        FactorSpace::new(self.scenario.clone(), kept)
    }

    /// Copy of this space with every value's support label replaced.
    pub fn with_supports(&self, supports: &[Vec<Support>]) -> Result<Self> {
        if supports.len() != self.factors.len()
            || supports.iter().zip(&self.factors).any(|(s, f)| s.len() != f.values.len())
        {
            return Err(BirdError::validation("support labels do not match the factor space"));
        }
        let mut out = self.clone();
        for (factor, labels) in out.factors.iter_mut().zip(supports) {
            for (value, label) in factor.values.iter_mut().zip(labels) {
                value.support = *label;
            }
        }
        Ok(out)
    }

    pub fn value(&self, factor: usize, value: usize) -> &FactorValue {
        &self.factors[factor].values[value]
    }

    /// Resolves an observation's ids into per-factor value indices.
    pub fn resolve(&self, obs: &PartialObservation) -> Result<Vec<Option<usize>>> {
        let mut pinned = vec![None; self.factors.len()];
        for (factor_id, value_id) in obs.iter() {
            let fi = self
                .factor_index(factor_id)
                .ok_or_else(|| BirdError::UnknownFactor(factor_id.to_string()))?;
            let vi = self.factors[fi].value_index(value_id).ok_or_else(|| BirdError::UnknownValue {
                factor: factor_id.to_string(),
                value: value_id.to_string(),
            })?;
            pinned[fi] = Some(vi);
        }
        Ok(pinned)
    }

    /// Builds an observation from per-factor value indices.
    pub fn observation_from_indices(&self, pinned: &[Option<usize>]) -> PartialObservation {
        let mut obs = PartialObservation::new();
        for (fi, slot) in pinned.iter().enumerate() {
            if let Some(vi) = slot {
                let factor = &self.factors[fi];
                obs.insert(&factor.factor_id, &factor.values[*vi].value_id);
            }
        }
        obs
    }

    /// Checks that an assignment has one in-range value per factor.
    pub fn check_assignment(&self, assignment: &CompleteAssignment) -> Result<()> {
        if assignment.0.len() != self.factors.len() {
            return Err(BirdError::validation(format!(
                "assignment has {} entries for {} factors",
                assignment.0.len(),
                self.factors.len()
            )));
        }
        for (fi, (&vi, factor)) in assignment.0.iter().zip(&self.factors).enumerate() {
            if vi >= factor.cardinality() {
                return Err(BirdError::validation(format!(
                    "assignment index {vi} out of range for factor {fi}"
                )));
            }
        }
        Ok(())
    }

    /// Natural-language rendering of an assignment, one value per line.
    pub fn describe(&self, assignment: &CompleteAssignment) -> Vec<&str> {
        assignment
            .0
            .iter()
            .zip(&self.factors)
            .map(|(&vi, f)| f.values[vi].text.as_str())
            .collect()
    }

    /// Decodes a linear index (lexicographic, last factor fastest).
    pub fn decode(&self, mut index: u128) -> CompleteAssignment {
        let mut digits = vec![0usize; self.factors.len()];
        for (slot, factor) in digits.iter_mut().zip(&self.factors).rev() {
            let radix = factor.cardinality() as u128;
            *slot = (index % radix) as usize;
            index /= radix;
        }
        CompleteAssignment(digits)
    }
}

/// A fully specified world: one value index per factor, in factor order.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CompleteAssignment(pub Vec<usize>);

impl CompleteAssignment {
    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn value_ids<'a>(&self, space: &'a FactorSpace) -> Vec<(&'a str, &'a str)> {
        self.0
            .iter()
            .zip(space.factors())
            .map(|(&vi, f)| (f.factor_id.as_str(), f.values[vi].value_id.as_str()))
            .collect()
    }
}

/// The factor values a context implies. Factors absent from the map are
/// unobserved.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PartialObservation(BTreeMap<String, String>);

impl PartialObservation {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, factor_id: &str, value_id: &str) {
        self.0.insert(factor_id.to_string(), value_id.to_string());
    }

    pub fn with(mut self, factor_id: &str, value_id: &str) -> Self {
        self.insert(factor_id, value_id);
        self
    }

    pub fn get(&self, factor_id: &str) -> Option<&str> {
        self.0.get(factor_id).map(String::as_str)
    }

    pub fn contains(&self, factor_id: &str) -> bool {
        self.0.contains_key(factor_id)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.0.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }
}

impl<K: Into<String>, V: Into<String>> FromIterator<(K, V)> for PartialObservation {
    fn from_iter<I: IntoIterator<Item = (K, V)>>(iter: I) -> Self {
        PartialObservation(iter.into_iter().map(|(k, v)| (k.into(), v.into())).collect())
    }
}

/// Mixed-radix counter over the factors that are not pinned.
///
/// Pinned positions never move, so iterating with an observation's pins
/// visits exactly the consistent assignments.
#[derive(Clone, Debug)]
pub struct Odometer {
    radices: Vec<usize>,
    free: Vec<usize>,
    current: Option<Vec<usize>>,
}

impl Odometer {
    pub fn new(radices: Vec<usize>, pinned: &[Option<usize>]) -> Self {
        debug_assert_eq!(radices.len(), pinned.len());
        let start: Vec<usize> = pinned.iter().map(|p| p.unwrap_or(0)).collect();
        let free = pinned
            .iter()
            .enumerate()
            .filter_map(|(i, p)| p.is_none().then_some(i))
            .collect();
        let current = if radices.iter().any(|&r| r == 0) { None } else { Some(start) };
        Odometer { radices, free, current }
    }
}

impl Iterator for Odometer {
    type Item = CompleteAssignment;

    fn next(&mut self) -> Option<Self::Item> {
        let current = self.current.as_mut()?;
        let out = CompleteAssignment(current.clone());
        let mut advanced = false;
        for &pos in self.free.iter().rev() {
            current[pos] += 1;
            if current[pos] < self.radices[pos] {
                advanced = true;
                break;
            }
            current[pos] = 0;
        }
        if !advanced {
            self.current = None;
        }
        Some(out)
    }
}

fn check_cap(count: u128, cap: u64) -> Result<()> {
    if count > cap as u128 {
        return Err(BirdError::SpaceTooLarge { cardinality: count, cap });
    }
    Ok(())
}

/// Every complete assignment in lexicographic index order, under the default cap.
pub fn enumerate_space(space: &FactorSpace) -> Result<Odometer> {
    enumerate_space_capped(space, DEFAULT_SPACE_CAP)
}

pub fn enumerate_space_capped(space: &FactorSpace, cap: u64) -> Result<Odometer> {
    check_cap(space.cardinality(), cap)?;
    Ok(Odometer::new(space.radices(), &vec![None; space.len()]))
}

/// Assignments agreeing with the pinned values, lexicographic over the free
/// factors. The cap applies to the number of consistent assignments.
pub fn enumerate_consistent(
    space: &FactorSpace,
    pinned: &[Option<usize>],
    cap: u64,
) -> Result<Odometer> {
    let count: u128 = space
        .factors()
        .iter()
        .zip(pinned)
        .filter(|(_, p)| p.is_none())
        .map(|(f, _)| f.cardinality() as u128)
        .product();
    check_cap(count, cap)?;
    Ok(Odometer::new(space.radices(), pinned))
}

/// Draws `n` training assignments.
///
/// When the space holds at least `n` assignments they are distinct. Smaller
/// spaces are tiled: every assignment appears `n / card` times and the
/// remainder is a distinct random subset, then the whole list is shuffled.
pub fn sample_assignments(space: &FactorSpace, n: usize, seed: u64) -> Result<Vec<CompleteAssignment>> {
    if n == 0 {
        return Err(BirdError::validation("sample count must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let card = space.cardinality();
    if card >= n as u128 {
        if card <= usize::MAX as u128 && card <= (n as u128).saturating_mul(64) {
            let picks = rand::seq::index::sample(&mut rng, card as usize, n);
            return Ok(picks.into_iter().map(|i| space.decode(i as u128)).collect());
        }
        // Sparse draw from a large space: rejection on duplicates.
        let radices = space.radices();
        let mut seen = HashSet::with_capacity(n);
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            let a = CompleteAssignment(radices.iter().map(|&r| rng.random_range(0..r)).collect());
            if seen.insert(a.clone()) {
                out.push(a);
            }
        }
        return Ok(out);
    }
    let card = card as usize;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n / card {
        out.extend((0..card).map(|i| space.decode(i as u128)));
    }
    let rest = n % card;
    if rest > 0 {
        let picks = rand::seq::index::sample(&mut rng, card, rest);
        out.extend(picks.into_iter().map(|i| space.decode(i as u128)));
    }
    out.shuffle(&mut rng);
    Ok(out)
}

/// True iff the assignment agrees with every observed value.
pub fn consistent(space: &FactorSpace, assignment: &CompleteAssignment, obs: &PartialObservation) -> Result<bool> {
    space.check_assignment(assignment)?;
    let pinned = space.resolve(obs)?;
    Ok(consistent_resolved(assignment, &pinned))
}

pub(crate) fn consistent_resolved(assignment: &CompleteAssignment, pinned: &[Option<usize>]) -> bool {
    assignment
        .0
        .iter()
        .zip(pinned)
        .all(|(v, p)| p.is_none_or(|p| p == *v))
}
