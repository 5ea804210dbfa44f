//! Learning the per-value probabilities from model-elicited targets.
//!
//! The loss is the batch mean squared error between pooled estimates and
//! targets plus `alpha` times a margin-ranking term that keeps each value's
//! marginal on the side of 0.5 its support label points to. Parameters are
//! stored as probabilities and projected back into `[delta, 1 - delta]`
//! after every SGD step.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{BirdError, Result};
use crate::factor_model::{enumerate_space_capped, CompleteAssignment, FactorSpace, Support, DEFAULT_SPACE_CAP};
use crate::pool::{sigmoid, ProbabilityTable, TableEntry, DEFAULT_DELTA, INIT_NEUTRAL};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingSample {
    pub assignment: CompleteAssignment,
    pub target: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub margin: f64,
    pub alpha: f64,
    pub sample_count: usize,
    pub seed: u64,
    pub delta: f64,
    pub space_cap: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            learning_rate: 1e-2,
            epochs: 20,
            batch_size: 4,
            margin: 0.0,
            alpha: 10.0,
            sample_count: 128,
            seed: 0,
            delta: DEFAULT_DELTA,
            space_cap: DEFAULT_SPACE_CAP,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = self.learning_rate > 0.0
            && self.epochs > 0
            && self.batch_size > 0
            && self.alpha > 0.0
            && self.sample_count > 0
            && self.delta > 0.0
            && self.delta < 0.5;
        if !positive || !(self.margin >= 0.0) {
            return Err(BirdError::validation(format!("invalid training config: {self:?}")));
        }
        Ok(())
    }
}

/// `sgn(P_init - 0.5)` for every value: +1, 0 or -1.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DirectionTargets(pub Vec<Vec<i8>>);

impl DirectionTargets {
    pub fn from_table(initial: &ProbabilityTable) -> Self {
        DirectionTargets(
            initial
                .rows()
                .iter()
                .map(|row| {
                    row.iter()
                        .map(|e| match e.p.partial_cmp(&INIT_NEUTRAL) {
                            Some(std::cmp::Ordering::Greater) => 1,
                            Some(std::cmp::Ordering::Less) => -1,
                            _ => 0,
                        })
                        .collect()
                })
                .collect(),
        )
    }

    pub fn from_space(space: &FactorSpace) -> Self {
        DirectionTargets(
            space
                .factors()
                .iter()
                .map(|f| {
                    f.values
                        .iter()
                        .map(|v| match v.support {
                            Support::Outcome1 => 1,
                            Support::Neutral => 0,
                            Support::Outcome2 => -1,
                        })
                        .collect()
                })
                .collect(),
        )
    }

    fn covers(&self, table: &ProbabilityTable) -> bool {
        self.0.len() == table.rows().len() && self.0.iter().zip(table.rows()).all(|(d, r)| d.len() == r.len())
    }
}

pub fn init_table(space: &FactorSpace) -> Result<ProbabilityTable> {
    ProbabilityTable::initial(space, DEFAULT_DELTA)
}

pub fn mse_loss(estimated: f64, target: f64) -> f64 {
    (target - estimated) * (target - estimated)
}

fn estimate(table: &ProbabilityTable, f: &CompleteAssignment) -> f64 {
    sigmoid(table.pooled_logit(f))
}

/// Mean squared error over a batch.
pub fn batch_mse(table: &ProbabilityTable, batch: &[TrainingSample]) -> f64 {
    batch.iter().map(|s| mse_loss(estimate(table, &s.assignment), s.target)).sum::<f64>() / batch.len() as f64
}

/// Pooled estimate for every assignment in enumeration order.
fn all_estimates(table: &ProbabilityTable, space: &FactorSpace, cap: u64) -> Result<Vec<(CompleteAssignment, f64)>> {
    Ok(enumerate_space_capped(space, cap)?.map(|f| {
        let e = estimate(table, &f);
        (f, e)
    }).collect())
}

fn marginals_from(estimates: &[(CompleteAssignment, f64)], space: &FactorSpace) -> Vec<Vec<f64>> {
    let total = estimates.len() as f64;
    let mut sums: Vec<Vec<f64>> = space.factors().iter().map(|f| vec![0.0; f.cardinality()]).collect();
    for (f, e) in estimates {
        for (j, &v) in f.0.iter().enumerate() {
            sums[j][v] += e;
        }
    }
    for (row, factor) in sums.iter_mut().zip(space.factors()) {
        // card(F*) = card(F) / card(F_j); 1 for a single-factor space.
        let rest = total / factor.cardinality() as f64;
        for s in row.iter_mut() {
            *s /= rest;
        }
    }
    sums
}

/// Mean pooled estimate over every completion of the other factors with
/// `value` of `factor` held fixed.
pub fn trained_marginal(table: &ProbabilityTable, space: &FactorSpace, factor: usize, value: usize) -> Result<f64> {
    if factor >= space.len() || value >= space.factor(factor).cardinality() {
        return Err(BirdError::validation("factor value out of range"));
    }
    Ok(trained_marginals(table, space, DEFAULT_SPACE_CAP)?[factor][value])
}

pub fn trained_marginals(table: &ProbabilityTable, space: &FactorSpace, cap: u64) -> Result<Vec<Vec<f64>>> {
    Ok(marginals_from(&all_estimates(table, space, cap)?, space))
}

fn hinge(direction: i8, marginal: f64, margin: f64) -> f64 {
    (-(direction as f64) * (marginal - 0.5) + margin).max(0.0)
}

fn margin_from_marginals(marginals: &[Vec<f64>], directions: &DirectionTargets, margin: f64) -> f64 {
    let n = marginals.len() as f64;
    marginals
        .iter()
        .zip(&directions.0)
        .map(|(row, dirs)| {
            row.iter().zip(dirs).map(|(&m, &y)| hinge(y, m, margin)).sum::<f64>() / row.len() as f64
        })
        .sum::<f64>()
        / n
}

/// Margin-ranking loss: mean over each factor's values, then over factors.
pub fn margin_loss(
    table: &ProbabilityTable,
    space: &FactorSpace,
    directions: &DirectionTargets,
    margin: f64,
) -> Result<f64> {
    if !directions.covers(table) {
        return Err(BirdError::validation("direction targets do not cover the table"));
    }
    Ok(margin_from_marginals(&trained_marginals(table, space, DEFAULT_SPACE_CAP)?, directions, margin))
}

fn check_batch(batch: &[TrainingSample], space: &FactorSpace) -> Result<()> {
    if batch.is_empty() {
        return Err(BirdError::validation("training batch is empty"));
    }
    for s in batch {
        space.check_assignment(&s.assignment)?;
    }
    Ok(())
}

/// `mse + alpha * margin` for one batch.
pub fn total_loss(
    table: &ProbabilityTable,
    batch: &[TrainingSample],
    space: &FactorSpace,
    directions: &DirectionTargets,
    config: &TrainingConfig,
) -> Result<f64> {
    check_batch(batch, space)?;
    if !directions.covers(table) {
        return Err(BirdError::validation("direction targets do not cover the table"));
    }
    let marginals = trained_marginals(table, space, config.space_cap)?;
    Ok(batch_mse(table, batch) + config.alpha * margin_from_marginals(&marginals, directions, config.margin))
}

/// Analytic partial derivatives of [`total_loss`] with respect to every
/// table entry.
///
/// With `s(f) = sigmoid(Σ_j logit p_{f_j})`, each entry in `f` has
/// `∂s/∂p = s (1 - s) / (p (1 - p))`. The MSE part only reaches entries used
/// by the batch; the margin part reaches every entry through the marginals.
pub fn gradients(
    table: &ProbabilityTable,
    batch: &[TrainingSample],
    space: &FactorSpace,
    directions: &DirectionTargets,
    config: &TrainingConfig,
) -> Result<Vec<Vec<f64>>> {
    check_batch(batch, space)?;
    if !directions.covers(table) {
        return Err(BirdError::validation("direction targets do not cover the table"));
    }
    let rows = table.rows();
    let dlogit: Vec<Vec<f64>> =
        rows.iter().map(|row| row.iter().map(|e| 1.0 / (e.p * (1.0 - e.p))).collect()).collect();
    let mut grad: Vec<Vec<f64>> = rows.iter().map(|row| vec![0.0; row.len()]).collect();

    let b = batch.len() as f64;
    for s in batch {
        let est = estimate(table, &s.assignment);
        let outer = -2.0 * (s.target - est) * est * (1.0 - est) / b;
        for (j, &v) in s.assignment.0.iter().enumerate() {
            grad[j][v] += outer * dlogit[j][v];
        }
    }

    let estimates = all_estimates(table, space, config.space_cap)?;
    let marginals = marginals_from(&estimates, space);
    let n = space.len() as f64;
    let total = estimates.len() as f64;
    // Coefficient of ∂T_ja for each active hinge term.
    let coeff: Vec<Vec<f64>> = marginals
        .iter()
        .zip(&directions.0)
        .zip(space.factors())
        .map(|((row, dirs), factor)| {
            let card = factor.cardinality() as f64;
            let rest = total / card;
            row.iter()
                .zip(dirs)
                .map(|(&m, &y)| {
                    if -(y as f64) * (m - 0.5) + config.margin > 0.0 {
                        config.alpha * -(y as f64) / (n * card * rest)
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();
    for (f, est) in &estimates {
        let c: f64 = f.0.iter().enumerate().map(|(j, &v)| coeff[j][v]).sum();
        if c == 0.0 {
            continue;
        }
        let g = c * est * (1.0 - est);
        for (j, &v) in f.0.iter().enumerate() {
            grad[j][v] += g * dlogit[j][v];
        }
    }
    Ok(grad)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingOutcome {
    pub table: ProbabilityTable,
    /// Full-dataset loss after each epoch.
    pub loss_trace: Vec<f64>,
    /// Full-dataset loss before the first step.
    pub initial_loss: f64,
}

/// Mini-batch SGD from the initial table.
pub fn train(space: &FactorSpace, samples: &[TrainingSample], config: &TrainingConfig) -> Result<TrainingOutcome> {
    config.validate()?;
    check_batch(samples, space)?;
    if let Some(s) = samples.iter().find(|s| !(0.0..=1.0).contains(&s.target)) {
        return Err(BirdError::validation(format!("training target {} is outside [0, 1]", s.target)));
    }
    let mut table = ProbabilityTable::initial(space, config.delta)?;
    let directions = DirectionTargets::from_table(&table);
    let initial_loss = total_loss(&table, samples, space, &directions, config)?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut loss_trace = Vec::with_capacity(config.epochs);
    let mut batch = Vec::with_capacity(config.batch_size);
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| samples[i].clone()));
            let grad = gradients(&table, &batch, space, &directions, config)?;
            for (j, row) in grad.iter().enumerate() {
                for (v, g) in row.iter().enumerate() {
                    let p = table.p(j, v);
                    table.set(j, v, p - config.learning_rate * g);
                }
            }
        }
        loss_trace.push(total_loss(&table, samples, space, &directions, config)?);
    }
    Ok(TrainingOutcome { table, loss_trace, initial_loss })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainedEntry {
    pub factor_id: String,
    pub value_id: String,
    pub p: f64,
    pub support: Support,
}

/// A trained table with its loss trace. Serialized as `trained_table.v1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainedTable {
    pub format: String,
    pub scenario_id: String,
    pub delta: f64,
    pub entries: Vec<TrainedEntry>,
    pub loss_trace: Vec<f64>,
    pub config: TrainingConfig,
}

pub const TRAINED_TABLE_FORMAT: &str = "trained_table.v1";

impl TrainedTable {
    pub fn new(space: &FactorSpace, outcome: &TrainingOutcome, config: &TrainingConfig) -> Self {
        Self::from_table(space, &outcome.table, outcome.loss_trace.clone(), config.clone())
    }

    pub fn from_table(space: &FactorSpace, table: &ProbabilityTable, loss_trace: Vec<f64>, config: TrainingConfig) -> Self {
        let entries = space
            .factors()
            .iter()
            .zip(table.rows())
            .flat_map(|(factor, row)| {
                factor.values.iter().zip(row).map(|(value, e)| TrainedEntry {
                    factor_id: factor.factor_id.clone(),
                    value_id: value.value_id.clone(),
                    p: e.p,
                    support: e.support,
                })
            })
            .collect();
        TrainedTable {
            format: TRAINED_TABLE_FORMAT.to_string(),
            scenario_id: space.scenario().id.clone(),
            delta: table.delta(),
            entries,
            loss_trace,
            config,
        }
    }

    /// Rebuilds the probability table against a space. Every value must
    /// appear exactly once.
    pub fn to_table(&self, space: &FactorSpace) -> Result<ProbabilityTable> {
        if self.format != TRAINED_TABLE_FORMAT {
            return Err(BirdError::validation(format!("unsupported table format `{}`", self.format)));
        }
        let mut slots: Vec<Vec<Option<TableEntry>>> =
            space.factors().iter().map(|f| vec![None; f.cardinality()]).collect();
        for e in &self.entries {
            let fi = space.factor_index(&e.factor_id).ok_or_else(|| BirdError::UnknownFactor(e.factor_id.clone()))?;
            let vi = space.factor(fi).value_index(&e.value_id).ok_or_else(|| BirdError::UnknownValue {
                factor: e.factor_id.clone(),
                value: e.value_id.clone(),
            })?;
            if slots[fi][vi].replace(TableEntry { p: e.p, support: e.support }).is_some() {
                return Err(BirdError::validation(format!("duplicate entry for {}/{}", e.factor_id, e.value_id)));
            }
        }
        let mut probs = Vec::with_capacity(slots.len());
        for (row, factor) in slots.iter().zip(space.factors()) {
            let mut out = Vec::with_capacity(row.len());
            for (slot, value) in row.iter().zip(&factor.values) {
                let entry = slot.ok_or_else(|| {
                    BirdError::validation(format!("missing entry for {}/{}", factor.factor_id, value.value_id))
                })?;
                if entry.support != value.support {
                    return Err(BirdError::validation(format!(
                        "support mismatch for {}/{}",
                        factor.factor_id, value.value_id
                    )));
                }
                out.push(entry.p);
            }
            probs.push(out);
        }
        ProbabilityTable::from_probabilities(space, &probs, self.delta)
    }
}
