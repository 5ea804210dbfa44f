//! Evaluation protocols over JSON-lines datasets.
//!
//! * `pairwise_eval.v1`: two conditions per record; gold says which one
//!   better supports the target outcome (or that they are the same).
//! * `decision_eval.v1`: one condition per record; gold is the outcome.
//!
//! A condition may carry a pre-computed `observation`; otherwise it is
//! entailed through an [`Entailer`].

mod metrics;

use std::fmt::Write as _;
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bundle::{BundleCatalog, ScenarioBundle};
use crate::engine::{infer_with, pairwise_prefer_with, EngineConfig, Preference, Verdict};
use crate::error::{BirdError, Result};
use crate::factor_model::{Outcome, PartialObservation};
use crate::llm::CompletionProvider;
use crate::pipeline::Pipeline;
use crate::pool::EstimatorKind;

pub use metrics::{f1, CategoryScore, Confusion};

pub const PAIRWISE_FORMAT: &str = "pairwise_eval.v1";
pub const DECISION_FORMAT: &str = "decision_eval.v1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "RawCondition")]
pub struct ConditionInput {
    pub text: String,
    pub observation: Option<PartialObservation>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawCondition {
    Text(String),
    Full { text: String, #[serde(default)] observation: Option<PartialObservation> },
}

impl From<RawCondition> for ConditionInput {
    fn from(raw: RawCondition) -> Self {
        match raw {
            RawCondition::Text(text) => ConditionInput { text, observation: None },
            RawCondition::Full { text, observation } => ConditionInput { text, observation },
        }
    }
}

fn default_outcome() -> Outcome {
    Outcome::Outcome1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairwiseRecord {
    pub format: String,
    pub id: String,
    pub scenario_id: String,
    /// Outcome both conditions support.
    #[serde(default = "default_outcome")]
    pub outcome: Outcome,
    pub conditions: Vec<ConditionInput>,
    pub gold: Preference,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub format: String,
    pub id: String,
    pub scenario_id: String,
    pub condition: ConditionInput,
    pub gold: Outcome,
}

#[derive(Clone, Debug, PartialEq)]
pub enum EvalRecord {
    Pairwise(PairwiseRecord),
    Decision(DecisionRecord),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalTask {
    Pairwise,
    Decisions,
}

impl std::str::FromStr for EvalTask {
    type Err = BirdError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pairwise" => Ok(EvalTask::Pairwise),
            "decisions" | "decision" => Ok(EvalTask::Decisions),
            other => Err(BirdError::validation(format!("unknown evaluation task `{other}`"))),
        }
    }
}

fn read_lines<T, R: BufRead>(reader: R, check: impl Fn(&T) -> std::result::Result<(), String>) -> Result<Vec<T>>
where
    T: for<'de> Deserialize<'de>,
{
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let schema = |message: String| BirdError::Schema { line: i + 1, message };
        let record: T = serde_json::from_str(&line).map_err(|e| schema(e.to_string()))?;
        check(&record).map_err(schema)?;
        out.push(record);
    }
    Ok(out)
}

fn check_format(found: &str, expected: &str) -> std::result::Result<(), String> {
    if found == expected { Ok(()) } else { Err(format!("expected format `{expected}`, found `{found}`")) }
}

pub fn read_pairwise<R: BufRead>(reader: R) -> Result<Vec<PairwiseRecord>> {
    read_lines(reader, |r: &PairwiseRecord| {
        check_format(&r.format, PAIRWISE_FORMAT)?;
        if r.conditions.len() != 2 {
            return Err(format!("record `{}` has {} condition(s), pairwise records need 2", r.id, r.conditions.len()));
        }
        if r.conditions.iter().any(|c| c.text.trim().is_empty() && c.observation.is_none()) {
            return Err(format!("record `{}` has an empty condition", r.id));
        }
        Ok(())
    })
}

pub fn read_decisions<R: BufRead>(reader: R) -> Result<Vec<DecisionRecord>> {
    read_lines(reader, |r: &DecisionRecord| {
        check_format(&r.format, DECISION_FORMAT)?;
        if r.condition.text.trim().is_empty() && r.condition.observation.is_none() {
            return Err(format!("record `{}` has an empty condition", r.id));
        }
        Ok(())
    })
}

pub fn ingest(path: impl AsRef<Path>, task: EvalTask) -> Result<Vec<EvalRecord>> {
    let reader = std::io::BufReader::new(std::fs::File::open(path)?);
    Ok(match task {
        EvalTask::Pairwise => read_pairwise(reader)?.into_iter().map(EvalRecord::Pairwise).collect(),
        EvalTask::Decisions => read_decisions(reader)?.into_iter().map(EvalRecord::Decision).collect(),
    })
}

/// Maps condition text to an observation over a bundle's space.
pub trait Entailer {
    fn observe(&self, bundle: &ScenarioBundle, condition: &str) -> Result<PartialObservation>;
}

impl<P: CompletionProvider> Entailer for Pipeline<P> {
    fn observe(&self, bundle: &ScenarioBundle, condition: &str) -> Result<PartialObservation> {
        self.entail(&bundle.space, condition)
    }
}

/// For datasets whose records all carry observations.
pub struct PrecomputedOnly;

impl Entailer for PrecomputedOnly {
    fn observe(&self, _: &ScenarioBundle, condition: &str) -> Result<PartialObservation> {
        Err(BirdError::validation(format!(
            "condition {condition:?} has no observation and no provider is configured"
        )))
    }
}

fn observation(c: &ConditionInput, bundle: &ScenarioBundle, entailer: &dyn Entailer) -> Result<PartialObservation> {
    let obs = match &c.observation {
        Some(o) => o.clone(),
        None => entailer.observe(bundle, &c.text)?,
    };
    bundle.space.resolve(&obs)?;
    Ok(obs)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: EvalTask,
    pub estimator: EstimatorKind,
    pub total: usize,
    pub decided: usize,
    pub unknown: usize,
    pub unknown_rate: f64,
    /// Correct over decided records.
    pub accuracy: Option<f64>,
    pub per_category: Vec<CategoryScore>,
    pub micro_f1: f64,
    pub confusion: Confusion,
}

fn report(task: EvalTask, kind: EstimatorKind, confusion: Confusion, categories: usize, unknown: usize) -> EvalReport {
    let decided = confusion.total();
    let total = decided + unknown;
    EvalReport {
        task,
        estimator: kind,
        total,
        decided,
        unknown,
        unknown_rate: if total == 0 { 0.0 } else { unknown as f64 / total as f64 },
        accuracy: (decided > 0).then(|| confusion.correct() as f64 / decided as f64),
        per_category: confusion.category_scores(categories),
        micro_f1: confusion.micro_f1(categories),
        confusion,
    }
}

pub const PAIRWISE_LABELS: [&str; 3] = ["condition1", "condition2", "same"];
pub const DECISION_LABELS: [&str; 3] = ["outcome1", "outcome2", "tie"];

fn preference_index(p: Preference) -> usize {
    match p {
        Preference::Condition1 => 0,
        Preference::Condition2 => 1,
        Preference::Same => 2,
    }
}

/// Pairwise report from (gold, predicted) pairs; `None` predictions are
/// unknowns.
pub fn pairwise_report(kind: EstimatorKind, pairs: &[(Preference, Option<Preference>)]) -> EvalReport {
    let mut confusion = Confusion::new(&PAIRWISE_LABELS);
    let mut unknown = 0;
    for &(gold, predicted) in pairs {
        match predicted {
            Some(p) => confusion.add(preference_index(gold), preference_index(p)),
            None => unknown += 1,
        }
    }
    report(EvalTask::Pairwise, kind, confusion, 3, unknown)
}

/// Decision report from (gold, verdict) pairs. A tie is decided and wrong.
pub fn decision_report(kind: EstimatorKind, pairs: &[(Outcome, Verdict)]) -> EvalReport {
    let mut confusion = Confusion::new(&DECISION_LABELS);
    let mut unknown = 0;
    for &(gold, verdict) in pairs {
        let g = if gold == Outcome::Outcome1 { 0 } else { 1 };
        match verdict {
            Verdict::Outcome1 => confusion.add(g, 0),
            Verdict::Outcome2 => confusion.add(g, 1),
            Verdict::Tie => confusion.add(g, 2),
            Verdict::Unknown => unknown += 1,
        }
    }
    report(EvalTask::Decisions, kind, confusion, 2, unknown)
}

/// Records with their observations resolved once, for scoring under any
/// number of estimators.
pub struct ResolvedPairwise<'a> {
    records: Vec<(&'a PairwiseRecord, PartialObservation, PartialObservation)>,
}

pub fn resolve_pairwise<'a>(
    records: &'a [PairwiseRecord],
    catalog: &BundleCatalog,
    entailer: &dyn Entailer,
) -> Result<ResolvedPairwise<'a>> {
    let records = records
        .iter()
        .map(|r| {
            let bundle = catalog.get(&r.scenario_id)?;
            let (c1, c2) = match r.conditions.as_slice() {
                [a, b] => (a, b),
                _ => return Err(BirdError::validation(format!("record `{}` needs two conditions", r.id))),
            };
            Ok((r, observation(c1, bundle, entailer)?, observation(c2, bundle, entailer)?))
        })
        .collect::<Result<_>>()?;
    Ok(ResolvedPairwise { records })
}

impl ResolvedPairwise<'_> {
    /// A pair with an empty observation on either side is unknown.
    pub fn predictions(&self, catalog: &BundleCatalog, kind: EstimatorKind, config: &EngineConfig) -> Result<Vec<(Preference, Option<Preference>)>> {
        self.records
            .iter()
            .map(|(r, o1, o2)| {
                if o1.is_empty() || o2.is_empty() {
                    return Ok((r.gold, None));
                }
                let bundle = catalog.get(&r.scenario_id)?;
                let table = bundle.table_for(kind)?;
                let p = pairwise_prefer_with(config, &bundle.space, &table, o1, o2, r.outcome, kind)?;
                Ok((r.gold, Some(p)))
            })
            .collect()
    }

    pub fn score(&self, catalog: &BundleCatalog, kind: EstimatorKind, config: &EngineConfig) -> Result<EvalReport> {
        Ok(pairwise_report(kind, &self.predictions(catalog, kind, config)?))
    }
}

pub struct ResolvedDecisions<'a> {
    records: Vec<(&'a DecisionRecord, PartialObservation)>,
}

pub fn resolve_decisions<'a>(
    records: &'a [DecisionRecord],
    catalog: &BundleCatalog,
    entailer: &dyn Entailer,
) -> Result<ResolvedDecisions<'a>> {
    let records = records
        .iter()
        .map(|r| Ok((r, observation(&r.condition, catalog.get(&r.scenario_id)?, entailer)?)))
        .collect::<Result<_>>()?;
    Ok(ResolvedDecisions { records })
}

impl ResolvedDecisions<'_> {
    pub fn verdicts(&self, catalog: &BundleCatalog, kind: EstimatorKind, config: &EngineConfig) -> Result<Vec<(Outcome, Verdict)>> {
        self.records
            .iter()
            .map(|(r, obs)| {
                let bundle = catalog.get(&r.scenario_id)?;
                let table = bundle.table_for(kind)?;
                let estimate = infer_with(config, &bundle.space, &table, obs, kind, None)?;
                Ok((r.gold, estimate.verdict))
            })
            .collect()
    }

    pub fn score(&self, catalog: &BundleCatalog, kind: EstimatorKind, config: &EngineConfig) -> Result<EvalReport> {
        Ok(decision_report(kind, &self.verdicts(catalog, kind, config)?))
    }
}

pub fn run_pairwise(records: &[PairwiseRecord], catalog: &BundleCatalog, kind: EstimatorKind, entailer: &dyn Entailer) -> Result<EvalReport> {
    resolve_pairwise(records, catalog, entailer)?.score(catalog, kind, &EngineConfig::default())
}

pub fn run_decisions(records: &[DecisionRecord], catalog: &BundleCatalog, kind: EstimatorKind, entailer: &dyn Entailer) -> Result<EvalReport> {
    resolve_decisions(records, catalog, entailer)?.score(catalog, kind, &EngineConfig::default())
}

/// One report per estimator, entailing each condition once.
pub fn sweep_pairwise(records: &[PairwiseRecord], catalog: &BundleCatalog, kinds: &[EstimatorKind], entailer: &dyn Entailer) -> Result<Vec<EvalReport>> {
    let resolved = resolve_pairwise(records, catalog, entailer)?;
    kinds.iter().map(|&k| resolved.score(catalog, k, &EngineConfig::default())).collect()
}

pub fn sweep_decisions(records: &[DecisionRecord], catalog: &BundleCatalog, kinds: &[EstimatorKind], entailer: &dyn Entailer) -> Result<Vec<EvalReport>> {
    let resolved = resolve_decisions(records, catalog, entailer)?;
    kinds.iter().map(|&k| resolved.score(catalog, k, &EngineConfig::default())).collect()
}

/// Direct versus two-stage factor generation on the same decision set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationComparison {
    pub direct: EvalReport,
    pub abduction: EvalReport,
    /// Abduction accuracy minus direct accuracy.
    pub accuracy_gain: Option<f64>,
    /// Direct unknown rate minus abduction unknown rate.
    pub unknown_rate_reduction: f64,
}

pub fn compare_ablation(direct: EvalReport, abduction: EvalReport) -> AblationComparison {
    let accuracy_gain = match (abduction.accuracy, direct.accuracy) {
        (Some(a), Some(d)) => Some(a - d),
        _ => None,
    };
    let unknown_rate_reduction = direct.unknown_rate - abduction.unknown_rate;
    AblationComparison { direct, abduction, accuracy_gain, unknown_rate_reduction }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.3}"))
}

/// Plain-text table, one row per report.
pub fn render_table(reports: &[EvalReport]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<10} {:<16} {:>6} {:>7} {:>8} {:>8} {:>8}  per-category F1",
        "task", "estimator", "total", "decided", "unknown", "accuracy", "micro-F1"
    );
    for r in reports {
        let task = match r.task {
            EvalTask::Pairwise => "pairwise",
            EvalTask::Decisions => "decisions",
        };
        let cats: Vec<String> = r.per_category.iter().map(|c| format!("{}={:.3}", c.label, c.f1)).collect();
        let _ = writeln!(
            out,
            "{:<10} {:<16} {:>6} {:>7} {:>7.1}% {:>8} {:>8.3}  {}",
            task,
            r.estimator.as_str(),
            r.total,
            r.decided,
            100.0 * r.unknown_rate,
            opt(r.accuracy),
            r.micro_f1,
            cats.join(" ")
        );
    }
    out
}
