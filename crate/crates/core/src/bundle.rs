//! Scenario bundles: a factor space with its classification votes, trained
//! table and enough provenance to replay the run from fixtures.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{BirdError, Result};
use crate::factor_model::{sample_assignments, FactorSpace, Scenario};
use crate::llm::CompletionProvider;
use crate::pipeline::{ClassificationVerdict, Pipeline};
use crate::pool::{EstimatorKind, ProbabilityTable};
use crate::trainer::{train, TrainedTable, TrainingConfig};

pub const BUNDLE_FORMAT: &str = "scenario_bundle.v1";

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Provenance {
    pub tool_version: String,
    pub provider_id: String,
    pub prompt_versions: Vec<String>,
    pub direct_generation: bool,
    /// Seed for training-set sampling and batch order.
    pub train_seed: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioBundle {
    pub format: String,
    pub space: FactorSpace,
    pub verdicts: Vec<ClassificationVerdict>,
    pub trained: Option<TrainedTable>,
    pub provenance: Provenance,
}

impl ScenarioBundle {
    pub fn new(space: FactorSpace, verdicts: Vec<ClassificationVerdict>, provenance: Provenance) -> Self {
        ScenarioBundle { format: BUNDLE_FORMAT.to_string(), space, verdicts, trained: None, provenance }
    }

    pub fn scenario(&self) -> &Scenario {
        self.space.scenario()
    }

    pub fn scenario_id(&self) -> &str {
        &self.space.scenario().id
    }

    pub fn validate(&self) -> Result<()> {
        if self.format != BUNDLE_FORMAT {
            return Err(BirdError::validation(format!("unsupported bundle format `{}`", self.format)));
        }
        if let Some(trained) = &self.trained {
            if trained.scenario_id != self.scenario_id() {
                return Err(BirdError::validation(format!(
                    "trained table belongs to scenario `{}`, bundle is `{}`",
                    trained.scenario_id,
                    self.scenario_id()
                )));
            }
            trained.to_table(&self.space)?;
        }
        Ok(())
    }

    pub fn with_trained(mut self, trained: TrainedTable) -> Result<Self> {
        self.trained = Some(trained);
        self.validate()?;
        Ok(self)
    }

    /// The trained table when present, otherwise the initial one.
    pub fn table(&self) -> Result<ProbabilityTable> {
        match &self.trained {
            Some(t) => t.to_table(&self.space),
            None => ProbabilityTable::initial(&self.space, crate::pool::DEFAULT_DELTA),
        }
    }

    /// Table for an estimator; the trained estimator needs a trained table.
    pub fn table_for(&self, kind: EstimatorKind) -> Result<ProbabilityTable> {
        if kind == EstimatorKind::Trained && self.trained.is_none() {
            return Err(BirdError::validation(format!("bundle `{}` has no trained table", self.scenario_id())));
        }
        self.table()
    }

    pub fn loss_trace(&self) -> &[f64] {
        self.trained.as_ref().map_or(&[], |t| &t.loss_trace)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let bundle: ScenarioBundle = serde_json::from_str(text)?;
        bundle.validate()?;
        Ok(bundle)
    }

    pub fn to_json_pretty(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut text = self.to_json_pretty()?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }
}

/// Factor generation and pruning for one scenario.
pub fn abduce_bundle<P: CompletionProvider>(pipeline: &Pipeline<P>, scenario: &Scenario) -> Result<ScenarioBundle> {
    let space = pipeline.generate_factors(scenario)?;
    let (pruned, verdicts) = pipeline.classify_and_prune(&space)?;
    let provenance = Provenance {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        provider_id: pipeline.provider().id().to_string(),
        prompt_versions: pipeline.prompts().versions(),
        direct_generation: pipeline.config().direct_generation,
        train_seed: None,
    };
    Ok(ScenarioBundle::new(pruned, verdicts, provenance))
}

/// Samples complete assignments, elicits their targets and trains a table.
pub fn train_bundle<P: CompletionProvider>(
    pipeline: &Pipeline<P>,
    bundle: &ScenarioBundle,
    config: &TrainingConfig,
) -> Result<TrainedTable> {
    config.validate()?;
    let assignments = sample_assignments(&bundle.space, config.sample_count, config.seed)?;
    let samples = pipeline.elicit_targets(&bundle.space, &assignments)?;
    let outcome = train(&bundle.space, &samples, config)?;
    Ok(TrainedTable::new(&bundle.space, &outcome, config))
}

/// Bundles by scenario id.
#[derive(Clone, Debug, Default)]
pub struct BundleCatalog {
    bundles: BTreeMap<String, ScenarioBundle>,
}

impl BundleCatalog {
    pub fn new() -> Self {
        Self::default()
    }

    /// Loads bundle files; directories contribute every `*.json` inside.
    pub fn load<P: AsRef<Path>>(paths: &[P]) -> Result<Self> {
        let mut catalog = BundleCatalog::new();
        for path in paths {
            let path = path.as_ref();
            let files: Vec<PathBuf> = if path.is_dir() {
                let mut found: Vec<PathBuf> = std::fs::read_dir(path)?
                    .filter_map(|e| e.ok().map(|e| e.path()))
                    .filter(|p| p.extension().is_some_and(|x| x == "json"))
                    .collect();
                found.sort();
                found
            } else {
                vec![path.to_path_buf()]
            };
            for file in files {
                catalog.insert(ScenarioBundle::load(&file)?);
            }
        }
        Ok(catalog)
    }

    pub fn insert(&mut self, bundle: ScenarioBundle) {
        self.bundles.insert(bundle.scenario_id().to_string(), bundle);
    }

    pub fn get(&self, scenario_id: &str) -> Result<&ScenarioBundle> {
        self.bundles.get(scenario_id).ok_or_else(|| BirdError::MissingBundle(scenario_id.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = &ScenarioBundle> {
        self.bundles.values()
    }

    pub fn len(&self) -> usize {
        self.bundles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bundles.is_empty()
    }
}
