//! Bayesian inference over abduced factors for binary decisions.
//!
//! The numeric core lives in [`factor_model`], [`pool`], [`engine`] and
//! [`trainer`]. Language-model access goes through [`llm`], and [`pipeline`]
//! turns model output into factor spaces, observations and training targets.

pub mod error;
pub mod factor_model;
pub mod pool;
pub mod engine;
pub mod trainer;
pub mod llm;
pub mod pipeline;
pub mod bundle;
pub mod eval;
pub mod session;

pub use error::{BirdError, Result};
pub use factor_model::{
    consistent, enumerate_space, sample_assignments, CompleteAssignment, Condition, Factor, FactorSpace, FactorValue,
    Outcome, PartialObservation, Scenario, Support,
};
pub use pool::{pool_equal, pool_weighted, EstimatorKind, PoolWeights, ProbabilityTable};
pub use engine::{infer, OutcomeEstimate, PreferenceOverride, Verdict};
pub use bundle::{BundleCatalog, ScenarioBundle};
pub use session::{DecisionSession, SessionEvent, SessionStore};
