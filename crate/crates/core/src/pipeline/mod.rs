//! LLM-dependent procedures: factor abduction, classification and pruning,
//! entailment, training-target elicitation and the verbalization baselines.
//!
//! Every model call is addressed by (prompt, sample index). Repeated samples
//! of one prompt use consecutive indices; a parse retry of sample `i` uses
//! index `i + k * RETRY_STRIDE`. Replaying a fixture therefore reproduces a
//! run exactly, whatever order the calls were issued in.

mod abduce;
mod baseline;
mod elicit;
mod entail;
pub mod parse;
pub mod prompts;
pub mod vote;

use std::sync::atomic::{AtomicUsize, Ordering};

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use crate::error::{BirdError, Result};
use crate::llm::{CompletionProvider, CompletionRequest, DEFAULT_TEMPERATURE};

pub use abduce::{space_from_factors, AbductionDraft, ClassificationVerdict};
pub use elicit::{fallback_question, render_facts};
pub use baseline::{BaselineAnswer, BaselineMode};
pub use parse::{parse_verbal_level, ParseError, VerbalLevel};
pub use prompts::{PromptKind, PromptSet, PROMPT_VERSION};

/// Offset between the sample indices of successive parse retries.
pub const RETRY_STRIDE: usize = 1000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EntailmentConfig {
    pub total_samples: usize,
    /// Passes using the two-step factor/value prompts; the rest ask about
    /// each value directly.
    pub hierarchy_count: usize,
}

impl Default for EntailmentConfig {
    fn default() -> Self {
        EntailmentConfig { total_samples: 3, hierarchy_count: 2 }
    }
}

impl EntailmentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.total_samples == 0 || self.hierarchy_count > self.total_samples {
            return Err(BirdError::validation(format!(
                "entailment needs total_samples >= 1 and hierarchy_count <= total_samples (got {} and {})",
                self.total_samples, self.hierarchy_count
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub temperature: f64,
    pub sentences_per_outcome: usize,
    pub classification_votes: usize,
    pub baseline_samples: usize,
    pub parse_retries: usize,
    pub entailment: EntailmentConfig,
    /// Single-stage factor listing instead of generate-then-summarize.
    pub direct_generation: bool,
    pub concurrency: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            temperature: DEFAULT_TEMPERATURE,
            sentences_per_outcome: 10,
            classification_votes: 3,
            baseline_samples: 3,
            parse_retries: 2,
            entailment: EntailmentConfig::default(),
            direct_generation: false,
            concurrency: 4,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature >= 0.0) {
            return Err(BirdError::validation("temperature must be non-negative"));
        }
        if self.sentences_per_outcome == 0 || self.classification_votes == 0 || self.baseline_samples == 0 {
            return Err(BirdError::validation("sample counts must be positive"));
        }
        if self.concurrency == 0 {
            return Err(BirdError::validation("concurrency must be positive"));
        }
        self.entailment.validate()
    }
}

pub struct Pipeline<P> {
    provider: P,
    prompts: PromptSet,
    config: PipelineConfig,
}

impl<P: CompletionProvider> Pipeline<P> {
    pub fn new(provider: P, prompts: PromptSet, config: PipelineConfig) -> Result<Self> {
        config.validate()?;
        Ok(Pipeline { provider, prompts, config })
    }

    pub fn with_defaults(provider: P) -> Self {
        Pipeline { provider, prompts: PromptSet::builtin(), config: PipelineConfig::default() }
    }

    pub fn provider(&self) -> &P {
        &self.provider
    }

    pub fn prompts(&self) -> &PromptSet {
        &self.prompts
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    fn render(&self, kind: PromptKind, slots: &[(&str, &str)]) -> Result<String> {
        self.prompts.render(kind, slots)
    }

    /// Sample `index` of `prompt`, parsed; retried with fresh samples on
    /// parse failure.
    fn ask<T>(&self, prompt: &str, index: usize, parse: impl Fn(&str) -> Result<T, ParseError>) -> Result<T> {
        let attempts = self.config.parse_retries + 1;
        let mut last = String::new();
        for attempt in 0..attempts {
            let request = CompletionRequest::new(prompt)
                .temperature(self.config.temperature)
                .starting_at(index + attempt * RETRY_STRIDE);
            let response = self.provider.complete(&request)?;
            let text = response
                .texts
                .first()
                .ok_or_else(|| BirdError::MalformedPayload("empty completion list".into()))?;
            match parse(text) {
                Ok(value) => return Ok(value),
                Err(e) => {
                    log::debug!("parse attempt {} failed: {e}", attempt + 1);
                    last = e.0;
                }
            }
        }
        Err(BirdError::Parse { attempts, message: last })
    }

    /// Applies `f` to every item on up to `concurrency` threads. Results keep
    /// item order; the first error by item order wins.
    fn par_map<T: Sync, R: Send>(&self, items: &[T], f: impl Fn(&T) -> Result<R> + Sync) -> Result<Vec<R>> {
        let workers = self.config.concurrency.min(items.len());
        if workers <= 1 {
            return items.iter().map(f).collect();
        }
        let next = AtomicUsize::new(0);
        let slots: Mutex<Vec<Option<Result<R>>>> = Mutex::new((0..items.len()).map(|_| None).collect());
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    let Some(item) = items.get(i) else { break };
                    let out = f(item);
                    slots.lock()[i] = Some(out);
                });
            }
        });
        slots.into_inner().into_iter().map(|r| r.expect("every item is processed")).collect()
    }
}

/// Numbered list, one item per line.
fn numbered<'a>(items: impl IntoIterator<Item = &'a str>) -> String {
    items.into_iter().enumerate().map(|(i, s)| format!("{}. {s}", i + 1)).collect::<Vec<_>>().join("\n")
}

#[cfg(test)]
pub(crate) mod testing {
    use std::sync::atomic::{AtomicUsize, Ordering};

    use crate::error::Result;
    use crate::llm::{CompletionProvider, CompletionRequest, CompletionResponse};

    /// Answers through a closure of (prompt, sample index).
    pub struct Scripted<F> {
        pub respond: F,
        pub calls: AtomicUsize,
    }

    impl<F: Fn(&str, usize) -> String + Send + Sync> Scripted<F> {
        pub fn new(respond: F) -> Self {
            Scripted { respond, calls: AtomicUsize::new(0) }
        }

        pub fn calls(&self) -> usize {
            self.calls.load(Ordering::SeqCst)
        }
    }

    impl<F: Fn(&str, usize) -> String + Send + Sync> CompletionProvider for Scripted<F> {
        fn id(&self) -> &str {
            "scripted"
        }

        fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            let texts = (0..request.n).map(|k| (self.respond)(&request.prompt, request.first_sample + k)).collect();
            Ok(CompletionResponse { texts, provider_id: "scripted".into(), cached: false })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::testing::Scripted;
    use super::*;

    #[test]
    fn retries_then_surfaces_parse_errors() {
        let provider = Scripted::new(|_: &str, i: usize| if i == 2 * RETRY_STRIDE { "likely".into() } else { "hmm".into() });
        let pipeline = Pipeline::with_defaults(provider);
        assert_eq!(pipeline.ask("p", 0, parse_verbal_level).unwrap(), VerbalLevel::Likely);
        assert_eq!(pipeline.provider().calls(), 3);
        match pipeline.ask("p", 1, parse_verbal_level) {
            Err(BirdError::Parse { attempts: 3, .. }) => {}
            other => panic!("expected a parse error, got {other:?}"),
        }
    }

    #[test]
    fn par_map_keeps_order() {
        let pipeline = Pipeline::with_defaults(Scripted::new(|_: &str, _| String::new()));
        let items: Vec<usize> = (0..50).collect();
        let out = pipeline.par_map(&items, |&i| Ok(i * 2)).unwrap();
        assert_eq!(out, items.iter().map(|i| i * 2).collect::<Vec<_>>());
        let err = pipeline.par_map(&items, |&i| if i % 7 == 3 { Err(BirdError::validation(i.to_string())) } else { Ok(i) });
        assert!(matches!(err, Err(BirdError::Validation(m)) if m == "3"));
    }

    #[test]
    fn config_validation() {
        let mut config = PipelineConfig::default();
        config.entailment.hierarchy_count = 4;
        assert!(config.validate().is_err());
        assert!(EntailmentConfig { total_samples: 3, hierarchy_count: 0 }.validate().is_ok());
    }
}
