//! TOML configuration shared by every subcommand.
//!
//! ```toml
//! [provider]
//! base_url = "http://localhost:8000/v1"
//! model = "llama-2-70b-chat"
//! fixtures = ["fixtures/phone.jsonl"]
//! cache = "llm_cache.jsonl"
//!
//! [pipeline]
//! temperature = 0.7
//!
//! [training]
//! seed = 7
//!
//! [server]
//! sessions = "sessions.jsonl"
//! bundles = ["bundles/"]
//! ```

use std::path::{Path, PathBuf};

use anyhow::Context;
use bird_core::llm::{
    CachedProvider, CompletionProvider, CompletionRequest, CompletionResponse, FixtureProvider, LiveConfig, LiveProvider,
    ResponseCache,
};
use bird_core::pipeline::{PipelineConfig, PromptSet};
use bird_core::trainer::TrainingConfig;
use bird_core::engine::FollowupStrategy;
use bird_core::BirdError;
use serde::Deserialize;

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProviderConfig {
    pub base_url: Option<String>,
    pub model: Option<String>,
    /// Name of the environment variable holding the API key.
    pub api_key_env: Option<String>,
    pub fixtures: Vec<PathBuf>,
    pub cache: Option<PathBuf>,
    pub max_in_flight: Option<usize>,
    pub max_attempts: Option<u32>,
    pub timeout_secs: Option<u64>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerConfig {
    pub sessions: Option<PathBuf>,
    pub bundles: Vec<PathBuf>,
    pub followup: FollowupStrategy,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub provider: ProviderConfig,
    pub pipeline: PipelineConfig,
    pub training: TrainingConfig,
    pub server: ServerConfig,
    /// Directory of prompt templates replacing the built-in ones.
    pub prompts: Option<PathBuf>,
}

impl AppConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let config: AppConfig = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        config.pipeline.validate()?;
        config.training.validate()?;
        Ok(config)
    }

    pub fn prompt_set(&self) -> anyhow::Result<PromptSet> {
        Ok(match &self.prompts {
            Some(dir) => PromptSet::with_overrides(dir)?,
            None => PromptSet::builtin(),
        })
    }

    /// Fixture replay when fixtures are given, the live endpoint when one is
    /// configured, otherwise a provider that refuses every call. Wrapped in
    /// the response cache when a cache path is set.
    pub fn provider(&self) -> anyhow::Result<Box<dyn CompletionProvider>> {
        let p = &self.provider;
        let base: Box<dyn CompletionProvider> = if !p.fixtures.is_empty() {
            Box::new(FixtureProvider::from_files(&p.fixtures)?)
        } else if let Some(live) = self.live_config()? {
            Box::new(LiveProvider::new(live)?)
        } else {
            Box::new(Unconfigured)
        };
        Ok(match &p.cache {
            Some(path) => Box::new(CachedProvider::new(base, ResponseCache::open(path)?)),
            None => base,
        })
    }

    fn live_config(&self) -> anyhow::Result<Option<LiveConfig>> {
        let p = &self.provider;
        let mut config = match (&p.base_url, &p.model) {
            (Some(url), Some(model)) => {
                let mut c = LiveConfig::new(url, model);
                let key_var = p.api_key_env.as_deref().unwrap_or(bird_core::llm::ENV_API_KEY);
                c.api_key = std::env::var(key_var).ok().filter(|k| !k.is_empty());
                c
            }
            (None, None) => match LiveConfig::from_env() {
                Ok(c) => c,
                Err(_) => return Ok(None),
            },
            _ => anyhow::bail!("provider.base_url and provider.model must be set together"),
        };
        if let Some(n) = p.max_in_flight {
            config.max_in_flight = n;
        }
        if let Some(n) = p.max_attempts {
            config.max_attempts = n;
        }
        if let Some(s) = p.timeout_secs {
            config.timeout = std::time::Duration::from_secs(s);
        }
        Ok(Some(config))
    }
}

/// Stand-in when no model is available; commands that only need stored
/// observations still work.
struct Unconfigured;

impl CompletionProvider for Unconfigured {
    fn id(&self) -> &str {
        "none"
    }

    fn complete(&self, _: &CompletionRequest) -> bird_core::Result<CompletionResponse> {
        Err(BirdError::Provider(format!(
            "no model provider configured; pass --fixture or set {} and {}",
            bird_core::llm::ENV_BASE_URL,
            bird_core::llm::ENV_MODEL
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_sections() {
        let config: AppConfig = toml::from_str(
            r#"
            [provider]
            fixtures = ["a.jsonl"]
            cache = "c.jsonl"
            [pipeline]
            temperature = 0.0
            [pipeline.entailment]
            hierarchy_count = 1
            [training]
            seed = 9
            [server]
            followup = "max_shift"
            "#,
        )
        .unwrap();
        assert_eq!(config.provider.fixtures, vec![PathBuf::from("a.jsonl")]);
        assert_eq!(config.pipeline.entailment.hierarchy_count, 1);
        assert_eq!(config.pipeline.entailment.total_samples, 3);
        assert_eq!(config.training.seed, 9);
        assert_eq!(config.training.epochs, 20);
        assert_eq!(config.server.followup, FollowupStrategy::MaxShift);
        assert!(toml::from_str::<AppConfig>("[provider]\nmodle = \"x\"").is_err());
    }

    #[test]
    fn unconfigured_provider_refuses() {
        let err = Unconfigured.complete(&CompletionRequest::new("p")).unwrap_err();
        assert!(err.to_string().contains("no model provider"));
    }
}
