//! Text-completion providers.
//!
//! Every backend implements [`CompletionProvider`]. Samples are addressed by
//! index: a request asks for samples `first_sample .. first_sample + n` of a
//! prompt, which keeps cache lookups and fixture replay stateless.

mod cache;
mod fixture;
mod live;

use sha2::{Digest, Sha256};
use serde::{Deserialize, Serialize};

use crate::error::Result;

pub use cache::{CacheRecord, CachedProvider, ResponseCache, CACHE_FORMAT};
pub use fixture::{FixtureProvider, FixtureStore};
pub use live::{LiveConfig, LiveProvider, ENV_API_KEY, ENV_BASE_URL, ENV_MODEL};

pub const DEFAULT_TEMPERATURE: f64 = 0.7;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub prompt: String,
    pub temperature: f64,
    pub n: usize,
    pub max_tokens: Option<u32>,
    pub stop: Vec<String>,
    /// Index of the first requested sample.
    pub first_sample: usize,
}

impl CompletionRequest {
    pub fn new(prompt: impl Into<String>) -> Self {
        CompletionRequest {
            prompt: prompt.into(),
            temperature: DEFAULT_TEMPERATURE,
            n: 1,
            max_tokens: None,
            stop: Vec::new(),
            first_sample: 0,
        }
    }

    pub fn samples(mut self, n: usize) -> Self {
        self.n = n;
        self
    }

    pub fn starting_at(mut self, first_sample: usize) -> Self {
        self.first_sample = first_sample;
        self
    }

    pub fn temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }

    pub fn max_tokens(mut self, max_tokens: u32) -> Self {
        self.max_tokens = Some(max_tokens);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(crate::BirdError::validation("a completion request needs n >= 1"));
        }
        if !(self.temperature >= 0.0) {
            return Err(crate::BirdError::validation("temperature must be non-negative"));
        }
        Ok(())
    }

    pub fn digest(&self) -> String {
        canonical_digest(&self.prompt, self.temperature)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompletionResponse {
    pub texts: Vec<String>,
    pub provider_id: String,
    pub cached: bool,
}

pub trait CompletionProvider: Send + Sync {
    fn id(&self) -> &str;

    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse>;
}

impl<P: CompletionProvider + ?Sized> CompletionProvider for std::sync::Arc<P> {
    fn id(&self) -> &str {
        (**self).id()
    }

    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse> {
        (**self).complete(request)
    }
}

impl<P: CompletionProvider + ?Sized> CompletionProvider for Box<P> {
    fn id(&self) -> &str {
        (**self).id()
    }

    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse> {
        (**self).complete(request)
    }
}

/// Prompt text with line endings unified, trailing whitespace removed from
/// every line and leading/trailing blank lines dropped.
pub fn normalize_prompt(prompt: &str) -> String {
    let lines: Vec<&str> = prompt.lines().map(str::trim_end).collect();
    lines.join("\n").trim_matches('\n').to_string()
}

/// Hex SHA-256 of `"bird-prompt-v1\n" + temperature (4 decimals) + "\n" +
/// normalized prompt`.
pub fn canonical_digest(prompt: &str, temperature: f64) -> String {
    let mut hasher = Sha256::new();
    hasher.update(b"bird-prompt-v1\n");
    hasher.update(format!("{temperature:.4}\n").as_bytes());
    hasher.update(normalize_prompt(prompt).as_bytes());
    hex::encode(hasher.finalize())
}
