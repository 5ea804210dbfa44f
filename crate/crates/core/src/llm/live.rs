use std::time::Duration;

use parking_lot::{Condvar, Mutex};
use serde_json::{json, Value};

use super::{CompletionProvider, CompletionRequest, CompletionResponse};
use crate::error::{BirdError, Result};

pub const ENV_BASE_URL: &str = "BIRD_LLM_BASE_URL";
pub const ENV_MODEL: &str = "BIRD_LLM_MODEL";
pub const ENV_API_KEY: &str = "BIRD_LLM_API_KEY";

/// Settings for an OpenAI-compatible `chat/completions` endpoint.
#[derive(Clone, Debug)]
pub struct LiveConfig {
    pub base_url: String,
    pub model: String,
    pub api_key: Option<String>,
    pub max_attempts: u32,
    pub backoff: Duration,
    pub timeout: Duration,
    pub max_in_flight: usize,
}

impl LiveConfig {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        LiveConfig {
            base_url: base_url.into(),
            model: model.into(),
            api_key: None,
            max_attempts: 5,
            backoff: Duration::from_millis(500),
            timeout: Duration::from_secs(120),
            max_in_flight: 4,
        }
    }

    /// Reads the endpoint, model and key from the environment.
    pub fn from_env() -> Result<Self> {
        let var = |name: &str| std::env::var(name).ok().filter(|v| !v.trim().is_empty());
        let base_url = var(ENV_BASE_URL)
            .ok_or_else(|| BirdError::Provider(format!("{ENV_BASE_URL} is not set")))?;
        let model = var(ENV_MODEL).ok_or_else(|| BirdError::Provider(format!("{ENV_MODEL} is not set")))?;
        let mut config = LiveConfig::new(base_url, model);
        config.api_key = var(ENV_API_KEY);
        Ok(config)
    }
}

/// Counting semaphore bounding concurrent HTTP calls.
#[derive(Debug)]
struct Gate {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Gate {
    fn acquire(&self) -> GateGuard<'_> {
        let mut free = self.free.lock();
        while *free == 0 {
            self.cv.wait(&mut free);
        }
        *free -= 1;
        GateGuard(self)
    }
}

struct GateGuard<'a>(&'a Gate);

impl Drop for GateGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock() += 1;
        self.0.cv.notify_one();
    }
}

enum Attempt {
    Retry(String),
    Fatal(BirdError),
}

pub struct LiveProvider {
    config: LiveConfig,
    client: reqwest::blocking::Client,
    gate: Gate,
}

impl LiveProvider {
    pub fn new(config: LiveConfig) -> Result<Self> {
        if config.max_attempts == 0 || config.max_in_flight == 0 {
            return Err(BirdError::validation("max_attempts and max_in_flight must be positive"));
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| BirdError::Provider(e.to_string()))?;
        let gate = Gate { free: Mutex::new(config.max_in_flight), cv: Condvar::new() };
        Ok(LiveProvider { config, client, gate })
    }

    pub fn from_env() -> Result<Self> {
        LiveProvider::new(LiveConfig::from_env()?)
    }

    fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'))
    }

    fn body(&self, request: &CompletionRequest, n: usize) -> Value {
        let mut body = json!({
            "model": self.config.model,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": request.temperature,
            "n": n,
        });
        if let Some(max) = request.max_tokens {
            body["max_tokens"] = json!(max);
        }
        if !request.stop.is_empty() {
            body["stop"] = json!(request.stop);
        }
        body
    }

    fn attempt(&self, body: &Value) -> std::result::Result<Vec<String>, Attempt> {
        let _slot = self.gate.acquire();
        let mut call = self.client.post(self.endpoint()).json(body);
        if let Some(key) = &self.config.api_key {
            call = call.bearer_auth(key);
        }
        let response = call.send().map_err(|e| Attempt::Retry(e.to_string()))?;
        let status = response.status();
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(Attempt::Retry(format!("HTTP {status}")));
        }
        if !status.is_success() {
            let text = response.text().unwrap_or_default();
            return Err(Attempt::Fatal(BirdError::Provider(format!("HTTP {status}: {text}"))));
        }
        let payload: Value = response
            .json()
            .map_err(|e| Attempt::Fatal(BirdError::MalformedPayload(e.to_string())))?;
        parse_choices(&payload).map_err(Attempt::Fatal)
    }

    fn call_with_retries(&self, body: &Value) -> Result<Vec<String>> {
        let mut last = String::new();
        for attempt in 0..self.config.max_attempts {
            if attempt > 0 {
                std::thread::sleep(self.config.backoff * 2u32.saturating_pow(attempt - 1));
            }
            match self.attempt(body) {
                Ok(texts) => return Ok(texts),
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retry(msg)) => {
                    log::warn!("completion attempt {} failed: {msg}", attempt + 1);
                    last = msg;
                }
            }
        }
        Err(BirdError::Provider(format!("gave up after {} attempts: {last}", self.config.max_attempts)))
    }
}

fn parse_choices(payload: &Value) -> Result<Vec<String>> {
    let choices = payload
        .get("choices")
        .and_then(Value::as_array)
        .ok_or_else(|| BirdError::MalformedPayload("response has no `choices` array".into()))?;
    choices
        .iter()
        .map(|c| {
            c.pointer("/message/content")
                .or_else(|| c.get("text"))
                .and_then(Value::as_str)
                .map(str::to_string)
                .ok_or_else(|| BirdError::MalformedPayload("choice without text content".into()))
        })
        .collect()
}

impl CompletionProvider for LiveProvider {
    fn id(&self) -> &str {
        &self.config.model
    }

    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse> {
        request.validate()?;
        // Some servers ignore `n`; keep asking until enough samples arrive.
        let mut texts = Vec::with_capacity(request.n);
        while texts.len() < request.n {
            let got = self.call_with_retries(&self.body(request, request.n - texts.len()))?;
            if got.is_empty() {
                return Err(BirdError::MalformedPayload("response has no choices".into()));
            }
            texts.extend(got);
        }
        texts.truncate(request.n);
        Ok(CompletionResponse { texts, provider_id: self.config.model.clone(), cached: false })
    }
}
