use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use super::cache::{read_records, CacheRecord};
use super::{CompletionProvider, CompletionRequest, CompletionResponse};
use crate::error::{BirdError, Result};

/// Recorded completions per prompt digest, keyed by sample index.
#[derive(Clone, Debug, Default)]
pub struct FixtureStore {
    recordings: HashMap<String, BTreeMap<usize, String>>,
}

impl FixtureStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Loads one or more `llm_cache.v1` files. Later files add to earlier ones.
    pub fn load<P: AsRef<Path>>(paths: &[P]) -> Result<Self> {
        let mut store = FixtureStore::new();
        for path in paths {
            store.extend(read_records(path.as_ref())?);
        }
        Ok(store)
    }

    pub fn extend(&mut self, records: impl IntoIterator<Item = CacheRecord>) {
        for record in records {
            let slot = self.recordings.entry(record.digest).or_default();
            for (k, text) in record.completions.into_iter().enumerate() {
                slot.insert(record.first_sample + k, text);
            }
        }
    }

    /// Appends completions for a prompt at the given temperature after any
    /// already recorded.
    pub fn record(&mut self, prompt: &str, temperature: f64, completions: Vec<String>) {
        let slot = self.recordings.entry(super::canonical_digest(prompt, temperature)).or_default();
        let next = slot.keys().next_back().map_or(0, |k| k + 1);
        slot.extend((next..).zip(completions));
    }

    pub fn len(&self) -> usize {
        self.recordings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.recordings.is_empty()
    }

    /// Sample `index` of a digest: the recording made for that index when
    /// there is one, otherwise the recordings in index order, cycled.
    pub fn lookup(&self, digest: &str, index: usize) -> Result<&str> {
        match self.recordings.get(digest) {
            Some(map) if !map.is_empty() => Ok(match map.get(&index) {
                Some(text) => text,
                None => map.values().nth(index % map.len()).expect("index below length"),
            }),
            _ => Err(BirdError::FixtureMiss(digest.to_string())),
        }
    }
}

/// Deterministic replay backend.
#[derive(Clone, Debug)]
pub struct FixtureProvider {
    store: FixtureStore,
}

impl FixtureProvider {
    pub fn new(store: FixtureStore) -> Self {
        FixtureProvider { store }
    }

    pub fn from_files<P: AsRef<Path>>(paths: &[P]) -> Result<Self> {
        Ok(FixtureProvider::new(FixtureStore::load(paths)?))
    }

    pub fn store(&self) -> &FixtureStore {
        &self.store
    }
}

impl CompletionProvider for FixtureProvider {
    fn id(&self) -> &str {
        "fixture"
    }

    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse> {
        request.validate()?;
        let digest = request.digest();
        let texts = (request.first_sample..request.first_sample + request.n)
            .map(|i| self.store.lookup(&digest, i).map(str::to_string))
            .collect::<Result<Vec<_>>>()?;
        Ok(CompletionResponse { texts, provider_id: "fixture".into(), cached: false })
    }
}
