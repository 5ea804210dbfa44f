use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use super::{CompletionProvider, CompletionRequest, CompletionResponse};
use crate::error::{BirdError, Result};

pub const CACHE_FORMAT: &str = "llm_cache.v1";

/// One line of an `llm_cache.v1` file: samples `first_sample ..` of a prompt.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CacheRecord {
    pub format: String,
    pub digest: String,
    pub temperature: f64,
    pub first_sample: usize,
    pub completions: Vec<String>,
    /// Kept for readability; lookups use the digest only.
    #[serde(default)]
    pub prompt: String,
}

pub(crate) fn read_records(path: &Path) -> Result<Vec<CacheRecord>> {
    let file = File::open(path)?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: CacheRecord = serde_json::from_str(&line)
            .map_err(|e| BirdError::Schema { line: i + 1, message: e.to_string() })?;
        if record.format != CACHE_FORMAT {
            return Err(BirdError::Schema { line: i + 1, message: format!("unexpected format `{}`", record.format) });
        }
        out.push(record);
    }
    Ok(out)
}

/// Completions by digest and sample index, optionally persisted as an
/// append-only JSON-lines file.
#[derive(Debug, Default)]
pub struct ResponseCache {
    entries: Mutex<HashMap<String, BTreeMap<usize, String>>>,
    file: Mutex<Option<(PathBuf, File)>>,
}

impl ResponseCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens (or creates) a cache file and loads its records.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let cache = ResponseCache::default();
        if path.exists() {
            for record in read_records(&path)? {
                cache.insert(&record);
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        *cache.file.lock() = Some((path, file));
        Ok(cache)
    }

    fn insert(&self, record: &CacheRecord) {
        let mut entries = self.entries.lock();
        let slot = entries.entry(record.digest.clone()).or_default();
        for (k, text) in record.completions.iter().enumerate() {
            slot.insert(record.first_sample + k, text.clone());
        }
    }

    /// All requested samples, or `None` if any is missing.
    pub fn get(&self, digest: &str, first_sample: usize, n: usize) -> Option<Vec<String>> {
        let entries = self.entries.lock();
        let slot = entries.get(digest)?;
        (first_sample..first_sample + n).map(|i| slot.get(&i).cloned()).collect()
    }

    pub fn put(&self, request: &CompletionRequest, texts: &[String]) -> Result<()> {
        let record = CacheRecord {
            format: CACHE_FORMAT.to_string(),
            digest: request.digest(),
            temperature: request.temperature,
            first_sample: request.first_sample,
            completions: texts.to_vec(),
            prompt: request.prompt.clone(),
        };
        self.insert(&record);
        let mut file = self.file.lock();
        if let Some((_, f)) = file.as_mut() {
            let mut line = serde_json::to_string(&record)?;
            line.push('\n');
            f.write_all(line.as_bytes())?;
            f.flush()?;
        }
        Ok(())
    }

    pub fn path(&self) -> Option<PathBuf> {
        self.file.lock().as_ref().map(|(p, _)| p.clone())
    }

    pub fn len(&self) -> usize {
        self.entries.lock().values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Cache-first wrapper: hits short-circuit the inner provider, misses are
/// recorded after a successful call.
pub struct CachedProvider<P> {
    inner: P,
    cache: ResponseCache,
}

impl<P: CompletionProvider> CachedProvider<P> {
    pub fn new(inner: P, cache: ResponseCache) -> Self {
        CachedProvider { inner, cache }
    }

    pub fn cache(&self) -> &ResponseCache {
        &self.cache
    }

    pub fn inner(&self) -> &P {
        &self.inner
    }
}

impl<P: CompletionProvider> CompletionProvider for CachedProvider<P> {
    fn id(&self) -> &str {
        self.inner.id()
    }

    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse> {
        request.validate()?;
        if let Some(texts) = self.cache.get(&request.digest(), request.first_sample, request.n) {
            return Ok(CompletionResponse { texts, provider_id: self.inner.id().to_string(), cached: true });
        }
        let response = self.inner.complete(request)?;
        if response.texts.len() != request.n {
            return Err(BirdError::MalformedPayload(format!(
                "asked for {} completions, got {}",
                request.n,
                response.texts.len()
            )));
        }
        self.cache.put(request, &response.texts)?;
        Ok(CompletionResponse { cached: false, ..response })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    struct Counting(AtomicUsize);

    impl CompletionProvider for Counting {
        fn id(&self) -> &str {
            "counting"
        }

        fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse> {
            let call = self.0.fetch_add(1, Ordering::SeqCst);
            Ok(CompletionResponse {
                texts: (0..request.n).map(|k| format!("call{call}-sample{}", request.first_sample + k)).collect(),
                provider_id: "counting".into(),
                cached: false,
            })
        }
    }

    #[test]
    fn second_request_hits_cache() {
        let provider = CachedProvider::new(Counting(AtomicUsize::new(0)), ResponseCache::in_memory());
        let req = CompletionRequest::new("prompt").samples(2);
        let first = provider.complete(&req).unwrap();
        let second = provider.complete(&req).unwrap();
        assert!(!first.cached);
        assert!(second.cached);
        assert_eq!(first.texts, second.texts);
        assert_eq!(provider.inner().0.load(Ordering::SeqCst), 1);
        // A later sample index is a miss.
        assert!(!provider.complete(&req.clone().starting_at(2)).unwrap().cached);
    }

    #[test]
    fn cache_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        let req = CompletionRequest::new("what?").samples(3);
        let texts = {
            let provider = CachedProvider::new(Counting(AtomicUsize::new(0)), ResponseCache::open(&path).unwrap());
            provider.complete(&req).unwrap().texts
        };
        let reopened = ResponseCache::open(&path).unwrap();
        assert_eq!(reopened.get(&req.digest(), 0, 3), Some(texts.clone()));
        assert_eq!(reopened.get(&req.digest(), 1, 2), Some(texts[1..].to_vec()));
        assert_eq!(reopened.get(&req.digest(), 2, 2), None);
        let records = read_records(&path).unwrap();
        assert_eq!(records.len(), 1);
        assert_eq!(records[0].format, CACHE_FORMAT);
    }

    #[test]
    fn corrupt_cache_line_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        std::fs::write(&path, "{\"format\":\"llm_cache.v1\"}\n").unwrap();
        assert!(matches!(ResponseCache::open(&path), Err(BirdError::Schema { line: 1, .. })));
    }
}
