use std::collections::{HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{Read, Write};
use std::path::Path;
use std::sync::{Arc, Condvar, Mutex, RwLock};

use sha2::{Digest, Sha256};

use super::{embed_batch, EmbedError, Embedder, EmbeddingVector};

/// SHA-256 of `(model_name, dim, text)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CacheKey([u8; 32]);

impl CacheKey {
    pub fn new(model_name: &str, dim: usize, text: &str) -> Self {
        let mut h = Sha256::new();
        h.update(model_name.as_bytes());
        h.update([0u8]);
        h.update((dim as u32).to_le_bytes());
        h.update([0u8]);
        h.update(text.as_bytes());
        CacheKey(h.finalize().into())
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }
}

type SlotValue = Option<Result<Arc<[f32]>, EmbedError>>;

#[derive(Default)]
struct Slot {
    value: Mutex<SlotValue>,
    ready: Condvar,
}

impl Slot {
    fn fill(&self, v: Result<Arc<[f32]>, EmbedError>) {
        *self.value.lock().unwrap_or_else(|e| e.into_inner()) = Some(v);
        self.ready.notify_all();
    }

    fn wait(&self) -> Result<Arc<[f32]>, EmbedError> {
        let mut guard = self.value.lock().unwrap_or_else(|e| e.into_inner());
        loop {
            if let Some(v) = guard.as_ref() {
                return v.clone();
            }
            guard = self.ready.wait(guard).unwrap_or_else(|e| e.into_inner());
        }
    }
}

const MAX_DIM: u32 = 1 << 20;

/// Normalized-vector cache with an optional append-only backing file.
///
/// File records are `key (32 bytes) | dim (u32 LE) | dim × f32 LE`. Readers
/// proceed concurrently; writes are serialized. Concurrent requests for the
/// same missing key are coalesced into one provider call.
#[derive(Default)]
pub struct EmbeddingCache {
    entries: RwLock<HashMap<CacheKey, Arc<[f32]>>>,
    inflight: Mutex<HashMap<CacheKey, Arc<Slot>>>,
    file: Option<Mutex<File>>,
    warnings: Mutex<Vec<String>>,
}

impl EmbeddingCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens (or creates) a cache file. Corrupt records are dropped with a
    /// warning; a truncated tail is cut off so later appends stay aligned.
    pub fn open(path: &Path) -> Result<Self, EmbedError> {
        let io = |e: std::io::Error| EmbedError::Cache(format!("{}: {e}", path.display()));
        let mut file = OpenOptions::new()
            .read(true)
            .append(true)
            .create(true)
            .open(path)
            .map_err(io)?;
        let mut buf = Vec::new();
        file.read_to_end(&mut buf).map_err(io)?;

        let mut entries = HashMap::new();
        let mut warnings = Vec::new();
        let mut pos = 0usize;
        while pos < buf.len() {
            let header_end = pos + 36;
            if header_end > buf.len() {
                warnings.push(format!("cache truncated at byte {pos}"));
                break;
            }
            let key = CacheKey(buf[pos..pos + 32].try_into().expect("32 bytes"));
            let dim = u32::from_le_bytes(buf[pos + 32..header_end].try_into().expect("4 bytes"));
            if dim == 0 || dim > MAX_DIM {
                warnings.push(format!("cache record at byte {pos} has invalid dim {dim}"));
                break;
            }
            let end = header_end + 4 * dim as usize;
            if end > buf.len() {
                warnings.push(format!("cache truncated at byte {pos}"));
                break;
            }
            let values: Vec<f32> = buf[header_end..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            if values.iter().all(|v| v.is_finite()) {
                entries.insert(key, Arc::from(values));
            } else {
                warnings.push(format!("cache record at byte {pos} holds non-finite values; dropped"));
            }
            pos = end;
        }
        if pos < buf.len() {
            file.set_len(pos as u64).map_err(io)?;
        }
        for w in &warnings {
            tracing::warn!("{w}");
        }
        Ok(Self {
            entries: RwLock::new(entries),
            inflight: Mutex::new(HashMap::new()),
            file: Some(Mutex::new(file)),
            warnings: Mutex::new(warnings),
        })
    }

    pub fn len(&self) -> usize {
        self.entries.read().unwrap_or_else(|e| e.into_inner()).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn warnings(&self) -> Vec<String> {
        self.warnings.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }

    fn warn(&self, msg: String) {
        tracing::warn!("{msg}");
        self.warnings.lock().unwrap_or_else(|e| e.into_inner()).push(msg);
    }

    fn lookup(&self, key: &CacheKey, dim: usize) -> Option<Arc<[f32]>> {
        let hit = self
            .entries
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .get(key)
            .cloned()?;
        if hit.len() == dim {
            Some(hit)
        } else {
            self.warn(format!(
                "cache entry has dim {} but {} expected; recomputing",
                hit.len(),
                dim
            ));
            None
        }
    }

    fn store(&self, items: &[(CacheKey, Arc<[f32]>)]) -> Result<(), EmbedError> {
        let mut entries = self.entries.write().unwrap_or_else(|e| e.into_inner());
        if let Some(file) = &self.file {
            let mut bytes = Vec::new();
            for (key, values) in items {
                bytes.extend_from_slice(key.as_bytes());
                bytes.extend_from_slice(&(values.len() as u32).to_le_bytes());
                for v in values.iter() {
                    bytes.extend_from_slice(&v.to_le_bytes());
                }
            }
            let mut f = file.lock().unwrap_or_else(|e| e.into_inner());
            f.write_all(&bytes)
                .and_then(|_| f.flush())
                .map_err(|e| EmbedError::Cache(e.to_string()))?;
        }
        for (key, values) in items {
            entries.insert(*key, values.clone());
        }
        Ok(())
    }
}

/// Cached embedding: hits bypass the provider, misses go through
/// [`embed_batch`] (one call per `batch_size` chunk of distinct missing
/// texts). Results are identical to calling `embed_batch` directly.
pub fn cache_get_or_embed(
    cache: &EmbeddingCache,
    embedder: &Embedder,
    texts: &[String],
) -> Result<Vec<EmbeddingVector>, EmbedError> {
    if texts.is_empty() {
        return Err(EmbedError::InvalidInput("no texts to embed".into()));
    }
    if let Some(i) = texts.iter().position(|t| t.trim().is_empty()) {
        return Err(EmbedError::InvalidInput(format!("text {i} is empty")));
    }
    let spec = embedder.spec();
    let keys: Vec<CacheKey> = texts
        .iter()
        .map(|t| CacheKey::new(&spec.model_name, spec.dim, t))
        .collect();

    let mut resolved: HashMap<CacheKey, Arc<[f32]>> = HashMap::new();
    let mut missing: Vec<(CacheKey, &String)> = Vec::new();
    let mut seen = HashSet::new();
    for (key, text) in keys.iter().zip(texts) {
        if !seen.insert(*key) {
            continue;
        }
        match cache.lookup(key, spec.dim) {
            Some(v) => {
                resolved.insert(*key, v);
            }
            None => missing.push((*key, text)),
        }
    }

    // Claim leadership for keys nobody is computing; wait on the rest.
    let mut leading: Vec<(CacheKey, &String, Arc<Slot>)> = Vec::new();
    let mut following: Vec<(CacheKey, Arc<Slot>)> = Vec::new();
    {
        let mut inflight = cache.inflight.lock().unwrap_or_else(|e| e.into_inner());
        for (key, text) in missing {
            // A leader may have finished between the lookup and this lock.
            if let Some(v) = cache.entries.read().unwrap_or_else(|e| e.into_inner()).get(&key) {
                if v.len() == spec.dim {
                    resolved.insert(key, v.clone());
                    continue;
                }
            }
            match inflight.get(&key) {
                Some(slot) => following.push((key, slot.clone())),
                None => {
                    let slot = Arc::new(Slot::default());
                    inflight.insert(key, slot.clone());
                    leading.push((key, text, slot));
                }
            }
        }
    }

    if !leading.is_empty() {
        let batch: Vec<String> = leading.iter().map(|(_, t, _)| (*t).clone()).collect();
        let outcome = embed_batch(embedder, &batch).and_then(|vectors| {
            let items: Vec<(CacheKey, Arc<[f32]>)> = leading
                .iter()
                .zip(vectors)
                .map(|((k, _, _), v)| (*k, Arc::from(v.into_values())))
                .collect();
            cache.store(&items)?;
            Ok(items)
        });
        let mut inflight = cache.inflight.lock().unwrap_or_else(|e| e.into_inner());
        match outcome {
            Ok(items) => {
                for ((key, _, slot), (_, values)) in leading.iter().zip(&items) {
                    slot.fill(Ok(values.clone()));
                    inflight.remove(key);
                    resolved.insert(*key, values.clone());
                }
            }
            Err(e) => {
                for (key, _, slot) in &leading {
                    slot.fill(Err(e.clone()));
                    inflight.remove(key);
                }
                return Err(e);
            }
        }
    }

    for (key, slot) in following {
        resolved.insert(key, slot.wait()?);
    }

    keys.iter()
        .map(|k| EmbeddingVector::assume_normalized(resolved[k].to_vec()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::{EmbedderSpec, EmbeddingProvider, StubEmbedder};
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::time::Duration;

    fn stub(model: &str) -> Embedder {
        Embedder::from_spec(&EmbedderSpec::stub(model, 16)).unwrap()
    }

    #[test]
    fn second_call_hits_cache() {
        let cache = EmbeddingCache::in_memory();
        let e = stub("m");
        let texts = vec!["alpha".to_string(), "beta".to_string()];
        let first = cache_get_or_embed(&cache, &e, &texts).unwrap();
        assert_eq!(e.provider_calls(), 1);
        let second = cache_get_or_embed(&cache, &e, &texts).unwrap();
        assert_eq!(e.provider_calls(), 1);
        assert_eq!(first, second);
        assert_eq!(first, embed_batch(&stub("m"), &texts).unwrap());
    }

    #[test]
    fn key_includes_model_name() {
        let cache = EmbeddingCache::in_memory();
        let texts = vec!["alpha".to_string()];
        cache_get_or_embed(&cache, &stub("m1"), &texts).unwrap();
        let other = stub("m2");
        cache_get_or_embed(&cache, &other, &texts).unwrap();
        assert_eq!(other.provider_calls(), 1);
    }

    #[test]
    fn thousand_texts_sixteen_calls() {
        let cache = EmbeddingCache::in_memory();
        let mut spec = EmbedderSpec::stub("m", 8);
        spec.batch_size = 64;
        let e = Embedder::from_spec(&spec).unwrap();
        let texts: Vec<String> = (0..1000).map(|i| format!("t{i}")).collect();
        cache_get_or_embed(&cache, &e, &texts).unwrap();
        assert_eq!(e.provider_calls(), 16);
    }

    #[test]
    fn persists_and_recovers_from_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.bin");
        let texts: Vec<String> = vec!["a".into(), "b".into()];
        let expected = {
            let cache = EmbeddingCache::open(&path).unwrap();
            cache_get_or_embed(&cache, &stub("m"), &texts).unwrap()
        };
        let full = std::fs::read(&path).unwrap();
        assert_eq!(full.len(), 2 * (36 + 16 * 4));

        let e = stub("m");
        let reopened = EmbeddingCache::open(&path).unwrap();
        assert_eq!(cache_get_or_embed(&reopened, &e, &texts).unwrap(), expected);
        assert_eq!(e.provider_calls(), 0);
        drop(reopened);

        // Chop the second record in half: one warning, one recompute.
        std::fs::write(&path, &full[..full.len() - 10]).unwrap();
        let e = stub("m");
        let damaged = EmbeddingCache::open(&path).unwrap();
        assert_eq!(damaged.len(), 1);
        assert_eq!(damaged.warnings().len(), 1);
        assert_eq!(cache_get_or_embed(&damaged, &e, &texts).unwrap(), expected);
        assert_eq!(e.provider_calls(), 1);
        drop(damaged);
        assert_eq!(std::fs::read(&path).unwrap().len(), full.len());
    }

    #[test]
    fn non_finite_record_dropped() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.bin");
        let mut bytes = CacheKey::new("m", 2, "x").as_bytes().to_vec();
        bytes.extend_from_slice(&2u32.to_le_bytes());
        bytes.extend_from_slice(&f32::NAN.to_le_bytes());
        bytes.extend_from_slice(&1f32.to_le_bytes());
        std::fs::write(&path, bytes).unwrap();
        let cache = EmbeddingCache::open(&path).unwrap();
        assert!(cache.is_empty());
        assert_eq!(cache.warnings().len(), 1);
    }

    struct SlowCounting {
        inner: StubEmbedder,
        calls: AtomicUsize,
    }

    impl EmbeddingProvider for SlowCounting {
        fn spec(&self) -> &EmbedderSpec {
            self.inner.spec()
        }
        fn embed_raw(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, EmbedError> {
            self.calls.fetch_add(texts.len(), Ordering::SeqCst);
            std::thread::sleep(Duration::from_millis(50));
            self.inner.embed_raw(texts)
        }
    }

    #[test]
    fn concurrent_duplicate_requests_coalesce() {
        let provider = Arc::new(SlowCounting {
            inner: StubEmbedder::new(EmbedderSpec::stub("m", 8)),
            calls: AtomicUsize::new(0),
        });
        let e = Embedder::new(provider.clone());
        let cache = EmbeddingCache::in_memory();
        let texts = vec!["same".to_string()];
        let results: Vec<_> = std::thread::scope(|s| {
            let hs: Vec<_> = (0..8)
                .map(|_| s.spawn(|| cache_get_or_embed(&cache, &e, &texts).unwrap()))
                .collect();
            hs.into_iter().map(|h| h.join().unwrap()).collect()
        });
        assert!(results.windows(2).all(|w| w[0] == w[1]));
        assert_eq!(provider.calls.load(Ordering::SeqCst), 1);
    }
}
