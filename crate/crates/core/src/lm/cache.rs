use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use sha2::{Digest, Sha256};

use super::{decode_response, Backend, ScoreRequest, ScoreResult};
use crate::error::LmError;

/// On-disk response cache: one file per request hash holding the raw
/// response payload.
#[derive(Debug, Clone)]
pub struct ScoreCache {
    dir: PathBuf,
}

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

impl ScoreCache {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, LmError> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|source| LmError::Io {
            path: dir.clone(),
            source,
        })?;
        Ok(Self { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn key(backend_id: &str, request: &ScoreRequest) -> String {
        let mut h = Sha256::new();
        for part in std::iter::once(backend_id)
            .chain(std::iter::once(request.context.as_str()))
            .chain(request.continuations.iter().map(String::as_str))
        {
            h.update((part.len() as u64).to_le_bytes());
            h.update(part.as_bytes());
        }
        hex::encode(h.finalize())
    }

    fn path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    pub fn get(&self, key: &str) -> Option<String> {
        fs::read_to_string(self.path(key)).ok()
    }

    pub fn put(&self, key: &str, raw: &str) -> Result<(), LmError> {
        let target = self.path(key);
        let tmp = self.dir.join(format!(
            ".{key}.{}.{}.tmp",
            std::process::id(),
            TMP_COUNTER.fetch_add(1, Ordering::Relaxed)
        ));
        let io = |source| LmError::Io {
            path: target.clone(),
            source,
        };
        fs::write(&tmp, raw).map_err(io)?;
        fs::rename(&tmp, &target).map_err(io)
    }
}

/// Wraps a backend with a [`ScoreCache`]. Only responses that decode cleanly
/// are stored.
pub struct CachedBackend<B> {
    inner: B,
    cache: ScoreCache,
}

impl<B: Backend> CachedBackend<B> {
    pub fn new(inner: B, cache: ScoreCache) -> Self {
        Self { inner, cache }
    }
}

impl<B: Backend> Backend for CachedBackend<B> {
    fn id(&self) -> &str {
        self.inner.id()
    }

    fn fetch(&self, request: &ScoreRequest) -> Result<String, LmError> {
        let key = ScoreCache::key(self.inner.id(), request);
        if let Some(raw) = self.cache.get(&key) {
            return Ok(raw);
        }
        let raw = self.inner.fetch(request)?;
        decode_response(request, &raw)?;
        self.cache.put(&key, &raw)?;
        Ok(raw)
    }

    fn score(&self, request: &ScoreRequest) -> Result<ScoreResult, LmError> {
        request.validate()?;
        let raw = self.fetch(request)?;
        decode_response(request, &raw)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::{MockBackend, MockRule};
    use std::sync::atomic::AtomicUsize;

    struct Counting {
        inner: MockBackend,
        calls: AtomicUsize,
    }

    impl Backend for Counting {
        fn id(&self) -> &str {
            self.inner.id()
        }
        fn fetch(&self, request: &ScoreRequest) -> Result<String, LmError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            self.inner.fetch(request)
        }
    }

    #[test]
    fn second_call_hits_cache() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ScoreCache::open(dir.path()).unwrap();
        let inner = Counting {
            inner: MockBackend::new(vec![MockRule::new("", "q", "a", 0.5)], 0.01).unwrap(),
            calls: AtomicUsize::new(0),
        };
        let backend = CachedBackend::new(inner, cache);
        let req = ScoreRequest::new("q", vec!["a".into(), "b".into()]);
        let first = backend.score(&req).unwrap();
        let second = backend.score(&req).unwrap();
        assert_eq!(first, second);
        assert_eq!(backend.inner.calls.load(Ordering::SeqCst), 1);
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn key_separates_fields() {
        let a = ScoreRequest::new("ab", vec!["c".into()]);
        let b = ScoreRequest::new("a", vec!["bc".into()]);
        assert_ne!(ScoreCache::key("m", &a), ScoreCache::key("m", &b));
        assert_ne!(ScoreCache::key("m", &a), ScoreCache::key("n", &a));
    }
}
