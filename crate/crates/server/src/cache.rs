use std::collections::HashMap;
use std::num::NonZeroUsize;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use chronopyr::store::Plane;
use lru::LruCache;
use tokio::sync::OnceCell;

use crate::error::ApiError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ThumbKey {
    pub plane: Plane,
    pub level: usize,
    pub slot: usize,
    pub edge: u32,
}

/// Encoded PNG thumbnails, least recently used evicted first.
pub struct ThumbCache(Option<Mutex<LruCache<ThumbKey, Bytes>>>);

impl ThumbCache {
    pub fn new(entries: usize) -> Self {
        ThumbCache(NonZeroUsize::new(entries).map(|n| Mutex::new(LruCache::new(n))))
    }

    pub fn get(&self, key: &ThumbKey) -> Option<Bytes> {
        self.0.as_ref()?.lock().expect("thumbnail cache poisoned").get(key).cloned()
    }

    pub fn put(&self, key: ThumbKey, png: Bytes) {
        if let Some(c) = &self.0 {
            c.lock().expect("thumbnail cache poisoned").put(key, png);
        }
    }
}

/// Encoded videos on disk. Concurrent requests for the same file share a
/// single encode; failed encodes are retried by the next request.
pub struct VideoCache {
    dir: PathBuf,
    inflight: Mutex<HashMap<String, Arc<OnceCell<PathBuf>>>>,
    encodes: AtomicUsize,
}

impl VideoCache {
    pub fn new(dir: PathBuf) -> Self {
        VideoCache {
            dir,
            inflight: Mutex::new(HashMap::new()),
            encodes: AtomicUsize::new(0),
        }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Number of encodes run by this process.
    pub fn encodes(&self) -> usize {
        self.encodes.load(Ordering::SeqCst)
    }

    /// Path of cache entry `name`, running `encode` to produce it when it is
    /// not on disk yet.
    pub async fn get_or_encode<F>(&self, name: &str, encode: F) -> Result<PathBuf, ApiError>
    where
        F: FnOnce(PathBuf) -> Result<(), ApiError> + Send + 'static,
    {
        let cell = {
            let mut map = self.inflight.lock().expect("video cache poisoned");
            Arc::clone(map.entry(name.to_string()).or_default())
        };
        let path = self.dir.join(name);
        cell.get_or_try_init(|| async {
            if tokio::fs::try_exists(&path).await.unwrap_or(false) {
                return Ok(path.clone());
            }
            self.encodes.fetch_add(1, Ordering::SeqCst);
            let target = path.clone();
            log::info!("encoding {}", target.display());
            tokio::task::spawn_blocking(move || encode(target)).await??;
            Ok(path.clone())
        })
        .await
        .cloned()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn thumbnails_evict_oldest() {
        let c = ThumbCache::new(2);
        let key = |slot| ThumbKey {
            plane: Plane::Gaussian,
            level: 1,
            slot,
            edge: 256,
        };
        c.put(key(0), Bytes::from_static(b"a"));
        c.put(key(1), Bytes::from_static(b"b"));
        assert!(c.get(&key(0)).is_some());
        c.put(key(2), Bytes::from_static(b"c"));
        assert!(c.get(&key(1)).is_none());
        assert_eq!(c.get(&key(0)).unwrap(), "a");

        let off = ThumbCache::new(0);
        off.put(key(0), Bytes::from_static(b"a"));
        assert!(off.get(&key(0)).is_none());
    }

    #[tokio::test(flavor = "multi_thread", worker_threads = 4)]
    async fn one_encode_per_key() {
        let dir = tempfile::tempdir().unwrap();
        let cache = Arc::new(VideoCache::new(dir.path().to_path_buf()));
        let mut tasks = Vec::new();
        for _ in 0..16 {
            let cache = Arc::clone(&cache);
            tasks.push(tokio::spawn(async move {
                cache
                    .get_or_encode("a.mp4", |p| {
                        std::thread::sleep(std::time::Duration::from_millis(50));
                        std::fs::write(p, b"video").map_err(|e| ApiError::internal(e.to_string()))
                    })
                    .await
                    .unwrap()
            }));
        }
        for t in tasks {
            assert_eq!(std::fs::read(t.await.unwrap()).unwrap(), b"video");
        }
        assert_eq!(cache.encodes(), 1);
    }

    #[tokio::test]
    async fn failures_are_retried() {
        let dir = tempfile::tempdir().unwrap();
        let cache = VideoCache::new(dir.path().to_path_buf());
        let err = cache.get_or_encode("b.mp4", |_| Err(ApiError::internal("boom"))).await.unwrap_err();
        assert_eq!(err.message, "boom");
        let path = cache
            .get_or_encode("b.mp4", |p| std::fs::write(p, b"ok").map_err(|e| ApiError::internal(e.to_string())))
            .await
            .unwrap();
        assert!(path.exists());
        assert_eq!(cache.encodes(), 2);
    }
}
