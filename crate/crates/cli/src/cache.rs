//! Content-addressed stage cache. Each entry is the JSON output of one stage
//! stored under the SHA-256 of everything the stage reads.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};
use crate::output::{read_json, write_json};

/// Incremental key builder.
pub struct CacheKey(Sha256);

impl CacheKey {
    pub fn new(stage: &str) -> Self {
        let mut h = Sha256::new();
        h.update(b"stage:");
        h.update(stage.as_bytes());
        Self(h)
    }

    pub fn bytes(mut self, tag: &str, data: &[u8]) -> Self {
        self.0.update(tag.as_bytes());
        self.0.update((data.len() as u64).to_le_bytes());
        self.0.update(data);
        self
    }

    pub fn json<T: Serialize + ?Sized>(self, tag: &str, value: &T) -> Self {
        let bytes = serde_json::to_vec(value).expect("cache inputs serialize to JSON");
        self.bytes(tag, &bytes)
    }

    pub fn file(self, tag: &str, path: &Path) -> CliResult<Self> {
        let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
        Ok(self.bytes(tag, &bytes))
    }

    pub fn finish(self) -> String {
        hex::encode(self.0.finalize())
    }
}

pub struct StageCache {
    dir: PathBuf,
    enabled: bool,
}

impl StageCache {
    pub fn new(dir: PathBuf) -> Self {
        Self { dir, enabled: true }
    }

    pub fn disabled() -> Self {
        Self {
            dir: PathBuf::new(),
            enabled: false,
        }
    }

    fn path(&self, stage: &str, key: &str) -> PathBuf {
        self.dir.join(stage).join(format!("{key}.json"))
    }

    /// A corrupt or unreadable entry counts as a miss.
    pub fn get<T: DeserializeOwned>(&self, stage: &str, key: &str) -> Option<T> {
        if !self.enabled {
            return None;
        }
        let path = self.path(stage, key);
        if !path.exists() {
            return None;
        }
        match read_json(&path) {
            Ok(v) => {
                log::debug!("stage={stage} cache=hit key={key}");
                Some(v)
            }
            Err(e) => {
                log::warn!("stage={stage} cache=corrupt key={key} error={e}");
                None
            }
        }
    }

    pub fn put<T: Serialize>(&self, stage: &str, key: &str, value: &T) -> CliResult<()> {
        if !self.enabled {
            return Ok(());
        }
        write_json(&self.path(stage, key), value)
    }

    /// Returns the cached value or computes and stores it.
    pub fn get_or<T, F>(&self, stage: &str, key: &str, compute: F) -> CliResult<T>
    where
        T: Serialize + DeserializeOwned,
        F: FnOnce() -> CliResult<T>,
    {
        if let Some(v) = self.get(stage, key) {
            return Ok(v);
        }
        let v = compute()?;
        self.put(stage, key, &v)?;
        Ok(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keys_depend_on_every_input() {
        let a = CacheKey::new("s").bytes("x", b"1").finish();
        let b = CacheKey::new("s").bytes("x", b"2").finish();
        let c = CacheKey::new("t").bytes("x", b"1").finish();
        let d = CacheKey::new("s").bytes("x", b"1").finish();
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_eq!(a, d);
        assert_eq!(a.len(), 64);
    }

    #[test]
    fn roundtrip_and_miss() {
        let dir = tempfile::tempdir().unwrap();
        let cache = StageCache::new(dir.path().to_path_buf());
        assert!(cache.get::<Vec<f64>>("s", "k").is_none());
        let mut calls = 0;
        let v = cache
            .get_or("s", "k", || {
                calls += 1;
                Ok(vec![0.1, 1.0 / 3.0])
            })
            .unwrap();
        let w: Vec<f64> = cache.get_or("s", "k", || unreachable!()).unwrap();
        assert_eq!(v, w);
        assert_eq!(calls, 1);
    }
}
