//! File output helpers. JSON is pretty-printed with struct fields in
//! declaration order and maps sorted by key, so equal values give equal bytes.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{CliError, CliResult};

pub fn ensure_dir(dir: &Path) -> CliResult<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    Ok(dir.to_path_buf())
}

pub fn to_json_bytes<T: Serialize + ?Sized>(value: &T) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("report types serialize to JSON");
    bytes.push(b'\n');
    bytes
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> CliResult<()> {
    write_bytes(path, &to_json_bytes(value))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|source| CliError::Json {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> CliResult<()> {
    if let Some(parent) = path.parent() {
        ensure_dir(parent)?;
    }
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

/// Opens `path` for writing and hands a buffered writer to `f`.
pub fn write_with<F>(path: &Path, f: F) -> CliResult<()>
where
    F: FnOnce(&mut BufWriter<File>) -> chiarella_core::Result<()>,
{
    if let Some(parent) = path.parent() {
        ensure_dir(parent)?;
    }
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = BufWriter::new(file);
    f(&mut w)?;
    w.flush().map_err(|e| CliError::io(path, e))
}

/// One failed asset in a run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, serde::Deserialize)]
pub struct Failure {
    pub asset: String,
    pub class: String,
    pub stage: String,
    pub error: String,
    pub exit_code: i32,
}

impl Failure {
    pub fn new(asset: &str, class: &str, stage: &str, err: &CliError) -> Self {
        Self {
            asset: asset.to_string(),
            class: class.to_string(),
            stage: stage.to_string(),
            error: err.to_string(),
            exit_code: err.exit_code(),
        }
    }
}

/// Writes the failure manifest (always, possibly empty) and converts a
/// non-empty list into the run's error.
pub fn finish_with_failures(dir: &Path, mut failures: Vec<Failure>, total: usize) -> CliResult<()> {
    failures.sort_by(|a, b| (&a.class, &a.asset).cmp(&(&b.class, &b.asset)));
    let manifest = dir.join("failures.json");
    write_json(&manifest, &failures)?;
    if failures.is_empty() {
        return Ok(());
    }
    for f in &failures {
        log::error!("stage={} asset={} error={:?}", f.stage, f.asset, f.error);
    }
    let failed: std::collections::BTreeSet<&str> = failures.iter().map(|f| f.asset.as_str()).collect();
    if failed.len() >= total {
        let code = failures[0].exit_code;
        let msg = format!("every asset failed; first error: {}", failures[0].error);
        return Err(if code == crate::error::EXIT_NUMERICAL {
            CliError::Core(chiarella_core::Error::Numerical(msg))
        } else {
            CliError::Config(msg)
        });
    }
    Err(CliError::Partial {
        failed: failed.len(),
        total,
        manifest,
    })
}

/// SHA-256 over every file below `dir` (relative path and contents, in
/// sorted path order).
pub fn tree_digest(dir: &Path) -> CliResult<String> {
    use sha2::{Digest, Sha256};
    fn walk(dir: &Path, files: &mut Vec<PathBuf>) -> CliResult<()> {
        for entry in fs::read_dir(dir).map_err(|e| CliError::io(dir, e))? {
            let path = entry.map_err(|e| CliError::io(dir, e))?.path();
            if path.is_dir() {
                walk(&path, files)?;
            } else {
                files.push(path);
            }
        }
        Ok(())
    }
    let mut files = Vec::new();
    walk(dir, &mut files)?;
    files.sort();
    let mut h = Sha256::new();
    for f in &files {
        let rel = f.strip_prefix(dir).unwrap_or(f);
        h.update(rel.to_string_lossy().as_bytes());
        h.update([0]);
        let bytes = fs::read(f).map_err(|e| CliError::io(f, e))?;
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    Ok(hex::encode(h.finalize()))
}
