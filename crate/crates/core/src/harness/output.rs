use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::HarnessError;
use crate::baselines::Method;

/// `<root>/<method>/seed<seed>`.
pub fn run_dir(root: &Path, method: Method, seed: u64) -> PathBuf {
    root.join(method.as_str()).join(format!("seed{seed}"))
}

fn ensure_parent(path: &Path) -> Result<(), HarnessError> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
        }
    }
    Ok(())
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), HarnessError> {
    ensure_parent(path)?;
    let mut w = csv::Writer::from_path(path).map_err(|e| HarnessError::io(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| HarnessError::io(path, e))?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, HarnessError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| HarnessError::io(path, e))?;
    r.deserialize()
        .collect::<Result<_, _>>()
        .map_err(|e| HarnessError::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), HarnessError> {
    ensure_parent(path)?;
    let mut text = serde_json::to_string_pretty(value).expect("summary serializes");
    text.push('\n');
    fs::write(path, text).map_err(|e| HarnessError::io(path, e))
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<(), HarnessError> {
    ensure_parent(path)?;
    fs::write(path, text).map_err(|e| HarnessError::io(path, e))
}
