//! File formats: matrix CSV dumps, atomic writes, and the run manifest.
//!
//! All floats print with round-trip formatting, so re-running a command with
//! the same seed reproduces every output file byte for byte.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use camd::rng::RNG_ALGORITHM;

use crate::CliError;

/// Writes via a temporary sibling then renames, so readers never observe a
/// half-written file.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, contents)
        .and_then(|()| fs::rename(&tmp, path))
        .map_err(|e| CliError::Io(format!("writing {}: {e}", path.display())))
}

pub fn read_to_string(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Io(format!("reading {}: {e}", path.display())))
}

/// Matrix as CSV: a header row of column labels, then one row per matrix row.
pub fn matrix_to_csv(prefix: &str, matrix: &Array2<f64>) -> String {
    let mut out = String::new();
    for j in 0..matrix.ncols() {
        if j > 0 {
            out.push(',');
        }
        out.push_str(&format!("{prefix}_{}", j + 1));
    }
    out.push('\n');
    for i in 0..matrix.nrows() {
        for j in 0..matrix.ncols() {
            if j > 0 {
                out.push(',');
            }
            out.push_str(&matrix[(i, j)].to_string());
        }
        out.push('\n');
    }
    out
}

/// Parses a CSV produced by [`matrix_to_csv`] (header row ignored).
pub fn matrix_from_csv(text: &str, what: &str) -> Result<Array2<f64>, CliError> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| CliError::Config(format!("{what}: empty file")))?;
    let cols = header.split(',').count();
    let mut values = Vec::new();
    let mut rows = 0usize;
    for (lineno, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != cols {
            return Err(CliError::Config(format!(
                "{what}: row {} has {} fields, expected {cols}",
                lineno + 2,
                fields.len()
            )));
        }
        for f in fields {
            let v: f64 = f.parse().map_err(|_| {
                CliError::Config(format!("{what}: row {}: bad number {f:?}", lineno + 2))
            })?;
            values.push(v);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(CliError::Config(format!("{what}: no data rows")));
    }
    Array2::from_shape_vec((rows, cols), values)
        .map_err(|e| CliError::Config(format!("{what}: {e}")))
}

/// Run manifest written next to every command's outputs. Re-running the
/// recorded config and seed reproduces the outputs byte-identically.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub rng_algorithm: String,
    pub base_seed: u64,
    pub config: serde_json::Value,
    pub started_at: String,
    pub finished_at: Option<String>,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, base_seed: u64, config: serde_json::Value) -> Self {
        Self {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            rng_algorithm: RNG_ALGORITHM.to_string(),
            base_seed,
            config,
            started_at: now_rfc3339(),
            finished_at: None,
            outputs: Vec::new(),
        }
    }

    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        let body = serde_json::to_string_pretty(self)
            .map_err(|e| CliError::Io(format!("serializing manifest: {e}")))?;
        write_atomic(&dir.join("manifest.json"), body.as_bytes())
    }

    pub fn load(dir: &Path) -> Result<Option<Self>, CliError> {
        let path = dir.join("manifest.json");
        if !path.exists() {
            return Ok(None);
        }
        let text = read_to_string(&path)?;
        serde_json::from_str(&text)
            .map(Some)
            .map_err(|e| CliError::Config(format!("manifest.json: {e}")))
    }
}

pub fn now_rfc3339() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

pub fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("creating {}: {e}", dir.display())))
}
