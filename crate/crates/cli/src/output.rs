//! Result files and the run manifest.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::RunError;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    /// Some replicas or pairs ran out of budget; results use the rest.
    Partial,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutputFile {
    pub path: String,
    pub bytes: u64,
    /// Data rows for CSV files.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rows: Option<usize>,
}

/// How one random stream is keyed off `master_seed`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedDerivation {
    pub label: String,
    /// What the index passed to `derive_seed` counts.
    pub index: String,
    pub used_for: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub software: String,
    pub version: String,
    pub command: String,
    pub config: ExperimentConfig,
    pub status: RunStatus,
    #[serde(default)]
    pub warnings: Vec<String>,
    pub outputs: Vec<OutputFile>,
    /// Seeds are `derive_seed(master_seed, label, index)`.
    pub seed_derivations: Vec<SeedDerivation>,
    pub threads: usize,
    pub started_unix_seconds: f64,
    pub wall_clock_seconds: f64,
}

/// Collects result files while an experiment runs.
pub struct Outputs {
    dir: PathBuf,
    pub(crate) files: Vec<OutputFile>,
    pub(crate) warnings: Vec<String>,
    pub(crate) seeds: Vec<SeedDerivation>,
    pub(crate) partial: bool,
}

impl Outputs {
    pub fn new(dir: &Path) -> Result<Self, RunError> {
        fs::create_dir_all(dir).map_err(|e| RunError::Io(format!("{}: {e}", dir.display())))?;
        Ok(Outputs { dir: dir.to_path_buf(), files: Vec::new(), warnings: Vec::new(), seeds: Vec::new(), partial: false })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn seed(&mut self, label: &str, index: &str, used_for: &str) {
        self.seeds.push(SeedDerivation { label: label.into(), index: index.into(), used_for: used_for.into() });
    }

    pub fn warn(&mut self, message: impl Into<String>) {
        self.warnings.push(message.into());
    }

    /// Marks the run partial with a reason.
    pub fn partial(&mut self, message: impl Into<String>) {
        self.partial = true;
        self.warn(message);
    }

    pub fn csv<R, I, S>(&mut self, name: &str, header: &[&str], rows: R) -> Result<(), RunError>
    where
        R: IntoIterator<Item = I>,
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        let path = self.dir.join(name);
        let mut w = csv::Writer::from_path(&path).map_err(|e| RunError::Io(format!("{}: {e}", path.display())))?;
        let io = |e: csv::Error| RunError::Io(format!("{name}: {e}"));
        w.write_record(header).map_err(io)?;
        let mut count = 0;
        for row in rows {
            w.write_record(row).map_err(io)?;
            count += 1;
        }
        w.flush().map_err(|e| RunError::Io(format!("{name}: {e}")))?;
        self.record(name, Some(count))
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), RunError> {
        let path = self.dir.join(name);
        let mut text = serde_json::to_string_pretty(value).map_err(|e| RunError::Io(format!("{name}: {e}")))?;
        text.push('\n');
        fs::write(&path, text).map_err(|e| RunError::Io(format!("{}: {e}", path.display())))?;
        self.record(name, None)
    }

    fn record(&mut self, name: &str, rows: Option<usize>) -> Result<(), RunError> {
        let bytes = fs::metadata(self.dir.join(name)).map(|m| m.len()).unwrap_or(0);
        self.files.push(OutputFile { path: name.into(), bytes, rows });
        Ok(())
    }
}

/// Formats a float for CSV: shortest round-trip decimal, never exponent notation.
pub fn num(x: f64) -> String {
    format!("{x}")
}
