//! CSV tables and run manifests.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use super::config::ModelKind;
use crate::error::{Error, Result};

/// Writes a header line and one line per row, every value with 17 significant
/// digits.
pub fn write_csv<I>(path: &Path, header: &[String], rows: I) -> Result<()>
where
    I: IntoIterator<Item = Vec<f64>>,
{
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(w, "{}", header.join(","))?;
    for row in rows {
        if row.len() != header.len() {
            return Err(Error::Dimension(format!(
                "{}: row of {} values under {} columns",
                path.display(),
                row.len(),
                header.len()
            )));
        }
        let line: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    w.flush()?;
    Ok(())
}

pub(crate) fn columns(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

/// Hex SHA-256 of the config text.
pub fn config_hash(text: &str) -> String {
    Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunStatus {
    Ok,
    SolverFailure,
}

/// Summary of one run, written as `manifest.json` next to its outputs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Manifest {
    pub command: String,
    pub model: ModelKind,
    pub config_sha256: String,
    pub status: RunStatus,
    pub error: Option<String>,
    pub optimizer_status: Option<String>,
    /// Iterations of the last optimizer stage.
    pub iterations: Option<usize>,
    pub homotopy_stages: Option<usize>,
    pub objective: Option<f64>,
    pub gradient_norm: Option<f64>,
    /// Final residuals and checks, by name.
    pub residuals: BTreeMap<String, f64>,
    pub orders: BTreeMap<String, f64>,
    pub wall_time_seconds: f64,
    pub files: Vec<String>,
}

impl Manifest {
    pub fn new(command: &str, model: ModelKind, config_text: &str) -> Self {
        Self {
            command: command.to_string(),
            model,
            config_sha256: config_hash(config_text),
            status: RunStatus::Ok,
            error: None,
            optimizer_status: None,
            iterations: None,
            homotopy_stages: None,
            objective: None,
            gradient_norm: None,
            residuals: BTreeMap::new(),
            orders: BTreeMap::new(),
            wall_time_seconds: 0.0,
            files: Vec::new(),
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).map_err(|e| Error::Io(e.to_string()))?;
        fs::write(dir.join("manifest.json"), json + "\n")?;
        Ok(())
    }
}
