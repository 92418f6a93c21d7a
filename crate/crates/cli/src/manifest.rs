//! Run manifests and checksummed output files.

use std::fs;
use std::path::{Path, PathBuf};

use phonon_core::PhaseSpaceGrid;
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::CliError;

#[derive(Debug, Clone, Serialize)]
pub struct Software {
    pub name: &'static str,
    pub version: &'static str,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridFingerprint {
    pub epsilon: f64,
    pub nx: usize,
    pub dx: f64,
    pub dt: f64,
    pub n_mu: usize,
    pub n_omega: usize,
    /// SHA-256 over the little-endian bytes of every node, weight and step.
    pub sha256: String,
}

impl GridFingerprint {
    pub fn of(grid: &PhaseSpaceGrid) -> Self {
        let mut h = Sha256::new();
        for v in [grid.epsilon, grid.x_max, grid.dx, grid.dt, grid.nx as f64] {
            h.update(v.to_le_bytes());
        }
        for list in [&grid.mu, &grid.mu_weights, &grid.omega, &grid.omega_weights] {
            h.update((list.len() as u64).to_le_bytes());
            for v in list.iter() {
                h.update(v.to_le_bytes());
            }
        }
        Self {
            epsilon: grid.epsilon,
            nx: grid.nx,
            dx: grid.dx,
            dt: grid.dt,
            n_mu: grid.n_mu(),
            n_omega: grid.n_omega(),
            sha256: hex::encode(h.finalize()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutputFile {
    /// Path relative to the run directory, `/`-separated.
    pub path: String,
    pub sha256: String,
    /// Data rows for CSV files (header excluded), `None` for JSON.
    pub rows: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: &str, passed: bool, detail: String) -> Self {
        Self { name: name.to_string(), passed, detail }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    FailedChecks,
    Error,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub software: Software,
    pub command: String,
    pub status: RunStatus,
    pub error: Option<String>,
    pub config: RunConfig,
    /// Config fields filled in by defaults.
    pub defaults: Vec<String>,
    pub seed: u64,
    pub jobs: usize,
    pub grids: Vec<GridFingerprint>,
    pub outputs: Vec<OutputFile>,
    pub checks: Vec<Check>,
    pub summary: Value,
    pub wall_time_s: f64,
}

/// Collects output files under one run directory.
pub struct RunDir {
    root: PathBuf,
    pub outputs: Vec<OutputFile>,
}

impl RunDir {
    pub fn create(root: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(root).map_err(|e| CliError::Io(format!("cannot create {}: {e}", root.display())))?;
        Ok(Self { root: root.to_path_buf(), outputs: Vec::new() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn write(&mut self, rel: &str, bytes: &[u8], rows: Option<usize>) -> Result<(), CliError> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, bytes).map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))?;
        self.outputs.push(OutputFile { path: rel.to_string(), sha256: hex::encode(Sha256::digest(bytes)), rows });
        Ok(())
    }

    /// Writes a CSV with the given header and one serialized record per row.
    pub fn csv<R: Serialize>(&mut self, rel: &str, header: &[&str], rows: &[R]) -> Result<(), CliError> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
        let io = |e: csv::Error| CliError::Io(format!("{rel}: {e}"));
        w.write_record(header).map_err(io)?;
        for r in rows {
            w.serialize(r).map_err(io)?;
        }
        let bytes = w.into_inner().map_err(|e| CliError::Io(format!("{rel}: {e}")))?;
        self.write(rel, &bytes, Some(rows.len()))
    }

    pub fn json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<(), CliError> {
        let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| CliError::Io(format!("{rel}: {e}")))?;
        bytes.push(b'\n');
        self.write(rel, &bytes, None)
    }

    /// The manifest itself is not listed among the outputs.
    pub fn finish(&self, manifest: &RunManifest) -> Result<(), CliError> {
        let mut bytes = serde_json::to_vec_pretty(manifest).map_err(|e| CliError::Io(format!("manifest: {e}")))?;
        bytes.push(b'\n');
        fs::write(self.root.join("manifest.json"), bytes)?;
        Ok(())
    }
}

/// Number of data rows of a CSV file, for checking manifests.
pub fn count_csv_rows(path: &Path) -> Result<usize, CliError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    Ok(r.records().count())
}
