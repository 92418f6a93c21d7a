//! Versioned JSON run configuration. Every block is optional; missing fields
//! take desk-scale defaults and the resolved tree is echoed into the manifest.

use std::path::Path;

use phonon_core::experiments::{ExperimentSetup, ReconstructOptions, SweepNorm};
use phonon_core::solver::Probes;
use phonon_core::studies::DecompositionSetup;
use phonon_core::{GridSpec, ReflectionModel, SourceSpec};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    /// Grid, material, modes, sources and test functions shared by every command.
    pub setup: ExperimentSetup,
    pub solve: SolveBlock,
    pub landscape: LandscapeBlock,
    pub sweep: SweepBlock,
    pub decompose: DecompositionSetup,
    pub reconstruct: ReconstructBlock,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            version: SCHEMA_VERSION,
            setup: ExperimentSetup::default(),
            solve: SolveBlock::default(),
            landscape: LandscapeBlock::default(),
            sweep: SweepBlock::default(),
            decompose: desk_decomposition(),
            reconstruct: ReconstructBlock::default(),
        }
    }
}

/// Decomposition study on a grid small enough for a laptop: the source
/// windows at `θ = 0.025` still cover interior `(μ, ω)` nodes.
pub fn desk_decomposition() -> DecompositionSetup {
    DecompositionSetup {
        grid: GridSpec {
            n_mu: 200,
            omega_min: 1.0,
            d_omega: 0.01,
            n_omega: 101,
            dx_cap: 0.01,
            dx_ratio: 1e-3,
            ..GridSpec::desk()
        },
        ..DecompositionSetup::default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveBlock {
    pub epsilon: f64,
    pub eta: ReflectionModel,
    /// Index into `setup.sources`, ignored when `source` is given.
    pub source_index: usize,
    pub source: Option<SourceSpec>,
    /// Defaults to the setup's stop rule.
    pub t_stop: Option<f64>,
    pub probes: Probes,
}

impl Default for SolveBlock {
    fn default() -> Self {
        Self {
            epsilon: 1.0,
            eta: ReflectionModel::default(),
            source_index: 0,
            source: None,
            t_stop: None,
            probes: Probes { snapshot_times: Vec::new(), check_invariants: true },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LandscapeBlock {
    /// Reflection coefficient generating the data.
    pub truth: ReflectionModel,
    pub a_fixed: f64,
    pub b_range: [f64; 2],
    pub n_points: usize,
    pub epsilons: Vec<f64>,
    /// Relative Gaussian noise on the data, seeded by `--seed`.
    pub noise: Option<f64>,
}

impl Default for LandscapeBlock {
    fn default() -> Self {
        Self {
            truth: ReflectionModel::tanh(1.5, 1.0),
            a_fixed: 1.5,
            b_range: [0.5, 1.5],
            n_points: 21,
            epsilons: vec![0.25, 1.0, 4.0],
            noise: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepBlock {
    pub eta1: ReflectionModel,
    pub eta2: ReflectionModel,
    pub epsilons: Vec<f64>,
    pub norm: SweepNorm,
    /// Write every surface trace to `lambda_grid.csv`.
    pub lambda_grid: bool,
}

impl Default for SweepBlock {
    fn default() -> Self {
        Self {
            eta1: ReflectionModel::tanh(1.5, 1.0),
            eta2: ReflectionModel::tanh(1.4, 0.9),
            epsilons: vec![0.25, 0.5, 1.0, 2.0, 4.0],
            norm: SweepNorm::Max,
            lambda_grid: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReconstructBlock {
    pub truth: ReflectionModel,
    pub start: [f64; 2],
    /// One descent per value, all with the same options.
    pub epsilons: Vec<f64>,
    pub options: ReconstructOptions,
    pub noise: Option<f64>,
    /// Distance to the truth counted as converged (the landscape scan step).
    pub tolerance: f64,
    /// Fraction of the initial loss the descent must get below to count as progress.
    pub loss_fraction: f64,
}

impl Default for ReconstructBlock {
    fn default() -> Self {
        Self {
            truth: ReflectionModel::tanh(1.5, 1.0),
            start: [1.4, 0.9],
            epsilons: vec![4.0, 0.25],
            options: ReconstructOptions::default(),
            noise: None,
            tolerance: 0.05,
            loss_fraction: 0.1,
        }
    }
}

/// A parsed configuration with the list of fields that were filled in by
/// defaults.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub defaults: Vec<String>,
}

pub fn load_config(path: Option<&Path>) -> Result<LoadedConfig, CliError> {
    let text = match path {
        Some(p) => std::fs::read_to_string(p).map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?,
        None => "{}".to_string(),
    };
    parse_config(&text)
}

pub fn parse_config(text: &str) -> Result<LoadedConfig, CliError> {
    let raw: Value = serde_json::from_str(text).map_err(|e| CliError::Config(format!("invalid JSON: {e}")))?;
    if !raw.is_object() {
        return Err(CliError::Config("the configuration must be a JSON object".into()));
    }
    let config: RunConfig = serde_path_to_error::deserialize(&raw).map_err(|e| {
        let path = e.path().to_string();
        CliError::Config(format!("at `{path}`: {}", e.into_inner()))
    })?;
    if config.version != SCHEMA_VERSION {
        return Err(CliError::Config(format!(
            "at `version`: unsupported schema version {}, expected {SCHEMA_VERSION}",
            config.version
        )));
    }
    let resolved = serde_json::to_value(&config).expect("config serializes");
    let mut defaults = Vec::new();
    missing_paths(&raw, &resolved, String::new(), &mut defaults);
    Ok(LoadedConfig { config, defaults })
}

/// Paths present in `resolved` but absent from `raw`, stopping at the first
/// missing level.
fn missing_paths(raw: &Value, resolved: &Value, prefix: String, out: &mut Vec<String>) {
    let Value::Object(fields) = resolved else {
        return;
    };
    for (key, value) in fields {
        let path = if prefix.is_empty() { key.clone() } else { format!("{prefix}.{key}") };
        match raw.get(key) {
            None => out.push(path),
            // tagged enums switch variant as a whole, nothing below them is a default
            Some(r) if r.get("kind").is_some() => {}
            Some(r) => missing_paths(r, value, path, out),
        }
    }
}

fn check_epsilons(name: &str, eps: &[f64]) -> Result<(), CliError> {
    if eps.is_empty() {
        return Err(CliError::Config(format!("at `{name}`: no epsilon values")));
    }
    if let Some(e) = eps.iter().find(|e| !(**e > 0.0 && e.is_finite())) {
        return Err(CliError::Config(format!("at `{name}`: epsilon must be positive and finite, got {e}")));
    }
    Ok(())
}

fn check_eta(name: &str, eta: &ReflectionModel) -> Result<(), CliError> {
    eta.validate().map_err(|e| CliError::Config(format!("at `{name}`: {e}")))
}

impl RunConfig {
    /// Static checks independent of the command: material validity on the
    /// frequency nodes, source and reflection parameters, epsilon lists.
    pub fn validate(&self) -> Result<(), CliError> {
        self.setup.validate().map_err(|e| CliError::Config(format!("at `setup`: {e}")))?;
        let grid = self.setup.grid_for(1.0).map_err(|e| CliError::Config(format!("at `setup.grid`: {e}")))?;
        self.setup.material.on_grid(&grid).map_err(|e| CliError::Config(format!("at `setup.material`: {e}")))?;
        for (i, s) in self.setup.sources.iter().enumerate() {
            s.validate().map_err(|e| CliError::Config(format!("at `setup.sources[{i}]`: {e}")))?;
        }
        check_epsilons("solve.epsilon", &[self.solve.epsilon])?;
        check_eta("solve.eta", &self.solve.eta)?;
        if let Some(s) = &self.solve.source {
            s.validate().map_err(|e| CliError::Config(format!("at `solve.source`: {e}")))?;
        } else if self.solve.source_index >= self.setup.sources.len() {
            return Err(CliError::Config(format!(
                "at `solve.source_index`: {} is out of range for {} sources",
                self.solve.source_index,
                self.setup.sources.len()
            )));
        }
        check_epsilons("landscape.epsilons", &self.landscape.epsilons)?;
        check_eta("landscape.truth", &self.landscape.truth)?;
        check_epsilons("sweep.epsilons", &self.sweep.epsilons)?;
        check_eta("sweep.eta1", &self.sweep.eta1)?;
        check_eta("sweep.eta2", &self.sweep.eta2)?;
        check_epsilons("decompose.epsilon", &[self.decompose.epsilon])?;
        let dgrid = self.decompose.grid.build(self.decompose.epsilon, self.decompose.material.nu_max_on(&self.decompose.grid.omega_nodes()));
        let dgrid = dgrid.map_err(|e| CliError::Config(format!("at `decompose.grid`: {e}")))?;
        self.decompose.material.on_grid(&dgrid).map_err(|e| CliError::Config(format!("at `decompose.material`: {e}")))?;
        check_epsilons("reconstruct.epsilons", &self.reconstruct.epsilons)?;
        check_eta("reconstruct.truth", &self.reconstruct.truth)?;
        for (name, noise) in [("landscape.noise", self.landscape.noise), ("reconstruct.noise", self.reconstruct.noise)] {
            if let Some(s) = noise {
                if !(s >= 0.0 && s.is_finite()) {
                    return Err(CliError::Config(format!("at `{name}`: noise level must be nonnegative, got {s}")));
                }
            }
        }
        Ok(())
    }
}
