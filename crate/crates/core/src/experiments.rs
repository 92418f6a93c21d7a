//! Experiment drivers built on repeated forward solves: the measurement
//! operator over a source set, loss landscapes, the ε-sweep of
//! `‖Λ_{η₁} − Λ_{η₂}‖_max` and a finite-difference gradient descent for the
//! tanh parameters `(a, b)` of `η`.
//!
//! Independent forward runs are executed on a bounded rayon pool; results
//! are always collected in job order, so outputs do not depend on the
//! number of workers.

use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{GridError, GridSpec, PhaseSpaceGrid};
use crate::material::MaterialModel;
use crate::measurement::{loss, measurement_functional, round_trip_time, MeasurementError, TestFunctionSpec};
use crate::reflection::ReflectionModel;
use crate::solver::{solve, CollisionMode, Coupling, SolveOutput, SolverConfig, SolverError};
use crate::source::SourceSpec;
use crate::stats::{fit_line, LineFit};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Measurement(#[from] MeasurementError),
    #[error("invalid experiment: {0}")]
    Config(String),
}

/// Stopping time: `margin · t₁` per source unless overridden.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StopRule {
    pub margin: f64,
    pub t_stop: Option<f64>,
}

impl Default for StopRule {
    fn default() -> Self {
        Self { margin: 1.5, t_stop: None }
    }
}

/// Everything shared by the forward runs of one experiment except `η` and `ε`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSetup {
    pub grid: GridSpec,
    pub material: MaterialModel,
    pub collision_mode: CollisionMode,
    pub coupling: Coupling,
    /// The source set `{φ_i}`.
    pub sources: Vec<SourceSpec>,
    /// The test functions `{ψ_j}`, each centred at its source's `t₁`.
    pub tests: Vec<TestFunctionSpec>,
    pub stop: StopRule,
}

impl Default for ExperimentSetup {
    fn default() -> Self {
        let grid = GridSpec::desk();
        let sources = delta_sources(&grid, 0.935);
        Self {
            grid,
            material: MaterialModel::default(),
            collision_mode: CollisionMode::default(),
            coupling: Coupling::default(),
            sources,
            tests: vec![TestFunctionSpec::GridDelta],
            stop: StopRule::default(),
        }
    }
}

/// One grid-delta source per frequency node, all along `μ₀`.
pub fn delta_sources(grid: &GridSpec, mu0: f64) -> Vec<SourceSpec> {
    grid.omega_nodes().into_iter().map(|w| SourceSpec::grid_delta(mu0, w)).collect()
}

/// Result of one forward solve.
#[derive(Debug, Clone)]
pub struct ForwardRun {
    pub source_index: usize,
    /// Effective `(μ₀, ω₀)` of the source.
    pub mu0: f64,
    pub omega0: f64,
    pub t1: f64,
    /// `max |φ_i|` on the grid.
    pub source_peak: f64,
    pub output: SolveOutput,
}

/// Resolved per-source solver input.
#[derive(Debug, Clone)]
pub struct RunPlan {
    pub config: SolverConfig,
    pub t1: f64,
    pub mu0: f64,
    pub omega0: f64,
    pub source_peak: f64,
}

/// Norm of `Λ_{η₁} − Λ_{η₂}` reported by the sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepNorm {
    /// Largest `|ΔT₁ − ΔT₂|` over sources and time samples.
    #[default]
    Max,
    /// As `max`, with each source's difference divided by `max |φ_i|`.
    SourceScaled,
}

/// Bounded worker pool for independent forward runs.
pub struct WorkerPool {
    pool: rayon::ThreadPool,
}

impl WorkerPool {
    /// `jobs = 0` uses rayon's default thread count.
    pub fn new(jobs: usize) -> Result<Self, ExperimentError> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| ExperimentError::Config(format!("cannot start worker pool: {e}")))?;
        Ok(Self { pool })
    }

    pub fn threads(&self) -> usize {
        self.pool.current_num_threads()
    }

    /// Maps `f` over `items` in parallel, preserving order.
    pub fn map<T, R, F>(&self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        self.pool.install(|| items.par_iter().map(f).collect())
    }
}

impl ExperimentSetup {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.sources.is_empty() {
            return Err(ExperimentError::Config("the source set is empty".into()));
        }
        if self.tests.is_empty() {
            return Err(ExperimentError::Config("no test functions given".into()));
        }
        if !(self.stop.margin > 0.0) {
            return Err(ExperimentError::Config(format!("stop margin must be positive, got {}", self.stop.margin)));
        }
        Ok(())
    }

    pub fn grid_for(&self, epsilon: f64) -> Result<PhaseSpaceGrid, ExperimentError> {
        let nu_max = self.material.nu_max_on(&self.grid.omega_nodes());
        if !(nu_max > 0.0 && nu_max.is_finite()) {
            return Err(ExperimentError::Config(format!("material has no positive group velocity (max {nu_max})")));
        }
        Ok(self.grid.build(epsilon, nu_max)?)
    }

    /// Solver configuration, `t₁` and effective `(μ₀, ω₀)` of source `i`.
    pub fn run_plan(&self, grid: &PhaseSpaceGrid, eta: &ReflectionModel, source_index: usize) -> Result<RunPlan, ExperimentError> {
        let source = self
            .sources
            .get(source_index)
            .ok_or_else(|| ExperimentError::Config(format!("no source with index {source_index}")))?;
        let nodal = self.material.on_grid(grid).map_err(SolverError::from)?;
        let resolved = source.resolve(grid, &nodal).map_err(SolverError::from)?;
        let (mu0, omega0) = resolved.nominal.unwrap_or((1.0, grid.omega[0]));
        let t1 = round_trip_time(grid.x_max, grid.epsilon, mu0, self.material.nu(omega0));
        let t_stop = match self.stop.t_stop {
            Some(t) => t,
            None if resolved.nominal.is_some() => self.stop.margin * t1,
            None => {
                return Err(ExperimentError::Config(format!(
                    "source {source_index} has no nominal direction; set an explicit t_stop"
                )))
            }
        };
        let mut cfg = SolverConfig::new(grid.epsilon, eta.clone(), source.clone(), t_stop);
        cfg.collision_mode = self.collision_mode;
        cfg.coupling = self.coupling.clone();
        Ok(RunPlan { config: cfg, t1, mu0, omega0, source_peak: resolved.peak() })
    }

    fn forward_one(&self, grid: &PhaseSpaceGrid, eta: &ReflectionModel, i: usize) -> Result<ForwardRun, ExperimentError> {
        let plan = self.run_plan(grid, eta, i)?;
        let output = solve(&plan.config, grid, &self.material)?;
        Ok(ForwardRun { source_index: i, mu0: plan.mu0, omega0: plan.omega0, t1: plan.t1, source_peak: plan.source_peak, output })
    }

    /// `Λ_η^ε φ_i` for every source.
    pub fn measurement_operator(
        &self,
        eta: &ReflectionModel,
        epsilon: f64,
        pool: &WorkerPool,
    ) -> Result<Vec<ForwardRun>, ExperimentError> {
        self.validate()?;
        let grid = self.grid_for(epsilon)?;
        let idx: Vec<usize> = (0..self.sources.len()).collect();
        pool.map(&idx, |&i| self.forward_one(&grid, eta, i)).into_iter().collect()
    }

    /// `M_{ij}` from a set of forward runs.
    pub fn functionals(&self, runs: &[ForwardRun]) -> Result<Vec<Vec<f64>>, ExperimentError> {
        runs.iter()
            .map(|run| {
                self.tests
                    .iter()
                    .map(|spec| {
                        measurement_functional(&run.output.times, &run.output.delta_t, &spec.at(run.t1))
                            .map_err(ExperimentError::from)
                    })
                    .collect()
            })
            .collect()
    }

    pub fn measure(&self, eta: &ReflectionModel, epsilon: f64, pool: &WorkerPool) -> Result<Vec<Vec<f64>>, ExperimentError> {
        let runs = self.measurement_operator(eta, epsilon, pool)?;
        self.functionals(&runs)
    }

    /// `L^ε(η)` against `data`.
    pub fn loss(
        &self,
        eta: &ReflectionModel,
        data: &[Vec<f64>],
        epsilon: f64,
        pool: &WorkerPool,
    ) -> Result<f64, ExperimentError> {
        Ok(loss(&self.measure(eta, epsilon, pool)?, data)?)
    }

    /// Loss values for `η = tanh(a_fixed, b)` on `n_points` equispaced `b`.
    #[allow(clippy::too_many_arguments)]
    pub fn landscape_scan(
        &self,
        a_fixed: f64,
        b_range: (f64, f64),
        n_points: usize,
        epsilon: f64,
        data: &[Vec<f64>],
        pool: &WorkerPool,
    ) -> Result<Vec<(f64, f64)>, ExperimentError> {
        self.validate()?;
        if n_points < 2 || !(b_range.1 > b_range.0) {
            return Err(ExperimentError::Config(format!(
                "landscape needs at least two points on an increasing range, got {n_points} on {b_range:?}"
            )));
        }
        let grid = self.grid_for(epsilon)?;
        let bs: Vec<f64> = (0..n_points)
            .map(|k| b_range.0 + (b_range.1 - b_range.0) * k as f64 / (n_points - 1) as f64)
            .collect();
        let jobs: Vec<(usize, usize)> = (0..n_points).flat_map(|k| (0..self.sources.len()).map(move |i| (k, i))).collect();
        let runs = pool.map(&jobs, |&(k, i)| self.forward_one(&grid, &ReflectionModel::tanh(a_fixed, bs[k]), i));
        let mut runs = runs.into_iter();
        let mut rows = Vec::with_capacity(n_points);
        for &b in &bs {
            let batch: Vec<ForwardRun> = runs.by_ref().take(self.sources.len()).collect::<Result<_, _>>()?;
            rows.push((b, loss(&self.functionals(&batch)?, data)?));
        }
        Ok(rows)
    }

    /// Maximum of `|Λ_{η₁} − Λ_{η₂}|` over sources and time samples for each
    /// `ε`, and the least-squares fit of its logarithm against `1/ε`.
    pub fn stability_sweep(
        &self,
        eta1: &ReflectionModel,
        eta2: &ReflectionModel,
        epsilons: &[f64],
        norm: SweepNorm,
        pool: &WorkerPool,
        keep_traces: bool,
    ) -> Result<SweepResult, ExperimentError> {
        self.validate()?;
        if epsilons.len() < 3 {
            return Err(ExperimentError::Config(format!("a sweep needs at least 3 epsilon values, got {}", epsilons.len())));
        }
        let grids: Vec<PhaseSpaceGrid> = epsilons.iter().map(|&e| self.grid_for(e)).collect::<Result<_, _>>()?;
        let n_src = self.sources.len();
        let jobs: Vec<(usize, usize, usize)> = (0..epsilons.len())
            .flat_map(|e| (0..2).flat_map(move |w| (0..n_src).map(move |i| (e, w, i))))
            .collect();
        let etas = [eta1, eta2];
        let results = pool.map(&jobs, |&(e, w, i)| self.forward_one(&grids[e], etas[w], i));
        let mut results = results.into_iter();

        let mut rows = Vec::with_capacity(epsilons.len());
        let mut traces = Vec::new();
        for &eps in epsilons {
            let first: Vec<ForwardRun> = results.by_ref().take(n_src).collect::<Result<_, _>>()?;
            let second: Vec<ForwardRun> = results.by_ref().take(n_src).collect::<Result<_, _>>()?;
            let mut max_diff: f64 = 0.0;
            for (a, b) in first.iter().zip(&second) {
                let scale = match norm {
                    SweepNorm::Max => 1.0,
                    SweepNorm::SourceScaled if a.source_peak > 0.0 => 1.0 / a.source_peak,
                    SweepNorm::SourceScaled => 0.0,
                };
                for (x, y) in a.output.delta_t.iter().zip(&b.output.delta_t) {
                    max_diff = max_diff.max(scale * (x - y).abs());
                }
            }
            let floored = max_diff < f64::EPSILON;
            let log_max_diff = max_diff.max(f64::EPSILON).ln();
            info!("sweep eps = {eps}: max diff = {max_diff:.4e}");
            rows.push(SweepRow { epsilon: eps, inv_epsilon: 1.0 / eps, max_diff, log_max_diff, floored });
            if keep_traces {
                traces.push(SweepTraces { epsilon: eps, eta1: first, eta2: second });
            }
        }

        let identical = eta1 == eta2 || rows.iter().all(|r| r.max_diff == 0.0);
        let regression = if identical {
            None
        } else {
            let x: Vec<f64> = rows.iter().map(|r| r.inv_epsilon).collect();
            let y: Vec<f64> = rows.iter().map(|r| r.log_max_diff).collect();
            fit_line(&x, &y)
        };
        Ok(SweepResult { rows, regression, regression_skipped: identical, traces })
    }

    /// Gradient descent on `L^ε(a, b)` with central finite differences.
    pub fn reconstruct(
        &self,
        start: (f64, f64),
        data: &[Vec<f64>],
        epsilon: f64,
        options: &ReconstructOptions,
        pool: &WorkerPool,
    ) -> Result<Reconstruction, ExperimentError> {
        self.validate()?;
        options.validate()?;
        let grid = self.grid_for(epsilon)?;
        let n_src = self.sources.len();
        // every loss evaluation fans out over the sources; batches of points share the pool
        let losses = |points: &[(f64, f64)]| -> Result<Vec<f64>, ExperimentError> {
            let jobs: Vec<(usize, usize)> = (0..points.len()).flat_map(|p| (0..n_src).map(move |i| (p, i))).collect();
            let runs = pool.map(&jobs, |&(p, i)| self.forward_one(&grid, &ReflectionModel::tanh(points[p].0, points[p].1), i));
            let mut runs = runs.into_iter();
            let mut out = Vec::with_capacity(points.len());
            for _ in points {
                let batch: Vec<ForwardRun> = runs.by_ref().take(n_src).collect::<Result<_, _>>()?;
                out.push(loss(&self.functionals(&batch)?, data)?);
            }
            Ok(out)
        };

        let (mut a, mut b) = start;
        let mut current = losses(&[(a, b)])?[0];
        let initial_loss = current;
        let mut lr = options.learning_rate;
        let mut trajectory = Vec::new();
        let mut increases = 0;
        let mut status = ReconstructStatus::MaxIterations;
        for iter in 0..=options.max_iterations {
            let ha = options.relative_step * a.abs().max(options.min_step);
            let hb = options.relative_step * b.abs().max(options.min_step);
            let probes = losses(&[(a + ha, b), (a - ha, b), (a, b + hb), (a, b - hb)])?;
            let ga = (probes[0] - probes[1]) / (2.0 * ha);
            let gb = (probes[2] - probes[3]) / (2.0 * hb);
            let grad_norm = ga.hypot(gb);
            trajectory.push(Iterate { iter, a, b, loss: current, grad_norm });
            if current <= options.loss_tolerance {
                status = ReconstructStatus::LossTolerance;
                break;
            }
            if grad_norm < options.gradient_tolerance {
                status = ReconstructStatus::GradientTolerance;
                break;
            }
            if iter == options.max_iterations {
                break;
            }
            a -= lr * ga;
            b -= lr * gb;
            let next = losses(&[(a, b)])?[0];
            if next > current {
                increases += 1;
                lr *= 0.5;
                if increases >= options.max_increases {
                    trajectory.push(Iterate { iter: iter + 1, a, b, loss: next, grad_norm: f64::NAN });
                    status = ReconstructStatus::Diverged;
                    break;
                }
            } else {
                increases = 0;
                lr *= options.growth;
            }
            current = next;
        }
        let last = trajectory.last().copied().expect("at least one iterate is recorded");
        Ok(Reconstruction { trajectory, status, initial_loss, final_loss: last.loss, a: last.a, b: last.b })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub epsilon: f64,
    pub inv_epsilon: f64,
    pub max_diff: f64,
    /// `ln max(max_diff, machine ε)`.
    pub log_max_diff: f64,
    /// True when the difference fell below machine precision.
    pub floored: bool,
}

#[derive(Debug, Clone)]
pub struct SweepTraces {
    pub epsilon: f64,
    pub eta1: Vec<ForwardRun>,
    pub eta2: Vec<ForwardRun>,
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    /// Fit of `log_max_diff` against `1/ε`.
    pub regression: Option<LineFit>,
    /// Set when the two reflection models produce identical data.
    pub regression_skipped: bool,
    pub traces: Vec<SweepTraces>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReconstructOptions {
    pub max_iterations: usize,
    pub learning_rate: f64,
    /// Multiplier applied to the learning rate after a decrease of the loss.
    pub growth: f64,
    pub gradient_tolerance: f64,
    pub loss_tolerance: f64,
    /// Finite-difference step relative to the parameter value.
    pub relative_step: f64,
    /// Parameter magnitude below which the step stops shrinking.
    pub min_step: f64,
    /// Consecutive loss increases that abort the descent.
    pub max_increases: usize,
}

impl Default for ReconstructOptions {
    fn default() -> Self {
        Self {
            max_iterations: 40,
            learning_rate: 10.0,
            growth: 1.2,
            gradient_tolerance: 1e-6,
            loss_tolerance: 0.0,
            relative_step: 1e-3,
            min_step: 1e-3,
            max_increases: 5,
        }
    }
}

impl ReconstructOptions {
    fn validate(&self) -> Result<(), ExperimentError> {
        if !(self.learning_rate > 0.0 && self.relative_step > 0.0 && self.growth >= 1.0 && self.max_increases > 0) {
            return Err(ExperimentError::Config(format!("invalid reconstruction options {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Iterate {
    pub iter: usize,
    pub a: f64,
    pub b: f64,
    pub loss: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ReconstructStatus {
    LossTolerance,
    GradientTolerance,
    MaxIterations,
    Diverged,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Reconstruction {
    pub trajectory: Vec<Iterate>,
    pub status: ReconstructStatus,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub a: f64,
    pub b: f64,
}

/// Multiplies every datum by `1 + σ·N(0, 1)` with a seeded generator.
pub fn add_noise(data: &[Vec<f64>], relative_sigma: f64, seed: u64) -> Result<Vec<Vec<f64>>, ExperimentError> {
    let normal = Normal::new(0.0, relative_sigma)
        .map_err(|e| ExperimentError::Config(format!("invalid noise level {relative_sigma}: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(data
        .iter()
        .map(|row| row.iter().map(|v| v * (1.0 + normal.sample(&mut rng))).collect())
        .collect())
}
