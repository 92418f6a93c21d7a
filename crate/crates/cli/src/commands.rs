//! The five subcommands: each runs one driver, writes its CSV/JSON files and
//! returns the checks evaluated on the results.

use std::path::PathBuf;
use std::time::Instant;

use log::info;
use phonon_core::experiments::{add_noise, ExperimentSetup, SweepNorm, WorkerPool};
use phonon_core::solver::solve;
use phonon_core::studies::decomposition_study;
use phonon_core::PhaseSpaceGrid;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{load_config, RunConfig, SCHEMA_VERSION};
use crate::error::CliError;
use crate::manifest::{Check, GridFingerprint, RunDir, RunManifest, RunStatus, Software};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Command {
    /// One forward run; writes the surface trace.
    Solve,
    /// Loss along `b` at fixed `a`, one scan per epsilon.
    Landscape,
    /// Difference of two measurement operators across epsilon, with a log-linear fit.
    Sweep,
    /// Ballistic/remainder split of the measurement for shrinking test windows.
    Decompose,
    /// Finite-difference gradient descent for `(a, b)`, one run per epsilon.
    Reconstruct,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Solve => "solve",
            Command::Landscape => "landscape",
            Command::Sweep => "sweep",
            Command::Decompose => "decompose",
            Command::Reconstruct => "reconstruct",
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub config: Option<PathBuf>,
    pub out: PathBuf,
    /// Worker threads, 0 for all cores.
    pub jobs: usize,
    /// Seed of the optional data noise.
    pub seed: u64,
    pub strict: bool,
    /// Overrides `sweep.norm`.
    pub norm: Option<SweepNorm>,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { config: None, out: PathBuf::from("out"), jobs: 0, seed: 0, strict: false, norm: None }
    }
}

struct Outcome {
    grids: Vec<GridFingerprint>,
    checks: Vec<Check>,
    summary: Value,
}

/// Loads and validates the configuration, runs `command` and writes the
/// manifest. With `strict`, failed checks turn into [`CliError::Strict`]
/// after all files are written.
pub fn run(command: Command, opts: &RunOptions) -> Result<RunManifest, CliError> {
    let loaded = load_config(opts.config.as_deref())?;
    let mut config = loaded.config;
    if let Some(norm) = opts.norm {
        config.sweep.norm = norm;
    }
    config.validate()?;
    let pool = WorkerPool::new(opts.jobs)?;
    let mut dir = RunDir::create(&opts.out)?;
    let start = Instant::now();
    info!("{} -> {} ({} workers)", command.name(), opts.out.display(), pool.threads());

    let result = match command {
        Command::Solve => run_solve(&config, &mut dir),
        Command::Landscape => run_landscape(&config, &mut dir, &pool, opts.seed),
        Command::Sweep => run_sweep(&config, &mut dir, &pool),
        Command::Decompose => run_decompose(&config, &mut dir),
        Command::Reconstruct => run_reconstruct(&config, &mut dir, &pool, opts.seed),
    };
    let mut manifest = RunManifest {
        schema_version: SCHEMA_VERSION,
        software: Software { name: env!("CARGO_PKG_NAME"), version: env!("CARGO_PKG_VERSION") },
        command: command.name().to_string(),
        status: RunStatus::Ok,
        error: None,
        config,
        defaults: loaded.defaults,
        seed: opts.seed,
        jobs: opts.jobs,
        grids: Vec::new(),
        outputs: Vec::new(),
        checks: Vec::new(),
        summary: Value::Null,
        wall_time_s: 0.0,
    };
    let error = match result {
        Ok(outcome) => {
            manifest.grids = outcome.grids;
            manifest.checks = outcome.checks;
            manifest.summary = outcome.summary;
            None
        }
        Err(e) => {
            manifest.status = RunStatus::Error;
            manifest.error = Some(e.to_string());
            Some(e)
        }
    };
    manifest.outputs = dir.outputs.clone();
    manifest.wall_time_s = start.elapsed().as_secs_f64();
    let failed: Vec<String> = manifest.checks.iter().filter(|c| !c.passed).map(|c| format!("{}: {}", c.name, c.detail)).collect();
    if manifest.status == RunStatus::Ok && !failed.is_empty() {
        manifest.status = RunStatus::FailedChecks;
    }
    dir.finish(&manifest)?;
    if let Some(e) = error {
        // the run directory keeps the partial outputs and the manifest
        return Err(e);
    }
    if opts.strict && !failed.is_empty() {
        return Err(CliError::Strict(failed));
    }
    Ok(manifest)
}

fn eps_dir(eps: f64) -> String {
    format!("eps_{eps}")
}

fn build_grids(setup: &ExperimentSetup, epsilons: &[f64]) -> Result<Vec<PhaseSpaceGrid>, CliError> {
    epsilons.iter().map(|&e| setup.grid_for(e).map_err(CliError::from)).collect()
}

fn fingerprints(grids: &[PhaseSpaceGrid]) -> Vec<GridFingerprint> {
    grids.iter().map(GridFingerprint::of).collect()
}

fn run_solve(config: &RunConfig, dir: &mut RunDir) -> Result<Outcome, CliError> {
    let block = &config.solve;
    let mut setup = config.setup.clone();
    let index = match &block.source {
        Some(s) => {
            setup.sources = vec![s.clone()];
            0
        }
        None => block.source_index,
    };
    if block.t_stop.is_some() {
        setup.stop.t_stop = block.t_stop;
    }
    let grid = setup.grid_for(block.epsilon)?;
    let mut plan = setup.run_plan(&grid, &block.eta, index)?;
    plan.config.probes = block.probes.clone();
    let out = solve(&plan.config, &grid, &setup.material).map_err(|e| CliError::Solver(e.to_string()))?;

    let rows: Vec<(f64, f64)> = out.times.iter().copied().zip(out.delta_t.iter().copied()).collect();
    dir.csv("surface_trace.csv", &["t", "delta_T"], &rows)?;
    if !out.snapshots.is_empty() {
        let nc = grid.n_channels();
        let mut snap = Vec::new();
        for s in &out.snapshots {
            for (k, v) in s.f.iter().enumerate() {
                let (m, i) = grid.split_channel(k % nc);
                snap.push((s.t, grid.x_node(k / nc), grid.mu[m], grid.omega[i], *v));
            }
        }
        dir.csv("snapshots.csv", &["t", "x", "mu", "omega", "f"], &snap)?;
    }

    let d = out.diagnostics;
    let mut checks = Vec::new();
    if block.probes.check_invariants {
        checks.push(Check::new(
            "conservation",
            d.max_conservation_ratio <= 1e-12,
            format!("max |<(Lf - f)/tau>| / ||f||_1 = {:.3e} (limit 1e-12)", d.max_conservation_ratio),
        ));
        checks.push(Check::new("positivity", d.min_value >= 0.0, format!("min f = {:.3e}", d.min_value)));
        checks.push(Check::new(
            "max_principle",
            d.max_over_c_omega <= d.c_m * (1.0 + 1e-12),
            format!("max f / C_omega = {:.6e}, c_m = {:.6e}", d.max_over_c_omega, d.c_m),
        ));
    }
    let summary = json!({
        "t1": plan.t1,
        "mu0": plan.mu0,
        "omega0": plan.omega0,
        "t_stop": plan.config.t_stop,
        "diagnostics": d,
    });
    Ok(Outcome { grids: fingerprints(&[grid]), checks, summary })
}

fn noisy(data: Vec<Vec<f64>>, noise: Option<f64>, seed: u64) -> Result<Vec<Vec<f64>>, CliError> {
    match noise {
        Some(s) if s > 0.0 => Ok(add_noise(&data, s, seed)?),
        _ => Ok(data),
    }
}

fn run_landscape(config: &RunConfig, dir: &mut RunDir, pool: &WorkerPool, seed: u64) -> Result<Outcome, CliError> {
    let block = &config.landscape;
    let setup = &config.setup;
    let grids = build_grids(setup, &block.epsilons)?;
    let step = (block.b_range[1] - block.b_range[0]) / (block.n_points.max(2) - 1) as f64;
    let mut per_eps = Vec::new();
    for &eps in &block.epsilons {
        let data = noisy(setup.measure(&block.truth, eps, pool)?, block.noise, seed)?;
        let rows = setup.landscape_scan(block.a_fixed, (block.b_range[0], block.b_range[1]), block.n_points, eps, &data, pool)?;
        dir.csv(&format!("{}/landscape.csv", eps_dir(eps)), &["b", "loss"], &rows)?;
        let (lo, hi) = rows.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| (lo.min(r.1), hi.max(r.1)));
        let argmin = rows.iter().fold(rows[0], |best, r| if r.1 < best.1 { *r } else { best }).0;
        info!("landscape eps = {eps}: amplitude {:.4e}, argmin b = {argmin}", hi - lo);
        per_eps.push((eps, hi - lo, argmin, lo));
    }

    let mut checks = Vec::new();
    if let Some((_, b_true)) = block.truth.params() {
        for &(eps, _, argmin, _) in &per_eps {
            checks.push(Check::new(
                &format!("argmin_eps_{eps}"),
                (argmin - b_true).abs() <= step * (1.0 + 1e-9),
                format!("argmin b = {argmin}, truth {b_true}, scan step {step}"),
            ));
        }
    }
    let mut by_eps = per_eps.clone();
    by_eps.sort_by(|a, b| a.0.total_cmp(&b.0));
    if by_eps.len() >= 2 {
        let increasing = by_eps.windows(2).all(|w| w[0].1 < w[1].1);
        let listing: Vec<String> = by_eps.iter().map(|r| format!("{}: {:.4e}", r.0, r.1)).collect();
        checks.push(Check::new("flattening", increasing, format!("amplitude by epsilon {}", listing.join(", "))));
    }
    let summary = Value::Array(
        per_eps
            .iter()
            .map(|&(eps, amplitude, argmin, min)| json!({"epsilon": eps, "amplitude": amplitude, "argmin_b": argmin, "min_loss": min}))
            .collect(),
    );
    Ok(Outcome { grids: fingerprints(&grids), checks, summary })
}

#[derive(Serialize)]
struct Regression {
    slope: Option<f64>,
    intercept: Option<f64>,
    r: Option<f64>,
    skipped: bool,
    norm: SweepNorm,
}

fn run_sweep(config: &RunConfig, dir: &mut RunDir, pool: &WorkerPool) -> Result<Outcome, CliError> {
    let block = &config.sweep;
    let setup = &config.setup;
    let grids = build_grids(setup, &block.epsilons)?;
    let result = setup.stability_sweep(&block.eta1, &block.eta2, &block.epsilons, block.norm, pool, block.lambda_grid)?;

    let rows: Vec<(f64, f64, f64, f64)> =
        result.rows.iter().map(|r| (r.epsilon, r.inv_epsilon, r.max_diff, r.log_max_diff)).collect();
    dir.csv("sweep.csv", &["epsilon", "inv_epsilon", "max_diff", "log_max_diff"], &rows)?;
    let fit = result.regression;
    dir.json(
        "regression.json",
        &Regression {
            slope: fit.map(|f| f.slope),
            intercept: fit.map(|f| f.intercept),
            r: fit.map(|f| f.r),
            skipped: result.regression_skipped,
            norm: block.norm,
        },
    )?;
    if block.lambda_grid {
        let mut lambda = Vec::new();
        for tr in &result.traces {
            for (k, runs) in [&tr.eta1, &tr.eta2].into_iter().enumerate() {
                let id = format!("{}/eta{}", eps_dir(tr.epsilon), k + 1);
                for run in runs {
                    for (t, v) in run.output.times.iter().zip(&run.output.delta_t) {
                        lambda.push((run.omega0, *t, *v, id.clone()));
                    }
                }
            }
        }
        dir.csv("lambda_grid.csv", &["omega_i", "t", "value", "run_id"], &lambda)?;
    }
    let curves: Vec<(f64, f64, f64)> = (0..=195)
        .map(|k| {
            let w = 0.05 + 0.01 * k as f64;
            (w, block.eta1.eval(w), block.eta2.eval(w))
        })
        .collect();
    dir.csv("eta_curves.csv", &["omega", "eta1", "eta2"], &curves)?;

    let mut checks = Vec::new();
    match fit {
        Some(f) => checks.push(Check::new(
            "exponential_trend",
            f.slope < 0.0 && f.r.abs() >= 0.95,
            format!("slope {:.4}, r {:.4} (need slope < 0, |r| >= 0.95)", f.slope, f.r),
        )),
        None => checks.push(Check::new(
            "exponential_trend",
            result.regression_skipped,
            "regression skipped: identical reflection coefficients".to_string(),
        )),
    }
    let mut by_eps = result.rows.clone();
    by_eps.sort_by(|a, b| a.epsilon.total_cmp(&b.epsilon));
    let monotone = by_eps.windows(2).all(|w| w[0].max_diff <= w[1].max_diff);
    let listing: Vec<String> = by_eps.iter().map(|r| format!("{}: {:.4e}", r.epsilon, r.max_diff)).collect();
    checks.push(Check::new("nondecreasing_in_epsilon", monotone, listing.join(", ")));
    let summary = json!({
        "rows": result.rows,
        "regression": fit,
        "regression_skipped": result.regression_skipped,
        "norm": block.norm,
    });
    Ok(Outcome { grids: fingerprints(&grids), checks, summary })
}

fn run_decompose(config: &RunConfig, dir: &mut RunDir) -> Result<Outcome, CliError> {
    let setup = &config.decompose;
    let grid = setup.grid.build(setup.epsilon, setup.material.nu_max_on(&setup.grid.omega_nodes()));
    let grid = grid.map_err(|e| CliError::Config(e.to_string()))?;
    let rows = decomposition_study(setup)?;
    let csv_rows: Vec<(f64, f64, f64, f64, f64, f64, usize)> =
        rows.iter().map(|r| (r.epsilon, r.theta, r.m, r.m0, r.m1, r.asymptotic.value, r.eta_index)).collect();
    dir.csv("split.csv", &["epsilon", "theta", "M", "M0", "M1", "m0_asymptotic", "eta_index"], &csv_rows)?;

    let mut checks = Vec::new();
    let worst = rows.iter().map(|r| (r.m - (r.m0 + r.m1)).abs() / r.m.abs().max(f64::MIN_POSITIVE)).fold(0.0, f64::max);
    checks.push(Check::new("split_identity", worst <= 1e-12, format!("max |M - (M0 + M1)| / |M| = {worst:.3e}")));
    for k in 0..setup.etas.len() {
        let mut series: Vec<(f64, f64)> = rows.iter().filter(|r| r.eta_index == k).map(|r| (r.theta, r.m1.abs())).collect();
        series.sort_by(|a, b| b.0.total_cmp(&a.0));
        let shrinking = series.windows(2).all(|w| w[1].1 < w[0].1);
        let listing: Vec<String> = series.iter().map(|(t, m)| format!("{t}: {m:.4e}")).collect();
        checks.push(Check::new(&format!("remainder_shrinks_eta{}", k + 1), shrinking, listing.join(", ")));
    }
    if setup.etas.len() >= 2 {
        let theta = setup.thetas.iter().copied().fold(f64::INFINITY, f64::min);
        let at = |k: usize| rows.iter().find(|r| r.theta == theta && r.eta_index == k);
        if let (Some(a), Some(b)) = (at(0), at(1)) {
            let measured = (a.m0 - b.m0).abs();
            let predicted = (a.asymptotic.value - b.asymptotic.value).abs();
            let rel = (measured - predicted).abs() / predicted;
            checks.push(Check::new(
                "ballistic_prediction",
                rel <= 0.1,
                format!("theta {theta}: |dM0| = {measured:.4e}, predicted {predicted:.4e}, relative error {rel:.3}"),
            ));
        }
    }
    Ok(Outcome { grids: fingerprints(&[grid]), checks, summary: serde_json::to_value(&rows).unwrap_or(Value::Null) })
}

fn run_reconstruct(config: &RunConfig, dir: &mut RunDir, pool: &WorkerPool, seed: u64) -> Result<Outcome, CliError> {
    let block = &config.reconstruct;
    let setup = &config.setup;
    let grids = build_grids(setup, &block.epsilons)?;
    let mut results = Vec::new();
    for &eps in &block.epsilons {
        let data = noisy(setup.measure(&block.truth, eps, pool)?, block.noise, seed)?;
        let rec = setup.reconstruct((block.start[0], block.start[1]), &data, eps, &block.options, pool)?;
        let rows: Vec<(usize, f64, f64, f64, f64)> = rec.trajectory.iter().map(|it| (it.iter, it.a, it.b, it.loss, it.grad_norm)).collect();
        dir.csv(&format!("{}/recon_trace.csv", eps_dir(eps)), &["iter", "a", "b", "loss", "grad_norm"], &rows)?;
        info!("reconstruct eps = {eps}: {:?} at ({:.5}, {:.5}), loss {:.3e} -> {:.3e}", rec.status, rec.a, rec.b, rec.initial_loss, rec.final_loss);
        results.push((eps, rec));
    }

    let mut checks = Vec::new();
    if results.len() >= 2 {
        if let Some((a_true, b_true)) = block.truth.params() {
            let (wide, narrow) = {
                let mut sorted: Vec<&(f64, _)> = results.iter().collect();
                sorted.sort_by(|x, y| x.0.total_cmp(&y.0));
                (sorted[sorted.len() - 1], sorted[0])
            };
            let dist = (wide.1.a - a_true).abs().max((wide.1.b - b_true).abs());
            checks.push(Check::new(
                &format!("converges_eps_{}", wide.0),
                dist <= block.tolerance,
                format!("final ({:.5}, {:.5}), truth ({a_true}, {b_true}), tolerance {}", wide.1.a, wide.1.b, block.tolerance),
            ));
            let ratio = narrow.1.final_loss / narrow.1.initial_loss;
            checks.push(Check::new(
                &format!("stalls_eps_{}", narrow.0),
                ratio > block.loss_fraction,
                format!("final/initial loss = {ratio:.3e} (stall needs > {})", block.loss_fraction),
            ));
        }
    }
    let summary = Value::Array(
        results
            .iter()
            .map(|(eps, r)| {
                json!({
                    "epsilon": eps, "status": r.status, "a": r.a, "b": r.b,
                    "initial_loss": r.initial_loss, "final_loss": r.final_loss,
                    "iterations": r.trajectory.len().saturating_sub(1),
                })
            })
            .collect(),
    );
    Ok(Outcome { grids: fingerprints(&grids), checks, summary })
}
