//! Time integration of the scaled transport system
//!
//! ```text
//! ε ∂_t f + μ ν(ω) ∂_x f = (Lf − f) / (ε τ(ω)),   Lf = (C_ω / C_τ) ⟨f / τ⟩
//! ```
//!
//! on `[0, x_max]`, with inflow `φ` at `x = 0` and a reflecting (optionally
//! transmitting) interface at `x = x_max`. Each step is first-order upwind
//! transport followed by relaxation and a boundary refresh; both substeps
//! are convex combinations under the CFL limit, so nonnegativity and the
//! maximum principle carry over to the discrete field.
//!
//! In [`Decomposition::BallisticSplit`] mode the solver only advances the
//! scattering remainder `f₁ = f − f₀`, with `f₀` the exact collisionless
//! solution sampled on the grid. `f₁` has zero inflow and is driven by
//! `L(f₀ + f₁)`. This keeps the narrow source pulse free of numerical
//! diffusion.

use log::{debug, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::PhaseSpaceGrid;
use crate::material::{reduce_interface_coefficients, InterfaceError, MaterialError, MaterialModel, NodalMaterial};
use crate::reflection::ReflectionModel;
use crate::source::{ResolvedSource, SourceError, SourceSpec, TimeProfile};

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("invalid solver configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Material(#[from] MaterialError),
    #[error("interface at omega = {omega}: {source}")]
    Interface { omega: f64, source: InterfaceError },
    #[error(transparent)]
    Source(#[from] SourceError),
    #[error("time step violates the CFL limit: dt * max|mu nu| / (eps dx) = {0} > 1")]
    Cfl(f64),
    #[error("non-finite value {value} in {field} at node {node} (x = {x}), mu = {mu}, omega = {omega}, t = {t}")]
    NonFinite { field: &'static str, node: usize, x: f64, mu: f64, omega: f64, t: f64, value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CollisionMode {
    #[default]
    Explicit,
    SemiImplicit,
    /// Collisionless transport.
    None,
    /// Transport with the loss term `−f/(ετ)` only, the equation of the
    /// ballistic part.
    LossOnly,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Coupling {
    /// `ζ_t = 0`: the substrate is not simulated.
    #[default]
    ReflectiveOnly,
    Coupled {
        #[serde(default = "default_substrate_length")]
        substrate_length: f64,
        #[serde(default = "default_nu_ratio")]
        nu_ratio: f64,
        #[serde(default = "default_tau_ratio")]
        tau_ratio: f64,
        #[serde(default = "default_c")]
        c: f64,
    },
}

fn default_substrate_length() -> f64 {
    0.5
}
fn default_nu_ratio() -> f64 {
    0.5
}
fn default_tau_ratio() -> f64 {
    4.0
}
fn default_c() -> f64 {
    1.0
}

impl Coupling {
    pub fn coupled_default() -> Self {
        Coupling::Coupled {
            substrate_length: default_substrate_length(),
            nu_ratio: default_nu_ratio(),
            tau_ratio: default_tau_ratio(),
            c: default_c(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decomposition {
    #[default]
    Full,
    BallisticSplit,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialState {
    #[default]
    Zero,
    /// `f = amplitude · C_ω` everywhere (and `g` likewise).
    Equilibrium { amplitude: f64 },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Probes {
    /// Times at which the full field is stored (nearest step).
    pub snapshot_times: Vec<f64>,
    /// Evaluate the conservation residual and the field bounds on every step.
    pub check_invariants: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub epsilon: f64,
    #[serde(default)]
    pub collision_mode: CollisionMode,
    #[serde(default)]
    pub coupling: Coupling,
    #[serde(default)]
    pub decomposition: Decomposition,
    #[serde(default)]
    pub eta: ReflectionModel,
    #[serde(default)]
    pub source: SourceSpec,
    #[serde(default)]
    pub initial: InitialState,
    pub t_stop: f64,
    #[serde(default)]
    pub probes: Probes,
}

impl SolverConfig {
    pub fn new(epsilon: f64, eta: ReflectionModel, source: SourceSpec, t_stop: f64) -> Self {
        Self {
            epsilon,
            collision_mode: CollisionMode::default(),
            coupling: Coupling::default(),
            decomposition: Decomposition::default(),
            eta,
            source,
            initial: InitialState::default(),
            t_stop,
            probes: Probes::default(),
        }
    }
}

/// Full field at one sampled time.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub t: f64,
    /// Node-major `(x, μ, ω)` values of `f` (the total field in split mode).
    pub f: Vec<f64>,
    pub g: Option<Vec<f64>>,
}

/// Per-step invariant measurements, aggregated over the run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Diagnostics {
    pub steps: usize,
    pub cfl: f64,
    pub max_relaxation_fraction: f64,
    /// `max |⟨(Lf − f)/τ⟩| / ‖f‖₁` over nodes and steps (0 when not checked).
    pub max_conservation_ratio: f64,
    pub min_value: f64,
    /// `max f / C_ω` over the run (transducer and substrate).
    pub max_over_c_omega: f64,
    pub c_m: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveOutput {
    pub times: Vec<f64>,
    /// Surface temperature `ΔT(t, x = 0)`.
    pub delta_t: Vec<f64>,
    /// Ballistic part of the surface temperature (split mode only).
    pub ballistic_delta_t: Option<Vec<f64>>,
    pub snapshots: Vec<Snapshot>,
    pub diagnostics: Diagnostics,
}

/// Per-channel coefficients of one slab.
#[derive(Debug, Clone)]
struct Slab {
    n_nodes: usize,
    /// `Δt |μ| ν / (ε Δx)`.
    courant: Vec<f64>,
    /// `Δt / (ε² τ)`.
    lambda: Vec<f64>,
    /// `w_μ w_ω / τ`.
    moment_weight: Vec<f64>,
    /// `C_ω / C_τ`.
    closure: Vec<f64>,
    c_omega: Vec<f64>,
    weights: Vec<f64>,
}

impl Slab {
    fn new(grid: &PhaseSpaceGrid, nodal: &NodalMaterial, n_nodes: usize) -> Self {
        let nc = grid.n_channels();
        let mut s = Slab {
            n_nodes,
            courant: Vec::with_capacity(nc),
            lambda: Vec::with_capacity(nc),
            moment_weight: Vec::with_capacity(nc),
            closure: Vec::with_capacity(nc),
            c_omega: Vec::with_capacity(nc),
            weights: grid.channel_weights().to_vec(),
        };
        let eps = grid.epsilon;
        for ch in 0..nc {
            let (m, i) = grid.split_channel(ch);
            s.courant.push(grid.dt * grid.mu[m].abs() * nodal.nu[i] / (eps * grid.dx));
            s.lambda.push(grid.dt / (eps * eps * nodal.tau[i]));
            s.moment_weight.push(s.weights[ch] * nodal.inv_tau[i]);
            s.closure.push(nodal.c_omega[i] / nodal.c_tau);
            s.c_omega.push(nodal.c_omega[i]);
        }
        s
    }

    fn moment(&self, row: &[f64]) -> f64 {
        row.iter().zip(&self.moment_weight).map(|(f, w)| f * w).sum()
    }
}

/// Closed-form ballistic data for one source channel and its reflection.
#[derive(Debug, Clone, Copy)]
struct BallisticChannel {
    ch: usize,
    mirror: usize,
    weight: f64,
    /// `μ ν / ε`.
    speed: f64,
    /// `1 / (μ ν τ ε)`.
    decay: f64,
    eta: f64,
}

#[derive(Debug, Clone, Copy, Default)]
struct StepStats {
    conservation: f64,
    min: f64,
    max_ratio: f64,
    bad: Option<(usize, usize)>,
}

impl StepStats {
    fn merge(a: StepStats, b: StepStats) -> StepStats {
        StepStats {
            conservation: a.conservation.max(b.conservation),
            min: a.min.min(b.min),
            max_ratio: a.max_ratio.max(b.max_ratio),
            bad: a.bad.or(b.bad),
        }
    }

    fn identity() -> StepStats {
        StepStats { conservation: 0.0, min: f64::INFINITY, max_ratio: f64::NEG_INFINITY, bad: None }
    }
}

const PARALLEL_THRESHOLD: usize = 1 << 16;

/// Explicit state of one run; `step` advances by one `Δt`.
pub struct Solver {
    config: SolverConfig,
    grid: PhaseSpaceGrid,
    nodal: NodalMaterial,
    eta: Vec<f64>,
    zeta_t: Vec<f64>,
    eta_s: Vec<f64>,
    zeta_s: Vec<f64>,
    source: ResolvedSource,
    ballistic: Vec<BallisticChannel>,
    slab: Slab,
    sub: Option<Slab>,
    f: Vec<f64>,
    f_next: Vec<f64>,
    g: Vec<f64>,
    g_next: Vec<f64>,
    /// Ballistic part at the current time (split mode), node-major like `f`.
    f0: Vec<f64>,
    n: usize,
    diagnostics: Diagnostics,
}

impl Solver {
    pub fn new(config: &SolverConfig, grid: &PhaseSpaceGrid, material: &MaterialModel) -> Result<Self, SolverError> {
        let eps = config.epsilon;
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(SolverError::Config(format!("epsilon must be positive, got {eps}")));
        }
        if (grid.epsilon - eps).abs() > 1e-12 * eps {
            return Err(SolverError::Config(format!(
                "grid was built for epsilon = {} but the run uses {eps}",
                grid.epsilon
            )));
        }
        if !(config.t_stop > 0.0 && config.t_stop.is_finite()) {
            return Err(SolverError::Config(format!("t_stop must be positive, got {}", config.t_stop)));
        }
        config.eta.validate().map_err(SolverError::Config)?;
        let nodal = material.on_grid(grid)?;
        let cfl = grid.cfl_number(nodal.nu_max);
        if cfl > 1.0 + 1e-12 {
            return Err(SolverError::Cfl(cfl));
        }
        let source = config.source.resolve(grid, &nodal)?;
        let eta = config.eta.on_nodes(&grid.omega);
        let no = grid.n_omega();
        let nc = grid.n_channels();

        let mut zeta_t = vec![0.0; no];
        let mut eta_s = vec![0.0; no];
        let mut zeta_s = vec![0.0; no];
        let mut sub = None;
        if let Coupling::Coupled { substrate_length, nu_ratio, tau_ratio, c } = config.coupling {
            if !(substrate_length > 0.0 && nu_ratio > 0.0 && tau_ratio > 0.0) {
                return Err(SolverError::Config("substrate length and ratios must be positive".into()));
            }
            let substrate = material.substrate(nu_ratio, tau_ratio);
            let sub_nodal = substrate.on_grid(grid)?;
            for i in 0..no {
                let coeffs = reduce_interface_coefficients(eta[i], nodal.nu[i], sub_nodal.nu[i], c)
                    .map_err(|source| SolverError::Interface { omega: grid.omega[i], source })?;
                zeta_t[i] = coeffs.zeta_t;
                eta_s[i] = coeffs.eta_s;
                zeta_s[i] = coeffs.zeta_s;
            }
            let ns = ((substrate_length / grid.dx) - 1e-9).ceil().max(1.0) as usize + 1;
            sub = Some(Slab::new(grid, &sub_nodal, ns));
        }

        let slab = Slab::new(grid, &nodal, grid.n_nodes());
        let max_lambda = slab.lambda.iter().copied().fold(0.0, f64::max);
        if matches!(config.collision_mode, CollisionMode::Explicit | CollisionMode::LossOnly) && max_lambda > 1.0 {
            warn!("explicit relaxation fraction dt/(eps^2 tau) = {max_lambda:.3} exceeds 1; positivity is not guaranteed");
        }

        let mut ballistic = Vec::new();
        if config.decomposition == Decomposition::BallisticSplit {
            if !matches!(source.time, TimeProfile::Bump { .. } | TimeProfile::Off) {
                return Err(SolverError::Config("ballistic split requires a smooth or zero source".into()));
            }
            if config.initial != InitialState::Zero {
                return Err(SolverError::Config("ballistic split requires zero initial data".into()));
            }
            for &(ch, weight) in &source.channels {
                let (m, i) = grid.split_channel(ch);
                let speed = grid.mu[m] * nodal.nu[i] / eps;
                ballistic.push(BallisticChannel {
                    ch,
                    mirror: grid.mirror_channel(ch),
                    weight,
                    speed,
                    decay: 1.0 / (grid.mu[m] * nodal.nu[i] * nodal.tau[i] * eps),
                    eta: eta[i],
                });
            }
        }

        let n_f = grid.n_nodes() * nc;
        let n_g = sub.as_ref().map_or(0, |s| s.n_nodes * nc);
        let mut f = vec![0.0; n_f];
        let mut g = vec![0.0; n_g];
        if let InitialState::Equilibrium { amplitude } = config.initial {
            for row in f.chunks_mut(nc) {
                for (v, c) in row.iter_mut().zip(&slab.c_omega) {
                    *v = amplitude * c;
                }
            }
            for row in g.chunks_mut(nc) {
                for (v, c) in row.iter_mut().zip(&slab.c_omega) {
                    *v = amplitude * c;
                }
            }
        }
        let mut c_m = source.c_m(grid, &nodal);
        if let InitialState::Equilibrium { amplitude } = config.initial {
            c_m = c_m.max(amplitude);
        }

        let diagnostics = Diagnostics {
            steps: 0,
            cfl,
            max_relaxation_fraction: if config.collision_mode == CollisionMode::None { 0.0 } else { max_lambda },
            max_conservation_ratio: 0.0,
            min_value: f64::INFINITY,
            max_over_c_omega: f64::NEG_INFINITY,
            c_m,
        };

        let mut solver = Solver {
            config: config.clone(),
            grid: grid.clone(),
            nodal,
            eta,
            zeta_t,
            eta_s,
            zeta_s,
            source,
            ballistic,
            slab,
            sub,
            f_next: vec![0.0; n_f],
            g_next: vec![0.0; n_g],
            f0: if config.decomposition == Decomposition::BallisticSplit { vec![0.0; n_f] } else { Vec::new() },
            f,
            g,
            n: 0,
            diagnostics,
        };
        solver.refresh_ballistic(0.0);
        solver.apply_boundaries(0.0);
        if solver.config.probes.check_invariants {
            solver.record_bounds();
        }
        Ok(solver)
    }

    pub fn grid(&self) -> &PhaseSpaceGrid {
        &self.grid
    }

    pub fn material(&self) -> &NodalMaterial {
        &self.nodal
    }

    pub fn time(&self) -> f64 {
        self.n as f64 * self.grid.dt
    }

    pub fn steps_taken(&self) -> usize {
        self.n
    }

    pub fn diagnostics(&self) -> &Diagnostics {
        &self.diagnostics
    }

    /// The advanced field: `f`, or the remainder `f₁` in split mode.
    pub fn field(&self) -> &[f64] {
        &self.f
    }

    pub fn substrate_field(&self) -> Option<&[f64]> {
        self.sub.as_ref().map(|_| self.g.as_slice())
    }

    /// `f` including the ballistic part in split mode.
    pub fn total_field(&self) -> Vec<f64> {
        if self.f0.is_empty() {
            self.f.clone()
        } else {
            self.f.iter().zip(&self.f0).map(|(a, b)| a + b).collect()
        }
    }

    /// Overwrites the transducer field (e.g. to start from prescribed data).
    pub fn set_field(&mut self, values: &[f64]) -> Result<(), SolverError> {
        if values.len() != self.f.len() {
            return Err(SolverError::Config(format!(
                "field has {} values, expected {}",
                values.len(),
                self.f.len()
            )));
        }
        self.f.copy_from_slice(values);
        Ok(())
    }

    /// `ΔT(t, x = 0)` of the total field.
    pub fn surface_temperature(&self) -> f64 {
        let nc = self.grid.n_channels();
        let mut rho = self.slab.moment(&self.f[..nc]);
        if !self.f0.is_empty() {
            rho += self.slab.moment(&self.f0[..nc]);
        }
        rho / self.nodal.c_tau
    }

    /// Ballistic part of `ΔT(t, x = 0)`; zero outside split mode.
    pub fn surface_ballistic_temperature(&self) -> f64 {
        if self.f0.is_empty() {
            return 0.0;
        }
        self.slab.moment(&self.f0[..self.grid.n_channels()]) / self.nodal.c_tau
    }

    /// Fills the incoming channels at both ends of the transducer (and the
    /// substrate) for time `t`.
    pub fn apply_boundaries(&mut self, t: f64) {
        let nc = self.grid.n_channels();
        let hc = nc / 2;
        let no = self.grid.n_omega();
        let split = !self.f0.is_empty();

        // x = 0, μ > 0: prescribed inflow (carried by f₀ in split mode)
        let left = &mut self.f[..nc];
        for v in &mut left[hc..] {
            *v = 0.0;
        }
        if !split {
            let tv = self.source.time.eval(t);
            if tv != 0.0 {
                for &(ch, w) in &self.source.channels {
                    left[ch] = tv * w;
                }
            }
        }

        // x = x_max, μ < 0: reflection plus transmission from the substrate
        let nx = self.grid.nx;
        let right = &mut self.f[nx * nc..(nx + 1) * nc];
        for ch in 0..hc {
            let i = ch % no;
            right[ch] = self.eta[i] * right[self.grid.mirror_channel(ch)];
        }
        if let Some(sub) = &self.sub {
            let g_left = &mut self.g[..nc];
            for ch in 0..hc {
                let i = ch % no;
                right[ch] += self.zeta_t[i] * g_left[ch];
            }
            // substrate side of the interface, μ > 0
            for ch in hc..nc {
                let i = ch % no;
                let incoming_f = right[ch] + if split { self.f0[nx * nc + ch] } else { 0.0 };
                g_left[ch] = self.eta_s[i] * g_left[self.grid.mirror_channel(ch)] + self.zeta_s[i] * incoming_f;
            }
            // far end of the substrate, μ < 0: nothing enters
            let ns = sub.n_nodes;
            for v in &mut self.g[(ns - 1) * nc..(ns - 1) * nc + hc] {
                *v = 0.0;
            }
        }
    }

    fn refresh_ballistic(&mut self, t: f64) {
        if self.f0.is_empty() {
            return;
        }
        let nc = self.grid.n_channels();
        let x_max = self.grid.x_max;
        let time = self.source.time;
        for j in 0..self.grid.n_nodes() {
            let x = self.grid.x_node(j);
            let row = &mut self.f0[j * nc..(j + 1) * nc];
            for b in &self.ballistic {
                row[b.ch] = b.weight * time.eval(t - x / b.speed) * (-x * b.decay).exp();
                let back = 2.0 * x_max - x;
                row[b.mirror] = if b.eta == 0.0 {
                    0.0
                } else {
                    b.eta * b.weight * time.eval(t - back / b.speed) * (-back * b.decay).exp()
                };
            }
        }
    }

    /// One transport + relaxation step followed by the boundary refresh at
    /// the new time level.
    pub fn step(&mut self) -> Result<(), SolverError> {
        let nc = self.grid.n_channels();
        let hc = nc / 2;
        let t_new = (self.n + 1) as f64 * self.grid.dt;
        let mode = self.config.collision_mode;
        let check = self.config.probes.check_invariants;

        if !self.f0.is_empty() {
            self.refresh_ballistic(t_new);
        }

        let stats = advance_slab(&self.slab, &self.f, &mut self.f_next, &self.f0, nc, hc, mode, check);
        std::mem::swap(&mut self.f, &mut self.f_next);
        let mut stats = stats;
        if let Some(sub) = &self.sub {
            let mut s = advance_slab(sub, &self.g, &mut self.g_next, &[], nc, hc, mode, check);
            s.bad = s.bad.map(|(_, j)| (1, j));
            std::mem::swap(&mut self.g, &mut self.g_next);
            stats = StepStats::merge(stats, s);
        }
        self.n += 1;
        self.apply_boundaries(t_new);

        if let Some((which, idx)) = stats.bad {
            return Err(self.non_finite(which, idx, t_new));
        }
        self.diagnostics.steps = self.n;
        if check {
            self.diagnostics.max_conservation_ratio = self.diagnostics.max_conservation_ratio.max(stats.conservation);
            self.record_bounds();
        }
        Ok(())
    }

    fn record_bounds(&mut self) {
        let nc = self.grid.n_channels();
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        let split = !self.f0.is_empty();
        for (k, v) in self.f.iter().enumerate() {
            let v = if split { v + self.f0[k] } else { *v };
            lo = lo.min(v);
            hi = hi.max(v / self.slab.c_omega[k % nc]);
        }
        for (k, v) in self.g.iter().enumerate() {
            lo = lo.min(*v);
            hi = hi.max(v / self.slab.c_omega[k % nc]);
        }
        self.diagnostics.min_value = self.diagnostics.min_value.min(lo);
        self.diagnostics.max_over_c_omega = self.diagnostics.max_over_c_omega.max(hi);
    }

    fn non_finite(&self, which: usize, idx: usize, t: f64) -> SolverError {
        let nc = self.grid.n_channels();
        let (field, values) = if which == 0 { ("f", &self.f) } else { ("g", &self.g) };
        let node = idx;
        let row = &values[node * nc..(node + 1) * nc];
        let ch = row.iter().position(|v| !v.is_finite()).unwrap_or(0);
        let (m, i) = self.grid.split_channel(ch);
        let x = if which == 0 { self.grid.x_node(node) } else { self.grid.x_max + node as f64 * self.grid.dx };
        SolverError::NonFinite {
            field,
            node,
            x,
            mu: self.grid.mu[m],
            omega: self.grid.omega[i],
            t,
            value: row[ch],
        }
    }
}

/// Fused upwind + relaxation over every node of one slab. Reads `old`,
/// writes `new`; `f0` (possibly empty) is the ballistic part added to the
/// collision moment.
#[allow(clippy::too_many_arguments)]
fn advance_slab(
    slab: &Slab,
    old: &[f64],
    new: &mut [f64],
    f0: &[f64],
    nc: usize,
    hc: usize,
    mode: CollisionMode,
    check: bool,
) -> StepStats {
    let last = slab.n_nodes - 1;
    let node = |j: usize, out: &mut [f64]| -> StepStats {
        let cur = &old[j * nc..(j + 1) * nc];
        // μ < 0 reads from the right neighbour
        if j < last {
            let next = &old[(j + 1) * nc..(j + 2) * nc];
            for k in 0..hc {
                out[k] = cur[k] - slab.courant[k] * (cur[k] - next[k]);
            }
        } else {
            out[..hc].copy_from_slice(&cur[..hc]);
        }
        // μ > 0 reads from the left neighbour
        if j > 0 {
            let prev = &old[(j - 1) * nc..j * nc];
            for k in hc..nc {
                out[k] = cur[k] - slab.courant[k] * (cur[k] - prev[k]);
            }
        } else {
            out[hc..].copy_from_slice(&cur[hc..]);
        }

        let mut stats = StepStats::identity();
        if mode == CollisionMode::LossOnly {
            for k in 0..nc {
                out[k] -= slab.lambda[k] * out[k];
            }
        } else if mode != CollisionMode::None {
            let f0_row = if f0.is_empty() { None } else { Some(&f0[j * nc..(j + 1) * nc]) };
            let rho = slab.moment(out) + f0_row.map_or(0.0, |r| slab.moment(r));
            if check {
                let mut residual = 0.0;
                let mut norm = 0.0;
                for k in 0..nc {
                    let total = out[k] + f0_row.map_or(0.0, |r| r[k]);
                    residual += slab.moment_weight[k] * (slab.closure[k] * rho - total);
                    norm += slab.weights[k] * total.abs();
                }
                stats.conservation = if norm > 0.0 { residual.abs() / norm } else { residual.abs() };
            }
            // in split mode the ballistic part only enters through rho
            match mode {
                CollisionMode::Explicit => {
                    for k in 0..nc {
                        out[k] += slab.lambda[k] * (slab.closure[k] * rho - out[k]);
                    }
                }
                CollisionMode::SemiImplicit => {
                    for k in 0..nc {
                        let l = slab.lambda[k];
                        out[k] = (out[k] + l * slab.closure[k] * rho) / (1.0 + l);
                    }
                }
                CollisionMode::None | CollisionMode::LossOnly => unreachable!(),
            }
        }
        if !out.iter().all(|v| v.is_finite()) {
            stats.bad = Some((0, j));
        }
        stats
    };

    if old.len() >= PARALLEL_THRESHOLD {
        new.par_chunks_mut(nc)
            .enumerate()
            .map(|(j, out)| node(j, out))
            .reduce(StepStats::identity, StepStats::merge)
    } else {
        new.chunks_mut(nc)
            .enumerate()
            .map(|(j, out)| node(j, out))
            .fold(StepStats::identity(), StepStats::merge)
    }
}

/// Marches `config` from `t = 0` to `t_stop`, recording `ΔT(t, x = 0)` at every
/// step.
pub fn solve(config: &SolverConfig, grid: &PhaseSpaceGrid, material: &MaterialModel) -> Result<SolveOutput, SolverError> {
    let mut solver = Solver::new(config, grid, material)?;
    let steps = grid.steps_to(config.t_stop);
    let split = config.decomposition == Decomposition::BallisticSplit;
    let mut times = Vec::with_capacity(steps + 1);
    let mut delta_t = Vec::with_capacity(steps + 1);
    let mut ballistic = if split { Some(Vec::with_capacity(steps + 1)) } else { None };

    let mut wanted: Vec<(usize, usize)> = config
        .probes
        .snapshot_times
        .iter()
        .enumerate()
        .map(|(k, &t)| (((t / grid.dt).round().max(0.0) as usize).min(steps), k))
        .collect();
    wanted.sort_unstable();
    let mut snapshots: Vec<Option<Snapshot>> = vec![None; wanted.len()];
    let mut next_snap = 0;

    debug!(
        "solve: eps = {}, nx = {}, channels = {}, dt = {:.3e}, steps = {}",
        config.epsilon,
        grid.nx,
        grid.n_channels(),
        grid.dt,
        steps
    );
    for n in 0..=steps {
        if n > 0 {
            solver.step()?;
        }
        times.push(solver.time());
        delta_t.push(solver.surface_temperature());
        if let Some(b) = ballistic.as_mut() {
            b.push(solver.surface_ballistic_temperature());
        }
        while next_snap < wanted.len() && wanted[next_snap].0 == n {
            snapshots[wanted[next_snap].1] = Some(Snapshot {
                t: solver.time(),
                f: solver.total_field(),
                g: solver.substrate_field().map(<[f64]>::to_vec),
            });
            next_snap += 1;
        }
    }
    Ok(SolveOutput {
        times,
        delta_t,
        ballistic_delta_t: ballistic,
        snapshots: snapshots.into_iter().flatten().collect(),
        diagnostics: *solver.diagnostics(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{DtRule, GridSpec};
    use approx::assert_relative_eq;

    fn desk(eps: f64) -> PhaseSpaceGrid {
        GridSpec::desk().build(eps, 2.0).unwrap()
    }

    #[test]
    fn zero_source_gives_zero_trace() {
        let grid = desk(1.0);
        let cfg = SolverConfig::new(1.0, ReflectionModel::tanh(1.5, 1.0), SourceSpec::Zero, 0.5);
        let out = solve(&cfg, &grid, &MaterialModel::default()).unwrap();
        assert_eq!(out.times.len(), grid.steps_to(0.5) + 1);
        assert!(out.delta_t.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn equilibrium_is_stationary() {
        let grid = desk(0.5);
        let material = MaterialModel {
            c_omega: crate::material::Law::PowerLaw { coeff: 1.0, exponent: 2.0 },
            ..MaterialModel::default()
        };
        for mode in [CollisionMode::Explicit, CollisionMode::SemiImplicit] {
            let mut cfg = SolverConfig::new(
                0.5,
                ReflectionModel::Constant { value: 1.0 },
                SourceSpec::Equilibrium { amplitude: 0.7 },
                0.2,
            );
            cfg.initial = InitialState::Equilibrium { amplitude: 0.7 };
            cfg.collision_mode = mode;
            let mut solver = Solver::new(&cfg, &grid, &material).unwrap();
            let start = solver.field().to_vec();
            for _ in 0..50 {
                solver.step().unwrap();
            }
            for (a, b) in solver.field().iter().zip(&start) {
                assert_relative_eq!(a, b, epsilon = 1e-13, max_relative = 1e-13);
            }
            assert_relative_eq!(solver.surface_temperature(), 0.7, epsilon = 1e-13);
        }
    }

    #[test]
    fn absorbing_wall_has_no_incoming_values() {
        let grid = desk(1.0);
        let mut cfg = SolverConfig::new(1.0, ReflectionModel::Constant { value: 0.0 }, SourceSpec::smooth(0.8, 0.9, 0.2), 1.0);
        cfg.collision_mode = CollisionMode::None;
        let mut solver = Solver::new(&cfg, &grid, &MaterialModel::default()).unwrap();
        for _ in 0..150 {
            solver.step().unwrap();
        }
        let nc = grid.n_channels();
        let right = &solver.field()[grid.nx * nc..];
        assert!(right[..nc / 2].iter().all(|&v| v == 0.0));
        assert!(right[nc / 2..].iter().any(|&v| v > 0.0));
    }

    #[test]
    fn specular_wall_copies_mirror_channel() {
        let grid = desk(1.0);
        let mut cfg = SolverConfig::new(1.0, ReflectionModel::Constant { value: 1.0 }, SourceSpec::smooth(0.8, 0.9, 0.2), 1.0);
        cfg.collision_mode = CollisionMode::None;
        let mut solver = Solver::new(&cfg, &grid, &MaterialModel::default()).unwrap();
        for _ in 0..150 {
            solver.step().unwrap();
        }
        let nc = grid.n_channels();
        let right = &solver.field()[grid.nx * nc..];
        for ch in 0..nc / 2 {
            assert_eq!(right[ch], right[grid.mirror_channel(ch)]);
        }
    }

    #[test]
    fn collisionless_pulse_moves_one_node_per_unit_courant() {
        let spec = GridSpec { dt_rule: DtRule::Cfl { number: 1.0 }, ..GridSpec::desk() };
        let grid = spec.build(1.0, 2.0).unwrap();
        let mut cfg = SolverConfig::new(1.0, ReflectionModel::Constant { value: 0.0 }, SourceSpec::Zero, 1.0);
        cfg.collision_mode = CollisionMode::None;
        let mut solver = Solver::new(&cfg, &grid, &MaterialModel::default()).unwrap();
        let nc = grid.n_channels();
        // fastest channel has Courant number exactly one
        let m = grid.n_mu() - 1;
        let i = grid.n_omega() - 1;
        let ch = grid.channel(m, i);
        let mut init = vec![0.0; solver.field().len()];
        init[3 * nc + ch] = 2.5;
        solver.set_field(&init).unwrap();
        for _ in 0..4 {
            solver.step().unwrap();
        }
        assert_relative_eq!(solver.field()[7 * nc + ch], 2.5, epsilon = 1e-14);
        let total: f64 = solver.field().iter().sum();
        assert_relative_eq!(total, 2.5, epsilon = 1e-14);
    }

    #[test]
    fn one_node_collision_step_conserves_energy() {
        let grid = desk(0.5);
        let mut cfg = SolverConfig::new(0.5, ReflectionModel::Constant { value: 1.0 }, SourceSpec::Zero, 1.0);
        cfg.probes.check_invariants = true;
        let mut solver = Solver::new(&cfg, &grid, &MaterialModel::default()).unwrap();
        let nc = grid.n_channels();
        let mut init = vec![0.0; solver.field().len()];
        for k in 0..nc {
            init[20 * nc + k] = 1.0 + (k as f64 * 0.37).sin().abs();
        }
        solver.set_field(&init).unwrap();
        solver.step().unwrap();
        assert!(solver.diagnostics().max_conservation_ratio < 1e-13);
        assert!(solver.diagnostics().min_value >= 0.0);
    }

    #[test]
    fn coupled_mode_with_full_reflection_decouples() {
        let grid = desk(1.0);
        let src = SourceSpec::smooth(0.8, 0.9, 0.2);
        let mut reflective = SolverConfig::new(1.0, ReflectionModel::Constant { value: 1.0 }, src, 1.5);
        reflective.collision_mode = CollisionMode::Explicit;
        let mut coupled = reflective.clone();
        coupled.coupling = Coupling::coupled_default();
        let a = solve(&reflective, &grid, &MaterialModel::default()).unwrap();
        let b = solve(&coupled, &grid, &MaterialModel::default()).unwrap();
        assert_eq!(a.delta_t, b.delta_t);
    }

    #[test]
    fn coupled_mode_rejects_low_reflection() {
        let grid = desk(1.0);
        let mut cfg = SolverConfig::new(1.0, ReflectionModel::Constant { value: 0.3 }, SourceSpec::Zero, 1.0);
        cfg.coupling = Coupling::coupled_default();
        match Solver::new(&cfg, &grid, &MaterialModel::default()) {
            Err(SolverError::Interface { source: InterfaceError::OutOfRange { name, .. }, .. }) => {
                assert_eq!(name, "zeta_s")
            }
            Err(e) => panic!("unexpected error {e}"),
            Ok(_) => panic!("accepted eta = 0.3 in coupled mode"),
        }
    }

    #[test]
    fn rejects_oversized_fixed_step() {
        let spec = GridSpec { dt_rule: DtRule::Fixed { dt: 0.1 }, ..GridSpec::desk() };
        let grid = spec.build(1.0, 2.0).unwrap();
        let cfg = SolverConfig::new(1.0, ReflectionModel::default(), SourceSpec::Zero, 1.0);
        assert!(matches!(Solver::new(&cfg, &grid, &MaterialModel::default()), Err(SolverError::Cfl(_))));
    }

    #[test]
    fn reports_non_finite_values() {
        let grid = desk(1.0);
        let cfg = SolverConfig::new(1.0, ReflectionModel::default(), SourceSpec::Zero, 1.0);
        let mut solver = Solver::new(&cfg, &grid, &MaterialModel::default()).unwrap();
        let nc = grid.n_channels();
        let mut init = vec![0.0; solver.field().len()];
        init[10 * nc + nc - 1] = f64::NAN;
        solver.set_field(&init).unwrap();
        match solver.step() {
            Err(SolverError::NonFinite { node, .. }) => assert!((9..=11).contains(&node)),
            other => panic!("expected a non-finite error, got {other:?}"),
        }
    }
}
