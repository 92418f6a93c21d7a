//! Studies of the ballistic/scattering split: convergence of the discrete
//! ballistic transport to the closed form, the measurement split over
//! shrinking windows, and the `1/ε` exponent of the ballistic sensitivity.

use serde::{Deserialize, Serialize};

use crate::ballistic::{ballistic_value, m0_asymptotic, measurement_split, BallisticSpec, M0Asymptotic, Windows};
use crate::experiments::ExperimentError;
use crate::grid::{GridSpec, PhaseSpaceGrid};
use crate::material::MaterialModel;
use crate::measurement::{round_trip_time, TestFunction};
use crate::quadrature::GaussLegendre;
use crate::reflection::ReflectionModel;
use crate::solver::{solve, CollisionMode, Decomposition, SolverConfig, SolverError};
use crate::source::SourceSpec;
use crate::stats::{fit_line, LineFit};

fn grid_for(spec: &GridSpec, material: &MaterialModel, epsilon: f64) -> Result<PhaseSpaceGrid, ExperimentError> {
    Ok(spec.build(epsilon, material.nu_max_on(&spec.omega_nodes()))?)
}

fn c_tau_on(grid: &PhaseSpaceGrid, material: &MaterialModel) -> Result<f64, ExperimentError> {
    Ok(material.on_grid(grid).map_err(SolverError::from)?.c_tau)
}

/// Loss-only transport against the closed form under `Δx` halving.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConvergenceSetup {
    pub epsilon: f64,
    /// Coarsest grid; `dx_cap` is halved per level.
    pub grid: GridSpec,
    pub material: MaterialModel,
    pub eta: ReflectionModel,
    pub source: SourceSpec,
    /// Time of the compared snapshot.
    pub t_eval: f64,
    pub levels: usize,
}

impl Default for ConvergenceSetup {
    fn default() -> Self {
        Self {
            epsilon: 1.0,
            grid: GridSpec { x_max: 1.0, dx_cap: 0.01, dx_ratio: 1e-3, ..GridSpec::desk() },
            material: MaterialModel::default(),
            eta: ReflectionModel::default(),
            source: SourceSpec::Smooth { mu0: 0.5, omega0: 0.8, theta_t: 2.0, theta_mu: 0.5, theta_omega: 0.5, amplitude: 1.0 },
            t_eval: 2.0,
            levels: 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConvergenceLevel {
    pub dx: f64,
    pub dt: f64,
    /// Max-norm error over all nodes and channels at `t_eval`.
    pub error: f64,
    /// Max of the closed form over the same points.
    pub peak: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceResult {
    pub levels: Vec<ConvergenceLevel>,
    /// `log₂(e_k / e_{k+1})` between consecutive levels.
    pub orders: Vec<f64>,
}

pub fn ballistic_convergence(setup: &ConvergenceSetup) -> Result<ConvergenceResult, ExperimentError> {
    if setup.levels < 2 {
        return Err(ExperimentError::Config(format!("need at least two levels, got {}", setup.levels)));
    }
    let mut levels = Vec::with_capacity(setup.levels);
    for level in 0..setup.levels {
        let spec = GridSpec { dx_cap: setup.grid.dx_cap / f64::powi(2.0, level as i32), ..setup.grid.clone() };
        let grid = grid_for(&spec, &setup.material, setup.epsilon)?;
        let mut cfg = SolverConfig::new(setup.epsilon, setup.eta.clone(), setup.source.clone(), setup.t_eval);
        cfg.collision_mode = CollisionMode::LossOnly;
        cfg.probes.snapshot_times = vec![setup.t_eval];
        let out = solve(&cfg, &grid, &setup.material)?;
        let snap = out.snapshots.last().ok_or_else(|| ExperimentError::Config("no snapshot recorded".into()))?;

        let nodal = setup.material.on_grid(&grid).map_err(SolverError::from)?;
        let source = setup.source.resolve(&grid, &nodal).map_err(SolverError::from)?;
        let bspec = BallisticSpec {
            eta: setup.eta.clone(),
            source,
            epsilon: setup.epsilon,
            material: setup.material.clone(),
            x_max: grid.x_max,
        };
        let nc = grid.n_channels();
        let (mut error, mut peak) = (0.0f64, 0.0f64);
        for j in 0..grid.n_nodes() {
            let x = grid.x_node(j);
            for ch in 0..nc {
                let (m, i) = grid.split_channel(ch);
                let exact = ballistic_value(snap.t, x, grid.mu[m], grid.omega[i], &bspec);
                error = error.max((snap.f[j * nc + ch] - exact).abs());
                peak = peak.max(exact.abs());
            }
        }
        levels.push(ConvergenceLevel { dx: grid.dx, dt: grid.dt, error, peak });
    }
    let orders = levels.windows(2).map(|w| (w[0].error / w[1].error).log2()).collect();
    Ok(ConvergenceResult { levels, orders })
}

/// Ratios of the source windows to the test-function half width `θ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindowRatios {
    pub mu: f64,
    pub omega: f64,
    pub t: f64,
}

impl Default for WindowRatios {
    fn default() -> Self {
        Self { mu: 1.0, omega: 1.0, t: 1.0 }
    }
}

impl WindowRatios {
    pub fn windows(&self, theta: f64) -> Windows {
        Windows { theta_t: self.t * theta, theta_mu: self.mu * theta, theta_omega: self.omega * theta, theta }
    }

    pub fn source(&self, mu0: f64, omega0: f64, theta: f64) -> SourceSpec {
        let w = self.windows(theta);
        SourceSpec::Smooth {
            mu0,
            omega0,
            theta_t: w.theta_t,
            theta_mu: w.theta_mu,
            theta_omega: w.theta_omega,
            amplitude: 1.0,
        }
    }
}

/// Solver runs splitting `M` into `M₀ + M₁` for shrinking `θ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecompositionSetup {
    pub epsilon: f64,
    pub grid: GridSpec,
    pub material: MaterialModel,
    pub collision_mode: CollisionMode,
    pub decomposition: Decomposition,
    pub mu0: f64,
    pub omega0: f64,
    pub thetas: Vec<f64>,
    pub ratios: WindowRatios,
    pub etas: Vec<ReflectionModel>,
}

impl Default for DecompositionSetup {
    fn default() -> Self {
        Self {
            epsilon: 1.0,
            grid: GridSpec {
                n_mu: 400,
                omega_min: 1.0,
                d_omega: 0.005,
                n_omega: 201,
                dx_cap: 0.005,
                dx_ratio: 1e-3,
                ..GridSpec::desk()
            },
            material: MaterialModel::default(),
            collision_mode: CollisionMode::Explicit,
            decomposition: Decomposition::BallisticSplit,
            mu0: 0.935,
            omega0: 1.45,
            thetas: vec![0.1, 0.05, 0.025],
            ratios: WindowRatios::default(),
            etas: vec![ReflectionModel::tanh(1.5, 1.0), ReflectionModel::tanh(1.4, 0.9)],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SplitRow {
    pub epsilon: f64,
    pub theta: f64,
    pub eta_index: usize,
    pub m: f64,
    pub m0: f64,
    pub m1: f64,
    pub asymptotic: M0Asymptotic,
}

pub fn decomposition_study(setup: &DecompositionSetup) -> Result<Vec<SplitRow>, ExperimentError> {
    if setup.thetas.is_empty() || setup.etas.is_empty() {
        return Err(ExperimentError::Config("decomposition needs at least one theta and one eta".into()));
    }
    let grid = grid_for(&setup.grid, &setup.material, setup.epsilon)?;
    let c_tau = c_tau_on(&grid, &setup.material)?;
    let nu0 = setup.material.nu(setup.omega0);
    let t1 = round_trip_time(grid.x_max, setup.epsilon, setup.mu0, nu0);
    let mut rows = Vec::new();
    for &theta in &setup.thetas {
        let source = setup.ratios.source(setup.mu0, setup.omega0, theta);
        for (k, eta) in setup.etas.iter().enumerate() {
            let mut cfg = SolverConfig::new(setup.epsilon, eta.clone(), source.clone(), t1 + 1.5 * theta);
            cfg.collision_mode = setup.collision_mode;
            cfg.decomposition = setup.decomposition;
            let out = solve(&cfg, &grid, &setup.material)?;
            let nodal = setup.material.on_grid(&grid).map_err(SolverError::from)?;
            let bspec = BallisticSpec {
                eta: eta.clone(),
                source: source.resolve(&grid, &nodal).map_err(SolverError::from)?,
                epsilon: setup.epsilon,
                material: setup.material.clone(),
                x_max: grid.x_max,
            };
            let split = measurement_split(&out.times, &out.delta_t, &grid, &bspec, c_tau, &TestFunction::Smooth { t1, theta })?;
            let asymptotic = m0_asymptotic(
                eta,
                setup.omega0,
                setup.mu0,
                setup.epsilon,
                &setup.material,
                setup.ratios.windows(theta),
                grid.x_max,
                c_tau,
            );
            rows.push(SplitRow { epsilon: setup.epsilon, theta, eta_index: k, m: split.m, m0: split.m0, m1: split.m1, asymptotic });
        }
    }
    Ok(rows)
}

/// `M₀` by direct quadrature of the closed form at `x = 0` against the test
/// function, for a smooth source and test window of half width `θ` centred
/// at `t₁ = 2 x_max ε/(μ₀ν(ω₀))`. No solver or phase-space grid involved.
#[allow(clippy::too_many_arguments)]
pub fn m0_quadrature(
    eta: &ReflectionModel,
    mu0: f64,
    omega0: f64,
    windows: Windows,
    epsilon: f64,
    material: &MaterialModel,
    x_max: f64,
    c_tau: f64,
) -> Result<f64, ExperimentError> {
    let source = SourceSpec::Smooth {
        mu0,
        omega0,
        theta_t: windows.theta_t,
        theta_mu: windows.theta_mu,
        theta_omega: windows.theta_omega,
        amplitude: 1.0,
    }
    .continuum()
    .map_err(SolverError::from)?;
    let spec = BallisticSpec { eta: eta.clone(), source, epsilon, material: material.clone(), x_max };
    let t1 = round_trip_time(x_max, epsilon, mu0, material.nu(omega0));
    let test = TestFunction::Smooth { t1, theta: windows.theta };

    let rule = GaussLegendre::new(48);
    let mus = rule.mapped(mu0, mu0 + windows.theta_mu);
    let omegas = rule.mapped(omega0, omega0 + windows.theta_omega);
    let panels = 32;
    let h = 2.0 * windows.theta / panels as f64;
    let times: Vec<(f64, f64)> = (0..panels)
        .flat_map(|p| {
            let a = t1 - windows.theta + p as f64 * h;
            GaussLegendre::new(16).mapped(a, a + h)
        })
        .collect();

    let mut total = 0.0;
    for &(t, wt) in &times {
        let psi = test.eval(t);
        if psi == 0.0 {
            continue;
        }
        let mut inner = 0.0;
        for &(omega, wo) in &omegas {
            let inv_tau = 1.0 / material.tau(omega);
            for &(mu, wm) in &mus {
                let f = ballistic_value(t, 0.0, mu, omega, &spec) + ballistic_value(t, 0.0, -mu, omega, &spec);
                inner += wm * wo * inv_tau * f;
            }
        }
        total += wt * psi * inner;
    }
    Ok(total / c_tau)
}

/// `|M₀(η₁) − M₀(η₂)|` over `ε` and its fitted exponent in `1/ε`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExponentSetup {
    pub epsilons: Vec<f64>,
    pub x_max: f64,
    pub mu0: f64,
    pub omega0: f64,
    pub theta: f64,
    pub ratios: WindowRatios,
    pub material: MaterialModel,
    /// Grid whose `ω` nodes define `C_τ`.
    pub grid: GridSpec,
    pub eta1: ReflectionModel,
    pub eta2: ReflectionModel,
}

impl Default for ExponentSetup {
    fn default() -> Self {
        Self {
            epsilons: vec![0.5, 1.0, 2.0, 4.0],
            x_max: 1.0,
            mu0: 0.935,
            omega0: 1.45,
            theta: 0.05,
            ratios: WindowRatios { mu: 0.01, omega: 0.01, t: 1.0 },
            material: MaterialModel::default(),
            grid: GridSpec::paper(),
            eta1: ReflectionModel::tanh(1.5, 1.0),
            eta2: ReflectionModel::tanh(1.4, 0.9),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExponentRow {
    pub epsilon: f64,
    pub inv_epsilon: f64,
    pub m0_diff: f64,
    /// `|c₁ (η₁(ω₀) − η₂(ω₀))| · decay` from the small-window limit.
    pub predicted: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExponentResult {
    pub rows: Vec<ExponentRow>,
    pub fit: Option<LineFit>,
    /// `−2 x_max/(μ₀ ν(ω₀) τ(ω₀))`.
    pub expected_slope: f64,
}

pub fn exponent_study(setup: &ExponentSetup) -> Result<ExponentResult, ExperimentError> {
    let grid = grid_for(&setup.grid, &setup.material, 1.0)?;
    let c_tau = c_tau_on(&grid, &setup.material)?;
    let windows = setup.ratios.windows(setup.theta);
    let m = &setup.material;
    let mut rows = Vec::with_capacity(setup.epsilons.len());
    for &eps in &setup.epsilons {
        let m0 = |eta: &ReflectionModel| m0_quadrature(eta, setup.mu0, setup.omega0, windows, eps, m, setup.x_max, c_tau);
        let diff = (m0(&setup.eta1)? - m0(&setup.eta2)?).abs();
        let a1 = m0_asymptotic(&setup.eta1, setup.omega0, setup.mu0, eps, m, windows, setup.x_max, c_tau);
        let a2 = m0_asymptotic(&setup.eta2, setup.omega0, setup.mu0, eps, m, windows, setup.x_max, c_tau);
        rows.push(ExponentRow { epsilon: eps, inv_epsilon: 1.0 / eps, m0_diff: diff, predicted: (a1.value - a2.value).abs() });
    }
    let x: Vec<f64> = rows.iter().map(|r| r.inv_epsilon).collect();
    let y: Vec<f64> = rows.iter().map(|r| r.m0_diff.max(f64::MIN_POSITIVE).ln()).collect();
    let expected_slope = -2.0 * setup.x_max / (setup.mu0 * m.nu(setup.omega0) * m.tau(setup.omega0));
    Ok(ExponentResult { rows, fit: fit_line(&x, &y), expected_slope })
}
