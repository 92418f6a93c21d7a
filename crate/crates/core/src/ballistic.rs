//! Closed-form collisionless part `f₀` of the solution, the split of a
//! measurement into its ballistic and scattering contributions, and the
//! small-window limit of the ballistic measurement.
//!
//! Along a characteristic the collisionless equation only damps:
//! an inflow ray reaches `x` after `εx/(μν)` with weight `e^{−x/(μντε)}`,
//! and a reflected ray has travelled `2x_max − x` and picked up `η(ω)`.

use serde::Serialize;

use crate::grid::PhaseSpaceGrid;
use crate::material::MaterialModel;
use crate::measurement::{measurement_functional, MeasurementError, TestFunction};
use crate::quadrature::{bump, centered_bump, GaussLegendre};
use crate::reflection::ReflectionModel;
use crate::source::ResolvedSource;

#[derive(Debug, Clone)]
pub struct BallisticSpec {
    pub eta: ReflectionModel,
    pub source: ResolvedSource,
    pub epsilon: f64,
    pub material: MaterialModel,
    pub x_max: f64,
}

/// `f₀(t, x, μ, ω)`; zero before the characteristic arrives and for `μ = 0`.
pub fn ballistic_value(t: f64, x: f64, mu: f64, omega: f64, spec: &BallisticSpec) -> f64 {
    if mu == 0.0 {
        return 0.0;
    }
    let m = &spec.material;
    let nu = m.nu(omega);
    let tau = m.tau(omega);
    let eps = spec.epsilon;
    let (path, speed, gain) = if mu > 0.0 {
        (x, mu, 1.0)
    } else {
        let eta = spec.eta.eval(omega);
        if eta == 0.0 {
            return 0.0;
        }
        (2.0 * spec.x_max - x, -mu, eta)
    };
    let delay = eps * path / (speed * nu);
    if t < delay {
        return 0.0;
    }
    let phi = spec.source.phi(t - delay, speed, omega, m.c_omega(omega));
    if phi == 0.0 {
        return 0.0;
    }
    gain * phi * (-path / (speed * nu * tau * eps)).exp()
}

/// `ΔT` of `f₀` at `x = 0` on the grid quadrature, at the given times.
/// Only the source channels and their mirrors can be nonzero.
pub fn ballistic_surface_trace(times: &[f64], grid: &PhaseSpaceGrid, spec: &BallisticSpec, c_tau: f64) -> Vec<f64> {
    let weights = grid.channel_weights();
    let mut terms = Vec::with_capacity(2 * spec.source.channels.len());
    for &(ch, _) in &spec.source.channels {
        for c in [ch, grid.mirror_channel(ch)] {
            let (m, i) = grid.split_channel(c);
            let w = weights[c] / spec.material.tau(grid.omega[i]);
            terms.push((grid.mu[m], grid.omega[i], w));
        }
    }
    times
        .iter()
        .map(|&t| {
            terms
                .iter()
                .map(|&(mu, omega, w)| w * ballistic_value(t, 0.0, mu, omega, spec))
                .sum::<f64>()
                / c_tau
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeasurementSplit {
    pub m: f64,
    pub m0: f64,
    pub m1: f64,
}

/// Splits the measurement of a recorded surface trace into the ballistic
/// part `M₀` (closed form sampled on the run's grid and times) and the
/// remainder `M₁`, the functional of `ΔT − ΔT₀`.
pub fn measurement_split(
    times: &[f64],
    delta_t: &[f64],
    grid: &PhaseSpaceGrid,
    spec: &BallisticSpec,
    c_tau: f64,
    test: &TestFunction,
) -> Result<MeasurementSplit, MeasurementError> {
    if (grid.epsilon - spec.epsilon).abs() > 1e-12 * spec.epsilon || (grid.x_max - spec.x_max).abs() > 1e-12 {
        return Err(MeasurementError::Mismatch(format!(
            "run grid (eps = {}, x_max = {}) differs from the ballistic spec (eps = {}, x_max = {})",
            grid.epsilon, grid.x_max, spec.epsilon, spec.x_max
        )));
    }
    if times.len() != delta_t.len() {
        return Err(MeasurementError::Mismatch(format!(
            "trace has {} times but {} values",
            times.len(),
            delta_t.len()
        )));
    }
    if let Some((k, t)) = times
        .iter()
        .enumerate()
        .find(|(k, t)| (**t - *k as f64 * grid.dt).abs() > 1e-9 * grid.dt.max(**t))
    {
        return Err(MeasurementError::Mismatch(format!(
            "trace time {t} at step {k} is not on the grid's time levels (dt = {})",
            grid.dt
        )));
    }
    let m = measurement_functional(times, delta_t, test)?;
    let ballistic = ballistic_surface_trace(times, grid, spec, c_tau);
    let m0 = measurement_functional(times, &ballistic, test)?;
    let remainder: Vec<f64> = delta_t.iter().zip(&ballistic).map(|(a, b)| a - b).collect();
    let m1 = measurement_functional(times, &remainder, test)?;
    Ok(MeasurementSplit { m, m0, m1 })
}

/// Window widths of the smooth source and test function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Windows {
    pub theta_t: f64,
    pub theta_mu: f64,
    pub theta_omega: f64,
    /// Test-function half width.
    pub theta: f64,
}

impl Windows {
    pub fn uniform(theta: f64) -> Self {
        Self { theta_t: theta, theta_mu: theta, theta_omega: theta, theta }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct M0Asymptotic {
    pub c1: f64,
    pub c4: f64,
    /// `e^{−2 x_max/(μ₀ ν₀ τ₀ ε)}`.
    pub decay: f64,
    pub eta0: f64,
    /// `c₁ η(ω₀) · decay + c₄`.
    pub value: f64,
}

impl M0Asymptotic {
    /// Slope of the prediction as a function of `η(ω₀)`.
    pub fn sensitivity(&self) -> f64 {
        self.c1 * self.decay
    }
}

/// Small-window limit of `M₀` for the smooth source centred at `(μ₀, ω₀)`
/// and the test function centred at `t₁ = 2 x_max ε/(μ₀ ν(ω₀))`.
///
/// `c₁` keeps the first-order arrival-time shift of the reflected pulse,
/// `(2 x_max ε/(μ₀ν₀)²)·((θ_μ/θ) μ' ν₀ + (θ_ω/θ) ω' μ₀ ν'(ω₀))`, so equal
/// windows and windows with `θ_μ, θ_ω ≪ θ` are both covered; `c₄` is the
/// inflow term at the given windows (zero once they are disjoint).
#[allow(clippy::too_many_arguments)]
pub fn m0_asymptotic(
    eta: &ReflectionModel,
    omega0: f64,
    mu0: f64,
    epsilon: f64,
    material: &MaterialModel,
    windows: Windows,
    x_max: f64,
    c_tau: f64,
) -> M0Asymptotic {
    let rule = GaussLegendre::new(64);
    let unit = rule.mapped(0.0, 1.0);
    let nu0 = material.nu(omega0);
    let tau0 = material.tau(omega0);
    let dnu0 = material.nu_derivative(omega0);
    let k = 2.0 * x_max * epsilon / (mu0 * nu0).powi(2);
    let Windows { theta_t, theta_mu, theta_omega, theta } = windows;

    let mut c1 = 0.0;
    for &(mp, wm) in &unit {
        let pm = bump(mp);
        if pm == 0.0 {
            continue;
        }
        for &(op, wo) in &unit {
            let po = bump(op);
            if po == 0.0 {
                continue;
            }
            let shift = k * ((theta_mu / theta) * mp * nu0 + (theta_omega / theta) * op * mu0 * dnu0);
            let inner: f64 = unit
                .iter()
                .map(|&(tp, wt)| wt * bump(tp) * centered_bump((theta_t / theta) * tp - shift))
                .sum();
            c1 += wm * wo * pm * po * inner;
        }
    }
    c1 /= tau0 * c_tau;

    let t1 = 2.0 * x_max * epsilon / (mu0 * nu0);
    let omega_part: f64 = unit
        .iter()
        .map(|&(op, w)| w * bump(op) / material.tau(omega0 + theta_omega * op))
        .sum();
    let time_part: f64 = unit
        .iter()
        .map(|&(tp, w)| w * bump(tp) * centered_bump((theta_t * tp - t1) / theta))
        .sum();
    let c4 = omega_part * time_part / c_tau;

    let decay = (-2.0 * x_max / (mu0 * nu0 * tau0 * epsilon)).exp();
    let eta0 = eta.eval(omega0);
    M0Asymptotic { c1, c4, decay, eta0, value: c1 * eta0 * decay + c4 }
}
