//! Frequency-dependent material parameters, the linearized collision closure
//! constant `C_τ = ⟨C_ω/τ⟩` and the interface-coefficient algebra that
//! reduces `(η_t, ζ_t, η_s, ζ_s)` to the single unknown `η_t`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::PhaseSpaceGrid;

#[derive(Debug, Error, PartialEq)]
pub enum MaterialError {
    #[error("relaxation time must be bounded below: tau(omega = {omega}) = {value} violates tau >= {bound} > 0")]
    RelaxationTime { omega: f64, value: f64, bound: f64 },
    #[error("group velocity must satisfy {lower} <= nu <= {upper}: nu(omega = {omega}) = {value}")]
    GroupVelocity { omega: f64, value: f64, lower: f64, upper: f64 },
    #[error("linearization weight must be positive: C_omega(omega = {omega}) = {value}")]
    LinearizationWeight { omega: f64, value: f64 },
    #[error("collision closure constant C_tau = {0} is not positive; material table is invalid")]
    ClosureConstant(f64),
    #[error("invalid material law: {0}")]
    Law(String),
}

/// One frequency-dependent coefficient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Law {
    Constant { value: f64 },
    /// `coeff · ω^exponent`.
    PowerLaw { coeff: f64, exponent: f64 },
    /// `(ω, value)` pairs, sorted by `ω`; evaluated piecewise-constantly from
    /// the nearest table abscissa at or below `ω` (the first value below the table).
    Table { points: Vec<[f64; 2]> },
}

impl Law {
    pub fn eval(&self, omega: f64) -> f64 {
        match self {
            Law::Constant { value } => *value,
            Law::PowerLaw { coeff, exponent } => coeff * omega.powf(*exponent),
            Law::Table { points } => {
                let Some(first) = points.first() else {
                    return f64::NAN;
                };
                let mut v = first[1];
                for p in points {
                    // small slack so grid nodes computed by accumulation land on their entry
                    if p[0] <= omega + 1e-12 {
                        v = p[1];
                    } else {
                        break;
                    }
                }
                v
            }
        }
    }

    /// `d/dω`; piecewise-constant tables have zero derivative almost everywhere.
    pub fn derivative(&self, omega: f64) -> f64 {
        match self {
            Law::Constant { .. } | Law::Table { .. } => 0.0,
            Law::PowerLaw { coeff, exponent } => {
                if *exponent == 0.0 {
                    0.0
                } else {
                    coeff * exponent * omega.powf(exponent - 1.0)
                }
            }
        }
    }

    fn check(&self, name: &str) -> Result<(), MaterialError> {
        if let Law::Table { points } = self {
            if points.is_empty() {
                return Err(MaterialError::Law(format!("{name}: empty table")));
            }
            if points.windows(2).any(|w| w[1][0] <= w[0][0]) {
                return Err(MaterialError::Law(format!("{name}: table abscissae must be strictly increasing")));
            }
        }
        Ok(())
    }

    fn scaled(&self, factor: f64) -> Law {
        match self {
            Law::Constant { value } => Law::Constant { value: value * factor },
            Law::PowerLaw { coeff, exponent } => Law::PowerLaw { coeff: coeff * factor, exponent: *exponent },
            Law::Table { points } => Law::Table { points: points.iter().map(|p| [p[0], p[1] * factor]).collect() },
        }
    }
}

/// Optional validation bounds. Absent bounds still require `τ > 0`, `ν > 0`
/// and finite values.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Bounds {
    pub tau_min: Option<f64>,
    pub nu_min: Option<f64>,
    pub nu_max: Option<f64>,
}

/// Group velocity, relaxation time and linearization weight of one material.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaterialModel {
    pub nu: Law,
    pub tau: Law,
    pub c_omega: Law,
    pub bounds: Bounds,
}

impl Default for MaterialModel {
    /// `ν(ω) = ω`, `τ(ω) = 1/ω`, `C_ω ≡ 1`.
    fn default() -> Self {
        Self {
            nu: Law::PowerLaw { coeff: 1.0, exponent: 1.0 },
            tau: Law::PowerLaw { coeff: 1.0, exponent: -1.0 },
            c_omega: Law::Constant { value: 1.0 },
            bounds: Bounds::default(),
        }
    }
}

impl MaterialModel {
    pub fn nu(&self, omega: f64) -> f64 {
        self.nu.eval(omega)
    }

    pub fn tau(&self, omega: f64) -> f64 {
        self.tau.eval(omega)
    }

    pub fn c_omega(&self, omega: f64) -> f64 {
        self.c_omega.eval(omega)
    }

    pub fn nu_derivative(&self, omega: f64) -> f64 {
        self.nu.derivative(omega)
    }

    /// Substrate companion with `ν_s = nu_ratio · ν_t`, `τ_s = tau_ratio · τ_t`.
    pub fn substrate(&self, nu_ratio: f64, tau_ratio: f64) -> MaterialModel {
        let bounds = Bounds {
            tau_min: self.bounds.tau_min.map(|t| t * tau_ratio),
            nu_min: self.bounds.nu_min.map(|v| v * nu_ratio),
            nu_max: self.bounds.nu_max.map(|v| v * nu_ratio),
        };
        MaterialModel {
            nu: self.nu.scaled(nu_ratio),
            tau: self.tau.scaled(tau_ratio),
            c_omega: self.c_omega.clone(),
            bounds,
        }
    }

    /// Largest group velocity over the grid's frequency nodes.
    pub fn nu_max_on(&self, omega_nodes: &[f64]) -> f64 {
        omega_nodes.iter().map(|&w| self.nu(w)).fold(0.0, f64::max)
    }

    /// Samples and validates the coefficients on the frequency nodes.
    pub fn on_grid(&self, grid: &PhaseSpaceGrid) -> Result<NodalMaterial, MaterialError> {
        self.nu.check("nu")?;
        self.tau.check("tau")?;
        self.c_omega.check("c_omega")?;
        let tau_bound = self.bounds.tau_min.unwrap_or(0.0);
        let nu_lo = self.bounds.nu_min.unwrap_or(0.0);
        let nu_hi = self.bounds.nu_max.unwrap_or(f64::INFINITY);
        let n = grid.n_omega();
        let mut nu = Vec::with_capacity(n);
        let mut tau = Vec::with_capacity(n);
        let mut c_omega = Vec::with_capacity(n);
        for &w in &grid.omega {
            let t = self.tau(w);
            if !(t.is_finite() && t > 0.0 && t >= tau_bound) {
                return Err(MaterialError::RelaxationTime { omega: w, value: t, bound: tau_bound });
            }
            let v = self.nu(w);
            if !(v.is_finite() && v > 0.0 && v >= nu_lo && v <= nu_hi) {
                return Err(MaterialError::GroupVelocity { omega: w, value: v, lower: nu_lo, upper: nu_hi });
            }
            let c = self.c_omega(w);
            if !(c.is_finite() && c > 0.0) {
                return Err(MaterialError::LinearizationWeight { omega: w, value: c });
            }
            nu.push(v);
            tau.push(t);
            c_omega.push(c);
        }
        let inv_tau: Vec<f64> = tau.iter().map(|t| 1.0 / t).collect();
        let mut nodal = NodalMaterial {
            nu_min: nu.iter().copied().fold(f64::INFINITY, f64::min),
            nu_max: nu.iter().copied().fold(0.0, f64::max),
            tau_min: tau.iter().copied().fold(f64::INFINITY, f64::min),
            nu,
            tau,
            inv_tau,
            c_omega,
            c_tau: 0.0,
        };
        nodal.c_tau = compute_c_tau(&nodal, grid)?;
        Ok(nodal)
    }
}

/// Material coefficients sampled on a grid's frequency nodes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NodalMaterial {
    pub nu: Vec<f64>,
    pub tau: Vec<f64>,
    pub inv_tau: Vec<f64>,
    pub c_omega: Vec<f64>,
    pub nu_min: f64,
    pub nu_max: f64,
    pub tau_min: f64,
    pub c_tau: f64,
}

/// `C_τ = Σ_μ Σ_ω w_μ w_ω C_ω(ω)/τ(ω)`, the same quadrature the collision
/// operator uses.
pub fn compute_c_tau(material: &NodalMaterial, grid: &PhaseSpaceGrid) -> Result<f64, MaterialError> {
    let mu_total: f64 = grid.mu_weights.iter().sum();
    let c_tau = mu_total
        * grid
            .omega_weights
            .iter()
            .zip(material.c_omega.iter().zip(&material.tau))
            .map(|(w, (c, t))| w * c / t)
            .sum::<f64>();
    if c_tau > 0.0 && c_tau.is_finite() {
        Ok(c_tau)
    } else {
        Err(MaterialError::ClosureConstant(c_tau))
    }
}

/// `ΔT = ⟨f/τ⟩ / C_τ` for one spatial node row.
pub fn temperature_deviation(row: &[f64], material: &NodalMaterial, grid: &PhaseSpaceGrid, c_tau: f64) -> f64 {
    grid.moment(row, |_, i| material.inv_tau[i]) / c_tau
}

#[derive(Debug, Error, PartialEq)]
pub enum InterfaceError {
    #[error("invalid interface input: {0}")]
    Input(String),
    #[error("derived coefficient {name} = {value} lies outside [0, 1]; (eta_t, c, nu_t/nu_s) is physically inconsistent")]
    OutOfRange { name: &'static str, value: f64 },
}

/// Reflection/transmission coefficients on both sides of the interface.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InterfaceCoefficients {
    pub eta_t: f64,
    pub zeta_t: f64,
    pub eta_s: f64,
    pub zeta_s: f64,
    pub c: f64,
}

/// Closes the interface conditions from `η_t` using the zero-net-flux
/// relations and the detailed-balance condition `η_t + c ζ_t = 1`.
pub fn reduce_interface_coefficients(
    eta_t: f64,
    nu_t: f64,
    nu_s: f64,
    c: f64,
) -> Result<InterfaceCoefficients, InterfaceError> {
    if !(0.0..=1.0).contains(&eta_t) {
        return Err(InterfaceError::Input(format!("eta_t = {eta_t} must lie in [0, 1]")));
    }
    if !(c > 0.0 && c.is_finite()) {
        return Err(InterfaceError::Input(format!("c = {c} must be positive")));
    }
    if !(nu_t > 0.0 && nu_t.is_finite() && nu_s > 0.0 && nu_s.is_finite()) {
        return Err(InterfaceError::Input(format!("velocities must be positive, got nu_t = {nu_t}, nu_s = {nu_s}")));
    }
    let ratio = nu_t / nu_s;
    let zeta_t = (1.0 - eta_t) / c;
    let zeta_s = ratio * (1.0 - eta_t);
    let eta_s = 1.0 - ratio * zeta_t;
    for (name, value) in [("zeta_t", zeta_t), ("zeta_s", zeta_s), ("eta_s", eta_s)] {
        if !(0.0..=1.0).contains(&value) {
            return Err(InterfaceError::OutOfRange { name, value });
        }
    }
    Ok(InterfaceCoefficients { eta_t, zeta_t, eta_s, zeta_s, c })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{GridSpec, PhaseSpaceGrid};
    use approx::assert_relative_eq;

    fn grid_with(n_omega: usize, omega_min: f64, d_omega: f64) -> PhaseSpaceGrid {
        let spec = GridSpec { n_omega, omega_min, d_omega, n_mu: 20, ..GridSpec::desk() };
        spec.build(1.0, 2.0).unwrap()
    }

    #[test]
    fn c_tau_arithmetic_series() {
        // C_ω ≡ 1, τ = 1/ω on 40 nodes 0.05..2.00: 2 · 0.05 · Σω = 2 · 0.05 · 41 = 4.1
        let grid = grid_with(40, 0.05, 0.05);
        let nodal = MaterialModel::default().on_grid(&grid).unwrap();
        let sum: f64 = grid.omega.iter().sum();
        assert_relative_eq!(sum, 41.0, epsilon = 1e-12);
        assert_relative_eq!(nodal.c_tau, 4.1, epsilon = 1e-12);
    }

    #[test]
    fn c_tau_constant_and_single_node() {
        let grid = grid_with(7, 0.3, 0.1);
        let m = MaterialModel {
            tau: Law::Constant { value: 1.0 },
            ..MaterialModel::default()
        };
        let w: f64 = grid.omega_weights.iter().sum();
        assert_relative_eq!(m.on_grid(&grid).unwrap().c_tau, 2.0 * w, epsilon = 1e-12);

        let grid = grid_with(1, 1.0, 1.0);
        let m = MaterialModel {
            tau: Law::Constant { value: 2.0 },
            c_omega: Law::Constant { value: 3.0 },
            ..MaterialModel::default()
        };
        assert_relative_eq!(m.on_grid(&grid).unwrap().c_tau, 3.0, epsilon = 1e-14);
    }

    #[test]
    fn c_tau_scaling_laws() {
        let grid = grid_with(10, 0.2, 0.2);
        let base = MaterialModel::default().on_grid(&grid).unwrap().c_tau;
        let doubled_c = MaterialModel { c_omega: Law::Constant { value: 2.0 }, ..MaterialModel::default() };
        assert_relative_eq!(doubled_c.on_grid(&grid).unwrap().c_tau, 2.0 * base, epsilon = 1e-12);
        let slow = MaterialModel { tau: Law::PowerLaw { coeff: 3.0, exponent: -1.0 }, ..MaterialModel::default() };
        assert_relative_eq!(slow.on_grid(&grid).unwrap().c_tau, base / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn temperature_reads_back_equilibrium_amplitude() {
        let grid = grid_with(10, 0.2, 0.2);
        let m = MaterialModel { c_omega: Law::PowerLaw { coeff: 0.5, exponent: 2.0 }, ..MaterialModel::default() };
        let nodal = m.on_grid(&grid).unwrap();
        for alpha in [0.0, 1.0, -2.5, 1e6] {
            let row: Vec<f64> = (0..grid.n_channels())
                .map(|ch| alpha * nodal.c_omega[grid.split_channel(ch).1])
                .collect();
            assert_relative_eq!(
                temperature_deviation(&row, &nodal, &grid, nodal.c_tau),
                alpha,
                epsilon = 1e-12 * alpha.abs().max(1.0)
            );
        }
    }

    #[test]
    fn temperature_single_node() {
        let grid = grid_with(10, 0.2, 0.2);
        let nodal = MaterialModel::default().on_grid(&grid).unwrap();
        let mut row = vec![0.0; grid.n_channels()];
        let ch = grid.channel(3, 4);
        row[ch] = 7.0;
        let expected = grid.mu_weights[3] * grid.omega_weights[4] * 7.0 / (nodal.tau[4] * nodal.c_tau);
        assert_relative_eq!(temperature_deviation(&row, &nodal, &grid, nodal.c_tau), expected, epsilon = 1e-15);
    }

    #[test]
    fn rejects_zero_relaxation_time() {
        let grid = grid_with(10, 0.2, 0.2);
        let m = MaterialModel {
            tau: Law::Table { points: vec![[0.0, 1.0], [0.5, 0.0], [1.0, 2.0]] },
            ..MaterialModel::default()
        };
        match m.on_grid(&grid).unwrap_err() {
            MaterialError::RelaxationTime { omega, value, .. } => {
                assert_relative_eq!(omega, 0.6, epsilon = 1e-12);
                assert_eq!(value, 0.0);
            }
            e => panic!("unexpected {e:?}"),
        }
        let bounded = MaterialModel {
            bounds: Bounds { tau_min: Some(0.6), ..Bounds::default() },
            ..MaterialModel::default()
        };
        assert!(matches!(bounded.on_grid(&grid), Err(MaterialError::RelaxationTime { .. })));
        let fast = MaterialModel {
            bounds: Bounds { nu_max: Some(1.5), ..Bounds::default() },
            ..MaterialModel::default()
        };
        assert!(matches!(fast.on_grid(&grid), Err(MaterialError::GroupVelocity { .. })));
    }

    #[test]
    fn table_is_piecewise_constant() {
        let law = Law::Table { points: vec![[0.5, 1.0], [1.0, 2.0]] };
        assert_eq!(law.eval(0.1), 1.0);
        assert_eq!(law.eval(0.99), 1.0);
        assert_eq!(law.eval(1.0), 2.0);
        assert_eq!(law.eval(5.0), 2.0);
    }

    #[test]
    fn substrate_scaling() {
        let s = MaterialModel::default().substrate(0.5, 4.0);
        assert_relative_eq!(s.nu(1.3), 0.65);
        assert_relative_eq!(s.tau(2.0), 2.0);
    }

    #[test]
    fn interface_examples() {
        let c = reduce_interface_coefficients(1.0, 1.0, 0.5, 1.0).unwrap();
        assert_eq!((c.zeta_t, c.zeta_s, c.eta_s), (0.0, 0.0, 1.0));
        let c = reduce_interface_coefficients(0.5, 1.0, 0.5, 1.0).unwrap();
        assert_relative_eq!(c.zeta_t, 0.5);
        assert_relative_eq!(c.zeta_s, 1.0);
        assert_relative_eq!(c.eta_s, 0.0);
        let c = reduce_interface_coefficients(0.0, 1.0, 1.0, 1.0).unwrap();
        assert_eq!((c.zeta_t, c.zeta_s, c.eta_s), (1.0, 1.0, 0.0));
    }

    #[test]
    fn interface_rejects_inconsistent_triples() {
        assert_eq!(
            reduce_interface_coefficients(0.4, 1.0, 0.5, 1.0).unwrap_err(),
            InterfaceError::OutOfRange { name: "zeta_s", value: 1.2 }
        );
        assert!(matches!(
            reduce_interface_coefficients(0.9, 1.0, 1.0, 0.05),
            Err(InterfaceError::OutOfRange { name: "zeta_t", .. })
        ));
        assert!(matches!(reduce_interface_coefficients(1.5, 1.0, 1.0, 1.0), Err(InterfaceError::Input(_))));
        assert!(matches!(reduce_interface_coefficients(0.5, 1.0, 1.0, 0.0), Err(InterfaceError::Input(_))));
    }
}
