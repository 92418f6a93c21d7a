//! Inflow data `φ(t, μ, ω)` prescribed at `x = 0` for `μ > 0`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::PhaseSpaceGrid;
use crate::material::NodalMaterial;
use crate::quadrature::bump;

#[derive(Debug, Error, PartialEq)]
pub enum SourceError {
    #[error("source parameter `{name}` is invalid: {reason}")]
    Parameter { name: &'static str, reason: String },
}

fn default_amplitude() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SourceSpec {
    Zero,
    /// `amplitude/(θ_μ θ_ω θ_t) · φ_t(t/θ_t) φ_μ((μ−μ₀)/θ_μ) φ_ω((ω−ω₀)/θ_ω)`
    /// with unit-mass bump profiles on `[0, 1]`.
    Smooth {
        mu0: f64,
        omega0: f64,
        theta_t: f64,
        theta_mu: f64,
        theta_omega: f64,
        #[serde(default = "default_amplitude")]
        amplitude: f64,
    },
    /// `amplitude/(Δμ Δω Δt)` on the single node nearest `(μ₀, ω)`, at `t = 0` only.
    GridDelta {
        mu0: f64,
        omega: f64,
        #[serde(default = "default_amplitude")]
        amplitude: f64,
    },
    /// Constant equilibrium inflow `amplitude · C_ω` on every `μ > 0` channel.
    Equilibrium { amplitude: f64 },
}

impl Default for SourceSpec {
    fn default() -> Self {
        SourceSpec::GridDelta { mu0: 0.935, omega: 1.4, amplitude: 1.0 }
    }
}

impl SourceSpec {
    pub fn smooth(mu0: f64, omega0: f64, theta: f64) -> Self {
        SourceSpec::Smooth { mu0, omega0, theta_t: theta, theta_mu: theta, theta_omega: theta, amplitude: 1.0 }
    }

    pub fn grid_delta(mu0: f64, omega: f64) -> Self {
        SourceSpec::GridDelta { mu0, omega, amplitude: 1.0 }
    }

    pub fn with_amplitude(&self, scale: f64) -> Self {
        let mut s = self.clone();
        match &mut s {
            SourceSpec::Zero => {}
            SourceSpec::Smooth { amplitude, .. }
            | SourceSpec::GridDelta { amplitude, .. }
            | SourceSpec::Equilibrium { amplitude } => *amplitude *= scale,
        }
        s
    }

    pub fn validate(&self) -> Result<(), SourceError> {
        let positive = |name: &'static str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(SourceError::Parameter { name, reason: format!("must be positive, got {v}") })
            }
        };
        let nonneg = |name: &'static str, v: f64| {
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(SourceError::Parameter { name, reason: format!("must be nonnegative, got {v}") })
            }
        };
        let direction = |v: f64| {
            if v > 0.0 && v <= 1.0 {
                Ok(())
            } else {
                Err(SourceError::Parameter { name: "mu0", reason: format!("must lie in (0, 1], got {v}") })
            }
        };
        match *self {
            SourceSpec::Zero => Ok(()),
            SourceSpec::Smooth { mu0, omega0, theta_t, theta_mu, theta_omega, amplitude } => {
                direction(mu0)?;
                positive("omega0", omega0)?;
                positive("theta_t", theta_t)?;
                positive("theta_mu", theta_mu)?;
                positive("theta_omega", theta_omega)?;
                nonneg("amplitude", amplitude)
            }
            SourceSpec::GridDelta { mu0, omega, amplitude } => {
                direction(mu0)?;
                positive("omega", omega)?;
                nonneg("amplitude", amplitude)
            }
            SourceSpec::Equilibrium { amplitude } => nonneg("amplitude", amplitude),
        }
    }

    /// Binds the source to a grid: snaps delta sources and tabulates the
    /// `(μ, ω)` factor on every `μ > 0` channel it touches.
    /// A smooth source without grid channels, for pointwise evaluation
    /// through [`ResolvedSource::phi`].
    pub fn continuum(&self) -> Result<ResolvedSource, SourceError> {
        self.validate()?;
        match *self {
            SourceSpec::Smooth { mu0, omega0, theta_t, .. } => Ok(ResolvedSource {
                spec: self.clone(),
                channels: Vec::new(),
                time: TimeProfile::Bump { theta_t },
                nominal: Some((mu0, omega0)),
                cell: None,
            }),
            _ => Err(SourceError::Parameter { name: "kind", reason: "only smooth sources have a continuum form".into() }),
        }
    }

    pub fn resolve(&self, grid: &PhaseSpaceGrid, material: &NodalMaterial) -> Result<ResolvedSource, SourceError> {
        self.validate()?;
        let half = grid.n_half();
        let mut channels = Vec::new();
        let (time, nominal) = match *self {
            SourceSpec::Zero => (TimeProfile::Off, None),
            SourceSpec::Smooth { mu0, omega0, theta_t, theta_mu, theta_omega, amplitude } => {
                let scale = amplitude / (theta_mu * theta_omega);
                for m in half..grid.n_mu() {
                    let pm = bump((grid.mu[m] - mu0) / theta_mu);
                    if pm == 0.0 {
                        continue;
                    }
                    for i in 0..grid.n_omega() {
                        let po = bump((grid.omega[i] - omega0) / theta_omega);
                        if po > 0.0 {
                            channels.push((grid.channel(m, i), scale * pm * po));
                        }
                    }
                }
                if channels.is_empty() {
                    return Err(SourceError::Parameter {
                        name: "theta",
                        reason: format!(
                            "window [{mu0}, {}] x [{omega0}, {}] contains no interior (mu, omega) node",
                            mu0 + theta_mu,
                            omega0 + theta_omega
                        ),
                    });
                }
                (TimeProfile::Bump { theta_t }, Some((mu0, omega0)))
            }
            SourceSpec::GridDelta { mu0, omega, amplitude } => {
                let m = grid.snap_mu(mu0);
                let i = grid.snap_omega(omega);
                let d_mu = grid.mu_weights[m];
                let d_omega = grid.omega_weights[i];
                channels.push((grid.channel(m, i), amplitude / (d_mu * d_omega)));
                (TimeProfile::FirstStep { dt: grid.dt }, Some((grid.mu[m], grid.omega[i])))
            }
            SourceSpec::Equilibrium { amplitude } => {
                for m in half..grid.n_mu() {
                    for i in 0..grid.n_omega() {
                        channels.push((grid.channel(m, i), amplitude * material.c_omega[i]));
                    }
                }
                (TimeProfile::Constant, None)
            }
        };
        let cell = match *self {
            SourceSpec::GridDelta { .. } => {
                let (m, i) = grid.split_channel(channels[0].0);
                Some((grid.mu_weights[m], grid.omega_weights[i]))
            }
            _ => None,
        };
        Ok(ResolvedSource { spec: self.clone(), channels, time, nominal, cell })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TimeProfile {
    Off,
    /// `φ_t(t/θ_t)/θ_t`.
    Bump { theta_t: f64 },
    /// `1/Δt` on `(−Δt/2, Δt/2]`, i.e. at the `t = 0` step only.
    FirstStep { dt: f64 },
    Constant,
}

impl TimeProfile {
    pub fn eval(&self, t: f64) -> f64 {
        match *self {
            TimeProfile::Off => 0.0,
            TimeProfile::Bump { theta_t } => bump(t / theta_t) / theta_t,
            TimeProfile::FirstStep { dt } => {
                if t > -0.5 * dt && t <= 0.5 * dt {
                    1.0 / dt
                } else {
                    0.0
                }
            }
            TimeProfile::Constant => 1.0,
        }
    }

    /// Last time at which the profile can be nonzero.
    pub fn peak(&self) -> f64 {
        match *self {
            TimeProfile::Off => 0.0,
            TimeProfile::Bump { theta_t } => bump(0.5) / theta_t,
            TimeProfile::FirstStep { dt } => 1.0 / dt,
            TimeProfile::Constant => 1.0,
        }
    }

    pub fn end(&self) -> f64 {
        match *self {
            TimeProfile::Off => 0.0,
            TimeProfile::Bump { theta_t } => theta_t,
            TimeProfile::FirstStep { dt } => 0.5 * dt,
            TimeProfile::Constant => f64::INFINITY,
        }
    }
}

/// A source bound to a grid: `φ(t, μ_m, ω_i) = time(t) · weight(ch)` on the
/// listed `μ > 0` channels and zero elsewhere.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedSource {
    pub spec: SourceSpec,
    /// `(channel, μ-ω factor)` pairs, ascending by channel.
    pub channels: Vec<(usize, f64)>,
    pub time: TimeProfile,
    /// Effective `(μ₀, ω₀)`: snapped node for delta sources, nominal values otherwise.
    pub nominal: Option<(f64, f64)>,
    /// `(Δμ, Δω)` of the cell a delta source occupies.
    pub cell: Option<(f64, f64)>,
}

impl ResolvedSource {
    pub fn is_zero(&self) -> bool {
        self.time == TimeProfile::Off || self.channels.iter().all(|&(_, w)| w == 0.0)
    }

    /// Grid value at channel `ch` and time `t`.
    pub fn value(&self, ch: usize, t: f64) -> f64 {
        let tv = self.time.eval(t);
        if tv == 0.0 {
            return 0.0;
        }
        match self.channels.binary_search_by_key(&ch, |&(c, _)| c) {
            Ok(k) => tv * self.channels[k].1,
            Err(_) => 0.0,
        }
    }

    /// `φ(t, μ, ω)` at an arbitrary point. A delta source is read as the
    /// cell-sized box of the same mass; `c_omega` is `C_ω(ω)`, used by the
    /// equilibrium inflow only.
    pub fn phi(&self, t: f64, mu: f64, omega: f64, c_omega: f64) -> f64 {
        if mu <= 0.0 {
            return 0.0;
        }
        match self.spec {
            SourceSpec::Zero => 0.0,
            SourceSpec::Smooth { mu0, omega0, theta_mu, theta_omega, amplitude, .. } => {
                let pm = bump((mu - mu0) / theta_mu);
                let po = bump((omega - omega0) / theta_omega);
                if pm == 0.0 || po == 0.0 {
                    return 0.0;
                }
                amplitude / (theta_mu * theta_omega) * pm * po * self.time.eval(t)
            }
            SourceSpec::GridDelta { amplitude, .. } => {
                let (Some((mu_s, omega_s)), Some((d_mu, d_omega))) = (self.nominal, self.cell) else {
                    return 0.0;
                };
                let inside = |v: f64, c: f64, h: f64| (v - c).abs() <= 0.5 * h;
                if inside(mu, mu_s, d_mu) && inside(omega, omega_s, d_omega) {
                    amplitude / (d_mu * d_omega) * self.time.eval(t)
                } else {
                    0.0
                }
            }
            SourceSpec::Equilibrium { amplitude } => {
                if t >= 0.0 {
                    amplitude * c_omega
                } else {
                    0.0
                }
            }
        }
    }

    /// `max_{t,μ,ω} φ / C_ω` over the grid, the constant `c_m` of the
    /// maximum principle.
    pub fn c_m(&self, grid: &PhaseSpaceGrid, material: &NodalMaterial) -> f64 {
        let peak_t = self.time.peak();
        self.channels
            .iter()
            .map(|&(ch, w)| peak_t * w / material.c_omega[grid.split_channel(ch).1])
            .fold(0.0, f64::max)
    }

    /// `max_{t,μ,ω} |φ|` over the grid channels.
    pub fn peak(&self) -> f64 {
        let peak_t = self.time.peak();
        self.channels.iter().map(|&(_, w)| peak_t * w.abs()).fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;
    use crate::material::MaterialModel;
    use approx::assert_relative_eq;

    fn setup() -> (PhaseSpaceGrid, NodalMaterial) {
        let grid = GridSpec::desk().build(1.0, 2.0).unwrap();
        let nodal = MaterialModel::default().on_grid(&grid).unwrap();
        (grid, nodal)
    }

    #[test]
    fn grid_delta_has_unit_discrete_mass() {
        let (grid, nodal) = setup();
        let src = SourceSpec::grid_delta(0.935, 1.45).resolve(&grid, &nodal).unwrap();
        assert_eq!(src.channels.len(), 1);
        let (ch, _) = src.channels[0];
        let (m, i) = grid.split_channel(ch);
        assert_relative_eq!(grid.mu[m], 0.925, epsilon = 1e-12);
        assert_relative_eq!(grid.omega[i], 1.4, epsilon = 1e-12);
        let mass = src.value(ch, 0.0) * grid.mu_weights[m] * grid.omega_weights[i] * grid.dt;
        assert_relative_eq!(mass, 1.0, epsilon = 1e-12);
        assert_eq!(src.value(ch, grid.dt), 0.0);
        assert_eq!(src.value(ch + 1, 0.0), 0.0);
    }

    #[test]
    fn smooth_source_support() {
        let (grid, nodal) = setup();
        let src = SourceSpec::smooth(0.5, 1.0, 0.3).resolve(&grid, &nodal).unwrap();
        assert!(!src.channels.is_empty());
        for &(ch, w) in &src.channels {
            let (m, i) = grid.split_channel(ch);
            assert!(grid.mu[m] > 0.5 && grid.mu[m] < 0.8);
            assert!(grid.omega[i] > 1.0 && grid.omega[i] < 1.3);
            assert!(w > 0.0);
        }
        assert_eq!(src.value(src.channels[0].0, -0.1), 0.0);
        assert_eq!(src.value(src.channels[0].0, 0.31), 0.0);
        assert!(src.value(src.channels[0].0, 0.15) > 0.0);
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(SourceSpec::grid_delta(0.0, 1.0).validate().is_err());
        assert!(SourceSpec::grid_delta(1.2, 1.0).validate().is_err());
        assert!(SourceSpec::smooth(0.5, 1.0, 0.0).validate().is_err());
    }

    #[test]
    fn equilibrium_inflow_scales_with_c_omega() {
        let (grid, nodal) = setup();
        let src = SourceSpec::Equilibrium { amplitude: 2.0 }.resolve(&grid, &nodal).unwrap();
        assert_eq!(src.channels.len(), grid.n_half() * grid.n_omega());
        assert_relative_eq!(src.c_m(&grid, &nodal), 2.0);
        assert_eq!(src.value(0, 5.0), 0.0);
    }
}
