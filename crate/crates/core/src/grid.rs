//! Phase-space discretization in `(x, μ, ω, t)`.
//!
//! Space uses `nx` uniform intervals on `[0, x_max]` with the unknowns stored
//! at the `nx + 1` nodes, so both walls carry values. Direction cosines sit
//! at cell centers `±(k − 1/2)Δμ` (never 0) with uniform weights, which makes
//! specular reflection an exact permutation of ordinates. Frequencies use the
//! rectangle rule `ω_i = ω_min + (i − 1)Δω` with weight `Δω`.
//!
//! Field values are laid out node-major: one row of `n_mu · n_omega` channels
//! per spatial node, channel index `m · n_omega + i` with `μ` ascending, so
//! the first half of each row holds the incoming-from-the-right (`μ < 0`)
//! channels.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GridError {
    #[error("epsilon must be positive and finite, got {0}")]
    Epsilon(f64),
    #[error("invalid grid parameter `{name}`: {reason}")]
    Parameter { name: &'static str, reason: String },
}

/// Time-step selection rule, a function of `(ε, Δx, ν_max)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DtRule {
    /// `Δt = min{ε Δx / 2, ε²}`.
    Paper,
    /// `Δt = number · ε Δx / (μ_max ν_max)`.
    Cfl { number: f64 },
    /// Explicit override; checked against the CFL limit by the solver.
    Fixed { dt: f64 },
}

impl DtRule {
    pub fn dt(&self, epsilon: f64, dx: f64, mu_max: f64, nu_max: f64) -> f64 {
        match *self {
            DtRule::Paper => (epsilon * dx / 2.0).min(epsilon * epsilon),
            DtRule::Cfl { number } => number * epsilon * dx / (mu_max * nu_max),
            DtRule::Fixed { dt } => dt,
        }
    }
}

/// Grid recipe. `dx = min{dx_cap, ε / dx_ratio}`, rounded down so that an
/// integer number of intervals tiles `[0, x_max]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub x_max: f64,
    pub dx_cap: f64,
    pub dx_ratio: f64,
    pub n_mu: usize,
    pub omega_min: f64,
    pub d_omega: f64,
    pub n_omega: usize,
    pub dt_rule: DtRule,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self::desk()
    }
}

impl GridSpec {
    /// Full resolution: Δω = 0.05 on [0.05, 2], Δμ = 0.01, x ∈ [0, 0.5],
    /// Δx = min{0.004, ε/125}.
    pub fn paper() -> Self {
        Self {
            x_max: 0.5,
            dx_cap: 0.004,
            dx_ratio: 125.0,
            n_mu: 200,
            omega_min: 0.05,
            d_omega: 0.05,
            n_omega: 40,
            dt_rule: DtRule::Paper,
        }
    }

    /// Reduced resolution for laptop-scale runs: Δω = 0.2, Δμ = 0.05,
    /// Δx = min{0.01, ε/25}.
    pub fn desk() -> Self {
        Self {
            x_max: 0.5,
            dx_cap: 0.01,
            dx_ratio: 25.0,
            n_mu: 40,
            omega_min: 0.2,
            d_omega: 0.2,
            n_omega: 10,
            dt_rule: DtRule::Paper,
        }
    }

    /// `ω_i = ω_min + (i − 1)Δω`.
    pub fn omega_nodes(&self) -> Vec<f64> {
        (0..self.n_omega).map(|i| self.omega_min + i as f64 * self.d_omega).collect()
    }

    pub fn build(&self, epsilon: f64, nu_max: f64) -> Result<PhaseSpaceGrid, GridError> {
        PhaseSpaceGrid::new(self, epsilon, nu_max)
    }
}

/// Builds the full-resolution grid for a given `ε`.
pub fn build_paper_grid(epsilon: f64) -> Result<PhaseSpaceGrid, GridError> {
    GridSpec::paper().build(epsilon, 2.0)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhaseSpaceGrid {
    pub spec: GridSpec,
    pub epsilon: f64,
    pub x_max: f64,
    /// Number of intervals; there are `nx + 1` nodes.
    pub nx: usize,
    pub dx: f64,
    pub dt: f64,
    pub mu: Vec<f64>,
    pub mu_weights: Vec<f64>,
    pub omega: Vec<f64>,
    pub omega_weights: Vec<f64>,
    #[serde(skip)]
    mirror: Vec<usize>,
    #[serde(skip)]
    channel_weights: Vec<f64>,
}

impl PhaseSpaceGrid {
    pub fn new(spec: &GridSpec, epsilon: f64, nu_max: f64) -> Result<Self, GridError> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(GridError::Epsilon(epsilon));
        }
        let positive = |name: &'static str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(GridError::Parameter { name, reason: format!("must be positive, got {v}") })
            }
        };
        positive("x_max", spec.x_max)?;
        positive("dx_cap", spec.dx_cap)?;
        positive("dx_ratio", spec.dx_ratio)?;
        positive("omega_min", spec.omega_min)?;
        positive("d_omega", spec.d_omega)?;
        positive("nu_max", nu_max)?;
        if spec.n_mu < 2 || spec.n_mu % 2 != 0 {
            return Err(GridError::Parameter {
                name: "n_mu",
                reason: format!("must be a positive even number, got {}", spec.n_mu),
            });
        }
        if spec.n_omega == 0 {
            return Err(GridError::Parameter { name: "n_omega", reason: "must be at least 1".into() });
        }

        let dx_target = spec.dx_cap.min(epsilon / spec.dx_ratio);
        // tolerate round-off in x_max / dx before rounding up
        let nx = ((spec.x_max / dx_target) - 1e-9).ceil().max(1.0) as usize;
        let dx = spec.x_max / nx as f64;

        let half = spec.n_mu / 2;
        let d_mu = 2.0 / spec.n_mu as f64;
        let mut mu = Vec::with_capacity(spec.n_mu);
        for k in (0..half).rev() {
            mu.push(-(k as f64 + 0.5) * d_mu);
        }
        for k in 0..half {
            mu.push((k as f64 + 0.5) * d_mu);
        }
        let mu_weights = vec![d_mu; spec.n_mu];
        let mirror = (0..spec.n_mu).map(|m| spec.n_mu - 1 - m).collect();

        let omega = spec.omega_nodes();
        let omega_weights = vec![spec.d_omega; spec.n_omega];

        let mu_max = mu.iter().fold(0.0f64, |a, &m| a.max(m.abs()));
        let dt = spec.dt_rule.dt(epsilon, dx, mu_max, nu_max);
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(GridError::Parameter { name: "dt_rule", reason: format!("produced dt = {dt}") });
        }

        let mut grid = Self {
            spec: spec.clone(),
            epsilon,
            x_max: spec.x_max,
            nx,
            dx,
            dt,
            mu,
            mu_weights,
            omega,
            omega_weights,
            mirror,
            channel_weights: Vec::new(),
        };
        grid.channel_weights = (0..grid.n_channels())
            .map(|ch| {
                let (m, i) = grid.split_channel(ch);
                grid.mu_weights[m] * grid.omega_weights[i]
            })
            .collect();
        Ok(grid)
    }

    pub fn n_mu(&self) -> usize {
        self.mu.len()
    }

    pub fn n_omega(&self) -> usize {
        self.omega.len()
    }

    pub fn n_nodes(&self) -> usize {
        self.nx + 1
    }

    pub fn n_channels(&self) -> usize {
        self.mu.len() * self.omega.len()
    }

    /// Number of `μ < 0` ordinates (equal to the number of `μ > 0` ones).
    pub fn n_half(&self) -> usize {
        self.mu.len() / 2
    }

    pub fn channel(&self, mu_index: usize, omega_index: usize) -> usize {
        mu_index * self.omega.len() + omega_index
    }

    pub fn split_channel(&self, ch: usize) -> (usize, usize) {
        (ch / self.omega.len(), ch % self.omega.len())
    }

    /// Index of the ordinate `−μ`.
    pub fn mirror_mu(&self, mu_index: usize) -> usize {
        self.mirror[mu_index]
    }

    pub fn mirror_channel(&self, ch: usize) -> usize {
        let (m, i) = self.split_channel(ch);
        self.channel(self.mirror[m], i)
    }

    /// Product quadrature weight `w_μ w_ω` of every channel.
    pub fn channel_weights(&self) -> &[f64] {
        &self.channel_weights
    }

    pub fn x_node(&self, j: usize) -> f64 {
        if j == self.nx {
            self.x_max
        } else {
            j as f64 * self.dx
        }
    }

    pub fn mu_max(&self) -> f64 {
        self.mu.iter().fold(0.0f64, |a, &m| a.max(m.abs()))
    }

    /// `Δt · max|μ ν| / (ε Δx)`; the explicit upwind step is stable for values ≤ 1.
    pub fn cfl_number(&self, nu_max: f64) -> f64 {
        self.dt * self.mu_max() * nu_max / (self.epsilon * self.dx)
    }

    /// Nearest positive ordinate to `mu0`; ties go to the lower ordinate.
    pub fn snap_mu(&self, mu0: f64) -> usize {
        let half = self.n_half();
        let mut best = half;
        let mut best_d = f64::INFINITY;
        for m in half..self.n_mu() {
            let d = (self.mu[m] - mu0).abs();
            // strict comparison keeps the lower ordinate on ties
            if d < best_d - 1e-12 {
                best = m;
                best_d = d;
            }
        }
        best
    }

    /// Nearest frequency node to `omega`; ties go to the lower node.
    pub fn snap_omega(&self, omega: f64) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, &w) in self.omega.iter().enumerate() {
            let d = (w - omega).abs();
            if d < best_d - 1e-12 {
                best = i;
                best_d = d;
            }
        }
        best
    }

    /// Discrete moment `Σ w_μ w_ω weight(μ, ω) value(μ, ω)` over one node row.
    pub fn moment(&self, row: &[f64], weight: impl Fn(usize, usize) -> f64) -> f64 {
        debug_assert_eq!(row.len(), self.n_channels());
        row.iter()
            .enumerate()
            .map(|(ch, &v)| {
                let (m, i) = self.split_channel(ch);
                self.channel_weights[ch] * weight(m, i) * v
            })
            .sum()
    }

    /// Number of time steps needed to reach `t_stop` (the last step may overshoot
    /// by less than one `Δt`).
    pub fn steps_to(&self, t_stop: f64) -> usize {
        ((t_stop / self.dt) - 1e-9).ceil().max(0.0) as usize
    }
}
