//! Surface measurements: test functions centred at the ballistic round-trip
//! time, the measurement functional `M = ∫ ψ ΔT dt` and the mean-square loss.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::quadrature::{centered_bump, trapezoid};

#[derive(Debug, Error, PartialEq)]
pub enum MeasurementError {
    #[error("test window [t1 - theta, t1 + theta] with t1 = {t1}, theta = {theta} escapes the recorded trace [0, {t_stop}]")]
    Window { t1: f64, theta: f64, t_stop: f64 },
    #[error("data shape mismatch: expected {expected:?}, got {got:?}")]
    Shape { expected: (usize, usize), got: (usize, usize) },
    #[error("empty trace")]
    EmptyTrace,
    #[error("{0}")]
    Mismatch(String),
}

/// `t₁ = 2 x_max ε / (μ₀ ν(ω₀))`, the arrival time at `x = 0` of the pulse
/// reflected once at `x = x_max`.
pub fn round_trip_time(x_max: f64, epsilon: f64, mu0: f64, nu0: f64) -> f64 {
    2.0 * x_max * epsilon / (mu0 * nu0)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TestFunctionSpec {
    /// Point evaluation at the time step nearest `t₁`.
    #[default]
    GridDelta,
    /// `ψ(t) = ψ_t((t − t₁)/θ)` with the unit-mass bump `ψ_t` on `(−1, 1)`.
    Smooth { theta: f64 },
}

impl TestFunctionSpec {
    pub fn at(&self, t1: f64) -> TestFunction {
        match *self {
            TestFunctionSpec::GridDelta => TestFunction::GridDelta { t1 },
            TestFunctionSpec::Smooth { theta } => TestFunction::Smooth { t1, theta },
        }
    }

    pub fn half_width(&self) -> f64 {
        match *self {
            TestFunctionSpec::GridDelta => 0.0,
            TestFunctionSpec::Smooth { theta } => theta,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum TestFunction {
    GridDelta { t1: f64 },
    Smooth { t1: f64, theta: f64 },
    /// `ψ ≡ 0`.
    Zero,
}

impl TestFunction {
    pub fn t1(&self) -> f64 {
        match *self {
            TestFunction::GridDelta { t1 } | TestFunction::Smooth { t1, .. } => t1,
            TestFunction::Zero => 0.0,
        }
    }

    pub fn eval(&self, t: f64) -> f64 {
        match *self {
            TestFunction::Smooth { t1, theta } => centered_bump((t - t1) / theta),
            _ => 0.0,
        }
    }
}

/// `∫ ψ(t) ΔT(t) dt` by the trapezoid rule on the trace samples; a grid-delta
/// test function reads the sample nearest `t₁`.
pub fn measurement_functional(times: &[f64], values: &[f64], test: &TestFunction) -> Result<f64, MeasurementError> {
    if times.is_empty() || times.len() != values.len() {
        return Err(MeasurementError::EmptyTrace);
    }
    let t0 = times[0];
    let t_stop = *times.last().unwrap();
    let slack = 1e-9 * t_stop.abs().max(1.0);
    match *test {
        TestFunction::Zero => Ok(0.0),
        TestFunction::GridDelta { t1 } => {
            if t1 < t0 - slack || t1 > t_stop + slack {
                return Err(MeasurementError::Window { t1, theta: 0.0, t_stop });
            }
            let k = times.partition_point(|&t| t < t1);
            let k = if k == 0 {
                0
            } else if k == times.len() || (t1 - times[k - 1]) <= (times[k] - t1) {
                // ties go to the earlier sample
                k - 1
            } else {
                k
            };
            Ok(values[k])
        }
        TestFunction::Smooth { t1, theta } => {
            if t1 - theta < t0 - slack || t1 + theta > t_stop + slack {
                return Err(MeasurementError::Window { t1, theta, t_stop });
            }
            // integrate only over the samples touching the window
            let lo = times.partition_point(|&t| t < t1 - theta).saturating_sub(1);
            let hi = (times.partition_point(|&t| t <= t1 + theta) + 1).min(times.len());
            let weighted: Vec<f64> = (lo..hi).map(|k| test.eval(times[k]) * values[k]).collect();
            Ok(trapezoid(&times[lo..hi], &weighted))
        }
    }
}

/// `(1/IJ) Σ_ij |M_ij − d_ij|²`.
pub fn loss(measured: &[Vec<f64>], data: &[Vec<f64>]) -> Result<f64, MeasurementError> {
    let shape = |x: &[Vec<f64>]| (x.len(), x.first().map_or(0, Vec::len));
    let expected = shape(data);
    let got = shape(measured);
    if expected != got || measured.iter().chain(data).any(|r| r.len() != expected.1) || expected.0 * expected.1 == 0 {
        return Err(MeasurementError::Shape { expected, got });
    }
    let n = (expected.0 * expected.1) as f64;
    Ok(measured
        .iter()
        .zip(data)
        .flat_map(|(m, d)| m.iter().zip(d).map(|(a, b)| (a - b) * (a - b)))
        .sum::<f64>()
        / n)
}
