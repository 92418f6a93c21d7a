//! Reflection coefficient `η(ω)` at the transducer/substrate interface.

use serde::{Deserialize, Serialize};

/// `0.25·tanh(10(ω−a)) − 0.25·tanh(2(ω−b)) + 0.5`, clamped to `[0, 1]`.
pub fn eta_tanh(omega: f64, a: f64, b: f64) -> f64 {
    (0.25 * (10.0 * (omega - a)).tanh() - 0.25 * (2.0 * (omega - b)).tanh() + 0.5).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ReflectionModel {
    Tanh { a: f64, b: f64 },
    /// Piecewise-constant `(ω, η)` table, lower-neighbor lookup.
    Table { points: Vec<[f64; 2]> },
    Constant { value: f64 },
}

impl Default for ReflectionModel {
    fn default() -> Self {
        ReflectionModel::Tanh { a: 1.5, b: 1.0 }
    }
}

impl ReflectionModel {
    pub fn tanh(a: f64, b: f64) -> Self {
        ReflectionModel::Tanh { a, b }
    }

    pub fn eval(&self, omega: f64) -> f64 {
        let raw = match self {
            ReflectionModel::Tanh { a, b } => return eta_tanh(omega, *a, *b),
            ReflectionModel::Constant { value } => *value,
            ReflectionModel::Table { points } => {
                let mut v = points.first().map_or(f64::NAN, |p| p[1]);
                for p in points {
                    if p[0] <= omega + 1e-12 {
                        v = p[1];
                    } else {
                        break;
                    }
                }
                v
            }
        };
        raw.clamp(0.0, 1.0)
    }

    pub fn on_nodes(&self, omega: &[f64]) -> Vec<f64> {
        omega.iter().map(|&w| self.eval(w)).collect()
    }

    /// `(a, b)` of a tanh model.
    pub fn params(&self) -> Option<(f64, f64)> {
        match self {
            ReflectionModel::Tanh { a, b } => Some((*a, *b)),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        match self {
            ReflectionModel::Tanh { a, b } if !(a.is_finite() && b.is_finite()) => {
                Err(format!("tanh parameters must be finite, got a = {a}, b = {b}"))
            }
            ReflectionModel::Table { points } if points.is_empty() => Err("empty reflection table".into()),
            ReflectionModel::Table { points } if points.windows(2).any(|w| w[1][0] <= w[0][0]) => {
                Err("reflection table abscissae must be strictly increasing".into())
            }
            ReflectionModel::Constant { value } if !value.is_finite() => Err(format!("eta = {value} is not finite")),
            _ => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn tanh_examples() {
        assert_relative_eq!(eta_tanh(0.7, 0.7, 0.7), 0.5, epsilon = 1e-15);
        assert_relative_eq!(eta_tanh(1e6, 1.5, 1.0), 0.5, epsilon = 1e-15);
        let expected = 0.25 * (-5.0f64).tanh() + 0.5;
        assert_relative_eq!(eta_tanh(1.0, 1.5, 1.0), expected, epsilon = 1e-15);
        assert!((eta_tanh(1.0, 1.5, 1.0) - 0.250023).abs() < 1e-6);
    }

    #[test]
    fn models_stay_in_unit_interval() {
        let table = ReflectionModel::Table { points: vec![[0.0, -0.5], [1.0, 0.3], [1.5, 2.0]] };
        assert_eq!(table.eval(0.5), 0.0);
        assert_eq!(table.eval(1.2), 0.3);
        assert_eq!(table.eval(3.0), 1.0);
        for k in 0..200 {
            let w = 0.01 * k as f64;
            let v = ReflectionModel::tanh(1.4, 0.9).eval(w);
            assert!((0.0..=1.0).contains(&v));
        }
        assert_eq!(ReflectionModel::Constant { value: 1.7 }.eval(1.0), 1.0);
    }
}
