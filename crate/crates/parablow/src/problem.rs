//! Problem description: absorption exponent, domain, lateral boundary data
//! and initial-data mode.

use crate::geometry::DomainSpec;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ProblemError {
    #[error("invalid problem: {0}")]
    Invalid(String),
}

/// Lateral boundary data on ∂Ω × (0, ∞). Tabulated data is continuous,
/// piecewise linear in time and spatially uniform on the boundary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LateralData {
    Zero,
    Constant { value: f64 },
    Tabulated { times: Vec<f64>, values: Vec<f64> },
}

impl LateralData {
    pub fn value_at(&self, t: f64) -> f64 {
        match self {
            LateralData::Zero => 0.0,
            LateralData::Constant { value } => *value,
            LateralData::Tabulated { times, values } => {
                if times.is_empty() {
                    return 0.0;
                }
                if t <= times[0] {
                    return values[0];
                }
                for w in 0..times.len() - 1 {
                    if t <= times[w + 1] {
                        let s = (t - times[w]) / (times[w + 1] - times[w]);
                        return values[w] * (1.0 - s) + values[w + 1] * s;
                    }
                }
                *values.last().unwrap()
            }
        }
    }

    pub fn sup(&self) -> f64 {
        match self {
            LateralData::Zero => 0.0,
            LateralData::Constant { value } => *value,
            LateralData::Tabulated { values, .. } => {
                values.iter().copied().fold(0.0, f64::max)
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, LateralData::Zero)
    }

    /// Constant in time (the energy-decay monitor requires this).
    pub fn is_time_constant(&self) -> bool {
        match self {
            LateralData::Zero | LateralData::Constant { .. } => true,
            LateralData::Tabulated { values, .. } => {
                values.windows(2).all(|w| w[0] == w[1])
            }
        }
    }

    pub fn validate(&self) -> Result<(), ProblemError> {
        match self {
            LateralData::Zero => Ok(()),
            LateralData::Constant { value } => {
                if *value < 0.0 {
                    Err(ProblemError::Invalid(format!("lateral data must be ≥ 0, got {value}")))
                } else {
                    Ok(())
                }
            }
            LateralData::Tabulated { times, values } => {
                if times.len() != values.len() || times.is_empty() {
                    return Err(ProblemError::Invalid(
                        "tabulated data needs equal, nonempty time/value lists".into(),
                    ));
                }
                if times.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(ProblemError::Invalid("tabulated times must increase".into()));
                }
                if values.iter().any(|&v| v < 0.0) {
                    return Err(ProblemError::Invalid("lateral data must be ≥ 0".into()));
                }
                Ok(())
            }
        }
    }
}

/// Initial-data mode: a finite constant, or the singular initial condition
/// realized as the monotone limit of constant data k → ∞.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialMode {
    Constant { k: f64 },
    BlowUp,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    pub q: f64,
    pub domain: DomainSpec,
    #[serde(default = "default_lateral")]
    pub lateral: LateralData,
    #[serde(default = "default_initial")]
    pub initial: InitialMode,
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    /// Periodic mode without boundary nodes; exists for the spatially
    /// constant flow oracles only.
    #[serde(default)]
    pub no_boundary: bool,
}

fn default_lateral() -> LateralData {
    LateralData::Zero
}

fn default_initial() -> InitialMode {
    InitialMode::BlowUp
}

fn default_horizon() -> f64 {
    1.0
}

impl ProblemSpec {
    pub fn validate(&self) -> Result<(), ProblemError> {
        if !(self.q > 1.0) {
            return Err(ProblemError::Invalid(format!("exponent must satisfy q > 1, got {}", self.q)));
        }
        self.domain
            .validate()
            .map_err(|e| ProblemError::Invalid(e.to_string()))?;
        self.lateral.validate()?;
        if let InitialMode::Constant { k } = self.initial {
            if k < 0.0 {
                return Err(ProblemError::Invalid(format!("initial constant must be ≥ 0, got {k}")));
            }
        }
        if !(self.horizon > 0.0) {
            return Err(ProblemError::Invalid("horizon must be positive".into()));
        }
        if self.no_boundary && !self.lateral.is_zero() {
            return Err(ProblemError::Invalid("no-boundary mode requires zero lateral data".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn q_must_exceed_one() {
        let p = ProblemSpec {
            q: 1.0,
            domain: DomainSpec::Interval { a: -1.0, b: 1.0 },
            lateral: LateralData::Zero,
            initial: InitialMode::BlowUp,
            horizon: 1.0,
            no_boundary: false,
        };
        assert!(p.validate().is_err());
    }

    #[test]
    fn tabulated_interpolation() {
        let f = LateralData::Tabulated { times: vec![0.0, 1.0, 2.0], values: vec![0.0, 2.0, 2.0] };
        f.validate().unwrap();
        assert_eq!(f.value_at(-1.0), 0.0);
        assert_eq!(f.value_at(0.5), 1.0);
        assert_eq!(f.value_at(5.0), 2.0);
        assert_eq!(f.sup(), 2.0);
        assert!(!f.is_time_constant());
    }

    #[test]
    fn negative_lateral_rejected() {
        assert!(LateralData::Constant { value: -0.1 }.validate().is_err());
    }
}
