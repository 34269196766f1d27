use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Target function `f*(u)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TargetSpec {
    Identity,
    /// `sin(frequency * u)`
    Sine { frequency: f64 },
    Constant { value: f64 },
    /// Piecewise-linear interpolation through `(u, f)` points sorted by `u`,
    /// held constant outside the table.
    Tabulated { points: Vec<[f64; 2]> },
}

impl TargetSpec {
    pub fn eval(&self, u: f64) -> f64 {
        match self {
            Self::Identity => u,
            Self::Sine { frequency } => (frequency * u).sin(),
            Self::Constant { value } => *value,
            Self::Tabulated { points } => interpolate(points, u),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Sine { frequency } if !frequency.is_finite() => {
                Err(invalid("sine frequency must be finite"))
            }
            Self::Constant { value } if !value.is_finite() => {
                Err(invalid("constant target must be finite"))
            }
            Self::Tabulated { points } => {
                if points.len() < 2 {
                    return Err(invalid("tabulated target needs at least two points"));
                }
                if points.iter().flatten().any(|v| !v.is_finite()) {
                    return Err(invalid("tabulated target contains non-finite values"));
                }
                if points.windows(2).any(|w| w[1][0] <= w[0][0]) {
                    return Err(invalid("tabulated target inputs must be strictly increasing"));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    pub fn label(&self) -> String {
        match self {
            Self::Identity => "u".into(),
            Self::Sine { frequency } => format!("sin({frequency}u)"),
            Self::Constant { value } => format!("{value}"),
            Self::Tabulated { points } => format!("tabulated[{}]", points.len()),
        }
    }
}

fn interpolate(points: &[[f64; 2]], u: f64) -> f64 {
    let first = points[0];
    let last = points[points.len() - 1];
    if u <= first[0] {
        return first[1];
    }
    if u >= last[0] {
        return last[1];
    }
    let idx = points.partition_point(|p| p[0] <= u);
    let (a, b) = (points[idx - 1], points[idx]);
    let t = (u - a[0]) / (b[0] - a[0]);
    a[1] + t * (b[1] - a[1])
}
