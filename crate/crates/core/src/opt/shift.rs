//! Parameter-shift derivatives and finite Fourier fits of one-angle scans.

use std::f64::consts::{PI, TAU};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::linalg::truncated_least_squares;

/// `dg/dθ = r [g(θ + π/4r) - g(θ - π/4r)]`, exact when `g` is generated by a
/// two-eigenvalue generator with eigenvalues `±r`.
pub fn parameter_shift_gradient(g: impl Fn(f64) -> f64, theta: f64, r: f64) -> Result<f64> {
    if !(r > 0.0 && r.is_finite()) || !theta.is_finite() {
        return Err(invalid("shift rule needs a positive gap and a finite angle"));
    }
    let s = PI / (4.0 * r);
    Ok(r * (g(theta + s) - g(theta - s)))
}

/// `c + Σ_m a_m cos(mθ) + b_m sin(mθ)` for `m = 1..=M`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrigPolynomial {
    pub constant: f64,
    pub cos: Vec<f64>,
    pub sin: Vec<f64>,
}

impl TrigPolynomial {
    pub fn max_frequency(&self) -> usize {
        self.cos.len()
    }

    pub fn eval(&self, theta: f64) -> f64 {
        let mut acc = self.constant;
        for m in 1..=self.max_frequency() {
            let (s, c) = (m as f64 * theta).sin_cos();
            acc += self.cos[m - 1] * c + self.sin[m - 1] * s;
        }
        acc
    }

    pub fn derivative(&self, theta: f64) -> f64 {
        let mut acc = 0.0;
        for m in 1..=self.max_frequency() {
            let mf = m as f64;
            let (s, c) = (mf * theta).sin_cos();
            acc += mf * (self.sin[m - 1] * c - self.cos[m - 1] * s);
        }
        acc
    }
}

/// Least-squares fit of a trigonometric polynomial with frequencies up to
/// `max_frequency`; needs at least `2M + 1` samples.
pub fn fit_trig_polynomial(thetas: &[f64], values: &[f64], max_frequency: usize) -> Result<TrigPolynomial> {
    let cols = 2 * max_frequency + 1;
    if thetas.len() != values.len() {
        return Err(invalid("angle and value counts differ"));
    }
    if thetas.len() < cols {
        return Err(invalid(format!(
            "{} samples cannot resolve frequencies up to {max_frequency}",
            thetas.len()
        )));
    }
    let design = DMatrix::from_fn(thetas.len(), cols, |r, c| {
        if c == 0 {
            1.0
        } else {
            let m = c.div_ceil(2) as f64;
            if c % 2 == 1 {
                (m * thetas[r]).cos()
            } else {
                (m * thetas[r]).sin()
            }
        }
    });
    let coeffs = truncated_least_squares(&design, &DVector::from_column_slice(values), 1e-12, 0.0);
    Ok(TrigPolynomial {
        constant: coeffs[0],
        cos: (0..max_frequency).map(|m| coeffs[2 * m + 1]).collect(),
        sin: (0..max_frequency).map(|m| coeffs[2 * m + 2]).collect(),
    })
}

/// Samples `g` at `samples` equispaced angles on `[0, 2π)` and fits it.
pub fn sample_and_fit(g: impl Fn(f64) -> f64, max_frequency: usize, samples: usize) -> Result<TrigPolynomial> {
    let thetas: Vec<f64> = (0..samples).map(|k| TAU * k as f64 / samples as f64).collect();
    let values: Vec<f64> = thetas.iter().map(|&t| g(t)).collect();
    fit_trig_polynomial(&thetas, &values, max_frequency)
}

/// Derivative of a band-limited `g` from `2M + 1` equispaced samples, valid
/// for generators with several gaps.
pub fn fourier_derivative(g: impl Fn(f64) -> f64, theta: f64, max_frequency: usize) -> Result<f64> {
    Ok(sample_and_fit(g, max_frequency, 2 * max_frequency + 1)?.derivative(theta))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shift_rule_is_exact_on_its_family() {
        for r in [0.5, 1.0, 2.5] {
            for theta in [-1.0, 0.0, 0.3, 2.0] {
                let d = parameter_shift_gradient(|t| (2.0 * r * t).cos(), theta, r).unwrap();
                assert!((d + 2.0 * r * (2.0 * r * theta).sin()).abs() < 1e-12);
            }
        }
        assert_eq!(parameter_shift_gradient(|_| 3.0, 0.4, 0.5).unwrap(), 0.0);
        assert!(parameter_shift_gradient(|t| t, 0.0, 0.0).is_err());
    }

    #[test]
    fn fit_recovers_coefficients_and_derivative() {
        let g = |t: f64| 0.3 + 0.5 * (2.0 * t).cos() - 0.25 * (3.0 * t).sin();
        let p = sample_and_fit(g, 4, 9).unwrap();
        assert!((p.constant - 0.3).abs() < 1e-12);
        assert!((p.cos[1] - 0.5).abs() < 1e-12);
        assert!((p.sin[2] + 0.25).abs() < 1e-12);
        assert!(p.cos[3].abs() < 1e-12 && p.sin[3].abs() < 1e-12);
        let d = fourier_derivative(g, 0.7, 3).unwrap();
        let exact = -1.0 * (1.4f64).sin() - 0.75 * (2.1f64).cos();
        assert!((d - exact).abs() < 1e-12);
        assert!(sample_and_fit(g, 4, 8).is_err());
    }
}
