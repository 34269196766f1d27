//! Local information measures and the small-width expansion of the
//! single-shot loss, plus metrological reference scalings.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::linalg::pairwise_sum;
use crate::prior::PriorSpec;
use crate::readout::{
    build_feature_table, compute_moments, from_db, optimal_weights, FeatureMode, ShotBudget,
};
use crate::spin::PreparedCircuit;
use crate::target::TargetSpec;

/// Outcomes below this probability are excluded from the information sums.
pub const SUPPORT_FLOOR: f64 = 1e-12;
const DIVERGENCE_SLOPE: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InfoValue {
    pub value: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

struct Derivatives {
    x: Vec<f64>,
    d1: Vec<f64>,
    d2: Vec<f64>,
    d3: Vec<f64>,
}

fn derivatives(circuit: &PreparedCircuit, u0: f64, order: u32) -> Result<Derivatives> {
    let get = |n: u32| -> Result<Vec<f64>> {
        if n <= order {
            circuit.embedding_derivative(u0, n)
        } else {
            Ok(vec![0.0; circuit.dim()])
        }
    };
    Ok(Derivatives { x: get(0)?, d1: get(1)?, d2: get(2)?, d3: get(3)? })
}

fn support_warnings(d: &Derivatives, u0: f64) -> Vec<String> {
    d.x.iter()
        .zip(&d.d1)
        .enumerate()
        .filter(|(_, (x, d1))| **x < SUPPORT_FLOOR && d1.abs() > DIVERGENCE_SLOPE)
        .map(|(j, (_, d1))| {
            format!("outcome {j} has vanishing probability but slope {d1:.3e} at u = {u0}")
        })
        .collect()
}

/// `Σ_j x'_j² / x_j` over supported outcomes.
pub fn fisher_information(circuit: &PreparedCircuit, u0: f64) -> Result<InfoValue> {
    let d = derivatives(circuit, u0, 1)?;
    let terms: Vec<f64> = (0..d.x.len())
        .filter(|&j| d.x[j] >= SUPPORT_FLOOR)
        .map(|j| d.d1[j] * d.d1[j] / d.x[j])
        .collect();
    Ok(InfoValue { value: pairwise_sum(&terms), warnings: support_warnings(&d, u0) })
}

/// `Σ_j [x'_j x'''_j / x_j - x'_j² x''_j / (2 x_j²)]` over supported outcomes.
pub fn bhattacharyya_information(circuit: &PreparedCircuit, u0: f64) -> Result<InfoValue> {
    let d = derivatives(circuit, u0, 3)?;
    let terms: Vec<f64> = (0..d.x.len())
        .filter(|&j| d.x[j] >= SUPPORT_FLOOR)
        .map(|j| {
            let x = d.x[j];
            d.d1[j] * d.d3[j] / x - d.d1[j] * d.d1[j] * d.d2[j] / (2.0 * x * x)
        })
        .collect();
    Ok(InfoValue { value: pairwise_sum(&terms), warnings: support_warnings(&d, u0) })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpansionRow {
    pub sigma: f64,
    pub exact: f64,
    /// `σ² - σ⁴ I1 - σ⁶ I2`
    pub expansion: f64,
    pub residual: f64,
    /// `(σ² - exact) / σ⁴`, which tends to `I1` as `σ → 0`.
    pub fisher_estimate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpansionReport {
    pub fisher: f64,
    pub bhattacharyya: f64,
    pub rows: Vec<ExpansionRow>,
    /// Mean of `residual / σ⁸` over the three smallest widths.
    pub sigma8_coefficient: Option<f64>,
    /// Least-squares slope of `log|residual|` against `log σ`.
    pub residual_slope: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// Quadrature order used for the exact loss at small widths.
pub const EXPANSION_QUADRATURE_NODES: usize = 60;

/// Single-shot loss for `f* = u` under a centred Gaussian prior, computed as
/// `Σ_n ω_n Σ_j x_j(u_n) (u_n - w_j)²` so that no cancellation occurs.
pub fn single_shot_loss(circuit: &PreparedCircuit, sigma: f64, nodes: usize) -> Result<f64> {
    let prior = PriorSpec::gaussian(sigma);
    let grid = prior.quadrature_grid(nodes)?;
    let table = build_feature_table(circuit, &grid, &TargetSpec::Identity, FeatureMode::Exact)?;
    let moments = compute_moments(&table)?;
    let (readout, _) = optimal_weights(&moments, ShotBudget::Finite(1), 0.0)?;
    let terms: Vec<f64> = (0..table.len())
        .map(|n| {
            let u = grid.nodes[n];
            let inner: f64 = readout
                .weights
                .iter()
                .enumerate()
                .map(|(j, w)| table.rows[(n, j)] * (u - w) * (u - w))
                .sum();
            grid.weights[n] * inner
        })
        .collect();
    Ok(pairwise_sum(&terms))
}

/// Least-squares slope of `log y` on `log x` over positive pairs.
pub fn log_log_slope(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = xs
        .iter()
        .zip(ys)
        .filter(|(x, y)| **x > 0.0 && **y > 0.0)
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    Some(sxy / sxx)
}

pub fn verify_expansion(circuit: &PreparedCircuit, sigmas: &[f64]) -> Result<ExpansionReport> {
    if sigmas.is_empty() || sigmas.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
        return Err(invalid("widths must be positive and finite"));
    }
    let i1 = fisher_information(circuit, 0.0)?;
    let i2 = bhattacharyya_information(circuit, 0.0)?;
    let mut warnings = i1.warnings.clone();
    warnings.extend(i2.warnings.iter().cloned());
    warnings.dedup();

    let mut rows = Vec::with_capacity(sigmas.len());
    for &sigma in sigmas {
        let exact = single_shot_loss(circuit, sigma, EXPANSION_QUADRATURE_NODES)?;
        let s2 = sigma * sigma;
        let correction = s2 * s2 * (i1.value + s2 * i2.value);
        let expansion = s2 - correction;
        // grouped so that σ² cancels before the small terms are compared
        let residual = correction - (s2 - exact);
        rows.push(ExpansionRow {
            sigma,
            exact,
            expansion,
            residual,
            fisher_estimate: (s2 - exact) / (s2 * s2),
        });
    }

    let mut by_sigma = rows.clone();
    by_sigma.sort_by(|a, b| a.sigma.total_cmp(&b.sigma));
    let smallest: Vec<f64> = by_sigma.iter().take(3).map(|r| r.residual / r.sigma.powi(8)).collect();
    let sigma8_coefficient =
        (!smallest.is_empty()).then(|| smallest.iter().sum::<f64>() / smallest.len() as f64);
    let residual_slope = log_log_slope(
        &rows.iter().map(|r| r.sigma).collect::<Vec<_>>(),
        &rows.iter().map(|r| r.residual.abs()).collect::<Vec<_>>(),
    );

    Ok(ExpansionReport {
        fisher: i1.value,
        bhattacharyya: i2.value,
        rows,
        sigma8_coefficient,
        residual_slope,
        warnings,
    })
}

/// Risk of the optimal Bayesian interferometer, known reference points only.
pub fn oqi_reference_risk(qubits: usize, sigma: f64) -> Option<f64> {
    (qubits == 32 && (sigma - 0.7981).abs() < 1e-9).then(|| from_db(-20.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceRow {
    pub qubits: usize,
    pub sql: f64,
    pub hl: f64,
    pub oqi_risk: Option<f64>,
    pub oqi_mse_m: Option<f64>,
}

/// Standard-quantum-limit `1/L` and Heisenberg `1/L²` scalings of the
/// effective measurement variance, plus tabulated interferometer references.
pub fn reference_curves(qubits: &[usize], sigma: f64) -> Result<Vec<ReferenceRow>> {
    if qubits.contains(&0) {
        return Err(invalid("qubit counts must be positive"));
    }
    Ok(qubits
        .iter()
        .map(|&l| {
            let lf = l as f64;
            let oqi_risk = oqi_reference_risk(l, sigma);
            ReferenceRow {
                qubits: l,
                sql: 1.0 / lf,
                hl: 1.0 / (lf * lf),
                oqi_risk,
                oqi_mse_m: oqi_risk.and_then(|r| {
                    crate::readout::effective_measurement_variance(r, sigma * sigma)
                }),
            }
        })
        .collect())
}
