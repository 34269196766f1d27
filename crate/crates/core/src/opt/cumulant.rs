//! Shot-noise statistics of the trained loss: Monte Carlo against the
//! second-order cumulant expansion for the squared loss.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::info::log_log_slope;
use crate::linalg::{psd_pinv_solve, RELATIVE_CUTOFF};
use crate::prior::WeightedGrid;
use crate::readout::{derive_seed, empirical_weights, FeatureMode, FeatureTable, EMPIRICAL_RIDGE};
use crate::spin::{sample_counts, PreparedCircuit};
use crate::target::TargetSpec;

/// Below this many repetitions the Monte-Carlo moments are flagged as noisy.
pub const MIN_REPETITIONS: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CumulantRow {
    pub shots: u64,
    /// Mean of `L̂_S - L̂_∞` with the first-order term removed as a control variate.
    pub mean_shift: f64,
    pub mean_shift_stderr: f64,
    /// Plain sample mean of `L̂_S - L̂_∞`.
    pub raw_mean_shift: f64,
    pub variance: f64,
    pub skewness: f64,
    pub predicted_mean_shift: f64,
    pub predicted_variance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CumulantReport {
    /// Training loss on noiseless features.
    pub baseline_loss: f64,
    pub rows: Vec<CumulantRow>,
    pub mean_shift_slope: Option<f64>,
    pub variance_slope: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

fn training_loss(rows: &DMatrix<f64>, targets: &[f64], w: &[f64]) -> f64 {
    let n = rows.nrows();
    (0..n)
        .map(|i| {
            let pred: f64 = rows.row(i).iter().zip(w).map(|(x, v)| x * v).sum();
            (targets[i] - pred).powi(2)
        })
        .sum::<f64>()
        / n as f64
}

fn sample_stats(values: &[f64]) -> (f64, f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let m2 = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let m3 = values.iter().map(|v| (v - mean).powi(3)).sum::<f64>() / n;
    let var = m2 * n / (n - 1.0).max(1.0);
    let skew = if m2 > 0.0 { m3 / m2.powf(1.5) } else { 0.0 };
    (mean, var, skew)
}

/// Distribution of the empirical training loss `L̂ = min_w (1/N) Σ (f - wᵀX)²`
/// over `repetitions` independent `S`-shot tables, for each budget.
pub fn loss_distribution_diagnostic(
    circuit: &PreparedCircuit,
    inputs: &[f64],
    target: &TargetSpec,
    shots_list: &[u64],
    repetitions: usize,
    seed: u64,
) -> Result<CumulantReport> {
    if inputs.is_empty() || shots_list.is_empty() || shots_list.contains(&0) {
        return Err(invalid("diagnostic needs inputs and positive shot budgets"));
    }
    if repetitions < 2 {
        return Err(invalid("diagnostic needs at least two repetitions"));
    }
    let mut warnings = Vec::new();
    if repetitions < MIN_REPETITIONS {
        warnings.push(format!("{repetitions} repetitions give noisy Monte-Carlo moments"));
    }
    let n = inputs.len();
    let x = circuit.probability_table(inputs)?;
    let k = x.ncols();
    let f: Vec<f64> = inputs.iter().map(|&u| target.eval(u)).collect();

    let exact = FeatureTable {
        mode: FeatureMode::Exact,
        inputs: inputs.to_vec(),
        rows: x.clone(),
        targets: f.clone(),
        weights: WeightedGrid::uniform(inputs.to_vec()).weights,
    };
    let w = empirical_weights(&exact, EMPIRICAL_RIDGE)?.weights;
    let baseline = training_loss(&x, &f, &w);
    let wv = DVector::from_column_slice(&w);
    let resid: Vec<f64> = (0..n).map(|i| f[i] - x.row(i).transpose().dot(&wv)).collect();

    // per-row Σ(u_n) = diag(x) - x xᵀ
    let sigma = |i: usize| -> DMatrix<f64> {
        let xi = x.row(i).transpose();
        DMatrix::from_diagonal(&xi) - &xi * xi.transpose()
    };
    let hessian = x.transpose() * &x * 2.0;
    let mut var_unit = 0.0;
    let mut shift_unit = 0.0;
    for i in 0..n {
        let s = sigma(i);
        var_unit += 4.0 * resid[i] * resid[i] * wv.dot(&(&s * &wv));
        let zi = x.row(i).transpose();
        let kmat = &zi * wv.transpose() * 2.0 - DMatrix::<f64>::identity(k, k) * (2.0 * resid[i]);
        let mut hinv_k = DMatrix::<f64>::zeros(k, k);
        for c in 0..k {
            let col = psd_pinv_solve(&hessian, &kmat.column(c).into_owned(), RELATIVE_CUTOFF);
            hinv_k.set_column(c, &col);
        }
        let second = &wv * wv.transpose() * 2.0 - kmat.transpose() * hinv_k;
        shift_unit += (second * &s).trace() / n as f64;
    }
    var_unit /= (n * n) as f64;
    shift_unit *= 0.5;

    let rows = shots_list
        .iter()
        .enumerate()
        .map(|(si, &shots)| -> Result<CumulantRow> {
            let draws: Vec<(f64, f64)> = (0..repetitions)
                .into_par_iter()
                .map(|r| -> Result<(f64, f64)> {
                    let stream = derive_seed(seed, si as u64) ^ (r as u64);
                    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(stream, r as u64));
                    let mut noisy = x.clone();
                    let mut linear = 0.0;
                    for i in 0..n {
                        let probs: Vec<f64> = x.row(i).iter().copied().collect();
                        let counts = sample_counts(&probs, shots, &mut rng);
                        for (j, c) in counts.into_iter().enumerate() {
                            let v = c as f64 / shots as f64;
                            // first-order term g_n · ζ_n with g_n = -2 r_n w
                            linear += -2.0 * resid[i] * w[j] * (v - x[(i, j)]);
                            noisy[(i, j)] = v;
                        }
                    }
                    let table = FeatureTable {
                        mode: FeatureMode::Sampled { shots, seed: stream },
                        rows: noisy,
                        ..exact.clone()
                    };
                    let ws = empirical_weights(&table, EMPIRICAL_RIDGE)?.weights;
                    Ok((training_loss(&table.rows, &f, &ws) - baseline, linear / n as f64))
                })
                .collect::<Result<_>>()?;
            let deltas: Vec<f64> = draws.iter().map(|d| d.0).collect();
            let corrected: Vec<f64> = draws.iter().map(|d| d.0 - d.1).collect();
            let (raw_mean, variance, skewness) = sample_stats(&deltas);
            let (mean_shift, cvar, _) = sample_stats(&corrected);
            Ok(CumulantRow {
                shots,
                mean_shift,
                mean_shift_stderr: (cvar / repetitions as f64).sqrt(),
                raw_mean_shift: raw_mean,
                variance,
                skewness,
                predicted_mean_shift: shift_unit / shots as f64,
                predicted_variance: var_unit / shots as f64,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let s: Vec<f64> = rows.iter().map(|r| r.shots as f64).collect();
    Ok(CumulantReport {
        baseline_loss: baseline,
        mean_shift_slope: log_log_slope(&s, &rows.iter().map(|r| r.mean_shift.abs()).collect::<Vec<_>>()),
        variance_slope: log_log_slope(&s, &rows.iter().map(|r| r.variance).collect::<Vec<_>>()),
        rows,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prior::PriorSpec;
    use crate::spin::{CircuitParams, FixedRotationPlacement, SpinAlgebra};

    #[test]
    fn deterministic_outcomes_have_no_shot_noise() {
        // at u = 0 and S large the statistics vanish only through Σ = 0; use
        // one-hot rows via a single-qubit fringe at u = ±π/2
        let alg = SpinAlgebra::new(1).unwrap();
        let c = PreparedCircuit::new(&alg, &CircuitParams::zeros(0, 0), FixedRotationPlacement::Last).unwrap();
        let inputs = [std::f64::consts::FRAC_PI_2, -std::f64::consts::FRAC_PI_2];
        let r = loss_distribution_diagnostic(&c, &inputs, &TargetSpec::Identity, &[1, 4], 20, 0).unwrap();
        for row in &r.rows {
            assert!(row.mean_shift.abs() < 1e-12);
            assert!(row.variance.abs() < 1e-20);
            assert!(row.predicted_variance.abs() < 1e-12);
            assert!(row.predicted_mean_shift.abs() < 1e-12);
        }
        assert!(!r.warnings.is_empty());
    }

    #[test]
    fn shift_is_positive_and_shrinks_with_shots() {
        let alg = SpinAlgebra::new(3).unwrap();
        let p = CircuitParams::from_flat(1, 0, &[0.2, 0.1, 0.5]).unwrap();
        let c = PreparedCircuit::new(&alg, &p, FixedRotationPlacement::Last).unwrap();
        let inputs = PriorSpec::gaussian(0.7).sample(60, 1).unwrap();
        let r = loss_distribution_diagnostic(&c, &inputs, &TargetSpec::Identity, &[4, 64], 200, 3).unwrap();
        assert!(r.rows[0].variance > r.rows[1].variance);
        assert!(r.rows[0].predicted_mean_shift > r.rows[1].predicted_mean_shift);
    }
}
