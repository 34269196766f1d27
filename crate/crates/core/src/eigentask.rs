//! Eigentasks: solutions of `V r = β² G r`, ordered by noise-to-signal ratio.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::linalg::{sorted_symmetric_eigen, RELATIVE_CUTOFF};
use crate::readout::{
    empirical_weights, optimal_weights, FeatureTable, LinearReadout, MomentSet, ReadoutMode,
    ShotBudget,
};
use crate::spin::PreparedCircuit;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EigentaskBasis {
    /// `r^(j)`, one per retained direction, G-orthonormal.
    pub combinations: Vec<Vec<f64>>,
    /// Ascending noise-to-signal eigenvalues.
    pub betas2: Vec<f64>,
}

impl EigentaskBasis {
    pub fn rank(&self) -> usize {
        self.betas2.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.combinations.first().map_or(0, Vec::len)
    }

    /// `K × K_L` matrix whose columns are the first `k_l` combinations.
    pub fn projection(&self, k_l: usize) -> DMatrix<f64> {
        let k = self.feature_dim();
        DMatrix::from_fn(k, k_l, |r, c| self.combinations[c][r])
    }
}

/// Whitens by `G^{-1/2}` on the range of `G`, diagonalizes the whitened `V`
/// and maps back.
pub fn solve_eigentasks(moments: &MomentSet) -> Result<EigentaskBasis> {
    let (g_vals, g_vecs) = sorted_symmetric_eigen(&moments.gram);
    let top = g_vals.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let kept: Vec<usize> = (0..g_vals.len())
        .filter(|&i| top > 0.0 && g_vals[i] > RELATIVE_CUTOFF * top)
        .collect();
    if kept.is_empty() {
        return Err(invalid("Gram matrix has zero rank"));
    }
    let k = moments.dim();
    let whiten = DMatrix::from_fn(k, kept.len(), |r, c| {
        g_vecs[(r, kept[c])] / g_vals[kept[c]].sqrt()
    });
    let reduced = whiten.transpose() * &moments.covariance * &whiten;
    let (betas, vecs) = sorted_symmetric_eigen(&reduced);
    let combos = &whiten * vecs;

    let mut combinations = Vec::with_capacity(kept.len());
    for c in 0..combos.ncols() {
        let mut col: Vec<f64> = combos.column(c).iter().copied().collect();
        let lead = col
            .iter()
            .copied()
            .fold(0.0f64, |best, v| if v.abs() > best.abs() { v } else { best });
        if lead < 0.0 {
            col.iter_mut().for_each(|v| *v = -*v);
        }
        combinations.push(col);
    }
    Ok(EigentaskBasis {
        combinations,
        betas2: betas.into_iter().map(|b| b.max(0.0)).collect(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EigentaskValue {
    pub u: f64,
    pub mean: f64,
    /// Standard deviation of the `S`-shot estimate.
    pub std: f64,
}

/// `y^(j)(u) = r^(j)ᵀ x(u)` and `sqrt(r^(j)ᵀ Σ(u) r^(j) / S)`.
pub fn eigentask_function(
    basis: &EigentaskBasis,
    index: usize,
    circuit: &PreparedCircuit,
    u: f64,
    shots: ShotBudget,
) -> Result<EigentaskValue> {
    let r = basis
        .combinations
        .get(index)
        .ok_or_else(|| invalid(format!("eigentask index {index} out of range")))?;
    let x = circuit.probabilities(u)?.probs;
    if x.len() != r.len() {
        return Err(invalid("basis dimension does not match the circuit"));
    }
    let mean: f64 = r.iter().zip(&x).map(|(a, b)| a * b).sum();
    let second: f64 = r.iter().zip(&x).map(|(a, b)| a * a * b).sum();
    let var = ((second - mean * mean) * shots.inverse()).max(0.0);
    Ok(EigentaskValue { u, mean, std: var.sqrt() })
}

/// Eigentask curves on a grid, one vector per requested index.
pub fn eigentask_curves(
    basis: &EigentaskBasis,
    indices: &[usize],
    circuit: &PreparedCircuit,
    nodes: &[f64],
    shots: ShotBudget,
) -> Result<Vec<Vec<EigentaskValue>>> {
    indices
        .iter()
        .map(|&j| {
            nodes
                .iter()
                .map(|&u| eigentask_function(basis, j, circuit, u, shots))
                .collect()
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Snr {
    /// `S/β²`; `None` when infinite.
    pub snr: Option<f64>,
    /// `1/(1 + β²/S)`
    pub capacity: f64,
}

pub fn expected_snr(basis: &EigentaskBasis, index: usize, shots: ShotBudget) -> Result<Snr> {
    let b2 = *basis
        .betas2
        .get(index)
        .ok_or_else(|| invalid(format!("eigentask index {index} out of range")))?;
    let noise = b2 * shots.inverse();
    Ok(Snr {
        snr: (noise > 0.0).then(|| 1.0 / noise),
        capacity: 1.0 / (1.0 + noise),
    })
}

fn check_truncation(basis: &EigentaskBasis, k_l: usize) -> Result<()> {
    if k_l == 0 || k_l > basis.rank() {
        return Err(invalid(format!(
            "retained eigentask count must be in 1..={}, got {k_l}",
            basis.rank()
        )));
    }
    Ok(())
}

fn composite(basis: &EigentaskBasis, k_l: usize, w_et: &DVector<f64>, shots: ShotBudget) -> LinearReadout {
    let w = basis.projection(k_l) * w_et;
    LinearReadout {
        weights: w.iter().copied().collect(),
        eigentask_weights: Some(w_et.iter().copied().collect()),
        mode: ReadoutMode::Eigentask { retained: k_l },
        shots,
    }
}

/// Closed-form readout restricted to the first `k_l` eigentasks (the constant
/// eigentask included), with its predicted loss.
pub fn truncated_readout(
    basis: &EigentaskBasis,
    k_l: usize,
    moments: &MomentSet,
    shots: ShotBudget,
) -> Result<(LinearReadout, f64)> {
    check_truncation(basis, k_l)?;
    let r = basis.projection(k_l);
    let rt = r.transpose();
    let projected = MomentSet {
        gram: &rt * &moments.gram * &r,
        covariance: &rt * &moments.covariance * &r,
        cross: &rt * &moments.cross,
        target_power: moments.target_power,
        target_mean: moments.target_mean,
    };
    let (et, loss) = optimal_weights(&projected, shots, 0.0)?;
    Ok((composite(basis, k_l, &et.weight_vector(), shots), loss))
}

/// Regression on sampled histograms projected onto the first `k_l` eigentasks.
pub fn truncated_empirical_readout(
    basis: &EigentaskBasis,
    k_l: usize,
    table: &FeatureTable,
    ridge: f64,
) -> Result<LinearReadout> {
    check_truncation(basis, k_l)?;
    if table.dim() != basis.feature_dim() {
        return Err(invalid("basis dimension does not match the feature table"));
    }
    let projected = FeatureTable {
        rows: &table.rows * basis.projection(k_l),
        ..table.clone()
    };
    let et = empirical_weights(&projected, ridge)?;
    Ok(composite(basis, k_l, &et.weight_vector(), et.shots))
}

/// Serializable basis with capacities at a given budget.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EigentaskExport {
    pub shots: ShotBudget,
    pub betas2: Vec<f64>,
    pub capacities: Vec<f64>,
    pub combinations: Vec<Vec<f64>>,
}

pub fn export_basis(basis: &EigentaskBasis, shots: ShotBudget) -> EigentaskExport {
    EigentaskExport {
        shots,
        betas2: basis.betas2.clone(),
        capacities: basis
            .betas2
            .iter()
            .map(|b| 1.0 / (1.0 + b * shots.inverse()))
            .collect(),
        combinations: basis.combinations.clone(),
    }
}
