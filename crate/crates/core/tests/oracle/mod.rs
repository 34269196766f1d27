//! Test-only reference implementations that share no code with the library.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C;

/// Full `2^L` tensor-product simulation of the collective-spin circuit.
/// Single-qubit basis: index 0 is spin up, 1 is spin down.
pub struct FullSim {
    pub qubits: usize,
}

fn sigma(axis: char) -> DMatrix<C> {
    let z = C::new(0.0, 0.0);
    let o = C::new(1.0, 0.0);
    let i = C::new(0.0, 1.0);
    match axis {
        'x' => DMatrix::from_row_slice(2, 2, &[z, o, o, z]),
        'y' => DMatrix::from_row_slice(2, 2, &[z, -i, i, z]),
        'z' => DMatrix::from_row_slice(2, 2, &[o, z, z, -o]),
        _ => unreachable!(),
    }
}

impl FullSim {
    pub fn dim(&self) -> usize {
        1 << self.qubits
    }

    fn product(&self, single: &DMatrix<C>) -> DMatrix<C> {
        let mut out = DMatrix::from_element(1, 1, C::new(1.0, 0.0));
        for _ in 0..self.qubits {
            out = out.kronecker(single);
        }
        out
    }

    /// `exp(-i φ σ/2)` on every qubit.
    pub fn rotation(&self, axis: char, phi: f64) -> DMatrix<C> {
        let single = DMatrix::<C>::identity(2, 2) * C::new((phi / 2.0).cos(), 0.0)
            - sigma(axis) * C::new(0.0, (phi / 2.0).sin());
        self.product(&single)
    }

    fn up_count(&self, index: usize) -> usize {
        // bit b of the index is qubit b; a zero bit is spin up
        (0..self.qubits).filter(|b| index >> b & 1 == 0).count()
    }

    fn jz(&self, index: usize) -> f64 {
        self.up_count(index) as f64 - self.qubits as f64 / 2.0
    }

    /// `exp(-i φ Jz²)`, diagonal in the product basis.
    pub fn twist_z(&self, phi: f64) -> DMatrix<C> {
        DMatrix::from_diagonal(&DVector::from_iterator(
            self.dim(),
            (0..self.dim()).map(|i| C::from_polar(1.0, -phi * self.jz(i).powi(2))),
        ))
    }

    /// `exp(-i φ Jx²) = H^⊗L exp(-i φ Jz²) H^⊗L`.
    pub fn twist_x(&self, phi: f64) -> DMatrix<C> {
        let s = C::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        let h = self.product(&DMatrix::from_row_slice(2, 2, &[s, s, s, -s]));
        &h * self.twist_z(phi) * &h
    }

    /// Outcome distribution over the up-spin count for angles laid out as
    /// `[en layers..., de layers...]`, three per layer, with the fixed
    /// quarter turn applied last.
    pub fn probabilities(&self, n_en: usize, n_de: usize, flat: &[f64], u: f64) -> Vec<f64> {
        let mut psi = DVector::<C>::zeros(self.dim());
        psi[self.dim() - 1] = C::new(1.0, 0.0);
        psi = self.rotation('y', std::f64::consts::FRAC_PI_2) * psi;
        for l in 0..n_en {
            let a = &flat[3 * l..3 * l + 3];
            psi = self.twist_z(a[0]) * psi;
            psi = self.twist_x(a[1]) * psi;
            psi = self.rotation('x', a[2]) * psi;
        }
        psi = self.rotation('z', u) * psi;
        // decoder product, rightmost factor (last layer) first
        for l in (0..n_de).rev() {
            let a = &flat[3 * (n_en + l)..3 * (n_en + l) + 3];
            psi = self.rotation('x', a[2]) * psi;
            psi = self.twist_x(a[1]) * psi;
            psi = self.twist_z(a[0]) * psi;
        }
        psi = self.rotation('x', std::f64::consts::FRAC_PI_2) * psi;
        let mut p = vec![0.0; self.qubits + 1];
        for (i, a) in psi.iter().enumerate() {
            p[self.up_count(i)] += a.norm_sqr();
        }
        p
    }
}

/// Expected `S`-shot squared loss of readout `w`, straight from the
/// probability rows: bias plus multinomial variance per node.
pub fn expected_loss(rows: &DMatrix<f64>, targets: &[f64], weights: &[f64], w: &[f64], inv_shots: f64) -> f64 {
    let mut acc = 0.0;
    for n in 0..rows.nrows() {
        let mean: f64 = (0..w.len()).map(|j| rows[(n, j)] * w[j]).sum();
        let second: f64 = (0..w.len()).map(|j| rows[(n, j)] * w[j] * w[j]).sum();
        acc += weights[n] * ((targets[n] - mean).powi(2) + inv_shots * (second - mean * mean));
    }
    acc
}

/// Minimizes [`expected_loss`] as one least-squares problem. Each node
/// contributes the bias row `√ω x` against `√ω f` and, for finite `S`, the
/// exact noise factor `Σ = Σ_j x_j (e_j - x)(e_j - x)ᵀ` as rows
/// `√(ω x_j / S) (e_j - x)` against zero. Solved by column-pivoted
/// Householder QR, truncating negligible pivots.
pub fn least_squares_minimum(rows: &DMatrix<f64>, targets: &[f64], weights: &[f64], inv_shots: f64) -> f64 {
    let k = rows.ncols();
    let mut a: Vec<Vec<f64>> = Vec::new();
    let mut b: Vec<f64> = Vec::new();
    for n in 0..rows.nrows() {
        let s = weights[n].sqrt();
        a.push((0..k).map(|j| s * rows[(n, j)]).collect());
        b.push(s * targets[n]);
        if inv_shots > 0.0 {
            for j in 0..k {
                let c = (weights[n] * rows[(n, j)] * inv_shots).sqrt();
                if c == 0.0 {
                    continue;
                }
                a.push((0..k).map(|i| c * ((i == j) as u8 as f64 - rows[(n, i)])).collect());
                b.push(0.0);
            }
        }
    }
    let m = a.len();
    let mut perm: Vec<usize> = (0..k).collect();
    let mut rank = 0;
    let mut first_pivot = 0.0;
    for col in 0..k.min(m) {
        // pivot on the largest remaining column norm
        let norm = |c: usize, a: &Vec<Vec<f64>>| (col..m).map(|r| a[r][c] * a[r][c]).sum::<f64>();
        let best = (col..k).max_by(|&x, &y| norm(x, &a).total_cmp(&norm(y, &a))).unwrap();
        for row in a.iter_mut() {
            row.swap(col, best);
        }
        perm.swap(col, best);
        let alpha = norm(col, &a).sqrt();
        if col == 0 {
            first_pivot = alpha;
        }
        if alpha <= 1e-13 * first_pivot || alpha == 0.0 {
            break;
        }
        let sign = if a[col][col] >= 0.0 { 1.0 } else { -1.0 };
        let mut v: Vec<f64> = (col..m).map(|r| a[r][col]).collect();
        v[0] += sign * alpha;
        let vv: f64 = v.iter().map(|x| x * x).sum();
        for c in col..k {
            let d: f64 = (col..m).map(|r| v[r - col] * a[r][c]).sum::<f64>() * 2.0 / vv;
            for r in col..m {
                a[r][c] -= d * v[r - col];
            }
        }
        let d: f64 = (col..m).map(|r| v[r - col] * b[r]).sum::<f64>() * 2.0 / vv;
        for r in col..m {
            b[r] -= d * v[r - col];
        }
        rank += 1;
    }
    let mut z = vec![0.0; k];
    for i in (0..rank).rev() {
        let tail: f64 = (i + 1..rank).map(|j| a[i][j] * z[j]).sum();
        z[i] = (b[i] - tail) / a[i][i];
    }
    let mut w = vec![0.0; k];
    for (i, &p) in perm.iter().enumerate() {
        w[p] = z[i];
    }
    expected_loss(rows, targets, weights, &w, inv_shots)
}
