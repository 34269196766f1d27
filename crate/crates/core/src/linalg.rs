//! Small dense helpers shared by the readout and eigentask code.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Relative eigenvalue cutoff used for pseudo-inverses and whitening.
pub const RELATIVE_CUTOFF: f64 = 1e-12;

/// Eigendecomposition of a symmetric matrix with eigenvalues sorted ascending.
pub fn sorted_symmetric_eigen(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(m.nrows(), order.len(), |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

/// `pinv(a) b` for symmetric positive semidefinite `a`, dropping eigenvalues
/// below `cutoff * max eigenvalue`.
pub fn psd_pinv_solve(a: &DMatrix<f64>, b: &DVector<f64>, cutoff: f64) -> DVector<f64> {
    let (values, vectors) = sorted_symmetric_eigen(a);
    let top = values.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let mut out = DVector::zeros(b.len());
    if top == 0.0 {
        return out;
    }
    for (k, &lambda) in values.iter().enumerate() {
        if lambda > cutoff * top {
            let v = vectors.column(k);
            out += v * (v.dot(b) / lambda);
        }
    }
    out
}

/// Jacobi sweeps after which the factorization is accepted as converged.
const MAX_SWEEPS: usize = 80;

/// Filtered least squares `min ‖m w - t‖² + ridge ‖w‖²`, dropping singular
/// values below `cutoff * top`.
///
/// The singular values come from a Householder QR followed by one-sided
/// Jacobi rotations on `R`, which stays accurate when singular values cluster.
pub fn truncated_least_squares(m: &DMatrix<f64>, t: &DVector<f64>, cutoff: f64, ridge: f64) -> DVector<f64> {
    let k = m.ncols();
    let (mut a, rhs) = if m.nrows() > k {
        let qr = m.clone().qr();
        let mut qt = t.clone();
        qr.q_tr_mul(&mut qt);
        (qr.r(), qt.rows(0, k).into_owned())
    } else {
        (m.clone(), t.clone())
    };
    let mut v = DMatrix::<f64>::identity(k, k);
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..k {
            for q in p + 1..k {
                let alpha = a.column(p).norm_squared();
                let beta = a.column(q).norm_squared();
                let gamma = a.column(p).dot(&a.column(q));
                if gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let tan = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let cos = 1.0 / (1.0 + tan * tan).sqrt();
                let sin = cos * tan;
                for x in [&mut a, &mut v] {
                    for r in 0..x.nrows() {
                        let (xp, xq) = (x[(r, p)], x[(r, q)]);
                        x[(r, p)] = cos * xp - sin * xq;
                        x[(r, q)] = sin * xp + cos * xq;
                    }
                }
            }
        }
        if !rotated {
            break;
        }
    }
    // columns of `a` are now u_j s_j
    let s: Vec<f64> = (0..k).map(|j| a.column(j).norm()).collect();
    let top = s.iter().fold(0.0f64, |acc, &x| acc.max(x));
    let mut w = DVector::zeros(k);
    for (j, &sj) in s.iter().enumerate() {
        if sj > cutoff * top {
            w += v.column(j) * (a.column(j).dot(&rhs) / (sj * sj + ridge));
        }
    }
    w
}

/// Pairwise (tree) summation; the reduction order depends only on the length.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const LEAF: usize = 16;
    if values.len() <= LEAF {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}
