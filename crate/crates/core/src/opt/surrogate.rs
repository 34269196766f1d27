//! Gaussian-process surrogate with a product of 2π-periodic kernels.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

pub const NOISE_FLOOR: f64 = 1e-10;
pub const DEFAULT_MLE_STARTS: usize = 8;
const MLE_EVALS_PER_PARAM: usize = 25;

const LOG_SCALE_BOUNDS: (f64, f64) = (-4.0, 3.0);
const LOG_SIGNAL_BOUNDS: (f64, f64) = (-5.0, 5.0);
const LOG_NOISE_BOUNDS: (f64, f64) = (-23.0, 0.0);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    /// Per-dimension length scales of `exp(-2 sin²(Δ/2) / ℓ²)`.
    pub length_scales: Vec<f64>,
    /// Signal variance of the standardized values.
    pub signal_variance: f64,
    /// Noise variance of the standardized values, at least [`NOISE_FLOOR`].
    pub noise_variance: f64,
}

impl KernelParams {
    pub fn isotropic(dim: usize, length_scale: f64) -> Self {
        Self {
            length_scales: vec![length_scale; dim],
            signal_variance: 1.0,
            noise_variance: 1e-6,
        }
    }

    fn to_log(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.length_scales.iter().map(|l| l.ln()).collect();
        v.push(self.signal_variance.ln());
        v.push(self.noise_variance.ln());
        v
    }

    fn from_log(v: &[f64]) -> Self {
        let d = v.len() - 2;
        Self {
            length_scales: v[..d].iter().map(|x| x.clamp(LOG_SCALE_BOUNDS.0, LOG_SCALE_BOUNDS.1).exp()).collect(),
            signal_variance: v[d].clamp(LOG_SIGNAL_BOUNDS.0, LOG_SIGNAL_BOUNDS.1).exp(),
            noise_variance: v[d + 1].clamp(LOG_NOISE_BOUNDS.0, LOG_NOISE_BOUNDS.1).exp().max(NOISE_FLOOR),
        }
    }
}

fn kernel(params: &KernelParams, a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for ((x, y), l) in a.iter().zip(b).zip(&params.length_scales) {
        let s = ((x - y) * 0.5).sin();
        acc += 2.0 * s * s / (l * l);
    }
    params.signal_variance * (-acc).exp()
}

#[derive(Clone, Debug)]
pub struct Surrogate {
    pub params: KernelParams,
    pub points: Vec<Vec<f64>>,
    pub values: Vec<f64>,
    mean: f64,
    scale: f64,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
}

fn standardize(values: &[f64]) -> (f64, f64, DVector<f64>) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let scale = if var > 0.0 { var.sqrt() } else { 1.0 };
    (mean, scale, DVector::from_iterator(values.len(), values.iter().map(|v| (v - mean) / scale)))
}

fn gram(params: &KernelParams, points: &[Vec<f64>]) -> DMatrix<f64> {
    let n = points.len();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let v = kernel(params, &points[i], &points[j]);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
        k[(i, i)] += params.noise_variance;
    }
    k
}

fn factor(params: &KernelParams, points: &[Vec<f64>]) -> Option<Cholesky<f64, Dyn>> {
    let mut jitter = 0.0;
    for _ in 0..6 {
        let mut k = gram(params, points);
        for i in 0..points.len() {
            k[(i, i)] += jitter;
        }
        if let Some(c) = Cholesky::new(k) {
            return Some(c);
        }
        jitter = if jitter == 0.0 { 1e-10 } else { jitter * 100.0 };
    }
    None
}

/// `2 sin²(Δ/2)` per dimension for every pair `j <= i`, row-major over pairs.
fn pair_features(points: &[Vec<f64>]) -> Vec<f64> {
    let n = points.len();
    let mut out = Vec::with_capacity(n * (n + 1) / 2 * points[0].len());
    for i in 0..n {
        for j in 0..=i {
            for (x, y) in points[i].iter().zip(&points[j]) {
                let s = ((x - y) * 0.5).sin();
                out.push(2.0 * s * s);
            }
        }
    }
    out
}

fn negative_log_likelihood(params: &KernelParams, n: usize, features: &[f64], y: &DVector<f64>) -> f64 {
    let inv: Vec<f64> = params.length_scales.iter().map(|l| 1.0 / (l * l)).collect();
    let dim = inv.len();
    let mut k = DMatrix::zeros(n, n);
    let mut chunks = features.chunks_exact(dim);
    for i in 0..n {
        for j in 0..=i {
            let f = chunks.next().expect("one feature row per pair");
            let acc: f64 = f.iter().zip(&inv).map(|(a, b)| a * b).sum();
            let v = params.signal_variance * (-acc).exp();
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
        k[(i, i)] += params.noise_variance;
    }
    let Some(chol) = Cholesky::new(k) else {
        return f64::INFINITY;
    };
    let alpha = chol.solve(y);
    let logdet: f64 = chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>() * 2.0;
    0.5 * y.dot(&alpha) + 0.5 * logdet
}

fn check_data(points: &[Vec<f64>], values: &[f64]) -> Result<usize> {
    if points.len() < 2 {
        return Err(invalid("surrogate fit needs at least two points"));
    }
    if points.len() != values.len() {
        return Err(invalid("point and value counts differ"));
    }
    let dim = points[0].len();
    if dim == 0 || points.iter().any(|p| p.len() != dim) {
        return Err(invalid("points must share a positive dimension"));
    }
    if values.iter().chain(points.iter().flatten()).any(|v| !v.is_finite()) {
        return Err(invalid("surrogate data must be finite"));
    }
    Ok(dim)
}

impl Surrogate {
    /// Conditions a GP with fixed hyperparameters on the data.
    pub fn condition(params: KernelParams, points: Vec<Vec<f64>>, values: Vec<f64>) -> Result<Self> {
        let dim = check_data(&points, &values)?;
        if params.length_scales.len() != dim {
            return Err(invalid("kernel dimension does not match the points"));
        }
        let (mean, scale, y) = standardize(&values);
        let chol = factor(&params, &points)
            .ok_or_else(|| Error::Numerical("surrogate kernel matrix is not positive definite".into()))?;
        let alpha = chol.solve(&y);
        Ok(Self { params, points, values, mean, scale, chol, alpha })
    }

    /// `(mean, std)` of the latent function at `x`.
    pub fn predict(&self, x: &[f64]) -> (f64, f64) {
        let k = DVector::from_iterator(self.points.len(), self.points.iter().map(|p| kernel(&self.params, p, x)));
        let mu = k.dot(&self.alpha);
        let v = self.chol.l_dirty().solve_lower_triangular(&k).unwrap_or_else(|| k.clone());
        let var = (self.params.signal_variance - v.norm_squared()).max(0.0);
        (self.mean + self.scale * mu, self.scale * var.sqrt())
    }
}

/// Maximum-likelihood fit by multi-start Nelder–Mead over log length scales,
/// log signal variance and log noise variance.
pub fn surrogate_fit(points: &[Vec<f64>], values: &[f64], starts: usize, seed: u64) -> Result<Surrogate> {
    surrogate_fit_from(points, values, starts, seed, None)
}

/// As [`surrogate_fit`], with the first start taken from `warm` when given.
pub fn surrogate_fit_from(
    points: &[Vec<f64>],
    values: &[f64],
    starts: usize,
    seed: u64,
    warm: Option<&KernelParams>,
) -> Result<Surrogate> {
    let dim = check_data(points, values)?;
    if warm.is_some_and(|w| w.length_scales.len() != dim) {
        return Err(invalid("kernel dimension does not match the points"));
    }
    let (_, _, y) = standardize(values);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let features = pair_features(points);
    let objective = |v: &[f64]| negative_log_likelihood(&KernelParams::from_log(v), points.len(), &features, &y);

    let mut best: Option<(f64, Vec<f64>)> = None;
    for s in 0..starts.max(1) {
        let start: Vec<f64> = if s == 0 {
            warm.cloned().unwrap_or_else(|| KernelParams::isotropic(dim, 1.0)).to_log()
        } else {
            let mut v: Vec<f64> = (0..dim).map(|_| rng.random_range(-2.0..1.5)).collect();
            v.push(rng.random_range(-1.0..1.0));
            v.push(rng.random_range(-20.0..-4.0));
            v
        };
        let (x, fx) = nelder_mead(&objective, &start, 0.5, MLE_EVALS_PER_PARAM * (dim + 2));
        if fx.is_finite() && best.as_ref().is_none_or(|b| fx < b.0) {
            best = Some((fx, x));
        }
    }
    let (_, x) = best.ok_or_else(|| Error::Numerical("marginal likelihood is not finite".into()))?;
    Surrogate::condition(KernelParams::from_log(&x), points.to_vec(), values.to_vec())
}

pub fn surrogate_predict(s: &Surrogate, point: &[f64]) -> (f64, f64) {
    s.predict(point)
}

/// Plain Nelder–Mead minimization; returns the best vertex and its value.
pub(crate) fn nelder_mead(
    f: &dyn Fn(&[f64]) -> f64,
    start: &[f64],
    step: f64,
    max_evals: usize,
) -> (Vec<f64>, f64) {
    let n = start.len();
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    simplex.push((start.to_vec(), f(start)));
    for i in 0..n {
        let mut v = start.to_vec();
        v[i] += step;
        let fv = f(&v);
        simplex.push((v, fv));
    }
    let mut evals = n + 1;
    let order = |s: &mut Vec<(Vec<f64>, f64)>| s.sort_by(|a, b| a.1.total_cmp(&b.1));
    while evals < max_evals {
        order(&mut simplex);
        let spread = simplex[n].1 - simplex[0].1;
        if spread.abs() < 1e-10 {
            break;
        }
        let centroid: Vec<f64> = (0..n)
            .map(|d| simplex[..n].iter().map(|v| v.0[d]).sum::<f64>() / n as f64)
            .collect();
        let along = |t: f64| -> Vec<f64> {
            centroid.iter().zip(&simplex[n].0).map(|(c, w)| c + t * (w - c)).collect()
        };
        let xr = along(-1.0);
        let fr = f(&xr);
        evals += 1;
        if fr < simplex[0].1 {
            let xe = along(-2.0);
            let fe = f(&xe);
            evals += 1;
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
        } else {
            let xc = if fr < simplex[n].1 { along(-0.5) } else { along(0.5) };
            let fc = f(&xc);
            evals += 1;
            if fc < simplex[n].1.min(fr) {
                simplex[n] = (xc, fc);
            } else {
                let best = simplex[0].0.clone();
                for v in simplex.iter_mut().skip(1) {
                    v.0 = best.iter().zip(&v.0).map(|(b, x)| b + 0.5 * (x - b)).collect();
                    v.1 = f(&v.0);
                    evals += 1;
                }
            }
        }
    }
    order(&mut simplex);
    simplex.swap_remove(0)
}
