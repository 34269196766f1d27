//! Linear readouts on measurement histograms: moments, closed-form and
//! empirical weights, and the exact bias/variance risk.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::linalg::{pairwise_sum, psd_pinv_solve, sorted_symmetric_eigen, truncated_least_squares, RELATIVE_CUTOFF};
use crate::prior::{ExpectationMethod, PriorSpec, WeightedGrid};
use crate::spin::{sample_counts, PreparedCircuit};
use crate::target::TargetSpec;

/// Default ridge for the closed-form solver.
pub const CLOSED_FORM_RIDGE: f64 = 0.0;
/// Default ridge for regression on sampled histograms.
pub const EMPIRICAL_RIDGE: f64 = 1e-10;

/// Shot budget `S`; `Infinite` drops the shot-noise term.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ShotsRepr", into = "ShotsRepr")]
pub enum ShotBudget {
    Finite(u64),
    Infinite,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum ShotsRepr {
    Count(u64),
    Word(String),
}

impl TryFrom<ShotsRepr> for ShotBudget {
    type Error = String;
    fn try_from(r: ShotsRepr) -> std::result::Result<Self, String> {
        match r {
            ShotsRepr::Count(0) => Err("shot budget must be at least 1".into()),
            ShotsRepr::Count(n) => Ok(Self::Finite(n)),
            ShotsRepr::Word(w) if w == "inf" || w == "infinite" => Ok(Self::Infinite),
            ShotsRepr::Word(w) => Err(format!("unrecognized shot budget '{w}'")),
        }
    }
}

impl From<ShotBudget> for ShotsRepr {
    fn from(s: ShotBudget) -> Self {
        match s {
            ShotBudget::Finite(n) => Self::Count(n),
            ShotBudget::Infinite => Self::Word("inf".into()),
        }
    }
}

impl ShotBudget {
    pub fn inverse(self) -> f64 {
        match self {
            Self::Finite(n) => 1.0 / n as f64,
            Self::Infinite => 0.0,
        }
    }

    pub fn validate(self) -> Result<()> {
        match self {
            Self::Finite(0) => Err(invalid("shot budget must be at least 1")),
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureMode {
    Exact,
    Sampled { shots: u64, seed: u64 },
}

/// Feature rows (exact probabilities or S-shot frequencies), one per input.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureTable {
    pub mode: FeatureMode,
    pub inputs: Vec<f64>,
    /// `N × K`
    pub rows: DMatrix<f64>,
    pub targets: Vec<f64>,
    /// Prior weights per row, summing to one.
    pub weights: Vec<f64>,
}

impl FeatureTable {
    pub fn len(&self) -> usize {
        self.rows.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.rows.ncols()
    }

    /// Expected loss of `weights` at budget `S`, summed row by row as
    /// `Σ ω [(f - wᵀx)² + (Σ_j x_j w_j² - (wᵀx)²)/S]`. Unlike the moment form this
    /// keeps full relative precision when the loss is close to zero.
    pub fn loss(&self, weights: &[f64], shots: ShotBudget) -> Result<f64> {
        if weights.len() != self.dim() {
            return Err(invalid(format!(
                "weight length {} does not match feature dimension {}",
                weights.len(),
                self.dim()
            )));
        }
        let inv = shots.inverse();
        let mut total = 0.0;
        for n in 0..self.len() {
            let row = self.rows.row(n);
            let pred: f64 = row.iter().zip(weights).map(|(x, w)| x * w).sum();
            let second: f64 = row.iter().zip(weights).map(|(x, w)| x * w * w).sum();
            let noise = (second - pred * pred).max(0.0);
            total += self.weights[n] * ((self.targets[n] - pred).powi(2) + inv * noise);
        }
        Ok(total)
    }
}

/// SplitMix64 step used to derive per-row seeds.
pub(crate) fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn build_feature_table(
    circuit: &PreparedCircuit,
    grid: &WeightedGrid,
    target: &TargetSpec,
    mode: FeatureMode,
) -> Result<FeatureTable> {
    if grid.nodes.len() != grid.weights.len() {
        return Err(invalid("grid nodes and weights differ in length"));
    }
    let mut rows = circuit.probability_table(&grid.nodes)?;
    if let FeatureMode::Sampled { shots, seed } = mode {
        if shots == 0 {
            return Err(invalid("shot count must be at least 1"));
        }
        for r in 0..rows.nrows() {
            let probs: Vec<f64> = rows.row(r).iter().copied().collect();
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, r as u64));
            let counts = sample_counts(&probs, shots, &mut rng);
            for (c, n) in counts.into_iter().enumerate() {
                rows[(r, c)] = n as f64 / shots as f64;
            }
        }
    }
    Ok(FeatureTable {
        mode,
        inputs: grid.nodes.clone(),
        rows,
        targets: grid.nodes.iter().map(|&u| target.eval(u)).collect(),
        weights: grid.weights.clone(),
    })
}

/// Prior-averaged second moments of the features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentSet {
    /// `E[x xᵀ]`
    pub gram: DMatrix<f64>,
    /// `E[diag(x) - x xᵀ]`
    pub covariance: DMatrix<f64>,
    /// `E[f* x]`
    pub cross: DVector<f64>,
    /// `E[f*²]`
    pub target_power: f64,
    /// `E[f*]`
    pub target_mean: f64,
}

struct Partial {
    gram: DMatrix<f64>,
    diag: DVector<f64>,
    cross: DVector<f64>,
    power: f64,
    mean: f64,
}

impl Partial {
    fn add(mut self, other: Partial) -> Partial {
        self.gram += other.gram;
        self.diag += other.diag;
        self.cross += other.cross;
        self.power += other.power;
        self.mean += other.mean;
        self
    }
}

const MOMENT_LEAF: usize = 64;

fn accumulate(table: &FeatureTable, lo: usize, hi: usize) -> Partial {
    if hi - lo > MOMENT_LEAF {
        let mid = lo + (hi - lo) / 2;
        let (a, b) = rayon::join(|| accumulate(table, lo, mid), || accumulate(table, mid, hi));
        return a.add(b);
    }
    let k = table.dim();
    let mut p = Partial {
        gram: DMatrix::zeros(k, k),
        diag: DVector::zeros(k),
        cross: DVector::zeros(k),
        power: 0.0,
        mean: 0.0,
    };
    for n in lo..hi {
        let w = table.weights[n];
        let f = table.targets[n];
        let x = table.rows.row(n).transpose();
        p.gram.ger(w, &x, &x, 1.0);
        p.diag.axpy(w, &x, 1.0);
        p.cross.axpy(w * f, &x, 1.0);
        p.power += w * f * f;
        p.mean += w * f;
    }
    p
}

/// Moments of an exact-probability table; the reduction tree depends only on
/// the row count, so results do not depend on the thread count.
pub fn compute_moments(table: &FeatureTable) -> Result<MomentSet> {
    if !matches!(table.mode, FeatureMode::Exact) {
        return Err(invalid("moments require an exact-probability feature table"));
    }
    if table.is_empty() {
        return Err(invalid("feature table is empty"));
    }
    let p = accumulate(table, 0, table.len());
    let mut gram = p.gram;
    // symmetrize the rank-one accumulation
    gram = (&gram + gram.transpose()) * 0.5;
    let covariance = DMatrix::from_diagonal(&p.diag) - &gram;
    Ok(MomentSet {
        gram,
        covariance,
        cross: p.cross,
        target_power: p.power,
        target_mean: p.mean,
    })
}

impl MomentSet {
    /// `G + V/S`
    pub fn noisy_gram(&self, shots: ShotBudget) -> DMatrix<f64> {
        &self.gram + &self.covariance * shots.inverse()
    }

    /// Expected loss of weights `w` at budget `S`: `t2 - 2bᵀw + wᵀ(G + V/S)w`.
    pub fn loss(&self, weights: &DVector<f64>, shots: ShotBudget) -> f64 {
        let m = self.noisy_gram(shots);
        self.target_power - 2.0 * self.cross.dot(weights) + weights.dot(&(m * weights))
    }

    pub fn dim(&self) -> usize {
        self.cross.len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReadoutMode {
    ClosedForm,
    Empirical,
    /// Trained on the first `retained` eigentasks.
    Eigentask { retained: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearReadout {
    /// Weights on the raw histogram (composite weights in eigentask mode).
    pub weights: Vec<f64>,
    /// Weights on the eigentask features, eigentask mode only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eigentask_weights: Option<Vec<f64>>,
    pub mode: ReadoutMode,
    pub shots: ShotBudget,
}

impl LinearReadout {
    pub fn weight_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.weights)
    }
}

/// Closed-form optimum `w = pinv(G + V/S + λI) b` with its predicted loss.
pub fn optimal_weights(
    moments: &MomentSet,
    shots: ShotBudget,
    ridge: f64,
) -> Result<(LinearReadout, f64)> {
    shots.validate()?;
    if !(ridge >= 0.0 && ridge.is_finite()) {
        return Err(invalid(format!("ridge must be non-negative, got {ridge}")));
    }
    let k = moments.dim();
    let m = moments.noisy_gram(shots) + DMatrix::<f64>::identity(k, k) * ridge;
    let w = psd_pinv_solve(&m, &moments.cross, RELATIVE_CUTOFF);
    let loss = moments.loss(&w, shots);
    Ok((
        LinearReadout {
            weights: w.iter().copied().collect(),
            eigentask_weights: None,
            mode: ReadoutMode::ClosedForm,
            shots,
        },
        loss,
    ))
}

/// Relative singular-value cutoff of [`table_optimal_weights`] for an `m × n`
/// system; singular values carry absolute error near `max(m, n) ε s_max`.
pub fn singular_cutoff(rows: usize, cols: usize) -> f64 {
    rows.max(cols) as f64 * f64::EPSILON
}

/// The closed-form optimum of [`optimal_weights`], solved from the table
/// rather than its moments. The loss is written as the least-squares problem
/// `‖[R; B] w - [Qᵀy; 0]‖² + λ‖w‖²` with `QR = √ω X`, `y = √ω f` and
/// `BᵀB = V/S`, which avoids squaring the condition number of `G`. Near
/// `S = ∞` the informative directions of `G` can sit below any eigenvalue
/// cutoff that is safe for `G` itself.
pub fn table_optimal_weights(table: &FeatureTable, shots: ShotBudget, ridge: f64) -> Result<(LinearReadout, f64)> {
    shots.validate()?;
    if table.is_empty() {
        return Err(invalid("feature table is empty"));
    }
    if !(ridge >= 0.0 && ridge.is_finite()) {
        return Err(invalid(format!("ridge must be non-negative, got {ridge}")));
    }
    let n = table.len();
    let k = table.dim();
    let scale: Vec<f64> = table.weights.iter().map(|w| w.max(0.0).sqrt()).collect();
    let a = DMatrix::from_fn(n, k, |r, c| scale[r] * table.rows[(r, c)]);
    let y = DVector::from_fn(n, |r, _| scale[r] * table.targets[r]);
    let qr = a.clone().qr();
    let r = qr.r();
    let qty = qr.q().transpose() * &y;

    let mut blocks = vec![r];
    let mut rhs = vec![qty];
    let inv = shots.inverse();
    if inv > 0.0 {
        let diag = DVector::from_fn(k, |c, _| (0..n).map(|i| scale[i] * a[(i, c)]).sum::<f64>());
        let v = DMatrix::from_diagonal(&diag) - a.transpose() * &a;
        let (values, vectors) = sorted_symmetric_eigen(&v);
        let b = DMatrix::from_fn(k, k, |i, j| (values[i].max(0.0) * inv).sqrt() * vectors[(j, i)]);
        blocks.push(b);
        rhs.push(DVector::zeros(k));
    }
    let rows: usize = blocks.iter().map(|m| m.nrows()).sum();
    let mut m = DMatrix::zeros(rows, k);
    let mut t = DVector::zeros(rows);
    let mut at = 0;
    for (blk, v) in blocks.iter().zip(&rhs) {
        m.view_mut((at, 0), (blk.nrows(), k)).copy_from(blk);
        t.rows_mut(at, blk.nrows()).copy_from(v);
        at += blk.nrows();
    }
    let w = truncated_least_squares(&m, &t, singular_cutoff(rows, k), ridge);
    let weights: Vec<f64> = w.iter().copied().collect();
    let loss = table.loss(&weights, shots)?;
    Ok((
        LinearReadout { weights, eigentask_weights: None, mode: ReadoutMode::ClosedForm, shots },
        loss,
    ))
}

/// Weighted least squares `min Σ ω_n (f_n - wᵀX_n)² + λ|w|²` via SVD.
pub fn empirical_weights(table: &FeatureTable, ridge: f64) -> Result<LinearReadout> {
    if table.is_empty() {
        return Err(invalid("feature table is empty"));
    }
    if !(ridge >= 0.0 && ridge.is_finite()) {
        return Err(invalid(format!("ridge must be non-negative, got {ridge}")));
    }
    let n = table.len();
    let k = table.dim();
    let scale: Vec<f64> = table.weights.iter().map(|w| w.max(0.0).sqrt()).collect();
    let a = DMatrix::from_fn(n, k, |r, c| scale[r] * table.rows[(r, c)]);
    let y = DVector::from_fn(n, |r, _| scale[r] * table.targets[r]);
    // relative cutoff on s², matching the eigenvalue cutoff of the closed form
    let w = truncated_least_squares(&a, &y, RELATIVE_CUTOFF.sqrt(), ridge);
    let shots = match table.mode {
        FeatureMode::Exact => ShotBudget::Infinite,
        FeatureMode::Sampled { shots, .. } => ShotBudget::Finite(shots),
    };
    Ok(LinearReadout {
        weights: w.iter().copied().collect(),
        eigentask_weights: None,
        mode: ReadoutMode::Empirical,
        shots,
    })
}

pub fn predict(readout: &LinearReadout, features: &[f64]) -> Result<f64> {
    if features.len() != readout.weights.len() {
        return Err(invalid(format!(
            "feature length {} does not match readout length {}",
            features.len(),
            readout.weights.len()
        )));
    }
    Ok(readout.weights.iter().zip(features).map(|(w, x)| w * x).sum())
}

/// Conditional risk of the linear estimator at one input.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointwiseMse {
    pub u: f64,
    pub mse: f64,
    pub bias_sq: f64,
    pub variance: f64,
}

pub(crate) fn mse_from_probs(
    probs: &[f64],
    weights: &[f64],
    target: f64,
    shots: ShotBudget,
) -> (f64, f64) {
    let mean: f64 = probs.iter().zip(weights).map(|(x, w)| x * w).sum();
    let second: f64 = probs.iter().zip(weights).map(|(x, w)| x * w * w).sum();
    let bias_sq = (target - mean) * (target - mean);
    let variance = ((second - mean * mean) * shots.inverse()).max(0.0);
    (bias_sq, variance)
}

/// `MSE(u) = (f*(u) - wᵀx(u))² + wᵀΣ(u)w / S`, exact.
pub fn pointwise_mse(
    circuit: &PreparedCircuit,
    readout: &LinearReadout,
    target: &TargetSpec,
    u: f64,
    shots: ShotBudget,
) -> Result<PointwiseMse> {
    shots.validate()?;
    let probs = circuit.probabilities(u)?.probs;
    if probs.len() != readout.weights.len() {
        return Err(invalid("readout length does not match the circuit"));
    }
    let (bias_sq, variance) = mse_from_probs(&probs, &readout.weights, target.eval(u), shots);
    Ok(PointwiseMse { u, mse: bias_sq + variance, bias_sq, variance })
}

fn curve_from_table(
    probs: &DMatrix<f64>,
    nodes: &[f64],
    readout: &LinearReadout,
    target: &TargetSpec,
    shots: ShotBudget,
) -> Vec<PointwiseMse> {
    nodes
        .iter()
        .enumerate()
        .map(|(n, &u)| {
            let row: Vec<f64> = probs.row(n).iter().copied().collect();
            let (bias_sq, variance) = mse_from_probs(&row, &readout.weights, target.eval(u), shots);
            PointwiseMse { u, mse: bias_sq + variance, bias_sq, variance }
        })
        .collect()
}

/// Uniform plotting grid covering the bulk of the prior.
pub fn curve_grid(prior: &PriorSpec, points: usize) -> Vec<f64> {
    let (lo, hi) = if prior.is_truncated() {
        (-std::f64::consts::PI, std::f64::consts::PI)
    } else {
        let comps = prior.components();
        (
            comps.iter().map(|c| c.mean - 4.0 * c.sigma).fold(f64::INFINITY, f64::min),
            comps.iter().map(|c| c.mean + 4.0 * c.sigma).fold(f64::NEG_INFINITY, f64::max),
        )
    };
    let points = points.max(2);
    (0..points)
        .map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64)
        .collect()
}

pub const CURVE_POINTS: usize = 201;

/// Risks below this fraction of `E[f*²]` are round-off and reported as zero.
pub const RISK_FLOOR: f64 = 1e-24;

/// Decibels of a linear risk; `None` for a vanishing risk.
pub fn to_db(value: f64) -> Option<f64> {
    (value > 0.0).then(|| 10.0 * value.log10())
}

pub fn from_db(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Effective measurement variance `1/(1/bmse - 1/σ²)` when positive.
pub fn effective_measurement_variance(bmse: f64, prior_variance: f64) -> Option<f64> {
    if bmse <= 0.0 {
        return Some(0.0);
    }
    let inv = 1.0 / bmse - 1.0 / prior_variance;
    (inv > 0.0).then(|| 1.0 / inv)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    pub bmse: f64,
    /// `None` encodes −∞ (vanishing risk).
    pub bmse_db: Option<f64>,
    pub capacity: f64,
    pub mse_m: Option<f64>,
    pub prior_variance: f64,
    pub mse_curve: Vec<PointwiseMse>,
}

pub fn capacity(bmse: f64, target_power: f64) -> f64 {
    if target_power <= 0.0 {
        return if bmse <= 0.0 { 1.0 } else { 0.0 };
    }
    1.0 - bmse / target_power
}

/// Prior-averaged exact risk of a trained readout.
pub fn bayes_risk(
    circuit: &PreparedCircuit,
    readout: &LinearReadout,
    prior: &PriorSpec,
    target: &TargetSpec,
    shots: ShotBudget,
    method: ExpectationMethod,
) -> Result<RiskReport> {
    shots.validate()?;
    let grid = prior.weighted_grid(method)?;
    let probs = circuit.probability_table(&grid.nodes)?;
    if probs.ncols() != readout.weights.len() {
        return Err(invalid("readout length does not match the circuit"));
    }
    let pointwise = curve_from_table(&probs, &grid.nodes, readout, target, shots);
    let terms: Vec<f64> = pointwise.iter().zip(&grid.weights).map(|(p, w)| w * p.mse).collect();
    let power = grid.expectation(|u| target.eval(u).powi(2));
    let mut bmse = pairwise_sum(&terms).max(0.0);
    if bmse <= RISK_FLOOR * power {
        bmse = 0.0;
    }
    let prior_variance = prior.variance();

    let curve_nodes = curve_grid(prior, CURVE_POINTS);
    let curve_probs = circuit.probability_table(&curve_nodes)?;
    Ok(RiskReport {
        bmse,
        bmse_db: to_db(bmse),
        capacity: capacity(bmse, power),
        mse_m: effective_measurement_variance(bmse, prior_variance),
        prior_variance,
        mse_curve: curve_from_table(&curve_probs, &curve_nodes, readout, target, shots),
    })
}

/// Risk of the plug-in estimate `g(wᵀX)` for `g(u)`, where the readout
/// estimates `u` itself. Exact for `S = 1` (the estimate is `w_j` with
/// probability `x_j`); larger budgets are averaged over `draws` seeded
/// histograms per node.
pub fn plugin_risk(
    circuit: &PreparedCircuit,
    readout: &LinearReadout,
    prior: &PriorSpec,
    outer: &TargetSpec,
    shots: ShotBudget,
    method: ExpectationMethod,
    draws: usize,
    seed: u64,
) -> Result<f64> {
    shots.validate()?;
    let grid = prior.weighted_grid(method)?;
    let probs = circuit.probability_table(&grid.nodes)?;
    let w = &readout.weights;
    let terms: Vec<f64> = match shots {
        ShotBudget::Finite(1) => {
            let mapped: Vec<f64> = w.iter().map(|&v| outer.eval(v)).collect();
            grid.nodes
                .iter()
                .enumerate()
                .map(|(n, &u)| {
                    let f = outer.eval(u);
                    let risk: f64 = probs
                        .row(n)
                        .iter()
                        .zip(&mapped)
                        .map(|(x, g)| x * (f - g) * (f - g))
                        .sum();
                    grid.weights[n] * risk
                })
                .collect()
        }
        ShotBudget::Infinite => grid
            .nodes
            .iter()
            .enumerate()
            .map(|(n, &u)| {
                let est: f64 = probs.row(n).iter().zip(w).map(|(x, v)| x * v).sum();
                let d = outer.eval(u) - outer.eval(est);
                grid.weights[n] * d * d
            })
            .collect(),
        ShotBudget::Finite(s) => {
            let draws = draws.max(1);
            grid.nodes
                .iter()
                .enumerate()
                .map(|(n, &u)| {
                    let row: Vec<f64> = probs.row(n).iter().copied().collect();
                    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, n as u64));
                    let f = outer.eval(u);
                    let mut acc = 0.0;
                    for _ in 0..draws {
                        let counts = sample_counts(&row, s, &mut rng);
                        let est: f64 = counts
                            .iter()
                            .zip(w)
                            .map(|(&c, v)| c as f64 / s as f64 * v)
                            .sum();
                        let d = f - outer.eval(est);
                        acc += d * d;
                    }
                    grid.weights[n] * acc / draws as f64
                })
                .collect()
        }
    };
    Ok(pairwise_sum(&terms))
}
