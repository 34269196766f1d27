//! Priors over the input phase, Gauss–Hermite rules and datasets.

use std::f64::consts::{PI, SQRT_2};

use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::target::TargetSpec;

/// Default dense-grid resolution for truncated priors and final risk reports.
pub const DEFAULT_GRID_POINTS: usize = 4097;
/// Half-width, in component standard deviations, of dense grids for untruncated priors.
const GRID_HALF_WIDTH_SIGMAS: f64 = 10.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent {
    pub weight: f64,
    pub mean: f64,
    pub sigma: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PriorSpec {
    Gaussian {
        sigma: f64,
        #[serde(default)]
        mean: f64,
    },
    /// Gaussian conditioned on `u ∈ [-π, π]`.
    TruncatedGaussian {
        sigma: f64,
        #[serde(default)]
        mean: f64,
    },
    Mixture { components: Vec<MixtureComponent> },
}

/// Nodes and normalized weights representing an expectation over the prior.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightedGrid {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl WeightedGrid {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn expectation(&self, g: impl Fn(f64) -> f64) -> f64 {
        let terms: Vec<f64> = self
            .nodes
            .iter()
            .zip(&self.weights)
            .map(|(&u, &w)| w * g(u))
            .collect();
        crate::linalg::pairwise_sum(&terms)
    }

    pub fn uniform(nodes: Vec<f64>) -> Self {
        let w = 1.0 / nodes.len() as f64;
        Self {
            weights: vec![w; nodes.len()],
            nodes,
        }
    }
}

/// How an expectation over the prior is evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExpectationMethod {
    MonteCarlo { samples: usize, seed: u64 },
    /// Gauss–Hermite per Gaussian component.
    Quadrature { nodes: usize },
    /// Trapezoid rule on a dense uniform grid.
    Grid { points: usize },
}

impl PriorSpec {
    pub fn gaussian(sigma: f64) -> Self {
        Self::Gaussian { sigma, mean: 0.0 }
    }

    pub fn truncated_gaussian(sigma: f64) -> Self {
        Self::TruncatedGaussian { sigma, mean: 0.0 }
    }

    /// Equal-weight two-component mixture at `±offset`.
    pub fn symmetric_mixture(offset: f64, sigma: f64) -> Self {
        Self::Mixture {
            components: vec![
                MixtureComponent { weight: 0.5, mean: offset, sigma },
                MixtureComponent { weight: 0.5, mean: -offset, sigma },
            ],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let check_sigma = |s: f64| {
            if s.is_finite() && s > 0.0 {
                Ok(())
            } else {
                Err(invalid(format!("prior width must be positive and finite, got {s}")))
            }
        };
        let check_mean = |m: f64| {
            if m.is_finite() {
                Ok(())
            } else {
                Err(invalid(format!("prior mean must be finite, got {m}")))
            }
        };
        match self {
            Self::Gaussian { sigma, mean } => {
                check_sigma(*sigma)?;
                check_mean(*mean)
            }
            Self::TruncatedGaussian { sigma, mean } => {
                check_sigma(*sigma)?;
                check_mean(*mean)?;
                if mean.abs() > PI {
                    return Err(invalid("truncated prior mean must lie in [-π, π]"));
                }
                Ok(())
            }
            Self::Mixture { components } => {
                if components.is_empty() {
                    return Err(invalid("mixture needs at least one component"));
                }
                for c in components {
                    check_sigma(c.sigma)?;
                    check_mean(c.mean)?;
                    if !(c.weight.is_finite() && c.weight > 0.0) {
                        return Err(invalid(format!(
                            "mixture weights must be positive, got {}",
                            c.weight
                        )));
                    }
                }
                let total: f64 = components.iter().map(|c| c.weight).sum();
                if (total - 1.0).abs() > 1e-12 {
                    return Err(invalid(format!("mixture weights sum to {total}, not 1")));
                }
                Ok(())
            }
        }
    }

    /// Gaussian components as `(weight, mean, sigma)`; the truncated variant
    /// reports its untruncated parent.
    pub fn components(&self) -> Vec<MixtureComponent> {
        match self {
            Self::Gaussian { sigma, mean } | Self::TruncatedGaussian { sigma, mean } => {
                vec![MixtureComponent { weight: 1.0, mean: *mean, sigma: *sigma }]
            }
            Self::Mixture { components } => components.clone(),
        }
    }

    pub fn is_truncated(&self) -> bool {
        matches!(self, Self::TruncatedGaussian { .. })
    }

    pub fn in_support(&self, u: f64) -> bool {
        match self {
            Self::TruncatedGaussian { .. } => (-PI..=PI).contains(&u),
            _ => u.is_finite(),
        }
    }

    /// Unnormalized density for the truncated variant, normalized otherwise.
    fn density(&self, u: f64) -> f64 {
        self.components()
            .iter()
            .map(|c| {
                let z = (u - c.mean) / c.sigma;
                c.weight * (-0.5 * z * z).exp() / (c.sigma * (2.0 * PI).sqrt())
            })
            .sum()
    }

    pub fn mean(&self) -> f64 {
        match self {
            Self::TruncatedGaussian { .. } => self
                .dense_grid(DEFAULT_GRID_POINTS)
                .expectation(|u| u),
            _ => self.components().iter().map(|c| c.weight * c.mean).sum(),
        }
    }

    /// Variance of the prior; the truncated variant integrates on the dense grid.
    pub fn variance(&self) -> f64 {
        match self {
            Self::TruncatedGaussian { .. } => {
                let grid = self.dense_grid(DEFAULT_GRID_POINTS);
                let mean = grid.expectation(|u| u);
                grid.expectation(|u| (u - mean) * (u - mean))
            }
            _ => {
                let comps = self.components();
                let mean: f64 = comps.iter().map(|c| c.weight * c.mean).sum();
                comps
                    .iter()
                    .map(|c| c.weight * (c.sigma * c.sigma + c.mean * c.mean))
                    .sum::<f64>()
                    - mean * mean
            }
        }
    }

    pub fn sample(&self, count: usize, seed: u64) -> Result<Vec<f64>> {
        self.validate()?;
        if count == 0 {
            return Err(invalid("sample count must be at least 1"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let comps = self.components();
        let normals: Vec<Normal<f64>> = comps
            .iter()
            .map(|c| Normal::new(c.mean, c.sigma).expect("validated width"))
            .collect();
        let mut out = Vec::with_capacity(count);
        while out.len() < count {
            let idx = if comps.len() == 1 {
                0
            } else {
                let r: f64 = rng.random();
                let mut acc = 0.0;
                let mut pick = comps.len() - 1;
                for (i, c) in comps.iter().enumerate() {
                    acc += c.weight;
                    if r < acc {
                        pick = i;
                        break;
                    }
                }
                pick
            };
            let u = normals[idx].sample(&mut rng);
            if self.in_support(u) {
                out.push(u);
            }
        }
        Ok(out)
    }

    /// Gauss–Hermite nodes mapped through every Gaussian component.
    pub fn quadrature_grid(&self, nodes: usize) -> Result<WeightedGrid> {
        self.validate()?;
        if self.is_truncated() {
            return Err(Error::UnsupportedMethod(
                "Gauss-Hermite quadrature does not apply to a truncated prior; use a grid or Monte Carlo".into(),
            ));
        }
        self.untruncated_quadrature_grid(nodes)
    }

    /// Quadrature over the untruncated Gaussian parent(s), ignoring any truncation.
    pub fn untruncated_quadrature_grid(&self, nodes: usize) -> Result<WeightedGrid> {
        let rule = gauss_hermite(nodes)?;
        let mut grid = WeightedGrid { nodes: Vec::new(), weights: Vec::new() };
        for c in self.components() {
            for (x, q) in rule.nodes.iter().zip(&rule.weights) {
                grid.nodes.push(SQRT_2 * c.sigma * x + c.mean);
                grid.weights.push(c.weight * q / PI.sqrt());
            }
        }
        Ok(grid)
    }

    /// Trapezoid grid: `[-π, π]` for the truncated variant, otherwise
    /// ±10σ around the extreme component means.
    pub fn dense_grid(&self, points: usize) -> WeightedGrid {
        let points = points.max(3);
        let (lo, hi) = match self {
            Self::TruncatedGaussian { .. } => (-PI, PI),
            _ => {
                let comps = self.components();
                let lo = comps
                    .iter()
                    .map(|c| c.mean - GRID_HALF_WIDTH_SIGMAS * c.sigma)
                    .fold(f64::INFINITY, f64::min);
                let hi = comps
                    .iter()
                    .map(|c| c.mean + GRID_HALF_WIDTH_SIGMAS * c.sigma)
                    .fold(f64::NEG_INFINITY, f64::max);
                (lo, hi)
            }
        };
        let step = (hi - lo) / (points - 1) as f64;
        let nodes: Vec<f64> = (0..points).map(|i| lo + step * i as f64).collect();
        let mut weights: Vec<f64> = nodes.iter().map(|&u| self.density(u)).collect();
        weights[0] *= 0.5;
        weights[points - 1] *= 0.5;
        let total = crate::linalg::pairwise_sum(&weights);
        weights.iter_mut().for_each(|w| *w /= total);
        WeightedGrid { nodes, weights }
    }

    pub fn weighted_grid(&self, method: ExpectationMethod) -> Result<WeightedGrid> {
        self.validate()?;
        match method {
            ExpectationMethod::MonteCarlo { samples, seed } => {
                Ok(WeightedGrid::uniform(self.sample(samples, seed)?))
            }
            ExpectationMethod::Quadrature { nodes } => self.quadrature_grid(nodes),
            ExpectationMethod::Grid { points } => Ok(self.dense_grid(points)),
        }
    }
}

/// `E_u[g(u)]` under the prior.
pub fn expectation(
    prior: &PriorSpec,
    g: impl Fn(f64) -> f64,
    method: ExpectationMethod,
) -> Result<f64> {
    Ok(prior.weighted_grid(method)?.expectation(g))
}

/// Nodes and weights for `∫ e^{-x²} g(x) dx`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadratureRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn integrate(&self, g: impl Fn(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&x, &w)| w * g(x)).sum()
    }
}

pub const MAX_HERMITE_NODES: usize = 200;

/// Gauss–Hermite rule from the eigenproblem of the Hermite Jacobi matrix.
pub fn gauss_hermite(n: usize) -> Result<QuadratureRule> {
    if n == 0 || n > MAX_HERMITE_NODES {
        return Err(invalid(format!(
            "Gauss-Hermite node count must be in 1..={MAX_HERMITE_NODES}, got {n}"
        )));
    }
    // Jacobi matrix of the physicists' Hermite recurrence: zero diagonal,
    // off-diagonal sqrt(k/2).
    let mut jacobi = DMatrix::<f64>::zeros(n, n);
    for k in 1..n {
        let b = (k as f64 / 2.0).sqrt();
        jacobi[(k, k - 1)] = b;
        jacobi[(k - 1, k)] = b;
    }
    let eig = SymmetricEigen::new(jacobi);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let v0 = eig.eigenvectors[(0, i)];
            (eig.eigenvalues[i], PI.sqrt() * v0 * v0)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));

    // Enforce the exact reflection symmetry of the rule.
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        let j = n - 1 - i;
        nodes[i] = 0.5 * (pairs[i].0 - pairs[j].0);
        weights[i] = 0.5 * (pairs[i].1 + pairs[j].1);
    }
    Ok(QuadratureRule { nodes, weights })
}

/// Inputs and targets with a train/test split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub inputs: Vec<f64>,
    pub targets: Vec<f64>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
}

pub const DEFAULT_TRAIN_SIZE: usize = 10_000;
pub const DEFAULT_TEST_SIZE: usize = 2_000;

impl Dataset {
    pub fn generate(
        prior: &PriorSpec,
        target: &TargetSpec,
        n_train: usize,
        n_test: usize,
        seed: u64,
    ) -> Result<Self> {
        let total = n_train + n_test;
        let inputs = prior.sample(total, seed)?;
        let targets = inputs.iter().map(|&u| target.eval(u)).collect();
        let mut order: Vec<usize> = (0..total).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ SPLIT_STREAM);
        order.shuffle(&mut rng);
        let test = order.split_off(n_train);
        let mut train = order;
        train.sort_unstable();
        let mut test = test;
        test.sort_unstable();
        Ok(Self { inputs, targets, train, test, seed })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn subset(&self, indices: &[usize]) -> (Vec<f64>, Vec<f64>) {
        (
            indices.iter().map(|&i| self.inputs[i]).collect(),
            indices.iter().map(|&i| self.targets[i]).collect(),
        )
    }
}

// Keeps the split permutation independent of the input draws.
const SPLIT_STREAM: u64 = 0x5EED_0000_0000_0001;
