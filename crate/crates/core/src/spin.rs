//! Collective-spin circuits restricted to the symmetric `j = L/2` sector.
//!
//! Basis index `k` runs over `0..=L` and counts spin-up qubits, so the
//! magnetic quantum number is `m = k - L/2` and `Jz` is diagonal with
//! ascending entries. Every outcome distribution in the crate uses the same
//! index.

use std::f64::consts::FRAC_PI_2;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

pub type C64 = Complex64;

/// Largest supported qubit count.
pub const MAX_QUBITS: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

/// Collective spin operators of `L` qubits in the Dicke basis.
#[derive(Clone, Debug)]
pub struct SpinAlgebra {
    qubits: usize,
    m: Vec<f64>,
    jx: DMatrix<C64>,
    jy: DMatrix<C64>,
    jz: DMatrix<C64>,
    jx2: DMatrix<C64>,
    jz2: DMatrix<C64>,
    // Jx = V diag(λ) Vᵀ with real V.
    jx_eigenvalues: Vec<f64>,
    jx_eigenvectors: DMatrix<f64>,
}

impl SpinAlgebra {
    pub fn new(qubits: usize) -> Result<Self> {
        if qubits == 0 || qubits > MAX_QUBITS {
            return Err(invalid(format!(
                "qubit count must be in 1..={MAX_QUBITS}, got {qubits}"
            )));
        }
        let dim = qubits + 1;
        let j = qubits as f64 / 2.0;
        let m: Vec<f64> = (0..dim).map(|k| k as f64 - j).collect();

        // J+ |j,m> = sqrt(j(j+1) - m(m+1)) |j,m+1>
        let mut raise = DMatrix::<f64>::zeros(dim, dim);
        for k in 0..dim - 1 {
            raise[(k + 1, k)] = (j * (j + 1.0) - m[k] * (m[k] + 1.0)).sqrt();
        }
        let lower = raise.transpose();
        let jx_real = (&raise + &lower) * 0.5;
        let jy_imag = (&lower - &raise) * 0.5; // Jy = (J+ - J-)/(2i) = i (J- - J+)/2

        let jx = jx_real.map(|v| C64::new(v, 0.0));
        let jy = jy_imag.map(|v| C64::new(0.0, v));
        let jz = DMatrix::from_diagonal(&DVector::from_iterator(
            dim,
            m.iter().map(|&v| C64::new(v, 0.0)),
        ));
        let jx2 = &jx * &jx;
        let jz2 = &jz * &jz;

        let eig = SymmetricEigen::new(jx_real);
        Ok(Self {
            qubits,
            m,
            jx,
            jy,
            jz,
            jx2,
            jz2,
            jx_eigenvalues: eig.eigenvalues.iter().copied().collect(),
            jx_eigenvectors: eig.eigenvectors,
        })
    }

    pub fn qubits(&self) -> usize {
        self.qubits
    }

    /// Number of outcomes / Dicke basis states, `L + 1`.
    pub fn dim(&self) -> usize {
        self.qubits + 1
    }

    /// Jz eigenvalues `m` along the basis index.
    pub fn m_values(&self) -> &[f64] {
        &self.m
    }

    pub fn operator(&self, axis: Axis) -> &DMatrix<C64> {
        match axis {
            Axis::X => &self.jx,
            Axis::Y => &self.jy,
            Axis::Z => &self.jz,
        }
    }

    pub fn jx_squared(&self) -> &DMatrix<C64> {
        &self.jx2
    }

    pub fn jz_squared(&self) -> &DMatrix<C64> {
        &self.jz2
    }

    /// `exp(-i angle J_axis)` as a dense matrix.
    pub fn rotation_matrix(&self, axis: Axis, angle: f64) -> Result<DMatrix<C64>> {
        check_angle(angle)?;
        Ok(match axis {
            Axis::Z => diagonal_phase(self.m.iter().map(|&m| angle * m)),
            Axis::X => self.jx_function(|lambda| angle * lambda),
            Axis::Y => {
                // e^{-iφJy} = Rz(π/2) e^{-iφJx} Rz(-π/2)
                let rz = diagonal_phase(self.m.iter().map(|&m| FRAC_PI_2 * m));
                let rz_inv = rz.adjoint();
                &rz * self.jx_function(|lambda| angle * lambda) * rz_inv
            }
        })
    }

    /// `exp(-i angle J_axis²)` as a dense matrix.
    pub fn twist_matrix(&self, axis: Axis, angle: f64) -> Result<DMatrix<C64>> {
        check_angle(angle)?;
        match axis {
            Axis::Z => Ok(diagonal_phase(self.m.iter().map(|&m| angle * m * m))),
            Axis::X => Ok(self.jx_function(|lambda| angle * lambda * lambda)),
            Axis::Y => Err(invalid("twisting is only defined about x and z")),
        }
    }

    // V diag(exp(-i phase(λ))) Vᵀ
    fn jx_function(&self, phase: impl Fn(f64) -> f64) -> DMatrix<C64> {
        let dim = self.dim();
        let v = &self.jx_eigenvectors;
        let phases: Vec<C64> = self
            .jx_eigenvalues
            .iter()
            .map(|&l| C64::from_polar(1.0, -phase(l)))
            .collect();
        let mut out = DMatrix::<C64>::zeros(dim, dim);
        for c in 0..dim {
            for r in 0..dim {
                let mut acc = C64::new(0.0, 0.0);
                for (k, p) in phases.iter().enumerate() {
                    acc += p * (v[(r, k)] * v[(c, k)]);
                }
                out[(r, c)] = acc;
            }
        }
        out
    }
}

fn diagonal_phase(phases: impl Iterator<Item = f64>) -> DMatrix<C64> {
    let diag: Vec<C64> = phases.map(|p| C64::from_polar(1.0, -p)).collect();
    DMatrix::from_diagonal(&DVector::from_vec(diag))
}

fn check_angle(angle: f64) -> Result<()> {
    if angle.is_finite() {
        Ok(())
    } else {
        Err(invalid(format!("gate angle must be finite, got {angle}")))
    }
}

/// Pure state in the Dicke basis.
#[derive(Clone, Debug, PartialEq)]
pub struct DickeState {
    amplitudes: DVector<C64>,
}

impl DickeState {
    /// `|j, m = -j>`, all spins down.
    pub fn all_down(algebra: &SpinAlgebra) -> Self {
        Self::basis(algebra, 0)
    }

    pub fn basis(algebra: &SpinAlgebra, k: usize) -> Self {
        let mut amplitudes = DVector::zeros(algebra.dim());
        amplitudes[k] = C64::new(1.0, 0.0);
        Self { amplitudes }
    }

    pub fn from_amplitudes(amplitudes: Vec<C64>) -> Result<Self> {
        let state = Self {
            amplitudes: DVector::from_vec(amplitudes),
        };
        let norm = state.norm_sqr();
        if (norm - 1.0).abs() > 1e-10 {
            return Err(invalid(format!("state is not normalized: |ψ|² = {norm}")));
        }
        Ok(state)
    }

    pub fn amplitudes(&self) -> &DVector<C64> {
        &self.amplitudes
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum()
    }

    pub fn apply(&self, gate: &DMatrix<C64>) -> Self {
        Self {
            amplitudes: gate * &self.amplitudes,
        }
    }
}

pub fn apply_rotation(
    algebra: &SpinAlgebra,
    state: &DickeState,
    axis: Axis,
    angle: f64,
) -> Result<DickeState> {
    if axis == Axis::Z {
        check_angle(angle)?;
        let amplitudes = state
            .amplitudes
            .iter()
            .zip(algebra.m_values())
            .map(|(a, &m)| a * C64::from_polar(1.0, -angle * m))
            .collect::<Vec<_>>();
        return Ok(DickeState {
            amplitudes: DVector::from_vec(amplitudes),
        });
    }
    Ok(state.apply(&algebra.rotation_matrix(axis, angle)?))
}

pub fn apply_twist(
    algebra: &SpinAlgebra,
    state: &DickeState,
    axis: Axis,
    angle: f64,
) -> Result<DickeState> {
    Ok(state.apply(&algebra.twist_matrix(axis, angle)?))
}

/// Where the fixed `Rx(π/2)` sits inside the decoder.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FixedRotationPlacement {
    /// Applied after all trainable decoder layers (operator product read right to left).
    #[default]
    Last,
    /// Applied right after the embedding, before the trainable decoder layers.
    First,
}

/// Entangler and decoder angles, three per layer.
///
/// Entangler layer `l` holds `(twist_z, twist_x, rot_x)`; decoder layer `l`
/// holds the same triple for the `l`-th factor of the decoder product.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CircuitParams {
    pub n_en: usize,
    pub n_de: usize,
    pub theta_en: Vec<f64>,
    pub theta_de: Vec<f64>,
}

impl CircuitParams {
    pub fn zeros(n_en: usize, n_de: usize) -> Self {
        Self {
            n_en,
            n_de,
            theta_en: vec![0.0; 3 * n_en],
            theta_de: vec![0.0; 3 * n_de],
        }
    }

    /// Builds parameters from the optimizer's flat layout: entangler angles first.
    pub fn from_flat(n_en: usize, n_de: usize, flat: &[f64]) -> Result<Self> {
        if flat.len() != 3 * (n_en + n_de) {
            return Err(invalid(format!(
                "expected {} angles for n_en={n_en}, n_de={n_de}, got {}",
                3 * (n_en + n_de),
                flat.len()
            )));
        }
        let params = Self {
            n_en,
            n_de,
            theta_en: flat[..3 * n_en].to_vec(),
            theta_de: flat[3 * n_en..].to_vec(),
        };
        params.validate()?;
        Ok(params)
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.theta_en.iter().chain(&self.theta_de).copied().collect()
    }

    pub fn num_params(&self) -> usize {
        3 * (self.n_en + self.n_de)
    }

    pub fn validate(&self) -> Result<()> {
        if self.theta_en.len() != 3 * self.n_en || self.theta_de.len() != 3 * self.n_de {
            return Err(invalid(format!(
                "angle vectors have lengths ({}, {}) but layer counts ({}, {}) need ({}, {})",
                self.theta_en.len(),
                self.theta_de.len(),
                self.n_en,
                self.n_de,
                3 * self.n_en,
                3 * self.n_de
            )));
        }
        if let Some(bad) = self.to_flat().into_iter().find(|v| !v.is_finite()) {
            return Err(invalid(format!("non-finite circuit angle {bad}")));
        }
        Ok(())
    }

    /// Angles reduced to `[0, 2π)`.
    pub fn canonical(&self) -> Self {
        let wrap = |v: &f64| v.rem_euclid(std::f64::consts::TAU);
        Self {
            n_en: self.n_en,
            n_de: self.n_de,
            theta_en: self.theta_en.iter().map(wrap).collect(),
            theta_de: self.theta_de.iter().map(wrap).collect(),
        }
    }
}

/// Circuit with the `u`-independent parts precomputed: the entangled probe
/// `U_en ψ0` and the decoder unitary `U_de`.
#[derive(Clone, Debug)]
pub struct PreparedCircuit {
    m: Vec<f64>,
    probe: DVector<C64>,
    decoder: DMatrix<C64>,
}

impl PreparedCircuit {
    pub fn new(
        algebra: &SpinAlgebra,
        params: &CircuitParams,
        placement: FixedRotationPlacement,
    ) -> Result<Self> {
        params.validate()?;
        let mut probe = DickeState::all_down(algebra);
        probe = apply_rotation(algebra, &probe, Axis::Y, FRAC_PI_2)?;
        for layer in params.theta_en.chunks_exact(3) {
            probe = apply_twist(algebra, &probe, Axis::Z, layer[0])?;
            probe = apply_twist(algebra, &probe, Axis::X, layer[1])?;
            probe = apply_rotation(algebra, &probe, Axis::X, layer[2])?;
        }

        let fixed = algebra.rotation_matrix(Axis::X, FRAC_PI_2)?;
        let mut decoder = DMatrix::<C64>::identity(algebra.dim(), algebra.dim());
        if placement == FixedRotationPlacement::First {
            decoder = &fixed * decoder;
        }
        // Rightmost factor acts first: layer n_de, then n_de-1, ..., then layer 1.
        for layer in params.theta_de.chunks_exact(3).rev() {
            decoder = algebra.rotation_matrix(Axis::X, layer[2])? * decoder;
            decoder = algebra.twist_matrix(Axis::X, layer[1])? * decoder;
            decoder = algebra.twist_matrix(Axis::Z, layer[0])? * decoder;
        }
        if placement == FixedRotationPlacement::Last {
            decoder = &fixed * decoder;
        }

        Ok(Self {
            m: algebra.m_values().to_vec(),
            probe: probe.amplitudes,
            decoder,
        })
    }

    pub fn dim(&self) -> usize {
        self.m.len()
    }

    pub fn probe(&self) -> &DVector<C64> {
        &self.probe
    }

    pub fn decoder(&self) -> &DMatrix<C64> {
        &self.decoder
    }

    fn embedded(&self, u: f64, generator_power: u32) -> DVector<C64> {
        DVector::from_iterator(
            self.dim(),
            self.probe.iter().zip(&self.m).map(|(a, &m)| {
                // (-i m)^p e^{-i u m}
                let factor = C64::new(0.0, -m).powu(generator_power);
                a * C64::from_polar(1.0, -u * m) * factor
            }),
        )
    }

    /// Final state `U_de Rz(u) U_en ψ0`.
    pub fn state(&self, u: f64) -> Result<DickeState> {
        check_angle(u)?;
        Ok(DickeState {
            amplitudes: &self.decoder * self.embedded(u, 0),
        })
    }

    pub fn probabilities(&self, u: f64) -> Result<OutcomeDistribution> {
        Ok(outcome_probabilities(&self.state(u)?))
    }

    /// Row-per-input probability matrix for a batch of phases.
    pub fn probability_table(&self, inputs: &[f64]) -> Result<DMatrix<f64>> {
        let dim = self.dim();
        let mut embedded = DMatrix::<C64>::zeros(dim, inputs.len());
        for (col, &u) in inputs.iter().enumerate() {
            check_angle(u)?;
            for (k, (a, &m)) in self.probe.iter().zip(&self.m).enumerate() {
                embedded[(k, col)] = a * C64::from_polar(1.0, -u * m);
            }
        }
        let out = &self.decoder * embedded;
        Ok(DMatrix::from_fn(inputs.len(), dim, |r, c| out[(c, r)].norm_sqr()))
    }

    /// Analytic `d^order x_j / du^order` at `u`, for `order` in `0..=3`.
    pub fn embedding_derivative(&self, u: f64, order: u32) -> Result<Vec<f64>> {
        if order > 3 {
            return Err(invalid(format!("derivative order must be in 0..=3, got {order}")));
        }
        check_angle(u)?;
        let branches: Vec<DVector<C64>> = (0..=order)
            .map(|p| &self.decoder * self.embedded(u, p))
            .collect();
        let mut out = vec![0.0; self.dim()];
        for k in 0..=order {
            let binom = binomial(order, k);
            let left = &branches[k as usize];
            let right = &branches[(order - k) as usize];
            for (j, o) in out.iter_mut().enumerate() {
                *o += binom * (left[j].conj() * right[j]).re;
            }
        }
        Ok(out)
    }
}

fn binomial(n: u32, k: u32) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

pub fn run_circuit(
    params: &CircuitParams,
    u: f64,
    algebra: &SpinAlgebra,
) -> Result<DickeState> {
    PreparedCircuit::new(algebra, params, FixedRotationPlacement::Last)?.state(u)
}

/// `order`-th derivative in `u` of the outcome probabilities, as a free function.
pub fn embedding_derivative(
    algebra: &SpinAlgebra,
    params: &CircuitParams,
    order: u32,
    u: f64,
) -> Result<Vec<f64>> {
    if !(1..=3).contains(&order) {
        return Err(invalid(format!("derivative order must be 1, 2 or 3, got {order}")));
    }
    PreparedCircuit::new(algebra, params, FixedRotationPlacement::Last)?
        .embedding_derivative(u, order)
}

/// Measurement statistics over spin-up counts `0..=L`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutcomeDistribution {
    pub probs: Vec<f64>,
}

pub fn outcome_probabilities(state: &DickeState) -> OutcomeDistribution {
    OutcomeDistribution {
        probs: state.amplitudes.iter().map(|a| a.norm_sqr()).collect(),
    }
}

/// Empirical frequencies of `shots` i.i.d. outcomes drawn from `dist`.
///
/// Counts are drawn as a chain of conditional binomials, which has the
/// same law as `shots` categorical draws and costs O(K).
pub fn sample_shots(dist: &[f64], shots: u64, seed: u64) -> Result<Vec<f64>> {
    if shots == 0 {
        return Err(invalid("shot count must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(sample_counts(dist, shots, &mut rng)
        .into_iter()
        .map(|c| c as f64 / shots as f64)
        .collect())
}

pub(crate) fn sample_counts<R: rand::Rng>(dist: &[f64], shots: u64, rng: &mut R) -> Vec<u64> {
    let mut counts = vec![0u64; dist.len()];
    let mut remaining = shots;
    let mut mass: f64 = dist.iter().map(|p| p.max(0.0)).sum();
    for (j, &p) in dist.iter().enumerate() {
        if remaining == 0 {
            break;
        }
        let p = p.max(0.0);
        if j + 1 == dist.len() || mass <= p {
            counts[j] = remaining;
            break;
        }
        let q = (p / mass).clamp(0.0, 1.0);
        let draw = Binomial::new(remaining, q)
            .map(|b| b.sample(rng))
            .unwrap_or(0);
        counts[j] = draw;
        remaining -= draw;
        mass -= p;
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    fn max_abs(m: &DMatrix<C64>) -> f64 {
        m.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    #[test]
    fn single_qubit_operators_are_half_paulis() {
        let alg = SpinAlgebra::new(1).unwrap();
        assert_eq!(alg.m_values(), &[-0.5, 0.5]);
        let jx = alg.operator(Axis::X);
        assert_abs_diff_eq!(jx[(0, 1)].re, 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(jx[(1, 0)].re, 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(jx[(0, 0)].norm(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn two_qubit_ladder_entries() {
        let alg = SpinAlgebra::new(2).unwrap();
        assert_eq!(alg.m_values(), &[-1.0, 0.0, 1.0]);
        let jx = alg.operator(Axis::X);
        let s = 1.0 / 2f64.sqrt();
        assert_abs_diff_eq!(jx[(0, 1)].re, s, epsilon = 1e-15);
        assert_abs_diff_eq!(jx[(1, 2)].re, s, epsilon = 1e-15);
    }

    #[test]
    fn algebra_invariants_hold() {
        for l in [1, 2, 3, 7, 32, 64] {
            let alg = SpinAlgebra::new(l).unwrap();
            let (jx, jy, jz) = (
                alg.operator(Axis::X),
                alg.operator(Axis::Y),
                alg.operator(Axis::Z),
            );
            let i = C64::new(0.0, 1.0);
            assert!(max_abs(&(jx * jy - jy * jx - jz * i)) < 1e-12);
            assert!(max_abs(&(jy * jz - jz * jy - jx * i)) < 1e-12);
            assert!(max_abs(&(jz * jx - jx * jz - jy * i)) < 1e-12);
            for op in [jx, jy, jz] {
                assert!(max_abs(&(op - op.adjoint())) < 1e-15);
            }
            let j = l as f64 / 2.0;
            let casimir = jx * jx + jy * jy + jz * jz;
            let expected = DMatrix::<C64>::identity(l + 1, l + 1) * C64::new(j * (j + 1.0), 0.0);
            assert!(max_abs(&(casimir - expected)) < 1e-10);
        }
    }

    #[test]
    fn rejects_out_of_range_qubits() {
        assert!(SpinAlgebra::new(0).is_err());
        assert!(SpinAlgebra::new(MAX_QUBITS + 1).is_err());
    }

    #[test]
    fn zero_angle_gates_are_identity() {
        let alg = SpinAlgebra::new(5).unwrap();
        let id = DMatrix::<C64>::identity(6, 6);
        for axis in [Axis::X, Axis::Y, Axis::Z] {
            assert!(max_abs(&(alg.rotation_matrix(axis, 0.0).unwrap() - &id)) < 1e-13);
        }
        for axis in [Axis::X, Axis::Z] {
            assert!(max_abs(&(alg.twist_matrix(axis, 0.0).unwrap() - &id)) < 1e-13);
        }
    }

    #[test]
    fn non_finite_angles_rejected() {
        let alg = SpinAlgebra::new(2).unwrap();
        let s = DickeState::all_down(&alg);
        assert!(apply_rotation(&alg, &s, Axis::X, f64::NAN).is_err());
        assert!(apply_twist(&alg, &s, Axis::Z, f64::INFINITY).is_err());
    }

    #[test]
    fn z_rotation_on_eigenstate_is_a_phase() {
        let alg = SpinAlgebra::new(4).unwrap();
        let s = DickeState::basis(&alg, 3);
        let out = apply_rotation(&alg, &s, Axis::Z, 0.7).unwrap();
        let expected = C64::from_polar(1.0, -0.7 * 1.0);
        assert_abs_diff_eq!((out.amplitudes()[3] - expected).norm(), 0.0, epsilon = 1e-14);
        assert_eq!(outcome_probabilities(&out), outcome_probabilities(&s));
    }

    #[test]
    fn y_quarter_turn_on_down_spin_is_balanced() {
        let alg = SpinAlgebra::new(1).unwrap();
        let s = apply_rotation(&alg, &DickeState::all_down(&alg), Axis::Y, PI / 2.0).unwrap();
        let p = outcome_probabilities(&s).probs;
        assert_abs_diff_eq!(p[0], 0.5, epsilon = 1e-14);
        assert_abs_diff_eq!(p[1], 0.5, epsilon = 1e-14);
        // e^{-iπ/4 σy}|↓> = (cos π/4)|↓> - (sin π/4)|↑>, since <↑|σy|↓> = -i
        assert_abs_diff_eq!(s.amplitudes()[0].re, (PI / 4.0).cos(), epsilon = 1e-14);
        assert_abs_diff_eq!(s.amplitudes()[1].re, -(PI / 4.0).sin(), epsilon = 1e-14);
    }

    #[test]
    fn z_twist_on_cat_components_adds_common_phase() {
        let alg = SpinAlgebra::new(2).unwrap();
        let s = 1.0 / 2f64.sqrt();
        let cat = DickeState::from_amplitudes(vec![
            C64::new(s, 0.0),
            C64::new(0.0, 0.0),
            C64::new(s, 0.0),
        ])
        .unwrap();
        let out = apply_twist(&alg, &cat, Axis::Z, PI / 2.0).unwrap();
        let phase = C64::from_polar(s, -PI / 2.0);
        assert_abs_diff_eq!((out.amplitudes()[0] - phase).norm(), 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!((out.amplitudes()[2] - phase).norm(), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn empty_circuit_at_zero_phase_is_normalized() {
        let alg = SpinAlgebra::new(6).unwrap();
        let state = run_circuit(&CircuitParams::zeros(0, 0), 0.0, &alg).unwrap();
        assert_abs_diff_eq!(state.norm_sqr(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn single_qubit_ramsey_fringe() {
        // Rx(π/2) Rz(u) Ry(π/2)|↓> gives p(↑) = (1 - sin u)/2
        let alg = SpinAlgebra::new(1).unwrap();
        let params = CircuitParams::zeros(0, 0);
        for i in 0..17 {
            let u = -PI + i as f64 * PI / 8.0;
            let p = outcome_probabilities(&run_circuit(&params, u, &alg).unwrap()).probs;
            assert_abs_diff_eq!(p[1], (1.0 - u.sin()) / 2.0, epsilon = 1e-13);
        }
    }

    #[test]
    fn derivative_order_checked() {
        let alg = SpinAlgebra::new(2).unwrap();
        let params = CircuitParams::zeros(0, 0);
        assert!(embedding_derivative(&alg, &params, 0, 0.0).is_err());
        assert!(embedding_derivative(&alg, &params, 4, 0.0).is_err());
    }

    #[test]
    fn ramsey_slope_at_origin() {
        let alg = SpinAlgebra::new(1).unwrap();
        let d = embedding_derivative(&alg, &CircuitParams::zeros(0, 0), 1, 0.0).unwrap();
        assert_abs_diff_eq!(d[0].abs(), 0.5, epsilon = 1e-14);
        assert_abs_diff_eq!(d[1].abs(), 0.5, epsilon = 1e-14);
    }

    #[test]
    fn derivatives_sum_to_zero() {
        let alg = SpinAlgebra::new(5).unwrap();
        let params = CircuitParams::from_flat(1, 1, &[0.3, 0.2, 1.1, 0.4, 0.9, 2.0]).unwrap();
        let circuit = PreparedCircuit::new(&alg, &params, FixedRotationPlacement::Last).unwrap();
        for order in 1..=3 {
            let d = circuit.embedding_derivative(0.37, order).unwrap();
            assert_abs_diff_eq!(d.iter().sum::<f64>(), 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn shot_sampling_edge_cases() {
        assert!(sample_shots(&[0.5, 0.5], 0, 1).is_err());
        let one_hot = [0.0, 0.0, 1.0, 0.0];
        assert_eq!(sample_shots(&one_hot, 37, 9).unwrap(), one_hot.to_vec());
        for seed in 0..50 {
            let x = sample_shots(&[0.2, 0.3, 0.5], 1, seed).unwrap();
            assert_eq!(x.iter().filter(|&&v| v == 1.0).count(), 1);
            assert_eq!(x.iter().sum::<f64>(), 1.0);
        }
        assert_eq!(
            sample_shots(&[0.1, 0.6, 0.3], 100, 4).unwrap(),
            sample_shots(&[0.1, 0.6, 0.3], 100, 4).unwrap()
        );
    }

    #[test]
    fn shot_frequencies_concentrate() {
        let x = sample_shots(&[0.5, 0.5], 1_000_000, 11).unwrap();
        assert!((x[0] - 0.5).abs() < 5e-3);
        assert!((x[1] - 0.5).abs() < 5e-3);
    }

    #[test]
    fn flat_layout_roundtrip_and_validation() {
        let flat = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6];
        let p = CircuitParams::from_flat(1, 1, &flat).unwrap();
        assert_eq!(p.to_flat(), flat.to_vec());
        assert!(CircuitParams::from_flat(1, 2, &flat).is_err());
        assert!(CircuitParams::from_flat(2, 0, &[0.0, 0.0, 0.0, 0.0, f64::NAN, 0.0]).is_err());
    }
}
