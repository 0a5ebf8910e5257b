//! Dense complex operator algebra for small multi-qubit registers.
//!
//! Qubit 0 is the leftmost Kronecker factor, so it is the most significant
//! bit of a computational-basis index.

use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type CMatrix = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;

const HERMITIAN_TOL: f64 = 1e-12;
const UNITARY_TOL: f64 = 1e-10;
const NORM_TOL: f64 = 1e-12;
const VARIANCE_CLIP: f64 = 1e-10;

pub(crate) const ZERO: Complex64 = Complex64::new(0.0, 0.0);
pub(crate) const ONE: Complex64 = Complex64::new(1.0, 0.0);
pub(crate) const I: Complex64 = Complex64::new(0.0, 1.0);

/// Real coefficient vector of a single-qubit operator `x σx + y σy + z σz`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PauliVector {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl PauliVector {
    pub const ZERO: PauliVector = PauliVector { x: 0.0, y: 0.0, z: 0.0 };
    pub const X: PauliVector = PauliVector { x: 1.0, y: 0.0, z: 0.0 };
    pub const Y: PauliVector = PauliVector { x: 0.0, y: 1.0, z: 0.0 };
    pub const Z: PauliVector = PauliVector { x: 0.0, y: 0.0, z: 1.0 };

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn magnitude(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn dot(&self, other: &PauliVector) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn cross(&self, other: &PauliVector) -> PauliVector {
        PauliVector::new(
            self.y * other.z - self.z * other.y,
            self.z * other.x - self.x * other.z,
            self.x * other.y - self.y * other.x,
        )
    }

    /// Unit vector along `self`, or `None` below `tol` in magnitude.
    pub fn direction(&self, tol: f64) -> Option<PauliVector> {
        let m = self.magnitude();
        (m >= tol).then(|| *self * (1.0 / m))
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn max_abs(&self) -> f64 {
        self.x.abs().max(self.y.abs()).max(self.z.abs())
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }
}

impl Add for PauliVector {
    type Output = PauliVector;
    fn add(self, o: PauliVector) -> PauliVector {
        PauliVector::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl AddAssign for PauliVector {
    fn add_assign(&mut self, o: PauliVector) {
        *self = *self + o;
    }
}

impl Sub for PauliVector {
    type Output = PauliVector;
    fn sub(self, o: PauliVector) -> PauliVector {
        PauliVector::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Neg for PauliVector {
    type Output = PauliVector;
    fn neg(self) -> PauliVector {
        PauliVector::new(-self.x, -self.y, -self.z)
    }
}

impl Mul<f64> for PauliVector {
    type Output = PauliVector;
    fn mul(self, s: f64) -> PauliVector {
        PauliVector::new(self.x * s, self.y * s, self.z * s)
    }
}

/// Dense Hermitian operator on `n` qubits (dimension `2^n`).
#[derive(Debug, Clone, PartialEq)]
pub struct HermitianOperator(CMatrix);

impl HermitianOperator {
    /// Validates squareness, power-of-two dimension and Hermiticity.
    pub fn new(m: CMatrix) -> Result<Self> {
        check_square_pow2(&m)?;
        let dev = hermitian_deviation(&m);
        if dev > HERMITIAN_TOL {
            return Err(Error::NotHermitian(dev));
        }
        Ok(Self(m))
    }

    /// Replaces `m` by `(m + m†)/2`. Used after accumulation loops where
    /// roundoff drift would otherwise break Hermiticity.
    pub fn hermitized(m: CMatrix) -> Result<Self> {
        check_square_pow2(&m)?;
        let adj = m.adjoint();
        Ok(Self((m + adj) * Complex64::new(0.5, 0.0)))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(CMatrix::zeros(dim, dim))
    }

    pub fn identity(dim: usize) -> Self {
        Self(CMatrix::identity(dim, dim))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn num_qubits(&self) -> usize {
        self.dim().trailing_zeros() as usize
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.0
    }

    pub fn into_matrix(self) -> CMatrix {
        self.0
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self(&self.0 * Complex64::new(s, 0.0))
    }

    /// Largest absolute entry of `self - other`.
    pub fn max_abs_diff(&self, other: &HermitianOperator) -> f64 {
        max_abs_diff(&self.0, &other.0)
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().map(|c| c.norm()).fold(0.0, f64::max)
    }

    pub fn commutator_norm(&self, other: &HermitianOperator) -> f64 {
        let c = &self.0 * &other.0 - &other.0 * &self.0;
        c.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn apply(&self, state: &PureState) -> Result<CVector> {
        check_dims(self.dim(), state.dim())?;
        Ok(&self.0 * &state.0)
    }

    /// Full spectrum, ascending.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut ev: Vec<f64> = SymmetricEigen::new(self.0.clone()).eigenvalues.iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        ev
    }
}

impl Add for &HermitianOperator {
    type Output = HermitianOperator;
    fn add(self, o: &HermitianOperator) -> HermitianOperator {
        HermitianOperator(&self.0 + &o.0)
    }
}

/// Dense unitary.
#[derive(Debug, Clone, PartialEq)]
pub struct Unitary(CMatrix);

impl Unitary {
    pub fn new(m: CMatrix) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::DimensionMismatch { expected: m.nrows(), actual: m.ncols() });
        }
        let dev = unitarity_residual(&m);
        if dev > UNITARY_TOL {
            return Err(Error::invalid(format!("matrix is not unitary (residual {dev:.3e})")));
        }
        Ok(Self(m))
    }

    pub(crate) fn from_matrix_unchecked(m: CMatrix) -> Self {
        Self(m)
    }

    pub fn identity(dim: usize) -> Self {
        Self(CMatrix::identity(dim, dim))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.0
    }

    pub fn adjoint(&self) -> Unitary {
        Unitary(self.0.adjoint())
    }

    /// `self · other`
    pub fn compose(&self, other: &Unitary) -> Unitary {
        Unitary(&self.0 * &other.0)
    }

    pub fn apply(&self, state: &PureState) -> Result<PureState> {
        check_dims(self.dim(), state.dim())?;
        Ok(PureState(&self.0 * &state.0))
    }

    /// Max-norm deviation of `U†U` from the identity.
    pub fn unitarity_residual(&self) -> f64 {
        unitarity_residual(&self.0)
    }

    pub fn max_abs_diff(&self, other: &Unitary) -> f64 {
        max_abs_diff(&self.0, &other.0)
    }
}

/// Normalized state vector.
#[derive(Debug, Clone, PartialEq)]
pub struct PureState(CVector);

impl PureState {
    /// Accepts amplitudes whose squared norm is 1 within `1e-12`.
    pub fn new(amplitudes: CVector) -> Result<Self> {
        check_pow2(amplitudes.len())?;
        let n2 = amplitudes.norm_squared();
        if (n2 - 1.0).abs() > NORM_TOL {
            return Err(Error::invalid(format!("state norm² = {n2}, expected 1")));
        }
        Ok(Self(amplitudes))
    }

    /// Rescales to unit norm; rejects the zero vector.
    pub fn normalized(amplitudes: CVector) -> Result<Self> {
        check_pow2(amplitudes.len())?;
        let n = amplitudes.norm();
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::invalid("state amplitudes have zero or non-finite norm"));
        }
        Ok(Self(amplitudes / Complex64::new(n, 0.0)))
    }

    pub fn basis(dim: usize, index: usize) -> Result<Self> {
        check_pow2(dim)?;
        if index >= dim {
            return Err(Error::IndexOutOfRange { index, limit: dim });
        }
        let mut v = CVector::zeros(dim);
        v[index] = ONE;
        Ok(Self(v))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn num_qubits(&self) -> usize {
        self.dim().trailing_zeros() as usize
    }

    pub fn amplitudes(&self) -> &CVector {
        &self.0
    }

    pub(crate) fn amplitudes_mut(&mut self) -> &mut CVector {
        &mut self.0
    }

    pub fn inner(&self, other: &PureState) -> Result<Complex64> {
        check_dims(self.dim(), other.dim())?;
        Ok(self.0.dotc(&other.0))
    }

    pub fn with_global_phase(&self, phase: f64) -> PureState {
        PureState(&self.0 * Complex64::from_polar(1.0, phase))
    }
}

fn check_pow2(n: usize) -> Result<()> {
    if n == 0 || !n.is_power_of_two() {
        return Err(Error::invalid(format!("dimension {n} is not a power of two")));
    }
    Ok(())
}

fn check_square_pow2(m: &CMatrix) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::DimensionMismatch { expected: m.nrows(), actual: m.ncols() });
    }
    check_pow2(m.nrows())
}

fn check_dims(expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::DimensionMismatch { expected, actual });
    }
    Ok(())
}

fn hermitian_deviation(m: &CMatrix) -> f64 {
    let n = m.nrows();
    let mut dev: f64 = 0.0;
    for i in 0..n {
        for j in i..n {
            dev = dev.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    dev
}

fn unitarity_residual(m: &CMatrix) -> f64 {
    let p = m.adjoint() * m;
    max_abs_diff(&p, &CMatrix::identity(m.nrows(), m.ncols()))
}

pub(crate) fn max_abs_diff(a: &CMatrix, b: &CMatrix) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

/// The 2×2 matrix `v·σ` as a raw dense matrix.
pub(crate) fn pauli_matrix(v: PauliVector) -> CMatrix {
    CMatrix::from_row_slice(
        2,
        2,
        &[Complex64::new(v.z, 0.0), Complex64::new(v.x, -v.y), Complex64::new(v.x, v.y), Complex64::new(-v.z, 0.0)],
    )
}

/// `vx σx + vy σy + vz σz`; eigenvalues are `±|v|`.
pub fn pauli_dot(v: PauliVector) -> Result<HermitianOperator> {
    if !v.is_finite() {
        return Err(Error::invalid(format!("non-finite Pauli vector {v:?}")));
    }
    Ok(HermitianOperator(pauli_matrix(v)))
}

/// Kronecker product `a ⊗ b`.
pub fn kron(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a.kronecker(b)
}

/// Embeds a single-qubit operator as `I^{⊗q} ⊗ op ⊗ I^{⊗(n-q-1)}`.
pub fn embed_local(op: &HermitianOperator, qubit: usize, total_qubits: usize) -> Result<HermitianOperator> {
    if op.dim() != 2 {
        return Err(Error::DimensionMismatch { expected: 2, actual: op.dim() });
    }
    if qubit >= total_qubits {
        return Err(Error::IndexOutOfRange { index: qubit, limit: total_qubits });
    }
    Ok(HermitianOperator(embed_matrix(op.matrix(), qubit, total_qubits)))
}

pub(crate) fn embed_matrix(op: &CMatrix, qubit: usize, total_qubits: usize) -> CMatrix {
    let left = CMatrix::identity(1 << qubit, 1 << qubit);
    let right_dim = 1 << (total_qubits - qubit - 1);
    let right = CMatrix::identity(right_dim, right_dim);
    kron(&kron(&left, op), &right)
}

/// `Σ_q embed(v_q·σ)` for one Pauli vector per qubit.
pub fn local_sum(terms: &[PauliVector]) -> Result<HermitianOperator> {
    let n = terms.len();
    if n == 0 {
        return Err(Error::invalid("local_sum needs at least one qubit"));
    }
    let dim = 1usize << n;
    let mut acc = CMatrix::zeros(dim, dim);
    for (q, v) in terms.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::invalid(format!("non-finite Pauli vector on qubit {q}")));
        }
        // v·σ on qubit q is diagonal in z and flips bit q for x/y.
        let bit = 1usize << (n - 1 - q);
        for i in 0..dim {
            let sign = if i & bit == 0 { 1.0 } else { -1.0 };
            acc[(i, i)] += Complex64::new(sign * v.z, 0.0);
            let j = i ^ bit;
            // <j| (x σx + y σy) |i>: from |0> to |1> gives x + i y
            let off = if i & bit == 0 { Complex64::new(v.x, v.y) } else { Complex64::new(v.x, -v.y) };
            acc[(j, i)] += off;
        }
    }
    Ok(HermitianOperator(acc))
}

/// Extremal eigenvalues `(λmin, λmax)`.
pub fn eigen_bounds(a: &HermitianOperator) -> (f64, f64) {
    let ev = a.eigenvalues();
    (ev[0], ev[ev.len() - 1])
}

/// `⟨ψ|A|ψ⟩`.
pub fn expectation(state: &PureState, a: &HermitianOperator) -> Result<f64> {
    let av = a.apply(state)?;
    let e = state.0.dotc(&av);
    debug_assert!(e.im.abs() <= 1e-10 * (1.0 + e.re.abs()), "imaginary residue {}", e.im);
    Ok(e.re)
}

/// `⟨A²⟩ − ⟨A⟩²`, with roundoff negatives in `[-1e-10, 0)` clipped to zero.
pub fn variance(state: &PureState, a: &HermitianOperator) -> Result<f64> {
    let av = a.apply(state)?;
    let mean = state.0.dotc(&av).re;
    let second = av.norm_squared();
    clip_variance(second - mean * mean)
}

pub(crate) fn clip_variance(v: f64) -> Result<f64> {
    if v >= 0.0 {
        Ok(v)
    } else if v >= -VARIANCE_CLIP {
        Ok(0.0)
    } else {
        Err(Error::NegativeVariance(v))
    }
}

/// `exp(−i H dt)` by Hermitian eigendecomposition.
pub fn step_unitary(h: &HermitianOperator, dt: f64) -> Result<Unitary> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::invalid(format!("time step must be positive, got {dt}")));
    }
    Ok(Unitary(exp_minus_i(h.matrix(), dt)))
}

pub(crate) fn exp_minus_i(h: &CMatrix, dt: f64) -> CMatrix {
    let eig = SymmetricEigen::new(h.clone());
    let v = &eig.eigenvectors;
    let mut scaled = v.clone();
    for (k, lambda) in eig.eigenvalues.iter().enumerate() {
        let phase = Complex64::from_polar(1.0, -lambda * dt);
        for r in 0..scaled.nrows() {
            scaled[(r, k)] *= phase;
        }
    }
    scaled * v.adjoint()
}


#[cfg(test)]
mod proptests {
    use super::*;
    use proptest::prelude::*;

    fn pauli() -> impl Strategy<Value = PauliVector> {
        (-10.0..10.0f64, -10.0..10.0f64, -10.0..10.0f64).prop_map(|(x, y, z)| PauliVector::new(x, y, z))
    }

    fn random_hermitian(n_qubits: usize, entries: &[f64]) -> HermitianOperator {
        let dim = 1 << n_qubits;
        let mut m = CMatrix::zeros(dim, dim);
        let mut it = entries.iter().cycle();
        for r in 0..dim {
            for c in 0..dim {
                m[(r, c)] = Complex64::new(*it.next().unwrap(), *it.next().unwrap());
            }
        }
        HermitianOperator::hermitized(m).unwrap()
    }

    fn random_state(n_qubits: usize, entries: &[f64]) -> PureState {
        let dim = 1 << n_qubits;
        let mut it = entries.iter().cycle();
        let v = CVector::from_fn(dim, |_, _| Complex64::new(*it.next().unwrap(), *it.next().unwrap()));
        PureState::normalized(v).unwrap()
    }

    proptest! {
        #[test]
        fn pauli_spectrum_is_pm_magnitude(v in pauli()) {
            let (lo, hi) = eigen_bounds(&pauli_dot(v).unwrap());
            prop_assert!((lo + v.magnitude()).abs() < 1e-10);
            prop_assert!((hi - v.magnitude()).abs() < 1e-10);
        }

        #[test]
        fn variance_bounded_by_spectral_spread(
            n in 1usize..=4,
            a in prop::collection::vec(-1.0..1.0f64, 64),
            s in prop::collection::vec(-1.0..1.0f64, 64),
        ) {
            prop_assume!(s.iter().any(|x| x.abs() > 1e-3));
            let op = random_hermitian(n, &a);
            let psi = random_state(n, &s);
            let (lo, hi) = eigen_bounds(&op);
            let var = variance(&psi, &op).unwrap();
            prop_assert!(var <= ((hi - lo) / 2.0).powi(2) + 1e-10);
        }

        #[test]
        fn step_unitary_composes(n in 1usize..=3, a in prop::collection::vec(-1.0..1.0f64, 32), dt1 in 0.01..2.0f64, dt2 in 0.01..2.0f64) {
            let h = random_hermitian(n, &a);
            let u = step_unitary(&h, dt1).unwrap().compose(&step_unitary(&h, dt2).unwrap());
            let w = step_unitary(&h, dt1 + dt2).unwrap();
            prop_assert!(u.max_abs_diff(&w) < 1e-10);
        }

        #[test]
        fn local_terms_on_distinct_qubits_commute(a in pauli(), b in pauli(), n in 2usize..=4, q in 0usize..4, r in 0usize..4) {
            prop_assume!(q < n && r < n && q != r);
            let ea = embed_local(&pauli_dot(a).unwrap(), q, n).unwrap();
            let eb = embed_local(&pauli_dot(b).unwrap(), r, n).unwrap();
            prop_assert_eq!(ea.commutator_norm(&eb), 0.0);
        }
    }
}
