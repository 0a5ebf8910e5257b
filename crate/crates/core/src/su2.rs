//! Closed-form single-qubit unitaries.
//!
//! Every Hamiltonian in this crate is a sum of single-qubit terms, so the
//! hot propagation paths work on 2×2 factors and only the oracles build
//! the full register.

use nalgebra::Matrix2;
use num_complex::Complex64;

use crate::operators::{PauliVector, I, ONE, ZERO};

pub type Mat2 = Matrix2<Complex64>;

const PARALLEL_TOL: f64 = 1e-12;

pub fn identity() -> Mat2 {
    Mat2::identity()
}

/// `v·σ`
pub fn pauli(v: PauliVector) -> Mat2 {
    Mat2::new(Complex64::new(v.z, 0.0), Complex64::new(v.x, -v.y), Complex64::new(v.x, v.y), Complex64::new(-v.z, 0.0))
}

/// Hermitian traceless part of `m` as a Pauli vector: `tr(σ_k m)/2`.
pub fn to_pauli(m: &Mat2) -> PauliVector {
    PauliVector::new(
        0.5 * (m[(0, 1)] + m[(1, 0)]).re,
        0.5 * (m[(1, 0)] - m[(0, 1)]).im,
        0.5 * (m[(0, 0)] - m[(1, 1)]).re,
    )
}

/// `exp(−i τ v·σ) = cos(τ|v|) I − i sin(τ|v|) v̂·σ`.
pub fn exp_pauli(v: PauliVector, tau: f64) -> Mat2 {
    let mag = v.magnitude();
    let angle = tau * mag;
    let c = Complex64::new(angle.cos(), 0.0);
    if mag == 0.0 {
        return identity();
    }
    // sin(τ|v|)/|v| is well behaved even when τ|v| is tiny.
    let s = angle.sin() / mag;
    Mat2::new(
        c - I * (s * v.z),
        -I * Complex64::new(s * v.x, -s * v.y),
        -I * Complex64::new(s * v.x, s * v.y),
        c + I * (s * v.z),
    )
}

/// Heisenberg-picture image `u† (v·σ) u`.
pub fn conjugate(u: &Mat2, v: PauliVector) -> PauliVector {
    to_pauli(&(u.adjoint() * pauli(v) * u))
}

/// Bloch-sphere image `u (v·σ) u†`.
pub fn rotate(u: &Mat2, v: PauliVector) -> PauliVector {
    to_pauli(&(u * pauli(v) * u.adjoint()))
}

/// Pauli vector `a` with `u = e^{iφ} exp(−i a·σ)` and `|a| ≤ π/2`.
///
/// The returned Hamiltonian generates the shortest Bloch rotation equal
/// to `u` up to global phase.
pub fn log_pauli(u: &Mat2) -> PauliVector {
    let det = u.determinant();
    let half_phase = Complex64::from_polar(1.0, -0.5 * det.arg());
    let su = u * half_phase;
    // su = a0 I − i b·σ with a0 real, b real
    let a0 = 0.5 * (su[(0, 0)] + su[(1, 1)]).re;
    let b = PauliVector::new(
        -0.5 * (su[(0, 1)] + su[(1, 0)]).im,
        0.5 * (su[(1, 0)] - su[(0, 1)]).re,
        -0.5 * (su[(0, 0)] - su[(1, 1)]).im,
    );
    let (a0, b) = if a0 < 0.0 { (-a0, -b) } else { (a0, b) };
    let bn = b.magnitude();
    if bn == 0.0 {
        return PauliVector::ZERO;
    }
    let alpha = bn.atan2(a0);
    b * (alpha / bn)
}

/// Shortest rotation taking Bloch vector `from` onto `to`, i.e. a unitary
/// with `u (from·σ) u† = to·σ`. Both arguments must be unit vectors. For
/// antipodal inputs the rotation is by π about the axis perpendicular to
/// `from` closest to x̂ (ŷ when `from` is along x̂).
pub fn rotation_between(from: PauliVector, to: PauliVector) -> Mat2 {
    let axis = from.cross(&to);
    let sin = axis.magnitude();
    let cos = from.dot(&to);
    if sin < PARALLEL_TOL {
        if cos > 0.0 {
            return identity();
        }
        let mut perp = PauliVector::X - from * from.x;
        if perp.magnitude() < 1e-6 {
            perp = PauliVector::Y - from * from.y;
        }
        let n = perp * (1.0 / perp.magnitude());
        return exp_pauli(n, std::f64::consts::FRAC_PI_2);
    }
    let angle = sin.atan2(cos);
    exp_pauli(axis * (1.0 / sin), 0.5 * angle)
}

/// Applies a 2×2 unitary to qubit `q` of an `n`-qubit amplitude vector.
pub fn apply_to_qubit(amps: &mut [Complex64], q: usize, n: usize, u: &Mat2) {
    let bit = 1usize << (n - 1 - q);
    for i in 0..amps.len() {
        if i & bit != 0 {
            continue;
        }
        let j = i | bit;
        let (a, b) = (amps[i], amps[j]);
        amps[i] = u[(0, 0)] * a + u[(0, 1)] * b;
        amps[j] = u[(1, 0)] * a + u[(1, 1)] * b;
    }
}

/// Max-norm of `a − b`.
pub fn max_abs_diff(a: &Mat2, b: &Mat2) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

/// Max-norm of the matrix `v·σ`.
pub fn pauli_max_norm(v: PauliVector) -> f64 {
    v.z.abs().max((v.x * v.x + v.y * v.y).sqrt())
}

pub(crate) fn hadamard() -> Mat2 {
    let h = Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
    Mat2::new(h, h, h, -h)
}

pub(crate) fn s_dagger() -> Mat2 {
    Mat2::new(ONE, ZERO, ZERO, -I)
}
