//! Fisher information: the QFIM of a pure probe, the effective QFI of a
//! weighted parameter combination, its saturable ceiling, Cramér–Rao
//! precision bounds, an overlap-curvature QFI oracle, and the classical
//! Fisher information of measurement statistics.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::control::ControlProtocol;
use crate::dynamics::{propagate, GeneratorSet, TimeGrid};
use crate::error::{Error, Result};
use crate::model::{qubit_magnitude_integral, ParameterPoint, SensorNetwork, WeightVector};
use crate::operators::{eigen_bounds, HermitianOperator, PureState};

/// Relative slack below zero tolerated on QFIM eigenvalues and effective
/// QFI before treating the value as a hard error.
pub const PSD_TOL: f64 = 1e-8;

/// Probabilities below this are dropped from Fisher sums.
pub const PROBABILITY_FLOOR: f64 = 1e-12;

/// Default finite-difference step for classical Fisher information.
pub const DEFAULT_DTHETA: f64 = 1e-5;

/// Default overlap-oracle step.
pub const DEFAULT_ORACLE_EPS: f64 = 1e-4;

/// Real symmetric positive-semidefinite quantum Fisher information matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Qfim(DMatrix<f64>);

impl Qfim {
    /// Validates symmetry (1e-10 relative to the largest entry) and
    /// positive semidefiniteness up to [`PSD_TOL`].
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::DimensionMismatch { expected: m.nrows(), actual: m.ncols() });
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("QFIM has non-finite entries"));
        }
        let scale = m.amax().max(1.0);
        let asym = (&m - m.transpose()).amax();
        if asym > 1e-10 * scale {
            return Err(Error::invalid(format!("QFIM is not symmetric (deviation {asym:.3e})")));
        }
        let sym = (&m + m.transpose()) * 0.5;
        let min = SymmetricEigen::new(sym.clone()).eigenvalues.min();
        if min < -PSD_TOL * scale {
            return Err(Error::NotPositiveSemidefinite(min));
        }
        Ok(Self(sym))
    }

    pub fn n(&self) -> usize {
        self.0.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }
}

/// `J_ij = 4 Re(⟨S_i S_j⟩ − ⟨S_i⟩⟨S_j⟩)`.
pub fn qfim(state: &PureState, gens: &GeneratorSet) -> Result<Qfim> {
    if state.dim() != gens.dim() {
        return Err(Error::DimensionMismatch { expected: gens.dim(), actual: state.dim() });
    }
    let psi = state.amplitudes();
    let applied: Vec<_> = gens.all().iter().map(|s| s.matrix() * psi).collect();
    let means: Vec<f64> = applied.iter().map(|sv| psi.dotc(sv).re).collect();
    let n = gens.n_params();
    let mut j = DMatrix::zeros(n, n);
    for a in 0..n {
        for b in a..n {
            let v = 4.0 * (applied[a].dotc(&applied[b]).re - means[a] * means[b]);
            j[(a, b)] = v;
            j[(b, a)] = v;
        }
    }
    Qfim::new(j)
}

/// `wᵀ J w`, with roundoff-level negatives clipped to zero.
pub fn effective_qfi(j: &Qfim, w: &WeightVector) -> Result<f64> {
    if j.n() != w.len() {
        return Err(Error::DimensionMismatch { expected: j.n(), actual: w.len() });
    }
    let wv = DMatrix::from_column_slice(w.len(), 1, w.as_slice());
    let val = (wv.transpose() * &j.0 * &wv)[(0, 0)];
    let scale = j.0.amax().max(1.0) * w.norm_sq();
    if val < -PSD_TOL * scale {
        return Err(Error::NotPositiveSemidefinite(val));
    }
    Ok(val.max(0.0))
}

/// `4 Var(S_θ)`: the effective QFI straight from the combined generator.
pub fn effective_qfi_of(state: &PureState, gens: &GeneratorSet) -> Result<f64> {
    Ok(4.0 * crate::operators::variance(state, gens.s_theta())?)
}

/// `(λ_max − λ_min)²`: the largest effective QFI any probe can reach for a
/// fixed combined generator.
pub fn max_qfi(s_theta: &HermitianOperator) -> f64 {
    let (lo, hi) = eigen_bounds(s_theta);
    (hi - lo).powi(2)
}

/// Saturable ceiling `4 (Σ_q ∫₀^T |v_q(t)| dt)²` over all local controls
/// and probes.
pub fn qfi_upper_bound(net: &SensorNetwork, x: &ParameterPoint, w: &WeightVector, grid: &TimeGrid) -> Result<f64> {
    net.check_point(x)?;
    net.check_weights(w)?;
    let mut total = 0.0;
    for q in 0..net.total_qubits() {
        total += qubit_magnitude_integral(net, q, x, w, grid)?;
    }
    Ok(4.0 * total * total)
}

/// Weak Cramér–Rao bound `wᵀw / (μ J_eff)`.
pub fn precision_bound(j_eff: f64, w: &WeightVector, mu: u64) -> Result<f64> {
    if mu == 0 {
        return Err(Error::invalid("repetitions must be at least 1"));
    }
    if !(j_eff > 0.0) {
        return Err(Error::UnboundedVariance(j_eff));
    }
    Ok(w.norm_sq() / (mu as f64 * j_eff))
}

/// Effective QFI, its ceiling and the implied variance bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrecisionReport {
    pub effective_qfi: f64,
    pub upper_bound: f64,
    /// `None` when the effective QFI vanishes (unbounded variance).
    pub variance_bound: Option<f64>,
    pub repetitions: u64,
}

impl PrecisionReport {
    pub fn new(effective_qfi: f64, upper_bound: f64, w: &WeightVector, repetitions: u64) -> Result<Self> {
        if effective_qfi > upper_bound * (1.0 + 1e-6) + 1e-12 {
            return Err(Error::invalid(format!("effective QFI {effective_qfi} exceeds its ceiling {upper_bound}")));
        }
        let variance_bound = match precision_bound(effective_qfi, w, repetitions) {
            Ok(v) => Some(v),
            Err(Error::UnboundedVariance(_)) => None,
            Err(e) => return Err(e),
        };
        Ok(Self { effective_qfi, upper_bound, variance_bound, repetitions })
    }
}

/// QFI along a unit direction from overlap curvature,
/// `8 (1 − |⟨ψ(x)|ψ(x + ε·dir)⟩|) / ε²`, with the control frozen.
///
/// The estimate is repeated at `ε/2`; more than 1 % disagreement (above
/// the roundoff floor) means `ε` is outside the quadratic regime.
pub fn fidelity_qfi_oracle(
    net: &SensorNetwork,
    x: &ParameterPoint,
    control: Option<&ControlProtocol>,
    probe: &PureState,
    grid: &TimeGrid,
    dir: &[f64],
    eps: f64,
) -> Result<f64> {
    net.check_point(x)?;
    if dir.len() != net.n_params() {
        return Err(Error::DimensionMismatch { expected: net.n_params(), actual: dir.len() });
    }
    let norm = dir.iter().map(|d| d * d).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("oracle direction must be a unit vector (norm {norm})")));
    }
    if !(eps > 0.0) {
        return Err(Error::invalid(format!("oracle step must be positive, got {eps}")));
    }
    let final_state = |p: &ParameterPoint| propagate(net, p, control, grid)?.evolve(probe);
    let psi0 = final_state(x)?;
    let curvature = |e: f64| -> Result<f64> {
        let psi = final_state(&x.displaced(dir, e))?;
        // 2(1 − |o|) = ‖ψ − e^{i arg o} ψ₀‖², free of cancellation
        let o = psi0.inner(&psi)?;
        let phase = if o.norm() > 0.0 { o / o.norm() } else { Complex64::new(1.0, 0.0) };
        let dist_sq: f64 =
            psi.amplitudes().iter().zip(psi0.amplitudes().iter()).map(|(a, b)| (a - phase * b).norm_sqr()).sum();
        Ok(4.0 * dist_sq / (e * e))
    };
    let coarse = curvature(eps)?;
    let fine = curvature(0.5 * eps)?;
    let floor = 8.0 * 1e-15 / (0.25 * eps * eps);
    let big = coarse.max(fine);
    if big > floor && (coarse - fine).abs() > 0.01 * big {
        return Err(Error::OracleStepTooLarge(100.0 * (coarse - fine).abs() / big));
    }
    Ok(fine)
}

fn check_distribution(p: &[f64]) -> Result<()> {
    if let Some(bad) = p.iter().find(|v| !(**v >= -PROBABILITY_FLOOR) || !v.is_finite()) {
        return Err(Error::InvalidDistribution(format!("negative or non-finite probability {bad}")));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidDistribution(format!("probabilities sum to {sum}")));
    }
    Ok(())
}

/// `Σ_m (∂_θ p_m)² / p_m` from distributions at `θ` and `θ ± dθ`.
pub fn classical_fisher(p: &[f64], p_plus: &[f64], p_minus: &[f64], dtheta: f64) -> Result<f64> {
    if !(dtheta > 0.0) {
        return Err(Error::invalid(format!("dtheta must be positive, got {dtheta}")));
    }
    if p_plus.len() != p.len() || p_minus.len() != p.len() {
        return Err(Error::DimensionMismatch { expected: p.len(), actual: p_plus.len().min(p_minus.len()) });
    }
    for d in [p, p_plus, p_minus] {
        check_distribution(d)?;
    }
    Ok(p.iter()
        .zip(p_plus.iter().zip(p_minus))
        .filter(|(p0, _)| **p0 >= PROBABILITY_FLOOR)
        .map(|(p0, (pp, pm))| {
            let d = (pp - pm) / (2.0 * dtheta);
            d * d / p0
        })
        .sum())
}

/// Classical Fisher information of a parametrized distribution at `θ`.
pub fn classical_fisher_of<F>(dist: F, theta: f64, dtheta: f64) -> Result<f64>
where
    F: Fn(f64) -> Result<Vec<f64>>,
{
    classical_fisher(&dist(theta)?, &dist(theta + dtheta)?, &dist(theta - dtheta)?, dtheta)
}
