//! Time-ordered propagation under free fields plus local control, and the
//! parameter generators `S_j(T) = i U†(T) ∂_j U(T)`.
//!
//! The fast path keeps one 2×2 factor per qubit. A dense path that
//! exponentiates the full register Hamiltonian is kept alongside it; it
//! backs the finite-difference generator oracle and the locality checks.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::control::ControlProtocol;
use crate::error::{Error, Result};
use crate::model::{ParameterPoint, SensorNetwork, WeightVector};
use crate::operators::{kron, local_sum, step_unitary, CMatrix, HermitianOperator, PauliVector, PureState, Unitary};
use crate::su2::{self, Mat2};

/// Uniform grid of `M` steps over `[0, T]`, sampled at step midpoints.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    total: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(total: f64, steps: usize) -> Result<Self> {
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::invalid(format!("total time must be positive and finite, got {total}")));
        }
        if steps == 0 {
            return Err(Error::invalid("grid needs at least one step"));
        }
        Ok(Self { total, steps })
    }

    pub fn total(&self) -> f64 {
        self.total
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.total / self.steps as f64
    }

    /// `t_m = (m + ½)·Δt`
    pub fn midpoint(&self, m: usize) -> f64 {
        (m as f64 + 0.5) * self.dt()
    }

    /// `m·Δt`, for `m ∈ 0..=M`.
    pub fn point(&self, m: usize) -> f64 {
        m as f64 * self.dt()
    }

    /// Same span with twice the resolution.
    pub fn refined(&self) -> TimeGrid {
        TimeGrid { total: self.total, steps: 2 * self.steps }
    }

    /// A spread of sample times covering the grid, used to detect time
    /// dependence without scanning every step.
    pub fn probe_times(&self) -> impl Iterator<Item = f64> + '_ {
        let n = self.steps.min(64);
        let last = self.steps - 1;
        (0..n).map(move |k| self.midpoint(if n > 1 { k * last / (n - 1) } else { 0 })).chain([self.total])
    }
}

/// Per-qubit factorized propagator on a grid.
#[derive(Debug, Clone)]
pub struct PropagatorSchedule {
    grid: TimeGrid,
    n_qubits: usize,
    /// Total single-qubit Hamiltonian of every step, `[m·Q + q]`.
    hamiltonians: Vec<PauliVector>,
    /// Step factors `exp(−i h Δt)`, `[m·Q + q]`.
    steps: Vec<Mat2>,
    /// Cumulative factors at grid points `0..=M`, `[k·Q + q]`; index 0 holds
    /// the preparation rotation.
    cumulative: Vec<Mat2>,
}

impl PropagatorSchedule {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn num_qubits(&self) -> usize {
        self.n_qubits
    }

    /// Every step factorizes by construction: controls are stored per qubit
    /// and the free Hamiltonian has no couplings.
    pub fn is_local(&self) -> bool {
        true
    }

    pub fn step_hamiltonian(&self, m: usize, q: usize) -> PauliVector {
        self.hamiltonians[m * self.n_qubits + q]
    }

    pub fn step_factor(&self, m: usize, q: usize) -> &Mat2 {
        &self.steps[m * self.n_qubits + q]
    }

    /// `U_q(kΔt)`, including the preparation rotation.
    pub fn cumulative_factor(&self, k: usize, q: usize) -> &Mat2 {
        &self.cumulative[k * self.n_qubits + q]
    }

    /// `U_q(t_m)` at the midpoint of step `m`.
    pub fn midpoint_factor(&self, m: usize, q: usize) -> Mat2 {
        su2::exp_pauli(self.step_hamiltonian(m, q), 0.5 * self.grid.dt()) * self.cumulative_factor(m, q)
    }

    pub fn final_factor(&self, q: usize) -> &Mat2 {
        self.cumulative_factor(self.grid.steps(), q)
    }

    pub fn final_factors(&self) -> Vec<Mat2> {
        (0..self.n_qubits).map(|q| *self.final_factor(q)).collect()
    }

    /// Dense `U(t_{m+1}) U(t_m)†` for step `m`.
    pub fn step_unitary(&self, m: usize) -> Unitary {
        Unitary::from_matrix_unchecked(kron_factors(&self.steps[m * self.n_qubits..(m + 1) * self.n_qubits]))
    }

    /// Dense cumulative propagator at grid point `k`.
    pub fn cumulative_unitary(&self, k: usize) -> Unitary {
        Unitary::from_matrix_unchecked(kron_factors(&self.cumulative[k * self.n_qubits..(k + 1) * self.n_qubits]))
    }

    pub fn final_unitary(&self) -> Unitary {
        self.cumulative_unitary(self.grid.steps())
    }

    /// `U(T)|ψ₀⟩` without forming the dense propagator.
    pub fn evolve(&self, probe: &PureState) -> Result<PureState> {
        evolve_with(&self.final_factors(), probe)
    }
}

/// Applies one single-qubit unitary per qubit in place.
pub(crate) fn apply_factors(amps: &mut [Complex64], factors: &[Mat2]) {
    let n = factors.len();
    for (q, u) in factors.iter().enumerate() {
        su2::apply_to_qubit(amps, q, n, u);
    }
}

/// `u₀ ⊗ u₁ ⊗ … ⊗ u_{Q−1}` (qubit 0 most significant).
pub fn kron_factors(factors: &[Mat2]) -> CMatrix {
    factors.iter().fold(CMatrix::identity(1, 1), |acc, f| kron(&acc, &CMatrix::from_iterator(2, 2, f.iter().copied())))
}

fn check_control(net: &SensorNetwork, control: Option<&ControlProtocol>, grid: &TimeGrid) -> Result<()> {
    if let Some(c) = control {
        if c.grid() != grid {
            return Err(Error::GridMismatch);
        }
        if c.num_qubits() != net.total_qubits() {
            return Err(Error::DimensionMismatch { expected: net.total_qubits(), actual: c.num_qubits() });
        }
    }
    Ok(())
}

/// Propagates the network at `x` under an optional frozen control protocol.
pub fn propagate(
    net: &SensorNetwork,
    x: &ParameterPoint,
    control: Option<&ControlProtocol>,
    grid: &TimeGrid,
) -> Result<PropagatorSchedule> {
    net.check_point(x)?;
    check_control(net, control, grid)?;
    let nq = net.total_qubits();
    let m_total = grid.steps();
    let dt = grid.dt();

    let mut hamiltonians = Vec::with_capacity(m_total * nq);
    let mut steps = Vec::with_capacity(m_total * nq);
    let mut cumulative = Vec::with_capacity((m_total + 1) * nq);
    for q in 0..nq {
        let prep = control.and_then(|c| c.preparation()).map(|p| p[q]).unwrap_or(PauliVector::ZERO);
        cumulative.push(su2::exp_pauli(prep, 1.0));
    }
    for m in 0..m_total {
        let t = grid.midpoint(m);
        for q in 0..nq {
            let mut h = net.field(q, x, t)?;
            if let Some(c) = control {
                h += c.control(m, q);
            }
            let step = su2::exp_pauli(h, dt);
            let next = step * cumulative[m * nq + q];
            hamiltonians.push(h);
            steps.push(step);
            cumulative.push(next);
        }
    }
    Ok(PropagatorSchedule { grid: *grid, n_qubits: nq, hamiltonians, steps, cumulative })
}

/// Final per-qubit factors `U_q(T)` only; the cheap path used inside
/// likelihood evaluations.
pub fn propagate_final(
    net: &SensorNetwork,
    x: &ParameterPoint,
    control: Option<&ControlProtocol>,
    grid: &TimeGrid,
) -> Result<Vec<Mat2>> {
    net.check_point(x)?;
    check_control(net, control, grid)?;
    let nq = net.total_qubits();
    let dt = grid.dt();
    let mut factors: Vec<Mat2> = (0..nq)
        .map(|q| {
            let prep = control.and_then(|c| c.preparation()).map(|p| p[q]).unwrap_or(PauliVector::ZERO);
            su2::exp_pauli(prep, 1.0)
        })
        .collect();
    for m in 0..grid.steps() {
        let t = grid.midpoint(m);
        for (q, u) in factors.iter_mut().enumerate() {
            let mut h = net.field(q, x, t)?;
            if let Some(c) = control {
                h += c.control(m, q);
            }
            *u = su2::exp_pauli(h, dt) * *u;
        }
    }
    Ok(factors)
}

/// `U(T)|ψ₀⟩` from per-qubit final factors.
pub fn evolve_with(factors: &[Mat2], probe: &PureState) -> Result<PureState> {
    if probe.dim() != 1 << factors.len() {
        return Err(Error::DimensionMismatch { expected: 1 << factors.len(), actual: probe.dim() });
    }
    let mut out = probe.clone();
    apply_factors(out.amplitudes_mut().as_mut_slice(), factors);
    Ok(out)
}

/// Dense reference propagator: exponentiates the full register
/// Hamiltonian of every step by eigendecomposition.
pub fn propagate_dense(
    net: &SensorNetwork,
    x: &ParameterPoint,
    control: Option<&ControlProtocol>,
    grid: &TimeGrid,
) -> Result<Unitary> {
    net.check_point(x)?;
    check_control(net, control, grid)?;
    let nq = net.total_qubits();
    let mut u = match control.and_then(|c| c.preparation()) {
        Some(prep) => step_unitary(&local_sum(prep)?, 1.0)?,
        None => Unitary::identity(1 << nq),
    };
    for m in 0..grid.steps() {
        let h = dense_step_hamiltonian(net, x, control, grid, m)?;
        u = step_unitary(&h, grid.dt())?.compose(&u);
    }
    Ok(u)
}

fn dense_step_hamiltonian(
    net: &SensorNetwork,
    x: &ParameterPoint,
    control: Option<&ControlProtocol>,
    grid: &TimeGrid,
    m: usize,
) -> Result<HermitianOperator> {
    let t = grid.midpoint(m);
    let free = crate::model::free_hamiltonian(net, x, t)?;
    Ok(match control {
        Some(c) => &free + &local_sum(c.step(m))?,
        None => free,
    })
}

/// Largest max-norm distance between the dense step propagator
/// `exp(−i(H_free + H_C)Δt)` and the Kronecker product of the per-qubit
/// factors, over every step (and the preparation rotation).
pub fn factorization_residual(
    net: &SensorNetwork,
    x: &ParameterPoint,
    control: Option<&ControlProtocol>,
    grid: &TimeGrid,
) -> Result<f64> {
    let schedule = propagate(net, x, control, grid)?;
    let nq = net.total_qubits();
    let mut worst = 0.0f64;
    if let Some(prep) = control.and_then(|c| c.preparation()) {
        let dense = step_unitary(&local_sum(prep)?, 1.0)?;
        let factors: Vec<Mat2> = (0..nq).map(|q| *schedule.cumulative_factor(0, q)).collect();
        worst = worst.max(crate::operators::max_abs_diff(dense.matrix(), &kron_factors(&factors)));
    }
    for m in 0..grid.steps() {
        let dense = step_unitary(&dense_step_hamiltonian(net, x, control, grid, m)?, grid.dt())?;
        worst = worst.max(crate::operators::max_abs_diff(dense.matrix(), schedule.step_unitary(m).matrix()));
    }
    Ok(worst)
}

/// Generators `S_j(T)` for every parameter and their weighted sum.
#[derive(Debug, Clone)]
pub struct GeneratorSet {
    s: Vec<HermitianOperator>,
    s_theta: HermitianOperator,
    local: Option<Vec<Vec<PauliVector>>>,
    theta_local: Option<Vec<PauliVector>>,
}

impl GeneratorSet {
    /// Assembles a set from dense generators; `S_θ = Σ_j w_j S_j`.
    pub fn from_operators(s: Vec<HermitianOperator>, w: &WeightVector) -> Result<Self> {
        if s.is_empty() {
            return Err(Error::invalid("generator set is empty"));
        }
        if s.len() != w.len() {
            return Err(Error::DimensionMismatch { expected: s.len(), actual: w.len() });
        }
        let dim = s[0].dim();
        if let Some(bad) = s.iter().find(|g| g.dim() != dim) {
            return Err(Error::DimensionMismatch { expected: dim, actual: bad.dim() });
        }
        let mut acc = CMatrix::zeros(dim, dim);
        for (g, wj) in s.iter().zip(w.as_slice()) {
            acc += g.matrix().map(|z| z * *wj);
        }
        let s_theta = HermitianOperator::hermitized(acc)?;
        Ok(Self { s, s_theta, local: None, theta_local: None })
    }

    fn from_local(local: Vec<Vec<PauliVector>>, w: &WeightVector) -> Result<Self> {
        let nq = local[0].len();
        let theta_local: Vec<PauliVector> = (0..nq)
            .map(|q| local.iter().zip(w.as_slice()).fold(PauliVector::ZERO, |acc, (terms, wj)| acc + terms[q] * *wj))
            .collect();
        let s = local.iter().map(|terms| local_sum(terms)).collect::<Result<Vec<_>>>()?;
        let s_theta = local_sum(&theta_local)?;
        Ok(Self { s, s_theta, local: Some(local), theta_local: Some(theta_local) })
    }

    pub fn n_params(&self) -> usize {
        self.s.len()
    }

    pub fn dim(&self) -> usize {
        self.s_theta.dim()
    }

    pub fn s(&self, j: usize) -> &HermitianOperator {
        &self.s[j]
    }

    pub fn all(&self) -> &[HermitianOperator] {
        &self.s
    }

    pub fn s_theta(&self) -> &HermitianOperator {
        &self.s_theta
    }

    /// Per-qubit Pauli vectors of `S_j`, when the set came from a local
    /// propagation.
    pub fn local_terms(&self, j: usize) -> Option<&[PauliVector]> {
        self.local.as_ref().map(|l| l[j].as_slice())
    }

    /// Per-qubit Pauli vectors of `S_θ`.
    pub fn theta_terms(&self) -> Option<&[PauliVector]> {
        self.theta_local.as_deref()
    }
}

/// Integral-form generators on the midpoint rule:
/// `S_j = Σ_m U†(t_m) ∂_j H(t_m) U(t_m) Δt`.
pub fn generators(
    net: &SensorNetwork,
    x: &ParameterPoint,
    w: &WeightVector,
    schedule: &PropagatorSchedule,
    grid: &TimeGrid,
) -> Result<GeneratorSet> {
    net.check_point(x)?;
    net.check_weights(w)?;
    if schedule.grid() != grid {
        return Err(Error::GridMismatch);
    }
    if schedule.num_qubits() != net.total_qubits() {
        return Err(Error::DimensionMismatch { expected: net.total_qubits(), actual: schedule.num_qubits() });
    }
    let nq = net.total_qubits();
    let n = net.n_params();
    let dt = grid.dt();
    let mut local = vec![vec![PauliVector::ZERO; nq]; n];
    for m in 0..grid.steps() {
        let t = grid.midpoint(m);
        for q in 0..nq {
            let u = schedule.midpoint_factor(m, q);
            for (j, terms) in local.iter_mut().enumerate() {
                let d = net.partial(q, j, x, t)?;
                if d != PauliVector::ZERO {
                    terms[q] += su2::conjugate(&u, d) * dt;
                }
            }
        }
    }
    GeneratorSet::from_local(local, w)
}

/// Finite-difference generator `i U†(T;x) (U(T;x+εe_j) − U(T;x−εe_j)) / 2ε`
/// through the dense propagator, with the control protocol held fixed.
pub fn generator_oracle(
    net: &SensorNetwork,
    x: &ParameterPoint,
    control: Option<&ControlProtocol>,
    grid: &TimeGrid,
    j: usize,
    eps: f64,
) -> Result<HermitianOperator> {
    if !(eps > 0.0) {
        return Err(Error::invalid(format!("oracle step must be positive, got {eps}")));
    }
    net.check_point(x)?;
    if j >= net.n_params() {
        return Err(Error::IndexOutOfRange { index: j, limit: net.n_params() });
    }
    let mut e = vec![0.0; net.n_params()];
    e[j] = 1.0;
    let u0 = propagate_dense(net, x, control, grid)?;
    let up = propagate_dense(net, &x.displaced(&e, eps), control, grid)?;
    let um = propagate_dense(net, &x.displaced(&e, -eps), control, grid)?;
    let diff = (up.matrix() - um.matrix()) / Complex64::new(2.0 * eps, 0.0);
    let s = u0.matrix().adjoint() * diff * Complex64::new(0.0, 1.0);
    HermitianOperator::hermitized(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::FieldSpec;
    use crate::operators::{embed_local, pauli_dot};
    use std::f64::consts::PI;

    fn clock() -> SensorNetwork {
        SensorNetwork::from_specs(
            &[(1, FieldSpec::ConstantZ { param: 0, scale: 1.0 }), (1, FieldSpec::ConstantZ { param: 1, scale: 1.0 })],
            2,
        )
        .unwrap()
    }

    #[test]
    fn grid_validation_and_points() {
        assert!(TimeGrid::new(0.0, 10).is_err());
        assert!(TimeGrid::new(1.0, 0).is_err());
        let g = TimeGrid::new(2.0, 4).unwrap();
        assert_eq!(g.dt(), 0.5);
        assert_eq!(g.midpoint(0), 0.25);
        assert_eq!(g.point(4), 2.0);
    }

    #[test]
    fn zero_field_propagates_to_identity() {
        let grid = TimeGrid::new(3.0, 50).unwrap();
        let s = propagate(&clock(), &ParameterPoint::new(vec![0.0, 0.0]), None, &grid).unwrap();
        assert!(s.final_unitary().max_abs_diff(&Unitary::identity(4)) < 1e-15);
    }

    #[test]
    fn single_qubit_sigma_z_matches_exact_exponential() {
        let net = SensorNetwork::from_specs(&[(1, FieldSpec::ConstantZ { param: 0, scale: 1.0 })], 1).unwrap();
        let grid = TimeGrid::new(PI / 2.0, 1000).unwrap();
        let s = propagate(&net, &ParameterPoint::new(vec![1.0]), None, &grid).unwrap();
        let exact = step_unitary(&pauli_dot(PauliVector::Z).unwrap(), PI / 2.0).unwrap();
        assert!(s.final_unitary().max_abs_diff(&exact) < 1e-6);
        let dense = propagate_dense(&net, &ParameterPoint::new(vec![1.0]), None, &grid).unwrap();
        assert!(dense.max_abs_diff(&exact) < 1e-6);
    }

    #[test]
    fn clock_generators_are_linear_in_time() {
        let grid = TimeGrid::new(1.7, 200).unwrap();
        let x = ParameterPoint::new(vec![1.0, 2.0]);
        let w = WeightVector::new(vec![1.0, -1.0]).unwrap();
        let s = propagate(&clock(), &x, None, &grid).unwrap();
        let g = generators(&clock(), &x, &w, &s, &grid).unwrap();
        let z = pauli_dot(PauliVector::Z).unwrap();
        let s1 = embed_local(&z, 0, 2).unwrap().scaled(1.7);
        let s2 = embed_local(&z, 1, 2).unwrap().scaled(1.7);
        assert!(g.s(0).max_abs_diff(&s1) < 1e-12);
        assert!(g.s(1).max_abs_diff(&s2) < 1e-12);
        let oracle = generator_oracle(&clock(), &x, None, &grid, 0, 1e-5).unwrap();
        assert!(oracle.max_abs_diff(&s1) < 1e-6);
    }

    #[test]
    fn zero_field_gives_zero_generators() {
        let net = SensorNetwork::from_specs(&[(2, FieldSpec::Constant { value: [0.0, 0.0, 0.3] })], 1).unwrap();
        let grid = TimeGrid::new(1.0, 20).unwrap();
        let x = ParameterPoint::new(vec![0.5]);
        let w = WeightVector::new(vec![1.0]).unwrap();
        let s = propagate(&net, &x, None, &grid).unwrap();
        assert_eq!(generators(&net, &x, &w, &s, &grid).unwrap().s_theta().max_abs(), 0.0);
        assert!(generator_oracle(&net, &x, None, &grid, 0, 1e-5).unwrap().max_abs() < 1e-9);
    }

    #[test]
    fn theta_generator_is_weighted_sum() {
        let net = SensorNetwork::from_specs(
            &[(1, FieldSpec::Angle { param: 0, amplitude: 1.0 }), (2, FieldSpec::Ac { param: 1, amplitude: 0.5 })],
            2,
        )
        .unwrap();
        let grid = TimeGrid::new(1.3, 300).unwrap();
        let x = ParameterPoint::new(vec![0.2, 0.9]);
        let w = WeightVector::new(vec![0.7, -1.3]).unwrap();
        let s = propagate(&net, &x, None, &grid).unwrap();
        let g = generators(&net, &x, &w, &s, &grid).unwrap();
        let manual = &g.s(0).scaled(0.7) + &g.s(1).scaled(-1.3);
        assert!(g.s_theta().max_abs_diff(&manual) < 1e-10);
    }

    #[test]
    fn grid_mismatch_is_rejected() {
        let grid = TimeGrid::new(1.0, 10).unwrap();
        let other = TimeGrid::new(1.0, 20).unwrap();
        let ctrl = ControlProtocol::zero(other, 2);
        let x = ParameterPoint::new(vec![1.0, 1.0]);
        assert_eq!(propagate(&clock(), &x, Some(&ctrl), &grid).unwrap_err(), Error::GridMismatch);
        let s = propagate(&clock(), &x, None, &other).unwrap();
        let w = WeightVector::new(vec![1.0, 1.0]).unwrap();
        assert_eq!(generators(&clock(), &x, &w, &s, &grid).unwrap_err(), Error::GridMismatch);
    }

    #[test]
    fn cumulative_products_stay_unitary() {
        let net = SensorNetwork::from_specs(&[(3, FieldSpec::Angle { param: 0, amplitude: 2.0 })], 1).unwrap();
        let grid = TimeGrid::new(5.0, 500).unwrap();
        let s = propagate(&net, &ParameterPoint::new(vec![0.3]), None, &grid).unwrap();
        for k in (0..=500).step_by(50) {
            assert!(s.cumulative_unitary(k).unitarity_residual() < 1e-8);
        }
    }
}
