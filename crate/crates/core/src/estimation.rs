//! Probe preparation, local projective measurements, shot sampling, the
//! windowed maximum-likelihood estimator and the adaptive two-stage loop.
//!
//! The estimated quantity is the normalized combination `θ = ŵᵀx` with
//! `ŵ = w/|w|`; moving `θ` by `δ` moves `x` by `δ·ŵ`. Its Fisher information
//! is `wᵀJw / wᵀw`, so the single-shot variance bound is `wᵀw / wᵀJw`.

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::control::{alignment_control, synthesize, ControlProtocol, ControlStrategy};
use crate::dynamics::{evolve_with, generators, propagate, propagate_final, TimeGrid};
use crate::error::{Error, Result};
use crate::metrology::{classical_fisher, DEFAULT_DTHETA};
use crate::model::{ParameterPoint, SensorNetwork, WeightVector};
use crate::operators::{eigen_bounds, CVector, HermitianOperator, PauliVector, PureState};
use crate::par::{self, Execution};
use crate::rng::StreamKey;
use crate::su2::{self, Mat2};

/// Points in the coarse likelihood scan.
pub const SCAN_POINTS: usize = 41;

/// Golden-section stopping width relative to the window width.
pub const REFINE_TOL: f64 = 1e-6;

/// Shots drawn per parallel sampling chunk.
const SHOT_CHUNK: u64 = 1 << 16;

/// Initial probe families.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ProbeSpec {
    /// `(|0…0⟩ + |1…1⟩)/√2`
    Ghz,
    /// `(|01⟩ − |10⟩)/√2`, two qubits only.
    BellSinglet,
    /// Product of single-qubit states `cos(α/2)|0⟩ + e^{iβ} sin(α/2)|1⟩`
    /// given as `[α, β]` per qubit; `|+⟩` on every qubit when omitted.
    Product {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        angles: Option<Vec<[f64; 2]>>,
    },
    /// `(|λ_max⟩ + |λ_min⟩)/√2` of the combined generator, which reaches the
    /// largest effective QFI for the chosen control.
    Optimal,
    /// Explicit amplitudes, normalized on construction.
    Custom {
        re: Vec<f64>,
        #[serde(default)]
        im: Vec<f64>,
    },
}

impl ProbeSpec {
    pub fn name(&self) -> &'static str {
        match self {
            ProbeSpec::Ghz => "ghz",
            ProbeSpec::BellSinglet => "bell-singlet",
            ProbeSpec::Product { .. } => "product",
            ProbeSpec::Optimal => "optimal",
            ProbeSpec::Custom { .. } => "custom",
        }
    }
}

impl FromStr for ProbeSpec {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ghz" => Ok(ProbeSpec::Ghz),
            "bell-singlet" | "bell_singlet" => Ok(ProbeSpec::BellSinglet),
            "product" => Ok(ProbeSpec::Product { angles: None }),
            "optimal" => Ok(ProbeSpec::Optimal),
            other => {
                Err(Error::Parse(format!("unknown probe '{other}' (expected ghz, bell-singlet, product or optimal)")))
            }
        }
    }
}

/// Builds the probe state for `n_qubits`. [`ProbeSpec::Optimal`] depends on
/// the generator; use [`resolve_probe`] for it.
pub fn make_probe(spec: &ProbeSpec, n_qubits: usize) -> Result<PureState> {
    if n_qubits == 0 {
        return Err(Error::invalid("probe needs at least one qubit"));
    }
    let dim = 1usize << n_qubits;
    let h = Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
    match spec {
        ProbeSpec::Ghz => {
            let mut a = CVector::zeros(dim);
            a[0] = h;
            a[dim - 1] = h;
            PureState::new(a)
        }
        ProbeSpec::BellSinglet => {
            if n_qubits != 2 {
                return Err(Error::invalid(format!("bell-singlet probe needs 2 qubits, network has {n_qubits}")));
            }
            PureState::new(CVector::from_vec(vec![Complex64::new(0.0, 0.0), h, -h, Complex64::new(0.0, 0.0)]))
        }
        ProbeSpec::Product { angles } => {
            let angles = match angles {
                Some(a) if a.len() != n_qubits => {
                    return Err(Error::DimensionMismatch { expected: n_qubits, actual: a.len() });
                }
                Some(a) => a.clone(),
                None => vec![[std::f64::consts::FRAC_PI_2, 0.0]; n_qubits],
            };
            let mut a = CVector::from_element(dim, Complex64::new(1.0, 0.0));
            for (q, [alpha, beta]) in angles.iter().enumerate() {
                if !alpha.is_finite() || !beta.is_finite() {
                    return Err(Error::invalid("non-finite product-probe angle"));
                }
                let c0 = Complex64::new((alpha / 2.0).cos(), 0.0);
                let c1 = Complex64::from_polar((alpha / 2.0).sin(), *beta);
                let bit = 1usize << (n_qubits - 1 - q);
                for (i, amp) in a.iter_mut().enumerate() {
                    *amp *= if i & bit == 0 { c0 } else { c1 };
                }
            }
            PureState::normalized(a)
        }
        ProbeSpec::Optimal => Err(Error::invalid("the optimal probe depends on the generator; resolve it against one")),
        ProbeSpec::Custom { re, im } => {
            if re.len() != dim || !(im.is_empty() || im.len() == dim) {
                return Err(Error::DimensionMismatch { expected: dim, actual: re.len() });
            }
            let a =
                CVector::from_iterator(dim, (0..dim).map(|i| Complex64::new(re[i], im.get(i).copied().unwrap_or(0.0))));
            PureState::normalized(a)
        }
    }
}

/// `(|λ_max⟩ + |λ_min⟩)/√2` of `s_theta`.
pub fn optimal_probe(s_theta: &HermitianOperator) -> Result<PureState> {
    let eig = nalgebra::SymmetricEigen::new(s_theta.matrix().clone());
    let (mut lo, mut hi) = (0, 0);
    for (i, v) in eig.eigenvalues.iter().enumerate() {
        if *v < eig.eigenvalues[lo] {
            lo = i;
        }
        if *v > eig.eigenvalues[hi] {
            hi = i;
        }
    }
    if lo == hi {
        return PureState::normalized(eig.eigenvectors.column(lo).into_owned());
    }
    PureState::normalized(eig.eigenvectors.column(lo) + eig.eigenvectors.column(hi))
}

/// Builds any probe, using `s_theta` for [`ProbeSpec::Optimal`].
pub fn resolve_probe(spec: &ProbeSpec, n_qubits: usize, s_theta: &HermitianOperator) -> Result<PureState> {
    match spec {
        ProbeSpec::Optimal => optimal_probe(s_theta),
        other => make_probe(other, n_qubits),
    }
}

/// Single-qubit Pauli measurement basis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Basis {
    X,
    Y,
    Z,
}

impl Basis {
    /// Maps the `+1` eigenstate to `|0⟩` and the `−1` eigenstate to `|1⟩`.
    fn rotation(self) -> Mat2 {
        match self {
            Basis::X => su2::hadamard(),
            Basis::Y => su2::hadamard() * su2::s_dagger(),
            Basis::Z => su2::identity(),
        }
    }
}

impl fmt::Display for Basis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Basis::X => "x",
            Basis::Y => "y",
            Basis::Z => "z",
        })
    }
}

/// Local projective measurement: an optional frame rotation
/// `exp(−i a_q·σ)` per qubit followed by a Pauli basis readout.
///
/// Outcome index bit `Q−1−q` holds qubit `q` (qubit 0 is most
/// significant); bit value 0 means eigenvalue `+1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementSpec {
    bases: Vec<Basis>,
    frames: Vec<PauliVector>,
}

impl MeasurementSpec {
    pub fn new(bases: Vec<Basis>) -> Result<Self> {
        if bases.is_empty() {
            return Err(Error::invalid("measurement needs at least one qubit"));
        }
        let n = bases.len();
        Ok(Self { bases, frames: vec![PauliVector::ZERO; n] })
    }

    pub fn uniform(basis: Basis, n_qubits: usize) -> Result<Self> {
        Self::new(vec![basis; n_qubits])
    }

    /// Undoes the given per-qubit evolution before readout, so the readout
    /// happens in the frame the control protocol steered into.
    pub fn undoing(mut self, factors: &[Mat2]) -> Result<Self> {
        if factors.len() != self.bases.len() {
            return Err(Error::DimensionMismatch { expected: self.bases.len(), actual: factors.len() });
        }
        self.frames = factors.iter().map(|u| su2::log_pauli(&u.adjoint())).collect();
        Ok(self)
    }

    pub fn num_qubits(&self) -> usize {
        self.bases.len()
    }

    pub fn bases(&self) -> &[Basis] {
        &self.bases
    }

    pub fn frames(&self) -> &[PauliVector] {
        &self.frames
    }

    fn local_unitaries(&self) -> Vec<Mat2> {
        self.bases.iter().zip(&self.frames).map(|(b, a)| b.rotation() * su2::exp_pauli(*a, 1.0)).collect()
    }
}

/// `x` on qubits `0..Q−1`, `y` on the last qubit.
pub fn default_measurement(n_qubits: usize) -> Result<MeasurementSpec> {
    if n_qubits == 0 {
        return Err(Error::invalid("measurement needs at least one qubit"));
    }
    let mut bases = vec![Basis::X; n_qubits];
    bases[n_qubits - 1] = Basis::Y;
    MeasurementSpec::new(bases)
}

/// Born-rule probabilities of the `2^Q` outcomes.
pub fn outcome_distribution(state: &PureState, meas: &MeasurementSpec) -> Result<Vec<f64>> {
    if state.num_qubits() != meas.num_qubits() || state.dim() != 1 << meas.num_qubits() {
        return Err(Error::DimensionMismatch { expected: 1 << meas.num_qubits(), actual: state.dim() });
    }
    let rotated = evolve_with(&meas.local_unitaries(), state)?;
    let p: Vec<f64> = rotated.amplitudes().iter().map(|a| a.norm_sqr()).collect();
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > 1e-10 {
        return Err(Error::InvalidDistribution(format!("outcome probabilities sum to {total}")));
    }
    Ok(p.into_iter().map(|v| v / total).collect())
}

/// Multinomial outcome counts for `mu` shots.
///
/// Shot `i` consumes the uniform draw at counter `i` of `key`, so the counts
/// do not depend on how the shots are split across workers.
pub fn sample_shots(dist: &[f64], mu: u64, key: StreamKey, exec: Execution) -> Result<Vec<u64>> {
    if mu == 0 {
        return Err(Error::invalid("shot count must be at least 1"));
    }
    if dist.is_empty() || dist.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
        return Err(Error::InvalidDistribution("probabilities must be finite and non-negative".into()));
    }
    let total: f64 = dist.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidDistribution(format!("probabilities sum to {total}")));
    }
    let mut cdf = Vec::with_capacity(dist.len());
    let mut acc = 0.0;
    for p in dist {
        acc += p / total;
        cdf.push(acc);
    }
    let last_nonzero = dist.iter().rposition(|p| *p > 0.0).unwrap_or(0);
    let chunks = mu.div_ceil(SHOT_CHUNK) as usize;
    let partial = par::map_indexed(exec, chunks, |c| {
        let start = c as u64 * SHOT_CHUNK;
        let end = (start + SHOT_CHUNK).min(mu);
        let mut counts = vec![0u64; dist.len()];
        let mut rng = key.at(start);
        for _ in start..end {
            let u = crate::rng::to_unit(rand::RngCore::next_u64(&mut rng));
            let k = cdf.partition_point(|c| *c <= u).min(last_nonzero);
            counts[k] += 1;
        }
        counts
    });
    let mut counts = vec![0u64; dist.len()];
    for part in partial {
        for (c, p) in counts.iter_mut().zip(part) {
            *c += p;
        }
    }
    Ok(counts)
}

/// Forward model `θ ↦ p(θ)` for one control protocol, probe and
/// measurement, with all directions orthogonal to `ŵ` held at `reference`.
#[derive(Debug, Clone)]
pub struct SensingModel<'a> {
    net: &'a SensorNetwork,
    grid: TimeGrid,
    protocol: ControlProtocol,
    probe: PureState,
    measurement: MeasurementSpec,
    reference: ParameterPoint,
    direction: Vec<f64>,
}

impl<'a> SensingModel<'a> {
    pub fn new(
        net: &'a SensorNetwork,
        grid: TimeGrid,
        protocol: ControlProtocol,
        probe: PureState,
        measurement: MeasurementSpec,
        reference: ParameterPoint,
        w: &WeightVector,
    ) -> Result<Self> {
        net.check_point(&reference)?;
        net.check_weights(w)?;
        if probe.dim() != 1 << net.total_qubits() {
            return Err(Error::DimensionMismatch { expected: 1 << net.total_qubits(), actual: probe.dim() });
        }
        if measurement.num_qubits() != net.total_qubits() {
            return Err(Error::DimensionMismatch { expected: net.total_qubits(), actual: measurement.num_qubits() });
        }
        if protocol.grid() != &grid {
            return Err(Error::GridMismatch);
        }
        let direction = w.normalized().as_slice().to_vec();
        Ok(Self { net, grid, protocol, probe, measurement, reference, direction })
    }

    pub fn protocol(&self) -> &ControlProtocol {
        &self.protocol
    }

    pub fn measurement(&self) -> &MeasurementSpec {
        &self.measurement
    }

    /// `ŵᵀx`
    pub fn theta_of(&self, x: &ParameterPoint) -> f64 {
        x.as_slice().iter().zip(&self.direction).map(|(a, b)| a * b).sum()
    }

    /// Parameter point with combination `θ` and the reference elsewhere.
    pub fn point(&self, theta: f64) -> ParameterPoint {
        self.reference.displaced(&self.direction, theta - self.theta_of(&self.reference))
    }

    pub fn distribution_at(&self, x: &ParameterPoint) -> Result<Vec<f64>> {
        let factors = propagate_final(self.net, x, Some(&self.protocol), &self.grid)?;
        outcome_distribution(&evolve_with(&factors, &self.probe)?, &self.measurement)
    }

    pub fn distribution(&self, theta: f64) -> Result<Vec<f64>> {
        self.distribution_at(&self.point(theta))
    }

    /// Classical Fisher information for the normalized `θ`.
    pub fn fisher(&self, theta: f64) -> Result<f64> {
        let d = DEFAULT_DTHETA;
        classical_fisher(&self.distribution(theta)?, &self.distribution(theta + d)?, &self.distribution(theta - d)?, d)
    }
}

/// One row of an estimation trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    /// 0 for the separable stage, then 1, 2, … for entangled rounds.
    pub round: usize,
    pub stage: String,
    pub x_hat: Vec<f64>,
    pub protocol: ControlStrategy,
    /// Shots behind `theta_hat`: this round's for the separable stage, all
    /// entangled rounds so far afterwards.
    pub shots: u64,
    pub theta_hat: f64,
    /// Plug-in variance of `theta_hat`.
    pub running_variance: f64,
}

/// Outcome of one estimation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationResult {
    /// Estimate of the normalized combination `ŵᵀx`.
    pub theta_hat: f64,
    /// Plug-in variance of the final estimate; never negative.
    pub sample_variance: f64,
    /// Shots spent on the final estimate.
    pub shots: u64,
    pub x_hat: Vec<f64>,
    pub trace: Vec<TraceRow>,
}

/// Half-width `π|w| / (2·spread(S_θ))` of the interval around the working
/// point on which every outcome probability is monotone in `θ`.
pub fn fringe_half_width(s_theta: &HermitianOperator, w: &WeightVector) -> Result<f64> {
    let (lo, hi) = eigen_bounds(s_theta);
    let spread = hi - lo;
    if !(spread > 1e-12) {
        return Err(Error::EstimatorUndefined("the generator has no spread; outcomes do not depend on θ".into()));
    }
    Ok(std::f64::consts::PI * w.norm_sq().sqrt() / (2.0 * spread))
}

fn log_likelihood(counts: &[u64], p: &[f64]) -> f64 {
    counts.iter().zip(p).filter(|(n, _)| **n > 0).map(|(n, p)| *n as f64 * p.max(1e-300).ln()).sum()
}

/// Maximum-likelihood `θ̂` within `window`: a coarse scan followed by
/// golden-section refinement to `1e-6` of the window width.
pub fn estimate_theta(counts: &[u64], model: &SensingModel<'_>, window: (f64, f64)) -> Result<EstimationResult> {
    estimate_theta_pooled(&[(counts, model)], window)
}

/// Joint maximum-likelihood `θ̂` from several data sets, each recorded
/// under its own model. The plug-in variance is `1/Σ shots_r·F_r(θ̂)`.
pub fn estimate_theta_pooled(data: &[(&[u64], &SensingModel<'_>)], window: (f64, f64)) -> Result<EstimationResult> {
    let (lo, hi) = window;
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::invalid(format!("invalid estimation window [{lo}, {hi}]")));
    }
    let Some((_, last_model)) = data.last() else {
        return Err(Error::invalid("no data to estimate from"));
    };
    let shots: u64 = data.iter().map(|(c, _)| c.iter().sum::<u64>()).sum();
    if shots == 0 {
        return Err(Error::invalid("no shots to estimate from"));
    }
    let step = (hi - lo) / (SCAN_POINTS - 1) as f64;
    let thetas: Vec<f64> = (0..SCAN_POINTS).map(|k| lo + k as f64 * step).collect();
    let mut scores = vec![0.0; SCAN_POINTS];
    let mut variation: f64 = 0.0;
    for (counts, model) in data {
        let dists = thetas.iter().map(|t| model.distribution(*t)).collect::<Result<Vec<_>>>()?;
        if dists[0].len() != counts.len() {
            return Err(Error::DimensionMismatch { expected: dists[0].len(), actual: counts.len() });
        }
        variation =
            dists.iter().flat_map(|d| d.iter().zip(&dists[0]).map(|(a, b)| (a - b).abs())).fold(variation, f64::max);
        for (score, d) in scores.iter_mut().zip(&dists) {
            *score += log_likelihood(counts, d);
        }
    }
    if variation < 1e-12 {
        return Err(Error::EstimatorUndefined("likelihood is flat over the window".into()));
    }
    let best = (0..SCAN_POINTS).max_by(|&a, &b| scores[a].total_cmp(&scores[b])).unwrap_or(0);

    let ll = |t: f64| -> Result<f64> {
        data.iter().try_fold(0.0, |acc, (counts, model)| Ok(acc + log_likelihood(counts, &model.distribution(t)?)))
    };
    let (mut a, mut b) = (thetas[best.saturating_sub(1)], thetas[(best + 1).min(SCAN_POINTS - 1)]);
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let tol = REFINE_TOL * (hi - lo);
    let mut c = b - ratio * (b - a);
    let mut d = a + ratio * (b - a);
    let (mut fc, mut fd) = (ll(c)?, ll(d)?);
    while b - a > tol {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - ratio * (b - a);
            fc = ll(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + ratio * (b - a);
            fd = ll(d)?;
        }
    }
    let refined = 0.5 * (a + b);
    let theta_hat = if ll(refined)? >= scores[best] { refined } else { thetas[best] };
    let information = data.iter().try_fold(0.0, |acc, (counts, model)| -> Result<f64> {
        Ok(acc + counts.iter().sum::<u64>() as f64 * model.fisher(theta_hat)?)
    })?;
    let sample_variance = if information > 0.0 { 1.0 / information } else { f64::INFINITY };
    Ok(EstimationResult { theta_hat, sample_variance, shots, x_hat: last_model.point(theta_hat).0, trace: Vec::new() })
}

/// Everything the adaptive loop needs to know about the experiment. The
/// truth only enters through the simulated outcome statistics.
#[derive(Debug, Clone)]
pub struct AdaptivePlan<'a> {
    pub net: &'a SensorNetwork,
    pub truth: ParameterPoint,
    pub prior: ParameterPoint,
    pub w: WeightVector,
    pub grid: TimeGrid,
    pub strategy: ControlStrategy,
    pub probe: ProbeSpec,
}

/// Shot allocation for [`adaptive_estimate`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShotBudget {
    pub stage1: u64,
    pub stage2: u64,
    pub rounds: usize,
}

impl ShotBudget {
    /// Splits `total` shots, giving `stage1_fraction` to the separable stage
    /// and the rest evenly to `rounds` entangled rounds.
    pub fn split(total: u64, stage1_fraction: f64, rounds: usize) -> Result<Self> {
        if !(0.0..1.0).contains(&stage1_fraction) {
            return Err(Error::invalid(format!("stage-1 fraction must lie in [0, 1), got {stage1_fraction}")));
        }
        if rounds == 0 {
            return Err(Error::invalid("rounds must be at least 1"));
        }
        let stage1 = (total as f64 * stage1_fraction).round() as u64;
        Ok(Self { stage1, stage2: total - stage1, rounds })
    }
}

fn stage_key(seed: u64, rep: u64, stage: u64) -> StreamKey {
    StreamKey::substream(seed, rep, stage)
}

/// One entangled or separable estimation round at the current `x̂`.
struct Round<'m> {
    model: SensingModel<'m>,
    window: (f64, f64),
}

fn build_round<'m>(
    plan: &AdaptivePlan<'m>,
    x_hat: &ParameterPoint,
    w: &WeightVector,
    protocol: ControlProtocol,
    probe: &ProbeSpec,
    measurement: MeasurementSpec,
) -> Result<Round<'m>> {
    let schedule = propagate(plan.net, x_hat, Some(&protocol), &plan.grid)?;
    let gens = generators(plan.net, x_hat, w, &schedule, &plan.grid)?;
    let probe = resolve_probe(probe, plan.net.total_qubits(), gens.s_theta())?;
    let measurement = measurement.undoing(&schedule.final_factors())?;
    let half = fringe_half_width(gens.s_theta(), w)?;
    let model = SensingModel::new(plan.net, plan.grid, protocol, probe, measurement, x_hat.clone(), w)?;
    let center = model.theta_of(x_hat);
    Ok(Round { model, window: (center - half, center + half) })
}

/// Two-stage adaptive estimation of `θ = ŵᵀx`.
///
/// Stage 1 estimates every `x_j` separately with `|+⟩` product probes,
/// `y` readout and alignment control for `e_j` at the prior. Each of the
/// following rounds synthesizes the scenario's control at the current
/// `x̂`, runs the entangled protocol, and moves `x̂` along `ŵ` to the joint
/// estimate from all entangled rounds so far. Without control (`none`) the loop collapses to one entangled
/// round that uses the whole budget.
pub fn adaptive_estimate(plan: &AdaptivePlan<'_>, budget: ShotBudget, seed: u64, rep: u64) -> Result<EstimationResult> {
    plan.net.check_point(&plan.truth)?;
    plan.net.check_point(&plan.prior)?;
    plan.net.check_weights(&plan.w)?;
    if budget.rounds == 0 {
        return Err(Error::invalid("rounds must be at least 1"));
    }
    let nq = plan.net.total_qubits();
    let n = plan.net.n_params();
    let mut x_hat = plan.prior.clone();
    let mut trace = Vec::new();

    let collapsed = plan.strategy == ControlStrategy::None;
    let (stage1, rounds, per_round) = if collapsed || budget.stage1 == 0 {
        (
            0,
            if collapsed { 1 } else { budget.rounds },
            if collapsed { budget.stage1 + budget.stage2 } else { budget.stage2 / budget.rounds as u64 },
        )
    } else {
        (budget.stage1 / n as u64, budget.rounds, budget.stage2 / budget.rounds as u64)
    };
    if per_round == 0 {
        return Err(Error::invalid("shot budget leaves an entangled round without shots"));
    }

    if stage1 > 0 {
        let mut rough = x_hat.clone();
        for j in 0..n {
            let e = WeightVector::unit_axis(n, j)?;
            let (protocol, _) = alignment_control(plan.net, &x_hat, &e, &plan.grid)?;
            let meas = MeasurementSpec::uniform(Basis::Y, nq)?;
            let round =
                build_round(plan, &x_hat, &e, protocol, &ProbeSpec::Product { angles: None }, meas).map_err(|err| {
                    match err {
                        Error::EstimatorUndefined(msg) => {
                            Error::EstimatorUndefined(format!("stage 1, parameter {j}: {msg}"))
                        }
                        other => other,
                    }
                })?;
            let truth_dist = round.model.distribution_at(&plan.truth)?;
            let counts = sample_shots(&truth_dist, stage1, stage_key(seed, rep, j as u64), Execution::Sequential)?;
            let est = estimate_theta(&counts, &round.model, round.window)?;
            rough.0[j] = est.theta_hat;
            trace.push(TraceRow {
                round: 0,
                stage: format!("separable-x{j}"),
                x_hat: rough.0.clone(),
                protocol: ControlStrategy::Alignment,
                shots: stage1,
                theta_hat: est.theta_hat,
                running_variance: est.sample_variance,
            });
        }
        x_hat = rough;
    }

    // every entangled round's counts stay in the likelihood
    let mut history: Vec<(Vec<u64>, SensingModel<'_>)> = Vec::new();
    let mut last: Option<EstimationResult> = None;
    for r in 1..=rounds {
        let protocol = synthesize(plan.strategy, plan.net, &x_hat, &plan.w, &plan.grid)?;
        let round = build_round(plan, &x_hat, &plan.w, protocol, &plan.probe, default_measurement(nq)?)?;
        let truth_dist = round.model.distribution_at(&plan.truth)?;
        let counts = sample_shots(&truth_dist, per_round, stage_key(seed, rep, (n + r) as u64), Execution::Sequential)?;
        history.push((counts, round.model));
        let data: Vec<(&[u64], &SensingModel<'_>)> = history.iter().map(|(c, m)| (c.as_slice(), m)).collect();
        let est = estimate_theta_pooled(&data, round.window)?;
        x_hat = ParameterPoint::new(est.x_hat.clone());
        trace.push(TraceRow {
            round: r,
            stage: "entangled".into(),
            x_hat: x_hat.0.clone(),
            protocol: plan.strategy,
            shots: est.shots,
            theta_hat: est.theta_hat,
            running_variance: est.sample_variance,
        });
        last = Some(est);
    }
    let mut result = last.expect("at least one entangled round");
    result.x_hat = x_hat.0;
    result.trace = trace;
    Ok(result)
}

/// Statistics of repeated independent estimation runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloSummary {
    pub reps: usize,
    /// Shots behind each final estimate.
    pub shots: u64,
    /// `ŵᵀx` at the truth.
    pub theta_true: f64,
    pub mean: f64,
    /// Unbiased sample variance of the final estimates.
    pub sample_variance: f64,
    /// `shots · sample_variance`, comparable to the single-shot bound.
    pub mu_variance: f64,
    pub runs: Vec<EstimationResult>,
}

/// Runs `reps` independent adaptive estimations; run `r` draws from stream
/// `(seed, r)`, so results do not depend on scheduling.
pub fn monte_carlo(
    plan: &AdaptivePlan<'_>,
    budget: ShotBudget,
    seed: u64,
    reps: usize,
    exec: Execution,
) -> Result<MonteCarloSummary> {
    if reps < 2 {
        return Err(Error::invalid("Monte Carlo needs at least two repetitions"));
    }
    let runs = par::try_map_indexed(exec, reps, |r| adaptive_estimate(plan, budget, seed, r as u64))?;
    let est: Vec<f64> = runs.iter().map(|r| r.theta_hat).collect();
    let mean = est.iter().sum::<f64>() / reps as f64;
    let sample_variance = est.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (reps - 1) as f64;
    let shots = runs[0].shots;
    let theta_true = plan.w.normalized().dot(&plan.truth);
    Ok(MonteCarloSummary {
        reps,
        shots,
        theta_true,
        mean,
        sample_variance,
        mu_variance: shots as f64 * sample_variance,
        runs,
    })
}
