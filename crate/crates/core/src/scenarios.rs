//! Scenario definitions, the built-in registry, randomized scenarios for
//! property checks, and the sweep / estimation drivers.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::control::{synthesize, verify_protocol, AlignmentResidual, ControlProtocol, ControlStrategy};
use crate::dynamics::{factorization_residual, generators, propagate, TimeGrid};
use crate::error::{Error, Result};
use crate::estimation::{
    adaptive_estimate, default_measurement, monte_carlo, resolve_probe, AdaptivePlan, EstimationResult, ProbeSpec,
    SensingModel, ShotBudget, TraceRow,
};
use crate::metrology::{effective_qfi, max_qfi, precision_bound, qfi_upper_bound, qfim, PrecisionReport};
use crate::model::{Axis, FieldSpec, ParameterPoint, SensorNetwork, TrigTerm, WeightVector, MAX_QUBITS};
use crate::par::{self, Execution};
use crate::rng::StreamKey;

/// Names accepted by [`builtin`].
pub const BUILTIN_NAMES: [&str; 3] = ["clock_sync", "radar", "ac_fields"];

fn default_sweep() -> Vec<f64> {
    vec![0.5, 1.0, 2.0, 4.0, 8.0]
}

fn default_base_steps() -> usize {
    2000
}

fn default_shots() -> u64 {
    100_000
}

fn default_rounds() -> usize {
    3
}

fn default_stage1_fraction() -> f64 {
    0.1
}

fn default_reps() -> usize {
    1
}

fn default_seed() -> u64 {
    20240601
}

fn default_times() -> Vec<f64> {
    vec![1.0]
}

/// One network node: `qubits` sensors sharing one field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeDef {
    pub qubits: usize,
    pub field: FieldSpec,
}

/// Shot budget and Monte Carlo settings for the estimation driver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimationSettings {
    /// Total shots `μ` per run.
    #[serde(default = "default_shots")]
    pub shots: u64,
    #[serde(default = "default_rounds")]
    pub rounds: usize,
    #[serde(default = "default_stage1_fraction")]
    pub stage1_fraction: f64,
    /// Independent repetitions; two or more give a sample variance.
    #[serde(default = "default_reps")]
    pub reps: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Sensing times at which estimation runs.
    #[serde(default = "default_times")]
    pub times: Vec<f64>,
}

impl Default for EstimationSettings {
    fn default() -> Self {
        Self {
            shots: default_shots(),
            rounds: default_rounds(),
            stage1_fraction: default_stage1_fraction(),
            reps: default_reps(),
            seed: default_seed(),
            times: default_times(),
        }
    }
}

/// Serializable, fully explicit scenario description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioDef {
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub n_params: usize,
    pub nodes: Vec<NodeDef>,
    pub truth: Vec<f64>,
    /// Starting estimate for adaptive runs; the truth when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior: Option<Vec<f64>>,
    pub weights: Vec<f64>,
    #[serde(default = "default_sweep")]
    pub sweep: Vec<f64>,
    /// Steps per unit time; a sweep entry `T` uses `⌈base_steps·max(1, T)⌉`.
    #[serde(default = "default_base_steps")]
    pub base_steps: usize,
    pub probe: ProbeSpec,
    pub control: ControlStrategy,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fd_step: Option<f64>,
    /// Optional `[lo, hi]` box per parameter, used to validate inputs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<Vec<[f64; 2]>>,
    #[serde(default)]
    pub estimation: EstimationSettings,
}

fn key_err(key: &str, msg: impl std::fmt::Display) -> Error {
    Error::InvalidInput(format!("{key}: {msg}"))
}

fn check_len(key: &str, v: &[f64], n: usize) -> Result<()> {
    if v.len() != n {
        return Err(key_err(key, format!("expected {n} entries, got {}", v.len())));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(key_err(key, "entries must be finite"));
    }
    Ok(())
}

fn check_times(key: &str, ts: &[f64]) -> Result<()> {
    if ts.is_empty() {
        return Err(key_err(key, "needs at least one time"));
    }
    if let Some(t) = ts.iter().find(|t| !(**t > 0.0) || !t.is_finite()) {
        return Err(key_err(key, format!("times must be positive and finite, got {t}")));
    }
    Ok(())
}

impl ScenarioDef {
    /// Checks every field, naming the offending key on failure.
    pub fn validate(&self) -> Result<()> {
        if self.n_params == 0 {
            return Err(key_err("n_params", "must be at least 1"));
        }
        if self.nodes.is_empty() {
            return Err(key_err("nodes", "needs at least one node"));
        }
        let total: usize = self.nodes.iter().map(|n| n.qubits).sum();
        if total > MAX_QUBITS {
            return Err(key_err("nodes", format!("{total} qubits exceeds the limit of {MAX_QUBITS}")));
        }
        for (k, node) in self.nodes.iter().enumerate() {
            if node.qubits == 0 {
                return Err(key_err(&format!("nodes[{k}].qubits"), "must be at least 1"));
            }
            node.field.validate(self.n_params).map_err(|e| key_err(&format!("nodes[{k}].field"), e))?;
        }
        check_len("truth", &self.truth, self.n_params)?;
        if let Some(p) = &self.prior {
            check_len("prior", p, self.n_params)?;
        }
        check_len("weights", &self.weights, self.n_params)?;
        if self.weights.iter().all(|w| *w == 0.0) {
            return Err(key_err("weights", "must not be all zero"));
        }
        check_times("sweep", &self.sweep)?;
        if self.base_steps == 0 {
            return Err(key_err("base_steps", "must be at least 1"));
        }
        if let Some(s) = self.fd_step {
            if !(s > 0.0) {
                return Err(key_err("fd_step", "must be positive"));
            }
        }
        if self.control == ControlStrategy::Custom {
            return Err(key_err("control", "custom protocols cannot be synthesized by a scenario"));
        }
        if self.probe == ProbeSpec::BellSinglet && total != 2 {
            return Err(key_err("probe", "bell-singlet needs exactly two qubits"));
        }
        if let Some(domain) = &self.domain {
            if domain.len() != self.n_params {
                return Err(key_err("domain", format!("expected {} ranges, got {}", self.n_params, domain.len())));
            }
            let inside = |key: &str, x: &[f64]| -> Result<()> {
                for (j, (v, [lo, hi])) in x.iter().zip(domain).enumerate() {
                    if !(lo <= v && v <= hi) {
                        return Err(key_err(key, format!("entry {j} = {v} lies outside [{lo}, {hi}]")));
                    }
                }
                Ok(())
            };
            inside("truth", &self.truth)?;
            if let Some(p) = &self.prior {
                inside("prior", p)?;
            }
        }
        let e = &self.estimation;
        if e.shots == 0 {
            return Err(key_err("estimation.shots", "must be at least 1"));
        }
        if e.rounds == 0 {
            return Err(key_err("estimation.rounds", "must be at least 1"));
        }
        if !(0.0..1.0).contains(&e.stage1_fraction) {
            return Err(key_err("estimation.stage1_fraction", "must lie in [0, 1)"));
        }
        if e.reps == 0 {
            return Err(key_err("estimation.reps", "must be at least 1"));
        }
        check_times("estimation.times", &e.times)
    }

    /// Steps used for sensing time `t`.
    pub fn steps_for(&self, t: f64) -> usize {
        (self.base_steps as f64 * t.max(1.0)).ceil() as usize
    }
}

/// A validated scenario with its network built.
#[derive(Debug, Clone)]
pub struct Scenario {
    def: ScenarioDef,
    network: SensorNetwork,
    weights: WeightVector,
    truth: ParameterPoint,
    prior: ParameterPoint,
}

impl Scenario {
    pub fn new(def: ScenarioDef) -> Result<Self> {
        def.validate()?;
        let nodes: Vec<(usize, FieldSpec)> = def.nodes.iter().map(|n| (n.qubits, n.field.clone())).collect();
        let mut network = SensorNetwork::from_specs(&nodes, def.n_params)?;
        if let Some(step) = def.fd_step {
            network = network.with_fd_step(step)?;
        }
        let weights = WeightVector::new(def.weights.clone())?;
        let truth = ParameterPoint::new(def.truth.clone());
        let prior = ParameterPoint::new(def.prior.clone().unwrap_or_else(|| def.truth.clone()));
        Ok(Self { def, network, weights, truth, prior })
    }

    pub fn def(&self) -> &ScenarioDef {
        &self.def
    }

    pub fn name(&self) -> &str {
        &self.def.name
    }

    pub fn network(&self) -> &SensorNetwork {
        &self.network
    }

    pub fn weights(&self) -> &WeightVector {
        &self.weights
    }

    pub fn truth(&self) -> &ParameterPoint {
        &self.truth
    }

    pub fn prior(&self) -> &ParameterPoint {
        &self.prior
    }

    pub fn grid_for(&self, t: f64) -> Result<TimeGrid> {
        TimeGrid::new(t, self.def.steps_for(t))
    }

    /// The scenario's control protocol at estimate `x̂`.
    pub fn protocol(&self, x_hat: &ParameterPoint, grid: &TimeGrid) -> Result<ControlProtocol> {
        synthesize(self.def.control, &self.network, x_hat, &self.weights, grid)
    }
}

/// One row of a sweep report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    #[serde(rename = "T")]
    pub t: f64,
    pub steps: usize,
    /// Effective QFI with the scenario's control and probe.
    pub qfi_controlled: f64,
    /// Largest effective QFI any probe reaches without control.
    pub qfi_uncontrolled: f64,
    /// Saturable ceiling from the V-magnitude integrals.
    pub bound: f64,
    /// Classical Fisher information of the local readout, along `w`.
    pub cfi: f64,
    /// `wᵀw / qfi_controlled` (one shot); infinite when the QFI vanishes.
    pub precision_bound: f64,
}

/// Sweep results in sweep order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub scenario: String,
    pub rows: Vec<ReportRow>,
}

impl ScenarioReport {
    /// Least-squares slope of `log qfi_controlled` against `log T`.
    pub fn loglog_slope(&self) -> Option<f64> {
        let pts: Vec<(f64, f64)> =
            self.rows.iter().filter(|r| r.qfi_controlled > 0.0).map(|r| (r.t.ln(), r.qfi_controlled.ln())).collect();
        loglog_fit(&pts)
    }
}

fn loglog_fit(pts: &[(f64, f64)]) -> Option<f64> {
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    Some(pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / sxx)
}

/// Evaluates one sensing time with control synthesized at the truth.
pub fn evaluate_row(s: &Scenario, t: f64) -> Result<ReportRow> {
    let grid = s.grid_for(t)?;
    let net = s.network();
    let x = s.truth();
    let w = s.weights();
    let protocol = s.protocol(x, &grid)?;
    let schedule = propagate(net, x, Some(&protocol), &grid)?;
    let gens = generators(net, x, w, &schedule, &grid)?;
    let probe = resolve_probe(&s.def.probe, net.total_qubits(), gens.s_theta())?;
    let qfi_controlled = effective_qfi(&qfim(&probe, &gens)?, w)?;

    let free = propagate(net, x, None, &grid)?;
    let qfi_uncontrolled = max_qfi(generators(net, x, w, &free, &grid)?.s_theta());
    let bound = qfi_upper_bound(net, x, w, &grid)?;

    let measurement = default_measurement(net.total_qubits())?.undoing(&schedule.final_factors())?;
    let model = SensingModel::new(net, grid, protocol, probe, measurement, x.clone(), w)?;
    let cfi = model.fisher(model.theta_of(x))? * w.norm_sq();
    let report = PrecisionReport::new(qfi_controlled, bound, w, 1)?;
    let precision_bound = report.variance_bound.unwrap_or(f64::INFINITY);
    Ok(ReportRow { t, steps: grid.steps(), qfi_controlled, qfi_uncontrolled, bound, cfi, precision_bound })
}

/// Evaluates every sweep entry; rows may run concurrently but come back in
/// sweep order.
pub fn run_scenario(s: &Scenario, exec: Execution) -> Result<ScenarioReport> {
    let sweep = &s.def.sweep;
    let rows = par::try_map_indexed(exec, sweep.len(), |i| evaluate_row(s, sweep[i]))?;
    Ok(ScenarioReport { scenario: s.name().to_string(), rows })
}

/// Control protocol of the scenario at the truth, with its quality checks.
#[derive(Debug, Clone)]
pub struct ProtocolExport {
    pub t: f64,
    pub protocol: ControlProtocol,
    pub residual: AlignmentResidual,
    /// Worst distance between dense step propagators and the Kronecker
    /// product of their per-qubit factors.
    pub factorization_residual: f64,
}

/// Synthesizes the scenario's protocol at sensing time `t`.
pub fn export_protocol(s: &Scenario, t: f64) -> Result<ProtocolExport> {
    let grid = s.grid_for(t)?;
    let protocol = s.protocol(s.truth(), &grid)?;
    let residual = verify_protocol(s.network(), s.truth(), s.weights(), &protocol, &grid)?;
    let factorization_residual = factorization_residual(s.network(), s.truth(), Some(&protocol), &grid)?;
    Ok(ProtocolExport { t, protocol, residual, factorization_residual })
}

/// Estimation outcome at one sensing time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationReport {
    #[serde(rename = "T")]
    pub t: f64,
    pub steps: usize,
    pub reps: usize,
    /// Shots behind each final estimate.
    pub shots: u64,
    /// `ŵᵀx` at the truth.
    pub theta_true: f64,
    /// Mean final estimate over repetitions.
    pub theta_hat: f64,
    /// `shots × variance`: the sample variance over repetitions, or the
    /// plug-in variance for a single run.
    pub mu_variance: f64,
    /// Single-shot bound `wᵀw / J_eff` at the optimum.
    pub crb: f64,
    pub ratio_to_crb: f64,
    /// `(rep, row)` pairs of every run's trace.
    pub trace: Vec<(usize, TraceRow)>,
}

/// Runs adaptive estimation at every configured sensing time.
pub fn run_estimation(s: &Scenario, exec: Execution) -> Result<Vec<EstimationReport>> {
    let e = &s.def.estimation;
    let budget = ShotBudget::split(e.shots, e.stage1_fraction, e.rounds)?;
    e.times
        .iter()
        .map(|&t| {
            let grid = s.grid_for(t)?;
            let plan = AdaptivePlan {
                net: s.network(),
                truth: s.truth().clone(),
                prior: s.prior().clone(),
                w: s.weights().clone(),
                grid,
                strategy: s.def.control,
                probe: s.def.probe.clone(),
            };
            let j_eff = evaluate_row(s, t)?.qfi_controlled;
            let crb = precision_bound(j_eff, s.weights(), 1)?;
            let theta_true = s.weights().normalized().dot(s.truth());
            let (runs, theta_hat, mu_variance, shots): (Vec<EstimationResult>, f64, f64, u64) = if e.reps >= 2 {
                let mc = monte_carlo(&plan, budget, e.seed, e.reps, exec)?;
                (mc.runs, mc.mean, mc.mu_variance, mc.shots)
            } else {
                let r = adaptive_estimate(&plan, budget, e.seed, 0)?;
                let (th, var, sh) = (r.theta_hat, r.sample_variance, r.shots);
                (vec![r], th, sh as f64 * var, sh)
            };
            let trace = runs
                .iter()
                .enumerate()
                .flat_map(|(rep, r)| r.trace.iter().cloned().map(move |row| (rep, row)))
                .collect();
            Ok(EstimationReport {
                t,
                steps: grid.steps(),
                reps: runs.len(),
                shots,
                theta_true,
                theta_hat,
                mu_variance,
                crb,
                ratio_to_crb: mu_variance / crb,
                trace,
            })
        })
        .collect()
}

/// Built-in scenarios.
pub fn builtin(name: &str) -> Result<ScenarioDef> {
    let two_nodes =
        |f: &dyn Fn(usize) -> FieldSpec| vec![NodeDef { qubits: 1, field: f(0) }, NodeDef { qubits: 1, field: f(1) }];
    let def = match name {
        "clock_sync" => ScenarioDef {
            name: name.into(),
            description: "two clocks with frequencies Ω₁, Ω₂; estimate the offset Ω₁ − Ω₂".into(),
            n_params: 2,
            nodes: two_nodes(&|p| FieldSpec::ConstantZ { param: p, scale: 1.0 }),
            truth: vec![1.05, 1.0],
            prior: Some(vec![1.0, 1.0]),
            weights: vec![1.0, -1.0],
            sweep: default_sweep(),
            base_steps: default_base_steps(),
            probe: ProbeSpec::BellSinglet,
            control: ControlStrategy::None,
            fd_step: None,
            domain: Some(vec![[0.0, 10.0]; 2]),
            estimation: EstimationSettings::default(),
        },
        "radar" => ScenarioDef {
            name: name.into(),
            description: "two angle-encoded sensors sin φ σx + cos φ σz; estimate φ₁ + φ₂".into(),
            n_params: 2,
            nodes: two_nodes(&|p| FieldSpec::Angle { param: p, amplitude: 1.0 }),
            truth: vec![0.3, 0.4],
            prior: Some(vec![0.28, 0.43]),
            weights: vec![1.0, 1.0],
            sweep: default_sweep(),
            base_steps: default_base_steps(),
            probe: ProbeSpec::Ghz,
            control: ControlStrategy::Cancel,
            fd_step: None,
            domain: Some(vec![[-std::f64::consts::PI, std::f64::consts::PI]; 2]),
            estimation: EstimationSettings::default(),
        },
        "ac_fields" => ScenarioDef {
            name: name.into(),
            description: "two AC fields sin(Ω t) σz; estimate Ω₁ + Ω₂".into(),
            n_params: 2,
            nodes: two_nodes(&|p| FieldSpec::Ac { param: p, amplitude: 1.0 }),
            truth: vec![1.0, 1.0],
            prior: Some(vec![0.995, 1.004]),
            weights: vec![1.0, 1.0],
            sweep: default_sweep(),
            base_steps: default_base_steps(),
            probe: ProbeSpec::Ghz,
            control: ControlStrategy::PiPulse,
            fd_step: None,
            domain: Some(vec![[0.0, 10.0]; 2]),
            estimation: EstimationSettings::default(),
        },
        other => return Err(Error::UnknownScenario(other.to_string())),
    };
    Ok(def)
}

/// Reproducible random scenario with `d` nodes, `n` parameters and `q`
/// qubits. Every field is a sum of `sin(ω t + c·x + φ)` terms whose
/// amplitudes add up to at most `smoothness / √3` per component, so
/// `|f| ≤ smoothness`, with frequencies in `[0, smoothness]` and couplings
/// in `[−1, 1]`.
pub fn random_scenario(seed: u64, d: usize, n: usize, q: usize, smoothness: f64) -> Result<ScenarioDef> {
    if d == 0 || n == 0 {
        return Err(Error::invalid("random scenario needs at least one node and one parameter"));
    }
    if q < d || q > MAX_QUBITS {
        return Err(Error::invalid(format!("qubit count {q} must lie in [{d}, {MAX_QUBITS}]")));
    }
    if !(smoothness > 0.0) || !smoothness.is_finite() {
        return Err(Error::invalid("smoothness must be positive and finite"));
    }
    let mut rng = StreamKey::new(seed, 0x5CE7A_u64).at(0);
    let mut uniform = |lo: f64, hi: f64| rng.random_range(lo..hi);
    let mut sizes = vec![1usize; d];
    for _ in d..q {
        let k = (uniform(0.0, d as f64) as usize).min(d - 1);
        sizes[k] += 1;
    }
    const TERMS: usize = 2;
    let amp_cap = smoothness / (3f64.sqrt() * TERMS as f64);
    let nodes = sizes
        .iter()
        .map(|&qubits| {
            let mut terms = Vec::new();
            for axis in [Axis::X, Axis::Y, Axis::Z] {
                for _ in 0..TERMS {
                    terms.push(TrigTerm {
                        axis,
                        amplitude: uniform(-amp_cap, amp_cap),
                        frequency: uniform(0.0, smoothness),
                        phase: uniform(0.0, std::f64::consts::TAU),
                        coupling: (0..n).map(|_| uniform(-1.0, 1.0)).collect(),
                    });
                }
            }
            NodeDef { qubits, field: FieldSpec::Trig { terms } }
        })
        .collect();
    let truth = (0..n).map(|_| uniform(-1.0, 1.0)).collect();
    let weights = (0..n)
        .map(|_| {
            let mag = uniform(0.2, 1.0);
            if uniform(0.0, 1.0) < 0.5 {
                -mag
            } else {
                mag
            }
        })
        .collect();
    Ok(ScenarioDef {
        name: format!("random-{seed}"),
        description: format!("random smooth fields: d={d}, N={n}, Q={q}, smoothness={smoothness}"),
        n_params: n,
        nodes,
        truth,
        prior: None,
        weights,
        sweep: vec![1.0],
        base_steps: 1000,
        probe: ProbeSpec::Ghz,
        control: ControlStrategy::Alignment,
        fd_step: None,
        domain: None,
        estimation: EstimationSettings::default(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::FieldFunction;
    use approx::assert_relative_eq;

    #[test]
    fn builtins_validate_and_unknown_is_rejected() {
        for name in BUILTIN_NAMES {
            Scenario::new(builtin(name).unwrap()).unwrap();
        }
        assert_eq!(builtin("sonar").unwrap_err(), Error::UnknownScenario("sonar".into()));
    }

    #[test]
    fn clock_row_at_unit_time() {
        let s = Scenario::new(builtin("clock_sync").unwrap()).unwrap();
        let r = evaluate_row(&s, 1.0).unwrap();
        assert_relative_eq!(r.qfi_controlled, 16.0, max_relative = 1e-10);
        assert_relative_eq!(r.qfi_uncontrolled, 16.0, max_relative = 1e-10);
        assert_relative_eq!(r.bound, 16.0, max_relative = 1e-10);
        assert_relative_eq!(r.cfi, 16.0, max_relative = 1e-3);
        assert_relative_eq!(r.precision_bound, 0.125, max_relative = 1e-10);
    }

    #[test]
    fn radar_uncontrolled_follows_sine_squared() {
        let s = Scenario::new(builtin("radar").unwrap()).unwrap();
        let half_pi = evaluate_row(&s, std::f64::consts::FRAC_PI_2).unwrap();
        assert_relative_eq!(half_pi.qfi_uncontrolled, 16.0, max_relative = 1e-6);
        let pi = evaluate_row(&s, std::f64::consts::PI).unwrap();
        assert!(pi.qfi_uncontrolled < 1e-6);
    }

    #[test]
    fn weight_validation_names_the_key() {
        let mut def = builtin("radar").unwrap();
        def.weights = vec![1.0, 1.0, 1.0];
        let err = Scenario::new(def).unwrap_err().to_string();
        assert!(err.contains("weights"), "{err}");
        let mut def = builtin("radar").unwrap();
        def.weights = vec![0.0, 0.0];
        assert!(Scenario::new(def).unwrap_err().to_string().contains("weights"));
    }

    #[test]
    fn random_scenarios_are_reproducible_and_bounded() {
        let a = random_scenario(9, 3, 3, 3, 1.5).unwrap();
        assert_eq!(a, random_scenario(9, 3, 3, 3, 1.5).unwrap());
        assert_ne!(a, random_scenario(10, 3, 3, 3, 1.5).unwrap());
        assert!(a.nodes.iter().all(|n| n.qubits == 1));
        let s = Scenario::new(a).unwrap();
        let mut k = StreamKey::new(1, 2).at(0);
        for _ in 0..1000 {
            let x: Vec<f64> = (0..3).map(|_| k.random_range(-3.0..3.0)).collect();
            let t = k.random_range(0.0..10.0);
            for node in &s.def().nodes {
                assert!(node.field.evaluate(&x, t).magnitude() <= 1.5);
            }
        }
        assert!(random_scenario(1, 3, 1, 2, 1.0).is_err());
    }

    #[test]
    fn slope_fit_recovers_power_law() {
        let rows = [1.0, 2.0, 4.0]
            .iter()
            .map(|&t| ReportRow {
                t,
                steps: 1,
                qfi_controlled: 3.0 * t * t * t,
                qfi_uncontrolled: 0.0,
                bound: 0.0,
                cfi: 0.0,
                precision_bound: 0.0,
            })
            .collect();
        let r = ScenarioReport { scenario: "x".into(), rows };
        assert_relative_eq!(r.loglog_slope().unwrap(), 3.0, max_relative = 1e-12);
    }
}
