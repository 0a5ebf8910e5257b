//! Local control synthesis: alignment of every qubit's V-operator onto a
//! common axis, free-evolution cancellation, π-pulse sign correction, and
//! the commutation test that decides whether control is needed at all.
//!
//! Every protocol stores one Pauli vector per qubit and step, so it is
//! single-qubit local by construction. An optional preparation rotation
//! `exp(−i a_q·σ)` per qubit is applied at `t = 0`; it sets the initial
//! frame without costing any of the sensing time.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{propagate, TimeGrid};
use crate::error::{Error, Result};
use crate::format::g12;
use crate::model::{ParameterPoint, SensorNetwork, WeightVector};
use crate::operators::PauliVector;
use crate::rng::StreamKey;
use crate::su2::{self, Mat2};

/// Below this magnitude a V-vector has no usable direction.
pub const DEGENERATE_TOL: f64 = 1e-12;

/// Commutator tolerance for the no-control test.
pub const COMMUTE_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ControlStrategy {
    Alignment,
    Cancel,
    PiPulse,
    None,
    Custom,
}

impl ControlStrategy {
    pub fn as_str(&self) -> &'static str {
        match self {
            ControlStrategy::Alignment => "alignment",
            ControlStrategy::Cancel => "cancel",
            ControlStrategy::PiPulse => "pi-pulse",
            ControlStrategy::None => "none",
            ControlStrategy::Custom => "custom",
        }
    }
}

impl fmt::Display for ControlStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ControlStrategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "alignment" => Ok(ControlStrategy::Alignment),
            "cancel" => Ok(ControlStrategy::Cancel),
            "pi-pulse" | "pi_pulse" => Ok(ControlStrategy::PiPulse),
            "none" => Ok(ControlStrategy::None),
            "custom" => Ok(ControlStrategy::Custom),
            other => Err(Error::Parse(format!(
                "unknown control strategy '{other}' (expected alignment, cancel, pi-pulse, none or custom)"
            ))),
        }
    }
}

/// Piecewise-constant single-qubit control Hamiltonians on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlProtocol {
    grid: TimeGrid,
    n_qubits: usize,
    steps: Vec<PauliVector>,
    prep: Option<Vec<PauliVector>>,
    strategy: ControlStrategy,
}

impl ControlProtocol {
    /// No control at all.
    pub fn zero(grid: TimeGrid, n_qubits: usize) -> Self {
        Self {
            grid,
            n_qubits,
            steps: vec![PauliVector::ZERO; grid.steps() * n_qubits],
            prep: None,
            strategy: ControlStrategy::None,
        }
    }

    /// Protocol from a `[step][qubit]` table.
    pub fn from_steps(grid: TimeGrid, table: Vec<Vec<PauliVector>>, strategy: ControlStrategy) -> Result<Self> {
        if table.len() != grid.steps() {
            return Err(Error::DimensionMismatch { expected: grid.steps(), actual: table.len() });
        }
        let n_qubits = table.first().map_or(0, Vec::len);
        if n_qubits == 0 {
            return Err(Error::invalid("control table addresses no qubits"));
        }
        let mut steps = Vec::with_capacity(grid.steps() * n_qubits);
        for (m, row) in table.into_iter().enumerate() {
            if row.len() != n_qubits {
                return Err(Error::NonLocalControl(format!(
                    "step {m} addresses {} qubits, expected {n_qubits}",
                    row.len()
                )));
            }
            if let Some(bad) = row.iter().find(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("non-finite control {bad:?} at step {m}")));
            }
            steps.extend(row);
        }
        Ok(Self { grid, n_qubits, steps, prep: None, strategy })
    }

    /// Adds per-qubit preparation pulse areas applied at `t = 0`.
    pub fn with_preparation(mut self, prep: Vec<PauliVector>) -> Result<Self> {
        if prep.len() != self.n_qubits {
            return Err(Error::DimensionMismatch { expected: self.n_qubits, actual: prep.len() });
        }
        if prep.iter().any(|a| !a.is_finite()) {
            return Err(Error::invalid("non-finite preparation pulse"));
        }
        self.prep = if prep.iter().all(|a| *a == PauliVector::ZERO) { None } else { Some(prep) };
        Ok(self)
    }

    pub fn with_strategy(mut self, strategy: ControlStrategy) -> Self {
        self.strategy = strategy;
        self
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn num_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn strategy(&self) -> ControlStrategy {
        self.strategy
    }

    pub fn control(&self, m: usize, q: usize) -> PauliVector {
        self.steps[m * self.n_qubits + q]
    }

    /// Controls of every qubit during step `m`.
    pub fn step(&self, m: usize) -> &[PauliVector] {
        &self.steps[m * self.n_qubits..(m + 1) * self.n_qubits]
    }

    pub fn preparation(&self) -> Option<&[PauliVector]> {
        self.prep.as_deref()
    }

    /// Largest control magnitude over all steps (preparation excluded).
    pub fn max_amplitude(&self) -> f64 {
        self.steps.iter().map(PauliVector::magnitude).fold(0.0, f64::max)
    }

    /// Steps at which qubit `q` receives a nonzero control.
    pub fn active_steps(&self, q: usize) -> Vec<usize> {
        (0..self.grid.steps()).filter(|&m| self.control(m, q) != PauliVector::ZERO).collect()
    }

    /// True when neither steps nor preparation act on any qubit.
    pub fn is_empty(&self) -> bool {
        self.prep.is_none() && self.steps.iter().all(|v| *v == PauliVector::ZERO)
    }

    /// Writes the nonzero entries as `step,time,qubit,cx,cy,cz` rows. The
    /// preparation rotation, if any, appears as step `-1` at time 0 with
    /// the pulse area in place of the Hamiltonian.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| Error::invalid(format!("writing control table: {e}"));
        w.write_record(["step", "time", "qubit", "cx", "cy", "cz"]).map_err(io)?;
        if let Some(prep) = &self.prep {
            for (q, a) in prep.iter().enumerate() {
                if *a != PauliVector::ZERO {
                    w.write_record(["-1".to_string(), g12(0.0), q.to_string(), g12(a.x), g12(a.y), g12(a.z)])
                        .map_err(io)?;
                }
            }
        }
        for m in 0..self.grid.steps() {
            for q in 0..self.n_qubits {
                let c = self.control(m, q);
                if c != PauliVector::ZERO {
                    w.write_record([
                        m.to_string(),
                        g12(self.grid.midpoint(m)),
                        q.to_string(),
                        g12(c.x),
                        g12(c.y),
                        g12(c.z),
                    ])
                    .map_err(io)?;
                }
            }
        }
        w.flush().map_err(|e| Error::invalid(format!("writing control table: {e}")))
    }

    /// Reads a table written by [`ControlProtocol::write_csv`]; absent
    /// entries are zero.
    pub fn read_csv<R: Read>(input: R, grid: TimeGrid, n_qubits: usize) -> Result<Self> {
        let mut protocol = Self::zero(grid, n_qubits).with_strategy(ControlStrategy::Custom);
        let mut prep = vec![PauliVector::ZERO; n_qubits];
        let mut reader = csv::Reader::from_reader(input);
        for (line, record) in reader.records().enumerate() {
            let record = record.map_err(|e| Error::Parse(format!("control table row {}: {e}", line + 2)))?;
            if record.len() != 6 {
                return Err(Error::Parse(format!("control table row {} has {} fields", line + 2, record.len())));
            }
            let num = |i: usize| -> Result<f64> {
                record[i]
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Parse(format!("control table row {} column {}: {e}", line + 2, i + 1)))
            };
            let step: i64 = record[0]
                .trim()
                .parse()
                .map_err(|e| Error::Parse(format!("control table row {} step: {e}", line + 2)))?;
            let q: usize = record[2]
                .trim()
                .parse()
                .map_err(|e| Error::Parse(format!("control table row {} qubit: {e}", line + 2)))?;
            if q >= n_qubits {
                return Err(Error::IndexOutOfRange { index: q, limit: n_qubits });
            }
            let v = PauliVector::new(num(3)?, num(4)?, num(5)?);
            if !v.is_finite() {
                return Err(Error::Parse(format!("control table row {} is not finite", line + 2)));
            }
            match step {
                -1 => prep[q] = v,
                s if s >= 0 && (s as usize) < grid.steps() => protocol.steps[s as usize * n_qubits + q] = v,
                s => return Err(Error::IndexOutOfRange { index: s.max(0) as usize, limit: grid.steps() }),
            }
        }
        protocol.with_preparation(prep)
    }
}

/// Worst-case deviation of the rotated V-operators from a fixed axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentResidual {
    /// `max ‖U†(v·σ)U − |v| a·σ‖` over qubits and steps (max-norm).
    pub max_norm: f64,
    /// Axis each qubit was aligned to, inferred from its first
    /// non-degenerate sample.
    pub axes: Vec<PauliVector>,
}

/// Per-node flag: true when control is required. A node is control-free
/// iff its fields are time independent and commute with its V-operators.
pub fn needs_control(net: &SensorNetwork, x: &ParameterPoint, w: &WeightVector, grid: &TimeGrid) -> Result<Vec<bool>> {
    net.check_point(x)?;
    net.check_weights(w)?;
    let mut flags = vec![false; net.num_nodes()];
    for q in 0..net.total_qubits() {
        let node = net.node_of(q);
        if !net.is_time_independent_on(q, x, grid)? {
            flags[node] = true;
            continue;
        }
        let f = net.field(q, x, 0.0)?;
        let v = net.v_vector(q, x, 0.0, w)?;
        // [f·σ, v·σ] = 2i (f×v)·σ
        if 2.0 * f.cross(&v).magnitude() > COMMUTE_TOL {
            flags[node] = true;
        }
    }
    Ok(flags)
}

/// `H_C = −f(x̂)·σ` on every qubit, constant in time.
pub fn cancel_control(net: &SensorNetwork, x_hat: &ParameterPoint, grid: &TimeGrid) -> Result<ControlProtocol> {
    net.check_point(x_hat)?;
    let nq = net.total_qubits();
    let mut fields = Vec::with_capacity(nq);
    for q in 0..nq {
        if !net.is_time_independent_on(q, x_hat, grid)? {
            return Err(Error::TimeDependentField(format!(
                "qubit {q} of node {} varies in time; use alignment control",
                net.node_of(q)
            )));
        }
        fields.push(-net.field(q, x_hat, 0.0)?);
    }
    let table = (0..grid.steps()).map(|_| fields.clone()).collect();
    ControlProtocol::from_steps(*grid, table, ControlStrategy::Cancel)
}

/// First V-direction of qubit `q` with magnitude above the degeneracy
/// threshold, scanning grid points `0..=M`.
fn first_direction(
    net: &SensorNetwork,
    q: usize,
    x: &ParameterPoint,
    w: &WeightVector,
    grid: &TimeGrid,
) -> Result<Option<PauliVector>> {
    for k in 0..=grid.steps() {
        if let Some(d) = net.v_vector(q, x, grid.point(k), w)?.direction(DEGENERATE_TOL) {
            return Ok(Some(d));
        }
    }
    Ok(None)
}

fn unit_or_z(axis: PauliVector) -> Result<PauliVector> {
    axis.direction(1e-12).ok_or_else(|| Error::invalid(format!("alignment axis {axis:?} has no direction")))
}

/// Preparation pulse areas that point each qubit's initial V-direction
/// along `axis` in the Heisenberg frame.
pub fn preparation_for(
    net: &SensorNetwork,
    x_hat: &ParameterPoint,
    w: &WeightVector,
    grid: &TimeGrid,
    axis: PauliVector,
) -> Result<Vec<PauliVector>> {
    net.check_point(x_hat)?;
    net.check_weights(w)?;
    let axis = unit_or_z(axis)?;
    (0..net.total_qubits())
        .map(|q| {
            Ok(match first_direction(net, q, x_hat, w, grid)? {
                Some(d) => su2::log_pauli(&su2::rotation_between(axis, d)),
                None => PauliVector::ZERO,
            })
        })
        .collect()
}

/// Alignment control onto `ẑ`.
pub fn alignment_control(
    net: &SensorNetwork,
    x_hat: &ParameterPoint,
    w: &WeightVector,
    grid: &TimeGrid,
) -> Result<(ControlProtocol, AlignmentResidual)> {
    alignment_control_to(net, x_hat, w, grid, PauliVector::Z)
}

/// Alignment control onto an arbitrary fixed axis.
///
/// Each qubit's frame `U_q` is steered so that its Bloch image of `axis`
/// follows `v̂_q(t)`: after the free step `F = exp(−i f Δt)` the frame is
/// rotated along the shortest geodesic onto `v̂` at the next grid point, and
/// the step's total Hamiltonian is read off exactly as `log(R·F)/Δt`. The
/// control is the difference to the free field. Where `|v|` vanishes the
/// frame is held and no control is applied.
pub fn alignment_control_to(
    net: &SensorNetwork,
    x_hat: &ParameterPoint,
    w: &WeightVector,
    grid: &TimeGrid,
    axis: PauliVector,
) -> Result<(ControlProtocol, AlignmentResidual)> {
    net.check_point(x_hat)?;
    net.check_weights(w)?;
    let axis = unit_or_z(axis)?;
    let nq = net.total_qubits();
    let dt = grid.dt();
    let mut table = vec![vec![PauliVector::ZERO; nq]; grid.steps()];
    let mut prep = vec![PauliVector::ZERO; nq];
    for q in 0..nq {
        let Some(first) = first_direction(net, q, x_hat, w, grid)? else {
            continue;
        };
        prep[q] = su2::log_pauli(&su2::rotation_between(axis, first));
        let mut n = su2::rotate(&su2::exp_pauli(prep[q], 1.0), axis);
        for (m, row) in table.iter_mut().enumerate() {
            let f = net.field(q, x_hat, grid.midpoint(m))?;
            let free = su2::exp_pauli(f, dt);
            let drifted = normalize(su2::rotate(&free, n));
            let target = net.v_vector(q, x_hat, grid.point(m + 1), w)?;
            let realized: Mat2 = match target.direction(DEGENERATE_TOL) {
                Some(d) if (d - drifted).magnitude() > 0.0 => {
                    let h = su2::log_pauli(&(su2::rotation_between(drifted, d) * free)) * (1.0 / dt);
                    row[q] = h - f;
                    su2::exp_pauli(h, dt)
                }
                _ => free,
            };
            n = normalize(su2::rotate(&realized, n));
        }
    }
    let protocol = ControlProtocol::from_steps(*grid, table, ControlStrategy::Alignment)?.with_preparation(prep)?;
    let residual = verify_protocol(net, x_hat, w, &protocol, grid)?;
    Ok((protocol, residual))
}

fn normalize(v: PauliVector) -> PauliVector {
    v * (1.0 / v.magnitude())
}

/// Sign convention for fixed axes: the representative with a positive
/// leading nonzero component in (z, x, y) order.
fn canonical_axis(a: PauliVector) -> PauliVector {
    let lead = [a.z, a.x, a.y].into_iter().find(|c| c.abs() > 1e-12).unwrap_or(1.0);
    if lead < 0.0 {
        -a
    } else {
        a
    }
}

/// Unit vector perpendicular to `a`, closest to `x̂` (`ŷ` if `a ∥ x̂`).
fn pulse_axis(a: PauliVector) -> PauliVector {
    let mut p = PauliVector::X - a * a.x;
    if p.magnitude() < 1e-6 {
        p = PauliVector::Y - a * a.y;
    }
    normalize(p)
}

struct PulsePlan {
    prep: PauliVector,
    pulses: Vec<(usize, PauliVector)>,
}

fn plan_pulses(
    net: &SensorNetwork,
    q: usize,
    x_hat: &ParameterPoint,
    w: &WeightVector,
    grid: &TimeGrid,
) -> Result<PulsePlan> {
    let node = net.node_of(q);
    let m_total = grid.steps();
    let mut v = Vec::with_capacity(m_total);
    let mut f = Vec::with_capacity(m_total);
    for m in 0..m_total {
        let t = grid.midpoint(m);
        v.push(net.v_vector(q, x_hat, t, w)?);
        f.push(net.field(q, x_hat, t)?);
    }
    let axis = v.iter().chain(f.iter()).find_map(|s| s.direction(DEGENERATE_TOL)).map(canonical_axis);
    let Some(a) = axis else {
        return Ok(PulsePlan { prep: PauliVector::ZERO, pulses: Vec::new() });
    };
    let off_axis = |s: &PauliVector| s.cross(&a).magnitude() > 1e-10 * s.magnitude().max(1.0);
    if v.iter().chain(f.iter()).any(off_axis) {
        return Err(Error::NotAxisFixed(node));
    }
    let p = pulse_axis(a);
    let half_turn = std::f64::consts::FRAC_PI_2;
    let s: Vec<f64> = v.iter().map(|vm| vm.dot(&a)).collect();
    let mut pulses: Vec<(usize, PauliVector)> = Vec::new();
    let mut prep = PauliVector::ZERO;
    let mut sign = 0.0;
    let mut last: Option<usize> = None;
    for m in 0..m_total {
        if s[m].abs() < DEGENERATE_TOL {
            continue;
        }
        let sm = s[m].signum();
        match last {
            None => {
                if sm < 0.0 {
                    prep = p * half_turn;
                }
            }
            Some(prev) if sm != sign => {
                // Flip where the signal is weakest between the bracketing samples.
                let taken = pulses.last().is_some_and(|(k, _)| *k == prev);
                let first = if taken { prev + 1 } else { prev };
                let step = (first..=m).min_by(|&a, &b| s[a].abs().total_cmp(&s[b].abs())).unwrap_or(m);
                pulses.push((step, p * (half_turn / grid.dt()) - f[step]));
            }
            _ => {}
        }
        sign = sm;
        last = Some(m);
    }
    Ok(PulsePlan { prep, pulses })
}

/// π-pulse sign correction for the qubits of node `k`; other qubits are
/// left uncontrolled.
///
/// The node's field and V-operator must share one fixed axis. Every sign
/// change of the V-coefficient gets one grid step whose total Hamiltonian
/// is `(π/2Δt)·p̂` about a transverse axis `p̂`, which is an exact π
/// rotation that also suspends the free field for that step.
pub fn pi_pulse_schedule(
    net: &SensorNetwork,
    node: usize,
    x_hat: &ParameterPoint,
    w: &WeightVector,
    grid: &TimeGrid,
) -> Result<ControlProtocol> {
    net.check_point(x_hat)?;
    net.check_weights(w)?;
    if node >= net.num_nodes() {
        return Err(Error::IndexOutOfRange { index: node, limit: net.num_nodes() });
    }
    pi_pulses_on(net, x_hat, w, grid, |q| net.node_of(q) == node)
}

/// π-pulse sign correction on every node.
pub fn pi_pulse_control(
    net: &SensorNetwork,
    x_hat: &ParameterPoint,
    w: &WeightVector,
    grid: &TimeGrid,
) -> Result<ControlProtocol> {
    net.check_point(x_hat)?;
    net.check_weights(w)?;
    pi_pulses_on(net, x_hat, w, grid, |_| true)
}

fn pi_pulses_on(
    net: &SensorNetwork,
    x_hat: &ParameterPoint,
    w: &WeightVector,
    grid: &TimeGrid,
    select: impl Fn(usize) -> bool,
) -> Result<ControlProtocol> {
    let nq = net.total_qubits();
    let mut table = vec![vec![PauliVector::ZERO; nq]; grid.steps()];
    let mut prep = vec![PauliVector::ZERO; nq];
    for q in (0..nq).filter(|&q| select(q)) {
        let plan = plan_pulses(net, q, x_hat, w, grid)?;
        prep[q] = plan.prep;
        for (m, c) in plan.pulses {
            table[m][q] = c;
        }
    }
    ControlProtocol::from_steps(*grid, table, ControlStrategy::PiPulse)?.with_preparation(prep)
}

/// Builds the protocol a strategy tag calls for at the estimate `x̂`.
///
/// `cancel` additionally rotates every qubit at `t = 0` so that the frozen
/// V-operators point along `ẑ`; `custom` protocols cannot be synthesized.
pub fn synthesize(
    strategy: ControlStrategy,
    net: &SensorNetwork,
    x_hat: &ParameterPoint,
    w: &WeightVector,
    grid: &TimeGrid,
) -> Result<ControlProtocol> {
    match strategy {
        ControlStrategy::None => {
            net.check_point(x_hat)?;
            Ok(ControlProtocol::zero(*grid, net.total_qubits()))
        }
        ControlStrategy::Cancel => {
            let prep = preparation_for(net, x_hat, w, grid, PauliVector::Z)?;
            cancel_control(net, x_hat, grid)?.with_preparation(prep)
        }
        ControlStrategy::Alignment => alignment_control(net, x_hat, w, grid).map(|(p, _)| p),
        ControlStrategy::PiPulse => pi_pulse_control(net, x_hat, w, grid),
        ControlStrategy::Custom => Err(Error::invalid("custom control must be supplied as a table, not synthesized")),
    }
}

/// Propagates per-qubit frames under `protocol` at `x` and reports how far
/// the Heisenberg-picture V-operators stray from a fixed axis.
pub fn verify_protocol(
    net: &SensorNetwork,
    x: &ParameterPoint,
    w: &WeightVector,
    protocol: &ControlProtocol,
    grid: &TimeGrid,
) -> Result<AlignmentResidual> {
    net.check_weights(w)?;
    if protocol.num_qubits() != net.total_qubits() {
        return Err(Error::NonLocalControl(format!(
            "protocol addresses {} qubits but the network has {}",
            protocol.num_qubits(),
            net.total_qubits()
        )));
    }
    let schedule = propagate(net, x, Some(protocol), grid)?;
    let mut worst = 0.0f64;
    let mut axes = Vec::with_capacity(net.total_qubits());
    for q in 0..net.total_qubits() {
        let mut axis: Option<PauliVector> = None;
        for m in 0..grid.steps() {
            let v = net.v_vector(q, x, grid.midpoint(m), w)?;
            let mag = v.magnitude();
            if mag < DEGENERATE_TOL {
                continue;
            }
            let image = su2::conjugate(&schedule.midpoint_factor(m, q), v);
            let a = *axis.get_or_insert_with(|| normalize(image));
            worst = worst.max(su2::pauli_max_norm(image - a * mag));
        }
        axes.push(axis.unwrap_or(PauliVector::Z));
    }
    Ok(AlignmentResidual { max_norm: worst, axes })
}

/// Independent uniform controls in `[−amplitude, amplitude]³` per qubit and
/// step, keyed by `seed`.
pub fn random_control(grid: &TimeGrid, n_qubits: usize, amplitude: f64, seed: u64) -> Result<ControlProtocol> {
    if !(amplitude >= 0.0) || !amplitude.is_finite() {
        return Err(Error::invalid(format!("control amplitude must be finite and non-negative, got {amplitude}")));
    }
    let mut rng = StreamKey::new(seed, 0xC0_u64).at(0);
    let mut draw = || amplitude * (2.0 * rng.random::<f64>() - 1.0);
    let table =
        (0..grid.steps()).map(|_| (0..n_qubits).map(|_| PauliVector::new(draw(), draw(), draw())).collect()).collect();
    ControlProtocol::from_steps(*grid, table, ControlStrategy::Custom)
}
