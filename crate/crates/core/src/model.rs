//! Sensor network description, parametrized fields and the derivative
//! engine that produces the weighted V-operators.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::dynamics::TimeGrid;
use crate::error::{Error, Result};
use crate::operators::{local_sum, HermitianOperator, PauliVector};

/// Largest register the dense oracles are asked to handle.
pub const MAX_QUBITS: usize = 6;

/// Relative central-difference step used when no analytic partial exists.
pub const DEFAULT_FD_STEP: f64 = 1e-6;

/// A parametrized single-qubit field `f(x, t)`, coupled as `f·σ`.
///
/// Implementations must be stateless: networks evaluate fields from many
/// threads at once.
pub trait FieldFunction: Send + Sync + fmt::Debug {
    fn evaluate(&self, x: &[f64], t: f64) -> PauliVector;

    /// `∂f/∂x_j`, when known in closed form.
    fn analytic_partial(&self, _j: usize, _x: &[f64], _t: f64) -> Option<PauliVector> {
        None
    }

    /// Serializable description, for fields built from [`FieldSpec`].
    fn spec(&self) -> Option<&FieldSpec> {
        None
    }
}

/// Cartesian component selector for [`TrigTerm`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    fn unit(self) -> PauliVector {
        match self {
            Axis::X => PauliVector::X,
            Axis::Y => PauliVector::Y,
            Axis::Z => PauliVector::Z,
        }
    }
}

/// One term `amplitude · sin(frequency·t + coupling·x + phase)` along `axis`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrigTerm {
    pub axis: Axis,
    pub amplitude: f64,
    pub frequency: f64,
    pub phase: f64,
    pub coupling: Vec<f64>,
}

impl TrigTerm {
    fn argument(&self, x: &[f64], t: f64) -> f64 {
        let cx: f64 = self.coupling.iter().zip(x).map(|(c, xi)| c * xi).sum();
        self.frequency * t + cx + self.phase
    }
}

fn one() -> f64 {
    1.0
}

/// Built-in field families.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FieldSpec {
    /// `scale · x_param · σz`
    ConstantZ {
        param: usize,
        #[serde(default = "one")]
        scale: f64,
    },
    /// `amplitude · (sin x_param σx + cos x_param σz)`
    Angle {
        param: usize,
        #[serde(default = "one")]
        amplitude: f64,
    },
    /// `amplitude · sin(x_param · t) σz`
    Ac {
        param: usize,
        #[serde(default = "one")]
        amplitude: f64,
    },
    /// Linearly interpolated samples `g(t)`, optionally scaled by `x_param`.
    /// Held constant outside the sampled interval.
    Tabulated {
        times: Vec<f64>,
        values: Vec<[f64; 3]>,
        #[serde(default)]
        param: Option<usize>,
    },
    /// Parameter-independent offset.
    Constant {
        value: [f64; 3],
    },
    /// Sum of trigonometric terms; used by the random scenario generator.
    Trig {
        terms: Vec<TrigTerm>,
    },
    Sum {
        parts: Vec<FieldSpec>,
    },
}

impl FieldSpec {
    /// Checks parameter indices against `n_params` and table consistency.
    pub fn validate(&self, n_params: usize) -> Result<()> {
        let check = |p: usize| {
            if p >= n_params {
                Err(Error::IndexOutOfRange { index: p, limit: n_params })
            } else {
                Ok(())
            }
        };
        match self {
            FieldSpec::ConstantZ { param, scale } => {
                check(*param)?;
                finite(*scale, "scale")
            }
            FieldSpec::Angle { param, amplitude } | FieldSpec::Ac { param, amplitude } => {
                check(*param)?;
                finite(*amplitude, "amplitude")
            }
            FieldSpec::Tabulated { times, values, param } => {
                if let Some(p) = param {
                    check(*p)?;
                }
                if times.is_empty() || times.len() != values.len() {
                    return Err(Error::invalid(format!(
                        "tabulated field needs matching non-empty times ({}) and values ({})",
                        times.len(),
                        values.len()
                    )));
                }
                if times.windows(2).any(|w| !(w[1] > w[0])) {
                    return Err(Error::invalid("tabulated field times must be strictly increasing"));
                }
                if times.iter().chain(values.iter().flatten()).any(|v| !v.is_finite()) {
                    return Err(Error::invalid("tabulated field contains non-finite entries"));
                }
                Ok(())
            }
            FieldSpec::Constant { value } => value.iter().try_for_each(|v| finite(*v, "value")),
            FieldSpec::Trig { terms } => terms.iter().try_for_each(|term| {
                if term.coupling.len() > n_params {
                    return Err(Error::invalid(format!(
                        "trig coupling has {} entries for {} parameters",
                        term.coupling.len(),
                        n_params
                    )));
                }
                [term.amplitude, term.frequency, term.phase]
                    .iter()
                    .chain(term.coupling.iter())
                    .try_for_each(|v| finite(*v, "trig coefficient"))
            }),
            FieldSpec::Sum { parts } => parts.iter().try_for_each(|p| p.validate(n_params)),
        }
    }

    fn tabulated_at(times: &[f64], values: &[[f64; 3]], t: f64) -> PauliVector {
        let last = times.len() - 1;
        if t <= times[0] {
            return PauliVector::from_array(values[0]);
        }
        if t >= times[last] {
            return PauliVector::from_array(values[last]);
        }
        let k = times.partition_point(|&s| s <= t) - 1;
        let a = (t - times[k]) / (times[k + 1] - times[k]);
        PauliVector::from_array(values[k]) * (1.0 - a) + PauliVector::from_array(values[k + 1]) * a
    }

    /// Closed-form partial derivative; every built-in family has one.
    pub fn partial(&self, j: usize, x: &[f64], t: f64) -> PauliVector {
        match self {
            FieldSpec::ConstantZ { param, scale } if *param == j => PauliVector::Z * *scale,
            FieldSpec::Angle { param, amplitude } if *param == j => {
                let p = x[*param];
                PauliVector::new(p.cos(), 0.0, -p.sin()) * *amplitude
            }
            FieldSpec::Ac { param, amplitude } if *param == j => {
                PauliVector::Z * (amplitude * t * (x[*param] * t).cos())
            }
            FieldSpec::Tabulated { times, values, param: Some(p) } if *p == j => Self::tabulated_at(times, values, t),
            FieldSpec::Trig { terms } => terms.iter().fold(PauliVector::ZERO, |acc, term| {
                let c = term.coupling.get(j).copied().unwrap_or(0.0);
                if c == 0.0 {
                    acc
                } else {
                    acc + term.axis.unit() * (term.amplitude * c * term.argument(x, t).cos())
                }
            }),
            FieldSpec::Sum { parts } => parts.iter().fold(PauliVector::ZERO, |acc, p| acc + p.partial(j, x, t)),
            _ => PauliVector::ZERO,
        }
    }
}

fn finite(v: f64, what: &str) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("non-finite {what}")))
    }
}

impl FieldFunction for FieldSpec {
    fn evaluate(&self, x: &[f64], t: f64) -> PauliVector {
        match self {
            FieldSpec::ConstantZ { param, scale } => PauliVector::Z * (scale * x[*param]),
            FieldSpec::Angle { param, amplitude } => {
                let p = x[*param];
                PauliVector::new(p.sin(), 0.0, p.cos()) * *amplitude
            }
            FieldSpec::Ac { param, amplitude } => PauliVector::Z * (amplitude * (x[*param] * t).sin()),
            FieldSpec::Tabulated { times, values, param } => {
                let g = Self::tabulated_at(times, values, t);
                match param {
                    Some(p) => g * x[*p],
                    None => g,
                }
            }
            FieldSpec::Constant { value } => PauliVector::from_array(*value),
            FieldSpec::Trig { terms } => terms.iter().fold(PauliVector::ZERO, |acc, term| {
                acc + term.axis.unit() * (term.amplitude * term.argument(x, t).sin())
            }),
            FieldSpec::Sum { parts } => parts.iter().fold(PauliVector::ZERO, |acc, p| acc + p.evaluate(x, t)),
        }
    }

    fn analytic_partial(&self, j: usize, x: &[f64], t: f64) -> Option<PauliVector> {
        Some(self.partial(j, x, t))
    }

    fn spec(&self) -> Option<&FieldSpec> {
        Some(self)
    }
}

/// One physical qubit of the network.
#[derive(Debug, Clone)]
pub struct QubitSite {
    pub node: usize,
    pub field: Arc<dyn FieldFunction>,
}

/// `d` nodes holding `n_k` qubits each; immutable once built.
#[derive(Debug, Clone)]
pub struct SensorNetwork {
    sites: Vec<QubitSite>,
    node_sizes: Vec<usize>,
    n_params: usize,
    fd_step: f64,
}

impl SensorNetwork {
    /// All qubits of a node share the node's field.
    pub fn new(nodes: Vec<(usize, Arc<dyn FieldFunction>)>, n_params: usize) -> Result<Self> {
        let mut sites = Vec::new();
        let mut node_sizes = Vec::with_capacity(nodes.len());
        for (k, (n_k, field)) in nodes.into_iter().enumerate() {
            if n_k == 0 {
                return Err(Error::invalid(format!("node {k} has no qubits")));
            }
            node_sizes.push(n_k);
            sites.extend((0..n_k).map(|_| QubitSite { node: k, field: field.clone() }));
        }
        Self::from_sites(sites, node_sizes, n_params)
    }

    /// Per-qubit fields; `sites[q].node` must be non-decreasing.
    pub fn with_qubit_fields(sites: Vec<QubitSite>, n_params: usize) -> Result<Self> {
        let mut node_sizes: Vec<usize> = Vec::new();
        for (q, s) in sites.iter().enumerate() {
            match s.node {
                n if n == node_sizes.len() => node_sizes.push(1),
                n if n + 1 == node_sizes.len() => node_sizes[n] += 1,
                n => {
                    return Err(Error::invalid(format!("qubit {q} assigned to node {n} out of order")));
                }
            }
        }
        Self::from_sites(sites, node_sizes, n_params)
    }

    /// Builds a network from serializable node descriptions.
    pub fn from_specs(nodes: &[(usize, FieldSpec)], n_params: usize) -> Result<Self> {
        for (k, (_, spec)) in nodes.iter().enumerate() {
            spec.validate(n_params).map_err(|e| Error::invalid(format!("node {k} field: {e}")))?;
        }
        Self::new(nodes.iter().map(|(n, s)| (*n, Arc::new(s.clone()) as Arc<dyn FieldFunction>)).collect(), n_params)
    }

    fn from_sites(sites: Vec<QubitSite>, node_sizes: Vec<usize>, n_params: usize) -> Result<Self> {
        if node_sizes.is_empty() {
            return Err(Error::invalid("network needs at least one node"));
        }
        if n_params == 0 {
            return Err(Error::invalid("network needs at least one parameter"));
        }
        if sites.len() > MAX_QUBITS {
            return Err(Error::invalid(format!("{} qubits exceeds the limit of {MAX_QUBITS}", sites.len())));
        }
        Ok(Self { sites, node_sizes, n_params, fd_step: DEFAULT_FD_STEP })
    }

    pub fn with_fd_step(mut self, step: f64) -> Result<Self> {
        if !(step > 0.0) {
            return Err(Error::invalid(format!("finite-difference step must be positive, got {step}")));
        }
        self.fd_step = step;
        Ok(self)
    }

    pub fn total_qubits(&self) -> usize {
        self.sites.len()
    }

    pub fn num_nodes(&self) -> usize {
        self.node_sizes.len()
    }

    pub fn node_sizes(&self) -> &[usize] {
        &self.node_sizes
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    pub fn fd_step(&self) -> f64 {
        self.fd_step
    }

    pub fn sites(&self) -> &[QubitSite] {
        &self.sites
    }

    pub fn node_of(&self, qubit: usize) -> usize {
        self.sites[qubit].node
    }

    /// Global index of qubit `i` in node `k`.
    pub fn qubit_index(&self, node: usize, i: usize) -> Result<usize> {
        if node >= self.num_nodes() {
            return Err(Error::IndexOutOfRange { index: node, limit: self.num_nodes() });
        }
        if i >= self.node_sizes[node] {
            return Err(Error::IndexOutOfRange { index: i, limit: self.node_sizes[node] });
        }
        Ok(self.node_sizes[..node].iter().sum::<usize>() + i)
    }

    pub fn check_point(&self, x: &ParameterPoint) -> Result<()> {
        if x.len() != self.n_params {
            return Err(Error::DimensionMismatch { expected: self.n_params, actual: x.len() });
        }
        Ok(())
    }

    pub fn check_weights(&self, w: &WeightVector) -> Result<()> {
        if w.len() != self.n_params {
            return Err(Error::DimensionMismatch { expected: self.n_params, actual: w.len() });
        }
        Ok(())
    }

    /// Field on qubit `q`.
    pub fn field(&self, q: usize, x: &ParameterPoint, t: f64) -> Result<PauliVector> {
        let f = self.sites[q].field.evaluate(x.as_slice(), t);
        if !f.is_finite() {
            return Err(Error::invalid(format!("non-finite field on qubit {q} at t = {t}")));
        }
        Ok(f)
    }

    /// Fields on every qubit.
    pub fn fields(&self, x: &ParameterPoint, t: f64) -> Result<Vec<PauliVector>> {
        (0..self.total_qubits()).map(|q| self.field(q, x, t)).collect()
    }

    /// `∂f_q/∂x_j`: analytic when available, otherwise central differences.
    pub fn partial(&self, q: usize, j: usize, x: &ParameterPoint, t: f64) -> Result<PauliVector> {
        if j >= self.n_params {
            return Err(Error::IndexOutOfRange { index: j, limit: self.n_params });
        }
        match self.sites[q].field.analytic_partial(j, x.as_slice(), t) {
            Some(p) => Ok(p),
            None => self.partial_fd(q, j, x, t, self.fd_step),
        }
    }

    /// Central difference with `δ = step·max(1, |x_j|)`, ignoring any
    /// analytic partial.
    pub fn partial_fd(&self, q: usize, j: usize, x: &ParameterPoint, t: f64, step: f64) -> Result<PauliVector> {
        if !(step > 0.0) {
            return Err(Error::invalid(format!("finite-difference step must be positive, got {step}")));
        }
        if j >= self.n_params {
            return Err(Error::IndexOutOfRange { index: j, limit: self.n_params });
        }
        let delta = step * x[j].abs().max(1.0);
        let f = &self.sites[q].field;
        let (mut plus, mut minus) = (x.0.clone(), x.0.clone());
        plus[j] += delta;
        minus[j] -= delta;
        let d = (f.evaluate(&plus, t) - f.evaluate(&minus, t)) * (0.5 / delta);
        if !d.is_finite() {
            return Err(Error::invalid(format!("non-finite partial on qubit {q}")));
        }
        Ok(d)
    }

    /// `v_q(t) = Σ_j w_j ∂f_q/∂x_j`.
    pub fn v_vector(&self, q: usize, x: &ParameterPoint, t: f64, w: &WeightVector) -> Result<PauliVector> {
        self.check_weights(w)?;
        let mut v = PauliVector::ZERO;
        for (j, &wj) in w.as_slice().iter().enumerate() {
            if wj != 0.0 {
                v += self.partial(q, j, x, t)? * wj;
            }
        }
        Ok(v)
    }

    pub fn v_vectors(&self, x: &ParameterPoint, t: f64, w: &WeightVector) -> Result<Vec<PauliVector>> {
        (0..self.total_qubits()).map(|q| self.v_vector(q, x, t, w)).collect()
    }

    /// True when every field is constant over the sampled times.
    pub fn is_time_independent_on(&self, q: usize, x: &ParameterPoint, grid: &TimeGrid) -> Result<bool> {
        let f0 = self.field(q, x, 0.0)?;
        for t in grid.probe_times() {
            let f = self.field(q, x, t)?;
            if (f - f0).max_abs() > 1e-12 * (1.0 + f0.max_abs()) {
                return Ok(false);
            }
        }
        Ok(true)
    }
}

/// Real weights of the linear combination `θ₁ = wᵀx`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if w.is_empty() {
            return Err(Error::invalid("weight vector is empty"));
        }
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("weight vector has non-finite entries"));
        }
        if w.iter().all(|v| *v == 0.0) {
            return Err(Error::invalid("weight vector is all zero"));
        }
        Ok(Self(w))
    }

    /// Basis vector `e_j` of length `n`.
    pub fn unit_axis(n: usize, j: usize) -> Result<Self> {
        if j >= n {
            return Err(Error::IndexOutOfRange { index: j, limit: n });
        }
        let mut w = vec![0.0; n];
        w[j] = 1.0;
        Ok(Self(w))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// `wᵀw`
    pub fn norm_sq(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum()
    }

    pub fn normalized(&self) -> WeightVector {
        let n = self.norm_sq().sqrt();
        WeightVector(self.0.iter().map(|v| v / n).collect())
    }

    pub fn scaled(&self, c: f64) -> Result<WeightVector> {
        WeightVector::new(self.0.iter().map(|v| v * c).collect())
    }

    pub fn dot(&self, x: &ParameterPoint) -> f64 {
        self.0.iter().zip(x.as_slice()).map(|(a, b)| a * b).sum()
    }
}

/// Point `x = (x₁, …, x_N)` in parameter space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParameterPoint(pub Vec<f64>);

impl ParameterPoint {
    pub fn new(x: Vec<f64>) -> Self {
        Self(x)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// `self + s·dir`
    pub fn displaced(&self, dir: &[f64], s: f64) -> ParameterPoint {
        ParameterPoint(self.0.iter().zip(dir).map(|(a, d)| a + s * d).collect())
    }

    pub fn distance(&self, other: &ParameterPoint) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
    }
}

impl std::ops::Index<usize> for ParameterPoint {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// `H_free(x, t) = Σ_q f_q(x, t)·σ_q`.
pub fn free_hamiltonian(net: &SensorNetwork, x: &ParameterPoint, t: f64) -> Result<HermitianOperator> {
    net.check_point(x)?;
    local_sum(&net.fields(x, t)?)
}

/// `∂f^k/∂x_j` for node `k`, evaluated on the node's first qubit.
pub fn partial_field(
    net: &SensorNetwork,
    node: usize,
    j: usize,
    x: &ParameterPoint,
    t: f64,
    step: f64,
) -> Result<PauliVector> {
    net.check_point(x)?;
    if !(step > 0.0) {
        return Err(Error::invalid(format!("finite-difference step must be positive, got {step}")));
    }
    let q = net.qubit_index(node, 0)?;
    match net.sites[q].field.analytic_partial(j, x.as_slice(), t) {
        Some(p) if j < net.n_params => Ok(p),
        _ => net.partial_fd(q, j, x, t, step),
    }
}

/// Weighted derivative `v_ki(t)` of qubit `i` in node `k`.
pub fn v_operator(
    net: &SensorNetwork,
    node: usize,
    i: usize,
    x: &ParameterPoint,
    t: f64,
    w: &WeightVector,
) -> Result<PauliVector> {
    net.check_point(x)?;
    net.v_vector(net.qubit_index(node, i)?, x, t, w)
}

/// `∫₀^T |v_ki(t)| dt` by the midpoint rule on `grid`.
pub fn v_magnitude_integral(
    net: &SensorNetwork,
    node: usize,
    i: usize,
    x: &ParameterPoint,
    w: &WeightVector,
    grid: &TimeGrid,
) -> Result<f64> {
    net.check_point(x)?;
    let q = net.qubit_index(node, i)?;
    qubit_magnitude_integral(net, q, x, w, grid)
}

pub(crate) fn qubit_magnitude_integral(
    net: &SensorNetwork,
    q: usize,
    x: &ParameterPoint,
    w: &WeightVector,
    grid: &TimeGrid,
) -> Result<f64> {
    let mut acc = 0.0;
    for m in 0..grid.steps() {
        acc += net.v_vector(q, x, grid.midpoint(m), w)?.magnitude();
    }
    Ok(acc * grid.dt())
}
