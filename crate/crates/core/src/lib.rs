//! Distributed quantum metrology on networks of qubit sensors.
//!
//! A [`SensorNetwork`] places qubits in parameter-dependent local fields.
//! The crate propagates the network under optional local control, builds the
//! generators of parameter shifts, evaluates the quantum Fisher information of
//! a linear function `θ = wᵀx` against its saturable upper bound, synthesizes
//! controls that reach that bound, and runs adaptive estimation on simulated
//! measurement records.
//!
//! Heavy loops (sweeps, Monte Carlo repetitions, shot sampling) are
//! data-parallel when the `parallel` feature is enabled; every routine that
//! takes an [`Execution`] gives identical results in either mode.

// `!(x > 0.0)` is used on purpose throughout: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod control;
pub mod dynamics;
pub mod error;
pub mod estimation;
pub mod format;
pub mod metrology;
pub mod model;
pub mod operators;
pub mod par;
pub mod rng;
pub mod scenarios;
pub mod su2;

pub use control::{synthesize, AlignmentResidual, ControlProtocol, ControlStrategy};
pub use dynamics::{generators, propagate, GeneratorSet, PropagatorSchedule, TimeGrid};
pub use error::{Error, Result};
pub use estimation::{
    adaptive_estimate, monte_carlo, AdaptivePlan, EstimationResult, MeasurementSpec, MonteCarloSummary, ProbeSpec,
    ShotBudget,
};
pub use metrology::{effective_qfi, precision_bound, qfi_upper_bound, qfim, Qfim};
pub use model::{FieldFunction, FieldSpec, ParameterPoint, SensorNetwork, WeightVector};
pub use operators::{HermitianOperator, PauliVector, PureState, Unitary};
pub use par::Execution;
pub use rng::StreamKey;
pub use scenarios::{Scenario, ScenarioDef, ScenarioReport};
