//! Federate abstraction and synchronization strategies.
//!
//! A federate is one participating simulator: continuous (fixed-step
//! circuit solver), discrete-event (network simulator) or embedded (a
//! stateful transition function with no timeline of its own). The
//! [`Federation`] drives a set of federates plus couplings to a common end
//! time under one of four strategies:
//!
//! * time-stepped: everyone pauses at fixed synchronization points,
//! * master-slave: a discrete-event master coordinates lazy slaves,
//! * global event-driven: a single merged list of power iteration steps
//!   and network events, processed one federate at a time,
//! * model exchange: the continuous model runs embedded inside the
//!   discrete-event host, with zero coupling latency.
//!
//! All coupling is explicit (loose): values computed at a synchronization
//! point feed the following interval. There is no fixed-point iteration and
//! no rollback; a causality violation aborts the run.

mod federation;

pub use federation::{
    EmbeddedFederate, Federation, Halt, HaltReason, NoopObserver, StepControl, StepObserver,
    StrategyRun,
};

use thiserror::Error;

use crate::port::{PortSpec, PortValues, Unit};
use crate::time::{SimDuration, SimInstant};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FederateKind {
    Continuous,
    DiscreteEvent,
    Embedded,
}

/// One participating simulator on the shared timeline.
///
/// Contract: `advance_to` must be monotone (never called with `t` before
/// the federate's current time), must produce outputs valued at `t`, and
/// must be deterministic: identical call history yields identical outputs.
/// Discrete-event federates report only the ports their events touched;
/// continuous federates report every output port.
pub trait Federate {
    fn id(&self) -> &str;
    fn kind(&self) -> FederateKind;

    /// Iteration step of a continuous federate; `None` for event-driven ones.
    fn native_step(&self) -> Option<SimDuration> {
        None
    }

    fn input_ports(&self) -> Vec<PortSpec>;
    fn output_ports(&self) -> Vec<PortSpec>;
    fn current_time(&self) -> SimInstant;

    /// Advances internal time to `t` and returns outputs valued at `t`.
    /// Implementations may assume `validate_advance` has passed.
    fn advance_to(&mut self, t: SimInstant, inputs: &PortValues) -> Result<PortValues, FederateError>;

    /// Timestamp of the earliest pending event, for event-driven federates.
    fn next_event_time(&self) -> Option<SimInstant> {
        None
    }

    /// Discrete happenings (processed events, threshold crossings, ...)
    /// accumulated since the last call, handed to the run's trace.
    fn drain_trace_events(&mut self) -> Vec<crate::trace::TraceEvent> {
        Vec::new()
    }
}

/// Uniform stepping contract: precondition checks shared by every federate.
///
/// Checks that `t` does not regress and that every declared input port is
/// present, then delegates to the federate.
pub fn advance_to(
    federate: &mut dyn Federate,
    t: SimInstant,
    inputs: &PortValues,
) -> Result<PortValues, FederateError> {
    if t < federate.current_time() {
        return Err(FederateError::TimeRegression {
            federate: federate.id().to_string(),
            current: federate.current_time(),
            requested: t,
        });
    }
    for spec in federate.input_ports() {
        if !inputs.contains_key(&spec.name) {
            return Err(FederateError::MissingInput {
                federate: federate.id().to_string(),
                port: spec.name,
            });
        }
    }
    federate.advance_to(t, inputs)
}

/// A stateful transition function `(state, inputs, dt) -> (state, outputs)`
/// executed synchronously inside a discrete-event host (model exchange).
pub trait EmbeddedStepper {
    fn input_ports(&self) -> Vec<PortSpec>;
    fn output_ports(&self) -> Vec<PortSpec>;
    /// Outputs before the first step.
    fn initial_outputs(&self) -> PortValues;
    fn step(&mut self, inputs: &PortValues, dt: SimDuration) -> Result<PortValues, FederateError>;
}

/// How exchanged values travel between two sync points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ExchangeMode {
    /// Delivered at every synchronization point.
    #[default]
    AtSyncPoints,
    /// Delivered only when the source federate produced the port anew.
    OnEvent,
}

/// Freshness policy for values routed through a communication link.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FreshnessPolicy {
    pub max_age: SimDuration,
    /// Whether a stale command is still applied (it is always counted).
    pub apply_stale: bool,
}

/// Directed connection from a source port to a sink port.
#[derive(Debug, Clone, PartialEq)]
pub struct Coupling {
    pub source: (String, String),
    pub sink: (String, String),
    pub exchange_mode: ExchangeMode,
    /// When set, values are routed through this commsim link instead of
    /// being delivered instantaneously.
    pub link_id: Option<String>,
    pub freshness: Option<FreshnessPolicy>,
}

impl Coupling {
    pub fn direct(source_fed: &str, source_port: &str, sink_fed: &str, sink_port: &str) -> Self {
        Self {
            source: (source_fed.into(), source_port.into()),
            sink: (sink_fed.into(), sink_port.into()),
            exchange_mode: ExchangeMode::AtSyncPoints,
            link_id: None,
            freshness: None,
        }
    }

    pub fn via_link(mut self, link_id: &str) -> Self {
        self.link_id = Some(link_id.into());
        self
    }

    /// Deliver only when the source federate produced the port anew.
    pub fn on_event(mut self) -> Self {
        self.exchange_mode = ExchangeMode::OnEvent;
        self
    }

    pub fn with_freshness(mut self, max_age: SimDuration, apply_stale: bool) -> Self {
        self.freshness = Some(FreshnessPolicy { max_age, apply_stale });
        self
    }
}

/// The four synchronization strategies.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SyncStrategy {
    ModelExchange { host: String },
    MasterSlave { master: String },
    TimeStepped { sync_interval: SimDuration },
    GlobalEventDriven,
}

#[derive(Debug, Error)]
pub enum FederateError {
    #[error("federate `{federate}` asked to regress from {current} to {requested}")]
    TimeRegression { federate: String, current: SimInstant, requested: SimInstant },
    #[error("federate `{federate}` is missing required input port `{port}`")]
    MissingInput { federate: String, port: String },
    #[error("federate `{federate}` diverged to a non-finite value at {t}")]
    NonFinite { federate: String, t: SimInstant },
    #[error("federate `{federate}` failed: {message}")]
    Internal { federate: String, message: String },
}

#[derive(Debug, Error)]
pub enum KernelError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("causality violation: event at {event_time} reads federate `{federate}` already at {federate_time}")]
    Causality { federate: String, event_time: SimInstant, federate_time: SimInstant },
    #[error(transparent)]
    Federate(#[from] FederateError),
    #[error("link error: {0}")]
    Link(String),
}

pub(crate) fn unit_compatible(a: Unit, b: Unit) -> bool {
    a == b
}
