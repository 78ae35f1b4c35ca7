//! Kernel adapters for the circuit solver.
//!
//! `CircuitFederate` exposes a circuit as a continuous federate:
//! integration happens on the model's own fixed grid, and when asked for an
//! off-grid time the federate holds the last computed sample (the behavior
//! of a fixed-step DRTS coupled at arbitrary instants). `CircuitStepper`
//! exposes the same engine as an embedded transition function for model
//! exchange; both adapters share one advance path so cross-strategy runs
//! agree bit for bit.

use crate::kernel::{EmbeddedStepper, Federate, FederateError, FederateKind};
use crate::port::{PortSpec, PortValues};
use crate::time::{SimDuration, SimInstant};

use super::model::CircuitModel;
use super::PowersimError;

/// Shared grid-anchored advance: integrates whole native steps up to `t`,
/// holding inputs constant across the span.
#[derive(Debug, Clone)]
pub(crate) struct CircuitEngine {
    pub model: CircuitModel,
}

impl CircuitEngine {
    fn advance(&mut self, id: &str, t: SimInstant, inputs: &PortValues) -> Result<(), FederateError> {
        while self.model.time() + self.model.dt() <= t {
            self.model.step(inputs).map_err(|e| match e {
                PowersimError::NonFinite { t } => {
                    FederateError::NonFinite { federate: id.to_string(), t }
                }
                PowersimError::MissingInput(port) => {
                    FederateError::MissingInput { federate: id.to_string(), port }
                }
                other => FederateError::Internal { federate: id.to_string(), message: other.to_string() },
            })?;
        }
        Ok(())
    }
}

/// A circuit as a continuous federate.
pub struct CircuitFederate {
    id: String,
    engine: CircuitEngine,
    /// Reported time; can sit between grid points, with outputs held.
    time: SimInstant,
}

impl CircuitFederate {
    pub fn new(id: &str, model: CircuitModel) -> Self {
        Self { id: id.to_string(), engine: CircuitEngine { model }, time: SimInstant::ZERO }
    }

    pub fn model(&self) -> &CircuitModel {
        &self.engine.model
    }
}

impl Federate for CircuitFederate {
    fn id(&self) -> &str {
        &self.id
    }

    fn kind(&self) -> FederateKind {
        FederateKind::Continuous
    }

    fn native_step(&self) -> Option<SimDuration> {
        Some(self.engine.model.dt())
    }

    fn input_ports(&self) -> Vec<PortSpec> {
        self.engine.model.input_ports().to_vec()
    }

    fn output_ports(&self) -> Vec<PortSpec> {
        self.engine.model.output_ports().to_vec()
    }

    fn current_time(&self) -> SimInstant {
        self.time
    }

    fn advance_to(&mut self, t: SimInstant, inputs: &PortValues) -> Result<PortValues, FederateError> {
        self.engine.advance(&self.id, t, inputs)?;
        self.time = t;
        Ok(self.engine.model.outputs_now())
    }
}

/// The same engine as an embedded transition function (model exchange).
pub struct CircuitStepper {
    engine: CircuitEngine,
    /// Logical time including fractional-step remainders, so repeated
    /// fractional advances land on the same grid points as the federate.
    logical: SimInstant,
}

impl CircuitStepper {
    pub fn new(model: CircuitModel) -> Self {
        Self { engine: CircuitEngine { model }, logical: SimInstant::ZERO }
    }
}

impl EmbeddedStepper for CircuitStepper {
    fn input_ports(&self) -> Vec<PortSpec> {
        self.engine.model.input_ports().to_vec()
    }

    fn output_ports(&self) -> Vec<PortSpec> {
        self.engine.model.output_ports().to_vec()
    }

    fn initial_outputs(&self) -> PortValues {
        self.engine.model.outputs_now()
    }

    fn step(&mut self, inputs: &PortValues, dt: SimDuration) -> Result<PortValues, FederateError> {
        self.logical += dt;
        self.engine.advance("embedded", self.logical, inputs)?;
        Ok(self.engine.model.outputs_now())
    }
}
