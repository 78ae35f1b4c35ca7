//! The complete PHIL loop as one continuous compound federate.

use crate::kernel::{Federate, FederateError, FederateKind};
use crate::port::{PortSpec, PortValues};
use crate::time::{SimDuration, SimInstant};

use super::couple::{LoopSample, PhilLoop};
use super::PhilError;

/// Wraps a [`PhilLoop`] for the orchestration kernel. Advancing integrates
/// whole native steps; off-grid times hold the last computed sample.
pub struct PhilFederate {
    id: String,
    inner: PhilLoop,
    time: SimInstant,
    samples_since_drain: Vec<LoopSample>,
}

impl PhilFederate {
    pub fn new(id: &str, inner: PhilLoop) -> Self {
        Self { id: id.to_string(), inner, time: SimInstant::ZERO, samples_since_drain: Vec::new() }
    }

    pub fn loop_ref(&self) -> &PhilLoop {
        &self.inner
    }

    /// Native-rate samples accumulated since the last call; lets callers
    /// log the loop at full rate even under a coarser sync interval.
    pub fn drain_samples(&mut self) -> Vec<LoopSample> {
        std::mem::take(&mut self.samples_since_drain)
    }
}

impl Federate for PhilFederate {
    fn id(&self) -> &str {
        &self.id
    }

    fn kind(&self) -> FederateKind {
        FederateKind::Continuous
    }

    fn native_step(&self) -> Option<SimDuration> {
        Some(self.inner.dt())
    }

    fn input_ports(&self) -> Vec<PortSpec> {
        self.inner.input_ports()
    }

    fn output_ports(&self) -> Vec<PortSpec> {
        self.inner.output_ports().to_vec()
    }

    fn current_time(&self) -> SimInstant {
        self.time
    }

    fn advance_to(&mut self, t: SimInstant, inputs: &PortValues) -> Result<PortValues, FederateError> {
        while self.inner.time() + self.inner.dt() <= t {
            let sample = self.inner.step(inputs).map_err(|e| match e {
                PhilError::Powersim(crate::powersim::PowersimError::NonFinite { t }) => {
                    FederateError::NonFinite { federate: self.id.clone(), t }
                }
                other => FederateError::Internal { federate: self.id.clone(), message: other.to_string() },
            })?;
            if !sample.v_ref.is_finite()
                || !sample.v_amp.is_finite()
                || !sample.i_hut.is_finite()
                || !sample.i_fb.is_finite()
            {
                return Err(FederateError::NonFinite { federate: self.id.clone(), t: sample.t });
            }
            self.samples_since_drain.push(sample);
        }
        self.time = t;
        Ok(self.inner.outputs().clone())
    }
}
