//! The network simulator as a discrete-event federate.
//!
//! Traffic is declared up front: explicit timed commands, periodic
//! generators and sampling probes. Advancing the federate processes every
//! pending event up to the requested time and reports only the output
//! ports those events touched, so between events the federate is silent.

use crate::kernel::{Federate, FederateError, FederateKind};
use crate::port::{PortSpec, PortValues};
use crate::time::{SimDuration, SimInstant};
use crate::trace::TraceEvent;

use super::scheduler::{EventKind, EventPayload, EventScheduler, NetEvent};

/// Declarative traffic item.
#[derive(Debug, Clone, PartialEq)]
pub enum Traffic {
    /// Sets `port := value` at `time`.
    Event { time: SimInstant, port: String, value: f64 },
    /// `count` firings starting at `start`, spaced `period` apart; the k-th
    /// firing sets `port := first_value + k * increment`.
    Periodic {
        start: SimInstant,
        period: SimDuration,
        count: u64,
        port: String,
        first_value: f64,
        increment: f64,
    },
    /// Copies the current value of input `input` to output `output` at `time`.
    Sample { time: SimInstant, input: String, output: String },
}

#[derive(Debug, Clone)]
enum Action {
    Set { port: String, value: f64 },
    Sample { input: String, output: String },
}

pub struct NetworkFederate {
    id: String,
    inputs: Vec<PortSpec>,
    outputs: Vec<PortSpec>,
    scheduler: EventScheduler,
    actions: Vec<Action>,
    time: SimInstant,
    pending_events: Vec<TraceEvent>,
}

impl NetworkFederate {
    pub fn new(
        id: &str,
        inputs: Vec<PortSpec>,
        outputs: Vec<PortSpec>,
        traffic: Vec<Traffic>,
    ) -> Result<Self, FederateError> {
        let mut fed = Self {
            id: id.to_string(),
            inputs,
            outputs,
            scheduler: EventScheduler::new(),
            actions: Vec::new(),
            time: SimInstant::ZERO,
            pending_events: Vec::new(),
        };
        for item in traffic {
            match item {
                Traffic::Event { time, port, value } => fed.push_action(time, Action::Set { port, value })?,
                Traffic::Periodic { start, period, count, port, first_value, increment } => {
                    for k in 0..count {
                        fed.push_action(
                            start + period * k,
                            Action::Set { port: port.clone(), value: first_value + k as f64 * increment },
                        )?;
                    }
                }
                Traffic::Sample { time, input, output } => {
                    fed.push_action(time, Action::Sample { input, output })?
                }
            }
        }
        // Every action target must be a declared output, every sampled
        // input a declared input.
        for action in &fed.actions {
            let (target, source) = match action {
                Action::Set { port, .. } => (port, None),
                Action::Sample { output, input } => (output, Some(input)),
            };
            if !fed.outputs.iter().any(|p| &p.name == target) {
                return Err(FederateError::Internal {
                    federate: fed.id.clone(),
                    message: format!("traffic targets undeclared output port `{target}`"),
                });
            }
            if let Some(input) = source {
                if !fed.inputs.iter().any(|p| &p.name == input) {
                    return Err(FederateError::Internal {
                        federate: fed.id.clone(),
                        message: format!("traffic samples undeclared input port `{input}`"),
                    });
                }
            }
        }
        Ok(fed)
    }

    fn push_action(&mut self, time: SimInstant, action: Action) -> Result<(), FederateError> {
        let idx = self.actions.len();
        self.actions.push(action);
        self.scheduler
            .schedule(NetEvent {
                timestamp: time,
                kind: EventKind::Command,
                payload: EventPayload {
                    values: crate::port::port_values([("action", idx as f64)]),
                    source: None,
                    dest: None,
                },
            })
            .map_err(|e| FederateError::Internal { federate: self.id.clone(), message: e.to_string() })
    }
}

impl Federate for NetworkFederate {
    fn id(&self) -> &str {
        &self.id
    }

    fn kind(&self) -> FederateKind {
        FederateKind::DiscreteEvent
    }

    fn input_ports(&self) -> Vec<PortSpec> {
        self.inputs.clone()
    }

    fn output_ports(&self) -> Vec<PortSpec> {
        self.outputs.clone()
    }

    fn current_time(&self) -> SimInstant {
        self.time
    }

    fn next_event_time(&self) -> Option<SimInstant> {
        self.scheduler.peek_time()
    }

    fn advance_to(&mut self, t: SimInstant, inputs: &PortValues) -> Result<PortValues, FederateError> {
        let mut touched = PortValues::new();
        while let Some(ev) = self.scheduler.pop_next_at_or_before(t) {
            let idx = ev.event.payload.values["action"] as usize;
            let label = match &self.actions[idx] {
                Action::Set { port, value } => {
                    touched.insert(port.clone(), *value);
                    format!("{}: set {port}", self.id)
                }
                Action::Sample { input, output } => {
                    let value = *inputs.get(input).ok_or_else(|| FederateError::MissingInput {
                        federate: self.id.clone(),
                        port: input.clone(),
                    })?;
                    touched.insert(output.clone(), value);
                    format!("{}: sample {input} -> {output}", self.id)
                }
            };
            self.pending_events.push(TraceEvent::NetworkEvent { t: ev.event.timestamp, label });
        }
        self.scheduler.idle_advance(t);
        self.time = t;
        Ok(touched)
    }

    fn drain_trace_events(&mut self) -> Vec<TraceEvent> {
        std::mem::take(&mut self.pending_events)
    }
}
