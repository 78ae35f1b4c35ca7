//! Orchestration of a federate set under the four synchronization
//! strategies.
//!
//! Exchange semantics are explicit (loose) coupling throughout: the
//! orchestrator keeps a board of last-known source outputs, and values
//! exchanged at a synchronization point are consumed by sinks during the
//! following interval. Couplings with a `link_id` route through the link
//! hub instead of being delivered instantaneously; arrivals are applied at
//! the first processed time point at or after the arrival time, with
//! optional freshness accounting.
//!
//! Orchestration is logically sequential and deterministic: federates are
//! visited in declaration order, couplings in declaration order, and all
//! port containers iterate in name order.

use std::collections::BTreeMap;

use crate::commsim::{stamp_and_check, Freshness as LinkFreshness, LinkHub};
use crate::port::{PortSpec, PortValues};
use crate::time::{SimDuration, SimInstant};
use crate::trace::{Column, Trace, TraceEvent};

use super::{
    advance_to, unit_compatible, Coupling, EmbeddedStepper, Federate, FederateError, FederateKind,
    KernelError,
};

/// Observer verdict after each recorded sample.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StepControl {
    Continue,
    /// Stop the run after this sample; the reason lands in [`Halt`].
    Stop(String),
}

/// Hook invoked once per recorded sample row. Used for wall-clock pacing
/// and on-line instability detection; must not affect exchanged values.
pub trait StepObserver {
    fn on_sample(&mut self, t: SimInstant, values: &[f64]) -> Result<StepControl, KernelError>;
}

/// Observer that never interferes.
pub struct NoopObserver;

impl StepObserver for NoopObserver {
    fn on_sample(&mut self, _t: SimInstant, _values: &[f64]) -> Result<StepControl, KernelError> {
        Ok(StepControl::Continue)
    }
}

/// Why a run ended before `t_end`.
#[derive(Debug, Clone, PartialEq)]
pub enum HaltReason {
    /// A federate produced a non-finite value (simulation divergence).
    NonFinite { federate: String },
    /// The observer stopped the run.
    Observer(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Halt {
    pub t: SimInstant,
    pub reason: HaltReason,
}

/// Result of one strategy run: the recorded trace, an optional early halt
/// and the number of processed entries (meaningful for the global
/// event-driven strategy).
#[derive(Debug)]
pub struct StrategyRun {
    pub trace: Trace,
    pub halt: Option<Halt>,
    pub entries_processed: usize,
}

struct RecordedSignal {
    fed: usize,
    port: String,
    initial: f64,
}

/// A federate set, its couplings and the link hub for remote couplings.
pub struct Federation {
    federates: Vec<Box<dyn Federate>>,
    couplings: Vec<Coupling>,
    links: LinkHub,
    buffers: Vec<PortValues>,
    board: Vec<PortValues>,
    /// Ports touched by each federate's most recent advance; drives
    /// on-event couplings.
    fresh: Vec<std::collections::BTreeSet<String>>,
    recorded: Vec<RecordedSignal>,
    columns: Vec<Column>,
}

impl Federation {
    /// Assembles and validates a federation. By default every output port
    /// of every federate is recorded, as `federate.port`, in declaration
    /// order.
    pub fn new(federates: Vec<Box<dyn Federate>>, couplings: Vec<Coupling>) -> Result<Self, KernelError> {
        Self::with_links(federates, couplings, LinkHub::new())
    }

    pub fn with_links(
        federates: Vec<Box<dyn Federate>>,
        couplings: Vec<Coupling>,
        links: LinkHub,
    ) -> Result<Self, KernelError> {
        let mut ids = BTreeMap::new();
        for (idx, fed) in federates.iter().enumerate() {
            if fed.id().contains('.') {
                return Err(KernelError::Config(format!(
                    "federate id `{}` must not contain `.`",
                    fed.id()
                )));
            }
            if ids.insert(fed.id().to_string(), idx).is_some() {
                return Err(KernelError::Config(format!("duplicate federate id `{}`", fed.id())));
            }
        }
        let port_of = |fedspec: &(String, String), out: bool| -> Result<(usize, PortSpec), KernelError> {
            let (fed_id, port) = fedspec;
            let idx = *ids
                .get(fed_id)
                .ok_or_else(|| KernelError::Config(format!("coupling references unknown federate `{fed_id}`")))?;
            let ports = if out { federates[idx].output_ports() } else { federates[idx].input_ports() };
            let spec = ports
                .into_iter()
                .find(|p| &p.name == port)
                .ok_or_else(|| {
                    KernelError::Config(format!(
                        "coupling references unknown {} port `{fed_id}.{port}`",
                        if out { "output" } else { "input" }
                    ))
                })?;
            Ok((idx, spec))
        };
        let mut seen_sinks = BTreeMap::new();
        for (cidx, coupling) in couplings.iter().enumerate() {
            let (_, src_spec) = port_of(&coupling.source, true)?;
            let (_, sink_spec) = port_of(&coupling.sink, false)?;
            if !unit_compatible(src_spec.unit, sink_spec.unit) {
                return Err(KernelError::Config(format!(
                    "coupling units differ: `{}.{}` is {}, `{}.{}` is {}",
                    coupling.source.0, coupling.source.1, src_spec.unit,
                    coupling.sink.0, coupling.sink.1, sink_spec.unit,
                )));
            }
            if let Some(previous) = seen_sinks.insert(coupling.sink.clone(), cidx) {
                return Err(KernelError::Config(format!(
                    "sink port `{}.{}` has more than one source (couplings {previous} and {cidx})",
                    coupling.sink.0, coupling.sink.1
                )));
            }
            if let Some(link) = &coupling.link_id {
                if !links.contains(link) {
                    return Err(KernelError::Config(format!(
                        "coupling references unknown link `{link}`"
                    )));
                }
            }
        }

        let buffers = federates
            .iter()
            .map(|f| f.input_ports().into_iter().map(|p| (p.name, p.initial)).collect())
            .collect();
        let board = federates.iter().map(|_| PortValues::new()).collect();
        let fresh = federates.iter().map(|_| Default::default()).collect();

        let mut recorded = Vec::new();
        let mut columns = Vec::new();
        for (idx, fed) in federates.iter().enumerate() {
            for port in fed.output_ports() {
                columns.push(Column { name: format!("{}.{}", fed.id(), port.name), unit: port.unit });
                recorded.push(RecordedSignal { fed: idx, port: port.name, initial: port.initial });
            }
        }

        Ok(Self { federates, couplings, links, buffers, board, fresh, recorded, columns })
    }

    /// Restricts the recorded columns to the given `federate.port` names.
    pub fn record_signals(&mut self, signals: &[String]) -> Result<(), KernelError> {
        let mut recorded = Vec::new();
        let mut columns = Vec::new();
        for name in signals {
            let (fed_id, port) = name
                .split_once('.')
                .ok_or_else(|| KernelError::Config(format!("recorded signal `{name}` must be `federate.port`")))?;
            let idx = self
                .federates
                .iter()
                .position(|f| f.id() == fed_id)
                .ok_or_else(|| KernelError::Config(format!("recorded signal `{name}`: unknown federate")))?;
            let spec = self.federates[idx]
                .output_ports()
                .into_iter()
                .find(|p| p.name == port)
                .ok_or_else(|| KernelError::Config(format!("recorded signal `{name}`: unknown port")))?;
            columns.push(Column { name: name.clone(), unit: spec.unit });
            recorded.push(RecordedSignal { fed: idx, port: port.to_string(), initial: spec.initial });
        }
        self.recorded = recorded;
        self.columns = columns;
        Ok(())
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn federate_index(&self, id: &str) -> Option<usize> {
        self.federates.iter().position(|f| f.id() == id)
    }

    /// Lost-packet log accumulated by linked couplings.
    pub fn link_hub(&self) -> &LinkHub {
        &self.links
    }

    fn advance_federate(
        &mut self,
        idx: usize,
        t: SimInstant,
        trace: &mut Trace,
    ) -> Result<(), FederateOutcome> {
        let inputs = self.buffers[idx].clone();
        match advance_to(self.federates[idx].as_mut(), t, &inputs) {
            Ok(outputs) => {
                self.fresh[idx] = outputs.keys().cloned().collect();
                for (port, value) in outputs {
                    self.board[idx].insert(port, value);
                }
                trace.events.extend(self.federates[idx].drain_trace_events());
                Ok(())
            }
            Err(FederateError::NonFinite { federate, t }) => {
                Err(FederateOutcome::Halt(Halt { t, reason: HaltReason::NonFinite { federate } }))
            }
            Err(e) => Err(FederateOutcome::Error(KernelError::Federate(e))),
        }
    }

    /// Applies link deliveries that have arrived by `t` to sink buffers,
    /// recording staleness and drops.
    fn apply_deliveries(&mut self, t: SimInstant, trace: &mut Trace) {
        for delivery in self.links.poll(t) {
            let coupling = &self.couplings[delivery.tag];
            let mut applied = true;
            if let Some(freshness) = coupling.freshness {
                let verdict = stamp_and_check(delivery.sent, t, freshness.max_age);
                if verdict == LinkFreshness::Stale {
                    applied = freshness.apply_stale;
                    trace.events.push(TraceEvent::StaleCommand {
                        t_apply: t,
                        age: t.since(delivery.sent),
                        sink: format!("{}.{}", coupling.sink.0, coupling.sink.1),
                        applied,
                    });
                }
            }
            if applied {
                let sink_idx = self.federate_index(&coupling.sink.0).expect("validated");
                self.buffers[sink_idx].insert(coupling.sink.1.clone(), delivery.value);
            }
        }
        for (t_send, link) in self.links.take_drops() {
            trace.events.push(TraceEvent::PacketDropped { t_send, link });
        }
    }

    /// Delivers board values over couplings: direct couplings into sink
    /// buffers (consumed during the following interval), linked couplings
    /// into the link hub.
    fn exchange(&mut self, t: SimInstant) -> Result<(), KernelError> {
        self.exchange_filtered(t, |_| true)
    }

    fn exchange_filtered(
        &mut self,
        t: SimInstant,
        select: impl Fn(&Coupling) -> bool,
    ) -> Result<(), KernelError> {
        for cidx in 0..self.couplings.len() {
            if !select(&self.couplings[cidx]) {
                continue;
            }
            let coupling = &self.couplings[cidx];
            let src_idx = self.federate_index(&coupling.source.0).expect("validated");
            let Some(value) = self.board[src_idx].get(&coupling.source.1).copied() else {
                continue; // source has not produced this port yet
            };
            if coupling.exchange_mode == super::ExchangeMode::OnEvent
                && !self.fresh[src_idx].contains(&coupling.source.1)
            {
                continue;
            }
            match &coupling.link_id {
                Some(link) => {
                    let link = link.clone();
                    self.links
                        .send(&link, t, value, cidx)
                        .map_err(|e| KernelError::Link(e.to_string()))?;
                }
                None => {
                    let sink_idx = self.federate_index(&coupling.sink.0).expect("validated");
                    self.buffers[sink_idx].insert(self.couplings[cidx].sink.1.clone(), value);
                }
            }
        }
        Ok(())
    }

    fn record_row(
        &mut self,
        t: SimInstant,
        trace: &mut Trace,
        observer: &mut dyn StepObserver,
    ) -> Result<StepControl, KernelError> {
        let values: Vec<f64> = self
            .recorded
            .iter()
            .map(|sig| self.board[sig.fed].get(&sig.port).copied().unwrap_or(sig.initial))
            .collect();
        trace.push_row(t, values);
        observer.on_sample(t, trace.rows().last().unwrap())
    }

    /// Time-stepped synchronization: all federates pause at every multiple
    /// of `sync_interval`, where information is exchanged. Values computed
    /// at sync point k are consumed during (k, k+1] (one-interval
    /// staleness; no fixed-point iteration).
    pub fn run_time_stepped(
        &mut self,
        sync_interval: SimDuration,
        t_end: SimInstant,
        observer: &mut dyn StepObserver,
    ) -> Result<StrategyRun, KernelError> {
        if sync_interval.is_zero() {
            return Err(KernelError::Config("sync interval must be > 0".into()));
        }
        if t_end.since(SimInstant::ZERO).checked_div(sync_interval).is_none()
            || !t_end.since(SimInstant::ZERO).is_multiple_of(sync_interval)
        {
            return Err(KernelError::Config(format!(
                "t_end {t_end} is not a multiple of the sync interval {sync_interval}"
            )));
        }
        for fed in &self.federates {
            if fed.kind() == FederateKind::Continuous {
                let step = fed.native_step().ok_or_else(|| {
                    KernelError::Config(format!("continuous federate `{}` lacks a native step", fed.id()))
                })?;
                if !sync_interval.is_multiple_of(step) {
                    return Err(KernelError::Config(format!(
                        "sync interval {sync_interval} is not a multiple of `{}` native step {step}",
                        fed.id()
                    )));
                }
            }
        }
        let steps = t_end.since(SimInstant::ZERO).checked_div(sync_interval).unwrap();
        let mut trace = Trace::new(self.columns.clone());
        let mut entries = 0;
        for k in 0..=steps {
            let t = SimInstant::ZERO + sync_interval * k;
            self.apply_deliveries(t, &mut trace);
            for idx in 0..self.federates.len() {
                match self.advance_federate(idx, t, &mut trace) {
                    Ok(()) => entries += 1,
                    Err(FederateOutcome::Halt(halt)) => {
                        return Ok(StrategyRun { trace, halt: Some(halt), entries_processed: entries })
                    }
                    Err(FederateOutcome::Error(e)) => return Err(e),
                }
            }
            self.exchange(t)?;
            match self.record_row(t, &mut trace, observer)? {
                StepControl::Continue => {}
                StepControl::Stop(reason) => {
                    return Ok(StrategyRun {
                        trace,
                        halt: Some(Halt { t, reason: HaltReason::Observer(reason) }),
                        entries_processed: entries,
                    })
                }
            }
        }
        Ok(StrategyRun { trace, halt: None, entries_processed: entries })
    }

    /// Master-slave synchronization: the discrete-event master coordinates.
    /// Before the master handles events at time t, every slave is advanced
    /// to t (lazily, never beyond the master's event time) and its fresh
    /// outputs are delivered to the master. The trace records one row per
    /// event time.
    pub fn run_master_slave(
        &mut self,
        master: &str,
        t_end: SimInstant,
        observer: &mut dyn StepObserver,
    ) -> Result<StrategyRun, KernelError> {
        let master_idx = self
            .federate_index(master)
            .ok_or_else(|| KernelError::Config(format!("unknown master federate `{master}`")))?;
        if self.federates[master_idx].kind() != FederateKind::DiscreteEvent {
            return Err(KernelError::Config(format!(
                "master `{master}` must be a discrete-event federate"
            )));
        }
        self.run_coordinated(master_idx, t_end, observer)
    }

    /// Model exchange: the embedded models execute synchronously inside the
    /// discrete-event host's event handling, with zero coupling latency.
    /// Equivalent to master-slave with in-process slaves.
    pub fn run_model_exchange(
        &mut self,
        host: &str,
        t_end: SimInstant,
        observer: &mut dyn StepObserver,
    ) -> Result<StrategyRun, KernelError> {
        let host_idx = self
            .federate_index(host)
            .ok_or_else(|| KernelError::Config(format!("unknown host federate `{host}`")))?;
        if self.federates[host_idx].kind() != FederateKind::DiscreteEvent {
            return Err(KernelError::Config(format!(
                "host `{host}` must be a discrete-event federate"
            )));
        }
        for fed in &self.federates {
            if fed.id() != host && fed.kind() != FederateKind::Embedded {
                return Err(KernelError::Config(format!(
                    "model exchange requires every non-host federate to be embedded; `{}` is not",
                    fed.id()
                )));
            }
        }
        self.run_coordinated(host_idx, t_end, observer)
    }

    fn run_coordinated(
        &mut self,
        master_idx: usize,
        t_end: SimInstant,
        observer: &mut dyn StepObserver,
    ) -> Result<StrategyRun, KernelError> {
        let mut trace = Trace::new(self.columns.clone());
        let mut entries = 0;
        loop {
            let Some(t_event) = self.federates[master_idx].next_event_time() else { break };
            if t_event > t_end {
                break;
            }
            self.apply_deliveries(t_event, &mut trace);
            // Slaves first, so the master reads outputs valued at t_event.
            for idx in 0..self.federates.len() {
                if idx == master_idx {
                    continue;
                }
                if t_event < self.federates[idx].current_time() {
                    return Err(KernelError::Causality {
                        federate: self.federates[idx].id().to_string(),
                        event_time: t_event,
                        federate_time: self.federates[idx].current_time(),
                    });
                }
                match self.advance_federate(idx, t_event, &mut trace) {
                    Ok(()) => entries += 1,
                    Err(FederateOutcome::Halt(halt)) => {
                        return Ok(StrategyRun { trace, halt: Some(halt), entries_processed: entries })
                    }
                    Err(FederateOutcome::Error(e)) => return Err(e),
                }
            }
            let master_id = self.federates[master_idx].id().to_string();
            self.exchange_filtered(t_event, |c| c.sink.0 == master_id)?;
            match self.advance_federate(master_idx, t_event, &mut trace) {
                Ok(()) => entries += 1,
                Err(FederateOutcome::Halt(halt)) => {
                    return Ok(StrategyRun { trace, halt: Some(halt), entries_processed: entries })
                }
                Err(FederateOutcome::Error(e)) => return Err(e),
            }
            self.exchange(t_event)?;
            match self.record_row(t_event, &mut trace, observer)? {
                StepControl::Continue => {}
                StepControl::Stop(reason) => {
                    return Ok(StrategyRun {
                        trace,
                        halt: Some(Halt { t: t_event, reason: HaltReason::Observer(reason) }),
                        entries_processed: entries,
                    })
                }
            }
        }
        // Catch-up advance; no events left, so nothing is logged. Embedded
        // models have no timeline of their own and execute only inside
        // host events, so they are left alone.
        self.apply_deliveries(t_end, &mut trace);
        for idx in 0..self.federates.len() {
            if self.federates[idx].kind() != FederateKind::Embedded
                && self.federates[idx].current_time() < t_end
            {
                match self.advance_federate(idx, t_end, &mut trace) {
                    Ok(()) => {}
                    Err(FederateOutcome::Halt(halt)) => {
                        return Ok(StrategyRun { trace, halt: Some(halt), entries_processed: entries })
                    }
                    Err(FederateOutcome::Error(e)) => return Err(e),
                }
            }
        }
        Ok(StrategyRun { trace, halt: None, entries_processed: entries })
    }

    /// Global event-driven synchronization: one merged, timestamp-ordered
    /// list of continuous iteration steps and network events; exactly one
    /// federate executes at a time. At equal timestamps continuous steps
    /// precede network events (the power state must be current before an
    /// event reads it); among events, insertion order decides.
    pub fn run_global_event_driven(
        &mut self,
        t_end: SimInstant,
        observer: &mut dyn StepObserver,
    ) -> Result<StrategyRun, KernelError> {
        let mut next_step: Vec<Option<SimInstant>> = Vec::new();
        for fed in &self.federates {
            match fed.kind() {
                FederateKind::Continuous => {
                    if fed.native_step().is_none() {
                        return Err(KernelError::Config(format!(
                            "continuous federate `{}` lacks a native step",
                            fed.id()
                        )));
                    }
                    next_step.push(Some(SimInstant::ZERO));
                }
                _ => next_step.push(None),
            }
        }
        let mut trace = Trace::new(self.columns.clone());
        let mut entries = 0;
        loop {
            // Earliest pending entry over continuous grids and event queues.
            let mut t_next: Option<SimInstant> = None;
            for (idx, fed) in self.federates.iter().enumerate() {
                let candidate = match fed.kind() {
                    FederateKind::Continuous => next_step[idx],
                    _ => fed.next_event_time(),
                };
                if let Some(c) = candidate {
                    if c <= t_end && t_next.is_none_or(|t| c < t) {
                        t_next = Some(c);
                    }
                }
            }
            let Some(t) = t_next else { break };
            self.apply_deliveries(t, &mut trace);
            // Continuous iteration steps first (tie-break), declaration order.
            for idx in 0..self.federates.len() {
                if next_step[idx] == Some(t) {
                    match self.advance_federate(idx, t, &mut trace) {
                        Ok(()) => entries += 1,
                        Err(FederateOutcome::Halt(halt)) => {
                            return Ok(StrategyRun { trace, halt: Some(halt), entries_processed: entries })
                        }
                        Err(FederateOutcome::Error(e)) => return Err(e),
                    }
                    let step = self.federates[idx].native_step().unwrap();
                    next_step[idx] = Some(t + step);
                    self.exchange(t)?;
                }
            }
            for idx in 0..self.federates.len() {
                if next_step[idx].is_none() && self.federates[idx].next_event_time() == Some(t) {
                    match self.advance_federate(idx, t, &mut trace) {
                        Ok(()) => entries += 1,
                        Err(FederateOutcome::Halt(halt)) => {
                            return Ok(StrategyRun { trace, halt: Some(halt), entries_processed: entries })
                        }
                        Err(FederateOutcome::Error(e)) => return Err(e),
                    }
                    self.exchange(t)?;
                }
            }
            match self.record_row(t, &mut trace, observer)? {
                StepControl::Continue => {}
                StepControl::Stop(reason) => {
                    return Ok(StrategyRun {
                        trace,
                        halt: Some(Halt { t, reason: HaltReason::Observer(reason) }),
                        entries_processed: entries,
                    })
                }
            }
        }
        // Catch-up for federates that stopped short of t_end (no row).
        self.apply_deliveries(t_end, &mut trace);
        for idx in 0..self.federates.len() {
            if self.federates[idx].current_time() < t_end {
                match self.advance_federate(idx, t_end, &mut trace) {
                    Ok(()) => {}
                    Err(FederateOutcome::Halt(halt)) => {
                        return Ok(StrategyRun { trace, halt: Some(halt), entries_processed: entries })
                    }
                    Err(FederateOutcome::Error(e)) => return Err(e),
                }
            }
        }
        Ok(StrategyRun { trace, halt: None, entries_processed: entries })
    }
}

enum FederateOutcome {
    Halt(Halt),
    Error(KernelError),
}

/// Adapter exposing an [`EmbeddedStepper`] as a federate, for model
/// exchange. A zero-length advance is the identity; otherwise the stepper
/// transitions once over the whole elapsed span.
pub struct EmbeddedFederate {
    id: String,
    stepper: Box<dyn EmbeddedStepper>,
    time: SimInstant,
    outputs: PortValues,
}

impl EmbeddedFederate {
    pub fn new(id: &str, stepper: Box<dyn EmbeddedStepper>) -> Self {
        let outputs = stepper.initial_outputs();
        Self { id: id.to_string(), stepper, time: SimInstant::ZERO, outputs }
    }
}

impl Federate for EmbeddedFederate {
    fn id(&self) -> &str {
        &self.id
    }

    fn kind(&self) -> FederateKind {
        FederateKind::Embedded
    }

    fn input_ports(&self) -> Vec<PortSpec> {
        self.stepper.input_ports()
    }

    fn output_ports(&self) -> Vec<PortSpec> {
        self.stepper.output_ports()
    }

    fn current_time(&self) -> SimInstant {
        self.time
    }

    fn advance_to(&mut self, t: SimInstant, inputs: &PortValues) -> Result<PortValues, FederateError> {
        if t > self.time {
            let dt = t.since(self.time);
            self.outputs = self.stepper.step(inputs, dt)?;
            self.time = t;
        }
        Ok(self.outputs.clone())
    }
}
