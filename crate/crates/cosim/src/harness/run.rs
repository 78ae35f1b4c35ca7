//! Scenario assembly and experiment execution.
//!
//! A scenario assembles into a federation: the PHIL loop as one compound
//! federate (or a bare circuit federate), the network simulator as a
//! discrete-event federate, and couplings (optionally routed through lossy
//! links). The federation runs under the configured synchronization
//! strategy, watched by an on-line divergence guard and, when enabled, a
//! wall-clock pacer. Metrics are computed against the monolithic reference
//! whenever the scenario's two circuit sides can be merged.

use std::collections::BTreeMap;

use crate::commsim::{Link, LinkHub, NetworkFederate};
use crate::kernel::{
    Coupling, EmbeddedFederate, Federate, Federation, HaltReason, KernelError, StepControl,
    StepObserver, StrategyRun, SyncStrategy,
};
use crate::pacing::{Pacer, PacingError, PacingPolicy};
use crate::phil::{PhilFederate, PhilLoop};
use crate::powersim::{
    build_state_space, merge_netlists, solve_monolithic, CircuitFederate, CircuitStepper,
    ThresholdDetector,
};
use crate::time::SimInstant;
use crate::trace::{Trace, TraceEvent};

use super::metrics::{
    detect_instability, phasor_error, rms_error, window_indices, Metrics, StabilityVerdict,
};
use super::scenario::Scenario;
use super::HarnessError;

/// Builds the federation described by a scenario. The strategy matters:
/// model exchange embeds the circuit inside the discrete-event host instead
/// of running it as a standalone federate.
fn assemble(scenario: &Scenario) -> Result<Federation, HarnessError> {
    let mut federates: Vec<Box<dyn Federate>> = Vec::new();
    let embed_power = matches!(scenario.strategy, SyncStrategy::ModelExchange { .. });

    match (&scenario.sim_netlist, &scenario.phil) {
        (Some(sim), Some(link)) => {
            if embed_power {
                return Err(HarnessError::Config(
                    "model exchange embeds a plain power circuit; it does not support a PHIL loop"
                        .into(),
                ));
            }
            let hut = scenario.hut_netlist.as_ref().expect("validated");
            let inner = PhilLoop::new(sim, hut, link)?;
            federates.push(Box::new(PhilFederate::new("phil", inner)));
        }
        (Some(sim), None) => {
            let model = build_state_space(sim)?;
            if embed_power {
                federates.push(Box::new(EmbeddedFederate::new(
                    "power",
                    Box::new(CircuitStepper::new(model)),
                )));
            } else {
                federates.push(Box::new(CircuitFederate::new("power", model)));
            }
        }
        _ => {}
    }

    let mut hub = LinkHub::new();
    if let Some(net) = &scenario.network {
        let federate =
            NetworkFederate::new("net", net.inputs.clone(), net.outputs.clone(), net.traffic.clone())
                .map_err(KernelError::Federate)?;
        federates.push(Box::new(federate));
        for (id, model) in &net.links {
            hub.insert(id, Link::new(model.clone()));
        }
    }

    let couplings: Vec<Coupling> = scenario
        .couplings
        .iter()
        .map(|c| {
            let mut coupling = Coupling::direct(&c.source.0, &c.source.1, &c.sink.0, &c.sink.1);
            if c.on_event {
                coupling = coupling.on_event();
            }
            if let Some(link) = &c.link {
                coupling = coupling.via_link(link);
            }
            if let Some(max_age) = c.max_age {
                coupling = coupling.with_freshness(max_age, c.apply_stale);
            }
            coupling
        })
        .collect();

    let mut federation = Federation::with_links(federates, couplings, hub)?;
    if let Some(record) = &scenario.record {
        federation.record_signals(record)?;
    }
    Ok(federation)
}

/// Reference trace from the merged monolithic circuit, when it exists and
/// is comparable (no commands reach the loop, so both runs see identical
/// source profiles).
fn oracle_trace(scenario: &Scenario) -> Result<Option<Trace>, HarnessError> {
    let (Some(sim), Some(hut), Some(link)) =
        (&scenario.sim_netlist, &scenario.hut_netlist, &scenario.phil)
    else {
        return Ok(None);
    };
    let commands_reach_loop = scenario.couplings.iter().any(|c| c.sink.0 == "phil");
    if commands_reach_loop {
        return Ok(None);
    }
    let merged = merge_netlists(sim, hut, &link.sim_node, &link.hut_node)?;
    let initials: crate::port::PortValues =
        merged.input_ports().into_iter().map(|p| (p.name, p.initial)).collect();
    let trace = solve_monolithic(&merged, scenario.duration, |_| initials.clone())?;
    Ok(Some(trace))
}

/// Guard that stops the run at the first sample exceeding the divergence
/// threshold; pairs with a pacer when pacing is enabled.
struct RunObserver {
    guard: Option<(usize, f64)>,
    pacer: Option<Pacer>,
    pacing_failure: Option<PacingError>,
}

impl StepObserver for RunObserver {
    fn on_sample(&mut self, _t: SimInstant, values: &[f64]) -> Result<StepControl, KernelError> {
        if let Some((col, limit)) = self.guard {
            let v = values[col];
            if !v.is_finite() || v.abs() > limit {
                return Ok(StepControl::Stop("divergence guard".into()));
            }
        }
        if let Some(pacer) = &mut self.pacer {
            if let Err(e) = pacer.pace_point() {
                self.pacing_failure = Some(e);
                return Ok(StepControl::Stop("overrun limit".into()));
            }
        }
        Ok(StepControl::Continue)
    }
}

/// Scans the finished trace for configured threshold crossings.
fn apply_threshold_detectors(scenario: &Scenario, trace: &mut Trace) {
    for config in &scenario.metrics.thresholds {
        let Some(col) = trace.column_index(&config.signal) else { continue };
        let detector = ThresholdDetector::new(&config.signal, config.level, config.direction);
        let mut crossings = Vec::new();
        for k in 1..trace.len() {
            let (t_prev, t_now) = (trace.times()[k - 1], trace.times()[k]);
            let (prev, now) = (trace.rows()[k - 1][col], trace.rows()[k][col]);
            if let Some(crossing) = detector.detect(prev, now, t_prev, t_now) {
                crossings.push(TraceEvent::ThresholdCrossing {
                    t: crossing.t,
                    signal: config.signal.clone(),
                    level: crossing.level,
                    rising: crossing.rising,
                });
            }
        }
        trace.events.extend(crossings);
    }
}

fn strategy_name(strategy: &SyncStrategy) -> String {
    match strategy {
        SyncStrategy::TimeStepped { .. } => "time-stepped".into(),
        SyncStrategy::MasterSlave { .. } => "master-slave".into(),
        SyncStrategy::GlobalEventDriven => "global-event-driven".into(),
        SyncStrategy::ModelExchange { .. } => "model-exchange".into(),
    }
}

/// Runs one experiment: assembles federates, executes the configured
/// strategy under the pacing policy, and derives metrics. Unstable runs
/// still return a (truncated) trace and metrics with the unstable verdict.
pub fn run_experiment(scenario: &Scenario) -> Result<(Trace, Metrics), HarnessError> {
    run_experiment_with(scenario, true)
}

/// Like [`run_experiment`], with pacing forcibly disabled when
/// `pacing_enabled` is false (CLI `--no-pacing`, sweeps, CI).
pub fn run_experiment_with(
    scenario: &Scenario,
    pacing_enabled: bool,
) -> Result<(Trace, Metrics), HarnessError> {
    let oracle = oracle_trace(scenario)?;
    let mut federation = assemble(scenario)?;

    // Divergence guard on the reference signal, when an amplitude scale is
    // known (configured, or taken from the oracle's own extremum).
    let reference_signal = scenario.metrics.reference_signal.clone().or_else(|| {
        federation
            .columns()
            .iter()
            .find(|c| c.name == "phil.v_pcc")
            .map(|c| c.name.clone())
    });
    let guard = reference_signal.as_ref().and_then(|name| {
        let col = federation.columns().iter().position(|c| c.name == *name)?;
        let amplitude = scenario.metrics.reference_amplitude.or_else(|| {
            let oracle = oracle.as_ref()?;
            let short = name.split_once('.').map(|(_, p)| p).unwrap_or(name);
            let signal = oracle.signal(short)?;
            let peak = signal.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            (peak > 0.0).then_some(peak)
        })?;
        Some((col, scenario.metrics.growth_factor * amplitude))
    });

    let pacing: Option<PacingPolicy> = if pacing_enabled { scenario.pacing } else { None };
    let sync_interval = match &scenario.strategy {
        SyncStrategy::TimeStepped { sync_interval } => Some(*sync_interval),
        _ => None,
    };
    if pacing.is_some() && sync_interval.is_none() {
        return Err(HarnessError::Config(
            "wall-clock pacing requires the time-stepped strategy".into(),
        ));
    }
    let pacer = match (pacing, sync_interval) {
        (Some(policy), Some(interval)) => Some(Pacer::new(policy, interval)?),
        _ => None,
    };
    let pacing_active = pacer.is_some();
    let mut observer = RunObserver { guard, pacer, pacing_failure: None };

    let t_end = SimInstant::ZERO + scenario.duration;
    let wall_start = std::time::Instant::now();
    let run: StrategyRun = match &scenario.strategy {
        SyncStrategy::TimeStepped { sync_interval } => {
            federation.run_time_stepped(*sync_interval, t_end, &mut observer)?
        }
        SyncStrategy::MasterSlave { master } => {
            federation.run_master_slave(master, t_end, &mut observer)?
        }
        SyncStrategy::GlobalEventDriven => federation.run_global_event_driven(t_end, &mut observer)?,
        SyncStrategy::ModelExchange { host } => {
            federation.run_model_exchange(host, t_end, &mut observer)?
        }
    };
    let wall_elapsed = wall_start.elapsed().as_secs_f64();
    if let Some(failure) = observer.pacing_failure {
        return Err(HarnessError::Pacing(failure));
    }

    let mut trace = run.trace;
    if let (Some(pacer), Some(interval)) = (&observer.pacer, sync_interval) {
        // pace points fire once per recorded row, starting at t = 0
        for (idx, timing) in pacer.log().iter().enumerate() {
            if timing.overrun {
                trace.events.push(TraceEvent::Overrun {
                    t: SimInstant::ZERO + interval * idx as u64,
                    budget_s: timing.budget.as_secs_f64(),
                    wall_s: timing.wall.as_secs_f64(),
                });
            }
        }
    }
    apply_threshold_detectors(scenario, &mut trace);

    // Stability verdict: an early halt is definitive; otherwise scan the
    // reference signal against the known amplitude.
    let stability = match &run.halt {
        Some(halt) => match &halt.reason {
            HaltReason::NonFinite { .. } | HaltReason::Observer(_) => {
                StabilityVerdict::Unstable { onset_seconds: halt.t.as_secs_f64() }
            }
        },
        None => match (&reference_signal, guard) {
            (Some(name), Some((_, limit))) => {
                let signal = trace.signal(name).unwrap_or_default();
                let amplitude = limit / scenario.metrics.growth_factor;
                detect_instability(trace.times(), &signal, amplitude, scenario.metrics.growth_factor)
            }
            _ => StabilityVerdict::Stable,
        },
    };

    // Accuracy against the oracle over the metrics window. Besides the
    // name-matched pairs, the conditioned feedback `phil.i_fb` is compared
    // to the true interface current: that difference is precisely what
    // delay compensation is supposed to remove.
    let warmup_instant = SimInstant::ZERO + scenario.metrics.warmup;
    let mut rms_map = BTreeMap::new();
    let mut steady_map = BTreeMap::new();
    if let Some(oracle) = &oracle {
        let indices = window_indices(&trace, warmup_instant, Some(scenario.dt));
        let mut pairs: Vec<(String, String)> = oracle
            .columns()
            .iter()
            .map(|c| (c.name.clone(), format!("phil.{}", c.name)))
            .collect();
        if trace.column_index("phil.i_fb").is_some() {
            pairs.push((crate::powersim::IFACE_CURRENT.to_string(), "phil.i_fb".to_string()));
        }
        for (oracle_name, trace_name) in pairs {
            let Some(test_col) = trace.column_index(&trace_name) else {
                continue;
            };
            let Some(oracle_signal) = oracle.signal(&oracle_name) else {
                continue;
            };
            let key = trace_name.strip_prefix("phil.").unwrap_or(&trace_name).to_string();
            let mut test = Vec::with_capacity(indices.len());
            let mut reference = Vec::with_capacity(indices.len());
            let mut times = Vec::with_capacity(indices.len());
            for &i in &indices {
                let t = trace.times()[i];
                let oracle_idx = t.since(SimInstant::ZERO).checked_div(scenario.dt).unwrap() as usize;
                if oracle_idx >= oracle_signal.len() {
                    continue;
                }
                test.push(trace.rows()[i][test_col]);
                reference.push(oracle_signal[oracle_idx]);
                times.push(t);
            }
            if reference.is_empty() {
                continue;
            }
            match rms_error(&test, &reference) {
                Ok(err) => {
                    rms_map.insert(key.clone(), err);
                }
                Err(HarnessError::DegenerateReference) => {}
                Err(e) => return Err(e),
            }
            if let Some(f0) = scenario.metrics.fundamental_hz {
                steady_map.insert(key, phasor_error(&times, &test, &reference, f0));
            }
        }
    }

    let stale_commands = trace
        .events
        .iter()
        .filter(|e| matches!(e, TraceEvent::StaleCommand { .. }))
        .count() as u64;
    let dropped_packets = trace
        .events
        .iter()
        .filter(|e| matches!(e, TraceEvent::PacketDropped { .. }))
        .count() as u64;
    let threshold_crossings = trace
        .events
        .iter()
        .filter(|e| matches!(e, TraceEvent::ThresholdCrossing { .. }))
        .count() as u64;
    let overruns = trace
        .events
        .iter()
        .filter(|e| matches!(e, TraceEvent::Overrun { .. }))
        .count() as u64;

    let metrics = Metrics {
        scenario: scenario.name.clone(),
        seed: scenario.seed,
        scenario_sha256: scenario.sha256.clone(),
        strategy: strategy_name(&scenario.strategy),
        samples: trace.len(),
        warmup_seconds: scenario.metrics.warmup.as_secs_f64(),
        rms_error_percent: rms_map,
        steady_state: steady_map,
        stability,
        stale_commands,
        dropped_packets,
        threshold_crossings,
        overruns: pacing_active.then_some(overruns),
        achieved_rt_factor: pacing_active.then(|| {
            let simulated = trace.times().last().map(|t| t.as_secs_f64()).unwrap_or(0.0);
            simulated / wall_elapsed
        }),
    };
    Ok((trace, metrics))
}
