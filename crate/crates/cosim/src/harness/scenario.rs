//! Declarative scenario files.
//!
//! Scenarios are strict TOML: unknown keys are rejected, durations are
//! strings with a unit suffix (`"50us"`, `"1.5ms"`, `"2s"`), and validation
//! reports every problem it finds, not just the first. The full grammar is
//! documented in `docs/scenario-format.md` with worked examples under
//! `scenarios/`.

use std::collections::BTreeSet;
use std::path::Path;

use serde::Deserialize;

use crate::compensation::CompensatorConfig;
use crate::kernel::SyncStrategy;
use crate::pacing::{OverrunPolicy, PacingPolicy};
use crate::phil::{
    AmplifierFamily, AmplifierModel, ExchangeTiming, InterfaceAlgorithm, PhilLink, RlImpedance,
};
use crate::powersim::{Element, ElementKind, Netlist, Probe, SourceProfile, DEFAULT_DT_NANOS};
use crate::time::{parse_duration, SimDuration, SimInstant};

use super::HarnessError;

// ---------------------------------------------------------------------------
// Raw serde layer (strict keys, loose values)
// ---------------------------------------------------------------------------

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    name: String,
    seed: u64,
    duration: String,
    #[serde(default)]
    description: Option<String>,
    #[serde(default)]
    power: Option<PowerSection>,
    #[serde(default)]
    phil: Option<PhilSection>,
    #[serde(default)]
    network: Option<NetworkSection>,
    #[serde(default)]
    coupling: Vec<CouplingSpec>,
    #[serde(default)]
    sync: Option<SyncSection>,
    #[serde(default)]
    pacing: Option<PacingSection>,
    #[serde(default)]
    metrics: Option<MetricsSection>,
    #[serde(default)]
    record: Option<Vec<String>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PowerSection {
    #[serde(default)]
    dt: Option<String>,
    sim_side: NetlistSpec,
    #[serde(default)]
    hut_side: Option<NetlistSpec>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetlistSpec {
    ground: String,
    elements: Vec<ElementSpec>,
    #[serde(default)]
    probes: Vec<ProbeSpec>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ElementSpec {
    kind: String,
    name: String,
    nodes: [String; 2],
    #[serde(default)]
    ohms: Option<f64>,
    #[serde(default)]
    henries: Option<f64>,
    #[serde(default)]
    farads: Option<f64>,
    #[serde(default)]
    dc: Option<f64>,
    #[serde(default)]
    amplitude: Option<f64>,
    #[serde(default)]
    frequency_hz: Option<f64>,
    #[serde(default)]
    phase: Option<f64>,
    #[serde(default)]
    port: Option<String>,
    #[serde(default)]
    initial: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProbeSpec {
    kind: String,
    port: String,
    #[serde(default)]
    node: Option<String>,
    #[serde(default)]
    element: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PhilSection {
    algorithm: String,
    sim_node: String,
    hut_node: String,
    #[serde(default)]
    impedance_ohms: Option<f64>,
    #[serde(default)]
    impedance_henries: Option<f64>,
    #[serde(default)]
    amplifier: Option<AmplifierSpec>,
    #[serde(default)]
    sensor_delay: Option<String>,
    #[serde(default)]
    compensator: Option<CompensatorSpec>,
    #[serde(default)]
    exchange: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct AmplifierSpec {
    #[serde(default)]
    family: Option<String>,
    #[serde(default)]
    gain: Option<f64>,
    #[serde(default)]
    delay: Option<String>,
    #[serde(default)]
    bandwidth_hz: Option<f64>,
    #[serde(default)]
    slew_rate: Option<f64>,
    #[serde(default)]
    saturation: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CompensatorSpec {
    method: String,
    #[serde(default)]
    cutoff_hz: Option<f64>,
    #[serde(default)]
    order: Option<u8>,
    #[serde(default)]
    horizon: Option<String>,
    #[serde(default)]
    f0_hz: Option<f64>,
    #[serde(default)]
    advance: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkSection {
    #[serde(default)]
    inputs: Vec<PortDecl>,
    #[serde(default)]
    outputs: Vec<PortDecl>,
    #[serde(default)]
    links: Vec<LinkSpec>,
    #[serde(default)]
    traffic: Vec<TrafficSpec>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PortDecl {
    port: String,
    unit: String,
    #[serde(default)]
    initial: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct LinkSpec {
    id: String,
    base_latency: String,
    #[serde(default)]
    jitter: Option<JitterSpec>,
    #[serde(default)]
    loss: Option<f64>,
    #[serde(default)]
    in_order: Option<bool>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct JitterSpec {
    kind: String,
    #[serde(default)]
    lo: Option<String>,
    #[serde(default)]
    hi: Option<String>,
    #[serde(default)]
    mean: Option<String>,
    #[serde(default)]
    stddev: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrafficSpec {
    kind: String,
    #[serde(default)]
    time: Option<String>,
    #[serde(default)]
    port: Option<String>,
    #[serde(default)]
    value: Option<f64>,
    #[serde(default)]
    start: Option<String>,
    #[serde(default)]
    period: Option<String>,
    #[serde(default)]
    count: Option<u64>,
    #[serde(default)]
    first_value: Option<f64>,
    #[serde(default)]
    increment: Option<f64>,
    #[serde(default)]
    input: Option<String>,
    #[serde(default)]
    output: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CouplingSpec {
    source: String,
    sink: String,
    #[serde(default)]
    link: Option<String>,
    #[serde(default)]
    mode: Option<String>,
    #[serde(default)]
    max_age: Option<String>,
    #[serde(default)]
    apply_stale: Option<bool>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SyncSection {
    strategy: String,
    #[serde(default)]
    interval: Option<String>,
    #[serde(default)]
    master: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PacingSection {
    rt_factor: f64,
    #[serde(default)]
    overrun_policy: Option<String>,
    #[serde(default)]
    max_overruns: Option<u32>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct MetricsSection {
    #[serde(default)]
    warmup: Option<String>,
    #[serde(default)]
    fundamental_hz: Option<f64>,
    #[serde(default)]
    reference_signal: Option<String>,
    #[serde(default)]
    reference_amplitude: Option<f64>,
    #[serde(default)]
    growth_factor: Option<f64>,
    #[serde(default)]
    thresholds: Vec<ThresholdSpec>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ThresholdSpec {
    signal: String,
    level: f64,
    direction: String,
}

// ---------------------------------------------------------------------------
// Validated scenario
// ---------------------------------------------------------------------------

/// Network configuration after validation.
#[derive(Debug, Clone)]
pub struct NetworkConfig {
    pub inputs: Vec<crate::port::PortSpec>,
    pub outputs: Vec<crate::port::PortSpec>,
    pub links: Vec<(String, crate::commsim::LinkModel)>,
    pub traffic: Vec<crate::commsim::Traffic>,
}

#[derive(Debug, Clone)]
pub struct CouplingConfig {
    pub source: (String, String),
    pub sink: (String, String),
    pub link: Option<String>,
    /// Delivery mode; linked couplings default to on-event (commands fire
    /// when issued), direct couplings to at-sync-points.
    pub on_event: bool,
    pub max_age: Option<SimDuration>,
    pub apply_stale: bool,
}

#[derive(Debug, Clone)]
pub struct ThresholdConfig {
    pub signal: String,
    pub level: f64,
    pub direction: crate::powersim::Direction,
}

#[derive(Debug, Clone)]
pub struct MetricsConfig {
    pub warmup: SimDuration,
    pub fundamental_hz: Option<f64>,
    pub reference_signal: Option<String>,
    pub reference_amplitude: Option<f64>,
    pub growth_factor: f64,
    pub thresholds: Vec<ThresholdConfig>,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            warmup: SimDuration::ZERO,
            fundamental_hz: None,
            reference_signal: None,
            reference_amplitude: None,
            growth_factor: 10.0,
            thresholds: Vec::new(),
        }
    }
}

/// A fully validated scenario, ready to assemble and run.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    pub duration: SimDuration,
    pub dt: SimDuration,
    pub sim_netlist: Option<Netlist>,
    pub hut_netlist: Option<Netlist>,
    pub phil: Option<PhilLink>,
    pub network: Option<NetworkConfig>,
    pub couplings: Vec<CouplingConfig>,
    pub strategy: SyncStrategy,
    /// Declared master/host federate, kept for strategy overrides.
    pub master: Option<String>,
    pub pacing: Option<PacingPolicy>,
    pub metrics: MetricsConfig,
    pub record: Option<Vec<String>>,
    /// SHA-256 of the scenario file bytes, hex.
    pub sha256: String,
}

struct Issues(Vec<String>);

impl Issues {
    fn push(&mut self, path: &str, message: impl std::fmt::Display) {
        self.0.push(format!("{path}: {message}"));
    }
}

fn parse_dur(issues: &mut Issues, path: &str, text: &str) -> SimDuration {
    match parse_duration(text) {
        Ok(d) => d,
        Err(e) => {
            issues.push(path, e);
            SimDuration::ZERO
        }
    }
}

fn build_element(issues: &mut Issues, path: &str, spec: &ElementSpec) -> Option<Element> {
    let fail = |issues: &mut Issues, msg: String| {
        issues.push(path, msg);
    };
    let forbid = |issues: &mut Issues, field: &str, set: bool| {
        if set {
            fail(issues, format!("field `{field}` is not allowed for kind `{}`", spec.kind));
        }
    };
    let source_profile = |issues: &mut Issues| -> Option<SourceProfile> {
        let shapes =
            [spec.dc.is_some(), spec.amplitude.is_some() || spec.frequency_hz.is_some(), spec.port.is_some()];
        match shapes.iter().filter(|s| **s).count() {
            0 => {
                fail(issues, "source needs one of `dc`, `amplitude`+`frequency_hz`, or `port`".into());
                None
            }
            1 => {
                if let Some(dc) = spec.dc {
                    Some(SourceProfile::Dc(dc))
                } else if let Some(port) = &spec.port {
                    Some(SourceProfile::Port { name: port.clone(), initial: spec.initial.unwrap_or(0.0) })
                } else {
                    match (spec.amplitude, spec.frequency_hz) {
                        (Some(a), Some(f)) => Some(SourceProfile::Sine {
                            amplitude: a,
                            omega: 2.0 * std::f64::consts::PI * f,
                            phase: spec.phase.unwrap_or(0.0),
                        }),
                        _ => {
                            fail(issues, "sinusoidal source needs both `amplitude` and `frequency_hz`".into());
                            None
                        }
                    }
                }
            }
            _ => {
                fail(issues, "source profile is ambiguous; give exactly one of dc / sine / port".into());
                None
            }
        }
    };

    let kind = match spec.kind.as_str() {
        "resistor" => {
            forbid(issues, "henries", spec.henries.is_some());
            forbid(issues, "farads", spec.farads.is_some());
            forbid(issues, "dc", spec.dc.is_some());
            forbid(issues, "port", spec.port.is_some());
            match spec.ohms {
                Some(ohms) => ElementKind::Resistor { ohms },
                None => {
                    fail(issues, "resistor needs `ohms`".into());
                    return None;
                }
            }
        }
        "inductor" => {
            forbid(issues, "ohms", spec.ohms.is_some());
            match spec.henries {
                Some(henries) => ElementKind::Inductor { henries },
                None => {
                    fail(issues, "inductor needs `henries`".into());
                    return None;
                }
            }
        }
        "capacitor" => {
            forbid(issues, "ohms", spec.ohms.is_some());
            match spec.farads {
                Some(farads) => ElementKind::Capacitor { farads },
                None => {
                    fail(issues, "capacitor needs `farads`".into());
                    return None;
                }
            }
        }
        "voltage-source" => ElementKind::VoltageSource { profile: source_profile(issues)? },
        "current-source" => ElementKind::CurrentSource { profile: source_profile(issues)? },
        other => {
            fail(issues, format!("unsupported element kind `{other}`"));
            return None;
        }
    };
    Some(Element { name: spec.name.clone(), kind, a: spec.nodes[0].clone(), b: spec.nodes[1].clone() })
}

fn build_netlist(issues: &mut Issues, path: &str, spec: &NetlistSpec, dt: SimDuration) -> Netlist {
    let mut netlist = Netlist::new(&spec.ground, dt);
    for el in &spec.elements {
        let el_path = format!("{path}.elements[{}]", el.name);
        if let Some(element) = build_element(issues, &el_path, el) {
            netlist.elements.push(element);
        }
    }
    for probe in &spec.probes {
        let p_path = format!("{path}.probes[{}]", probe.port);
        match probe.kind.as_str() {
            "node-voltage" => match &probe.node {
                Some(node) => {
                    netlist.probes.push(Probe::NodeVoltage { port: probe.port.clone(), node: node.clone() })
                }
                None => issues.push(&p_path, "node-voltage probe needs `node`"),
            },
            "branch-current" => match &probe.element {
                Some(element) => netlist
                    .probes
                    .push(Probe::BranchCurrent { port: probe.port.clone(), element: element.clone() }),
                None => issues.push(&p_path, "branch-current probe needs `element`"),
            },
            other => issues.push(&p_path, format!("unknown probe kind `{other}`")),
        }
    }
    if let Err(e) = netlist.validate() {
        issues.push(path, e);
    }
    netlist
}

fn build_unit(issues: &mut Issues, path: &str, text: &str) -> crate::port::Unit {
    match text {
        "V" => crate::port::Unit::Volt,
        "A" => crate::port::Unit::Ampere,
        "-" => crate::port::Unit::Dimensionless,
        other => {
            issues.push(path, format!("unknown unit `{other}` (expected V, A or -)"));
            crate::port::Unit::Dimensionless
        }
    }
}

fn build_phil(issues: &mut Issues, section: &PhilSection, dt: SimDuration) -> PhilLink {
    let impedance = RlImpedance {
        r: section.impedance_ohms.unwrap_or(0.0),
        l: section.impedance_henries.unwrap_or(0.0),
    };
    let algorithm = match section.algorithm.as_str() {
        "itm-voltage" => InterfaceAlgorithm::ItmVoltage,
        "itm-current" => InterfaceAlgorithm::ItmCurrent,
        "pcd" => InterfaceAlgorithm::Pcd { zab: impedance },
        "dim" => InterfaceAlgorithm::Dim { z_star: impedance },
        other => {
            issues.push("phil.algorithm", format!("unknown interface algorithm `{other}`"));
            InterfaceAlgorithm::ItmVoltage
        }
    };
    if matches!(algorithm, InterfaceAlgorithm::ItmVoltage | InterfaceAlgorithm::ItmCurrent)
        && (section.impedance_ohms.is_some() || section.impedance_henries.is_some())
    {
        issues.push("phil", "impedance fields apply only to pcd and dim algorithms");
    }

    let mut amplifier = AmplifierModel::ideal();
    if let Some(spec) = &section.amplifier {
        if let Some(family) = &spec.family {
            amplifier = match family.as_str() {
                "linear" => AmplifierModel::preset(AmplifierFamily::Linear),
                "generator" => AmplifierModel::preset(AmplifierFamily::Generator),
                "switched-mode" => AmplifierModel::preset(AmplifierFamily::SwitchedMode),
                other => {
                    issues.push("phil.amplifier.family", format!("unknown family `{other}`"));
                    AmplifierModel::ideal()
                }
            };
        }
        if let Some(gain) = spec.gain {
            amplifier.gain = gain;
        }
        if let Some(delay) = &spec.delay {
            amplifier.delay = parse_dur(issues, "phil.amplifier.delay", delay);
        }
        if let Some(bw) = spec.bandwidth_hz {
            amplifier.bandwidth_hz = bw;
        }
        amplifier.slew_rate = spec.slew_rate.or(amplifier.slew_rate);
        amplifier.saturation = spec.saturation.or(amplifier.saturation);
        if let Err(e) = amplifier.validate() {
            issues.push("phil.amplifier", e);
        }
    }

    let compensator = match &section.compensator {
        None => CompensatorConfig::None,
        Some(spec) => match spec.method.as_str() {
            "none" => CompensatorConfig::None,
            "low-pass" => match spec.cutoff_hz {
                Some(cutoff_hz) => CompensatorConfig::LowPass { cutoff_hz },
                None => {
                    issues.push("phil.compensator", "low-pass needs `cutoff_hz`");
                    CompensatorConfig::None
                }
            },
            "extrapolate" => {
                let order = spec.order.unwrap_or(1);
                let horizon = spec
                    .horizon
                    .as_ref()
                    .map(|h| parse_dur(issues, "phil.compensator.horizon", h))
                    .unwrap_or(SimDuration::ZERO);
                CompensatorConfig::Extrapolate { order, horizon }
            }
            "phase-advance" => match (spec.f0_hz, &spec.advance) {
                (Some(f0_hz), Some(advance)) => CompensatorConfig::PhaseAdvance {
                    f0_hz,
                    advance: parse_dur(issues, "phil.compensator.advance", advance),
                },
                _ => {
                    issues.push("phil.compensator", "phase-advance needs `f0_hz` and `advance`");
                    CompensatorConfig::None
                }
            },
            other => {
                issues.push("phil.compensator.method", format!("unknown method `{other}`"));
                CompensatorConfig::None
            }
        },
    };
    if let Err(e) = compensator.validate(dt) {
        issues.push("phil.compensator", e);
    }

    let exchange = match section.exchange.as_deref() {
        None | Some("one-step") => ExchangeTiming::OneStepDelay,
        Some("zero-delay") => ExchangeTiming::ZeroDelay,
        Some(other) => {
            issues.push("phil.exchange", format!("unknown exchange timing `{other}`"));
            ExchangeTiming::OneStepDelay
        }
    };

    PhilLink {
        algorithm,
        amplifier,
        sensor_delay: section
            .sensor_delay
            .as_ref()
            .map(|s| parse_dur(issues, "phil.sensor_delay", s))
            .unwrap_or(SimDuration::ZERO),
        compensator,
        exchange,
        sim_node: section.sim_node.clone(),
        hut_node: section.hut_node.clone(),
    }
}

fn build_network(issues: &mut Issues, section: &NetworkSection, seed: u64) -> NetworkConfig {
    use crate::commsim::{derive_link_seed, Jitter, LinkModel, Traffic};
    let mut inputs = Vec::new();
    for decl in &section.inputs {
        let unit = build_unit(issues, &format!("network.inputs[{}]", decl.port), &decl.unit);
        inputs.push(
            crate::port::PortSpec::new(decl.port.clone(), unit).with_initial(decl.initial.unwrap_or(0.0)),
        );
    }
    let mut outputs = Vec::new();
    for decl in &section.outputs {
        let unit = build_unit(issues, &format!("network.outputs[{}]", decl.port), &decl.unit);
        outputs.push(
            crate::port::PortSpec::new(decl.port.clone(), unit).with_initial(decl.initial.unwrap_or(0.0)),
        );
    }
    let mut links = Vec::new();
    let mut link_ids = BTreeSet::new();
    for spec in &section.links {
        let path = format!("network.links[{}]", spec.id);
        if !link_ids.insert(spec.id.clone()) {
            issues.push(&path, "duplicate link id");
        }
        let jitter = match &spec.jitter {
            None => Jitter::None,
            Some(j) => match j.kind.as_str() {
                "none" => Jitter::None,
                "uniform" => match (&j.lo, &j.hi) {
                    (Some(lo), Some(hi)) => {
                        let lo = parse_dur(issues, &format!("{path}.jitter.lo"), lo);
                        let hi = parse_dur(issues, &format!("{path}.jitter.hi"), hi);
                        if hi < lo {
                            issues.push(&format!("{path}.jitter"), "uniform jitter needs lo <= hi");
                        }
                        Jitter::Uniform { lo, hi }
                    }
                    _ => {
                        issues.push(&format!("{path}.jitter"), "uniform jitter needs `lo` and `hi`");
                        Jitter::None
                    }
                },
                "normal" => match (&j.mean, &j.stddev) {
                    (Some(mean), Some(stddev)) => Jitter::Normal {
                        mean: parse_dur(issues, &format!("{path}.jitter.mean"), mean),
                        stddev: parse_dur(issues, &format!("{path}.jitter.stddev"), stddev),
                    },
                    _ => {
                        issues.push(&format!("{path}.jitter"), "normal jitter needs `mean` and `stddev`");
                        Jitter::None
                    }
                },
                other => {
                    issues.push(&format!("{path}.jitter.kind"), format!("unknown jitter kind `{other}`"));
                    Jitter::None
                }
            },
        };
        let loss = spec.loss.unwrap_or(0.0);
        if !(0.0..=1.0).contains(&loss) {
            issues.push(&format!("{path}.loss"), "loss probability must lie in [0, 1]");
            continue;
        }
        let mut model = LinkModel::new(
            parse_dur(issues, &format!("{path}.base_latency"), &spec.base_latency),
            jitter,
            loss,
            derive_link_seed(seed, &spec.id),
        );
        model.in_order = spec.in_order.unwrap_or(true);
        links.push((spec.id.clone(), model));
    }
    let mut traffic = Vec::new();
    for (idx, spec) in section.traffic.iter().enumerate() {
        let path = format!("network.traffic[{idx}]");
        match spec.kind.as_str() {
            "event" => match (&spec.time, &spec.port, spec.value) {
                (Some(time), Some(port), Some(value)) => traffic.push(Traffic::Event {
                    time: SimInstant::ZERO + parse_dur(issues, &path, time),
                    port: port.clone(),
                    value,
                }),
                _ => issues.push(&path, "event traffic needs `time`, `port` and `value`"),
            },
            "periodic" => match (&spec.start, &spec.period, spec.count, &spec.port) {
                (Some(start), Some(period), Some(count), Some(port)) => traffic.push(Traffic::Periodic {
                    start: SimInstant::ZERO + parse_dur(issues, &path, start),
                    period: parse_dur(issues, &path, period),
                    count,
                    port: port.clone(),
                    first_value: spec.first_value.unwrap_or(0.0),
                    increment: spec.increment.unwrap_or(0.0),
                }),
                _ => issues.push(&path, "periodic traffic needs `start`, `period`, `count` and `port`"),
            },
            "sample" => match (&spec.time, &spec.input, &spec.output) {
                (Some(time), Some(input), Some(output)) => traffic.push(Traffic::Sample {
                    time: SimInstant::ZERO + parse_dur(issues, &path, time),
                    input: input.clone(),
                    output: output.clone(),
                }),
                _ => issues.push(&path, "sample traffic needs `time`, `input` and `output`"),
            },
            other => issues.push(&path, format!("unknown traffic kind `{other}`")),
        }
    }
    NetworkConfig { inputs, outputs, links, traffic }
}

/// Parses and validates a scenario from raw file bytes.
pub fn parse_scenario(text: &str, origin: &Path) -> Result<Scenario, HarnessError> {
    // Syntax first: a malformed document is a parse error with location.
    if let Err(e) = text.parse::<toml::Table>() {
        return Err(HarnessError::Parse { path: origin.to_path_buf(), message: e.to_string() });
    }
    // Strict structural pass; unknown keys and type mismatches, with spans.
    let file: ScenarioFile = match toml::from_str(text) {
        Ok(f) => f,
        Err(e) => {
            return Err(HarnessError::Validation {
                path: origin.to_path_buf(),
                issues: vec![e.to_string()],
            })
        }
    };
    let sha256 = sha256_hex(text.as_bytes());
    build_scenario(file, sha256, origin)
}

/// Parses a scenario from an already-decoded TOML value (used by sweeps).
pub fn parse_scenario_value(value: toml::Value, origin: &Path) -> Result<Scenario, HarnessError> {
    let rendered = toml::to_string(&value)
        .map_err(|e| HarnessError::Config(format!("cannot re-render scenario: {e}")))?;
    parse_scenario(&rendered, origin)
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

fn build_scenario(file: ScenarioFile, sha256: String, origin: &Path) -> Result<Scenario, HarnessError> {
    let mut issues = Issues(Vec::new());
    let _ = &file.description;

    let duration = parse_dur(&mut issues, "duration", &file.duration);
    let dt = file
        .power
        .as_ref()
        .and_then(|p| p.dt.as_ref())
        .map(|d| parse_dur(&mut issues, "power.dt", d))
        .unwrap_or(SimDuration::from_nanos(DEFAULT_DT_NANOS));
    if dt.is_zero() {
        issues.push("power.dt", "native step must be > 0");
    }

    let sim_netlist = file
        .power
        .as_ref()
        .map(|p| build_netlist(&mut issues, "power.sim_side", &p.sim_side, dt));
    let hut_netlist = file
        .power
        .as_ref()
        .and_then(|p| p.hut_side.as_ref())
        .map(|n| build_netlist(&mut issues, "power.hut_side", n, dt));

    let phil = file.phil.as_ref().map(|section| build_phil(&mut issues, section, dt));
    if phil.is_some() {
        if sim_netlist.is_none() {
            issues.push("phil", "a PHIL loop needs power.sim_side");
        }
        if hut_netlist.is_none() {
            issues.push("phil", "a PHIL loop needs power.hut_side");
        }
    } else if hut_netlist.is_some() {
        issues.push("power.hut_side", "a hardware side without a [phil] section has no purpose");
    }

    let network = file.network.as_ref().map(|n| build_network(&mut issues, n, file.seed));

    let mut couplings = Vec::new();
    for (idx, spec) in file.coupling.iter().enumerate() {
        let path = format!("coupling[{idx}]");
        let parse_ref = |issues: &mut Issues, field: &str, text: &str| -> (String, String) {
            match text.split_once('.') {
                Some((fed, port)) if !fed.is_empty() && !port.is_empty() => {
                    (fed.to_string(), port.to_string())
                }
                _ => {
                    issues.push(&format!("{path}.{field}"), "expected `federate.port`");
                    (String::new(), String::new())
                }
            }
        };
        let source = parse_ref(&mut issues, "source", &spec.source);
        let sink = parse_ref(&mut issues, "sink", &spec.sink);
        if spec.max_age.is_some() && spec.link.is_none() {
            issues.push(&path, "`max_age` only applies to couplings routed via a link");
        }
        let on_event = match spec.mode.as_deref() {
            Some("on-event") => true,
            Some("at-sync-points") => false,
            None => spec.link.is_some(),
            Some(other) => {
                issues.push(&format!("{path}.mode"), format!("unknown exchange mode `{other}`"));
                false
            }
        };
        couplings.push(CouplingConfig {
            source,
            sink,
            link: spec.link.clone(),
            on_event,
            max_age: spec.max_age.as_ref().map(|d| parse_dur(&mut issues, &format!("{path}.max_age"), d)),
            apply_stale: spec.apply_stale.unwrap_or(true),
        });
    }

    let strategy = match &file.sync {
        None => SyncStrategy::TimeStepped { sync_interval: dt },
        Some(section) => match section.strategy.as_str() {
            "time-stepped" => SyncStrategy::TimeStepped {
                sync_interval: section
                    .interval
                    .as_ref()
                    .map(|i| parse_dur(&mut issues, "sync.interval", i))
                    .unwrap_or(dt),
            },
            "master-slave" => match &section.master {
                Some(master) => SyncStrategy::MasterSlave { master: master.clone() },
                None => {
                    issues.push("sync", "master-slave needs `master`");
                    SyncStrategy::TimeStepped { sync_interval: dt }
                }
            },
            "global-event-driven" => SyncStrategy::GlobalEventDriven,
            "model-exchange" => match &section.master {
                Some(host) => SyncStrategy::ModelExchange { host: host.clone() },
                None => {
                    issues.push("sync", "model-exchange needs `master` (the discrete-event host)");
                    SyncStrategy::TimeStepped { sync_interval: dt }
                }
            },
            other => {
                issues.push("sync.strategy", format!("unknown strategy `{other}`"));
                SyncStrategy::TimeStepped { sync_interval: dt }
            }
        },
    };

    let pacing = file.pacing.as_ref().map(|section| {
        let overrun_policy = match section.overrun_policy.as_deref() {
            None | Some("log-and-continue") => OverrunPolicy::LogAndContinue,
            Some("abort") => OverrunPolicy::Abort,
            Some(other) => {
                issues.push("pacing.overrun_policy", format!("unknown policy `{other}`"));
                OverrunPolicy::LogAndContinue
            }
        };
        let policy = PacingPolicy {
            rt_factor: section.rt_factor,
            overrun_policy,
            max_overruns: section.max_overruns.unwrap_or(u32::MAX),
        };
        if let Err(e) = policy.validate() {
            issues.push("pacing", e);
        }
        policy
    });

    let metrics = match &file.metrics {
        None => MetricsConfig::default(),
        Some(section) => {
            let mut thresholds = Vec::new();
            for t in &section.thresholds {
                let direction = match t.direction.as_str() {
                    "rising" => crate::powersim::Direction::Rising,
                    "falling" => crate::powersim::Direction::Falling,
                    "both" => crate::powersim::Direction::Both,
                    other => {
                        issues.push("metrics.thresholds", format!("unknown direction `{other}`"));
                        crate::powersim::Direction::Both
                    }
                };
                thresholds.push(ThresholdConfig { signal: t.signal.clone(), level: t.level, direction });
            }
            MetricsConfig {
                warmup: section
                    .warmup
                    .as_ref()
                    .map(|w| parse_dur(&mut issues, "metrics.warmup", w))
                    .unwrap_or(SimDuration::ZERO),
                fundamental_hz: section.fundamental_hz,
                reference_signal: section.reference_signal.clone(),
                reference_amplitude: section.reference_amplitude,
                growth_factor: section.growth_factor.unwrap_or(10.0),
                thresholds,
            }
        }
    };

    if duration.is_zero() {
        issues.push("duration", "must be > 0");
    } else if metrics.warmup >= duration {
        issues.push("metrics.warmup", "warm-up window must be shorter than the duration");
    }
    if sim_netlist.is_none() && network.is_none() {
        issues.push("scenario", "needs at least a power circuit or a network section");
    }

    // Cross-reference couplings against the federates this scenario will
    // assemble (unit checks happen again at federation build; here we check
    // that ids resolve and units match so all errors surface together).
    let fed_ports = collect_federate_ports(&sim_netlist, &hut_netlist, &phil, &network);
    for (idx, coupling) in couplings.iter().enumerate() {
        let path = format!("coupling[{idx}]");
        let src = fed_ports.outputs.get(&(coupling.source.0.clone(), coupling.source.1.clone()));
        let snk = fed_ports.inputs.get(&(coupling.sink.0.clone(), coupling.sink.1.clone()));
        if src.is_none() {
            issues.push(
                &format!("{path}.source"),
                format!("unknown output port `{}.{}`", coupling.source.0, coupling.source.1),
            );
        }
        if snk.is_none() {
            issues.push(
                &format!("{path}.sink"),
                format!("unknown input port `{}.{}`", coupling.sink.0, coupling.sink.1),
            );
        }
        if let (Some(a), Some(b)) = (src, snk) {
            if a != b {
                issues.push(
                    &path,
                    format!(
                        "units differ: `{}.{}` is {a}, `{}.{}` is {b}",
                        coupling.source.0, coupling.source.1, coupling.sink.0, coupling.sink.1
                    ),
                );
            }
        }
        if let Some(link) = &coupling.link {
            let known = network
                .as_ref()
                .map(|n| n.links.iter().any(|(id, _)| id == link))
                .unwrap_or(false);
            if !known {
                issues.push(&format!("{path}.link"), format!("unknown link `{link}`"));
            }
        }
    }
    if let Some(signals) = &file.record {
        for signal in signals {
            let known = signal
                .split_once('.')
                .map(|(fed, port)| fed_ports.outputs.contains_key(&(fed.to_string(), port.to_string())))
                .unwrap_or(false);
            if !known {
                issues.push("record", format!("unknown signal `{signal}`"));
            }
        }
    }

    if !issues.0.is_empty() {
        return Err(HarnessError::Validation { path: origin.to_path_buf(), issues: issues.0 });
    }
    Ok(Scenario {
        name: file.name,
        seed: file.seed,
        duration,
        dt,
        sim_netlist,
        hut_netlist,
        phil,
        network,
        couplings,
        strategy,
        master: file.sync.as_ref().and_then(|s| s.master.clone()),
        pacing,
        metrics,
        record: file.record,
        sha256,
    })
}

struct FederatePorts {
    outputs: std::collections::BTreeMap<(String, String), crate::port::Unit>,
    inputs: std::collections::BTreeMap<(String, String), crate::port::Unit>,
}

fn collect_federate_ports(
    sim: &Option<Netlist>,
    hut: &Option<Netlist>,
    phil: &Option<PhilLink>,
    network: &Option<NetworkConfig>,
) -> FederatePorts {
    use crate::port::Unit;
    let mut outputs = std::collections::BTreeMap::new();
    let mut inputs = std::collections::BTreeMap::new();
    if let Some(net) = network {
        for p in &net.outputs {
            outputs.insert(("net".to_string(), p.name.clone()), p.unit);
        }
        for p in &net.inputs {
            inputs.insert(("net".to_string(), p.name.clone()), p.unit);
        }
    }
    match (sim, phil) {
        (Some(sim_netlist), Some(link)) => {
            let fed = "phil".to_string();
            let voltage_type = !matches!(link.algorithm, InterfaceAlgorithm::ItmCurrent);
            let standard: [(&str, Unit); 4] = if voltage_type {
                [("v_pcc", Unit::Volt), ("v_amp", Unit::Volt), ("i_hut", Unit::Ampere), ("i_fb", Unit::Ampere)]
            } else {
                [("i_cmd", Unit::Ampere), ("i_amp", Unit::Ampere), ("v_hut", Unit::Volt), ("v_fb", Unit::Volt)]
            };
            for (name, unit) in standard {
                outputs.insert((fed.clone(), name.to_string()), unit);
            }
            for netlist in [Some(sim_netlist), hut.as_ref()].into_iter().flatten() {
                for probe in &netlist.probes {
                    outputs.insert((fed.clone(), probe.port().to_string()), probe.unit());
                }
                for port in netlist.input_ports() {
                    inputs.insert((fed.clone(), port.name), port.unit);
                }
            }
        }
        (Some(sim_netlist), None) => {
            let fed = "power".to_string();
            for probe in &sim_netlist.probes {
                outputs.insert((fed.clone(), probe.port().to_string()), probe.unit());
            }
            for port in sim_netlist.input_ports() {
                inputs.insert((fed.clone(), port.name), port.unit);
            }
        }
        _ => {}
    }
    FederatePorts { outputs, inputs }
}

/// Loads and validates a scenario file.
pub fn load_scenario(path: &Path) -> Result<Scenario, HarnessError> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| HarnessError::Io { path: path.to_path_buf(), source })?;
    parse_scenario(&text, path)
}

/// Loads a scenario with the seed overridden before parsing, so link
/// generators and sweep derivations all follow the new seed.
pub fn load_scenario_with_seed(path: &Path, seed: Option<u64>) -> Result<Scenario, HarnessError> {
    let Some(seed) = seed else { return load_scenario(path) };
    let text = std::fs::read_to_string(path)
        .map_err(|source| HarnessError::Io { path: path.to_path_buf(), source })?;
    let mut table: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| HarnessError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
    if seed > i64::MAX as u64 {
        return Err(HarnessError::Config("seed overrides must fit in 63 bits".into()));
    }
    table.insert("seed".into(), toml::Value::Integer(seed as i64));
    parse_scenario_value(toml::Value::Table(table), path)
}
