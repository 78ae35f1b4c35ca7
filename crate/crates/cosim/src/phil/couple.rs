//! The closed PHIL loop: two circuits, an amplifier, a feedback sensor and
//! an interface algorithm.
//!
//! # Port equations
//!
//! Voltage-type ITM (the default arrangement): the simulated-grid circuit
//! is loaded with a controlled current source drawing the fed-back current
//! `i_fb` at the coupling node; the coupling-node voltage `v_pcc` is the
//! command, which passes through the amplifier and drives the virtual
//! hardware through an ideal voltage source; the current delivered into
//! the hardware, `i_hut`, returns through the sensor delay and the
//! compensator to become `i_fb`. Current-type ITM swaps the roles: the
//! grid-side branch current is commanded out through a controlled current
//! source into the hardware, whose terminal voltage is fed back into a
//! controlled voltage source on the grid side.
//!
//! PCD inserts the duplicated impedance `Zab` in series at the coupling
//! port on both sides: between the amplifier and the hardware, and between
//! the grid coupling node and the feedback sink. With `Zab = 0` both
//! netlists reduce exactly to the ITM arrangement. The resistive loop gain
//! is `Zs / (Zh + Zab)`: larger duplicated impedance widens the stability
//! region while the doubled copy biases the steady state, which is the
//! documented accuracy cost.
//!
//! DIM keeps the ITM current feedback and adds the damping branch on the
//! grid side: `Z*` in series with a controlled voltage source carrying the
//! fed-back hardware terminal voltage. The resistive loop gain is
//! `Zs (Zh - Z*) / (Zh (Zs + Z*))`: when `Z*` matches the hardware
//! impedance the branch supplies exactly the current the stale feedback
//! missed and the disturbance transfer is nulled. A zero `Z*` means "no
//! damping branch" and reduces to ITM (a literal zero-impedance branch
//! would pin the node and is degenerate).
//!
//! # Exchange timing
//!
//! The default is one structural step of delay in each direction, the
//! behavior of a real DRTS-amplifier chain. `ZeroDelay` instead solves the
//! interface algebraically inside each step (both circuits are linear, so
//! command and feedback obey affine per-step port relations), which is the
//! idealized delay-free loop; it requires an ITM voltage interface with no
//! amplifier delay, limits, sensor delay or compensator.

use std::collections::VecDeque;

use crate::compensation::{Compensator, CompensatorConfig};
use crate::port::{PortSpec, PortValues, Unit};
use crate::powersim::{build_state_space, CircuitModel, Element, Netlist, Probe, SourceProfile};
use crate::time::{SimDuration, SimInstant};

use super::amplifier::{Amplifier, AmplifierModel};
use super::stability::RlImpedance;
use super::PhilError;

/// Interface algorithm selection.
#[derive(Debug, Clone, PartialEq)]
pub enum InterfaceAlgorithm {
    ItmVoltage,
    ItmCurrent,
    /// Partial circuit duplication with the duplicated impedance `zab`.
    Pcd { zab: RlImpedance },
    /// Damping impedance method with damping impedance `z_star`.
    Dim { z_star: RlImpedance },
}

/// When exchanged quantities take effect.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ExchangeTiming {
    /// Commands and feedback each lag one native step (default).
    #[default]
    OneStepDelay,
    /// Algebraically consistent within each step; ITM voltage only.
    ZeroDelay,
}

/// Full configuration of the virtual power interface.
#[derive(Debug, Clone, PartialEq)]
pub struct PhilLink {
    pub algorithm: InterfaceAlgorithm,
    pub amplifier: AmplifierModel,
    pub sensor_delay: SimDuration,
    pub compensator: CompensatorConfig,
    pub exchange: ExchangeTiming,
    pub sim_node: String,
    pub hut_node: String,
}

impl PhilLink {
    pub fn ideal_itm(sim_node: &str, hut_node: &str) -> Self {
        Self {
            algorithm: InterfaceAlgorithm::ItmVoltage,
            amplifier: AmplifierModel::ideal(),
            sensor_delay: SimDuration::ZERO,
            compensator: CompensatorConfig::None,
            exchange: ExchangeTiming::OneStepDelay,
            sim_node: sim_node.into(),
            hut_node: hut_node.into(),
        }
    }
}

/// One closed-loop sample. For the current-type interface the roles swap
/// units: `v_ref`/`v_amp` carry the commanded and amplified current and
/// `i_hut`/`i_fb` the measured and fed-back voltage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoopSample {
    pub t: SimInstant,
    /// Command measured on the grid side (input to the amplifier).
    pub v_ref: f64,
    /// Amplifier output at the hardware terminal.
    pub v_amp: f64,
    /// Quantity measured at the hardware.
    pub i_hut: f64,
    /// Feedback injected into the grid side after sensor and compensation.
    pub i_fb: f64,
}

const FB_PORT: &str = "__fb";
const CMD_PORT: &str = "__cmd";
const VB_PORT: &str = "__vb";
const SRC_CURRENT_PROBE: &str = "__i_src";
const CMD_MEAS_PROBE: &str = "v_pcc";
const HUT_VOLT_PROBE: &str = "v_hut";

/// The virtual PHIL loop as a steppable unit.
pub struct PhilLoop {
    sim: CircuitModel,
    hut: CircuitModel,
    amplifier: Amplifier,
    sensor: VecDeque<f64>,
    compensator: Compensator,
    voltage_type: bool,
    dim: bool,
    zero_delay: bool,
    cmd_applied: f64,
    fb_applied: f64,
    vb_applied: f64,
    sens_sim: f64,
    sens_hut: f64,
    sim_ext_inputs: Vec<PortSpec>,
    hut_ext_inputs: Vec<PortSpec>,
    output_ports: Vec<PortSpec>,
    outputs: PortValues,
    last_sample: LoopSample,
    dt: SimDuration,
    steps: u64,
}

fn ensure_no_reserved_names(netlist: &Netlist, side: &str) -> Result<(), PhilError> {
    for el in &netlist.elements {
        if el.name.starts_with("__") {
            return Err(PhilError::Config(format!(
                "{side} netlist element `{}` uses the reserved `__` prefix",
                el.name
            )));
        }
        if let Some(SourceProfile::Port { name, .. }) = el.profile() {
            if name.starts_with("__") {
                return Err(PhilError::Config(format!(
                    "{side} netlist input port `{name}` uses the reserved `__` prefix"
                )));
            }
        }
    }
    for probe in &netlist.probes {
        if probe.port().starts_with("__") {
            return Err(PhilError::Config(format!(
                "{side} netlist probe `{}` uses the reserved `__` prefix",
                probe.port()
            )));
        }
    }
    Ok(())
}

/// Appends a series R-L chain from `from`, returning the far node name.
fn append_series_impedance(netlist: &mut Netlist, from: &str, z: &RlImpedance, tag: &str) -> String {
    let mut node = from.to_string();
    if z.r > 0.0 {
        let next = format!("__{tag}_mr");
        netlist.elements.push(Element::resistor(&format!("__{tag}_r"), &node, &next, z.r));
        node = next;
    }
    if z.l > 0.0 {
        let next = format!("__{tag}_ml");
        netlist.elements.push(Element::inductor(&format!("__{tag}_l"), &node, &next, z.l));
        node = next;
    }
    node
}

impl PhilLoop {
    pub fn new(sim_netlist: &Netlist, hut_netlist: &Netlist, link: &PhilLink) -> Result<Self, PhilError> {
        if sim_netlist.dt != hut_netlist.dt {
            return Err(PhilError::Config(
                "grid-side and hardware-side native steps must match".into(),
            ));
        }
        let dt = sim_netlist.dt;
        ensure_no_reserved_names(sim_netlist, "grid-side")?;
        ensure_no_reserved_names(hut_netlist, "hardware-side")?;
        link.amplifier.validate().map_err(PhilError::Config)?;
        link.compensator.validate(dt)?;

        let voltage_type = !matches!(link.algorithm, InterfaceAlgorithm::ItmCurrent);
        let mut dim = false;

        let mut sim = sim_netlist.clone();
        let mut hut = hut_netlist.clone();

        // Reserved standard output names must not collide with user probes.
        let standard: &[&str] = if voltage_type {
            &[CMD_MEAS_PROBE, "v_amp", "i_hut", "i_fb"]
        } else {
            &["i_cmd", "i_amp", HUT_VOLT_PROBE, "v_fb"]
        };
        for probe in sim.probes.iter().chain(hut.probes.iter()) {
            if standard.contains(&probe.port()) {
                return Err(PhilError::Config(format!(
                    "probe port `{}` collides with a standard loop output",
                    probe.port()
                )));
            }
        }
        for sp in sim.probes.iter() {
            if hut.probes.iter().any(|hp| hp.port() == sp.port()) {
                return Err(PhilError::Config(format!(
                    "probe port `{}` is declared on both sides",
                    sp.port()
                )));
            }
        }

        match &link.algorithm {
            InterfaceAlgorithm::ItmVoltage => {
                sim.elements
                    .push(Element::current_port("__fb_src", &link.sim_node, &sim.ground, FB_PORT, 0.0));
                sim.probes
                    .push(Probe::NodeVoltage { port: CMD_MEAS_PROBE.into(), node: link.sim_node.clone() });
                hut.elements
                    .push(Element::voltage_port("__amp_src", &link.hut_node, &hut.ground, CMD_PORT, 0.0));
                hut.probes
                    .push(Probe::BranchCurrent { port: SRC_CURRENT_PROBE.into(), element: "__amp_src".into() });
            }
            InterfaceAlgorithm::Pcd { zab } => {
                // Grid side: coupling node -- Zab -- current sink.
                let sink_node = append_series_impedance(&mut sim, &link.sim_node, zab, "zab_s");
                sim.elements
                    .push(Element::current_port("__fb_src", &sink_node, &sim.ground, FB_PORT, 0.0));
                sim.probes
                    .push(Probe::NodeVoltage { port: CMD_MEAS_PROBE.into(), node: link.sim_node.clone() });
                // Hardware side: amplifier source -- Zab -- coupling node.
                if zab.is_zero() {
                    hut.elements
                        .push(Element::voltage_port("__amp_src", &link.hut_node, &hut.ground, CMD_PORT, 0.0));
                } else {
                    let mut chain = Netlist::new(&hut.ground, dt);
                    let far = append_series_impedance(&mut chain, "__amp_node", zab, "zab_h");
                    // rename so the chain ends exactly at the coupling node
                    for mut el in chain.elements {
                        if el.a == far {
                            el.a = link.hut_node.clone();
                        }
                        if el.b == far {
                            el.b = link.hut_node.clone();
                        }
                        hut.elements.push(el);
                    }
                    hut.elements
                        .push(Element::voltage_port("__amp_src", "__amp_node", &hut.ground, CMD_PORT, 0.0));
                }
                hut.probes
                    .push(Probe::BranchCurrent { port: SRC_CURRENT_PROBE.into(), element: "__amp_src".into() });
            }
            InterfaceAlgorithm::Dim { z_star } => {
                sim.elements
                    .push(Element::current_port("__fb_src", &link.sim_node, &sim.ground, FB_PORT, 0.0));
                sim.probes
                    .push(Probe::NodeVoltage { port: CMD_MEAS_PROBE.into(), node: link.sim_node.clone() });
                if !z_star.is_zero() {
                    dim = true;
                    let far = append_series_impedance(&mut sim, &link.sim_node, z_star, "zst");
                    sim.elements
                        .push(Element::voltage_port("__vb_src", &far, &sim.ground, VB_PORT, 0.0));
                }
                hut.elements
                    .push(Element::voltage_port("__amp_src", &link.hut_node, &hut.ground, CMD_PORT, 0.0));
                hut.probes
                    .push(Probe::BranchCurrent { port: SRC_CURRENT_PROBE.into(), element: "__amp_src".into() });
            }
            InterfaceAlgorithm::ItmCurrent => {
                sim.elements
                    .push(Element::voltage_port("__fb_src", &link.sim_node, &sim.ground, FB_PORT, 0.0));
                sim.probes
                    .push(Probe::BranchCurrent { port: SRC_CURRENT_PROBE.into(), element: "__fb_src".into() });
                // source oriented ground -> node so a positive command
                // injects current into the hardware coupling node
                hut.elements
                    .push(Element::current_port("__amp_src", &hut.ground, &link.hut_node, CMD_PORT, 0.0));
                hut.probes
                    .push(Probe::NodeVoltage { port: HUT_VOLT_PROBE.into(), node: link.hut_node.clone() });
            }
        }

        let sim_model = build_state_space(&sim)?;
        let hut_model = build_state_space(&hut)?;
        let amplifier = Amplifier::new(link.amplifier.clone(), dt);
        let compensator = Compensator::new(&link.compensator, dt)?;
        let sensor_steps = (link.sensor_delay.as_secs_f64() / dt.as_secs_f64()).round() as usize;

        let zero_delay = match link.exchange {
            ExchangeTiming::OneStepDelay => false,
            ExchangeTiming::ZeroDelay => {
                if !matches!(link.algorithm, InterfaceAlgorithm::ItmVoltage) {
                    return Err(PhilError::Config(
                        "zero-delay exchange is only supported for the voltage-type ITM interface".into(),
                    ));
                }
                if amplifier.affine().is_none() {
                    return Err(PhilError::Config(
                        "zero-delay exchange needs an amplifier with no transport delay and no limits"
                            .into(),
                    ));
                }
                if sensor_steps != 0 || !matches!(link.compensator, CompensatorConfig::None) {
                    return Err(PhilError::Config(
                        "zero-delay exchange supports neither sensor delay nor a compensator".into(),
                    ));
                }
                true
            }
        };

        let (sens_sim, sens_hut) = if zero_delay {
            let s = sim_model
                .step_sensitivity(CMD_MEAS_PROBE, FB_PORT)
                .expect("interface ports exist by construction");
            let h = -hut_model
                .step_sensitivity(SRC_CURRENT_PROBE, CMD_PORT)
                .expect("interface ports exist by construction");
            (s, h)
        } else {
            (0.0, 0.0)
        };

        let sim_ext_inputs: Vec<PortSpec> = sim_model
            .input_ports()
            .iter()
            .filter(|p| !p.name.starts_with("__"))
            .cloned()
            .collect();
        let hut_ext_inputs: Vec<PortSpec> = hut_model
            .input_ports()
            .iter()
            .filter(|p| !p.name.starts_with("__"))
            .cloned()
            .collect();
        for sp in &sim_ext_inputs {
            if hut_ext_inputs.iter().any(|hp| hp.name == sp.name) {
                return Err(PhilError::Config(format!(
                    "input port `{}` is declared on both sides",
                    sp.name
                )));
            }
        }

        let mut output_ports = Vec::new();
        if voltage_type {
            output_ports.push(PortSpec::new(CMD_MEAS_PROBE, Unit::Volt));
            output_ports.push(PortSpec::new("v_amp", Unit::Volt));
            output_ports.push(PortSpec::new("i_hut", Unit::Ampere));
            output_ports.push(PortSpec::new("i_fb", Unit::Ampere));
        } else {
            output_ports.push(PortSpec::new("i_cmd", Unit::Ampere));
            output_ports.push(PortSpec::new("i_amp", Unit::Ampere));
            output_ports.push(PortSpec::new(HUT_VOLT_PROBE, Unit::Volt));
            output_ports.push(PortSpec::new("v_fb", Unit::Volt));
        }
        for probe in sim_netlist.probes.iter().chain(hut_netlist.probes.iter()) {
            output_ports.push(PortSpec::new(probe.port(), probe.unit()));
        }

        let mut outputs: PortValues = output_ports.iter().map(|p| (p.name.clone(), 0.0)).collect();
        // initial values of user probes come from the zero-state circuits
        for (name, value) in sim_model.outputs_now().iter().chain(hut_model.outputs_now().iter()) {
            if outputs.contains_key(name) && !name.starts_with("__") {
                outputs.insert(name.clone(), *value);
            }
        }

        Ok(Self {
            sim: sim_model,
            hut: hut_model,
            amplifier,
            sensor: VecDeque::from(vec![0.0; sensor_steps]),
            compensator,
            voltage_type,
            dim,
            zero_delay,
            cmd_applied: 0.0,
            fb_applied: 0.0,
            vb_applied: 0.0,
            sens_sim,
            sens_hut,
            sim_ext_inputs,
            hut_ext_inputs,
            output_ports,
            outputs,
            last_sample: LoopSample {
                t: SimInstant::ZERO,
                v_ref: 0.0,
                v_amp: 0.0,
                i_hut: 0.0,
                i_fb: 0.0,
            },
            dt,
            steps: 0,
        })
    }

    pub fn dt(&self) -> SimDuration {
        self.dt
    }

    pub fn time(&self) -> SimInstant {
        SimInstant::ZERO + self.dt * self.steps
    }

    pub fn input_ports(&self) -> Vec<PortSpec> {
        self.sim_ext_inputs.iter().chain(self.hut_ext_inputs.iter()).cloned().collect()
    }

    pub fn output_ports(&self) -> &[PortSpec] {
        &self.output_ports
    }

    /// Output map as of the latest step.
    pub fn outputs(&self) -> &PortValues {
        &self.outputs
    }

    pub fn last_sample(&self) -> LoopSample {
        self.last_sample
    }

    /// True while the compensator's warm-up window has not filled.
    pub fn compensator_warming_up(&self) -> bool {
        self.compensator.warming_up()
    }

    fn side_inputs(&self, external: &PortValues, sim_side: bool) -> Result<PortValues, PhilError> {
        let specs = if sim_side { &self.sim_ext_inputs } else { &self.hut_ext_inputs };
        let mut map = PortValues::new();
        for spec in specs {
            let value = external
                .get(&spec.name)
                .copied()
                .ok_or_else(|| PhilError::Config(format!("missing loop input `{}`", spec.name)))?;
            map.insert(spec.name.clone(), value);
        }
        Ok(map)
    }

    fn push_sensor(&mut self, sample: f64) -> f64 {
        if self.sensor.is_empty() {
            sample
        } else {
            self.sensor.push_back(sample);
            self.sensor.pop_front().unwrap()
        }
    }

    fn collect_outputs(&mut self, y_sim: &PortValues, y_hut: &PortValues, sample: LoopSample) {
        let standard: [(&str, f64); 4] = if self.voltage_type {
            [(CMD_MEAS_PROBE, sample.v_ref), ("v_amp", sample.v_amp), ("i_hut", sample.i_hut), ("i_fb", sample.i_fb)]
        } else {
            [("i_cmd", sample.v_ref), ("i_amp", sample.v_amp), (HUT_VOLT_PROBE, sample.i_hut), ("v_fb", sample.i_fb)]
        };
        for (name, value) in standard {
            self.outputs.insert(name.to_string(), value);
        }
        for (name, value) in y_sim.iter().chain(y_hut.iter()) {
            if !name.starts_with("__") && self.outputs.contains_key(name) {
                self.outputs.insert(name.clone(), *value);
            }
        }
        self.last_sample = sample;
    }

    /// Advances both circuits one native step and records a loop sample.
    pub fn step(&mut self, external: &PortValues) -> Result<LoopSample, PhilError> {
        if self.zero_delay {
            return self.step_zero_delay(external);
        }
        let mut sim_inputs = self.side_inputs(external, true)?;
        sim_inputs.insert(FB_PORT.into(), self.fb_applied);
        if self.dim {
            sim_inputs.insert(VB_PORT.into(), self.vb_applied);
        }
        let mut hut_inputs = self.side_inputs(external, false)?;
        hut_inputs.insert(CMD_PORT.into(), self.cmd_applied);

        let y_sim = self.sim.step(&sim_inputs)?;
        let y_hut = self.hut.step(&hut_inputs)?;

        let (command_measured, hut_measured) = if self.voltage_type {
            (y_sim[CMD_MEAS_PROBE], -y_hut[SRC_CURRENT_PROBE])
        } else {
            (y_sim[SRC_CURRENT_PROBE], y_hut[HUT_VOLT_PROBE])
        };
        let cmd_next = self.amplifier.step(command_measured);
        let sensed = self.push_sensor(hut_measured);
        let fb_next = self.compensator.step(sensed);

        if self.dim {
            // hardware terminal voltage during the step just taken
            self.vb_applied = self.cmd_applied;
        }
        self.cmd_applied = cmd_next;
        self.fb_applied = fb_next;
        self.steps += 1;

        let sample = LoopSample {
            t: self.time(),
            v_ref: command_measured,
            v_amp: cmd_next,
            i_hut: hut_measured,
            i_fb: fb_next,
        };
        self.collect_outputs(&y_sim, &y_hut, sample);
        Ok(sample)
    }

    /// Delay-free step: solves the affine interface relations
    /// `v = v0 + Gs i`, `i = i0 + Gh v_amp`, `v_amp = a v + c` exactly,
    /// then commits both circuits with the consistent values.
    fn step_zero_delay(&mut self, external: &PortValues) -> Result<LoopSample, PhilError> {
        let mut sim_inputs = self.side_inputs(external, true)?;
        sim_inputs.insert(FB_PORT.into(), 0.0);
        let v0 = self.sim.trial_step(&sim_inputs)?[CMD_MEAS_PROBE];
        let mut hut_inputs = self.side_inputs(external, false)?;
        hut_inputs.insert(CMD_PORT.into(), 0.0);
        let i0 = -self.hut.trial_step(&hut_inputs)?[SRC_CURRENT_PROBE];
        let (a_amp, c_amp) = self.amplifier.affine().expect("checked at construction");

        let denom = 1.0 - self.sens_hut * a_amp * self.sens_sim;
        if denom.abs() < 1e-12 {
            return Err(PhilError::Config(
                "delay-free interface is algebraically singular for this circuit pair".into(),
            ));
        }
        let i_star = (i0 + self.sens_hut * (a_amp * v0 + c_amp)) / denom;

        sim_inputs.insert(FB_PORT.into(), i_star);
        let y_sim = self.sim.step(&sim_inputs)?;
        let v_star = y_sim[CMD_MEAS_PROBE];
        let cmd = self.amplifier.step(v_star);
        hut_inputs.insert(CMD_PORT.into(), cmd);
        let y_hut = self.hut.step(&hut_inputs)?;
        let i_hut = -y_hut[SRC_CURRENT_PROBE];

        self.cmd_applied = cmd;
        self.fb_applied = i_star;
        self.steps += 1;
        let sample =
            LoopSample { t: self.time(), v_ref: v_star, v_amp: cmd, i_hut, i_fb: i_star };
        self.collect_outputs(&y_sim, &y_hut, sample);
        Ok(sample)
    }
}
