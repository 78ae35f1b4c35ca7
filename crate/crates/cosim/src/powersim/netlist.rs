//! Netlist description of a small linear circuit.
//!
//! Supported elements: resistors, inductors, capacitors, ideal voltage
//! sources and current sources. Source values follow either a time profile
//! (DC or sinusoid) or an input port whose value is delivered on every step.
//! Branch current direction is always measured from terminal `a` to
//! terminal `b` through the element.

use crate::port::{PortSpec, Unit};
use crate::time::SimDuration;

use super::PowersimError;

/// Value profile of an ideal source.
#[derive(Debug, Clone, PartialEq)]
pub enum SourceProfile {
    Dc(f64),
    /// `amplitude * sin(omega * t + phase)`, `omega` in rad/s.
    Sine { amplitude: f64, omega: f64, phase: f64 },
    /// Driven by a named input port; `initial` is the value before the
    /// first delivery.
    Port { name: String, initial: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub enum ElementKind {
    Resistor { ohms: f64 },
    Inductor { henries: f64 },
    Capacitor { farads: f64 },
    VoltageSource { profile: SourceProfile },
    CurrentSource { profile: SourceProfile },
}

/// A two-terminal element between nodes `a` and `b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Element {
    pub name: String,
    pub kind: ElementKind,
    pub a: String,
    pub b: String,
}

impl Element {
    pub fn resistor(name: &str, a: &str, b: &str, ohms: f64) -> Self {
        Self { name: name.into(), kind: ElementKind::Resistor { ohms }, a: a.into(), b: b.into() }
    }

    pub fn inductor(name: &str, a: &str, b: &str, henries: f64) -> Self {
        Self { name: name.into(), kind: ElementKind::Inductor { henries }, a: a.into(), b: b.into() }
    }

    pub fn capacitor(name: &str, a: &str, b: &str, farads: f64) -> Self {
        Self { name: name.into(), kind: ElementKind::Capacitor { farads }, a: a.into(), b: b.into() }
    }

    pub fn voltage_dc(name: &str, a: &str, b: &str, volts: f64) -> Self {
        Self {
            name: name.into(),
            kind: ElementKind::VoltageSource { profile: SourceProfile::Dc(volts) },
            a: a.into(),
            b: b.into(),
        }
    }

    pub fn voltage_sine(name: &str, a: &str, b: &str, amplitude: f64, omega: f64, phase: f64) -> Self {
        Self {
            name: name.into(),
            kind: ElementKind::VoltageSource { profile: SourceProfile::Sine { amplitude, omega, phase } },
            a: a.into(),
            b: b.into(),
        }
    }

    pub fn voltage_port(name: &str, a: &str, b: &str, port: &str, initial: f64) -> Self {
        Self {
            name: name.into(),
            kind: ElementKind::VoltageSource {
                profile: SourceProfile::Port { name: port.into(), initial },
            },
            a: a.into(),
            b: b.into(),
        }
    }

    pub fn current_port(name: &str, a: &str, b: &str, port: &str, initial: f64) -> Self {
        Self {
            name: name.into(),
            kind: ElementKind::CurrentSource {
                profile: SourceProfile::Port { name: port.into(), initial },
            },
            a: a.into(),
            b: b.into(),
        }
    }

    pub fn profile(&self) -> Option<&SourceProfile> {
        match &self.kind {
            ElementKind::VoltageSource { profile } | ElementKind::CurrentSource { profile } => Some(profile),
            _ => None,
        }
    }
}

/// Declared observation on the circuit, exported as an output port.
#[derive(Debug, Clone, PartialEq)]
pub enum Probe {
    NodeVoltage { port: String, node: String },
    BranchCurrent { port: String, element: String },
}

impl Probe {
    pub fn port(&self) -> &str {
        match self {
            Probe::NodeVoltage { port, .. } | Probe::BranchCurrent { port, .. } => port,
        }
    }

    pub fn unit(&self) -> Unit {
        match self {
            Probe::NodeVoltage { .. } => Unit::Volt,
            Probe::BranchCurrent { .. } => Unit::Ampere,
        }
    }
}

/// A complete circuit: elements, ground reference, probes and native step.
#[derive(Debug, Clone, PartialEq)]
pub struct Netlist {
    pub elements: Vec<Element>,
    pub ground: String,
    pub probes: Vec<Probe>,
    pub dt: SimDuration,
}

impl Netlist {
    pub fn new(ground: &str, dt: SimDuration) -> Self {
        Self { elements: Vec::new(), ground: ground.into(), probes: Vec::new(), dt }
    }

    pub fn with_element(mut self, element: Element) -> Self {
        self.elements.push(element);
        self
    }

    pub fn with_probe(mut self, probe: Probe) -> Self {
        self.probes.push(probe);
        self
    }

    pub fn probe_node(self, port: &str, node: &str) -> Self {
        self.with_probe(Probe::NodeVoltage { port: port.into(), node: node.into() })
    }

    pub fn probe_branch(self, port: &str, element: &str) -> Self {
        self.with_probe(Probe::BranchCurrent { port: port.into(), element: element.into() })
    }

    pub fn element(&self, name: &str) -> Option<&Element> {
        self.elements.iter().find(|e| e.name == name)
    }

    /// Input ports implied by port-driven sources, in element order.
    pub fn input_ports(&self) -> Vec<PortSpec> {
        let mut ports = Vec::new();
        for el in &self.elements {
            if let Some(SourceProfile::Port { name, initial }) = el.profile() {
                let unit = match el.kind {
                    ElementKind::VoltageSource { .. } => Unit::Volt,
                    _ => Unit::Ampere,
                };
                ports.push(PortSpec::new(name.clone(), unit).with_initial(*initial));
            }
        }
        ports
    }

    /// Structural checks that do not need matrix assembly.
    pub fn validate(&self) -> Result<(), PowersimError> {
        if self.elements.is_empty() {
            return Err(PowersimError::InvalidNetlist("netlist has no elements".into()));
        }
        if self.dt.is_zero() {
            return Err(PowersimError::InvalidNetlist("native step dt must be > 0".into()));
        }
        let mut names = std::collections::BTreeSet::new();
        let mut input_ports: std::collections::BTreeSet<&str> = Default::default();
        for el in &self.elements {
            if !names.insert(el.name.as_str()) {
                return Err(PowersimError::InvalidNetlist(format!(
                    "duplicate element name `{}`",
                    el.name
                )));
            }
            if el.a == el.b {
                return Err(PowersimError::UnsupportedElement(format!(
                    "element `{}` connects node `{}` to itself",
                    el.name, el.a
                )));
            }
            match &el.kind {
                ElementKind::Resistor { ohms } => {
                    if !(*ohms >= 0.0) {
                        return Err(PowersimError::InvalidNetlist(format!(
                            "resistor `{}` must have R >= 0",
                            el.name
                        )));
                    }
                }
                ElementKind::Inductor { henries } => {
                    if !(*henries > 0.0) {
                        return Err(PowersimError::InvalidNetlist(format!(
                            "inductor `{}` must have L > 0",
                            el.name
                        )));
                    }
                }
                ElementKind::Capacitor { farads } => {
                    if !(*farads > 0.0) {
                        return Err(PowersimError::InvalidNetlist(format!(
                            "capacitor `{}` must have C > 0",
                            el.name
                        )));
                    }
                }
                _ => {}
            }
            if let Some(SourceProfile::Port { name, .. }) = el.profile() {
                if !input_ports.insert(name) {
                    return Err(PowersimError::InvalidNetlist(format!(
                        "input port `{name}` drives more than one source"
                    )));
                }
            }
        }
        // Ground must appear in the element graph, and every node must be
        // reachable from it; anything else is a floating subcircuit.
        let mut nodes: std::collections::BTreeMap<&str, usize> = Default::default();
        for el in &self.elements {
            let n = nodes.len();
            nodes.entry(el.a.as_str()).or_insert(n);
            let n = nodes.len();
            nodes.entry(el.b.as_str()).or_insert(n);
        }
        let Some(&ground_idx) = nodes.get(self.ground.as_str()) else {
            return Err(PowersimError::SingularTopology(format!(
                "ground node `{}` is not connected to any element",
                self.ground
            )));
        };
        let mut parent: Vec<usize> = (0..nodes.len()).collect();
        fn find(parent: &mut Vec<usize>, i: usize) -> usize {
            if parent[i] != i {
                let root = find(parent, parent[i]);
                parent[i] = root;
            }
            parent[i]
        }
        for el in &self.elements {
            let a = nodes[el.a.as_str()];
            let b = nodes[el.b.as_str()];
            let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
            parent[ra] = rb;
        }
        let ground_root = find(&mut parent, ground_idx);
        for (name, &idx) in &nodes {
            if find(&mut parent, idx) != ground_root {
                return Err(PowersimError::SingularTopology(format!(
                    "node `{name}` is not connected to ground"
                )));
            }
        }
        // Probe references must resolve.
        let mut probe_ports = std::collections::BTreeSet::new();
        for probe in &self.probes {
            if !probe_ports.insert(probe.port()) {
                return Err(PowersimError::InvalidNetlist(format!(
                    "duplicate probe port `{}`",
                    probe.port()
                )));
            }
            match probe {
                Probe::NodeVoltage { node, .. } => {
                    if !nodes.contains_key(node.as_str()) {
                        return Err(PowersimError::InvalidNetlist(format!(
                            "probe references unknown node `{node}`"
                        )));
                    }
                }
                Probe::BranchCurrent { element, .. } => {
                    if self.element(element).is_none() {
                        return Err(PowersimError::InvalidNetlist(format!(
                            "probe references unknown element `{element}`"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}
