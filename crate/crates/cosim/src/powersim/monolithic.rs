//! Monolithic reference solution for a split scenario.
//!
//! Merges the simulated-grid netlist and the virtual hardware netlist into
//! one circuit with an ideal connection at the coupling node (no amplifier,
//! no delay) and solves it at the native step. The resulting trace is the
//! accuracy oracle every interface algorithm is measured against.

use crate::port::PortValues;
use crate::time::SimDuration;
use crate::trace::{Column, Trace};

use super::model::build_state_space;
use super::netlist::{Element, ElementKind, Netlist, Probe};
use super::PowersimError;

/// Interface current probe name in the merged circuit.
pub const IFACE_CURRENT: &str = "i_hut";
/// Coupling node voltage probe name in the merged circuit.
pub const IFACE_VOLTAGE: &str = "v_pcc";

const IFACE_NODE: &str = "__iface";
const AMMETER: &str = "__ammeter";

/// Merges the two sides at the coupling node.
///
/// Hardware-side nodes are prefixed `hut.` except the coupling node (joined
/// through a zero-volt ammeter branch) and the ground (unified with the
/// grid-side ground). The ammeter current is positive when flowing from the
/// grid side into the hardware side.
pub fn merge_netlists(
    sim: &Netlist,
    hut: &Netlist,
    sim_node: &str,
    hut_node: &str,
) -> Result<Netlist, PowersimError> {
    sim.validate()?;
    hut.validate()?;
    let map_hut_node = |name: &str| -> String {
        if name == hut.ground {
            sim.ground.clone()
        } else if name == hut_node {
            IFACE_NODE.to_string()
        } else {
            format!("hut.{name}")
        }
    };
    if hut_node == hut.ground {
        return Err(PowersimError::InvalidNetlist(
            "hardware coupling node must not be the ground".into(),
        ));
    }

    let mut merged = Netlist::new(&sim.ground, sim.dt);
    merged.elements.extend(sim.elements.iter().cloned());
    for el in &hut.elements {
        let mut el = el.clone();
        el.name = format!("hut.{}", el.name);
        el.a = map_hut_node(&el.a);
        el.b = map_hut_node(&el.b);
        // Port-driven sources on the hardware side keep their port names so
        // scenario commands reach the merged circuit unchanged.
        merged.elements.push(el);
    }
    merged.elements.push(Element {
        name: AMMETER.into(),
        kind: ElementKind::VoltageSource {
            profile: super::netlist::SourceProfile::Dc(0.0),
        },
        a: sim_node.into(),
        b: IFACE_NODE.into(),
    });

    merged.probes.push(Probe::NodeVoltage { port: IFACE_VOLTAGE.into(), node: sim_node.into() });
    merged.probes.push(Probe::BranchCurrent { port: IFACE_CURRENT.into(), element: AMMETER.into() });
    for probe in &sim.probes {
        if probe.port() == IFACE_VOLTAGE || probe.port() == IFACE_CURRENT {
            continue;
        }
        merged.probes.push(probe.clone());
    }
    for probe in &hut.probes {
        let remapped = match probe {
            Probe::NodeVoltage { port, node } => {
                Probe::NodeVoltage { port: port.clone(), node: map_hut_node(node) }
            }
            Probe::BranchCurrent { port, element } => {
                Probe::BranchCurrent { port: port.clone(), element: format!("hut.{element}") }
            }
        };
        if merged.probes.iter().any(|p| p.port() == remapped.port()) {
            return Err(PowersimError::InvalidNetlist(format!(
                "probe port `{}` is declared on both sides of the split",
                remapped.port()
            )));
        }
        merged.probes.push(remapped);
    }
    merged.validate()?;
    Ok(merged)
}

/// Steps a merged netlist from zero to `duration` and records every probe.
///
/// Port-driven sources hold their declared initial values unless `inputs`
/// supplies a schedule; the harness passes the same command sequence the
/// co-simulated run saw so both traces are comparable.
pub fn solve_monolithic(
    merged: &Netlist,
    duration: SimDuration,
    mut inputs: impl FnMut(crate::time::SimInstant) -> PortValues,
) -> Result<Trace, PowersimError> {
    let mut model = build_state_space(merged)?;
    if !duration.is_multiple_of(merged.dt) {
        return Err(PowersimError::InvalidNetlist(format!(
            "duration {duration} is not a multiple of the native step {}",
            merged.dt
        )));
    }
    let steps = duration.checked_div(merged.dt).unwrap();
    let columns = model
        .output_ports()
        .iter()
        .map(|p| Column { name: p.name.clone(), unit: p.unit })
        .collect();
    let mut trace = Trace::new(columns);
    trace.push_row(crate::time::SimInstant::ZERO, model.outputs_ordered().to_vec());
    for _ in 0..steps {
        let t_next = model.time() + merged.dt;
        let port_inputs = inputs(t_next);
        model.step(&port_inputs)?;
        trace.push_row(model.time(), model.outputs_ordered().to_vec());
    }
    Ok(trace)
}
