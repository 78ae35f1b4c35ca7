//! Fixed-step continuous-time solver for small linear circuits.
//!
//! Provides the simulated power system, the virtual DRTS side of the PHIL
//! loop, threshold event detection and the monolithic reference solver.

mod federate;
mod model;
mod monolithic;
mod netlist;
mod threshold;

pub use federate::{CircuitFederate, CircuitStepper};
pub use model::{build_state_space, CircuitModel};
pub use monolithic::{merge_netlists, solve_monolithic, IFACE_CURRENT, IFACE_VOLTAGE};
pub use netlist::{Element, ElementKind, Netlist, Probe, SourceProfile};
pub use threshold::{Crossing, Direction, ThresholdDetector};

use crate::time::SimInstant;
use thiserror::Error;

/// Default native step: 50 µs (20 kHz sampling), configurable per scenario.
pub const DEFAULT_DT_NANOS: u64 = 50_000;

#[derive(Debug, Error)]
pub enum PowersimError {
    #[error("singular topology: {0}")]
    SingularTopology(String),
    #[error("unsupported element: {0}")]
    UnsupportedElement(String),
    #[error("invalid netlist: {0}")]
    InvalidNetlist(String),
    #[error("required input port `{0}` is absent")]
    MissingInput(String),
    #[error("state diverged to a non-finite value at {t}")]
    NonFinite { t: SimInstant },
}
