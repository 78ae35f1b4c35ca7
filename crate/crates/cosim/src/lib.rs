//! Deterministic co-simulation of power circuits, communication networks
//! and a fully virtual power-hardware-in-the-loop (PHIL) interface.
//!
//! The crate couples a fixed-step continuous circuit solver (`powersim`)
//! with a discrete-event network simulator (`commsim`) under four
//! synchronization strategies (`kernel`), closes a virtual PHIL loop with
//! selectable interface algorithms (`phil`), compensates loop delay
//! (`compensation`), paces runs against the wall clock (`pacing`) and
//! drives everything from declarative scenario files (`harness`).
//!
//! Every run is reproducible: simulation time is integer nanoseconds, all
//! randomness flows from per-link seeded generators, and with pacing
//! disabled two runs of the same scenario produce byte-identical outputs.

pub mod commsim;
pub mod compensation;
pub mod harness;
pub mod kernel;
pub mod pacing;
pub mod phil;
pub mod port;
pub mod powersim;
pub mod time;
pub mod trace;

pub use port::{PortSpec, PortValues, Unit};
pub use time::{SimDuration, SimInstant};
pub use trace::{Column, Trace, TraceEvent};
