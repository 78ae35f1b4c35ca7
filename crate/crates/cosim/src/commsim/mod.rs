//! Discrete-event network simulation: event scheduler, lossy/jittery links
//! and the network federate used both as the ICT-domain simulator and as
//! the remote-coupling link model.

mod federate;
mod link;
mod scheduler;

pub use federate::{NetworkFederate, Traffic};
pub use link::{
    derive_link_seed, stamp_and_check, Freshness, InFlight, Jitter, Link, LinkHub, LinkModel,
    TransmitOutcome,
};
pub use scheduler::{EventKind, EventPayload, EventScheduler, NetEvent, RunError, ScheduledEvent};

use thiserror::Error;

use crate::time::SimInstant;

#[derive(Debug, Error)]
pub enum CommsimError {
    #[error("event at {timestamp} lies in the past (scheduler time {now})")]
    PastEvent { timestamp: SimInstant, now: SimInstant },
    #[error("unknown link `{0}`")]
    UnknownLink(String),
}
