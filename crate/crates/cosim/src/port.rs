//! Named scalar signal ports exchanged between federates.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

/// Physical unit carried by a port. Couplings require matching units.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Unit {
    #[serde(rename = "V")]
    Volt,
    #[serde(rename = "A")]
    Ampere,
    #[serde(rename = "-")]
    Dimensionless,
}

impl fmt::Display for Unit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Unit::Volt => write!(f, "V"),
            Unit::Ampere => write!(f, "A"),
            Unit::Dimensionless => write!(f, "-"),
        }
    }
}

/// Declaration of one scalar channel on a federate.
#[derive(Debug, Clone, PartialEq)]
pub struct PortSpec {
    pub name: String,
    pub unit: Unit,
    /// Value a sink port holds before anything has been delivered to it.
    pub initial: f64,
}

impl PortSpec {
    pub fn new(name: impl Into<String>, unit: Unit) -> Self {
        Self { name: name.into(), unit, initial: 0.0 }
    }

    pub fn with_initial(mut self, value: f64) -> Self {
        self.initial = value;
        self
    }
}

/// Port-value map exchanged on every advance. Ordered so that iteration,
/// hashing and serialization are deterministic.
pub type PortValues = BTreeMap<String, f64>;

/// Builds a `PortValues` from pairs; convenience for tests and adapters.
pub fn port_values<const N: usize>(pairs: [(&str, f64); N]) -> PortValues {
    pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}
