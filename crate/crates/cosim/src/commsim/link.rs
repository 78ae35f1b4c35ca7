//! Link models: latency, jitter, packet loss and command freshness.
//!
//! Every link owns an independent seeded generator derived from the
//! scenario seed and the link id, so adding or removing a link never
//! perturbs the draws of any other link.

use std::collections::{BTreeMap, VecDeque};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Distribution;

use crate::time::{SimDuration, SimInstant};

use super::CommsimError;

/// Additive jitter on top of the base latency. Normal jitter is truncated
/// at zero so delivered delay never falls below the base latency.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Jitter {
    None,
    Uniform { lo: SimDuration, hi: SimDuration },
    Normal { mean: SimDuration, stddev: SimDuration },
}

/// Static description of one communication link.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkModel {
    pub base_latency: SimDuration,
    pub jitter: Jitter,
    pub loss_probability: f64,
    pub seed: u64,
    /// FIFO channel: a jitter draw that would overtake the previous packet
    /// is clamped to its arrival time. Disable to allow reordering.
    pub in_order: bool,
}

impl LinkModel {
    pub fn new(base_latency: SimDuration, jitter: Jitter, loss_probability: f64, seed: u64) -> Self {
        assert!(
            (0.0..=1.0).contains(&loss_probability),
            "loss probability must lie in [0, 1]"
        );
        Self { base_latency, jitter, loss_probability, seed, in_order: true }
    }
}

/// Result of pushing one message into a link.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransmitOutcome {
    Delivered(SimInstant),
    Dropped,
}

/// A live link: model plus generator state and FIFO bookkeeping.
#[derive(Debug, Clone)]
pub struct Link {
    model: LinkModel,
    rng: ChaCha8Rng,
    last_arrival: Option<SimInstant>,
}

impl Link {
    pub fn new(model: LinkModel) -> Self {
        let rng = ChaCha8Rng::seed_from_u64(model.seed);
        Self { model, rng, last_arrival: None }
    }

    pub fn model(&self) -> &LinkModel {
        &self.model
    }

    /// Sends one message at `t_send`. Draws loss first, then jitter;
    /// successive calls consume the generator deterministically.
    pub fn transmit(&mut self, t_send: SimInstant) -> TransmitOutcome {
        if self.rng.random::<f64>() < self.model.loss_probability {
            return TransmitOutcome::Dropped;
        }
        let jitter = match self.model.jitter {
            Jitter::None => SimDuration::ZERO,
            Jitter::Uniform { lo, hi } => {
                let span = hi.as_nanos().saturating_sub(lo.as_nanos()) as f64;
                let draw = self.rng.random::<f64>() * span;
                lo + SimDuration::from_nanos(draw.round() as u64)
            }
            Jitter::Normal { mean, stddev } => {
                let dist = rand_distr::Normal::new(mean.as_secs_f64(), stddev.as_secs_f64())
                    .expect("stddev is finite and non-negative");
                let draw = dist.sample(&mut self.rng).max(0.0);
                SimDuration::from_secs_f64(draw)
            }
        };
        let mut arrival = t_send + self.model.base_latency + jitter;
        if self.model.in_order {
            if let Some(last) = self.last_arrival {
                arrival = arrival.max(last);
            }
        }
        self.last_arrival = Some(arrival);
        TransmitOutcome::Delivered(arrival)
    }
}

/// Freshness verdict of a command at application time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Freshness {
    Fresh,
    Stale,
}

/// Checks a command's age against its freshness budget: stale when
/// `t_apply - origination > max_age` (strictly).
pub fn stamp_and_check(origination: SimInstant, t_apply: SimInstant, max_age: SimDuration) -> Freshness {
    let age = t_apply.checked_sub(origination).unwrap_or(SimDuration::ZERO);
    if age > max_age {
        Freshness::Stale
    } else {
        Freshness::Fresh
    }
}

/// Derives a link's generator seed from the scenario seed and the link id
/// (FNV-1a over the seed bytes then the id bytes). Stable across runs and
/// platforms; documented so experiments can be reproduced in isolation.
pub fn derive_link_seed(scenario_seed: u64, link_id: &str) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut hash = OFFSET;
    for byte in scenario_seed.to_le_bytes().into_iter().chain(link_id.bytes()) {
        hash ^= byte as u64;
        hash = hash.wrapping_mul(PRIME);
    }
    hash
}

/// One value in flight on a link.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InFlight {
    pub arrival: SimInstant,
    pub sent: SimInstant,
    pub value: f64,
    /// Index of the coupling this value belongs to.
    pub tag: usize,
}

/// Set of live links addressed by id, with per-link in-flight queues.
/// Used by the orchestrator to route linked couplings.
#[derive(Debug, Default)]
pub struct LinkHub {
    links: BTreeMap<String, Link>,
    in_flight: BTreeMap<String, VecDeque<InFlight>>,
    drops: Vec<(SimInstant, String)>,
}

impl LinkHub {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, id: &str, link: Link) {
        self.links.insert(id.to_string(), link);
        self.in_flight.insert(id.to_string(), VecDeque::new());
    }

    pub fn contains(&self, id: &str) -> bool {
        self.links.contains_key(id)
    }

    /// Sends a tagged value; lost packets are recorded, delivered ones join
    /// the in-flight queue (kept sorted by arrival, which FIFO clamping
    /// already guarantees for in-order links).
    pub fn send(&mut self, id: &str, t_send: SimInstant, value: f64, tag: usize) -> Result<(), CommsimError> {
        let link = self
            .links
            .get_mut(id)
            .ok_or_else(|| CommsimError::UnknownLink(id.to_string()))?;
        match link.transmit(t_send) {
            TransmitOutcome::Dropped => self.drops.push((t_send, id.to_string())),
            TransmitOutcome::Delivered(arrival) => {
                let queue = self.in_flight.get_mut(id).expect("queue exists for link");
                let idx = queue.partition_point(|p| p.arrival <= arrival);
                queue.insert(idx, InFlight { arrival, sent: t_send, value, tag });
            }
        }
        Ok(())
    }

    /// Drains every in-flight value with arrival `<= t`, across all links,
    /// ordered by (arrival, link id).
    pub fn poll(&mut self, t: SimInstant) -> Vec<InFlight> {
        let mut out = Vec::new();
        for queue in self.in_flight.values_mut() {
            while queue.front().is_some_and(|p| p.arrival <= t) {
                out.push(queue.pop_front().unwrap());
            }
        }
        out.sort_by_key(|p| (p.arrival, p.tag));
        out
    }

    /// Lost packets recorded so far (send time, link id).
    pub fn drops(&self) -> &[(SimInstant, String)] {
        &self.drops
    }

    /// Drains the lost-packet log.
    pub fn take_drops(&mut self) -> Vec<(SimInstant, String)> {
        std::mem::take(&mut self.drops)
    }
}
