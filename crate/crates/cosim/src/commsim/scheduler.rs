//! Discrete-event scheduler: timestamped events processed in
//! (timestamp, insertion sequence) order.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use crate::port::PortValues;
use crate::time::SimInstant;

use super::CommsimError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    MessageArrival,
    Timer,
    Command,
}

/// Message content: port values plus optional endpoint node ids.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EventPayload {
    pub values: PortValues,
    pub source: Option<String>,
    pub dest: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetEvent {
    pub timestamp: SimInstant,
    pub kind: EventKind,
    pub payload: EventPayload,
}

impl NetEvent {
    pub fn timer(timestamp: SimInstant) -> Self {
        Self { timestamp, kind: EventKind::Timer, payload: EventPayload::default() }
    }

    pub fn command(timestamp: SimInstant, values: PortValues) -> Self {
        Self {
            timestamp,
            kind: EventKind::Command,
            payload: EventPayload { values, source: None, dest: None },
        }
    }
}

/// An event as it sits in (or came out of) the queue, with its tie-break
/// sequence number assigned at insertion.
#[derive(Debug, Clone, PartialEq)]
pub struct ScheduledEvent {
    pub event: NetEvent,
    pub sequence: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct HeapKey {
    timestamp: SimInstant,
    sequence: u64,
}

impl Ord for HeapKey {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.timestamp, self.sequence).cmp(&(other.timestamp, other.sequence))
    }
}

impl PartialOrd for HeapKey {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone)]
struct HeapEntry {
    key: HeapKey,
    event: NetEvent,
}

impl PartialEq for HeapEntry {
    fn eq(&self, other: &Self) -> bool {
        self.key == other.key
    }
}
impl Eq for HeapEntry {}
impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.key.cmp(&other.key)
    }
}
impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

/// Pending event queue plus the scheduler's current time.
#[derive(Debug, Default)]
pub struct EventScheduler {
    queue: BinaryHeap<Reverse<HeapEntry>>,
    now: SimInstant,
    next_sequence: u64,
}

impl EventScheduler {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn now(&self) -> SimInstant {
        self.now
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    /// Timestamp of the earliest pending event.
    pub fn peek_time(&self) -> Option<SimInstant> {
        self.queue.peek().map(|Reverse(e)| e.key.timestamp)
    }

    /// Inserts an event; it must not lie in the past.
    pub fn schedule(&mut self, event: NetEvent) -> Result<(), CommsimError> {
        if event.timestamp < self.now {
            return Err(CommsimError::PastEvent { timestamp: event.timestamp, now: self.now });
        }
        let key = HeapKey { timestamp: event.timestamp, sequence: self.next_sequence };
        self.next_sequence += 1;
        self.queue.push(Reverse(HeapEntry { key, event }));
        Ok(())
    }

    /// Pops the next event if its timestamp is `<= t_end`, advancing the
    /// scheduler clock to it.
    pub fn pop_next_at_or_before(&mut self, t_end: SimInstant) -> Option<ScheduledEvent> {
        match self.queue.peek() {
            Some(Reverse(entry)) if entry.key.timestamp <= t_end => {
                let Reverse(entry) = self.queue.pop().unwrap();
                self.now = entry.key.timestamp;
                Some(ScheduledEvent { event: entry.event, sequence: entry.key.sequence })
            }
            _ => None,
        }
    }

    /// Moves the clock forward without processing anything; never advances
    /// past a pending event.
    pub fn idle_advance(&mut self, t: SimInstant) {
        let limit = self.peek_time().map_or(t, |p| p.min(t));
        if limit > self.now {
            self.now = limit;
        }
    }

    /// Processes every event with timestamp `<= t_end`. The handler may
    /// schedule follow-up events (at or after their own timestamp). Ends
    /// with the clock at `t_end` and returns the processed-event log.
    pub fn run_until<E>(
        &mut self,
        t_end: SimInstant,
        mut handler: impl FnMut(&mut EventScheduler, &ScheduledEvent) -> Result<(), E>,
    ) -> Result<Vec<ScheduledEvent>, RunError<E>> {
        if t_end < self.now {
            return Err(RunError::Scheduler(CommsimError::PastEvent {
                timestamp: t_end,
                now: self.now,
            }));
        }
        let mut log = Vec::new();
        while let Some(ev) = self.pop_next_at_or_before(t_end) {
            handler(self, &ev).map_err(RunError::Handler)?;
            log.push(ev);
        }
        self.now = t_end;
        Ok(log)
    }
}

/// Either a scheduler precondition failure or an error bubbled out of the
/// event handler.
#[derive(Debug)]
pub enum RunError<E> {
    Scheduler(CommsimError),
    Handler(E),
}
