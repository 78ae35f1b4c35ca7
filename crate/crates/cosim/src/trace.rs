//! Sampled signal records and the run event log.
//!
//! A `Trace` is the in-memory record every orchestration strategy produces:
//! a sample table (strictly increasing time column plus named signal
//! columns) and an event log for discrete happenings such as network
//! arrivals, threshold crossings, stale commands and pacing overruns.

use crate::port::Unit;
use crate::time::{SimDuration, SimInstant};

/// One named signal column with its unit.
#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    pub name: String,
    pub unit: Unit,
}

/// Discrete happenings recorded alongside the sample table.
#[derive(Debug, Clone, PartialEq)]
pub enum TraceEvent {
    /// A network event was processed by a discrete-event federate.
    NetworkEvent { t: SimInstant, label: String },
    /// A watched signal crossed a detector threshold.
    ThresholdCrossing { t: SimInstant, signal: String, level: f64, rising: bool },
    /// A command was applied later than its freshness budget allows.
    StaleCommand { t_apply: SimInstant, age: SimDuration, sink: String, applied: bool },
    /// A packet on a coupling link was lost.
    PacketDropped { t_send: SimInstant, link: String },
    /// A paced step exceeded its wall-clock budget.
    Overrun { t: SimInstant, budget_s: f64, wall_s: f64 },
}

impl TraceEvent {
    pub fn time(&self) -> SimInstant {
        match self {
            TraceEvent::NetworkEvent { t, .. } => *t,
            TraceEvent::ThresholdCrossing { t, .. } => *t,
            TraceEvent::StaleCommand { t_apply, .. } => *t_apply,
            TraceEvent::PacketDropped { t_send, .. } => *t_send,
            TraceEvent::Overrun { t, .. } => *t,
        }
    }
}

/// Sample table plus event log produced by a run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trace {
    columns: Vec<Column>,
    times: Vec<SimInstant>,
    rows: Vec<Vec<f64>>,
    pub events: Vec<TraceEvent>,
}

impl Trace {
    pub fn new(columns: Vec<Column>) -> Self {
        Self { columns, times: Vec::new(), rows: Vec::new(), events: Vec::new() }
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn times(&self) -> &[SimInstant] {
        &self.times
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    /// All samples of one column.
    pub fn signal(&self, name: &str) -> Option<Vec<f64>> {
        let idx = self.column_index(name)?;
        Some(self.rows.iter().map(|r| r[idx]).collect())
    }

    /// Appends one row. Times must be strictly increasing and the row arity
    /// must match the column set; both are invariants of the type.
    pub fn push_row(&mut self, t: SimInstant, values: Vec<f64>) {
        assert_eq!(values.len(), self.columns.len(), "trace row arity mismatch");
        if let Some(last) = self.times.last() {
            assert!(t > *last, "trace times must be strictly increasing");
        }
        self.times.push(t);
        self.rows.push(values);
    }

    /// Row index of the first sample at or after `t`.
    pub fn first_index_at_or_after(&self, t: SimInstant) -> usize {
        self.times.partition_point(|x| *x < t)
    }

    /// Drops all samples strictly after `t` (events are kept).
    pub fn truncate_after(&mut self, t: SimInstant) {
        let keep = self.times.partition_point(|x| *x <= t);
        self.times.truncate(keep);
        self.rows.truncate(keep);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::port::Unit;

    fn volt(name: &str) -> Column {
        Column { name: name.to_string(), unit: Unit::Volt }
    }

    #[test]
    fn rows_keep_time_strictly_increasing() {
        let mut tr = Trace::new(vec![volt("a")]);
        tr.push_row(SimInstant::from_nanos(0), vec![1.0]);
        tr.push_row(SimInstant::from_nanos(5), vec![2.0]);
        assert_eq!(tr.len(), 2);
        assert_eq!(tr.signal("a").unwrap(), vec![1.0, 2.0]);
    }

    #[test]
    #[should_panic(expected = "strictly increasing")]
    fn equal_times_rejected() {
        let mut tr = Trace::new(vec![volt("a")]);
        tr.push_row(SimInstant::from_nanos(5), vec![1.0]);
        tr.push_row(SimInstant::from_nanos(5), vec![1.0]);
    }

    #[test]
    fn truncation_keeps_boundary_sample() {
        let mut tr = Trace::new(vec![volt("a")]);
        for i in 0..5 {
            tr.push_row(SimInstant::from_nanos(i * 10), vec![i as f64]);
        }
        tr.truncate_after(SimInstant::from_nanos(20));
        assert_eq!(tr.len(), 3);
        assert_eq!(*tr.times().last().unwrap(), SimInstant::from_nanos(20));
    }
}
