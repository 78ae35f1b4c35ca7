//! Deterministic serialization of traces, metrics and reports.
//!
//! CSV: header row of column names with units in parentheses, `,` field
//! separator, `.` decimal point, LF line endings; time in seconds with nine
//! decimal digits, signals in scientific notation with nine significant
//! digits. Re-emitting the same trace is byte-identical.

use std::io::Write;
use std::path::Path;

use crate::trace::Trace;

use super::metrics::{Metrics, StabilityVerdict};
use super::HarnessError;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io { path: path.to_path_buf(), source }
}

/// Renders the sample table; exposed separately so tests and determinism
/// checks can compare bytes without touching the filesystem.
pub fn render_csv(trace: &Trace) -> String {
    let mut out = String::new();
    out.push_str("time(s)");
    for column in trace.columns() {
        out.push_str(&format!(",{}({})", column.name, column.unit));
    }
    out.push('\n');
    for (t, row) in trace.times().iter().zip(trace.rows()) {
        out.push_str(&t.format_seconds());
        for value in row {
            out.push_str(&format!(",{value:.8e}"));
        }
        out.push('\n');
    }
    out
}

pub fn emit_csv(trace: &Trace, path: &Path) -> Result<(), HarnessError> {
    let mut file = std::fs::File::create(path).map_err(io_err(path))?;
    file.write_all(render_csv(trace).as_bytes()).map_err(io_err(path))?;
    Ok(())
}

/// Machine-readable metrics (consumed by the `report` subcommand).
pub fn emit_metrics_json(metrics: &Metrics, path: &Path) -> Result<(), HarnessError> {
    let json = serde_json::to_string_pretty(metrics)
        .map_err(|e| HarnessError::Config(format!("metrics serialization failed: {e}")))?;
    std::fs::write(path, json + "\n").map_err(io_err(path))
}

pub fn load_metrics_json(path: &Path) -> Result<Metrics, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text)
        .map_err(|e| HarnessError::Parse { path: path.to_path_buf(), message: e.to_string() })
}

/// Human-readable run summary.
pub fn render_report(metrics: &Metrics) -> String {
    let mut out = String::new();
    out.push_str(&format!("scenario:          {}\n", metrics.scenario));
    out.push_str(&format!("seed:              {}\n", metrics.seed));
    out.push_str(&format!("scenario sha256:   {}\n", metrics.scenario_sha256));
    out.push_str(&format!("strategy:          {}\n", metrics.strategy));
    out.push_str(&format!("samples:           {}\n", metrics.samples));
    out.push_str(&format!("warm-up excluded:  {} s\n", metrics.warmup_seconds));
    match &metrics.stability {
        StabilityVerdict::Stable => out.push_str("stability:         stable\n"),
        StabilityVerdict::Unstable { onset_seconds } => {
            out.push_str(&format!("stability:         unstable (onset {onset_seconds} s)\n"))
        }
    }
    if metrics.rms_error_percent.is_empty() {
        out.push_str("rms error:         not computed (no reference or empty window)\n");
    } else {
        out.push_str("rms error vs monolithic reference:\n");
        for (signal, err) in &metrics.rms_error_percent {
            out.push_str(&format!("  {signal}: {err:.6} %\n"));
        }
    }
    for (signal, phasor) in &metrics.steady_state {
        out.push_str(&format!(
            "steady-state {signal}: amplitude error {:.4} %, phase error {:.4} deg\n",
            phasor.amplitude_error_percent, phasor.phase_error_degrees
        ));
    }
    out.push_str(&format!("stale commands:    {}\n", metrics.stale_commands));
    out.push_str(&format!("dropped packets:   {}\n", metrics.dropped_packets));
    out.push_str(&format!("threshold events:  {}\n", metrics.threshold_crossings));
    match metrics.overruns {
        Some(n) => out.push_str(&format!("overruns:          {n}\n")),
        None => out.push_str("overruns:          n/a (pacing disabled)\n"),
    }
    match metrics.achieved_rt_factor {
        Some(rt) => out.push_str(&format!("real-time factor:  {rt:.3}\n")),
        None => out.push_str("real-time factor:  n/a (pacing disabled)\n"),
    }
    out
}

pub fn emit_report(metrics: &Metrics, path: &Path) -> Result<(), HarnessError> {
    std::fs::write(path, render_report(metrics)).map_err(io_err(path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::port::Unit;
    use crate::time::SimInstant;
    use crate::trace::Column;

    fn two_sample_trace() -> Trace {
        let mut trace = Trace::new(vec![
            Column { name: "phil.v_pcc".into(), unit: Unit::Volt },
            Column { name: "phil.i_hut".into(), unit: Unit::Ampere },
        ]);
        trace.push_row(SimInstant::ZERO, vec![6.666666666666667, 3.333333333333333]);
        trace.push_row(SimInstant::from_nanos(50_000), vec![1.0, -0.5e-3]);
        trace
    }

    #[test]
    fn csv_has_header_plus_one_line_per_sample() {
        let csv = render_csv(&two_sample_trace());
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0], "time(s),phil.v_pcc(V),phil.i_hut(A)");
        assert!(lines[1].starts_with("0.000000000,"));
        assert!(lines[2].starts_with("0.000050000,"));
        // column count = 1 (time) + number of signals
        assert_eq!(lines[1].split(',').count(), 3);
    }

    #[test]
    fn csv_is_reproducible_byte_for_byte() {
        let trace = two_sample_trace();
        assert_eq!(render_csv(&trace), render_csv(&trace));
    }

    #[test]
    fn csv_values_carry_nine_significant_digits() {
        let csv = render_csv(&two_sample_trace());
        assert!(csv.contains("6.66666667e0"), "csv was: {csv}");
        assert!(csv.contains("-5.00000000e-4"), "csv was: {csv}");
    }
}
