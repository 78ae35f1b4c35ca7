//! Accuracy, stability and timing measurements derived from traces.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::time::SimInstant;
use crate::trace::Trace;

use super::HarnessError;

/// Relative RMS error in percent: `100 * RMS(test - reference) / RMS(reference)`
/// over paired samples. Both slices must already be aligned on the same grid.
pub fn rms_error(test: &[f64], reference: &[f64]) -> Result<f64, HarnessError> {
    assert_eq!(test.len(), reference.len(), "rms_error needs aligned samples");
    let mut num = 0.0;
    let mut den = 0.0;
    for (t, r) in test.iter().zip(reference) {
        num += (t - r) * (t - r);
        den += r * r;
    }
    if den == 0.0 {
        return Err(HarnessError::DegenerateReference);
    }
    Ok(100.0 * (num / den).sqrt())
}

/// Stability verdict with onset time for unstable runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "kebab-case")]
pub enum StabilityVerdict {
    Stable,
    Unstable { onset_seconds: f64 },
}

/// Scans a signal for divergence: unstable at the first sample whose
/// magnitude exceeds `growth_factor * reference_amplitude`, or at the first
/// non-finite sample.
pub fn detect_instability(
    times: &[SimInstant],
    signal: &[f64],
    reference_amplitude: f64,
    growth_factor: f64,
) -> StabilityVerdict {
    assert!(reference_amplitude > 0.0, "reference amplitude must be positive");
    for (t, v) in times.iter().zip(signal) {
        if !v.is_finite() || v.abs() > growth_factor * reference_amplitude {
            return StabilityVerdict::Unstable { onset_seconds: t.as_secs_f64() };
        }
    }
    StabilityVerdict::Stable
}

/// Fundamental phasor (amplitude, phase in radians) of a uniformly sampled
/// signal by single-frequency correlation. `times` must be uniform.
pub fn extract_phasor(times: &[SimInstant], signal: &[f64], f_hz: f64) -> (f64, f64) {
    let omega = 2.0 * std::f64::consts::PI * f_hz;
    let (mut re, mut im) = (0.0, 0.0);
    for (t, v) in times.iter().zip(signal) {
        let angle = omega * t.as_secs_f64();
        re += v * angle.cos();
        im += v * angle.sin();
    }
    let n = signal.len().max(1) as f64;
    let a = 2.0 * re / n;
    let b = 2.0 * im / n;
    // x(t) ~ a cos(wt) + b sin(wt) = A sin(wt + phi)
    let amplitude = (a * a + b * b).sqrt();
    let phase = a.atan2(b);
    (amplitude, phase)
}

/// Steady-state amplitude and phase error of a signal against a reference
/// at one frequency.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhasorError {
    pub amplitude_error_percent: f64,
    pub phase_error_degrees: f64,
}

pub fn phasor_error(
    times: &[SimInstant],
    test: &[f64],
    reference: &[f64],
    f_hz: f64,
) -> PhasorError {
    let (amp_t, ph_t) = extract_phasor(times, test, f_hz);
    let (amp_r, ph_r) = extract_phasor(times, reference, f_hz);
    let mut dphi = ph_t - ph_r;
    while dphi > std::f64::consts::PI {
        dphi -= 2.0 * std::f64::consts::PI;
    }
    while dphi < -std::f64::consts::PI {
        dphi += 2.0 * std::f64::consts::PI;
    }
    PhasorError {
        amplitude_error_percent: 100.0 * (amp_t - amp_r) / amp_r,
        phase_error_degrees: dphi.to_degrees(),
    }
}

/// Derived measurements of one experiment run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub scenario: String,
    pub seed: u64,
    pub scenario_sha256: String,
    pub strategy: String,
    pub samples: usize,
    pub warmup_seconds: f64,
    /// Relative RMS error (%) per compared signal, against the monolithic
    /// reference; empty when no reference exists.
    pub rms_error_percent: BTreeMap<String, f64>,
    /// Steady-state fundamental errors per compared signal, when the
    /// scenario pins a fundamental frequency.
    pub steady_state: BTreeMap<String, PhasorError>,
    pub stability: StabilityVerdict,
    pub stale_commands: u64,
    pub dropped_packets: u64,
    pub threshold_crossings: u64,
    /// Overrun count; absent when pacing is disabled.
    pub overruns: Option<u64>,
    /// Simulated seconds per wall second; absent when pacing is disabled
    /// so that reports stay byte-reproducible.
    pub achieved_rt_factor: Option<f64>,
}

/// Selects row indices of `trace` inside the metrics window
/// `[warmup, end]`, keeping only rows on the reference grid when a grid
/// step is given.
pub fn window_indices(trace: &Trace, warmup: SimInstant, grid: Option<crate::time::SimDuration>) -> Vec<usize> {
    trace
        .times()
        .iter()
        .enumerate()
        .filter(|(_, t)| **t >= warmup)
        .filter(|(_, t)| match grid {
            Some(step) => t.since(SimInstant::ZERO).is_multiple_of(step),
            None => true,
        })
        .map(|(i, _)| i)
        .collect()
}
