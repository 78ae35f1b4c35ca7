//! Power amplifier model: gain, transport delay, first-order bandwidth,
//! slew-rate and saturation limits.
//!
//! The processing order is fixed:
//! `saturate(slew_limit(lowpass(gain * delayed(input, Td))))`.
//! The delay is realized by a sample FIFO of length `round(Td / dt)`; the
//! residual fractional delay is reported by [`Amplifier::residual_delay`].
//! A bandwidth at or above `1/(4 dt)` lies beyond what the solver grid can
//! represent and is treated as transparent.

use std::collections::VecDeque;

use crate::compensation::LowPassFilter;
use crate::time::SimDuration;

/// Amplifier families named by the hardware they stand in for. The preset
/// delays honor the qualitative ranking linear < generator < switched-mode;
/// the numbers themselves are artifact defaults, not measured data.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AmplifierFamily {
    SwitchedMode,
    Generator,
    Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AmplifierModel {
    pub gain: f64,
    pub delay: SimDuration,
    pub bandwidth_hz: f64,
    /// Volts per second; `None` disables slew limiting.
    pub slew_rate: Option<f64>,
    /// Symmetric clamp at +-V; `None` disables saturation.
    pub saturation: Option<f64>,
}

impl AmplifierModel {
    /// Overridable preset per family.
    pub fn preset(family: AmplifierFamily) -> Self {
        let (delay, bandwidth_hz) = match family {
            AmplifierFamily::Linear => (SimDuration::from_micros(10), 20_000.0),
            AmplifierFamily::Generator => (SimDuration::from_micros(100), 500.0),
            AmplifierFamily::SwitchedMode => (SimDuration::from_millis(2), 2_000.0),
        };
        Self { gain: 1.0, delay, bandwidth_hz, slew_rate: None, saturation: None }
    }

    /// Ideal interface: unity gain, no delay, bandwidth far beyond the
    /// solver grid, no limits.
    pub fn ideal() -> Self {
        Self {
            gain: 1.0,
            delay: SimDuration::ZERO,
            bandwidth_hz: 1e6,
            slew_rate: None,
            saturation: None,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.gain > 0.0) {
            return Err("amplifier gain must be > 0".into());
        }
        if !(self.bandwidth_hz > 0.0) {
            return Err("amplifier bandwidth must be > 0".into());
        }
        if self.slew_rate.is_some_and(|s| !(s > 0.0)) {
            return Err("slew rate limit must be > 0 when set".into());
        }
        if self.saturation.is_some_and(|s| !(s > 0.0)) {
            return Err("saturation limit must be > 0 when set".into());
        }
        Ok(())
    }
}

/// Stateful amplifier bound to a solver step.
#[derive(Debug, Clone)]
pub struct Amplifier {
    model: AmplifierModel,
    fifo: VecDeque<f64>,
    lowpass: Option<LowPassFilter>,
    prev_out: f64,
    dt_s: f64,
    residual: f64,
}

impl Amplifier {
    pub fn new(model: AmplifierModel, dt: SimDuration) -> Self {
        let dt_s = dt.as_secs_f64();
        let delay_steps = (model.delay.as_secs_f64() / dt_s).round() as usize;
        let residual = model.delay.as_secs_f64() - delay_steps as f64 * dt_s;
        // Beyond 1/(4 dt) the one-pole bilinear filter is meaningless on
        // this grid; treat as unlimited bandwidth.
        let lowpass = if model.bandwidth_hz < 1.0 / (4.0 * dt_s) {
            Some(LowPassFilter::new(model.bandwidth_hz, dt))
        } else {
            None
        };
        Self {
            model,
            fifo: VecDeque::from(vec![0.0; delay_steps]),
            lowpass,
            prev_out: 0.0,
            dt_s,
            residual,
        }
    }

    pub fn model(&self) -> &AmplifierModel {
        &self.model
    }

    /// Fractional delay left over by FIFO quantization, seconds.
    pub fn residual_delay(&self) -> f64 {
        self.residual
    }

    pub fn delay_steps(&self) -> usize {
        self.fifo.len()
    }

    /// Processes one input sample.
    pub fn step(&mut self, input: f64) -> f64 {
        let delayed = if self.fifo.is_empty() {
            input
        } else {
            self.fifo.push_back(input);
            self.fifo.pop_front().unwrap()
        };
        let mut out = self.model.gain * delayed;
        if let Some(lpf) = &mut self.lowpass {
            out = lpf.step(out);
        }
        if let Some(slew) = self.model.slew_rate {
            let max_delta = slew * self.dt_s;
            out = out.clamp(self.prev_out - max_delta, self.prev_out + max_delta);
        }
        if let Some(sat) = self.model.saturation {
            out = out.clamp(-sat, sat);
        }
        self.prev_out = out;
        out
    }

    /// The next output as an affine function of the next input, when the
    /// amplifier is memoryless enough for an algebraic interface solve:
    /// requires zero delay and no slew/saturation limits.
    pub fn affine(&self) -> Option<(f64, f64)> {
        if !self.fifo.is_empty() || self.model.slew_rate.is_some() || self.model.saturation.is_some() {
            return None;
        }
        Some(match &self.lowpass {
            None => (self.model.gain, 0.0),
            Some(lpf) => {
                let (a, off) = lpf.affine();
                (a * self.model.gain, off)
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn us(v: u64) -> SimDuration {
        SimDuration::from_micros(v)
    }

    #[test]
    fn unity_passthrough_amplitude_error_below_point1_percent() {
        // 50 Hz sine through f_bw = 10 kHz at dt = 10 us (filter active:
        // 10 kHz < 1/(4 dt) = 25 kHz). First-order attenuation at 50 Hz is
        // 1/sqrt(1 + (50/10000)^2), well under 0.1%.
        let dt = us(10);
        let mut amp = Amplifier::new(
            AmplifierModel { bandwidth_hz: 10_000.0, ..AmplifierModel::ideal() },
            dt,
        );
        let omega = 2.0 * std::f64::consts::PI * 50.0;
        let total = 6000; // 60 ms
        let (mut re, mut im) = (0.0, 0.0);
        let mut n = 0.0;
        for k in 0..total {
            let t = k as f64 * dt.as_secs_f64();
            let y = amp.step((omega * t).sin());
            if k >= total / 2 {
                re += y * (omega * t).sin();
                im += y * (omega * t).cos();
                n += 1.0;
            }
        }
        let amp_out = 2.0 * (re * re + im * im).sqrt() / n;
        assert_relative_eq!(amp_out, 1.0, max_relative = 1e-3);
    }

    #[test]
    fn dc_gain_after_settling() {
        let dt = us(50);
        let mut amp = Amplifier::new(
            AmplifierModel { gain: 10.0, bandwidth_hz: 2_000.0, ..AmplifierModel::ideal() },
            dt,
        );
        let mut y = 0.0;
        for _ in 0..10_000 {
            y = amp.step(1.0);
        }
        assert_abs_diff_eq!(y, 10.0, epsilon = 1e-9);
    }

    #[test]
    fn saturation_clamps_instead_of_failing() {
        let dt = us(50);
        let mut amp = Amplifier::new(
            AmplifierModel { saturation: Some(5.0), ..AmplifierModel::ideal() },
            dt,
        );
        let mut y = 0.0;
        for _ in 0..100 {
            y = amp.step(10.0);
        }
        assert_abs_diff_eq!(y, 5.0);
    }

    #[test]
    fn fifo_delay_shifts_by_whole_steps() {
        let dt = us(50);
        let mut amp = Amplifier::new(
            AmplifierModel { delay: us(250), ..AmplifierModel::ideal() },
            dt,
        );
        assert_eq!(amp.delay_steps(), 5);
        assert_abs_diff_eq!(amp.residual_delay(), 0.0);
        let inputs: Vec<f64> = (0..20).map(|k| k as f64).collect();
        let outputs: Vec<f64> = inputs.iter().map(|&x| amp.step(x)).collect();
        for k in 5..20 {
            assert_eq!(outputs[k], inputs[k - 5]);
        }
        assert!(outputs[..5].iter().all(|&y| y == 0.0));
    }

    #[test]
    fn limits_never_exceed_bounds_on_wild_input() {
        let dt = us(50);
        let sat = 3.0;
        let slew = 10_000.0; // 0.5 V per step
        let mut amp = Amplifier::new(
            AmplifierModel {
                gain: 4.0,
                slew_rate: Some(slew),
                saturation: Some(sat),
                ..AmplifierModel::ideal()
            },
            dt,
        );
        let mut prev = 0.0;
        let mut x: f64 = 0.3;
        for _ in 0..2000 {
            x = (x * 97.0).sin() * 10.0; // deterministic rough signal
            let y = amp.step(x);
            assert!(y.abs() <= sat + 1e-12, "saturation bound violated: {y}");
            assert!((y - prev).abs() <= slew * dt.as_secs_f64() + 1e-12, "slew bound violated");
            prev = y;
        }
    }

    #[test]
    fn preset_delays_follow_family_ranking() {
        let linear = AmplifierModel::preset(AmplifierFamily::Linear);
        let generator = AmplifierModel::preset(AmplifierFamily::Generator);
        let switched = AmplifierModel::preset(AmplifierFamily::SwitchedMode);
        assert!(linear.delay < generator.delay);
        assert!(generator.delay < switched.delay);
    }

    #[test]
    fn megahertz_bandwidth_is_transparent_on_the_grid() {
        let dt = us(50);
        let mut amp = Amplifier::new(AmplifierModel::ideal(), dt);
        for k in 0..100 {
            let x = (k as f64 * 0.37).sin();
            assert_eq!(amp.step(x), x);
        }
    }
}
