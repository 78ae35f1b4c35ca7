//! Wall-clock pacing, fast/slow classification, overrun accounting and
//! multi-rate bridging.
//!
//! Pacing is results-neutral by construction: it only sleeps between steps
//! and records timing, never touching exchanged values, so paced and
//! unpaced runs of a deterministic scenario produce identical traces. It
//! must be disabled for reproducible CI output since wall-clock readings
//! land in the timing log.

use std::time::{Duration as WallDuration, Instant as WallInstant};

use thiserror::Error;

use crate::time::{SimDuration, SimInstant};

#[derive(Debug, Error)]
pub enum PacingError {
    #[error("overrun limit exceeded: {overruns} overruns with max_overruns = {max_overruns}")]
    OverrunLimit { overruns: u32, max_overruns: u32 },
    #[error("invalid pacing policy: {0}")]
    InvalidPolicy(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OverrunPolicy {
    Abort,
    LogAndContinue,
}

/// Wall-clock pacing policy. `rt_factor` 1.0 is real time, 2.0 runs the
/// simulation twice as fast as the wall clock.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PacingPolicy {
    pub rt_factor: f64,
    pub overrun_policy: OverrunPolicy,
    pub max_overruns: u32,
}

impl PacingPolicy {
    pub fn validate(&self) -> Result<(), PacingError> {
        if self.rt_factor > 0.0 && self.rt_factor.is_finite() {
            Ok(())
        } else {
            Err(PacingError::InvalidPolicy("rt_factor must be positive and finite".into()))
        }
    }
}

impl Default for PacingPolicy {
    fn default() -> Self {
        Self { rt_factor: 1.0, overrun_policy: OverrunPolicy::LogAndContinue, max_overruns: u32::MAX }
    }
}

/// Per-step timing record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepTiming {
    /// Wall time the step function itself took.
    pub wall: WallDuration,
    /// Allowed wall time, `dt / rt_factor`.
    pub budget: WallDuration,
    /// Set exactly when `wall > budget`.
    pub overrun: bool,
    /// Cumulative wall time ahead (+) of the pacing schedule, seconds.
    pub drift: f64,
}

/// Speed class of a measured step relative to its simulated step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpeedClass {
    RealTime,
    Fast,
    Slow,
}

/// Hysteresis band for the speed classification.
pub const CLASSIFY_BAND: f64 = 0.05;

/// Classifies one measured step against its simulated step: faster than
/// (1 - 5%) of dt is Fast, slower than (1 + 5%) is Slow, the band between
/// is RealTime.
pub fn classify(wall: WallDuration, dt: SimDuration) -> SpeedClass {
    let wall_s = wall.as_secs_f64();
    let dt_s = dt.as_secs_f64();
    if wall_s < dt_s * (1.0 - CLASSIFY_BAND) {
        SpeedClass::Fast
    } else if wall_s > dt_s * (1.0 + CLASSIFY_BAND) {
        SpeedClass::Slow
    } else {
        SpeedClass::RealTime
    }
}

/// Incremental pacer: call [`Pacer::pace_point`] after each completed step.
///
/// Fast steps are delayed to their cumulative deadline (sleep, then a short
/// spin for precision); slow steps are recorded as overruns and handled per
/// policy. Deadlines are cumulative from the start, so individual sleep
/// jitter does not accumulate.
pub struct Pacer {
    policy: PacingPolicy,
    budget: WallDuration,
    start: WallInstant,
    step_start: WallInstant,
    steps_done: u64,
    overruns: u32,
    log: Vec<StepTiming>,
}

impl Pacer {
    pub fn new(policy: PacingPolicy, dt: SimDuration) -> Result<Self, PacingError> {
        policy.validate()?;
        let budget = WallDuration::from_secs_f64(dt.as_secs_f64() / policy.rt_factor);
        let now = WallInstant::now();
        Ok(Self { policy, budget, start: now, step_start: now, steps_done: 0, overruns: 0, log: Vec::new() })
    }

    /// Marks the end of one step: records its timing, applies the overrun
    /// policy and waits out the remainder of the budget.
    pub fn pace_point(&mut self) -> Result<StepTiming, PacingError> {
        let wall = self.step_start.elapsed();
        let overrun = wall > self.budget;
        if overrun {
            self.overruns += 1;
            if self.policy.overrun_policy == OverrunPolicy::Abort && self.overruns > self.policy.max_overruns
            {
                return Err(PacingError::OverrunLimit {
                    overruns: self.overruns,
                    max_overruns: self.policy.max_overruns,
                });
            }
        }
        self.steps_done += 1;
        let deadline = self.start + self.budget * self.steps_done as u32;
        sleep_until(deadline);
        let drift = self.start.elapsed().as_secs_f64() - self.budget.as_secs_f64() * self.steps_done as f64;
        let timing = StepTiming { wall, budget: self.budget, overrun, drift };
        self.log.push(timing);
        self.step_start = WallInstant::now();
        Ok(timing)
    }

    pub fn overruns(&self) -> u32 {
        self.overruns
    }

    pub fn log(&self) -> &[StepTiming] {
        &self.log
    }

    pub fn into_log(self) -> Vec<StepTiming> {
        self.log
    }
}

fn sleep_until(deadline: WallInstant) {
    // Sleep coarsely, then spin the last stretch; OS sleep granularity is
    // far coarser than the sub-millisecond budgets used here.
    const SPIN: WallDuration = WallDuration::from_micros(200);
    loop {
        let now = WallInstant::now();
        if now >= deadline {
            return;
        }
        let remaining = deadline - now;
        if remaining > SPIN {
            std::thread::sleep(remaining - SPIN);
        } else {
            std::hint::spin_loop();
        }
    }
}

/// Drives a step function under a pacing policy from t = 0 to `t_end` in
/// increments of `dt`, returning the per-step timing log.
pub fn pace<E>(
    mut step_fn: impl FnMut(SimInstant) -> Result<(), E>,
    dt: SimDuration,
    policy: PacingPolicy,
    t_end: SimInstant,
) -> Result<Vec<StepTiming>, PaceRunError<E>> {
    if dt.is_zero() {
        return Err(PaceRunError::Pacing(PacingError::InvalidPolicy("dt must be > 0".into())));
    }
    let steps = t_end.since(SimInstant::ZERO).checked_div(dt).unwrap_or(0);
    let mut pacer = Pacer::new(policy, dt).map_err(PaceRunError::Pacing)?;
    for k in 0..steps {
        let t = SimInstant::ZERO + dt * (k + 1);
        step_fn(t).map_err(PaceRunError::Step)?;
        pacer.pace_point().map_err(PaceRunError::Pacing)?;
    }
    Ok(pacer.into_log())
}

/// Either a pacing failure (overrun limit) or an error from the step body.
#[derive(Debug)]
pub enum PaceRunError<E> {
    Pacing(PacingError),
    Step(E),
}

/// Reconstruction mode for the slow-to-fast direction of a rate bridge.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BridgeMode {
    /// Hold the newest slow sample for the whole slow interval.
    ZeroOrderHold,
    /// Advance along the line through the last two slow samples (first
    /// order prediction, one slow interval of history), reaching the
    /// projected next sample at the end of the interval. Causal: never
    /// reads a sample newer than the destination's current time.
    LinearInterp,
}

#[derive(Debug, Error)]
pub enum BridgeError {
    #[error("slow step {slow} is not an integer multiple of fast step {fast}")]
    NonIntegerRatio { slow: SimDuration, fast: SimDuration },
}

/// Rate adapter between a fast port (step `dt_fast`) and a slow port
/// (step `dt_slow = m * dt_fast`).
#[derive(Debug, Clone)]
pub struct MultirateBridge {
    m: u64,
    mode: BridgeMode,
    prev_slow: Option<f64>,
    curr_slow: Option<f64>,
    /// When true, the fast-to-slow direction averages the m fast samples of
    /// the interval instead of picking the aligned one.
    pub decimate_mean: bool,
    fast_window: Vec<f64>,
}

impl MultirateBridge {
    pub fn new(dt_fast: SimDuration, dt_slow: SimDuration, mode: BridgeMode) -> Result<Self, BridgeError> {
        if dt_fast.is_zero() || !dt_slow.is_multiple_of(dt_fast) {
            return Err(BridgeError::NonIntegerRatio { slow: dt_slow, fast: dt_fast });
        }
        Ok(Self {
            m: dt_slow.checked_div(dt_fast).unwrap(),
            mode,
            prev_slow: None,
            curr_slow: None,
            decimate_mean: false,
            fast_window: Vec::new(),
        })
    }

    pub fn ratio(&self) -> u64 {
        self.m
    }

    /// Delivers a new slow sample (at a slow-grid instant).
    pub fn push_slow(&mut self, value: f64) {
        self.prev_slow = self.curr_slow.or(Some(value));
        self.curr_slow = Some(value);
    }

    /// Value seen by the fast side `substep` fast steps into the current
    /// slow interval (0 <= substep < m).
    pub fn slow_to_fast(&self, substep: u64) -> f64 {
        let curr = self.curr_slow.unwrap_or(0.0);
        match self.mode {
            BridgeMode::ZeroOrderHold => curr,
            BridgeMode::LinearInterp => {
                let prev = self.prev_slow.unwrap_or(curr);
                curr + (curr - prev) * (substep as f64 / self.m as f64)
            }
        }
    }

    /// Feeds one fast sample; returns the decimated value when the sample
    /// completes a slow interval (i.e. it is aligned with the slow grid).
    pub fn push_fast(&mut self, value: f64) -> Option<f64> {
        self.fast_window.push(value);
        if self.fast_window.len() as u64 == self.m {
            let out = if self.decimate_mean {
                self.fast_window.iter().sum::<f64>() / self.m as f64
            } else {
                *self.fast_window.last().unwrap()
            };
            self.fast_window.clear();
            Some(out)
        } else {
            None
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dms(v: u64) -> SimDuration {
        SimDuration::from_millis(v)
    }

    #[test]
    fn classify_examples() {
        let dt = dms(10);
        assert_eq!(classify(WallDuration::from_millis(5), dt), SpeedClass::Fast);
        assert_eq!(classify(WallDuration::from_millis(20), dt), SpeedClass::Slow);
        assert_eq!(classify(WallDuration::from_millis(10), dt), SpeedClass::RealTime);
        // edges of the 5% band
        assert_eq!(classify(WallDuration::from_micros(9_600), dt), SpeedClass::RealTime);
        assert_eq!(classify(WallDuration::from_micros(10_400), dt), SpeedClass::RealTime);
    }

    #[test]
    fn noop_steps_pace_to_wall_time() {
        // 200 steps of 1 ms at rt_factor 1 -> about 0.2 s of wall time.
        let policy = PacingPolicy::default();
        let started = WallInstant::now();
        let log = pace::<()>(|_| Ok(()), dms(1), policy, SimInstant::from_nanos(200_000_000)).unwrap();
        let elapsed = started.elapsed().as_secs_f64();
        assert_eq!(log.len(), 200);
        assert!(log.iter().all(|s| !s.overrun), "no-op steps must not overrun");
        assert!(
            (elapsed - 0.2).abs() < 0.01,
            "expected ~0.2 s of wall time, got {elapsed}"
        );
    }

    #[test]
    fn overrun_limit_aborts_at_step_after_max() {
        let policy = PacingPolicy {
            rt_factor: 1.0,
            overrun_policy: OverrunPolicy::Abort,
            max_overruns: 10,
        };
        let mut steps = 0u32;
        let result = pace::<()>(
            |_| {
                steps += 1;
                std::thread::sleep(WallDuration::from_millis(2)); // 2x the 1 ms budget
                Ok(())
            },
            dms(1),
            policy,
            SimInstant::from_nanos(100_000_000),
        );
        match result {
            Err(PaceRunError::Pacing(PacingError::OverrunLimit { overruns: 11, max_overruns: 10 })) => {}
            other => panic!("expected OverrunLimit at the 11th overrun, got {other:?}"),
        }
        assert_eq!(steps, 11);
    }

    #[test]
    fn unpaced_factor_runs_fast_and_classifies_fast() {
        let policy = PacingPolicy { rt_factor: 1000.0, ..PacingPolicy::default() };
        let started = WallInstant::now();
        let log = pace::<()>(|_| Ok(()), dms(1), policy, SimInstant::from_nanos(1_000_000_000)).unwrap();
        let elapsed = started.elapsed().as_secs_f64();
        assert!(elapsed < 0.5, "1 s simulated at rt_factor 1000 must take well under wall second");
        assert_eq!(classify(log[0].wall, dms(1)), SpeedClass::Fast);
    }

    #[test]
    fn overrun_flags_match_definition() {
        let policy = PacingPolicy::default();
        let mut k = 0u64;
        let log = pace::<()>(
            |_| {
                k += 1;
                if k % 3 == 0 {
                    std::thread::sleep(WallDuration::from_millis(2));
                }
                Ok(())
            },
            dms(1),
            policy,
            SimInstant::from_nanos(30_000_000),
        )
        .unwrap();
        for step in &log {
            assert_eq!(step.overrun, step.wall > step.budget);
        }
        let flagged = log.iter().filter(|s| s.overrun).count();
        assert_eq!(flagged, 10, "every third of 30 steps sleeps past its budget");
    }

    #[test]
    fn bridge_constant_any_mode_is_exact() {
        for mode in [BridgeMode::ZeroOrderHold, BridgeMode::LinearInterp] {
            let mut bridge = MultirateBridge::new(dms(1), dms(4), mode).unwrap();
            bridge.push_slow(2.5);
            bridge.push_slow(2.5);
            for sub in 0..4 {
                assert_eq!(bridge.slow_to_fast(sub), 2.5);
            }
        }
    }

    #[test]
    fn bridge_zoh_on_ramp_gives_staircase() {
        // slow samples of a ramp with increment 4 per slow step (m = 4,
        // fast increment 1): ZOH holds each for 4 fast steps.
        let mut bridge = MultirateBridge::new(dms(1), dms(4), BridgeMode::ZeroOrderHold).unwrap();
        let mut outputs = Vec::new();
        for k in 0..3u64 {
            bridge.push_slow(4.0 * k as f64);
            for sub in 0..4 {
                outputs.push(bridge.slow_to_fast(sub));
            }
        }
        assert_eq!(outputs, vec![0.0, 0.0, 0.0, 0.0, 4.0, 4.0, 4.0, 4.0, 8.0, 8.0, 8.0, 8.0]);
    }

    #[test]
    fn bridge_interp_beats_zoh_on_sine() {
        // 50 Hz sine, dt_slow = 1 ms, dt_fast = 50 us.
        let dt_f = SimDuration::from_micros(50);
        let dt_s = dms(1);
        let m = 20u64;
        let omega = 2.0 * std::f64::consts::PI * 50.0;
        let rms = |mode: BridgeMode| -> f64 {
            let mut bridge = MultirateBridge::new(dt_f, dt_s, mode).unwrap();
            let mut sum_sq = 0.0;
            let mut n = 0u64;
            for slow_k in 0..200u64 {
                let t_slow = slow_k as f64 * 1e-3;
                bridge.push_slow((omega * t_slow).sin());
                for sub in 0..m {
                    let t = t_slow + sub as f64 * 50e-6;
                    let err = bridge.slow_to_fast(sub) - (omega * t).sin();
                    sum_sq += err * err;
                    n += 1;
                }
            }
            (sum_sq / n as f64).sqrt()
        };
        let zoh = rms(BridgeMode::ZeroOrderHold);
        let interp = rms(BridgeMode::LinearInterp);
        assert!(
            interp < zoh,
            "first-order prediction must reconstruct a smooth signal better: interp {interp}, zoh {zoh}"
        );
    }

    #[test]
    fn bridge_rejects_non_integer_ratio() {
        match MultirateBridge::new(dms(3), dms(10), BridgeMode::ZeroOrderHold) {
            Err(BridgeError::NonIntegerRatio { .. }) => {}
            other => panic!("expected NonIntegerRatio, got {other:?}"),
        }
    }

    #[test]
    fn bridge_decimates_aligned_sample_or_mean() {
        let mut bridge = MultirateBridge::new(dms(1), dms(4), BridgeMode::ZeroOrderHold).unwrap();
        assert_eq!(bridge.push_fast(1.0), None);
        assert_eq!(bridge.push_fast(2.0), None);
        assert_eq!(bridge.push_fast(3.0), None);
        assert_eq!(bridge.push_fast(4.0), Some(4.0));
        bridge.decimate_mean = true;
        for v in [1.0, 2.0, 3.0] {
            assert_eq!(bridge.push_fast(v), None);
        }
        assert_eq!(bridge.push_fast(4.0), Some(2.5));
    }
}
