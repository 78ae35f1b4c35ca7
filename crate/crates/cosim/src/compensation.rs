//! Delay-compensation methods for the PHIL feedback path: first-order
//! low-pass filtering, polynomial extrapolation prediction and phase
//! advance calibration.

use thiserror::Error;

use crate::time::SimDuration;

#[derive(Debug, Error)]
pub enum CompensationError {
    #[error("need at least {needed} samples of history, have {have}")]
    InsufficientHistory { needed: usize, have: usize },
    #[error("invalid compensator configuration: {0}")]
    InvalidConfig(String),
}

/// Compensator selection, configured per PHIL link.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum CompensatorConfig {
    #[default]
    None,
    LowPass { cutoff_hz: f64 },
    Extrapolate { order: u8, horizon: SimDuration },
    PhaseAdvance { f0_hz: f64, advance: SimDuration },
}

impl CompensatorConfig {
    pub fn validate(&self, dt: SimDuration) -> Result<(), CompensationError> {
        match self {
            CompensatorConfig::None => Ok(()),
            CompensatorConfig::LowPass { cutoff_hz } => {
                let limit = 1.0 / (4.0 * dt.as_secs_f64());
                if *cutoff_hz <= 0.0 {
                    Err(CompensationError::InvalidConfig("low-pass cutoff must be > 0".into()))
                } else if *cutoff_hz >= limit {
                    Err(CompensationError::InvalidConfig(format!(
                        "low-pass cutoff {cutoff_hz} Hz must stay below 1/(4 dt) = {limit} Hz"
                    )))
                } else {
                    Ok(())
                }
            }
            CompensatorConfig::Extrapolate { order, .. } => {
                if matches!(order, 1 | 2) {
                    Ok(())
                } else {
                    Err(CompensationError::InvalidConfig(format!(
                        "extrapolation order must be 1 or 2, got {order}"
                    )))
                }
            }
            CompensatorConfig::PhaseAdvance { f0_hz, .. } => {
                if *f0_hz > 0.0 {
                    Ok(())
                } else {
                    Err(CompensationError::InvalidConfig("phase-advance f0 must be > 0".into()))
                }
            }
        }
    }
}

/// First-order low-pass, bilinear transform, DC gain exactly one.
///
/// `y_k = a (x_k + x_{k-1}) + b y_{k-1}` with `a = K/(1+K)`,
/// `b = (1-K)/(1+K)`, `K = pi * fc * dt`.
#[derive(Debug, Clone)]
pub struct LowPassFilter {
    a: f64,
    b: f64,
    x_prev: f64,
    y_prev: f64,
}

impl LowPassFilter {
    /// `cutoff_hz` must stay below `1/(4 dt)`; callers validate via
    /// [`CompensatorConfig::validate`].
    pub fn new(cutoff_hz: f64, dt: SimDuration) -> Self {
        let k = std::f64::consts::PI * cutoff_hz * dt.as_secs_f64();
        Self { a: k / (1.0 + k), b: (1.0 - k) / (1.0 + k), x_prev: 0.0, y_prev: 0.0 }
    }

    pub fn step(&mut self, x: f64) -> f64 {
        let y = self.a * (x + self.x_prev) + self.b * self.y_prev;
        self.x_prev = x;
        self.y_prev = y;
        y
    }

    /// The next output as an affine function of the next input:
    /// `y = slope * x + offset` given the current state. Used by
    /// algebraic (delay-free) interface solves.
    pub fn affine(&self) -> (f64, f64) {
        (self.a, self.a * self.x_prev + self.b * self.y_prev)
    }
}

/// Polynomial extrapolation from equally spaced history.
///
/// Order 1 extends the line through the last two samples; order 2 the
/// parabola through the last three. The prediction is evaluated `horizon`
/// past the newest sample. Exact on polynomials up to the given order.
pub fn extrapolate(
    history: &[f64],
    dt: SimDuration,
    order: u8,
    horizon: SimDuration,
) -> Result<f64, CompensationError> {
    let needed = order as usize + 1;
    if history.len() < needed {
        return Err(CompensationError::InsufficientHistory { needed, have: history.len() });
    }
    let h = horizon.as_secs_f64() / dt.as_secs_f64();
    let last = history.len() - 1;
    match order {
        1 => {
            let (y0, y1) = (history[last - 1], history[last]);
            Ok(y1 + h * (y1 - y0))
        }
        2 => {
            let (y0, y1, y2) = (history[last - 2], history[last - 1], history[last]);
            // Newton forward differences around the newest sample.
            let d1 = y2 - y1;
            let d2 = y2 - 2.0 * y1 + y0;
            Ok(y2 + h * d1 + h * (h + 1.0) / 2.0 * d2)
        }
        other => Err(CompensationError::InvalidConfig(format!(
            "extrapolation order must be 1 or 2, got {other}"
        ))),
    }
}

/// Phase advance calibration at a fixed fundamental.
///
/// A sliding single-frequency correlation over exactly one period extracts
/// the fundamental phasor of the input; the phasor is rotated by
/// `theta = 2 pi f0 advance` and re-synthesized in the time domain. Until
/// one full period of samples has been seen the input passes through
/// unchanged and the output is flagged as warming up.
#[derive(Debug, Clone)]
pub struct PhaseAdvance {
    omega: f64,
    theta: f64,
    dt_s: f64,
    window: Vec<f64>,
    fill: usize,
    next: usize,
    sample_index: u64,
}

impl PhaseAdvance {
    pub fn new(f0_hz: f64, advance: SimDuration, dt: SimDuration) -> Self {
        let period_samples = (1.0 / (f0_hz * dt.as_secs_f64())).round().max(1.0) as usize;
        Self {
            omega: 2.0 * std::f64::consts::PI * f0_hz,
            theta: 2.0 * std::f64::consts::PI * f0_hz * advance.as_secs_f64(),
            dt_s: dt.as_secs_f64(),
            window: vec![0.0; period_samples],
            fill: 0,
            next: 0,
            sample_index: 0,
        }
    }

    /// Samples needed before the output is valid.
    pub fn warmup_samples(&self) -> usize {
        self.window.len()
    }

    /// Pushes one sample; returns the rotated output and whether it is
    /// valid yet (false during warm-up, where the input passes through).
    pub fn step(&mut self, x: f64) -> (f64, bool) {
        self.window[self.next] = x;
        self.next = (self.next + 1) % self.window.len();
        self.fill = (self.fill + 1).min(self.window.len());
        self.sample_index += 1;
        if self.fill < self.window.len() {
            return (x, false);
        }
        let n = self.window.len();
        // Newest sample has absolute index sample_index - 1; the window
        // holds the n most recent samples ending there.
        let newest = self.sample_index - 1;
        let (mut re, mut im) = (0.0, 0.0);
        for k in 0..n {
            // window slot order: self.next is the oldest sample
            let sample = self.window[(self.next + k) % n];
            let t = (newest - (n - 1 - k) as u64) as f64 * self.dt_s;
            let angle = self.omega * t;
            re += sample * angle.cos();
            im += sample * angle.sin();
        }
        let scale = 2.0 / n as f64;
        let (a, b) = (re * scale, im * scale);
        // x_fund(t) = a cos(wt) + b sin(wt); rotate phase by +theta.
        let t_now = newest as f64 * self.dt_s;
        let angle = self.omega * t_now + self.theta;
        (a * angle.cos() + b * angle.sin(), true)
    }
}

/// Stateful compensator applying one [`CompensatorConfig`].
#[derive(Debug, Clone)]
pub enum Compensator {
    None,
    LowPass(LowPassFilter),
    Extrapolate { order: u8, horizon: SimDuration, dt: SimDuration, history: Vec<f64> },
    PhaseAdvance(PhaseAdvance),
}

impl Compensator {
    pub fn new(config: &CompensatorConfig, dt: SimDuration) -> Result<Self, CompensationError> {
        config.validate(dt)?;
        Ok(match config {
            CompensatorConfig::None => Compensator::None,
            CompensatorConfig::LowPass { cutoff_hz } => {
                Compensator::LowPass(LowPassFilter::new(*cutoff_hz, dt))
            }
            CompensatorConfig::Extrapolate { order, horizon } => Compensator::Extrapolate {
                order: *order,
                horizon: *horizon,
                dt,
                history: Vec::new(),
            },
            CompensatorConfig::PhaseAdvance { f0_hz, advance } => {
                Compensator::PhaseAdvance(PhaseAdvance::new(*f0_hz, *advance, dt))
            }
        })
    }

    /// Processes one feedback sample. Before an extrapolator or phase
    /// advancer has enough history, the sample passes through unchanged.
    pub fn step(&mut self, x: f64) -> f64 {
        match self {
            Compensator::None => x,
            Compensator::LowPass(filter) => filter.step(x),
            Compensator::Extrapolate { order, horizon, dt, history } => {
                history.push(x);
                let keep = *order as usize + 1;
                if history.len() > keep {
                    let drop = history.len() - keep;
                    history.drain(..drop);
                }
                extrapolate(history, *dt, *order, *horizon).unwrap_or(x)
            }
            Compensator::PhaseAdvance(rotator) => rotator.step(x).0,
        }
    }

    /// Whether outputs are still in the warm-up window.
    pub fn warming_up(&self) -> bool {
        match self {
            Compensator::PhaseAdvance(r) => r.fill < r.window.len(),
            Compensator::Extrapolate { order, history, .. } => history.len() < *order as usize + 1,
            _ => false,
        }
    }
}
