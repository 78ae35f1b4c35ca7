//! Analytic stability screen for the voltage-type ITM loop.
//!
//! The classical criterion for voltage-type ITM with loop delay requires
//! the impedance ratio |Zs(jw)| / |Zh(jw)| to stay below one. The screen
//! sweeps the ratio over frequency (plus the DC limit) and classifies with
//! a +-1% marginal band so boundary cases are never flaky. For current-type
//! ITM the criterion applies with the ratio inverted.

use crate::phil::PhilError;

/// Series R-L impedance, `Z(jw) = R + jwL`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RlImpedance {
    pub r: f64,
    pub l: f64,
}

impl RlImpedance {
    pub fn resistive(r: f64) -> Self {
        Self { r, l: 0.0 }
    }

    pub fn magnitude_at(&self, omega: f64) -> f64 {
        (self.r * self.r + omega * omega * self.l * self.l).sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.r == 0.0 && self.l == 0.0
    }
}

/// Marginal band half-width on the impedance ratio.
pub const MARGIN_EPSILON: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StabilityPrediction {
    Stable,
    Unstable,
    /// Peak ratio within 1 +- epsilon of the boundary.
    Marginal { max_ratio: f64 },
}

/// Evaluates `max over w in (0, 2 pi f_max]` of |Zs| / |Zh| on a frequency
/// sweep (the ratio of two R-L impedances is monotone in frequency, so the
/// sweep plus the DC limit brackets the supremum).
pub fn predict_itm_stability(
    source_impedance: RlImpedance,
    hut_impedance: RlImpedance,
    f_max_hz: f64,
) -> Result<StabilityPrediction, PhilError> {
    if !(f_max_hz > 0.0) {
        return Err(PhilError::Config("stability sweep needs f_max > 0".into()));
    }
    const SWEEP_POINTS: usize = 1000;
    let mut max_ratio: f64 = 0.0;
    for k in 0..=SWEEP_POINTS {
        // log-spaced from f_max * 1e-6 up to f_max, plus the DC limit
        let omega = if k == 0 {
            0.0
        } else {
            let frac = (k - 1) as f64 / (SWEEP_POINTS - 1) as f64;
            2.0 * std::f64::consts::PI * f_max_hz * 1e-6_f64.powf(1.0 - frac)
        };
        let denom = hut_impedance.magnitude_at(omega);
        if denom == 0.0 {
            return Err(PhilError::DegenerateImpedance { omega });
        }
        max_ratio = max_ratio.max(source_impedance.magnitude_at(omega) / denom);
    }
    Ok(if max_ratio > 1.0 + MARGIN_EPSILON {
        StabilityPrediction::Unstable
    } else if max_ratio < 1.0 - MARGIN_EPSILON {
        StabilityPrediction::Stable
    } else {
        StabilityPrediction::Marginal { max_ratio }
    })
}
