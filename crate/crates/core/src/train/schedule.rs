//! Learning-rate schedules.

use serde::{Deserialize, Serialize};

use super::TrainError;

/// Ratio of peak to starting learning rate for the one-cycle schedule.
pub const ONECYCLE_DIVISOR: f64 = 25.0;
pub const DEFAULT_PEAK_FRACTION: f64 = 0.2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LrSchedule {
    /// Linear warm-up from the base rate to the peak over the first
    /// `peak_fraction` of steps, then linear decay back to the base rate.
    OneCycle { peak_fraction: f64 },
    /// The peak rate multiplied by `factors[i]` from step `boundaries[i]` on.
    Piecewise { boundaries: Vec<u64>, factors: Vec<f64> },
    Constant,
}

impl Default for LrSchedule {
    fn default() -> Self {
        LrSchedule::OneCycle {
            peak_fraction: DEFAULT_PEAK_FRACTION,
        }
    }
}

impl LrSchedule {
    pub fn validate(&self) -> Result<(), TrainError> {
        match self {
            LrSchedule::OneCycle { peak_fraction } if !(*peak_fraction > 0.0 && *peak_fraction < 1.0) => {
                Err(TrainError::Plan(format!("peak fraction {peak_fraction} outside (0, 1)")))
            }
            LrSchedule::Piecewise { boundaries, factors } => {
                if boundaries.len() != factors.len() {
                    return Err(TrainError::Plan("piecewise boundaries and factors differ in length".into()));
                }
                if boundaries.windows(2).any(|w| w[0] >= w[1]) || factors.iter().any(|f| !(f.is_finite() && *f >= 0.0)) {
                    return Err(TrainError::Plan("piecewise boundaries must increase and factors be nonnegative".into()));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

/// `a` at `t = 0`, `b` at `t = 1`, exactly.
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    if t >= 1.0 {
        b
    } else {
        a + (b - a) * t
    }
}

/// Step at which the one-cycle schedule peaks.
pub fn peak_step(total_steps: u64, peak_fraction: f64) -> u64 {
    ((peak_fraction * total_steps as f64).round() as u64).min(total_steps.saturating_sub(1))
}

pub fn learning_rate(
    schedule: &LrSchedule,
    peak_lr: f64,
    base_lr: f64,
    total_steps: u64,
    step: u64,
) -> Result<f64, TrainError> {
    if step >= total_steps {
        return Err(TrainError::Step { step, total: total_steps });
    }
    Ok(match schedule {
        LrSchedule::Constant => peak_lr,
        LrSchedule::Piecewise { boundaries, factors } => {
            let k = boundaries.iter().take_while(|&&b| step >= b).count();
            if k == 0 {
                peak_lr
            } else {
                peak_lr * factors[k - 1]
            }
        }
        LrSchedule::OneCycle { peak_fraction } => {
            let p = peak_step(total_steps, *peak_fraction);
            if step <= p {
                if p == 0 {
                    peak_lr
                } else {
                    lerp(base_lr, peak_lr, step as f64 / p as f64)
                }
            } else {
                let span = (total_steps - 1 - p) as f64;
                lerp(peak_lr, base_lr, (step - p) as f64 / span)
            }
        }
    })
}
