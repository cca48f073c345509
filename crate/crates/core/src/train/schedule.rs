//! Linear warmup followed by cosine annealing.

use crate::error::{param_err, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleSpec {
    pub warmup_epochs: usize,
    pub total_epochs: usize,
    pub peak_lr: f64,
    pub floor_lr: f64,
}

impl ScheduleSpec {
    pub fn validate(&self) -> Result<()> {
        if self.warmup_epochs > self.total_epochs {
            return Err(param_err!(
                "warmup ({}) longer than training ({} epochs)",
                self.warmup_epochs,
                self.total_epochs
            ));
        }
        if !(self.peak_lr > 0.0) || !(self.floor_lr >= 0.0) || self.floor_lr > self.peak_lr {
            return Err(param_err!(
                "need 0 <= floor ({}) <= peak ({}) and peak > 0",
                self.floor_lr,
                self.peak_lr
            ));
        }
        Ok(())
    }
}

/// Learning rate used for optimizer step `step` (0-based).
///
/// Warmup ramps `peak * step / W` over the first `W` steps; the cosine
/// phase then runs from `peak` at step `W` down to `floor` at step `T`
/// (the total step count) and stays there.
pub fn lr_at(s: &ScheduleSpec, step: u64, steps_per_epoch: u64) -> f64 {
    let w = s.warmup_epochs as u64 * steps_per_epoch;
    let t = s.total_epochs as u64 * steps_per_epoch;
    if step < w {
        return s.peak_lr * step as f64 / w as f64;
    }
    if t <= w {
        return s.peak_lr;
    }
    let p = ((step - w) as f64 / (t - w) as f64).min(1.0);
    s.floor_lr + (s.peak_lr - s.floor_lr) * 0.5 * (1.0 + libm::cos(std::f64::consts::PI * p))
}
