use serde::{Deserialize, Serialize};

use super::TrainingError;

/// Linear warmup from 0 to the base rate, then a half cosine down to 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSpec {
    pub total_steps: u64,
    pub warmup_fraction: f64,
    pub base_lr: f64,
}

impl ScheduleSpec {
    pub fn new(total_steps: u64, warmup_fraction: f64, base_lr: f64) -> Result<Self, TrainingError> {
        if !(0.0..1.0).contains(&warmup_fraction) {
            return Err(TrainingError::Config(format!("warmup fraction {warmup_fraction} must lie in [0, 1)")));
        }
        if !(base_lr >= 0.0 && base_lr.is_finite()) {
            return Err(TrainingError::Config(format!("learning rate {base_lr} must be finite and non-negative")));
        }
        Ok(ScheduleSpec {
            total_steps,
            warmup_fraction,
            base_lr,
        })
    }

    pub fn warmup_steps(&self) -> u64 {
        (self.warmup_fraction * self.total_steps as f64).round() as u64
    }

    pub fn lr_at(&self, step: u64) -> Result<f64, TrainingError> {
        lr_at(step, self)
    }
}

pub fn lr_at(step: u64, spec: &ScheduleSpec) -> Result<f64, TrainingError> {
    let total = spec.total_steps;
    if step > total {
        return Err(TrainingError::StepBeyondSchedule { step, total });
    }
    let warm = spec.warmup_steps();
    if step < warm {
        return Ok(spec.base_lr * step as f64 / warm as f64);
    }
    if total == warm {
        return Ok(0.0);
    }
    let progress = (step - warm) as f64 / (total - warm) as f64;
    Ok(spec.base_lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()))
}
