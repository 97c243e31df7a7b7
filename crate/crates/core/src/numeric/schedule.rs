use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Cosine annealing with warm restarts. Period `i` lasts
/// `period0 * period_mult^i` steps.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub min_lr: f64,
    pub period0: u64,
    pub period_mult: u64,
}

impl LrSchedule {
    pub fn constant(lr: f64) -> Self {
        Self {
            base_lr: lr,
            min_lr: lr,
            period0: 1,
            period_mult: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr > 0.0) {
            return Err(Error::config("schedule.base_lr", "must be positive"));
        }
        if !(self.min_lr >= 0.0 && self.min_lr <= self.base_lr) {
            return Err(Error::config("schedule.min_lr", "must lie in [0, base_lr]"));
        }
        if self.period0 == 0 {
            return Err(Error::config("schedule.period0", "must be positive"));
        }
        if self.period_mult == 0 {
            return Err(Error::config("schedule.period_mult", "must be at least 1"));
        }
        Ok(())
    }

    /// Returns (offset into current period, current period length).
    fn locate(&self, step: u64) -> (u64, u64) {
        if self.period_mult == 1 {
            return (step % self.period0, self.period0);
        }
        let mut t = step;
        let mut period = self.period0;
        while t >= period {
            t -= period;
            period = period.saturating_mul(self.period_mult);
        }
        (t, period)
    }
}

pub fn lr_at(schedule: &LrSchedule, step: u64) -> f64 {
    let (t, period) = schedule.locate(step);
    let cos = (std::f64::consts::PI * t as f64 / period as f64).cos();
    schedule.min_lr + 0.5 * (schedule.base_lr - schedule.min_lr) * (1.0 + cos)
}
