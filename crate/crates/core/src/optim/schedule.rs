use serde::{Deserialize, Serialize};

use super::OptimError;

/// `alpha(t) = initial * (1 - t / total)^power`, reaching zero at `t = total`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolySchedule {
    pub initial: f64,
    pub power: f64,
    pub total: usize,
}

impl PolySchedule {
    pub fn new(initial: f64, total: usize) -> Self {
        Self {
            initial,
            power: 0.9,
            total,
        }
    }

    pub fn lr_at(&self, t: usize) -> Result<f64, OptimError> {
        if t > self.total || self.total == 0 {
            return Err(OptimError::OutOfSchedule { t, total: self.total });
        }
        let remaining = 1.0 - t as f64 / self.total as f64;
        Ok(self.initial * remaining.powf(self.power))
    }
}
