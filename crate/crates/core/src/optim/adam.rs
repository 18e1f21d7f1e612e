use serde::{Deserialize, Serialize};

use super::OptimError;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Coupled L2 decay, folded into the gradient before the moment updates.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
        }
    }
}

/// One parameter tensor handed to [`AdamState::step`].
pub struct ParamSlot<'a> {
    pub values: &'a mut [f64],
    pub grad: &'a [f64],
    /// Whether weight decay applies to this slot.
    pub decay: bool,
}

/// Moment accumulators per parameter slot, allocated on the first step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// Applies one update with learning rate `lr`. Nothing is modified on error.
    pub fn step(&mut self, slots: &mut [ParamSlot<'_>], lr: f64) -> Result<(), OptimError> {
        if !(lr.is_finite() && lr >= 0.0) {
            return Err(OptimError::InvalidRate(lr));
        }
        let fresh = self.m.is_empty();
        if !fresh && self.m.len() != slots.len() {
            return Err(OptimError::SlotCount {
                expected: self.m.len(),
                actual: slots.len(),
            });
        }
        for (i, s) in slots.iter().enumerate() {
            let state = if fresh { s.values.len() } else { self.m[i].len() };
            if s.grad.len() != s.values.len() || state != s.values.len() {
                return Err(OptimError::SlotLength {
                    slot: i,
                    values: s.values.len(),
                    grads: s.grad.len(),
                    state,
                });
            }
            if let Some((index, &value)) = s.grad.iter().enumerate().find(|(_, g)| !g.is_finite()) {
                return Err(OptimError::NonFiniteGradient { slot: i, index, value });
            }
        }
        if fresh {
            self.m = slots.iter().map(|s| vec![0.0; s.values.len()]).collect();
            self.v = self.m.clone();
        }

        let AdamConfig {
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.config;
        self.step += 1;
        let t = self.step as f64;
        let c1 = 1.0 - beta1.powf(t);
        let c2 = 1.0 - beta2.powf(t);
        for (i, s) in slots.iter_mut().enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let decay = if s.decay { weight_decay } else { 0.0 };
            for j in 0..s.values.len() {
                let g = s.grad[j] + decay * s.values[j];
                m[j] = beta1 * m[j] + (1.0 - beta1) * g;
                v[j] = beta2 * v[j] + (1.0 - beta2) * g * g;
                let m_hat = m[j] / c1;
                let v_hat = v[j] / c2;
                s.values[j] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
