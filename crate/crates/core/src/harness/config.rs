use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::data::{AugmentSpec, DatasetSpec};
use crate::depth::{ClipPlanes, DepthBounds, IntervalScheme};
use crate::losses::{TaskWeights, WeightingMode};
use crate::model::{Heads, ModelConfig, ENCODER_STRIDE};
use crate::optim::{AdamConfig, SweepConfig};

/// Hand-tuned weights used by the manual weighting preset.
pub const MANUAL_WEIGHTS: (f64, f64) = (5.0, 1.0);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LrConfig {
    /// Initial rate; `None` runs a range test on a fresh model copy first.
    pub initial: Option<f64>,
    pub power: f64,
    pub sweep: SweepConfig,
}

impl Default for LrConfig {
    fn default() -> Self {
        Self {
            initial: None,
            power: 0.9,
            sweep: SweepConfig::default(),
        }
    }
}

/// Complete description of one training run.
///
/// The interval count lives only in `model.n_cls`, and `model.aux_head`
/// decides whether the classification task exists at all.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub weighting: WeightingMode,
    /// Starting value of both log-variances in learned mode.
    pub initial_s: f64,
    pub bounds: DepthBounds,
    pub planes: ClipPlanes,
    pub augment: AugmentSpec,
    pub batch_size: usize,
    pub iterations: usize,
    pub lr: LrConfig,
    pub adam: AdamConfig,
    pub seed: u64,
    pub validation_interval: usize,
    /// Batches assembled ahead of the optimizer by a worker thread; 0 disables it.
    pub prefetch: usize,
    pub data: DatasetSpec,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            weighting: WeightingMode::Learned,
            initial_s: 1.0,
            bounds: DepthBounds::default(),
            planes: ClipPlanes::default(),
            augment: AugmentSpec {
                crop: (32, 32),
                flip_probability: 0.5,
            },
            batch_size: 16,
            iterations: 2000,
            lr: LrConfig::default(),
            adam: AdamConfig::default(),
            seed: 0,
            validation_interval: 100,
            prefetch: 2,
            data: DatasetSpec::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn heads(&self) -> Heads {
        if self.model.aux_head {
            Heads::Both
        } else {
            Heads::RegOnly
        }
    }

    pub fn task_weights(&self) -> TaskWeights {
        match self.weighting {
            WeightingMode::Learned => TaskWeights::learned(self.initial_s),
            WeightingMode::Equal => TaskWeights::equal(),
            WeightingMode::Manual { w_reg, w_cls } => TaskWeights::manual(w_reg, w_cls),
        }
    }

    /// Interval scheme shared by the labels and the classification head.
    /// Reg-only runs still label their data, with at least two intervals.
    pub fn scheme(&self) -> Result<IntervalScheme, HarnessError> {
        Ok(IntervalScheme::new(self.model.n_cls.max(2), self.bounds, self.planes)?)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |msg: String| Err(HarnessError::Config(msg));
        self.model.validate()?;
        self.scheme()?;
        self.data.validate()?;
        let (ch, cw) = self.augment.crop;
        if ch % ENCODER_STRIDE != 0 || cw % ENCODER_STRIDE != 0 || ch == 0 || cw == 0 {
            return bad(format!(
                "crop {ch}x{cw} must be a positive multiple of {ENCODER_STRIDE}"
            ));
        }
        if ch > self.data.scene.height || cw > self.data.scene.width {
            return bad(format!(
                "crop {ch}x{cw} exceeds the {}x{} frames",
                self.data.scene.height, self.data.scene.width
            ));
        }
        if !self.data.scene.height.is_multiple_of(ENCODER_STRIDE)
            || !self.data.scene.width.is_multiple_of(ENCODER_STRIDE)
        {
            return bad(format!("frame size must be a multiple of {ENCODER_STRIDE}"));
        }
        if !(0.0..=1.0).contains(&self.augment.flip_probability) {
            return bad("flip_probability outside [0, 1]".into());
        }
        if self.batch_size == 0 || self.batch_size > self.data.train_samples {
            return bad(format!(
                "batch_size {} must lie in [1, train_samples = {}]",
                self.batch_size, self.data.train_samples
            ));
        }
        if self.validation_interval == 0 {
            return bad("validation_interval must be positive".into());
        }
        if self.data.val_samples == 0 {
            return bad("val_samples must be positive".into());
        }
        if let Some(a) = self.lr.initial {
            if !(a.is_finite() && a > 0.0) {
                return bad(format!("initial learning rate {a} must be positive"));
            }
        }
        if !(self.lr.power.is_finite() && self.lr.power > 0.0) {
            return bad("schedule power must be positive".into());
        }
        if let WeightingMode::Manual { w_reg, w_cls } = self.weighting {
            if !(w_reg > 0.0 && w_cls > 0.0 && w_reg.is_finite() && w_cls.is_finite()) {
                return bad("manual weights must be positive".into());
            }
        }
        if !self.initial_s.is_finite() {
            return bad("initial_s must be finite".into());
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), HarnessError> {
        fs::write(path, self.to_json())?;
        Ok(())
    }
}
