use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::data::{Dataset, Rgb};
use crate::depth::{DepthMap, IntervalScheme};
use crate::losses::{silog, LossError};
use crate::model::{decode_regression, Heads, Model};
use crate::tensor::Tensor;

/// Raw head outputs for one image, at the image's resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadPredictions {
    /// Normalized log-space depth; clamped to `[0, 1]` before decoding.
    pub regression: Vec<f64>,
    /// Arg-max interval per pixel, when a classification head exists.
    pub classes: Option<Vec<usize>>,
}

/// Anything that maps an image to head predictions.
pub trait DepthPredictor {
    fn predict(&self, image: &Rgb) -> Result<HeadPredictions, HarnessError>;
}

impl DepthPredictor for Model {
    fn predict(&self, image: &Rgb) -> Result<HeadPredictions, HarnessError> {
        let input = Tensor::new(vec![1, 3, image.height, image.width], image.values.clone())?;
        let heads = if self.has_aux_head() {
            Heads::Both
        } else {
            Heads::RegOnly
        };
        let out = self.infer(&input, heads)?;
        let classes = out.class_logits.map(|logits| argmax_channels(&logits));
        Ok(HeadPredictions {
            regression: out.regression.into_values(),
            classes,
        })
    }
}

/// Per-pixel arg-max over the channel axis of a `1 x C x H x W` tensor.
/// Ties resolve to the lowest index.
pub fn argmax_channels(logits: &Tensor) -> Vec<usize> {
    let s = logits.shape();
    let (c, plane) = (s[1], s[2] * s[3]);
    let v = logits.values();
    (0..plane)
        .map(|i| {
            let mut best = 0;
            for k in 1..c {
                if v[k * plane + i] > v[best * plane + i] {
                    best = k;
                }
            }
            best
        })
        .collect()
}

/// Mean scaled scale-invariant log error over a validation set.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationScores {
    pub silog_reg: f64,
    /// Score of the classification head decoded at interval midpoints.
    pub silog_cls: Option<f64>,
    /// Samples with at least one ground-truth pixel.
    pub samples: usize,
}

/// Scores both heads against sparse ground truth, averaging the per-image
/// scaled error over images that have ground truth.
pub fn validate<P: DepthPredictor + ?Sized>(
    predictor: &P,
    val_set: &Dataset,
    scheme: &IntervalScheme,
) -> Result<ValidationScores, HarnessError> {
    if val_set.is_empty() {
        return Err(HarnessError::EmptyValidation);
    }
    let bounds = scheme.bounds();
    let (mut reg_sum, mut cls_sum, mut n) = (0.0, 0.0, 0usize);
    let mut has_cls = true;
    for sample in &val_set.samples {
        let (h, w) = (sample.height(), sample.width());
        let pred = predictor.predict(&sample.rgb)?;
        let reg = decode_regression(&pred.regression, h, w, &bounds);
        let reg_score = match silog(&reg, &sample.gt) {
            Ok(s) => s,
            Err(LossError::EmptyIntersection) => continue,
            Err(e) => return Err(e.into()),
        };
        reg_sum += reg_score.scaled;
        n += 1;
        match pred.classes {
            Some(classes) => {
                let depth = classes
                    .iter()
                    .map(|&k| scheme.dequantize(k))
                    .collect::<Result<Vec<_>, _>>()?;
                let map = DepthMap {
                    height: h,
                    width: w,
                    depth,
                    valid: vec![true; h * w],
                };
                cls_sum += silog(&map, &sample.gt)?.scaled;
            }
            None => has_cls = false,
        }
    }
    if n == 0 {
        return Err(HarnessError::EmptyValidation);
    }
    Ok(ValidationScores {
        silog_reg: reg_sum / n as f64,
        silog_cls: has_cls.then(|| cls_sum / n as f64),
        samples: n,
    })
}
