//! Sparse task losses, the scale-invariant log error and the
//! uncertainty-weighted multi-task combination.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::depth::DepthMap;
use crate::tensor::{Tape, Tensor, TensorError, Var};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("prediction is {pred:?} but ground truth is {gt:?}")]
    SizeMismatch { pred: (usize, usize), gt: (usize, usize) },
    #[error("no pixel is valid in both prediction and ground truth")]
    EmptyIntersection,
    #[error("non-positive depth {value} at valid pixel {index}")]
    NonPositiveDepth { index: usize, value: f64 },
}

/// Mean squared error over the pixels where `mask` is set.
pub fn sparse_mse(tape: &mut Tape, pred: Var, target: &[f64], mask: &[bool]) -> Result<Var, TensorError> {
    let shape = tape.value(pred).shape().to_vec();
    let target = tape.constant(Tensor::new(shape, target.to_vec())?);
    let diff = tape.sub(pred, target)?;
    let sq = tape.square(diff)?;
    tape.mean(sq, Some(mask))
}

/// Mean softmax cross-entropy over valid pixels of `N x n_cls x H x W` logits.
pub fn sparse_softmax_ce(tape: &mut Tape, logits: Var, labels: &[usize], mask: &[bool]) -> Result<Var, TensorError> {
    tape.sparse_softmax_ce(logits, labels, mask)
}

/// Scale-invariant log error of one depth map.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SilogScore {
    /// Variance of the per-pixel log differences.
    pub raw: f64,
    /// `100 * sqrt(raw)`, the convention used by public leaderboards.
    pub scaled: f64,
    pub pixels: usize,
}

/// Scale-invariant log error over pixels valid in both maps.
pub fn silog(pred: &DepthMap, gt: &DepthMap) -> Result<SilogScore, LossError> {
    if (pred.height, pred.width) != (gt.height, gt.width) {
        return Err(LossError::SizeMismatch {
            pred: (pred.height, pred.width),
            gt: (gt.height, gt.width),
        });
    }
    let mut n = 0usize;
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for i in 0..gt.depth.len() {
        if !(gt.valid[i] && pred.valid[i]) {
            continue;
        }
        for value in [gt.depth[i], pred.depth[i]] {
            if value.is_nan() || value <= 0.0 {
                return Err(LossError::NonPositiveDepth { index: i, value });
            }
        }
        let diff = gt.depth[i].ln() - pred.depth[i].ln();
        sum += diff;
        sum_sq += diff * diff;
        n += 1;
    }
    if n == 0 {
        return Err(LossError::EmptyIntersection);
    }
    let nf = n as f64;
    let raw = (sum_sq / nf - sum * sum / (nf * nf)).max(0.0);
    Ok(SilogScore {
        raw,
        scaled: 100.0 * raw.sqrt(),
        pixels: n,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum WeightingMode {
    /// Plain sum of the task losses.
    Equal,
    /// Fixed hand-tuned weights.
    Manual { w_reg: f64, w_cls: f64 },
    /// Learned log-variances `s_reg`, `s_cls`.
    Learned,
}

/// Task weighting state. In learned mode `s = ln(sigma^2)` and
/// `w_reg = 0.5 exp(-s_reg)`, `w_cls = exp(-s_cls)`, `r = 0.5 s`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskWeights {
    pub s_reg: f64,
    pub s_cls: f64,
    pub mode: WeightingMode,
}

/// Weights and regularizers derived from [`TaskWeights`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DerivedWeights {
    pub w_reg: f64,
    pub w_cls: f64,
    pub r_reg: f64,
    pub r_cls: f64,
}

impl TaskWeights {
    pub fn learned(initial_s: f64) -> Self {
        Self {
            s_reg: initial_s,
            s_cls: initial_s,
            mode: WeightingMode::Learned,
        }
    }

    pub fn equal() -> Self {
        Self {
            s_reg: 0.0,
            s_cls: 0.0,
            mode: WeightingMode::Equal,
        }
    }

    pub fn manual(w_reg: f64, w_cls: f64) -> Self {
        Self {
            s_reg: 0.0,
            s_cls: 0.0,
            mode: WeightingMode::Manual { w_reg, w_cls },
        }
    }

    pub fn is_learned(&self) -> bool {
        self.mode == WeightingMode::Learned
    }

    pub fn derived(&self) -> DerivedWeights {
        match self.mode {
            WeightingMode::Equal => DerivedWeights {
                w_reg: 1.0,
                w_cls: 1.0,
                r_reg: 0.0,
                r_cls: 0.0,
            },
            WeightingMode::Manual { w_reg, w_cls } => DerivedWeights {
                w_reg,
                w_cls,
                r_reg: 0.0,
                r_cls: 0.0,
            },
            WeightingMode::Learned => DerivedWeights {
                w_reg: 0.5 * (-self.s_reg).exp(),
                w_cls: (-self.s_cls).exp(),
                r_reg: 0.5 * self.s_reg,
                r_cls: 0.5 * self.s_cls,
            },
        }
    }

    /// Task variances `sigma^2 = exp(s)` as `(reg, cls)`.
    pub fn variances(&self) -> (f64, f64) {
        (self.s_reg.exp(), self.s_cls.exp())
    }
}

/// Scalar values of one multi-task loss evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_reg: f64,
    pub l_cls: f64,
    pub w_reg: f64,
    pub w_cls: f64,
    pub r_reg: f64,
    pub r_cls: f64,
    pub l_mt: f64,
    pub valid_pixel_count: usize,
}

impl LossBreakdown {
    /// `w_reg * l_reg + r_reg + w_cls * l_cls + r_cls`, evaluated left to right.
    pub fn recompose(&self) -> f64 {
        self.w_reg * self.l_reg + self.r_reg + self.w_cls * self.l_cls + self.r_cls
    }
}

/// The recorded multi-task objective together with the weight leaves it depends on.
#[derive(Clone, Copy, Debug)]
pub struct CombinedLoss {
    pub total: Var,
    pub breakdown: LossBreakdown,
    pub s_reg: Option<Var>,
    pub s_cls: Option<Var>,
}

/// Records `w * l` and `r` for one task; returns both handles and their values.
fn weighted_parts(tape: &mut Tape, loss: Var, s: Var, factor: f64) -> Result<(Var, Var, f64, f64), TensorError> {
    let neg = tape.neg(s)?;
    let e = tape.exp(neg)?;
    let w = if factor == 1.0 { e } else { tape.scale(e, factor)? };
    let r = tape.scale(s, 0.5)?;
    let wl = tape.mul(w, loss)?;
    let w_val = tape.value(w).values()[0];
    let r_val = tape.value(r).values()[0];
    Ok((wl, r, w_val, r_val))
}

/// Builds `L_mt = w_reg L_reg + r_reg + w_cls L_cls + r_cls` on the tape.
///
/// In learned mode `s_reg` and `s_cls` become trainable leaves; their
/// gradients are read back through the returned handles. Without a
/// classification loss only the regression terms are present.
pub fn combine(
    tape: &mut Tape,
    l_reg: Var,
    l_cls: Option<Var>,
    weights: &TaskWeights,
    valid_pixel_count: usize,
) -> Result<CombinedLoss, TensorError> {
    let reg_val = scalar_value(tape, l_reg)?;
    let cls_val = l_cls.map(|v| scalar_value(tape, v)).transpose()?;
    let mut b = LossBreakdown {
        l_reg: reg_val,
        l_cls: cls_val.unwrap_or(0.0),
        w_reg: 1.0,
        w_cls: 0.0,
        r_reg: 0.0,
        r_cls: 0.0,
        l_mt: 0.0,
        valid_pixel_count,
    };
    let (mut s_reg, mut s_cls) = (None, None);
    let total = match weights.mode {
        WeightingMode::Equal => {
            b.w_cls = if l_cls.is_some() { 1.0 } else { 0.0 };
            match l_cls {
                Some(c) => tape.add(l_reg, c)?,
                None => l_reg,
            }
        }
        WeightingMode::Manual { w_reg, w_cls } => {
            b.w_reg = w_reg;
            let reg = tape.scale(l_reg, w_reg)?;
            match l_cls {
                Some(c) => {
                    b.w_cls = w_cls;
                    let cls = tape.scale(c, w_cls)?;
                    tape.add(reg, cls)?
                }
                None => reg,
            }
        }
        WeightingMode::Learned => {
            let s = tape.param(Tensor::scalar(weights.s_reg));
            s_reg = Some(s);
            let (wl, r, w_val, r_val) = weighted_parts(tape, l_reg, s, 0.5)?;
            b.w_reg = w_val;
            b.r_reg = r_val;
            let mut acc = tape.add(wl, r)?;
            if let Some(c) = l_cls {
                let s = tape.param(Tensor::scalar(weights.s_cls));
                s_cls = Some(s);
                let (wl, r, w_val, r_val) = weighted_parts(tape, c, s, 1.0)?;
                b.w_cls = w_val;
                b.r_cls = r_val;
                acc = tape.add(acc, wl)?;
                acc = tape.add(acc, r)?;
            }
            acc
        }
    };
    b.l_mt = scalar_value(tape, total)?;
    Ok(CombinedLoss {
        total,
        breakdown: b,
        s_reg,
        s_cls,
    })
}

fn scalar_value(tape: &Tape, v: Var) -> Result<f64, TensorError> {
    tape.value(v)
        .item()
        .ok_or_else(|| TensorError::NonScalarLoss(tape.value(v).shape().to_vec()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_leaf(t: &mut Tape, v: f64) -> Var {
        t.param(Tensor::scalar(v))
    }

    #[test]
    fn learned_at_zero_log_variance() {
        let mut t = Tape::new();
        let (r, c) = (scalar_leaf(&mut t, 2.0), scalar_leaf(&mut t, 4.0));
        let w = TaskWeights {
            s_reg: 0.0,
            s_cls: 0.0,
            mode: WeightingMode::Learned,
        };
        let out = combine(&mut t, r, Some(c), &w, 1).unwrap();
        assert_eq!(out.breakdown.l_mt, 5.0);
        assert_eq!(out.breakdown.recompose(), 5.0);
    }

    #[test]
    fn equal_mode_is_plain_sum() {
        let mut t = Tape::new();
        let (r, c) = (scalar_leaf(&mut t, 2.0), scalar_leaf(&mut t, 4.0));
        let out = combine(&mut t, r, Some(c), &TaskWeights::equal(), 1).unwrap();
        assert_eq!(out.breakdown.l_mt, 6.0);
        assert!(out.s_reg.is_none());
        t.backward(out.total).unwrap();
        assert_eq!(t.grad(r).unwrap(), &[1.0]);
        assert_eq!(t.grad(c).unwrap(), &[1.0]);
    }

    #[test]
    fn manual_mode_weights_without_regularizers() {
        let mut t = Tape::new();
        let (r, c) = (scalar_leaf(&mut t, 2.0), scalar_leaf(&mut t, 4.0));
        let out = combine(&mut t, r, Some(c), &TaskWeights::manual(5.0, 1.0), 1).unwrap();
        assert_eq!(out.breakdown.l_mt, 14.0);
        assert_eq!(out.breakdown.r_reg, 0.0);
    }

    #[test]
    fn single_task_has_no_classification_terms() {
        let mut t = Tape::new();
        let r = scalar_leaf(&mut t, 2.0);
        let out = combine(&mut t, r, None, &TaskWeights::learned(1.0), 1).unwrap();
        assert!(out.s_cls.is_none());
        let expected = 0.5 * (-1.0f64).exp() * 2.0 + 0.5;
        assert!((out.breakdown.l_mt - expected).abs() < 1e-15);
        assert_eq!(out.breakdown.w_cls, 0.0);
    }

    #[test]
    fn derived_weights_match_definitions() {
        let w = TaskWeights::learned(1.0);
        let d = w.derived();
        assert_eq!(d.w_reg, 0.5 * (-1.0f64).exp());
        assert_eq!(d.w_cls, (-1.0f64).exp());
        assert_eq!(d.r_reg, 0.5);
        let (vr, _) = w.variances();
        assert!((vr.ln() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn sparse_mse_ignores_masked_pixels() {
        let mut t = Tape::new();
        let pred = t.param(Tensor::new(vec![1, 1, 1, 2], vec![0.5, 100.0]).unwrap());
        let l = sparse_mse(&mut t, pred, &[0.0, 0.0], &[true, false]).unwrap();
        assert_eq!(t.value(l).item(), Some(0.25));
        let same = t.constant(Tensor::new(vec![2], vec![0.3, 0.4]).unwrap());
        let l = sparse_mse(&mut t, same, &[0.3, 0.4], &[true, true]).unwrap();
        assert_eq!(t.value(l).item(), Some(0.0));
        assert!(sparse_mse(&mut t, same, &[0.3, 0.4], &[false, false]).is_err());
    }

    #[test]
    fn silog_hand_case() {
        let e = std::f64::consts::E;
        let gt = DepthMap::dense(1, 2, vec![e, e]).unwrap();
        let pred = DepthMap::dense(1, 2, vec![1.0, e * e]).unwrap();
        let s = silog(&pred, &gt).unwrap();
        assert!((s.raw - 1.0).abs() < 1e-12);
        assert!((s.scaled - 100.0).abs() < 1e-9);
    }

    #[test]
    fn silog_identity_and_scale() {
        let gt = DepthMap::from_depths(2, 2, vec![3.0, 0.0, 7.5, 12.0]).unwrap();
        assert_eq!(silog(&gt, &gt).unwrap().raw, 0.0);
        let scaled = DepthMap::dense(2, 2, vec![9.0, 1.0, 22.5, 36.0]).unwrap();
        assert!(silog(&scaled, &gt).unwrap().raw < 1e-15);
    }

    #[test]
    fn silog_errors() {
        let gt = DepthMap::invalid(2, 2);
        let pred = DepthMap::dense(2, 2, vec![1.0; 4]).unwrap();
        assert_eq!(silog(&pred, &gt), Err(LossError::EmptyIntersection));
        let other = DepthMap::dense(1, 4, vec![1.0; 4]).unwrap();
        assert!(matches!(silog(&other, &pred), Err(LossError::SizeMismatch { .. })));
        let mut bad = pred.clone();
        bad.depth[1] = -1.0;
        assert!(matches!(
            silog(&bad, &pred),
            Err(LossError::NonPositiveDepth { index: 1, .. })
        ));
    }
}
