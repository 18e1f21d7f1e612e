//! Scanline-style subsampling of dense depth, imitating projected LiDAR returns.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::DataError;
use crate::depth::DepthMap;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SparsityModel {
    /// Mean fraction of all image pixels that keep their depth.
    pub target_coverage: f64,
    /// Preferred row spacing between scanlines.
    pub line_spacing: usize,
    /// Maximum offset, in rows, applied to each scanline position.
    pub jitter: usize,
    /// Lower bound on the per-sample coverage.
    pub coverage_floor: f64,
}

impl Default for SparsityModel {
    fn default() -> Self {
        Self {
            target_coverage: 0.12,
            line_spacing: 3,
            jitter: 1,
            coverage_floor: 0.008,
        }
    }
}

impl SparsityModel {
    pub fn validate(&self) -> Result<(), DataError> {
        let ok = (0.0..=1.0).contains(&self.target_coverage)
            && (0.0..=1.0).contains(&self.coverage_floor)
            && self.line_spacing >= 1;
        if !ok {
            return Err(DataError::InvalidSpec(format!("invalid sparsity model {self:?}")));
        }
        Ok(())
    }
}

/// Keeps depth on jittered scanlines below the top `sky_fraction` of rows.
///
/// Each sample draws its own coverage as `target * U(0.6, 1.4)`, floored at
/// `coverage_floor`, so the mean over many samples matches the target.
pub fn sparsify(
    dense: &DepthMap,
    model: &SparsityModel,
    sky_fraction: f64,
    rng: &mut ChaCha8Rng,
) -> Result<DepthMap, DataError> {
    model.validate()?;
    if !(0.0..=0.5).contains(&sky_fraction) {
        return Err(DataError::InvalidSpec("sky_fraction must lie in [0, 0.5]".into()));
    }
    let (h, w) = (dense.height, dense.width);
    let sky_rows = ((sky_fraction * h as f64).ceil() as usize).min(h);
    let mut out = DepthMap::invalid(h, w);
    let available = (sky_rows..h)
        .flat_map(|r| (0..w).map(move |c| r * w + c))
        .filter(|&i| dense.valid[i])
        .count();
    if available == 0 {
        return Ok(out);
    }

    let coverage = (model.target_coverage * rng.gen_range(0.6..1.4)).max(model.coverage_floor);
    let wanted = coverage * (h * w) as f64;
    let keep = |out: &mut DepthMap, i: usize| {
        if dense.valid[i] {
            out.depth[i] = dense.depth[i];
            out.valid[i] = true;
        }
    };
    if wanted >= available as f64 {
        for i in sky_rows * w..h * w {
            keep(&mut out, i);
        }
        return Ok(out);
    }

    let q = wanted / available as f64;
    let spacing = model.line_spacing.min((1.0 / q).floor() as usize).max(1);
    let mut lines = Vec::new();
    let mut base = sky_rows + rng.gen_range(0..spacing);
    while base < h {
        let j = model.jitter.min(spacing.saturating_sub(1) / 2);
        let offset = if j > 0 { rng.gen_range(0..=2 * j) } else { j };
        let row = (base + offset).saturating_sub(j).clamp(sky_rows, h - 1);
        if lines.last() != Some(&row) {
            lines.push(row);
        }
        base += spacing;
    }
    let line_pixels: usize = lines
        .iter()
        .map(|&r| (0..w).filter(|&c| dense.valid[r * w + c]).count())
        .sum();
    let p = (wanted / line_pixels.max(1) as f64).min(1.0);
    for &r in &lines {
        for c in 0..w {
            if rng.gen::<f64>() < p {
                keep(&mut out, r * w + c);
            }
        }
    }
    Ok(out)
}
