//! Metric depth, normalized log-space depth and depth-interval labels.
//!
//! Depth `d` in meters is mapped to `ln(d - d_min + 1) / ln(d_max - d_min + 1)`,
//! which sends `[d_min, d_max]` onto `[0, 1]` and spends more resolution close
//! to the camera. Interval labels bin the normalized value uniformly between
//! two clipping planes that sit strictly inside the bounds.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DepthError {
    #[error("depth bounds require 0 <= d_min < d_max, got ({d_min}, {d_max})")]
    InvalidBounds { d_min: f64, d_max: f64 },
    #[error("clip planes require d_min < d_cmin < d_cmax < d_max, got ({d_cmin}, {d_cmax})")]
    InvalidPlanes { d_cmin: f64, d_cmax: f64 },
    #[error("number of intervals must be positive")]
    NoIntervals,
    #[error("depth {0} m is below the lower bound")]
    BelowLowerBound(f64),
    #[error("normalized depth {0} is negative")]
    NegativeEncoded(f64),
    #[error("label {label} out of range for {n_cls} intervals")]
    LabelOutOfRange { label: usize, n_cls: usize },
    #[error("map size mismatch: {0}")]
    SizeMismatch(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DepthBounds {
    pub d_min: f64,
    pub d_max: f64,
}

impl DepthBounds {
    pub fn new(d_min: f64, d_max: f64) -> Result<Self, DepthError> {
        let b = Self { d_min, d_max };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<(), DepthError> {
        let ok = self.d_min.is_finite() && self.d_max.is_finite() && self.d_min >= 0.0;
        if !ok || self.d_min >= self.d_max {
            return Err(DepthError::InvalidBounds {
                d_min: self.d_min,
                d_max: self.d_max,
            });
        }
        Ok(())
    }

    fn log_span(&self) -> f64 {
        (self.d_max - self.d_min + 1.0).ln()
    }

    /// Normalized log-space value of `d`. Depths beyond `d_max` encode above 1.
    pub fn encode(&self, d: f64) -> Result<f64, DepthError> {
        if d.is_nan() || d < self.d_min {
            return Err(DepthError::BelowLowerBound(d));
        }
        Ok((d - self.d_min + 1.0).ln() / self.log_span())
    }

    pub fn decode(&self, encoded: f64) -> Result<f64, DepthError> {
        if encoded.is_nan() || encoded < 0.0 {
            return Err(DepthError::NegativeEncoded(encoded));
        }
        Ok((encoded * self.log_span()).exp() + self.d_min - 1.0)
    }

    /// Regression target: encoded depth clamped to `[0, 1]`.
    pub fn target(&self, d: f64) -> f64 {
        self.encode(d.max(self.d_min)).map_or(0.0, |e| e.min(1.0))
    }
}

impl Default for DepthBounds {
    fn default() -> Self {
        Self {
            d_min: 2.0,
            d_max: 125.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClipPlanes {
    pub d_cmin: f64,
    pub d_cmax: f64,
}

impl Default for ClipPlanes {
    fn default() -> Self {
        Self {
            d_cmin: 2.5,
            d_cmax: 80.0,
        }
    }
}

/// `n_cls` intervals uniformly spaced in normalized log-space between the clip planes.
#[derive(Clone, Debug, PartialEq)]
pub struct IntervalScheme {
    n_cls: usize,
    bounds: DepthBounds,
    planes: ClipPlanes,
    edges: Vec<f64>,
}

impl IntervalScheme {
    pub fn new(n_cls: usize, bounds: DepthBounds, planes: ClipPlanes) -> Result<Self, DepthError> {
        bounds.validate()?;
        if n_cls == 0 {
            return Err(DepthError::NoIntervals);
        }
        let ordered = bounds.d_min < planes.d_cmin && planes.d_cmin < planes.d_cmax && planes.d_cmax < bounds.d_max;
        if !ordered {
            return Err(DepthError::InvalidPlanes {
                d_cmin: planes.d_cmin,
                d_cmax: planes.d_cmax,
            });
        }
        let lo = bounds.encode(planes.d_cmin)?;
        let hi = bounds.encode(planes.d_cmax)?;
        let step = (hi - lo) / n_cls as f64;
        let mut edges: Vec<f64> = (0..n_cls).map(|i| lo + i as f64 * step).collect();
        edges.push(hi);
        Ok(Self {
            n_cls,
            bounds,
            planes,
            edges,
        })
    }

    pub fn n_cls(&self) -> usize {
        self.n_cls
    }

    pub fn bounds(&self) -> DepthBounds {
        self.bounds
    }

    pub fn planes(&self) -> ClipPlanes {
        self.planes
    }

    /// `n_cls + 1` increasing edges in normalized log-space.
    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    /// Interval index of depth `d`; depths outside the clip planes clamp to the end bins.
    pub fn quantize(&self, d: f64) -> usize {
        let e = self.bounds.encode(d.max(self.bounds.d_min)).unwrap_or(0.0);
        let (lo, hi) = (self.edges[0], self.edges[self.n_cls]);
        let k = (self.n_cls as f64 * (e - lo) / (hi - lo)).floor();
        if k <= 0.0 {
            0
        } else {
            (k as usize).min(self.n_cls - 1)
        }
    }

    /// Metric depth at the log-space midpoint of interval `label`.
    pub fn dequantize(&self, label: usize) -> Result<f64, DepthError> {
        if label >= self.n_cls {
            return Err(DepthError::LabelOutOfRange {
                label,
                n_cls: self.n_cls,
            });
        }
        let mid = 0.5 * (self.edges[label] + self.edges[label + 1]);
        self.bounds.decode(mid)
    }

    pub fn label_map(&self, gt: &DepthMap) -> IntervalLabeling {
        let label = gt
            .depth
            .iter()
            .zip(&gt.valid)
            .map(|(&d, &v)| if v { self.quantize(d) } else { 0 })
            .collect();
        IntervalLabeling {
            height: gt.height,
            width: gt.width,
            label,
            valid: gt.valid.clone(),
        }
    }
}

/// Per-pixel metric depth with a validity mask; invalid pixels hold 0.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap {
    pub height: usize,
    pub width: usize,
    pub depth: Vec<f64>,
    pub valid: Vec<bool>,
}

impl DepthMap {
    /// Builds a map from raw depths, treating non-positive or non-finite values as invalid.
    pub fn from_depths(height: usize, width: usize, depth: Vec<f64>) -> Result<Self, DepthError> {
        if depth.len() != height * width {
            return Err(DepthError::SizeMismatch(format!(
                "{height}x{width} map with {} values",
                depth.len()
            )));
        }
        let valid: Vec<bool> = depth.iter().map(|d| d.is_finite() && *d > 0.0).collect();
        let depth = depth
            .into_iter()
            .zip(&valid)
            .map(|(d, &v)| if v { d } else { 0.0 })
            .collect();
        Ok(Self {
            height,
            width,
            depth,
            valid,
        })
    }

    /// Dense map where every pixel is valid.
    pub fn dense(height: usize, width: usize, depth: Vec<f64>) -> Result<Self, DepthError> {
        let map = Self::from_depths(height, width, depth)?;
        if map.valid.iter().any(|v| !v) {
            return Err(DepthError::SizeMismatch("dense map contains non-positive depth".into()));
        }
        Ok(map)
    }

    pub fn invalid(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            depth: vec![0.0; height * width],
            valid: vec![false; height * width],
        }
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    /// Fraction of pixels carrying ground truth.
    pub fn coverage(&self) -> f64 {
        self.valid_count() as f64 / self.valid.len().max(1) as f64
    }
}

/// Per-pixel interval indices; labels are meaningful only where `valid`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IntervalLabeling {
    pub height: usize,
    pub width: usize,
    pub label: Vec<usize>,
    pub valid: Vec<bool>,
}
