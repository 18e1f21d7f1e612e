//! Procedural road scenes with a ground plane, box-shaped obstacles and fog.
//!
//! Ground inverse depth is linear in the image row between the horizon and
//! the bottom row, which is what a flat road seen by a level pinhole camera
//! produces. Colors attenuate toward a fog color with distance, so depth can
//! be read off the appearance.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DataError, Rgb};
use crate::depth::DepthMap;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    /// Ground depth at the bottom image row, in meters.
    pub near_depth: f64,
    /// Ground depth at the horizon row; the largest depth generated.
    pub far_depth: f64,
    /// Inclusive range of obstacle counts.
    pub objects: (usize, usize),
    /// Obstacle depth range in meters.
    pub object_depth: (f64, f64),
    /// Portion of rows at the top that show sky and never carry ground truth.
    pub sky_fraction: f64,
    /// Amplitude of the uniform per-pixel color noise.
    pub noise: f64,
    /// Distance at which fog transmittance falls to 1/e.
    pub fog_distance: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            near_depth: 3.0,
            far_depth: 80.0,
            objects: (1, 4),
            object_depth: (4.0, 40.0),
            sky_fraction: 0.3,
            noise: 0.02,
            fog_distance: 40.0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |msg: &str| Err(DataError::InvalidSpec(msg.to_string()));
        if self.height < 2 || self.width < 1 {
            return bad("scene must be at least 2x1 pixels");
        }
        if !(self.near_depth > 0.0 && self.near_depth < self.far_depth && self.far_depth.is_finite()) {
            return bad("need 0 < near_depth < far_depth");
        }
        if self.objects.0 > self.objects.1 {
            return bad("object count range is reversed");
        }
        let (lo, hi) = self.object_depth;
        if !(lo > 0.0 && lo <= hi && hi <= self.far_depth) {
            return bad("object depths must lie in (0, far_depth]");
        }
        if !(0.0..=0.5).contains(&self.sky_fraction) {
            return bad("sky_fraction must lie in [0, 0.5]");
        }
        if !(self.noise >= 0.0 && self.fog_distance > 0.0) {
            return bad("noise must be non-negative and fog_distance positive");
        }
        Ok(())
    }

    /// First ground row; rows above it are sky.
    pub fn horizon_row(&self) -> usize {
        ((self.sky_fraction * self.height as f64).ceil() as usize).min(self.height - 1)
    }

    /// Ground depth at `row`, or `None` above the horizon.
    pub fn ground_depth(&self, row: usize) -> Option<f64> {
        let h = self.horizon_row();
        if row < h {
            return None;
        }
        let span = (self.height - 1 - h).max(1) as f64;
        let frac = (row - h) as f64 / span;
        let inv = 1.0 / self.far_depth + frac * (1.0 / self.near_depth - 1.0 / self.far_depth);
        Some(1.0 / inv)
    }

    /// Fractional row where the ground sits at depth `z`.
    fn ground_row(&self, z: f64) -> f64 {
        let h = self.horizon_row() as f64;
        let span = (self.height as f64 - 1.0 - h).max(1.0);
        let frac = (1.0 / z - 1.0 / self.far_depth) / (1.0 / self.near_depth - 1.0 / self.far_depth);
        h + frac * span
    }
}

const SKY: [f64; 3] = [0.62, 0.74, 0.92];
const FOG: [f64; 3] = [0.78, 0.80, 0.84];

/// Dense scene: sky pixels are the only invalid ones.
pub struct Scene {
    pub rgb: Rgb,
    pub depth: DepthMap,
}

/// Renders one scene. Deterministic in the state of `rng`.
pub fn generate_scene(spec: &SceneSpec, rng: &mut ChaCha8Rng) -> Result<Scene, DataError> {
    spec.validate()?;
    let (h, w) = (spec.height, spec.width);
    let mut depth = vec![0.0; h * w];
    let mut albedo = vec![[0.0; 3]; h * w];
    for r in 0..h {
        let Some(d) = spec.ground_depth(r) else {
            continue;
        };
        // Lane stripes at a fixed metric spacing shrink with distance.
        let stripe = if (d / 2.0).floor() as i64 % 2 == 0 { 0.06 } else { -0.06 };
        for c in 0..w {
            let lane = ((c as f64 + 0.5) / w as f64 - 0.5).abs() < 0.02 + 0.5 / d;
            let base = if lane { 0.55 } else { 0.32 + stripe };
            depth[r * w + c] = d;
            albedo[r * w + c] = [base, base, base * 0.95];
        }
    }

    let n_obj = rng.gen_range(spec.objects.0..=spec.objects.1);
    let focal = 0.8 * w as f64;
    for _ in 0..n_obj {
        let (zlo, zhi) = spec.object_depth;
        let z = if zlo < zhi { rng.gen_range(zlo..zhi) } else { zlo };
        let height_m = rng.gen_range(1.4..3.0);
        let width_m = rng.gen_range(1.6..4.0);
        let color = [
            rng.gen_range(0.05..0.95),
            rng.gen_range(0.05..0.95),
            rng.gen_range(0.05..0.95),
        ];
        let center = rng.gen_range(0.0..w as f64);
        let half_w = 0.5 * focal * width_m / z;
        let base = spec.ground_row(z).floor();
        let top = base - focal * height_m / z;
        let r0 = top.max(0.0).ceil() as usize;
        let r1 = base.min(h as f64 - 1.0);
        let c0 = (center - half_w).max(0.0).ceil() as usize;
        let c1 = (center + half_w).min(w as f64 - 1.0);
        if r1 < 0.0 || c1 < 0.0 {
            continue;
        }
        let (r1, c1) = (r1 as usize, c1 as usize);
        for r in r0..=r1 {
            for c in c0..=c1 {
                let i = r * w + c;
                if depth[i] == 0.0 || z < depth[i] {
                    depth[i] = z;
                    // Vertical shading keeps box faces from being flat.
                    let shade = 0.85 + 0.15 * (r - r0) as f64 / (r1 - r0 + 1) as f64;
                    albedo[i] = color.map(|v| v * shade);
                }
            }
        }
    }

    let mut rgb = Rgb::new(h, w);
    for i in 0..h * w {
        let d = depth[i];
        let color = if d > 0.0 {
            let t = (-d / spec.fog_distance).exp();
            [0, 1, 2].map(|ch| albedo[i][ch] * t + FOG[ch] * (1.0 - t))
        } else {
            let lift = 0.1 * (i / w) as f64 / h as f64;
            SKY.map(|v| v + lift)
        };
        for (ch, v) in color.into_iter().enumerate() {
            let noise = if spec.noise > 0.0 {
                rng.gen_range(-spec.noise..=spec.noise)
            } else {
                0.0
            };
            rgb.values[ch * h * w + i] = (v + noise).clamp(0.0, 1.0);
        }
    }
    let depth = DepthMap::from_depths(h, w, depth)?;
    Ok(Scene { rgb, depth })
}
