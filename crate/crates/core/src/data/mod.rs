//! Synthetic training data, augmentation, batching and the KITTI depth-PNG codec.

mod batch;
mod kitti;
mod scene;
mod sparsify;

use std::io;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::depth::{DepthError, DepthMap, IntervalLabeling, IntervalScheme};

pub use batch::{Batch, BatchStream};
pub use kitti::{decode_kitti_png, encode_kitti_png, read_kitti_png, read_rgb_png, write_kitti_png, write_rgb_png};
pub use scene::{generate_scene, Scene, SceneSpec};
pub use sparsify::{sparsify, SparsityModel};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid data spec: {0}")]
    InvalidSpec(String),
    #[error("crop {crop:?} does not fit a {height}x{width} image")]
    CropTooLarge {
        crop: (usize, usize),
        height: usize,
        width: usize,
    },
    #[error("dataset is empty or smaller than one batch")]
    EmptyDataset,
    #[error("bad image file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Depth(#[from] DepthError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Seeded generator for one `(domain, index)` pair, independent of every other pair.
pub(crate) fn derived_rng(seed: u64, domain: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ domain.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    rng.set_stream(index);
    rng
}

pub(crate) const DOMAIN_TRAIN: u64 = 1;
pub(crate) const DOMAIN_VAL: u64 = 2;
pub(crate) const DOMAIN_SHUFFLE: u64 = 3;
pub(crate) const DOMAIN_AUGMENT: u64 = 4;
pub(crate) const DOMAIN_DROPOUT: u64 = 5;

/// Three channel planes of `height * width` values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Rgb {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

impl Rgb {
    pub fn new(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            values: vec![0.0; 3 * height * width],
        }
    }
}

/// Image with sparse ground truth and the matching interval labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub rgb: Rgb,
    pub gt: DepthMap,
    pub labels: IntervalLabeling,
}

impl Sample {
    pub fn new(rgb: Rgb, gt: DepthMap, scheme: &IntervalScheme) -> Result<Self, DataError> {
        if (rgb.height, rgb.width) != (gt.height, gt.width) {
            return Err(DataError::InvalidSpec(format!(
                "image is {}x{} but depth is {}x{}",
                rgb.height, rgb.width, gt.height, gt.width
            )));
        }
        let labels = scheme.label_map(&gt);
        Ok(Self { rgb, gt, labels })
    }

    pub fn height(&self) -> usize {
        self.gt.height
    }

    pub fn width(&self) -> usize {
        self.gt.width
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentSpec {
    /// Crop height and width.
    pub crop: (usize, usize),
    pub flip_probability: f64,
}

impl Default for AugmentSpec {
    fn default() -> Self {
        Self {
            crop: (128, 128),
            flip_probability: 0.5,
        }
    }
}

/// Random crop (uniform over all positions) followed by an optional
/// horizontal flip, applied identically to image, depth and labels.
pub fn augment(sample: &Sample, spec: &AugmentSpec, rng: &mut ChaCha8Rng) -> Result<Sample, DataError> {
    let (h, w) = (sample.height(), sample.width());
    let (ch, cw) = spec.crop;
    if ch == 0 || cw == 0 || ch > h || cw > w {
        return Err(DataError::CropTooLarge {
            crop: spec.crop,
            height: h,
            width: w,
        });
    }
    let top = rng.gen_range(0..=h - ch);
    let left = rng.gen_range(0..=w - cw);
    let flip = rng.gen::<f64>() < spec.flip_probability;
    Ok(crop_flip(sample, top, left, (ch, cw), flip))
}

/// Crops `size` at `(top, left)`, then mirrors columns when `flip` is set.
pub fn crop_flip(sample: &Sample, top: usize, left: usize, size: (usize, usize), flip: bool) -> Sample {
    let (h, w) = (sample.height(), sample.width());
    let (ch, cw) = size;
    let src = |r: usize, c: usize| {
        let c = if flip { cw - 1 - c } else { c };
        (top + r) * w + left + c
    };
    let mut rgb = Rgb::new(ch, cw);
    let mut gt = DepthMap::invalid(ch, cw);
    let mut labels = IntervalLabeling {
        height: ch,
        width: cw,
        label: vec![0; ch * cw],
        valid: vec![false; ch * cw],
    };
    for r in 0..ch {
        for c in 0..cw {
            let (i, j) = (r * cw + c, src(r, c));
            for k in 0..3 {
                rgb.values[k * ch * cw + i] = sample.rgb.values[k * h * w + j];
            }
            gt.depth[i] = sample.gt.depth[j];
            gt.valid[i] = sample.gt.valid[j];
            labels.label[i] = sample.labels.label[j];
            labels.valid[i] = sample.labels.valid[j];
        }
    }
    Sample { rgb, gt, labels }
}

/// Everything needed to regenerate a synthetic dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSpec {
    pub scene: SceneSpec,
    pub sparsity: SparsityModel,
    pub train_samples: usize,
    pub val_samples: usize,
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            scene: SceneSpec::default(),
            sparsity: SparsityModel::default(),
            train_samples: 256,
            val_samples: 32,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<(), DataError> {
        self.scene.validate()?;
        self.sparsity.validate()
    }

    /// Sample `index` of `split`; a pure function of the spec, split and index.
    pub fn sample(&self, split: Split, index: usize, scheme: &IntervalScheme) -> Result<Sample, DataError> {
        let domain = match split {
            Split::Train => DOMAIN_TRAIN,
            Split::Val => DOMAIN_VAL,
        };
        let mut rng = derived_rng(self.seed, domain, index as u64);
        let scene = generate_scene(&self.scene, &mut rng)?;
        let gt = sparsify(&scene.depth, &self.sparsity, self.scene.sky_fraction, &mut rng)?;
        Sample::new(scene.rgb, gt, scheme)
    }

    pub fn generate(&self, split: Split, scheme: &IntervalScheme) -> Result<Dataset, DataError> {
        self.validate()?;
        let n = match split {
            Split::Train => self.train_samples,
            Split::Val => self.val_samples,
        };
        let samples = (0..n)
            .map(|i| self.sample(split, i, scheme))
            .collect::<Result<_, _>>()?;
        Ok(Dataset { samples })
    }
}

/// In-memory collection of samples.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Dataset {
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Mean ground-truth coverage over all samples.
    pub fn mean_coverage(&self) -> f64 {
        let total: f64 = self.samples.iter().map(|s| s.gt.coverage()).sum();
        total / self.samples.len().max(1) as f64
    }
}

/// Written next to generated files so a dataset can be traced back to its inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub seed: u64,
    pub spec: DatasetSpec,
    pub sample_count: usize,
    pub mean_coverage: f64,
    pub files: Vec<ManifestEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub split: String,
    pub index: usize,
    pub image: String,
    pub depth: String,
    pub coverage: f64,
}
