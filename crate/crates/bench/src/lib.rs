//! Deterministic fixtures shared by the benchmarks.

use mtdepth::data::DatasetSpec;
use mtdepth::harness::ExperimentConfig;
use mtdepth::{DepthMap, Tensor};

/// Smooth pseudo-random values in `[-1, 1]`, stable across runs.
pub fn wave(n: usize, phase: f64) -> Vec<f64> {
    (0..n).map(|i| (i as f64 * 0.618 + phase).sin()).collect()
}

pub fn tensor(shape: &[usize], phase: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), wave(n, phase)).expect("shape matches length")
}

/// Depth map in `[2, 80]` meters with every `stride`-th pixel valid.
pub fn sparse_depth(height: usize, width: usize, stride: usize, phase: f64) -> DepthMap {
    let depth: Vec<f64> = wave(height * width, phase)
        .into_iter()
        .enumerate()
        .map(|(i, v)| if i % stride == 0 { 41.0 + 39.0 * v } else { 0.0 })
        .collect();
    DepthMap::from_depths(height, width, depth).expect("sizes match")
}

/// Training config small enough that one optimizer step dominates setup.
pub fn step_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        data: DatasetSpec {
            train_samples: 32,
            val_samples: 1,
            ..DatasetSpec::default()
        },
        iterations: 1_000_000,
        validation_interval: 1_000_000,
        prefetch: 0,
        ..ExperimentConfig::default()
    };
    cfg.lr.initial = Some(1e-4);
    cfg
}
