use std::sync::mpsc::{sync_channel, Receiver};
use std::sync::Arc;
use std::thread::{self, JoinHandle};

use rand::seq::SliceRandom;

use super::{augment, derived_rng, AugmentSpec, DataError, Dataset, DOMAIN_AUGMENT, DOMAIN_SHUFFLE};
use crate::depth::DepthBounds;
use crate::tensor::Tensor;

/// Network-ready batch. `targets`, `labels` and `mask` are laid out N x H x W.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    /// Position in the batch stream.
    pub index: u64,
    pub images: Tensor,
    /// Encoded depth clamped to `[0, 1]`; 0 where invalid.
    pub targets: Vec<f64>,
    pub labels: Vec<usize>,
    pub mask: Vec<bool>,
    pub valid_pixels: usize,
}

impl Batch {
    /// No pixel carries ground truth; the loss is undefined for this batch.
    pub fn is_empty(&self) -> bool {
        self.valid_pixels == 0
    }
}

/// Endless deterministic stream of augmented batches over a dataset.
///
/// Batch `k` depends only on the seed and `k`: epoch `k / per_epoch` shuffles
/// the sample order with its own generator and every item gets its own
/// augmentation generator. Trailing samples that do not fill a batch are
/// dropped each epoch.
#[derive(Clone, Debug)]
pub struct BatchStream {
    dataset: Arc<Dataset>,
    batch_size: usize,
    augment: AugmentSpec,
    bounds: DepthBounds,
    seed: u64,
}

impl BatchStream {
    pub fn new(
        dataset: Arc<Dataset>,
        batch_size: usize,
        augment: AugmentSpec,
        bounds: DepthBounds,
        seed: u64,
    ) -> Result<Self, DataError> {
        if batch_size == 0 {
            return Err(DataError::InvalidSpec("batch_size must be at least 1".into()));
        }
        if dataset.len() < batch_size {
            return Err(DataError::EmptyDataset);
        }
        if let Some(s) = dataset
            .samples
            .iter()
            .find(|s| augment.crop.0 > s.height() || augment.crop.1 > s.width() || augment.crop.0 * augment.crop.1 == 0)
        {
            return Err(DataError::CropTooLarge {
                crop: augment.crop,
                height: s.height(),
                width: s.width(),
            });
        }
        Ok(Self {
            dataset,
            batch_size,
            augment,
            bounds,
            seed,
        })
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.dataset.len() / self.batch_size
    }

    fn epoch_order(&self, epoch: u64) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.dataset.len()).collect();
        order.shuffle(&mut derived_rng(self.seed, DOMAIN_SHUFFLE, epoch));
        order
    }

    pub fn batch(&self, index: u64) -> Result<Batch, DataError> {
        let per_epoch = self.batches_per_epoch() as u64;
        let order = self.epoch_order(index / per_epoch);
        let first = (index % per_epoch) as usize * self.batch_size;
        let (ch, cw) = self.augment.crop;
        let plane = ch * cw;
        let n = self.batch_size;
        let mut images = vec![0.0; n * 3 * plane];
        let mut targets = vec![0.0; n * plane];
        let mut labels = vec![0; n * plane];
        let mut mask = vec![false; n * plane];
        for slot in 0..n {
            let sample = &self.dataset.samples[order[first + slot]];
            let item = index * n as u64 + slot as u64;
            let s = augment(sample, &self.augment, &mut derived_rng(self.seed, DOMAIN_AUGMENT, item))?;
            images[slot * 3 * plane..(slot + 1) * 3 * plane].copy_from_slice(&s.rgb.values);
            for i in 0..plane {
                let j = slot * plane + i;
                if s.gt.valid[i] {
                    targets[j] = self.bounds.target(s.gt.depth[i]);
                    labels[j] = s.labels.label[i];
                    mask[j] = true;
                }
            }
        }
        let valid_pixels = mask.iter().filter(|&&m| m).count();
        let images = Tensor::new(vec![n, 3, ch, cw], images).map_err(|e| DataError::InvalidSpec(e.to_string()))?;
        Ok(Batch {
            index,
            images,
            targets,
            labels,
            mask,
            valid_pixels,
        })
    }

    /// Batches `start, start + 1, ...`. With `prefetch > 0` a worker thread
    /// assembles up to `prefetch` batches ahead; the sequence is the same.
    pub fn iter(&self, start: u64, prefetch: usize) -> BatchIter {
        if prefetch == 0 {
            return BatchIter {
                inner: Inner::Direct {
                    stream: self.clone(),
                    next: start,
                },
            };
        }
        let (tx, rx) = sync_channel(prefetch);
        let stream = self.clone();
        let worker = thread::spawn(move || {
            let mut k = start;
            loop {
                let b = stream.batch(k);
                let failed = b.is_err();
                if tx.send(b).is_err() || failed {
                    return;
                }
                k += 1;
            }
        });
        BatchIter {
            inner: Inner::Prefetch {
                rx: Some(rx),
                worker: Some(worker),
            },
        }
    }
}

pub struct BatchIter {
    inner: Inner,
}

enum Inner {
    Direct {
        stream: BatchStream,
        next: u64,
    },
    Prefetch {
        rx: Option<Receiver<Result<Batch, DataError>>>,
        worker: Option<JoinHandle<()>>,
    },
}

impl Iterator for BatchIter {
    type Item = Result<Batch, DataError>;

    fn next(&mut self) -> Option<Self::Item> {
        match &mut self.inner {
            Inner::Direct { stream, next } => {
                let b = stream.batch(*next);
                *next += 1;
                Some(b)
            }
            Inner::Prefetch { rx, .. } => rx.as_ref()?.recv().ok(),
        }
    }
}

impl Drop for BatchIter {
    fn drop(&mut self) {
        if let Inner::Prefetch { rx, worker } = &mut self.inner {
            // Closing the channel makes the worker's next send fail.
            drop(rx.take());
            if let Some(w) = worker.take() {
                let _ = w.join();
            }
        }
    }
}
