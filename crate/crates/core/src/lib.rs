//! Depth estimation from a single image, trained as dense regression of
//! log-normalized depth with an auxiliary depth-interval classifier.
//!
//! The crate bundles a small reverse-mode autodiff engine ([`tensor`]), the
//! depth encodings ([`depth`]), losses and the learned task weighting
//! ([`losses`]), a compact encoder/dual-decoder network ([`model`]), the
//! optimizer and learning-rate tools ([`optim`]), a synthetic dataset with a
//! KITTI depth-PNG codec ([`data`]) and the training harness ([`harness`]).

pub mod data;
pub mod depth;
pub mod harness;
pub mod losses;
pub mod model;
pub mod optim;
pub mod tensor;

pub use depth::{ClipPlanes, DepthBounds, DepthMap, IntervalLabeling, IntervalScheme};
pub use losses::{LossBreakdown, TaskWeights, WeightingMode};
pub use model::{Heads, Model, ModelConfig, ModelOutput};
pub use tensor::{Tape, Tensor, TensorError, Var};
