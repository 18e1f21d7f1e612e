//! Adam with coupled L2 decay, polynomial learning-rate decay and the
//! exponential learning-rate range test.

mod adam;
mod schedule;

pub use adam::{AdamConfig, AdamState, ParamSlot};
pub use range_test::{lr_range_test, Interval, LrSweepRecord, Regime, SlopeMeasure, SweepConfig, SweepPoint};
pub use schedule::PolySchedule;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimError {
    #[error("non-finite gradient {value} in parameter slot {slot} at index {index}")]
    NonFiniteGradient { slot: usize, index: usize, value: f64 },
    #[error("optimizer state tracks {expected} slots but {actual} were supplied")]
    SlotCount { expected: usize, actual: usize },
    #[error("slot {slot}: {values} values but {grads} gradients or {state} state entries")]
    SlotLength {
        slot: usize,
        values: usize,
        grads: usize,
        state: usize,
    },
    #[error("learning rate {0} must be finite and non-negative")]
    InvalidRate(f64),
    #[error("iteration {t} outside schedule of {total} iterations")]
    OutOfSchedule { t: usize, total: usize },
    #[error("invalid sweep: {0}")]
    InvalidSweep(String),
}
