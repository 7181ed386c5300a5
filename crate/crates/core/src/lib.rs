// SPDX-License-Identifier: Apache-2.0

//! Evaluation and post-processing toolkit for video panoptic segmentation.
//!
//! * [`vpq`] and [`stq`]: tube-based VPQ over sliding windows and
//!   Segmentation and Tracking Quality.
//! * [`convert`]: panoptic → semantic / instance annotation views.
//! * [`fusion`]: averaged-logit ensembling of stuff classes and merging
//!   with instance masks.
//! * [`ema`]: exponential moving average over weight snapshots.
//! * [`querydecode`]: masks from query/feature inner products.
//! * [`synth`]: deterministic synthetic scenes with controlled errors.
//! * [`io`]: PNG datasets and binary tensor files.

mod accum;
pub mod convert;
pub mod ema;
pub mod error;
pub mod fusion;
pub mod io;
pub mod overlap;
pub mod querydecode;
pub mod report;
pub mod stq;
pub mod synth;
pub mod types;
pub mod vpq;

pub use accum::CompensatedSum;
pub use error::{Error, Result};
pub use types::{
    validate_sequence, Category, CategoryTable, IdRaster, InstanceSequence, RawSequence,
    SemanticSequence, Validation, VideoPanopticSequence, Violation, VOID,
};
