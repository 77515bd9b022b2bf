//! Multi-task full-reference proxy pretraining for no-reference video
//! quality assessment, at desk scale.
//!
//! The pipeline: synthesize reference clips and a distortion ladder
//! ([`synth`]), score distorted frames with full-reference metrics
//! ([`fr`]), pretrain a small shared encoder against all metrics at once
//! with min-norm gradient balancing ([`trainer`], [`mgda`], [`model`]),
//! then freeze it and evaluate pooled clip features with Ridge/SVR heads
//! under the standard-split, few-shot and zero-shot protocols
//! ([`regress`], [`eval`]). [`pipeline`] wires the stages together through
//! plain-text artifacts.

pub mod autodiff;
pub mod config;
pub mod error;
pub mod eval;
pub mod fr;
pub mod io;
pub mod mgda;
pub mod model;
pub mod pipeline;
pub mod regress;
mod rng;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
