//! Contrastive representation learning with feature-space transformations.
//!
//! The crate trains a small MLP encoder with a momentum-contrast objective
//! (query/key encoders, a FIFO memory queue of negatives, InfoNCE), and
//! inserts optional transformations between the unit-sphere projection and
//! the pair scores:
//!
//! - positive extrapolation (`λ ∈ (1,2)`) lowers the query/key score and
//!   produces hard positives,
//! - negative interpolation mixes the queue with a permuted copy of itself
//!   every step,
//! - negative extrapolation, hard negatives, dimension-level mixing and a
//!   union queue are available as variants.
//!
//! Every step can log pos/neg score statistics and per-layer gradient norms,
//! which is what the `telemetry` module exports as CSV and SVG.

pub mod config;
pub mod contrastive;
pub mod data;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod feature_transform;
pub mod numerics;
pub mod run;
pub mod telemetry;

pub use error::{Error, Result};
