//! Core library for studying uncertainty expressions in children's numerical
//! comparisons: stimulus generation, annotation handling, corpus analysis,
//! multimodal features and the uncertainty classifiers.

// `!(x > 0)` style checks deliberately treat NaN as invalid.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod annotation;
pub mod features;
pub mod model;
pub mod scalar;
pub mod seed;
pub mod stimgen;

pub use scalar::Scalar;

/// Correlation statistics at double precision.
pub type Correlation = analysis::CorrelationResult<f64>;

pub type MulT32 = model::MulT<f32>;
pub type MulT64 = model::MulT<f64>;
pub type Tape32 = model::Tape<f32>;
pub type Tape64 = model::Tape<f64>;
pub type Sample32 = features::AlignedSample<f32>;
