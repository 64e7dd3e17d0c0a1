//! Boosted triplet comparisons for fine-grained subjective image quality
//! assessment.
//!
//! The crate covers the whole pipeline: distortion synthesis and level design
//! ([`distortions`]), boosted trial presentation ([`boosting`]), simulated
//! observers ([`simulation`]), Thurstonian scale reconstruction
//! ([`reconstruction`]), data cleaning ([`quality`]), analysis
//! ([`analysis`]), recalibration of boosted scales ([`recalibration`]) and the
//! bookkeeping behind a response-collection service ([`study`]).

// `!(x > 0.0)` is deliberate: it rejects NaN along with the out-of-range values.
// Index loops stay where they mirror the matrix and colour-space algebra.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod analysis;
pub mod boosting;
pub mod distortions;
pub mod image;
pub mod model;
pub mod normal;
pub mod optim;
pub mod quality;
pub mod recalibration;
pub mod reconstruction;
pub mod records;
pub mod rng;
pub mod simulation;
pub mod stats;
pub mod study;

pub use model::{ImpairmentScale, ModelKind, ResponseValue, ScaleUnit, Triplet};
pub use reconstruction::{reconstruct, Orientation, ReconstructionOptions, ResponseSet, ScaleReconstruction};
