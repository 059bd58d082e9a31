//! Forecasting a pedestrian's future image-plane locations from first-person
//! video cues.
//!
//! Given ten observed frames of a person's location and apparent size, the
//! camera wearer's ego-motion, and the person's body pose, the model predicts
//! the person's location offsets over the next ten frames. The pipeline:
//!
//! - [`tensor`]: f64 tensors, a tape-based reverse-mode autodiff graph with
//!   the conv/deconv/batch-norm/ReLU/concat/MSE ops the network needs, Adam,
//!   and a finite-difference gradient checker.
//! - [`geom`]: small fixed-size vector/matrix helpers shared by the feature
//!   extractors and the synthetic-scene camera.
//! - [`features`]: per-frame cues — location-scale from keypoints, normalized
//!   pose vectors, accumulated camera ego-motion, optical-flow grid pooling.
//! - [`data`]: tracklets, sliding-window sample extraction, normalization
//!   statistics, horizontal flip augmentation, walking-direction labels,
//!   video-level cross-validation folds, JSONL and binary sample formats.
//! - [`model`]: the multi-stream conv encoder / deconv decoder network,
//!   training loop, and the versioned weights file.
//! - [`synth`]: a scripted pinhole-camera scene generator with ground truth,
//!   used for self-checks and benchmarks.
//! - [`eval`]: constant-velocity and nearest-neighbor baselines, final
//!   displacement error, and report generation.
//! - [`selftest`]: end-to-end diagnostics wired into the CLI.

// Validation code writes `!(x > 0.0)` on purpose: unlike `x <= 0.0` it also
// rejects NaN. Index loops are the house style in matrix/channel code.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::needless_range_loop)]

pub mod data;
pub mod eval;
pub mod features;
pub mod geom;
pub mod model;
pub mod selftest;
pub mod synth;
pub mod tensor;
