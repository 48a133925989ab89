//! Unsupervised modality adaptation for binary fall detection.
//!
//! Trains a shared 3D-convolutional backbone on labeled RGB clips and
//! unlabeled depth clips, bridging the modality gap with an intermediate
//! domain module, pseudo-labeling, cross-batch triplet mining, and an
//! adversarial modality discriminator. Evaluation is always on depth.
//!
//! Pipeline stages live in their own modules:
//!
//! - [`data`] / [`synth`]: clip manifests, PNG decoding, synthetic corpus
//! - [`ops`] / [`tensor`]: float-generic numeric kernels (GEMM-backed conv)
//! - [`model`] / [`backbone`] / [`idm`] / [`heads`]: parameters and forward/backward
//! - [`losses`] / [`xbm`]: the five loss terms and the cross-batch memory
//! - [`trainer`]: SGD loop, checkpoints, loss traces
//! - [`eval`]: metrics, protocol runs, the ablation ladder, embedding export
//! - [`config`]: flat key=value run configuration

pub mod backbone;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod heads;
pub mod idm;
pub mod losses;
pub mod model;
pub mod ops;
pub mod rng;
pub mod synth;
pub mod tensor;
pub mod trainer;
pub mod xbm;

pub use error::{Error, Result};
