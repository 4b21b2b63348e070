//! Multi-frame human pose estimation on synthetic video.
//!
//! A small vision transformer encodes every frame of a temporal window;
//! multi-scale feature fusion, adaptive frame weighting and center/context
//! cross-attention combine the frames before a deconvolution head predicts
//! one heatmap per joint.

pub mod afw;
pub mod backbone;
pub mod codec;
pub mod config;
pub mod cross_attention;
pub mod data;
pub mod decoder;
pub mod error;
pub mod geometry;
pub mod gradcheck;
pub mod metrics;
pub mod model;
pub mod msff;
pub mod nn;
pub mod plot;
pub mod train;

pub use error::{Error, Result};
pub use model::{Ablation, ModelConfig, ModelOutput, PoseModel};
