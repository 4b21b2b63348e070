//! Synthetic video generation, temporal windowing, cropping and
//! augmentation.

pub mod augment;
pub mod dataset;
pub mod export;
pub mod frame;
pub mod skeleton;
pub mod synth;
pub mod window;

pub use augment::AugmentConfig;
pub use dataset::{Batch, Dataset, Sample};
pub use synth::{SyntheticSpec, SyntheticVideo};
pub use window::{extract_window, CropSpec, FrameWindow};
