//! Training-time augmentation: one shared rotation, scale and optional
//! half-body zoom applied to every frame of a window and its ground truth.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::skeleton::CHAIN;
use super::window::{crop_transform, person_box, FrameWindow};
use crate::error::{Error, Result};
use crate::geometry::Affine;
use crate::nn::uniform;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    pub enabled: bool,
    /// Rotation drawn uniformly from `±rotation_deg`.
    pub rotation_deg: f64,
    /// Scale drawn uniformly from `[1 − s, 1 + s]`.
    pub scale_jitter: f64,
    pub half_body_prob: f64,
    /// Minimum half-body subset size (capped at `K − 1`).
    pub half_body_joints: usize,
    /// Attempts before giving up and leaving the window unchanged.
    pub max_retries: usize,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            enabled: true,
            rotation_deg: 45.0,
            scale_jitter: 0.35,
            half_body_prob: 0.3,
            half_body_joints: 8,
            max_retries: 10,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.scale_jitter) || self.rotation_deg < 0.0 {
            return Err(Error::Config(
                "aug: scale_jitter must lie in [0, 1) and rotation_deg be non-negative".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.half_body_prob) {
            return Err(Error::Config("aug: half_body_prob must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AugmentParams {
    pub theta: f64,
    pub scale: f64,
    /// Joints kept by a half-body zoom.
    pub half_body: Option<Vec<usize>>,
}

impl AugmentParams {
    pub const IDENTITY: AugmentParams = AugmentParams {
        theta: 0.0,
        scale: 1.0,
        half_body: None,
    };
}

pub fn sample_params(cfg: &AugmentConfig, joints: usize, rng: &mut ChaCha8Rng) -> AugmentParams {
    let r = cfg.rotation_deg.to_radians();
    let theta = uniform(rng, -r, r);
    let scale = uniform(rng, 1.0 - cfg.scale_jitter, 1.0 + cfg.scale_jitter);
    let half_body = (joints >= 3 && rng.random_bool(cfg.half_body_prob)).then(|| {
        let min = cfg.half_body_joints.min(joints - 1).max(2);
        let n = rng.random_range(min..=joints - 1);
        let start = rng.random_range(0..=joints - n);
        let chain: Vec<usize> = if joints == CHAIN.len() {
            CHAIN.to_vec()
        } else {
            (0..joints).collect()
        };
        chain[start..start + n].to_vec()
    });
    AugmentParams { theta, scale, half_body }
}

/// Crop → crop transform for `params`. A half-body zoom that cannot be
/// formed (fewer than two visible selected joints) is skipped.
pub fn augment_affine(window: &FrameWindow, params: &AugmentParams) -> Affine {
    let (h, w) = window.out_size();
    let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);
    let mut zoom = Affine::IDENTITY;
    if let Some(subset) = &params.half_body {
        let pose = window.crop_pose();
        let kept: Vec<_> = subset.iter().map(|&j| pose[j]).filter(|k| k.visible).collect();
        if kept.len() >= 2 {
            if let Ok(b) = person_box(&kept, 0.15, h as f64 / w as f64) {
                zoom = crop_transform(&b, h, w);
            }
        }
    }
    Affine::translation(cx, cy)
        .then_after(&Affine::rotation(params.theta))
        .then_after(&Affine::scaling(params.scale, params.scale))
        .then_after(&Affine::translation(-cx, -cy))
        .then_after(&zoom)
}

/// Warps every frame by `a` (crop → crop) and composes it into the window
/// transform. Pixels mapped from outside the crop read as 0.
pub fn apply_affine(window: &FrameWindow, a: &Affine) -> Result<FrameWindow> {
    let (h, w) = window.out_size();
    let inv = a.inverse()?;
    Ok(FrameWindow {
        frames: window.frames.iter().map(|f| f.warp(h, w, &inv)).collect(),
        transform: a.then_after(&window.transform),
        ..window.clone()
    })
}

/// Random augmentation keeping at least one joint visible; after
/// `max_retries` failures the window is returned unchanged.
pub fn augment(window: &FrameWindow, cfg: &AugmentConfig, rng: &mut ChaCha8Rng) -> Result<FrameWindow> {
    let joints = window.pose.len();
    for _ in 0..cfg.max_retries.max(1) {
        let params = sample_params(cfg, joints, rng);
        let a = augment_affine(window, &params);
        let moved = FrameWindow {
            transform: a.then_after(&window.transform),
            ..window.clone()
        };
        if moved.crop_pose().iter().any(|k| k.visible) {
            return apply_affine(window, &a);
        }
    }
    Ok(window.clone())
}
