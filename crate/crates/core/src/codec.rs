//! Gaussian heatmap targets, peak decoding and the masked MSE loss.
//!
//! Heatmap cell `(u, v)` covers crop pixels `[u·s, (u+1)·s)` for stride `s`,
//! so a crop coordinate `x` sits at cell coordinate `x / s − 0.5`.

use serde::{Deserialize, Serialize};
use vidpose_tensor::{Tape, Tensor, Var};

use crate::error::{Error, Result};
use crate::geometry::Affine;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    pub confidence: f64,
    pub visible: bool,
}

impl Keypoint {
    pub fn new(x: f64, y: f64, visible: bool) -> Self {
        Keypoint {
            x,
            y,
            confidence: if visible { 1.0 } else { 0.0 },
            visible,
        }
    }

    pub fn transformed(&self, a: &Affine) -> Keypoint {
        let (x, y) = a.apply(self.x, self.y);
        Keypoint { x, y, ..*self }
    }
}

pub type Pose = Vec<Keypoint>;

/// Heatmap resolution and target width.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HeatmapSpec {
    pub h: usize,
    pub w: usize,
    /// Crop pixels per heatmap cell.
    pub stride: f64,
    /// Gaussian standard deviation in cells.
    pub sigma: f64,
}

impl HeatmapSpec {
    pub fn to_cell(&self, x: f64, y: f64) -> (f64, f64) {
        (x / self.stride - 0.5, y / self.stride - 0.5)
    }

    pub fn to_pixel(&self, u: f64, v: f64) -> (f64, f64) {
        ((u + 0.5) * self.stride, (v + 0.5) * self.stride)
    }
}

/// Predicted or target heatmaps for a batch, with the crop transform
/// (image → crop pixels) of every sample.
#[derive(Clone, Debug)]
pub struct HeatmapStack {
    /// `[B, K, H, W]`.
    pub maps: Tensor,
    pub spec: HeatmapSpec,
    pub transforms: Vec<Affine>,
}

/// One joint's target map in cell coordinates: unnormalized Gaussian with
/// peak 1 at the nearest cell. Returns `false` (and leaves `out` zero) when
/// that cell falls outside the map.
pub fn render_gaussian(out: &mut [f64], h: usize, w: usize, u: f64, v: f64, sigma: f64) -> bool {
    let (cu, cv) = (u.round(), v.round());
    if !(cu >= 0.0 && cv >= 0.0 && cu < w as f64 && cv < h as f64) {
        return false;
    }
    let inv = 1.0 / (2.0 * sigma * sigma);
    let gx: Vec<f64> = (0..w).map(|x| (-(x as f64 - cu).powi(2) * inv).exp()).collect();
    for y in 0..h {
        let gy = (-(y as f64 - cv).powi(2) * inv).exp();
        for (o, g) in out[y * w..(y + 1) * w].iter_mut().zip(&gx) {
            *o = gy * g;
        }
    }
    true
}

/// Target maps `[K, H, W]` and the per-joint loss mask for crop-space
/// joints. Invisible or out-of-map joints get a zero map and mask 0.
pub fn encode_target(pose: &[Keypoint], spec: &HeatmapSpec) -> (Tensor, Vec<bool>) {
    let (h, w) = (spec.h, spec.w);
    let mut maps = Tensor::zeros(&[pose.len(), h, w]);
    let mut mask = Vec::with_capacity(pose.len());
    for (k, j) in pose.iter().enumerate() {
        let (u, v) = spec.to_cell(j.x, j.y);
        let slot = &mut maps.data_mut()[k * h * w..(k + 1) * h * w];
        mask.push(j.visible && render_gaussian(slot, h, w, u, v, spec.sigma));
    }
    (maps, mask)
}

/// Peak of one map in cell coordinates: `(u, v, confidence, visible)`.
///
/// The argmax (lowest flat index on ties) is refined by a quarter cell
/// toward the larger neighbor on each axis. A flat map has no peak and
/// decodes to the center cell with confidence 0, invisible.
pub fn decode_map(map: &[f64], h: usize, w: usize) -> (f64, f64, f64, bool) {
    let mut best = 0;
    let mut lo = f64::INFINITY;
    for (i, &v) in map.iter().enumerate() {
        if v > map[best] {
            best = i;
        }
        lo = lo.min(v);
    }
    let peak = map[best];
    if !(peak > lo) {
        return (((w - 1) / 2) as f64, ((h - 1) / 2) as f64, 0.0, false);
    }
    let (y, x) = (best / w, best % w);
    let offset = |before: f64, after: f64| {
        if after > before {
            0.25
        } else if after < before {
            -0.25
        } else {
            0.0
        }
    };
    let mut u = x as f64;
    let mut v = y as f64;
    if x > 0 && x + 1 < w {
        u += offset(map[best - 1], map[best + 1]);
    }
    if y > 0 && y + 1 < h {
        v += offset(map[best - w], map[best + w]);
    }
    (u, v, peak.clamp(0.0, 1.0), true)
}

/// Decodes `[K, H, W]` maps to crop-pixel keypoints.
pub fn decode_maps(maps: &[f64], joints: usize, spec: &HeatmapSpec) -> Pose {
    let n = spec.h * spec.w;
    (0..joints)
        .map(|k| {
            let (u, v, confidence, visible) = decode_map(&maps[k * n..(k + 1) * n], spec.h, spec.w);
            let (x, y) = spec.to_pixel(u, v);
            Keypoint { x, y, confidence, visible }
        })
        .collect()
}

/// Decodes every sample of a stack back to image coordinates.
pub fn decode_pose(stack: &HeatmapStack) -> Result<Vec<Pose>> {
    let s = stack.maps.shape();
    if s.len() != 4 || s[2] != stack.spec.h || s[3] != stack.spec.w || s[0] != stack.transforms.len() {
        return Err(Error::Shape(format!(
            "heatmap stack {s:?} inconsistent with {}×{} maps and {} transforms",
            stack.spec.h,
            stack.spec.w,
            stack.transforms.len()
        )));
    }
    let per = s[1] * s[2] * s[3];
    stack
        .transforms
        .iter()
        .enumerate()
        .map(|(b, t)| {
            let inv = t.inverse()?;
            Ok(decode_maps(&stack.maps.data()[b * per..(b + 1) * per], s[1], &stack.spec)
                .into_iter()
                .map(|k| k.transformed(&inv))
                .collect())
        })
        .collect()
}

/// Mean squared error over the cells of unmasked joints.
///
/// `mask` is `[B, K]` with entries 0 or 1. With every joint masked the
/// loss is a constant 0.
pub fn mse_loss(tape: &mut Tape, pred: Var, target: &Tensor, mask: &Tensor) -> Result<Var> {
    let ps = tape.shape(pred).to_vec();
    if ps.as_slice() != target.shape() || ps.len() != 4 || mask.shape() != &ps[..2] {
        return Err(Error::Shape(format!(
            "loss expects equal [B,K,H,W] prediction and target with a [B,K] mask; got {ps:?}, {:?}, {:?}",
            target.shape(),
            mask.shape()
        )));
    }
    let active = mask.sum();
    if active == 0.0 {
        log::warn!("every joint is masked; loss is zero");
        return Ok(tape.constant(Tensor::scalar(0.0)));
    }
    let t = tape.constant(target.clone());
    let m = tape.constant(mask.clone().reshape(&[ps[0], ps[1], 1, 1])?);
    let d = tape.sub(pred, t)?;
    let d = tape.mul(d, m)?;
    let sq = tape.square(d);
    let total = tape.sum(sq);
    Ok(tape.scale(total, 1.0 / (active * (ps[2] * ps[3]) as f64)))
}
