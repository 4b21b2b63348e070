//! Temporal windows: `2T + 1` frames cropped with the center frame's
//! enlarged bounding box.

use super::frame::Frame;
use super::synth::SyntheticVideo;
use crate::codec::{Keypoint, Pose};
use crate::error::{Error, Result};
use crate::geometry::{enlarge_bbox, Affine, BBox};

/// How windows are cropped out of the source frames.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CropSpec {
    pub out_h: usize,
    pub out_w: usize,
    pub delta: f64,
    pub margin: f64,
}

#[derive(Clone, Debug)]
pub struct FrameWindow {
    pub center: usize,
    /// Source frame index of each window slot (clamped at the ends).
    pub indices: Vec<usize>,
    /// Cropped frames, all `out_h × out_w`.
    pub frames: Vec<Frame>,
    /// Person box `b_t` of the center frame, at the crop aspect ratio.
    pub bbox: BBox,
    /// Enlarged box `b̂_t` after clipping to the image.
    pub enlarged: BBox,
    pub clipped: bool,
    /// Image pixels → crop pixels; shared by every frame of the window.
    pub transform: Affine,
    /// Center-frame ground truth in image pixels.
    pub pose: Pose,
}

impl FrameWindow {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn out_size(&self) -> (usize, usize) {
        (self.frames[0].h, self.frames[0].w)
    }

    /// Ground truth in crop pixels; joints outside the crop are invisible.
    pub fn crop_pose(&self) -> Pose {
        let (h, w) = self.out_size();
        self.pose
            .iter()
            .map(|k| {
                let mut c = k.transformed(&self.transform);
                let inside = c.x >= 0.0 && c.y >= 0.0 && c.x < w as f64 && c.y < h as f64;
                c.visible = k.visible && inside;
                c.confidence = if c.visible { 1.0 } else { 0.0 };
                c
            })
            .collect()
    }
}

/// Window slot indices `t−T ..= t+T`, clamped into `0..len`.
pub fn window_indices(len: usize, t: usize, half: usize) -> Vec<usize> {
    (0..2 * half + 1)
        .map(|k| (t + k).saturating_sub(half).min(len - 1))
        .collect()
}

/// Tight box around all joints plus a relative margin, widened to the
/// `out_h : out_w` aspect ratio.
pub fn person_box(pose: &[Keypoint], margin: f64, aspect_hw: f64) -> Result<BBox> {
    if pose.is_empty() {
        return Err(Error::Usage("cannot box an empty pose".into()));
    }
    let (mut x0, mut y0, mut x1, mut y1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
    for k in pose {
        x0 = x0.min(k.x);
        y0 = y0.min(k.y);
        x1 = x1.max(k.x);
        y1 = y1.max(k.y);
    }
    let mut b = BBox::from_corners(x0, y0, x1, y1);
    b.w = (b.w * (1.0 + 2.0 * margin)).max(1.0);
    b.h = (b.h * (1.0 + 2.0 * margin)).max(1.0);
    if b.h / b.w < aspect_hw {
        b.h = b.w * aspect_hw;
    } else {
        b.w = b.h / aspect_hw;
    }
    Ok(b)
}

/// Image → crop transform for a box resized to `out_h × out_w`.
pub fn crop_transform(b: &BBox, out_h: usize, out_w: usize) -> Affine {
    let (x0, y0, _, _) = b.corners();
    let (sx, sy) = (out_w as f64 / b.w, out_h as f64 / b.h);
    Affine([sx, 0.0, -sx * x0, 0.0, sy, -sy * y0])
}

pub fn extract_window(video: &SyntheticVideo, t: usize, half: usize, crop: &CropSpec) -> Result<FrameWindow> {
    let n = video.frames.len();
    if n == 0 {
        return Err(Error::Usage("cannot window an empty video".into()));
    }
    if t >= n {
        return Err(Error::Usage(format!("center frame {t} outside a {n}-frame video")));
    }
    let pose = video.poses[t].clone();
    let src = &video.frames[t];
    let bbox = person_box(&pose, crop.margin, crop.out_h as f64 / crop.out_w as f64)?;
    let big = enlarge_bbox(bbox, crop.delta)?;
    let enlarged = big
        .clip(src.w as f64, src.h as f64)
        .ok_or_else(|| Error::Usage("person box lies outside the frame".into()))?;
    let transform = crop_transform(&enlarged, crop.out_h, crop.out_w);
    let inverse = transform.inverse()?;
    let indices = window_indices(n, t, half);
    let frames = indices
        .iter()
        .map(|&i| video.frames[i].warp(crop.out_h, crop.out_w, &inverse))
        .collect();
    Ok(FrameWindow {
        center: t,
        indices,
        frames,
        bbox,
        enlarged,
        clipped: enlarged != big,
        transform,
        pose,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth::{generate, SyntheticSpec};

    const CROP: CropSpec = CropSpec {
        out_h: 64,
        out_w: 48,
        delta: 1.25,
        margin: 0.1,
    };

    #[test]
    fn clamped_indices() {
        assert_eq!(window_indices(8, 0, 2), vec![0, 0, 0, 1, 2]);
        assert_eq!(window_indices(8, 4, 2), vec![2, 3, 4, 5, 6]);
        assert_eq!(window_indices(8, 7, 2), vec![5, 6, 7, 7, 7]);
        assert_eq!(window_indices(1, 0, 2), vec![0; 5]);
    }

    #[test]
    fn windows_share_one_crop_and_roundtrip_gt() {
        let spec = SyntheticSpec { videos: 2, frames: 5, ..Default::default() };
        let vids = generate(&spec).unwrap();
        for v in &vids {
            for t in 0..5 {
                let w = extract_window(v, t, 2, &CROP).unwrap();
                assert_eq!(w.len(), 5);
                assert!(w.frames.iter().all(|f| (f.h, f.w) == (64, 48)));
                let inv = w.transform.inverse().unwrap();
                for (k, c) in w.pose.iter().zip(w.crop_pose()) {
                    let back = c.transformed(&inv);
                    assert!((back.x - k.x).abs() < 1e-9 && (back.y - k.y).abs() < 1e-9);
                }
                assert!(w.enlarged.contains(&w.bbox.clip(96.0, 112.0).unwrap()));
            }
        }
    }

    #[test]
    fn error_paths() {
        let empty = SyntheticVideo { frames: vec![], poses: vec![], events: vec![] };
        assert!(matches!(extract_window(&empty, 0, 2, &CROP), Err(Error::Usage(_))));
        let spec = SyntheticSpec { videos: 1, frames: 3, ..Default::default() };
        let v = &generate(&spec).unwrap()[0];
        assert!(extract_window(v, 3, 2, &CROP).is_err());
    }

    #[test]
    fn person_box_has_crop_aspect() {
        let pose = vec![Keypoint::new(10.0, 10.0, true), Keypoint::new(30.0, 20.0, true)];
        let b = person_box(&pose, 0.0, 4.0 / 3.0).unwrap();
        assert_eq!((b.cx, b.cy, b.w), (20.0, 15.0, 20.0));
        assert!((b.h - 80.0 / 3.0).abs() < 1e-12);
    }
}
