//! On-disk form of a synthetic dataset: one directory per video holding
//! PNG frames and a JSON ground-truth sidecar.
//!
//! Sidecar schema (version 1):
//! `{"version":1,"joints":[names…],"width":W,"height":H,
//!   "frames":[{"index":i,"events":{…},"keypoints":[[x,y,visible],…]},…]}`
//! with coordinates in continuous pixels (pixel centers at `i + 0.5`).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::skeleton::JOINT_NAMES;
use super::synth::{FrameEvents, SyntheticVideo};
use crate::error::{Error, Result};

pub const SIDECAR_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct SidecarFrame {
    pub index: usize,
    pub events: FrameEvents,
    pub keypoints: Vec<(f64, f64, bool)>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct Sidecar {
    pub version: u32,
    pub joints: Vec<String>,
    pub width: usize,
    pub height: usize,
    pub frames: Vec<SidecarFrame>,
}

impl Sidecar {
    pub fn of(video: &SyntheticVideo) -> Self {
        let (height, width) = video.frames.first().map_or((0, 0), |f| (f.h, f.w));
        Sidecar {
            version: SIDECAR_VERSION,
            joints: JOINT_NAMES.iter().map(|s| s.to_string()).collect(),
            width,
            height,
            frames: video
                .poses
                .iter()
                .zip(&video.events)
                .enumerate()
                .map(|(index, (p, e))| SidecarFrame {
                    index,
                    events: *e,
                    keypoints: p.iter().map(|k| (k.x, k.y, k.visible)).collect(),
                })
                .collect(),
        }
    }
}

pub fn write_video(video: &SyntheticVideo, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (i, f) in video.frames.iter().enumerate() {
        let path = dir.join(format!("frame_{i:03}.png"));
        image::save_buffer(&path, &f.to_rgb8(), f.w as u32, f.h as u32, image::ColorType::Rgb8)?;
    }
    let path = dir.join("ground_truth.json");
    let json = serde_json::to_string_pretty(&Sidecar::of(video))?;
    fs::write(&path, json).map_err(|e| Error::io(&path, e))
}

/// Writes every video under `root/video_NNN/`.
pub fn write_dataset(videos: &[SyntheticVideo], root: &Path) -> Result<()> {
    for (i, v) in videos.iter().enumerate() {
        write_video(v, &root.join(format!("video_{i:03}")))?;
    }
    Ok(())
}

pub fn read_sidecar(path: &Path) -> Result<Sidecar> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let s: Sidecar = serde_json::from_str(&text)?;
    if s.version != SIDECAR_VERSION {
        return Err(Error::Config(format!(
            "{}: unsupported sidecar version {}",
            path.display(),
            s.version
        )));
    }
    Ok(s)
}
