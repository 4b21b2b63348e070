//! Video collections, train/held-out splits and batch assembly. Windows are
//! cropped on demand from the stored videos.

use std::sync::Arc;

use rand_chacha::ChaCha8Rng;
use vidpose_tensor::Tensor;

use super::augment::{augment, AugmentConfig};
use super::synth::{generate, SyntheticSpec, SyntheticVideo};
use super::window::{extract_window, CropSpec, FrameWindow};
use crate::codec::{encode_target, HeatmapSpec, Pose};
use crate::error::{Error, Result};
use crate::geometry::Affine;
use crate::model::ModelConfig;

/// Offset subtracted from `[0, 1]` pixel values on the way into the model.
pub const PIXEL_MEAN: f64 = 0.5;

/// One window with its training target.
#[derive(Clone, Debug)]
pub struct Sample {
    pub window: FrameWindow,
    /// `[K, Hh, Wh]` Gaussian targets.
    pub target: Tensor,
    /// Joints that contribute to the loss.
    pub mask: Vec<bool>,
}

/// A stack of samples in model layout.
#[derive(Clone, Debug)]
pub struct Batch {
    /// `[B·(2T+1), 3, H, W]`, window-major.
    pub frames: Tensor,
    /// `[B, K, Hh, Wh]`.
    pub target: Tensor,
    /// `[B, K]` of 0/1.
    pub mask: Tensor,
    /// Image → crop transform per sample.
    pub transforms: Vec<Affine>,
    /// Ground truth in image pixels per sample.
    pub poses: Vec<Pose>,
    /// `(video, center frame)` per sample.
    pub keys: Vec<(usize, usize)>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.transforms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transforms.is_empty()
    }
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub videos: Arc<Vec<SyntheticVideo>>,
    /// `(video, center)` of every window, sorted.
    pub items: Vec<(usize, usize)>,
    pub crop: CropSpec,
    pub half_window: usize,
    pub heatmap: HeatmapSpec,
}

impl Dataset {
    /// Generates every video of `spec` and indexes one window per frame.
    pub fn generate(spec: &SyntheticSpec, model: &ModelConfig) -> Result<Self> {
        let videos = generate(spec)?;
        Ok(Self::from_videos(videos, spec, model))
    }

    pub fn from_videos(videos: Vec<SyntheticVideo>, spec: &SyntheticSpec, model: &ModelConfig) -> Self {
        let items = videos
            .iter()
            .enumerate()
            .flat_map(|(v, vid)| (0..vid.frames.len()).map(move |t| (v, t)))
            .collect();
        Dataset {
            videos: Arc::new(videos),
            items,
            crop: CropSpec {
                out_h: model.backbone.img_h,
                out_w: model.backbone.img_w,
                delta: spec.delta,
                margin: spec.bbox_margin,
            },
            half_window: model.window,
            heatmap: model.heatmap_spec(),
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Splits by video: the last `round(n · fraction)` videos are held out.
    pub fn split(&self, holdout_fraction: f64) -> (Dataset, Dataset) {
        let n = self.videos.len();
        let held = ((n as f64) * holdout_fraction).round() as usize;
        let cut = n - held.min(n);
        let part = |keep: &dyn Fn(usize) -> bool| Dataset {
            items: self.items.iter().copied().filter(|&(v, _)| keep(v)).collect(),
            ..self.clone()
        };
        (part(&|v| v < cut), part(&|v| v >= cut))
    }

    /// First `n` windows only.
    pub fn take(&self, n: usize) -> Dataset {
        Dataset {
            items: self.items.iter().copied().take(n).collect(),
            ..self.clone()
        }
    }

    pub fn window(&self, i: usize) -> Result<FrameWindow> {
        let &(v, t) = self
            .items
            .get(i)
            .ok_or_else(|| Error::Usage(format!("window {i} out of range ({} windows)", self.len())))?;
        extract_window(&self.videos[v], t, self.half_window, &self.crop)
    }

    /// Window `i` with its target; augmented when `aug` is given.
    pub fn sample(&self, i: usize, aug: Option<(&AugmentConfig, &mut ChaCha8Rng)>) -> Result<Sample> {
        let mut window = self.window(i)?;
        if let Some((cfg, rng)) = aug {
            if cfg.enabled {
                window = augment(&window, cfg, rng)?;
            }
        }
        let (target, mask) = encode_target(&window.crop_pose(), &self.heatmap);
        Ok(Sample { window, target, mask })
    }

    pub fn batch(&self, indices: &[usize], mut aug: Option<(&AugmentConfig, &mut ChaCha8Rng)>) -> Result<Batch> {
        let samples = indices
            .iter()
            .map(|&i| {
                let a = aug.as_mut().map(|(c, r)| (*c, &mut **r));
                self.sample(i, a)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut b = collate(&samples)?;
        b.keys = indices.iter().map(|&i| self.items[i]).collect();
        Ok(b)
    }
}

pub fn collate(samples: &[Sample]) -> Result<Batch> {
    let first = samples
        .first()
        .ok_or_else(|| Error::Usage("cannot collate an empty batch".into()))?;
    let t = first.window.len();
    let (h, w) = first.window.out_size();
    let ts = first.target.shape().to_vec();
    let b = samples.len();
    let mut frames = Vec::with_capacity(b * t * 3 * h * w);
    let mut target = Vec::with_capacity(b * first.target.numel());
    let mut mask = Vec::with_capacity(b * ts[0]);
    for s in samples {
        if s.window.len() != t || s.window.out_size() != (h, w) || s.target.shape() != ts.as_slice() {
            return Err(Error::Shape("samples in a batch differ in shape".into()));
        }
        for f in &s.window.frames {
            frames.extend(f.data.iter().map(|&v| v as f64 - PIXEL_MEAN));
        }
        target.extend_from_slice(s.target.data());
        mask.extend(s.mask.iter().map(|&m| if m { 1.0 } else { 0.0 }));
    }
    Ok(Batch {
        frames: Tensor::new(&[b * t, 3, h, w], frames)?,
        target: Tensor::new(&[b, ts[0], ts[1], ts[2]], target)?,
        mask: Tensor::new(&[b, ts[0]], mask)?,
        transforms: samples.iter().map(|s| s.window.transform).collect(),
        poses: samples.iter().map(|s| s.window.pose.clone()).collect(),
        keys: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn small() -> (SyntheticSpec, ModelConfig) {
        (
            SyntheticSpec { videos: 5, frames: 4, ..Default::default() },
            ModelConfig::default(),
        )
    }

    #[test]
    fn one_window_per_frame_and_video_split() {
        let (spec, model) = small();
        let ds = Dataset::generate(&spec, &model).unwrap();
        assert_eq!(ds.len(), 20);
        let (train, held) = ds.split(0.2);
        assert_eq!((train.len(), held.len()), (16, 4));
        assert!(held.items.iter().all(|&(v, _)| v == 4));
    }

    #[test]
    fn batches_are_deterministic() {
        let (spec, model) = small();
        let a = Dataset::generate(&spec, &model).unwrap();
        let b = Dataset::generate(&spec, &model).unwrap();
        let cfg = AugmentConfig::default();
        let mut ra = ChaCha8Rng::seed_from_u64(3);
        let mut rb = ChaCha8Rng::seed_from_u64(3);
        let ba = a.batch(&[0, 5, 9], Some((&cfg, &mut ra))).unwrap();
        let bb = b.batch(&[0, 5, 9], Some((&cfg, &mut rb))).unwrap();
        assert_eq!(ba.frames, bb.frames);
        assert_eq!(ba.target, bb.target);
        assert_eq!(ba.frames.shape(), &[15, 3, 64, 48]);
        assert_eq!(ba.target.shape(), &[3, 15, 32, 24]);
        assert_eq!(ba.keys, vec![(0, 0), (1, 1), (2, 1)]);
    }

    #[test]
    fn targets_peak_at_one_for_visible_joints() {
        let (spec, model) = small();
        let ds = Dataset::generate(&spec, &model).unwrap();
        let s = ds.sample(2, None).unwrap();
        let n = 32 * 24;
        for (k, &m) in s.mask.iter().enumerate() {
            let peak = s.target.data()[k * n..(k + 1) * n].iter().cloned().fold(0.0, f64::max);
            assert_eq!(peak, if m { 1.0 } else { 0.0 });
        }
    }
}
