//! Procedural videos of one articulated stick figure with occluders,
//! motion blur and sensor noise.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::frame::Frame;
use super::skeleton::*;
use crate::codec::{Keypoint, Pose};
use crate::error::{Error, Result};
use crate::nn::uniform;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub videos: usize,
    pub frames: usize,
    pub frame_h: usize,
    pub frame_w: usize,
    /// Range of the figure's standing height in pixels.
    pub figure_height: [f64; 2],
    /// Per-frame probability that an occluder event starts.
    pub occlusion_prob: f64,
    /// Per-frame probability of motion blur.
    pub blur_prob: f64,
    /// Per-frame probability of heavy sensor noise.
    pub noise_prob: f64,
    /// Baseline noise standard deviation on every frame.
    pub noise_std: f64,
    pub heavy_noise_std: f64,
    /// Fraction of videos held out for evaluation.
    pub holdout_fraction: f64,
    /// Margin added around the joints' tight box, relative to its size.
    pub bbox_margin: f64,
    /// Box enlargement factor applied before cropping.
    pub delta: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            videos: 200,
            frames: 8,
            frame_h: 112,
            frame_w: 96,
            figure_height: [50.0, 64.0],
            occlusion_prob: 0.08,
            blur_prob: 0.1,
            noise_prob: 0.1,
            noise_std: 0.02,
            heavy_noise_std: 0.2,
            holdout_fraction: 0.2,
            bbox_margin: 0.1,
            delta: 1.25,
            seed: 7,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("data: {m}")));
        if self.videos == 0 || self.frames == 0 {
            return bad("videos and frames must be positive");
        }
        let [lo, hi] = self.figure_height;
        if !(lo > 0.0 && hi >= lo) {
            return bad("figure_height must be an increasing positive range");
        }
        if hi * 1.2 > self.frame_h as f64 || hi * 0.7 > self.frame_w as f64 {
            return bad("frame is too small for the figure height");
        }
        for (name, p) in [
            ("occlusion_prob", self.occlusion_prob),
            ("blur_prob", self.blur_prob),
            ("noise_prob", self.noise_prob),
            ("holdout_fraction", self.holdout_fraction),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("data: {name} must lie in [0, 1], got {p}")));
            }
        }
        if !(self.delta >= 1.0) {
            return bad("delta must be ≥ 1");
        }
        if self.noise_std < 0.0 || self.heavy_noise_std < 0.0 || self.bbox_margin < 0.0 {
            return bad("noise levels and bbox_margin must be non-negative");
        }
        Ok(())
    }

    /// A variant with frequent occluders, for multi-frame comparisons.
    pub fn occlusion_heavy(&self) -> Self {
        SyntheticSpec {
            occlusion_prob: 0.35,
            blur_prob: 0.2,
            noise_prob: 0.2,
            ..self.clone()
        }
    }
}

/// Per-frame corruption events, recorded for inspection.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FrameEvents {
    pub occluded: bool,
    pub blurred: bool,
    pub noisy: bool,
}

#[derive(Clone, Debug)]
pub struct SyntheticVideo {
    pub frames: Vec<Frame>,
    /// Ground truth per frame, in frame pixels.
    pub poses: Vec<Pose>,
    pub events: Vec<FrameEvents>,
}

/// Sinusoid `base + amp · sin(ω t + φ)`.
#[derive(Clone, Copy, Debug)]
struct Wave {
    base: f64,
    amp: f64,
    phase: f64,
}

impl Wave {
    fn random(rng: &mut ChaCha8Rng, base: (f64, f64), amp: (f64, f64)) -> Self {
        Wave {
            base: uniform(rng, base.0, base.1),
            amp: uniform(rng, amp.0, amp.1),
            phase: uniform(rng, 0.0, 2.0 * PI),
        }
    }

    fn at(&self, omega: f64, t: f64) -> f64 {
        self.base + self.amp * (omega * t + self.phase).sin()
    }
}

/// Motion parameters of one figure; angles are radians from straight down.
struct Motion {
    height: f64,
    root: (f64, f64),
    velocity: (f64, f64),
    omega: f64,
    lean: Wave,
    head: Wave,
    upper_arm: [Wave; 2],
    elbow: [Wave; 2],
    thigh: [Wave; 2],
    knee: [Wave; 2],
    shoulder_width: f64,
    hip_width: f64,
}

fn polar(from: (f64, f64), angle: f64, len: f64) -> (f64, f64) {
    (from.0 + len * angle.sin(), from.1 + len * angle.cos())
}

impl Motion {
    fn random(spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> Self {
        let height = uniform(rng, spec.figure_height[0], spec.figure_height[1]);
        let period = uniform(rng, 6.0, 16.0);
        let side = |rng: &mut ChaCha8Rng, base: (f64, f64), amp: (f64, f64), mirror: bool| {
            let mut w = Wave::random(rng, base, amp);
            if mirror {
                w.base = -w.base;
            }
            w
        };
        Motion {
            height,
            root: (
                spec.frame_w as f64 * uniform(rng, 0.4, 0.6),
                spec.frame_h as f64 * uniform(rng, 0.45, 0.55),
            ),
            velocity: (uniform(rng, -1.5, 1.5), uniform(rng, -0.5, 0.5)),
            omega: 2.0 * PI / period,
            lean: Wave::random(rng, (-0.25, 0.25), (0.0, 0.15)),
            head: Wave::random(rng, (-0.3, 0.3), (0.0, 0.2)),
            // Right limbs extend toward −x, left limbs toward +x.
            upper_arm: [
                side(rng, (0.2, 1.6), (0.2, 0.9), true),
                side(rng, (0.2, 1.6), (0.2, 0.9), false),
            ],
            elbow: [
                side(rng, (0.0, 1.4), (0.1, 0.7), true),
                side(rng, (0.0, 1.4), (0.1, 0.7), false),
            ],
            thigh: [
                side(rng, (0.0, 0.5), (0.1, 0.5), true),
                side(rng, (0.0, 0.5), (0.1, 0.5), false),
            ],
            knee: [
                side(rng, (-0.6, 0.1), (0.0, 0.4), true),
                side(rng, (-0.6, 0.1), (0.0, 0.4), false),
            ],
            shoulder_width: uniform(rng, 0.09, 0.13),
            hip_width: uniform(rng, 0.06, 0.09),
        }
    }

    /// Joint positions at continuous time `t`.
    fn pose(&self, t: f64) -> Vec<(f64, f64)> {
        let h = self.height;
        let w = self.omega;
        let belly = (
            self.root.0 + self.velocity.0 * t,
            self.root.1 + self.velocity.1 * t + 0.01 * h * (2.0 * w * t).sin(),
        );
        let lean = self.lean.at(w, t);
        let up = lean + PI; // pointing up
        let neck = polar(belly, up, 0.3 * h);
        let face = polar(neck, up + self.head.at(w, t), 0.12 * h);
        let across = (lean.cos(), -lean.sin());
        let offset = |p: (f64, f64), d: f64| (p.0 + d * across.0, p.1 + d * across.1);
        let hip_center = polar(belly, lean, 0.08 * h);
        let mut xy = vec![(0.0, 0.0); NUM_JOINTS];
        xy[NECK] = neck;
        xy[BELLY] = belly;
        xy[FACE] = face;
        xy[R_SHOULDER] = offset(neck, -self.shoulder_width * h);
        xy[L_SHOULDER] = offset(neck, self.shoulder_width * h);
        xy[R_HIP] = offset(hip_center, -self.hip_width * h);
        xy[L_HIP] = offset(hip_center, self.hip_width * h);
        let arms = [(R_SHOULDER, R_ELBOW, R_WRIST), (L_SHOULDER, L_ELBOW, L_WRIST)];
        let legs = [(R_HIP, R_KNEE, R_ANKLE), (L_HIP, L_KNEE, L_ANKLE)];
        for s in 0..2 {
            // Legs swing in antiphase for a walking gait.
            let gait = if s == 0 { 1.0 } else { -1.0 };
            let (a, b, c) = arms[s];
            let ua = self.upper_arm[s].at(w, t) + lean;
            xy[b] = polar(xy[a], ua, 0.17 * h);
            xy[c] = polar(xy[b], ua + self.elbow[s].at(w, t), 0.15 * h);
            let (a, b, c) = legs[s];
            let th = self.thigh[s].base + gait * self.thigh[s].amp * (w * t + self.thigh[0].phase).sin() + lean;
            xy[b] = polar(xy[a], th, 0.23 * h);
            xy[c] = polar(xy[b], th + self.knee[s].at(w, t), 0.22 * h);
        }
        xy
    }
}

/// Limb colors; left and right limbs differ so the sides are separable.
const LIMB_COLORS: [[f32; 3]; 14] = [
    [0.95, 0.85, 0.70], // head–neck
    [0.90, 0.90, 0.90], // torso
    [0.95, 0.20, 0.20], // neck–r_shoulder
    [0.20, 0.40, 0.95], // neck–l_shoulder
    [0.95, 0.50, 0.10], // r upper arm
    [0.95, 0.90, 0.10], // r forearm
    [0.10, 0.80, 0.90], // l upper arm
    [0.60, 0.20, 0.95], // l forearm
    [0.85, 0.30, 0.55], // belly–r_hip
    [0.30, 0.65, 0.35], // belly–l_hip
    [0.75, 0.10, 0.10], // r thigh
    [0.55, 0.35, 0.05], // r shin
    [0.10, 0.20, 0.60], // l thigh
    [0.05, 0.55, 0.45], // l shin
];

fn draw_capsule(f: &mut Frame, a: (f64, f64), b: (f64, f64), r: f64, rgb: [f32; 3], alpha: f32) {
    let pad = r + 1.0;
    let x0 = (a.0.min(b.0) - pad).floor().max(0.0) as usize;
    let y0 = (a.1.min(b.1) - pad).floor().max(0.0) as usize;
    let x1 = ((a.0.max(b.0) + pad).ceil().max(0.0) as usize).min(f.w);
    let y1 = ((a.1.max(b.1) + pad).ceil().max(0.0) as usize).min(f.h);
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = (dx * dx + dy * dy).max(1e-12);
    for y in y0..y1 {
        for x in x0..x1 {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let t = (((px - a.0) * dx + (py - a.1) * dy) / len2).clamp(0.0, 1.0);
            let (qx, qy) = (a.0 + t * dx - px, a.1 + t * dy - py);
            let d = (qx * qx + qy * qy).sqrt();
            let cover = (r + 0.5 - d).clamp(0.0, 1.0) as f32;
            if cover > 0.0 {
                f.blend(y, x, rgb, cover * alpha);
            }
        }
    }
}

fn draw_figure(f: &mut Frame, xy: &[(f64, f64)], height: f64, colors: &[[f32; 3]; 14], alpha: f32) {
    for (i, &(a, b)) in LIMBS.iter().enumerate() {
        let r = if i == 1 { 0.05 * height } else { 0.03 * height };
        draw_capsule(f, xy[a], xy[b], r.max(1.0), colors[i], alpha);
    }
    draw_capsule(f, xy[FACE], xy[FACE], 0.07 * height, colors[0], alpha);
}

fn background(spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> Frame {
    let (h, w) = (spec.frame_h, spec.frame_w);
    let mut f = Frame::new(h, w);
    let c0: [f32; 3] = std::array::from_fn(|_| rng.random_range(0.0..0.6));
    let c1: [f32; 3] = std::array::from_fn(|_| rng.random_range(0.0..0.6));
    let angle = uniform(rng, 0.0, 2.0 * PI);
    let (ca, sa) = (angle.cos(), angle.sin());
    let span = (h * h + w * w) as f64;
    let span = span.sqrt();
    for y in 0..h {
        for x in 0..w {
            let t = (((x as f64 - w as f64 / 2.0) * ca + (y as f64 - h as f64 / 2.0) * sa) / span + 0.5) as f32;
            for c in 0..3 {
                let i = f.idx(c, y, x);
                f.data[i] = c0[c] + t * (c1[c] - c0[c]);
            }
        }
    }
    let blobs = rng.random_range(3..7);
    for _ in 0..blobs {
        let (bx, by) = (uniform(rng, 0.0, w as f64), uniform(rng, 0.0, h as f64));
        let r = uniform(rng, 5.0, 20.0);
        let col: [f32; 3] = std::array::from_fn(|_| rng.random_range(0.0..0.7));
        for y in 0..h {
            for x in 0..w {
                let d2 = (x as f64 + 0.5 - bx).powi(2) + (y as f64 + 0.5 - by).powi(2);
                let a = (0.6 * (-d2 / (2.0 * r * r)).exp()) as f32;
                if a > 1e-3 {
                    f.blend(y, x, col, a);
                }
            }
        }
    }
    f
}

/// Axis-aligned occluder rectangle `(x0, y0, x1, y1)` with a color.
#[derive(Clone, Copy, Debug)]
struct Occluder {
    rect: (f64, f64, f64, f64),
    rgb: [f32; 3],
}

impl Occluder {
    fn covers(&self, p: (f64, f64)) -> bool {
        let (x0, y0, x1, y1) = self.rect;
        p.0 >= x0 && p.0 < x1 && p.1 >= y0 && p.1 < y1
    }

    fn draw(&self, f: &mut Frame) {
        let (x0, y0, x1, y1) = self.rect;
        let ys = (y0.max(0.0).round() as usize).min(f.h)..(y1.max(0.0).round() as usize).min(f.h);
        let xs = (x0.max(0.0).round() as usize).min(f.w)..(x1.max(0.0).round() as usize).min(f.w);
        for y in ys {
            for x in xs.clone() {
                f.blend(y, x, self.rgb, 1.0);
            }
        }
    }
}

/// Keeps every pose of the track inside the frame with a small border.
fn fit_track(tracks: &mut [Vec<(f64, f64)>], w: f64, h: f64) {
    let border = 3.0;
    let (mut x0, mut y0, mut x1, mut y1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
    for p in tracks.iter().flatten() {
        x0 = x0.min(p.0);
        y0 = y0.min(p.1);
        x1 = x1.max(p.0);
        y1 = y1.max(p.1);
    }
    let shift = |lo: f64, hi: f64, extent: f64| {
        if hi - lo > extent - 2.0 * border {
            (extent - (lo + hi)) / 2.0
        } else if lo < border {
            border - lo
        } else if hi > extent - border {
            extent - border - hi
        } else {
            0.0
        }
    };
    let (dx, dy) = (shift(x0, x1, w), shift(y0, y1, h));
    for p in tracks.iter_mut().flatten() {
        p.0 += dx;
        p.1 += dy;
    }
}

/// Generates one video. Deterministic in `rng`'s state.
pub fn generate_video(spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> SyntheticVideo {
    let motion = Motion::random(spec, rng);
    let bg = background(spec, rng);
    let colors: [[f32; 3]; 14] = std::array::from_fn(|i| {
        std::array::from_fn(|c| (LIMB_COLORS[i][c] + rng.random_range(-0.05..0.05)).clamp(0.0, 1.0))
    });
    let n = spec.frames;
    let (fw, fh) = (spec.frame_w as f64, spec.frame_h as f64);

    let mut events = vec![FrameEvents::default(); n];
    for e in events.iter_mut() {
        e.blurred = rng.random_bool(spec.blur_prob);
        e.noisy = rng.random_bool(spec.noise_prob);
    }
    let mut occluders: Vec<Option<Occluder>> = vec![None; n];

    // Sub-time samples: 5 for blurred frames, spread over ±1.25 frames.
    let times: Vec<Vec<f64>> = (0..n)
        .map(|t| {
            if events[t].blurred {
                (0..5).map(|k| t as f64 + (k as f64 - 2.0) * 0.6).collect()
            } else {
                vec![t as f64]
            }
        })
        .collect();
    let mut tracks: Vec<Vec<(f64, f64)>> = times.iter().flatten().map(|&t| motion.pose(t)).collect();
    fit_track(&mut tracks, fw, fh);

    let mut t = 0;
    while t < n {
        if rng.random_bool(spec.occlusion_prob) {
            let len = rng.random_range(1..=2usize).min(n - t);
            let start_pose = &tracks[times[..t].iter().map(Vec::len).sum::<usize>()];
            let anchor = start_pose[rng.random_range(0..NUM_JOINTS)];
            let (ow, oh) = (
                motion.height * uniform(rng, 0.2, 0.45),
                motion.height * uniform(rng, 0.2, 0.45),
            );
            let (cx, cy) = (
                anchor.0 + uniform(rng, -0.3, 0.3) * ow,
                anchor.1 + uniform(rng, -0.3, 0.3) * oh,
            );
            let occ = Occluder {
                rect: (cx - ow / 2.0, cy - oh / 2.0, cx + ow / 2.0, cy + oh / 2.0),
                rgb: std::array::from_fn(|_| rng.random_range(0.0..1.0)),
            };
            for k in t..t + len {
                occluders[k] = Some(occ);
                events[k].occluded = true;
            }
            t += len;
        } else {
            t += 1;
        }
    }

    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let mut frames = Vec::with_capacity(n);
    let mut poses = Vec::with_capacity(n);
    let mut cursor = 0;
    for t in 0..n {
        let subs = &tracks[cursor..cursor + times[t].len()];
        cursor += times[t].len();
        let mut f = bg.clone();
        if subs.len() == 1 {
            draw_figure(&mut f, &subs[0], motion.height, &colors, 1.0);
        } else {
            let mut acc = vec![0.0f32; f.data.len()];
            for s in subs {
                let mut g = bg.clone();
                draw_figure(&mut g, s, motion.height, &colors, 1.0);
                for (a, v) in acc.iter_mut().zip(&g.data) {
                    *a += v / subs.len() as f32;
                }
            }
            f.data = acc;
        }
        // Ground truth is the mid-exposure pose.
        let gt = &subs[subs.len() / 2];
        if let Some(o) = &occluders[t] {
            o.draw(&mut f);
        }
        let std = if events[t].noisy { spec.heavy_noise_std } else { spec.noise_std };
        if std > 0.0 {
            for v in f.data.iter_mut() {
                *v = (*v + (std * noise.sample(rng)) as f32).clamp(0.0, 1.0);
            }
        }
        let pose = gt
            .iter()
            .map(|&p| {
                let inside = p.0 >= 0.0 && p.1 >= 0.0 && p.0 < fw && p.1 < fh;
                let hidden = occluders[t].is_some_and(|o| o.covers(p));
                Keypoint::new(p.0, p.1, inside && !hidden)
            })
            .collect();
        frames.push(f);
        poses.push(pose);
    }
    SyntheticVideo { frames, poses, events }
}

/// All videos of a spec; video `i` depends only on `(seed, i)`.
pub fn generate(spec: &SyntheticSpec) -> Result<Vec<SyntheticVideo>> {
    spec.validate()?;
    Ok((0..spec.videos)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(i as u64 + 1);
            generate_video(spec, &mut rng)
        })
        .collect())
}
