//! Adaptive frame weighting: a learned quality score per frame, normalized
//! across the window with a softmax and used to scale each frame's features.

use rand_chacha::ChaCha8Rng;
use vidpose_tensor::{ParamStore, Tensor, Var};

use crate::error::{Error, Result};
use crate::nn::{Conv2d, Ctx, Init, Linear};

#[derive(Clone, Debug)]
pub struct Afw {
    pub conv: Conv2d,
    pub head: Linear,
}

/// Output of [`Afw::weigh`].
pub struct Weighted {
    /// `[B·T, C, H, W]`, each frame scaled by its weight.
    pub features: Var,
    /// `[B, T]`, rows summing to one.
    pub weights: Var,
}

fn split_frames(shape: &[usize], frames: usize) -> Result<usize> {
    if frames == 0 {
        return Err(Error::Usage("frame weighting needs at least one frame".into()));
    }
    if shape.len() != 4 || shape[0] % frames != 0 {
        return Err(Error::Shape(format!(
            "expected [B·{frames}, C, H, W] features, got {shape:?}"
        )));
    }
    Ok(shape[0] / frames)
}

impl Afw {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        Ok(Afw {
            conv: Conv2d::new(
                store,
                &format!("{name}.quality.conv"),
                channels,
                channels,
                3,
                1,
                1,
                true,
                Init::Kaiming(channels * 9),
                rng,
            )?,
            head: Linear::new(
                store,
                &format!("{name}.quality.linear"),
                channels,
                1,
                true,
                Init::TruncNormal(0.02),
                rng,
            )?,
        })
    }

    /// Raw quality scores `[B, T]` for features `[B·T, C, H, W]`.
    pub fn score(&self, ctx: &mut Ctx<'_>, features: Var, frames: usize) -> Result<Var> {
        let s = ctx.tape.shape(features).to_vec();
        let b = split_frames(&s, frames)?;
        let h = self.conv.forward(ctx, features)?;
        let h = ctx.tape.relu(h);
        let h = ctx.tape.adaptive_avg_pool2d(h, 1, 1)?;
        let h = ctx.tape.reshape(h, &[s[0], s[1]])?;
        let q = self.head.forward(ctx, h)?;
        Ok(ctx.tape.reshape(q, &[b, frames])?)
    }

    pub fn forward(&self, ctx: &mut Ctx<'_>, features: Var, frames: usize) -> Result<Weighted> {
        let scores = self.score(ctx, features, frames)?;
        weigh(ctx, features, scores)
    }
}

/// Softmax over the frame axis of `scores` `[B, T]`, then each frame of
/// `features` `[B·T, C, H, W]` multiplied by its weight.
pub fn weigh(ctx: &mut Ctx<'_>, features: Var, scores: Var) -> Result<Weighted> {
    let ss = ctx.tape.shape(scores).to_vec();
    if ss.len() != 2 {
        return Err(Error::Shape(format!("scores must be [B, T], got {ss:?}")));
    }
    let weights = ctx.tape.softmax(scores, 1)?;
    scale_frames(ctx, features, weights)
}

/// Uniform weights `1/T`, used when frame weighting is disabled.
pub fn uniform(ctx: &mut Ctx<'_>, features: Var, frames: usize) -> Result<Weighted> {
    let s = ctx.tape.shape(features).to_vec();
    let b = split_frames(&s, frames)?;
    let weights = ctx.tape.constant(Tensor::full(&[b, frames], 1.0 / frames as f64));
    scale_frames(ctx, features, weights)
}

fn scale_frames(ctx: &mut Ctx<'_>, features: Var, weights: Var) -> Result<Weighted> {
    let (b, t) = {
        let ws = ctx.tape.shape(weights);
        (ws[0], ws[1])
    };
    let s = ctx.tape.shape(features).to_vec();
    if split_frames(&s, t)? != b {
        return Err(Error::Shape(format!(
            "features {s:?} do not hold {b}×{t} frames"
        )));
    }
    let f = ctx.tape.reshape(features, &[b, t, s[1], s[2], s[3]])?;
    let w = ctx.tape.reshape(weights, &[b, t, 1, 1, 1])?;
    let y = ctx.tape.mul(f, w)?;
    Ok(Weighted {
        features: ctx.tape.reshape(y, &s)?,
        weights,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn weights_for(scores: &[f64], t: usize) -> Vec<f64> {
        let mut store = ParamStore::new();
        let mut ctx = Ctx::new(&mut store, false);
        let b = scores.len() / t;
        let f = ctx.tape.constant(Tensor::ones(&[b * t, 1, 1, 1]));
        let s = ctx.tape.constant(Tensor::new(&[b, t], scores.to_vec()).unwrap());
        let w = weigh(&mut ctx, f, s).unwrap();
        ctx.tape.value(w.weights).data().to_vec()
    }

    #[test]
    fn equal_scores_are_uniform() {
        for w in weights_for(&[0.3; 5], 5) {
            assert!((w - 0.2).abs() < 1e-15);
        }
    }

    #[test]
    fn single_raised_score() {
        let w = weights_for(&[1.0, 0.0, 0.0, 0.0, 0.0], 5);
        let e = std::f64::consts::E;
        assert!((w[0] - e / (e + 4.0)).abs() < 1e-12);
        // The commonly quoted 0.40463 is a rounding of the same value.
        assert!((w[0] - 0.40463).abs() < 1e-4);
    }

    #[test]
    fn zero_weights_and_bias_give_zero_scores() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let afw = Afw::new(&mut store, "afw", 4, &mut rng).unwrap();
        store.get_mut(afw.conv.weight).value = Tensor::zeros(&[4, 4, 3, 3]);
        let mut ctx = Ctx::new(&mut store, false);
        let f = ctx.tape.constant(Init::Normal(1.0).tensor(&[6, 4, 3, 3], &mut rng));
        let s = afw.score(&mut ctx, f, 3).unwrap();
        assert_eq!(ctx.tape.shape(s), &[2, 3]);
        assert!(ctx.tape.value(s).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_frames_is_a_usage_error() {
        let mut store = ParamStore::new();
        let mut ctx = Ctx::new(&mut store, false);
        let f = ctx.tape.constant(Tensor::zeros(&[2, 1, 1, 1]));
        assert!(matches!(uniform(&mut ctx, f, 0), Err(Error::Usage(_))));
    }

    #[test]
    fn uniform_weights_scale_by_inverse_frame_count() {
        let mut store = ParamStore::new();
        let mut ctx = Ctx::new(&mut store, false);
        let f = ctx.tape.constant(Tensor::full(&[4, 2, 2, 2], 2.0));
        let w = uniform(&mut ctx, f, 4).unwrap();
        assert!(ctx.tape.value(w.features).data().iter().all(|&v| v == 0.5));
    }
}
