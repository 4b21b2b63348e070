//! Temporal integration: self-attention across all context-frame tokens,
//! then cross-attention from the center frame's tokens into them.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use vidpose_tensor::{ParamStore, Var};

use crate::error::{Error, Result};
use crate::nn::{Attended, Ctx, LayerNorm, MultiHeadAttention};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CrossAttnConfig {
    pub heads: usize,
}

impl Default for CrossAttnConfig {
    fn default() -> Self {
        CrossAttnConfig { heads: 4 }
    }
}

pub struct CenterUpdate {
    /// Updated center features `[B, C, H, W]`.
    pub features: Var,
    /// Cross-attention weights `[B, heads, H·W, N]`, absent without context.
    pub alpha: Option<Var>,
}

#[derive(Clone, Debug)]
pub struct CrossAttention {
    pub context_attn: MultiHeadAttention,
    pub context_norm: LayerNorm,
    pub cross_attn: MultiHeadAttention,
    pub cross_norm: LayerNorm,
}

/// `[B, C, H, W]` → `[B, H·W, C]`.
pub fn to_tokens(ctx: &mut Ctx<'_>, x: Var) -> Result<Var> {
    let s = ctx.tape.shape(x).to_vec();
    if s.len() != 4 {
        return Err(Error::Shape(format!("expected [B,C,H,W], got {s:?}")));
    }
    let t = ctx.tape.reshape(x, &[s[0], s[1], s[2] * s[3]])?;
    Ok(ctx.tape.permute(t, &[0, 2, 1])?)
}

impl CrossAttention {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        cfg: &CrossAttnConfig,
        channels: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        Ok(CrossAttention {
            context_attn: MultiHeadAttention::new(store, &format!("{name}.context.attn"), channels, cfg.heads, true, rng)?,
            context_norm: LayerNorm::new(store, &format!("{name}.context.norm"), channels)?,
            cross_attn: MultiHeadAttention::new(store, &format!("{name}.cross.attn"), channels, cfg.heads, true, rng)?,
            cross_norm: LayerNorm::new(store, &format!("{name}.cross.norm"), channels)?,
        })
    }

    /// Joint self-attention over context tokens `[B, N, C]` with residual
    /// and layer norm. Empty context passes through unchanged.
    pub fn context_self_attention(&self, ctx: &mut Ctx<'_>, tokens: Var) -> Result<Var> {
        if ctx.tape.shape(tokens).get(1) == Some(&0) {
            log::warn!("no context frames; context self-attention skipped");
            return Ok(tokens);
        }
        let att = self.context_attn.forward(ctx, tokens, tokens)?;
        let y = ctx.tape.add(tokens, att.out)?;
        self.context_norm.forward(ctx, y)
    }

    /// Raw multi-head cross-attention: center queries `[B, M, C]` against
    /// context keys and values `[B, N, C]`, before residual and norm.
    pub fn attend(&self, ctx: &mut Ctx<'_>, center: Var, context: Var) -> Result<Attended> {
        self.cross_attn.forward(ctx, center, context)
    }

    /// Cross-attention with residual and layer norm; `[B, C, H, W]` center
    /// features updated from context tokens `[B, N, C]`.
    pub fn cross_attend(&self, ctx: &mut Ctx<'_>, center: Var, context: Var) -> Result<CenterUpdate> {
        let s = ctx.tape.shape(center).to_vec();
        if ctx.tape.shape(context).get(1) == Some(&0) {
            return Ok(CenterUpdate {
                features: center,
                alpha: None,
            });
        }
        let q = to_tokens(ctx, center)?;
        let att = self.attend(ctx, q, context)?;
        let y = ctx.tape.add(q, att.out)?;
        let y = self.cross_norm.forward(ctx, y)?;
        let y = ctx.tape.permute(y, &[0, 2, 1])?;
        Ok(CenterUpdate {
            features: ctx.tape.reshape(y, &s)?,
            alpha: Some(att.weights),
        })
    }

    /// Full module on a window of features `[B·T, C, H, W]` whose center
    /// frame sits at index `T / 2`.
    pub fn forward(&self, ctx: &mut Ctx<'_>, features: Var, frames: usize) -> Result<CenterUpdate> {
        let s = ctx.tape.shape(features).to_vec();
        if frames == 0 || s.len() != 4 || s[0] % frames != 0 {
            return Err(Error::Shape(format!(
                "expected [B·{frames}, C, H, W] features, got {s:?}"
            )));
        }
        let (b, c, h, w) = (s[0] / frames, s[1], s[2], s[3]);
        let mid = frames / 2;
        let x = ctx.tape.reshape(features, &[b, frames, c, h, w])?;
        let center = ctx.tape.narrow(x, 1, mid, 1)?;
        let center = ctx.tape.reshape(center, &[b, c, h, w])?;
        if frames == 1 {
            log::warn!("window has a single frame; cross-attention passes the center through");
            return Ok(CenterUpdate {
                features: center,
                alpha: None,
            });
        }
        let mut parts = Vec::with_capacity(2);
        if mid > 0 {
            parts.push(ctx.tape.narrow(x, 1, 0, mid)?);
        }
        if mid + 1 < frames {
            parts.push(ctx.tape.narrow(x, 1, mid + 1, frames - mid - 1)?);
        }
        let others = if parts.len() == 1 { parts[0] } else { ctx.tape.concat(&parts, 1)? };
        let others = ctx.tape.permute(others, &[0, 1, 3, 4, 2])?;
        let tokens = ctx.tape.reshape(others, &[b, (frames - 1) * h * w, c])?;
        let tokens = self.context_self_attention(ctx, tokens)?;
        self.cross_attend(ctx, center, tokens)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Init;
    use rand::SeedableRng;
    use vidpose_tensor::Tensor;

    fn setup() -> (ParamStore, CrossAttention, ChaCha8Rng) {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let m = CrossAttention::new(&mut store, "xattn", &CrossAttnConfig::default(), 8, &mut rng).unwrap();
        (store, m, rng)
    }

    #[test]
    fn output_matches_center_shape() {
        let (mut store, m, mut rng) = setup();
        for frames in [1, 3, 5] {
            let mut ctx = Ctx::new(&mut store, false);
            let f = ctx.tape.constant(Init::Normal(1.0).tensor(&[2 * frames, 8, 3, 2], &mut rng));
            let out = m.forward(&mut ctx, f, frames).unwrap();
            assert_eq!(ctx.tape.shape(out.features), &[2, 8, 3, 2]);
            assert_eq!(out.alpha.is_some(), frames > 1);
            if let Some(a) = out.alpha {
                assert_eq!(ctx.tape.shape(a), &[2, 4, 6, (frames - 1) * 6]);
                for row in ctx.tape.value(a).data().chunks((frames - 1) * 6) {
                    assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn single_frame_passes_center_through() {
        let (mut store, m, mut rng) = setup();
        let x = Init::Normal(1.0).tensor(&[2, 8, 3, 2], &mut rng);
        let mut ctx = Ctx::new(&mut store, false);
        let f = ctx.tape.constant(x.clone());
        let out = m.forward(&mut ctx, f, 1).unwrap();
        assert_eq!(ctx.tape.value(out.features), &x);
    }

    #[test]
    fn single_context_token_returns_its_value() {
        let (mut store, m, mut rng) = setup();
        let mut ctx = Ctx::new(&mut store, false);
        let q = ctx.tape.constant(Init::Normal(1.0).tensor(&[1, 5, 8], &mut rng));
        let kv = ctx.tape.constant(Init::Normal(1.0).tensor(&[1, 1, 8], &mut rng));
        let att = m.attend(&mut ctx, q, kv).unwrap();
        assert!(ctx.tape.value(att.weights).data().iter().all(|&a| a == 1.0));
        let v = m.cross_attn.v.forward(&mut ctx, kv).unwrap();
        let v = m.cross_attn.out.as_ref().unwrap().forward(&mut ctx, v).unwrap();
        let expect = ctx.tape.value(v).data().to_vec();
        for row in ctx.tape.value(att.out).data().chunks(8) {
            for (a, b) in row.iter().zip(&expect) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn context_permutation_is_equivariant() {
        let (mut store, m, mut rng) = setup();
        let x = Init::Normal(1.0).tensor(&[1, 4, 8], &mut rng);
        let perm = [2usize, 0, 3, 1];
        let xp = Tensor::from_fn(&[1, 4, 8], |i| x.at(&[0, perm[i / 8], i % 8]));
        let mut ctx = Ctx::new(&mut store, false);
        let a = ctx.tape.constant(x);
        let b = ctx.tape.constant(xp);
        let ya = m.context_self_attention(&mut ctx, a).unwrap();
        let yb = m.context_self_attention(&mut ctx, b).unwrap();
        let (ya, yb) = (ctx.tape.value(ya), ctx.tape.value(yb));
        for i in 0..4 {
            for j in 0..8 {
                assert!((ya.at(&[0, perm[i], j]) - yb.at(&[0, i, j])).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn empty_context_keeps_center() {
        let (mut store, m, mut rng) = setup();
        let x = Init::Normal(1.0).tensor(&[1, 8, 2, 2], &mut rng);
        let mut ctx = Ctx::new(&mut store, false);
        let c = ctx.tape.constant(x.clone());
        let kv = ctx.tape.constant(Tensor::zeros(&[1, 0, 8]));
        let out = m.cross_attend(&mut ctx, c, kv).unwrap();
        assert_eq!(ctx.tape.value(out.features), &x);
    }
}
