//! Patch-embedding transformer encoder with intermediate feature taps.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use vidpose_tensor::{ParamId, ParamStore, Var};

use crate::error::{Error, Result};
use crate::nn::{Conv2d, Ctx, Init, LayerNorm, Linear, MultiHeadAttention};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackboneConfig {
    pub img_h: usize,
    pub img_w: usize,
    pub patch: usize,
    pub embed_dim: usize,
    pub depth: usize,
    pub heads: usize,
    /// 1-based block indices after which features are recorded; the last
    /// entry must equal `depth`.
    pub tap_layers: Vec<usize>,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        BackboneConfig {
            img_h: 64,
            img_w: 48,
            patch: 8,
            embed_dim: 32,
            depth: 4,
            heads: 4,
            tap_layers: vec![1, 2, 4],
        }
    }
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("backbone: {m}")));
        if self.patch == 0 || self.img_h % self.patch != 0 || self.img_w % self.patch != 0 {
            return bad(format!(
                "image {}x{} is not divisible into {}-pixel patches",
                self.img_h, self.img_w, self.patch
            ));
        }
        if self.img_h == 0 || self.img_w == 0 {
            return bad("image extent must be positive".into());
        }
        if self.heads == 0 || self.embed_dim == 0 || self.embed_dim % self.heads != 0 {
            return bad(format!(
                "embed_dim {} is not divisible by {} heads",
                self.embed_dim, self.heads
            ));
        }
        if self.tap_layers.is_empty()
            || self.tap_layers.windows(2).any(|w| w[0] >= w[1])
            || self.tap_layers[0] == 0
            || *self.tap_layers.last().unwrap() != self.depth
        {
            return bad(format!(
                "tap_layers {:?} must be strictly increasing, start at ≥ 1 and end at depth {}",
                self.tap_layers, self.depth
            ));
        }
        Ok(())
    }

    /// Patch-grid extent `(Hp, Wp)`.
    pub fn grid(&self) -> (usize, usize) {
        (self.img_h / self.patch, self.img_w / self.patch)
    }

    pub fn tokens(&self) -> usize {
        let (h, w) = self.grid();
        h * w
    }
}

#[derive(Clone, Debug)]
struct Block {
    norm1: LayerNorm,
    attn: MultiHeadAttention,
    norm2: LayerNorm,
    fc1: Linear,
    fc2: Linear,
}

impl Block {
    fn new(store: &mut ParamStore, name: &str, dim: usize, heads: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        let init = Init::TruncNormal(0.02);
        Ok(Block {
            norm1: LayerNorm::new(store, &format!("{name}.norm1"), dim)?,
            attn: MultiHeadAttention::new(store, &format!("{name}.attn"), dim, heads, true, rng)?,
            norm2: LayerNorm::new(store, &format!("{name}.norm2"), dim)?,
            fc1: Linear::new(store, &format!("{name}.mlp.fc1"), dim, 4 * dim, true, init, rng)?,
            fc2: Linear::new(store, &format!("{name}.mlp.fc2"), 4 * dim, dim, true, init, rng)?,
        })
    }

    /// Pre-norm block; returns the output tokens and attention weights.
    fn forward(&self, ctx: &mut Ctx<'_>, x: Var) -> Result<(Var, Var)> {
        let h = self.norm1.forward(ctx, x)?;
        let att = self.attn.forward(ctx, h, h)?;
        let x = ctx.tape.add(x, att.out)?;
        let h = self.norm2.forward(ctx, x)?;
        let h = self.fc1.forward(ctx, h)?;
        let h = ctx.tape.gelu(h);
        let h = self.fc2.forward(ctx, h)?;
        Ok((ctx.tape.add(x, h)?, att.weights))
    }
}

/// Features recorded by [`Backbone::encode`].
pub struct TapFeatures {
    /// One `[N, C, Hp, Wp]` map per tap layer, in tap order.
    pub taps: Vec<Var>,
    /// Attention weights `[N, heads, tokens, tokens]` of every block.
    pub attention: Vec<Var>,
}

#[derive(Clone, Debug)]
pub struct Backbone {
    pub cfg: BackboneConfig,
    embed: Conv2d,
    pos: ParamId,
    blocks: Vec<Block>,
}

impl Backbone {
    pub fn new(store: &mut ParamStore, name: &str, cfg: &BackboneConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        cfg.validate()?;
        let c = cfg.embed_dim;
        let embed = Conv2d::new(
            store,
            &format!("{name}.patch_embed"),
            3,
            c,
            cfg.patch,
            cfg.patch,
            0,
            true,
            Init::TruncNormal(0.02),
            rng,
        )?;
        let pos = store.add(
            format!("{name}.pos_embed"),
            Init::TruncNormal(0.02).tensor(&[cfg.tokens(), c], rng),
        )?;
        let blocks = (0..cfg.depth)
            .map(|i| Block::new(store, &format!("{name}.block{i}"), c, cfg.heads, rng))
            .collect::<Result<_>>()?;
        Ok(Backbone {
            cfg: cfg.clone(),
            embed,
            pos,
            blocks,
        })
    }

    pub fn pos_embed(&self) -> ParamId {
        self.pos
    }

    pub fn patch_weight(&self) -> ParamId {
        self.embed.weight
    }

    /// `[N, 3, H, W]` images → `[N, Hp·Wp, C]` tokens with positional
    /// embeddings added.
    pub fn patch_embed(&self, ctx: &mut Ctx<'_>, images: Var) -> Result<Var> {
        let s = ctx.tape.shape(images).to_vec();
        if s.len() != 4 || s[1] != 3 || s[2] != self.cfg.img_h || s[3] != self.cfg.img_w {
            return Err(Error::Shape(format!(
                "patch_embed expects [N,3,{},{}] images, got {s:?}",
                self.cfg.img_h, self.cfg.img_w
            )));
        }
        let x = self.embed.forward(ctx, images)?;
        let (n, c, t) = (s[0], self.cfg.embed_dim, self.cfg.tokens());
        let x = ctx.tape.reshape(x, &[n, c, t])?;
        let x = ctx.tape.permute(x, &[0, 2, 1])?;
        let pos = ctx.param(self.pos);
        Ok(ctx.tape.add(x, pos)?)
    }

    /// Encodes every image independently (frames folded into the batch).
    pub fn encode(&self, ctx: &mut Ctx<'_>, images: Var) -> Result<TapFeatures> {
        let mut x = self.patch_embed(ctx, images)?;
        let n = ctx.tape.shape(x)[0];
        let (hp, wp) = self.cfg.grid();
        let c = self.cfg.embed_dim;
        let mut taps = Vec::with_capacity(self.cfg.tap_layers.len());
        let mut attention = Vec::with_capacity(self.blocks.len());
        for (i, block) in self.blocks.iter().enumerate() {
            let (y, w) = block.forward(ctx, x)?;
            x = y;
            attention.push(w);
            if self.cfg.tap_layers.contains(&(i + 1)) {
                let m = ctx.tape.permute(x, &[0, 2, 1])?;
                taps.push(ctx.tape.reshape(m, &[n, c, hp, wp])?);
            }
        }
        Ok(TapFeatures { taps, attention })
    }
}
