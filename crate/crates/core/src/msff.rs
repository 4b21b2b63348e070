//! Multi-scale feature fusion: a pyramid pooling module and convolutional
//! unification per tap, then attention fusion across the taps.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use vidpose_tensor::{ParamStore, Var};

use crate::error::{Error, Result};
use crate::nn::{BatchNorm2d, Conv2d, Ctx, Init, LayerNorm, Linear, MultiHeadAttention};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MsffConfig {
    /// Square output extents of the pooling branches.
    pub pool_scales: Vec<usize>,
    /// Heads of the cross-tap fusion attention.
    pub heads: usize,
    /// Also pass each tap's raw map through the pyramid, doubling the
    /// width entering the unifying convolution.
    pub keep_input: bool,
}

impl Default for MsffConfig {
    fn default() -> Self {
        MsffConfig {
            pool_scales: vec![1, 2, 3, 6],
            heads: 4,
            keep_input: false,
        }
    }
}

impl MsffConfig {
    /// Checks the config against the feature width and tap count it will
    /// be applied to.
    pub fn validate(&self, channels: usize, taps: usize) -> Result<()> {
        let n = self.pool_scales.len();
        if n == 0 || self.pool_scales.contains(&0) {
            return Err(Error::Config("msff: pool_scales must be non-empty and positive".into()));
        }
        if channels % n != 0 {
            return Err(Error::Config(format!(
                "msff: {channels} channels cannot be split across {n} pooling branches"
            )));
        }
        let width = channels * taps;
        if self.heads == 0 || width % self.heads != 0 {
            return Err(Error::Config(format!(
                "msff: fusion width {width} is not divisible by {} heads",
                self.heads
            )));
        }
        Ok(())
    }
}

/// Pooling at several scales, each branch reduced to `C / branches`
/// channels and upsampled back, concatenated to `C` channels.
#[derive(Clone, Debug)]
pub struct Ppm {
    branches: Vec<(usize, Conv2d, BatchNorm2d)>,
    keep_input: bool,
}

impl Ppm {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        channels: usize,
        scales: &[usize],
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if scales.is_empty() || channels % scales.len() != 0 {
            return Err(Error::Config(format!(
                "ppm: {channels} channels cannot be split across {} scales",
                scales.len()
            )));
        }
        let reduced = channels / scales.len();
        let branches = scales
            .iter()
            .enumerate()
            .map(|(i, &s)| {
                let conv = Conv2d::new(
                    store,
                    &format!("{name}.branch{i}.conv"),
                    channels,
                    reduced,
                    1,
                    1,
                    0,
                    false,
                    Init::Kaiming(channels),
                    rng,
                )?;
                let bn = BatchNorm2d::new(store, &format!("{name}.branch{i}.bn"), reduced)?;
                Ok((s, conv, bn))
            })
            .collect::<Result<_>>()?;
        Ok(Ppm {
            branches,
            keep_input: false,
        })
    }

    /// Prepends the input itself to the concatenated branches (`2C`
    /// channels out).
    pub fn keeping_input(mut self) -> Self {
        self.keep_input = true;
        self
    }

    pub fn out_channels(&self, channels: usize) -> usize {
        if self.keep_input {
            2 * channels
        } else {
            channels
        }
    }

    pub fn branch_convs(&self) -> impl Iterator<Item = &Conv2d> {
        self.branches.iter().map(|(_, c, _)| c)
    }

    pub fn forward(&self, ctx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        let s = ctx.tape.shape(x).to_vec();
        if s.len() != 4 {
            return Err(Error::Shape(format!("ppm expects [B,C,H,W], got {s:?}")));
        }
        let (h, w) = (s[2], s[3]);
        let mut outs = Vec::with_capacity(self.branches.len() + 1);
        if self.keep_input {
            outs.push(x);
        }
        for (scale, conv, bn) in &self.branches {
            // Scales larger than the map clamp to its extent.
            let p = ctx.tape.adaptive_avg_pool2d(x, (*scale).min(h), (*scale).min(w))?;
            let p = conv.forward(ctx, p)?;
            let p = bn.forward(ctx, p)?;
            let p = ctx.tape.relu(p);
            outs.push(ctx.tape.interpolate_bilinear(p, h, w)?);
        }
        Ok(ctx.tape.concat(&outs, 1)?)
    }
}

/// 3×3 convolution, batch norm and ReLU down to the tap width.
#[derive(Clone, Debug)]
pub struct Unify {
    pub conv: Conv2d,
    pub bn: BatchNorm2d,
}

impl Unify {
    pub fn new(store: &mut ParamStore, name: &str, in_channels: usize, channels: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        Ok(Unify {
            conv: Conv2d::new(
                store,
                &format!("{name}.conv"),
                in_channels,
                channels,
                3,
                1,
                1,
                false,
                Init::Kaiming(in_channels * 9),
                rng,
            )?,
            bn: BatchNorm2d::new(store, &format!("{name}.bn"), channels)?,
        })
    }

    pub fn forward(&self, ctx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        let y = self.conv.forward(ctx, x)?;
        let y = self.bn.forward(ctx, y)?;
        Ok(ctx.tape.relu(y))
    }
}

pub struct MsffOutput {
    /// `[N, C, H, W]`, the shape of a single tap.
    pub fused: Var,
    /// Fusion attention weights `[N, heads, H·W, H·W]`.
    pub attention: Var,
}

#[derive(Clone, Debug)]
pub struct Msff {
    pub cfg: MsffConfig,
    pub channels: usize,
    pub ppm: Vec<Ppm>,
    pub unify: Vec<Unify>,
    pub attn: MultiHeadAttention,
    pub norm: LayerNorm,
    pub expand: Linear,
    pub project: Linear,
}

impl Msff {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        cfg: &MsffConfig,
        channels: usize,
        taps: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        cfg.validate(channels, taps)?;
        let width = channels * taps;
        let init = Init::TruncNormal(0.02);
        let mut ppm = Vec::with_capacity(taps);
        let mut unify = Vec::with_capacity(taps);
        for l in 0..taps {
            let mut p = Ppm::new(store, &format!("{name}.tap{l}.ppm"), channels, &cfg.pool_scales, rng)?;
            if cfg.keep_input {
                p = p.keeping_input();
            }
            let width = p.out_channels(channels);
            unify.push(Unify::new(store, &format!("{name}.tap{l}.unify"), width, channels, rng)?);
            ppm.push(p);
        }
        Ok(Msff {
            cfg: cfg.clone(),
            channels,
            ppm,
            unify,
            attn: MultiHeadAttention::new(store, &format!("{name}.fusion.attn"), width, cfg.heads, false, rng)?,
            norm: LayerNorm::new(store, &format!("{name}.fusion.norm"), width)?,
            expand: Linear::new(store, &format!("{name}.fusion.linear"), width, width, true, init, rng)?,
            project: Linear::new(store, &format!("{name}.fusion.project"), channels, channels, true, init, rng)?,
        })
    }

    pub fn taps(&self) -> usize {
        self.ppm.len()
    }

    /// Pooling and unification of one tap.
    pub fn prepare(&self, ctx: &mut Ctx<'_>, tap: usize, x: Var) -> Result<Var> {
        let p = self.ppm[tap].forward(ctx, x)?;
        self.unify[tap].forward(ctx, p)
    }

    /// Attention fusion of already-unified taps.
    pub fn fuse(&self, ctx: &mut Ctx<'_>, taps: &[Var]) -> Result<MsffOutput> {
        if taps.len() != self.taps() {
            return Err(Error::Shape(format!(
                "msff built for {} taps, got {}",
                self.taps(),
                taps.len()
            )));
        }
        let s = ctx.tape.shape(taps[0]).to_vec();
        for &t in taps {
            if ctx.tape.shape(t) != s.as_slice() || s.len() != 4 || s[1] != self.channels {
                return Err(Error::Shape(format!(
                    "msff taps must share shape [N,{},H,W]; got {:?} and {:?}",
                    self.channels,
                    s,
                    ctx.tape.shape(t)
                )));
            }
        }
        let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
        let l = taps.len();
        let width = l * c;
        let cat = ctx.tape.concat(taps, 1)?;
        let cat = ctx.tape.reshape(cat, &[n, width, h * w])?;
        let tokens = ctx.tape.permute(cat, &[0, 2, 1])?;
        let att = self.attn.forward(ctx, tokens, tokens)?;
        let res = ctx.tape.add(tokens, att.out)?;
        let normed = self.norm.forward(ctx, res)?;
        let y = self.expand.forward(ctx, normed)?;
        let y = ctx.tape.reshape(y, &[n, h * w, l, c])?;
        let y = ctx.tape.mean_axis(y, 2)?;
        let y = self.project.forward(ctx, y)?;
        let y = ctx.tape.permute(y, &[0, 2, 1])?;
        Ok(MsffOutput {
            fused: ctx.tape.reshape(y, &[n, c, h, w])?,
            attention: att.weights,
        })
    }

    pub fn forward(&self, ctx: &mut Ctx<'_>, taps: &[Var]) -> Result<MsffOutput> {
        if taps.len() != self.taps() {
            return Err(Error::Shape(format!(
                "msff built for {} taps, got {}",
                self.taps(),
                taps.len()
            )));
        }
        let prepared = taps
            .iter()
            .enumerate()
            .map(|(i, &t)| self.prepare(ctx, i, t))
            .collect::<Result<Vec<_>>>()?;
        self.fuse(ctx, &prepared)
    }
}
