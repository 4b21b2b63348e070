//! The full multi-frame model: backbone taps → MSFF → frame weighting →
//! center/context cross-attention → heatmap decoder.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use vidpose_tensor::{ParamStore, Var};

use crate::afw::{self, Afw};
use crate::backbone::{Backbone, BackboneConfig};
use crate::codec::HeatmapSpec;
use crate::cross_attention::{CrossAttention, CrossAttnConfig};
use crate::decoder::{Decoder, DecoderConfig};
use crate::error::{Error, Result};
use crate::msff::{Msff, MsffConfig};
use crate::nn::Ctx;

/// Switches for the three multi-frame components. Everything off gives
/// the single-frame baseline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Ablation {
    pub msff: bool,
    pub afw: bool,
    pub cross_attention: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Ablation {
            msff: true,
            afw: true,
            cross_attention: true,
        }
    }
}

impl Ablation {
    /// Disables the comma-separated components (`afw`, `msff`,
    /// `crossattn`).
    pub fn disable(&mut self, list: &str) -> Result<()> {
        for item in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            match item {
                "afw" => self.afw = false,
                "msff" => self.msff = false,
                "crossattn" | "cross_attention" | "cross-attention" => self.cross_attention = false,
                other => {
                    return Err(Error::Config(format!(
                        "unknown component `{other}` (expected afw, msff, crossattn)"
                    )))
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Temporal half-window `T`: the model sees `2T + 1` frames.
    pub window: usize,
    /// Target Gaussian width in heatmap cells.
    pub sigma: f64,
    /// Seed of the parameter initialization.
    pub init_seed: u64,
    pub backbone: BackboneConfig,
    pub msff: MsffConfig,
    pub cross_attention: CrossAttnConfig,
    pub decoder: DecoderConfig,
    pub ablation: Ablation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            window: 2,
            sigma: 2.0,
            init_seed: 0,
            backbone: BackboneConfig::default(),
            msff: MsffConfig::default(),
            cross_attention: CrossAttnConfig::default(),
            decoder: DecoderConfig::default(),
            ablation: Ablation::default(),
        }
    }
}

impl ModelConfig {
    pub fn frames(&self) -> usize {
        2 * self.window + 1
    }

    pub fn joints(&self) -> usize {
        self.decoder.joints
    }

    pub fn heatmap_spec(&self) -> HeatmapSpec {
        let (hp, wp) = self.backbone.grid();
        HeatmapSpec {
            h: 4 * hp,
            w: 4 * wp,
            stride: self.backbone.patch as f64 / 4.0,
            sigma: self.sigma,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        let c = self.backbone.embed_dim;
        if self.ablation.msff {
            self.msff.validate(c, self.backbone.tap_layers.len())?;
        }
        if self.ablation.cross_attention && (self.cross_attention.heads == 0 || c % self.cross_attention.heads != 0) {
            return Err(Error::Config(format!(
                "cross_attention: width {c} is not divisible by {} heads",
                self.cross_attention.heads
            )));
        }
        if !(self.sigma > 0.0) {
            return Err(Error::Config("sigma must be positive".into()));
        }
        if self.backbone.patch % 4 != 0 {
            return Err(Error::Config("backbone.patch must be a multiple of 4 for integer heatmap strides".into()));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form; identifies checkpoints.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Intermediate and final outputs of one forward pass.
pub struct ModelOutput {
    /// `[B, K, Hh, Wh]`.
    pub heatmaps: Var,
    /// `[B, 2T+1]` frame weights.
    pub frame_weights: Var,
    /// Cross-attention weights `[B, heads, H·W, N]` when active.
    pub cross_alpha: Option<Var>,
}

#[derive(Clone, Debug)]
pub struct PoseModel {
    pub cfg: ModelConfig,
    pub backbone: Backbone,
    pub msff: Option<Msff>,
    pub afw: Option<Afw>,
    pub cross: Option<CrossAttention>,
    pub decoder: Decoder,
}

impl PoseModel {
    /// Builds the model and registers its parameters in `store`.
    pub fn new(cfg: &ModelConfig, store: &mut ParamStore) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.init_seed);
        let c = cfg.backbone.embed_dim;
        let backbone = Backbone::new(store, "backbone", &cfg.backbone, &mut rng)?;
        let msff = if cfg.ablation.msff {
            Some(Msff::new(store, "msff", &cfg.msff, c, cfg.backbone.tap_layers.len(), &mut rng)?)
        } else {
            None
        };
        let afw = if cfg.ablation.afw {
            Some(Afw::new(store, "afw", c, &mut rng)?)
        } else {
            None
        };
        let cross = if cfg.ablation.cross_attention {
            Some(CrossAttention::new(store, "cross_attention", &cfg.cross_attention, c, &mut rng)?)
        } else {
            None
        };
        let decoder = Decoder::new(store, "decoder", &cfg.decoder, c, &mut rng)?;
        Ok(PoseModel {
            cfg: cfg.clone(),
            backbone,
            msff,
            afw,
            cross,
            decoder,
        })
    }

    /// Whether the context frames can influence the output. Without frame
    /// weighting and cross-attention only the center frame is encoded.
    pub fn uses_context(&self) -> bool {
        self.afw.is_some() || self.cross.is_some()
    }

    /// `frames` is `[B·(2T+1), 3, H, W]`, window-major.
    pub fn forward(&self, ctx: &mut Ctx<'_>, frames: Var) -> Result<ModelOutput> {
        let t = self.cfg.frames();
        let s = ctx.tape.shape(frames).to_vec();
        if s.len() != 4 || s[0] == 0 || s[0] % t != 0 {
            return Err(Error::Shape(format!(
                "model expects [B·{t}, 3, H, W] frames, got {s:?}"
            )));
        }
        let b = s[0] / t;
        let (input, t) = if self.uses_context() {
            (frames, t)
        } else {
            let x = ctx.tape.reshape(frames, &[b, t, s[1], s[2], s[3]])?;
            let x = ctx.tape.narrow(x, 1, t / 2, 1)?;
            (ctx.tape.reshape(x, &[b, s[1], s[2], s[3]])?, 1)
        };
        let taps = self.backbone.encode(ctx, input)?.taps;
        let features = match &self.msff {
            Some(m) => m.forward(ctx, &taps)?.fused,
            None => *taps.last().expect("at least one tap"),
        };
        let weighted = match &self.afw {
            Some(a) => a.forward(ctx, features, t)?,
            None => afw::uniform(ctx, features, t)?,
        };
        let (center, cross_alpha) = match &self.cross {
            Some(x) => {
                let u = x.forward(ctx, weighted.features, t)?;
                (u.features, u.alpha)
            }
            None => {
                let fs = ctx.tape.shape(weighted.features).to_vec();
                let x = ctx.tape.reshape(weighted.features, &[b, t, fs[1], fs[2], fs[3]])?;
                let x = ctx.tape.narrow(x, 1, t / 2, 1)?;
                (ctx.tape.reshape(x, &[b, fs[1], fs[2], fs[3]])?, None)
            }
        };
        let heatmaps = self.decoder.forward(ctx, center)?;
        Ok(ModelOutput {
            heatmaps,
            frame_weights: weighted.weights,
            cross_alpha,
        })
    }
}
