//! Heatmap head: two upsampling deconvolution blocks and a 3×3 joint
//! classifier, quadrupling the patch grid.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use vidpose_tensor::{ParamStore, Var};

use crate::error::{Error, Result};
use crate::nn::{BatchNorm2d, Conv2d, Ctx, Init, Upsample2x};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecoderConfig {
    /// Width of both deconvolution blocks.
    pub channels: usize,
    /// Number of joints `K`.
    pub joints: usize,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        DecoderConfig {
            channels: 32,
            joints: 15,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Decoder {
    pub up: [(Upsample2x, BatchNorm2d); 2],
    pub head: Conv2d,
    pub joints: usize,
}

impl Decoder {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        cfg: &DecoderConfig,
        in_channels: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if cfg.channels == 0 || cfg.joints == 0 {
            return Err(Error::Config("decoder: channels and joints must be positive".into()));
        }
        let d = cfg.channels;
        let block = |store: &mut ParamStore, i: usize, cin: usize, rng: &mut ChaCha8Rng| -> Result<_> {
            Ok((
                Upsample2x::new(store, &format!("{name}.deconv{i}"), cin, d, rng)?,
                BatchNorm2d::new(store, &format!("{name}.deconv{i}.bn"), d)?,
            ))
        };
        let up = [block(store, 0, in_channels, rng)?, block(store, 1, d, rng)?];
        let head = Conv2d::new(
            store,
            &format!("{name}.final"),
            d,
            cfg.joints,
            3,
            1,
            1,
            true,
            Init::Normal(0.001),
            rng,
        )?;
        Ok(Decoder {
            up,
            head,
            joints: cfg.joints,
        })
    }

    /// `[B, C, Hp, Wp]` → heatmaps `[B, K, 4·Hp, 4·Wp]`.
    pub fn forward(&self, ctx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        if ctx.tape.shape(x).len() != 4 {
            return Err(Error::Shape(format!(
                "decoder expects [B,C,H,W], got {:?}",
                ctx.tape.shape(x)
            )));
        }
        let mut h = x;
        for (deconv, bn) in &self.up {
            h = deconv.forward(ctx, h)?;
            h = bn.forward(ctx, h)?;
            h = ctx.tape.relu(h);
        }
        self.head.forward(ctx, h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use vidpose_tensor::Tensor;

    #[test]
    fn quadruples_the_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let d = Decoder::new(&mut store, "decoder", &DecoderConfig::default(), 32, &mut rng).unwrap();
        let mut ctx = Ctx::new(&mut store, true);
        let x = ctx.tape.constant(Init::Normal(1.0).tensor(&[2, 32, 8, 6], &mut rng));
        let y = d.forward(&mut ctx, x).unwrap();
        assert_eq!(ctx.tape.shape(y), &[2, 15, 32, 24]);
    }

    #[test]
    fn zero_weights_give_zero_heatmaps() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let d = Decoder::new(&mut store, "decoder", &DecoderConfig { channels: 4, joints: 3 }, 4, &mut rng).unwrap();
        for (_, p) in store.iter_mut() {
            if p.name.ends_with("weight") {
                p.value = Tensor::zeros(p.value.shape());
            }
        }
        let mut ctx = Ctx::new(&mut store, false);
        let x = ctx.tape.constant(Init::Normal(1.0).tensor(&[1, 4, 2, 3], &mut rng));
        let y = d.forward(&mut ctx, x).unwrap();
        assert_eq!(ctx.tape.shape(y), &[1, 3, 8, 12]);
        assert!(ctx.tape.value(y).data().iter().all(|&v| v == 0.0));
    }
}
