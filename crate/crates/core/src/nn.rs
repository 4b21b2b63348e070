//! Parameterized layers shared by the model modules.
//!
//! Layers own [`ParamId`]s into a [`ParamStore`]; a forward pass borrows the
//! store through a [`Ctx`] and records onto its tape.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use vidpose_tensor::{
    BatchNormMode, ParamId, ParamStore, Tape, Tensor, Var, BATCH_NORM_EPS, BATCH_NORM_MOMENTUM,
    LAYER_NORM_EPS,
};

use crate::error::Result;

/// One forward pass: the tape it records on, the parameters it reads, and
/// whether batch statistics are live.
pub struct Ctx<'a> {
    pub tape: Tape,
    pub store: &'a mut ParamStore,
    pub training: bool,
}

impl<'a> Ctx<'a> {
    pub fn new(store: &'a mut ParamStore, training: bool) -> Self {
        Ctx {
            tape: Tape::new(),
            store,
            training,
        }
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.tape.param(self.store, id)
    }

    pub fn backward(&mut self, loss: Var) -> Result<()> {
        self.tape.backward(loss, self.store)?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
pub enum Init {
    Zeros,
    Ones,
    /// Normal resampled to within two standard deviations.
    TruncNormal(f64),
    Normal(f64),
    /// He-normal with the given fan-in.
    Kaiming(usize),
}

impl Init {
    pub fn tensor(self, shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        match self {
            Init::Zeros => Tensor::zeros(shape),
            Init::Ones => Tensor::ones(shape),
            Init::Normal(std) => {
                let n = Normal::new(0.0, std).expect("finite std");
                Tensor::from_fn(shape, |_| n.sample(rng))
            }
            Init::TruncNormal(std) => {
                let n = Normal::new(0.0, std).expect("finite std");
                Tensor::from_fn(shape, |_| loop {
                    let v: f64 = n.sample(rng);
                    if v.abs() <= 2.0 * std {
                        break v;
                    }
                })
            }
            Init::Kaiming(fan_in) => {
                let std = (2.0 / fan_in.max(1) as f64).sqrt();
                Init::Normal(std).tensor(shape, rng)
            }
        }
    }
}

/// `y = x·W + b` over the last axis; `W` is stored `[in, out]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        bias: bool,
        init: Init,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let weight = store.add(format!("{name}.weight"), init.tensor(&[in_dim, out_dim], rng))?;
        let bias = if bias {
            Some(store.add(format!("{name}.bias"), Tensor::zeros(&[out_dim]))?)
        } else {
            None
        };
        Ok(Linear {
            weight,
            bias,
            in_dim,
            out_dim,
        })
    }

    pub fn forward(&self, ctx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        let w = ctx.param(self.weight);
        let mut y = ctx.tape.matmul(x, w)?;
        if let Some(b) = self.bias {
            let b = ctx.param(b);
            y = ctx.tape.add(y, b)?;
        }
        Ok(y)
    }
}

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        bias: bool,
        init: Init,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let weight = store.add(
            format!("{name}.weight"),
            init.tensor(&[out_ch, in_ch, kernel, kernel], rng),
        )?;
        let bias = if bias {
            Some(store.add(format!("{name}.bias"), Tensor::zeros(&[out_ch]))?)
        } else {
            None
        };
        Ok(Conv2d {
            weight,
            bias,
            stride,
            pad,
        })
    }

    pub fn forward(&self, ctx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        let w = ctx.param(self.weight);
        let b = self.bias.map(|b| ctx.param(b));
        Ok(ctx.tape.conv2d(x, w, b, self.stride, self.pad)?)
    }
}

/// Stride-2 transposed convolution with kernel 4 and padding 1, which
/// exactly doubles the spatial extent.
#[derive(Clone, Debug)]
pub struct Upsample2x {
    pub weight: ParamId,
}

impl Upsample2x {
    pub const KERNEL: usize = 4;

    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let k = Self::KERNEL;
        let weight = store.add(
            format!("{name}.weight"),
            Init::Kaiming(in_ch * k * k / 4).tensor(&[in_ch, out_ch, k, k], rng),
        )?;
        Ok(Upsample2x { weight })
    }

    pub fn forward(&self, ctx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        let w = ctx.param(self.weight);
        Ok(ctx.tape.deconv2d(x, w, None, 2, 1, 0)?)
    }
}

/// Per-channel batch normalization with running statistics stored as
/// non-trainable buffers.
#[derive(Clone, Debug)]
pub struct BatchNorm2d {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

impl BatchNorm2d {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Result<Self> {
        Ok(BatchNorm2d {
            gamma: store.add(format!("{name}.gamma"), Tensor::ones(&[channels]))?,
            beta: store.add(format!("{name}.beta"), Tensor::zeros(&[channels]))?,
            running_mean: store.add_buffer(format!("{name}.running_mean"), Tensor::zeros(&[channels]))?,
            running_var: store.add_buffer(format!("{name}.running_var"), Tensor::ones(&[channels]))?,
        })
    }

    pub fn forward(&self, ctx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        let g = ctx.param(self.gamma);
        let b = ctx.param(self.beta);
        if ctx.training {
            let (y, stats) = ctx
                .tape
                .batch_norm2d(x, g, b, BatchNormMode::Train, BATCH_NORM_EPS)?;
            let stats = stats.expect("training mode returns statistics");
            let m = BATCH_NORM_MOMENTUM;
            for (id, batch) in [(self.running_mean, &stats.mean), (self.running_var, &stats.var)] {
                let running = &mut ctx.store.get_mut(id).value;
                for (r, &v) in running.data_mut().iter_mut().zip(batch.data()) {
                    *r = (1.0 - m) * *r + m * v;
                }
            }
            Ok(y)
        } else {
            let mean = ctx.store.get(self.running_mean).value.clone();
            let var = ctx.store.get(self.running_var).value.clone();
            let (y, _) = ctx.tape.batch_norm2d(
                x,
                g,
                b,
                BatchNormMode::Eval {
                    mean: &mean,
                    var: &var,
                },
                BATCH_NORM_EPS,
            )?;
            Ok(y)
        }
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Result<Self> {
        Ok(LayerNorm {
            gamma: store.add(format!("{name}.gamma"), Tensor::ones(&[dim]))?,
            beta: store.add(format!("{name}.beta"), Tensor::zeros(&[dim]))?,
        })
    }

    pub fn forward(&self, ctx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        let g = ctx.param(self.gamma);
        let b = ctx.param(self.beta);
        Ok(ctx.tape.layer_norm(x, g, b, LAYER_NORM_EPS)?)
    }
}

/// Result of an attention call: the mixed values and the weights
/// `[B, heads, Nq, Nk]` that produced them.
pub struct Attended {
    pub out: Var,
    pub weights: Var,
}

/// Multi-head scaled dot-product attention.
///
/// Queries come from one token set `[B, Nq, D]`, keys and values from
/// another `[B, Nk, D]`. The key projection has no bias: a key bias shifts
/// every logit of a query row equally and is removed by the softmax.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub out: Option<Linear>,
    pub heads: usize,
    pub dim: usize,
}

impl MultiHeadAttention {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        heads: usize,
        out_proj: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(crate::Error::Config(format!(
                "{name}: width {dim} is not divisible by {heads} heads"
            )));
        }
        let init = Init::TruncNormal(0.02);
        Ok(MultiHeadAttention {
            q: Linear::new(store, &format!("{name}.q"), dim, dim, true, init, rng)?,
            k: Linear::new(store, &format!("{name}.k"), dim, dim, false, init, rng)?,
            v: Linear::new(store, &format!("{name}.v"), dim, dim, true, init, rng)?,
            out: if out_proj {
                Some(Linear::new(store, &format!("{name}.out"), dim, dim, true, init, rng)?)
            } else {
                None
            },
            heads,
            dim,
        })
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    fn split_heads(&self, ctx: &mut Ctx<'_>, x: Var, perm: &[usize]) -> Result<Var> {
        let s = ctx.tape.shape(x).to_vec();
        let x = ctx.tape.reshape(x, &[s[0], s[1], self.heads, self.head_dim()])?;
        Ok(ctx.tape.permute(x, perm)?)
    }

    pub fn forward(&self, ctx: &mut Ctx<'_>, query: Var, kv: Var) -> Result<Attended> {
        let qs = ctx.tape.shape(query).to_vec();
        let ks = ctx.tape.shape(kv).to_vec();
        if qs.len() != 3 || ks.len() != 3 || qs[0] != ks[0] || qs[2] != self.dim || ks[2] != self.dim {
            return Err(crate::Error::Usage(format!(
                "attention expects [B,N,{}] tokens, got {qs:?} and {ks:?}",
                self.dim
            )));
        }
        let (b, nq) = (qs[0], qs[1]);
        let q = self.q.forward(ctx, query)?;
        let k = self.k.forward(ctx, kv)?;
        let v = self.v.forward(ctx, kv)?;
        let q = self.split_heads(ctx, q, &[0, 2, 1, 3])?; // [B,h,Nq,dk]
        let k = self.split_heads(ctx, k, &[0, 2, 3, 1])?; // [B,h,dk,Nk]
        let v = self.split_heads(ctx, v, &[0, 2, 1, 3])?; // [B,h,Nk,dk]
        let logits = ctx.tape.matmul(q, k)?;
        let logits = ctx.tape.scale(logits, 1.0 / (self.head_dim() as f64).sqrt());
        let weights = ctx.tape.softmax(logits, 3)?;
        let mixed = ctx.tape.matmul(weights, v)?; // [B,h,Nq,dk]
        let mixed = ctx.tape.permute(mixed, &[0, 2, 1, 3])?;
        let mut out = ctx.tape.reshape(mixed, &[b, nq, self.dim])?;
        if let Some(proj) = &self.out {
            out = proj.forward(ctx, out)?;
        }
        Ok(Attended { out, weights })
    }
}

/// Uniform sample in `[lo, hi)`; shared helper for data generators.
pub(crate) fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if hi <= lo {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn trunc_normal_is_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t = Init::TruncNormal(0.02).tensor(&[1000], &mut rng);
        assert!(t.data().iter().all(|v| v.abs() <= 0.04));
        assert!(t.data().iter().any(|&v| v != 0.0));
    }

    #[test]
    fn attention_rows_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let mha = MultiHeadAttention::new(&mut store, "a", 8, 2, true, &mut rng).unwrap();
        let mut ctx = Ctx::new(&mut store, false);
        let q = ctx.tape.constant(Init::Normal(1.0).tensor(&[2, 3, 8], &mut rng));
        let kv = ctx.tape.constant(Init::Normal(1.0).tensor(&[2, 5, 8], &mut rng));
        let att = mha.forward(&mut ctx, q, kv).unwrap();
        assert_eq!(ctx.tape.shape(att.out), &[2, 3, 8]);
        let w = ctx.tape.value(att.weights);
        assert_eq!(w.shape(), &[2, 2, 3, 5]);
        for row in w.data().chunks(5) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn batchnorm_updates_running_stats_only_in_training() {
        let mut store = ParamStore::new();
        let bn = BatchNorm2d::new(&mut store, "bn", 2).unwrap();
        let x = Tensor::from_fn(&[2, 2, 2, 2], |i| i as f64);
        {
            let mut ctx = Ctx::new(&mut store, false);
            let xv = ctx.tape.constant(x.clone());
            bn.forward(&mut ctx, xv).unwrap();
        }
        assert_eq!(store.get(bn.running_mean).value.data(), &[0.0, 0.0]);
        {
            let mut ctx = Ctx::new(&mut store, true);
            let xv = ctx.tape.constant(x);
            bn.forward(&mut ctx, xv).unwrap();
        }
        // channel 0 holds 0,1,2,3,8,9,10,11 → mean 5.5
        assert!((store.get(bn.running_mean).value.data()[0] - 0.55).abs() < 1e-12);
    }
}
