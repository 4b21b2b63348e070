use crate::error::{shape_err, usage_err, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub const LAYER_NORM_EPS: f64 = 1e-6;
pub const BATCH_NORM_EPS: f64 = 1e-5;
pub const BATCH_NORM_MOMENTUM: f64 = 0.1;

/// Statistics source for [`Tape::batch_norm2d`].
#[derive(Clone, Copy, Debug)]
pub enum BatchNormMode<'a> {
    /// Normalize with the batch statistics (differentiated through).
    Train,
    /// Normalize with fixed running statistics.
    Eval { mean: &'a Tensor, var: &'a Tensor },
}

/// Per-channel statistics of one training-mode batch-norm call.
#[derive(Clone, Debug)]
pub struct BatchStats {
    pub mean: Tensor,
    /// Unbiased variance, as used for running-statistics updates.
    pub var: Tensor,
}

impl Tape {
    /// Layer normalization over the last axis with affine `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let shape = self.value(x).shape().to_vec();
        let Some(&d) = shape.last() else {
            return shape_err("layer_norm", "scalar input");
        };
        if self.value(gamma).shape() != [d] || self.value(beta).shape() != [d] {
            return shape_err(
                "layer_norm",
                format!(
                    "affine shapes {:?}/{:?} do not match width {d}",
                    self.value(gamma).shape(),
                    self.value(beta).shape()
                ),
            );
        }
        let rows = self.value(x).numel() / d.max(1);
        let xd = self.value(x).data();
        let (gd, bd) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![0.0; xd.len()];
        let mut rstd = vec![0.0; rows];
        let mut out = vec![0.0; xd.len()];
        for r in 0..rows {
            let row = &xd[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let rs = 1.0 / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..d {
                let h = (row[j] - mean) * rs;
                xhat[r * d + j] = h;
                out[r * d + j] = h * gd[j] + bd[j];
            }
        }
        let value = Tensor::new(&shape, out)?;
        Ok(self.push(
            value,
            &[x, gamma, beta],
            Box::new(move |ctx| {
                let g = ctx.grad.data();
                let gd = ctx.input(1).data();
                let gx = ctx.needs[0].then(|| {
                    let mut gx = vec![0.0; g.len()];
                    for r in 0..rows {
                        let (mut s1, mut s2) = (0.0, 0.0);
                        for j in 0..d {
                            let dh = g[r * d + j] * gd[j];
                            s1 += dh;
                            s2 += dh * xhat[r * d + j];
                        }
                        for j in 0..d {
                            let dh = g[r * d + j] * gd[j];
                            gx[r * d + j] =
                                rstd[r] / d as f64 * (d as f64 * dh - s1 - xhat[r * d + j] * s2);
                        }
                    }
                    Tensor::new(ctx.input(0).shape(), gx).expect("ln gx")
                });
                let (mut ggamma, mut gbeta) = (vec![0.0; d], vec![0.0; d]);
                if ctx.needs[1] || ctx.needs[2] {
                    for r in 0..rows {
                        for j in 0..d {
                            ggamma[j] += g[r * d + j] * xhat[r * d + j];
                            gbeta[j] += g[r * d + j];
                        }
                    }
                }
                vec![
                    gx,
                    ctx.needs[1].then(|| Tensor::new(&[d], ggamma).expect("ln gamma")),
                    ctx.needs[2].then(|| Tensor::new(&[d], gbeta).expect("ln beta")),
                ]
            }),
        ))
    }

    /// Batch normalization of a `[B, C, H, W]` tensor with per-channel
    /// affine `gamma`, `beta`. In training mode also returns the batch
    /// statistics so the caller can update its running estimates.
    pub fn batch_norm2d(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mode: BatchNormMode<'_>,
        eps: f64,
    ) -> Result<(Var, Option<BatchStats>)> {
        let shape = self.value(x).shape().to_vec();
        if shape.len() != 4 {
            return shape_err("batch_norm2d", format!("expected [B,C,H,W], got {shape:?}"));
        }
        let (b, c, hw) = (shape[0], shape[1], shape[2] * shape[3]);
        if self.value(gamma).shape() != [c] || self.value(beta).shape() != [c] {
            return shape_err("batch_norm2d", format!("affine shape mismatch for {c} channels"));
        }
        let count = b * hw;
        let (mean, var, stats) = match mode {
            BatchNormMode::Train => {
                if b < 2 {
                    return usage_err(
                        "batch_norm2d",
                        format!("training mode needs batch size >= 2, got {b}"),
                    );
                }
                let xd = self.value(x).data();
                let mut mean = vec![0.0; c];
                let mut var = vec![0.0; c];
                for ch in 0..c {
                    let mut s = 0.0;
                    for bi in 0..b {
                        s += xd[(bi * c + ch) * hw..(bi * c + ch + 1) * hw].iter().sum::<f64>();
                    }
                    let m = s / count as f64;
                    let mut ss = 0.0;
                    for bi in 0..b {
                        ss += xd[(bi * c + ch) * hw..(bi * c + ch + 1) * hw]
                            .iter()
                            .map(|v| (v - m) * (v - m))
                            .sum::<f64>();
                    }
                    mean[ch] = m;
                    var[ch] = ss / count as f64;
                }
                let unbiased = var
                    .iter()
                    .map(|v| v * count as f64 / (count as f64 - 1.0).max(1.0))
                    .collect();
                let stats = BatchStats {
                    mean: Tensor::new(&[c], mean.clone())?,
                    var: Tensor::new(&[c], unbiased)?,
                };
                (mean, var, Some(stats))
            }
            BatchNormMode::Eval { mean, var } => {
                if mean.shape() != [c] || var.shape() != [c] {
                    return shape_err("batch_norm2d", "running statistics shape mismatch");
                }
                (mean.data().to_vec(), var.data().to_vec(), None)
            }
        };
        let train = stats.is_some();
        let rstd: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let xd = self.value(x).data();
        let (gd, bd) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![0.0; xd.len()];
        let mut out = vec![0.0; xd.len()];
        for bi in 0..b {
            for ch in 0..c {
                let base = (bi * c + ch) * hw;
                for j in base..base + hw {
                    let h = (xd[j] - mean[ch]) * rstd[ch];
                    xhat[j] = h;
                    out[j] = h * gd[ch] + bd[ch];
                }
            }
        }
        let value = Tensor::new(&shape, out)?;
        let var = self.push(
            value,
            &[x, gamma, beta],
            Box::new(move |ctx| {
                let g = ctx.grad.data();
                let gd = ctx.input(1).data();
                let mut ggamma = vec![0.0; c];
                let mut gbeta = vec![0.0; c];
                for bi in 0..b {
                    for ch in 0..c {
                        let base = (bi * c + ch) * hw;
                        for j in base..base + hw {
                            ggamma[ch] += g[j] * xhat[j];
                            gbeta[ch] += g[j];
                        }
                    }
                }
                let gx = ctx.needs[0].then(|| {
                    let mut gx = vec![0.0; g.len()];
                    let n = count as f64;
                    for bi in 0..b {
                        for ch in 0..c {
                            let base = (bi * c + ch) * hw;
                            let k = gd[ch] * rstd[ch];
                            for j in base..base + hw {
                                gx[j] = if train {
                                    // dxhat sums over the channel are gamma·gbeta and gamma·ggamma
                                    k * (g[j] - gbeta[ch] / n - xhat[j] * ggamma[ch] / n)
                                } else {
                                    k * g[j]
                                };
                            }
                        }
                    }
                    Tensor::new(ctx.input(0).shape(), gx).expect("bn gx")
                });
                vec![
                    gx,
                    ctx.needs[1].then(|| Tensor::new(&[c], ggamma).expect("bn gamma")),
                    ctx.needs[2].then(|| Tensor::new(&[c], gbeta).expect("bn beta")),
                ]
            }),
        );
        Ok((var, stats))
    }
}
