use crate::error::{shape_err, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Input bin `[start, end)` of output cell `i` when pooling `n` cells to `m`.
pub(crate) fn adaptive_bin(i: usize, n: usize, m: usize) -> (usize, usize) {
    let start = i * n / m;
    let end = ((i + 1) * n).div_ceil(m);
    (start, end)
}

/// Bilinear source taps for output index `i` (align_corners = false).
fn bilinear_taps(i: usize, n_in: usize, n_out: usize) -> (usize, usize, f64) {
    let scale = n_in as f64 / n_out as f64;
    let src = ((i as f64 + 0.5) * scale - 0.5).max(0.0);
    let i0 = (src.floor() as usize).min(n_in - 1);
    let i1 = (i0 + 1).min(n_in - 1);
    let frac = if i0 == n_in - 1 { 0.0 } else { src - i0 as f64 };
    (i0, i1, frac)
}

fn check_4d(op: &'static str, shape: &[usize]) -> Result<(usize, usize, usize)> {
    if shape.len() != 4 {
        return shape_err(op, format!("expected [B,C,H,W], got {shape:?}"));
    }
    Ok((shape[0] * shape[1], shape[2], shape[3]))
}

impl Tape {
    /// Averages `x[B,C,H,W]` over an `out_h × out_w` grid of bins that cover
    /// the input exactly (bins may overlap when extents do not divide).
    pub fn adaptive_avg_pool2d(&mut self, x: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let shape = self.value(x).shape().to_vec();
        let (planes, h, w) = check_4d("adaptive_avg_pool2d", &shape)?;
        if out_h == 0 || out_w == 0 {
            return shape_err("adaptive_avg_pool2d", "output extent must be positive");
        }
        if out_h > h || out_w > w {
            return shape_err(
                "adaptive_avg_pool2d",
                format!("cannot pool {h}×{w} up to {out_h}×{out_w}"),
            );
        }
        let rows: Vec<_> = (0..out_h).map(|i| adaptive_bin(i, h, out_h)).collect();
        let cols: Vec<_> = (0..out_w).map(|j| adaptive_bin(j, w, out_w)).collect();
        let xd = self.value(x).data();
        let mut out = Vec::with_capacity(planes * out_h * out_w);
        for p in 0..planes {
            let plane = &xd[p * h * w..(p + 1) * h * w];
            for &(r0, r1) in &rows {
                for &(c0, c1) in &cols {
                    let mut s = 0.0;
                    for r in r0..r1 {
                        s += plane[r * w + c0..r * w + c1].iter().sum::<f64>();
                    }
                    out.push(s / ((r1 - r0) * (c1 - c0)) as f64);
                }
            }
        }
        let value = Tensor::new(&[shape[0], shape[1], out_h, out_w], out)?;
        Ok(self.push(
            value,
            &[x],
            Box::new(move |ctx| {
                let g = ctx.grad.data();
                let mut gx = vec![0.0; planes * h * w];
                for p in 0..planes {
                    let plane = &mut gx[p * h * w..(p + 1) * h * w];
                    for (i, &(r0, r1)) in rows.iter().enumerate() {
                        for (j, &(c0, c1)) in cols.iter().enumerate() {
                            let v = g[(p * out_h + i) * out_w + j] / ((r1 - r0) * (c1 - c0)) as f64;
                            for r in r0..r1 {
                                for e in &mut plane[r * w + c0..r * w + c1] {
                                    *e += v;
                                }
                            }
                        }
                    }
                }
                vec![Some(Tensor::new(ctx.input(0).shape(), gx).expect("pool grad"))]
            }),
        ))
    }

    /// Bilinear resize of `x[B,C,h,w]` to `out_h × out_w`, half-pixel
    /// sample centers (align_corners = false) clamped at the borders.
    pub fn interpolate_bilinear(&mut self, x: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let shape = self.value(x).shape().to_vec();
        let (planes, h, w) = check_4d("interpolate_bilinear", &shape)?;
        if out_h == 0 || out_w == 0 || h == 0 || w == 0 {
            return shape_err(
                "interpolate_bilinear",
                format!("cannot resize {h}×{w} to {out_h}×{out_w}"),
            );
        }
        let ty: Vec<_> = (0..out_h).map(|i| bilinear_taps(i, h, out_h)).collect();
        let tx: Vec<_> = (0..out_w).map(|j| bilinear_taps(j, w, out_w)).collect();
        let xd = self.value(x).data();
        let mut out = Vec::with_capacity(planes * out_h * out_w);
        for p in 0..planes {
            let plane = &xd[p * h * w..(p + 1) * h * w];
            for &(y0, y1, fy) in &ty {
                for &(x0, x1, fx) in &tx {
                    let top = plane[y0 * w + x0] * (1.0 - fx) + plane[y0 * w + x1] * fx;
                    let bot = plane[y1 * w + x0] * (1.0 - fx) + plane[y1 * w + x1] * fx;
                    out.push(top * (1.0 - fy) + bot * fy);
                }
            }
        }
        let value = Tensor::new(&[shape[0], shape[1], out_h, out_w], out)?;
        Ok(self.push(
            value,
            &[x],
            Box::new(move |ctx| {
                let g = ctx.grad.data();
                let mut gx = vec![0.0; planes * h * w];
                for p in 0..planes {
                    let plane = &mut gx[p * h * w..(p + 1) * h * w];
                    for (i, &(y0, y1, fy)) in ty.iter().enumerate() {
                        for (j, &(x0, x1, fx)) in tx.iter().enumerate() {
                            let v = g[(p * out_h + i) * out_w + j];
                            plane[y0 * w + x0] += v * (1.0 - fy) * (1.0 - fx);
                            plane[y0 * w + x1] += v * (1.0 - fy) * fx;
                            plane[y1 * w + x0] += v * fy * (1.0 - fx);
                            plane[y1 * w + x1] += v * fy * fx;
                        }
                    }
                }
                vec![Some(Tensor::new(ctx.input(0).shape(), gx).expect("interp grad"))]
            }),
        ))
    }
}
