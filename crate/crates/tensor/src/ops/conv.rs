use crate::error::{shape_err, usage_err, Result};
use crate::kernels::{col2im, gemm, im2col, Window2d};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// `[B, C, S]` → `[C, B·S]`.
fn channel_major(x: &[f64], b: usize, c: usize, s: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for bi in 0..b {
        for ch in 0..c {
            out[ch * b * s + bi * s..ch * b * s + (bi + 1) * s]
                .copy_from_slice(&x[(bi * c + ch) * s..(bi * c + ch + 1) * s]);
        }
    }
    out
}

/// `[C, B·S]` → `[B, C, S]`.
fn batch_major(x: &[f64], b: usize, c: usize, s: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for bi in 0..b {
        for ch in 0..c {
            out[(bi * c + ch) * s..(bi * c + ch + 1) * s]
                .copy_from_slice(&x[ch * b * s + bi * s..ch * b * s + (bi + 1) * s]);
        }
    }
    out
}

fn bias_grad(g: &[f64], b: usize, c: usize, s: usize) -> Tensor {
    let mut gb = vec![0.0; c];
    for bi in 0..b {
        for (ch, acc) in gb.iter_mut().enumerate() {
            *acc += g[(bi * c + ch) * s..(bi * c + ch + 1) * s].iter().sum::<f64>();
        }
    }
    Tensor::new(&[c], gb).expect("bias grad")
}

fn add_bias(out: &mut [f64], bias: &[f64], b: usize, c: usize, s: usize) {
    for bi in 0..b {
        for (ch, &bv) in bias.iter().enumerate() {
            for v in &mut out[(bi * c + ch) * s..(bi * c + ch + 1) * s] {
                *v += bv;
            }
        }
    }
}

fn check_bias(tape: &Tape, op: &'static str, bias: Option<Var>, channels: usize) -> Result<()> {
    if let Some(bv) = bias {
        if tape.value(bv).shape() != [channels] {
            return shape_err(
                op,
                format!("bias shape {:?}, expected [{channels}]", tape.value(bv).shape()),
            );
        }
    }
    Ok(())
}

impl Tape {
    /// 2-D cross-correlation of `x[B,C,H,W]` with `w[O,C,kh,kw]`.
    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        bias: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let xs = self.value(x).shape().to_vec();
        let ws = self.value(w).shape().to_vec();
        if xs.len() != 4 || ws.len() != 4 {
            return shape_err("conv2d", format!("expected 4-D input and weight, got {xs:?}, {ws:?}"));
        }
        if stride == 0 {
            return usage_err("conv2d", "stride must be positive");
        }
        let (b, c, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
        let (o, kh, kw) = (ws[0], ws[2], ws[3]);
        if ws[1] != c {
            return shape_err("conv2d", format!("input {xs:?} has {c} channels, weight {ws:?} expects {}", ws[1]));
        }
        if kh > h + 2 * pad || kw > wd + 2 * pad || kh == 0 || kw == 0 {
            return shape_err("conv2d", format!("kernel {kh}×{kw} does not fit {h}×{wd} with padding {pad}"));
        }
        check_bias(self, "conv2d", bias, o)?;
        let geo = Window2d {
            channels: c,
            h,
            w: wd,
            kh,
            kw,
            stride,
            pad,
            oh: (h + 2 * pad - kh) / stride + 1,
            ow: (wd + 2 * pad - kw) / stride + 1,
        };
        let (s_in, s_out) = (h * wd, geo.col_cols());
        let (rows, ld) = (geo.col_rows(), b * s_out);

        let mut cols = vec![0.0; rows * ld];
        let xd = self.value(x).data();
        for bi in 0..b {
            im2col(&xd[bi * c * s_in..], &geo, &mut cols[bi * s_out..], ld);
        }
        let mut out_cm = vec![0.0; o * ld];
        gemm(o, rows, ld, self.value(w).data(), false, &cols, false, 0.0, &mut out_cm);
        let mut out = batch_major(&out_cm, b, o, s_out);
        if let Some(bv) = bias {
            add_bias(&mut out, self.value(bv).data(), b, o, s_out);
        }
        let value = Tensor::new(&[b, o, geo.oh, geo.ow], out)?;

        let mut parents = vec![x, w];
        parents.extend(bias);
        Ok(self.push(
            value,
            &parents,
            Box::new(move |ctx| {
                let (xv, wv, g) = (ctx.input(0), ctx.input(1), ctx.grad);
                let g_cm = channel_major(g.data(), b, o, s_out);
                let gx = ctx.needs[0].then(|| {
                    let mut gcols = vec![0.0; rows * ld];
                    gemm(rows, o, ld, wv.data(), true, &g_cm, false, 0.0, &mut gcols);
                    let mut gx = vec![0.0; b * c * s_in];
                    for bi in 0..b {
                        col2im(&gcols[bi * s_out..], &geo, &mut gx[bi * c * s_in..], ld);
                    }
                    Tensor::new(xv.shape(), gx).expect("conv gx")
                });
                let gw = ctx.needs[1].then(|| {
                    let mut cols = vec![0.0; rows * ld];
                    for bi in 0..b {
                        im2col(&xv.data()[bi * c * s_in..], &geo, &mut cols[bi * s_out..], ld);
                    }
                    let mut gw = vec![0.0; o * rows];
                    gemm(o, ld, rows, &g_cm, false, &cols, true, 0.0, &mut gw);
                    Tensor::new(wv.shape(), gw).expect("conv gw")
                });
                let mut grads = vec![gx, gw];
                if ctx.inputs.len() == 3 {
                    grads.push(ctx.needs[2].then(|| bias_grad(g.data(), b, o, s_out)));
                }
                grads
            }),
        ))
    }

    /// Transposed convolution of `x[B,Cin,H,W]` with `w[Cin,Cout,kh,kw]`;
    /// the adjoint of [`Tape::conv2d`] for the same weight, stride and
    /// padding. Output extent is `(H−1)·stride − 2·pad + kh + output_padding`.
    #[allow(clippy::too_many_arguments)]
    pub fn deconv2d(
        &mut self,
        x: Var,
        w: Var,
        bias: Option<Var>,
        stride: usize,
        pad: usize,
        output_padding: usize,
    ) -> Result<Var> {
        let xs = self.value(x).shape().to_vec();
        let ws = self.value(w).shape().to_vec();
        if xs.len() != 4 || ws.len() != 4 {
            return shape_err("deconv2d", format!("expected 4-D input and weight, got {xs:?}, {ws:?}"));
        }
        if stride == 0 {
            return usage_err("deconv2d", "stride must be positive");
        }
        let (b, cin, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
        let (cout, kh, kw) = (ws[1], ws[2], ws[3]);
        if ws[0] != cin {
            return shape_err("deconv2d", format!("input {xs:?} has {cin} channels, weight {ws:?} expects {}", ws[0]));
        }
        if output_padding >= stride {
            return shape_err(
                "deconv2d",
                format!("output_padding {output_padding} must be smaller than stride {stride}"),
            );
        }
        let full_h = (h.max(1) - 1) * stride + kh + output_padding;
        let full_w = (wd.max(1) - 1) * stride + kw + output_padding;
        if h == 0 || wd == 0 || full_h <= 2 * pad || full_w <= 2 * pad {
            return shape_err(
                "deconv2d",
                format!("inconsistent output size for input {h}×{wd}, kernel {kh}×{kw}, pad {pad}"),
            );
        }
        let (oh, ow) = (full_h - 2 * pad, full_w - 2 * pad);
        check_bias(self, "deconv2d", bias, cout)?;
        // The output grid, viewed as the input of a conv that yields h×wd.
        let geo = Window2d {
            channels: cout,
            h: oh,
            w: ow,
            kh,
            kw,
            stride,
            pad,
            oh: h,
            ow: wd,
        };
        let (s_in, s_out) = (h * wd, oh * ow);
        let (rows, ld) = (geo.col_rows(), b * s_in);

        let x_cm = channel_major(self.value(x).data(), b, cin, s_in);
        let mut cols = vec![0.0; rows * ld];
        gemm(rows, cin, ld, self.value(w).data(), true, &x_cm, false, 0.0, &mut cols);
        let mut out = vec![0.0; b * cout * s_out];
        for bi in 0..b {
            col2im(&cols[bi * s_in..], &geo, &mut out[bi * cout * s_out..], ld);
        }
        if let Some(bv) = bias {
            add_bias(&mut out, self.value(bv).data(), b, cout, s_out);
        }
        let value = Tensor::new(&[b, cout, oh, ow], out)?;

        let mut parents = vec![x, w];
        parents.extend(bias);
        Ok(self.push(
            value,
            &parents,
            Box::new(move |ctx| {
                let (xv, wv, g) = (ctx.input(0), ctx.input(1), ctx.grad);
                let mut gcols = vec![0.0; rows * ld];
                for bi in 0..b {
                    im2col(&g.data()[bi * cout * s_out..], &geo, &mut gcols[bi * s_in..], ld);
                }
                let gx = ctx.needs[0].then(|| {
                    let mut gx_cm = vec![0.0; cin * ld];
                    gemm(cin, rows, ld, wv.data(), false, &gcols, false, 0.0, &mut gx_cm);
                    Tensor::new(xv.shape(), batch_major(&gx_cm, b, cin, s_in)).expect("deconv gx")
                });
                let gw = ctx.needs[1].then(|| {
                    let x_cm = channel_major(xv.data(), b, cin, s_in);
                    let mut gw = vec![0.0; cin * rows];
                    gemm(cin, ld, rows, &x_cm, false, &gcols, true, 0.0, &mut gw);
                    Tensor::new(wv.shape(), gw).expect("deconv gw")
                });
                let mut grads = vec![gx, gw];
                if ctx.inputs.len() == 3 {
                    grads.push(ctx.needs[2].then(|| bias_grad(g.data(), b, cout, s_out)));
                }
                grads
            }),
        ))
    }
}
