use crate::error::{shape_err, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Numpy-style broadcast of two shapes.
pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Strides of `shape` right-aligned to `out`, zero on broadcast axes.
fn aligned_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let rank = out.len();
    let own = crate::tensor::strides(shape);
    (0..rank)
        .map(|i| {
            if i + shape.len() < rank {
                0
            } else {
                let j = i + shape.len() - rank;
                if shape[j] == 1 {
                    0
                } else {
                    own[j]
                }
            }
        })
        .collect()
}

/// Applies `f` over the broadcast of `a` and `b`.
pub(crate) fn zip_broadcast(
    a: &Tensor,
    b: &Tensor,
    out_shape: &[usize],
    f: impl Fn(f64, f64) -> f64,
) -> Tensor {
    if a.shape() == b.shape() {
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        return Tensor::new(out_shape, data).expect("same-shape zip");
    }
    let n: usize = out_shape.iter().product();
    // Fast path: `b` broadcasts along leading axes only (bias-like).
    if a.shape() == out_shape && out_shape.ends_with(b.shape()) && b.numel() > 0 {
        let m = b.numel();
        let bd = b.data();
        let data = a
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| f(x, bd[i % m]))
            .collect();
        return Tensor::new(out_shape, data).expect("suffix zip");
    }
    let sa = aligned_strides(a.shape(), out_shape);
    let sb = aligned_strides(b.shape(), out_shape);
    let rank = out_shape.len();
    let mut idx = vec![0usize; rank];
    let (mut oa, mut ob) = (0usize, 0usize);
    let (ad, bd) = (a.data(), b.data());
    let mut data = Vec::with_capacity(n);
    for _ in 0..n {
        data.push(f(ad[oa], bd[ob]));
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            oa += sa[ax];
            ob += sb[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            oa -= sa[ax] * out_shape[ax];
            ob -= sb[ax] * out_shape[ax];
            idx[ax] = 0;
        }
    }
    Tensor::new(out_shape, data).expect("broadcast zip")
}

/// Sums `g` down to `shape`, undoing a broadcast.
pub(crate) fn reduce_to(g: &Tensor, shape: &[usize]) -> Tensor {
    if g.shape() == shape {
        return g.clone();
    }
    let out_shape = g.shape();
    let mut acc = Tensor::zeros(shape);
    let m = acc.numel();
    if out_shape.ends_with(shape) && m > 0 {
        let ad = acc.data_mut();
        for (i, &v) in g.data().iter().enumerate() {
            ad[i % m] += v;
        }
        return acc;
    }
    let sa = aligned_strides(shape, out_shape);
    let rank = out_shape.len();
    let mut idx = vec![0usize; rank];
    let mut oa = 0usize;
    let ad = acc.data_mut();
    for &v in g.data() {
        ad[oa] += v;
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            oa += sa[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            oa -= sa[ax] * out_shape[ax];
            idx[ax] = 0;
        }
    }
    acc
}

#[derive(Clone, Copy)]
enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

impl Tape {
    fn binary(&mut self, op: Binary, a: Var, b: Var) -> Result<Var> {
        let name = match op {
            Binary::Add => "add",
            Binary::Sub => "sub",
            Binary::Mul => "mul",
            Binary::Div => "div",
        };
        let (av, bv) = (self.value(a), self.value(b));
        let Some(out_shape) = broadcast_shape(av.shape(), bv.shape()) else {
            return shape_err(
                name,
                format!("cannot broadcast {:?} with {:?}", av.shape(), bv.shape()),
            );
        };
        let value = match op {
            Binary::Add => zip_broadcast(av, bv, &out_shape, |x, y| x + y),
            Binary::Sub => zip_broadcast(av, bv, &out_shape, |x, y| x - y),
            Binary::Mul => zip_broadcast(av, bv, &out_shape, |x, y| x * y),
            Binary::Div => zip_broadcast(av, bv, &out_shape, |x, y| x / y),
        };
        Ok(self.push(
            value,
            &[a, b],
            Box::new(move |ctx| {
                let (av, bv) = (ctx.input(0), ctx.input(1));
                let g = ctx.grad;
                let ga = ctx.needs[0].then(|| match op {
                    Binary::Add | Binary::Sub => reduce_to(g, av.shape()),
                    Binary::Mul => reduce_to(&zip_broadcast(g, bv, g.shape(), |g, y| g * y), av.shape()),
                    Binary::Div => reduce_to(&zip_broadcast(g, bv, g.shape(), |g, y| g / y), av.shape()),
                });
                let gb = ctx.needs[1].then(|| match op {
                    Binary::Add => reduce_to(g, bv.shape()),
                    Binary::Sub => reduce_to(&g.map(|v| -v), bv.shape()),
                    Binary::Mul => reduce_to(&zip_broadcast(g, av, g.shape(), |g, x| g * x), bv.shape()),
                    Binary::Div => {
                        // d(a/b)/db = -a/b² = -out/b
                        let t = zip_broadcast(g, ctx.out, g.shape(), |g, o| -g * o);
                        reduce_to(&zip_broadcast(&t, bv, g.shape(), |t, y| t / y), bv.shape())
                    }
                });
                vec![ga, gb]
            }),
        ))
    }

    /// Broadcasting `a + b`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Sub, a, b)
    }

    /// Broadcasting elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Div, a, b)
    }

    /// Elementwise map with a pointwise derivative `df(x, f(x))`.
    fn pointwise(
        &mut self,
        x: Var,
        f: impl Fn(f64) -> f64,
        df: impl Fn(f64, f64) -> f64 + 'static,
    ) -> Var {
        let value = self.value(x).map(f);
        self.push(
            value,
            &[x],
            Box::new(move |ctx| {
                let xs = ctx.input(0).data();
                let ys = ctx.out.data();
                let data = ctx
                    .grad
                    .data()
                    .iter()
                    .zip(xs.iter().zip(ys))
                    .map(|(&g, (&x, &y))| g * df(x, y))
                    .collect();
                vec![Some(Tensor::new(ctx.grad.shape(), data).expect("pointwise grad"))]
            }),
        )
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.pointwise(x, move |v| v * c, move |_, _| c)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        self.pointwise(x, move |v| v + c, |_, _| 1.0)
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.scale(x, -1.0)
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.pointwise(x, |v| v * v, |x, _| 2.0 * x)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.pointwise(x, f64::exp, |_, y| y)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.pointwise(x, |v| v.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    /// Exact GELU, `x·Φ(x)`.
    pub fn gelu(&mut self, x: Var) -> Var {
        const FRAC_1_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;
        let inv_sqrt_2pi = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
        self.pointwise(
            x,
            |v| 0.5 * v * (1.0 + libm::erf(v * FRAC_1_SQRT_2)),
            move |x, _| {
                let cdf = 0.5 * (1.0 + libm::erf(x * FRAC_1_SQRT_2));
                cdf + x * inv_sqrt_2pi * (-0.5 * x * x).exp()
            },
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ParamStore;

    #[test]
    fn broadcast_shapes() {
        assert_eq!(broadcast_shape(&[2, 3], &[3]), Some(vec![2, 3]));
        assert_eq!(broadcast_shape(&[2, 1, 4], &[3, 1]), Some(vec![2, 3, 4]));
        assert_eq!(broadcast_shape(&[2, 3], &[2]), None);
    }

    #[test]
    fn relu_values() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(&[2], vec![-3.0, 3.0]).unwrap());
        let y = tape.relu(x);
        assert_eq!(tape.value(y).data(), &[0.0, 3.0]);
    }

    #[test]
    fn broadcast_mul_reduces_gradient() {
        let mut tape = Tape::new();
        let mut store = ParamStore::new();
        let a = tape.input(Tensor::from_fn(&[2, 3, 2], |i| i as f64));
        let w = tape.input(Tensor::new(&[2, 1, 1], vec![2.0, -1.0]).unwrap());
        let y = tape.mul(a, w).unwrap();
        let s = tape.sum(y);
        tape.backward(s, &mut store).unwrap();
        // d/dw[0] = sum of first block = 0+..+5 = 15; d/dw[1] = 6+..+11 = 51
        assert_eq!(tape.grad(w).unwrap().data(), &[15.0, 51.0]);
        let ga = tape.grad(a).unwrap();
        assert_eq!(ga.at(&[0, 2, 1]), 2.0);
        assert_eq!(ga.at(&[1, 0, 0]), -1.0);
    }

    #[test]
    fn middle_axis_broadcast() {
        let a = Tensor::from_fn(&[2, 3, 2], |i| i as f64);
        let b = Tensor::new(&[2, 1, 2], vec![10.0, 20.0, 30.0, 40.0]).unwrap();
        let out = zip_broadcast(&a, &b, &[2, 3, 2], |x, y| x + y);
        assert_eq!(out.at(&[1, 2, 1]), 11.0 + 40.0);
        let r = reduce_to(&out, &[2, 1, 2]);
        assert_eq!(r.at(&[0, 0, 0]), (0.0 + 2.0 + 4.0) + 30.0);
    }
}
