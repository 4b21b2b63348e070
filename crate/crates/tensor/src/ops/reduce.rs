use crate::error::{shape_err, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    (
        shape[..axis].iter().product(),
        shape[axis],
        shape[axis + 1..].iter().product(),
    )
}

impl Tape {
    /// Sum of all elements, as a rank-0 tensor.
    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).sum());
        self.push(
            value,
            &[x],
            Box::new(|ctx| vec![Some(Tensor::full(ctx.input(0).shape(), ctx.grad.item()))]),
        )
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).numel() as f64;
        let s = self.sum(x);
        self.scale(s, 1.0 / n)
    }

    /// Sum over `axis`, removing it.
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.value(x).shape().to_vec();
        if axis >= shape.len() {
            return shape_err("sum_axis", format!("axis {axis} out of range for {shape:?}"));
        }
        let (outer, extent, inner) = axis_split(&shape, axis);
        let d = self.value(x).data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for e in 0..extent {
                let src = &d[(o * extent + e) * inner..(o * extent + e + 1) * inner];
                for (acc, v) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *acc += v;
                }
            }
        }
        let mut out_shape = shape;
        out_shape.remove(axis);
        let value = Tensor::new(&out_shape, out)?;
        Ok(self.push(
            value,
            &[x],
            Box::new(move |ctx| {
                let g = ctx.grad.data();
                let mut gx = Vec::with_capacity(outer * extent * inner);
                for o in 0..outer {
                    for _ in 0..extent {
                        gx.extend_from_slice(&g[o * inner..(o + 1) * inner]);
                    }
                }
                vec![Some(Tensor::new(ctx.input(0).shape(), gx).expect("sum_axis grad"))]
            }),
        ))
    }

    /// Mean over `axis`, removing it.
    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let extent = *self
            .value(x)
            .shape()
            .get(axis)
            .ok_or_else(|| crate::TensorError::Shape {
                op: "mean_axis",
                detail: format!("axis {axis} out of range"),
            })?;
        let s = self.sum_axis(x, axis)?;
        Ok(self.scale(s, 1.0 / extent as f64))
    }

    /// Softmax along `axis`, computed with the max subtracted.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.value(x).shape().to_vec();
        if axis >= shape.len() || shape[axis] == 0 {
            return shape_err("softmax", format!("axis {axis} invalid for {shape:?}"));
        }
        let (outer, extent, inner) = axis_split(&shape, axis);
        let d = self.value(x).data();
        let mut out = vec![0.0; d.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |e: usize| (o * extent + e) * inner + i;
                let max = (0..extent).map(|e| d[at(e)]).fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for e in 0..extent {
                    let v = (d[at(e)] - max).exp();
                    out[at(e)] = v;
                    z += v;
                }
                for e in 0..extent {
                    out[at(e)] /= z;
                }
            }
        }
        let value = Tensor::new(&shape, out)?;
        Ok(self.push(
            value,
            &[x],
            Box::new(move |ctx| {
                let (g, y) = (ctx.grad.data(), ctx.out.data());
                let mut gx = vec![0.0; g.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |e: usize| (o * extent + e) * inner + i;
                        let dot: f64 = (0..extent).map(|e| g[at(e)] * y[at(e)]).sum();
                        for e in 0..extent {
                            gx[at(e)] = y[at(e)] * (g[at(e)] - dot);
                        }
                    }
                }
                vec![Some(Tensor::new(ctx.out.shape(), gx).expect("softmax grad"))]
            }),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ParamStore;

    #[test]
    fn softmax_of_equal_values_is_uniform() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::full(&[5], 3.7));
        let y = tape.softmax(x, 0).unwrap();
        for &v in tape.value(y).data() {
            assert!((v - 0.2).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_along_middle_axis() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_fn(&[2, 3, 4], |i| (i as f64 * 1.3).sin() * 5.0));
        let y = tape.softmax(x, 1).unwrap();
        let y = tape.value(y);
        for a in 0..2 {
            for c in 0..4 {
                let s: f64 = (0..3).map(|b| y.at(&[a, b, c])).sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sum_of_squares_gradient() {
        let mut tape = Tape::new();
        let mut store = ParamStore::new();
        let x = tape.input(Tensor::new(&[2], vec![1.0, 2.0]).unwrap());
        let sq = tape.square(x);
        let l = tape.sum(sq);
        tape.backward(l, &mut store).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn sum_gradient_is_ones_and_accumulates() {
        let mut tape = Tape::new();
        let mut store = ParamStore::new();
        let x = tape.input(Tensor::zeros(&[2, 2]));
        let l = tape.sum(x);
        tape.backward(l, &mut store).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[1.0; 4]);
        tape.backward(l, &mut store).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[2.0; 4]);
    }

    #[test]
    fn mean_axis_values() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_fn(&[2, 3], |i| i as f64));
        let m = tape.mean_axis(x, 1).unwrap();
        assert_eq!(tape.value(m).data(), &[1.0, 4.0]);
    }
}
