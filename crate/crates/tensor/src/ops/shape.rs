use crate::error::{shape_err, Result};
use crate::tape::{Tape, Var};
use crate::tensor::{strides, Tensor};

/// Copies `x` into the axis order given by `perm` (`out.shape[i] = x.shape[perm[i]]`).
pub(crate) fn permute_tensor(x: &Tensor, perm: &[usize]) -> Tensor {
    let shape = x.shape();
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let in_strides = strides(shape);
    let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let rank = perm.len();
    let n = x.numel();
    let mut data = Vec::with_capacity(n);
    if rank == 0 || n == 0 {
        return x.clone();
    }
    let inner = out_shape[rank - 1];
    let inner_stride = src_strides[rank - 1];
    let xd = x.data();
    let mut idx = vec![0usize; rank - 1];
    let mut base = 0usize;
    for _ in 0..n / inner {
        if inner_stride == 1 {
            data.extend_from_slice(&xd[base..base + inner]);
        } else {
            data.extend((0..inner).map(|j| xd[base + j * inner_stride]));
        }
        for ax in (0..rank - 1).rev() {
            idx[ax] += 1;
            base += src_strides[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            base -= src_strides[ax] * out_shape[ax];
            idx[ax] = 0;
        }
    }
    Tensor::new(&out_shape, data).expect("permute")
}

fn inverse_perm(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

/// Splits a shape at `axis` into (outer, extent, inner) element counts.
fn split_at_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl Tape {
    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        Ok(self.push(
            value,
            &[x],
            Box::new(|ctx| {
                let g = ctx.grad.clone().reshape(ctx.input(0).shape()).expect("reshape grad");
                vec![Some(g)]
            }),
        ))
    }

    /// General axis permutation.
    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let rank = self.value(x).rank();
        let mut seen = vec![false; rank];
        if perm.len() != rank || perm.iter().any(|&p| p >= rank || std::mem::replace(&mut seen[p], true)) {
            return shape_err(
                "permute",
                format!("{perm:?} is not a permutation of {rank} axes"),
            );
        }
        let value = permute_tensor(self.value(x), perm);
        let inv = inverse_perm(perm);
        Ok(self.push(
            value,
            &[x],
            Box::new(move |ctx| vec![Some(permute_tensor(ctx.grad, &inv))]),
        ))
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let rank = self.value(x).rank();
        if rank < 2 {
            return shape_err("transpose", "need at least 2 axes");
        }
        let mut perm: Vec<usize> = (0..rank).collect();
        perm.swap(rank - 1, rank - 2);
        self.permute(x, &perm)
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        if xs.is_empty() {
            return shape_err("concat", "no operands");
        }
        let first = self.value(xs[0]).shape().to_vec();
        if axis >= first.len() {
            return shape_err("concat", format!("axis {axis} out of range for {first:?}"));
        }
        let mut total = 0;
        for &v in xs {
            let s = self.value(v).shape();
            let compatible = s.len() == first.len()
                && s.iter()
                    .zip(&first)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return shape_err("concat", format!("{first:?} vs {s:?} along axis {axis}"));
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_at_axis(&first, axis);
        let extents: Vec<usize> = xs.iter().map(|&v| self.value(v).shape()[axis]).collect();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (&v, &e) in xs.iter().zip(&extents) {
                let d = self.value(v).data();
                data.extend_from_slice(&d[o * e * inner..(o + 1) * e * inner]);
            }
        }
        let mut out_shape = first;
        out_shape[axis] = total;
        let value = Tensor::new(&out_shape, data)?;
        Ok(self.push(
            value,
            xs,
            Box::new(move |ctx| {
                let g = ctx.grad.data();
                let mut offset = 0;
                extents
                    .iter()
                    .enumerate()
                    .map(|(i, &e)| {
                        let start = offset;
                        offset += e;
                        if !ctx.needs[i] {
                            return None;
                        }
                        let mut d = Vec::with_capacity(outer * e * inner);
                        for o in 0..outer {
                            let row = o * total * inner;
                            d.extend_from_slice(&g[row + start * inner..row + (start + e) * inner]);
                        }
                        Some(Tensor::new(ctx.input(i).shape(), d).expect("concat grad"))
                    })
                    .collect()
            }),
        ))
    }

    /// Slice `[start, start+len)` along `axis`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.value(x).shape().to_vec();
        if axis >= shape.len() || start + len > shape[axis] {
            return shape_err(
                "narrow",
                format!("[{start}, {}) along axis {axis} of {shape:?}", start + len),
            );
        }
        let (outer, extent, inner) = split_at_axis(&shape, axis);
        let d = self.value(x).data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let row = o * extent * inner;
            data.extend_from_slice(&d[row + start * inner..row + (start + len) * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let value = Tensor::new(&out_shape, data)?;
        Ok(self.push(
            value,
            &[x],
            Box::new(move |ctx| {
                let mut gx = Tensor::zeros(ctx.input(0).shape());
                let g = ctx.grad.data();
                let gd = gx.data_mut();
                for o in 0..outer {
                    let row = o * extent * inner;
                    gd[row + start * inner..row + (start + len) * inner]
                        .copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
                }
                vec![Some(gx)]
            }),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn permute_moves_axes() {
        let x = Tensor::from_fn(&[2, 3, 4], |i| i as f64);
        let y = permute_tensor(&x, &[2, 0, 1]);
        assert_eq!(y.shape(), &[4, 2, 3]);
        for a in 0..2 {
            for b in 0..3 {
                for c in 0..4 {
                    assert_eq!(y.at(&[c, a, b]), x.at(&[a, b, c]));
                }
            }
        }
        let back = permute_tensor(&y, &inverse_perm(&[2, 0, 1]));
        assert_eq!(back, x);
    }

    #[test]
    fn concat_and_narrow_are_inverse() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::from_fn(&[2, 1, 3], |i| i as f64));
        let b = tape.constant(Tensor::from_fn(&[2, 2, 3], |i| 100.0 + i as f64));
        let c = tape.concat(&[a, b], 1).unwrap();
        assert_eq!(tape.shape(c), &[2, 3, 3]);
        let a2 = tape.narrow(c, 1, 0, 1).unwrap();
        let b2 = tape.narrow(c, 1, 1, 2).unwrap();
        assert_eq!(tape.value(a2), tape.value(a));
        assert_eq!(tape.value(b2), tape.value(b));
    }

    #[test]
    fn bad_permutation_is_rejected() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[2, 3]));
        assert!(tape.permute(x, &[0, 0]).is_err());
        assert!(tape.permute(x, &[1]).is_err());
    }
}
