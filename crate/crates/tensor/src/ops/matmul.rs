use crate::error::{shape_err, Result};
use crate::kernels::gemm;
use crate::ops::elementwise::broadcast_shape;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// For every matrix in the broadcast batch, the matrix index into `a` and `b`.
fn batch_pairs(ba: &[usize], bb: &[usize], out: &[usize]) -> Vec<(usize, usize)> {
    let n: usize = out.iter().product();
    let rank = out.len();
    let strides_for = |shape: &[usize]| -> Vec<usize> {
        let own = crate::tensor::strides(shape);
        (0..rank)
            .map(|i| {
                if i + shape.len() < rank {
                    return 0;
                }
                let j = i + shape.len() - rank;
                if shape[j] == 1 {
                    0
                } else {
                    own[j]
                }
            })
            .collect()
    };
    let (sa, sb) = (strides_for(ba), strides_for(bb));
    let mut idx = vec![0usize; rank];
    let mut pairs = Vec::with_capacity(n);
    for _ in 0..n {
        let ia = idx.iter().zip(&sa).map(|(i, s)| i * s).sum();
        let ib = idx.iter().zip(&sb).map(|(i, s)| i * s).sum();
        pairs.push((ia, ib));
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            if idx[ax] < out[ax] {
                break;
            }
            idx[ax] = 0;
        }
    }
    pairs
}

impl Tape {
    /// Batched matrix product `a[..,m,k] · b[..,k,n]` with broadcasting batch
    /// extents. A rank-2 `b` is applied to every matrix of `a` with a single
    /// folded GEMM.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (sa, sb) = (av.shape().to_vec(), bv.shape().to_vec());
        if sa.len() < 2 || sb.len() < 2 {
            return shape_err("matmul", format!("operands must be at least 2-D: {sa:?} × {sb:?}"));
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (k2, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        if k != k2 {
            return shape_err("matmul", format!("inner extents differ: {sa:?} × {sb:?}"));
        }

        if sb.len() == 2 {
            let rows: usize = sa[..sa.len() - 1].iter().product();
            let mut out_shape = sa[..sa.len() - 1].to_vec();
            out_shape.push(n);
            let mut out = vec![0.0; rows * n];
            gemm(rows, k, n, av.data(), false, bv.data(), false, 0.0, &mut out);
            let value = Tensor::new(&out_shape, out)?;
            return Ok(self.push(
                value,
                &[a, b],
                Box::new(move |ctx| {
                    let (av, bv, g) = (ctx.input(0), ctx.input(1), ctx.grad);
                    let ga = ctx.needs[0].then(|| {
                        let mut d = vec![0.0; rows * k];
                        gemm(rows, n, k, g.data(), false, bv.data(), true, 0.0, &mut d);
                        Tensor::new(av.shape(), d).expect("matmul ga")
                    });
                    let gb = ctx.needs[1].then(|| {
                        let mut d = vec![0.0; k * n];
                        gemm(k, rows, n, av.data(), true, g.data(), false, 0.0, &mut d);
                        Tensor::new(bv.shape(), d).expect("matmul gb")
                    });
                    vec![ga, gb]
                }),
            ));
        }

        let (ba, bb) = (&sa[..sa.len() - 2], &sb[..sb.len() - 2]);
        let Some(batch) = broadcast_shape(ba, bb) else {
            return shape_err("matmul", format!("batch extents not broadcastable: {sa:?} × {sb:?}"));
        };
        let pairs = batch_pairs(ba, bb, &batch);
        let mut out = vec![0.0; pairs.len() * m * n];
        for (o, &(ia, ib)) in pairs.iter().enumerate() {
            gemm(
                m,
                k,
                n,
                &av.data()[ia * m * k..],
                false,
                &bv.data()[ib * k * n..],
                false,
                0.0,
                &mut out[o * m * n..],
            );
        }
        let mut out_shape = batch;
        out_shape.extend([m, n]);
        let value = Tensor::new(&out_shape, out)?;
        Ok(self.push(
            value,
            &[a, b],
            Box::new(move |ctx| {
                let (av, bv, g) = (ctx.input(0), ctx.input(1), ctx.grad);
                let ga = ctx.needs[0].then(|| {
                    let mut d = Tensor::zeros(av.shape());
                    for (o, &(ia, ib)) in pairs.iter().enumerate() {
                        gemm(
                            m,
                            n,
                            k,
                            &g.data()[o * m * n..],
                            false,
                            &bv.data()[ib * k * n..],
                            true,
                            1.0,
                            &mut d.data_mut()[ia * m * k..],
                        );
                    }
                    d
                });
                let gb = ctx.needs[1].then(|| {
                    let mut d = Tensor::zeros(bv.shape());
                    for (o, &(ia, ib)) in pairs.iter().enumerate() {
                        gemm(
                            k,
                            m,
                            n,
                            &av.data()[ia * m * k..],
                            true,
                            &g.data()[o * m * n..],
                            false,
                            1.0,
                            &mut d.data_mut()[ib * k * n..],
                        );
                    }
                    d
                });
                vec![ga, gb]
            }),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ParamStore;

    fn t(shape: &[usize], v: &[f64]) -> Tensor {
        Tensor::new(shape, v.to_vec()).unwrap()
    }

    #[test]
    fn identity_times_matrix() {
        let mut tape = Tape::new();
        let i = tape.constant(Tensor::eye(2));
        let m = tape.constant(t(&[2, 2], &[1., 2., 3., 4.]));
        let y = tape.matmul(i, m).unwrap();
        assert_eq!(tape.value(y).data(), &[1., 2., 3., 4.]);
    }

    #[test]
    fn row_times_column() {
        let mut tape = Tape::new();
        let a = tape.constant(t(&[1, 2], &[1., 2.]));
        let b = tape.constant(t(&[2, 1], &[3., 4.]));
        let y = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(y).shape(), &[1, 1]);
        assert_eq!(tape.value(y).item(), 11.0);
    }

    #[test]
    fn mismatch_names_both_shapes() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[4, 2]));
        let msg = tape.matmul(a, b).unwrap_err().to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[4, 2]"), "{msg}");
    }

    #[test]
    fn batched_broadcast_matches_per_matrix_product() {
        let mut tape = Tape::new();
        let a = Tensor::from_fn(&[2, 3, 2, 4], |i| (i as f64 * 0.3).sin());
        let b = Tensor::from_fn(&[3, 4, 5], |i| (i as f64 * 0.7).cos());
        let av = tape.constant(a.clone());
        let bv = tape.constant(b.clone());
        let y = tape.matmul(av, bv).unwrap();
        let y = tape.value(y);
        assert_eq!(y.shape(), &[2, 3, 2, 5]);
        for bi in 0..2 {
            for h in 0..3 {
                for i in 0..2 {
                    for j in 0..5 {
                        let want: f64 = (0..4).map(|p| a.at(&[bi, h, i, p]) * b.at(&[h, p, j])).sum();
                        assert!((y.at(&[bi, h, i, j]) - want).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn sum_gradient_is_row_sum_of_b() {
        let mut tape = Tape::new();
        let mut store = ParamStore::new();
        let a = tape.input(Tensor::from_fn(&[3, 4], |i| i as f64 * 0.1));
        let bt = Tensor::from_fn(&[4, 2], |i| (i as f64).sin());
        let b = tape.constant(bt.clone());
        let y = tape.matmul(a, b).unwrap();
        let s = tape.sum(y);
        tape.backward(s, &mut store).unwrap();
        let ga = tape.grad(a).unwrap();
        for i in 0..3 {
            for p in 0..4 {
                let row_sum = bt.at(&[p, 0]) + bt.at(&[p, 1]);
                assert!((ga.at(&[i, p]) - row_sum).abs() < 1e-12);
            }
        }
    }
}
