//! AdamW with decoupled weight decay and the step-decay schedule.

use vidpose_tensor::{ParamStore, Tensor};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// First and second moments per trainable parameter, indexed like the
/// store (`None` for buffers).
#[derive(Clone, Debug)]
pub struct AdamW {
    pub hyper: AdamHyper,
    pub step: u64,
    pub m: Vec<Option<Tensor>>,
    pub v: Vec<Option<Tensor>>,
}

impl AdamW {
    pub fn new(store: &ParamStore, hyper: AdamHyper) -> Self {
        let zeros = |_| store.iter().map(|(_, p)| p.trainable.then(|| Tensor::zeros(p.value.shape()))).collect();
        AdamW {
            hyper,
            step: 0,
            m: zeros(()),
            v: zeros(()),
        }
    }

    /// One update from the gradients accumulated in `store`.
    ///
    /// Every gradient is checked before anything is modified, so a
    /// non-finite gradient leaves parameters and moments untouched.
    pub fn step(&mut self, store: &mut ParamStore, lr: f64) -> Result<()> {
        if let Some((_, p)) = store.trainable().find(|(_, p)| !p.grad.is_finite()) {
            return Err(Error::Numeric(format!("non-finite gradient in parameter `{}`", p.name)));
        }
        let AdamHyper { beta1, beta2, eps, weight_decay } = self.hyper;
        self.step += 1;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (id, p) in store.iter_mut() {
            let (Some(m), Some(v)) = (self.m[id.0].as_mut(), self.v[id.0].as_mut()) else {
                continue;
            };
            let w = p.value.data_mut();
            let g = p.grad.data();
            let (m, v) = (m.data_mut(), v.data_mut());
            for i in 0..w.len() {
                w[i] -= lr * weight_decay * w[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                w[i] -= lr * mh / (vh.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// `lr0 · gamma^⌊epoch / step⌋`.
pub fn step_lr(epoch: usize, lr0: f64, step: usize, gamma: f64) -> f64 {
    let k = if step == 0 { 0 } else { epoch / step };
    lr0 * gamma.powi(k as i32)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(values: &[f64]) -> ParamStore {
        let mut s = ParamStore::new();
        s.add("w", Tensor::new(&[values.len()], values.to_vec()).unwrap()).unwrap();
        s.add_buffer("b", Tensor::ones(&[1])).unwrap();
        s
    }

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        let mut s = store(&[1.0, -2.0]);
        let mut opt = AdamW::new(&s, AdamHyper::default());
        for _ in 0..5 {
            opt.step(&mut s, 1e-2).unwrap();
        }
        assert_eq!(s.get(s.id("w").unwrap()).value.data(), &[1.0, -2.0]);
    }

    #[test]
    fn decay_alone_shrinks_multiplicatively() {
        let mut s = store(&[1.0, -2.0]);
        let mut opt = AdamW::new(&s, AdamHyper { weight_decay: 0.1, ..Default::default() });
        opt.step(&mut s, 0.5).unwrap();
        let f = 1.0 - 0.5 * 0.1;
        assert_eq!(s.get(s.id("w").unwrap()).value.data(), &[f, -2.0 * f]);
        assert_eq!(s.get(s.id("b").unwrap()).value.data(), &[1.0]);
    }

    #[test]
    fn converges_on_a_quadratic() {
        // (w - 0.5)^2 has its minimum at 0.5.
        let mut s = store(&[0.0]);
        let mut opt = AdamW::new(&s, AdamHyper::default());
        let id = s.id("w").unwrap();
        for _ in 0..100 {
            let w = s.get(id).value.data()[0];
            s.get_mut(id).grad.data_mut()[0] = 2.0 * (w - 0.5);
            opt.step(&mut s, 0.02).unwrap();
        }
        let w = s.get(id).value.data()[0];
        assert!((w - 0.5).abs() < 1e-3, "{w}");
    }

    #[test]
    fn nan_gradient_names_the_parameter_and_changes_nothing() {
        let mut s = store(&[1.0]);
        let mut opt = AdamW::new(&s, AdamHyper::default());
        let id = s.id("w").unwrap();
        s.get_mut(id).grad.data_mut()[0] = f64::NAN;
        let e = opt.step(&mut s, 0.1).unwrap_err().to_string();
        assert!(e.contains("`w`"), "{e}");
        assert_eq!(opt.step, 0);
        assert_eq!(s.get(id).value.data(), &[1.0]);
    }

    #[test]
    fn schedule_arithmetic() {
        assert_eq!(step_lr(0, 5e-6, 5, 0.5), 5e-6);
        assert_eq!(step_lr(4, 5e-6, 5, 0.5), 5e-6);
        assert_eq!(step_lr(5, 5e-6, 5, 0.5), 2.5e-6);
        assert_eq!(step_lr(10, 5e-6, 5, 0.5), 1.25e-6);
        assert_eq!(step_lr(17, 1e-3, 5, 1.0), 1e-3);
    }
}
