#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vidpose_tensor::{ParamStore, Tape, Tensor, Var};

pub const H: f64 = 1e-6;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Random values bounded away from zero, for ops with a kink at 0.
pub fn random_away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| {
        let m = rng.random_range(0.05..1.0);
        if rng.random_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

/// Relative error with a floor so near-zero gradients compare absolutely.
pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-4)
}

fn projected_loss(tape: &mut Tape, y: Var, proj: &Tensor) -> Var {
    let p = tape.constant(proj.clone());
    let yp = tape.mul(y, p).unwrap();
    tape.sum(yp)
}

/// Compares tape gradients of `Σ f(inputs) ⊙ R` against central differences
/// for every element of every input; returns the maximum relative error.
pub fn max_grad_error(
    inputs: &[Tensor],
    seed: u64,
    f: impl Fn(&mut Tape, &[Var]) -> Var,
) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.input(t.clone())).collect();
    let y = f(&mut tape, &vars);
    let proj = random(&mut rng(seed ^ 0xabcdef), tape.shape(y));
    let loss = projected_loss(&mut tape, y, &proj);
    let mut store = ParamStore::new();
    tape.backward(loss, &mut store).unwrap();
    let analytic: Vec<Tensor> = vars
        .iter()
        .map(|&v| tape.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(tape.shape(v))))
        .collect();

    let eval = |xs: &[Tensor]| -> f64 {
        let mut t = Tape::new();
        let vs: Vec<Var> = xs.iter().map(|x| t.constant(x.clone())).collect();
        let y = f(&mut t, &vs);
        let l = projected_loss(&mut t, y, &proj);
        t.value(l).item()
    };

    let mut worst: f64 = 0.0;
    for (i, input) in inputs.iter().enumerate() {
        for j in 0..input.numel() {
            let mut xs = inputs.to_vec();
            xs[i].data_mut()[j] = input.data()[j] + H;
            let up = eval(&xs);
            xs[i].data_mut()[j] = input.data()[j] - H;
            let down = eval(&xs);
            let numeric = (up - down) / (2.0 * H);
            worst = worst.max(rel_err(analytic[i].data()[j], numeric));
        }
    }
    worst
}
