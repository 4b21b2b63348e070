//! Finite-difference verification of the analytic gradients, per module in
//! isolation and for the composed model.
//!
//! Each module gets random inputs and the scalar objective `Σ r ⊙ out`
//! with a fixed random `r`; the composed model uses the training loss. For
//! every trainable tensor of the module, the entry with the largest
//! analytic gradient and a few random entries are compared with central
//! differences. Inputs are checked the same way. Everything runs in
//! training mode so batch statistics are live.
//!
//! Gradients are checked at a jittered point (initial values plus
//! `N(0, JITTER²)`): at initialization attention is nearly uniform and key
//! gradients vanish into roundoff. The batch is three because a pooled
//! 1×1 map normalized over only two samples is ±1 whatever its input.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use vidpose_tensor::{ParamId, ParamStore, Tensor, Var};

use crate::codec::mse_loss;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, PoseModel};
use crate::nn::{Ctx, Init};

pub const FD_STEP: f64 = 1e-6;
pub const JITTER: f64 = 0.05;
pub const TOLERANCE: f64 = 1e-4;
/// Denominator floor of the relative error as a fraction of the group's
/// largest analytic gradient. Central-difference roundoff at this step is
/// around 1e-8 of that scale, so entries far below it (including exact
/// zeros from softmax shift invariance) carry no signal of their own.
pub const REL_FLOOR: f64 = 1e-3;

pub const GROUPS: [&str; 6] = ["backbone", "msff", "afw", "cross_attention", "decoder", "composed"];

#[derive(Clone, Debug)]
pub struct GradcheckOptions {
    pub seed: u64,
    pub batch: usize,
    /// Entries compared per tensor in the isolated modules.
    pub entries: usize,
    /// Entries per tensor in the composed model.
    pub composed_entries: usize,
    /// Groups to run; all when empty.
    pub only: Vec<String>,
    /// Test hook: scales the analytic gradients of this group by 1.01 so
    /// the harness can be seen to fail.
    pub corrupt: Option<String>,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        GradcheckOptions {
            seed: 0,
            batch: 3,
            entries: 4,
            composed_entries: 2,
            only: Vec::new(),
            corrupt: None,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct TensorCheck {
    pub name: String,
    pub checked: usize,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct GroupCheck {
    pub group: String,
    pub tensors: Vec<TensorCheck>,
    /// Largest analytic gradient magnitude in the group.
    pub grad_scale: f64,
    pub max_rel_err: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradcheckReport {
    pub step: f64,
    pub tolerance: f64,
    pub groups: Vec<GroupCheck>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.groups.iter().all(|g| g.passed)
    }

    pub fn failures(&self) -> Vec<&str> {
        self.groups.iter().filter(|g| !g.passed).map(|g| g.group.as_str()).collect()
    }
}

type Objective<'a> = Box<dyn Fn(&mut Ctx<'_>, &[Var]) -> Result<Var> + 'a>;

struct Case<'a> {
    group: &'static str,
    params: Vec<ParamId>,
    inputs: Vec<Tensor>,
    objective: Objective<'a>,
    entries: usize,
}

fn forward_value(store: &mut ParamStore, case: &Case<'_>, inputs: &[Tensor]) -> Result<f64> {
    let mut ctx = Ctx::new(store, true);
    let vars: Vec<Var> = inputs.iter().map(|t| ctx.tape.constant(t.clone())).collect();
    let l = (case.objective)(&mut ctx, &vars)?;
    Ok(ctx.tape.value(l).item())
}

fn analytic(store: &mut ParamStore, case: &Case<'_>) -> Result<Vec<Tensor>> {
    store.zero_grad();
    let mut ctx = Ctx::new(store, true);
    let vars: Vec<Var> = case.inputs.iter().map(|t| ctx.tape.input(t.clone())).collect();
    let l = (case.objective)(&mut ctx, &vars)?;
    ctx.backward(l)?;
    Ok(vars
        .iter()
        .zip(&case.inputs)
        .map(|(&v, t)| ctx.tape.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect())
}

/// Largest-magnitude entry first, then distinct random ones.
fn pick(grad: &[f64], n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let top = (0..grad.len())
        .max_by(|&a, &b| grad[a].abs().total_cmp(&grad[b].abs()))
        .unwrap_or(0);
    let mut out = vec![top];
    let extra = n.saturating_sub(1).min(grad.len());
    for i in sample(rng, grad.len(), extra) {
        if !out.contains(&i) {
            out.push(i);
        }
    }
    out
}

fn compare(check: &mut TensorCheck, a: f64, n: f64, floor: f64) {
    let abs = (a - n).abs();
    let rel = abs / a.abs().max(n.abs()).max(floor).max(f64::MIN_POSITIVE);
    check.checked += 1;
    check.max_abs_err = check.max_abs_err.max(abs);
    check.max_rel_err = check.max_rel_err.max(rel);
}

fn run_case(store: &mut ParamStore, case: &Case<'_>, corrupt: bool, rng: &mut ChaCha8Rng) -> Result<GroupCheck> {
    let factor = if corrupt { 1.01 } else { 1.0 };
    let input_grads = analytic(store, case)?;
    let param_grads: Vec<Tensor> = case.params.iter().map(|&id| store.get(id).grad.clone()).collect();
    let scale = param_grads
        .iter()
        .chain(&input_grads)
        .flat_map(|g| g.data())
        .fold(0.0f64, |m, g| m.max(g.abs()));
    let floor = REL_FLOOR * scale;
    let mut tensors = Vec::new();
    for (&id, grad) in case.params.iter().zip(&param_grads) {
        let mut check = TensorCheck {
            name: store.get(id).name.clone(),
            checked: 0,
            max_rel_err: 0.0,
            max_abs_err: 0.0,
        };
        for i in pick(grad.data(), case.entries, rng) {
            let orig = store.get(id).value.data()[i];
            store.get_mut(id).value.data_mut()[i] = orig + FD_STEP;
            let plus = forward_value(store, case, &case.inputs)?;
            store.get_mut(id).value.data_mut()[i] = orig - FD_STEP;
            let minus = forward_value(store, case, &case.inputs)?;
            store.get_mut(id).value.data_mut()[i] = orig;
            compare(&mut check, factor * grad.data()[i], (plus - minus) / (2.0 * FD_STEP), floor);
        }
        tensors.push(check);
    }
    let mut inputs = case.inputs.clone();
    for (k, grad) in input_grads.iter().enumerate() {
        let mut check = TensorCheck {
            name: format!("input{k}"),
            checked: 0,
            max_rel_err: 0.0,
            max_abs_err: 0.0,
        };
        for i in pick(grad.data(), case.entries, rng) {
            let orig = inputs[k].data()[i];
            inputs[k].data_mut()[i] = orig + FD_STEP;
            let plus = forward_value(store, case, &inputs)?;
            inputs[k].data_mut()[i] = orig - FD_STEP;
            let minus = forward_value(store, case, &inputs)?;
            inputs[k].data_mut()[i] = orig;
            compare(&mut check, factor * grad.data()[i], (plus - minus) / (2.0 * FD_STEP), floor);
        }
        tensors.push(check);
    }
    let max_rel_err = tensors.iter().map(|t| t.max_rel_err).fold(0.0, f64::max);
    Ok(GroupCheck {
        group: case.group.to_string(),
        tensors,
        grad_scale: scale,
        max_rel_err,
        passed: max_rel_err < TOLERANCE,
    })
}

fn params_of(store: &ParamStore, prefix: &str) -> Vec<ParamId> {
    store
        .trainable()
        .filter(|(_, p)| prefix.is_empty() || p.name.starts_with(prefix))
        .map(|(id, _)| id)
        .collect()
}

/// `Σ r ⊙ x` with `r` a fixed tensor.
fn project(ctx: &mut Ctx<'_>, x: Var, r: &Tensor) -> Result<Var> {
    let rv = ctx.tape.constant(r.clone());
    let p = ctx.tape.mul(x, rv)?;
    Ok(ctx.tape.sum(p))
}

/// Checks every enabled module of `cfg` and the composed model.
pub fn run(cfg: &ModelConfig, opts: &GradcheckOptions) -> Result<GradcheckReport> {
    if opts.batch < 2 {
        return Err(Error::Usage("gradcheck needs a batch of at least 2 for batch statistics".into()));
    }
    if let Some(g) = opts.only.iter().find(|g| !GROUPS.contains(&g.as_str())) {
        return Err(Error::Usage(format!("unknown gradcheck group `{g}` (expected one of {})", GROUPS.join(", "))));
    }
    let mut store = ParamStore::new();
    let model = PoseModel::new(cfg, &mut store)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    for (_, p) in store.iter_mut().filter(|(_, p)| p.trainable) {
        let noise = Init::Normal(JITTER).tensor(p.value.shape(), &mut rng);
        p.value.data_mut().iter_mut().zip(noise.data()).for_each(|(v, n)| *v += n);
    }
    let b = opts.batch;
    let t = cfg.frames();
    let c = cfg.backbone.embed_dim;
    let (hp, wp) = cfg.backbone.grid();
    let (h, w) = (cfg.backbone.img_h, cfg.backbone.img_w);
    let mut rand = |shape: &[usize], std: f64| Init::Normal(std).tensor(shape, &mut rng);

    let mut cases: Vec<Case<'_>> = Vec::new();
    let bb = &model.backbone;
    let r_taps: Vec<Tensor> = (0..cfg.backbone.tap_layers.len()).map(|_| rand(&[b, c, hp, wp], 1.0)).collect();
    cases.push(Case {
        group: "backbone",
        params: params_of(&store, "backbone."),
        inputs: vec![rand(&[b, 3, h, w], 0.5)],
        objective: Box::new(move |ctx, x| {
            let taps = bb.encode(ctx, x[0])?.taps;
            let mut total = None;
            for (tap, r) in taps.into_iter().zip(&r_taps) {
                let p = project(ctx, tap, r)?;
                total = Some(match total {
                    None => p,
                    Some(acc) => ctx.tape.add(acc, p)?,
                });
            }
            total.ok_or_else(|| Error::Usage("backbone has no taps".into()))
        }),
        entries: opts.entries,
    });
    if let Some(m) = &model.msff {
        let n = m.taps();
        let r = rand(&[b, c, hp, wp], 1.0);
        cases.push(Case {
            group: "msff",
            params: params_of(&store, "msff."),
            inputs: (0..n).map(|_| rand(&[b, c, hp, wp], 1.0)).collect(),
            objective: Box::new(move |ctx, x| {
                let fused = m.forward(ctx, x)?.fused;
                project(ctx, fused, &r)
            }),
            entries: opts.entries,
        });
    }
    if let Some(a) = &model.afw {
        let r = rand(&[b * t, c, hp, wp], 1.0);
        cases.push(Case {
            group: "afw",
            params: params_of(&store, "afw."),
            inputs: vec![rand(&[b * t, c, hp, wp], 1.0)],
            objective: Box::new(move |ctx, x| {
                let f = a.forward(ctx, x[0], t)?.features;
                project(ctx, f, &r)
            }),
            entries: opts.entries,
        });
    }
    if let Some(x) = &model.cross {
        let r = rand(&[b, c, hp, wp], 1.0);
        cases.push(Case {
            group: "cross_attention",
            params: params_of(&store, "cross_attention."),
            inputs: vec![rand(&[b * t, c, hp, wp], 1.0)],
            objective: Box::new(move |ctx, v| {
                let f = x.forward(ctx, v[0], t)?.features;
                project(ctx, f, &r)
            }),
            entries: opts.entries,
        });
    }
    let dec = &model.decoder;
    let spec = cfg.heatmap_spec();
    let k = cfg.joints();
    let r = rand(&[b, k, spec.h, spec.w], 1.0);
    cases.push(Case {
        group: "decoder",
        params: params_of(&store, "decoder."),
        inputs: vec![rand(&[b, c, hp, wp], 1.0)],
        objective: Box::new(move |ctx, x| {
            let y = dec.forward(ctx, x[0])?;
            project(ctx, y, &r)
        }),
        entries: opts.entries,
    });
    let target = rand(&[b, k, spec.h, spec.w], 0.3);
    let mask = Tensor::ones(&[b, k]);
    let full = &model;
    cases.push(Case {
        group: "composed",
        params: params_of(&store, ""),
        inputs: vec![rand(&[b * t, 3, h, w], 0.5)],
        objective: Box::new(move |ctx, x| {
            let out = full.forward(ctx, x[0])?;
            mse_loss(&mut ctx.tape, out.heatmaps, &target, &mask)
        }),
        entries: opts.composed_entries,
    });

    let mut groups = Vec::new();
    let mut pick_rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x9e37_79b9);
    for case in &cases {
        if !opts.only.is_empty() && !opts.only.iter().any(|g| g == case.group) {
            continue;
        }
        let corrupt = opts.corrupt.as_deref() == Some(case.group);
        let g = run_case(&mut store, case, corrupt, &mut pick_rng)?;
        log::info!("gradcheck {}: max rel. err {:.3e}", g.group, g.max_rel_err);
        groups.push(g);
    }
    Ok(GradcheckReport {
        step: FD_STEP,
        tolerance: TOLERANCE,
        groups,
    })
}
