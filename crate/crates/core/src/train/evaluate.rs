//! Held-out evaluation: eval-mode forward passes over un-augmented
//! windows, heatmap decoding back to image pixels, and metric
//! aggregation.

use serde::{Deserialize, Serialize};
use vidpose_tensor::{ParamStore, Tensor};

use super::checkpoint::Checkpoint;
use crate::codec::{decode_pose, HeatmapStack, Pose};
use crate::config::{MetricsConfig, RunConfig};
use crate::data::Dataset;
use crate::error::Result;
use crate::metrics::{Accumulator, EvalReport};
use crate::model::PoseModel;
use crate::nn::Ctx;

/// Windows per forward pass during evaluation.
pub const EVAL_BATCH: usize = 16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowPrediction {
    /// `(video, center frame)`.
    pub key: (usize, usize),
    /// Prediction in image pixels.
    pub pose: Pose,
    pub ground_truth: Pose,
    /// Per-frame weights of the window, oldest frame first.
    pub frame_weights: Vec<f64>,
    /// Mean cross-attention mass per context frame and grid cell,
    /// `[2T][Hp·Wp]`, averaged over heads and center queries.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub context_attention: Option<Vec<Vec<f64>>>,
}

#[derive(Clone, Debug)]
pub struct Evaluation {
    pub report: EvalReport,
    pub accumulator: Accumulator,
    pub predictions: Vec<WindowPrediction>,
}

/// Runs the model over every window of `data` in order.
pub fn predict(model: &PoseModel, store: &mut ParamStore, data: &Dataset) -> Result<Vec<WindowPrediction>> {
    let spec = model.cfg.heatmap_spec();
    let t = model.cfg.frames();
    let indices: Vec<usize> = (0..data.len()).collect();
    let mut out = Vec::with_capacity(data.len());
    for chunk in indices.chunks(EVAL_BATCH) {
        let batch = data.batch(chunk, None)?;
        let mut ctx = Ctx::new(store, false);
        let x = ctx.tape.constant(batch.frames.clone());
        let o = model.forward(&mut ctx, x)?;
        let maps = ctx.tape.value(o.heatmaps).clone();
        let weights = ctx.tape.value(o.frame_weights).clone();
        let alpha = o.cross_alpha.map(|a| ctx.tape.value(a).clone());
        let poses = decode_pose(&HeatmapStack {
            maps,
            spec: spec.clone(),
            transforms: batch.transforms.clone(),
        })?;
        let wt = weights.shape()[1];
        for (i, pose) in poses.into_iter().enumerate() {
            let frame_weights = if wt == t {
                weights.data()[i * wt..(i + 1) * wt].to_vec()
            } else {
                // Center-only baseline: the single encoded frame carries all weight.
                (0..t).map(|f| if f == t / 2 { 1.0 } else { 0.0 }).collect()
            };
            out.push(WindowPrediction {
                key: batch.keys[i],
                pose,
                ground_truth: batch.poses[i].clone(),
                frame_weights,
                context_attention: alpha.as_ref().map(|a| context_attention(a, i, t - 1)),
            });
        }
    }
    Ok(out)
}

/// Averages `[B, h, Nq, N]` weights of sample `b` over heads and queries
/// and splits the keys into `frames` equal groups.
fn context_attention(alpha: &Tensor, b: usize, frames: usize) -> Vec<Vec<f64>> {
    let s = alpha.shape();
    let (h, nq, nk) = (s[1], s[2], s[3]);
    let mut acc = vec![0.0; nk];
    let base = b * h * nq * nk;
    for row in alpha.data()[base..base + h * nq * nk].chunks(nk) {
        for (a, v) in acc.iter_mut().zip(row) {
            *a += v;
        }
    }
    let norm = (h * nq) as f64;
    acc.iter_mut().for_each(|a| *a /= norm);
    let per = nk / frames.max(1);
    acc.chunks(per.max(1)).map(<[f64]>::to_vec).collect()
}

/// Scores predictions against their ground truth.
pub fn score(predictions: &[WindowPrediction], joints: usize, metrics: &MetricsConfig) -> Result<(EvalReport, Accumulator)> {
    let mut acc = Accumulator::new(joints, metrics.threshold);
    for p in predictions {
        acc.add(&p.pose, &p.ground_truth)?;
    }
    Ok((acc.report()?, acc))
}

/// Eval-mode evaluation of a model in memory.
pub fn evaluate(model: &PoseModel, store: &mut ParamStore, data: &Dataset, metrics: &MetricsConfig) -> Result<Evaluation> {
    let predictions = predict(model, store, data)?;
    let (report, accumulator) = score(&predictions, model.cfg.joints(), metrics)?;
    Ok(Evaluation {
        report,
        accumulator,
        predictions,
    })
}

/// Evaluates a checkpoint after checking that `config` describes its model.
pub fn evaluate_checkpoint(ckpt: &Checkpoint, config: &RunConfig, data: &Dataset) -> Result<Evaluation> {
    ckpt.check_model(config)?;
    let mut store = ParamStore::new();
    let model = PoseModel::new(&config.model, &mut store)?;
    ckpt.restore_params(&mut store)?;
    evaluate(&model, &mut store, data, &config.metrics)
}
