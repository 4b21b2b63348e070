//! The optimization loop.
//!
//! One random stream, seeded from `train.seed`, drives both the batch
//! order and the augmentation, so `(config, seed)` fixes the whole loss
//! curve, and a checkpoint taken at an epoch boundary resumes it exactly.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use vidpose_tensor::ParamStore;

use super::checkpoint::Checkpoint;
use super::optim::{step_lr, AdamHyper, AdamW};
use crate::codec::mse_loss;
use crate::config::{RunConfig, TrainConfig};
use crate::data::{Batch, Dataset};
use crate::error::{Error, Result};
use crate::model::PoseModel;
use crate::nn::Ctx;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: u64,
    pub lr: f64,
    pub loss: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochSummary {
    pub epoch: usize,
    pub lr: f64,
    pub mean_loss: f64,
    pub steps: usize,
}

pub fn adam_hyper(t: &TrainConfig) -> AdamHyper {
    AdamHyper {
        beta1: t.beta1,
        beta2: t.beta2,
        eps: t.eps,
        weight_decay: t.weight_decay,
    }
}

pub struct Trainer {
    pub config: RunConfig,
    pub model: PoseModel,
    pub store: ParamStore,
    pub opt: AdamW,
    pub rng: ChaCha8Rng,
    /// Completed epochs.
    pub epoch: usize,
    /// Gradient L2 norm per top-level module after the last step.
    pub grad_norms: Vec<(String, f64)>,
}

impl Trainer {
    pub fn new(config: &RunConfig) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let model = PoseModel::new(&config.model, &mut store)?;
        let opt = AdamW::new(&store, adam_hyper(&config.train));
        Ok(Trainer {
            config: config.clone(),
            model,
            store,
            opt,
            rng: ChaCha8Rng::seed_from_u64(config.train.seed),
            epoch: 0,
            grad_norms: Vec::new(),
        })
    }

    /// Continues from `ckpt` under `config`, which may extend the epoch
    /// count but must describe the same model.
    pub fn resume(config: &RunConfig, ckpt: &Checkpoint) -> Result<Self> {
        ckpt.check_model(config)?;
        let mut t = Trainer::new(config)?;
        ckpt.restore_params(&mut t.store)?;
        t.opt = ckpt.restore_optimizer(&t.store, adam_hyper(&config.train))?;
        t.rng = ckpt.rng.rng();
        t.epoch = ckpt.epoch;
        Ok(t)
    }

    /// Learning rate of the next epoch.
    pub fn lr(&self) -> f64 {
        let t = &self.config.train;
        step_lr(self.epoch, t.lr, t.lr_step, t.lr_gamma)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::capture(&self.config, &self.store, &self.opt, &self.rng, self.epoch)
    }

    /// Forward, backward and one AdamW update. Returns the loss before the
    /// update.
    pub fn step(&mut self, batch: &Batch, lr: f64) -> Result<f64> {
        self.store.zero_grad();
        let mut ctx = Ctx::new(&mut self.store, true);
        let x = ctx.tape.constant(batch.frames.clone());
        let out = self.model.forward(&mut ctx, x)?;
        let loss = mse_loss(&mut ctx.tape, out.heatmaps, &batch.target, &batch.mask)?;
        let value = ctx.tape.value(loss).item();
        if !value.is_finite() {
            let norms: Vec<String> = self.grad_norms.iter().map(|(n, g)| format!("{n}={g:.3e}")).collect();
            return Err(Error::Numeric(format!(
                "loss became {value} at epoch {} step {} (lr {lr:e}); gradient norms after the previous step: [{}]",
                self.epoch,
                self.opt.step + 1,
                norms.join(", ")
            )));
        }
        ctx.backward(loss)?;
        self.grad_norms = grad_norms(&self.store);
        self.opt.step(&mut self.store, lr)?;
        Ok(value)
    }

    /// Shuffled batches of one epoch; a trailing batch of one window is
    /// dropped because batch statistics need two.
    pub fn epoch_batches(&mut self, n: usize) -> Vec<Vec<usize>> {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut self.rng);
        order
            .chunks(self.config.train.batch_size)
            .filter(|c| c.len() >= 2)
            .map(<[usize]>::to_vec)
            .collect()
    }

    pub fn train_epoch(&mut self, data: &Dataset) -> Result<(EpochSummary, Vec<StepRecord>)> {
        if data.len() < 2 {
            return Err(Error::Usage(format!(
                "training needs at least 2 windows, the dataset has {}",
                data.len()
            )));
        }
        let lr = self.lr();
        let aug = self.config.aug.clone();
        let mut records = Vec::new();
        for indices in self.epoch_batches(data.len()) {
            let batch = data.batch(&indices, Some((&aug, &mut self.rng)))?;
            let loss = self.step(&batch, lr)?;
            let rec = StepRecord {
                epoch: self.epoch,
                step: self.opt.step,
                lr,
                loss,
            };
            let every = self.config.train.log_every;
            if every > 0 && rec.step % every as u64 == 0 {
                log::info!("epoch {} step {} lr {:e} loss {:.6e}", rec.epoch, rec.step, rec.lr, rec.loss);
            }
            records.push(rec);
        }
        let summary = EpochSummary {
            epoch: self.epoch,
            lr,
            mean_loss: records.iter().map(|r| r.loss).sum::<f64>() / records.len().max(1) as f64,
            steps: records.len(),
        };
        self.epoch += 1;
        Ok((summary, records))
    }

    /// Trains until `train.epochs` epochs are complete, calling `after`
    /// at the end of each epoch (checkpointing, progress output).
    pub fn fit(
        &mut self,
        data: &Dataset,
        mut after: impl FnMut(&Trainer, &EpochSummary, &[StepRecord]) -> Result<()>,
    ) -> Result<Vec<StepRecord>> {
        let mut all = Vec::new();
        while self.epoch < self.config.train.epochs {
            let (summary, records) = self.train_epoch(data)?;
            after(self, &summary, &records)?;
            all.extend(records);
        }
        Ok(all)
    }
}

/// L2 norm of the accumulated gradients per top-level module.
pub fn grad_norms(store: &ParamStore) -> Vec<(String, f64)> {
    let mut out: Vec<(String, f64)> = Vec::new();
    for (_, p) in store.trainable() {
        let group = p.name.split('.').next().unwrap_or("").to_string();
        let sq: f64 = p.grad.data().iter().map(|g| g * g).sum();
        match out.iter_mut().find(|(n, _)| *n == group) {
            Some((_, s)) => *s += sq,
            None => out.push((group, sq)),
        }
    }
    for (_, s) in &mut out {
        *s = s.sqrt();
    }
    out
}
