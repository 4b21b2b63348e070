//! Training checkpoints: parameters, buffers, AdamW moments, the epoch and
//! step counters, the exact position of the training random stream, and
//! the run configuration with its model hash.
//!
//! Stored in the tensor container format. Tensors are named `param.<name>`,
//! `adam.m.<name>` and `adam.v.<name>`; the scalar state lives in the
//! container's string metadata.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vidpose_tensor::{Container, ParamStore};

use super::optim::{AdamHyper, AdamW};
use crate::config::RunConfig;
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "vidpose-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Resumable position of a ChaCha stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn of(rng: &ChaCha8Rng) -> Self {
        RngState {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut r = ChaCha8Rng::from_seed(self.seed);
        r.set_stream(self.stream);
        r.set_word_pos(self.word_pos);
        r
    }
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub model_hash: String,
    /// Completed epochs.
    pub epoch: usize,
    /// Optimizer steps taken.
    pub step: u64,
    pub rng: RngState,
    pub tensors: Container,
}

impl Checkpoint {
    pub fn capture(config: &RunConfig, store: &ParamStore, opt: &AdamW, rng: &ChaCha8Rng, epoch: usize) -> Self {
        let mut tensors = Container::default();
        store.export("param.", &mut tensors);
        for (id, p) in store.iter() {
            if let (Some(m), Some(v)) = (&opt.m[id.0], &opt.v[id.0]) {
                tensors.tensors.push((format!("adam.m.{}", p.name), m.clone()));
                tensors.tensors.push((format!("adam.v.{}", p.name), v.clone()));
            }
        }
        Checkpoint {
            config: config.clone(),
            model_hash: config.model.hash(),
            epoch,
            step: opt.step,
            rng: RngState::of(rng),
            tensors,
        }
    }

    /// Refuses a checkpoint written for a different architecture.
    pub fn check_model(&self, config: &RunConfig) -> Result<()> {
        let expected = config.model.hash();
        if self.model_hash != expected {
            return Err(Error::Mismatch(format!(
                "checkpoint was written for model config {} but the current config hashes to {}; \
                 pass the matching configuration",
                short(&self.model_hash),
                short(&expected)
            )));
        }
        Ok(())
    }

    pub fn restore_params(&self, store: &mut ParamStore) -> Result<()> {
        store.import("param.", &self.tensors)?;
        Ok(())
    }

    pub fn restore_optimizer(&self, store: &ParamStore, hyper: AdamHyper) -> Result<AdamW> {
        let mut opt = AdamW::new(store, hyper);
        opt.step = self.step;
        for (id, p) in store.trainable() {
            for (slot, kind) in [(&mut opt.m, "m"), (&mut opt.v, "v")] {
                let key = format!("adam.{kind}.{}", p.name);
                let t = self
                    .tensors
                    .tensor(&key)
                    .ok_or_else(|| Error::Mismatch(format!("checkpoint lacks optimizer state `{key}`")))?;
                if t.shape() != p.value.shape() {
                    return Err(Error::Mismatch(format!("optimizer state `{key}` has the wrong shape")));
                }
                slot[id.0] = Some(t.clone());
            }
        }
        Ok(opt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut c = self.tensors.clone();
        let meta = &mut c.meta;
        meta.insert("format".into(), CHECKPOINT_FORMAT.into());
        meta.insert("format_version".into(), CHECKPOINT_VERSION.to_string());
        meta.insert("model_hash".into(), self.model_hash.clone());
        meta.insert("config".into(), self.config.to_toml());
        meta.insert("epoch".into(), self.epoch.to_string());
        meta.insert("step".into(), self.step.to_string());
        meta.insert("rng_seed".into(), self.rng.seed.iter().map(|b| format!("{b:02x}")).collect());
        meta.insert("rng_stream".into(), self.rng.stream.to_string());
        meta.insert("rng_word_pos".into(), self.rng.word_pos.to_string());
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        c.save(path).map_err(|e| match e {
            vidpose_tensor::TensorError::Io(io) => Error::io(path, io),
            e => e.into(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::io(path, std::io::Error::new(std::io::ErrorKind::NotFound, "checkpoint not found")));
        }
        let c = Container::load(path).map_err(|e| match e {
            vidpose_tensor::TensorError::Io(io) => Error::io(path, io),
            e => e.into(),
        })?;
        let get = |k: &str| {
            c.meta
                .get(k)
                .ok_or_else(|| Error::Config(format!("{}: checkpoint metadata lacks `{k}`", path.display())))
        };
        if get("format")? != CHECKPOINT_FORMAT {
            return Err(Error::Config(format!("{}: not a training checkpoint", path.display())));
        }
        let version: u32 = parse(get("format_version")?, "format_version")?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Config(format!("{}: unsupported checkpoint version {version}", path.display())));
        }
        let seed_hex = get("rng_seed")?;
        let mut seed = [0u8; 32];
        if seed_hex.len() != 64 {
            return Err(Error::Config("checkpoint rng_seed is malformed".into()));
        }
        for (i, b) in seed.iter_mut().enumerate() {
            *b = u8::from_str_radix(&seed_hex[2 * i..2 * i + 2], 16)
                .map_err(|_| Error::Config("checkpoint rng_seed is malformed".into()))?;
        }
        let ckpt = Checkpoint {
            config: RunConfig::from_toml(get("config")?, &[])?,
            model_hash: get("model_hash")?.clone(),
            epoch: parse(get("epoch")?, "epoch")?,
            step: parse(get("step")?, "step")?,
            rng: RngState {
                seed,
                stream: parse(get("rng_stream")?, "rng_stream")?,
                word_pos: parse(get("rng_word_pos")?, "rng_word_pos")?,
            },
            tensors: c,
        };
        Ok(ckpt)
    }
}

fn parse<T: std::str::FromStr>(s: &str, key: &str) -> Result<T> {
    s.parse()
        .map_err(|_| Error::Config(format!("checkpoint metadata `{key}` is malformed: `{s}`")))
}

fn short(hash: &str) -> &str {
    &hash[..hash.len().min(12)]
}
