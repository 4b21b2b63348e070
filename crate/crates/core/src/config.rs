//! The run configuration document: one TOML file with `model`, `train`,
//! `data`, `aug` and `metrics` sections, every key optional and every
//! unknown key an error. `key=value` overrides are applied on top, last
//! one winning.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{AugmentConfig, SyntheticSpec};
use crate::error::{Error, Result};
use crate::model::ModelConfig;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    /// Epochs between learning-rate decays.
    pub lr_step: usize,
    pub lr_gamma: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Seeds batch order and augmentation.
    pub seed: u64,
    /// Steps between progress lines (0 disables them).
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 8,
            epochs: 20,
            lr: 1e-3,
            weight_decay: 1e-4,
            lr_step: 5,
            lr_gamma: 0.5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
            log_every: 20,
        }
    }
}

impl TrainConfig {
    /// The published fine-tuning constants, which assume a pretrained
    /// backbone.
    pub fn finetune() -> Self {
        TrainConfig {
            batch_size: 16,
            epochs: 20,
            lr: 5e-6,
            weight_decay: 0.1,
            lr_step: 5,
            lr_gamma: 0.5,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::Config("train.lr must be positive".into()));
        }
        if !(self.lr_gamma > 0.0 && self.lr_gamma <= 1.0) {
            return Err(Error::Config("train.lr_gamma must lie in (0, 1]".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::Config("train.batch_size must be at least 2 (batch normalization)".into()));
        }
        if self.lr_step == 0 {
            return Err(Error::Config("train.lr_step must be positive".into()));
        }
        if !(self.weight_decay >= 0.0) || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("train: weight_decay must be ≥ 0 and betas in [0, 1)".into()));
        }
        if !(self.eps > 0.0) {
            return Err(Error::Config("train.eps must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsConfig {
    /// PCK threshold as a fraction of torso length.
    pub threshold: f64,
    /// Largest threshold of the PCK sweep plot.
    pub sweep_max: f64,
    pub sweep_steps: usize,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig {
            threshold: 0.2,
            sweep_max: 0.5,
            sweep_steps: 50,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub version: u32,
    /// Output root; falls back to the environment, then `vidpose-out`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: SyntheticSpec,
    pub aug: AugmentConfig,
    pub metrics: MetricsConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            version: CONFIG_VERSION,
            out_dir: None,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            data: SyntheticSpec::default(),
            aug: AugmentConfig::default(),
            metrics: MetricsConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "unsupported config version {} (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        self.model.validate()?;
        self.train.validate()?;
        self.data.validate()?;
        self.aug.validate()?;
        if !(self.metrics.threshold > 0.0) || self.metrics.sweep_steps == 0 {
            return Err(Error::Config("metrics: threshold must be positive and sweep_steps nonzero".into()));
        }
        Ok(())
    }

    /// Parses a document, applies `overrides` (`dotted.key=value`) in
    /// order and validates the result.
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self> {
        let mut doc: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let cfg: RunConfig =
            RunConfig::deserialize(toml::Value::Table(doc)).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => fs::read_to_string(p).map_err(|e| Error::io(p, e))?,
            None => String::new(),
        };
        Self::from_toml(&text, overrides).map_err(|e| match (e, path) {
            (Error::Config(m), Some(p)) => Error::Config(format!("{}: {m}", p.display())),
            (e, _) => e,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }
}

/// Sets `a.b.c = value` in `doc`, creating tables on the way. The value is
/// read as a TOML literal when it parses as one and as a string otherwise.
pub fn apply_override(doc: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{assignment}` is not of the form key=value")))?;
    let key = key.trim();
    let raw = raw.trim();
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("override key `{key}` is malformed")));
    }
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let (last, path) = parts.split_last().expect("at least one part");
    let mut table = doc;
    for p in path {
        let entry = table
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override `{key}`: `{p}` is not a section")))?;
    }
    table.insert(last.to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_the_default() {
        assert_eq!(RunConfig::from_toml("", &[]).unwrap(), RunConfig::default());
    }

    #[test]
    fn toml_roundtrip() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::from_toml(&cfg.to_toml(), &[]).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_are_named() {
        let e = RunConfig::from_toml("[train]\nlearning_rate = 0.1\n", &[]).unwrap_err().to_string();
        assert!(e.contains("learning_rate"), "{e}");
        let e = RunConfig::from_toml("", &["model.backbone.depht=3".into()]).unwrap_err().to_string();
        assert!(e.contains("depht"), "{e}");
    }

    #[test]
    fn overrides_apply_last_wins() {
        let cfg = RunConfig::from_toml(
            "[train]\nepochs = 3\n",
            &["train.epochs=5".into(), "train.epochs = 7".into(), "model.ablation.afw=false".into()],
        )
        .unwrap();
        assert_eq!(cfg.train.epochs, 7);
        assert!(!cfg.model.ablation.afw);
    }

    #[test]
    fn bare_strings_and_bad_forms() {
        let cfg = RunConfig::from_toml("", &["out_dir=/tmp/x".into()]).unwrap();
        assert_eq!(cfg.out_dir.as_deref(), Some(Path::new("/tmp/x")));
        assert!(RunConfig::from_toml("", &["train.epochs".into()]).is_err());
        assert!(RunConfig::from_toml("", &["train..epochs=1".into()]).is_err());
        assert!(RunConfig::from_toml("", &["train.batch_size=1".into()]).is_err());
    }

    #[test]
    fn finetune_constants() {
        let p = TrainConfig::finetune();
        assert_eq!((p.batch_size, p.epochs, p.lr, p.weight_decay, p.lr_step, p.lr_gamma), (16, 20, 5e-6, 0.1, 5, 0.5));
    }
}
