//! Run configuration files.
//!
//! A config is TOML whose first non-blank line is exactly
//! `# neonext-run-config v1`. Unknown keys are rejected. Example:
//!
//! ```toml
//! # neonext-run-config v1
//! name = "synthetic-smoke"
//! model = "micro"        # micro | T | S | B
//! input_size = 32
//! init = "neoinit"       # neoinit | random-normal
//! epochs = 3
//! batch_size = 32
//! seeds = [0, 1]
//! label_smoothing = 0.1
//! augment = "basic"      # none | basic | basic+mixup
//! out_dir = "runs/smoke"
//!
//! [optimizer]
//! kind = "sgd"           # sgd | adamw
//! lr = 0.1
//! momentum = 0.9
//! weight_decay = 0.0
//!
//! [schedule]
//! warmup_epochs = 1
//! floor_lr = 0.0
//!
//! [data]
//! source = "synthetic"   # synthetic | cifar10 | imagenet
//! train_size = 512
//! val_size = 256
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::optim::{OptimKind, OptimSpec};
use super::schedule::ScheduleSpec;
use crate::data::AugmentPolicy;
use crate::error::{Error, Result};
use crate::nn::{InitMethod, ModelSpec};

pub const CONFIG_HEADER: &str = "# neonext-run-config v1";

fn default_input() -> usize {
    32
}
fn default_classes() -> usize {
    10
}
fn default_eval_batch() -> usize {
    256
}
fn default_smoothing() -> f64 {
    0.1
}
fn default_augment() -> String {
    "basic".into()
}
fn default_momentum() -> f64 {
    0.9
}
fn default_betas() -> [f64; 2] {
    [0.9, 0.999]
}
fn default_eps() -> f64 {
    1e-8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: String,
    pub lr: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_betas")]
    pub betas: [f64; 2],
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default)]
    pub grad_clip: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub warmup_epochs: usize,
    #[serde(default)]
    pub floor_lr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    Synthetic,
    Cifar10,
    /// Parsed so large-scale recipes can be kept as configs; never loadable.
    Imagenet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub source: DataSource,
    /// Dataset directory; CIFAR-10 falls back to `NEONEXT_CIFAR10_DIR`.
    #[serde(default)]
    pub dir: Option<PathBuf>,
    /// Synthetic: generated sample counts. CIFAR-10: optional caps taken
    /// from the start of each split.
    #[serde(default)]
    pub train_size: Option<usize>,
    #[serde(default)]
    pub val_size: Option<usize>,
    /// Seed of the synthetic generator and of the train/val split.
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub name: String,
    pub model: String,
    #[serde(default = "default_input")]
    pub input_size: usize,
    #[serde(default = "default_classes")]
    pub classes: usize,
    /// Overrides the preset's drop-path rate.
    #[serde(default)]
    pub drop_path: Option<f64>,
    pub init: InitMethod,
    pub epochs: usize,
    pub batch_size: usize,
    #[serde(default = "default_eval_batch")]
    pub eval_batch_size: usize,
    pub seeds: Vec<u64>,
    #[serde(default = "default_smoothing")]
    pub label_smoothing: f64,
    #[serde(default = "default_augment")]
    pub augment: String,
    pub out_dir: PathBuf,
    pub optimizer: OptimizerConfig,
    pub schedule: ScheduleConfig,
    pub data: DataConfig,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let first = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("");
        if first.trim_end() != CONFIG_HEADER {
            return Err(Error::Config(format!(
                "first line must be {CONFIG_HEADER:?}, found {first:?}"
            )));
        }
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        let body = toml::to_string(self).map_err(|e| Error::Config(e.to_string()))?;
        Ok(format!("{CONFIG_HEADER}\n{body}"))
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must not be empty".into()));
        }
        if self.batch_size == 0 || self.eval_batch_size == 0 {
            return Err(Error::Config("batch sizes must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return Err(Error::Config(format!(
                "label smoothing {} outside [0, 1)",
                self.label_smoothing
            )));
        }
        self.augment_policy()?;
        self.model_spec()?.validate()?;
        self.optim_spec()?.validate()?;
        self.schedule_spec().validate()?;
        Ok(())
    }

    pub fn model_spec(&self) -> Result<ModelSpec> {
        let mut spec = ModelSpec::preset(&self.model, self.input_size, self.classes)?;
        if let Some(d) = self.drop_path {
            spec.drop_path = d;
        }
        Ok(spec)
    }

    pub fn optim_spec(&self) -> Result<OptimSpec> {
        let o = &self.optimizer;
        let kind = match o.kind.as_str() {
            "sgd" => OptimKind::SgdMomentum {
                momentum: o.momentum,
            },
            "adamw" => OptimKind::AdamW {
                beta1: o.betas[0],
                beta2: o.betas[1],
                eps: o.eps,
            },
            k => {
                return Err(Error::Config(format!(
                    "unknown optimizer {k:?} (sgd, adamw)"
                )))
            }
        };
        Ok(OptimSpec {
            kind,
            lr: o.lr,
            weight_decay: o.weight_decay,
            grad_clip: o.grad_clip,
        })
    }

    pub fn schedule_spec(&self) -> ScheduleSpec {
        ScheduleSpec {
            warmup_epochs: self.schedule.warmup_epochs,
            total_epochs: self.epochs,
            peak_lr: self.optimizer.lr,
            floor_lr: self.schedule.floor_lr,
        }
    }

    pub fn augment_policy(&self) -> Result<AugmentPolicy> {
        self.augment.parse()
    }
}
