//! Optimization loop: AdamW with warmup + cosine decay, a constant-rate
//! fine-tuning phase, per-epoch metrics, checkpoints and deterministic resume.

mod data;
mod optim;
mod run;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use data::{DataConfig, DataSource, DATA_ROOT_ENV};
pub use optim::{clip_global_norm, global_norm, lr_at, AdamW, AdamWConfig, Phase, Schedule, StepOutcome};
pub use run::{
    read_metrics_csv, train, train_on, MetricRow, RunManifest, TrainOptions, TrainSummary, TrainerState,
    METRICS_HEADER,
};

use crate::eval::{EvalError, ExecMode};
use crate::losses::{LossError, LossMode};
use crate::model::{ModelConfig, ModelError};
use crate::numgrad::NumgradError;
use crate::patchio::{PatchIoError, PolicyKind};
use crate::pipeline::TrainSampling;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("cannot resume: {0}")]
    ResumeMismatch(String),
    #[error("optimizer: {0}")]
    Optimizer(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] PatchIoError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Numgrad(#[from] NumgradError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub phase: Phase,
    pub epochs: usize,
    /// Samples per optimizer step.
    pub batch_size: usize,
    /// Micro-batches per optimizer step; must divide `batch_size`.
    pub accum_steps: usize,
    /// Peak rate in pretraining, the constant rate when fine-tuning.
    pub peak_lr: f64,
    pub warmup_epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Global-norm clip; `0` disables.
    pub grad_clip: f64,
    pub t_train: usize,
    pub seed: u64,
    pub loss: LossMode,
    /// Fresh canvas and trajectory per sample each epoch; off pins them.
    pub resample_each_epoch: bool,
    /// Starting checkpoint, required for the fine-tuning phase.
    pub init_from: Option<PathBuf>,
    pub val_resolution: usize,
    pub val_t: usize,
    pub val_policy: PolicyKind,
    pub val_mode: ExecMode,
    pub sampling: TrainSampling,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let a = AdamWConfig::default();
        Self {
            phase: Phase::Pretrain,
            epochs: 10,
            batch_size: 32,
            accum_steps: 1,
            peak_lr: 1e-3,
            warmup_epochs: 1,
            beta1: a.beta1,
            beta2: a.beta2,
            eps: a.eps,
            weight_decay: a.weight_decay,
            grad_clip: 0.0,
            t_train: 256,
            seed: 0,
            loss: LossMode::Scheduled,
            resample_each_epoch: true,
            init_from: None,
            val_resolution: 32,
            val_t: 256,
            val_policy: PolicyKind::RandomImage,
            val_mode: ExecMode::Parallel,
            sampling: TrainSampling::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if self.epochs == 0 {
            return bad("epochs must be positive".into());
        }
        if self.warmup_epochs > self.epochs {
            return bad(format!("warmup {} exceeds epochs {}", self.warmup_epochs, self.epochs));
        }
        if !(self.peak_lr > 0.0 && self.peak_lr.is_finite()) {
            return bad(format!("learning rate must be positive, got {}", self.peak_lr));
        }
        if self.batch_size == 0 || self.accum_steps == 0 || self.batch_size % self.accum_steps != 0 {
            return bad(format!(
                "accum_steps {} must divide batch_size {}",
                self.accum_steps, self.batch_size
            ));
        }
        if self.t_train == 0 || self.val_t == 0 {
            return bad("sequence lengths must be positive".into());
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.eps <= 0.0 {
            return bad("betas must lie in [0, 1) and eps be positive".into());
        }
        if self.weight_decay < 0.0 || self.grad_clip < 0.0 {
            return bad("weight decay and clip must be non-negative".into());
        }
        if self.phase == Phase::Finetune && self.init_from.is_none() {
            return bad("the finetune phase needs `init_from`".into());
        }
        Ok(())
    }

    pub fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
        }
    }
}

/// `[model]` section: a preset plus optional overrides.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSection {
    pub preset: String,
    pub classes: Option<usize>,
    pub patch: Option<usize>,
    pub layers: Option<usize>,
    pub d_model: Option<usize>,
    pub d_state: Option<usize>,
    pub head_dim: Option<usize>,
    pub d_move_emb: Option<usize>,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            preset: "micro4".into(),
            classes: None,
            patch: None,
            layers: None,
            d_model: None,
            d_state: None,
            head_dim: None,
            d_move_emb: None,
        }
    }
}

impl ModelSection {
    pub fn resolve(&self) -> Result<ModelConfig, TrainError> {
        let mut c = ModelConfig::preset(&self.preset).ok_or_else(|| {
            TrainError::Config(format!(
                "unknown preset `{}` (known: {})",
                self.preset,
                ModelConfig::PRESETS.join(", ")
            ))
        })?;
        if let Some(v) = self.classes {
            c.classes = v;
        }
        if let Some(v) = self.patch {
            c.patch = v;
        }
        if let Some(v) = self.layers {
            c.backbone.layers = v;
        }
        if let Some(v) = self.d_model {
            c.backbone.d_model = v;
        }
        if let Some(v) = self.d_state {
            c.backbone.d_state = v;
        }
        if let Some(v) = self.head_dim {
            c.backbone.head_dim = v;
        }
        if let Some(v) = self.d_move_emb {
            c.d_move_emb = v;
        }
        c.validate()?;
        Ok(c)
    }
}

/// A whole run: `[model]`, `[data]` and `[train]` sections of one TOML file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub model: ModelSection,
    pub data: DataConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, TrainError> {
        toml::from_str(text).map_err(|e| TrainError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        let text = std::fs::read_to_string(path).map_err(|source| TrainError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String, TrainError> {
        toml::to_string(self).map_err(|e| TrainError::Config(e.to_string()))
    }
}
