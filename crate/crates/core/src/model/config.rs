use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::movemb::MoveEmbeddingConfig;
use crate::ssm::BackboneConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub name: String,
    /// Patch side `P`.
    pub patch: usize,
    pub channels: usize,
    pub classes: usize,
    pub d_move_emb: usize,
    #[serde(default = "default_freq_base")]
    pub freq_base: f64,
    pub backbone: BackboneConfig,
}

fn default_freq_base() -> f64 {
    10000.0
}

impl ModelConfig {
    fn paper(name: &str, layers: usize) -> Self {
        Self {
            name: name.into(),
            patch: 16,
            channels: 3,
            classes: 1000,
            d_move_emb: 512,
            freq_base: default_freq_base(),
            backbone: BackboneConfig {
                layers,
                d_model: 256,
                ..BackboneConfig::default()
            },
        }
    }

    pub fn tiny() -> Self {
        Self::paper("tiny", 12)
    }

    pub fn small() -> Self {
        Self::paper("small", 24)
    }

    pub fn base() -> Self {
        Self::paper("base", 48)
    }

    pub fn micro2() -> Self {
        Self {
            name: "micro2".into(),
            patch: 4,
            channels: 3,
            classes: 10,
            d_move_emb: 32,
            freq_base: default_freq_base(),
            backbone: BackboneConfig {
                layers: 2,
                d_model: 64,
                ..BackboneConfig::default()
            },
        }
    }

    pub fn micro4() -> Self {
        Self {
            name: "micro4".into(),
            patch: 8,
            channels: 3,
            classes: 10,
            d_move_emb: 64,
            freq_base: default_freq_base(),
            backbone: BackboneConfig {
                layers: 4,
                d_model: 128,
                ..BackboneConfig::default()
            },
        }
    }

    pub const PRESETS: [&'static str; 5] = ["tiny", "small", "base", "micro2", "micro4"];

    pub fn preset(name: &str) -> Option<Self> {
        match name.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "tiny" | "t" => Some(Self::tiny()),
            "small" | "s" => Some(Self::small()),
            "base" | "b" => Some(Self::base()),
            "micro2" => Some(Self::micro2()),
            "micro4" => Some(Self::micro4()),
            _ => None,
        }
    }

    pub fn d_model(&self) -> usize {
        self.backbone.d_model
    }

    pub fn layers(&self) -> usize {
        self.backbone.layers
    }

    pub fn d_image(&self) -> usize {
        self.channels * self.patch * self.patch
    }

    pub fn d_input(&self) -> usize {
        self.d_image() + self.d_move_emb
    }

    pub fn move_cfg(&self) -> MoveEmbeddingConfig {
        MoveEmbeddingConfig {
            d_move_emb: self.d_move_emb,
            freq_base: self.freq_base,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::InvalidConfig(m));
        if self.patch == 0 || self.channels == 0 {
            return bad("patch size and channels must be positive".into());
        }
        if self.classes < 2 {
            return bad(format!("need at least 2 classes, got {}", self.classes));
        }
        self.move_cfg()
            .validate()
            .map_err(|e| ModelError::InvalidConfig(e.to_string()))?;
        self.backbone.validate()?;
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        let (d, di, n) = (self.d_model(), self.d_input(), self.classes);
        di * d + d + self.layers() * self.backbone.block_params() + d + d * n + n
    }

    /// Closed-form forward cost of one step (multiply and add counted separately).
    pub fn step_flops(&self) -> u64 {
        let (d, di, n) = (self.d_model() as u64, self.d_input() as u64, self.classes as u64);
        let proj = 2 * di * d + d + 8 * d;
        let head = 4 * d + 2 * d * n + n;
        proj + self.layers() as u64 * self.backbone.block_step_flops() + head
    }

    /// Forward cost of a `t`-step sequence; identical in both execution modes.
    pub fn count_flops(&self, t: usize) -> Result<u64, ModelError> {
        if t == 0 {
            return Err(ModelError::InvalidConfig("sequence length must be at least 1".into()));
        }
        Ok(self.step_flops() * t as u64)
    }
}
