//! Image → canvas → glimpse sequence, for training and evaluation.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::patchio::{
    augment, make_canvas, AugmentConfig, Canvas, CanvasMode, GlimpseStep, Image, PatchIoError, PolicyKind, ScanPolicy,
    Trajectory,
};
use crate::seed;

/// How training sequences are drawn.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSampling {
    pub policy: PolicyKind,
    /// Square training canvas side range; the image is pasted unresized.
    pub canvas_min: usize,
    pub canvas_max: usize,
    /// Long-side rescale range applied before pasting; `0` disables.
    pub resize_min: usize,
    pub resize_max: usize,
    pub augment: AugmentConfig,
}

impl Default for TrainSampling {
    fn default() -> Self {
        Self {
            policy: PolicyKind::RandomMixed,
            canvas_min: 32,
            canvas_max: 48,
            resize_min: 0,
            resize_max: 0,
            augment: AugmentConfig::default(),
        }
    }
}

fn rescale_long_side(image: &Image, side: usize) -> Image {
    let long = image.height.max(image.width);
    if side == long {
        return image.clone();
    }
    let scale = |s: usize| ((s * side) as f64 / long as f64).round().max(1.0) as usize;
    image.resize(scale(image.height), scale(image.width))
}

/// Canvas for one training sample; every random choice derives from `sample_seed`.
pub fn train_canvas(image: &Image, cfg: &TrainSampling, sample_seed: u64) -> Result<Canvas, PatchIoError> {
    let img = augment(image, &cfg.augment, seed::derive(sample_seed, &[seed::stream::AUGMENT]));
    let img = if cfg.resize_max > 0 {
        if cfg.resize_min == 0 || cfg.resize_min > cfg.resize_max {
            return Err(PatchIoError::InvalidConfig(format!(
                "resize range {}..={} is empty",
                cfg.resize_min, cfg.resize_max
            )));
        }
        let mut rng = seed::rng(sample_seed, &[seed::stream::CANVAS, 1]);
        rescale_long_side(&img, rng.random_range(cfg.resize_min..=cfg.resize_max))
    } else {
        img
    };
    make_canvas(
        &img,
        CanvasMode::Train {
            min_side: cfg.canvas_min,
            max_side: cfg.canvas_max,
            seed: seed::derive(sample_seed, &[seed::stream::CANVAS]),
        },
    )
}

pub fn train_glimpses(
    image: &Image,
    cfg: &TrainSampling,
    patch: usize,
    steps: usize,
    sample_seed: u64,
) -> Result<Vec<GlimpseStep>, PatchIoError> {
    let canvas = train_canvas(image, cfg, sample_seed)?;
    let policy = ScanPolicy::new(cfg.policy, seed::derive(sample_seed, &[seed::stream::TRAJECTORY]));
    Ok(Trajectory::new(&canvas, policy, steps, patch)?.collect())
}

pub fn eval_canvas(image: &Image, resolution: usize) -> Result<Canvas, PatchIoError> {
    make_canvas(image, CanvasMode::Eval { target_side: resolution })
}

/// Per-sample seed for evaluation run `seed`.
pub fn eval_sample_seed(seed_value: u64, index: usize) -> u64 {
    seed::derive(seed_value, &[seed::stream::EVAL, index as u64])
}
