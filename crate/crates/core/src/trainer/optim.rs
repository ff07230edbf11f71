use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::numgrad::Tensor;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    /// Linear warmup then cosine decay to zero.
    Pretrain,
    /// Constant learning rate, weights loaded from `init_from`.
    Finetune,
}

/// Learning-rate schedule over optimizer steps.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Schedule {
    pub phase: Phase,
    pub peak: f64,
    pub warmup_steps: u64,
    pub total_steps: u64,
}

/// Learning rate for optimizer step `step` (0-based).
pub fn lr_at(step: u64, s: &Schedule) -> f64 {
    if s.phase == Phase::Finetune {
        return s.peak;
    }
    if step < s.warmup_steps {
        return s.peak * step as f64 / s.warmup_steps as f64;
    }
    let last = s.total_steps.saturating_sub(1);
    if last <= s.warmup_steps {
        return s.peak;
    }
    let progress = ((step - s.warmup_steps) as f64 / (last - s.warmup_steps) as f64).min(1.0);
    s.peak * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.05,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepOutcome {
    Applied,
    /// Some gradient entry was NaN or infinite; nothing changed.
    SkippedNonFinite,
}

/// AdamW with decoupled weight decay on the tensors flagged in `decay`.
#[derive(Clone, Debug)]
pub struct AdamW<F: Scalar> {
    pub cfg: AdamWConfig,
    pub t: u64,
    pub m: Vec<Tensor<F>>,
    pub v: Vec<Tensor<F>>,
    pub decay: Vec<bool>,
}

impl<F: Scalar> AdamW<F> {
    pub fn new(cfg: AdamWConfig, params: &[Tensor<F>], decay: Vec<bool>) -> Self {
        assert_eq!(params.len(), decay.len(), "one decay flag per tensor");
        let zeros: Vec<Tensor<F>> = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        Self {
            cfg,
            t: 0,
            m: zeros.clone(),
            v: zeros,
            decay,
        }
    }

    /// Weight decay on matrices only; norms, biases and SSM vectors are exempt.
    pub fn for_params(cfg: AdamWConfig, params: &[Tensor<F>]) -> Self {
        let decay = params.iter().map(|p| p.rank() >= 2).collect();
        Self::new(cfg, params, decay)
    }

    pub fn step(&mut self, params: &mut [Tensor<F>], grads: &[Tensor<F>], lr: f64) -> Result<StepOutcome, TrainError> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(TrainError::Optimizer(format!(
                "{} params, {} grads, {} moments",
                params.len(),
                grads.len(),
                self.m.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || p.shape() != self.m[i].shape() {
                return Err(TrainError::Optimizer(format!(
                    "tensor {i}: param {:?}, grad {:?}, moment {:?}",
                    p.shape(),
                    g.shape(),
                    self.m[i].shape()
                )));
            }
        }
        if !grads.iter().all(Tensor::all_finite) {
            return Ok(StepOutcome::SkippedNonFinite);
        }
        self.t += 1;
        let c = &self.cfg;
        let (b1, b2) = (F::lit(c.beta1), F::lit(c.beta2));
        let one = F::one();
        let bc1 = F::lit(1.0 - c.beta1.powi(self.t as i32));
        let bc2 = F::lit(1.0 - c.beta2.powi(self.t as i32));
        let eps = F::lit(c.eps);
        let lr_f = F::lit(lr);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let shrink = if self.decay[i] {
                F::lit(1.0 - lr * c.weight_decay)
            } else {
                one
            };
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
                *mi = b1 * *mi + (one - b1) * gi;
                *vi = b2 * *vi + (one - b2) * gi * gi;
                let upd = (*mi / bc1) / ((*vi / bc2).sqrt() + eps);
                *w = *w * shrink - lr_f * upd;
            }
        }
        Ok(StepOutcome::Applied)
    }
}

/// Global L2 norm over all gradient tensors.
pub fn global_norm<F: Scalar>(grads: &[Tensor<F>]) -> f64 {
    grads
        .iter()
        .flat_map(|g| g.data())
        .map(|&v| {
            let v = v.to_f64().unwrap_or(f64::NAN);
            v * v
        })
        .sum::<f64>()
        .sqrt()
}

/// Rescales to `max_norm` when the global norm exceeds it; returns the pre-clip norm.
pub fn clip_global_norm<F: Scalar>(grads: &mut [Tensor<F>], max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm.is_finite() && norm > max_norm {
        let s = F::lit(max_norm / norm);
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}
