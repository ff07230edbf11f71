//! Projection, backbone and classification head assembled into the full
//! glimpse classifier.

mod checkpoint;
mod config;

use std::mem::size_of;
use std::path::PathBuf;

pub use checkpoint::{read_blob, write_blob, Checkpoint, CheckpointManifest, TensorEntry, FORMAT_VERSION};
pub(crate) use checkpoint::{read_tensors, read_toml, write_tensors, write_toml};
pub use config::ModelConfig;

use crate::movemb::{encode_move_into, Move};
use crate::numgrad::{gelu, rms_normalize, NumgradError, Tape, Tensor, Var};
use crate::params::{trunc_normal, ParamStore};
use crate::patchio::GlimpseStep;
use crate::scalar::Scalar;
use crate::seed;
use crate::ssm::{init_block, BlockLayout, LayerState, SsmError};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("glimpse {t}: patch length {got}, expected {expected}")]
    GlimpseLength { t: usize, expected: usize, got: usize },
    #[error("empty glimpse sequence")]
    EmptySequence,
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("checkpoint {path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Ssm(#[from] SsmError),
    #[error(transparent)]
    Numgrad(#[from] NumgradError),
}

/// Parameter indices of the whole model.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelLayout {
    pub proj_w: usize,
    pub proj_b: usize,
    pub blocks: Vec<BlockLayout>,
    pub final_norm: usize,
    pub head_w: usize,
    pub head_b: usize,
}

/// Per-step logits of one sequence.
#[derive(Clone, Debug)]
pub struct PredictionTrace<F: Scalar> {
    /// `[T, N]`.
    pub logits: Tensor<F>,
    pub ratios: Vec<f64>,
}

/// Recurrent-mode state for all layers.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelState<F> {
    pub layers: Vec<LayerState<F>>,
    pub steps: u64,
}

impl<F: Scalar> ModelState<F> {
    pub fn byte_size(&self) -> usize {
        self.layers.iter().map(LayerState::byte_size).sum::<usize>() + size_of::<u64>()
    }
}

#[derive(Clone, Debug)]
pub struct Model<F: Scalar> {
    pub config: ModelConfig,
    pub params: ParamStore<F>,
    pub layout: ModelLayout,
}

/// Expected `(name, shape)` list in storage order.
pub fn param_shapes(cfg: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let (d, n) = (cfg.d_model(), cfg.classes);
    let mut out = vec![
        ("proj.weight".to_string(), vec![cfg.d_input(), d]),
        ("proj.bias".to_string(), vec![d]),
    ];
    for l in 0..cfg.layers() {
        for (name, shape) in crate::ssm::block_shapes(&cfg.backbone) {
            out.push((format!("layers.{l}.{name}"), shape));
        }
    }
    out.push(("final_norm.weight".into(), vec![d]));
    out.push(("head.weight".into(), vec![d, n]));
    out.push(("head.bias".into(), vec![n]));
    out
}

impl<F: Scalar> Model<F> {
    pub fn init(config: ModelConfig, seed_value: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = seed::rng(seed_value, &[seed::stream::INIT]);
        let (d, n) = (config.d_model(), config.classes);
        let mut params = ParamStore::new();
        let proj_w = params.push("proj.weight", trunc_normal(&[config.d_input(), d], 0.02, &mut rng));
        let proj_b = params.push("proj.bias", Tensor::zeros(&[d]));
        let blocks = (0..config.layers())
            .map(|l| init_block(&mut params, &format!("layers.{l}"), &config.backbone, &mut rng))
            .collect();
        let final_norm = params.push("final_norm.weight", Tensor::full(&[d], F::one()));
        let head_w = params.push("head.weight", trunc_normal(&[d, n], 0.02, &mut rng));
        let head_b = params.push("head.bias", Tensor::zeros(&[n]));
        Ok(Self {
            config,
            params,
            layout: ModelLayout {
                proj_w,
                proj_b,
                blocks,
                final_norm,
                head_w,
                head_b,
            },
        })
    }

    /// Adopts `params` after checking every name and shape against `config`.
    pub fn from_params(config: ModelConfig, params: ParamStore<F>) -> Result<Self, ModelError> {
        config.validate()?;
        let want = param_shapes(&config);
        if want.len() != params.len() {
            return Err(ModelError::InvalidConfig(format!(
                "expected {} parameter tensors, got {}",
                want.len(),
                params.len()
            )));
        }
        for (i, (name, shape)) in want.iter().enumerate() {
            if params.name(i) != name || params.get(i).shape() != shape.as_slice() {
                return Err(ModelError::InvalidConfig(format!(
                    "parameter {i}: expected {name} {shape:?}, got {} {:?}",
                    params.name(i),
                    params.get(i).shape()
                )));
            }
        }
        // storage order is fixed, so indices follow from the block width
        let per_block = 9;
        let blocks = (0..config.layers())
            .map(|l| {
                let b = 2 + l * per_block;
                BlockLayout {
                    norm: b,
                    in_proj: b + 1,
                    conv_w: b + 2,
                    conv_b: b + 3,
                    dt_bias: b + 4,
                    a_log: b + 5,
                    d_skip: b + 6,
                    inner_norm: b + 7,
                    out_proj: b + 8,
                }
            })
            .collect();
        let tail = 2 + config.layers() * per_block;
        Ok(Self {
            config,
            params,
            layout: ModelLayout {
                proj_w: 0,
                proj_b: 1,
                blocks,
                final_norm: tail,
                head_w: tail + 1,
                head_b: tail + 2,
            },
        })
    }

    pub fn cast<G: Scalar>(&self) -> Model<G> {
        Model {
            config: self.config.clone(),
            params: self.params.cast(),
            layout: self.layout.clone(),
        }
    }

    /// Writes `concat(patch, move embedding)` for one glimpse into `out`.
    pub fn input_row(&self, t: usize, patch: &[f32], mv: Move, out: &mut [F]) -> Result<(), ModelError> {
        let di = self.config.d_image();
        if patch.len() != di {
            return Err(ModelError::GlimpseLength {
                t,
                expected: di,
                got: patch.len(),
            });
        }
        for (o, &v) in out[..di].iter_mut().zip(patch) {
            *o = F::lit(v as f64);
        }
        encode_move_into(mv, &self.config.move_cfg(), &mut out[di..]);
        Ok(())
    }

    /// `[T, d_input]` input matrix of a glimpse sequence.
    pub fn build_inputs(&self, glimpses: &[GlimpseStep]) -> Result<Tensor<F>, ModelError> {
        if glimpses.is_empty() {
            return Err(ModelError::EmptySequence);
        }
        let w = self.config.d_input();
        let mut data = vec![F::zero(); glimpses.len() * w];
        for (t, (g, row)) in glimpses.iter().zip(data.chunks_exact_mut(w)).enumerate() {
            self.input_row(t, &g.patch, g.movement, row)?;
        }
        Ok(Tensor::new(vec![glimpses.len(), w], data)?)
    }

    /// Records the parallel-mode forward pass; returns `[T, N]` logits.
    pub fn forward_tape(&self, tape: &mut Tape<F>, vars: &[Var], inputs: Var) -> Result<Var, ModelError> {
        let l = &self.layout;
        let z = tape.matmul(inputs, vars[l.proj_w])?;
        let z = tape.add_row_bias(z, vars[l.proj_b])?;
        let mut z = tape.gelu(z);
        for (i, block) in l.blocks.iter().enumerate() {
            z = block.forward_parallel(tape, vars, &self.config.backbone, z, i)?;
        }
        let z = tape.rms_norm(z, vars[l.final_norm], F::lit(self.config.backbone.norm_eps))?;
        let y = tape.matmul(z, vars[l.head_w])?;
        Ok(tape.add_row_bias(y, vars[l.head_b])?)
    }

    /// Parallel mode over a whole sequence, without gradients.
    pub fn forward_sequence(&self, glimpses: &[GlimpseStep]) -> Result<PredictionTrace<F>, ModelError> {
        let inputs = self.build_inputs(glimpses)?;
        let logits = self.forward_inputs(inputs)?;
        Ok(PredictionTrace {
            logits,
            ratios: glimpses.iter().map(|g| g.ratio).collect(),
        })
    }

    pub fn forward_inputs(&self, inputs: Tensor<F>) -> Result<Tensor<F>, ModelError> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = self.params.tensors().iter().map(|t| tape.constant(t.clone())).collect();
        let x = tape.constant(inputs);
        let y = self.forward_tape(&mut tape, &vars, x)?;
        Ok(tape.value(y).clone())
    }

    pub fn init_state(&self) -> ModelState<F> {
        ModelState {
            layers: (0..self.config.layers())
                .map(|_| LayerState::zeros(&self.config.backbone))
                .collect(),
            steps: 0,
        }
    }

    /// Recurrent mode: consumes one glimpse and returns its logits.
    pub fn step(&self, patch: &[f32], mv: Move, state: &mut ModelState<F>) -> Result<Vec<F>, ModelError> {
        let cfg = &self.config;
        if state.layers.len() != cfg.layers() {
            return Err(SsmError::StateMismatch {
                expected: format!("{} layers", cfg.layers()),
                got: format!("{} layers", state.layers.len()),
            }
            .into());
        }
        let (din, d, n) = (cfg.d_input(), cfg.d_model(), cfg.classes);
        let l = &self.layout;
        let pd = |i: usize| self.params.get(i).data();
        let mut x = vec![F::zero(); din];
        self.input_row(state.steps as usize, patch, mv, &mut x)?;
        let mut z = pd(l.proj_b).to_vec();
        F::gemm(1, din, d, F::one(), &x, din, 1, pd(l.proj_w), d, 1, F::one(), &mut z, d, 1);
        for v in &mut z {
            *v = gelu(*v);
        }
        for (i, (block, st)) in l.blocks.iter().zip(&mut state.layers).enumerate() {
            z = block.step(&self.params, &cfg.backbone, &z, st, i)?;
        }
        let mut zn = vec![F::zero(); d];
        rms_normalize(&z, pd(l.final_norm), F::lit(cfg.backbone.norm_eps), &mut zn);
        let mut y = pd(l.head_b).to_vec();
        F::gemm(1, d, n, F::one(), &zn, d, 1, pd(l.head_w), n, 1, F::one(), &mut y, n, 1);
        state.steps += 1;
        Ok(y)
    }

    pub fn step_glimpse(&self, g: &GlimpseStep, state: &mut ModelState<F>) -> Result<Vec<F>, ModelError> {
        self.step(&g.patch, g.movement, state)
    }
}

/// Index of the largest logit; ties go to the lowest index.
pub fn argmax<F: Scalar>(row: &[F]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests;
