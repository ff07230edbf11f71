//! Gated selective state-space block with a parallel (whole sequence) and a
//! recurrent (one step) execution path.

mod block;
pub mod scan;

use serde::{Deserialize, Serialize};

pub(crate) use block::block_shapes;
pub use block::{init_block, BlockLayout, LayerState, SelectiveScanOp};

use crate::numgrad::NumgradError;

#[derive(Debug, thiserror::Error)]
pub enum SsmError {
    #[error("non-finite activation after layer {layer}")]
    NonFinite { layer: usize },
    #[error("state mismatch: expected {expected}, got {got}")]
    StateMismatch { expected: String, got: String },
    #[error("invalid backbone config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Numgrad(#[from] NumgradError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackboneConfig {
    pub layers: usize,
    pub d_model: usize,
    pub expand: usize,
    pub d_state: usize,
    pub head_dim: usize,
    pub d_conv: usize,
    /// Time steps per chunk of the parallel scan.
    pub chunk: usize,
    pub norm_eps: f64,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            layers: 12,
            d_model: 256,
            expand: 2,
            d_state: 64,
            head_dim: 64,
            d_conv: 4,
            chunk: 64,
            norm_eps: 1e-5,
        }
    }
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<(), SsmError> {
        let bad = |m: String| Err(SsmError::InvalidConfig(m));
        if self.layers == 0 {
            return bad("layers must be >= 1".into());
        }
        if self.d_model == 0 || self.expand == 0 || self.d_state == 0 || self.d_conv == 0 || self.chunk == 0 {
            return bad("dimensions must be positive".into());
        }
        if self.head_dim == 0 || self.d_inner() % self.head_dim != 0 {
            return bad(format!("d_inner {} not divisible by head_dim {}", self.d_inner(), self.head_dim));
        }
        if !(self.norm_eps > 0.0) {
            return bad("norm_eps must be positive".into());
        }
        Ok(())
    }

    pub fn d_inner(&self) -> usize {
        self.expand * self.d_model
    }

    pub fn heads(&self) -> usize {
        self.d_inner() / self.head_dim
    }

    /// Width of the convolved stream: x, B and C.
    pub fn conv_dim(&self) -> usize {
        self.d_inner() + 2 * self.d_state
    }

    /// Output width of the input projection: gate, x, B, C and dt.
    pub fn d_in_proj(&self) -> usize {
        2 * self.d_inner() + 2 * self.d_state + self.heads()
    }

    pub fn scan_shape(&self, steps: usize) -> scan::ScanShape {
        scan::ScanShape {
            steps,
            heads: self.heads(),
            head_dim: self.head_dim,
            d_state: self.d_state,
        }
    }

    pub fn block_params(&self) -> usize {
        let (d, di) = (self.d_model, self.d_inner());
        d + d * self.d_in_proj() + (self.d_conv + 1) * self.conv_dim() + 3 * self.heads() + di + di * d
    }

    /// Forward cost of one block for one time step.
    pub fn block_step_flops(&self) -> u64 {
        let (d, di, h) = (self.d_model as u64, self.d_inner() as u64, self.heads() as u64);
        let conv = self.conv_dim() as u64;
        let norm = 4 * d + 4 * di;
        let proj = 2 * d * self.d_in_proj() as u64 + 2 * di * d;
        let conv_cost = 2 * self.d_conv as u64 * conv + 4 * conv;
        let dt = 6 * h;
        let scan = scan::step_flops(&self.scan_shape(1)) + 2 * di;
        let gate = 5 * di;
        norm + proj + conv_cost + dt + scan + gate + d
    }
}
