//! Sinusoidal encoding of the relative move between consecutive glimpses.

use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

/// Width and frequency layout of the move embedding.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MoveEmbeddingConfig {
    /// Total width, `2 * d_axis`.
    pub d_move_emb: usize,
    pub freq_base: f64,
}

impl Default for MoveEmbeddingConfig {
    fn default() -> Self {
        Self {
            d_move_emb: 512,
            freq_base: 10_000.0,
        }
    }
}

#[derive(Debug, thiserror::Error)]
#[error("move embedding width {0} must be a positive multiple of 4")]
pub struct MoveEmbeddingError(pub usize);

impl MoveEmbeddingConfig {
    pub fn new(d_move_emb: usize) -> Result<Self, MoveEmbeddingError> {
        let cfg = Self {
            d_move_emb,
            ..Self::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), MoveEmbeddingError> {
        if self.d_move_emb == 0 || self.d_move_emb % 4 != 0 {
            return Err(MoveEmbeddingError(self.d_move_emb));
        }
        Ok(())
    }

    /// Per-axis width.
    pub fn d_axis(&self) -> usize {
        self.d_move_emb / 2
    }
}

/// Relative displacement between the top-left corners of consecutive patches.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Move {
    /// First glimpse of a trajectory; encodes to the zero vector.
    Initial,
    Delta { dx: i64, dy: i64 },
}

fn encode_axis<F: Scalar>(d: i64, cfg: &MoveEmbeddingConfig, out: &mut [F]) {
    let d_axis = cfg.d_axis();
    let d = d as f64;
    for (i, pair) in out.chunks_exact_mut(2).enumerate() {
        let freq = cfg.freq_base.powf((2 * i) as f64 / d_axis as f64);
        let angle = d / freq;
        pair[0] = F::lit(angle.sin());
        pair[1] = F::lit(angle.cos());
    }
}

/// Writes `concat(enc(dx), enc(dy))` into `out` (length `d_move_emb`).
///
/// `enc(d)[2i] = sin(d / base^(2i/d_axis))`, `enc(d)[2i+1] = cos(...)`.
pub fn encode_move_into<F: Scalar>(mv: Move, cfg: &MoveEmbeddingConfig, out: &mut [F]) {
    assert_eq!(out.len(), cfg.d_move_emb, "move embedding buffer width");
    match mv {
        Move::Initial => out.fill(F::zero()),
        Move::Delta { dx, dy } => {
            let (x, y) = out.split_at_mut(cfg.d_axis());
            encode_axis(dx, cfg, x);
            encode_axis(dy, cfg, y);
        }
    }
}

pub fn encode_move<F: Scalar>(mv: Move, cfg: &MoveEmbeddingConfig) -> Vec<F> {
    let mut out = vec![F::zero(); cfg.d_move_emb];
    encode_move_into(mv, cfg, &mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::HashSet;

    #[test]
    fn initial_move_is_zero_vector() {
        let cfg = MoveEmbeddingConfig::default();
        let m: Vec<f32> = encode_move(Move::Initial, &cfg);
        assert_eq!(m.len(), 512);
        assert!(m.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_delta_alternates_sin_cos() {
        let cfg = MoveEmbeddingConfig::new(32).unwrap();
        let m: Vec<f64> = encode_move(Move::Delta { dx: 0, dy: 0 }, &cfg);
        for (i, v) in m.iter().enumerate() {
            assert_eq!(*v, if i % 2 == 0 { 0.0 } else { 1.0 });
        }
    }

    #[test]
    fn parity_of_negated_delta() {
        let cfg = MoveEmbeddingConfig::default();
        let a: Vec<f64> = encode_move(Move::Delta { dx: 37, dy: -5 }, &cfg);
        let b: Vec<f64> = encode_move(Move::Delta { dx: -37, dy: 5 }, &cfg);
        for i in 0..a.len() {
            if i % 2 == 0 {
                assert_eq!(a[i], -b[i]);
            } else {
                assert_eq!(a[i], b[i]);
            }
        }
    }

    #[test]
    fn width_validation() {
        assert!(MoveEmbeddingConfig::new(30).is_err());
        assert!(MoveEmbeddingConfig::new(0).is_err());
        assert_eq!(MoveEmbeddingConfig::new(64).unwrap().d_axis(), 32);
    }

    #[test]
    fn small_deltas_are_injective() {
        let cfg = MoveEmbeddingConfig::new(32).unwrap();
        let mut seen = HashSet::new();
        for dx in -64..=64 {
            for dy in -64..=64 {
                let m: Vec<f64> = encode_move(Move::Delta { dx, dy }, &cfg);
                let key: Vec<u64> = m.iter().map(|v| v.to_bits()).collect();
                assert!(seen.insert(key), "collision at ({dx}, {dy})");
            }
        }
    }

    proptest! {
        #[test]
        fn bounded_by_one(dx in -100_000i64..100_000, dy in -100_000i64..100_000) {
            let m: Vec<f32> = encode_move(Move::Delta { dx, dy }, &MoveEmbeddingConfig::default());
            prop_assert!(m.iter().all(|v| v.abs() <= 1.0));
        }
    }
}
