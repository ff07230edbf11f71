//! Coverage-scheduled cross-entropy and the plain per-step baseline.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::numgrad::{log_sum_exp, NumgradError, Tape, Tensor, Var};
use crate::scalar::Scalar;

#[derive(Debug, thiserror::Error)]
pub enum LossError {
    #[error("ratio {0} outside [0, 1]")]
    RatioOutOfRange(f64),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("need at least 2 classes, got {0}")]
    TooFewClasses(usize),
    #[error("logits are {rows}x{cols} but {ratios} ratios / {classes} classes were given")]
    Shape {
        rows: usize,
        cols: usize,
        ratios: usize,
        classes: usize,
    },
    #[error("non-finite logit at step {0}")]
    NonFinite(usize),
    #[error("unknown loss mode `{0}`")]
    UnknownMode(String),
    #[error(transparent)]
    Numgrad(#[from] NumgradError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossMode {
    /// Target interpolates uniform → one-hot with the step's coverage ratio.
    Scheduled,
    /// One-hot target at every step.
    StandardCe,
}

impl LossMode {
    pub fn as_str(self) -> &'static str {
        match self {
            LossMode::Scheduled => "scheduled",
            LossMode::StandardCe => "standard-ce",
        }
    }
}

impl fmt::Display for LossMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LossMode {
    type Err = LossError;

    fn from_str(s: &str) -> Result<Self, LossError> {
        match s {
            "scheduled" => Ok(LossMode::Scheduled),
            "standard-ce" | "standard" | "ce" => Ok(LossMode::StandardCe),
            other => Err(LossError::UnknownMode(other.into())),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LossConfig {
    pub mode: LossMode,
    pub classes: usize,
}

impl LossConfig {
    pub fn new(mode: LossMode, classes: usize) -> Result<Self, LossError> {
        if classes < 2 {
            return Err(LossError::TooFewClasses(classes));
        }
        Ok(Self { mode, classes })
    }
}

fn check_label(label: usize, classes: usize) -> Result<(), LossError> {
    if classes < 2 {
        return Err(LossError::TooFewClasses(classes));
    }
    if label >= classes {
        return Err(LossError::LabelOutOfRange { label, classes });
    }
    Ok(())
}

/// `(1 - r) / N + r * onehot(k)`.
pub fn scheduled_target<F: Scalar>(r: f64, label: usize, classes: usize) -> Result<Vec<F>, LossError> {
    check_label(label, classes)?;
    if !(0.0..=1.0).contains(&r) {
        return Err(LossError::RatioOutOfRange(r));
    }
    let r = F::lit(r);
    let base = (F::one() - r) / F::from_usize(classes).unwrap();
    let mut p = vec![base; classes];
    p[label] += r;
    Ok(p)
}

/// `[T, N]` per-step targets for `mode`.
pub fn target_matrix<F: Scalar>(ratios: &[f64], label: usize, cfg: &LossConfig) -> Result<Tensor<F>, LossError> {
    check_label(label, cfg.classes)?;
    let mut data = Vec::with_capacity(ratios.len() * cfg.classes);
    for &r in ratios {
        match cfg.mode {
            LossMode::Scheduled => data.extend(scheduled_target::<F>(r, label, cfg.classes)?),
            LossMode::StandardCe => data.extend((0..cfg.classes).map(|i| if i == label { F::one() } else { F::zero() })),
        }
    }
    Ok(Tensor::new(vec![ratios.len(), cfg.classes], data)?)
}

fn check_logits<F: Scalar>(logits: &Tensor<F>, ratios: &[f64], cfg: &LossConfig) -> Result<(), LossError> {
    let (rows, cols) = logits.dims2()?;
    if rows != ratios.len() || cols != cfg.classes || rows == 0 {
        return Err(LossError::Shape {
            rows,
            cols,
            ratios: ratios.len(),
            classes: cfg.classes,
        });
    }
    if let Some(i) = logits.data().iter().position(|v| !v.is_finite()) {
        return Err(LossError::NonFinite(i / cols));
    }
    Ok(())
}

/// Cross-entropy of one logit row against the step's target (value only).
pub fn row_loss<F: Scalar>(row: &[F], r: f64, label: usize, cfg: &LossConfig) -> Result<F, LossError> {
    check_label(label, cfg.classes)?;
    let lse = log_sum_exp(row);
    match cfg.mode {
        LossMode::StandardCe => Ok(lse - row[label]),
        LossMode::Scheduled => {
            let p = scheduled_target::<F>(r, label, cfg.classes)?;
            let mut ce = F::zero();
            for (&y, &pv) in row.iter().zip(&p) {
                ce += -(pv * (y - lse));
            }
            Ok(ce)
        }
    }
}

/// Mean over steps of the per-step cross-entropy (value only).
pub fn sequence_loss<F: Scalar>(logits: &Tensor<F>, ratios: &[f64], label: usize, cfg: &LossConfig) -> Result<F, LossError> {
    check_logits(logits, ratios, cfg)?;
    let mut total = F::zero();
    for (row, &r) in logits.data().chunks_exact(cfg.classes).zip(ratios) {
        total += row_loss(row, r, label, cfg)?;
    }
    Ok(total / F::from_usize(ratios.len()).unwrap())
}

/// Differentiable version of [`sequence_loss`].
pub fn sequence_loss_tape<F: Scalar>(
    tape: &mut Tape<F>,
    logits: Var,
    ratios: &[f64],
    label: usize,
    cfg: &LossConfig,
) -> Result<Var, LossError> {
    check_logits(tape.value(logits), ratios, cfg)?;
    let targets = target_matrix(ratios, label, cfg)?;
    Ok(tape.soft_cross_entropy(logits, targets)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg(mode: LossMode, n: usize) -> LossConfig {
        LossConfig::new(mode, n).unwrap()
    }

    /// Independent scalar evaluation of the mean scheduled cross-entropy.
    fn oracle(y: &[Vec<f64>], r: &[f64], k: usize) -> f64 {
        let n = y[0].len() as f64;
        let mut total = 0.0;
        for (row, &rt) in y.iter().zip(r) {
            let z: f64 = row.iter().map(|v| v.exp()).sum();
            for (i, &v) in row.iter().enumerate() {
                let p = (1.0 - rt) / n + if i == k { rt } else { 0.0 };
                total -= p * (v.exp() / z).ln();
            }
        }
        total / y.len() as f64
    }

    #[test]
    fn target_endpoints_and_midpoint() {
        assert_eq!(scheduled_target::<f64>(0.0, 1, 4).unwrap(), vec![0.25; 4]);
        assert_eq!(scheduled_target::<f64>(1.0, 1, 4).unwrap(), vec![0.0, 1.0, 0.0, 0.0]);
        assert_eq!(scheduled_target::<f64>(0.5, 2, 4).unwrap(), vec![0.125, 0.125, 0.625, 0.125]);
        assert!(matches!(scheduled_target::<f64>(1.5, 0, 4), Err(LossError::RatioOutOfRange(_))));
        assert!(matches!(scheduled_target::<f64>(-0.1, 0, 4), Err(LossError::RatioOutOfRange(_))));
        assert!(scheduled_target::<f64>(0.5, 4, 4).is_err());
    }

    #[test]
    fn zero_logits_give_log_n() {
        for mode in [LossMode::Scheduled, LossMode::StandardCe] {
            let y = Tensor::<f64>::zeros(&[3, 7]);
            let l = sequence_loss(&y, &[0.0, 0.3, 1.0], 2, &cfg(mode, 7)).unwrap();
            assert!((l - 7f64.ln()).abs() <= 1e-12);
        }
    }

    #[test]
    fn two_step_example_against_oracle() {
        let l3 = 3f64.ln();
        let y = Tensor::new(vec![2, 2], vec![l3, 0.0, l3, 0.0]).unwrap();
        let got = sequence_loss(&y, &[0.0, 1.0], 0, &cfg(LossMode::Scheduled, 2)).unwrap();
        let want = oracle(&[vec![l3, 0.0], vec![l3, 0.0]], &[0.0, 1.0], 0);
        assert!((got - want).abs() <= 1e-12);
        // ln 4 - 0.75 ln 3
        assert!((got - 0.562335).abs() <= 1e-6, "{got}");
    }

    #[test]
    fn non_finite_logits_rejected() {
        let y = Tensor::new(vec![2, 2], vec![0.0f32, 1.0, f32::NAN, 0.0]).unwrap();
        assert!(matches!(
            sequence_loss(&y, &[0.1, 0.2], 0, &cfg(LossMode::Scheduled, 2)),
            Err(LossError::NonFinite(1))
        ));
    }

    #[test]
    fn tape_loss_matches_value_path_and_grad() {
        let y = Tensor::new(vec![3, 3], vec![0.2, -1.0, 0.5, 1.0, 0.0, -0.3, 0.1, 0.1, 2.0]).unwrap();
        let ratios = [0.1, 0.5, 0.9];
        let c = cfg(LossMode::Scheduled, 3);
        let mut tape = Tape::<f64>::new();
        let v = tape.leaf(y.clone());
        let l = sequence_loss_tape(&mut tape, v, &ratios, 1, &c).unwrap();
        let want = sequence_loss(&y, &ratios, 1, &c).unwrap();
        assert!((tape.value(l).item() - want).abs() <= 1e-14);
        let g = tape.backward(l).unwrap().get(v);
        // d/dy = (softmax - p) / T
        for t in 0..3 {
            let row = y.row(t);
            let z: f64 = row.iter().map(|v| v.exp()).sum();
            let p = scheduled_target::<f64>(ratios[t], 1, 3).unwrap();
            for i in 0..3 {
                let want = (row[i].exp() / z - p[i]) / 3.0;
                assert!((g.data()[t * 3 + i] - want).abs() <= 1e-14);
            }
        }
    }

    proptest! {
        #[test]
        fn unit_ratio_equals_standard_bitwise(vals in prop::collection::vec(-20.0f32..20.0, 12), k in 0usize..4) {
            let y = Tensor::new(vec![3, 4], vals).unwrap();
            let a = sequence_loss(&y, &[1.0; 3], k, &cfg(LossMode::Scheduled, 4)).unwrap();
            let b = sequence_loss(&y, &[1.0; 3], k, &cfg(LossMode::StandardCe, 4)).unwrap();
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }

        #[test]
        fn target_sums_to_one(r in 0.0f64..=1.0, k in 0usize..9) {
            let p = scheduled_target::<f64>(r, k, 9).unwrap();
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            prop_assert!(p.iter().all(|&v| v >= 0.0));
        }

        #[test]
        fn relabeling_classes_leaves_loss_unchanged(
            vals in prop::collection::vec(-5.0f64..5.0, 10),
            r in prop::collection::vec(0.0f64..=1.0, 2),
            k in 0usize..5,
            shift in 1usize..5,
        ) {
            let y = Tensor::new(vec![2, 5], vals.clone()).unwrap();
            let perm = |i: usize| (i + shift) % 5;
            let mut permuted = vec![0.0; 10];
            for t in 0..2 {
                for i in 0..5 {
                    permuted[t * 5 + perm(i)] = vals[t * 5 + i];
                }
            }
            let yp = Tensor::new(vec![2, 5], permuted).unwrap();
            let c = cfg(LossMode::Scheduled, 5);
            let a = sequence_loss(&y, &r, k, &c).unwrap();
            let b = sequence_loss(&yp, &r, perm(k), &c).unwrap();
            prop_assert!((a - b).abs() <= 1e-12);
        }

        #[test]
        fn loss_nonincreasing_in_ratio_for_confident_logits(scale in 0.1f64..10.0, r1 in 0.0f64..=1.0, r2 in 0.0f64..=1.0) {
            let (lo, hi) = if r1 <= r2 { (r1, r2) } else { (r2, r1) };
            let y = Tensor::new(vec![1, 4], vec![0.0, scale, 0.0, 0.0]).unwrap();
            let c = cfg(LossMode::Scheduled, 4);
            let a = sequence_loss(&y, &[lo], 1, &c).unwrap();
            let b = sequence_loss(&y, &[hi], 1, &c).unwrap();
            prop_assert!(b <= a + 1e-12);
        }
    }
}
