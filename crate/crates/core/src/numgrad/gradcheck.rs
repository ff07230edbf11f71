//! Central finite-difference oracle for tape gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::scalar::Scalar;

use super::{NumgradError, Tape, Tensor, Var};

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// `max |analytic - numeric| / max(|analytic|, |numeric|, 1e-6)` over checked
    /// coordinates; the floor keeps FD roundoff on near-zero gradients from
    /// dominating.
    pub max_rel_error: f64,
    pub checked: usize,
    /// `(param index, flat offset)` of the worst coordinate.
    pub worst: Option<(usize, usize)>,
    /// `(analytic, numeric)` at `worst`.
    pub worst_values: Option<(f64, f64)>,
}

fn eval<F, L>(params: &[Tensor<F>], loss: &L) -> Result<F, NumgradError>
where
    F: Scalar,
    L: Fn(&mut Tape<F>, &[Var]) -> Result<Var, NumgradError>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p.clone())).collect();
    let out = loss(&mut tape, &vars)?;
    let v = tape.value(out);
    if v.numel() != 1 {
        return Err(NumgradError::NonScalarLoss(v.shape().to_vec()));
    }
    Ok(v.item())
}

/// Compares tape gradients of `loss` against central differences.
///
/// At most `max_coords` coordinates are drawn uniformly (without replacement)
/// across all parameters using `seed`; fewer parameters means all are checked.
pub fn fd_gradient_check<F, L>(
    params: &[Tensor<F>],
    loss: L,
    eps: F,
    max_coords: usize,
    seed: u64,
) -> Result<GradCheckReport, NumgradError>
where
    F: Scalar,
    L: Fn(&mut Tape<F>, &[Var]) -> Result<Var, NumgradError>,
{
    if !(eps > F::zero()) {
        return Err(NumgradError::InvalidArgument("fd step must be positive".into()));
    }

    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p.clone())).collect();
    let out = loss(&mut tape, &vars)?;
    let base = tape.value(out).item();
    let grads = tape.backward(out)?;
    let analytic: Vec<Tensor<F>> = vars.iter().map(|&v| grads.get(v)).collect();

    let again = eval(params, &loss)?;
    if base != again && !(base.is_nan() && again.is_nan()) {
        return Err(NumgradError::NonDeterministic {
            first: base.as_f64(),
            second: again.as_f64(),
        });
    }

    let total: usize = params.iter().map(Tensor::numel).sum();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks: Vec<usize> = if total <= max_coords {
        (0..total).collect()
    } else {
        let mut v = sample(&mut rng, total, max_coords).into_vec();
        v.sort_unstable();
        v
    };

    let mut perturbed: Vec<Tensor<F>> = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        worst: None,
        worst_values: None,
    };
    for flat in picks {
        let (pi, off) = locate(params, flat);
        let orig = perturbed[pi].data()[off];
        perturbed[pi].data_mut()[off] = orig + eps;
        let plus = eval(&perturbed, &loss)?;
        perturbed[pi].data_mut()[off] = orig - eps;
        let minus = eval(&perturbed, &loss)?;
        perturbed[pi].data_mut()[off] = orig;

        let numeric = (plus - minus).as_f64() / (2.0 * eps.as_f64());
        let exact = analytic[pi].data()[off].as_f64();
        let rel = (exact - numeric).abs() / exact.abs().max(numeric.abs()).max(1e-6);
        report.checked += 1;
        if rel > report.max_rel_error || report.worst.is_none() {
            report.max_rel_error = report.max_rel_error.max(rel);
            report.worst = Some((pi, off));
            report.worst_values = Some((exact, numeric));
        }
    }
    Ok(report)
}

fn locate<F: Scalar>(params: &[Tensor<F>], mut flat: usize) -> (usize, usize) {
    for (i, p) in params.iter().enumerate() {
        if flat < p.numel() {
            return (i, flat);
        }
        flat -= p.numel();
    }
    unreachable!("flat index beyond parameter count")
}
