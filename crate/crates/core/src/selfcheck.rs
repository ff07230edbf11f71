//! Fast oracle suite behind the `selfcheck` command. Each check compares a
//! production path against a slow reference and reports pass/fail.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::losses::{sequence_loss, sequence_loss_tape, LossConfig, LossMode};
use crate::model::{Model, ModelConfig};
use crate::movemb::{encode_move, Move};
use crate::numgrad::{fd_gradient_check, NumgradError, Tensor};
use crate::patchio::{make_canvas, synthetic, CanvasMode, CoverageMap, PolicyKind, Rect, ScanPolicy, Trajectory};
use crate::ssm::scan::{scan_chunked, ScanInputs, ScanShape};
use crate::verify::{brute_force_coverage, brute_force_scan};

#[derive(Clone, Debug)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, r: Result<(bool, String), String>) -> Check {
    match r {
        Ok((passed, detail)) => Check { name, passed, detail },
        Err(detail) => Check {
            name,
            passed: false,
            detail: format!("error: {detail}"),
        },
    }
}

/// Micro-2 with a narrower state so the suite stays fast.
pub fn small_micro2() -> ModelConfig {
    let mut c = ModelConfig::micro2();
    c.backbone.d_state = 8;
    c.backbone.head_dim = 16;
    c
}

fn glimpses(patch: usize, steps: usize, seed: u64) -> Result<Vec<crate::patchio::GlimpseStep>, String> {
    let data = synthetic::shapes(1, 32, seed);
    let canvas = make_canvas(&data.images[0], CanvasMode::Eval { target_side: 32 }).map_err(|e| e.to_string())?;
    Trajectory::new(&canvas, ScanPolicy::new(PolicyKind::RandomImage, seed), steps, patch)
        .map(|t| t.collect())
        .map_err(|e| e.to_string())
}

fn scan_oracle() -> Result<(bool, String), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let shape = ScanShape {
        steps: 96,
        heads: 2,
        head_dim: 3,
        d_state: 4,
    };
    let mut draw = |n: usize, lo: f64, hi: f64| -> Vec<f64> { (0..n).map(|_| rng.random_range(lo..hi)).collect() };
    let (decay, dt) = (draw(96 * 2, 0.0, 1.0), draw(96 * 2, 0.0, 1.0));
    let x = draw(96 * shape.width(), -1.0, 1.0);
    let (b, c) = (draw(96 * 4, -1.0, 1.0), draw(96 * 4, -1.0, 1.0));
    let inp = ScanInputs {
        decay: &decay,
        dt: &dt,
        x: &x,
        b: &b,
        c: &c,
    };
    let want = brute_force_scan(&shape, inp);
    let got = scan_chunked(&shape, inp, 32).y;
    let err = want.iter().zip(&got).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    Ok((err <= 1e-10, format!("max diff {err:.2e} (tol 1e-10)")))
}

fn dual_mode() -> Result<(bool, String), String> {
    let cfg = small_micro2();
    let gs = glimpses(cfg.patch, 40, 2)?;
    let mut worst = (0.0f64, 0.0f64);
    for (i, tol) in [(0usize, 1e-8), (1, 1e-4)] {
        let diff = if i == 0 {
            let m = Model::<f64>::init(cfg.clone(), 5).map_err(|e| e.to_string())?;
            max_mode_diff(&m, &gs)?
        } else {
            let m = Model::<f32>::init(cfg.clone(), 5).map_err(|e| e.to_string())?;
            max_mode_diff(&m, &gs)?
        };
        if diff > tol {
            return Ok((false, format!("{} diff {diff:.2e} > {tol:.0e}", ["f64", "f32"][i])));
        }
        if i == 0 {
            worst.0 = diff;
        } else {
            worst.1 = diff;
        }
    }
    Ok((true, format!("f64 {:.2e}, f32 {:.2e}", worst.0, worst.1)))
}

fn max_mode_diff<F: crate::Scalar>(m: &Model<F>, gs: &[crate::patchio::GlimpseStep]) -> Result<f64, String> {
    let par = m.forward_sequence(gs).map_err(|e| e.to_string())?.logits;
    let mut st = m.init_state();
    let mut worst = 0.0f64;
    for (t, g) in gs.iter().enumerate() {
        let row = m.step_glimpse(g, &mut st).map_err(|e| e.to_string())?;
        for (a, b) in row.iter().zip(par.row(t)) {
            worst = worst.max((*a - *b).abs().as_f64());
        }
    }
    Ok(worst)
}

fn gradient() -> Result<(bool, String), String> {
    let cfg = small_micro2();
    let model = Model::<f64>::init(cfg.clone(), 9).map_err(|e| e.to_string())?;
    let gs = glimpses(cfg.patch, 12, 4)?;
    let inputs = model.build_inputs(&gs).map_err(|e| e.to_string())?;
    let ratios: Vec<f64> = gs.iter().map(|g| g.ratio).collect();
    let loss_cfg = LossConfig::new(LossMode::Scheduled, cfg.classes).map_err(|e| e.to_string())?;
    let report = fd_gradient_check(
        model.params.tensors(),
        |tape, vars| {
            let x = tape.constant(inputs.clone());
            let logits = model
                .forward_tape(tape, vars, x)
                .map_err(|e| NumgradError::InvalidArgument(e.to_string()))?;
            sequence_loss_tape(tape, logits, &ratios, 3, &loss_cfg).map_err(|e| NumgradError::InvalidArgument(e.to_string()))
        },
        1e-6,
        60,
        1,
    )
    .map_err(|e| e.to_string())?;
    Ok((
        report.max_rel_error <= 1e-3,
        format!(
            "max rel error {:.2e} over {} coords (tol 1e-3), worst (analytic, numeric) {:?}",
            report.max_rel_error, report.checked, report.worst_values
        ),
    ))
}

fn loss_endpoints() -> Result<(bool, String), String> {
    let n = 10;
    let sched = LossConfig::new(LossMode::Scheduled, n).map_err(|e| e.to_string())?;
    let std = LossConfig::new(LossMode::StandardCe, n).map_err(|e| e.to_string())?;
    let zeros = Tensor::<f64>::zeros(&[3, n]);
    let l0 = sequence_loss(&zeros, &[0.0; 3], 4, &sched).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let logits = Tensor::<f64>::from_fn(&[3, n], |_| rng.random_range(-3.0..3.0));
    let a = sequence_loss(&logits, &[1.0; 3], 4, &sched).map_err(|e| e.to_string())?;
    let b = sequence_loss(&logits, &[1.0; 3], 4, &std).map_err(|e| e.to_string())?;
    let ok = (l0 - (n as f64).ln()).abs() <= 1e-9 && a.to_bits() == b.to_bits();
    Ok((ok, format!("r=0 loss {l0:.12}, r=1 bitwise equal: {}", a.to_bits() == b.to_bits())))
}

fn coverage() -> Result<(bool, String), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for case in 0..100 {
        let region = Rect::new(rng.random_range(0..6), rng.random_range(0..6), rng.random_range(1..24), rng.random_range(1..24));
        let mut map = CoverageMap::new(region);
        let mut patches = Vec::new();
        let mut last = 0.0;
        for _ in 0..rng.random_range(1..10) {
            let p = Rect::new(rng.random_range(0..30), rng.random_range(0..30), rng.random_range(1..8), rng.random_range(1..8));
            patches.push(p);
            let r = map.update(p);
            if r != brute_force_coverage(region, &patches) || r < last || !(0.0..=1.0).contains(&r) {
                return Ok((false, format!("case {case} disagrees with the pixel bitmap")));
            }
            last = r;
        }
    }
    Ok((true, "100 instances exact".into()))
}

fn translation() -> Result<(bool, String), String> {
    let cfg = small_micro2();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let coords: Vec<(i64, i64)> = (0..20).map(|_| (rng.random_range(0..100), rng.random_range(0..100))).collect();
    let (sx, sy) = (rng.random_range(-50..50), rng.random_range(-50..50));
    let emb = |c: &[(i64, i64)]| -> Vec<Vec<f32>> {
        c.windows(2)
            .map(|w| {
                encode_move(
                    Move::Delta {
                        dx: w[1].0 - w[0].0,
                        dy: w[1].1 - w[0].1,
                    },
                    &cfg.move_cfg(),
                )
            })
            .collect()
    };
    let shifted: Vec<(i64, i64)> = coords.iter().map(|&(x, y)| (x + sx, y + sy)).collect();
    let same = emb(&coords)
        .iter()
        .flatten()
        .zip(emb(&shifted).iter().flatten())
        .all(|(a, b)| a.to_bits() == b.to_bits());
    Ok((same, "shifted trajectory embeddings bit-identical".into()))
}

fn flops() -> Result<(bool, String), String> {
    let mut worst = 0.0f64;
    for name in ModelConfig::PRESETS {
        let c = ModelConfig::preset(name).ok_or("preset")?;
        let a = c.count_flops(4096).map_err(|e| e.to_string())? as f64;
        let b = c.count_flops(1024).map_err(|e| e.to_string())? as f64;
        worst = worst.max((a / b / 4.0 - 1.0).abs());
    }
    Ok((worst <= 0.005, format!("max |ratio/4 - 1| = {worst:.2e}")))
}

/// Runs every check; takes a few seconds.
pub fn run_all() -> Vec<Check> {
    vec![
        check("scan-vs-brute-force", scan_oracle()),
        check("dual-mode-equivalence", dual_mode()),
        check("gradient-fd", gradient()),
        check("loss-endpoints", loss_endpoints()),
        check("coverage-bitmap", coverage()),
        check("move-translation", translation()),
        check("flops-linearity", flops()),
    ]
}
