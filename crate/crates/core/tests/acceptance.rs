//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary (no libtest harness) so the lines always reach the
//! console and the counting allocator sees a single thread. Set
//! `MAMBAEYE_ACCEPTANCE_ONLY=1,5,12` to run a subset.

use std::alloc::{GlobalAlloc, Layout, System};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mambaeye::eval::{ablate_loss, ablate_scan, emit_report, evaluate, power_of_two_probes, EvalJob, ExecMode};
use mambaeye::losses::{sequence_loss, sequence_loss_tape, LossConfig, LossMode};
use mambaeye::model::{argmax, Model, ModelConfig};
use mambaeye::movemb::{encode_move, Move};
use mambaeye::numgrad::{Tape, Tensor};
use mambaeye::patchio::{
    make_canvas, synthetic, AugmentConfig, Canvas, CanvasMode, CoverageMap, GlimpseStep, Image, PolicyKind, Rect,
    ScanPolicy, Trajectory,
};
use mambaeye::pipeline::TrainSampling;
use mambaeye::ssm::scan::{scan_chunked, scan_sequential, ScanInputs, ScanShape};
use mambaeye::trainer::{train, train_on, DataConfig, DataSource, ModelSection, RunConfig, TrainConfig, TrainOptions};
use mambaeye::Scalar;

struct Counting;

static CURRENT: AtomicUsize = AtomicUsize::new(0);
static PEAK: AtomicUsize = AtomicUsize::new(0);

fn note_alloc(size: usize) {
    let now = CURRENT.fetch_add(size, Ordering::SeqCst) + size;
    PEAK.fetch_max(now, Ordering::SeqCst);
}

unsafe impl GlobalAlloc for Counting {
    unsafe fn alloc(&self, layout: Layout) -> *mut u8 {
        let p = unsafe { System.alloc(layout) };
        if !p.is_null() {
            note_alloc(layout.size());
        }
        p
    }

    unsafe fn dealloc(&self, ptr: *mut u8, layout: Layout) {
        unsafe { System.dealloc(ptr, layout) };
        CURRENT.fetch_sub(layout.size(), Ordering::SeqCst);
    }

    unsafe fn realloc(&self, ptr: *mut u8, layout: Layout, new_size: usize) -> *mut u8 {
        let p = unsafe { System.realloc(ptr, layout, new_size) };
        if !p.is_null() {
            CURRENT.fetch_sub(layout.size(), Ordering::SeqCst);
            note_alloc(new_size);
        }
        p
    }
}

#[global_allocator]
static ALLOC: Counting = Counting;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

fn artifacts() -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn shape_glimpses(patch: usize, steps: usize, side: usize, seed: u64) -> Vec<GlimpseStep> {
    let data = synthetic::shapes(1, 32, seed);
    let canvas = make_canvas(&data.images[0], CanvasMode::Eval { target_side: side }).unwrap();
    Trajectory::new(&canvas, ScanPolicy::new(PolicyKind::RandomImage, seed), steps, patch)
        .unwrap()
        .collect()
}

fn mode_gap<F: Scalar>(model: &Model<F>, gs: &[GlimpseStep]) -> f64 {
    let par = model.forward_sequence(gs).unwrap().logits;
    let mut state = model.init_state();
    let mut worst = 0.0f64;
    for (t, g) in gs.iter().enumerate() {
        let row = model.step_glimpse(g, &mut state).unwrap();
        for (a, b) in row.iter().zip(par.row(t)) {
            worst = worst.max((*a - *b).abs().as_f64());
        }
    }
    worst
}

fn crit1_dual_mode() -> Outcome {
    let start = Instant::now();
    let (mut w32, mut w64) = (0.0f64, 0.0f64);
    for layers in [1, 2, 4] {
        for d_model in [32, 64] {
            let mut cfg = ModelConfig::micro2();
            cfg.backbone.layers = layers;
            cfg.backbone.d_model = d_model;
            cfg.backbone.d_state = 16;
            cfg.backbone.head_dim = 16;
            let m64 = Model::<f64>::init(cfg.clone(), layers as u64 * 100 + d_model as u64).unwrap();
            let m32 = m64.cast::<f32>();
            for t in [1, 7, 64, 256] {
                let gs = shape_glimpses(cfg.patch, t, 64, t as u64);
                w64 = w64.max(mode_gap(&m64, &gs));
                w32 = w32.max(mode_gap(&m32, &gs));
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        w32 <= 1e-4 && w64 <= 1e-8 && secs < 60.0,
        format!("max |parallel - recurrent|: f32 {w32:.2e} (tol 1e-4), f64 {w64:.2e} (tol 1e-8); 24 configs in {secs:.1}s"),
    )
}

/// `y_t = C_t · Σ_{s≤t} (Π_{s<u≤t} a_u) Δ_s x_s B_s`, one term at a time.
fn closed_form_scan(shape: &ScanShape, decay: &[f64], dt: &[f64], x: &[f64], b: &[f64], c: &[f64]) -> Vec<f64> {
    let (h, p, n) = (shape.heads, shape.head_dim, shape.d_state);
    let w = h * p;
    let mut y = vec![0.0; shape.steps * w];
    for t in 0..shape.steps {
        for hh in 0..h {
            for pi in 0..p {
                let mut total = 0.0;
                for s in 0..=t {
                    let prod: f64 = (s + 1..=t).map(|u| decay[u * h + hh]).product();
                    let cb: f64 = (0..n).map(|j| c[t * n + j] * b[s * n + j]).sum();
                    total += prod * dt[s * h + hh] * x[s * w + hh * p + pi] * cb;
                }
                y[t * w + hh * p + pi] = total;
            }
        }
    }
    y
}

fn crit2_scan() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for steps in [1, 2, 17, 64, 100, 128] {
        let shape = ScanShape {
            steps,
            heads: 2,
            head_dim: 3,
            d_state: 4,
        };
        let mut draw = |k: usize, lo: f64, hi: f64| -> Vec<f64> { (0..k).map(|_| rng.random_range(lo..hi)).collect() };
        let decay = draw(steps * 2, 0.0, 1.0);
        let dt = draw(steps * 2, 0.0, 1.0);
        let x = draw(steps * 6, -1.0, 1.0);
        let b = draw(steps * 4, -1.0, 1.0);
        let c = draw(steps * 4, -1.0, 1.0);
        let want = closed_form_scan(&shape, &decay, &dt, &x, &b, &c);
        let inp = ScanInputs {
            decay: &decay,
            dt: &dt,
            x: &x,
            b: &b,
            c: &c,
        };
        let mut outs = vec![scan_sequential(&shape, inp, None).0];
        for chunk in [1, 16, 64] {
            outs.push(scan_chunked(&shape, inp, chunk).y);
        }
        for got in outs {
            for (a, b) in want.iter().zip(&got) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    outcome(worst <= 1e-10, format!("max |chunked - closed form| {worst:.2e} over T<=128 (tol 1e-10)"))
}

fn crit3_gradient() -> Outcome {
    let start = Instant::now();
    let cfg = ModelConfig::micro2();
    let model = Model::<f64>::init(cfg.clone(), 3).unwrap();
    let gs = shape_glimpses(cfg.patch, 8, 32, 5);
    let ratios: Vec<f64> = gs.iter().map(|g| g.ratio).collect();
    let inputs = model.build_inputs(&gs).unwrap();
    let loss_cfg = LossConfig::new(LossMode::Scheduled, cfg.classes).unwrap();
    let label = 4;

    let mut tape = Tape::new();
    let vars = model.params.to_tape(&mut tape);
    let x = tape.constant(inputs.clone());
    let logits = model.forward_tape(&mut tape, &vars, x).unwrap();
    let loss = sequence_loss_tape(&mut tape, logits, &ratios, label, &loss_cfg).unwrap();
    let grads = tape.backward(loss).unwrap();

    let value = |m: &Model<f64>| -> f64 {
        let y = m.forward_inputs(inputs.clone()).unwrap();
        sequence_loss(&y, &ratios, label, &loss_cfg).unwrap()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let sizes: Vec<usize> = model.params.tensors().iter().map(Tensor::numel).collect();
    let total: usize = sizes.iter().sum();
    let eps = 1e-5;
    let (mut worst, mut checked) = (0.0f64, 0usize);
    let mut probe = model.clone();
    while checked < 240 {
        let mut k = rng.random_range(0..total);
        let mut i = 0;
        while k >= sizes[i] {
            k -= sizes[i];
            i += 1;
        }
        let orig = probe.params.get(i).data()[k];
        probe.params.get_mut(i).data_mut()[k] = orig + eps;
        let up = value(&probe);
        probe.params.get_mut(i).data_mut()[k] = orig - eps;
        let down = value(&probe);
        probe.params.get_mut(i).data_mut()[k] = orig;
        let numeric = (up - down) / (2.0 * eps);
        let analytic = grads.get(vars[i]).data()[k];
        // FD roundoff is ~1e-10 here, so tiny gradients are judged on absolute error
        worst = worst.max((analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6));
        checked += 1;
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst <= 1e-3 && checked >= 200 && secs < 120.0,
        format!(
            "Micro-2 f64, {checked} coords: max |a-n|/max(|a|,|n|,1e-6) {worst:.2e} (tol 1e-3), {secs:.1}s"
        ),
    )
}

fn crit4_loss_endpoints() -> Outcome {
    let n = 10;
    let sched = LossConfig::new(LossMode::Scheduled, n).unwrap();
    let plain = LossConfig::new(LossMode::StandardCe, n).unwrap();
    let l0 = sequence_loss(&Tensor::<f64>::zeros(&[5, n]), &[0.0; 5], 7, &sched).unwrap();
    let ln_n = (n as f64).ln();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut bitwise = true;
    for _ in 0..200 {
        let t = rng.random_range(1..20);
        let y = Tensor::<f64>::from_fn(&[t, n], |_| rng.random_range(-20.0..20.0));
        let k = rng.random_range(0..n);
        let r = vec![1.0; t];
        bitwise &= sequence_loss(&y, &r, k, &sched).unwrap().to_bits() == sequence_loss(&y, &r, k, &plain).unwrap().to_bits();
        let y32 = y.cast::<f32>();
        bitwise &= sequence_loss(&y32, &r, k, &sched).unwrap().to_bits() == sequence_loss(&y32, &r, k, &plain).unwrap().to_bits();
    }
    outcome(
        (l0 - ln_n).abs() <= 1e-9 && bitwise,
        format!("r=0 zero logits: {l0:.12} vs ln N {ln_n:.12}; r=1 scheduled == standard CE bitwise on 400 cases: {bitwise}"),
    )
}

fn crit5_coverage() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut exact = true;
    for _ in 0..500 {
        let region = Rect::new(rng.random_range(0..8), rng.random_range(0..8), rng.random_range(1..20), rng.random_range(1..20));
        let mut map = CoverageMap::new(region);
        let mut bitmap = vec![false; region.w * region.h];
        for _ in 0..rng.random_range(1..12) {
            let p = Rect::new(rng.random_range(0..30), rng.random_range(0..30), rng.random_range(1..9), rng.random_range(1..9));
            let r = map.update(p);
            for y in p.y0..p.y0 + p.h {
                for x in p.x0..p.x0 + p.w {
                    if x >= region.x0 && x < region.x0 + region.w && y >= region.y0 && y < region.y0 + region.h {
                        bitmap[(y - region.y0) * region.w + (x - region.x0)] = true;
                    }
                }
            }
            let want = bitmap.iter().filter(|&&b| b).count() as f64 / bitmap.len() as f64;
            exact &= r == want;
        }
    }
    let mut monotone = true;
    for i in 0..10_000u64 {
        let (h, w) = (rng.random_range(4..24), rng.random_range(4..24));
        let img = Image::zeros(3, h, w);
        let patch = rng.random_range(1..=h.min(w).min(8));
        let mode = if i % 2 == 0 {
            CanvasMode::Train {
                min_side: h.max(w),
                max_side: h.max(w) + 8,
                seed: i,
            }
        } else {
            CanvasMode::Eval {
                target_side: rng.random_range(8..40),
            }
        };
        let Ok(canvas) = make_canvas(&img, mode) else { continue };
        let kind = PolicyKind::ALL[i as usize % 4];
        let Ok(traj) = Trajectory::new(&canvas, ScanPolicy::new(kind, i), rng.random_range(1..40), patch) else {
            continue;
        };
        let mut last = 0.0;
        for g in traj {
            monotone &= g.ratio >= last && (0.0..=1.0).contains(&g.ratio);
            last = g.ratio;
        }
    }
    outcome(
        exact && monotone,
        format!("500 instances vs pixel bitmap exact: {exact}; r_t monotone in [0,1] over 10^4 trajectories: {monotone}"),
    )
}

fn paste_at(img: &Image, h: usize, w: usize, x0: usize, y0: usize) -> Canvas {
    let mut pixels = Image::zeros(img.channels, h, w);
    for c in 0..img.channels {
        for y in 0..img.height {
            for x in 0..img.width {
                *pixels.at_mut(c, y0 + y, x0 + x) = img.at(c, y, x);
            }
        }
    }
    Canvas {
        pixels,
        region: Rect::new(x0, y0, img.width, img.height),
    }
}

fn crit6_translation() -> Outcome {
    let mut cfg = ModelConfig::micro2();
    cfg.backbone.d_state = 16;
    cfg.backbone.head_dim = 16;
    let model = Model::<f32>::init(cfg.clone(), 6).unwrap();
    let p = cfg.patch;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (mut emb_same, mut logits_same) = (true, true);
    for case in 0..100u64 {
        let img = synthetic::shapes(1, 16, case).images[0].clone();
        let (ax, ay) = (rng.random_range(p..20), rng.random_range(p..20));
        let (bx, by) = (rng.random_range(p..40), rng.random_range(p..40));
        let a = paste_at(&img, 16 + ay + p, 16 + ax + p, ax, ay);
        let b = paste_at(&img, 16 + by + p, 16 + bx + p, bx, by);
        let steps = rng.random_range(1..24);
        // relative coordinates may run up to one patch into the zero margin
        let rel: Vec<(i64, i64)> = (0..steps)
            .map(|_| (rng.random_range(-(p as i64)..=16), rng.random_range(-(p as i64)..=16)))
            .collect();
        let build = |c: &Canvas, ox: usize, oy: usize| -> Vec<GlimpseStep> {
            let mut prev: Option<(usize, usize)> = None;
            rel.iter()
                .map(|&(rx, ry)| {
                    let (x, y) = ((ox as i64 + rx) as usize, (oy as i64 + ry) as usize);
                    let mut patch = vec![0.0; 3 * p * p];
                    c.extract_patch(x, y, p, &mut patch);
                    let movement = match prev {
                        None => Move::Initial,
                        Some((px, py)) => Move::Delta {
                            dx: x as i64 - px as i64,
                            dy: y as i64 - py as i64,
                        },
                    };
                    prev = Some((x, y));
                    GlimpseStep {
                        patch,
                        movement,
                        ratio: 0.0,
                        coord: (x, y),
                    }
                })
                .collect()
        };
        let (ga, gb) = (build(&a, ax, ay), build(&b, bx, by));
        for (u, v) in ga.iter().zip(&gb) {
            let eu: Vec<f32> = encode_move(u.movement, &cfg.move_cfg());
            let ev: Vec<f32> = encode_move(v.movement, &cfg.move_cfg());
            emb_same &= eu.iter().zip(&ev).all(|(s, t)| s.to_bits() == t.to_bits());
        }
        let la = model.forward_sequence(&ga).unwrap().logits;
        let lb = model.forward_sequence(&gb).unwrap().logits;
        logits_same &= la.data().iter().zip(lb.data()).all(|(s, t)| s.to_bits() == t.to_bits());
    }
    outcome(
        emb_same && logits_same,
        format!("100 shifted trajectories: move embeddings bit-identical {emb_same}, logits bit-identical {logits_same}"),
    )
}

fn recurrent_peak(model: &Model<f32>, canvas: &Canvas, steps: usize) -> usize {
    let p = model.config.patch;
    let mut traj = Trajectory::new(canvas, ScanPolicy::new(PolicyKind::RandomImage, 1), steps, p).unwrap();
    let mut buf = vec![0.0f32; canvas.channels() * p * p];
    let mut state = model.init_state();
    let mut last = 0usize;
    let base = CURRENT.load(Ordering::SeqCst);
    PEAK.store(base, Ordering::SeqCst);
    while let Some((mv, _, _)) = traj.next_into(&mut buf) {
        let logits = model.step(&buf, mv, &mut state).unwrap();
        last = argmax(&logits);
    }
    std::hint::black_box(last);
    PEAK.load(Ordering::SeqCst) - base
}

fn crit7_memory() -> Outcome {
    let model = Model::<f32>::init(ModelConfig::micro4(), 7).unwrap();
    let data = synthetic::shapes(1, 32, 7);
    let canvas = make_canvas(&data.images[0], CanvasMode::Eval { target_side: 64 }).unwrap();
    recurrent_peak(&model, &canvas, 8);
    let short = recurrent_peak(&model, &canvas, 64);
    let long = recurrent_peak(&model, &canvas, 4096);
    let rel = (long as f64 - short as f64).abs() / short as f64;
    outcome(
        rel <= 0.01,
        format!("Micro-4 recurrent peak above baseline: T=64 {short} B, T=4096 {long} B, rel diff {rel:.4} (tol 0.01)"),
    )
}

fn crit8_flops() -> Outcome {
    let mut worst = 0.0f64;
    let mut parts = Vec::new();
    for name in ModelConfig::PRESETS {
        let cfg = ModelConfig::preset(name).unwrap();
        let ratio = cfg.count_flops(4096).unwrap() as f64 / cfg.count_flops(1024).unwrap() as f64;
        worst = worst.max((ratio / 4.0 - 1.0).abs());
        parts.push(format!("{name} {ratio:.4}"));
    }
    // the tape's own op count must scale the same way
    let mut cfg = ModelConfig::micro2();
    cfg.backbone.d_state = 16;
    cfg.backbone.head_dim = 16;
    let m = Model::<f64>::init(cfg.clone(), 8).unwrap();
    let tape_flops = |t: usize| {
        let inputs = m.build_inputs(&shape_glimpses(cfg.patch, t, 64, 8)).unwrap();
        let mut tape = Tape::new();
        let vars = m.params.to_tape(&mut tape);
        let x = tape.constant(inputs);
        m.forward_tape(&mut tape, &vars, x).unwrap();
        tape.flops() as f64
    };
    let tape_ratio = tape_flops(1024) / tape_flops(256);
    outcome(
        worst <= 0.005,
        format!(
            "4096/1024: {} (tol 4 ± 0.5%); tape-counted Micro-2 1024/256 = {tape_ratio:.4}",
            parts.join(", ")
        ),
    )
}

fn shapes_data(train_size: usize, val_size: usize) -> DataConfig {
    DataConfig {
        source: DataSource::Shapes,
        root: None,
        train_size,
        val_size,
        side: 32,
        seed: 0,
    }
}

fn crit9_config() -> RunConfig {
    RunConfig {
        model: ModelSection {
            preset: "micro4".into(),
            ..ModelSection::default()
        },
        data: shapes_data(500, 200),
        train: TrainConfig {
            epochs: 30,
            batch_size: 32,
            warmup_epochs: 2,
            peak_lr: 2e-3,
            t_train: 256,
            val_t: 256,
            val_resolution: 32,
            val_mode: ExecMode::Parallel,
            sampling: TrainSampling {
                policy: PolicyKind::RandomImage,
                canvas_min: 32,
                canvas_max: 40,
                augment: AugmentConfig::identity(),
                ..TrainSampling::default()
            },
            ..TrainConfig::default()
        },
    }
}

fn crit9_learning(trained: &mut Option<Model<f32>>) -> Outcome {
    let start = Instant::now();
    let run = crit9_config();
    let out = artifacts().join("crit9");
    let _ = std::fs::remove_dir_all(&out);
    let summary = match train(&run, &out, &TrainOptions::default()) {
        Ok(s) => s,
        Err(e) => return outcome(false, format!("training failed: {e}")),
    };
    let train_secs = start.elapsed().as_secs_f64();
    let (_, val) = run.data.load().unwrap();
    let val = val.unwrap();
    let job = EvalJob {
        name: "crit9".into(),
        resolutions: vec![32],
        t_max: 512,
        policies: vec![PolicyKind::RandomImage],
        probes: power_of_two_probes(512),
        seeds: vec![0, 1, 2],
        mode: ExecMode::Recurrent,
        max_samples: None,
    };
    let table = evaluate(&summary.model, &val, &job).unwrap();
    emit_report(&table, &out.join("curves")).unwrap();
    let accs: Vec<f64> = table.points.iter().map(|p| p.top1).collect();
    let final_acc = *accs.last().unwrap();
    let mut running = 0.0f64;
    let mut shape_ok = true;
    for &a in &accs {
        shape_ok &= a >= running - 0.02;
        running = running.max(a);
    }
    let curve: Vec<String> = table.points.iter().map(|p| format!("t{}={:.3}", p.t, p.top1)).collect();
    *trained = Some(summary.model);
    outcome(
        final_acc >= 0.45 && shape_ok,
        format!(
            "Micro-4, 10-class shapes 32x32, 30 epochs in {:.0} min: top-1 at T=512 {final_acc:.3} (need >= 0.45); curve [{}] nondecreasing within 2 pts: {shape_ok}",
            train_secs / 60.0,
            curve.join(" ")
        ),
    )
}

fn crit10_scan_ablation(model: Option<&Model<f32>>) -> Outcome {
    let Some(model) = model else {
        return outcome(false, "needs the criterion 9 model");
    };
    let (_, val) = crit9_config().data.load().unwrap();
    let val = val.unwrap();
    let resolutions = [32, 64];
    let ab = ablate_scan(model, &val, &resolutions, 512, &[0, 1, 2], ExecMode::Parallel, "crit10").unwrap();
    let out = artifacts().join("crit10");
    mambaeye::eval::write_scan_ablation(&out.join("scan.csv"), &ab.rows).unwrap();
    let res = *resolutions.iter().max().unwrap();
    let rnd = ab.row(PolicyKind::RandomImage, res).unwrap();
    let mut ok = true;
    let mut parts = vec![format!("random {:.3}±{:.3}", rnd.top1, rnd.top1_stderr)];
    for fixed in [PolicyKind::RasterHorizontal, PolicyKind::ZigzagHorizontal] {
        let f = ab.row(fixed, res).unwrap();
        let se = (rnd.top1_stderr.powi(2) + f.top1_stderr.powi(2)).sqrt();
        ok &= rnd.top1 - f.top1 > 2.0 * se;
        parts.push(format!("{} {:.3}±{:.3}", fixed, f.top1, f.top1_stderr));
    }
    let trace = ab.trace(PolicyKind::RasterHorizontal, res);
    let cols = res / model.config.patch;
    let ac = |k: usize| mambaeye::verify::autocorrelation(&trace, k);
    outcome(
        ok,
        format!(
            "res {res}, T=512, 3 seeds: {} (random must lead by > 2 std-err); raster trace autocorrelation at row period {cols}: {:.3} vs lag {}: {:.3}",
            parts.join(", "),
            ac(cols),
            cols / 2,
            ac(cols / 2)
        ),
    )
}

fn crit11_loss_ablation() -> Outcome {
    let start = Instant::now();
    let data_cfg = shapes_data(500, 200);
    let (train_set, val) = data_cfg.load().unwrap();
    let val = val.unwrap();
    let mut sides: [Vec<Model<f32>>; 2] = [Vec::new(), Vec::new()];
    for (side, loss) in [LossMode::Scheduled, LossMode::StandardCe].into_iter().enumerate() {
        for seed in 0..3u64 {
            let run = RunConfig {
                model: ModelSection {
                    preset: "micro2".into(),
                    ..ModelSection::default()
                },
                data: data_cfg.clone(),
                train: TrainConfig {
                    epochs: 15,
                    batch_size: 32,
                    warmup_epochs: 1,
                    peak_lr: 2e-3,
                    t_train: 64,
                    val_t: 64,
                    seed,
                    loss,
                    val_mode: ExecMode::Parallel,
                    sampling: TrainSampling {
                        policy: PolicyKind::RandomImage,
                        canvas_min: 32,
                        canvas_max: 40,
                        augment: AugmentConfig::identity(),
                        ..TrainSampling::default()
                    },
                    ..TrainConfig::default()
                },
            };
            let out = artifacts().join(format!("crit11/{loss}_{seed}"));
            let _ = std::fs::remove_dir_all(&out);
            match train_on(&run, &train_set, Some(&val), &out, &TrainOptions::default()) {
                Ok(s) => sides[side].push(s.model),
                Err(e) => return outcome(false, format!("training failed: {e}")),
            }
        }
    }
    let rows = ablate_loss(&sides[0], &sides[1], &val, &[32], 64, 0, ExecMode::Parallel).unwrap();
    mambaeye::eval::write_loss_ablation(&artifacts().join("crit11/loss.csv"), &rows).unwrap();
    let (s, c) = (&rows[0], &rows[1]);
    let se = (s.top1_stderr.powi(2) + c.top1_stderr.powi(2)).sqrt();
    let gap = s.top1 - c.top1;
    let verdict = if gap >= 0.0 {
        "scheduled >= standard"
    } else if -gap <= 2.0 * se {
        "reversal within noise (logged, flagged for investigation)"
    } else {
        "reversal beyond noise"
    };
    outcome(
        gap >= 0.0 || -gap <= 2.0 * se,
        format!(
            "Micro-2, T=64, 3 seeds each: scheduled {:.3}±{:.3}, standard-ce {:.3}±{:.3}, gap {gap:+.3}: {verdict}; {:.0} min",
            s.top1,
            s.top1_stderr,
            c.top1,
            c.top1_stderr,
            start.elapsed().as_secs_f64() / 60.0
        ),
    )
}

fn crit12_determinism() -> Outcome {
    let run = RunConfig {
        model: ModelSection {
            preset: "micro2".into(),
            classes: Some(2),
            d_state: Some(16),
            head_dim: Some(16),
            ..ModelSection::default()
        },
        data: DataConfig {
            source: DataSource::Bars,
            train_size: 64,
            val_size: 16,
            side: 16,
            ..DataConfig::default()
        },
        train: TrainConfig {
            epochs: 2,
            batch_size: 16,
            t_train: 16,
            val_t: 16,
            val_resolution: 16,
            sampling: TrainSampling {
                canvas_min: 16,
                canvas_max: 24,
                ..TrainSampling::default()
            },
            ..TrainConfig::default()
        },
    };
    let root = artifacts().join("crit12");
    let _ = std::fs::remove_dir_all(&root);
    let mut train_csv = Vec::new();
    let mut eval_csv = Vec::new();
    for i in 0..2 {
        let out = root.join(format!("train{i}"));
        let s = train(&run, &out, &TrainOptions::default()).unwrap();
        train_csv.push(std::fs::read(out.join("metrics.csv")).unwrap());
        let (_, val) = run.data.load().unwrap();
        let job = EvalJob {
            name: "det".into(),
            resolutions: vec![16, 24],
            t_max: 16,
            policies: PolicyKind::ALL.to_vec(),
            probes: power_of_two_probes(16),
            seeds: vec![0, 1, 2],
            mode: ExecMode::Recurrent,
            max_samples: None,
        };
        let table = evaluate(&s.model, &val.unwrap(), &job).unwrap();
        let files = emit_report(&table, &root.join(format!("eval{i}"))).unwrap();
        eval_csv.push(files.iter().map(|f| std::fs::read(f).unwrap()).collect::<Vec<_>>());
    }
    let same_train = train_csv[0] == train_csv[1];
    let same_eval = eval_csv[0] == eval_csv[1];
    outcome(
        same_train && same_eval,
        format!(
            "repeated train metrics.csv byte-identical: {same_train}; repeated eval ({} report files) byte-identical: {same_eval}",
            eval_csv[0].len()
        ),
    )
}

fn main() {
    let only: Option<Vec<usize>> = std::env::var("MAMBAEYE_ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|v| v.trim().parse().ok()).collect());
    let wanted = |i: usize| only.as_ref().is_none_or(|o| o.contains(&i));
    let names = [
        "dual-mode equivalence",
        "scan vs closed form",
        "gradient check",
        "loss schedule endpoints",
        "coverage correctness",
        "translation invariance",
        "constant-memory inference",
        "FLOPs linearity",
        "toy-scale learning",
        "directional scan ablation",
        "directional loss ablation",
        "determinism",
    ];
    let mut trained: Option<Model<f32>> = None;
    let mut failed = Vec::new();
    for (i, name) in names.iter().enumerate() {
        let n = i + 1;
        if !wanted(n) || (n == 10 && !wanted(9)) {
            continue;
        }
        let o = match n {
            1 => crit1_dual_mode(),
            2 => crit2_scan(),
            3 => crit3_gradient(),
            4 => crit4_loss_endpoints(),
            5 => crit5_coverage(),
            6 => crit6_translation(),
            7 => crit7_memory(),
            8 => crit8_flops(),
            9 => crit9_learning(&mut trained),
            10 => crit10_scan_ablation(trained.as_ref()),
            11 => crit11_loss_ablation(),
            _ => crit12_determinism(),
        };
        println!("[{}] {n:>2} {name}: {}", if o.passed { "PASS" } else { "FAIL" }, o.detail);
        if !o.passed {
            failed.push(n);
        }
    }
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
