use super::*;
use crate::patchio::{make_canvas, synthetic, CanvasMode, Image, PolicyKind, ScanPolicy, Trajectory};
use rand::Rng;

fn tiny_test_config() -> ModelConfig {
    ModelConfig {
        name: "test".into(),
        patch: 4,
        channels: 3,
        classes: 5,
        d_move_emb: 16,
        freq_base: 10000.0,
        backbone: crate::ssm::BackboneConfig {
            layers: 2,
            d_model: 16,
            d_state: 8,
            head_dim: 8,
            chunk: 16,
            ..Default::default()
        },
    }
}

fn glimpses(cfg: &ModelConfig, steps: usize, seed: u64) -> Vec<GlimpseStep> {
    let data = synthetic::shapes(1, 32, seed);
    let canvas = make_canvas(&data.images[0], CanvasMode::Eval { target_side: 32 }).unwrap();
    Trajectory::new(&canvas, ScanPolicy::new(PolicyKind::RandomImage, seed), steps, cfg.patch)
        .unwrap()
        .collect()
}

fn max_diff<F: Scalar>(a: &[F], b: &[F]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x.as_f64() - y.as_f64()).abs()).fold(0.0, f64::max)
}

fn replay<F: Scalar>(model: &Model<F>, gs: &[GlimpseStep]) -> Vec<F> {
    let mut st = model.init_state();
    gs.iter().flat_map(|g| model.step_glimpse(g, &mut st).unwrap()).collect()
}

#[test]
fn paper_input_width() {
    assert_eq!(ModelConfig::tiny().d_input(), 1280);
}

#[test]
fn preset_parameter_counts_within_a_fifth() {
    for (cfg, target) in [
        (ModelConfig::tiny(), 5.8e6),
        (ModelConfig::small(), 11.0e6),
        (ModelConfig::base(), 21.3e6),
    ] {
        let n = cfg.param_count() as f64;
        assert!((n / target - 1.0).abs() <= 0.2, "{}: {n}", cfg.name);
    }
    let m = Model::<f32>::init(ModelConfig::micro4(), 0).unwrap();
    assert_eq!(m.params.num_scalars(), ModelConfig::micro4().param_count());
}

#[test]
fn flops_scale_linearly() {
    for name in ModelConfig::PRESETS {
        let cfg = ModelConfig::preset(name).unwrap();
        let r = cfg.count_flops(4096).unwrap() as f64 / cfg.count_flops(1024).unwrap() as f64;
        assert!((r - 4.0).abs() <= 0.02);
    }
    assert!(ModelConfig::tiny().count_flops(0).is_err());
    assert!(ModelConfig::tiny().count_flops(1).unwrap() > 0);
    let ratio = ModelConfig::base().count_flops(64).unwrap() as f64 / ModelConfig::tiny().count_flops(64).unwrap() as f64;
    assert!((ratio / 4.0 - 1.0).abs() <= 0.2, "{ratio}");
}

#[test]
fn tape_flops_match_closed_form() {
    let cfg = tiny_test_config();
    let model = Model::<f64>::init(cfg.clone(), 1).unwrap();
    let count = |t: usize| {
        let inputs = model.build_inputs(&glimpses(&cfg, t, 2)).unwrap();
        let mut tape = Tape::new();
        let vars = model.params.to_tape(&mut tape);
        let x = tape.constant(inputs);
        model.forward_tape(&mut tape, &vars, x).unwrap();
        tape.flops()
    };
    let (a, b) = (count(32), count(64));
    assert!((b as f64 / a as f64 - 2.0).abs() <= 0.02, "{a} {b}");
}

#[test]
fn single_step_has_one_row() {
    let cfg = tiny_test_config();
    let model = Model::<f32>::init(cfg.clone(), 1).unwrap();
    let tr = model.forward_sequence(&glimpses(&cfg, 1, 0)).unwrap();
    assert_eq!(tr.logits.shape(), &[1, 5]);
}

#[test]
fn wrong_patch_length_names_step() {
    let cfg = tiny_test_config();
    let model = Model::<f32>::init(cfg.clone(), 1).unwrap();
    let mut gs = glimpses(&cfg, 4, 0);
    gs[2].patch.pop();
    match model.forward_sequence(&gs) {
        Err(ModelError::GlimpseLength { t: 2, expected: 48, got: 47 }) => {}
        other => panic!("{other:?}"),
    }
}

#[test]
fn modes_agree() {
    let cfg = tiny_test_config();
    let gs = glimpses(&cfg, 64, 5);
    let m32 = Model::<f32>::init(cfg.clone(), 7).unwrap();
    let par = m32.forward_sequence(&gs).unwrap();
    assert!(max_diff(par.logits.data(), &replay(&m32, &gs)) <= 1e-4);
    let m64: Model<f64> = m32.cast();
    let par = m64.forward_sequence(&gs).unwrap();
    assert!(max_diff(par.logits.data(), &replay(&m64, &gs)) <= 1e-10);
}

#[test]
fn later_glimpses_do_not_affect_earlier_rows() {
    let cfg = tiny_test_config();
    let model = Model::<f64>::init(cfg.clone(), 3).unwrap();
    let gs = glimpses(&cfg, 12, 1);
    let base = model.forward_sequence(&gs).unwrap().logits;
    let mut shuffled = gs.clone();
    shuffled[5..].reverse();
    let other = model.forward_sequence(&shuffled).unwrap().logits;
    for t in 0..5 {
        assert_eq!(base.row(t), other.row(t));
    }
    assert_ne!(base.row(11), other.row(11));
}

#[test]
fn zero_head_gives_uniform_logits() {
    let cfg = tiny_test_config();
    let mut model = Model::<f32>::init(cfg.clone(), 1).unwrap();
    model.params.get_mut(model.layout.head_w).data_mut().fill(0.0);
    let mut st = model.init_state();
    let y = model.step(&vec![0.0; cfg.d_image()], Move::Initial, &mut st).unwrap();
    assert!(y.iter().all(|&v| v == y[0]));
}

#[test]
fn state_memory_is_constant() {
    let cfg = tiny_test_config();
    let model = Model::<f32>::init(cfg.clone(), 1).unwrap();
    let gs = glimpses(&cfg, 1000, 2);
    let mut st = model.init_state();
    model.step_glimpse(&gs[0], &mut st).unwrap();
    let one = st.byte_size();
    for g in &gs[1..] {
        model.step_glimpse(g, &mut st).unwrap();
    }
    assert_eq!(st.byte_size(), one);
}

#[test]
fn state_layer_mismatch_rejected() {
    let cfg = tiny_test_config();
    let model = Model::<f32>::init(cfg.clone(), 1).unwrap();
    let mut st = model.init_state();
    st.layers.pop();
    assert!(model.step(&vec![0.0; cfg.d_image()], Move::Initial, &mut st).is_err());
}

#[test]
fn logits_invariant_to_translation_on_zero_background() {
    let cfg = tiny_test_config();
    let model = Model::<f32>::init(cfg.clone(), 9).unwrap();
    let mut rng = seed::rng(4, &[]);
    let img = Image::new(3, 12, 12, (0..432).map(|_| rng.random_range(0.0..1.0)).collect());
    let big = |ox: usize, oy: usize| {
        let mut c = Image::zeros(3, 40, 40);
        for ch in 0..3 {
            for y in 0..12 {
                for x in 0..12 {
                    *c.at_mut(ch, oy + y, ox + x) = img.at(ch, y, x);
                }
            }
        }
        c
    };
    let rel: Vec<(usize, usize)> = (0..20).map(|_| (rng.random_range(0..9), rng.random_range(0..9))).collect();
    let run = |ox: usize, oy: usize| {
        let canvas = big(ox, oy);
        let mut st = model.init_state();
        let mut prev: Option<(usize, usize)> = None;
        let mut out = Vec::new();
        for &(rx, ry) in &rel {
            let (x, y) = (ox + rx, oy + ry);
            let mut patch = vec![0.0; cfg.d_image()];
            for ch in 0..3 {
                for dy in 0..4 {
                    for dx in 0..4 {
                        patch[(ch * 4 + dy) * 4 + dx] = canvas.at(ch, y + dy, x + dx);
                    }
                }
            }
            let mv = prev.map_or(Move::Initial, |(px, py)| Move::Delta {
                dx: x as i64 - px as i64,
                dy: y as i64 - py as i64,
            });
            prev = Some((x, y));
            out.extend(model.step(&patch, mv, &mut st).unwrap());
        }
        out
    };
    assert_eq!(run(0, 0), run(17, 23));
}

#[test]
fn checkpoint_roundtrip_and_validation() {
    let cfg = tiny_test_config();
    let model = Model::<f32>::init(cfg.clone(), 11).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let ck = Checkpoint::new(dir.path().join("ck"));
    ck.save(&model, 11, Default::default()).unwrap();
    let (loaded, manifest) = ck.load::<f32>().unwrap();
    assert_eq!(loaded.params.tensors(), model.params.tensors());
    assert_eq!(manifest.seed, 11);
    assert_eq!(manifest.config, cfg);

    // a stored shape that disagrees with the config is rejected
    let text = std::fs::read_to_string(ck.manifest_path()).unwrap();
    let bad = text.replacen("shape = [64, 16]", "shape = [64, 17]", 1);
    assert_ne!(bad, text);
    std::fs::write(ck.manifest_path(), bad).unwrap();
    assert!(matches!(ck.load::<f32>(), Err(ModelError::Checkpoint { .. })));
}

#[test]
fn init_is_deterministic() {
    let a = Model::<f32>::init(ModelConfig::micro2(), 5).unwrap();
    let b = Model::<f32>::init(ModelConfig::micro2(), 5).unwrap();
    let c = Model::<f32>::init(ModelConfig::micro2(), 6).unwrap();
    assert_eq!(a.params.tensors(), b.params.tensors());
    assert_ne!(a.params.tensors(), c.params.tensors());
}
