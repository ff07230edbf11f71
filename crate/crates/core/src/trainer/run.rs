use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::optim::{clip_global_norm, lr_at, AdamW, Phase, Schedule, StepOutcome};
use super::{RunConfig, TrainConfig, TrainError};
use crate::eval::evaluate_split;
use crate::losses::{sequence_loss_tape, LossConfig, LossError};
use crate::model::{argmax, read_tensors, read_toml, write_tensors, write_toml, Checkpoint, Model, ModelError};
use crate::numgrad::{Tape, Tensor};
use crate::patchio::{Dataset, Image};
use crate::pipeline::train_glimpses;
use crate::seed;
use crate::ssm::SsmError;

pub const METRICS_HEADER: &str = "epoch,split,loss,acc@T";
const STATE_FILE: &str = "trainer_state.toml";
const OPTIM_DIR: &str = "optimizer";

/// One line of `metrics.csv`. `acc` is top-1 at the last step (`t_train` for
/// the train split, `val_t` for validation).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub epoch: usize,
    pub split: String,
    pub loss: f64,
    pub acc: f64,
}

/// Everything besides weights and moments needed to continue a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainerState {
    pub epochs_done: usize,
    pub step: u64,
    pub adam_t: u64,
    pub skipped_steps: u64,
    pub best_score: Option<f64>,
    pub best_epoch: Option<usize>,
    pub events: Vec<String>,
    pub metrics: Vec<MetricRow>,
    pub run: RunConfig,
}

/// Written next to `metrics.csv` after every epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub code_version: String,
    pub init_seed: u64,
    pub train_seed: u64,
    pub data_seed: u64,
    pub val_seed: u64,
    pub train_hash: String,
    pub val_hash: Option<String>,
    pub train_samples: usize,
    pub val_samples: usize,
    pub steps_per_epoch: u64,
    pub total_steps: u64,
    pub head_input: String,
    pub move_encoding: String,
    pub events: Vec<String>,
    pub metrics: Vec<MetricRow>,
    pub run: RunConfig,
}

#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    /// Checkpoint directory (`last/` or `best/` of an earlier run) to continue from.
    pub resume_from: Option<PathBuf>,
    /// Stop once this many epochs are done, as if interrupted.
    pub stop_after_epoch: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub model: Model<f32>,
    pub state: TrainerState,
    pub out_dir: PathBuf,
}

impl TrainSummary {
    pub fn last_train_loss(&self) -> Option<f64> {
        self.state.metrics.iter().rev().find(|r| r.split == "train").map(|r| r.loss)
    }
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> TrainError + '_ {
    move |source| TrainError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn render_metrics(rows: &[MetricRow]) -> String {
    let mut s = format!("{METRICS_HEADER}\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{:.6},{:.6}", r.epoch, r.split, r.loss, r.acc);
    }
    s
}

/// Parses a metrics file back into rows (values at the written precision).
pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricRow>, TrainError> {
    let text = fs::read_to_string(path).map_err(io(path))?;
    let mut lines = text.lines();
    if lines.next() != Some(METRICS_HEADER) {
        return Err(TrainError::Config(format!("{}: missing header {METRICS_HEADER}", path.display())));
    }
    lines
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            let bad = || TrainError::Config(format!("{}: bad row `{l}`", path.display()));
            if f.len() != 4 {
                return Err(bad());
            }
            Ok(MetricRow {
                epoch: f[0].parse().map_err(|_| bad())?,
                split: f[1].to_string(),
                loss: f[2].parse().map_err(|_| bad())?,
                acc: f[3].parse().map_err(|_| bad())?,
            })
        })
        .collect()
}

struct SampleGrad {
    loss: f64,
    correct: bool,
    grads: Vec<Tensor<f32>>,
}

fn is_non_finite(e: &TrainError) -> bool {
    matches!(
        e,
        TrainError::Loss(LossError::NonFinite(_)) | TrainError::Model(ModelError::Ssm(SsmError::NonFinite { .. }))
    )
}

/// Loss and parameter gradients of one sequence; `None` when the forward pass
/// went non-finite.
fn sample_grad(
    model: &Model<f32>,
    image: &Image,
    label: usize,
    cfg: &TrainConfig,
    loss_cfg: &LossConfig,
    sample_seed: u64,
) -> Result<Option<SampleGrad>, TrainError> {
    let inner = || -> Result<SampleGrad, TrainError> {
        let gs = train_glimpses(image, &cfg.sampling, model.config.patch, cfg.t_train, sample_seed)?;
        let inputs = model.build_inputs(&gs)?;
        let ratios: Vec<f64> = gs.iter().map(|g| g.ratio).collect();
        let mut tape = Tape::new();
        let vars = model.params.to_tape(&mut tape);
        let x = tape.constant(inputs);
        let logits = model.forward_tape(&mut tape, &vars, x)?;
        let loss = sequence_loss_tape(&mut tape, logits, &ratios, label, loss_cfg)?;
        let correct = argmax(tape.value(logits).row(gs.len() - 1)) == label;
        let loss_value = f64::from(tape.value(loss).item());
        let mut g = tape.backward(loss)?;
        Ok(SampleGrad {
            loss: loss_value,
            correct,
            grads: vars.iter().map(|&v| g.take(v)).collect(),
        })
    };
    match inner() {
        Ok(s) => Ok(Some(s)),
        Err(e) if is_non_finite(&e) => Ok(None),
        Err(e) => Err(e),
    }
}

fn sample_seed(cfg: &TrainConfig, epoch: usize, index: usize) -> u64 {
    let e = if cfg.resample_each_epoch { epoch as u64 } else { 0 };
    seed::derive(cfg.seed, &[seed::stream::TRAJECTORY, e, index as u64])
}

fn save_checkpoint(
    dir: &Path,
    model: &Model<f32>,
    adam: &AdamW<f32>,
    state: &TrainerState,
) -> Result<(), TrainError> {
    let mut meta = BTreeMap::new();
    meta.insert("epochs_done".into(), state.epochs_done.to_string());
    meta.insert("phase".into(), format!("{:?}", state.run.train.phase).to_lowercase());
    Checkpoint::new(dir).save(model, state.run.train.seed, meta)?;
    let names = model.params.names();
    write_tensors(dir, &format!("{OPTIM_DIR}/m"), names, &adam.m)?;
    write_tensors(dir, &format!("{OPTIM_DIR}/v"), names, &adam.v)?;
    write_toml(&dir.join(STATE_FILE), state)?;
    Ok(())
}

fn load_checkpoint(dir: &Path, cfg: &TrainConfig) -> Result<(Model<f32>, AdamW<f32>, TrainerState), TrainError> {
    let state: TrainerState = read_toml(&dir.join(STATE_FILE))?;
    let (model, manifest) = Checkpoint::new(dir).load::<f32>()?;
    let mut adam = AdamW::for_params(cfg.adamw(), model.params.tensors());
    adam.m = read_tensors(&dir.join(OPTIM_DIR).join("m"), &strip_dir(&manifest.tensors))?;
    adam.v = read_tensors(&dir.join(OPTIM_DIR).join("v"), &strip_dir(&manifest.tensors))?;
    adam.t = state.adam_t;
    Ok((model, adam, state))
}

/// Moment blobs share the tensor file names; only the directory differs.
fn strip_dir(entries: &[crate::model::TensorEntry]) -> Vec<crate::model::TensorEntry> {
    entries
        .iter()
        .map(|e| {
            let mut e = e.clone();
            e.file = Path::new(&e.file)
                .file_name()
                .map(|f| f.to_string_lossy().into_owned())
                .unwrap_or_default();
            e
        })
        .collect()
}

/// Short description of the first differing section, for resume errors.
fn config_diff(a: &RunConfig, b: &RunConfig) -> String {
    if a.model != b.model {
        format!("[model] {:?} vs {:?}", a.model, b.model)
    } else if a.data != b.data {
        format!("[data] {:?} vs {:?}", a.data, b.data)
    } else {
        "[train] section differs".into()
    }
}

/// Loads the configured dataset and trains.
pub fn train(run: &RunConfig, out_dir: &Path, opts: &TrainOptions) -> Result<TrainSummary, TrainError> {
    let (train_set, val_set) = run.data.load()?;
    train_on(run, &train_set, val_set.as_ref(), out_dir, opts)
}

pub fn train_on(
    run: &RunConfig,
    train_set: &Dataset,
    val_set: Option<&Dataset>,
    out_dir: &Path,
    opts: &TrainOptions,
) -> Result<TrainSummary, TrainError> {
    let cfg = &run.train;
    cfg.validate()?;
    let model_cfg = run.model.resolve()?;
    if train_set.is_empty() {
        return Err(TrainError::Config("empty training set".into()));
    }
    if model_cfg.classes != train_set.num_classes || model_cfg.channels != train_set.channels() {
        return Err(TrainError::Config(format!(
            "model expects {} classes / {} channels, dataset has {} / {}",
            model_cfg.classes,
            model_cfg.channels,
            train_set.num_classes,
            train_set.channels()
        )));
    }
    let loss_cfg = LossConfig::new(cfg.loss, model_cfg.classes)?;
    let n = train_set.len();
    let steps_per_epoch = n.div_ceil(cfg.batch_size) as u64;
    let sched = Schedule {
        phase: cfg.phase,
        peak: cfg.peak_lr,
        warmup_steps: cfg.warmup_epochs as u64 * steps_per_epoch,
        total_steps: cfg.epochs as u64 * steps_per_epoch,
    };
    let init_seed = seed::derive(cfg.seed, &[seed::stream::INIT]);
    let val_seed = seed::derive(cfg.seed, &[seed::stream::EVAL]);

    let (mut model, mut adam, mut state) = if let Some(dir) = &opts.resume_from {
        let (model, adam, state) = load_checkpoint(dir, cfg)?;
        if state.run != *run {
            return Err(TrainError::ResumeMismatch(config_diff(&state.run, run)));
        }
        if model.config != model_cfg {
            return Err(TrainError::ResumeMismatch("checkpoint model config differs from [model]".into()));
        }
        log::info!("resuming after epoch {} from {}", state.epochs_done, dir.display());
        (model, adam, state)
    } else {
        let model = match &cfg.init_from {
            Some(dir) => {
                let (m, _) = Checkpoint::new(dir).load::<f32>()?;
                if m.config != model_cfg {
                    return Err(TrainError::Config(format!(
                        "init_from {} holds a different model config",
                        dir.display()
                    )));
                }
                m
            }
            None => Model::init(model_cfg.clone(), init_seed)?,
        };
        let adam = AdamW::for_params(cfg.adamw(), model.params.tensors());
        let mut events = Vec::new();
        if cfg.grad_clip > 0.0 {
            events.push(format!("gradient clipping at global norm {}", cfg.grad_clip));
        }
        if cfg.phase == Phase::Finetune {
            events.push(format!("finetune at constant lr {}", cfg.peak_lr));
        }
        let state = TrainerState {
            epochs_done: 0,
            step: 0,
            adam_t: 0,
            skipped_steps: 0,
            best_score: None,
            best_epoch: None,
            events,
            metrics: Vec::new(),
            run: run.clone(),
        };
        (model, adam, state)
    };

    fs::create_dir_all(out_dir).map_err(io(out_dir))?;
    let mut manifest = RunManifest {
        code_version: format!("mambaeye {}", env!("CARGO_PKG_VERSION")),
        init_seed,
        train_seed: cfg.seed,
        data_seed: run.data.seed,
        val_seed,
        train_hash: train_set.content_hash(),
        val_hash: val_set.map(Dataset::content_hash),
        train_samples: n,
        val_samples: val_set.map_or(0, Dataset::len),
        steps_per_epoch,
        total_steps: sched.total_steps,
        head_input: "rms_norm(z_L)".into(),
        move_encoding: format!(
            "interleaved sin/cos of raw pixel deltas, base {}, x then y",
            model_cfg.freq_base
        ),
        events: Vec::new(),
        metrics: Vec::new(),
        run: run.clone(),
    };

    let micro = cfg.batch_size / cfg.accum_steps;
    for epoch in state.epochs_done..cfg.epochs {
        if opts.stop_after_epoch.is_some_and(|s| state.epochs_done >= s) {
            break;
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut seed::rng(cfg.seed, &[seed::stream::SHUFFLE, epoch as u64]));
        let (mut loss_sum, mut correct, mut seen) = (0.0f64, 0usize, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            let mut acc = model.params.zeros_like();
            let mut finite = true;
            for mb in batch.chunks(micro) {
                let results: Vec<Option<SampleGrad>> = mb
                    .par_iter()
                    .map(|&i| {
                        sample_grad(
                            &model,
                            &train_set.images[i],
                            train_set.labels[i],
                            cfg,
                            &loss_cfg,
                            sample_seed(cfg, epoch, i),
                        )
                    })
                    .collect::<Result<_, _>>()?;
                for r in results {
                    match r {
                        Some(s) => {
                            loss_sum += s.loss;
                            correct += usize::from(s.correct);
                            seen += 1;
                            for (a, g) in acc.iter_mut().zip(&s.grads) {
                                a.data_mut().iter_mut().zip(g.data()).for_each(|(a, &g)| *a += g);
                            }
                        }
                        None => finite = false,
                    }
                }
            }
            let inv = 1.0 / batch.len() as f32;
            acc.iter_mut().for_each(|a| a.data_mut().iter_mut().for_each(|v| *v *= inv));
            if !finite {
                acc[0].data_mut()[0] = f32::NAN;
            }
            if cfg.grad_clip > 0.0 {
                clip_global_norm(&mut acc, cfg.grad_clip);
            }
            let lr = lr_at(state.step, &sched);
            if adam.step(model.params.tensors_mut(), &acc, lr)? == StepOutcome::SkippedNonFinite {
                let msg = format!("epoch {epoch} step {}: non-finite gradient, update skipped", state.step);
                log::warn!("{msg}");
                state.events.push(msg);
                state.skipped_steps += 1;
            }
            state.step += 1;
        }
        let seen_f = seen.max(1) as f64;
        state.metrics.push(MetricRow {
            epoch: epoch + 1,
            split: "train".into(),
            loss: loss_sum / seen_f,
            acc: correct as f64 / seen_f,
        });
        let mut score = -(loss_sum / seen_f);
        if let Some(val) = val_set {
            let r = evaluate_split(
                &model,
                val,
                cfg.val_resolution,
                cfg.val_policy,
                val_seed,
                cfg.val_t,
                &[cfg.val_t],
                cfg.val_mode,
                Some(cfg.loss),
            )?;
            score = r.top1[0];
            state.metrics.push(MetricRow {
                epoch: epoch + 1,
                split: "val".into(),
                loss: r.mean_loss.unwrap_or(f64::NAN),
                acc: r.top1[0],
            });
        }
        state.epochs_done = epoch + 1;
        state.adam_t = adam.t;
        let improved = state.best_score.is_none_or(|b| score > b);
        if improved {
            state.best_score = Some(score);
            state.best_epoch = Some(epoch + 1);
        }
        log::info!(
            "epoch {}/{}: {}",
            epoch + 1,
            cfg.epochs,
            state
                .metrics
                .iter()
                .filter(|r| r.epoch == epoch + 1)
                .map(|r| format!("{} loss {:.4} acc {:.4}", r.split, r.loss, r.acc))
                .collect::<Vec<_>>()
                .join(", ")
        );
        save_checkpoint(&out_dir.join("last"), &model, &adam, &state)?;
        if improved {
            save_checkpoint(&out_dir.join("best"), &model, &adam, &state)?;
        }
        let metrics_path = out_dir.join("metrics.csv");
        fs::write(&metrics_path, render_metrics(&state.metrics)).map_err(io(&metrics_path))?;
        manifest.events = state.events.clone();
        manifest.metrics = state.metrics.clone();
        write_toml(&out_dir.join("run_manifest.toml"), &manifest)?;
    }
    Ok(TrainSummary {
        model,
        state,
        out_dir: out_dir.to_path_buf(),
    })
}
