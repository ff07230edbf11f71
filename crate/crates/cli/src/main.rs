use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use mambaeye::eval::{
    ablate_loss, ablate_scan, emit_report, evaluate, power_of_two_probes, write_loss_ablation, write_scan_ablation,
    EvalJob, ExecMode,
};
use mambaeye::model::{Checkpoint, ModelConfig};
use mambaeye::patchio::{Dataset, PolicyKind};
use mambaeye::trainer::{train, RunConfig, TrainOptions};
use mambaeye::Model32;

#[derive(Parser)]
#[command(name = "mambaeye", version, about = "Train and evaluate glimpse-sequence classifiers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train from a run config (`[model]`, `[data]`, `[train]` sections).
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Continue from a checkpoint directory written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Overrides `train.seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Stop once this many epochs are done.
        #[arg(long)]
        stop_after: Option<usize>,
    },
    /// Accuracy-vs-steps curves per resolution and scan policy.
    Eval {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// TOML eval job; when given, the curve flags below are ignored.
        #[arg(long)]
        job: Option<PathBuf>,
        #[arg(long, default_value = "curve")]
        name: String,
        #[arg(long, value_delimiter = ',', default_values_t = [32usize, 64, 128])]
        resolutions: Vec<usize>,
        #[arg(long, default_value_t = 1024)]
        t_max: usize,
        #[arg(long, value_delimiter = ',', default_values = ["random-image"])]
        policies: Vec<String>,
        /// Defaults to powers of two up to `t_max`.
        #[arg(long, value_delimiter = ',')]
        probes: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_values_t = [0u64, 1, 2])]
        seeds: Vec<u64>,
        #[arg(long, value_enum, default_value_t = Mode::Recurrent)]
        mode: Mode,
    },
    /// Random vs raster vs zigzag scanning at a fixed step budget.
    AblateScan {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Output CSV; per-step curves go next to it.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = [32usize, 64, 128])]
        resolutions: Vec<usize>,
        #[arg(long, default_value_t = 512)]
        t: usize,
        #[arg(long, value_delimiter = ',', default_values_t = [0u64, 1, 2])]
        seeds: Vec<u64>,
        #[arg(long, value_enum, default_value_t = Mode::Recurrent)]
        mode: Mode,
    },
    /// Scheduled-loss vs standard cross-entropy checkpoints.
    AblateLoss {
        #[command(flatten)]
        data: DataArgs,
        /// One checkpoint per training seed.
        #[arg(long, value_delimiter = ',', required = true)]
        scheduled: Vec<PathBuf>,
        #[arg(long, value_delimiter = ',', required = true)]
        standard: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = [32usize])]
        resolutions: Vec<usize>,
        #[arg(long, default_value_t = 256)]
        t: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = Mode::Recurrent)]
        mode: Mode,
    },
    /// Analytic FLOP counts per preset.
    Flops {
        /// Preset name; all presets when omitted.
        #[arg(long)]
        preset: Option<String>,
        #[arg(long, value_delimiter = ',', default_values_t = [1024usize, 4096])]
        t: Vec<usize>,
    },
    /// Runs the oracle suite; exits nonzero if any check fails.
    Selfcheck,
}

#[derive(Args)]
struct DataArgs {
    /// Run config whose `[data]` section names the dataset.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Split::Val)]
    split: Split,
    /// Evaluate on at most this many samples.
    #[arg(long)]
    max_samples: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Split {
    Train,
    Val,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Recurrent,
    Parallel,
}

impl From<Mode> for ExecMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Recurrent => ExecMode::Recurrent,
            Mode::Parallel => ExecMode::Parallel,
        }
    }
}

/// Inputs and dataset identity of an evaluation, written beside its CSVs.
#[derive(Serialize)]
struct EvalManifest<'a> {
    code_version: &'static str,
    command: &'a str,
    checkpoints: Vec<String>,
    checkpoint_seeds: Vec<u64>,
    dataset_hash: String,
    samples: usize,
    data: &'a mambaeye::trainer::DataConfig,
    split: &'a str,
    settings: BTreeMap<String, String>,
}

fn load_data(args: &DataArgs) -> Result<(Dataset, RunConfig)> {
    let run = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let (train_set, val_set) = run.data.load()?;
    let data = match args.split {
        Split::Train => train_set,
        Split::Val => val_set.context("config has val_size = 0; use --split train")?,
    };
    let data = match args.max_samples {
        Some(n) => data.take(n),
        None => data,
    };
    Ok((data, run))
}

fn load_model(dir: &Path) -> Result<(Model32, u64)> {
    let (m, manifest) = Checkpoint::new(dir)
        .load::<f32>()
        .with_context(|| format!("loading checkpoint {}", dir.display()))?;
    Ok((m, manifest.seed))
}

fn write_manifest(path: &Path, m: &EvalManifest) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, toml::to_string(m)?).with_context(|| path.display().to_string())
}

fn parse_policies(names: &[String]) -> Result<Vec<PolicyKind>> {
    names.iter().map(|s| Ok(s.parse::<PolicyKind>()?)).collect()
}

fn cmd_train(config: &Path, out: &Path, resume: Option<PathBuf>, seed: Option<u64>, stop_after: Option<usize>) -> Result<()> {
    let mut run = RunConfig::load(config)?;
    if let Some(s) = seed {
        run.train.seed = s;
    }
    let s = train(
        &run,
        out,
        &TrainOptions {
            resume_from: resume,
            stop_after_epoch: stop_after,
        },
    )?;
    for r in &s.state.metrics {
        println!("epoch {:>3} {:<5} loss {:.4} acc {:.4}", r.epoch, r.split, r.loss, r.acc);
    }
    if s.state.skipped_steps > 0 {
        println!("{} optimizer steps skipped (non-finite gradients)", s.state.skipped_steps);
    }
    println!("checkpoints and metrics.csv written to {}", out.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_eval(
    data_args: &DataArgs,
    checkpoint: &Path,
    out: &Path,
    job_file: Option<&Path>,
    name: String,
    resolutions: Vec<usize>,
    t_max: usize,
    policies: &[String],
    probes: Vec<usize>,
    seeds: Vec<u64>,
    mode: Mode,
) -> Result<()> {
    let (data, run) = load_data(data_args)?;
    let (model, ck_seed) = load_model(checkpoint)?;
    let job = match job_file {
        Some(p) => toml::from_str::<EvalJob>(&std::fs::read_to_string(p)?)?,
        None => EvalJob {
            name,
            resolutions,
            t_max,
            policies: parse_policies(policies)?,
            probes: if probes.is_empty() { power_of_two_probes(t_max) } else { probes },
            seeds,
            mode: mode.into(),
            max_samples: None,
        },
    };
    let table = evaluate(&model, &data, &job)?;
    let written = emit_report(&table, out)?;
    for p in &table.points {
        println!(
            "res {:>4} {:<18} t {:>5}  top1 {:.4} ± {:.4}  r {:.3}",
            p.resolution, p.policy, p.t, p.top1, p.top1_stderr, p.mean_ratio
        );
    }
    let mut settings = BTreeMap::new();
    settings.insert("job".into(), toml::to_string(&job)?);
    write_manifest(
        &out.join(format!("{}_manifest.toml", job.name)),
        &EvalManifest {
            code_version: env!("CARGO_PKG_VERSION"),
            command: "eval",
            checkpoints: vec![checkpoint.display().to_string()],
            checkpoint_seeds: vec![ck_seed],
            dataset_hash: data.content_hash(),
            samples: data.len(),
            data: &run.data,
            split: split_name(data_args.split),
            settings,
        },
    )?;
    println!("{} report files in {}", written.len(), out.display());
    Ok(())
}

fn split_name(s: Split) -> &'static str {
    match s {
        Split::Train => "train",
        Split::Val => "val",
    }
}

fn cmd_ablate_scan(
    data_args: &DataArgs,
    checkpoint: &Path,
    out: &Path,
    resolutions: &[usize],
    t: usize,
    seeds: &[u64],
    mode: Mode,
) -> Result<()> {
    let (data, run) = load_data(data_args)?;
    let (model, ck_seed) = load_model(checkpoint)?;
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("scan").to_string();
    let ab = ablate_scan(&model, &data, resolutions, t, seeds, mode.into(), &stem)?;
    write_scan_ablation(out, &ab.rows)?;
    let curves_dir = out.parent().unwrap_or(Path::new(".")).join(format!("{stem}_curves"));
    emit_report(&ab.curves, &curves_dir)?;
    for r in &ab.rows {
        println!("{:<18} res {:>4} T {:>5}  top1 {:.4} ± {:.4} ({} seeds)", r.label, r.resolution, r.t, r.top1, r.top1_stderr, r.seeds);
    }
    let mut settings = BTreeMap::new();
    settings.insert("resolutions".into(), format!("{resolutions:?}"));
    settings.insert("t".into(), t.to_string());
    settings.insert("seeds".into(), format!("{seeds:?}"));
    write_manifest(
        &out.with_extension("manifest.toml"),
        &EvalManifest {
            code_version: env!("CARGO_PKG_VERSION"),
            command: "ablate-scan",
            checkpoints: vec![checkpoint.display().to_string()],
            checkpoint_seeds: vec![ck_seed],
            dataset_hash: data.content_hash(),
            samples: data.len(),
            data: &run.data,
            split: split_name(data_args.split),
            settings,
        },
    )?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_ablate_loss(
    data_args: &DataArgs,
    scheduled: &[PathBuf],
    standard: &[PathBuf],
    out: &Path,
    resolutions: &[usize],
    t: usize,
    seed: u64,
    mode: Mode,
) -> Result<()> {
    let (data, run) = load_data(data_args)?;
    let load_all = |dirs: &[PathBuf]| -> Result<Vec<(Model32, u64)>> { dirs.iter().map(|d| load_model(d)).collect() };
    let (sched, std_ce) = (load_all(scheduled)?, load_all(standard)?);
    let models = |v: &[(Model32, u64)]| v.iter().map(|(m, _)| m.clone()).collect::<Vec<_>>();
    let rows = ablate_loss(&models(&sched), &models(&std_ce), &data, resolutions, t, seed, mode.into())?;
    write_loss_ablation(out, &rows)?;
    for r in &rows {
        println!("{:<12} res {:>4} T {:>5}  top1 {:.4} ± {:.4} ({} seeds)", r.label, r.resolution, r.t, r.top1, r.top1_stderr, r.seeds);
    }
    let mut settings = BTreeMap::new();
    settings.insert("resolutions".into(), format!("{resolutions:?}"));
    settings.insert("t".into(), t.to_string());
    settings.insert("eval_seed".into(), seed.to_string());
    write_manifest(
        &out.with_extension("manifest.toml"),
        &EvalManifest {
            code_version: env!("CARGO_PKG_VERSION"),
            command: "ablate-loss",
            checkpoints: scheduled.iter().chain(standard).map(|p| p.display().to_string()).collect(),
            checkpoint_seeds: sched.iter().chain(&std_ce).map(|(_, s)| *s).collect(),
            dataset_hash: data.content_hash(),
            samples: data.len(),
            data: &run.data,
            split: split_name(data_args.split),
            settings,
        },
    )?;
    Ok(())
}

fn cmd_flops(preset: Option<&str>, ts: &[usize]) -> Result<()> {
    let names: Vec<&str> = match preset {
        Some(p) => vec![p],
        None => ModelConfig::PRESETS.to_vec(),
    };
    print!("{:<8} {:>12} {:>14}", "preset", "params", "flops/step");
    for t in ts {
        print!(" {:>16}", format!("T={t}"));
    }
    if ts.len() >= 2 {
        print!(" {:>10}", "ratio");
    }
    println!();
    for name in names {
        let Some(cfg) = ModelConfig::preset(name) else {
            bail!("unknown preset `{name}` (known: {})", ModelConfig::PRESETS.join(", "));
        };
        let counts = ts.iter().map(|&t| cfg.count_flops(t)).collect::<Result<Vec<_>, _>>()?;
        print!("{:<8} {:>12} {:>14}", cfg.name, cfg.param_count(), cfg.step_flops());
        for c in &counts {
            print!(" {c:>16}");
        }
        if counts.len() >= 2 {
            print!(" {:>10.4}", counts[counts.len() - 1] as f64 / counts[0] as f64);
        }
        println!();
    }
    Ok(())
}

fn cmd_selfcheck() -> bool {
    let checks = mambaeye::selfcheck::run_all();
    for c in &checks {
        println!("[{}] {:<24} {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    println!("{} of {} checks passed", checks.len() - failed, checks.len());
    failed == 0
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train {
            config,
            out,
            resume,
            seed,
            stop_after,
        } => cmd_train(&config, &out, resume, seed, stop_after),
        Command::Eval {
            data,
            checkpoint,
            out,
            job,
            name,
            resolutions,
            t_max,
            policies,
            probes,
            seeds,
            mode,
        } => cmd_eval(
            &data,
            &checkpoint,
            &out,
            job.as_deref(),
            name,
            resolutions,
            t_max,
            &policies,
            probes,
            seeds,
            mode,
        ),
        Command::AblateScan {
            data,
            checkpoint,
            out,
            resolutions,
            t,
            seeds,
            mode,
        } => cmd_ablate_scan(&data, &checkpoint, &out, &resolutions, t, &seeds, mode),
        Command::AblateLoss {
            data,
            scheduled,
            standard,
            out,
            resolutions,
            t,
            seed,
            mode,
        } => cmd_ablate_loss(&data, &scheduled, &standard, &out, &resolutions, t, seed, mode),
        Command::Flops { preset, t } => cmd_flops(preset.as_deref(), &t),
        Command::Selfcheck => {
            return if cmd_selfcheck() {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
