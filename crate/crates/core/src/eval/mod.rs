//! Accuracy-vs-steps evaluation, scan and loss ablations, report emission.

mod report;

use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use report::{
    curve_file_stem, emit_report, render_svg, write_loss_ablation, write_scan_ablation, LOSS_ABLATION_HEADER,
};

use crate::losses::{row_loss, LossConfig, LossError, LossMode};
use crate::model::{argmax, Model, ModelError};
use crate::patchio::{Dataset, PatchIoError, PolicyKind, ScanPolicy, Trajectory};
use crate::pipeline::{eval_canvas, eval_sample_seed};
use crate::scalar::Scalar;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("invalid eval job: {0}")]
    Job(String),
    #[error("probe {probe} exceeds T_max {t_max}")]
    ProbeBeyondTMax { probe: usize, t_max: usize },
    #[error("checkpoint configs differ: {0}")]
    ConfigMismatch(String),
    #[error("nothing to report: {0}")]
    Empty(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    PatchIo(#[from] PatchIoError),
    #[error(transparent)]
    Loss(#[from] LossError),
}

/// Which execution path produces the logits. Both give the same numbers up
/// to float reassociation; parallel is faster, recurrent uses O(1) memory in T.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExecMode {
    Recurrent,
    Parallel,
}

impl std::str::FromStr for ExecMode {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, EvalError> {
        match s {
            "recurrent" => Ok(ExecMode::Recurrent),
            "parallel" => Ok(ExecMode::Parallel),
            other => Err(EvalError::Job(format!("unknown execution mode `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalJob {
    pub name: String,
    pub resolutions: Vec<usize>,
    pub t_max: usize,
    pub policies: Vec<PolicyKind>,
    /// 1-based step counts at which accuracy is recorded.
    pub probes: Vec<usize>,
    pub seeds: Vec<u64>,
    pub mode: ExecMode,
    pub max_samples: Option<usize>,
}

impl EvalJob {
    /// Sorted, deduplicated probes after validation.
    pub fn checked_probes(&self) -> Result<Vec<usize>, EvalError> {
        if self.probes.is_empty() {
            return Err(EvalError::Job("empty probe list".into()));
        }
        if self.t_max == 0 {
            return Err(EvalError::Job("T_max must be positive".into()));
        }
        let mut p = self.probes.clone();
        p.sort_unstable();
        p.dedup();
        if p[0] == 0 {
            return Err(EvalError::Job("probes count steps from 1".into()));
        }
        if let Some(&last) = p.last().filter(|&&l| l > self.t_max) {
            return Err(EvalError::ProbeBeyondTMax {
                probe: last,
                t_max: self.t_max,
            });
        }
        Ok(p)
    }

    fn validate(&self) -> Result<Vec<usize>, EvalError> {
        let probes = self.checked_probes()?;
        if self.resolutions.is_empty() || self.resolutions.contains(&0) {
            return Err(EvalError::Job("need at least one positive resolution".into()));
        }
        if self.policies.is_empty() {
            return Err(EvalError::Job("need at least one scan policy".into()));
        }
        if self.seeds.is_empty() {
            return Err(EvalError::Job("need at least one seed".into()));
        }
        Ok(probes)
    }
}

/// Powers of two up to and including `t_max` (plus `t_max` itself).
pub fn power_of_two_probes(t_max: usize) -> Vec<usize> {
    let mut p: Vec<usize> = std::iter::successors(Some(1usize), |&v| v.checked_mul(2))
        .take_while(|&v| v <= t_max)
        .collect();
    if p.last() != Some(&t_max) && t_max > 0 {
        p.push(t_max);
    }
    p
}

/// Outcome of one sequence at each probe.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleOutcome {
    pub correct: Vec<bool>,
    pub ratio: Vec<f64>,
    /// Mean per-step loss over all steps, when requested.
    pub loss: Option<f64>,
    /// Probes whose argmax was a tie.
    pub ties: usize,
}

/// Runs one image through the model for `t_max` steps.
#[allow(clippy::too_many_arguments)]
pub fn run_sample<F: Scalar>(
    model: &Model<F>,
    image: &crate::patchio::Image,
    label: usize,
    resolution: usize,
    policy: PolicyKind,
    sample_seed: u64,
    t_max: usize,
    probes: &[usize],
    mode: ExecMode,
    loss: Option<LossMode>,
) -> Result<SampleOutcome, EvalError> {
    let canvas = eval_canvas(image, resolution)?;
    let patch = model.config.patch;
    let mut traj = Trajectory::new(&canvas, ScanPolicy::new(policy, sample_seed), t_max, patch)?;
    let loss_cfg = loss.map(|m| LossConfig::new(m, model.config.classes)).transpose()?;
    let mut out = SampleOutcome {
        correct: Vec::with_capacity(probes.len()),
        ratio: Vec::with_capacity(probes.len()),
        loss: None,
        ties: 0,
    };
    let mut total_loss = 0.0;
    let mut next_probe = 0;
    let mut record = |t: usize, row: &[F], r: f64, out: &mut SampleOutcome| -> Result<(), EvalError> {
        if let Some(c) = &loss_cfg {
            total_loss += row_loss(row, r, label, c)?.as_f64();
        }
        if next_probe < probes.len() && probes[next_probe] == t {
            let best = argmax(row);
            if row.iter().filter(|&&v| v == row[best]).count() > 1 {
                out.ties += 1;
            }
            out.correct.push(best == label);
            out.ratio.push(r);
            next_probe += 1;
        }
        Ok(())
    };
    match mode {
        ExecMode::Recurrent => {
            let mut state = model.init_state();
            let mut buf = vec![0.0f32; model.config.d_image()];
            let mut t = 0;
            while let Some((mv, r, _)) = traj.next_into(&mut buf) {
                t += 1;
                let logits = model.step(&buf, mv, &mut state)?;
                record(t, &logits, r, &mut out)?;
            }
        }
        ExecMode::Parallel => {
            let glimpses: Vec<_> = traj.collect();
            let trace = model.forward_sequence(&glimpses)?;
            for (i, &r) in trace.ratios.iter().enumerate() {
                record(i + 1, trace.logits.row(i), r, &mut out)?;
            }
        }
    }
    if loss_cfg.is_some() {
        out.loss = Some(total_loss / t_max as f64);
    }
    Ok(out)
}

/// Accuracy and coverage per probe for one `(resolution, policy, seed)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitResult {
    pub top1: Vec<f64>,
    pub mean_ratio: Vec<f64>,
    pub mean_loss: Option<f64>,
    pub ties: usize,
}

#[allow(clippy::too_many_arguments)]
pub fn evaluate_split<F: Scalar>(
    model: &Model<F>,
    data: &Dataset,
    resolution: usize,
    policy: PolicyKind,
    seed: u64,
    t_max: usize,
    probes: &[usize],
    mode: ExecMode,
    loss: Option<LossMode>,
) -> Result<SplitResult, EvalError> {
    if data.is_empty() {
        return Err(EvalError::Job("empty dataset".into()));
    }
    let outcomes: Vec<SampleOutcome> = (0..data.len())
        .into_par_iter()
        .map(|i| {
            run_sample(
                model,
                &data.images[i],
                data.labels[i],
                resolution,
                policy,
                eval_sample_seed(seed, i),
                t_max,
                probes,
                mode,
                loss,
            )
        })
        .collect::<Result<_, _>>()?;
    let n = outcomes.len() as f64;
    let mut top1 = vec![0.0; probes.len()];
    let mut mean_ratio = vec![0.0; probes.len()];
    let mut ties = 0;
    let mut loss_sum = 0.0;
    for o in &outcomes {
        for (j, (&c, &r)) in o.correct.iter().zip(&o.ratio).enumerate() {
            top1[j] += f64::from(u8::from(c));
            mean_ratio[j] += r;
        }
        ties += o.ties;
        loss_sum += o.loss.unwrap_or(0.0);
    }
    for v in top1.iter_mut().chain(mean_ratio.iter_mut()) {
        *v /= n;
    }
    if ties > 0 {
        log::info!("{ties} argmax ties at res {resolution} policy {policy} seed {seed}; lowest class index taken");
    }
    Ok(SplitResult {
        top1,
        mean_ratio,
        mean_loss: loss.map(|_| loss_sum / n),
        ties,
    })
}

/// Mean and standard error of the mean (0 for a single value).
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub resolution: usize,
    pub policy: PolicyKind,
    pub t: usize,
    pub top1: f64,
    pub top1_stderr: f64,
    pub mean_ratio: f64,
    pub seeds: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CurveTable {
    pub job: String,
    pub points: Vec<CurvePoint>,
    pub ties: usize,
}

impl CurveTable {
    pub fn curve(&self, resolution: usize, policy: PolicyKind) -> Vec<&CurvePoint> {
        self.points
            .iter()
            .filter(|p| p.resolution == resolution && p.policy == policy)
            .collect()
    }
}

pub fn evaluate<F: Scalar>(model: &Model<F>, data: &Dataset, job: &EvalJob) -> Result<CurveTable, EvalError> {
    let probes = job.validate()?;
    let data = match job.max_samples {
        Some(n) => data.take(n),
        None => data.clone(),
    };
    let mut points = Vec::new();
    let mut ties = 0;
    for &res in &job.resolutions {
        for &policy in &job.policies {
            let mut per_seed = Vec::with_capacity(job.seeds.len());
            for &seed in &job.seeds {
                let r = evaluate_split(model, &data, res, policy, seed, job.t_max, &probes, job.mode, None)?;
                ties += r.ties;
                per_seed.push(r);
            }
            for (j, &t) in probes.iter().enumerate() {
                let accs: Vec<f64> = per_seed.iter().map(|r| r.top1[j]).collect();
                let ratios: Vec<f64> = per_seed.iter().map(|r| r.mean_ratio[j]).collect();
                let (top1, top1_stderr) = mean_stderr(&accs);
                points.push(CurvePoint {
                    resolution: res,
                    policy,
                    t,
                    top1,
                    top1_stderr,
                    mean_ratio: mean_stderr(&ratios).0,
                    seeds: job.seeds.len(),
                });
            }
        }
    }
    Ok(CurveTable {
        job: job.name.clone(),
        points,
        ties,
    })
}

pub const SCAN_POLICIES: [PolicyKind; 3] = [
    PolicyKind::RandomImage,
    PolicyKind::RasterHorizontal,
    PolicyKind::ZigzagHorizontal,
];

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub label: String,
    pub resolution: usize,
    pub t: usize,
    pub top1: f64,
    pub top1_stderr: f64,
    pub seeds: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScanAblation {
    pub rows: Vec<AblationRow>,
    /// Full per-step accuracy curves (`t = 1..=T`) behind the rows.
    pub curves: CurveTable,
}

impl ScanAblation {
    pub fn row(&self, policy: PolicyKind, resolution: usize) -> Option<&AblationRow> {
        self.rows
            .iter()
            .find(|r| r.label == policy.as_str() && r.resolution == resolution)
    }

    /// Accuracy at every step for one policy and resolution.
    pub fn trace(&self, policy: PolicyKind, resolution: usize) -> Vec<f64> {
        self.curves.curve(resolution, policy).iter().map(|p| p.top1).collect()
    }
}

/// Fixed-pattern vs random scanning at each resolution.
pub fn ablate_scan<F: Scalar>(
    model: &Model<F>,
    data: &Dataset,
    resolutions: &[usize],
    t: usize,
    seeds: &[u64],
    mode: ExecMode,
    name: &str,
) -> Result<ScanAblation, EvalError> {
    let job = EvalJob {
        name: name.into(),
        resolutions: resolutions.to_vec(),
        t_max: t,
        policies: SCAN_POLICIES.to_vec(),
        probes: (1..=t).collect(),
        seeds: seeds.to_vec(),
        mode,
        max_samples: None,
    };
    let curves = evaluate(model, data, &job)?;
    let rows = curves
        .points
        .iter()
        .filter(|p| p.t == t)
        .map(|p| AblationRow {
            label: p.policy.as_str().into(),
            resolution: p.resolution,
            t,
            top1: p.top1,
            top1_stderr: p.top1_stderr,
            seeds: p.seeds,
        })
        .collect();
    Ok(ScanAblation { rows, curves })
}

/// Scheduled-loss vs standard-CE checkpoints, one model per training seed on each side.
pub fn ablate_loss<F: Scalar>(
    scheduled: &[Model<F>],
    standard: &[Model<F>],
    data: &Dataset,
    resolutions: &[usize],
    t: usize,
    eval_seed: u64,
    mode: ExecMode,
) -> Result<Vec<AblationRow>, EvalError> {
    let first = scheduled
        .first()
        .or(standard.first())
        .ok_or_else(|| EvalError::Job("no checkpoints given".into()))?;
    if scheduled.is_empty() || standard.is_empty() {
        return Err(EvalError::Job("both loss modes need at least one checkpoint".into()));
    }
    for m in scheduled.iter().chain(standard) {
        if m.config != first.config {
            return Err(EvalError::ConfigMismatch(format!("{} vs {}", m.config.name, first.config.name)));
        }
    }
    let mut rows = Vec::new();
    for &res in resolutions {
        for (mode_name, models) in [(LossMode::Scheduled, scheduled), (LossMode::StandardCe, standard)] {
            let accs = models
                .iter()
                .map(|m| {
                    evaluate_split(m, data, res, PolicyKind::RandomImage, eval_seed, t, &[t], mode, None).map(|r| r.top1[0])
                })
                .collect::<Result<Vec<_>, _>>()?;
            let (top1, top1_stderr) = mean_stderr(&accs);
            rows.push(AblationRow {
                label: mode_name.as_str().into(),
                resolution: res,
                t,
                top1,
                top1_stderr,
                seeds: accs.len(),
            });
        }
    }
    Ok(rows)
}
