use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::{AblationRow, CurvePoint, CurveTable, EvalError};
use crate::patchio::PolicyKind;

pub const LOSS_ABLATION_HEADER: &str = "loss_mode,resolution,T,top1";

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> EvalError + '_ {
    move |source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn curve_file_stem(job: &str, policy: PolicyKind, resolution: usize) -> String {
    format!("{job}_{policy}_{resolution}")
}

/// Line plot of top-1 against `t`, one series.
pub fn render_svg(title: &str, points: &[(f64, f64)]) -> String {
    let (w, h, m) = (480.0, 320.0, 48.0);
    let t_max = points.iter().map(|p| p.0).fold(1.0, f64::max);
    let sx = |t: f64| m + (w - 2.0 * m) * if t_max > 1.0 { (t - 1.0) / (t_max - 1.0) } else { 0.5 };
    let sy = |a: f64| h - m - (h - 2.0 * m) * a;
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="20" font-size="13" text-anchor="middle">{title}</text>"#, w / 2.0);
    let _ = writeln!(
        s,
        r#"<line x1="{m}" y1="{}" x2="{}" y2="{}" stroke="black"/><line x1="{m}" y1="{m}" x2="{m}" y2="{}" stroke="black"/>"#,
        h - m,
        w - m,
        h - m,
        h - m
    );
    for tick in [0.0, 0.5, 1.0] {
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{:.1}" font-size="10" text-anchor="end">{tick:.1}</text>"#,
            m - 4.0,
            sy(tick) + 3.0
        );
    }
    let _ = writeln!(s, r#"<text x="{m}" y="{}" font-size="10">1</text>"#, h - m + 14.0);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" font-size="10" text-anchor="end">{t_max}</text>"#,
        w - m,
        h - m + 14.0
    );
    let _ = writeln!(s, r#"<text x="{}" y="{}" font-size="12" text-anchor="middle">t</text>"#, w / 2.0, h - 10.0);
    let _ = writeln!(
        s,
        r#"<text x="14" y="{}" font-size="12" text-anchor="middle" transform="rotate(-90 14 {})">top-1</text>"#,
        h / 2.0,
        h / 2.0
    );
    let coords: Vec<String> = points.iter().map(|&(t, a)| format!("{:.2},{:.2}", sx(t), sy(a))).collect();
    if coords.len() > 1 {
        let _ = writeln!(s, r#"<polyline fill="none" stroke="steelblue" stroke-width="1.5" points="{}"/>"#, coords.join(" "));
    }
    for &(t, a) in points {
        let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="steelblue"/>"#, sx(t), sy(a));
    }
    s.push_str("</svg>\n");
    s
}

/// One CSV and one SVG per `(policy, resolution)` curve; returns written paths.
pub fn emit_report(table: &CurveTable, out_dir: &Path) -> Result<Vec<PathBuf>, EvalError> {
    if table.points.is_empty() {
        return Err(EvalError::Empty(format!("job {} has no curve points", table.job)));
    }
    fs::create_dir_all(out_dir).map_err(io(out_dir))?;
    let mut groups: BTreeMap<(String, usize), Vec<&CurvePoint>> = BTreeMap::new();
    for p in &table.points {
        groups.entry((p.policy.as_str().to_string(), p.resolution)).or_default().push(p);
    }
    let mut written = Vec::new();
    for ((_, res), pts) in groups {
        let stem = curve_file_stem(&table.job, pts[0].policy, res);
        let mut csv = String::from("t,top1,top1_stderr,mean_ratio,seeds\n");
        for p in &pts {
            let _ = writeln!(csv, "{},{:.6},{:.6},{:.6},{}", p.t, p.top1, p.top1_stderr, p.mean_ratio, p.seeds);
        }
        let csv_path = out_dir.join(format!("{stem}.csv"));
        fs::write(&csv_path, csv).map_err(io(&csv_path))?;
        let series: Vec<(f64, f64)> = pts.iter().map(|p| (p.t as f64, p.top1)).collect();
        let svg_path = out_dir.join(format!("{stem}.svg"));
        fs::write(&svg_path, render_svg(&stem, &series)).map_err(io(&svg_path))?;
        written.push(csv_path);
        written.push(svg_path);
    }
    Ok(written)
}

fn write_rows(path: &Path, header: &str, rows: &[AblationRow]) -> Result<(), EvalError> {
    if rows.is_empty() {
        return Err(EvalError::Empty(format!("no rows for {}", path.display())));
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io(dir))?;
    }
    let mut csv = format!("{header}\n");
    for r in rows {
        let _ = writeln!(csv, "{},{},{},{:.6}", r.label, r.resolution, r.t, r.top1);
    }
    fs::write(path, csv).map_err(io(path))?;
    let summary = path.with_extension("summary.csv");
    let mut s = format!("{header},top1_stderr,seeds\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{:.6},{:.6},{}", r.label, r.resolution, r.t, r.top1, r.top1_stderr, r.seeds);
    }
    fs::write(&summary, s).map_err(io(&summary))
}

/// `policy,resolution,T,top1` plus a `.summary.csv` with std-err and seed count.
pub fn write_scan_ablation(path: &Path, rows: &[AblationRow]) -> Result<(), EvalError> {
    write_rows(path, "policy,resolution,T,top1", rows)
}

/// `loss_mode,resolution,T,top1` plus a `.summary.csv` with std-err and seed count.
pub fn write_loss_ablation(path: &Path, rows: &[AblationRow]) -> Result<(), EvalError> {
    write_rows(path, LOSS_ABLATION_HEADER, rows)
}
