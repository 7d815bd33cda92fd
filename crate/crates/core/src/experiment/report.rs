use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::RunStore;
use crate::error::{Error, Result};
use crate::stability::compute_edf;

const PALETTE: [&str; 10] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
];
const W: f64 = 640.0;
const H: f64 = 400.0;
const MARGIN: (f64, f64, f64, f64) = (60.0, 170.0, 40.0, 50.0); // left, right, top, bottom

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ReportSummary {
    pub files: Vec<PathBuf>,
    pub edf_groups: usize,
    pub curve_runs: usize,
}

struct Series {
    label: String,
    points: Vec<(f64, f64)>,
}

fn nice_ticks(lo: f64, hi: f64) -> Vec<f64> {
    let span = (hi - lo).max(1e-12);
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * mag).find(|s| span / s <= 6.0).unwrap_or(10.0 * mag);
    let first = (lo / step).ceil() * step;
    (0..).map(|i| first + i as f64 * step).take_while(|v| *v <= hi + step * 1e-9).collect()
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// A line chart; `step` draws post-step segments as used for distribution
/// functions.
fn chart(title: &str, x_label: &str, y_label: &str, series: &[Series], step: bool) -> String {
    let pts = series.iter().flat_map(|s| s.points.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts.filter(|p| p.0.is_finite() && p.1.is_finite()) {
        (x0, x1, y0, y1) = (x0.min(x), x1.max(x), y0.min(y), y1.max(y));
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 - x0 < 1e-12 {
        x1 = x0 + 1.0;
    }
    if y1 - y0 < 1e-12 {
        y1 = y0 + 1.0;
    }
    let (l, r, t, b) = MARGIN;
    let px = |x: f64| l + (x - x0) / (x1 - x0) * (W - l - r);
    let py = |y: f64| H - b - (y - y0) / (y1 - y0) * (H - t - b);

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#);
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="22" font-size="14" text-anchor="middle">{}</text>"#, (l + W - r) / 2.0, escape(title));
    let _ = writeln!(s, r##"<g stroke="#444"><line x1="{l}" y1="{}" x2="{}" y2="{}"/><line x1="{l}" y1="{t}" x2="{l}" y2="{}"/></g>"##, H - b, W - r, H - b, H - b);
    for v in nice_ticks(x0, x1) {
        let _ = writeln!(s, r#"<text x="{:.1}" y="{}" text-anchor="middle">{}</text>"#, px(v), H - b + 15.0, fmt_tick(v));
    }
    for v in nice_ticks(y0, y1) {
        let _ = writeln!(s, r##"<line x1="{l}" x2="{}" y1="{y:.1}" y2="{y:.1}" stroke="#eee"/><text x="{}" y="{:.1}" text-anchor="end">{}</text>"##, W - r, l - 5.0, py(v) + 4.0, fmt_tick(v), y = py(v));
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, (l + W - r) / 2.0, H - 12.0, escape(x_label));
    let _ = writeln!(s, r#"<text transform="translate(16 {}) rotate(-90)" text-anchor="middle">{}</text>"#, (t + H - b) / 2.0, escape(y_label));
    for (i, ser) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let mut path = String::new();
        let mut prev: Option<(f64, f64)> = None;
        for &(x, y) in ser.points.iter().filter(|p| p.0.is_finite() && p.1.is_finite()) {
            match prev {
                None => {
                    let _ = write!(path, "M{:.1},{:.1}", px(x), py(y));
                }
                Some((_, py_prev)) if step => {
                    let _ = write!(path, " L{:.1},{:.1} L{:.1},{:.1}", px(x), py_prev, px(x), py(y));
                }
                Some(_) => {
                    let _ = write!(path, " L{:.1},{:.1}", px(x), py(y));
                }
            }
            prev = Some((x, py(y)));
        }
        let _ = writeln!(s, r#"<path d="{path}" fill="none" stroke="{color}" stroke-width="1.6"/>"#);
        let ly = t + 14.0 * i as f64 + 10.0;
        let _ = writeln!(s, r#"<rect x="{}" y="{}" width="10" height="10" fill="{color}"/><text x="{}" y="{}">{}</text>"#, W - r + 10.0, ly - 9.0, W - r + 24.0, ly, escape(&ser.label));
    }
    s.push_str("</svg>\n");
    s
}

fn fmt_tick(v: f64) -> String {
    let r = (v * 1e6).round() / 1e6;
    if r == r.trunc() && r.abs() < 1e6 {
        format!("{}", r as i64)
    } else {
        format!("{r}")
    }
}

fn write_file(path: PathBuf, text: &str, files: &mut Vec<PathBuf>) -> Result<()> {
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    files.push(path);
    Ok(())
}

fn slug(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' }).collect()
}

/// Renders EDF step charts (one line per model/optimizer/schedule group with
/// at least two runs) and training curves of standalone runs, each with the
/// CSV it was drawn from.
pub fn write_report(store: &RunStore, out_dir: &Path) -> Result<ReportSummary> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let runs = store.runs()?;
    let mut summary = ReportSummary::default();

    let mut groups: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in &runs {
        let key = format!("{} {} {}ep", r.record.model_name, r.record.optimizer, r.record.epochs);
        groups.entry(key).or_default().push(r.record.final_top1_err);
    }
    let mut edf_series = Vec::new();
    for (key, errs) in groups.iter().filter(|(_, e)| e.len() >= 2) {
        let edf = compute_edf(errs)?;
        let mut buf = Vec::new();
        edf.write_csv(&mut buf)?;
        write_file(out_dir.join(format!("edf_{}.csv", slug(key))), &String::from_utf8_lossy(&buf), &mut summary.files)?;
        let mut points = vec![(0.0, 0.0)];
        points.extend(edf.deltas.iter().copied().zip(edf.cum_fracs.iter().copied()));
        edf_series.push(Series { label: format!("{key} (n={})", errs.len()), points });
    }
    summary.edf_groups = edf_series.len();
    if !edf_series.is_empty() {
        let svg = chart("Error distribution functions", "Δ top-1 error to best (%)", "cumulative fraction", &edf_series, true);
        write_file(out_dir.join("edf.svg"), &svg, &mut summary.files)?;
    }

    let standalone: Vec<_> = runs.iter().filter(|r| !r.record.id.contains("-sweep")).collect();
    summary.curve_runs = standalone.len();
    if !standalone.is_empty() {
        let label = |r: &super::StoredRun| format!("{} {}", r.record.model_name.split('@').next().unwrap_or(""), r.record.id.rsplit('-').next().unwrap_or(""));
        let loss: Vec<Series> = standalone
            .iter()
            .map(|r| Series { label: label(r), points: r.curve.iter().map(|p| (p.epoch as f64, p.train_loss)).collect() })
            .collect();
        let val: Vec<Series> = standalone
            .iter()
            .map(|r| Series { label: label(r), points: r.curve.iter().filter_map(|p| p.val_err.map(|e| (p.epoch as f64, e))).collect() })
            .collect();
        write_file(out_dir.join("train_loss.svg"), &chart("Training loss", "epoch", "loss", &loss, false), &mut summary.files)?;
        write_file(out_dir.join("val_error.svg"), &chart("Validation top-1 error", "epoch", "error (%)", &val, false), &mut summary.files)?;
        let mut w = crate::csv_writer(Vec::new());
        w.write_record(["id", "epoch", "train_loss", "val_err", "val_err_ema", "lr"])?;
        for r in &standalone {
            for p in &r.curve {
                let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
                w.write_record([r.record.id.clone(), p.epoch.to_string(), p.train_loss.to_string(), opt(p.val_err), opt(p.val_err_ema), p.lr.to_string()])?;
            }
        }
        let bytes = w.into_inner().map_err(|e| Error::Input(e.to_string()))?;
        write_file(out_dir.join("curves.csv"), &String::from_utf8_lossy(&bytes), &mut summary.files)?;
    }
    Ok(summary)
}
