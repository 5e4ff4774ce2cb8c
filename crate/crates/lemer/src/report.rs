//! CSV tables and SVG plots.

use std::fmt::Write as _;
use std::path::Path;

use lemer_core::ablation::{AblationReport, SweepPoint};
use lemer_core::attention::AttentionTrace;
use lemer_core::diff::GradCheckReport;
use lemer_core::eval::EvalResult;
use lemer_core::labelkit::LabelDescriptions;
use lemer_core::trainer::TrainLog;

use crate::error::{write_file, Result};

fn csv_bytes(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.into_inner().map_err(|e| crate::error::Error::Encode(e.to_string()))
}

fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    write_file(path, csv_bytes(header, rows)?)
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

pub fn train_log_csv(path: &Path, log: &TrainLog) -> Result<()> {
    write_csv(
        path,
        &["epoch", "L_m", "L_c", "L_g_t", "L_g_s", "total", "train_WA", "train_UA", "WA", "UA"],
        log.records.iter().map(|r| {
            let l = r.losses;
            vec![
                r.epoch.to_string(),
                l.fused.to_string(),
                l.constraint.to_string(),
                l.text_guidance.to_string(),
                l.speech_guidance.to_string(),
                l.total.to_string(),
                r.train_wa.to_string(),
                r.train_ua.to_string(),
                opt(r.held_out_wa),
                opt(r.held_out_ua),
            ]
        }),
    )
}

pub fn metrics_csv(path: &Path, name: &str, r: &EvalResult) -> Result<()> {
    write_csv(path, &["name", "n", "WA", "UA"], [vec![name.to_string(), r.n.to_string(), r.wa.to_string(), r.ua.to_string()]])
}

/// Rows are true classes, columns predictions.
pub fn confusion_csv(path: &Path, r: &EvalResult) -> Result<()> {
    let c = r.confusion.len();
    let header: Vec<String> = std::iter::once("true".to_string()).chain((0..c).map(|k| format!("pred_{k}"))).collect();
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    write_csv(
        path,
        &header,
        r.confusion.iter().enumerate().map(|(k, row)| {
            std::iter::once(k.to_string()).chain(row.iter().map(usize::to_string)).collect()
        }),
    )
}

pub fn labels_csv(path: &Path, text: &LabelDescriptions, speech: &LabelDescriptions) -> Result<()> {
    let mut rows = Vec::new();
    for (modality, desc) in [("text", text), ("speech", speech)] {
        for (class, scored) in desc.classes.iter().enumerate() {
            for (rank, s) in scored.iter().enumerate() {
                rows.push(vec![
                    modality.to_string(),
                    class.to_string(),
                    rank.to_string(),
                    s.symbol.to_string(),
                    s.score.to_string(),
                ]);
            }
        }
    }
    write_csv(path, &["modality", "class", "rank", "symbol", "score"], rows)
}

/// Mean WA/UA per condition plus failure counts.
pub fn ablation_summary_csv(path: &Path, report: &AblationReport) -> Result<()> {
    let seeds = report.seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(" ");
    write_csv(
        path,
        &["condition", "mean_WA", "mean_UA", "seeds", "failures"],
        report.conditions.iter().map(|c| {
            vec![
                c.name.clone(),
                opt(c.mean_wa()),
                opt(c.mean_ua()),
                seeds.clone(),
                c.failures().to_string(),
            ]
        }),
    )
}

pub fn ablation_seeds_csv(path: &Path, report: &AblationReport) -> Result<()> {
    let mut rows = Vec::new();
    for c in &report.conditions {
        for s in &c.per_seed {
            let (wa, ua, error) = match &s.result {
                Ok(r) => (r.wa.to_string(), r.ua.to_string(), String::new()),
                Err(e) => (String::new(), String::new(), e.clone()),
            };
            rows.push(vec![c.name.clone(), s.seed.to_string(), wa, ua, error]);
        }
    }
    write_csv(path, &["condition", "seed", "WA", "UA", "error"], rows)
}

pub fn sweep_csv(path: &Path, points: &[SweepPoint]) -> Result<()> {
    write_csv(
        path,
        &["K", "WA", "UA", "failures"],
        points.iter().map(|p| {
            vec![
                p.k.to_string(),
                opt(p.report.mean_wa()),
                opt(p.report.mean_ua()),
                p.report.failures().to_string(),
            ]
        }),
    )
}

pub fn grad_check_csv(path: &Path, reports: &[GradCheckReport], tolerance: f64) -> Result<()> {
    write_csv(
        path,
        &["op", "max_relative_error", "probes", "pass"],
        reports.iter().map(|r| {
            vec![
                r.op_name.clone(),
                r.max_relative_error.to_string(),
                r.probe_count.to_string(),
                (r.max_relative_error <= tolerance).to_string(),
            ]
        }),
    )
}

/// `position,symbol,value,planted` for one modality.
pub fn attention_csv(path: &Path, trace: &AttentionTrace) -> Result<()> {
    write_csv(
        path,
        &["position", "symbol", "value", "planted"],
        trace.values.iter().enumerate().map(|(i, v)| {
            vec![
                i.to_string(),
                trace.symbols[i].to_string(),
                v.to_string(),
                u8::from(trace.planted[i]).to_string(),
            ]
        }),
    )
}

const WIDTH: f64 = 640.0;
const PANEL: f64 = 200.0;
const MARGIN: f64 = 40.0;

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

fn panel(svg: &mut String, top: f64, title: &str, xs: &[f64], ys: &[f64], marks: &[bool]) {
    let (x0, x1) = bounds(xs.iter().copied());
    let (y0, y1) = bounds(ys.iter().copied());
    let px = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (WIDTH - 2.0 * MARGIN);
    let py = |y: f64| top + PANEL - 20.0 - (y - y0) / (y1 - y0) * (PANEL - 40.0);
    let _ = writeln!(svg, r#"<text x="{MARGIN}" y="{}" font-size="13">{title}</text>"#, top + 14.0);
    let _ = writeln!(
        svg,
        r##"<rect x="{MARGIN}" y="{}" width="{}" height="{}" fill="none" stroke="#999"/>"##,
        top + 20.0,
        WIDTH - 2.0 * MARGIN,
        PANEL - 40.0
    );
    let _ = writeln!(svg, r#"<text x="2" y="{:.1}" font-size="10">{y1:.3}</text>"#, top + 28.0);
    let _ = writeln!(svg, r#"<text x="2" y="{:.1}" font-size="10">{y0:.3}</text>"#, top + PANEL - 20.0);
    let points: Vec<String> = xs.iter().zip(ys).map(|(&x, &y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
    let _ = writeln!(svg, r##"<polyline fill="none" stroke="#1f5fa8" stroke-width="1.5" points="{}"/>"##, points.join(" "));
    for (i, (&x, &y)) in xs.iter().zip(ys).enumerate() {
        let fill = if marks.get(i).copied().unwrap_or(false) { "#c0392b" } else { "#1f5fa8" };
        let _ = writeln!(svg, r#"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="{fill}"/>"#, px(x), py(y));
    }
}

fn document(height: f64, body: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{height}\" viewBox=\"0 0 {WIDTH} {height}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n{body}</svg>\n"
    )
}

/// Two panels of `G̃` against position; planted positions drawn in red.
pub fn attention_svg(path: &Path, traces: &[AttentionTrace]) -> Result<()> {
    let mut body = String::new();
    for (i, t) in traces.iter().enumerate() {
        let xs: Vec<f64> = (0..t.values.len()).map(|p| p as f64).collect();
        let name = match t.modality {
            lemer_core::corpus::Modality::Text => "text G~ (red: planted tokens)",
            lemer_core::corpus::Modality::Speech => "speech G~ (red: planted codes)",
        };
        panel(&mut body, i as f64 * PANEL, name, &xs, &t.values, &t.planted);
    }
    write_file(path, document(PANEL * traces.len() as f64, &body))
}

pub fn sweep_svg(path: &Path, title: &str, points: &[SweepPoint]) -> Result<()> {
    let ok: Vec<&SweepPoint> = points.iter().filter(|p| p.report.mean_ua().is_some()).collect();
    let xs: Vec<f64> = ok.iter().map(|p| p.k as f64).collect();
    let ys: Vec<f64> = ok.iter().map(|p| p.report.mean_ua().unwrap_or(0.0)).collect();
    let mut body = String::new();
    panel(&mut body, 0.0, title, &xs, &ys, &[]);
    write_file(path, document(PANEL, &body))
}
