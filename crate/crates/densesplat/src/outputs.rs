//! Trace and summary CSVs and an SVG chart of mean PSNR per label.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::compare::{summarize, Summary, TraceRow, TrainingTrace};
use crate::{Error, Result};

pub const TRACE_HEADER: [&str; 7] = ["label", "seed", "iteration", "psnr", "loss", "count", "ms"];
pub const SUMMARY_HEADER: [&str; 7] = ["label", "iteration", "runs", "psnr_mean", "psnr_std", "loss_mean", "count_mean"];

pub const TRACES_FILE: &str = "traces.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const CHART_FILE: &str = "psnr.svg";

#[derive(Debug, Clone, PartialEq)]
pub struct OutputPaths {
    pub traces: PathBuf,
    pub summary: PathBuf,
    pub chart: PathBuf,
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::format(path, format!("{other:?}")),
    }
}

/// Shortest text that parses back to the same value; infinities as `inf`.
fn number(v: f64) -> String {
    v.to_string()
}

pub fn traces_csv(traces: &[TrainingTrace]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(TRACE_HEADER).expect("in-memory write");
    for t in traces {
        for r in &t.rows {
            w.write_record([
                t.label.clone(),
                t.seed.to_string(),
                r.iteration.to_string(),
                number(r.psnr),
                number(r.loss),
                r.count.to_string(),
                r.ms.to_string(),
            ])
            .expect("in-memory write");
        }
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
}

pub fn summary_csv(summary: &Summary) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(SUMMARY_HEADER).expect("in-memory write");
    for r in &summary.rows {
        w.write_record([
            r.label.clone(),
            r.iteration.to_string(),
            r.runs.to_string(),
            number(r.psnr_mean),
            number(r.psnr_std),
            number(r.loss_mean),
            number(r.count_mean),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
}

/// Reads traces written by [`traces_csv`]. Consecutive rows with the same
/// label and seed form one trace.
pub fn parse_traces(text: &str, path: &Path) -> Result<Vec<TrainingTrace>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header = r.headers().map_err(|e| csv_error(path, e))?.clone();
    if header.iter().ne(TRACE_HEADER) {
        return Err(Error::format(path, format!("expected columns {}", TRACE_HEADER.join(","))));
    }
    let mut out: Vec<TrainingTrace> = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let bad = |col: &str| Error::format(path, format!("row {}: bad {col}", i + 2));
        let field = |k: usize| rec.get(k).expect("checked width");
        let seed: u64 = field(1).parse().map_err(|_| bad("seed"))?;
        let row = TraceRow {
            iteration: field(2).parse().map_err(|_| bad("iteration"))?,
            psnr: field(3).parse().map_err(|_| bad("psnr"))?,
            loss: field(4).parse().map_err(|_| bad("loss"))?,
            count: field(5).parse().map_err(|_| bad("count"))?,
            ms: field(6).parse().map_err(|_| bad("ms"))?,
        };
        match out.last_mut() {
            Some(t) if t.label == field(0) && t.seed == seed => {
                if t.rows.last().is_some_and(|prev| prev.iteration >= row.iteration) {
                    return Err(Error::format(path, format!("row {}: iterations must increase", i + 2)));
                }
                t.rows.push(row);
            }
            _ => out.push(TrainingTrace { label: field(0).to_string(), seed, rows: vec![row] }),
        }
    }
    Ok(out)
}

pub fn read_traces(path: &Path) -> Result<Vec<TrainingTrace>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_traces(&text, path)
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

/// Line chart of mean PSNR against iteration, one polyline per label.
pub fn chart_svg(summary: &Summary) -> String {
    let (w, h) = (640.0, 400.0);
    let (left, right, top, bottom) = (60.0, 20.0, 20.0, 50.0);
    let finite: Vec<_> = summary.rows.iter().filter(|r| r.psnr_mean.is_finite()).collect();
    let max_it = finite.iter().map(|r| r.iteration).max().unwrap_or(1).max(1) as f64;
    let lo = finite.iter().map(|r| r.psnr_mean).fold(f64::INFINITY, f64::min);
    let hi = finite.iter().map(|r| r.psnr_mean).fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if lo.is_finite() { ((lo - 1.0).floor(), (hi + 1.0).ceil()) } else { (0.0, 1.0) };
    let x = |it: f64| left + (w - left - right) * it / max_it;
    let y = |p: f64| h - bottom - (h - top - bottom) * (p - lo) / (hi - lo);

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<path d="M{l} {t} V{b} H{r}" stroke="black" fill="none"/>"#,
        l = left,
        t = top,
        b = h - bottom,
        r = w - right
    );
    for k in 0..=4 {
        let p = lo + (hi - lo) * k as f64 / 4.0;
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" font-size="11" text-anchor="end">{p:.1}</text>"#, left - 6.0, y(p) + 4.0);
        let it = max_it * k as f64 / 4.0;
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" font-size="11" text-anchor="middle">{it:.0}</text>"#, x(it), h - bottom + 16.0);
    }
    let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" font-size="12" text-anchor="middle">iteration</text>"#, left + (w - left - right) / 2.0, h - 10.0);
    let _ = writeln!(s, r#"<text x="14" y="{:.1}" font-size="12" transform="rotate(-90 14 {:.1})" text-anchor="middle">PSNR (dB)</text>"#, h / 2.0, h / 2.0);
    for (k, label) in summary.labels().iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let points: Vec<String> = finite
            .iter()
            .filter(|r| r.label == *label)
            .map(|r| format!("{:.2},{:.2}", x(r.iteration as f64), y(r.psnr_mean)))
            .collect();
        let _ = writeln!(s, r#"<polyline data-label="{label}" fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#, points.join(" "));
        let ly = top + 16.0 * (k as f64 + 1.0);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{ly:.1}" font-size="12" fill="{color}">{label}</text>"#, w - right - 80.0);
    }
    s.push_str("</svg>\n");
    s
}

fn write(path: PathBuf, text: &str) -> Result<PathBuf> {
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Writes the three artefacts into `dir`, creating it if needed.
pub fn write_outputs(traces: &[TrainingTrace], summary: Option<&Summary>, dir: &Path) -> Result<OutputPaths> {
    if traces.is_empty() {
        return Err(Error::Config("no traces to write".into()));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let owned;
    let summary = match summary {
        Some(s) => s,
        None => {
            owned = summarize(traces);
            &owned
        }
    };
    Ok(OutputPaths {
        traces: write(dir.join(TRACES_FILE), &traces_csv(traces))?,
        summary: write(dir.join(SUMMARY_FILE), &summary_csv(summary))?,
        chart: write(dir.join(CHART_FILE), &chart_svg(summary))?,
    })
}
