use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::aggregate::RateCurve;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Csv,
    Json,
    Svg,
}

impl OutputFormat {
    pub const ALL: [OutputFormat; 3] = [OutputFormat::Csv, OutputFormat::Json, OutputFormat::Svg];

    pub fn file_name(self) -> &'static str {
        match self {
            OutputFormat::Csv => "rates.csv",
            OutputFormat::Json => "rates.json",
            OutputFormat::Svg => "rates.svg",
        }
    }
}

fn csv_text(curve: &RateCurve) -> String {
    let mut out = String::from("n,quantile,value,se,trials,failed,clip_rate\n");
    let fmt = |x: Option<f64>| x.map(|v| format!("{v:.16e}")).unwrap_or_default();
    for p in &curve.points {
        let q = p.quantiles.as_ref();
        let rows = [
            ("median", q.map(|q| q.median), q.and_then(|q| q.median_se)),
            ("q90", q.map(|q| q.q90), q.and_then(|q| q.q90_se)),
            ("mean", q.map(|q| q.mean), q.and_then(|q| q.mean_se)),
        ];
        for (label, value, se) in rows {
            let _ = writeln!(
                out,
                "{},{label},{},{},{},{},{:.16e}",
                p.n,
                fmt(value),
                fmt(se),
                p.trials,
                p.failed,
                p.clip_rate
            );
        }
    }
    out
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN: f64 = 60.0;

/// Log-log plot of the median curve with the guaranteed slope drawn through
/// the first plotted point. Always contains exactly two polylines; one may
/// be empty when there is nothing to draw.
pub fn svg_plot(curve: &RateCurve) -> String {
    let data: Vec<(f64, f64)> = curve
        .points
        .iter()
        .filter_map(|p| {
            p.quantiles
                .as_ref()
                .filter(|q| q.median > 0.0)
                .map(|q| ((p.n as f64).log10(), q.median.log10()))
        })
        .collect();
    let beta = curve.theory.as_ref().and_then(|t| t.beta_max);
    let theory: Vec<(f64, f64)> = match (beta, data.first(), data.last()) {
        (Some(b), Some(&(x0, y0)), Some(&(x1, _))) => vec![(x0, y0), (x1, y0 - b * (x1 - x0))],
        _ => Vec::new(),
    };
    let all = data.iter().chain(&theory);
    let (mut xmin, mut xmax, mut ymin, mut ymax) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in all {
        xmin = xmin.min(x);
        xmax = xmax.max(x);
        ymin = ymin.min(y);
        ymax = ymax.max(y);
    }
    if !xmin.is_finite() {
        (xmin, xmax, ymin, ymax) = (0.0, 1.0, 0.0, 1.0);
    }
    if xmax - xmin < 1e-9 {
        xmax = xmin + 1.0;
    }
    if ymax - ymin < 1e-9 {
        ymax = ymin + 1.0;
    }
    let sx = |x: f64| MARGIN + (x - xmin) / (xmax - xmin) * (WIDTH - 2.0 * MARGIN);
    let sy = |y: f64| HEIGHT - MARGIN - (y - ymin) / (ymax - ymin) * (HEIGHT - 2.0 * MARGIN);
    let points = |pts: &[(f64, f64)]| {
        pts.iter()
            .map(|&(x, y)| format!("{:.3},{:.3}", sx(x), sy(y)))
            .collect::<Vec<_>>()
            .join(" ")
    };
    let title = curve.name.as_deref().unwrap_or("excess risk");
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="30" text-anchor="middle" font-family="sans-serif" font-size="16">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
    let _ = writeln!(
        s,
        r#"<line x1="{MARGIN}" y1="{0}" x2="{1}" y2="{0}" stroke="black"/>"#,
        HEIGHT - MARGIN,
        WIDTH - MARGIN
    );
    let _ = writeln!(
        s,
        r#"<line x1="{MARGIN}" y1="{MARGIN}" x2="{MARGIN}" y2="{}" stroke="black"/>"#,
        HEIGHT - MARGIN
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="12">log10 n  [{xmin:.2}, {xmax:.2}]</text>"#,
        WIDTH / 2.0,
        HEIGHT - 20.0
    );
    let _ = writeln!(
        s,
        r#"<text x="15" y="{}" font-family="sans-serif" font-size="12" transform="rotate(-90 15 {})">log10 median excess  [{ymin:.2}, {ymax:.2}]</text>"#,
        HEIGHT / 2.0 + 80.0,
        HEIGHT / 2.0 + 80.0
    );
    let _ = writeln!(
        s,
        r#"<polyline class="empirical" fill="none" stroke="steelblue" stroke-width="2" points="{}"/>"#,
        points(&data)
    );
    let _ = writeln!(
        s,
        r#"<polyline class="theory" fill="none" stroke="firebrick" stroke-width="2" stroke-dasharray="6 4" points="{}"/>"#,
        points(&theory)
    );
    for &(x, y) in &data {
        let _ = writeln!(s, r#"<circle cx="{:.3}" cy="{:.3}" r="3" fill="steelblue"/>"#, sx(x), sy(y));
    }
    s.push_str("</svg>\n");
    s
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Writes one representation of `curve` into `dir` and returns its path.
pub fn emit(curve: &RateCurve, format: OutputFormat, dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(format.file_name());
    let text = match format {
        OutputFormat::Csv => csv_text(curve),
        OutputFormat::Json => serde_json::to_string_pretty(curve)?,
        OutputFormat::Svg => svg_plot(curve),
    };
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

pub fn emit_all(curve: &RateCurve, dir: &Path) -> Result<Vec<PathBuf>> {
    OutputFormat::ALL.iter().map(|&f| emit(curve, f, dir)).collect()
}
