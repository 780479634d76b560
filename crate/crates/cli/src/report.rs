//! Report artifacts: profile and comparison CSVs with fixed schemas, plus
//! self-contained SVG plots. CSVs are the byte-exact record; plots are
//! derived views.

use std::fmt::Write as _;
use std::path::Path;

use lightcl_core::profile::ProfileStats;
use lightcl_core::stream::StreamManifest;

use crate::error::{CliError, Result};

#[derive(Debug, Clone)]
pub struct CompareRow {
    pub method: String,
    pub runs: usize,
    pub aa_mean: f64,
    pub aa_std: f64,
}

pub fn write_stream_manifest(path: &Path, manifest: &StreamManifest) -> Result<()> {
    let text = serde_json::to_string_pretty(manifest)
        .map_err(|e| CliError::format(path, e.to_string()))?;
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn write_profile_csv(path: &Path, stats: &ProfileStats) -> Result<()> {
    let mut text = String::from("layer_index,layer_name,ms_mean,ms_std,lp_mean,lp_std\n");
    for i in 0..stats.layer_names.len() {
        let _ = writeln!(
            text,
            "{},{},{:.6},{:.6},{:.6},{:.6}",
            i + 1,
            stats.layer_names[i],
            stats.ms_mean[i],
            stats.ms_std[i],
            stats.lp_mean[i],
            stats.lp_std[i],
        );
    }
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn write_comparison_csv(path: &Path, rows: &[CompareRow]) -> Result<()> {
    let mut text = String::from("method,runs,aa_mean,aa_std\n");
    for row in rows {
        let _ = writeln!(
            text,
            "{},{},{:.6},{:.6}",
            row.method, row.runs, row.aa_mean, row.aa_std
        );
    }
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

// ─── SVG plotting ───────────────────────────────────────────────────────────

const W: f64 = 680.0;
const PANEL_H: f64 = 240.0;
const MARGIN_L: f64 = 64.0;
const MARGIN_R: f64 = 24.0;
const MARGIN_TOP: f64 = 36.0;
const MARGIN_BOT: f64 = 44.0;

struct Scale {
    lo: f64,
    hi: f64,
    y0: f64,
    h: f64,
}

impl Scale {
    fn new(values: impl Iterator<Item = f64>, y0: f64, h: f64) -> Self {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if !lo.is_finite() || !hi.is_finite() {
            lo = 0.0;
            hi = 1.0;
        }
        lo = lo.min(0.0);
        hi = hi.max(0.0);
        let pad = ((hi - lo) * 0.08).max(0.01);
        Scale { lo: lo - pad, hi: hi + pad, y0, h }
    }

    fn y(&self, v: f64) -> f64 {
        self.y0 + self.h * (1.0 - (v - self.lo) / (self.hi - self.lo))
    }
}

fn panel(
    svg: &mut String,
    title: &str,
    names: &[String],
    mean: &[f64],
    std: &[f64],
    y0: f64,
    color: &str,
) {
    let n = mean.len();
    let plot_w = W - MARGIN_L - MARGIN_R;
    let plot_h = PANEL_H - MARGIN_TOP - MARGIN_BOT;
    let x = |i: usize| MARGIN_L + plot_w * (i as f64 + 0.5) / n as f64;
    let scale = Scale::new(
        mean.iter().zip(std).flat_map(|(&m, &s)| [m - s, m + s]),
        y0 + MARGIN_TOP,
        plot_h,
    );
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" font-size="14" text-anchor="middle">{title}</text>"#,
        W / 2.0,
        y0 + 20.0
    );
    let _ = writeln!(
        svg,
        r##"<rect x="{MARGIN_L}" y="{}" width="{plot_w}" height="{plot_h}" fill="none" stroke="#444"/>"##,
        y0 + MARGIN_TOP
    );
    let zero = scale.y(0.0);
    let _ = writeln!(
        svg,
        r##"<line x1="{MARGIN_L}" y1="{zero:.1}" x2="{:.1}" y2="{zero:.1}" stroke="#bbb" stroke-dasharray="4 3"/>"##,
        W - MARGIN_R
    );
    for (v, label) in [(scale.lo, "lo"), (scale.hi, "hi")] {
        let _ = label;
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" font-size="10" text-anchor="end">{v:.2}</text>"#,
            MARGIN_L - 6.0,
            scale.y(v) + 3.0
        );
    }
    let mut points = String::new();
    for (i, &m) in mean.iter().enumerate() {
        let _ = write!(points, "{:.1},{:.1} ", x(i), scale.y(m));
        let _ = writeln!(
            svg,
            r#"<line x1="{0:.1}" y1="{1:.1}" x2="{0:.1}" y2="{2:.1}" stroke="{color}" stroke-width="1"/>"#,
            x(i),
            scale.y(m - std[i]),
            scale.y(m + std[i]),
        );
    }
    let _ = writeln!(
        svg,
        r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
        points.trim_end()
    );
    for (i, &m) in mean.iter().enumerate() {
        let _ = writeln!(
            svg,
            r#"<circle cx="{:.1}" cy="{:.1}" r="2.5" fill="{color}"/>"#,
            x(i),
            scale.y(m)
        );
    }
    let step = (n / 12).max(1);
    for i in (0..n).step_by(step) {
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" font-size="9" text-anchor="middle">{}</text>"#,
            x(i),
            y0 + PANEL_H - MARGIN_BOT + 14.0,
            i + 1
        );
    }
    let _ = names;
}

pub fn write_profile_svg(path: &Path, stats: &ProfileStats) -> Result<()> {
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{}" viewBox="0 0 {W} {0}" font-family="sans-serif">"#,
        2.0 * PANEL_H
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    panel(
        &mut svg,
        &format!("memory stability by layer ({} runs, mean +/- std)", stats.runs),
        &stats.layer_names,
        &stats.ms_mean,
        &stats.ms_std,
        0.0,
        "#1f77b4",
    );
    panel(
        &mut svg,
        "learning plasticity by layer",
        &stats.layer_names,
        &stats.lp_mean,
        &stats.lp_std,
        PANEL_H,
        "#d62728",
    );
    let _ = writeln!(svg, "</svg>");
    std::fs::write(path, svg).map_err(|e| CliError::io(path, e))
}

pub fn write_comparison_svg(path: &Path, rows: &[CompareRow]) -> Result<()> {
    let h = 360.0;
    let plot_w = W - MARGIN_L - MARGIN_R;
    let plot_h = h - MARGIN_TOP - MARGIN_BOT;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{h}" viewBox="0 0 {W} {h}" font-family="sans-serif">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="20" font-size="14" text-anchor="middle">average accuracy by method (mean +/- std over seeds)</text>"#,
        W / 2.0
    );
    let top = rows
        .iter()
        .map(|r| r.aa_mean + r.aa_std)
        .fold(0.0f64, f64::max)
        .max(0.05);
    let scale = |v: f64| MARGIN_TOP + plot_h * (1.0 - v / (top * 1.1));
    let _ = writeln!(
        svg,
        r##"<rect x="{MARGIN_L}" y="{MARGIN_TOP}" width="{plot_w}" height="{plot_h}" fill="none" stroke="#444"/>"##
    );
    for tick in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let v = tick * top * 1.1;
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" font-size="10" text-anchor="end">{v:.2}</text>"#,
            MARGIN_L - 6.0,
            scale(v) + 3.0
        );
    }
    let n = rows.len().max(1);
    let slot = plot_w / n as f64;
    let bar_w = (slot * 0.55).min(90.0);
    for (i, row) in rows.iter().enumerate() {
        let cx = MARGIN_L + slot * (i as f64 + 0.5);
        let y = scale(row.aa_mean);
        let _ = writeln!(
            svg,
            r##"<rect x="{:.1}" y="{y:.1}" width="{bar_w:.1}" height="{:.1}" fill="#4c84b0"/>"##,
            cx - bar_w / 2.0,
            (MARGIN_TOP + plot_h - y).max(0.0)
        );
        let _ = writeln!(
            svg,
            r##"<line x1="{cx:.1}" y1="{:.1}" x2="{cx:.1}" y2="{:.1}" stroke="#222" stroke-width="1.5"/>"##,
            scale(row.aa_mean + row.aa_std),
            scale((row.aa_mean - row.aa_std).max(0.0)),
        );
        let _ = writeln!(
            svg,
            r#"<text x="{cx:.1}" y="{:.1}" font-size="11" text-anchor="middle">{}</text>"#,
            MARGIN_TOP + plot_h + 16.0,
            row.method
        );
        let _ = writeln!(
            svg,
            r#"<text x="{cx:.1}" y="{:.1}" font-size="10" text-anchor="middle">{:.4}</text>"#,
            y - 5.0,
            row.aa_mean
        );
    }
    let _ = writeln!(svg, "</svg>");
    std::fs::write(path, svg).map_err(|e| CliError::io(path, e))
}
