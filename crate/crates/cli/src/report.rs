//! Machine-readable reports: evaluation JSON, per-pair CSV, and a
//! self-contained SVG plot of ground-truth vs. estimated paths.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{Context, Result};
use plpose_core::model::EvalSummary;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct PairRecord {
    pub rot_deg: f64,
    pub tran_deg: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct EvalReport {
    pub checkpoint: String,
    pub dataset: String,
    pub seed: u64,
    pub pairs: usize,
    pub mean_rot_deg: f64,
    pub median_rot_deg: f64,
    pub mean_tran_deg: f64,
    pub median_tran_deg: f64,
    pub degenerate_predictions: usize,
    pub per_pair: Vec<PairRecord>,
}

impl EvalReport {
    pub fn from_summary(
        summary: &EvalSummary,
        checkpoint: &str,
        dataset: &str,
        seed: u64,
    ) -> EvalReport {
        EvalReport {
            checkpoint: checkpoint.to_string(),
            dataset: dataset.to_string(),
            seed,
            pairs: summary.per_pair.len(),
            mean_rot_deg: summary.mean_rot_deg,
            median_rot_deg: summary.median_rot_deg,
            mean_tran_deg: summary.mean_tran_deg,
            median_tran_deg: summary.median_tran_deg,
            degenerate_predictions: summary.degenerate_predictions,
            per_pair: summary
                .per_pair
                .iter()
                .map(|p| PairRecord {
                    rot_deg: p.rot_deg,
                    tran_deg: p.tran_deg,
                })
                .collect(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json).with_context(|| format!("writing {}", path.display()))?;
        Ok(())
    }

    #[cfg(test)]
    pub fn load(path: &Path) -> Result<EvalReport> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading {}", path.display()))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Per-pair error series as CSV for external tooling.
pub fn write_pairwise_csv(rows: &[(usize, f64, f64)], path: &Path) -> Result<()> {
    let mut out = String::from("pair,rot_error_deg,tran_error_m\n");
    for (idx, rot, tran) in rows {
        let _ = writeln!(out, "{idx},{rot},{tran}");
    }
    std::fs::write(path, out).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// Top-down (x, z) plot of the two paths as a standalone SVG document.
pub fn render_path_svg(gt: &[[f64; 3]], est: &[[f64; 3]], title: &str) -> String {
    const W: f64 = 640.0;
    const H: f64 = 640.0;
    const MARGIN: f64 = 60.0;

    let xs = gt.iter().chain(est).map(|p| p[0]);
    let zs = gt.iter().chain(est).map(|p| p[2]);
    let (mut min_x, mut max_x) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut min_z, mut max_z) = (f64::INFINITY, f64::NEG_INFINITY);
    for x in xs {
        min_x = min_x.min(x);
        max_x = max_x.max(x);
    }
    for z in zs {
        min_z = min_z.min(z);
        max_z = max_z.max(z);
    }
    let span_x = (max_x - min_x).max(1e-6);
    let span_z = (max_z - min_z).max(1e-6);
    let scale = ((W - 2.0 * MARGIN) / span_x).min((H - 2.0 * MARGIN) / span_z);
    let map = |p: &[f64; 3]| -> (f64, f64) {
        (
            MARGIN + (p[0] - min_x) * scale,
            H - MARGIN - (p[2] - min_z) * scale,
        )
    };
    let polyline = |pts: &[[f64; 3]]| -> String {
        pts.iter()
            .map(|p| {
                let (x, y) = map(p);
                format!("{x:.2},{y:.2}")
            })
            .collect::<Vec<_>>()
            .join(" ")
    };

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    );
    let _ = writeln!(svg, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="30" font-family="sans-serif" font-size="16" text-anchor="middle">{}</text>"#,
        W / 2.0,
        xml_escape(title)
    );
    let _ = writeln!(
        svg,
        r##"<polyline points="{}" fill="none" stroke="#1664c8" stroke-width="2"/>"##,
        polyline(gt)
    );
    let _ = writeln!(
        svg,
        r##"<polyline points="{}" fill="none" stroke="#d43c28" stroke-width="2" stroke-dasharray="6 3"/>"##,
        polyline(est)
    );
    // legend
    let _ = writeln!(
        svg,
        r##"<line x1="{x0}" y1="46" x2="{x1}" y2="46" stroke="#1664c8" stroke-width="2"/><text x="{xt}" y="50" font-family="sans-serif" font-size="12">ground truth</text>"##,
        x0 = MARGIN,
        x1 = MARGIN + 24.0,
        xt = MARGIN + 30.0
    );
    let _ = writeln!(
        svg,
        r##"<line x1="{x0}" y1="64" x2="{x1}" y2="64" stroke="#d43c28" stroke-width="2" stroke-dasharray="6 3"/><text x="{xt}" y="68" font-family="sans-serif" font-size="12">estimate</text>"##,
        x0 = MARGIN,
        x1 = MARGIN + 24.0,
        xt = MARGIN + 30.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" font-family="sans-serif" font-size="12" text-anchor="middle">x (m)</text>"#,
        W / 2.0,
        H - 16.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="18" y="{}" font-family="sans-serif" font-size="12" transform="rotate(-90 18 {})">z (m)</text>"#,
        H / 2.0,
        H / 2.0
    );
    let _ = writeln!(svg, "</svg>");
    svg
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}
