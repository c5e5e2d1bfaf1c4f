//! SVG log-log plots and the JSON sweep summary.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::verify::{item_scaling_from_rows, rate_scaling_from_rows};
use super::{fit_exponent, seed_means, Criterion, Fit, ResultRow, SweepConfig};
use crate::stein::knn_rate;
use crate::{Error, Result, SCHEMA_VERSION};

/// One curve of a plot; markers when `line` is false.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
    pub line: bool,
}

const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

/// Renders series on log-log axes. Non-positive points are skipped.
pub fn svg_loglog(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let (w, h, left, right, top, bottom) = (640.0, 420.0, 70.0, 170.0, 40.0, 50.0);
    let pts = || {
        series
            .iter()
            .flat_map(|s| s.points.iter())
            .filter(|p| p.0 > 0.0 && p.1 > 0.0 && p.0.is_finite() && p.1.is_finite())
    };
    let bounds = |f: fn(&(f64, f64)) -> f64| {
        let (lo, hi) = pts().map(|p| f(p).log10()).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| {
            (a.min(v), b.max(v))
        });
        if !lo.is_finite() {
            (0.0, 1.0)
        } else if hi - lo < 1e-9 {
            (lo - 0.5, hi + 0.5)
        } else {
            let pad = 0.05 * (hi - lo);
            (lo - pad, hi + pad)
        }
    };
    let (x0, x1) = bounds(|p| p.0);
    let (y0, y1) = bounds(|p| p.1);
    let sx = |x: f64| left + (x.log10() - x0) / (x1 - x0) * (w - left - right);
    let sy = |y: f64| h - bottom - (y.log10() - y0) / (y1 - y0) * (h - top - bottom);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#, w / 2.0, escape(title));
    let (px0, px1, py0, py1) = (left, w - right, h - bottom, top);
    let _ = writeln!(
        s,
        r#"<rect x="{px0}" y="{py1}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        px1 - px0,
        py0 - py1
    );
    for e in x0.ceil() as i32..=x1.floor() as i32 {
        let x = sx(10f64.powi(e));
        let _ = writeln!(s, r#"<line x1="{x:.2}" y1="{py0}" x2="{x:.2}" y2="{}" stroke="black"/>"#, py0 + 5.0);
        let _ = writeln!(s, r#"<text x="{x:.2}" y="{}" text-anchor="middle">1e{e}</text>"#, py0 + 18.0);
    }
    for e in y0.ceil() as i32..=y1.floor() as i32 {
        let y = sy(10f64.powi(e));
        let _ = writeln!(s, r#"<line x1="{}" y1="{y:.2}" x2="{px0}" y2="{y:.2}" stroke="black"/>"#, px0 - 5.0);
        let _ = writeln!(s, r#"<text x="{}" y="{:.2}" text-anchor="end">1e{e}</text>"#, px0 - 8.0, y + 4.0);
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        (px0 + px1) / 2.0,
        h - 12.0,
        escape(x_label)
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
        (py0 + py1) / 2.0,
        (py0 + py1) / 2.0,
        escape(y_label)
    );
    for (idx, ser) in series.iter().enumerate() {
        let color = COLORS[idx % COLORS.len()];
        let good: Vec<(f64, f64)> = ser
            .points
            .iter()
            .cloned()
            .filter(|p| p.0 > 0.0 && p.1 > 0.0 && p.0.is_finite() && p.1.is_finite())
            .collect();
        if ser.line {
            let path: Vec<String> = good.iter().map(|p| format!("{:.2},{:.2}", sx(p.0), sy(p.1))).collect();
            let _ = writeln!(
                s,
                r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
                path.join(" ")
            );
        } else {
            for p in &good {
                let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="3.5" fill="{color}"/>"#, sx(p.0), sy(p.1));
            }
        }
        let ly = top + 16.0 * idx as f64 + 10.0;
        let _ = writeln!(
            s,
            r#"<rect x="{}" y="{}" width="12" height="4" fill="{color}"/><text x="{}" y="{}">{}</text>"#,
            px1 + 10.0,
            ly - 4.0,
            px1 + 28.0,
            ly + 2.0,
            escape(&ser.name)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub schema: u32,
    pub config_hash: String,
    pub rows: usize,
    pub successful: usize,
    /// `(n, successful seeds)`.
    pub seed_counts: Vec<(usize, usize)>,
    pub w2_fit: Option<Fit>,
    pub item_fits: Vec<(String, Fit)>,
    /// Fitted constant of the predicted rate (geometric mean of `W_2 / rate`).
    pub rate_constant: Option<f64>,
    pub properties: Vec<Criterion>,
    /// Files written, relative to the output directory.
    pub files: Vec<String>,
}

/// Writes `w2_vs_n.svg`, `items_vs_n.svg` and `summary.json`.
pub fn emit_report(rows: &[ResultRow], config: &SweepConfig, out_dir: &Path) -> Result<ReportSummary> {
    if rows.is_empty() {
        return Err(Error::InvalidParameter("no rows to report".into()));
    }
    fs::create_dir_all(out_dir)?;
    let ok: Vec<ResultRow> = rows.iter().filter(|r| r.ok()).cloned().collect();
    let w2 = seed_means(&ok, "n", "w2_torus");
    let ks = seed_means(&ok, "n", "k");
    let d = config.dim;
    let rate: Vec<(f64, f64)> = ks
        .iter()
        .map(|&(n, k, _)| (n, knn_rate(n as usize, k.round() as usize, d)))
        .collect();
    let rate_constant = if w2.is_empty() {
        None
    } else {
        let logs: Vec<f64> = w2
            .iter()
            .zip(&rate)
            .filter(|(a, b)| a.1 > 0.0 && b.1 > 0.0)
            .map(|(a, b)| (a.1 / b.1).ln())
            .collect();
        (!logs.is_empty()).then(|| (logs.iter().sum::<f64>() / logs.len() as f64).exp())
    };
    let w2_fit = fit_exponent(&ok, "n", "w2_torus").ok();
    let mut series = vec![Series {
        name: "mean W2".into(),
        points: w2.iter().map(|m| (m.0, m.1)).collect(),
        line: false,
    }];
    if let Some(f) = w2_fit {
        series.push(Series {
            name: format!("fit slope {:.3}", f.slope),
            points: w2.iter().map(|m| (m.0, f.intercept.exp() * m.0.powf(f.slope))).collect(),
            line: true,
        });
    }
    if let Some(c) = rate_constant {
        series.push(Series {
            name: "predicted rate".into(),
            points: rate.iter().map(|r| (r.0, c * r.1)).collect(),
            line: true,
        });
    }
    fs::write(
        out_dir.join("w2_vs_n.svg"),
        svg_loglog("W2 to the diffusion target", "n", "W2", &series),
    )?;
    let mut item_series = vec![];
    let mut item_fits = vec![];
    for name in ["i1", "i2", "i3", "i4", "i5"] {
        let m = seed_means(&ok, "n", name);
        if m.is_empty() {
            continue;
        }
        if let Ok(f) = fit_exponent(&ok, "n", name) {
            item_fits.push((name.to_string(), f));
        }
        item_series.push(Series {
            name: name.to_uppercase(),
            points: m.iter().map(|p| (p.0, p.1)).collect(),
            line: true,
        });
    }
    fs::write(
        out_dir.join("items_vs_n.svg"),
        svg_loglog("Supremum items", "n", "value", &item_series),
    )?;
    let seed_counts = w2.iter().map(|m| (m.0 as usize, m.2)).collect();
    let properties = vec![rate_scaling_from_rows(&ok, 0.0), item_scaling_from_rows(&ok, 0.0)];
    let mut summary = ReportSummary {
        schema: SCHEMA_VERSION,
        config_hash: config.hash(),
        rows: rows.len(),
        successful: ok.len(),
        seed_counts,
        w2_fit,
        item_fits,
        rate_constant,
        properties,
        files: vec!["w2_vs_n.svg".into(), "items_vs_n.svg".into(), "summary.json".into()],
    };
    summary.files.sort();
    fs::write(out_dir.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_point_plot_has_both_points_and_overlay() {
        let s = svg_loglog(
            "t",
            "n",
            "y",
            &[
                Series {
                    name: "data".into(),
                    points: vec![(100.0, 0.1), (1000.0, 0.05)],
                    line: false,
                },
                Series {
                    name: "rate".into(),
                    points: vec![(100.0, 0.12), (1000.0, 0.04)],
                    line: true,
                },
            ],
        );
        assert!(s.starts_with("<svg") && s.trim_end().ends_with("</svg>"));
        assert_eq!(s.matches("<circle").count(), 2);
        assert_eq!(s.matches("<polyline").count(), 1);
    }

    #[test]
    fn summary_echoes_config_hash() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SweepConfig::default();
        let rows: Vec<ResultRow> = [2000usize, 4000]
            .iter()
            .map(|&n| ResultRow {
                d: 2,
                n,
                k: cfg.k_rule.k_for(n).unwrap(),
                w2_torus: Some(0.1 / (n as f64).powf(0.25)),
                i2: Some(0.01),
                ..Default::default()
            })
            .collect();
        let s = emit_report(&rows, &cfg, dir.path()).unwrap();
        let text = fs::read_to_string(dir.path().join("summary.json")).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["config_hash"], cfg.hash());
        assert_eq!(v["schema"], 1);
        assert!(s.w2_fit.is_none());
        assert!(s.rate_constant.unwrap() > 0.0);
        let svg = fs::read_to_string(dir.path().join("w2_vs_n.svg")).unwrap();
        assert_eq!(svg.matches("<circle").count(), 2);
        assert!(emit_report(&[], &cfg, dir.path()).is_err());
    }

    #[test]
    fn overlay_uses_the_shared_rate_formula() {
        let r = knn_rate(10_000, 1_000, 2);
        let oracle = (10_000f64.ln() / 1000.0).sqrt() * 10f64.sqrt() + 0.1f64.sqrt();
        assert!((r - oracle).abs() < 1e-14);
    }
}
