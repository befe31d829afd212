//! CSV, SVG and JSON writers.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use lowrank_core::Trajectory;
use serde::Serialize;

pub const SCHEMA_VERSION: u32 = 1;
pub const CSV_HEADER: [&str; 3] = ["step", "loss", "loss_gap"];

/// 17 significant digits, enough to round-trip an f64.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// One `(step, loss, loss_gap)` row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Row {
    pub step: usize,
    pub loss: f64,
    pub loss_gap: f64,
}

pub fn rows(traj: &Trajectory) -> Vec<Row> {
    traj.records()
        .iter()
        .map(|r| Row {
            step: r.step,
            loss: r.loss,
            loss_gap: r.loss_gap,
        })
        .collect()
}

pub fn write_csv(path: &Path, rows: &[Row]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record(CSV_HEADER)?;
    for r in rows {
        w.write_record([r.step.to_string(), fmt_f64(r.loss), fmt_f64(r.loss_gap)])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv(path: &Path) -> Result<Vec<Row>> {
    let mut rd = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        out.push(Row {
            step: rec[0].parse()?,
            loss: rec[1].parse()?,
            loss_gap: rec[2].parse()?,
        });
    }
    Ok(out)
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Artifacts written by one command.
#[derive(Debug, Clone, Default, Serialize)]
pub struct ReportBundle {
    pub csv: Vec<PathBuf>,
    pub json: Option<PathBuf>,
    pub svg: Vec<PathBuf>,
}

pub struct Series<'a> {
    pub label: &'a str,
    pub points: Vec<(f64, f64)>,
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// Line chart with a log10 y axis. Non-positive values are clamped to the
/// smallest positive value in the data.
pub fn line_chart_svg(title: &str, x_label: &str, y_label: &str, series: &[Series<'_>]) -> String {
    let (w, h) = (720.0, 480.0);
    let (left, right, top, bottom) = (80.0, 190.0, 40.0, 60.0);
    let pw = w - left - right;
    let ph = h - top - bottom;

    let positive = series.iter().flat_map(|s| s.points.iter().map(|p| p.1)).filter(|v| *v > 0.0 && v.is_finite());
    let floor = positive.clone().fold(f64::INFINITY, f64::min);
    let floor = if floor.is_finite() { floor } else { 1.0 };
    let ceil = positive.fold(floor, f64::max);
    let mut y_lo = floor.log10().floor();
    let mut y_hi = ceil.log10().ceil();
    if y_hi <= y_lo {
        y_hi = y_lo + 1.0;
    }
    if y_hi - y_lo > 30.0 {
        y_lo = y_hi - 30.0;
    }
    let x_max = series
        .iter()
        .flat_map(|s| s.points.iter().map(|p| p.0))
        .fold(0.0_f64, f64::max)
        .max(1.0);

    let px = |x: f64| left + pw * x / x_max;
    let py = |y: f64| {
        let ly = y.max(floor).log10().clamp(y_lo, y_hi);
        top + ph * (y_hi - ly) / (y_hi - y_lo)
    };

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#, left + pw / 2.0, escape(title));
    let _ = writeln!(
        s,
        r#"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );

    let step = ((y_hi - y_lo) / 8.0).ceil().max(1.0);
    let mut e = y_lo;
    while e <= y_hi + 1e-9 {
        let y = top + ph * (y_hi - e) / (y_hi - y_lo);
        let _ = writeln!(s, r##"<line x1="{left}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#dddddd"/>"##, left + pw);
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">1e{}</text>"#, left - 6.0, y + 4.0, e as i64);
        e += step;
    }
    for k in 0..=5 {
        let xv = x_max * k as f64 / 5.0;
        let x = px(xv);
        let _ = writeln!(s, r#"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="black"/>"#, top + ph, top + ph + 5.0);
        let _ = writeln!(s, r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, top + ph + 18.0, xv.round() as i64);
    }
    let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, left + pw / 2.0, h - 16.0, escape(x_label));
    let _ = writeln!(
        s,
        r#"<text x="18" y="{:.2}" text-anchor="middle" transform="rotate(-90 18 {:.2})">{}</text>"#,
        top + ph / 2.0,
        top + ph / 2.0,
        escape(y_label)
    );

    for (k, ser) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let pts: Vec<String> = ser.points.iter().map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.8" points="{}"/>"#,
            pts.join(" ")
        );
        let ly = top + 14.0 + 20.0 * k as f64;
        let lx = left + pw + 14.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2.5"/>"#,
            lx + 24.0
        );
        let _ = writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, lx + 30.0, ly + 4.0, escape(ser.label));
    }
    s.push_str("</svg>\n");
    s
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_format_round_trips() {
        for v in [0.1, 1.0 / 3.0, 5.625, 1e-300, 304.6875, f64::MAX] {
            let s = fmt_f64(v);
            assert_eq!(s.parse::<f64>().unwrap(), v);
        }
        assert_eq!(fmt_f64(5.625), "5.6250000000000000e0");
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.csv");
        let rows = vec![
            Row { step: 0, loss: 1.5, loss_gap: 0.5 },
            Row { step: 10, loss: 1.0 / 3.0, loss_gap: 1e-9 },
        ];
        write_csv(&path, &rows).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("step,loss,loss_gap\n0,"));
        assert_eq!(read_csv(&path).unwrap(), rows);
    }

    #[test]
    fn svg_is_self_contained() {
        let svg = line_chart_svg(
            "t <1>",
            "step",
            "gap",
            &[
                Series { label: "a", points: vec![(0.0, 10.0), (5.0, 1e-3)] },
                Series { label: "b", points: vec![(0.0, 0.0), (5.0, 1.0)] },
            ],
        );
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains("t &lt;1&gt;"));
        assert!(!svg.contains("href"));
        assert!(svg.trim_end().ends_with("</svg>"));
    }
}
