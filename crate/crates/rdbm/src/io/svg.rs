//! Minimal SVG line plots: one polyline per series, labeled axes.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{RdbmError, Result};

pub struct SvgSeries<'a> {
    pub label: &'a str,
    pub points: Vec<(f64, f64)>,
}

const W: f64 = 640.0;
const H: f64 = 420.0;
const MARGIN: f64 = 56.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// Writes a line plot. Non-finite points are dropped from their series.
pub fn write_svg_lines(
    path: &Path,
    title: &str,
    x_label: &str,
    y_label: &str,
    series: &[SvgSeries],
) -> Result<()> {
    let finite: Vec<Vec<(f64, f64)>> = series
        .iter()
        .map(|s| {
            s.points
                .iter()
                .copied()
                .filter(|(x, y)| x.is_finite() && y.is_finite())
                .collect()
        })
        .collect();
    let all: Vec<(f64, f64)> = finite.iter().flatten().copied().collect();
    if all.is_empty() {
        return Err(RdbmError::InvalidConfig("no finite points to plot".into()));
    }
    let (mut x0, mut x1) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY);
    for (x, y) in &all {
        x0 = x0.min(*x);
        x1 = x1.max(*x);
        y0 = y0.min(*y);
        y1 = y1.max(*y);
    }
    if x1 == x0 {
        x1 = x0 + 1.0;
    }
    if y1 == y0 {
        y1 = y0 + 1.0;
    }
    let sx = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (W - 2.0 * MARGIN);
    let sy = |y: f64| H - MARGIN - (y - y0) / (y1 - y0) * (H - 2.0 * MARGIN);

    let mut w = BufWriter::new(File::create(path)?);
    writeln!(
        w,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    )?;
    writeln!(w, r#"<rect width="{W}" height="{H}" fill="white"/>"#)?;
    writeln!(
        w,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="15" font-family="sans-serif">{}</text>"#,
        W / 2.0,
        title
    )?;
    // Axes.
    writeln!(
        w,
        r#"<line x1="{m}" y1="{b}" x2="{r}" y2="{b}" stroke="black"/><line x1="{m}" y1="{t}" x2="{m}" y2="{b}" stroke="black"/>"#,
        m = MARGIN,
        b = H - MARGIN,
        r = W - MARGIN,
        t = MARGIN
    )?;
    writeln!(
        w,
        r#"<text x="{}" y="{}" text-anchor="middle" font-size="12" font-family="sans-serif">{}</text>"#,
        W / 2.0,
        H - 14.0,
        x_label
    )?;
    writeln!(
        w,
        r#"<text x="16" y="{}" text-anchor="middle" font-size="12" font-family="sans-serif" transform="rotate(-90 16 {})">{}</text>"#,
        H / 2.0,
        H / 2.0,
        y_label
    )?;
    // Range ticks.
    for (v, x, y, anchor) in [
        (x0, sx(x0), H - MARGIN + 16.0, "middle"),
        (x1, sx(x1), H - MARGIN + 16.0, "middle"),
        (y0, MARGIN - 6.0, sy(y0) + 4.0, "end"),
        (y1, MARGIN - 6.0, sy(y1) + 4.0, "end"),
    ] {
        writeln!(
            w,
            r#"<text x="{x:.1}" y="{y:.1}" text-anchor="{anchor}" font-size="10" font-family="sans-serif">{v:.4}</text>"#
        )?;
    }
    for (k, (s, pts)) in series.iter().zip(finite.iter()).enumerate() {
        let color = COLORS[k % COLORS.len()];
        let coords: Vec<String> = pts
            .iter()
            .map(|(x, y)| format!("{:.2},{:.2}", sx(*x), sy(*y)))
            .collect();
        writeln!(
            w,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            coords.join(" ")
        )?;
        writeln!(
            w,
            r#"<text x="{}" y="{}" font-size="12" font-family="sans-serif" fill="{color}">{}</text>"#,
            W - MARGIN + 4.0,
            MARGIN + 16.0 * k as f64,
            s.label
        )?;
    }
    writeln!(w, "</svg>")?;
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_polyline_per_series_with_labels() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.svg");
        let series = [
            SvgSeries { label: "alpha", points: vec![(0.0, 0.0), (1.0, 1.0)] },
            SvgSeries { label: "beta", points: vec![(0.0, 1.0), (1.0, 0.0)] },
        ];
        write_svg_lines(&path, "t", "x", "y", &series).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.matches("<polyline").count(), 2);
        assert!(text.contains("alpha") && text.contains("beta"));
        assert!(text.contains(">x<") && text.contains(">y<"));
    }

    #[test]
    fn infinite_points_are_dropped() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.svg");
        let series = [SvgSeries {
            label: "r",
            points: vec![(0.0, f64::INFINITY), (0.5, 2.0), (1.0, 1.0)],
        }];
        write_svg_lines(&path, "t", "x", "y", &series).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.matches("<polyline").count(), 1);
    }
}
