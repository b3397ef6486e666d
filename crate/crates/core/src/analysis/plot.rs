//! Minimal SVG output: line charts and heatmaps.

use std::fmt::Write;

const PANEL_W: f64 = 360.0;
const PANEL_H: f64 = 260.0;
const MARGIN: f64 = 48.0;
const PALETTE: [&str; 10] =
    ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"];

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Panel {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
    /// Fixed y range; otherwise fitted to the data.
    pub y_range: Option<(f64, f64)>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn extent(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.filter(|v| v.is_finite()).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        (0.0, 1.0)
    } else if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

/// Panels laid out left to right, one polyline per series.
pub fn line_chart(panels: &[Panel]) -> String {
    let width = MARGIN + panels.len() as f64 * (PANEL_W + MARGIN);
    let height = PANEL_H + 2.0 * MARGIN + 20.0 * panels.iter().map(|p| p.series.len()).max().unwrap_or(0).div_ceil(4) as f64;
    let mut s = String::new();
    let _ = write!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">"#
    );
    s.push_str(r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (pi, panel) in panels.iter().enumerate() {
        let x0 = MARGIN + pi as f64 * (PANEL_W + MARGIN);
        let y0 = MARGIN;
        let (xmin, xmax) = extent(panel.series.iter().flat_map(|se| se.points.iter().map(|p| p.0)));
        let (ymin, ymax) = panel.y_range.unwrap_or_else(|| extent(panel.series.iter().flat_map(|se| se.points.iter().map(|p| p.1))));
        let sx = |x: f64| x0 + (x - xmin) / (xmax - xmin) * PANEL_W;
        let sy = |y: f64| y0 + PANEL_H - (y - ymin) / (ymax - ymin) * PANEL_H;
        let _ = write!(s, r#"<g class="panel"><rect x="{x0}" y="{y0}" width="{PANEL_W}" height="{PANEL_H}" fill="none" stroke="black"/>"#);
        let _ = write!(s, r#"<text x="{}" y="{}" text-anchor="middle" font-size="13">{}</text>"#, x0 + PANEL_W / 2.0, y0 - 10.0, escape(&panel.title));
        let _ = write!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, x0 + PANEL_W / 2.0, y0 + PANEL_H + 32.0, escape(&panel.x_label));
        let _ = write!(
            s,
            r#"<text transform="translate({},{}) rotate(-90)" text-anchor="middle">{}</text>"#,
            x0 - 34.0,
            y0 + PANEL_H / 2.0,
            escape(&panel.y_label)
        );
        for i in 0..=4 {
            let f = i as f64 / 4.0;
            let xv = xmin + f * (xmax - xmin);
            let yv = ymin + f * (ymax - ymin);
            let _ = write!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, sx(xv), y0 + PANEL_H + 14.0, tick(xv));
            let _ = write!(s, r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#, x0 - 4.0, sy(yv) + 4.0, tick(yv));
        }
        for (si, se) in panel.series.iter().enumerate() {
            let color = PALETTE[si % PALETTE.len()];
            let pts: Vec<String> = se
                .points
                .iter()
                .filter(|p| p.0.is_finite() && p.1.is_finite())
                .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
                .collect();
            let _ = write!(s, r#"<polyline class="series" fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, pts.join(" "));
            let lx = x0 + (si % 4) as f64 * (PANEL_W / 4.0);
            let ly = y0 + PANEL_H + 50.0 + (si / 4) as f64 * 20.0;
            let _ = write!(s, r#"<rect x="{lx}" y="{}" width="10" height="10" fill="{color}"/>"#, ly - 9.0);
            let _ = write!(s, r#"<text x="{}" y="{ly}">{}</text>"#, lx + 14.0, escape(&se.name));
        }
        s.push_str("</g>");
    }
    s.push_str("</svg>\n");
    s
}

fn tick(v: f64) -> String {
    if v.abs() >= 1000.0 {
        format!("{v:.0}")
    } else if v.fract().abs() < 1e-9 {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

/// Square heatmap of a row-major `[n, n]` matrix in linear grayscale
/// (0 white, `max` black), with ticks at `ticks`.
pub fn heatmap(matrix: &[f64], n: usize, ticks: &[usize], title: &str) -> String {
    let cell = (360.0 / n.max(1) as f64).max(4.0);
    let side = cell * n as f64;
    let max = matrix.iter().copied().fold(0.0f64, f64::max).max(1e-12);
    let mut s = String::new();
    let _ = write!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" font-family="sans-serif" font-size="11">"#,
        side + 2.0 * MARGIN,
        side + 2.0 * MARGIN
    );
    s.push_str(r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = write!(s, r#"<text x="{}" y="{}" text-anchor="middle" font-size="13">{}</text>"#, MARGIN + side / 2.0, MARGIN - 20.0, escape(title));
    for r in 0..n {
        for c in 0..n {
            let v = (matrix[r * n + c] / max).clamp(0.0, 1.0);
            let g = (255.0 * (1.0 - v)).round() as u8;
            let _ = write!(
                s,
                r#"<rect class="cell" x="{:.2}" y="{:.2}" width="{cell:.2}" height="{cell:.2}" fill="rgb({g},{g},{g})"/>"#,
                MARGIN + c as f64 * cell,
                MARGIN + r as f64 * cell
            );
        }
    }
    let _ = write!(s, r#"<rect x="{MARGIN}" y="{MARGIN}" width="{side}" height="{side}" fill="none" stroke="black"/>"#);
    for &t in ticks {
        let p = MARGIN + t as f64 * cell;
        let _ = write!(s, r#"<line x1="{p}" y1="{}" x2="{p}" y2="{MARGIN}" stroke="black"/>"#, MARGIN - 5.0);
        let _ = write!(s, r#"<line x1="{}" y1="{p}" x2="{MARGIN}" y2="{p}" stroke="black"/>"#, MARGIN - 5.0);
        let _ = write!(s, r#"<text x="{p}" y="{}" text-anchor="middle">{t}</text>"#, MARGIN + side + 14.0);
        let _ = write!(s, r#"<text x="{}" y="{}" text-anchor="end">{t}</text>"#, MARGIN - 8.0, p + 4.0);
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn heatmap_has_one_cell_per_entry() {
        let m: Vec<f64> = (0..16).map(|i| i as f64).collect();
        let svg = heatmap(&m, 4, &[0, 2], "t");
        assert_eq!(svg.matches(r#"class="cell""#).count(), 16);
        assert!(svg.contains("rgb(255,255,255)"));
        assert!(svg.contains("rgb(0,0,0)"));
    }

    #[test]
    fn chart_panels_and_series() {
        let p = Panel {
            title: "a<b".into(),
            series: vec![
                Series { name: "l1".into(), points: vec![(0.0, 0.0), (1.0, 1.0)] },
                Series { name: "l2".into(), points: vec![(0.0, 1.0), (1.0, f64::NAN)] },
            ],
            ..Panel::default()
        };
        let svg = line_chart(&[p.clone(), p]);
        assert_eq!(svg.matches(r#"class="panel""#).count(), 2);
        assert_eq!(svg.matches(r#"class="series""#).count(), 4);
        assert!(svg.contains("a&lt;b"));
    }
}
