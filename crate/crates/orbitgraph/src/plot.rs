//! Minimal deterministic SVG line charts: stacked panels sharing an x
//! axis, each with its own y scale. No timestamps or randomness in the
//! output, so identical inputs produce identical bytes.

use std::fmt::Write as _;

pub struct Series {
    pub label: String,
    pub color: &'static str,
    pub points: Vec<(f64, f64)>,
}

pub struct Panel {
    pub title: String,
    pub series: Vec<Series>,
}

const PANEL_WIDTH: f64 = 760.0;
const PANEL_HEIGHT: f64 = 180.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 20.0;
const MARGIN_TOP: f64 = 40.0;
const PANEL_GAP: f64 = 46.0;
const MARGIN_BOTTOM: f64 = 50.0;

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in values {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() || !hi.is_finite() {
        return (0.0, 1.0);
    }
    if lo == hi {
        // Flat series: pad so the line sits mid-panel.
        let pad = if lo == 0.0 { 1.0 } else { lo.abs() * 0.1 };
        return (lo - pad, hi + pad);
    }
    let pad = (hi - lo) * 0.05;
    (lo - pad, hi + pad)
}

fn fmt2(x: f64) -> String {
    format!("{x:.2}")
}

fn fmt_tick(x: f64) -> String {
    if x != 0.0 && (x.abs() >= 1e4 || x.abs() < 1e-2) {
        format!("{x:.2e}")
    } else {
        format!("{x:.2}")
    }
}

/// Render stacked panels over a shared x axis.
pub fn panel_chart(title: &str, x_label: &str, panels: &[Panel]) -> String {
    let width = MARGIN_LEFT + PANEL_WIDTH + MARGIN_RIGHT;
    let height = MARGIN_TOP
        + panels.len() as f64 * (PANEL_HEIGHT + PANEL_GAP)
        + MARGIN_BOTTOM
        - PANEL_GAP;

    let (x_lo, x_hi) = bounds(
        panels
            .iter()
            .flat_map(|p| p.series.iter())
            .flat_map(|s| s.points.iter().map(|&(x, _)| x)),
    );

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" viewBox=\"0 0 {} {}\">",
        fmt2(width),
        fmt2(height),
        fmt2(width),
        fmt2(height)
    );
    let _ = writeln!(svg, "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>");
    let _ = writeln!(
        svg,
        "<text x=\"{}\" y=\"24\" font-family=\"sans-serif\" font-size=\"16\" text-anchor=\"middle\">{}</text>",
        fmt2(width / 2.0),
        title
    );

    for (pi, panel) in panels.iter().enumerate() {
        let top = MARGIN_TOP + pi as f64 * (PANEL_HEIGHT + PANEL_GAP);
        let (y_lo, y_hi) = bounds(
            panel
                .series
                .iter()
                .flat_map(|s| s.points.iter().map(|&(_, y)| y)),
        );
        let map_x = |x: f64| MARGIN_LEFT + (x - x_lo) / (x_hi - x_lo) * PANEL_WIDTH;
        let map_y = |y: f64| top + PANEL_HEIGHT - (y - y_lo) / (y_hi - y_lo) * PANEL_HEIGHT;

        let _ = writeln!(
            svg,
            "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#888\" stroke-width=\"1\"/>",
            fmt2(MARGIN_LEFT),
            fmt2(top),
            fmt2(PANEL_WIDTH),
            fmt2(PANEL_HEIGHT)
        );
        let _ = writeln!(
            svg,
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">{}</text>",
            fmt2(MARGIN_LEFT + PANEL_WIDTH / 2.0),
            fmt2(top - 6.0),
            panel.title
        );

        // Y ticks at quarters.
        for tick in 0..=4 {
            let y_val = y_lo + (y_hi - y_lo) * tick as f64 / 4.0;
            let y = map_y(y_val);
            let _ = writeln!(
                svg,
                "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#ddd\" stroke-width=\"1\"/>",
                fmt2(MARGIN_LEFT),
                fmt2(y),
                fmt2(MARGIN_LEFT + PANEL_WIDTH),
                fmt2(y)
            );
            let _ = writeln!(
                svg,
                "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"end\">{}</text>",
                fmt2(MARGIN_LEFT - 6.0),
                fmt2(y + 3.0),
                fmt_tick(y_val)
            );
        }

        for series in &panel.series {
            if series.points.is_empty() {
                continue;
            }
            let mut path = String::new();
            for &(x, y) in &series.points {
                let _ = write!(path, "{},{} ", fmt2(map_x(x)), fmt2(map_y(y)));
            }
            let _ = writeln!(
                svg,
                "<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\" points=\"{}\"/>",
                series.color,
                path.trim_end()
            );
        }

        // Legend in the panel's top-right corner.
        for (si, series) in panel.series.iter().enumerate() {
            let ly = top + 14.0 + si as f64 * 14.0;
            let lx = MARGIN_LEFT + PANEL_WIDTH - 130.0;
            let _ = writeln!(
                svg,
                "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"{}\" stroke-width=\"2\"/>",
                fmt2(lx),
                fmt2(ly - 4.0),
                fmt2(lx + 18.0),
                fmt2(ly - 4.0),
                series.color
            );
            let _ = writeln!(
                svg,
                "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\">{}</text>",
                fmt2(lx + 24.0),
                fmt2(ly),
                series.label
            );
        }
    }

    // Shared x axis: ticks on the bottom panel.
    let bottom = MARGIN_TOP + panels.len() as f64 * (PANEL_HEIGHT + PANEL_GAP) - PANEL_GAP;
    for tick in 0..=5 {
        let x_val = x_lo + (x_hi - x_lo) * tick as f64 / 5.0;
        let x = MARGIN_LEFT + (x_val - x_lo) / (x_hi - x_lo) * PANEL_WIDTH;
        let _ = writeln!(
            svg,
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"middle\">{}</text>",
            fmt2(x),
            fmt2(bottom + 16.0),
            fmt_tick(x_val)
        );
    }
    let _ = writeln!(
        svg,
        "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">{}</text>",
        fmt2(MARGIN_LEFT + PANEL_WIDTH / 2.0),
        fmt2(bottom + 36.0),
        x_label
    );
    let _ = writeln!(svg, "</svg>");
    svg
}
