//! SVG line plot of an infiltration curve: density over signed distance,
//! tumor margin at 0, neoplastic side on the left.

use std::fmt::Write;

use crate::profile::{FixedWindowSeries, InfiltrationCurve};

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 400.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 20.0;
const BOTTOM: f64 = 50.0;

fn nice_step(span: f64) -> f64 {
    let raw = span / 8.0;
    let mag = 10f64.powf(raw.log10().floor());
    [1.0, 2.0, 2.5, 5.0, 10.0]
        .into_iter()
        .map(|m| m * mag)
        .find(|&s| s >= raw)
        .unwrap_or(10.0 * mag)
}

/// Renders the non-empty bins of a curve; output depends only on the curve values.
pub fn curve_svg(curve: &InfiltrationCurve, title: &str) -> String {
    let points: Vec<(f64, f64)> = (0..curve.len())
        .filter(|&i| curve.tissue_px[i] > 0)
        .map(|i| {
            (
                0.5 * (curve.bin_edges_um[i] + curve.bin_edges_um[i + 1]),
                curve.density[i],
            )
        })
        .collect();
    render(&points, curve.bin_edges_um[0], curve.bin_edges_um[curve.len()], title)
}

pub fn window_svg(series: &FixedWindowSeries, title: &str) -> String {
    let points: Vec<(f64, f64)> = series
        .values()
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let (a, b) = FixedWindowSeries::bin_range(i);
            (0.5 * (a + b), v)
        })
        .collect();
    let n = series.values().len();
    render(
        &points,
        FixedWindowSeries::bin_range(0).0,
        FixedWindowSeries::bin_range(n - 1).1,
        title,
    )
}

fn render(points: &[(f64, f64)], start_um: f64, end_um: f64, title: &str) -> String {
    let x_min = start_um.min(0.0);
    let x_max = end_um.max(0.0);
    let y_max = points.iter().map(|p| p.1).fold(0.0, f64::max).max(1e-3) * 1.05;
    let y_max = y_max.min(1.0);
    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let sx = |x: f64| LEFT + (x - x_min) / (x_max - x_min) * plot_w;
    let sy = |y: f64| TOP + (1.0 - y / y_max) * plot_h;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(svg, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="14" text-anchor="middle">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );

    // axes
    let (x0, x1, y0, y1) = (sx(x_min), sx(x_max), sy(0.0), sy(y_max));
    let _ = writeln!(
        svg,
        r#"<path d="M{x0:.2} {y1:.2}V{y0:.2}H{x1:.2}" fill="none" stroke="black"/>"#
    );

    let step = nice_step(x_max - x_min);
    let mut tick = (x_min / step).ceil() * step;
    while tick <= x_max + 1e-9 {
        let x = sx(tick);
        let _ = writeln!(
            svg,
            r#"<line x1="{x:.2}" y1="{y0:.2}" x2="{x:.2}" y2="{:.2}" stroke="black"/>"#,
            y0 + 4.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            y0 + 16.0,
            tick
        );
        tick += step;
    }
    let ystep = nice_step(y_max);
    let mut t = 0.0;
    while t <= y_max + 1e-12 {
        let y = sy(t);
        let _ = writeln!(
            svg,
            r#"<line x1="{:.2}" y1="{y:.2}" x2="{x0:.2}" y2="{y:.2}" stroke="black"/>"#,
            x0 - 4.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{:.3}</text>"#,
            x0 - 6.0,
            y + 4.0,
            t
        );
        t += ystep;
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">signed distance to tumor margin (µm)</text>"#,
        LEFT + plot_w / 2.0,
        HEIGHT - 10.0
    );
    let _ = writeln!(
        svg,
        r#"<text transform="translate(16 {:.1}) rotate(-90)" text-anchor="middle">lymphocyte pixel density</text>"#,
        TOP + plot_h / 2.0
    );

    // margin
    let xm = sx(0.0);
    let _ = writeln!(
        svg,
        r#"<line x1="{xm:.2}" y1="{y0:.2}" x2="{xm:.2}" y2="{y1:.2}" stroke="gray" stroke-dasharray="4 3"/>"#
    );
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="end" fill="gray">neoplastic</text>"#,
        xm - 4.0,
        y1 + 12.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" fill="gray">normal</text>"#,
        xm + 4.0,
        y1 + 12.0
    );

    let mut d = String::new();
    for &(xc, density) in points {
        let cmd = if d.is_empty() { 'M' } else { 'L' };
        let _ = write!(d, "{cmd}{:.2} {:.2}", sx(xc), sy(density));
    }
    let _ = writeln!(svg, r#"<path d="{d}" fill="none" stroke="green" stroke-width="1.5"/>"#);
    svg.push_str("</svg>\n");
    svg
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn svg_is_deterministic_and_well_formed() {
        let c = InfiltrationCurve::from_counts(10.0, -5, vec![10, 10, 0, 10, 10, 10, 10], vec![1, 2, 0, 3, 4, 5, 6])
            .unwrap();
        let a = curve_svg(&c, "case <1>");
        assert_eq!(a, curve_svg(&c, "case <1>"));
        assert!(a.starts_with("<svg") && a.ends_with("</svg>\n"));
        assert!(a.contains("case &lt;1&gt;"));
        // six non-empty bins -> one move and five line segments
        let path = a.lines().find(|l| l.contains("stroke=\"green\"")).unwrap();
        assert_eq!(path.matches('M').count(), 1);
        assert_eq!(path.matches('L').count(), 5);
    }

    #[test]
    fn tick_steps() {
        assert_eq!(nice_step(4000.0), 500.0);
        assert_eq!(nice_step(1.0), 0.2);
    }
}
