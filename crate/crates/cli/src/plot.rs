//! Hand-rolled SVG line plots: residual histories and energy traces. No
//! drawing dependency — the files are a few polylines with axes and a legend,
//! rendered with fixed-precision coordinates so identical data produces
//! identical bytes.

use std::fmt::Write as _;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 20.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 50.0;

const PALETTE: [&str; 4] = ["#1f6f8b", "#c2571a", "#5b8c5a", "#7b4b94"];

pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

fn fmt(v: f64) -> String {
    format!("{v:.2}")
}

fn tick_label(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v.abs() >= 1e-3 && v.abs() < 1e4 {
        let s = format!("{v:.4}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        format!("{v:.1e}")
    }
}

/// Render series into an SVG document. When `log_y` is set the y values are
/// plotted on a log10 axis (non-positive values are dropped) and the tick
/// labels show the original magnitudes.
pub fn line_plot(title: &str, x_label: &str, y_label: &str, series: &[Series], log_y: bool) -> String {
    let mapped: Vec<(String, Vec<(f64, f64)>)> = series
        .iter()
        .map(|s| {
            let pts = s
                .points
                .iter()
                .filter(|(_, y)| !log_y || *y > 0.0)
                .map(|(x, y)| (*x, if log_y { y.log10() } else { *y }))
                .collect();
            (s.label.clone(), pts)
        })
        .collect();

    let all: Vec<(f64, f64)> = mapped.iter().flat_map(|(_, p)| p.iter().copied()).collect();
    let (mut x0, mut x1) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY);
    for (x, y) in &all {
        x0 = x0.min(*x);
        x1 = x1.max(*x);
        y0 = y0.min(*y);
        y1 = y1.max(*y);
    }
    if all.is_empty() {
        x0 = 0.0;
        x1 = 1.0;
        y0 = 0.0;
        y1 = 1.0;
    }
    if x1 - x0 < 1e-300 {
        x1 = x0 + 1.0;
    }
    if y1 - y0 < 1e-12 {
        let pad = y0.abs().max(1.0) * 1e-6;
        y0 -= pad;
        y1 += pad;
    }

    let px = |x: f64| MARGIN_L + (x - x0) / (x1 - x0) * (WIDTH - MARGIN_L - MARGIN_R);
    let py = |y: f64| HEIGHT - MARGIN_B - (y - y0) / (y1 - y0) * (HEIGHT - MARGIN_T - MARGIN_B);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(svg, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="24" font-family="sans-serif" font-size="15" text-anchor="middle">{title}</text>"#,
        WIDTH / 2.0
    );

    // Axes.
    let _ = writeln!(
        svg,
        r#"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#,
        fmt(MARGIN_L),
        fmt(HEIGHT - MARGIN_B),
        fmt(WIDTH - MARGIN_R),
        fmt(HEIGHT - MARGIN_B)
    );
    let _ = writeln!(
        svg,
        r#"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#,
        fmt(MARGIN_L),
        fmt(MARGIN_T),
        fmt(MARGIN_L),
        fmt(HEIGHT - MARGIN_B)
    );

    // Five ticks per axis.
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let xv = x0 + f * (x1 - x0);
        let yv = y0 + f * (y1 - y0);
        let xp = px(xv);
        let yp = py(yv);
        let _ = writeln!(
            svg,
            r#"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#,
            fmt(xp),
            fmt(HEIGHT - MARGIN_B),
            fmt(xp),
            fmt(HEIGHT - MARGIN_B + 5.0)
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="11" text-anchor="middle">{}</text>"#,
            fmt(xp),
            fmt(HEIGHT - MARGIN_B + 18.0),
            tick_label(xv)
        );
        let _ = writeln!(
            svg,
            r#"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#,
            fmt(MARGIN_L - 5.0),
            fmt(yp),
            fmt(MARGIN_L),
            fmt(yp)
        );
        let label = if log_y {
            format!("1e{}", tick_label(yv))
        } else {
            tick_label(yv)
        };
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="11" text-anchor="end">{label}</text>"#,
            fmt(MARGIN_L - 8.0),
            fmt(yp + 4.0)
        );
    }

    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" font-family="sans-serif" font-size="12" text-anchor="middle">{x_label}</text>"#,
        WIDTH / 2.0,
        HEIGHT - 10.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="16" y="{}" font-family="sans-serif" font-size="12" text-anchor="middle" transform="rotate(-90 16 {})">{y_label}</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0
    );

    for (i, (label, pts)) in mapped.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        if !pts.is_empty() {
            let path: Vec<String> = pts
                .iter()
                .map(|(x, y)| format!("{},{}", fmt(px(*x)), fmt(py(*y))))
                .collect();
            let _ = writeln!(
                svg,
                r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
                path.join(" ")
            );
            for (x, y) in pts {
                let _ = writeln!(
                    svg,
                    r#"<circle cx="{}" cy="{}" r="2.5" fill="{color}"/>"#,
                    fmt(px(*x)),
                    fmt(py(*y))
                );
            }
        }
        let ly = MARGIN_T + 16.0 * i as f64;
        let _ = writeln!(
            svg,
            r#"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="{color}" stroke-width="2"/>"#,
            fmt(WIDTH - MARGIN_R - 150.0),
            fmt(ly),
            fmt(WIDTH - MARGIN_R - 130.0),
            fmt(ly)
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="11">{label}</text>"#,
            fmt(WIDTH - MARGIN_R - 124.0),
            fmt(ly + 4.0)
        );
    }

    svg.push_str("</svg>\n");
    svg
}

/// Residual-vs-iteration plot on a log axis.
pub fn residual_plot(solver: &str, residuals: &[f64]) -> String {
    let series = Series {
        label: format!("{solver} residual"),
        points: residuals
            .iter()
            .enumerate()
            .map(|(k, r)| (k as f64, *r))
            .collect(),
    };
    line_plot(
        &format!("{solver}: fixed-point residual per iteration"),
        "iteration",
        "residual (log scale)",
        &[series],
        true,
    )
}

/// Energy components along the solved trajectory.
pub fn energy_plot(times: &[f64], script: &[f64], physical: &[f64]) -> String {
    let mk = |label: &str, ys: &[f64]| Series {
        label: label.into(),
        points: times.iter().copied().zip(ys.iter().copied()).collect(),
    };
    line_plot(
        "energy along the solved trajectory",
        "time",
        "energy",
        &[mk("conserved form", script), mk("physical", physical)],
        false,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_plot_drops_nonpositive_and_is_deterministic() {
        let a = residual_plot("demo", &[1e-1, 1e-4, 0.0, 1e-9]);
        let b = residual_plot("demo", &[1e-1, 1e-4, 0.0, 1e-9]);
        assert_eq!(a, b);
        assert!(a.starts_with("<svg"));
        assert!(a.contains("polyline"));
        // Three positive points -> three markers.
        assert_eq!(a.matches("<circle").count(), 3);
    }

    #[test]
    fn energy_plot_carries_both_series() {
        let svg = energy_plot(&[0.0, 0.1, 0.2], &[1.0, 1.0, 1.0], &[1.0, 1.1, 1.2]);
        assert_eq!(svg.matches("polyline").count(), 2);
        assert!(svg.contains("conserved form"));
        assert!(svg.contains("physical"));
    }
}
