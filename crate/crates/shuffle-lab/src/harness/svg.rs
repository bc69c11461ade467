//! Minimal self-contained SVG log-log charts.
//!
//! No plotting dependency earns its keep for one chart shape, so this
//! renders polylines by hand. Output is deterministic: fixed canvas,
//! fixed palette, fixed number formatting.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::Result;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const LEFT: f64 = 72.0;
const RIGHT: f64 = 180.0;
const TOP: f64 = 44.0;
const BOTTOM: f64 = 56.0;
const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
];

/// Writes one chart: each series is a named list of (x, y) points, plotted
/// on log10 axes. Points that are not finite and positive are dropped.
pub fn write_loglog_plot(
    path: &Path,
    title: &str,
    series: &[(String, Vec<(f64, f64)>)],
) -> Result<()> {
    let logged: Vec<(String, Vec<(f64, f64)>)> = series
        .iter()
        .map(|(name, pts)| {
            let lp = pts
                .iter()
                .filter(|(x, y)| *x > 0.0 && *y > 0.0 && x.is_finite() && y.is_finite())
                .map(|(x, y)| (x.log10(), y.log10()))
                .collect();
            (name.clone(), lp)
        })
        .collect();

    let mut svg = String::new();
    let _ = write!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    svg.push_str(r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = write!(
        svg,
        r#"<text x="{}" y="24" font-family="sans-serif" font-size="15" text-anchor="middle">{}</text>"#,
        LEFT + (WIDTH - LEFT - RIGHT) / 2.0,
        escape(title)
    );

    let all: Vec<(f64, f64)> = logged.iter().flat_map(|(_, p)| p.iter().copied()).collect();
    if all.is_empty() {
        let _ = write!(
            svg,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="13" text-anchor="middle">no positive finite data</text>"#,
            WIDTH / 2.0,
            HEIGHT / 2.0
        );
        svg.push_str("</svg>\n");
        std::fs::write(path, svg)?;
        return Ok(());
    }

    let pad_range = |lo: f64, hi: f64| {
        if hi > lo {
            let pad = 0.05 * (hi - lo);
            (lo - pad, hi + pad)
        } else {
            (lo - 0.5, hi + 0.5)
        }
    };
    let (x_lo, x_hi) = pad_range(
        all.iter().map(|p| p.0).fold(f64::INFINITY, f64::min),
        all.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max),
    );
    let (y_lo, y_hi) = pad_range(
        all.iter().map(|p| p.1).fold(f64::INFINITY, f64::min),
        all.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max),
    );
    let px = |x: f64| LEFT + (x - x_lo) / (x_hi - x_lo) * (WIDTH - LEFT - RIGHT);
    let py = |y: f64| HEIGHT - BOTTOM - (y - y_lo) / (y_hi - y_lo) * (HEIGHT - TOP - BOTTOM);

    // Frame.
    let _ = write!(
        svg,
        r##"<rect x="{LEFT}" y="{TOP}" width="{}" height="{}" fill="none" stroke="#444"/>"##,
        WIDTH - LEFT - RIGHT,
        HEIGHT - TOP - BOTTOM
    );

    // Ticks at whole decades, thinned to at most six per axis.
    let decade_ticks = |lo: f64, hi: f64| -> Vec<f64> {
        let first = lo.ceil() as i64;
        let last = hi.floor() as i64;
        if first > last {
            return vec![(lo + hi) / 2.0];
        }
        let count = (last - first + 1) as usize;
        let stride = count.div_ceil(6).max(1);
        (first..=last)
            .step_by(stride)
            .map(|k| k as f64)
            .collect()
    };
    for t in decade_ticks(x_lo, x_hi) {
        let x = px(t);
        let _ = write!(
            svg,
            r##"<line x1="{x:.2}" y1="{}" x2="{x:.2}" y2="{}" stroke="#444"/>"##,
            HEIGHT - BOTTOM,
            HEIGHT - BOTTOM + 5.0
        );
        let _ = write!(
            svg,
            r#"<text x="{x:.2}" y="{}" font-family="sans-serif" font-size="11" text-anchor="middle">{}</text>"#,
            HEIGHT - BOTTOM + 18.0,
            tick_label(t)
        );
    }
    for t in decade_ticks(y_lo, y_hi) {
        let y = py(t);
        let _ = write!(
            svg,
            r##"<line x1="{}" y1="{y:.2}" x2="{LEFT}" y2="{y:.2}" stroke="#444"/>"##,
            LEFT - 5.0
        );
        let _ = write!(
            svg,
            r#"<text x="{}" y="{y:.2}" font-family="sans-serif" font-size="11" text-anchor="end" dominant-baseline="middle">{}</text>"#,
            LEFT - 8.0,
            tick_label(t)
        );
    }

    // Axis names.
    let _ = write!(
        svg,
        r#"<text x="{}" y="{}" font-family="sans-serif" font-size="12" text-anchor="middle">oracle calls T</text>"#,
        LEFT + (WIDTH - LEFT - RIGHT) / 2.0,
        HEIGHT - 14.0
    );
    let _ = write!(
        svg,
        r#"<text x="16" y="{}" font-family="sans-serif" font-size="12" text-anchor="middle" transform="rotate(-90 16 {})">mean squared error</text>"#,
        TOP + (HEIGHT - TOP - BOTTOM) / 2.0,
        TOP + (HEIGHT - TOP - BOTTOM) / 2.0
    );

    // Series and legend.
    for (i, (name, pts)) in logged.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        if !pts.is_empty() {
            let mut coords = String::new();
            for (x, y) in pts {
                let _ = write!(coords, "{:.2},{:.2} ", px(*x), py(*y));
            }
            let _ = write!(
                svg,
                r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.8"/>"#,
                coords.trim_end()
            );
            for (x, y) in pts {
                let _ = write!(
                    svg,
                    r#"<circle cx="{:.2}" cy="{:.2}" r="2.6" fill="{color}"/>"#,
                    px(*x),
                    py(*y)
                );
            }
        }
        let ly = TOP + 14.0 + 18.0 * i as f64;
        let lx = WIDTH - RIGHT + 12.0;
        let _ = write!(
            svg,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="1.8"/>"#,
            lx + 22.0
        );
        let _ = write!(
            svg,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="12">{}</text>"#,
            lx + 28.0,
            ly + 4.0,
            escape(name)
        );
    }

    svg.push_str("</svg>\n");
    std::fs::write(path, svg)?;
    Ok(())
}

fn tick_label(log_value: f64) -> String {
    if (log_value - log_value.round()).abs() < 1e-9 {
        format!("1e{}", log_value.round() as i64)
    } else {
        format!("{:.2e}", 10f64.powf(log_value))
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chart_renders_every_series_deterministically() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("plot.svg");
        let series = vec![
            (
                "shuffled".to_string(),
                vec![(8.0, 1e-2), (16.0, 1e-3), (32.0, 2e-4)],
            ),
            ("sampled".to_string(), vec![(8.0, 2e-2), (16.0, 8e-3)]),
        ];
        write_loglog_plot(&path, "demo", &series).unwrap();
        let a = std::fs::read(&path).unwrap();
        let text = String::from_utf8(a.clone()).unwrap();
        assert!(text.contains("<svg"));
        assert!(text.contains("shuffled"));
        assert!(text.contains("sampled"));
        assert_eq!(text.matches("<polyline").count(), 2);
        write_loglog_plot(&path, "demo", &series).unwrap();
        assert_eq!(a, std::fs::read(&path).unwrap());
    }

    #[test]
    fn empty_data_still_produces_a_chart() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.svg");
        write_loglog_plot(&path, "nothing", &[("x".to_string(), vec![])]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains("no positive finite data"));
    }
}
