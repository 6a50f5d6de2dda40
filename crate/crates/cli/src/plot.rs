//! Minimal SVG charts on a fixed 0..100 value axis.

use std::fmt::Write as _;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 360.0;
const LEFT: f64 = 56.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 70.0;
const COLORS: [&str; 4] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

fn plot_height() -> f64 {
    HEIGHT - TOP - BOTTOM
}

fn y_of(v: f64) -> f64 {
    TOP + plot_height() * (1.0 - v.clamp(0.0, 100.0) / 100.0)
}

fn frame(title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
    for tick in (0..=100).step_by(20) {
        let y = y_of(tick as f64);
        let _ = writeln!(
            s,
            r##"<line x1="{LEFT}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#ddd"/><text x="{:.1}" y="{:.1}" text-anchor="end">{tick}</text>"##,
            WIDTH - RIGHT,
            LEFT - 6.0,
            y + 4.0
        );
    }
    s
}

fn legend(s: &mut String, names: &[&str]) {
    let y = HEIGHT - 18.0;
    for (i, name) in names.iter().enumerate() {
        let x = LEFT + 180.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<rect x="{x:.1}" y="{:.1}" width="12" height="12" fill="{}"/><text x="{:.1}" y="{y:.1}">{}</text>"#,
            y - 10.0,
            COLORS[i % COLORS.len()],
            x + 16.0,
            escape(name)
        );
    }
}

/// Grouped bars, one group per category and one bar per series.
pub fn bar_chart(title: &str, categories: &[String], series: &[(&str, Vec<f64>)]) -> String {
    let mut s = frame(title);
    let slot = (WIDTH - LEFT - RIGHT) / categories.len().max(1) as f64;
    let bar = slot * 0.8 / series.len().max(1) as f64;
    for (c, cat) in categories.iter().enumerate() {
        let x0 = LEFT + slot * c as f64 + slot * 0.1;
        for (k, (_, values)) in series.iter().enumerate() {
            let v = values.get(c).copied().unwrap_or(0.0);
            let y = y_of(v);
            let _ = writeln!(
                s,
                r#"<rect x="{:.1}" y="{y:.1}" width="{:.1}" height="{:.1}" fill="{}"><title>{v:.2}</title></rect>"#,
                x0 + bar * k as f64,
                bar,
                TOP + plot_height() - y,
                COLORS[k % COLORS.len()]
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            x0 + slot * 0.4,
            TOP + plot_height() + 16.0,
            escape(cat)
        );
    }
    legend(&mut s, &series.iter().map(|(n, _)| *n).collect::<Vec<_>>());
    s.push_str("</svg>\n");
    s
}

/// One polyline per series over evenly spaced x positions.
pub fn line_chart(title: &str, xs: &[String], series: &[(&str, Vec<f64>)]) -> String {
    let mut s = frame(title);
    let span = WIDTH - LEFT - RIGHT - 40.0;
    let x_of = |i: usize| {
        LEFT + 20.0
            + if xs.len() > 1 {
                span * i as f64 / (xs.len() - 1) as f64
            } else {
                span / 2.0
            }
    };
    for (i, x) in xs.iter().enumerate() {
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            x_of(i),
            TOP + plot_height() + 16.0,
            escape(x)
        );
    }
    for (k, (_, values)) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let points: Vec<String> = values
            .iter()
            .enumerate()
            .map(|(i, &v)| format!("{:.1},{:.1}", x_of(i), y_of(v)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            points.join(" ")
        );
        for (i, &v) in values.iter().enumerate() {
            let _ = writeln!(
                s,
                r#"<circle cx="{:.1}" cy="{:.1}" r="3" fill="{color}"><title>{v:.2}</title></circle>"#,
                x_of(i),
                y_of(v)
            );
        }
    }
    legend(&mut s, &series.iter().map(|(n, _)| *n).collect::<Vec<_>>());
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bars_scale_with_values() {
        let svg = bar_chart("t", &["a".into(), "b".into()], &[("s", vec![100.0, 50.0])]);
        let heights: Vec<f64> = svg
            .lines()
            .filter(|l| l.starts_with("<rect x") && l.contains("<title>"))
            .map(|l| {
                let h = l.split("height=\"").nth(1).unwrap();
                h[..h.find('"').unwrap()].parse().unwrap()
            })
            .collect();
        assert_eq!(heights.len(), 2);
        assert!((heights[0] - 2.0 * heights[1]).abs() < 0.2);
        assert!(svg.ends_with("</svg>\n"));
    }

    #[test]
    fn labels_are_escaped() {
        let svg = line_chart("a < b", &["0".into()], &[("x & y", vec![1.0])]);
        assert!(svg.contains("a &lt; b"));
        assert!(svg.contains("x &amp; y"));
    }
}
