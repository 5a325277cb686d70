//! Minimal deterministic SVG line charts.

use std::fmt::Write;

#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Figure {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_x: bool,
    pub series: Vec<Series>,
}

const W: f64 = 480.0;
const H: f64 = 320.0;
const LEFT: f64 = 60.0;
const RIGHT: f64 = 130.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 45.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn span(lo: f64, hi: f64) -> (f64, f64) {
    if hi > lo {
        (lo, hi)
    } else {
        (lo - 0.5, hi + 0.5)
    }
}

/// Renders the figure, skipping series without finite points. Returns `None`
/// when nothing is left to draw.
pub fn render_svg(fig: &Figure) -> Option<String> {
    let tx = |x: f64| if fig.log_x { x.ln() } else { x };
    let series: Vec<(&str, Vec<(f64, f64)>)> = fig
        .series
        .iter()
        .filter_map(|s| {
            let pts: Vec<(f64, f64)> =
                s.points.iter().copied().filter(|&(x, y)| tx(x).is_finite() && y.is_finite()).collect();
            if pts.is_empty() {
                log::warn!("{}: series {:?} has no finite points, omitted", fig.title, s.label);
                None
            } else {
                Some((s.label.as_str(), pts))
            }
        })
        .collect();
    if series.is_empty() {
        return None;
    }
    let all = series.iter().flat_map(|(_, p)| p.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in all {
        x0 = x0.min(tx(x));
        x1 = x1.max(tx(x));
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    let (x0, x1) = span(x0, x1);
    let (y0, y1) = span(y0, y1);
    let (pw, ph) = (W - LEFT - RIGHT, H - TOP - BOTTOM);
    let px = |x: f64| LEFT + (tx(x) - x0) / (x1 - x0) * pw;
    let py = |y: f64| TOP + (1.0 - (y - y0) / (y1 - y0)) * ph;
    let raw_x = |v: f64| if fig.log_x { v.exp() } else { v };

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#);
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{:.1}" y="18" text-anchor="middle" font-size="13">{}</text>"#, LEFT + pw / 2.0, escape(&fig.title));
    let _ = writeln!(s, r#"<path d="M{LEFT} {TOP} V{:.1} H{:.1}" fill="none" stroke="black"/>"#, TOP + ph, LEFT + pw);
    for (v, anchor) in [(x0, "start"), (x1, "end")] {
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="{anchor}">{:.3}</text>"#, LEFT + (v - x0) / (x1 - x0) * pw, TOP + ph + 14.0, raw_x(v));
    }
    for v in [y0, y1] {
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{:.3}</text>"#, LEFT - 4.0, py(v) + 4.0, v);
    }
    let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, LEFT + pw / 2.0, H - 10.0, escape(&fig.x_label));
    let _ = writeln!(s, r#"<text x="15" y="{:.1}" text-anchor="middle" transform="rotate(-90 15 {:.1})">{}</text>"#, TOP + ph / 2.0, TOP + ph / 2.0, escape(&fig.y_label));
    for (i, (label, pts)) in series.iter().enumerate() {
        let c = COLORS[i % COLORS.len()];
        let coords: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.1},{:.1}", px(x), py(y))).collect();
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{c}" stroke-width="1.5" points="{}"/>"#, coords.join(" "));
        for &(x, y) in pts {
            let _ = writeln!(s, r#"<circle cx="{:.1}" cy="{:.1}" r="2.5" fill="{c}"/>"#, px(x), py(y));
        }
        let ly = TOP + 12.0 + 16.0 * i as f64;
        let _ = writeln!(s, r#"<line x1="{:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{c}" stroke-width="1.5"/>"#, LEFT + pw + 10.0, LEFT + pw + 28.0);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}">{}</text>"#, LEFT + pw + 32.0, ly + 4.0, escape(label));
    }
    s.push_str("</svg>\n");
    Some(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fig(series: Vec<Series>) -> Figure {
        Figure { title: "t".into(), x_label: "x".into(), y_label: "y".into(), log_x: false, series }
    }

    #[test]
    fn two_points_one_polyline() {
        let svg = render_svg(&fig(vec![Series { label: "a".into(), points: vec![(0.0, 0.0), (1.0, 1.0)] }])).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 1);
        let pts = svg.split("points=\"").nth(1).unwrap().split('"').next().unwrap();
        assert_eq!(pts.split(' ').count(), 2);
    }

    #[test]
    fn empty_series_are_dropped() {
        assert!(render_svg(&fig(vec![Series { label: "e".into(), points: vec![] }])).is_none());
        let svg = render_svg(&fig(vec![
            Series { label: "e".into(), points: vec![(1.0, f64::NAN)] },
            Series { label: "<b>".into(), points: vec![(1.0, 2.0)] },
        ]))
        .unwrap();
        assert_eq!(svg.matches("<polyline").count(), 1);
        assert!(svg.contains("&lt;b&gt;"));
    }
}
