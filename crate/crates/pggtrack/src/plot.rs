//! Minimal static SVG charts.

use std::fmt::Write as _;

const W: f64 = 480.0;
const H: f64 = 320.0;
const PAD: f64 = 40.0;
const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

pub struct Series<'a> {
    pub label: &'a str,
    pub points: Vec<[f64; 2]>,
}

fn bounds(series: &[Series<'_>]) -> ([f64; 2], [f64; 2]) {
    let mut x = [f64::INFINITY, f64::NEG_INFINITY];
    let mut y = x;
    for p in series.iter().flat_map(|s| &s.points).filter(|p| p[0].is_finite() && p[1].is_finite()) {
        x = [x[0].min(p[0]), x[1].max(p[0])];
        y = [y[0].min(p[1]), y[1].max(p[1])];
    }
    let fix = |r: [f64; 2]| {
        if !r[0].is_finite() {
            [0.0, 1.0]
        } else if r[1] - r[0] < 1e-12 {
            [r[0] - 0.5, r[1] + 0.5]
        } else {
            r
        }
    };
    (fix(x), fix(y))
}

fn frame(title: &str, x: [f64; 2], y: [f64; 2]) -> String {
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" font-family=\"sans-serif\" font-size=\"11\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"16\" text-anchor=\"middle\" font-size=\"13\">{}</text>\n",
        W / 2.0,
        escape(title)
    );
    let _ = writeln!(
        s,
        "<rect x=\"{PAD}\" y=\"{PAD}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#888\"/>",
        W - 2.0 * PAD,
        H - 2.0 * PAD
    );
    let _ = writeln!(s, "<text x=\"{PAD}\" y=\"{}\">{:.3}</text>", H - PAD + 14.0, x[0]);
    let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{:.3}</text>", W - PAD, H - PAD + 14.0, x[1]);
    let _ = writeln!(s, "<text x=\"4\" y=\"{}\">{:.3}</text>", H - PAD, y[0]);
    let _ = writeln!(s, "<text x=\"4\" y=\"{}\">{:.3}</text>", PAD + 4.0, y[1]);
    s
}

fn project(p: [f64; 2], x: [f64; 2], y: [f64; 2]) -> (f64, f64) {
    let px = PAD + (p[0] - x[0]) / (x[1] - x[0]) * (W - 2.0 * PAD);
    let py = H - PAD - (p[1] - y[0]) / (y[1] - y[0]) * (H - 2.0 * PAD);
    (px, py)
}

fn legend(s: &mut String, series: &[Series<'_>]) {
    for (i, se) in series.iter().enumerate() {
        let c = COLORS[i % COLORS.len()];
        let yy = PAD + 14.0 * i as f64 + 10.0;
        let _ = writeln!(
            s,
            "<text x=\"{}\" y=\"{yy}\" fill=\"{c}\" text-anchor=\"end\">{}</text>",
            W - PAD - 4.0,
            escape(se.label)
        );
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

pub fn line_chart(title: &str, series: &[Series<'_>]) -> String {
    let (x, y) = bounds(series);
    let mut s = frame(title, x, y);
    for (i, se) in series.iter().enumerate() {
        let pts: Vec<String> = se
            .points
            .iter()
            .filter(|p| p[0].is_finite() && p[1].is_finite())
            .map(|&p| {
                let (a, b) = project(p, x, y);
                format!("{a:.2},{b:.2}")
            })
            .collect();
        let _ = writeln!(
            s,
            "<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\" points=\"{}\"/>",
            COLORS[i % COLORS.len()],
            pts.join(" ")
        );
    }
    legend(&mut s, series);
    s.push_str("</svg>\n");
    s
}

pub fn scatter(title: &str, series: &[Series<'_>]) -> String {
    let (x, y) = bounds(series);
    let mut s = frame(title, x, y);
    for (i, se) in series.iter().enumerate() {
        let c = COLORS[i % COLORS.len()];
        for &p in se.points.iter().filter(|p| p[0].is_finite() && p[1].is_finite()) {
            let (a, b) = project(p, x, y);
            let _ = writeln!(s, "<circle cx=\"{a:.2}\" cy=\"{b:.2}\" r=\"1.8\" fill=\"{c}\" fill-opacity=\"0.6\"/>");
        }
    }
    legend(&mut s, series);
    s.push_str("</svg>\n");
    s
}

/// Grouped bars; `None` values are left blank.
pub fn bar_chart(title: &str, categories: &[String], series: &[(&str, Vec<Option<f64>>)]) -> String {
    let vals = series.iter().flat_map(|(_, v)| v.iter().flatten().copied());
    let lo = vals.clone().fold(0.0_f64, f64::min);
    let hi = vals.fold(1.0_f64, f64::max);
    let y = [lo, hi];
    let mut s = frame(title, [0.0, categories.len() as f64], y);
    let slot = (W - 2.0 * PAD) / categories.len().max(1) as f64;
    let bw = slot * 0.8 / series.len().max(1) as f64;
    for (ci, cat) in categories.iter().enumerate() {
        let x0 = PAD + slot * ci as f64 + slot * 0.1;
        let _ = writeln!(
            s,
            "<text x=\"{:.2}\" y=\"{}\" text-anchor=\"middle\">{}</text>",
            x0 + slot * 0.4,
            H - PAD + 26.0,
            escape(cat)
        );
        for (si, (_, v)) in series.iter().enumerate() {
            let Some(val) = v.get(ci).copied().flatten() else { continue };
            let (_, top) = project([0.0, val.max(0.0)], [0.0, 1.0], y);
            let (_, base) = project([0.0, val.min(0.0)], [0.0, 1.0], y);
            let _ = writeln!(
                s,
                "<rect x=\"{:.2}\" y=\"{top:.2}\" width=\"{bw:.2}\" height=\"{:.2}\" fill=\"{}\"/>",
                x0 + bw * si as f64,
                (base - top).max(0.5),
                COLORS[si % COLORS.len()]
            );
        }
    }
    let named: Vec<Series<'_>> = series.iter().map(|(l, _)| Series { label: l, points: Vec::new() }).collect();
    legend(&mut s, &named);
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn charts_are_well_formed() {
        let a = Series { label: "a<b", points: vec![[0.0, 1.0], [1.0, 0.5], [2.0, f64::NAN]] };
        let l = line_chart("loss", &[a]);
        assert!(l.starts_with("<svg") && l.trim_end().ends_with("</svg>"));
        assert!(l.contains("a&lt;b"));
        let b = bar_chart("AP", &["Head".into(), "Total".into()], &[("x", vec![Some(0.5), None])]);
        assert_eq!(b.matches("<rect").count(), 3);
        let s = scatter("e", &[Series { label: "raw", points: vec![[1.0, 1.0]] }]);
        assert_eq!(s.matches("<circle").count(), 1);
    }
}
