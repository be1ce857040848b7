//! Minimal SVG charts for study outputs.

use std::fmt::Write as _;

const W: f64 = 640.0;
const H: f64 = 400.0;
const LEFT: f64 = 64.0;
const RIGHT: f64 = 24.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 48.0;
const COLORS: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

fn header(out: &mut String, title: &str, xlabel: &str, ylabel: &str) {
    let _ = write!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" font-family=\"sans-serif\" font-size=\"12\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">{}</text>\n\
         <text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n\
         <text x=\"16\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {})\">{}</text>\n",
        W / 2.0,
        escape(title),
        LEFT + (W - LEFT - RIGHT) / 2.0,
        H - 10.0,
        escape(xlabel),
        H / 2.0,
        H / 2.0,
        escape(ylabel),
    );
    let _ = writeln!(
        out,
        "<line x1=\"{LEFT}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n<line x1=\"{LEFT}\" y1=\"{TOP}\" x2=\"{LEFT}\" y2=\"{}\" stroke=\"black\"/>",
        H - BOTTOM,
        W - RIGHT,
        H - BOTTOM,
        H - BOTTOM
    );
}

fn y_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| {
            (l.min(v), h.max(v))
        });
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    let lo = lo.min(0.0);
    if hi - lo < 1e-9 {
        (lo, lo + 1.0)
    } else {
        (lo, hi + 0.05 * (hi - lo))
    }
}

fn y_ticks(out: &mut String, lo: f64, hi: f64, ypx: impl Fn(f64) -> f64) {
    for i in 0..=4 {
        let v = lo + (hi - lo) * i as f64 / 4.0;
        let y = ypx(v);
        let _ = writeln!(
            out,
            "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{v:.1}</text>",
            LEFT - 6.0,
            y + 4.0
        );
    }
}

/// Vertical bars, one per index, with an optional horizontal guide line.
pub fn bar_chart(
    title: &str,
    xlabel: &str,
    ylabel: &str,
    values: &[f64],
    guide: Option<f64>,
) -> String {
    let mut out = String::new();
    header(&mut out, title, xlabel, ylabel);
    let (lo, hi) = y_range(values.iter().copied().chain(guide));
    let plot_h = H - TOP - BOTTOM;
    let ypx = |v: f64| H - BOTTOM - (v - lo) / (hi - lo) * plot_h;
    y_ticks(&mut out, lo, hi, ypx);
    let n = values.len().max(1) as f64;
    let slot = (W - LEFT - RIGHT) / n;
    for (i, &v) in values.iter().enumerate() {
        let x = LEFT + slot * i as f64 + slot * 0.15;
        let y = ypx(v.max(lo));
        let _ = writeln!(
            out,
            "<rect x=\"{x:.1}\" y=\"{y:.1}\" width=\"{:.1}\" height=\"{:.1}\" fill=\"{}\"/>\n<text x=\"{:.1}\" y=\"{}\" text-anchor=\"middle\">{i}</text>",
            slot * 0.7,
            (H - BOTTOM - y).max(0.0),
            COLORS[0],
            x + slot * 0.35,
            H - BOTTOM + 16.0
        );
    }
    if let Some(g) = guide {
        let y = ypx(g);
        let _ = writeln!(
            out,
            "<line x1=\"{LEFT}\" y1=\"{y:.1}\" x2=\"{}\" y2=\"{y:.1}\" stroke=\"gray\" stroke-dasharray=\"4 3\"/>",
            W - RIGHT
        );
    }
    out.push_str("</svg>\n");
    out
}

/// One polyline per series over shared x positions. Non-finite points are
/// drawn at the top edge.
pub fn line_chart(
    title: &str,
    xlabel: &str,
    ylabel: &str,
    xs: &[f64],
    series: &[(String, Vec<f64>)],
) -> String {
    let mut out = String::new();
    header(&mut out, title, xlabel, ylabel);
    let (lo, hi) = y_range(series.iter().flat_map(|(_, v)| v.iter().copied()));
    let plot_h = H - TOP - BOTTOM;
    let ypx = |v: f64| {
        if v.is_finite() {
            H - BOTTOM - (v - lo) / (hi - lo) * plot_h
        } else {
            TOP
        }
    };
    y_ticks(&mut out, lo, hi, ypx);
    let (xmin, xmax) = xs
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| {
            (l.min(v), h.max(v))
        });
    let span = if xmax > xmin { xmax - xmin } else { 1.0 };
    let xpx = |x: f64| LEFT + 12.0 + (x - xmin) / span * (W - LEFT - RIGHT - 24.0);
    for &x in xs {
        let _ = writeln!(
            out,
            "<text x=\"{:.1}\" y=\"{}\" text-anchor=\"middle\">{x}</text>",
            xpx(x),
            H - BOTTOM + 16.0
        );
    }
    for (k, (name, ys)) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let pts: Vec<String> = xs
            .iter()
            .zip(ys)
            .map(|(&x, &y)| format!("{:.1},{:.1}", xpx(x), ypx(y)))
            .collect();
        let _ = writeln!(
            out,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\"/>",
            pts.join(" ")
        );
        let _ = writeln!(
            out,
            "<text x=\"{}\" y=\"{}\" fill=\"{color}\">{}</text>",
            W - RIGHT - 110.0,
            TOP + 16.0 * (k as f64 + 1.0),
            escape(name)
        );
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn charts_are_well_formed() {
        let svg = bar_chart(
            "t <x>",
            "b",
            "dB",
            &[1.0, f64::INFINITY.min(5.0), 3.0],
            Some(2.0),
        );
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("t &lt;x&gt;"));
        let svg = line_chart(
            "s",
            "x",
            "y",
            &[0.0, 1.0],
            &[("a".into(), vec![1.0, f64::INFINITY])],
        );
        assert_eq!(svg.matches("<polyline").count(), 1);
    }
}
