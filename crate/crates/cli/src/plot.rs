//! Static SVG charts: per-epoch loss curves and ablation bar charts.

use std::fmt::Write;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 360.0;
const MARGIN: f64 = 48.0;
const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn header(title: &str) -> String {
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"sans-serif\" font-size=\"11\">\n"
    );
    let _ = writeln!(s, "<rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>");
    let _ = writeln!(
        s,
        "<text x=\"{}\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">{}</text>",
        WIDTH / 2.0,
        escape(title)
    );
    let (x0, y0, x1, y1) = (MARGIN, HEIGHT - MARGIN, WIDTH - MARGIN / 2.0, MARGIN);
    let _ = writeln!(s, "<path d=\"M{x0} {y1} L{x0} {y0} L{x1} {y0}\" stroke=\"black\" fill=\"none\"/>");
    s
}

/// Upper axis limit: the largest finite value, or 1 when there is none.
fn top(values: impl Iterator<Item = f64>) -> f64 {
    let m = values.filter(|v| v.is_finite()).fold(0.0f64, f64::max);
    if m > 0.0 {
        m * 1.05
    } else {
        1.0
    }
}

/// Line chart of named series over epochs `0..n`.
pub fn line_chart(title: &str, y_label: &str, series: &[(&str, Vec<f64>)]) -> String {
    let mut s = header(title);
    let n = series.iter().map(|(_, v)| v.len()).max().unwrap_or(0);
    let ymax = top(series.iter().flat_map(|(_, v)| v.iter().copied()));
    let plot_w = WIDTH - 1.5 * MARGIN;
    let plot_h = HEIGHT - 2.0 * MARGIN;
    let x = |i: usize| MARGIN + if n > 1 { i as f64 / (n - 1) as f64 * plot_w } else { plot_w / 2.0 };
    let y = |v: f64| HEIGHT - MARGIN - v / ymax * plot_h;
    let _ = writeln!(
        s,
        "<text x=\"12\" y=\"{}\" transform=\"rotate(-90 12 {})\" text-anchor=\"middle\">{}</text>",
        HEIGHT / 2.0,
        HEIGHT / 2.0,
        escape(y_label)
    );
    let _ = writeln!(
        s,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">epoch</text>",
        WIDTH / 2.0,
        HEIGHT - 12.0
    );
    let _ = writeln!(
        s,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{ymax:.3}</text>",
        MARGIN - 4.0,
        MARGIN + 4.0
    );
    let _ = writeln!(
        s,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">0</text>",
        MARGIN - 4.0,
        HEIGHT - MARGIN
    );
    for i in 0..n {
        let _ = writeln!(
            s,
            "<text x=\"{:.1}\" y=\"{}\" text-anchor=\"middle\">{i}</text>",
            x(i),
            HEIGHT - MARGIN + 14.0
        );
    }
    for (k, (name, values)) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let points: Vec<String> = values
            .iter()
            .enumerate()
            .filter(|(_, v)| v.is_finite())
            .map(|(i, &v)| format!("{:.1},{:.1}", x(i), y(v)))
            .collect();
        let _ = writeln!(
            s,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\"/>",
            points.join(" ")
        );
        let ly = MARGIN + 14.0 * k as f64;
        let _ = writeln!(
            s,
            "<text x=\"{}\" y=\"{ly}\" fill=\"{color}\" text-anchor=\"end\">{}</text>",
            WIDTH - MARGIN,
            escape(name)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Vertical bars, one per labelled value; missing values leave a gap.
pub fn bar_chart(title: &str, y_label: &str, bars: &[(String, Option<f64>)]) -> String {
    let mut s = header(title);
    let ymax = top(bars.iter().filter_map(|(_, v)| *v));
    let plot_w = WIDTH - 1.5 * MARGIN;
    let plot_h = HEIGHT - 2.0 * MARGIN;
    let slot = plot_w / bars.len().max(1) as f64;
    let _ = writeln!(
        s,
        "<text x=\"12\" y=\"{}\" transform=\"rotate(-90 12 {})\" text-anchor=\"middle\">{}</text>",
        HEIGHT / 2.0,
        HEIGHT / 2.0,
        escape(y_label)
    );
    let _ = writeln!(
        s,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{ymax:.2}</text>",
        MARGIN - 4.0,
        MARGIN + 4.0
    );
    for (i, (label, value)) in bars.iter().enumerate() {
        let cx = MARGIN + slot * (i as f64 + 0.5);
        if let Some(v) = value.filter(|v| v.is_finite()) {
            let h = v.max(0.0) / ymax * plot_h;
            let _ = writeln!(
                s,
                "<rect x=\"{:.1}\" y=\"{:.1}\" width=\"{:.1}\" height=\"{h:.1}\" fill=\"{}\"/>",
                cx - slot * 0.35,
                HEIGHT - MARGIN - h,
                slot * 0.7,
                COLORS[0]
            );
            let _ = writeln!(
                s,
                "<text x=\"{cx:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{v:.2}</text>",
                HEIGHT - MARGIN - h - 3.0
            );
        }
        let _ = writeln!(
            s,
            "<text x=\"{cx:.1}\" y=\"{}\" text-anchor=\"middle\" font-size=\"9\">{}</text>",
            HEIGHT - MARGIN + 14.0,
            escape(label)
        );
    }
    s.push_str("</svg>\n");
    s
}
