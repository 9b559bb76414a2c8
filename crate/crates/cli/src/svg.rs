//! Minimal static SVG bar charts for histogram outputs.

use std::fmt::Write as _;

pub struct Series<'a> {
    pub label: &'a str,
    pub counts: &'a [f64],
    pub color: &'a str,
}

/// Side-by-side grouped bars over shared bin edges.
pub fn histogram_svg(title: &str, edges: &[f64], series: &[Series<'_>]) -> String {
    let (width, height, margin) = (760.0, 420.0, 50.0);
    let n_bins = edges.len().saturating_sub(1);
    let max_count = series
        .iter()
        .flat_map(|s| s.counts.iter().copied())
        .fold(1.0f64, f64::max);
    let plot_w = width - 2.0 * margin;
    let plot_h = height - 2.0 * margin;
    let group_w = plot_w / n_bins as f64;
    let bar_w = group_w / series.len() as f64;

    let mut out = String::new();
    let _ = write!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" \
         viewBox=\"0 0 {width} {height}\">\n<rect width=\"{width}\" height=\"{height}\" fill=\"white\"/>\n"
    );
    let _ = write!(
        out,
        "<text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"16\">{title}</text>\n",
        width / 2.0
    );
    for (s_idx, s) in series.iter().enumerate() {
        for (b, &c) in s.counts.iter().take(n_bins).enumerate() {
            let h = plot_h * c / max_count;
            let x = margin + b as f64 * group_w + s_idx as f64 * bar_w;
            let y = height - margin - h;
            let _ = write!(
                out,
                "<rect x=\"{x:.2}\" y=\"{y:.2}\" width=\"{:.2}\" height=\"{h:.2}\" fill=\"{}\" fill-opacity=\"0.8\"/>\n",
                bar_w.max(1.0) - 0.5,
                s.color
            );
        }
        let _ = write!(
            out,
            "<rect x=\"{}\" y=\"{}\" width=\"12\" height=\"12\" fill=\"{}\"/>\n\
             <text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\">{}</text>\n",
            width - margin - 150.0,
            margin + 18.0 * s_idx as f64,
            s.color,
            width - margin - 132.0,
            margin + 18.0 * s_idx as f64 + 10.0,
            s.label
        );
    }
    // x axis: first, middle and last edges
    let _ = write!(
        out,
        "<line x1=\"{margin}\" y1=\"{0}\" x2=\"{1}\" y2=\"{0}\" stroke=\"black\"/>\n",
        height - margin,
        width - margin
    );
    for (frac, idx) in [(0.0, 0), (0.5, edges.len() / 2), (1.0, edges.len() - 1)] {
        let x = margin + plot_w * frac;
        let _ = write!(
            out,
            "<text x=\"{x:.1}\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">{:.1}</text>\n",
            height - margin + 16.0,
            edges[idx]
        );
    }
    out.push_str("</svg>\n");
    out
}
