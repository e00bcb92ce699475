//! Minimal self-contained SVG line charts.

use std::fmt::Write;

const W: f64 = 640.0;
const H: f64 = 400.0;
const MARGIN: f64 = 56.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// One polyline per named series, log-scaled x axis.
pub fn line_chart(y_label: &str, x_label: &str, series: &[(String, Vec<(f64, f64)>)]) -> String {
    let all = series.iter().flat_map(|(_, p)| p.iter().copied());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, 0.0f64, f64::NEG_INFINITY);
    for (x, y) in all {
        if x > 0.0 {
            x0 = x0.min(x.ln());
            x1 = x1.max(x.ln());
        }
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1) = (0.0, 1.0);
    } else if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    if !(y1 > y0) {
        y1 = y0 + 1.0;
    }
    let px = |x: f64| MARGIN + (x.ln() - x0) / (x1 - x0) * (W - 2.0 * MARGIN);
    let py = |y: f64| H - MARGIN - (y - y0) / (y1 - y0) * (H - 2.0 * MARGIN);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<path d="M{m},{t} V{b} H{r}" stroke="black" fill="none"/>"#,
        m = MARGIN,
        t = MARGIN,
        b = H - MARGIN,
        r = W - MARGIN
    );
    for k in 0..=4 {
        let y = y0 + (y1 - y0) * k as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end">{:.3}</text>"#,
            MARGIN - 6.0,
            py(y) + 4.0,
            y
        );
        let x = (x0 + (x1 - x0) * k as f64 / 4.0).exp();
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">{:.3}</text>"#,
            px(x),
            H - MARGIN + 16.0,
            x
        );
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{x_label}</text>"#, W / 2.0, H - 12.0);
    let _ = writeln!(s, r#"<text x="14" y="{}" transform="rotate(-90 14 {})">{y_label}</text>"#, H / 2.0, H / 2.0);
    for (i, (name, pts)) in series.iter().enumerate() {
        let c = COLORS[i % COLORS.len()];
        let d: Vec<String> = pts
            .iter()
            .filter(|(x, _)| *x > 0.0)
            .map(|(x, y)| format!("{:.2},{:.2}", px(*x), py(*y)))
            .collect();
        if !d.is_empty() {
            let _ = writeln!(s, r#"<polyline points="{}" stroke="{c}" fill="none"/>"#, d.join(" "));
        }
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" fill="{c}">{name}</text>"#,
            W - MARGIN - 60.0,
            MARGIN + 14.0 * i as f64
        );
    }
    s.push_str("</svg>\n");
    s
}
