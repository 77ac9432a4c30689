use std::fmt::Write as _;

const W: f64 = 720.0;
const H: f64 = 420.0;
const MARGIN: (f64, f64, f64, f64) = (70.0, 20.0, 40.0, 50.0); // left, right, top, bottom
const COLORS: [&str; 6] = ["#000000", "#7f7f7f", "#d62728", "#1f77b4", "#2ca02c", "#9467bd"];

pub struct PlotSeries {
    pub name: String,
    pub y: Vec<f64>,
    /// Optional shaded `(lo, hi)` band drawn under the line.
    pub band: Option<(Vec<f64>, Vec<f64>)>,
}

fn range(vals: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = vals
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        (0.0, 1.0)
    } else if hi > lo {
        (lo, hi)
    } else {
        (lo - 0.5, lo + 0.5)
    }
}

/// Minimal standalone SVG line chart with a legend.
pub fn line_plot_svg(title: &str, xlabel: &str, x: &[f64], series: &[PlotSeries]) -> String {
    let (l, r, t, b) = MARGIN;
    let (x0, x1) = range(x.iter().copied());
    let (y0, y1) = range(series.iter().flat_map(|s| {
        let band = s.band.iter().flat_map(|(lo, hi)| lo.iter().chain(hi.iter()).copied());
        s.y.iter().copied().chain(band)
    }));
    let px = |v: f64| l + (v - x0) / (x1 - x0) * (W - l - r);
    let py = |v: f64| H - b - (v - y0) / (y1 - y0) * (H - t - b);
    let mut s = String::new();
    writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="12">"#).unwrap();
    writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
    writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{title}</text>"#, W / 2.0).unwrap();
    writeln!(
        s,
        r#"<rect x="{l}" y="{t}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        W - l - r,
        H - t - b
    )
    .unwrap();
    for i in 0..=4 {
        let fy = y0 + (y1 - y0) * i as f64 / 4.0;
        let fx = x0 + (x1 - x0) * i as f64 / 4.0;
        writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{fy:.3e}</text>"#, l - 4.0, py(fy) + 4.0).unwrap();
        writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{fx:.0}</text>"#, px(fx), H - b + 16.0).unwrap();
    }
    writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{xlabel}</text>"#, W / 2.0, H - 10.0).unwrap();
    for (i, ser) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        if let Some((lo, hi)) = &ser.band {
            let mut pts: Vec<String> = x.iter().zip(hi).map(|(a, v)| format!("{:.2},{:.2}", px(*a), py(*v))).collect();
            pts.extend(x.iter().zip(lo).rev().map(|(a, v)| format!("{:.2},{:.2}", px(*a), py(*v))));
            writeln!(s, r#"<polygon points="{}" fill="{color}" fill-opacity="0.2" stroke="none"/>"#, pts.join(" ")).unwrap();
        }
        let pts: Vec<String> = x
            .iter()
            .zip(&ser.y)
            .filter(|(_, v)| v.is_finite())
            .map(|(a, v)| format!("{:.2},{:.2}", px(*a), py(*v)))
            .collect();
        writeln!(s, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#, pts.join(" ")).unwrap();
        let ly = t + 16.0 + 16.0 * i as f64;
        writeln!(
            s,
            r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
            W - r - 130.0,
            W - r - 110.0,
            W - r - 104.0,
            ly + 4.0,
            ser.name
        )
        .unwrap();
    }
    s.push_str("</svg>\n");
    s
}
