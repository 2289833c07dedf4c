//! Bare scatter plots: a frame, axis extents and one dot per point.

use std::fmt::Write;

const W: f64 = 640.0;
const H: f64 = 480.0;
const PAD: f64 = 60.0;

fn extent(vals: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi > lo {
        (lo, hi)
    } else {
        (lo - 0.5, hi + 0.5)
    }
}

pub fn scatter(points: &[(f64, f64)], x_label: &str, y_label: &str) -> String {
    let finite: Vec<(f64, f64)> = points
        .iter()
        .copied()
        .filter(|(x, y)| x.is_finite() && y.is_finite())
        .collect();
    let (x0, x1) = extent(finite.iter().map(|p| p.0));
    let (y0, y1) = extent(finite.iter().map(|p| p.1));
    let sx = |x: f64| PAD + (x - x0) / (x1 - x0) * (W - 2.0 * PAD);
    let sy = |y: f64| H - PAD - (y - y0) / (y1 - y0) * (H - 2.0 * PAD);

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#);
    let _ = writeln!(
        s,
        r#"<rect x="{PAD}" y="{PAD}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        W - 2.0 * PAD,
        H - 2.0 * PAD
    );
    let text = |s: &mut String, x: f64, y: f64, anchor: &str, t: &str| {
        let _ = writeln!(s, r#"<text x="{x:.1}" y="{y:.1}" font-size="11" text-anchor="{anchor}">{t}</text>"#);
    };
    text(&mut s, PAD, H - PAD + 16.0, "start", &format!("{x0:.4e}"));
    text(&mut s, W - PAD, H - PAD + 16.0, "end", &format!("{x1:.4e}"));
    text(&mut s, PAD - 4.0, H - PAD, "end", &format!("{y0:.3}"));
    text(&mut s, PAD - 4.0, PAD + 10.0, "end", &format!("{y1:.3}"));
    text(&mut s, W / 2.0, H - 16.0, "middle", x_label);
    text(&mut s, 16.0, H / 2.0, "middle", y_label);
    for (x, y) in &finite {
        let _ = writeln!(s, r#"<circle cx="{:.1}" cy="{:.1}" r="1.5"/>"#, sx(*x), sy(*y));
    }
    s.push_str("</svg>\n");
    s
}
