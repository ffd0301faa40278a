//! Scatter plot of buffer states over the RiskWorld map.

use std::fmt::Write;

use cabi_core::env;

const SIZE: f64 = 520.0;
const MARGIN: f64 = 30.0;
/// Plotted coordinate range; wider than the legal square so out-of-bounds
/// samples stay visible.
const EXTENT: f64 = 2.5;

fn px(x: f64) -> f64 {
    MARGIN + (x + EXTENT) / (2.0 * EXTENT) * (SIZE - 2.0 * MARGIN)
}

fn py(y: f64) -> f64 {
    SIZE - px(y)
}

fn radius(r: f64) -> f64 {
    r / (2.0 * EXTENT) * (SIZE - 2.0 * MARGIN)
}

/// Renders `points` (x, y) with outlines of D, D1, D2 and D3.
pub fn scatter(title: &str, points: &[[f64; 2]]) -> String {
    let b = env::BOUND;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<defs><clipPath id="legal"><rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}"/></clipPath></defs>"#,
        px(-b),
        py(b),
        px(b) - px(-b),
        py(-b) - py(b)
    );
    let _ = writeln!(
        s,
        r#"<rect id="D" x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="black" stroke-width="1.5"/>"#,
        px(-b),
        py(b),
        px(b) - px(-b),
        py(-b) - py(b)
    );
    let _ = writeln!(
        s,
        r##"<circle id="D1" cx="{:.2}" cy="{:.2}" r="{:.2}" fill="none" stroke="#2a7" stroke-width="1.5" clip-path="url(#legal)"/>"##,
        px(-b),
        py(-b),
        radius(1.0)
    );
    let _ = writeln!(
        s,
        r##"<circle id="D2" cx="{:.2}" cy="{:.2}" r="{:.2}" fill="#f002" stroke="#d00" stroke-width="1.5"/>"##,
        px(0.0),
        py(0.0),
        radius(0.5)
    );
    let _ = writeln!(
        s,
        r##"<circle id="D3" cx="{:.2}" cy="{:.2}" r="{:.2}" fill="none" stroke="#e90" stroke-width="1.5" clip-path="url(#legal)"/>"##,
        px(b),
        py(b),
        radius(0.8)
    );
    let _ = writeln!(s, r##"<g fill="#1f5fbf" fill-opacity="0.35">"##);
    for p in points {
        let (x, y) = (p[0].clamp(-EXTENT, EXTENT), p[1].clamp(-EXTENT, EXTENT));
        let _ = writeln!(s, r#"<circle cx="{:.1}" cy="{:.1}" r="1.3"/>"#, px(x), py(y));
    }
    let _ = writeln!(s, "</g>");
    let _ = writeln!(
        s,
        r#"<text x="{MARGIN}" y="20" font-family="sans-serif" font-size="14">{}</text>"#,
        escape(title)
    );
    s.push_str("</svg>\n");
    s
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
