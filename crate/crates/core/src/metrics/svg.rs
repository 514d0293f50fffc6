use std::fmt::Write as _;

use super::DvhCurve;

const PALETTE: [&str; 6] = ["#d62728", "#1f77b4", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// Standalone SVG 1.1 line plot of DVH curves. Solid lines are `solid`,
/// dashed lines `dashed`; curves of the same structure share a colour.
pub fn dvh_svg(title: &str, solid: &[DvhCurve], dashed: &[DvhCurve]) -> String {
    let (w, h, m) = (640.0, 420.0, 50.0);
    let max_dose = solid
        .iter()
        .chain(dashed)
        .flat_map(|c| c.dose.iter().copied())
        .fold(0.0f64, f64::max)
        .max(1e-12);
    let px = |d: f64| m + (w - 2.0 * m) * d / max_dose;
    let py = |v: f64| h - m - (h - 2.0 * m) * v;

    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="24" font-family="sans-serif" font-size="15" text-anchor="middle">{}</text>"#,
        w / 2.0,
        escape(title)
    );
    let _ = writeln!(
        s,
        r#"<path d="M{m} {} V{} H{}" fill="none" stroke="black"/>"#,
        m,
        h - m,
        w - m
    );
    for i in 0..=4 {
        let v = i as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{:.1}" font-family="sans-serif" font-size="11" text-anchor="end">{v:.2}</text>"#,
            m - 6.0,
            py(v) + 4.0
        );
        let d = max_dose * v;
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{}" font-family="sans-serif" font-size="11" text-anchor="middle">{d:.2}</text>"#,
            px(d),
            h - m + 16.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" font-family="sans-serif" font-size="12" text-anchor="middle">dose</text>"#,
        w / 2.0,
        h - 12.0
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{}" font-family="sans-serif" font-size="12" text-anchor="middle" transform="rotate(-90 14 {})">volume fraction</text>"#,
        h / 2.0,
        h / 2.0
    );

    let mut names: Vec<&str> = Vec::new();
    for (curves, dash) in [(solid, ""), (dashed, r#" stroke-dasharray="6 4""#)] {
        for c in curves {
            let idx = match names.iter().position(|n| *n == c.structure) {
                Some(i) => i,
                None => {
                    names.push(&c.structure);
                    names.len() - 1
                }
            };
            let pts: Vec<String> = c
                .dose
                .iter()
                .zip(&c.volume)
                .map(|(&d, &v)| format!("{:.2},{:.2}", px(d), py(v)))
                .collect();
            let _ = writeln!(
                s,
                r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="1.5"{dash}/>"#,
                pts.join(" "),
                PALETTE[idx % PALETTE.len()]
            );
        }
    }
    for (i, name) in names.iter().enumerate() {
        let y = m + 14.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{y}" font-family="sans-serif" font-size="11" fill="{}">{}</text>"#,
            w - m - 110.0,
            PALETTE[i % PALETTE.len()],
            escape(name)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
