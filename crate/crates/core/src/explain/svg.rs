//! Horizontal bar charts of one attribution, in ranking order.

use std::fmt::Write;

use crate::explain::narrate::rank_features;
use crate::shapley::Attribution;

const WIDTH: f64 = 640.0;
const LABEL_WIDTH: f64 = 200.0;
const ROW_HEIGHT: f64 = 28.0;
const TOP: f64 = 48.0;
const POSITIVE: &str = "#ff0051";
const NEGATIVE: &str = "#008bfb";

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

pub fn bar_chart(attr: &Attribution, title: &str) -> String {
    let order = rank_features(attr);
    let height = TOP + ROW_HEIGHT * order.len() as f64 + 36.0;
    let plot_left = LABEL_WIDTH;
    let plot_width = WIDTH - LABEL_WIDTH - 80.0;
    let max_abs = attr
        .features
        .iter()
        .map(|f| f.phi.abs())
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    let has_negative = attr.features.iter().any(|f| f.phi < 0.0);
    let has_positive = attr.features.iter().any(|f| f.phi > 0.0);
    // Axis at the left edge, right edge or middle depending on signs present.
    let axis = match (has_negative, has_positive) {
        (true, true) => plot_left + plot_width / 2.0,
        (true, false) => plot_left + plot_width,
        _ => plot_left,
    };
    let scale = if has_negative && has_positive {
        plot_width / 2.0 / max_abs
    } else {
        plot_width / max_abs
    };

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" viewBox="0 0 {WIDTH} {height}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="20" font-size="14" font-weight="bold">{}</text>"#,
        8.0,
        escape(title)
    );
    let _ = writeln!(
        svg,
        r#"<text x="8" y="38">prediction {:.2}, expected value {:.2}</text>"#,
        attr.prediction, attr.base_value
    );
    for (row, &i) in order.iter().enumerate() {
        let f = &attr.features[i];
        let y = TOP + ROW_HEIGHT * row as f64;
        let len = f.phi.abs() * scale;
        let x = if f.phi < 0.0 { axis - len } else { axis };
        let color = if f.phi < 0.0 { NEGATIVE } else { POSITIVE };
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{} = {:.1}</text>"#,
            LABEL_WIDTH - 8.0,
            y + 17.0,
            escape(&f.name),
            f.value
        );
        let _ = writeln!(
            svg,
            r#"<rect x="{x:.1}" y="{:.1}" width="{len:.1}" height="{:.1}" fill="{color}"/>"#,
            y + 4.0,
            ROW_HEIGHT - 8.0
        );
        let (tx, anchor) = if f.phi < 0.0 { (x - 4.0, "end") } else { (x + len + 4.0, "start") };
        let _ = writeln!(
            svg,
            r#"<text x="{tx:.1}" y="{:.1}" text-anchor="{anchor}">{:+.2}</text>"#,
            y + 17.0,
            f.phi
        );
    }
    let bottom = TOP + ROW_HEIGHT * order.len() as f64;
    let _ = writeln!(
        svg,
        r##"<line x1="{axis:.1}" y1="{:.1}" x2="{axis:.1}" y2="{bottom:.1}" stroke="#333"/>"##,
        TOP - 2.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="{axis:.1}" y="{:.1}" text-anchor="middle">SHAP value</text>"#,
        bottom + 20.0
    );
    svg.push_str("</svg>\n");
    svg
}
