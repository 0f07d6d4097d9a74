//! SVG route maps: one closed, colored loop per truck through the depot.

use std::fmt::Write as _;

use thiserror::Error;

use crate::instance::Instance;

pub const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
];

#[derive(Debug, Error, PartialEq)]
pub enum PlotError {
    #[error("route {route} references unknown node {node}")]
    UnknownNode { route: usize, node: usize },
}

const SIZE: f64 = 600.0;
const MARGIN: f64 = 30.0;

/// Renders `routes` (customer ids, depot implicit) over the instance's nodes.
/// Output bytes depend only on the inputs.
pub fn render_svg(instance: &Instance, routes: &[Vec<usize>], title: &str) -> Result<String, PlotError> {
    let n = instance.nodes.len();
    for (r, route) in routes.iter().enumerate() {
        if let Some(&node) = route.iter().find(|&&v| v >= n) {
            return Err(PlotError::UnknownNode { route: r, node });
        }
    }
    let xs = instance.nodes.iter().map(|p| p.x);
    let ys = instance.nodes.iter().map(|p| p.y);
    let (min_x, max_x) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
    let (min_y, max_y) = ys.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), y| (a.min(y), b.max(y)));
    let span = (max_x - min_x).max(max_y - min_y).max(1e-9);
    let scale = (SIZE - 2.0 * MARGIN) / span;
    // SVG y grows downwards; flip so the plot reads like the coordinate plane.
    let at = |v: usize| {
        let p = &instance.nodes[v];
        (MARGIN + (p.x - min_x) * scale, SIZE - MARGIN - (p.y - min_y) * scale)
    };

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#
    );
    let _ = writeln!(svg, r#"<title>{}</title>"#, escape(title));
    let _ = writeln!(svg, r##"<rect width="100%" height="100%" fill="#ffffff"/>"##);
    for (r, route) in routes.iter().enumerate() {
        if route.is_empty() {
            continue;
        }
        let mut d = String::new();
        let (x0, y0) = at(0);
        let _ = write!(d, "M {x0:.2} {y0:.2}");
        for &v in route {
            let (x, y) = at(v);
            let _ = write!(d, " L {x:.2} {y:.2}");
        }
        d.push_str(" Z");
        let _ = writeln!(
            svg,
            r#"<path class="route" data-truck="{r}" d="{d}" fill="none" stroke="{}" stroke-width="2"/>"#,
            PALETTE[r % PALETTE.len()]
        );
    }
    for v in 1..n {
        let (x, y) = at(v);
        let _ = writeln!(
            svg,
            r##"<circle cx="{x:.2}" cy="{y:.2}" r="7" fill="#ffffff" stroke="#333333"/><text x="{x:.2}" y="{:.2}" font-size="8" text-anchor="middle">{v}</text>"##,
            y + 3.0
        );
    }
    let (x, y) = at(0);
    let _ = writeln!(
        svg,
        r##"<rect x="{:.2}" y="{:.2}" width="16" height="16" fill="#000000"/><text x="{x:.2}" y="{:.2}" font-size="9" fill="#ffffff" text-anchor="middle">0</text>"##,
        x - 8.0,
        y - 8.0,
        y + 3.0
    );
    svg.push_str("</svg>\n");
    Ok(svg)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
