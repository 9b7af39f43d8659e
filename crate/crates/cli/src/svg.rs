//! Static SVG scenes: lot, parked vehicles, trajectories, gear-shift
//! markers and an optional attention overlay.

use std::fmt::Write;

use parkbench_core::Pose2D;

pub const GT_COLOR: &str = "#1f4fd8";
pub const PRED_COLOR: &str = "#d62728";
const PX_PER_M: f64 = 20.0;

/// Grayscale grid laid out in the ego frame at `ego`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionOverlay {
    pub ego: Pose2D,
    /// Ego-frame coordinate of the grid's lower corner on both axes.
    pub origin: f64,
    pub cell: f64,
    pub side: usize,
    /// Row-major weights; rows run along ego x, columns along ego y.
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Scene {
    /// `(min_x, min_y, max_x, max_y)` in metres.
    pub bounds: (f64, f64, f64, f64),
    pub slots: Vec<[(f64, f64); 4]>,
    pub target: Option<[(f64, f64); 4]>,
    pub vehicles: Vec<[(f64, f64); 4]>,
    pub gt: Vec<(f64, f64)>,
    pub pred: Option<Vec<(f64, f64)>>,
    pub shifts: Vec<(f64, f64)>,
    pub attention: Option<AttentionOverlay>,
    pub title: String,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

struct Canvas {
    min_x: f64,
    max_y: f64,
}

impl Canvas {
    fn pt(&self, (x, y): (f64, f64)) -> String {
        format!("{:.2},{:.2}", (x - self.min_x) * PX_PER_M, (self.max_y - y) * PX_PER_M)
    }

    fn points(&self, pts: &[(f64, f64)]) -> String {
        pts.iter().map(|&p| self.pt(p)).collect::<Vec<_>>().join(" ")
    }
}

pub fn render(scene: &Scene) -> String {
    let (min_x, min_y, max_x, max_y) = scene.bounds;
    let c = Canvas { min_x, max_y };
    let (w, h) = ((max_x - min_x) * PX_PER_M, (max_y - min_y) * PX_PER_M);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0}" height="{h:.0}" viewBox="0 0 {w:.2} {h:.2}">"#
    );
    let _ = writeln!(s, "<title>{}</title>", escape(&scene.title));
    let _ = writeln!(s, r##"<rect class="ground" x="0" y="0" width="{w:.2}" height="{h:.2}" fill="#f4f4f4"/>"##);
    if let Some(a) = &scene.attention {
        let max = a.weights.iter().cloned().fold(0.0, f64::max);
        let _ = writeln!(s, r#"<g class="attention">"#);
        for r in 0..a.side {
            for col in 0..a.side {
                let wgt = a.weights[r * a.side + col];
                let shade = if max > 0.0 { 255.0 * (1.0 - wgt / max) } else { 255.0 };
                let (x0, y0) = (a.origin + r as f64 * a.cell, a.origin + col as f64 * a.cell);
                let corners = [(x0, y0), (x0 + a.cell, y0), (x0 + a.cell, y0 + a.cell), (x0, y0 + a.cell)]
                    .map(|(x, y)| a.ego.transform_point(x, y));
                let g = shade.round() as u8;
                let _ = writeln!(
                    s,
                    r#"<polygon points="{}" fill="rgb({g},{g},{g})" fill-opacity="0.6"/>"#,
                    c.points(&corners)
                );
            }
        }
        let _ = writeln!(s, "</g>");
    }
    for slot in &scene.slots {
        let _ = writeln!(
            s,
            r##"<polygon class="slot" points="{}" fill="none" stroke="#888888" stroke-width="1"/>"##,
            c.points(slot)
        );
    }
    if let Some(t) = &scene.target {
        let _ = writeln!(
            s,
            r##"<polygon class="target" points="{}" fill="#2ca02c" fill-opacity="0.25" stroke="#2ca02c" stroke-width="2"/>"##,
            c.points(t)
        );
    }
    for v in &scene.vehicles {
        let _ = writeln!(s, r##"<polygon class="vehicle" points="{}" fill="#555555"/>"##, c.points(v));
    }
    let _ = writeln!(
        s,
        r#"<polyline class="gt" points="{}" fill="none" stroke="{GT_COLOR}" stroke-width="2"/>"#,
        c.points(&scene.gt)
    );
    if let Some(p) = &scene.pred {
        let _ = writeln!(
            s,
            r#"<polyline class="pred" points="{}" fill="none" stroke="{PRED_COLOR}" stroke-width="2"/>"#,
            c.points(p)
        );
    }
    for &m in &scene.shifts {
        let (x, y) = c.pt(m).split_once(',').map(|(a, b)| (a.to_string(), b.to_string())).unwrap_or_default();
        let _ = writeln!(
            s,
            r##"<circle class="shift" cx="{x}" cy="{y}" r="5" fill="none" stroke="#ff7f0e" stroke-width="2"/>"##
        );
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flips_the_y_axis() {
        let c = Canvas { min_x: -1.0, max_y: 2.0 };
        assert_eq!(c.pt((0.0, 2.0)), "20.00,0.00");
        assert_eq!(c.pt((-1.0, 1.0)), "0.00,20.00");
    }

    #[test]
    fn titles_are_escaped() {
        let scene = Scene {
            bounds: (0.0, 0.0, 1.0, 1.0),
            title: "a<b & c".into(),
            ..Default::default()
        };
        assert!(render(&scene).contains("<title>a&lt;b &amp; c</title>"));
    }
}
