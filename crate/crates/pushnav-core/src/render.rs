//! Minimal self-contained SVG rendering: plan overviews (map, corridor,
//! coarse and smoothed paths), navigation trajectory overlays, and simple
//! line charts for training curves. No external plotting dependencies.

use crate::navexec::NavReport;
use crate::planner::NavPlan;
use crate::world::{GridMap, MovableObject, Pose2, Scenario, Shape};
use nalgebra::Vector2;
use std::fmt::Write as _;

/// Pixels per meter in world drawings.
const SCALE: f64 = 100.0;

/// An SVG document under construction, in world coordinates (meters, y up).
struct Svg {
    body: String,
    width_px: f64,
    height_px: f64,
    height_m: f64,
}

impl Svg {
    fn world(width_m: f64, height_m: f64) -> Svg {
        Svg {
            body: String::new(),
            width_px: width_m * SCALE,
            height_px: height_m * SCALE,
            height_m,
        }
    }

    fn x(&self, x: f64) -> f64 {
        x * SCALE
    }

    /// World y points up; SVG y points down.
    fn y(&self, y: f64) -> f64 {
        (self.height_m - y) * SCALE
    }

    fn rect(&mut self, x0: f64, y0: f64, x1: f64, y1: f64, style: &str) {
        let (px, py) = (self.x(x0.min(x1)), self.y(y0.max(y1)));
        let (w, h) = ((x1 - x0).abs() * SCALE, (y1 - y0).abs() * SCALE);
        let _ = writeln!(
            self.body,
            r##"<rect x="{px:.1}" y="{py:.1}" width="{w:.1}" height="{h:.1}" style="{style}"/>"##
        );
    }

    fn circle(&mut self, c: Vector2<f64>, r_m: f64, style: &str) {
        let _ = writeln!(
            self.body,
            r##"<circle cx="{:.1}" cy="{:.1}" r="{:.1}" style="{style}"/>"##,
            self.x(c.x),
            self.y(c.y),
            r_m * SCALE
        );
    }

    fn polyline(&mut self, pts: impl Iterator<Item = Vector2<f64>>, style: &str) {
        let mut s = String::new();
        for p in pts {
            let _ = write!(s, "{:.1},{:.1} ", self.x(p.x), self.y(p.y));
        }
        let _ = writeln!(
            self.body,
            r##"<polyline points="{}" fill="none" style="{style}"/>"##,
            s.trim_end()
        );
    }

    fn polygon(&mut self, pts: &[Vector2<f64>], style: &str) {
        let mut s = String::new();
        for p in pts {
            let _ = write!(s, "{:.1},{:.1} ", self.x(p.x), self.y(p.y));
        }
        let _ = writeln!(
            self.body,
            r##"<polygon points="{}" style="{style}"/>"##,
            s.trim_end()
        );
    }

    fn text(&mut self, p: Vector2<f64>, size_px: f64, content: &str, style: &str) {
        let _ = writeln!(
            self.body,
            r##"<text x="{:.1}" y="{:.1}" font-size="{size_px:.0}" font-family="sans-serif" style="{style}">{}</text>"##,
            self.x(p.x),
            self.y(p.y),
            escape(content)
        );
    }

    fn finish(self) -> String {
        format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w:.0}\" height=\"{h:.0}\" viewBox=\"0 0 {w:.0} {h:.0}\">\n\
             <rect x=\"0\" y=\"0\" width=\"{w:.0}\" height=\"{h:.0}\" fill=\"#ffffff\"/>\n{body}</svg>\n",
            w = self.width_px,
            h = self.height_px,
            body = self.body
        )
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn draw_grid(svg: &mut Svg, map: &GridMap) {
    // Merge occupied cells row-wise into runs to keep the file small.
    for row in 0..map.height {
        let mut col = 0;
        while col < map.width {
            if !map.is_occupied(row, col) {
                col += 1;
                continue;
            }
            let start = col;
            while col < map.width && map.is_occupied(row, col) {
                col += 1;
            }
            let res = map.resolution;
            svg.rect(
                start as f64 * res,
                row as f64 * res,
                col as f64 * res,
                (row + 1) as f64 * res,
                "fill:#6b7280;stroke:none",
            );
        }
    }
}

fn draw_object(svg: &mut Svg, obj: &MovableObject, style: &str) {
    match obj.footprint_corners() {
        Some(corners) => svg.polygon(&corners, style),
        None => {
            let c = Vector2::new(obj.pose.position.x, obj.pose.position.y);
            let r = match obj.shape {
                Shape::Cylinder { diameter, .. } => diameter / 2.0,
                Shape::Box { .. } => obj.shape.circumradius(),
            };
            svg.circle(c, r, style);
        }
    }
}

fn draw_pose_marker(svg: &mut Svg, pose: Pose2, color: &str) {
    let c = pose.position();
    svg.circle(c, 0.08, &format!("fill:{color};stroke:none"));
    let tip = c + Vector2::new(pose.yaw.cos(), pose.yaw.sin()) * 0.25;
    svg.polyline(
        [c, tip].into_iter(),
        &format!("stroke:{color};stroke-width:3"),
    );
}

/// Plan overview: occupancy, corridor boxes, the swept region, and both the
/// coarse and the smoothed path.
pub fn render_plan_svg(map: &GridMap, plan: &NavPlan) -> String {
    let mut svg = Svg::world(map.width_m(), map.height_m());
    draw_grid(&mut svg, map);
    for b in &plan.corridor {
        svg.rect(
            b.x_lo,
            b.y_lo,
            b.x_hi,
            b.y_hi,
            "fill:#3b82f6;fill-opacity:0.06;stroke:#3b82f6;stroke-width:1;stroke-opacity:0.35",
        );
    }
    let band = plan.swept_region.radius * 2.0 * SCALE;
    svg.polyline(
        plan.swept_region.polyline.iter().copied(),
        &format!(
            "stroke:#10b981;stroke-opacity:0.15;stroke-width:{band:.1};stroke-linecap:round;stroke-linejoin:round"
        ),
    );
    svg.polyline(
        plan.coarse.states.iter().map(|s| s.position()),
        "stroke:#9ca3af;stroke-width:2;stroke-dasharray:6 4",
    );
    svg.polyline(
        plan.smooth.points.iter().copied(),
        "stroke:#1d4ed8;stroke-width:3",
    );
    if let (Some(first), Some(last)) = (plan.coarse.states.first(), plan.coarse.states.last()) {
        draw_pose_marker(&mut svg, *first, "#059669");
        draw_pose_marker(&mut svg, *last, "#dc2626");
    }
    svg.finish()
}

/// Navigation overlay: statics, planned path if given, the executed base
/// trajectory colored by mode, movable objects at start (hollow) and end
/// (solid), and the goal.
pub fn render_nav_svg(scenario: &Scenario, report: &NavReport, plan: Option<&NavPlan>) -> String {
    let map = &scenario.map;
    let mut svg = Svg::world(map.width_m(), map.height_m());
    draw_grid(&mut svg, map);
    for r in &scenario.statics {
        svg.rect(
            r.cx - r.lx / 2.0,
            r.cy - r.ly / 2.0,
            r.cx + r.lx / 2.0,
            r.cy + r.ly / 2.0,
            "fill:#6b7280;stroke:none",
        );
    }
    if let Some(p) = plan {
        svg.polyline(
            p.smooth.points.iter().copied(),
            "stroke:#93c5fd;stroke-width:2;stroke-dasharray:5 4",
        );
    }
    for m in &scenario.movables {
        draw_object(&mut svg, m, "fill:none;stroke:#f59e0b;stroke-width:2;stroke-dasharray:4 3");
    }
    for m in &report.final_movables {
        draw_object(&mut svg, m, "fill:#f59e0b;fill-opacity:0.55;stroke:#b45309;stroke-width:2");
    }
    for push in &report.pushes {
        svg.circle(push.target, 0.05, "fill:none;stroke:#b45309;stroke-width:1.5");
        svg.polyline(
            [push.obj_from, push.obj_to].into_iter(),
            "stroke:#b45309;stroke-width:1.5;stroke-dasharray:2 3",
        );
    }
    svg.polyline(
        report.trajectory.iter().map(|s| s.base.position()),
        "stroke:#7c3aed;stroke-width:2.5",
    );
    draw_pose_marker(&mut svg, scenario.start, "#059669");
    draw_pose_marker(&mut svg, scenario.goal, "#dc2626");
    svg.circle(scenario.goal.position(), 0.15, "fill:none;stroke:#dc2626;stroke-width:2");
    let label = format!(
        "{} | {:.1} s | {:.2} m",
        if report.pushes.is_empty() { "no pushes" } else { "pushed" },
        report.traversal_time_s,
        report.path_length_m
    );
    svg.text(Vector2::new(0.1, map.height_m() - 0.12), 16.0, &label, "fill:#111827");
    svg.finish()
}

/// A named series of (x, y) points for the line chart.
pub struct Series<'a> {
    pub label: &'a str,
    pub color: &'a str,
    pub points: &'a [(f64, f64)],
}

/// Simple multi-series line chart with axes and a legend, for training and
/// benchmark curves.
pub fn render_curves_svg(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let (w, h) = (860.0, 520.0);
    let (ml, mr, mt, mb) = (70.0, 20.0, 46.0, 56.0);
    let (pw, ph) = (w - ml - mr, h - mt - mb);

    let first = series
        .iter()
        .flat_map(|s| s.points.iter().copied())
        .next()
        .unwrap_or((0.0, 0.0));
    let (mut x_min, mut x_max, mut y_min, mut y_max) = (first.0, first.0, first.1, first.1);
    for (x, y) in series.iter().flat_map(|s| s.points.iter().copied()) {
        x_min = x_min.min(x);
        x_max = x_max.max(x);
        y_min = y_min.min(y);
        y_max = y_max.max(y);
    }
    if x_max - x_min < 1e-12 {
        x_max = x_min + 1.0;
    }
    if y_max - y_min < 1e-12 {
        y_max = y_min + 1.0;
    }
    let pad = (y_max - y_min) * 0.06;
    y_min -= pad;
    y_max += pad;

    let px = |x: f64| ml + (x - x_min) / (x_max - x_min) * pw;
    let py = |y: f64| mt + (1.0 - (y - y_min) / (y_max - y_min)) * ph;

    let mut out = String::new();
    let _ = writeln!(
        out,
        r##"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0}" height="{h:.0}" viewBox="0 0 {w:.0} {h:.0}">"#
    );
    let _ = writeln!(out, r##"<rect width="{w:.0}" height="{h:.0}" fill="#ffffff"/>"#);
    let _ = writeln!(
        out,
        r##"<text x="{:.0}" y="28" font-size="18" font-family="sans-serif" fill="#111827">{}</text>"##,
        ml,
        escape(title)
    );

    // Axes with 5 ticks each.
    for i in 0..=5 {
        let xv = x_min + (x_max - x_min) * i as f64 / 5.0;
        let yv = y_min + (y_max - y_min) * i as f64 / 5.0;
        let (gx, gy) = (px(xv), py(yv));
        let _ = writeln!(
            out,
            r##"<line x1="{gx:.1}" y1="{mt:.0}" x2="{gx:.1}" y2="{:.1}" stroke="#e5e7eb"/>"##,
            mt + ph
        );
        let _ = writeln!(
            out,
            r##"<line x1="{ml:.0}" y1="{gy:.1}" x2="{:.1}" y2="{gy:.1}" stroke="#e5e7eb"/>"##,
            ml + pw
        );
        let _ = writeln!(
            out,
            r##"<text x="{gx:.1}" y="{:.1}" font-size="12" font-family="sans-serif" fill="#374151" text-anchor="middle">{}</text>"##,
            mt + ph + 18.0,
            format_tick(xv)
        );
        let _ = writeln!(
            out,
            r##"<text x="{:.1}" y="{:.1}" font-size="12" font-family="sans-serif" fill="#374151" text-anchor="end">{}</text>"##,
            ml - 8.0,
            gy + 4.0,
            format_tick(yv)
        );
    }
    let _ = writeln!(
        out,
        r##"<rect x="{ml:.0}" y="{mt:.0}" width="{pw:.0}" height="{ph:.0}" fill="none" stroke="#9ca3af"/>"##
    );
    let _ = writeln!(
        out,
        r##"<text x="{:.1}" y="{:.1}" font-size="14" font-family="sans-serif" fill="#111827" text-anchor="middle">{}</text>"##,
        ml + pw / 2.0,
        h - 14.0,
        escape(x_label)
    );
    let _ = writeln!(
        out,
        r##"<text x="18" y="{:.1}" font-size="14" font-family="sans-serif" fill="#111827" text-anchor="middle" transform="rotate(-90 18 {:.1})">{}</text>"##,
        mt + ph / 2.0,
        mt + ph / 2.0,
        escape(y_label)
    );

    for (k, s) in series.iter().enumerate() {
        let mut path = String::new();
        for (x, y) in s.points {
            let _ = write!(path, "{:.1},{:.1} ", px(*x), py(*y));
        }
        let _ = writeln!(
            out,
            r##"<polyline points="{}" fill="none" stroke="{}" stroke-width="2"/>"##,
            path.trim_end(),
            s.color
        );
        let ly = mt + 16.0 + k as f64 * 18.0;
        let _ = writeln!(
            out,
            r##"<line x1="{:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{}" stroke-width="3"/>"##,
            ml + pw - 170.0,
            ml + pw - 140.0,
            s.color
        );
        let _ = writeln!(
            out,
            r##"<text x="{:.1}" y="{:.1}" font-size="13" font-family="sans-serif" fill="#111827">{}</text>"##,
            ml + pw - 132.0,
            ly + 4.0,
            escape(s.label)
        );
    }
    let _ = writeln!(out, "</svg>");
    out
}

fn format_tick(v: f64) -> String {
    if v.abs() >= 1000.0 {
        format!("{:.0}", v)
    } else if v.abs() >= 10.0 {
        format!("{:.1}", v)
    } else {
        format!("{:.2}", v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::planner::{plan, PlannerConfig};
    use crate::world::rasterize;

    fn simple_scenario() -> Scenario {
        Scenario {
            map: GridMap::new(6.0, 4.0, 0.05).unwrap(),
            statics: vec![],
            movables: vec![],
            start: Pose2::new(0.6, 2.0, 0.0),
            goal: Pose2::new(5.4, 2.0, 0.0),
            seed: 1,
        }
    }

    #[test]
    fn plan_svg_is_well_formed_and_scaled() {
        let sc = simple_scenario();
        let p = plan(&rasterize(&sc), sc.start, sc.goal, &PlannerConfig::default()).unwrap();
        let svg = render_plan_svg(&sc.map, &p);
        assert!(svg.starts_with("<svg "));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains(r##"width="600""##), "6 m at 100 px/m");
        assert!(svg.contains(r##"height="400""##));
        assert!(svg.matches("<polyline").count() >= 3);
    }

    #[test]
    fn curves_svg_handles_flat_and_normal_series() {
        let flat = [(0.0, 1.0), (1.0, 1.0)];
        let rising = [(0.0, 0.0), (1.0, 2.0), (2.0, 1.0)];
        let svg = render_curves_svg(
            "reward",
            "iteration",
            "mean reward",
            &[
                Series { label: "a", color: "#1d4ed8", points: &flat },
                Series { label: "b", color: "#dc2626", points: &rising },
            ],
        );
        assert!(svg.contains("reward"));
        assert!(svg.contains("polyline"));
        assert!(svg.contains("#1d4ed8"));
    }
}
