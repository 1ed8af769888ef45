//! Coarse-to-fine motion planning: hybrid A* over motion primitives, feasible
//! corridor construction around the coarse path, and box-constrained QP
//! smoothing of the result.

mod astar;
mod smooth;

pub use astar::hybrid_astar;
pub use smooth::{eval_objective, smooth_path, smooth_path_reference_active_set, SmoothPath};

use crate::world::{GridMap, Pose2, FOOTPRINT_LENGTH, FOOTPRINT_WIDTH};
use nalgebra::Vector2;
use serde::Deserialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PlannerError {
    #[error("no collision-free path found")]
    NoPath,
    #[error("invalid planner input: {0}")]
    InvalidInput(String),
}

/// Planner parameters. Defaults mirror the desk-scale setup; every field can
/// be overridden from the run configuration.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlannerConfig {
    /// Motion primitive arc length, meters.
    pub arc_length: f64,
    /// Primitive curvatures, 1/m. Forward motion only.
    pub curvatures: Vec<f64>,
    /// Heading bins used for state deduplication.
    pub heading_bins: usize,
    /// Goal position tolerance, meters.
    pub goal_tol_pos: f64,
    /// Goal heading tolerance, radians.
    pub goal_tol_yaw: f64,
    /// Smoothness weight λ1.
    pub lambda1: f64,
    /// Length weight λ2.
    pub lambda2: f64,
    /// Corridor boxes stop growing at this half-extent from their vertex.
    pub corridor_max_half_extent: f64,
    /// Extra inflation margin added to the robot half-diagonal for C(Π).
    pub inflation_margin: f64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        PlannerConfig {
            arc_length: 0.3,
            curvatures: vec![0.0, 1.0 / 0.8, -1.0 / 0.8, 1.0 / 1.6, -1.0 / 1.6],
            heading_bins: 72,
            goal_tol_pos: 0.15,
            goal_tol_yaw: 0.35,
            lambda1: 10.0,
            lambda2: 1.0,
            corridor_max_half_extent: 1.5,
            inflation_margin: 0.05,
        }
    }
}

impl PlannerConfig {
    /// Radius of the swept region C(Π): robot half-diagonal plus margin.
    pub fn inflation_radius(&self) -> f64 {
        let half_diag = (FOOTPRINT_LENGTH / 2.0).hypot(FOOTPRINT_WIDTH / 2.0);
        half_diag + self.inflation_margin
    }
}

/// Coarse hybrid A* output: primitive endpoint states.
#[derive(Debug, Clone)]
pub struct CoarsePath {
    pub states: Vec<Pose2>,
}

impl CoarsePath {
    pub fn length(&self) -> f64 {
        self.states
            .windows(2)
            .map(|w| w[0].distance(&w[1]))
            .sum()
    }
}

/// Axis-aligned free box around one interior path vertex.
#[derive(Debug, Clone, Copy)]
pub struct CorridorBox {
    pub x_lo: f64,
    pub x_hi: f64,
    pub y_lo: f64,
    pub y_hi: f64,
}

impl CorridorBox {
    pub fn contains(&self, x: f64, y: f64, tol: f64) -> bool {
        x >= self.x_lo - tol && x <= self.x_hi + tol && y >= self.y_lo - tol && y <= self.y_hi + tol
    }
}

/// The region swept by the planned path: the smoothed polyline inflated by
/// the robot half-diagonal plus margin (a chain of capsules).
#[derive(Debug, Clone)]
pub struct SweptRegion {
    pub polyline: Vec<Vector2<f64>>,
    pub radius: f64,
}

impl SweptRegion {
    /// Distance from a point to the polyline (zero radius).
    pub fn polyline_distance(&self, p: Vector2<f64>) -> f64 {
        if self.polyline.len() == 1 {
            return (p - self.polyline[0]).norm();
        }
        self.polyline
            .windows(2)
            .map(|w| point_segment_distance(p, w[0], w[1]))
            .fold(f64::MAX, f64::min)
    }

    pub fn contains_point(&self, p: Vector2<f64>) -> bool {
        self.polyline_distance(p) <= self.radius
    }

    /// True iff a convex polygon (given by its corners) intersects the region.
    pub fn intersects_polygon(&self, corners: &[Vector2<f64>]) -> bool {
        self.polygon_clearance(corners) <= self.radius
    }

    /// Minimum distance from the polyline to a convex polygon boundary or
    /// interior (zero if a polyline vertex lies inside the polygon).
    pub fn polygon_clearance(&self, corners: &[Vector2<f64>]) -> f64 {
        let mut best = f64::MAX;
        for v in &self.polyline {
            if point_in_convex_polygon(*v, corners) {
                return 0.0;
            }
        }
        let n = corners.len();
        for i in 0..n {
            let (a, b) = (corners[i], corners[(i + 1) % n]);
            if self.polyline.len() == 1 {
                best = best.min(point_segment_distance(self.polyline[0], a, b));
            }
            for w in self.polyline.windows(2) {
                best = best.min(segment_segment_distance(w[0], w[1], a, b));
            }
        }
        best
    }

    /// True iff a disc intersects the region.
    pub fn intersects_disc(&self, center: Vector2<f64>, r: f64) -> bool {
        self.polyline_distance(center) <= self.radius + r
    }
}

/// Full plan: coarse path, corridor, smoothed path, and swept region.
#[derive(Debug, Clone)]
pub struct NavPlan {
    pub coarse: CoarsePath,
    pub corridor: Vec<CorridorBox>,
    pub smooth: SmoothPath,
    pub swept_region: SweptRegion,
}

impl NavPlan {
    pub fn smooth_length(&self) -> f64 {
        self.smooth
            .points
            .windows(2)
            .map(|w| (w[1] - w[0]).norm())
            .sum()
    }
}

/// Plans from start to goal on the given occupancy grid: hybrid A*, corridor
/// expansion, then QP smoothing.
pub fn plan(
    map: &GridMap,
    start: Pose2,
    goal: Pose2,
    config: &PlannerConfig,
) -> Result<NavPlan, PlannerError> {
    let coarse = hybrid_astar(map, start, goal, config)?;
    let corridor = build_corridor(map, &coarse, config.corridor_max_half_extent);
    let smooth = smooth_path(&coarse, &corridor, config.lambda1, config.lambda2)?;
    let swept_region = SweptRegion {
        polyline: smooth.points.clone(),
        radius: config.inflation_radius(),
    };
    Ok(NavPlan {
        coarse,
        corridor,
        smooth,
        swept_region,
    })
}

/// Expands one axis-aligned box per interior coarse vertex: the four faces
/// grow outward one cell at a time, round robin, until they meet an occupied
/// cell, the map border, or the half-extent cap.
pub fn build_corridor(map: &GridMap, coarse: &CoarsePath, max_half_extent: f64) -> Vec<CorridorBox> {
    let res = map.resolution;
    coarse.states[1..coarse.states.len().saturating_sub(1)]
        .iter()
        .map(|v| {
            let col = ((v.x / res) as usize).min(map.width - 1);
            let row = ((v.y / res) as usize).min(map.height - 1);
            // Cell index bounds of the box, inclusive.
            let mut c_lo = col;
            let mut c_hi = col;
            let mut r_lo = row;
            let mut r_hi = row;
            // One flag per face: left, right, down, up.
            let mut frozen = [false; 4];
            while !frozen.iter().all(|&f| f) {
                for face in 0..4 {
                    if frozen[face] {
                        continue;
                    }
                    let grown = match face {
                        0 => {
                            // Left face moves to column c_lo − 1.
                            if c_lo == 0 || v.x - (c_lo as f64 - 1.0) * res > max_half_extent {
                                false
                            } else if (r_lo..=r_hi).all(|r| !map.is_occupied(r, c_lo - 1)) {
                                c_lo -= 1;
                                true
                            } else {
                                false
                            }
                        }
                        1 => {
                            if c_hi + 1 >= map.width
                                || (c_hi as f64 + 2.0) * res - v.x > max_half_extent
                            {
                                false
                            } else if (r_lo..=r_hi).all(|r| !map.is_occupied(r, c_hi + 1)) {
                                c_hi += 1;
                                true
                            } else {
                                false
                            }
                        }
                        2 => {
                            if r_lo == 0 || v.y - (r_lo as f64 - 1.0) * res > max_half_extent {
                                false
                            } else if (c_lo..=c_hi).all(|c| !map.is_occupied(r_lo - 1, c)) {
                                r_lo -= 1;
                                true
                            } else {
                                false
                            }
                        }
                        3 => {
                            if r_hi + 1 >= map.height
                                || (r_hi as f64 + 2.0) * res - v.y > max_half_extent
                            {
                                false
                            } else if (c_lo..=c_hi).all(|c| !map.is_occupied(r_hi + 1, c)) {
                                r_hi += 1;
                                true
                            } else {
                                false
                            }
                        }
                        _ => unreachable!(),
                    };
                    if !grown {
                        frozen[face] = true;
                    }
                }
            }
            CorridorBox {
                x_lo: c_lo as f64 * res,
                x_hi: (c_hi as f64 + 1.0) * res,
                y_lo: r_lo as f64 * res,
                y_hi: (r_hi as f64 + 1.0) * res,
            }
        })
        .collect()
}

pub(crate) fn point_segment_distance(p: Vector2<f64>, a: Vector2<f64>, b: Vector2<f64>) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    if len2 < 1e-18 {
        return (p - a).norm();
    }
    let t = ((p - a).dot(&ab) / len2).clamp(0.0, 1.0);
    (p - (a + ab * t)).norm()
}

pub(crate) fn segments_intersect(
    a: Vector2<f64>,
    b: Vector2<f64>,
    c: Vector2<f64>,
    d: Vector2<f64>,
) -> bool {
    let cross = |o: Vector2<f64>, p: Vector2<f64>, q: Vector2<f64>| {
        (p.x - o.x) * (q.y - o.y) - (p.y - o.y) * (q.x - o.x)
    };
    let d1 = cross(c, d, a);
    let d2 = cross(c, d, b);
    let d3 = cross(a, b, c);
    let d4 = cross(a, b, d);
    ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
}

pub(crate) fn segment_segment_distance(
    a: Vector2<f64>,
    b: Vector2<f64>,
    c: Vector2<f64>,
    d: Vector2<f64>,
) -> f64 {
    if segments_intersect(a, b, c, d) {
        return 0.0;
    }
    point_segment_distance(a, c, d)
        .min(point_segment_distance(b, c, d))
        .min(point_segment_distance(c, a, b))
        .min(point_segment_distance(d, a, b))
}

pub(crate) fn point_in_convex_polygon(p: Vector2<f64>, corners: &[Vector2<f64>]) -> bool {
    let n = corners.len();
    let mut sign = 0.0f64;
    for i in 0..n {
        let a = corners[i];
        let b = corners[(i + 1) % n];
        let cross = (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x);
        if cross.abs() < 1e-12 {
            continue;
        }
        if sign == 0.0 {
            sign = cross.signum();
        } else if sign != cross.signum() {
            return false;
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{rasterize, scenario_from_json, GridMap, StaticRect};
    use approx::assert_relative_eq;

    fn open_map(w: f64, h: f64) -> GridMap {
        GridMap::new(w, h, 0.1).unwrap()
    }

    #[test]
    fn corridor_open_map_reaches_cap_or_border() {
        let map = open_map(5.0, 5.0);
        let coarse = CoarsePath {
            states: vec![
                Pose2::new(1.0, 2.5, 0.0),
                Pose2::new(2.5, 2.5, 0.0),
                Pose2::new(4.0, 2.5, 0.0),
            ],
        };
        let boxes = build_corridor(&map, &coarse, 1.5);
        assert_eq!(boxes.len(), 1);
        let b = boxes[0];
        // Cap is 1.5 m from the vertex, subject to one-cell quantization.
        assert!(b.x_hi - 2.5 >= 1.4 && b.x_hi - 2.5 <= 1.5 + 1e-9);
        assert!(2.5 - b.x_lo >= 1.4);
        assert!(b.y_hi - 2.5 >= 1.4);
        assert!(2.5 - b.y_lo >= 1.4);
    }

    #[test]
    fn corridor_stops_at_wall_with_cell_quantization() {
        let mut map = open_map(5.0, 5.0);
        // Wall occupying x >= 2.8.
        let rect = StaticRect { cx: 3.4, cy: 2.5, lx: 1.2, ly: 5.0 };
        map.mark_rect(&rect);
        let coarse = CoarsePath {
            states: vec![
                Pose2::new(1.0, 2.5, 0.0),
                Pose2::new(2.5, 2.5, 0.0),
                Pose2::new(1.0, 1.0, 0.0),
            ],
        };
        let boxes = build_corridor(&map, &coarse, 1.5);
        let b = boxes[0];
        // Vertex is 0.3 m left of the wall; expansion is one-cell quantized.
        assert!(b.x_hi - 2.5 >= 0.2 - 1e-9 && b.x_hi - 2.5 <= 0.3 + 1e-9, "x_hi = {}", b.x_hi);
    }

    #[test]
    fn corridor_single_free_cell_pocket() {
        let mut map = open_map(1.1, 1.1);
        for row in 0..11 {
            for col in 0..11 {
                if !(row == 5 && col == 5) {
                    map.set_occupied(row, col, true);
                }
            }
        }
        let coarse = CoarsePath {
            states: vec![
                Pose2::new(0.55, 0.55, 0.0),
                Pose2::new(0.55, 0.55, 0.0),
                Pose2::new(0.55, 0.55, 0.0),
            ],
        };
        let boxes = build_corridor(&map, &coarse, 1.5);
        let b = boxes[0];
        assert_relative_eq!(b.x_lo, 0.5, epsilon = 1e-12);
        assert_relative_eq!(b.x_hi, 0.6, epsilon = 1e-12);
        assert_relative_eq!(b.y_lo, 0.5, epsilon = 1e-12);
        assert_relative_eq!(b.y_hi, 0.6, epsilon = 1e-12);
    }

    #[test]
    fn swept_region_distance_and_membership() {
        let region = SweptRegion {
            polyline: vec![Vector2::new(0.0, 0.0), Vector2::new(2.0, 0.0)],
            radius: 0.5,
        };
        assert!(region.contains_point(Vector2::new(1.0, 0.4)));
        assert!(!region.contains_point(Vector2::new(1.0, 0.6)));
        assert_relative_eq!(region.polyline_distance(Vector2::new(3.0, 0.0)), 1.0);
        let square = [
            Vector2::new(0.8, 0.6),
            Vector2::new(1.2, 0.6),
            Vector2::new(1.2, 1.0),
            Vector2::new(0.8, 1.0),
        ];
        assert!(!region.intersects_polygon(&square));
        let square_close = square.map(|c| c - Vector2::new(0.0, 0.15));
        assert!(region.intersects_polygon(&square_close));
    }

    #[test]
    fn plan_produces_aligned_corridor_and_smooth_path() {
        let text = r#"{
            "map": {"width_m": 5.0, "height_m": 5.0, "resolution_m": 0.1},
            "start": {"x": 1.0, "y": 2.5, "yaw": 0.0},
            "goal": {"x": 4.0, "y": 2.5, "yaw": 0.0},
            "seed": 9
        }"#;
        let scenario = scenario_from_json(text).unwrap();
        let grid = rasterize(&scenario);
        let plan = plan(&grid, scenario.start, scenario.goal, &PlannerConfig::default()).unwrap();
        assert_eq!(plan.corridor.len(), plan.coarse.states.len() - 2);
        assert_eq!(plan.smooth.points.len(), plan.coarse.states.len());
        assert!(plan.smooth.converged);
        // Straight-line scenario: smoothed length within 5% of 3 m.
        assert!((plan.smooth_length() - 3.0).abs() / 3.0 < 0.05);
    }
}
