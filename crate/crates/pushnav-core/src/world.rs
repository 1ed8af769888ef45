//! Scenario and world model shared by every other module: occupancy maps,
//! static/movable obstacles, robot and object state, and the geometry
//! predicates used for collision checking.

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::path::Path;
use thiserror::Error;

/// Robot footprint used for all collision checks, meters.
pub const FOOTPRINT_LENGTH: f64 = 0.90;
/// Robot footprint width, meters.
pub const FOOTPRINT_WIDTH: f64 = 0.60;

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("failed to read scenario file: {0}")]
    Io(#[from] std::io::Error),
    #[error("failed to parse scenario file: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid scenario field `{field}`: {reason}")]
    Validation { field: String, reason: String },
}

impl WorldError {
    fn invalid(field: &str, reason: impl Into<String>) -> Self {
        WorldError::Validation {
            field: field.to_string(),
            reason: reason.into(),
        }
    }
}

/// Wraps an angle to (−π, π]. The result differs from the input by an exact
/// multiple of 2π.
pub fn normalize_angle(theta: f64) -> f64 {
    let a = theta.rem_euclid(2.0 * PI);
    if a > PI {
        a - 2.0 * PI
    } else {
        a
    }
}

/// Planar pose; yaw is kept normalized to (−π, π].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose2 {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
}

impl Pose2 {
    pub fn new(x: f64, y: f64, yaw: f64) -> Self {
        Pose2 {
            x,
            y,
            yaw: normalize_angle(yaw),
        }
    }

    pub fn position(&self) -> Vector2<f64> {
        Vector2::new(self.x, self.y)
    }

    pub fn distance(&self, other: &Pose2) -> f64 {
        ((self.x - other.x).powi(2) + (self.y - other.y).powi(2)).sqrt()
    }
}

/// Spatial pose: position plus (yaw, pitch, roll), each normalized to (−π, π].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose6 {
    pub position: Vector3<f64>,
    pub orientation: Vector3<f64>,
}

impl Pose6 {
    pub fn new(position: Vector3<f64>, orientation: Vector3<f64>) -> Self {
        Pose6 {
            position,
            orientation: orientation.map(normalize_angle),
        }
    }

    pub fn yaw(&self) -> f64 {
        self.orientation.x
    }
}

/// Occupancy grid. Row index follows y, column index follows x; the cell
/// (row, col) covers [col·res, (col+1)·res) × [row·res, (row+1)·res).
#[derive(Debug, Clone)]
pub struct GridMap {
    pub resolution: f64,
    pub width: usize,
    pub height: usize,
    occupancy: Vec<bool>,
}

impl GridMap {
    pub fn new(width_m: f64, height_m: f64, resolution: f64) -> Result<Self, WorldError> {
        if !(resolution > 0.0) {
            return Err(WorldError::invalid("map.resolution_m", "must be > 0"));
        }
        if !(width_m > 0.0) || !(height_m > 0.0) {
            return Err(WorldError::invalid("map", "width_m and height_m must be > 0"));
        }
        let width = (width_m / resolution).round() as usize;
        let height = (height_m / resolution).round() as usize;
        if width == 0 || height == 0 {
            return Err(WorldError::invalid("map", "dimensions smaller than one cell"));
        }
        Ok(GridMap {
            resolution,
            width,
            height,
            occupancy: vec![false; width * height],
        })
    }

    pub fn width_m(&self) -> f64 {
        self.width as f64 * self.resolution
    }

    pub fn height_m(&self) -> f64 {
        self.height as f64 * self.resolution
    }

    pub fn is_occupied(&self, row: usize, col: usize) -> bool {
        self.occupancy[row * self.width + col]
    }

    pub fn set_occupied(&mut self, row: usize, col: usize, value: bool) {
        self.occupancy[row * self.width + col] = value;
    }

    pub fn cell_center(&self, row: usize, col: usize) -> Vector2<f64> {
        Vector2::new(
            (col as f64 + 0.5) * self.resolution,
            (row as f64 + 0.5) * self.resolution,
        )
    }

    pub fn in_bounds(&self, x: f64, y: f64) -> bool {
        x >= 0.0 && y >= 0.0 && x <= self.width_m() && y <= self.height_m()
    }

    pub fn occupied_count(&self) -> usize {
        self.occupancy.iter().filter(|&&o| o).count()
    }

    /// Marks every cell whose center lies inside the closed rectangle.
    pub fn mark_rect(&mut self, rect: &StaticRect) {
        let col_lo = (((rect.cx - rect.lx / 2.0) / self.resolution).floor()).max(0.0) as usize;
        let col_hi = ((rect.cx + rect.lx / 2.0) / self.resolution).ceil().max(0.0) as usize;
        let row_lo = (((rect.cy - rect.ly / 2.0) / self.resolution).floor()).max(0.0) as usize;
        let row_hi = ((rect.cy + rect.ly / 2.0) / self.resolution).ceil().max(0.0) as usize;
        for row in row_lo..row_hi.min(self.height) {
            for col in col_lo..col_hi.min(self.width) {
                let c = self.cell_center(row, col);
                if rect.contains(c.x, c.y) {
                    self.set_occupied(row, col, true);
                }
            }
        }
    }
}

/// Axis-aligned static obstacle rectangle.
#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StaticRect {
    pub cx: f64,
    pub cy: f64,
    pub lx: f64,
    pub ly: f64,
}

impl StaticRect {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        (x - self.cx).abs() <= self.lx / 2.0 && (y - self.cy).abs() <= self.ly / 2.0
    }

    pub fn x_range(&self) -> (f64, f64) {
        (self.cx - self.lx / 2.0, self.cx + self.lx / 2.0)
    }

    pub fn y_range(&self) -> (f64, f64) {
        (self.cy - self.ly / 2.0, self.cy + self.ly / 2.0)
    }
}

/// Object geometry. Boxes are yawed rectangles in plan view; cylinders are
/// rotationally symmetric.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    Box { lx: f64, ly: f64, lz: f64 },
    Cylinder { diameter: f64, height: f64 },
}

impl Shape {
    pub fn height(&self) -> f64 {
        match *self {
            Shape::Box { lz, .. } => lz,
            Shape::Cylinder { height, .. } => height,
        }
    }

    /// Radius of the smallest circle containing the plan-view footprint.
    pub fn circumradius(&self) -> f64 {
        match *self {
            Shape::Box { lx, ly, .. } => 0.5 * (lx * lx + ly * ly).sqrt(),
            Shape::Cylinder { diameter, .. } => 0.5 * diameter,
        }
    }
}

/// Movable obstacle: shape plus pose, mass, ground friction, and accumulated
/// tilt (a tipped object has tilt > 0).
#[derive(Debug, Clone)]
pub struct MovableObject {
    pub shape: Shape,
    pub pose: Pose6,
    pub mass: f64,
    pub friction_ground: f64,
    pub tilt: f64,
}

impl MovableObject {
    /// Half-width of the support footprint along the world-frame direction
    /// `dir` (need not be normalized; only its direction is used).
    pub fn support_half_extent(&self, dir: Vector2<f64>) -> f64 {
        match self.shape {
            Shape::Box { lx, ly, .. } => {
                let n = dir.norm();
                if n < 1e-12 {
                    return 0.5 * lx.min(ly);
                }
                let d = dir / n;
                let yaw = self.pose.yaw();
                let (s, c) = yaw.sin_cos();
                // Object frame axes expressed in world coordinates.
                let ax = Vector2::new(c, s);
                let ay = Vector2::new(-s, c);
                0.5 * lx * d.dot(&ax).abs() + 0.5 * ly * d.dot(&ay).abs()
            }
            Shape::Cylinder { diameter, .. } => 0.5 * diameter,
        }
    }

    /// Plan-view footprint corners for boxes; `None` for cylinders.
    pub fn footprint_corners(&self) -> Option<[Vector2<f64>; 4]> {
        match self.shape {
            Shape::Box { lx, ly, .. } => {
                let (s, c) = self.pose.yaw().sin_cos();
                let center = Vector2::new(self.pose.position.x, self.pose.position.y);
                let hx = lx / 2.0;
                let hy = ly / 2.0;
                Some([(hx, hy), (hx, -hy), (-hx, -hy), (-hx, hy)].map(|(lx, ly)| {
                    center + Vector2::new(lx * c - ly * s, lx * s + ly * c)
                }))
            }
            Shape::Cylinder { .. } => None,
        }
    }
}

/// World-frame axis-aligned bounding box of a movable object.
pub fn object_aabb(obj: &MovableObject) -> (Vector3<f64>, Vector3<f64>) {
    let p = obj.pose.position;
    let (hx, hy) = match obj.shape {
        Shape::Box { lx, ly, .. } => {
            let (s, c) = obj.pose.yaw().sin_cos();
            (
                0.5 * (lx * c.abs() + ly * s.abs()),
                0.5 * (lx * s.abs() + ly * c.abs()),
            )
        }
        Shape::Cylinder { diameter, .. } => (0.5 * diameter, 0.5 * diameter),
    };
    let hz = 0.5 * obj.shape.height();
    (
        Vector3::new(p.x - hx, p.y - hy, p.z - hz),
        Vector3::new(p.x + hx, p.y + hy, p.z + hz),
    )
}

/// Robot base state during navigation.
#[derive(Debug, Clone, Copy)]
pub struct RobotState {
    pub base: Pose2,
    pub linear_speed: f64,
}

/// A loaded, validated scenario.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub map: GridMap,
    pub statics: Vec<StaticRect>,
    pub movables: Vec<MovableObject>,
    pub start: Pose2,
    pub goal: Pose2,
    pub seed: u64,
}

// Raw JSON schema types; converted into domain types after validation.

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    map: RawMap,
    #[serde(default)]
    statics: Vec<StaticRect>,
    #[serde(default)]
    movables: Vec<RawMovable>,
    start: RawPose,
    goal: RawPose,
    seed: u64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMap {
    width_m: f64,
    height_m: f64,
    resolution_m: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPose {
    x: f64,
    y: f64,
    yaw: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMovable {
    shape: String,
    dims: Vec<f64>,
    pose: RawPose,
    mass_kg: f64,
    mu: f64,
}

impl RawMovable {
    fn into_object(self, index: usize) -> Result<MovableObject, WorldError> {
        let field = format!("movables[{index}]");
        let shape = match self.shape.as_str() {
            "box" => {
                if self.dims.len() != 3 {
                    return Err(WorldError::invalid(
                        &format!("{field}.dims"),
                        "box requires [lx, ly, lz]",
                    ));
                }
                Shape::Box {
                    lx: self.dims[0],
                    ly: self.dims[1],
                    lz: self.dims[2],
                }
            }
            "cylinder" => {
                if self.dims.len() != 2 {
                    return Err(WorldError::invalid(
                        &format!("{field}.dims"),
                        "cylinder requires [diameter, height]",
                    ));
                }
                Shape::Cylinder {
                    diameter: self.dims[0],
                    height: self.dims[1],
                }
            }
            other => {
                return Err(WorldError::invalid(
                    &format!("{field}.shape"),
                    format!("unknown shape `{other}`"),
                ));
            }
        };
        if self.dims.iter().any(|&d| !(d > 0.0)) {
            return Err(WorldError::invalid(
                &format!("{field}.dims"),
                "all dimensions must be > 0",
            ));
        }
        if !(self.mass_kg > 0.0) {
            return Err(WorldError::invalid(
                &format!("{field}.mass_kg"),
                "mass must be > 0",
            ));
        }
        if !(self.mu > 0.0 && self.mu <= 2.0) {
            return Err(WorldError::invalid(
                &format!("{field}.mu"),
                "friction must lie in (0, 2]",
            ));
        }
        // Objects rest on the ground plane: z is half the height.
        let z = shape.height() / 2.0;
        Ok(MovableObject {
            shape,
            pose: Pose6::new(
                Vector3::new(self.pose.x, self.pose.y, z),
                Vector3::new(self.pose.yaw, 0.0, 0.0),
            ),
            mass: self.mass_kg,
            friction_ground: self.mu,
            tilt: 0.0,
        })
    }
}

/// Loads and validates a scenario file.
pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario, WorldError> {
    let text = std::fs::read_to_string(path)?;
    scenario_from_json(&text)
}

/// Parses and validates scenario JSON.
pub fn scenario_from_json(text: &str) -> Result<Scenario, WorldError> {
    let raw: RawScenario = serde_json::from_str(text)?;
    let map = GridMap::new(raw.map.width_m, raw.map.height_m, raw.map.resolution_m)?;

    let movables = raw
        .movables
        .into_iter()
        .enumerate()
        .map(|(i, m)| m.into_object(i))
        .collect::<Result<Vec<_>, _>>()?;

    for (i, m) in movables.iter().enumerate() {
        let (lo, hi) = object_aabb(m);
        if lo.x < 0.0 || lo.y < 0.0 || hi.x > map.width_m() || hi.y > map.height_m() {
            return Err(WorldError::invalid(
                &format!("movables[{i}].pose"),
                "object extends outside map bounds",
            ));
        }
    }

    let start = Pose2::new(raw.start.x, raw.start.y, raw.start.yaw);
    let goal = Pose2::new(raw.goal.x, raw.goal.y, raw.goal.yaw);

    let scenario = Scenario {
        map,
        statics: raw.statics,
        movables,
        start,
        goal,
        seed: raw.seed,
    };

    let grid = rasterize(&scenario);
    if footprint_collides(&grid, scenario.start) {
        return Err(WorldError::invalid("start", "footprint collides with statics"));
    }
    if footprint_collides(&grid, scenario.goal) {
        return Err(WorldError::invalid("goal", "footprint collides with statics"));
    }
    Ok(scenario)
}

/// Rasterizes the static obstacles onto the scenario map. Movables are never
/// rasterized here; planning handles them through the interaction pipeline.
pub fn rasterize(scenario: &Scenario) -> GridMap {
    let mut grid = scenario.map.clone();
    for rect in &scenario.statics {
        grid.mark_rect(rect);
    }
    grid
}

/// Rasterizes statics plus the plan-view footprints of movables. Used by the
/// avoidance fallback, which treats movables as if they were walls.
pub fn rasterize_with_movables(scenario: &Scenario, movables: &[MovableObject]) -> GridMap {
    let mut grid = rasterize(scenario);
    for m in movables {
        match m.footprint_corners() {
            Some(corners) => {
                let (min_x, max_x) = corners
                    .iter()
                    .fold((f64::MAX, f64::MIN), |(lo, hi), c| (lo.min(c.x), hi.max(c.x)));
                let (min_y, max_y) = corners
                    .iter()
                    .fold((f64::MAX, f64::MIN), |(lo, hi), c| (lo.min(c.y), hi.max(c.y)));
                let res = grid.resolution;
                let col_lo = (min_x / res).floor().max(0.0) as usize;
                let col_hi = ((max_x / res).ceil().max(0.0) as usize).min(grid.width);
                let row_lo = (min_y / res).floor().max(0.0) as usize;
                let row_hi = ((max_y / res).ceil().max(0.0) as usize).min(grid.height);
                let (s, c) = m.pose.yaw().sin_cos();
                let center = Vector2::new(m.pose.position.x, m.pose.position.y);
                let (hx, hy) = match m.shape {
                    Shape::Box { lx, ly, .. } => (lx / 2.0, ly / 2.0),
                    Shape::Cylinder { .. } => unreachable!("cylinders have no corners"),
                };
                for row in row_lo..row_hi {
                    for col in col_lo..col_hi {
                        let p = grid.cell_center(row, col) - center;
                        let local_x = c * p.x + s * p.y;
                        let local_y = -s * p.x + c * p.y;
                        if local_x.abs() <= hx && local_y.abs() <= hy {
                            grid.set_occupied(row, col, true);
                        }
                    }
                }
            }
            None => {
                let r = m.shape.circumradius();
                let center = Vector2::new(m.pose.position.x, m.pose.position.y);
                let res = grid.resolution;
                let col_lo = (((center.x - r) / res).floor()).max(0.0) as usize;
                let col_hi = ((((center.x + r) / res).ceil()).max(0.0) as usize).min(grid.width);
                let row_lo = (((center.y - r) / res).floor()).max(0.0) as usize;
                let row_hi = ((((center.y + r) / res).ceil()).max(0.0) as usize).min(grid.height);
                for row in row_lo..row_hi {
                    for col in col_lo..col_hi {
                        if (grid.cell_center(row, col) - center).norm() <= r {
                            grid.set_occupied(row, col, true);
                        }
                    }
                }
            }
        }
    }
    grid
}

/// True iff the robot footprint at `pose` covers any occupied cell center, or
/// leaves the map (out-of-bounds poses are collisions).
pub fn footprint_collides(map: &GridMap, pose: Pose2) -> bool {
    let (s, c) = pose.yaw.sin_cos();
    let hx = FOOTPRINT_LENGTH / 2.0;
    let hy = FOOTPRINT_WIDTH / 2.0;
    if !map.in_bounds(pose.x, pose.y) {
        return true;
    }
    // Conservative: the whole footprint must stay inside the map.
    let ex = hx * c.abs() + hy * s.abs();
    let ey = hx * s.abs() + hy * c.abs();
    if pose.x - ex < 0.0
        || pose.y - ey < 0.0
        || pose.x + ex > map.width_m()
        || pose.y + ey > map.height_m()
    {
        return true;
    }
    let res = map.resolution;
    let col_lo = ((pose.x - ex) / res).floor().max(0.0) as usize;
    let col_hi = (((pose.x + ex) / res).ceil() as usize).min(map.width);
    let row_lo = ((pose.y - ey) / res).floor().max(0.0) as usize;
    let row_hi = (((pose.y + ey) / res).ceil() as usize).min(map.height);
    for row in row_lo..row_hi {
        for col in col_lo..col_hi {
            if !map.is_occupied(row, col) {
                continue;
            }
            let p = map.cell_center(row, col);
            let dx = p.x - pose.x;
            let dy = p.y - pose.y;
            let local_x = c * dx + s * dy;
            let local_y = -s * dx + c * dy;
            if local_x.abs() <= hx && local_y.abs() <= hy {
                return true;
            }
        }
    }
    false
}
