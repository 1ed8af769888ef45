//! Navigation state machine: path tracking with a PID unicycle controller,
//! obstruction detection against the swept plan region, pushing-target
//! selection, embedded pushing rollouts, and replanning.

use crate::physics::forward_kinematics;
use crate::planner::{plan, NavPlan, PlannerConfig, SweptRegion};
use crate::ppo::{PushPolicy, PpoError};
use crate::pushenv::{
    Cause, EnvConfig, EnvError, FixedObject, Observation, PushEnv,
};
use crate::physics::RandomizationRanges;
use crate::world::{
    normalize_angle, rasterize, rasterize_with_movables, GridMap, MovableObject, Pose2, Pose6,
    RobotState, Scenario, Shape,
};
use nalgebra::{Matrix3, SMatrix, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NavError {
    #[error("no feasible pushing target")]
    NoFeasibleTarget,
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Policy(#[from] PpoError),
    #[error("invalid navigation config: {0}")]
    InvalidConfig(String),
}

/// Navigation mode. Transitions must follow [`transition_allowed`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Planning,
    Tracking,
    Positioning,
    Pushing,
    Replanning,
    Done,
    Failed,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Planning => "planning",
            Mode::Tracking => "tracking",
            Mode::Positioning => "positioning",
            Mode::Pushing => "pushing",
            Mode::Replanning => "replanning",
            Mode::Done => "done",
            Mode::Failed => "failed",
        }
    }
}

/// The state machine graph: which mode changes are legal.
pub fn transition_allowed(from: Mode, to: Mode) -> bool {
    use Mode::*;
    matches!(
        (from, to),
        (Planning, Tracking)
            | (Planning, Failed)
            | (Tracking, Positioning)
            | (Tracking, Replanning)
            | (Tracking, Done)
            | (Tracking, Failed)
            | (Positioning, Pushing)
            | (Positioning, Failed)
            | (Pushing, Positioning)
            | (Pushing, Replanning)
            | (Pushing, Failed)
            | (Replanning, Tracking)
            | (Replanning, Failed)
    )
}

/// Which side of the path the outward normal prefers when breaking ties
/// between equidistant pushing targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PushSide {
    Left,
    Right,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NavConfig {
    /// Interaction activation distance: pushing triggers when the planar
    /// robot-obstacle distance drops to this value.
    pub d_push: f64,
    /// Radius of the disc around the obstacle from which targets are drawn.
    pub r_push: f64,
    /// Number of target candidates sampled per attempt.
    pub n_samples: usize,
    /// Base-center distance from the obstacle face opposite the target.
    pub standoff: f64,
    /// Base control period in seconds.
    pub dt: f64,
    pub v_max: f64,
    pub omega_max: f64,
    /// Cross-track PID gains.
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    pub heading_gain: f64,
    /// Base-to-goal distance that ends the run.
    pub goal_tol: f64,
    /// Cross-track error that declares tracking lost.
    pub tracking_lost_dist: f64,
    pub preferred_side: PushSide,
    /// A pushing directive completes once the obstacle clears the swept
    /// region by this much, absorbing small lateral drift of the next plan.
    pub clear_slack: f64,
    /// Longest single pushing rollout leg; longer pushes are split so each
    /// leg's goal stays inside the policy's trained goal annulus.
    pub max_push_legs: usize,
    pub max_interactions: usize,
    pub max_replans: usize,
    /// Hard cap on total control ticks, as a runaway guard.
    pub max_steps: usize,
    pub seed: u64,
    pub planner: PlannerConfig,
    /// Template for embedded pushing rollouts; the object, its physics, and
    /// the goal are overridden per push.
    pub push_env: EnvConfig,
}

impl Default for NavConfig {
    fn default() -> Self {
        NavConfig {
            d_push: 1.2,
            r_push: 1.0,
            n_samples: 128,
            standoff: 0.40,
            dt: 0.05,
            v_max: 0.6,
            omega_max: 1.2,
            kp: 1.5,
            ki: 0.0,
            kd: 0.3,
            heading_gain: 2.0,
            goal_tol: 0.15,
            tracking_lost_dist: 1.0,
            preferred_side: PushSide::Left,
            clear_slack: 0.10,
            max_push_legs: 12,
            max_interactions: 8,
            max_replans: 10,
            max_steps: 100_000,
            seed: 0,
            planner: PlannerConfig::default(),
            push_env: EnvConfig::default(),
        }
    }
}

/// A committed pushing decision: which obstacle, where to, and from where.
#[derive(Debug, Clone)]
pub struct PushDirective {
    pub obstacle: usize,
    pub target: Vector2<f64>,
    pub standoff: Pose2,
}

/// True iff the obstacle is inside the interaction region: planar CoM
/// distance at most `d_push` (closed inequality).
pub fn interaction_check(robot: Vector2<f64>, obstacle: Vector2<f64>, d_push: f64) -> bool {
    (robot - obstacle).norm() <= d_push
}

/// Signed clearance between the obstacle footprint and the swept region:
/// positive outside, zero touching, negative means the boundary overlaps by
/// at most that depth.
pub fn swept_clearance(region: &SweptRegion, obstacle: &MovableObject) -> f64 {
    match obstacle.footprint_corners() {
        Some(corners) => region.polygon_clearance(&corners) - region.radius,
        None => {
            let c = Vector2::new(obstacle.pose.position.x, obstacle.pose.position.y);
            region.polyline_distance(c) - obstacle.shape.circumradius() - region.radius
        }
    }
}

/// True iff the obstacle footprint intersects the swept region of the plan.
pub fn obstruction_check(nav_plan: &NavPlan, obstacle: &MovableObject) -> bool {
    swept_clearance(&nav_plan.swept_region, obstacle) <= 0.0
}

/// True iff the object footprint at its current pose covers any occupied cell
/// center of the grid.
fn object_overlaps_grid(obj: &MovableObject, grid: &GridMap) -> bool {
    let center = Vector2::new(obj.pose.position.x, obj.pose.position.y);
    let r = obj.shape.circumradius();
    let res = grid.resolution;
    let col_lo = (((center.x - r) / res).floor()).max(0.0) as usize;
    let col_hi = ((((center.x + r) / res).ceil()).max(0.0) as usize).min(grid.width);
    let row_lo = (((center.y - r) / res).floor()).max(0.0) as usize;
    let row_hi = ((((center.y + r) / res).ceil()).max(0.0) as usize).min(grid.height);
    for row in row_lo..row_hi {
        for col in col_lo..col_hi {
            if !grid.is_occupied(row, col) {
                continue;
            }
            let p = grid.cell_center(row, col) - center;
            let inside = match obj.shape {
                Shape::Box { lx, ly, .. } => {
                    let (s, c) = obj.pose.yaw().sin_cos();
                    let local_x = c * p.x + s * p.y;
                    let local_y = -s * p.x + c * p.y;
                    local_x.abs() <= lx / 2.0 && local_y.abs() <= ly / 2.0
                }
                Shape::Cylinder { diameter, .. } => p.norm() <= diameter / 2.0,
            };
            if inside {
                return true;
            }
        }
    }
    false
}

/// True iff the object footprint lies fully inside the map rectangle.
fn object_inside_map(obj: &MovableObject, grid: &GridMap) -> bool {
    let (w, h) = (grid.width_m(), grid.height_m());
    match obj.footprint_corners() {
        Some(corners) => corners
            .iter()
            .all(|c| c.x >= 0.0 && c.y >= 0.0 && c.x <= w && c.y <= h),
        None => {
            let c = Vector2::new(obj.pose.position.x, obj.pose.position.y);
            let r = obj.shape.circumradius();
            c.x - r >= 0.0 && c.y - r >= 0.0 && c.x + r <= w && c.y + r <= h
        }
    }
}

/// True iff the object teleported to `p` stays inside the map and off the
/// rasterized statics (the swept plan region is not consulted).
fn placement_ok(obstacle: &MovableObject, p: Vector2<f64>, statics: &GridMap) -> bool {
    let mut moved = obstacle.clone();
    moved.pose.position.x = p.x;
    moved.pose.position.y = p.y;
    object_inside_map(&moved, statics) && !object_overlaps_grid(&moved, statics)
}

/// The feasible-target predicate: the object teleported to `p` must clear the
/// swept plan region, overlap no static, and stay inside the map.
pub fn target_feasible(
    obstacle: &MovableObject,
    p: Vector2<f64>,
    nav_plan: &NavPlan,
    statics: &GridMap,
) -> bool {
    let mut moved = obstacle.clone();
    moved.pose.position.x = p.x;
    moved.pose.position.y = p.y;
    object_inside_map(&moved, statics)
        && !obstruction_check(nav_plan, &moved)
        && !object_overlaps_grid(&moved, statics)
}

/// Samples `n_samples` candidate target positions uniformly on the disc of
/// radius `r_push` around the obstacle and keeps the feasible ones.
pub fn sample_targets(
    obstacle: &MovableObject,
    nav_plan: &NavPlan,
    statics: &GridMap,
    r_push: f64,
    n_samples: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Vector2<f64>>, NavError> {
    let center = Vector2::new(obstacle.pose.position.x, obstacle.pose.position.y);
    let mut kept = Vec::new();
    for _ in 0..n_samples {
        let r = r_push * rng.gen_range(0.0f64..=1.0).sqrt();
        let th = rng.gen_range(-std::f64::consts::PI..=std::f64::consts::PI);
        let p = center + Vector2::new(r * th.cos(), r * th.sin());
        if target_feasible(obstacle, p, nav_plan, statics) {
            kept.push(p);
        }
    }
    if kept.is_empty() {
        return Err(NavError::NoFeasibleTarget);
    }
    Ok(kept)
}

/// Picks the least-effort target: minimal push distance, ties broken by the
/// smaller angle to the outward path normal, then lexicographically.
pub fn select_target(
    candidates: &[Vector2<f64>],
    p_obj: Vector2<f64>,
    outward_normal: Vector2<f64>,
) -> Vector2<f64> {
    assert!(!candidates.is_empty(), "select_target requires candidates");
    let key = |p: &Vector2<f64>| {
        let d = p - p_obj;
        let dist = d.norm();
        let angle = if dist > 1e-12 {
            let cos = (d.dot(&outward_normal) / dist).clamp(-1.0, 1.0);
            cos.acos()
        } else {
            0.0
        };
        (dist, angle, p.x, p.y)
    };
    let best = *candidates
        .iter()
        .min_by(|a, b| key(a).partial_cmp(&key(b)).expect("finite keys"))
        .expect("nonempty");
    for p in candidates {
        debug_assert!(
            (best - p_obj).norm() <= (p - p_obj).norm() + 1e-12,
            "selected target is not the distance argmin"
        );
    }
    best
}

/// Standoff base pose: `standoff` meters behind the obstacle face opposite
/// the target, facing the push direction.
pub fn standoff_pose(obstacle: &MovableObject, target: Vector2<f64>, standoff: f64) -> Pose2 {
    let p_obj = Vector2::new(obstacle.pose.position.x, obstacle.pose.position.y);
    let d = target - p_obj;
    let d_hat = d / d.norm();
    let half = obstacle.support_half_extent(d_hat);
    let base = p_obj - (half + standoff) * d_hat;
    Pose2::new(base.x, base.y, d_hat.y.atan2(d_hat.x))
}

/// Path-tracking state carried between PID steps.
#[derive(Debug, Clone)]
pub struct TrackState {
    pub path_index: usize,
    pub e_prev: f64,
    pub e_int: f64,
}

impl TrackState {
    pub fn new() -> Self {
        TrackState { path_index: 0, e_prev: 0.0, e_int: 0.0 }
    }
}

impl Default for TrackState {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrackStatus {
    Tracking,
    GoalReached,
    Lost,
}

/// Projects onto the path polyline from the current index forward; returns
/// (segment index, closest point, tangent, signed cross-track error).
fn project_onto_path(
    path: &[Vector2<f64>],
    from: usize,
    p: Vector2<f64>,
) -> (usize, Vector2<f64>, Vector2<f64>, f64) {
    let mut best = (from, path[from], Vector2::new(1.0, 0.0), f64::MAX);
    for j in from..path.len().saturating_sub(1) {
        let a = path[j];
        let b = path[j + 1];
        let ab = b - a;
        let len2 = ab.norm_squared();
        if len2 < 1e-18 {
            continue;
        }
        let t = ((p - a).dot(&ab) / len2).clamp(0.0, 1.0);
        let c = a + t * ab;
        let d = (p - c).norm();
        if d < best.3 {
            best = (j, c, ab / len2.sqrt(), d);
        }
    }
    let (j, c, tangent, _) = best;
    // Signed error: positive when the robot is left of the path.
    let rel = p - c;
    let e = tangent.x * rel.y - tangent.y * rel.x;
    (j, c, tangent, e)
}

/// One PID tracking step on the unicycle model. Returns the new robot state,
/// the commanded (v, omega), and the tracking status.
pub fn pid_track_step(
    robot: &RobotState,
    path: &[Vector2<f64>],
    goal: Vector2<f64>,
    track: &mut TrackState,
    cfg: &NavConfig,
) -> (RobotState, f64, f64, TrackStatus) {
    let p = robot.base.position();
    if (p - goal).norm() < cfg.goal_tol {
        return (RobotState { base: robot.base, linear_speed: 0.0 }, 0.0, 0.0, TrackStatus::GoalReached);
    }
    let (idx, _, tangent, e) = project_onto_path(path, track.path_index, p);
    track.path_index = idx;
    if e.abs() > cfg.tracking_lost_dist {
        return (RobotState { base: robot.base, linear_speed: 0.0 }, 0.0, 0.0, TrackStatus::Lost);
    }
    let psi = normalize_angle(tangent.y.atan2(tangent.x) - robot.base.yaw);
    let e_dot = (e - track.e_prev) / cfg.dt;
    track.e_int += e * cfg.dt;
    track.e_prev = e;
    let omega = (cfg.heading_gain * psi - (cfg.kp * e + cfg.ki * track.e_int + cfg.kd * e_dot))
        .clamp(-cfg.omega_max, cfg.omega_max);
    let v = cfg.v_max * psi.cos().clamp(0.0, 1.0);
    let base = Pose2::new(
        robot.base.x + v * robot.base.yaw.cos() * cfg.dt,
        robot.base.y + v * robot.base.yaw.sin() * cfg.dt,
        normalize_angle(robot.base.yaw + omega * cfg.dt),
    );
    (RobotState { base, linear_speed: v }, v, omega, TrackStatus::Tracking)
}

/// Shoulder pivot of the arm: reach is limited to a ball around this point.
const SHOULDER_Z: f64 = 0.15;
/// Conservative reach-ball radius (kinematic maximum is 0.75).
const REACH: f64 = 0.73;

fn reach_ok(xy: Vector2<f64>, z: f64) -> bool {
    (xy.norm_squared() + (z - SHOULDER_Z) * (z - SHOULDER_Z)).sqrt() <= REACH
}

/// Pulls a target into the reach ball along the ray from the shoulder, so IK
/// always chases an attainable point.
fn project_reach(p: Vector3<f64>) -> Vector3<f64> {
    let shoulder = Vector3::new(0.0, 0.0, SHOULDER_Z);
    let rel = p - shoulder;
    let n = rel.norm();
    if n <= REACH {
        p
    } else {
        shoulder + rel * (REACH / n)
    }
}

fn rot2(v: Vector2<f64>, angle: f64) -> Vector2<f64> {
    let (s, c) = angle.sin_cos();
    Vector2::new(c * v.x - s * v.y, s * v.x + c * v.y)
}

fn seg_seg_dist(a0: Vector2<f64>, a1: Vector2<f64>, b0: Vector2<f64>, b1: Vector2<f64>) -> f64 {
    fn point_seg(p: Vector2<f64>, a: Vector2<f64>, b: Vector2<f64>) -> f64 {
        let ab = b - a;
        let l2 = ab.norm_squared();
        if l2 < 1e-18 {
            return (p - a).norm();
        }
        let t = ((p - a).dot(&ab) / l2).clamp(0.0, 1.0);
        (p - (a + t * ab)).norm()
    }
    fn orient(a: Vector2<f64>, b: Vector2<f64>, c: Vector2<f64>) -> f64 {
        (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x)
    }
    let d1 = orient(a0, a1, b0);
    let d2 = orient(a0, a1, b1);
    let d3 = orient(b0, b1, a0);
    let d4 = orient(b0, b1, a1);
    if d1 * d2 < 0.0 && d3 * d4 < 0.0 {
        return 0.0;
    }
    point_seg(b0, a0, a1)
        .min(point_seg(b1, a0, a1))
        .min(point_seg(a0, b0, b1))
        .min(point_seg(a1, b0, b1))
}

/// Horizontal clearance between a segment and the object's footprint.
fn seg_object_clearance(a: Vector2<f64>, b: Vector2<f64>, obj: &MovableObject) -> f64 {
    let c = Vector2::new(obj.pose.position.x, obj.pose.position.y);
    match obj.footprint_corners() {
        Some(corners) => {
            // Inside-polygon test for either endpoint via crossing count.
            let inside = |p: Vector2<f64>| {
                let mut winding = 0;
                for i in 0..4 {
                    let u = corners[i];
                    let v = corners[(i + 1) % 4];
                    if (u.y <= p.y) != (v.y <= p.y) {
                        let x = u.x + (p.y - u.y) / (v.y - u.y) * (v.x - u.x);
                        if x > p.x {
                            winding += 1;
                        }
                    }
                }
                winding % 2 == 1
            };
            if inside(a) || inside(b) {
                return 0.0;
            }
            let mut d = f64::MAX;
            for i in 0..4 {
                d = d.min(seg_seg_dist(a, b, corners[i], corners[(i + 1) % 4]));
            }
            d
        }
        None => {
            let r = obj.shape.circumradius();
            (seg_seg_dist(a, b, c, c) - r).max(0.0)
        }
    }
}

/// Privileged oracle pusher: a reach-aware scripted policy that swings the
/// end-effector around the object near the base, drops on a clear column,
/// slides in behind the object at a tip-safe height, and then chases a
/// pressing point on the object-to-goal line. Used for integration tests and
/// as a policy stand-in.
pub struct ScriptedPusher {
    phase: Phase,
    last_ee: Option<Vector3<f64>>,
    stall: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Rise,
    Swing,
    Drop,
    Slide,
    Push,
}

/// Everything `act` derives from the privileged state each step.
struct PushGeometry {
    d_hat: Vector2<f64>,
    press: Vector3<f64>,
    behind: Vector3<f64>,
    /// Entry point of the low slide, comfortably behind the object.
    entry: Vector3<f64>,
    /// Top of the drop column.
    column: Vector2<f64>,
    z_push: f64,
    z_arc: f64,
}

impl ScriptedPusher {
    pub fn new() -> Self {
        ScriptedPusher {
            phase: Phase::Rise,
            last_ee: None,
            stall: 0,
        }
    }

    /// Computes the step's waypoints from the privileged state: a push
    /// direction whose pressing point is inside the reach ball (bending
    /// toward the radial direction when the direct one is not), a tip-safe
    /// contact height, and a collision-free drop column and slide entry.
    fn geometry(env: &PushEnv) -> PushGeometry {
        let s = env.state();
        let obj = &s.obj;
        let obj_xy = Vector2::new(obj.pose.position.x, obj.pose.position.y);
        let ee_r = env.config.arm.ee_radius;

        let min_half = match obj.shape {
            Shape::Box { lx, ly, .. } => lx.min(ly) / 2.0,
            Shape::Cylinder { diameter, .. } => diameter / 2.0,
        };
        let mu = env.push_params().mu_ground;
        let z_push = (0.85 * min_half / mu.max(1e-6))
            .min(obj.pose.position.z)
            .max(0.06);
        let obj_top = obj.pose.position.z + obj.shape.height() / 2.0;
        let z_arc = (obj_top + ee_r + 0.07).clamp(0.40, 0.72);

        let d_goal = Vector2::new(s.goal.x - obj.pose.position.x, s.goal.y - obj.pose.position.y);
        let d_des = if d_goal.norm() > 1e-9 { d_goal / d_goal.norm() } else { Vector2::new(1.0, 0.0) };

        // Bend the push direction toward radial until the rear points fit in
        // the reach ball. The radial (outward) direction always fits, because
        // its pressing point lies between the base and the object.
        let feasible = |d: Vector2<f64>| {
            let half = obj.support_half_extent(d);
            let press = obj_xy - (half + ee_r - 0.015) * d;
            let entry = obj_xy - (half + ee_r + 0.13) * d;
            reach_ok(press, z_push) && reach_ok(entry, z_push)
        };
        let mut d_hat = d_des;
        if !feasible(d_des) {
            let r_hat = if obj_xy.norm() > 1e-9 { obj_xy / obj_xy.norm() } else { Vector2::new(1.0, 0.0) };
            // Rotation sign that moves d_des toward the outward radial.
            let cross = d_des.x * r_hat.y - d_des.y * r_hat.x;
            let sign = if cross >= 0.0 { 1.0 } else { -1.0 };
            let mut found = false;
            for k in 1..=26 {
                let cand = rot2(d_des, sign * k as f64 * (std::f64::consts::PI / 36.0));
                if feasible(cand) {
                    d_hat = cand;
                    found = true;
                    break;
                }
            }
            if !found {
                d_hat = r_hat;
            }
        }

        let half = obj.support_half_extent(d_hat);
        let press_xy = obj_xy - (half + ee_r - 0.015) * d_hat;
        let entry_xy = obj_xy - (half + ee_r + 0.13) * d_hat;
        let behind_xy = obj_xy - (half + ee_r + 0.03) * d_hat;

        // Drop column: a point on the staging ring whose vertical descent and
        // low slide toward the entry point both clear the object footprint.
        let margin = ee_r + 0.03;
        let beta_entry = entry_xy.y.atan2(entry_xy.x);
        let mut column = Vector2::new(0.28 * beta_entry.cos(), 0.28 * beta_entry.sin());
        'search: for k in 0..=24 {
            for sign in [1.0, -1.0] {
                if k == 0 && sign < 0.0 {
                    continue;
                }
                let beta = beta_entry + sign * k as f64 * (std::f64::consts::PI / 36.0);
                let c = Vector2::new(0.28 * beta.cos(), 0.28 * beta.sin());
                if seg_object_clearance(c, c, obj) >= margin
                    && seg_object_clearance(c, entry_xy, obj) >= margin
                {
                    column = c;
                    break 'search;
                }
            }
        }

        PushGeometry {
            d_hat,
            press: Vector3::new(press_xy.x, press_xy.y, z_push),
            behind: Vector3::new(behind_xy.x, behind_xy.y, z_push),
            entry: Vector3::new(entry_xy.x, entry_xy.y, z_push),
            column,
            z_push,
            z_arc,
        }
    }

    /// One damped-least-squares IK step toward a Cartesian target, with the
    /// Jacobian taken by finite differences over the forward kinematics.
    fn ik_step(env: &PushEnv, target: Vector3<f64>, max_step: f64) -> [f64; 6] {
        let arm = &env.config.arm;
        let q = env.state().q;
        let (pose, _) = forward_kinematics(arm, &q);
        let mut dp = target - pose.position;
        let n = dp.norm();
        if n > max_step {
            dp *= max_step / n;
        }
        let h = 1e-5;
        let mut jac = SMatrix::<f64, 3, 6>::zeros();
        for k in 0..6 {
            let mut qp = q;
            qp[k] += h;
            let (pp, _) = forward_kinematics(arm, &qp);
            jac.set_column(k, &((pp.position - pose.position) / h));
        }
        let jjt = jac * jac.transpose() + Matrix3::identity() * 1e-3;
        let inv = jjt.try_inverse().unwrap_or_else(Matrix3::identity);
        let dq = jac.transpose() * (inv * dp);
        let mut out = [0.0; 6];
        for k in 0..6 {
            out[k] = dq[k];
        }
        out
    }
}

impl Default for ScriptedPusher {
    fn default() -> Self {
        Self::new()
    }
}

impl PushPolicy for ScriptedPusher {
    fn begin_episode(&mut self, _env: &PushEnv, _first_obs: &Observation) {
        self.phase = Phase::Rise;
        self.last_ee = None;
        self.stall = 0;
    }

    fn act(&mut self, env: &PushEnv, _obs: &Observation) -> [f64; 6] {
        let g = Self::geometry(env);
        let ee = env.ee_pose().position;
        let ee_xy = Vector2::new(ee.x, ee.y);

        match self.phase {
            Phase::Rise => {
                if (ee.z - g.z_arc).abs() < 0.05 {
                    self.phase = Phase::Swing;
                }
            }
            Phase::Swing => {
                if (ee_xy - g.column).norm() < 0.05 && (ee.z - g.z_arc).abs() < 0.06 {
                    self.phase = Phase::Drop;
                }
            }
            Phase::Drop => {
                if (ee.z - g.z_push).abs() < 0.04 && (ee_xy - g.column).norm() < 0.08 {
                    self.phase = Phase::Slide;
                }
            }
            Phase::Slide => {
                if (ee - g.behind).norm() < 0.035 {
                    self.phase = Phase::Push;
                }
            }
            Phase::Push => {
                let off = (ee - g.press).norm();
                let moved = self
                    .last_ee
                    .map(|p| (ee - p).norm() > 2e-3)
                    .unwrap_or(true);
                self.stall = if moved { 0 } else { self.stall + 1 };
                // Slipped off the face, or plowing against the reach limit:
                // back out and re-approach with fresh geometry.
                if off > 0.30 || self.stall >= 3 {
                    self.phase = Phase::Rise;
                    self.stall = 0;
                }
            }
        }
        self.last_ee = Some(ee);
        let target = match self.phase {
            Phase::Rise => Vector3::new(ee.x, ee.y, g.z_arc),
            Phase::Swing => Vector3::new(g.column.x, g.column.y, g.z_arc),
            Phase::Drop => Vector3::new(g.column.x, g.column.y, g.z_push),
            Phase::Slide => {
                if (ee_xy - Vector2::new(g.entry.x, g.entry.y)).norm() > 0.05 {
                    g.entry
                } else {
                    g.behind
                }
            }
            // March from the current pose: the object only moves while the
            // pusher does, so a fixed target would stall once the servo
            // converges. Advance along the push direction and servo the
            // perpendicular error back onto the pressing line.
            Phase::Push => {
                let along = Vector3::new(g.d_hat.x, g.d_hat.y, 0.0);
                let to_press = g.press - ee;
                let lateral = to_press - to_press.dot(&along) * along;
                ee + 0.05 * along + 0.6 * lateral
            }
        };
        let target = project_reach(target);
        let dq = Self::ik_step(env, target, 0.10);
        let s = env.state();
        // Scale the whole joint step uniformly into the action box; per-joint
        // clamping would bend the Cartesian direction.
        let eff = s.effectiveness.max(1e-6);
        let mut amax = 1.0f64;
        for k in 0..5 {
            let scale = env.config.action_scale[k] * eff;
            if scale > 1e-9 {
                amax = amax.max(dq[k].abs() / scale);
            }
        }
        let mut a = [0.0; 6];
        for k in 0..5 {
            let scale = env.config.action_scale[k] * eff;
            if scale > 1e-9 {
                a[k] = dq[k] / scale / amax;
            }
        }
        a
    }
}

/// One logged control tick.
#[derive(Debug, Clone, Copy)]
pub struct NavStep {
    pub t: f64,
    pub mode: Mode,
    pub base: Pose2,
    pub v: f64,
    pub omega: f64,
}

/// One pushing rollout leg.
#[derive(Debug, Clone)]
pub struct PushEvent {
    pub obstacle: usize,
    pub target: Vector2<f64>,
    pub leg_goal: Vector2<f64>,
    pub standoff: Pose2,
    pub steps: usize,
    pub cause: Cause,
    pub obj_from: Vector2<f64>,
    pub obj_to: Vector2<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    Failed,
}

#[derive(Debug, Clone)]
pub struct NavReport {
    pub outcome: Outcome,
    pub reason: String,
    pub traversal_time_s: f64,
    pub path_length_m: f64,
    /// Base-motion ticks (tracking and positioning), each lasting `dt`.
    pub base_steps: usize,
    /// Pushing control ticks at the pushing environment's control rate.
    pub push_steps: usize,
    pub push_rate_hz: f64,
    pub dt: f64,
    pub trajectory: Vec<NavStep>,
    pub pushes: Vec<PushEvent>,
    pub transitions: Vec<(Mode, Mode)>,
    pub replans: usize,
    pub interactions: usize,
    pub fallback_used: bool,
    pub final_movables: Vec<MovableObject>,
}

impl NavReport {
    /// Plain-text rendering: summary block plus per-push lines.
    pub fn render_text(&self) -> String {
        use std::fmt::Write;
        let mut out = String::new();
        let outcome = match self.outcome {
            Outcome::Success => "success",
            Outcome::Failed => "failed",
        };
        writeln!(out, "outcome: {outcome}").unwrap();
        if !self.reason.is_empty() {
            writeln!(out, "reason: {}", self.reason).unwrap();
        }
        writeln!(out, "traversal_time_s: {:.3}", self.traversal_time_s).unwrap();
        writeln!(out, "path_length_m: {:.3}", self.path_length_m).unwrap();
        writeln!(
            out,
            "base_steps: {} ({} Hz), push_steps: {} ({} Hz)",
            self.base_steps,
            1.0 / self.dt,
            self.push_steps,
            self.push_rate_hz
        )
        .unwrap();
        writeln!(
            out,
            "replans: {}, interactions: {}, fallback: {}",
            self.replans, self.interactions, self.fallback_used
        )
        .unwrap();
        for (i, p) in self.pushes.iter().enumerate() {
            writeln!(
                out,
                "push[{i}] obstacle {} leg ({:.2},{:.2})->({:.2},{:.2}) steps {} cause {}",
                p.obstacle,
                p.obj_from.x,
                p.obj_from.y,
                p.obj_to.x,
                p.obj_to.y,
                p.steps,
                p.cause.as_str()
            )
            .unwrap();
        }
        for w in self.transitions.iter() {
            writeln!(out, "transition: {} -> {}", w.0.as_str(), w.1.as_str()).unwrap();
        }
        out
    }

    /// Sum of consecutive base displacements over the logged trajectory.
    pub fn recomputed_path_length(&self) -> f64 {
        self.trajectory
            .windows(2)
            .map(|w| (w[1].base.position() - w[0].base.position()).norm())
            .sum()
    }
}

enum DirectiveOutcome {
    Completed,
    LegFailed,
    StandoffBlocked,
}

struct NavRunner<'a> {
    scenario: &'a Scenario,
    cfg: &'a NavConfig,
    statics_grid: GridMap,
    movables: Vec<MovableObject>,
    robot: RobotState,
    clock: f64,
    base_steps: usize,
    push_steps: usize,
    trajectory: Vec<NavStep>,
    pushes: Vec<PushEvent>,
    transitions: Vec<(Mode, Mode)>,
    mode: Mode,
    replans: usize,
    interactions: usize,
    fallback: bool,
    rng: ChaCha8Rng,
    nav_plan: Option<NavPlan>,
    track: TrackState,
    path_length: f64,
    reason: String,
}

impl<'a> NavRunner<'a> {
    fn new(scenario: &'a Scenario, cfg: &'a NavConfig) -> Self {
        NavRunner {
            scenario,
            cfg,
            statics_grid: rasterize(scenario),
            movables: scenario.movables.clone(),
            robot: RobotState { base: scenario.start, linear_speed: 0.0 },
            clock: 0.0,
            base_steps: 0,
            push_steps: 0,
            trajectory: Vec::new(),
            pushes: Vec::new(),
            transitions: Vec::new(),
            mode: Mode::Planning,
            replans: 0,
            interactions: 0,
            fallback: false,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed ^ scenario.seed),
            nav_plan: None,
            track: TrackState::new(),
            path_length: 0.0,
            reason: String::new(),
        }
    }

    fn set_mode(&mut self, to: Mode) {
        debug_assert!(
            transition_allowed(self.mode, to),
            "illegal mode transition {} -> {}",
            self.mode.as_str(),
            to.as_str()
        );
        self.transitions.push((self.mode, to));
        self.mode = to;
    }

    fn fail(&mut self, reason: impl Into<String>) {
        self.reason = reason.into();
        self.set_mode(Mode::Failed);
    }

    fn log_step(&mut self, v: f64, omega: f64) {
        self.trajectory.push(NavStep {
            t: self.clock,
            mode: self.mode,
            base: self.robot.base,
            v,
            omega,
        });
    }

    /// Advances the base one control tick and accounts time and distance.
    fn advance_base(&mut self, next: RobotState, v: f64, omega: f64) {
        let moved = (next.base.position() - self.robot.base.position()).norm();
        self.path_length += moved;
        self.robot = next;
        self.clock += self.cfg.dt;
        self.base_steps += 1;
        self.log_step(v, omega);
    }

    fn over_step_budget(&self) -> bool {
        self.base_steps + self.push_steps > self.cfg.max_steps
    }

    /// Plans from the current base pose. After the avoidance fallback the
    /// movables are rasterized as static walls.
    fn do_plan(&mut self, initial: bool) {
        if !initial {
            self.replans += 1;
            if self.replans > self.cfg.max_replans {
                self.fail("replanning budget exhausted");
                return;
            }
        }
        let grid = if self.fallback {
            rasterize_with_movables(self.scenario, &self.movables)
        } else {
            self.statics_grid.clone()
        };
        match plan(&grid, self.robot.base, self.scenario.goal, &self.cfg.planner) {
            Ok(p) => {
                self.nav_plan = Some(p);
                self.track = TrackState::new();
                self.set_mode(Mode::Tracking);
            }
            Err(e) => self.fail(format!("planning failed: {e}")),
        }
    }

    /// First movable obstructing the remaining route — the swept region of
    /// the plan from the tracker's progress point forward, so objects beside
    /// or behind the robot (for instance ones it just pushed aside) do not
    /// retrigger — nearest to the robot.
    fn first_obstructing(&self) -> Option<usize> {
        let nav_plan = self.nav_plan.as_ref()?;
        let pts = &nav_plan.smooth.points;
        let start = self.track.path_index.min(pts.len().saturating_sub(1));
        let remaining = SweptRegion {
            polyline: pts[start..].to_vec(),
            radius: nav_plan.swept_region.radius,
        };
        let p = self.robot.base.position();
        self.movables
            .iter()
            .enumerate()
            .filter(|(_, m)| swept_clearance(&remaining, m) <= 0.0)
            .min_by(|(_, a), (_, b)| {
                let da = (Vector2::new(a.pose.position.x, a.pose.position.y) - p).norm();
                let db = (Vector2::new(b.pose.position.x, b.pose.position.y) - p).norm();
                da.partial_cmp(&db).expect("finite distances")
            })
            .map(|(i, _)| i)
    }

    /// Outward path normal near the obstacle, on the configured side.
    fn outward_normal_near(&self, p_obj: Vector2<f64>) -> Vector2<f64> {
        let path = &self.nav_plan.as_ref().expect("plan present").smooth.points;
        let (_, _, tangent, _) = project_onto_path(path, 0, p_obj);
        let left = Vector2::new(-tangent.y, tangent.x);
        match self.cfg.preferred_side {
            PushSide::Left => left,
            PushSide::Right => -left,
        }
    }

    fn standoff_valid(&self, pose: Pose2) -> bool {
        !crate::world::footprint_collides(&self.statics_grid, pose)
    }

    /// Straight-line drive to the standoff pose, one tick per `dt`.
    fn drive_to(&mut self, target: Pose2) {
        let max_ticks = ((self.robot.base.position() - target.position()).norm()
            / (self.cfg.v_max * self.cfg.dt))
            .ceil() as usize
            + 4;
        for _ in 0..max_ticks {
            let p = self.robot.base.position();
            let to = target.position() - p;
            let dist = to.norm();
            let step = self.cfg.v_max * self.cfg.dt;
            if dist <= step {
                let next = RobotState { base: target, linear_speed: dist / self.cfg.dt };
                self.advance_base(next, dist / self.cfg.dt, 0.0);
                return;
            }
            let dir = to / dist;
            let remaining_ticks = (dist / step).ceil().max(1.0);
            let dyaw = normalize_angle(target.yaw - self.robot.base.yaw) / remaining_ticks;
            let next = RobotState {
                base: Pose2::new(
                    p.x + dir.x * step,
                    p.y + dir.y * step,
                    normalize_angle(self.robot.base.yaw + dyaw),
                ),
                linear_speed: self.cfg.v_max,
            };
            self.advance_base(next, self.cfg.v_max, dyaw / self.cfg.dt);
        }
    }

    /// Rotates in place to the target heading at the yaw-rate limit.
    fn rotate_to(&mut self, target_yaw: f64) {
        let max_step = self.cfg.omega_max * self.cfg.dt;
        loop {
            let d = normalize_angle(target_yaw - self.robot.base.yaw);
            if d == 0.0 {
                return;
            }
            let step = d.clamp(-max_step, max_step);
            let p = self.robot.base;
            let next = RobotState {
                base: Pose2::new(p.x, p.y, normalize_angle(p.yaw + step)),
                linear_speed: 0.0,
            };
            self.advance_base(next, 0.0, step / self.cfg.dt);
            if step == d {
                return;
            }
        }
    }

    /// Walks the base straight backward along `dir` (without turning) until
    /// the robot-obstacle distance exceeds `want`, stopping early at statics.
    fn back_away(&mut self, dir: Vector2<f64>, obstacle: usize, want: f64) {
        let step = self.cfg.v_max * self.cfg.dt;
        let max_ticks = (2.5 / step).ceil() as usize;
        for _ in 0..max_ticks {
            let m = &self.movables[obstacle];
            let p_obj = Vector2::new(m.pose.position.x, m.pose.position.y);
            let p = self.robot.base;
            if (p.position() - p_obj).norm() >= want {
                return;
            }
            let cand = Pose2::new(p.x + dir.x * step, p.y + dir.y * step, p.yaw);
            if crate::world::footprint_collides(&self.statics_grid, cand)
                || !self.statics_grid.in_bounds(cand.x, cand.y)
            {
                return;
            }
            let next = RobotState { base: cand, linear_speed: self.cfg.v_max };
            self.advance_base(next, self.cfg.v_max, 0.0);
        }
    }

    /// Runs one pushing rollout toward `leg_goal` (world frame) with the base
    /// frozen at its current standoff pose. Returns the terminal cause.
    fn run_push_rollout(
        &mut self,
        pusher: &mut dyn PushPolicy,
        obstacle: usize,
        target: Vector2<f64>,
        leg_goal: Vector2<f64>,
    ) -> Result<(Cause, usize), NavError> {
        let base = self.robot.base;
        let m = &self.movables[obstacle];
        let mut ec = self.cfg.push_env.clone();
        ec.fixed_object = Some(FixedObject {
            shape: m.shape,
            mass_kg: m.mass,
            mu_ground: m.friction_ground,
        });
        ec.randomization = RandomizationRanges {
            mass_kg: [m.mass, m.mass],
            mu_ground: [m.friction_ground, m.friction_ground],
            arm_added_mass_kg: [0.0, 0.0],
        };
        let mut env = PushEnv::new(ec)?;
        let seed = self.rng.gen::<u64>();
        env.reset(3, seed);

        // World -> standoff frame A.
        let (s, c) = base.yaw.sin_cos();
        let to_a = |p: Vector2<f64>| {
            let r = p - base.position();
            Vector2::new(c * r.x + s * r.y, -s * r.x + c * r.y)
        };
        let obj_xy = to_a(Vector2::new(m.pose.position.x, m.pose.position.y));
        let obj_pose_a = Pose6::new(
            Vector3::new(obj_xy.x, obj_xy.y, m.pose.position.z),
            Vector3::new(normalize_angle(m.pose.yaw() - base.yaw), 0.0, 0.0),
        );
        let obj_from = Vector2::new(m.pose.position.x, m.pose.position.y);
        let goal_a = to_a(leg_goal);
        let mut obs = env.place_object_and_goal(obj_pose_a, goal_a);
        pusher.begin_episode(&env, &obs);

        let mut cause = Cause::Timeout;
        let mut steps = 0usize;
        let push_dt = env.config.dt();
        for _ in 0..env.config.horizon {
            let a = pusher.act(&env, &obs);
            let r = env.step(a);
            obs = r.observation;
            steps += 1;
            self.clock += push_dt;
            self.push_steps += 1;
            self.log_step(0.0, 0.0);
            if r.done {
                cause = r.cause;
                break;
            }
        }

        // Frame A -> world for the final object pose.
        let fin = &env.state().obj;
        let from_a = |p: Vector2<f64>| {
            base.position() + Vector2::new(c * p.x - s * p.y, s * p.x + c * p.y)
        };
        let xy = from_a(Vector2::new(fin.pose.position.x, fin.pose.position.y));
        let world_yaw = normalize_angle(fin.pose.yaw() + base.yaw);
        let obj = &mut self.movables[obstacle];
        obj.pose.position = Vector3::new(xy.x, xy.y, fin.pose.position.z);
        obj.pose.orientation = Vector3::new(world_yaw, 0.0, 0.0);
        obj.tilt = fin.tilt;
        self.pushes.push(PushEvent {
            obstacle,
            target,
            leg_goal,
            standoff: base,
            steps,
            cause,
            obj_from,
            obj_to: xy,
        });
        Ok((cause, steps))
    }

    /// Executes one pushing directive as a sequence of repositioned legs
    /// along the fixed direction toward the sampled target. The directive
    /// completes when the obstacle genuinely clears the swept region (with
    /// slack), which may require pushing past the target itself; each leg's
    /// rollout goal stays inside the trained goal annulus.
    fn execute_directive(
        &mut self,
        pusher: &mut dyn PushPolicy,
        obstacle: usize,
        target: Vector2<f64>,
    ) -> Result<DirectiveOutcome, NavError> {
        let start_obj = {
            let m = &self.movables[obstacle];
            Vector2::new(m.pose.position.x, m.pose.position.y)
        };
        let aim = target - start_obj;
        if aim.norm() < 1e-9 {
            return Ok(DirectiveOutcome::LegFailed);
        }
        let d_hat = aim / aim.norm();
        for _ in 0..self.cfg.max_push_legs {
            let (p_obj, clear) = {
                let m = &self.movables[obstacle];
                let region = &self.nav_plan.as_ref().expect("plan present").swept_region;
                (
                    Vector2::new(m.pose.position.x, m.pose.position.y),
                    swept_clearance(region, m),
                )
            };
            if clear > self.cfg.clear_slack {
                return Ok(DirectiveOutcome::Completed);
            }
            if (p_obj - start_obj).norm() > self.cfg.r_push + 0.6 {
                return Ok(DirectiveOutcome::LegFailed);
            }
            let pose = standoff_pose(&self.movables[obstacle], p_obj + d_hat, self.cfg.standoff);
            let half_extent = self.movables[obstacle].support_half_extent(d_hat);
            if !self.standoff_valid(pose) {
                return Ok(DirectiveOutcome::StandoffBlocked);
            }

            // Leg length cap: keep the rollout goal's norm in frame A below
            // the trained annulus ceiling; clip legs that would shove the
            // object into a static or off the map.
            let obj_a_norm = self.cfg.standoff + half_extent;
            let leg_cap = (self.cfg.push_env.r3_goal_max - 0.02 - obj_a_norm).max(0.15);
            let mut leg_len = leg_cap;
            while leg_len > 0.05
                && !placement_ok(&self.movables[obstacle], p_obj + d_hat * leg_len, &self.statics_grid)
            {
                leg_len *= 0.7;
            }
            if leg_len <= 0.05 {
                return Ok(DirectiveOutcome::LegFailed);
            }
            self.set_mode(Mode::Positioning);
            self.drive_to(pose);
            self.set_mode(Mode::Pushing);
            let leg_goal = p_obj + d_hat * leg_len;
            let (cause, _) = self.run_push_rollout(pusher, obstacle, target, leg_goal)?;
            match cause {
                Cause::Success => continue,
                _ => return Ok(DirectiveOutcome::LegFailed),
            }
        }
        Ok(DirectiveOutcome::LegFailed)
    }

    /// Full interaction: sample targets, select, push with one retry, then
    /// fall back to avoidance replanning.
    fn handle_interaction(
        &mut self,
        pusher: &mut dyn PushPolicy,
        obstacle: usize,
    ) -> Result<(), NavError> {
        self.interactions += 1;
        if self.interactions > self.cfg.max_interactions {
            self.fail("interaction budget exhausted");
            return Ok(());
        }
        for _attempt in 0..2 {
            let candidates = {
                let nav_plan = self.nav_plan.as_ref().expect("plan present");
                sample_targets(
                    &self.movables[obstacle],
                    nav_plan,
                    &self.statics_grid,
                    self.cfg.r_push,
                    self.cfg.n_samples,
                    &mut self.rng,
                )
            };
            let candidates = match candidates {
                Ok(c) => c,
                Err(NavError::NoFeasibleTarget) => break,
                Err(e) => return Err(e),
            };
            let m = &self.movables[obstacle];
            let p_obj = Vector2::new(m.pose.position.x, m.pose.position.y);
            let normal = self.outward_normal_near(p_obj);
            let target = select_target(&candidates, p_obj, normal);
            debug_assert!(
                {
                    let nav_plan = self.nav_plan.as_ref().expect("plan present");
                    target_feasible(&self.movables[obstacle], target, nav_plan, &self.statics_grid)
                },
                "selected target must satisfy the feasibility predicate"
            );
            match self.execute_directive(pusher, obstacle, target)? {
                DirectiveOutcome::Completed => {
                    // The robot stands at the final standoff, closer to the
                    // object than the swept radius the next plan will carry.
                    // Retreat until the plan's start disc cannot capture the
                    // object again, then face the goal so the fresh plan
                    // leaves straight instead of swinging toward it.
                    let m = &self.movables[obstacle];
                    let p_obj = Vector2::new(m.pose.position.x, m.pose.position.y);
                    let away = self.robot.base.position() - p_obj;
                    let want = self.cfg.planner.inflation_radius()
                        + m.shape.circumradius()
                        + self.cfg.clear_slack;
                    if away.norm() > 1e-9 {
                        let dir = away / away.norm();
                        self.back_away(dir, obstacle, want);
                    }
                    let to_goal = self.scenario.goal.position() - self.robot.base.position();
                    if to_goal.norm() > 1e-9 {
                        self.rotate_to(to_goal.y.atan2(to_goal.x));
                    }
                    self.set_mode(Mode::Replanning);
                    return Ok(());
                }
                DirectiveOutcome::LegFailed | DirectiveOutcome::StandoffBlocked => continue,
            }
        }
        // Both attempts failed (or no feasible target): avoid instead. Back
        // out of the interaction region first — the forward-only planner
        // needs arc room to turn around the now-rasterized obstacle.
        let heading = Vector2::new(self.robot.base.yaw.cos(), self.robot.base.yaw.sin());
        self.back_away(
            -heading,
            obstacle,
            self.cfg.d_push + crate::world::FOOTPRINT_LENGTH,
        );
        self.fallback = true;
        self.set_mode(Mode::Replanning);
        Ok(())
    }

    fn tick_tracking(&mut self, pusher: &mut dyn PushPolicy) -> Result<(), NavError> {
        let goal = self.scenario.goal.position();
        let (next, v, omega, status) = {
            let path = &self.nav_plan.as_ref().expect("plan present").smooth.points;
            pid_track_step(&self.robot, path, goal, &mut self.track, self.cfg)
        };
        match status {
            TrackStatus::GoalReached => {
                self.set_mode(Mode::Done);
            }
            TrackStatus::Lost => {
                self.advance_base(next, v, omega);
                self.set_mode(Mode::Replanning);
            }
            TrackStatus::Tracking => {
                self.advance_base(next, v, omega);
                if !self.fallback {
                    if let Some(i) = self.first_obstructing() {
                        let p_obj = Vector2::new(
                            self.movables[i].pose.position.x,
                            self.movables[i].pose.position.y,
                        );
                        if interaction_check(self.robot.base.position(), p_obj, self.cfg.d_push) {
                            self.handle_interaction(pusher, i)?;
                        }
                    }
                }
            }
        }
        Ok(())
    }

    fn run(mut self, pusher: &mut dyn PushPolicy) -> Result<NavReport, NavError> {
        self.log_step(0.0, 0.0);
        loop {
            match self.mode {
                Mode::Planning => self.do_plan(true),
                Mode::Replanning => self.do_plan(false),
                Mode::Tracking => self.tick_tracking(pusher)?,
                Mode::Positioning | Mode::Pushing => {
                    unreachable!("positioning and pushing complete within the interaction handler")
                }
                Mode::Done | Mode::Failed => break,
            }
            if self.over_step_budget() && self.mode != Mode::Done && self.mode != Mode::Failed {
                self.fail("control step budget exhausted");
            }
        }
        let outcome = if self.mode == Mode::Done { Outcome::Success } else { Outcome::Failed };
        let report = NavReport {
            outcome,
            reason: self.reason,
            traversal_time_s: self.clock,
            path_length_m: self.path_length,
            base_steps: self.base_steps,
            push_steps: self.push_steps,
            push_rate_hz: self.cfg.push_env.control_rate,
            dt: self.cfg.dt,
            trajectory: self.trajectory,
            pushes: self.pushes,
            transitions: self.transitions,
            replans: self.replans,
            interactions: self.interactions,
            fallback_used: self.fallback,
            final_movables: self.movables,
        };
        debug_assert!(
            (report.traversal_time_s
                - (report.base_steps as f64 * report.dt
                    + report.push_steps as f64 / report.push_rate_hz))
                .abs()
                < 1e-6,
            "time accounting drifted"
        );
        Ok(report)
    }
}

/// Runs the full navigation state machine on a scenario.
pub fn run_navigation(
    scenario: &Scenario,
    pusher: &mut dyn PushPolicy,
    cfg: &NavConfig,
) -> Result<NavReport, NavError> {
    if cfg.dt <= 0.0 || cfg.v_max <= 0.0 {
        return Err(NavError::InvalidConfig("dt and v_max must be positive".into()));
    }
    cfg.push_env
        .validate()
        .map_err(|e| NavError::InvalidConfig(format!("push_env: {e}")))?;
    NavRunner::new(scenario, cfg).run(pusher)
}

/// Validates a report against the state-machine and accounting invariants.
/// Returns a list of violations (empty = clean).
pub fn audit_report(report: &NavReport) -> Vec<String> {
    let mut issues = Vec::new();
    for (from, to) in &report.transitions {
        if !transition_allowed(*from, *to) {
            issues.push(format!("illegal transition {} -> {}", from.as_str(), to.as_str()));
        }
    }
    let expect_time = report.base_steps as f64 * report.dt
        + report.push_steps as f64 / report.push_rate_hz;
    if (report.traversal_time_s - expect_time).abs() > 1e-6 {
        issues.push(format!(
            "time accounting mismatch: reported {} vs {}",
            report.traversal_time_s, expect_time
        ));
    }
    if (report.path_length_m - report.recomputed_path_length()).abs() > 1e-9 {
        issues.push("path length does not match trajectory displacements".into());
    }
    issues
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::planner::SweptRegion;
    use crate::pushenv::ObsNoise;
    use crate::world::StaticRect;
    use approx::assert_relative_eq;

    fn straight_plan(from: Vector2<f64>, to: Vector2<f64>, radius: f64) -> NavPlan {
        // Hand-built plan along a straight segment, for unit tests that do
        // not need the planner.
        let n = 20;
        let points: Vec<Vector2<f64>> = (0..=n)
            .map(|i| from + (to - from) * (i as f64 / n as f64))
            .collect();
        let coarse = crate::planner::CoarsePath {
            states: points.iter().map(|p| Pose2::new(p.x, p.y, 0.0)).collect(),
        };
        let smooth = crate::planner::SmoothPath {
            points: points.clone(),
            objective_value: 0.0,
            iterations: 0,
            converged: true,
            kkt_residual: 0.0,
            objective_trace: Vec::new(),
        };
        NavPlan {
            coarse,
            corridor: Vec::new(),
            smooth,
            swept_region: SweptRegion { polyline: points, radius },
        }
    }

    fn test_box(x: f64, y: f64) -> MovableObject {
        MovableObject {
            shape: Shape::Box { lx: 0.5, ly: 0.5, lz: 0.55 },
            pose: Pose6::new(Vector3::new(x, y, 0.275), Vector3::zeros()),
            mass: 1.5,
            friction_ground: 0.7,
            tilt: 0.0,
        }
    }

    fn nav_env() -> EnvConfig {
        EnvConfig {
            obs_noise: ObsNoise { enabled: false, ..ObsNoise::default() },
            ..EnvConfig::default()
        }
    }

    #[test]
    fn interaction_region_is_a_closed_disc() {
        let robot = Vector2::new(0.0, 0.0);
        assert!(interaction_check(robot, Vector2::new(0.0, 0.0), 1.2));
        assert!(interaction_check(robot, Vector2::new(1.2, 0.0), 1.2));
        assert!(!interaction_check(robot, Vector2::new(1.2 + 1e-6, 0.0), 1.2));
    }

    #[test]
    fn obstruction_on_and_far_from_path() {
        let p = straight_plan(Vector2::new(0.0, 2.0), Vector2::new(8.0, 2.0), 0.6);
        assert!(obstruction_check(&p, &test_box(4.0, 2.0)));
        assert!(!obstruction_check(&p, &test_box(4.0, 7.0)));
    }

    #[test]
    fn obstruction_boundary_matches_sampled_overlap_oracle() {
        // Radius and offsets chosen exactly representable so the touching
        // case below is an exact-equality boundary, not an epsilon game.
        let radius = 0.5;
        let p = straight_plan(Vector2::new(0.0, 2.0), Vector2::new(8.0, 2.0), radius);
        // Sweep the obstacle laterally across the inflation boundary,
        // including the exact touching offset, and compare against a
        // fine-sampled point-membership oracle.
        for k in 0..60 {
            let offset = 0.5 + 0.02 * k as f64;
            let obj = test_box(4.0, 2.0 + offset);
            let fast = obstruction_check(&p, &obj);
            let corners = obj.footprint_corners().unwrap();
            let mut oracle = false;
            let steps = 200;
            'outer: for i in 0..=steps {
                for j in 0..=steps {
                    let u = i as f64 / steps as f64;
                    let v = j as f64 / steps as f64;
                    let a = corners[0] + (corners[1] - corners[0]) * u;
                    let b = corners[3] + (corners[2] - corners[3]) * u;
                    let q = a + (b - a) * v;
                    if p.swept_region.polyline_distance(q) <= radius {
                        oracle = true;
                        break 'outer;
                    }
                }
            }
            // The sampled oracle can only under-detect; allow it to miss
            // within one sampling cell of the exact boundary.
            if fast != oracle {
                let edge_dist = (offset - (radius + 0.25)).abs();
                assert!(
                    edge_dist < 0.01,
                    "mismatch away from the boundary: offset {offset}, fast {fast}, oracle {oracle}"
                );
            }
        }
        // Exact boundary: face at distance exactly radius touches the region.
        let touching = test_box(4.0, 2.0 + radius + 0.25);
        assert!(obstruction_check(&p, &touching));
        let clear = test_box(4.0, 2.0 + radius + 0.25 + 1e-9);
        assert!(!obstruction_check(&p, &clear));
    }

    #[test]
    fn sample_targets_keeps_lateral_rejects_on_path() {
        let nav_plan = straight_plan(Vector2::new(0.0, 3.0), Vector2::new(10.0, 3.0), 0.6);
        let grid = GridMap::new(10.0, 6.0, 0.05).unwrap();
        let obj = test_box(5.0, 3.0);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let kept = sample_targets(&obj, &nav_plan, &grid, 1.0, 100, &mut rng).unwrap();
        assert!(!kept.is_empty());
        // Brute-force re-check of every candidate drawn from the same seed.
        let mut rng2 = ChaCha8Rng::seed_from_u64(42);
        let mut kept2 = Vec::new();
        for _ in 0..100 {
            let r = 1.0 * rng2.gen_range(0.0f64..=1.0).sqrt();
            let th = rng2.gen_range(-std::f64::consts::PI..=std::f64::consts::PI);
            let p = Vector2::new(5.0 + r * th.cos(), 3.0 + r * th.sin());
            let mut moved = obj.clone();
            moved.pose.position.x = p.x;
            moved.pose.position.y = p.y;
            let feasible = object_inside_map(&moved, &grid)
                && !obstruction_check(&nav_plan, &moved)
                && !object_overlaps_grid(&moved, &grid);
            if feasible {
                kept2.push(p);
            }
        }
        assert_eq!(kept.len(), kept2.len());
        for (a, b) in kept.iter().zip(kept2.iter()) {
            assert_relative_eq!(a.x, b.x, max_relative = 1e-12);
            assert_relative_eq!(a.y, b.y, max_relative = 1e-12);
        }
        // Every kept candidate must clear the swept region; the object on
        // the path must be rejected.
        for p in &kept {
            // Lateral clearance: box half-diagonal over the inflated path.
            assert!(
                (p.y - 3.0).abs() > 0.6 - 0.36,
                "candidate too close to the path centerline: {p:?}"
            );
            let mut moved = obj.clone();
            moved.pose.position.x = p.x;
            moved.pose.position.y = p.y;
            assert!(!obstruction_check(&nav_plan, &moved));
        }
    }

    #[test]
    fn boxed_in_obstacle_has_no_feasible_target() {
        let nav_plan = straight_plan(Vector2::new(0.0, 3.0), Vector2::new(10.0, 3.0), 0.6);
        // Statics cover everything except the object's own footprint.
        let scenario = Scenario {
            map: GridMap::new(10.0, 6.0, 0.05).unwrap(),
            statics: vec![
                StaticRect { cx: 5.0, cy: 1.25, lx: 10.0, ly: 2.5 },
                StaticRect { cx: 5.0, cy: 4.75, lx: 10.0, ly: 2.5 },
                StaticRect { cx: 1.5, cy: 3.0, lx: 3.0, ly: 1.0 },
                StaticRect { cx: 8.5, cy: 3.0, lx: 3.0, ly: 1.0 },
            ],
            movables: vec![],
            start: Pose2::new(0.5, 3.0, 0.0),
            goal: Pose2::new(9.5, 3.0, 0.0),
            seed: 0,
        };
        let grid = rasterize(&scenario);
        let obj = test_box(5.0, 3.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let res = sample_targets(&obj, &nav_plan, &grid, 1.0, 128, &mut rng);
        assert!(matches!(res, Err(NavError::NoFeasibleTarget)));
    }

    #[test]
    fn zero_radius_sampling_rejects_the_obstructing_origin() {
        let nav_plan = straight_plan(Vector2::new(0.0, 3.0), Vector2::new(10.0, 3.0), 0.6);
        let grid = GridMap::new(10.0, 6.0, 0.05).unwrap();
        let obj = test_box(5.0, 3.0);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let res = sample_targets(&obj, &nav_plan, &grid, 0.0, 64, &mut rng);
        assert!(matches!(res, Err(NavError::NoFeasibleTarget)));
    }

    #[test]
    fn select_target_takes_the_distance_argmin() {
        let p_obj = Vector2::new(0.0, 0.0);
        let n = Vector2::new(0.0, 1.0);
        let cands = vec![
            Vector2::new(0.8, 0.0),
            Vector2::new(0.0, 0.5),
            Vector2::new(-1.1, 0.0),
        ];
        let best = select_target(&cands, p_obj, n);
        assert_relative_eq!(best.y, 0.5);
        assert_relative_eq!(best.x, 0.0);
        let single = select_target(&[Vector2::new(0.3, 0.4)], p_obj, n);
        assert_relative_eq!(single.x, 0.3);
    }

    #[test]
    fn select_target_ties_break_toward_the_outward_normal() {
        let p_obj = Vector2::new(0.0, 0.0);
        let left_normal = Vector2::new(0.0, 1.0);
        let cands = vec![Vector2::new(0.0, -0.7), Vector2::new(0.0, 0.7)];
        let best = select_target(&cands, p_obj, left_normal);
        assert!(best.y > 0.0, "tie must resolve toward the outward normal");
        let best_r = select_target(&cands, p_obj, -left_normal);
        assert!(best_r.y < 0.0);
    }

    #[test]
    fn pid_aligned_on_path_runs_at_v_max() {
        let cfg = NavConfig::default();
        let path: Vec<Vector2<f64>> =
            (0..=40).map(|i| Vector2::new(i as f64 * 0.25, 1.0)).collect();
        let robot = RobotState { base: Pose2::new(2.0, 1.0, 0.0), linear_speed: 0.0 };
        let mut track = TrackState::new();
        let (next, v, omega, status) =
            pid_track_step(&robot, &path, Vector2::new(10.0, 1.0), &mut track, &cfg);
        assert_eq!(status, TrackStatus::Tracking);
        assert_relative_eq!(v, cfg.v_max);
        assert!(omega.abs() < 1e-9);
        assert!(next.base.x > robot.base.x);
    }

    #[test]
    fn pid_offset_left_steers_right() {
        let cfg = NavConfig::default();
        let path: Vec<Vector2<f64>> =
            (0..=40).map(|i| Vector2::new(i as f64 * 0.25, 1.0)).collect();
        // 0.2 m to the left of the path (+y side), aligned with it.
        let robot = RobotState { base: Pose2::new(2.0, 1.2, 0.0), linear_speed: 0.0 };
        let mut track = TrackState::new();
        track.e_prev = 0.2; // no derivative kick
        let (_, _, omega, _) =
            pid_track_step(&robot, &path, Vector2::new(10.0, 1.0), &mut track, &cfg);
        assert!(omega < 0.0, "must steer right, got omega = {omega}");
    }

    #[test]
    fn pid_reports_goal_within_tolerance() {
        let cfg = NavConfig::default();
        let path: Vec<Vector2<f64>> =
            (0..=4).map(|i| Vector2::new(i as f64 * 0.25, 1.0)).collect();
        let robot = RobotState { base: Pose2::new(0.95, 1.05, 0.0), linear_speed: 0.3 };
        let mut track = TrackState::new();
        let (next, v, _, status) =
            pid_track_step(&robot, &path, Vector2::new(1.0, 1.0), &mut track, &cfg);
        assert_eq!(status, TrackStatus::GoalReached);
        assert_eq!(v, 0.0);
        assert_eq!(next.linear_speed, 0.0);
    }

    #[test]
    fn pid_large_cross_track_reports_lost() {
        let cfg = NavConfig::default();
        let path: Vec<Vector2<f64>> =
            (0..=40).map(|i| Vector2::new(i as f64 * 0.25, 1.0)).collect();
        let robot = RobotState { base: Pose2::new(2.0, 2.5, 0.0), linear_speed: 0.0 };
        let mut track = TrackState::new();
        let (_, _, _, status) =
            pid_track_step(&robot, &path, Vector2::new(10.0, 1.0), &mut track, &cfg);
        assert_eq!(status, TrackStatus::Lost);
    }

    fn open_scenario(movables: Vec<MovableObject>) -> Scenario {
        Scenario {
            map: GridMap::new(8.0, 4.0, 0.05).unwrap(),
            statics: vec![],
            movables,
            start: Pose2::new(0.7, 2.0, 0.0),
            goal: Pose2::new(7.2, 2.0, 0.0),
            seed: 5,
        }
    }

    #[test]
    fn empty_scene_is_pure_tracking_and_matches_smooth_length() {
        let scenario = open_scenario(vec![]);
        let cfg = NavConfig { push_env: nav_env(), ..NavConfig::default() };
        let mut pusher = ScriptedPusher::new();
        let report = run_navigation(&scenario, &mut pusher, &cfg).unwrap();
        assert_eq!(report.outcome, Outcome::Success, "reason: {}", report.reason);
        assert!(report.pushes.is_empty());
        assert!(report
            .trajectory
            .iter()
            .all(|s| s.mode != Mode::Pushing && s.mode != Mode::Positioning));
        assert!(audit_report(&report).is_empty(), "{:?}", audit_report(&report));

        // The tracker stops inside the goal tolerance, so the driven length
        // may fall short by up to goal_tol; wiggle may add a little on top.
        let smooth_len = plan(
            &rasterize(&scenario),
            scenario.start,
            scenario.goal,
            &cfg.planner,
        )
        .unwrap()
        .smooth_length();
        assert!(
            report.path_length_m <= smooth_len * 1.02,
            "tracked {} exceeds planned {}",
            report.path_length_m,
            smooth_len
        );
        assert!(
            report.path_length_m >= smooth_len - cfg.goal_tol - 0.05,
            "tracked {} far short of planned {}",
            report.path_length_m,
            smooth_len
        );
    }

    #[test]
    fn obstructing_box_is_pushed_aside_with_the_oracle() {
        let scenario = open_scenario(vec![test_box(3.5, 2.0)]);
        let cfg = NavConfig { push_env: nav_env(), ..NavConfig::default() };
        let mut pusher = ScriptedPusher::new();
        let report = run_navigation(&scenario, &mut pusher, &cfg).unwrap();
        assert_eq!(report.outcome, Outcome::Success, "reason: {}", report.reason);
        assert!(!report.pushes.is_empty(), "the box obstructs and must be pushed");
        assert!(!report.fallback_used);
        assert!(audit_report(&report).is_empty(), "{:?}", audit_report(&report));
        // The box ended away from the straight corridor.
        let m = &report.final_movables[0];
        assert!(
            (m.pose.position.y - 2.0).abs() > 0.5,
            "box still near the corridor: y = {}",
            m.pose.position.y
        );
        // Pushing really happened at the pushing rate.
        assert!(report.push_steps > 0);
        let pushed_dist = report
            .pushes
            .iter()
            .map(|p| (p.obj_to - p.obj_from).norm())
            .sum::<f64>();
        assert!(pushed_dist > 0.3, "object barely moved: {pushed_dist}");
    }

    #[test]
    fn walled_corridor_falls_back_to_avoidance() {
        // A movable sits in a gap wide enough for the robot but too narrow
        // for any feasible pushing target (the walls pin it); a detour around
        // the wall ends exists, so the avoidance fallback must succeed.
        let scenario = Scenario {
            map: GridMap::new(10.0, 8.0, 0.05).unwrap(),
            statics: vec![
                StaticRect { cx: 5.0, cy: 2.4, lx: 0.6, ly: 1.8 },
                StaticRect { cx: 5.0, cy: 5.6, lx: 0.6, ly: 1.8 },
            ],
            movables: vec![MovableObject {
                shape: Shape::Box { lx: 0.55, ly: 0.55, lz: 0.5 },
                pose: Pose6::new(Vector3::new(5.0, 4.0, 0.25), Vector3::zeros()),
                mass: 1.5,
                friction_ground: 0.7,
                tilt: 0.0,
            }],
            start: Pose2::new(1.0, 4.0, 0.0),
            goal: Pose2::new(9.0, 4.0, 0.0),
            seed: 3,
        };
        let cfg = NavConfig { push_env: nav_env(), ..NavConfig::default() };
        let mut pusher = ScriptedPusher::new();
        let report = run_navigation(&scenario, &mut pusher, &cfg).unwrap();
        assert!(audit_report(&report).is_empty(), "{:?}", audit_report(&report));
        assert_eq!(report.outcome, Outcome::Success, "reason: {}", report.reason);
        assert!(report.fallback_used, "narrow gap should force the avoidance fallback");
    }

    #[test]
    fn fully_blocked_scene_fails_after_fallback() {
        // Wall across the whole map with a gap only at the movable, and the
        // movable pinned by walls above and below: pushing infeasible and
        // avoidance unplannable.
        let scenario = Scenario {
            map: GridMap::new(10.0, 6.0, 0.05).unwrap(),
            statics: vec![
                StaticRect { cx: 5.0, cy: 1.25, lx: 0.6, ly: 2.5 },
                StaticRect { cx: 5.0, cy: 4.75, lx: 0.6, ly: 2.5 },
            ],
            movables: vec![MovableObject {
                shape: Shape::Box { lx: 0.55, ly: 0.9, lz: 0.5 },
                pose: Pose6::new(Vector3::new(5.0, 3.0, 0.25), Vector3::zeros()),
                mass: 1.5,
                friction_ground: 0.7,
                tilt: 0.0,
            }],
            start: Pose2::new(1.0, 3.0, 0.0),
            goal: Pose2::new(9.0, 3.0, 0.0),
            seed: 4,
        };
        let cfg = NavConfig { push_env: nav_env(), ..NavConfig::default() };
        let mut pusher = ScriptedPusher::new();
        let report = run_navigation(&scenario, &mut pusher, &cfg).unwrap();
        assert!(audit_report(&report).is_empty(), "{:?}", audit_report(&report));
        assert_eq!(report.outcome, Outcome::Failed);
        assert!(report.fallback_used);
    }

    #[test]
    fn oracle_pusher_scores_perfect_on_easiest_goal() {
        // Easiest fixed task: object at the nominal spawn, goal 0.3 m
        // straight ahead. The scripted pusher must never miss, across
        // randomized object dimensions, masses, and frictions.
        let cfg = nav_env();
        let mut env = PushEnv::new(cfg.clone()).unwrap();
        for trial in 0..20u64 {
            let (_, _) = env.reset(3, 9_000 + trial);
            let z = env.state().obj.pose.position.z;
            let spawn = Vector3::new(cfg.nominal_spawn[0], cfg.nominal_spawn[1], z);
            let mut obs = env.place_object_and_goal(
                Pose6::new(spawn, Vector3::zeros()),
                Vector2::new(cfg.nominal_spawn[0] + 0.3, cfg.nominal_spawn[1]),
            );
            let mut pusher = ScriptedPusher::new();
            pusher.begin_episode(&env, &obs);
            let mut cause = None;
            for _ in 0..cfg.horizon {
                let a = pusher.act(&env, &obs);
                let r = env.step(a);
                obs = r.observation;
                if r.done {
                    cause = Some(r.cause);
                    break;
                }
            }
            assert_eq!(
                cause,
                Some(Cause::Success),
                "trial {trial}: oracle missed the easiest goal ({cause:?})"
            );
        }
    }

    #[test]
    fn navigation_is_deterministic() {
        let scenario = open_scenario(vec![test_box(3.5, 2.0)]);
        let cfg = NavConfig { push_env: nav_env(), ..NavConfig::default() };
        let run = || {
            let mut pusher = ScriptedPusher::new();
            run_navigation(&scenario, &mut pusher, &cfg).unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a.traversal_time_s.to_bits(), b.traversal_time_s.to_bits());
        assert_eq!(a.path_length_m.to_bits(), b.path_length_m.to_bits());
        assert_eq!(a.pushes.len(), b.pushes.len());
    }

    #[test]
    fn report_text_lists_outcome_and_pushes() {
        let scenario = open_scenario(vec![test_box(3.5, 2.0)]);
        let cfg = NavConfig { push_env: nav_env(), ..NavConfig::default() };
        let mut pusher = ScriptedPusher::new();
        let report = run_navigation(&scenario, &mut pusher, &cfg).unwrap();
        let text = report.render_text();
        assert!(text.contains("outcome: success"));
        assert!(text.contains("push[0]"));
        assert!(text.contains("traversal_time_s"));
    }
}
