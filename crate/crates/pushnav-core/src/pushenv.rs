//! Goal-conditioned pushing MDP: observation construction, the two-stage
//! reward, pushing-zone geometry, action integration, episode lifecycle,
//! curriculum interpolation, and domain randomization.

use crate::physics::{
    detect_contact, forward_kinematics, push_step, randomize_physics, ArmModel, PushParams,
    PushStep, RandomizationRanges,
};
use crate::world::{object_aabb, MovableObject, Pose6, Shape};
use nalgebra::{Isometry3, Point3, Translation3, UnitQuaternion, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use thiserror::Error;

/// Number of scalars in one observation.
pub const OBS_DIM: usize = 25;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("invalid env config: {field}: {reason}")]
    InvalidConfig { field: &'static str, reason: &'static str },
    #[error("pushing zone undefined: object center coincides with the goal")]
    DegenerateZone,
}

/// Which reward terms are active and how they are gated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardMode {
    /// Staged rewards: guidance terms before zone entry, task terms after.
    TwoStage,
    /// Ablation: all seven terms from the first step, no gating.
    Baseline1AllOn,
    /// Ablation: task terms only, guidance terms never active.
    Baseline2TaskOnly,
}

/// Gaussian observation noise, per slot group.
#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObsNoise {
    pub enabled: bool,
    pub sigma_pos: f64,
    pub sigma_ang: f64,
}

impl Default for ObsNoise {
    fn default() -> Self {
        ObsNoise { enabled: true, sigma_pos: 0.005, sigma_ang: 0.01 }
    }
}

/// Per-episode object dimension ranges (boxes).
#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObjectDimRanges {
    pub lx: [f64; 2],
    pub ly: [f64; 2],
    pub lz: [f64; 2],
}

impl Default for ObjectDimRanges {
    fn default() -> Self {
        ObjectDimRanges { lx: [0.45, 0.65], ly: [0.45, 0.65], lz: [0.50, 0.60] }
    }
}

/// Evaluation override: a fixed object instead of sampled dimensions.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixedObject {
    pub shape: Shape,
    pub mass_kg: f64,
    pub mu_ground: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    /// Control frequency in Hz.
    pub control_rate: f64,
    /// Maximum episode length in steps.
    pub horizon: usize,
    /// Per-joint action scale; the wrist-roll entry is zero.
    pub action_scale: [f64; 6],
    /// Reward weights k1..k7.
    pub reward_weights: [f64; 7],
    /// Pushing-zone cylinder radius.
    pub zone_radius: f64,
    /// Success threshold on horizontal object-goal distance (strict).
    pub success_dist: f64,
    /// Object spawn disc radius around the nominal spawn point.
    pub r1_spawn: f64,
    /// Goal sampling annulus, inner radius.
    pub r2_goal_min: f64,
    /// Goal sampling annulus, outer radius.
    pub r3_goal_max: f64,
    /// Workspace semicircle radius; leaving it fails the episode.
    pub r4_region: f64,
    /// Goal sector half-angle about the base +x axis.
    pub goal_sector_half_angle: f64,
    /// Nominal object spawn point in the arm base frame.
    pub nominal_spawn: [f64; 2],
    /// Observation history length consumed by the policy.
    pub frame_stack: usize,
    pub reward_mode: RewardMode,
    pub obs_noise: ObsNoise,
    pub object_dims: ObjectDimRanges,
    pub randomization: RandomizationRanges,
    pub arm: ArmModel,
    pub push: PushParams,
    /// When set, every episode uses this object instead of sampling one.
    pub fixed_object: Option<FixedObject>,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            control_rate: 25.0,
            horizon: 100,
            action_scale: [0.4, 0.6, 0.25, 0.25, 0.05, 0.0],
            reward_weights: [1.0, 0.1, -0.1, -5.0, 0.2, 1.0, 0.2],
            zone_radius: 0.2,
            success_dist: 0.1,
            r1_spawn: 0.15,
            r2_goal_min: 0.5,
            r3_goal_max: 0.9,
            r4_region: 1.2,
            goal_sector_half_angle: std::f64::consts::FRAC_PI_3,
            nominal_spawn: [0.55, 0.0],
            frame_stack: 5,
            reward_mode: RewardMode::TwoStage,
            obs_noise: ObsNoise::default(),
            object_dims: ObjectDimRanges::default(),
            randomization: RandomizationRanges::default(),
            arm: ArmModel::default(),
            push: PushParams::default(),
            fixed_object: None,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        let bad = |field, reason| Err(EnvError::InvalidConfig { field, reason });
        if self.horizon == 0 {
            return bad("horizon", "must be > 0");
        }
        if self.action_scale.iter().any(|a| *a < 0.0) {
            return bad("action_scale", "components must be >= 0");
        }
        if self.action_scale[5] != 0.0 {
            return bad("action_scale", "wrist-roll scale must be 0");
        }
        if !(self.zone_radius > 0.0) {
            return bad("zone_radius", "must be > 0");
        }
        if !(self.control_rate > 0.0) {
            return bad("control_rate", "must be > 0");
        }
        if !(self.r2_goal_min > 0.0 && self.r3_goal_max >= self.r2_goal_min) {
            return bad("r2_goal_min", "goal annulus requires 0 < R2 <= R3");
        }
        if self.frame_stack == 0 {
            return bad("frame_stack", "must be >= 1");
        }
        Ok(())
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.control_rate
    }
}

/// Episode termination cause.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cause {
    Running,
    Success,
    OutOfRegion,
    Tipped,
    Timeout,
}

impl Cause {
    pub fn as_str(&self) -> &'static str {
        match self {
            Cause::Running => "running",
            Cause::Success => "success",
            Cause::OutOfRegion => "out_of_region",
            Cause::Tipped => "tipped",
            Cause::Timeout => "timeout",
        }
    }
}

/// Full per-episode state.
#[derive(Debug, Clone)]
pub struct EpisodeState {
    pub step: usize,
    pub reached_zone: bool,
    pub obj: MovableObject,
    /// Effective goal for this episode (curriculum-interpolated), frame A.
    pub goal: Vector3<f64>,
    /// Final sampled goal before curriculum interpolation.
    pub final_goal: Vector3<f64>,
    pub q: [f64; 6],
    pub prev_action: [f64; 6],
    pub curriculum_goal_index: u8,
    pub cause: Cause,
    /// Action-effectiveness scale realizing the arm added-mass draw.
    pub effectiveness: f64,
    rng: ChaCha8Rng,
}

/// One observation: 25 scalars.
///
/// Layout: `^A p_obj` (0..3), `^A eta_obj` (3..6), `^A p_goal` (6..9),
/// `^A eta_goal` (9..12), `^A p_ee` (12..15), `^A eta_ee` (15..18),
/// `^E p_obj` (18..21), `^E p_goal` (21..24), stage flag (24).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation(pub [f64; OBS_DIM]);

#[derive(Debug, Clone)]
pub struct StepResult {
    pub observation: Observation,
    pub reward_total: f64,
    /// r1..r7 after stage gating.
    pub reward_terms: [f64; 7],
    pub done: bool,
    pub cause: Cause,
    /// True when the commanded action fell outside [-1, 1] and was clamped.
    pub action_clamped: bool,
}

/// Pushing zone center: on the segment through object and goal, half the
/// object's extent behind the object, at the object's center height.
pub fn compute_pushing_zone(
    p_obj: Vector3<f64>,
    p_goal: Vector3<f64>,
    l_obj: f64,
) -> Result<Vector3<f64>, EnvError> {
    let d = Vector2::new(p_goal.x - p_obj.x, p_goal.y - p_obj.y);
    let norm = d.norm();
    if norm < 1e-12 {
        return Err(EnvError::DegenerateZone);
    }
    let d_hat = d / norm;
    Ok(Vector3::new(
        p_obj.x - 0.5 * l_obj * d_hat.x,
        p_obj.y - 0.5 * l_obj * d_hat.y,
        p_obj.z,
    ))
}

/// Zone membership: horizontal distance within the zone radius and
/// end-effector height within the object's extent.
pub fn in_pushing_zone(
    p_ee: Vector3<f64>,
    p_zone: Vector3<f64>,
    h_obj: f64,
    zone_radius: f64,
) -> bool {
    let horiz = Vector2::new(p_ee.x - p_zone.x, p_ee.y - p_zone.y).norm();
    horiz <= zone_radius && p_ee.z >= 0.0 && p_ee.z <= h_obj
}

/// Object extent along the goal direction: the projection of the yawed
/// footprint onto the push axis.
pub fn object_extent_toward(obj: &MovableObject, p_goal: Vector3<f64>) -> f64 {
    let d = Vector2::new(p_goal.x - obj.pose.position.x, p_goal.y - obj.pose.position.y);
    if d.norm() < 1e-12 {
        return 0.0;
    }
    2.0 * obj.support_half_extent(d)
}

/// Curriculum goals: thirds along the segment from start to final goal.
pub fn curriculum_goals(
    p_start: Vector3<f64>,
    p_goal: Vector3<f64>,
) -> (Vector3<f64>, Vector3<f64>, Vector3<f64>) {
    let step = (p_goal - p_start) / 3.0;
    (p_start + step, p_start + 2.0 * step, p_goal)
}

/// Rolling success window for curriculum advancement.
#[derive(Debug, Clone)]
pub struct CurriculumWindow {
    window: VecDeque<bool>,
    size: usize,
}

impl CurriculumWindow {
    pub fn new(size: usize) -> Self {
        CurriculumWindow { window: VecDeque::with_capacity(size + 1), size }
    }

    pub fn record(&mut self, success: bool) {
        self.window.push_back(success);
        while self.window.len() > self.size {
            self.window.pop_front();
        }
    }

    pub fn len(&self) -> usize {
        self.window.len()
    }

    pub fn is_empty(&self) -> bool {
        self.window.is_empty()
    }

    pub fn success_rate(&self) -> f64 {
        if self.window.is_empty() {
            return 0.0;
        }
        self.window.iter().filter(|s| **s).count() as f64 / self.window.len() as f64
    }

    /// Advance only on a full window with a strict > 0.90 success rate.
    pub fn should_advance(&self) -> bool {
        self.window.len() >= self.size && self.success_rate() > 0.90
    }

    pub fn clear(&mut self) {
        self.window.clear();
    }
}

/// Reward terms for one step. `stage2` is the post-gating latch value; the
/// mode decides how the latch maps to active terms.
#[allow(clippy::too_many_arguments)]
pub fn compute_reward(
    weights: &[f64; 7],
    mode: RewardMode,
    stage2: bool,
    p_ee: Vector3<f64>,
    p_zone: Vector3<f64>,
    obj: &MovableObject,
    goal: Vector3<f64>,
    v_obj: Vector3<f64>,
    action: &[f64; 6],
    prev_action: &[f64; 6],
) -> ([f64; 7], f64) {
    let [k1, k2, k3, k4, k5, k6, k7] = *weights;
    let (stage1_on, stage2_on) = match mode {
        RewardMode::TwoStage => (!stage2, stage2),
        RewardMode::Baseline1AllOn => (true, true),
        RewardMode::Baseline2TaskOnly => (false, true),
    };

    let mut r = [0.0f64; 7];
    // Smoothness and time cost are always on except in the task-only ablation.
    if !matches!(mode, RewardMode::Baseline2TaskOnly) {
        let da: f64 = action
            .iter()
            .zip(prev_action.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        r[1] = k2 * (-da).exp();
        r[2] = k3;
    }
    if stage1_on {
        r[0] = k1 * (-(p_ee - p_zone).norm()).exp();
        // Strictly inside only: the zone center lies exactly on the object's
        // bounding face, and touching a face is not penetration.
        let (lo, hi) = object_aabb(obj);
        let inside = (0..3).all(|i| p_ee[i] > lo[i] && p_ee[i] < hi[i]);
        if inside {
            r[3] = k4;
        }
    }
    if stage2_on {
        let h = obj.shape.height();
        r[4] = k5 * (-(obj.pose.position.z - h / 2.0).abs()).exp();
        let horiz =
            Vector2::new(obj.pose.position.x - goal.x, obj.pose.position.y - goal.y).norm();
        r[5] = k6 * (-horiz).exp();
        let d = Vector2::new(goal.x - obj.pose.position.x, goal.y - obj.pose.position.y);
        let d_norm = d.norm();
        if d_norm > 1e-12 {
            let d_hat = d / d_norm;
            let mut v = Vector2::new(v_obj.x, v_obj.y);
            let speed = v.norm();
            if speed > 1.0 {
                v /= speed;
            }
            r[6] = k7 * (d_hat.dot(&v) - 1.0).exp();
        } else {
            r[6] = k7 * (-1.0f64).exp();
        }
    }
    (r, r.iter().sum())
}

/// The pushing environment: one arm, one object, one goal.
#[derive(Debug, Clone)]
pub struct PushEnv {
    pub config: EnvConfig,
    state: EpisodeState,
    /// Episode-local ground friction (randomized each reset).
    push_params: PushParams,
}

/// Substep resolution: end-effector moves at most this far per contact query.
const MAX_EE_SUBSTEP: f64 = 0.02;
const MAX_SUBSTEPS: usize = 64;

impl PushEnv {
    pub fn new(config: EnvConfig) -> Result<Self, EnvError> {
        config.validate()?;
        let obj = MovableObject {
            shape: Shape::Box { lx: 0.5, ly: 0.5, lz: 0.55 },
            pose: Pose6::new(
                Vector3::new(config.nominal_spawn[0], config.nominal_spawn[1], 0.275),
                Vector3::zeros(),
            ),
            mass: 1.5,
            friction_ground: 0.7,
            tilt: 0.0,
        };
        let push_params = config.push;
        let q = config.arm.home_q();
        Ok(PushEnv {
            state: EpisodeState {
                step: 0,
                reached_zone: false,
                obj,
                goal: Vector3::new(0.9, 0.0, 0.275),
                final_goal: Vector3::new(0.9, 0.0, 0.275),
                q,
                prev_action: [0.0; 6],
                curriculum_goal_index: 3,
                cause: Cause::Timeout,
                effectiveness: 1.0,
                rng: ChaCha8Rng::seed_from_u64(0),
            },
            config,
            push_params,
        })
    }

    pub fn state(&self) -> &EpisodeState {
        &self.state
    }

    pub fn push_params(&self) -> &PushParams {
        &self.push_params
    }

    /// Privileged episode parameters, for diagnostics only; never part of the
    /// policy observation.
    pub fn privileged(&self) -> (f64, f64, f64) {
        (self.state.obj.mass, self.push_params.mu_ground, self.state.effectiveness)
    }

    pub fn ee_pose(&self) -> Pose6 {
        forward_kinematics(&self.config.arm, &self.state.q).0
    }

    /// Overrides the object pose and goal right after a reset, for rollouts
    /// embedded in navigation where both come from the world state rather
    /// than from sampling. The goal keeps the object's center height.
    pub fn place_object_and_goal(&mut self, obj_pose: Pose6, goal: Vector2<f64>) -> Observation {
        self.state.obj.pose = obj_pose;
        let z = obj_pose.position.z;
        self.state.goal = Vector3::new(goal.x, goal.y, z);
        self.state.final_goal = self.state.goal;
        self.build_observation()
    }

    /// Starts a new episode. The curriculum index selects which interpolated
    /// goal the episode trains toward (3 = the full goal).
    pub fn reset(&mut self, curriculum_goal_index: u8, seed: u64) -> (EpisodeState, Observation) {
        let cfg = &self.config;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);

        let (shape, mass_override, mu_override) = match &cfg.fixed_object {
            Some(f) => (f.shape.clone(), Some(f.mass_kg), Some(f.mu_ground)),
            None => {
                let dims = cfg.object_dims;
                let draw = |rng: &mut ChaCha8Rng, r: [f64; 2]| {
                    if r[0] == r[1] { r[0] } else { rng.gen_range(r[0]..r[1]) }
                };
                (
                    Shape::Box {
                        lx: draw(&mut rng, dims.lx),
                        ly: draw(&mut rng, dims.ly),
                        lz: draw(&mut rng, dims.lz),
                    },
                    None,
                    None,
                )
            }
        };
        let height = shape.height();

        // Object CoM uniform in the spawn disc, yaw uniform.
        let (sx, sy) = {
            let r = cfg.r1_spawn * rng.gen_range(0.0f64..=1.0).sqrt();
            let th = rng.gen_range(-std::f64::consts::PI..=std::f64::consts::PI);
            (cfg.nominal_spawn[0] + r * th.cos(), cfg.nominal_spawn[1] + r * th.sin())
        };
        let yaw = rng.gen_range(-std::f64::consts::PI..=std::f64::consts::PI);

        // Goal CoM area-uniform in the annular sector.
        let (gx, gy) = {
            let r2 = cfg.r2_goal_min * cfg.r2_goal_min;
            let r3 = cfg.r3_goal_max * cfg.r3_goal_max;
            let r = rng.gen_range(r2..=r3).sqrt();
            let th = rng.gen_range(-cfg.goal_sector_half_angle..=cfg.goal_sector_half_angle);
            (r * th.cos(), r * th.sin())
        };

        let sample = randomize_physics(&mut rng, &cfg.randomization);
        let mass = mass_override.unwrap_or(sample.mass_kg);
        let mu = mu_override.unwrap_or(sample.mu_ground);

        let obj = MovableObject {
            shape,
            pose: Pose6::new(Vector3::new(sx, sy, height / 2.0), Vector3::new(yaw, 0.0, 0.0)),
            mass,
            friction_ground: mu,
            tilt: 0.0,
        };
        self.push_params = PushParams { mu_ground: mu, ..cfg.push };

        let spawn = obj.pose.position;
        let final_goal = Vector3::new(gx, gy, height / 2.0);
        let (g1, g2, g3) = curriculum_goals(spawn, final_goal);
        let goal = match curriculum_goal_index.min(3) {
            0 | 1 => g1,
            2 => g2,
            _ => g3,
        };

        self.state = EpisodeState {
            step: 0,
            reached_zone: false,
            obj,
            goal,
            final_goal,
            q: cfg.arm.home_q(),
            prev_action: [0.0; 6],
            curriculum_goal_index: curriculum_goal_index.clamp(1, 3),
            cause: Cause::Running,
            effectiveness: sample.effectiveness,
            rng,
        };
        let obs = self.build_observation();
        (self.state.clone(), obs)
    }

    /// Zone center for the current object and goal; falls back to the object
    /// center in the degenerate object-at-goal case (the episode is about to
    /// terminate successfully anyway).
    fn current_zone(&self) -> Vector3<f64> {
        let l = object_extent_toward(&self.state.obj, self.state.goal);
        compute_pushing_zone(self.state.obj.pose.position, self.state.goal, l)
            .unwrap_or(self.state.obj.pose.position)
    }

    /// Advances one control step.
    pub fn step(&mut self, action: [f64; 6]) -> StepResult {
        assert!(
            self.state.cause == Cause::Running,
            "step called on a finished episode ({:?})",
            self.state.cause
        );
        let mut a = action;
        let mut action_clamped = false;
        for v in a.iter_mut() {
            let c = v.clamp(-1.0, 1.0);
            if c != *v {
                action_clamped = true;
                *v = c;
            }
        }

        let cfg = &self.config;
        let dt = cfg.dt();
        let q0 = self.state.q;
        let mut q1 = [0.0; 6];
        for i in 0..6 {
            q1[i] = q0[i] + cfg.action_scale[i] * a[i] * self.state.effectiveness;
        }
        let (q1, _) = cfg.arm.clamp_q(&q1);

        // Substep the arm motion so the pusher cannot tunnel through a face.
        let dq_norm: f64 =
            q0.iter().zip(q1.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let reach = 0.9;
        let n_sub = ((dq_norm * reach / MAX_EE_SUBSTEP).ceil() as usize).clamp(1, MAX_SUBSTEPS);

        let obj_before = self.state.obj.pose.position;
        let mut ee_prev = forward_kinematics(&cfg.arm, &q0).0.position;
        let mut tipped = false;
        for s in 1..=n_sub {
            let t = s as f64 / n_sub as f64;
            let mut qs = [0.0; 6];
            for i in 0..6 {
                qs[i] = q0[i] + t * (q1[i] - q0[i]);
            }
            let ee = forward_kinematics(&cfg.arm, &qs).0.position;
            let contact = detect_contact(ee, cfg.arm.ee_radius, &self.state.obj);
            if contact.active {
                match push_step(
                    &self.state.obj,
                    &contact,
                    ee - ee_prev,
                    &self.push_params,
                    dt / n_sub as f64,
                ) {
                    PushStep::Slide { obj, .. } => self.state.obj = obj,
                    PushStep::Tip { obj } => {
                        self.state.obj = obj;
                        tipped = true;
                        break;
                    }
                }
            }
            ee_prev = ee;
        }
        self.state.q = q1;

        let dp = self.state.obj.pose.position - obj_before;
        let v_obj = Vector3::new(dp.x / dt, dp.y / dt, 0.0);

        // Latch the stage transition before computing the reward: the step
        // that enters the zone is already stage 2.
        let ee_pose = forward_kinematics(&cfg.arm, &self.state.q).0;
        let p_zone = self.current_zone();
        if in_pushing_zone(ee_pose.position, p_zone, self.state.obj.shape.height(), cfg.zone_radius)
        {
            self.state.reached_zone = true;
        }

        let (reward_terms, reward_total) = compute_reward(
            &cfg.reward_weights,
            cfg.reward_mode,
            self.state.reached_zone,
            ee_pose.position,
            p_zone,
            &self.state.obj,
            self.state.goal,
            v_obj,
            &a,
            &self.state.prev_action,
        );
        debug_assert!(
            (reward_total - reward_terms.iter().sum::<f64>()).abs() < 1e-12,
            "reward total must equal the term sum"
        );
        debug_assert!(
            (-5.1 - 1e-9..=2.5 + 1e-9).contains(&reward_total),
            "per-step reward out of bounds: {reward_total}"
        );

        self.state.prev_action = a;
        self.state.step += 1;
        let cause = self.check_termination(tipped);
        self.state.cause = cause;

        let observation = self.build_observation();
        StepResult {
            observation,
            reward_total,
            reward_terms,
            done: cause != Cause::Running,
            cause,
            action_clamped,
        }
    }

    /// Termination priority: success > tipped > out-of-region > timeout.
    fn check_termination(&self, tipped: bool) -> Cause {
        let s = &self.state;
        let horiz =
            Vector2::new(s.obj.pose.position.x - s.goal.x, s.obj.pose.position.y - s.goal.y)
                .norm();
        if horiz < self.config.success_dist {
            return Cause::Success;
        }
        if tipped || s.obj.tilt > self.config.push.max_tilt {
            return Cause::Tipped;
        }
        let p = Vector2::new(s.obj.pose.position.x, s.obj.pose.position.y);
        if p.x < 0.0 || p.norm() > self.config.r4_region {
            return Cause::OutOfRegion;
        }
        if s.step >= self.config.horizon {
            return Cause::Timeout;
        }
        Cause::Running
    }

    /// Builds the 25-slot observation, optionally noised. Frame-E entries are
    /// computed from the noiseless state and then noised independently.
    pub fn build_observation(&mut self) -> Observation {
        let s = &self.state;
        let ee = forward_kinematics(&self.config.arm, &s.q).0;
        let obj_p = s.obj.pose.position;
        let obj_eta = s.obj.pose.orientation;
        let ee_p = ee.position;
        let ee_eta = ee.orientation;

        let e_obj = to_ee_frame(&ee, obj_p);
        let e_goal = to_ee_frame(&ee, s.goal);
        debug_assert!({
            let iso = ee_isometry(&ee);
            let back = iso.transform_point(&Point3::from(e_obj)).coords;
            (back - obj_p).norm() < 1e-9
        });

        let mut o = [0.0f64; OBS_DIM];
        o[0..3].copy_from_slice(obj_p.as_slice());
        o[3..6].copy_from_slice(obj_eta.as_slice());
        o[6..9].copy_from_slice(s.goal.as_slice());
        // Goal orientation is unconstrained: zeros.
        o[12..15].copy_from_slice(ee_p.as_slice());
        o[15..18].copy_from_slice(ee_eta.as_slice());
        o[18..21].copy_from_slice(e_obj.as_slice());
        o[21..24].copy_from_slice(e_goal.as_slice());
        o[24] = if s.reached_zone { 1.0 } else { 0.0 };

        let noise = self.config.obs_noise;
        if noise.enabled && (noise.sigma_pos > 0.0 || noise.sigma_ang > 0.0) {
            let pos = Normal::new(0.0, noise.sigma_pos).expect("valid sigma");
            let ang = Normal::new(0.0, noise.sigma_ang).expect("valid sigma");
            let rng = &mut self.state.rng;
            for (i, v) in o.iter_mut().enumerate() {
                if i == 24 {
                    continue;
                }
                let group_is_angle = (3..6).contains(&i) || (9..12).contains(&i) || (15..18).contains(&i);
                *v += if group_is_angle { ang.sample(rng) } else { pos.sample(rng) };
            }
        }
        Observation(o)
    }
}

/// Pose as an isometry (yaw-pitch-roll extrinsic x-y-z convention).
fn ee_isometry(pose: &Pose6) -> Isometry3<f64> {
    Isometry3::from_parts(
        Translation3::from(pose.position),
        UnitQuaternion::from_euler_angles(
            pose.orientation.z,
            pose.orientation.y,
            pose.orientation.x,
        ),
    )
}

/// Expresses a frame-A point in the end-effector frame.
pub fn to_ee_frame(ee_pose: &Pose6, p: Vector3<f64>) -> Vector3<f64> {
    ee_isometry(ee_pose).inverse_transform_point(&Point3::from(p)).coords
}

/// Counters for the stage-gating audit: violations must stay at zero over
/// entire training runs.
#[derive(Debug, Clone, Copy)]
pub struct GatingAudit {
    pub pre_latch_steps: u64,
    pub post_latch_steps: u64,
    pub violations: u64,
    /// Smallest per-step reward total seen (+inf before any step).
    pub min_total: f64,
    /// Largest per-step reward total seen (−inf before any step).
    pub max_total: f64,
}

impl Default for GatingAudit {
    fn default() -> Self {
        GatingAudit {
            pre_latch_steps: 0,
            post_latch_steps: 0,
            violations: 0,
            min_total: f64::INFINITY,
            max_total: f64::NEG_INFINITY,
        }
    }
}

impl GatingAudit {
    /// Checks one step of a staged-reward run. `stage2` is the latch value
    /// used for the reward computation.
    pub fn observe(&mut self, stage2: bool, terms: &[f64; 7], total: f64) {
        if stage2 {
            self.post_latch_steps += 1;
            if terms[0] != 0.0 || terms[3] != 0.0 {
                self.violations += 1;
            }
        } else {
            self.pre_latch_steps += 1;
            if terms[4] != 0.0 || terms[5] != 0.0 || terms[6] != 0.0 {
                self.violations += 1;
            }
        }
        self.min_total = self.min_total.min(total);
        self.max_total = self.max_total.max(total);
    }

    /// Folds another audit's counters into this one.
    pub fn merge(&mut self, other: &GatingAudit) {
        self.pre_latch_steps += other.pre_latch_steps;
        self.post_latch_steps += other.post_latch_steps;
        self.violations += other.violations;
        self.min_total = self.min_total.min(other.min_total);
        self.max_total = self.max_total.max(other.max_total);
    }

    pub fn total_steps(&self) -> u64 {
        self.pre_latch_steps + self.post_latch_steps
    }
}

/// One row of an episode trace.
#[derive(Debug, Clone)]
pub struct TraceRow {
    pub episode: usize,
    pub step: usize,
    pub observation: Observation,
    pub action: [f64; 6],
    pub reward_terms: [f64; 7],
    pub reward_total: f64,
    pub cause: Cause,
}

/// Writes episode traces as CSV, one row per step.
pub fn write_trace_csv<W: std::io::Write>(
    mut w: W,
    rows: &[TraceRow],
) -> std::io::Result<()> {
    write!(w, "episode,step")?;
    for i in 0..OBS_DIM {
        write!(w, ",obs{i}")?;
    }
    for i in 0..6 {
        write!(w, ",act{i}")?;
    }
    for i in 1..=7 {
        write!(w, ",r{i}")?;
    }
    writeln!(w, ",total,cause")?;
    for row in rows {
        write!(w, "{},{}", row.episode, row.step)?;
        for v in row.observation.0.iter() {
            write!(w, ",{v}")?;
        }
        for v in row.action.iter() {
            write!(w, ",{v}")?;
        }
        for v in row.reward_terms.iter() {
            write!(w, ",{v}")?;
        }
        writeln!(w, ",{},{}", row.reward_total, row.cause.as_str())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn quiet_config() -> EnvConfig {
        EnvConfig {
            obs_noise: ObsNoise { enabled: false, ..ObsNoise::default() },
            randomization: RandomizationRanges {
                mass_kg: [1.5, 1.5],
                mu_ground: [0.7, 0.7],
                arm_added_mass_kg: [0.0, 0.0],
            },
            ..EnvConfig::default()
        }
    }

    #[test]
    fn reset_is_deterministic() {
        let mut env_a = PushEnv::new(EnvConfig::default()).unwrap();
        let mut env_b = PushEnv::new(EnvConfig::default()).unwrap();
        let (sa, oa) = env_a.reset(3, 1234);
        let (sb, ob) = env_b.reset(3, 1234);
        assert_eq!(sa.obj.pose.position, sb.obj.pose.position);
        assert_eq!(sa.obj.pose.orientation, sb.obj.pose.orientation);
        assert_eq!(sa.goal, sb.goal);
        assert_eq!(sa.obj.mass, sb.obj.mass);
        assert_eq!(oa.0, ob.0);
    }

    #[test]
    fn resets_sample_within_the_configured_regions() {
        let mut env = PushEnv::new(EnvConfig::default()).unwrap();
        let cfg = env.config.clone();
        for seed in 0..10_000u64 {
            let (s, _) = env.reset(3, seed);
            let spawn = Vector2::new(
                s.obj.pose.position.x - cfg.nominal_spawn[0],
                s.obj.pose.position.y - cfg.nominal_spawn[1],
            );
            assert!(spawn.norm() <= cfg.r1_spawn + 1e-12);
            let goal_r = Vector2::new(s.final_goal.x, s.final_goal.y).norm();
            assert!(goal_r >= cfg.r2_goal_min - 1e-12 && goal_r <= cfg.r3_goal_max + 1e-12);
            let sector = s.final_goal.y.atan2(s.final_goal.x).abs();
            assert!(sector <= cfg.goal_sector_half_angle + 1e-12);
            assert!(s.obj.mass >= 0.5 && s.obj.mass <= 3.0);
        }
    }

    #[test]
    fn zero_spawn_radius_pins_the_object() {
        let mut env = PushEnv::new(EnvConfig { r1_spawn: 0.0, ..EnvConfig::default() }).unwrap();
        for seed in 0..50 {
            let (s, _) = env.reset(3, seed);
            assert_relative_eq!(s.obj.pose.position.x, 0.55, epsilon = 1e-12);
            assert_relative_eq!(s.obj.pose.position.y, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn pushing_zone_formula() {
        let z = compute_pushing_zone(
            Vector3::new(1.0, 0.0, 0.275),
            Vector3::new(2.0, 0.0, 0.275),
            0.5,
        )
        .unwrap();
        assert_relative_eq!(z.x, 0.75, epsilon = 1e-12);
        assert_relative_eq!(z.y, 0.0, epsilon = 1e-12);

        // Swapping the goal to the other side mirrors the zone.
        let z2 = compute_pushing_zone(
            Vector3::new(1.0, 0.0, 0.275),
            Vector3::new(0.0, 0.0, 0.275),
            0.5,
        )
        .unwrap();
        assert_relative_eq!(z2.x, 1.25, epsilon = 1e-12);

        // Zero object extent degenerates to the object center.
        let z3 = compute_pushing_zone(
            Vector3::new(1.0, 0.0, 0.275),
            Vector3::new(2.0, 0.0, 0.275),
            0.0,
        )
        .unwrap();
        assert_relative_eq!(z3.x, 1.0, epsilon = 1e-12);

        assert!(matches!(
            compute_pushing_zone(
                Vector3::new(1.0, 0.0, 0.275),
                Vector3::new(1.0, 0.0, 0.275),
                0.5,
            ),
            Err(EnvError::DegenerateZone)
        ));
    }

    #[test]
    fn zone_membership_rotation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..500 {
            let p_ee = Vector3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(0.0..0.8),
            );
            let p_obj = Vector3::new(rng.gen_range(0.2..0.8), rng.gen_range(-0.4..0.4), 0.275);
            let p_goal = Vector3::new(rng.gen_range(0.5..0.9), rng.gen_range(-0.4..0.4), 0.275);
            if (p_goal - p_obj).norm() < 1e-6 {
                continue;
            }
            let zone = compute_pushing_zone(p_obj, p_goal, 0.5).unwrap();
            let m0 = in_pushing_zone(p_ee, zone, 0.55, 0.2);

            let th = rng.gen_range(-3.0..3.0f64);
            let (s, c) = th.sin_cos();
            let rot = |p: Vector3<f64>| Vector3::new(c * p.x - s * p.y, s * p.x + c * p.y, p.z);
            let zone_r = compute_pushing_zone(rot(p_obj), rot(p_goal), 0.5).unwrap();
            let m1 = in_pushing_zone(rot(p_ee), zone_r, 0.55, 0.2);
            assert_eq!(m0, m1);
        }
    }

    fn test_object() -> MovableObject {
        MovableObject {
            shape: Shape::Box { lx: 0.5, ly: 0.5, lz: 0.55 },
            pose: Pose6::new(Vector3::new(0.55, 0.0, 0.275), Vector3::zeros()),
            mass: 1.5,
            friction_ground: 0.7,
            tilt: 0.0,
        }
    }

    #[test]
    fn stage1_reward_at_zone_center() {
        let weights = [1.0, 0.1, -0.1, -5.0, 0.2, 1.0, 0.2];
        let obj = test_object();
        let goal = Vector3::new(0.9, 0.0, 0.275);
        let zone = compute_pushing_zone(obj.pose.position, goal, 0.5).unwrap();
        let (r, total) = compute_reward(
            &weights,
            RewardMode::TwoStage,
            false,
            zone,
            zone,
            &obj,
            goal,
            Vector3::zeros(),
            &[0.0; 6],
            &[0.0; 6],
        );
        assert_relative_eq!(r[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(r[1], 0.1, epsilon = 1e-12);
        assert_relative_eq!(r[2], -0.1, epsilon = 1e-12);
        assert_eq!(r[3], 0.0);
        assert_eq!(&r[4..], &[0.0, 0.0, 0.0]);
        assert_relative_eq!(total, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn stage1_penalizes_ee_inside_object() {
        let weights = [1.0, 0.1, -0.1, -5.0, 0.2, 1.0, 0.2];
        let obj = test_object();
        let goal = Vector3::new(0.9, 0.0, 0.275);
        let (r, _) = compute_reward(
            &weights,
            RewardMode::TwoStage,
            false,
            obj.pose.position,
            Vector3::new(0.3, 0.0, 0.275),
            &obj,
            goal,
            Vector3::zeros(),
            &[0.0; 6],
            &[0.0; 6],
        );
        assert_eq!(r[3], -5.0);
    }

    #[test]
    fn stage2_reward_at_goal() {
        let weights = [1.0, 0.1, -0.1, -5.0, 0.2, 1.0, 0.2];
        let mut obj = test_object();
        obj.pose = Pose6::new(Vector3::new(0.9, 0.0, 0.275), Vector3::zeros());
        let goal = Vector3::new(0.9, 0.0, 0.275);
        let (r, _) = compute_reward(
            &weights,
            RewardMode::TwoStage,
            true,
            Vector3::new(0.6, 0.0, 0.275),
            Vector3::new(0.6, 0.0, 0.275),
            &obj,
            goal,
            Vector3::zeros(),
            &[0.0; 6],
            &[0.0; 6],
        );
        assert_eq!(r[0], 0.0);
        assert_eq!(r[3], 0.0);
        assert_relative_eq!(r[4], 0.2, epsilon = 1e-12);
        assert_relative_eq!(r[5], 1.0, epsilon = 1e-12);
        assert_relative_eq!(r[6], 0.2 * (-1.0f64).exp(), epsilon = 1e-12);
    }

    #[test]
    fn task_only_mode_disables_guidance_terms() {
        let weights = [1.0, 0.1, -0.1, -5.0, 0.2, 1.0, 0.2];
        let obj = test_object();
        let goal = Vector3::new(0.9, 0.0, 0.275);
        let zone = compute_pushing_zone(obj.pose.position, goal, 0.5).unwrap();
        let (r, _) = compute_reward(
            &weights,
            RewardMode::Baseline2TaskOnly,
            false,
            zone,
            zone,
            &obj,
            goal,
            Vector3::zeros(),
            &[0.5; 6],
            &[0.0; 6],
        );
        assert_eq!(&r[0..4], &[0.0, 0.0, 0.0, 0.0]);
        assert!(r[4] > 0.0 && r[5] > 0.0 && r[6] > 0.0);

        let (r_all, _) = compute_reward(
            &weights,
            RewardMode::Baseline1AllOn,
            false,
            zone,
            zone,
            &obj,
            goal,
            Vector3::zeros(),
            &[0.0; 6],
            &[0.0; 6],
        );
        assert!(r_all[0] > 0.0 && r_all[4] > 0.0 && r_all[5] > 0.0);
    }

    #[test]
    fn action_scale_applies_exactly_from_zero() {
        let mut env = PushEnv::new(quiet_config()).unwrap();
        env.reset(3, 7);
        env.state.q = [0.0; 6];
        let r = env.step([1.0; 6]);
        assert!(!r.action_clamped);
        let expect = [0.4, 0.6, 0.25, 0.25, 0.05, 0.0];
        for (q, e) in env.state.q.iter().zip(expect.iter()) {
            assert_relative_eq!(q, e, epsilon = 1e-12);
        }
    }

    #[test]
    fn zero_action_is_identity() {
        let mut env = PushEnv::new(quiet_config()).unwrap();
        env.reset(3, 11);
        // Pin the goal away from the spawn so the episode cannot end early.
        env.state.goal = Vector3::new(0.9, 0.0, 0.275);
        env.state.final_goal = env.state.goal;
        let q_before = env.state.q;
        let obj_before = env.state.obj.pose.position;
        let r = env.step([0.0; 6]);
        assert_eq!(env.state.q, q_before);
        assert_eq!(env.state.obj.pose.position, obj_before);
        assert_eq!(r.cause, Cause::Running);
    }

    #[test]
    fn out_of_range_actions_are_clamped_with_flag() {
        let mut env = PushEnv::new(quiet_config()).unwrap();
        env.reset(3, 13);
        let r = env.step([2.0, -3.0, 0.0, 0.0, 0.0, 0.0]);
        assert!(r.action_clamped);
        assert_eq!(env.state.prev_action[0], 1.0);
        assert_eq!(env.state.prev_action[1], -1.0);
    }

    /// Crude damped gradient IK used only to script test pushes.
    fn solve_ik(arm: &ArmModel, target: Vector3<f64>, q0: [f64; 6]) -> [f64; 6] {
        let mut q = q0;
        for _ in 0..400 {
            let p = crate::physics::ee_position(arm, &q);
            let err = target - p;
            if err.norm() < 1e-4 {
                break;
            }
            let mut grad = [0.0; 6];
            let h = 1e-6;
            for i in 0..5 {
                let mut qh = q;
                qh[i] += h;
                let ph = crate::physics::ee_position(arm, &qh);
                grad[i] = (ph - p).dot(&err) / h;
            }
            let gn: f64 = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            if gn < 1e-9 {
                break;
            }
            for i in 0..5 {
                q[i] += 0.5 * grad[i] / gn * err.norm().min(0.1);
            }
            let (qc, _) = arm.clamp_q(&q);
            q = qc;
        }
        q
    }

    /// Steers joints toward a target configuration through the action
    /// interface, then pushes straight along +x.
    #[test]
    fn scripted_straight_push_displaces_monotonically() {
        let mut cfg = quiet_config();
        cfg.r1_spawn = 0.0;
        cfg.fixed_object = Some(FixedObject {
            shape: Shape::Box { lx: 0.5, ly: 0.5, lz: 0.55 },
            mass_kg: 1.5,
            mu_ground: 0.7,
        });
        let mut env = PushEnv::new(cfg).unwrap();
        env.reset(3, 21);
        // Pin the goal straight ahead so the push axis is +x.
        env.state.goal = Vector3::new(0.9, 0.0, 0.275);
        env.state.final_goal = env.state.goal;

        // Approach via waypoints that stay clear of the object: swing high
        // over the rear face, descend behind it, then creep forward along +x.
        let waypoints = [Vector3::new(0.22, 0.0, 0.72), Vector3::new(0.22, 0.0, 0.15)];
        let mut wp = 0usize;

        let mut xs = vec![env.state.obj.pose.position.x];
        let mut done = false;
        for _ in 0..100 {
            let p = crate::physics::ee_position(&env.config.arm, &env.state.q);
            let target = if wp < waypoints.len() {
                if (p - waypoints[wp]).norm() < 0.03 {
                    wp += 1;
                }
                *waypoints.get(wp).unwrap_or(&Vector3::new(p.x + 0.02, 0.0, 0.15))
            } else {
                Vector3::new(p.x + 0.02, 0.0, 0.15)
            };
            let qn = solve_ik(&env.config.arm, target, env.state.q);
            let mut a = [0.0; 6];
            for i in 0..6 {
                let scale = env.config.action_scale[i].max(1e-9);
                a[i] = ((qn[i] - env.state.q[i]) / scale).clamp(-1.0, 1.0);
            }
            let r = env.step(a);
            xs.push(env.state.obj.pose.position.x);
            if r.done {
                assert_eq!(r.cause, Cause::Success);
                assert!(env.state.reached_zone, "success requires zone entry");
                done = true;
                break;
            }
        }
        for w in xs.windows(2) {
            assert!(w[1] >= w[0] - 1e-9, "object must not move backward");
        }
        let total = xs.last().unwrap() - xs.first().unwrap();
        assert!(total > 0.05, "object should displace along the push axis, moved {total}");
        assert!(done, "scripted push should reach the goal");
    }

    #[test]
    fn termination_thresholds_are_strict() {
        let mut env = PushEnv::new(quiet_config()).unwrap();
        env.reset(3, 31);
        env.state.goal = Vector3::new(1.0, 0.0, 0.275);

        // 0.09 m away: success.
        env.state.obj.pose =
            Pose6::new(Vector3::new(1.09, 0.0, 0.275), Vector3::zeros());
        assert!((env.state.obj.pose.position.x - 1.0).abs() < 0.1);
        assert_eq!(env.check_termination(false), Cause::Success);

        // 0.10 m: not success (threshold is strict).
        env.state.obj.pose =
            Pose6::new(Vector3::new(1.1, 0.0, 0.275), Vector3::zeros());
        assert!((env.state.obj.pose.position.x - 1.0).abs() >= 0.1);
        assert_ne!(env.check_termination(false), Cause::Success);

        // Timeout at the horizon when nothing else fires.
        env.state.obj.pose =
            Pose6::new(Vector3::new(0.55, 0.0, 0.275), Vector3::zeros());
        env.state.step = 100;
        assert_eq!(env.check_termination(false), Cause::Timeout);

        // Out-of-region: behind the base or beyond R4.
        env.state.step = 5;
        env.state.obj.pose =
            Pose6::new(Vector3::new(-0.05, 0.3, 0.275), Vector3::zeros());
        assert_eq!(env.check_termination(false), Cause::OutOfRegion);
        env.state.obj.pose =
            Pose6::new(Vector3::new(1.3, 0.3, 0.275), Vector3::zeros());
        assert_eq!(env.check_termination(false), Cause::OutOfRegion);

        // Success outranks a simultaneous tip.
        env.state.obj.pose =
            Pose6::new(Vector3::new(1.05, 0.0, 0.275), Vector3::zeros());
        assert_eq!(env.check_termination(true), Cause::Success);
    }

    #[test]
    fn curriculum_goal_interpolation() {
        let (g1, g2, g3) = curriculum_goals(Vector3::zeros(), Vector3::new(3.0, 0.0, 0.0));
        assert_relative_eq!(g1.x, 1.0, epsilon = 1e-12);
        assert_relative_eq!(g2.x, 2.0, epsilon = 1e-12);
        assert_relative_eq!(g3.x, 3.0, epsilon = 1e-12);

        let p = Vector3::new(0.4, -0.2, 0.275);
        let (e1, e2, e3) = curriculum_goals(p, p);
        assert_eq!(e1, p);
        assert_eq!(e2, p);
        assert_eq!(e3, p);

        let (_, g2, _) =
            curriculum_goals(Vector3::new(1.0, 1.0, 0.0), Vector3::new(4.0, -2.0, 0.0));
        assert_relative_eq!(g2.x, 3.0, epsilon = 1e-12);
        assert_relative_eq!(g2.y, -1.0, epsilon = 1e-12);
    }

    #[test]
    fn curriculum_window_strictness() {
        let mut w = CurriculumWindow::new(200);
        for i in 0..200 {
            w.record(i < 182);
        }
        assert!(w.should_advance());

        let mut w = CurriculumWindow::new(200);
        for i in 0..200 {
            w.record(i < 180);
        }
        assert!(!w.should_advance());

        let mut w = CurriculumWindow::new(200);
        for _ in 0..150 {
            w.record(true);
        }
        assert!(!w.should_advance(), "partial window must not advance");
    }

    #[test]
    fn identity_ee_pose_keeps_frame_a_coordinates() {
        let identity = Pose6::new(Vector3::zeros(), Vector3::zeros());
        let p = Vector3::new(0.5, -0.2, 0.3);
        let e = to_ee_frame(&identity, p);
        assert_relative_eq!((e - p).norm(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn observation_layout_and_noise_paths() {
        let mut env = PushEnv::new(quiet_config()).unwrap();
        let (_, obs) = env.reset(3, 41);

        // Object at the goal: position slots coincide.
        env.state.obj.pose = Pose6::new(env.state.goal, Vector3::zeros());
        let obs2 = env.build_observation();
        for i in 0..3 {
            assert_relative_eq!(obs2.0[i], obs2.0[6 + i], epsilon = 1e-12);
        }
        assert_eq!(obs2.0[24], 0.0);
        assert_eq!(&obs2.0[9..12], &[0.0, 0.0, 0.0]);

        // Frame-E slots equal the inverse ee transform of the frame-A slots.
        let ee = env.ee_pose();
        let e_obj = to_ee_frame(&ee, Vector3::new(obs2.0[0], obs2.0[1], obs2.0[2]));
        for i in 0..3 {
            assert_relative_eq!(obs2.0[18 + i], e_obj[i], epsilon = 1e-9);
        }

        // Zero-sigma noise equals the noiseless path.
        let mut cfg = quiet_config();
        cfg.obs_noise = ObsNoise { enabled: true, sigma_pos: 0.0, sigma_ang: 0.0 };
        let mut env_zero = PushEnv::new(cfg).unwrap();
        let (_, obs_zero) = env_zero.reset(3, 41);
        assert_eq!(obs.0, obs_zero.0);

        // Enabled noise perturbs positions but never the stage flag.
        let mut env_noisy = PushEnv::new(EnvConfig {
            randomization: RandomizationRanges {
                mass_kg: [1.5, 1.5],
                mu_ground: [0.7, 0.7],
                arm_added_mass_kg: [0.0, 0.0],
            },
            ..EnvConfig::default()
        })
        .unwrap();
        let (_, obs_noisy) = env_noisy.reset(3, 41);
        assert_ne!(obs.0[0], obs_noisy.0[0]);
        assert_eq!(obs_noisy.0[24], 0.0);
    }

    #[test]
    fn step_sequences_are_bitwise_deterministic() {
        let run = || {
            let mut env = PushEnv::new(EnvConfig::default()).unwrap();
            env.reset(3, 99);
            let mut out = Vec::new();
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            for _ in 0..100 {
                let mut a = [0.0; 6];
                for v in a.iter_mut() {
                    *v = rng.gen_range(-1.0..1.0);
                }
                let r = env.step(a);
                out.push(r.clone());
                if r.done {
                    break;
                }
            }
            out
        };
        let a = run();
        let b = run();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b.iter()) {
            assert_eq!(x.reward_total.to_bits(), y.reward_total.to_bits());
            assert_eq!(x.cause, y.cause);
            for (u, v) in x.observation.0.iter().zip(y.observation.0.iter()) {
                assert_eq!(u.to_bits(), v.to_bits());
            }
        }
    }

    #[test]
    fn latch_is_monotone_and_gating_is_exact() {
        let mut audit = GatingAudit::default();
        let mut env = PushEnv::new(EnvConfig::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for ep in 0..30u64 {
            env.reset(3, 1000 + ep);
            let mut latched = false;
            for _ in 0..100 {
                let mut a = [0.0; 6];
                for v in a.iter_mut() {
                    *v = rng.gen_range(-1.0..1.0);
                }
                let r = env.step(a);
                assert!(
                    !(latched && !env.state.reached_zone),
                    "latch must never reset within an episode"
                );
                latched = env.state.reached_zone;
                audit.observe(env.state.reached_zone, &r.reward_terms, r.reward_total);
                assert!((-5.1..=2.5).contains(&r.reward_total));
                if r.done {
                    break;
                }
            }
        }
        assert_eq!(audit.violations, 0);
        assert!(audit.pre_latch_steps > 0);
    }

    #[test]
    fn trace_csv_shape() {
        let mut env = PushEnv::new(quiet_config()).unwrap();
        let (_, obs) = env.reset(3, 5);
        let row = TraceRow {
            episode: 0,
            step: 0,
            observation: obs,
            action: [0.0; 6],
            reward_terms: [0.0; 7],
            reward_total: 0.0,
            cause: Cause::Running,
        };
        let mut buf = Vec::new();
        write_trace_csv(&mut buf, &[row]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        let header = lines.next().unwrap();
        assert_eq!(header.split(',').count(), 2 + OBS_DIM + 6 + 7 + 2);
        assert_eq!(lines.next().unwrap().split(',').count(), 2 + OBS_DIM + 6 + 7 + 2);
    }
}
