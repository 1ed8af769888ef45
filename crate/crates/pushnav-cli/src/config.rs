//! Run configuration: built-in defaults, optional TOML file, then
//! command-line flags, merged in that order. Numeric constants that the
//! reference hardware setup fixes (reward weights, region radii, control
//! rate, and the like) are guarded: changing them in a config file is
//! rejected unless `--override-paper` is passed, so they cannot drift
//! silently.

use pushnav_core::navexec::{NavConfig, PushSide};
use pushnav_core::planner::PlannerConfig;
use pushnav_core::ppo::TrainConfig;
use pushnav_core::pushenv::EnvConfig;
use serde::Deserialize;
use std::path::Path;

use crate::CliError;

/// Trainer knobs; the environment section is shared with every other command
/// and lives at the top level, so it is not repeated here.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainerSection {
    pub n_envs: usize,
    pub steps_per_env: usize,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip_eps: f64,
    pub epochs: usize,
    pub minibatches: usize,
    pub learning_rate: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub max_grad_norm: f64,
    pub total_env_steps: u64,
    pub seed: u64,
    pub hidden: Vec<usize>,
    pub curriculum_window: usize,
    pub eval_every: Option<usize>,
    pub eval_trials: usize,
    pub early_stop_success: Option<f64>,
}

impl Default for TrainerSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainerSection {
            n_envs: t.n_envs,
            steps_per_env: t.steps_per_env,
            gamma: t.gamma,
            gae_lambda: t.gae_lambda,
            clip_eps: t.clip_eps,
            epochs: t.epochs,
            minibatches: t.minibatches,
            learning_rate: t.learning_rate,
            entropy_coef: t.entropy_coef,
            value_coef: t.value_coef,
            max_grad_norm: t.max_grad_norm,
            total_env_steps: t.total_env_steps,
            seed: t.seed,
            hidden: t.hidden,
            curriculum_window: t.curriculum_window,
            eval_every: t.eval_every,
            eval_trials: t.eval_trials,
            early_stop_success: t.early_stop_success,
        }
    }
}

impl TrainerSection {
    pub fn to_train_config(&self, env: EnvConfig) -> TrainConfig {
        TrainConfig {
            n_envs: self.n_envs,
            steps_per_env: self.steps_per_env,
            gamma: self.gamma,
            gae_lambda: self.gae_lambda,
            clip_eps: self.clip_eps,
            epochs: self.epochs,
            minibatches: self.minibatches,
            learning_rate: self.learning_rate,
            entropy_coef: self.entropy_coef,
            value_coef: self.value_coef,
            max_grad_norm: self.max_grad_norm,
            total_env_steps: self.total_env_steps,
            seed: self.seed,
            hidden: self.hidden.clone(),
            curriculum_window: self.curriculum_window,
            eval_every: self.eval_every,
            eval_trials: self.eval_trials,
            early_stop_success: self.early_stop_success,
            env,
        }
    }
}

/// Navigation executor knobs; planner and pushing-environment sub-configs
/// live in their own top-level sections.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NavSection {
    pub d_push: f64,
    pub r_push: f64,
    pub n_samples: usize,
    pub standoff: f64,
    pub dt: f64,
    pub v_max: f64,
    pub omega_max: f64,
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    pub heading_gain: f64,
    pub goal_tol: f64,
    pub tracking_lost_dist: f64,
    pub preferred_side: PushSide,
    pub clear_slack: f64,
    pub max_push_legs: usize,
    pub max_interactions: usize,
    pub max_replans: usize,
    pub max_steps: usize,
    pub seed: u64,
}

impl Default for NavSection {
    fn default() -> Self {
        let n = NavConfig::default();
        NavSection {
            d_push: n.d_push,
            r_push: n.r_push,
            n_samples: n.n_samples,
            standoff: n.standoff,
            dt: n.dt,
            v_max: n.v_max,
            omega_max: n.omega_max,
            kp: n.kp,
            ki: n.ki,
            kd: n.kd,
            heading_gain: n.heading_gain,
            goal_tol: n.goal_tol,
            tracking_lost_dist: n.tracking_lost_dist,
            preferred_side: n.preferred_side,
            clear_slack: n.clear_slack,
            max_push_legs: n.max_push_legs,
            max_interactions: n.max_interactions,
            max_replans: n.max_replans,
            max_steps: n.max_steps,
            seed: n.seed,
        }
    }
}

impl NavSection {
    pub fn to_nav_config(&self, planner: PlannerConfig, push_env: EnvConfig) -> NavConfig {
        NavConfig {
            d_push: self.d_push,
            r_push: self.r_push,
            n_samples: self.n_samples,
            standoff: self.standoff,
            dt: self.dt,
            v_max: self.v_max,
            omega_max: self.omega_max,
            kp: self.kp,
            ki: self.ki,
            kd: self.kd,
            heading_gain: self.heading_gain,
            goal_tol: self.goal_tol,
            tracking_lost_dist: self.tracking_lost_dist,
            preferred_side: self.preferred_side,
            clear_slack: self.clear_slack,
            max_push_legs: self.max_push_legs,
            max_interactions: self.max_interactions,
            max_replans: self.max_replans,
            max_steps: self.max_steps,
            seed: self.seed,
            planner,
            push_env,
        }
    }
}

/// Evaluation protocol knobs.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// Trials per table row.
    pub trials: usize,
    /// Fixed benchmark goals, alternated across trials.
    pub goals: Vec<[f64; 2]>,
    pub seed: u64,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            trials: 50,
            goals: vec![[0.65, 0.6], [0.65, -0.6]],
            seed: 0,
        }
    }
}

/// The merged configuration tree for every subcommand.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub env: EnvConfig,
    pub planner: PlannerConfig,
    pub trainer: TrainerSection,
    pub nav: NavSection,
    pub eval: EvalSection,
}

/// One guarded constant: a dotted key name and an equality probe.
fn paper_drift(cfg: &RunConfig) -> Vec<&'static str> {
    let d = EnvConfig::default();
    let de = EvalSection::default();
    let e = &cfg.env;
    let mut drifted = Vec::new();
    let mut check = |same: bool, key: &'static str| {
        if !same {
            drifted.push(key);
        }
    };
    check(e.control_rate == d.control_rate, "env.control_rate");
    check(e.horizon == d.horizon, "env.horizon");
    check(e.reward_weights == d.reward_weights, "env.reward_weights");
    check(e.zone_radius == d.zone_radius, "env.zone_radius");
    check(e.success_dist == d.success_dist, "env.success_dist");
    check(e.r1_spawn == d.r1_spawn, "env.r1_spawn");
    check(e.r2_goal_min == d.r2_goal_min, "env.r2_goal_min");
    check(e.r3_goal_max == d.r3_goal_max, "env.r3_goal_max");
    check(e.r4_region == d.r4_region, "env.r4_region");
    check(e.nominal_spawn == d.nominal_spawn, "env.nominal_spawn");
    check(e.frame_stack == d.frame_stack, "env.frame_stack");
    check(e.object_dims.lx == d.object_dims.lx, "env.object_dims.lx");
    check(e.object_dims.ly == d.object_dims.ly, "env.object_dims.ly");
    check(e.object_dims.lz == d.object_dims.lz, "env.object_dims.lz");
    check(
        e.randomization.mass_kg == d.randomization.mass_kg,
        "env.randomization.mass_kg",
    );
    check(
        e.randomization.mu_ground == d.randomization.mu_ground,
        "env.randomization.mu_ground",
    );
    check(cfg.eval.trials == de.trials, "eval.trials");
    check(cfg.eval.goals == de.goals, "eval.goals");
    drifted
}

impl RunConfig {
    /// Built-in defaults, overlaid with `path` when given. Guarded constants
    /// changed by the file are rejected unless `override_paper` is set.
    /// Explicit command-line flags are applied by the caller afterwards.
    pub fn load(path: Option<&Path>, override_paper: bool) -> Result<RunConfig, CliError> {
        let cfg = match path {
            None => RunConfig::default(),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| {
                    CliError::Validation(format!("cannot read config {}: {e}", p.display()))
                })?;
                toml::from_str(&text).map_err(|e| {
                    CliError::Validation(format!("invalid config {}: {e}", p.display()))
                })?
            }
        };
        let drifted = paper_drift(&cfg);
        if !drifted.is_empty() && !override_paper {
            return Err(CliError::Validation(format!(
                "config changes reference-fixed constants ({}); pass --override-paper to allow",
                drifted.join(", ")
            )));
        }
        Ok(cfg)
    }
}
