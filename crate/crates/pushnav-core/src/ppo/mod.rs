//! PPO trainer for the pushing policy: rollout collection over parallel
//! environments, clipped-surrogate updates with manual gradients, curriculum
//! scheduling, evaluation, and checkpointing.

pub mod checkpoint;
pub mod gae;
pub mod net;

use crate::pushenv::{
    Cause, EnvConfig, EnvError, GatingAudit, Observation, PushEnv, RewardMode, OBS_DIM,
};
use checkpoint::{CheckpointError, CurveRow};
use gae::{compute_gae, normalize_advantages, RolloutBuffer};
use net::{cast, Adam, MlpCache, PolicyNet, LOG_STD_MAX, LOG_STD_MIN};
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Deserialize;
use std::collections::VecDeque;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PpoError {
    #[error("invalid train config: {field}: {reason}")]
    InvalidConfig { field: &'static str, reason: &'static str },
    #[error("non-finite observation in env {env} at step {step}: {detail}")]
    NonFiniteObservation { env: usize, step: usize, detail: String },
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
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
    /// Total environment-step budget; training stops at the first iteration
    /// boundary at or past it.
    pub total_env_steps: u64,
    pub seed: u64,
    pub hidden: Vec<usize>,
    pub curriculum_window: usize,
    /// Evaluate every this many iterations (None disables in-loop eval).
    pub eval_every: Option<usize>,
    pub eval_trials: usize,
    /// Stop early once an in-loop evaluation reaches this success rate.
    pub early_stop_success: Option<f64>,
    pub env: EnvConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            n_envs: 64,
            steps_per_env: 100,
            gamma: 0.99,
            gae_lambda: 0.95,
            clip_eps: 0.2,
            epochs: 5,
            minibatches: 4,
            learning_rate: 3e-4,
            entropy_coef: 0.005,
            value_coef: 0.5,
            max_grad_norm: 1.0,
            total_env_steps: 1_000_000,
            seed: 0,
            hidden: vec![128, 128],
            curriculum_window: 200,
            eval_every: None,
            eval_trials: 50,
            early_stop_success: None,
            env: EnvConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), PpoError> {
        let bad = |field, reason| Err(PpoError::InvalidConfig { field, reason });
        if self.n_envs == 0 || self.steps_per_env == 0 {
            return bad("n_envs", "envs and steps per env must be > 0");
        }
        if !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad("gamma", "gamma and lambda must lie in [0, 1]");
        }
        if self.epochs == 0 || self.minibatches == 0 {
            return bad("epochs", "epochs and minibatches must be > 0");
        }
        if !(self.learning_rate > 0.0) || !(self.clip_eps > 0.0) {
            return bad("learning_rate", "learning rate and clip must be > 0");
        }
        self.env.validate()?;
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        OBS_DIM * self.env.frame_stack
    }
}

/// Anything that can drive the arm through one episode.
pub trait PushPolicy {
    /// Called once per episode with the reset observation.
    fn begin_episode(&mut self, env: &PushEnv, first_obs: &Observation);
    /// Called once per control step with the newest observation.
    fn act(&mut self, env: &PushEnv, obs: &Observation) -> [f64; 6];
}

/// Frame-stacking wrapper that drives the arm with the deterministic policy
/// mean. Used for evaluation.
pub struct PolicyPusher<'a> {
    net: &'a PolicyNet<f32>,
    stack: Vec<f32>,
    k: usize,
}

impl<'a> PolicyPusher<'a> {
    pub fn new(net: &'a PolicyNet<f32>, frame_stack: usize) -> Self {
        PolicyPusher { net, stack: vec![0.0; OBS_DIM * frame_stack], k: frame_stack }
    }
}

fn push_frame(stack: &mut [f32], obs: &Observation) {
    stack.copy_within(OBS_DIM.., 0);
    let start = stack.len() - OBS_DIM;
    for (dst, src) in stack[start..].iter_mut().zip(obs.0.iter()) {
        *dst = *src as f32;
    }
}

fn fill_stack(stack: &mut [f32], obs: &Observation, k: usize) {
    for f in 0..k {
        for (dst, src) in stack[f * OBS_DIM..(f + 1) * OBS_DIM].iter_mut().zip(obs.0.iter()) {
            *dst = *src as f32;
        }
    }
}

impl PushPolicy for PolicyPusher<'_> {
    fn begin_episode(&mut self, _env: &PushEnv, first_obs: &Observation) {
        fill_stack(&mut self.stack, first_obs, self.k);
    }

    fn act(&mut self, _env: &PushEnv, obs: &Observation) -> [f64; 6] {
        push_frame(&mut self.stack, obs);
        let mu = self.net.actor.forward(&self.stack);
        let mut a = [0.0; 6];
        for (dst, m) in a.iter_mut().zip(mu.iter()) {
            *dst = (*m as f64).clamp(-1.0, 1.0);
        }
        a
    }
}

/// Outcome summary of one completed episode.
#[derive(Debug, Clone, Copy)]
pub struct EpisodeRecord {
    pub success: bool,
    pub cause: Cause,
    pub length: usize,
    pub episode_return: f64,
    pub final_dist: f64,
}

struct EnvWorker {
    index: usize,
    env: PushEnv,
    rng: ChaCha8Rng,
    stack: Vec<f32>,
    primed: bool,
    episode_return: f64,
    episode_len: usize,
}

struct WorkerColumn {
    obs: Vec<f32>,
    actions: Vec<f64>,
    log_probs: Vec<f64>,
    values: Vec<f64>,
    rewards: Vec<f64>,
    dones: Vec<bool>,
    terminals: Vec<bool>,
    next_values: Vec<f64>,
    episodes: Vec<EpisodeRecord>,
    audit: GatingAudit,
}

impl EnvWorker {
    fn horizontal_goal_dist(env: &PushEnv) -> f64 {
        let s = env.state();
        let dx = s.obj.pose.position.x - s.goal.x;
        let dy = s.obj.pose.position.y - s.goal.y;
        (dx * dx + dy * dy).sqrt()
    }

    fn reset(&mut self, curriculum: u8) -> Result<(), PpoError> {
        let seed = self.rng.gen::<u64>();
        let (_, obs) = self.env.reset(curriculum, seed);
        self.check_finite(&obs, 0)?;
        fill_stack(&mut self.stack, &obs, self.env.config.frame_stack);
        self.episode_return = 0.0;
        self.episode_len = 0;
        Ok(())
    }

    fn check_finite(&self, obs: &Observation, step: usize) -> Result<(), PpoError> {
        if let Some(slot) = obs.0.iter().position(|v| !v.is_finite()) {
            return Err(PpoError::NonFiniteObservation {
                env: self.index,
                step,
                detail: format!("slot {slot} = {}, state: {:?}", obs.0[slot], self.env.state()),
            });
        }
        Ok(())
    }

    fn value_of(net: &PolicyNet<f32>, stack: &[f32]) -> f64 {
        net.critic.forward(stack)[0] as f64
    }

    fn collect(
        &mut self,
        net: &PolicyNet<f32>,
        steps: usize,
        curriculum: u8,
    ) -> Result<WorkerColumn, PpoError> {
        let in_dim = self.stack.len();
        let act_dim = net.act_dim();
        let audit_gating = self.env.config.reward_mode == RewardMode::TwoStage;
        let mut col = WorkerColumn {
            obs: Vec::with_capacity(steps * in_dim),
            actions: Vec::with_capacity(steps * act_dim),
            log_probs: Vec::with_capacity(steps),
            values: Vec::with_capacity(steps),
            rewards: Vec::with_capacity(steps),
            dones: vec![false; steps],
            terminals: vec![false; steps],
            next_values: vec![0.0; steps],
            episodes: Vec::new(),
            audit: GatingAudit::default(),
        };
        if !self.primed {
            self.reset(curriculum)?;
            self.primed = true;
        }
        let stds: Vec<f64> = net.stds().iter().map(|s| *s as f64).collect();
        let log_stds: Vec<f64> = stds.iter().map(|s| s.ln()).collect();
        const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

        for t in 0..steps {
            col.obs.extend_from_slice(&self.stack);
            let mu = net.actor.forward(&self.stack);
            col.values.push(Self::value_of(net, &self.stack));

            let mut action = [0.0f64; 6];
            let mut logp = 0.0f64;
            for i in 0..act_dim {
                let z: f64 = self.rng.sample(StandardNormal);
                let a = mu[i] as f64 + stds[i] * z;
                action[i] = a;
                let u = (a - mu[i] as f64) / stds[i];
                logp += -0.5 * u * u - log_stds[i] - HALF_LN_2PI;
            }
            col.actions.extend_from_slice(&action[..act_dim]);
            col.log_probs.push(logp);

            let r = self.env.step(action);
            self.check_finite(&r.observation, t)?;
            col.rewards.push(r.reward_total);
            self.episode_return += r.reward_total;
            self.episode_len += 1;
            if audit_gating {
                col.audit.observe(self.env.state().reached_zone, &r.reward_terms, r.reward_total);
            }

            push_frame(&mut self.stack, &r.observation);
            if r.done {
                col.dones[t] = true;
                let truncated = matches!(r.cause, Cause::Success | Cause::Timeout);
                col.terminals[t] = !truncated;
                col.next_values[t] =
                    if truncated { Self::value_of(net, &self.stack) } else { 0.0 };
                col.episodes.push(EpisodeRecord {
                    success: r.cause == Cause::Success,
                    cause: r.cause,
                    length: self.episode_len,
                    episode_return: self.episode_return,
                    final_dist: Self::horizontal_goal_dist(&self.env),
                });
                self.reset(curriculum)?;
            } else if t == steps - 1 {
                col.next_values[t] = Self::value_of(net, &self.stack);
            }
        }
        Ok(col)
    }
}

/// Pool of independently-seeded environments.
pub struct EnvPool {
    workers: Vec<EnvWorker>,
    frame_stack: usize,
}

impl EnvPool {
    pub fn new(env_config: &EnvConfig, n_envs: usize, seed: u64) -> Result<Self, PpoError> {
        let mut workers = Vec::with_capacity(n_envs);
        for i in 0..n_envs {
            let env = PushEnv::new(env_config.clone())?;
            let stream_seed = seed.wrapping_add((i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            workers.push(EnvWorker {
                index: i,
                env,
                rng: ChaCha8Rng::seed_from_u64(stream_seed),
                stack: vec![0.0; OBS_DIM * env_config.frame_stack],
                primed: false,
                episode_return: 0.0,
                episode_len: 0,
            });
        }
        Ok(EnvPool { workers, frame_stack: env_config.frame_stack })
    }

    pub fn n_envs(&self) -> usize {
        self.workers.len()
    }

    /// Collects `steps` transitions from every environment. Results are
    /// merged in environment order, so they are independent of how the
    /// per-env work is scheduled.
    pub fn collect(
        &mut self,
        net: &PolicyNet<f32>,
        steps: usize,
        curriculum: u8,
    ) -> Result<(RolloutBuffer, Vec<EpisodeRecord>, GatingAudit), PpoError> {
        let columns: Vec<WorkerColumn> = self
            .workers
            .par_iter_mut()
            .map(|w| w.collect(net, steps, curriculum))
            .collect::<Result<Vec<_>, _>>()?;

        let in_dim = OBS_DIM * self.frame_stack;
        let act_dim = 6;
        let mut buffer = RolloutBuffer::new(self.workers.len(), steps, in_dim, act_dim);
        let mut episodes = Vec::new();
        let mut audit = GatingAudit::default();
        for (e, col) in columns.into_iter().enumerate() {
            let b = e * steps;
            buffer.obs[b * in_dim..(b + steps) * in_dim].copy_from_slice(&col.obs);
            buffer.actions[b * act_dim..(b + steps) * act_dim].copy_from_slice(&col.actions);
            buffer.log_probs[b..b + steps].copy_from_slice(&col.log_probs);
            buffer.values[b..b + steps].copy_from_slice(&col.values);
            buffer.rewards[b..b + steps].copy_from_slice(&col.rewards);
            buffer.dones[b..b + steps].copy_from_slice(&col.dones);
            buffer.terminals[b..b + steps].copy_from_slice(&col.terminals);
            buffer.next_values[b..b + steps].copy_from_slice(&col.next_values);
            episodes.extend(col.episodes);
            audit.merge(&col.audit);
        }
        Ok((buffer, episodes, audit))
    }
}

/// Log-probability of an action under the policy's diagonal Gaussian,
/// computed in the network's own float width.
pub fn action_log_prob<T: Float>(net: &PolicyNet<T>, x: &[T], action: &[T]) -> T {
    let mu = net.actor.forward(x);
    let half_ln_2pi: T = cast(0.918_938_533_204_672_7);
    let mut logp = T::zero();
    for i in 0..net.act_dim() {
        let ls = net.log_std[i].max(cast(LOG_STD_MIN)).min(cast(LOG_STD_MAX));
        let std = ls.exp();
        let u = (action[i] - mu[i]) / std;
        logp = logp - cast::<T>(0.5) * u * u - ls - half_ln_2pi;
    }
    logp
}

#[derive(Debug, Clone, Copy, Default)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub nonfinite_skips: usize,
}

/// Loss (and optionally gradients) over one minibatch. The same generic body
/// serves the f32 production path and the f64 finite-difference checks.
fn minibatch_eval<T: Float>(
    net: &PolicyNet<T>,
    buffer: &RolloutBuffer,
    idx: &[usize],
    clip_eps: f64,
    entropy_coef: f64,
    value_coef: f64,
    mut grad: Option<&mut PolicyNet<T>>,
) -> (f64, UpdateStats) {
    let b = idx.len().max(1) as f64;
    let inv_b: T = cast(1.0 / b);
    let eps_lo: T = cast(1.0 - clip_eps);
    let eps_hi: T = cast(1.0 + clip_eps);
    let half_ln_2pi: T = cast(0.918_938_533_204_672_7);
    let act_dim = net.act_dim();

    // Clamped log-stds; parameters at the clamp boundary stop receiving
    // gradient through sigma.
    let mut log_stds = vec![T::zero(); act_dim];
    let mut stds = vec![T::zero(); act_dim];
    let mut interior = vec![false; act_dim];
    for i in 0..act_dim {
        let raw = net.log_std[i];
        let c = raw.max(cast(LOG_STD_MIN)).min(cast(LOG_STD_MAX));
        log_stds[i] = c;
        stds[i] = c.exp();
        interior[i] = raw > cast(LOG_STD_MIN) && raw < cast(LOG_STD_MAX);
    }

    let mut pg_loss = T::zero();
    let mut v_loss = T::zero();
    let mut clipped = 0usize;
    let mut actor_cache = MlpCache::default();
    let mut critic_cache = MlpCache::default();
    let mut x = vec![T::zero(); buffer.in_dim];
    let mut d_log_std = vec![T::zero(); act_dim];

    for &i in idx {
        for (dst, src) in x.iter_mut().zip(buffer.obs_at(i).iter()) {
            *dst = cast(*src as f64);
        }
        let adv: T = cast(buffer.advantages[i]);
        let ret: T = cast(buffer.returns[i]);
        let logp_old: T = cast(buffer.log_probs[i]);
        let action = buffer.action_at(i);

        let mu = net.actor.forward_cached(&x, &mut actor_cache);
        let mut logp = T::zero();
        for k in 0..act_dim {
            let u = (cast::<T>(action[k]) - mu[k]) / stds[k];
            logp = logp - cast::<T>(0.5) * u * u - log_stds[k] - half_ln_2pi;
        }
        let ratio = (logp - logp_old).exp();
        let clipped_ratio = ratio.max(eps_lo).min(eps_hi);
        let u1 = ratio * adv;
        let u2 = clipped_ratio * adv;
        let surr = u1.min(u2);
        debug_assert!(surr <= u1.max(u2) + T::epsilon(), "surrogate exceeds its bound");
        pg_loss = pg_loss - surr;
        if ratio < eps_lo || ratio > eps_hi {
            clipped += 1;
        }

        let v = net.critic.forward_cached(&x, &mut critic_cache)[0];
        let verr = v - ret;
        v_loss = v_loss + verr * verr;

        if let Some(g) = grad.as_deref_mut() {
            // d(-surr)/d(ratio): the clipped branch has zero slope.
            let d_ratio = if u1 <= u2 { adv } else { T::zero() };
            let coef = -inv_b * d_ratio * ratio;
            let mut d_mu = vec![T::zero(); act_dim];
            for k in 0..act_dim {
                let diff = cast::<T>(action[k]) - mu[k];
                let inv_var = T::one() / (stds[k] * stds[k]);
                d_mu[k] = coef * diff * inv_var;
                if interior[k] {
                    let u2k = diff * diff * inv_var;
                    d_log_std[k] = d_log_std[k] + coef * (u2k - T::one());
                }
            }
            net.actor.backward(&actor_cache, &d_mu, &mut g.actor);
            let dv = cast::<T>(2.0 * value_coef) * inv_b * verr;
            net.critic.backward(&critic_cache, &[dv], &mut g.critic);
        }
    }

    // Entropy of the state-independent Gaussian head enters once.
    let mut entropy = T::zero();
    for k in 0..act_dim {
        entropy = entropy + log_stds[k] + cast(0.5 * (1.0 + std::f64::consts::TAU.ln()));
    }
    if let Some(g) = grad.as_deref_mut() {
        for k in 0..act_dim {
            if interior[k] {
                g.log_std[k] = g.log_std[k] + d_log_std[k] - cast(entropy_coef);
            }
        }
    }

    let pg = pg_loss.to_f64().expect("finite") / b;
    let vl = v_loss.to_f64().expect("finite") / b;
    let ent = entropy.to_f64().expect("finite");
    let total = pg + value_coef * vl - entropy_coef * ent;
    (
        total,
        UpdateStats {
            policy_loss: pg,
            value_loss: vl,
            entropy: ent,
            clip_fraction: clipped as f64 / b,
            nonfinite_skips: 0,
        },
    )
}

/// One PPO update over the buffer: `epochs` passes, each split into
/// deterministic shuffled minibatches. Returns averaged statistics.
pub fn ppo_update(
    net: &mut PolicyNet<f32>,
    adam: &mut Adam,
    buffer: &RolloutBuffer,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
    lr: f64,
) -> UpdateStats {
    let n = buffer.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mb = n.div_ceil(cfg.minibatches);
    let mut stats = UpdateStats::default();
    let mut batches = 0usize;
    let mut params: Vec<f32> = Vec::with_capacity(net.n_params());
    let mut flat_grads: Vec<f32> = Vec::with_capacity(net.n_params());

    for _ in 0..cfg.epochs {
        // Fisher-Yates with the trainer stream keeps updates reproducible.
        for i in (1..n).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }
        for chunk in order.chunks(mb) {
            let mut grad = net.zeros_like();
            let (total, s) = minibatch_eval(
                net,
                buffer,
                chunk,
                cfg.clip_eps,
                cfg.entropy_coef,
                cfg.value_coef,
                Some(&mut grad),
            );
            if !total.is_finite() {
                stats.nonfinite_skips += 1;
                continue;
            }
            grad.flatten(&mut flat_grads);
            let norm =
                flat_grads.iter().map(|g| (*g as f64) * (*g as f64)).sum::<f64>().sqrt();
            if norm > cfg.max_grad_norm {
                let scale = (cfg.max_grad_norm / norm) as f32;
                for g in flat_grads.iter_mut() {
                    *g *= scale;
                }
            }
            net.flatten(&mut params);
            adam.step(&mut params, &flat_grads, lr);
            net.unflatten(&params);
            debug_assert!(net.all_finite(), "non-finite weights after update");

            stats.policy_loss += s.policy_loss;
            stats.value_loss += s.value_loss;
            stats.entropy += s.entropy;
            stats.clip_fraction += s.clip_fraction;
            batches += 1;
        }
    }
    if batches > 0 {
        let inv = 1.0 / batches as f64;
        stats.policy_loss *= inv;
        stats.value_loss *= inv;
        stats.entropy *= inv;
        stats.clip_fraction *= inv;
    }
    stats
}

#[derive(Debug, Clone, Copy)]
pub struct EvalReport {
    pub n_trials: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub mean_steps: f64,
    pub mean_final_dist: f64,
    pub mean_return: f64,
}

/// Rolls `n_trials` episodes against the goal at the given curriculum index
/// (3 = full goal) and reports the success rate. Trials are seeded
/// `seed_base + trial`.
pub fn evaluate_policy(
    pusher: &mut dyn PushPolicy,
    env_config: &EnvConfig,
    curriculum: u8,
    n_trials: usize,
    seed_base: u64,
) -> Result<EvalReport, PpoError> {
    evaluate_policy_with_goals(pusher, env_config, curriculum, n_trials, seed_base, &[])
}

/// Benchmark-protocol evaluation: trial `i` overrides the sampled goal with
/// `goals[i % goals.len()]` (object spawn randomization is kept). An empty
/// goal list reproduces [`evaluate_policy`].
pub fn evaluate_policy_with_goals(
    pusher: &mut dyn PushPolicy,
    env_config: &EnvConfig,
    curriculum: u8,
    n_trials: usize,
    seed_base: u64,
    goals: &[nalgebra::Vector2<f64>],
) -> Result<EvalReport, PpoError> {
    let mut env = PushEnv::new(env_config.clone())?;
    let mut successes = 0usize;
    let mut steps_sum = 0usize;
    let mut dist_sum = 0.0f64;
    let mut return_sum = 0.0f64;
    for trial in 0..n_trials {
        let (_, mut obs) = env.reset(curriculum, seed_base + trial as u64);
        if !goals.is_empty() {
            let obj_pose = env.state().obj.pose;
            obs = env.place_object_and_goal(obj_pose, goals[trial % goals.len()]);
        }
        pusher.begin_episode(&env, &obs);
        let mut cause = Cause::Timeout;
        for _ in 0..env.config.horizon {
            let a = pusher.act(&env, &obs);
            let r = env.step(a);
            obs = r.observation;
            return_sum += r.reward_total;
            if r.done {
                cause = r.cause;
                break;
            }
        }
        if cause == Cause::Success {
            successes += 1;
        }
        steps_sum += env.state().step;
        dist_sum += EnvWorker::horizontal_goal_dist(&env);
    }
    let n = n_trials.max(1) as f64;
    Ok(EvalReport {
        n_trials,
        successes,
        success_rate: successes as f64 / n,
        mean_steps: steps_sum as f64 / n,
        mean_final_dist: dist_sum / n,
        mean_return: return_sum / n,
    })
}

#[derive(Debug)]
pub struct TrainResult {
    pub policy: PolicyNet<f32>,
    pub curve: Vec<CurveRow>,
    pub audit: GatingAudit,
    pub env_steps: u64,
    pub final_curriculum: u8,
    /// Success rate over the most recent 100 completed training episodes.
    pub rolling_success: f64,
    pub stopped_early: bool,
    pub nonfinite_skips: usize,
}

pub fn train(cfg: &TrainConfig) -> Result<TrainResult, PpoError> {
    train_with_callback(cfg, |_| {})
}

/// Full training loop; the callback sees each finished curve row.
pub fn train_with_callback(
    cfg: &TrainConfig,
    mut on_iteration: impl FnMut(&CurveRow),
) -> Result<TrainResult, PpoError> {
    cfg.validate()?;
    let reward_mode = match cfg.env.reward_mode {
        RewardMode::TwoStage => "two_stage",
        RewardMode::Baseline1AllOn => "baseline1_all_on",
        RewardMode::Baseline2TaskOnly => "baseline2_task_only",
    };
    let mut policy = PolicyNet::<f32>::new(cfg.input_dim(), 6, &cfg.hidden, cfg.seed);
    let mut adam = Adam::new(policy.n_params());
    let mut pool = EnvPool::new(&cfg.env, cfg.n_envs, cfg.seed.wrapping_add(1))?;
    let mut update_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(2));
    let mut window = crate::pushenv::CurriculumWindow::new(cfg.curriculum_window);
    let mut rolling: VecDeque<bool> = VecDeque::with_capacity(101);
    let mut curriculum: u8 = 1;
    let mut curve = Vec::new();
    let mut audit = GatingAudit::default();
    let mut env_steps: u64 = 0;
    let mut iteration = 0usize;
    let mut lr = cfg.learning_rate;
    let mut stopped_early = false;
    let mut nonfinite_skips = 0usize;

    while env_steps < cfg.total_env_steps {
        let (mut buffer, episodes, iter_audit) =
            pool.collect(&policy, cfg.steps_per_env, curriculum)?;
        env_steps += buffer.len() as u64;
        audit.merge(&iter_audit);

        compute_gae(&mut buffer, cfg.gamma, cfg.gae_lambda);
        normalize_advantages(&mut buffer);
        let stats = ppo_update(&mut policy, &mut adam, &buffer, cfg, &mut update_rng, lr);
        if stats.nonfinite_skips > 0 {
            nonfinite_skips += stats.nonfinite_skips;
            lr *= 0.5;
        }

        let mut succ = 0usize;
        for ep in &episodes {
            window.record(ep.success);
            rolling.push_back(ep.success);
            while rolling.len() > 100 {
                rolling.pop_front();
            }
            if ep.success {
                succ += 1;
            }
        }
        let success_rate =
            if episodes.is_empty() { 0.0 } else { succ as f64 / episodes.len() as f64 };
        let rolling_success = if rolling.is_empty() {
            0.0
        } else {
            rolling.iter().filter(|s| **s).count() as f64 / rolling.len() as f64
        };
        let mean_reward = buffer.rewards.iter().sum::<f64>() / buffer.len() as f64;

        let row = CurveRow {
            iteration,
            env_steps,
            mean_reward,
            success_rate,
            rolling_success,
            curriculum_index: curriculum,
            reward_mode,
            policy_loss: stats.policy_loss,
            value_loss: stats.value_loss,
            entropy: stats.entropy,
        };
        on_iteration(&row);
        curve.push(row);

        if curriculum < 3 && window.should_advance() {
            curriculum += 1;
            window.clear();
        }

        iteration += 1;
        if let (Some(every), Some(threshold)) = (cfg.eval_every, cfg.early_stop_success) {
            if every > 0 && iteration % every == 0 {
                let mut pusher = PolicyPusher::new(&policy, cfg.env.frame_stack);
                let report = evaluate_policy(
                    &mut pusher,
                    &cfg.env,
                    3,
                    cfg.eval_trials,
                    cfg.seed.wrapping_add(0xE7A1),
                )?;
                if report.success_rate >= threshold {
                    stopped_early = true;
                    break;
                }
            }
        }
    }

    let rolling_success = if rolling.is_empty() {
        0.0
    } else {
        rolling.iter().filter(|s| **s).count() as f64 / rolling.len() as f64
    };
    Ok(TrainResult {
        policy,
        curve,
        audit,
        env_steps,
        final_curriculum: curriculum,
        rolling_success,
        stopped_early,
        nonfinite_skips,
    })
}
