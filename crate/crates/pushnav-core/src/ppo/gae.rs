//! Rollout storage and generalized advantage estimation.

/// Flat rollout storage, indexed `env * steps + t`. Observations are the
/// stacked policy inputs as fed to the network.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutBuffer {
    pub n_envs: usize,
    pub steps: usize,
    pub in_dim: usize,
    pub act_dim: usize,
    pub obs: Vec<f32>,
    pub actions: Vec<f64>,
    pub log_probs: Vec<f64>,
    pub values: Vec<f64>,
    pub rewards: Vec<f64>,
    /// Episode ended at this step (any cause).
    pub dones: Vec<bool>,
    /// Episode ended in a true terminal state (no future value). Successful
    /// and timed-out episodes are treated as truncations instead: the value
    /// function still bootstraps through them.
    pub terminals: Vec<bool>,
    /// Bootstrap value: for done steps, V of the pre-reset successor state
    /// (zero when terminal); for the final step of each env stream, V of the
    /// state the rollout stopped in. Interior non-done entries are unused.
    pub next_values: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl RolloutBuffer {
    pub fn new(n_envs: usize, steps: usize, in_dim: usize, act_dim: usize) -> Self {
        let n = n_envs * steps;
        RolloutBuffer {
            n_envs,
            steps,
            in_dim,
            act_dim,
            obs: vec![0.0; n * in_dim],
            actions: vec![0.0; n * act_dim],
            log_probs: vec![0.0; n],
            values: vec![0.0; n],
            rewards: vec![0.0; n],
            dones: vec![false; n],
            terminals: vec![false; n],
            next_values: vec![0.0; n],
            advantages: vec![0.0; n],
            returns: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.n_envs * self.steps
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn obs_at(&self, i: usize) -> &[f32] {
        &self.obs[i * self.in_dim..(i + 1) * self.in_dim]
    }

    pub fn action_at(&self, i: usize) -> &[f64] {
        &self.actions[i * self.act_dim..(i + 1) * self.act_dim]
    }
}

/// Fills `advantages` and `returns`.
///
/// delta_t = r_t + gamma * V(s_{t+1}) * mask - V(s_t), where the mask removes
/// the successor value only at true terminal states; episode boundaries of
/// any kind stop the lambda recursion. Returns are advantages plus values,
/// computed before any normalization.
pub fn compute_gae(buffer: &mut RolloutBuffer, gamma: f64, lambda: f64) {
    for env in 0..buffer.n_envs {
        let base = env * buffer.steps;
        let mut a_next = 0.0f64;
        for t in (0..buffer.steps).rev() {
            let i = base + t;
            let next_v = if buffer.terminals[i] {
                0.0
            } else if buffer.dones[i] || t == buffer.steps - 1 {
                buffer.next_values[i]
            } else {
                buffer.values[i + 1]
            };
            let delta = buffer.rewards[i] + gamma * next_v - buffer.values[i];
            let cont = if buffer.dones[i] { 0.0 } else { 1.0 };
            let a = delta + gamma * lambda * cont * a_next;
            buffer.advantages[i] = a;
            buffer.returns[i] = a + buffer.values[i];
            a_next = a;
        }
    }
}

/// Normalizes advantages in place to zero mean and unit variance.
pub fn normalize_advantages(buffer: &mut RolloutBuffer) {
    let n = buffer.advantages.len();
    if n == 0 {
        return;
    }
    let mean = buffer.advantages.iter().sum::<f64>() / n as f64;
    let var =
        buffer.advantages.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n as f64;
    let std = var.sqrt();
    for a in buffer.advantages.iter_mut() {
        *a = (*a - mean) / (std + 1e-8);
    }
}
