//! Tiny feedforward actor-critic with manual forward/backward passes.
//!
//! All math is generic over the float type: production runs in f32, while
//! gradient-verification tests instantiate the identical code at f64 and
//! compare against central finite differences.

use num_traits::Float;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Log-std clamp range for the diagonal Gaussian policy.
pub const LOG_STD_MIN: f64 = -4.0;
pub const LOG_STD_MAX: f64 = 1.0;

pub fn cast<T: Float>(x: f64) -> T {
    T::from(x).expect("float cast")
}

/// One dense layer, row-major weights.
#[derive(Debug, Clone)]
pub struct Dense<T> {
    pub in_dim: usize,
    pub out_dim: usize,
    pub w: Vec<T>,
    pub b: Vec<T>,
}

impl<T: Float> Dense<T> {
    fn xavier(in_dim: usize, out_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let w = (0..in_dim * out_dim)
            .map(|_| cast(rng.gen_range(-limit..limit)))
            .collect();
        Dense { in_dim, out_dim, w, b: vec![T::zero(); out_dim] }
    }

    fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Dense { in_dim, out_dim, w: vec![T::zero(); in_dim * out_dim], b: vec![T::zero(); out_dim] }
    }

    /// out = W x + b with a fixed four-accumulator summation order, so the
    /// result is identical across platforms and optimization levels.
    fn forward(&self, x: &[T], out: &mut [T]) {
        debug_assert_eq!(x.len(), self.in_dim);
        debug_assert_eq!(out.len(), self.out_dim);
        let n = self.in_dim;
        let chunks = n / 4;
        for (o, out_v) in out.iter_mut().enumerate() {
            let row = &self.w[o * n..(o + 1) * n];
            let mut a0 = T::zero();
            let mut a1 = T::zero();
            let mut a2 = T::zero();
            let mut a3 = T::zero();
            for c in 0..chunks {
                let i = c * 4;
                a0 = a0 + row[i] * x[i];
                a1 = a1 + row[i + 1] * x[i + 1];
                a2 = a2 + row[i + 2] * x[i + 2];
                a3 = a3 + row[i + 3] * x[i + 3];
            }
            let mut s = (a0 + a1) + (a2 + a3);
            for i in chunks * 4..n {
                s = s + row[i] * x[i];
            }
            *out_v = s + self.b[o];
        }
    }
}

/// Multi-layer perceptron: tanh between layers, linear output.
#[derive(Debug, Clone)]
pub struct Mlp<T> {
    pub layers: Vec<Dense<T>>,
}

/// Post-activation values per layer; `acts[0]` is the input.
#[derive(Debug, Clone)]
pub struct MlpCache<T> {
    pub acts: Vec<Vec<T>>,
}

impl<T> Default for MlpCache<T> {
    fn default() -> Self {
        MlpCache { acts: Vec::new() }
    }
}

impl<T: Float> Mlp<T> {
    pub fn new(dims: &[usize], rng: &mut ChaCha8Rng) -> Self {
        assert!(dims.len() >= 2, "mlp needs input and output dims");
        let layers = dims.windows(2).map(|d| Dense::xavier(d[0], d[1], rng)).collect();
        Mlp { layers }
    }

    pub fn zeros_like(&self) -> Self {
        Mlp {
            layers: self
                .layers
                .iter()
                .map(|l| Dense::zeros(l.in_dim, l.out_dim))
                .collect(),
        }
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d: Vec<usize> = self.layers.iter().map(|l| l.in_dim).collect();
        d.push(self.layers.last().expect("nonempty mlp").out_dim);
        d
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().expect("nonempty mlp").out_dim
    }

    pub fn forward(&self, x: &[T]) -> Vec<T> {
        let mut cur = x.to_vec();
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let mut out = vec![T::zero(); layer.out_dim];
            layer.forward(&cur, &mut out);
            if l != last {
                for v in out.iter_mut() {
                    *v = v.tanh();
                }
            }
            cur = out;
        }
        cur
    }

    /// Forward pass keeping every post-activation for the backward pass.
    pub fn forward_cached(&self, x: &[T], cache: &mut MlpCache<T>) -> Vec<T> {
        cache.acts.clear();
        cache.acts.push(x.to_vec());
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let mut out = vec![T::zero(); layer.out_dim];
            layer.forward(cache.acts.last().expect("input present"), &mut out);
            if l != last {
                for v in out.iter_mut() {
                    *v = v.tanh();
                }
            }
            cache.acts.push(out);
        }
        cache.acts.last().expect("output present").clone()
    }

    /// Accumulates parameter gradients for one sample into `grad` and
    /// returns the gradient with respect to the input.
    pub fn backward(&self, cache: &MlpCache<T>, dout: &[T], grad: &mut Mlp<T>) -> Vec<T> {
        let mut dz = dout.to_vec();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let g = &mut grad.layers[l];
            let a_prev = &cache.acts[l];
            for o in 0..layer.out_dim {
                let d = dz[o];
                g.b[o] = g.b[o] + d;
                let row = &mut g.w[o * layer.in_dim..(o + 1) * layer.in_dim];
                for (gw, ap) in row.iter_mut().zip(a_prev.iter()) {
                    *gw = *gw + d * *ap;
                }
            }
            let mut da = vec![T::zero(); layer.in_dim];
            for o in 0..layer.out_dim {
                let d = dz[o];
                let row = &layer.w[o * layer.in_dim..(o + 1) * layer.in_dim];
                for (dv, wv) in da.iter_mut().zip(row.iter()) {
                    *dv = *dv + *wv * d;
                }
            }
            if l > 0 {
                // Upstream layer ends in tanh: tanh'(z) = 1 - a^2.
                let a = &cache.acts[l];
                debug_assert_eq!(a.len(), layer.in_dim);
                for (dv, av) in da.iter_mut().zip(a.iter()) {
                    *dv = *dv * (T::one() - *av * *av);
                }
            }
            dz = da;
        }
        dz
    }
}

impl Mlp<f32> {
    /// Bit-exact parameter snapshot, for change-detection tests.
    pub fn flatten_bits(&self, out: &mut Vec<u32>) {
        out.clear();
        for l in &self.layers {
            out.extend(l.w.iter().map(|v| v.to_bits()));
            out.extend(l.b.iter().map(|v| v.to_bits()));
        }
    }
}

/// Actor-critic parameter set: independent actor and critic MLPs plus
/// state-independent log-std for the diagonal Gaussian head.
#[derive(Debug, Clone)]
pub struct PolicyNet<T> {
    pub actor: Mlp<T>,
    pub log_std: Vec<T>,
    pub critic: Mlp<T>,
}

impl<T: Float> PolicyNet<T> {
    /// Fresh network: `in_dim` is the stacked observation length.
    pub fn new(in_dim: usize, act_dim: usize, hidden: &[usize], seed: u64) -> Self {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut actor_dims = vec![in_dim];
        actor_dims.extend_from_slice(hidden);
        actor_dims.push(act_dim);
        let mut critic_dims = vec![in_dim];
        critic_dims.extend_from_slice(hidden);
        critic_dims.push(1);
        PolicyNet {
            actor: Mlp::new(&actor_dims, &mut rng),
            log_std: vec![cast(-0.5); act_dim],
            critic: Mlp::new(&critic_dims, &mut rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        PolicyNet {
            actor: self.actor.zeros_like(),
            log_std: vec![T::zero(); self.log_std.len()],
            critic: self.critic.zeros_like(),
        }
    }

    pub fn act_dim(&self) -> usize {
        self.log_std.len()
    }

    /// Clamped per-dimension standard deviations.
    pub fn stds(&self) -> Vec<T> {
        self.log_std
            .iter()
            .map(|ls| {
                let c = ls.max(cast(LOG_STD_MIN)).min(cast(LOG_STD_MAX));
                c.exp()
            })
            .collect()
    }

    pub fn n_params(&self) -> usize {
        let mlp = |m: &Mlp<T>| m.layers.iter().map(|l| l.w.len() + l.b.len()).sum::<usize>();
        mlp(&self.actor) + self.log_std.len() + mlp(&self.critic)
    }

    /// Flattens every parameter in a fixed order: actor layers (weights then
    /// bias), log-std, critic layers.
    pub fn flatten(&self, out: &mut Vec<T>) {
        out.clear();
        for l in &self.actor.layers {
            out.extend_from_slice(&l.w);
            out.extend_from_slice(&l.b);
        }
        out.extend_from_slice(&self.log_std);
        for l in &self.critic.layers {
            out.extend_from_slice(&l.w);
            out.extend_from_slice(&l.b);
        }
    }

    /// Inverse of [`flatten`](Self::flatten).
    pub fn unflatten(&mut self, src: &[T]) {
        assert_eq!(src.len(), self.n_params(), "parameter count mismatch");
        let mut i = 0;
        let take = |dst: &mut [T], i: &mut usize| {
            dst.copy_from_slice(&src[*i..*i + dst.len()]);
            *i += dst.len();
        };
        for l in &mut self.actor.layers {
            take(&mut l.w, &mut i);
            take(&mut l.b, &mut i);
        }
        take(&mut self.log_std, &mut i);
        for l in &mut self.critic.layers {
            take(&mut l.w, &mut i);
            take(&mut l.b, &mut i);
        }
    }

    pub fn all_finite(&self) -> bool {
        let mut buf = Vec::new();
        self.flatten(&mut buf);
        buf.iter().all(|v| v.is_finite())
    }

    /// Casts every parameter to another float width (used by the f64
    /// gradient-verification path).
    pub fn cast_to<U: Float>(&self) -> PolicyNet<U> {
        let conv_mlp = |m: &Mlp<T>| Mlp {
            layers: m
                .layers
                .iter()
                .map(|l| Dense {
                    in_dim: l.in_dim,
                    out_dim: l.out_dim,
                    w: l.w.iter().map(|v| cast(v.to_f64().expect("finite"))).collect(),
                    b: l.b.iter().map(|v| cast(v.to_f64().expect("finite"))).collect(),
                })
                .collect(),
        };
        PolicyNet {
            actor: conv_mlp(&self.actor),
            log_std: self
                .log_std
                .iter()
                .map(|v| cast(v.to_f64().expect("finite")))
                .collect(),
            critic: conv_mlp(&self.critic),
        }
    }
}

/// Adam with f64 moment estimates, applied to the flattened parameter vector.
#[derive(Debug, Clone)]
pub struct Adam {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(n_params: usize) -> Self {
        Adam { m: vec![0.0; n_params], v: vec![0.0; n_params], t: 0, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    /// One update step; `grads` and `params` share the flattening order.
    pub fn step<T: Float>(&mut self, params: &mut [T], grads: &[T], lr: f64) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.t += 1;
        let b1t = 1.0 - self.beta1.powi(self.t as i32);
        let b2t = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i].to_f64().expect("finite gradient");
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mh = self.m[i] / b1t;
            let vh = self.v[i] / b2t;
            let p = params[i].to_f64().expect("finite parameter");
            params[i] = cast(p - lr * mh / (vh.sqrt() + self.eps));
        }
    }
}
