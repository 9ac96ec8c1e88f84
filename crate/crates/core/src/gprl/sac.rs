//! Soft actor-critic with twin critics, Polyak targets and an externally
//! scheduled temperature.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::nn::{
    clamp_log_std, gaussian_policy_sample, log_tanh_jacobian, mse, Activation, AdamConfig, Network, OptimizerState,
    SquashedSample, LOG_STD_MAX, LOG_STD_MIN,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SacConfig {
    pub hidden: Vec<usize>,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub gamma: f64,
    pub tau: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub initial_temperature: f64,
    /// Multiplicative temperature decay applied once per episode.
    pub temperature_decay: f64,
    pub temperature_floor: f64,
    /// Initial bias of the actor's log standard deviation outputs.
    pub initial_log_std: f64,
}

impl Default for SacConfig {
    fn default() -> Self {
        Self {
            hidden: vec![256, 256],
            actor_lr: 3e-4,
            critic_lr: 3e-4,
            gamma: 0.99,
            tau: 0.005,
            batch_size: 256,
            buffer_capacity: 100_000,
            initial_temperature: 0.05,
            temperature_decay: 0.999,
            temperature_floor: 0.01,
            initial_log_std: -2.5,
        }
    }
}

impl SacConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.actor_lr > 0.0
            && self.critic_lr > 0.0
            && (0.0..=1.0).contains(&self.gamma)
            && self.tau > 0.0
            && self.tau <= 1.0
            && self.batch_size > 0
            && self.buffer_capacity >= self.batch_size
            && self.initial_temperature >= 0.0
            && self.temperature_decay > 0.0
            && self.temperature_decay <= 1.0
            && self.temperature_floor >= 0.0
            && (LOG_STD_MIN..=LOG_STD_MAX).contains(&self.initial_log_std)
            && !self.hidden.contains(&0);
        if !ok {
            return Err(invalid(format!("invalid SAC configuration {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: Vec<f64>,
    /// Squashed action in `(−1, 1)`.
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub done: bool,
}

/// Fixed-capacity FIFO transition store with uniform sampling.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(invalid("replay capacity must be positive"));
        }
        Ok(Self {
            capacity,
            items: Vec::with_capacity(capacity.min(1 << 16)),
            next: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Stores a transition, evicting the oldest one when full.
    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    /// Oldest to newest.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        let split = if self.items.len() < self.capacity { 0 } else { self.next };
        self.items[split..].iter().chain(&self.items[..split])
    }

    /// Uniform draw with replacement.
    pub fn sample<R: Rng>(&self, batch: usize, rng: &mut R) -> Vec<&Transition> {
        (0..batch).map(|_| &self.items[rng.random_range(0..self.items.len())]).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub critic_loss: [f64; 2],
    pub actor_loss: f64,
    pub mean_log_prob: f64,
    /// Set when a non-finite value forced the update to be undone.
    pub reverted: bool,
}

#[derive(Debug, Clone)]
pub struct SacAgent {
    pub config: SacConfig,
    pub actor: Network,
    pub critics: [Network; 2],
    pub targets: [Network; 2],
    actor_opt: OptimizerState,
    critic_opts: [OptimizerState; 2],
    pub temperature: f64,
    state_dim: usize,
    action_dim: usize,
}

/// Network parameters that make up a restorable checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentSnapshot {
    pub actor: Network,
    pub critics: [Network; 2],
    pub targets: [Network; 2],
}

fn concat_columns(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(a.nrows(), a.ncols() + b.ncols());
    out.columns_mut(0, a.ncols()).copy_from(a);
    out.columns_mut(a.ncols(), b.ncols()).copy_from(b);
    out
}

fn rows_matrix<'a>(rows: impl Iterator<Item = &'a Vec<f64>>, n: usize, d: usize) -> DMatrix<f64> {
    let flat: Vec<f64> = rows.flat_map(|r| r.iter().copied()).collect();
    DMatrix::from_row_slice(n, d, &flat)
}

impl SacAgent {
    pub fn new<R: Rng>(state_dim: usize, action_dim: usize, config: SacConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut actor_sizes = vec![state_dim];
        actor_sizes.extend(&config.hidden);
        actor_sizes.push(2 * action_dim);
        let mut critic_sizes = vec![state_dim + action_dim];
        critic_sizes.extend(&config.hidden);
        critic_sizes.push(1);
        let mut actor = Network::new(&actor_sizes, Activation::Relu, Activation::Linear, rng)?;
        let head = actor.layers_mut().last_mut().expect("actor has layers");
        for k in action_dim..2 * action_dim {
            head.biases[k] = config.initial_log_std;
        }
        let critics = [
            Network::new(&critic_sizes, Activation::Relu, Activation::Linear, rng)?,
            Network::new(&critic_sizes, Activation::Relu, Activation::Linear, rng)?,
        ];
        let adam = |lr| AdamConfig {
            learning_rate: lr,
            ..AdamConfig::default()
        };
        Ok(Self {
            actor_opt: OptimizerState::new(&actor, adam(config.actor_lr)),
            critic_opts: [
                OptimizerState::new(&critics[0], adam(config.critic_lr)),
                OptimizerState::new(&critics[1], adam(config.critic_lr)),
            ],
            targets: critics.clone(),
            critics,
            actor,
            temperature: config.initial_temperature,
            config,
            state_dim,
            action_dim,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    /// Mean and clamped log standard deviation of the pre-squash Gaussian.
    pub fn distribution(&self, state: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let out = self.actor.forward(state)?;
        let (m, ls) = out.split_at(self.action_dim);
        Ok((m.to_vec(), ls.iter().map(|v| clamp_log_std(*v)).collect()))
    }

    pub fn act<R: Rng>(&self, state: &[f64], rng: &mut R) -> Result<SquashedSample> {
        let (m, ls) = self.distribution(state)?;
        Ok(gaussian_policy_sample(&m, &ls, rng))
    }

    /// `tanh(mean)`, used at evaluation.
    pub fn act_deterministic(&self, state: &[f64]) -> Result<Vec<f64>> {
        deterministic_action(&self.actor, state, self.action_dim)
    }

    /// One temperature decay step, never below the floor.
    pub fn anneal(&mut self) {
        let next = self.temperature * self.config.temperature_decay;
        self.temperature = next.max(self.config.temperature_floor).min(self.temperature);
    }

    pub fn snapshot(&self) -> AgentSnapshot {
        AgentSnapshot {
            actor: self.actor.clone(),
            critics: self.critics.clone(),
            targets: self.targets.clone(),
        }
    }

    pub fn restore(&mut self, s: &AgentSnapshot) {
        self.actor = s.actor.clone();
        self.critics = s.critics.clone();
        self.targets = s.targets.clone();
    }

    /// Twin-critic TD step, reparameterised actor step, Polyak target update.
    pub fn update<R: Rng>(&mut self, batch: &[&Transition], rng: &mut R) -> Result<UpdateStats> {
        let b = batch.len();
        if b == 0 {
            return Err(invalid("empty update batch"));
        }
        let (ds, da) = (self.state_dim, self.action_dim);
        if batch.iter().any(|t| t.state.len() != ds || t.next_state.len() != ds || t.action.len() != da) {
            return Err(invalid("transition dimensions do not match the agent"));
        }
        let backup = (self.snapshot(), self.actor_opt.clone(), self.critic_opts.clone());
        let alpha = self.temperature;
        let gamma = self.config.gamma;

        let s = rows_matrix(batch.iter().map(|t| &t.state), b, ds);
        let a = rows_matrix(batch.iter().map(|t| &t.action), b, da);
        let s2 = rows_matrix(batch.iter().map(|t| &t.next_state), b, ds);

        // Soft TD targets from the target critics.
        let head2 = self.actor.forward_batch(&s2)?;
        let mut a2 = DMatrix::zeros(b, da);
        let mut logp2 = vec![0.0; b];
        for r in 0..b {
            let mean: Vec<f64> = (0..da).map(|k| head2[(r, k)]).collect();
            let ls: Vec<f64> = (0..da).map(|k| head2[(r, da + k)]).collect();
            let smp = gaussian_policy_sample(&mean, &ls, rng);
            for k in 0..da {
                a2[(r, k)] = smp.action[k];
            }
            logp2[r] = smp.log_prob;
        }
        let sa2 = concat_columns(&s2, &a2);
        let q1t = self.targets[0].forward_batch(&sa2)?;
        let q2t = self.targets[1].forward_batch(&sa2)?;
        let y = DMatrix::from_fn(b, 1, |r, _| {
            let t = batch[r];
            let cont = if t.done { 0.0 } else { 1.0 };
            t.reward + gamma * cont * (q1t[(r, 0)].min(q2t[(r, 0)]) - alpha * logp2[r])
        });

        let sa = concat_columns(&s, &a);
        let mut critic_loss = [0.0; 2];
        #[allow(clippy::needless_range_loop)]
        for c in 0..2 {
            let cache = self.critics[c].forward_cache(&sa)?;
            let (loss, grad) = mse(cache.output(), &y);
            let (g, _) = self.critics[c].backward(&cache, &grad);
            critic_loss[c] = loss;
            if loss.is_finite() && g.is_finite() {
                self.critic_opts[c].apply(&mut self.critics[c], &g);
            }
        }

        // Reparameterised actor step: u = μ + σε, a = tanh(u).
        let actor_cache = self.actor.forward_cache(&s)?;
        let head = actor_cache.output();
        let mut act = DMatrix::zeros(b, da);
        let mut eps = DMatrix::zeros(b, da);
        let mut sigma = DMatrix::zeros(b, da);
        let mut clamped = DMatrix::from_element(b, da, false);
        let mut logp = vec![0.0; b];
        for r in 0..b {
            for k in 0..da {
                let raw_ls = head[(r, da + k)];
                let ls = clamp_log_std(raw_ls);
                clamped[(r, k)] = !(LOG_STD_MIN..=LOG_STD_MAX).contains(&raw_ls);
                let e: f64 = rng.sample(StandardNormal);
                let sd = ls.exp();
                let u = head[(r, k)] + sd * e;
                eps[(r, k)] = e;
                sigma[(r, k)] = sd;
                act[(r, k)] = u.tanh();
                logp[r] += -0.5 * e * e - ls - 0.5 * (2.0 * std::f64::consts::PI).ln() - log_tanh_jacobian(u);
            }
        }
        let sa_new = concat_columns(&s, &act);
        let c1 = self.critics[0].forward_cache(&sa_new)?;
        let c2 = self.critics[1].forward_cache(&sa_new)?;
        let mut pick = [DMatrix::zeros(b, 1), DMatrix::zeros(b, 1)];
        let mut actor_loss = 0.0;
        for r in 0..b {
            let (q1, q2) = (c1.output()[(r, 0)], c2.output()[(r, 0)]);
            let c = usize::from(q2 < q1);
            pick[c][(r, 0)] = 1.0;
            actor_loss += (alpha * logp[r] - q1.min(q2)) / b as f64;
        }
        let (_, gx1) = self.critics[0].backward(&c1, &pick[0]);
        let (_, gx2) = self.critics[1].backward(&c2, &pick[1]);
        let mut grad_head = DMatrix::zeros(b, 2 * da);
        let inv_b = 1.0 / b as f64;
        for r in 0..b {
            for k in 0..da {
                let a_rk = act[(r, k)];
                let dq_da = gx1[(r, ds + k)] + gx2[(r, ds + k)];
                let dq_du = dq_da * (1.0 - a_rk * a_rk);
                let se = sigma[(r, k)] * eps[(r, k)];
                grad_head[(r, k)] = inv_b * (alpha * 2.0 * a_rk - dq_du);
                if !clamped[(r, k)] {
                    grad_head[(r, da + k)] = inv_b * (alpha * (-1.0 + 2.0 * a_rk * se) - dq_du * se);
                }
            }
        }
        let (ga, _) = self.actor.backward(&actor_cache, &grad_head);
        let mean_log_prob = logp.iter().sum::<f64>() * inv_b;
        let finite = actor_loss.is_finite()
            && ga.is_finite()
            && critic_loss.iter().all(|l| l.is_finite())
            && mean_log_prob.is_finite();
        if !finite {
            let (snap, aopt, copts) = backup;
            self.restore(&snap);
            self.actor_opt = aopt;
            self.critic_opts = copts;
            log::warn!("non-finite SAC update reverted");
            return Ok(UpdateStats {
                critic_loss,
                actor_loss,
                mean_log_prob,
                reverted: true,
            });
        }
        self.actor_opt.apply(&mut self.actor, &ga);
        let tau = self.config.tau;
        for c in 0..2 {
            let src = self.critics[c].clone();
            self.targets[c].polyak_update(&src, tau);
        }
        Ok(UpdateStats {
            critic_loss,
            actor_loss,
            mean_log_prob,
            reverted: false,
        })
    }
}

/// `tanh` of the actor's mean head.
pub fn deterministic_action(actor: &Network, state: &[f64], action_dim: usize) -> Result<Vec<f64>> {
    let out = actor.forward(state)?;
    Ok(out[..action_dim].iter().map(|m| crate::nn::squash(*m)).collect())
}
