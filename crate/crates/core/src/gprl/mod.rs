//! Reinforcement-learned via-point shifts: a SAC policy proposes bounded
//! corrections to the aligned via-points of each task configuration.

pub mod reward;
pub mod sac;

use std::collections::VecDeque;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adapt::aligned_base;
use crate::bc::ACTION_BOUND;
use crate::envs::{rollout, rollout_with_replanner, sample_tc_with, EnvConfig, EnvKind, Replanner, TaskConfiguration};
use crate::error::{invalid, Result};
use crate::nn::{Network, NetworkDocument, Normalizer};
use crate::skill::{PoseTwistAccel, SkillModel};

pub use reward::{compute_reward, spatial_penalty, temporal_penalty, RewardBreakdown, RewardWeights};
pub use sac::{ReplayBuffer, SacAgent, SacConfig, Transition, UpdateStats};

pub const STATE_DIM: usize = 19;
/// Uniform samples used for the velocity and acceleration summaries.
pub const SUMMARY_SAMPLES: usize = 50;

/// Policy input: object and goal vectors, episode phase and kinematic means.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RlState {
    pub d_o: [f64; 3],
    pub d_g: [f64; 3],
    pub t_s: f64,
    /// Mean linear velocity then mean rotation-vector rate.
    pub v_bar: [f64; 6],
    pub a_bar: [f64; 6],
}

impl RlState {
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(STATE_DIM);
        v.extend(self.d_o);
        v.extend(self.d_g);
        v.push(self.t_s);
        v.extend(self.v_bar);
        v.extend(self.a_bar);
        v
    }

    pub fn is_finite(&self) -> bool {
        self.to_vec().iter().all(|v| v.is_finite())
    }
}

/// Builds the state for `tc` with kinematic summaries taken from `skill`.
pub fn build_rl_state(tc: &TaskConfiguration, skill: &SkillModel, t_s: f64) -> RlState {
    let (s, o, g) = (tc.start_pose.position, tc.object_pose.position, tc.goal_pose.position);
    let samples = skill.sample_uniform(SUMMARY_SAMPLES);
    let n = samples.len() as f64;
    let mut v_bar = [0.0; 6];
    let mut a_bar = [0.0; 6];
    for p in &samples {
        for k in 0..3 {
            v_bar[k] += p.linear_velocity[k] / n;
            v_bar[3 + k] += p.rotvec_rate[k] / n;
            a_bar[k] += p.linear_accel[k] / n;
            a_bar[3 + k] += p.rotvec_accel[k] / n;
        }
    }
    RlState {
        d_o: [o[0] - s[0], o[1] - s[1], o[2] - s[2]],
        d_g: [g[0] - o[0], g[1] - o[1], g[2] - o[2]],
        t_s,
        v_bar,
        a_bar,
    }
}

/// Frozen actor used for adaptation.
#[derive(Debug, Clone, PartialEq)]
pub struct GprlPolicy {
    pub normalizer: Normalizer,
    pub actor: Network,
    pub action_dim: usize,
    pub action_bound: f64,
}

impl GprlPolicy {
    /// Deterministic shifts in metres.
    pub fn shifts(&self, state: &RlState) -> Result<Vec<f64>> {
        let a = sac::deterministic_action(&self.actor, &self.normalizer.apply(&state.to_vec()), self.action_dim)?;
        Ok(a.iter().map(|v| v * self.action_bound).collect())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&GprlPolicyDocument {
            normalizer: self.normalizer.clone(),
            action_dim: self.action_dim,
            action_bound: self.action_bound,
            actor: self.actor.to_document(),
        })?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: GprlPolicyDocument = serde_json::from_str(text)?;
        let actor = Network::from_document(&doc.actor)?;
        if actor.input_dim() != STATE_DIM || actor.output_dim() != 2 * doc.action_dim {
            return Err(invalid("checkpoint is not an RL policy"));
        }
        Ok(Self {
            normalizer: doc.normalizer,
            actor,
            action_dim: doc.action_dim,
            action_bound: doc.action_bound,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct GprlPolicyDocument {
    normalizer: Normalizer,
    action_dim: usize,
    action_bound: f64,
    actor: NetworkDocument,
}

/// Applies unit-range actions to the aligned via-points of `tc`.
fn shifted_skill(skill: &SkillModel, base: &crate::skill::ViaPointSet, action: &[f64]) -> Result<SkillModel> {
    let shifts: Vec<f64> = action.iter().map(|a| a * ACTION_BOUND).collect();
    skill.with_via(base.with_position_shifts(&shifts, ACTION_BOUND)?)
}

/// One deterministic policy decision for `tc` at episode phase `t_s`.
pub fn gprl_adapt(policy: &GprlPolicy, skill: &SkillModel, tc: &TaskConfiguration, t_s: f64) -> Result<SkillModel> {
    let (_, base) = aligned_base(skill, tc)?;
    let base_skill = skill.with_via(base.clone())?;
    let state = build_rl_state(tc, &base_skill, t_s);
    let shifts = policy.shifts(&state)?;
    skill.with_via(base.with_position_shifts(&shifts, ACTION_BOUND)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GprlConfig {
    pub episodes: usize,
    /// Leading episodes that act uniformly at random.
    pub random_episodes: usize,
    pub updates_per_episode: usize,
    /// Reload the best checkpoint every this many episodes after warm-up.
    pub checkpoint_interval: usize,
    pub warmup: usize,
    /// Episodes in the trailing mean used to rank checkpoints.
    pub trailing_window: usize,
    pub weights: RewardWeights,
    pub sac: SacConfig,
    pub max_offset: f64,
    /// Task configurations drawn to fit the input normalizer.
    pub normalizer_samples: usize,
    pub seed: u64,
}

impl Default for GprlConfig {
    fn default() -> Self {
        Self {
            episodes: 30_000,
            random_episodes: 100,
            updates_per_episode: 2,
            checkpoint_interval: 500,
            warmup: 2000,
            trailing_window: 100,
            weights: RewardWeights::default(),
            sac: SacConfig::default(),
            max_offset: 0.2,
            normalizer_samples: 256,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub episode: usize,
    pub r_tc: f64,
    pub r_ss: f64,
    pub r_sp: f64,
    pub r_tp: f64,
    pub total: f64,
    pub success: bool,
    pub temperature: f64,
    /// Best trailing mean stored so far.
    pub best_score: f64,
}

pub fn write_curve_csv<W: Write>(rows: &[CurveRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["episode", "r_tc", "r_ss", "r_sp", "r_tp", "total", "success", "temperature", "best_score"])
        .map_err(|e| invalid(e.to_string()))?;
    for r in rows {
        w.write_record(&[
            r.episode.to_string(),
            r.r_tc.to_string(),
            r.r_ss.to_string(),
            r.r_sp.to_string(),
            r.r_tp.to_string(),
            r.total.to_string(),
            u8::from(r.success).to_string(),
            r.temperature.to_string(),
            r.best_score.to_string(),
        ])
        .map_err(|e| invalid(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct GprlTraining {
    /// Best checkpoint, or the final actor when none was stored.
    pub policy: GprlPolicy,
    pub curve: Vec<CurveRow>,
    pub reloads: usize,
    pub reverted_updates: usize,
}

/// Decision points recorded while an episode runs.
struct EpisodeDecisions {
    states: Vec<Vec<f64>>,
    actions: Vec<Vec<f64>>,
}

/// Replanner that queries the stochastic policy after each jump.
struct TrainingReplanner<'a, R: Rng> {
    agent: &'a SacAgent,
    normalizer: &'a Normalizer,
    skill: &'a SkillModel,
    dt: f64,
    explore_uniform: bool,
    rng: &'a mut R,
    decisions: EpisodeDecisions,
    last: Option<SkillModel>,
}

impl<R: Rng> TrainingReplanner<'_, R> {
    fn decide(&mut self, tc: &TaskConfiguration, t_s: f64) -> Result<SkillModel> {
        let (_, base) = aligned_base(self.skill, tc)?;
        let base_skill = self.skill.with_via(base.clone())?;
        let state = self.normalizer.apply(&build_rl_state(tc, &base_skill, t_s).to_vec());
        let action: Vec<f64> = if self.explore_uniform {
            (0..self.agent.action_dim()).map(|_| self.rng.random_range(-1.0..1.0)).collect()
        } else {
            self.agent.act(&state, self.rng)?.action
        };
        let adapted = shifted_skill(self.skill, &base, &action)?;
        self.decisions.states.push(state);
        self.decisions.actions.push(action);
        self.last = Some(adapted.clone());
        Ok(adapted)
    }
}

impl<R: Rng> Replanner for TrainingReplanner<'_, R> {
    fn replan(&mut self, tc: &TaskConfiguration, phase: f64) -> Result<Vec<PoseTwistAccel>> {
        Ok(self.decide(tc, phase)?.sample_step(self.dt))
    }
}

fn trailing_mean(window: &VecDeque<f64>) -> f64 {
    window.iter().sum::<f64>() / window.len() as f64
}

/// Trains a policy on task configurations sampled from `env`.
///
/// Each episode starts from the unmodified skill, aligns it to a sampled
/// configuration, applies the policy's shifts, executes and scores the
/// result. The best trailing-mean checkpoint is reloaded every
/// `checkpoint_interval` episodes once `warmup` episodes have passed.
pub fn train_gprl(env: EnvKind, skill: &SkillModel, cfg: &GprlConfig, env_cfg: &EnvConfig) -> Result<GprlTraining> {
    cfg.weights.validate()?;
    if cfg.episodes == 0 || cfg.trailing_window == 0 || cfg.checkpoint_interval == 0 {
        return Err(invalid("episodes, trailing window and checkpoint interval must be positive"));
    }
    let action_dim = 3 * skill.via().len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut norm_rows = Vec::with_capacity(cfg.normalizer_samples.max(2));
    for _ in 0..cfg.normalizer_samples.max(2) {
        let tc = sample_tc_with(env, &mut rng, cfg.max_offset, env_cfg)?;
        let (_, base) = aligned_base(skill, &tc)?;
        let t_s = if tc.jumps.is_empty() { 0.0 } else { rng.random_range(0.0..0.4) };
        norm_rows.push(build_rl_state(&tc, &skill.with_via(base)?, t_s).to_vec());
    }
    let normalizer = Normalizer::fit(&norm_rows)?;

    let mut agent = SacAgent::new(STATE_DIM, action_dim, cfg.sac.clone(), &mut rng)?;
    let mut buffer = ReplayBuffer::new(cfg.sac.buffer_capacity)?;
    let mut window: VecDeque<f64> = VecDeque::with_capacity(cfg.trailing_window);
    let mut best: Option<(f64, sac::AgentSnapshot)> = None;
    let mut curve = Vec::with_capacity(cfg.episodes);
    let mut reloads = 0;
    let mut reverted_updates = 0;

    for episode in 0..cfg.episodes {
        let tc = sample_tc_with(env, &mut rng, cfg.max_offset, env_cfg)?;
        let (_, base) = aligned_base(skill, &tc)?;
        let target = skill.with_via(base)?.query(1.0);
        let explore_uniform = episode < cfg.random_episodes;

        let (decisions, adapted, outcome) = {
            let mut planner = TrainingReplanner {
                agent: &agent,
                normalizer: &normalizer,
                skill,
                dt: env_cfg.dt,
                explore_uniform,
                rng: &mut rng,
                decisions: EpisodeDecisions {
                    states: Vec::new(),
                    actions: Vec::new(),
                },
                last: None,
            };
            let first = planner.decide(&tc, 0.0)?;
            let traj = first.sample_step(env_cfg.dt);
            let outcome = if env == EnvKind::DCpt {
                rollout_with_replanner(env, &traj, &tc, env_cfg, &mut planner)?
            } else {
                rollout(env, &traj, &tc, env_cfg)?
            };
            let adapted = planner.last.take().expect("at least one decision");
            (planner.decisions, adapted, outcome)
        };

        let reward = compute_reward(
            outcome.success,
            &adapted,
            skill,
            (target.position, target.orientation()),
            cfg.weights,
        )?;
        let k = decisions.states.len();
        for i in 0..k {
            let last = i + 1 == k;
            buffer.push(Transition {
                state: decisions.states[i].clone(),
                action: decisions.actions[i].clone(),
                reward: if last { reward.total } else { 0.0 },
                next_state: if last {
                    decisions.states[i].clone()
                } else {
                    decisions.states[i + 1].clone()
                },
                done: last,
            });
        }

        if buffer.len() >= cfg.sac.batch_size {
            for _ in 0..cfg.updates_per_episode {
                let batch = buffer.sample(cfg.sac.batch_size, &mut rng);
                if agent.update(&batch, &mut rng)?.reverted {
                    reverted_updates += 1;
                }
            }
        }

        if window.len() == cfg.trailing_window {
            window.pop_front();
        }
        window.push_back(reward.total);
        let past_warmup = episode + 1 >= cfg.warmup;
        if past_warmup && window.len() == cfg.trailing_window {
            let score = trailing_mean(&window);
            if best.as_ref().is_none_or(|(b, _)| score > *b) {
                best = Some((score, agent.snapshot()));
            }
        }
        if past_warmup && (episode + 1) % cfg.checkpoint_interval == 0 {
            if let Some((_, snap)) = &best {
                agent.restore(snap);
                reloads += 1;
            }
        }
        curve.push(CurveRow {
            episode,
            r_tc: reward.r_tc,
            r_ss: reward.r_ss,
            r_sp: reward.r_sp,
            r_tp: reward.r_tp,
            total: reward.total,
            success: outcome.success,
            temperature: agent.temperature,
            best_score: best.as_ref().map_or(f64::NEG_INFINITY, |(b, _)| *b),
        });
        agent.anneal();
    }

    let actor = best.map_or_else(|| agent.actor.clone(), |(_, s)| s.actor);
    Ok(GprlTraining {
        policy: GprlPolicy {
            normalizer,
            actor,
            action_dim,
            action_bound: ACTION_BOUND,
        },
        curve,
        reloads,
        reverted_updates,
    })
}

/// Untrained policy with the same architecture, for before/after comparisons.
pub fn untrained_policy(env: EnvKind, skill: &SkillModel, cfg: &GprlConfig, env_cfg: &EnvConfig) -> Result<GprlPolicy> {
    let probe = GprlConfig {
        episodes: 1,
        random_episodes: 1,
        warmup: usize::MAX,
        ..cfg.clone()
    };
    train_gprl(env, skill, &probe, env_cfg).map(|t| t.policy)
}
