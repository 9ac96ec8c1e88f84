//! Batch evaluation of adaptation methods over seeded task configurations.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adapt::{select_anchors, SkillGpSolver};
use crate::bc::{clone_adapt, BcPolicy};
use crate::envs::{rollout, rollout_with_replanner, sample_tc_with, EnvConfig, EnvKind, Replanner, TaskConfiguration};
use crate::error::{invalid, Result};
use crate::gprl::{gprl_adapt, GprlPolicy};
use crate::metrics::{compare_kinematics, DEFAULT_PROFILE_SAMPLES};
use crate::signature::skill_similarity;
use crate::skill::{condition_on_tc, PoseTwistAccel, SkillModel};

/// Version of the report CSV layout and summary document.
pub const REPORT_SCHEMA_VERSION: u32 = 1;
pub const REPORT_COLUMNS: [&str; 10] = [
    "method",
    "env",
    "seed",
    "tc_offset",
    "success",
    "mean_cosine_linear",
    "mean_cosine_angular",
    "mean_abs_vel_err",
    "r_ss",
    "adapt_latency",
];
/// Columns holding wall-clock measurements.
pub const TIMING_COLUMNS: [&str; 1] = ["adapt_latency"];
/// Velocity samples per path for the similarity column.
pub const EVAL_SIMILARITY_SAMPLES: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Vanilla,
    SkillGp,
    Bc,
    Gprl,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Vanilla, Method::SkillGp, Method::Bc, Method::Gprl];

    pub fn name(&self) -> &'static str {
        match self {
            Method::Vanilla => "vanilla",
            Method::SkillGp => "skill-gp",
            Method::Bc => "bc",
            Method::Gprl => "gprl",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| invalid(format!("unknown method '{s}', expected one of vanilla, skill-gp, bc, gprl")))
    }
}

/// A ready-to-use adaptation method bound to one skill.
#[derive(Debug, Clone)]
pub enum Adapter {
    Vanilla,
    SkillGp(Box<SkillGpSolver>),
    Bc(Box<BcPolicy>),
    Gprl(Box<GprlPolicy>),
}

impl Adapter {
    pub fn method(&self) -> Method {
        match self {
            Adapter::Vanilla => Method::Vanilla,
            Adapter::SkillGp(_) => Method::SkillGp,
            Adapter::Bc(_) => Method::Bc,
            Adapter::Gprl(_) => Method::Gprl,
        }
    }

    /// Adapts `skill` to `tc`; `phase` is the episode time of the decision.
    pub fn adapt(&self, skill: &SkillModel, tc: &TaskConfiguration, phase: f64) -> Result<SkillModel> {
        match self {
            Adapter::Vanilla => condition_on_tc(skill, tc),
            Adapter::SkillGp(solver) => {
                let res = solver.solve(&select_anchors(skill, tc)?)?;
                skill.with_via(res.via)
            }
            Adapter::Bc(policy) => clone_adapt(policy, skill, tc),
            Adapter::Gprl(policy) => gprl_adapt(policy, skill, tc, phase),
        }
    }
}

/// Re-adapts with a fixed method after each dynamic jump.
pub struct AdapterReplanner<'a> {
    pub adapter: &'a Adapter,
    pub skill: &'a SkillModel,
    pub dt: f64,
}

impl Replanner for AdapterReplanner<'_> {
    fn replan(&mut self, tc: &TaskConfiguration, phase: f64) -> Result<Vec<PoseTwistAccel>> {
        Ok(self.adapter.adapt(self.skill, tc, phase)?.sample_step(self.dt))
    }
}

/// One (method, task configuration) evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub method: Method,
    pub env: EnvKind,
    /// Seed of the task configuration.
    pub seed: u64,
    /// Planar object offset magnitude in metres.
    pub tc_offset: f64,
    pub success: bool,
    pub mean_cosine_linear: f64,
    pub mean_cosine_angular: f64,
    pub mean_abs_vel_err: f64,
    pub r_ss: f64,
    /// Seconds spent in the initial adaptation call.
    pub adapt_latency: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalSettings {
    pub n: usize,
    pub seed: u64,
    pub max_offset: f64,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            n: 100,
            seed: 0,
            max_offset: 0.2,
        }
    }
}

/// Draws `n` task configurations from one seeded stream.
pub fn eval_task_configurations(env: EnvKind, settings: &EvalSettings, env_cfg: &EnvConfig) -> Result<Vec<TaskConfiguration>> {
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    (0..settings.n)
        .map(|_| sample_tc_with(env, &mut rng, settings.max_offset, env_cfg))
        .collect()
}

/// Adapts, executes and scores one task configuration.
pub fn evaluate_one(
    adapter: &Adapter,
    skill: &SkillModel,
    tc: &TaskConfiguration,
    env_cfg: &EnvConfig,
) -> Result<EvalRow> {
    let started = Instant::now();
    let adapted = adapter.adapt(skill, tc, 0.0)?;
    let adapt_latency = started.elapsed().as_secs_f64();
    score_adapted(adapter, skill, tc, env_cfg, &adapted, adapt_latency)
}

/// Executes an already adapted skill and scores it against `skill`.
/// Dynamic tasks re-adapt through `adapter` after each jump.
pub fn score_adapted(
    adapter: &Adapter,
    skill: &SkillModel,
    tc: &TaskConfiguration,
    env_cfg: &EnvConfig,
    adapted: &SkillModel,
    adapt_latency: f64,
) -> Result<EvalRow> {
    let traj = adapted.sample_step(env_cfg.dt);
    let outcome = if tc.env == EnvKind::DCpt {
        let mut planner = AdapterReplanner {
            adapter,
            skill,
            dt: env_cfg.dt,
        };
        rollout_with_replanner(tc.env, &traj, tc, env_cfg, &mut planner)?
    } else {
        rollout(tc.env, &traj, tc, env_cfg)?
    };
    let kin = compare_kinematics(adapted, skill, DEFAULT_PROFILE_SAMPLES)?;
    Ok(EvalRow {
        method: adapter.method(),
        env: tc.env,
        seed: tc.seed,
        tc_offset: tc.offset[0].hypot(tc.offset[1]),
        success: outcome.success,
        mean_cosine_linear: kin.linear.mean_cosine,
        mean_cosine_angular: kin.angular.mean_cosine,
        mean_abs_vel_err: kin.linear.mean_abs_magnitude_error,
        r_ss: skill_similarity(adapted, skill, EVAL_SIMILARITY_SAMPLES),
        adapt_latency,
    })
}

/// Evaluates every adapter on the same task configurations, in parallel
/// across configurations. Rows are ordered by adapter, then configuration.
pub fn evaluate(
    adapters: &[Adapter],
    skill: &SkillModel,
    env: EnvKind,
    settings: &EvalSettings,
    env_cfg: &EnvConfig,
) -> Result<EvalReport> {
    let tcs = eval_task_configurations(env, settings, env_cfg)?;
    let mut rows = Vec::with_capacity(adapters.len() * tcs.len());
    for adapter in adapters {
        let chunk: Result<Vec<EvalRow>> = tcs.par_iter().map(|tc| evaluate_one(adapter, skill, tc, env_cfg)).collect();
        rows.extend(chunk?);
    }
    Ok(EvalReport { rows })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub env: EnvKind,
    pub n: usize,
    pub success_rate: f64,
    pub mean_cosine_linear: f64,
    pub mean_cosine_angular: f64,
    pub mean_abs_vel_err: f64,
    pub mean_r_ss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub schema_version: u32,
    pub seed: u64,
    pub max_offset: f64,
    pub methods: Vec<MethodSummary>,
}

impl EvalReport {
    pub fn extend(&mut self, other: EvalReport) {
        self.rows.extend(other.rows);
    }

    /// Writes the CSV report; `with_timing = false` drops the timing columns.
    pub fn write_csv<W: Write>(&self, writer: W, with_timing: bool) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let header: Vec<&str> = REPORT_COLUMNS
            .iter()
            .copied()
            .filter(|c| with_timing || !TIMING_COLUMNS.contains(c))
            .collect();
        w.write_record(&header).map_err(|e| invalid(e.to_string()))?;
        for r in &self.rows {
            let mut rec = vec![
                r.method.to_string(),
                r.env.name().to_string(),
                r.seed.to_string(),
                r.tc_offset.to_string(),
                u8::from(r.success).to_string(),
                r.mean_cosine_linear.to_string(),
                r.mean_cosine_angular.to_string(),
                r.mean_abs_vel_err.to_string(),
                r.r_ss.to_string(),
            ];
            if with_timing {
                rec.push(r.adapt_latency.to_string());
            }
            w.write_record(&rec).map_err(|e| invalid(e.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }

    /// Per-(method, env) means in first-seen order.
    pub fn summarize(&self, settings: &EvalSettings) -> EvalSummary {
        let mut keys: Vec<(Method, EnvKind)> = Vec::new();
        for r in &self.rows {
            if !keys.contains(&(r.method, r.env)) {
                keys.push((r.method, r.env));
            }
        }
        let methods = keys
            .into_iter()
            .map(|(method, env)| {
                let rows: Vec<&EvalRow> = self.rows.iter().filter(|r| r.method == method && r.env == env).collect();
                let n = rows.len();
                let mean = |f: &dyn Fn(&EvalRow) -> f64| rows.iter().map(|r| f(r)).sum::<f64>() / n as f64;
                MethodSummary {
                    method,
                    env,
                    n,
                    success_rate: mean(&|r| if r.success { 1.0 } else { 0.0 }),
                    mean_cosine_linear: mean(&|r| r.mean_cosine_linear),
                    mean_cosine_angular: mean(&|r| r.mean_cosine_angular),
                    mean_abs_vel_err: mean(&|r| r.mean_abs_vel_err),
                    mean_r_ss: mean(&|r| r.r_ss),
                }
            })
            .collect();
        EvalSummary {
            schema_version: REPORT_SCHEMA_VERSION,
            seed: settings.seed,
            max_offset: settings.max_offset,
            methods,
        }
    }
}

impl EvalSummary {
    pub fn get(&self, method: Method, env: EnvKind) -> Option<&MethodSummary> {
        self.methods.iter().find(|m| m.method == method && m.env == env)
    }
}
