//! Desk-scale kinematic task simulators.
//!
//! Four tasks share one rollout loop: drawer opening (`dot`), static and
//! dynamic cube pushing (`s-cpt`, `d-cpt`) and bar removal (`bmt`). The tool
//! is a point with an orientation frame; objects follow simple kinematic
//! contact rules.

pub mod bars;
pub mod cube;
pub mod demos;
pub mod drawer;

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::skill::PoseTwistAccel;
use crate::so3;
pub use demos::DemoShape;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EnvKind {
    #[serde(rename = "dot")]
    Dot,
    #[serde(rename = "s-cpt")]
    SCpt,
    #[serde(rename = "d-cpt")]
    DCpt,
    #[serde(rename = "bmt")]
    Bmt,
}

impl EnvKind {
    pub const ALL: [EnvKind; 4] = [EnvKind::Dot, EnvKind::SCpt, EnvKind::DCpt, EnvKind::Bmt];

    pub fn name(&self) -> &'static str {
        match self {
            EnvKind::Dot => "dot",
            EnvKind::SCpt => "s-cpt",
            EnvKind::DCpt => "d-cpt",
            EnvKind::Bmt => "bmt",
        }
    }

    /// Demonstration shape this task is calibrated against.
    pub fn demo_shape(&self) -> DemoShape {
        match self {
            EnvKind::Dot => DemoShape::SineArc,
            EnvKind::SCpt | EnvKind::DCpt => DemoShape::PushSweep,
            EnvKind::Bmt => DemoShape::LiftAndCarry,
        }
    }
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EnvKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EnvKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| invalid(format!("unknown environment '{s}' (expected dot, s-cpt, d-cpt or bmt)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Start,
    Contact,
    Goal,
}

/// Position plus `[w, x, y, z]` orientation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub position: [f64; 3],
    pub orientation: [f64; 4],
}

impl Pose {
    pub fn at(position: [f64; 3]) -> Self {
        Self {
            position,
            orientation: [1.0, 0.0, 0.0, 0.0],
        }
    }
}

/// One observed task feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub role: Role,
    pub position: [f64; 3],
    #[serde(default)]
    pub orientation: Option<[f64; 4]>,
    /// Where the same feature was in the demonstration, when known.
    #[serde(default)]
    pub reference_position: Option<[f64; 3]>,
    #[serde(default)]
    pub reference_orientation: Option<[f64; 4]>,
}

/// A discrete object displacement during a dynamic episode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Jump {
    pub phase: f64,
    /// Unit direction in the table plane; the magnitude comes from [`EnvConfig`].
    pub direction: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskConfiguration {
    pub env: EnvKind,
    pub start_pose: Pose,
    pub object_pose: Pose,
    pub goal_pose: Pose,
    /// xy deviation of the object from the demonstrated configuration.
    pub offset: [f64; 2],
    pub observations: Vec<Observation>,
    #[serde(default)]
    pub jumps: Vec<Jump>,
    /// Seed for per-step perturbations.
    #[serde(default)]
    pub seed: u64,
}

impl TaskConfiguration {
    /// Moves the object and its contact observation by `shift` in the table plane.
    pub fn shift_object(&mut self, shift: [f64; 2]) {
        for (p, s) in self.object_pose.position.iter_mut().zip(shift) {
            *p += s;
        }
        for o in self.observations.iter_mut().filter(|o| o.role == Role::Contact) {
            for (p, s) in o.position.iter_mut().zip(shift) {
                *p += s;
            }
        }
    }

    pub fn observation(&self, role: Role) -> Option<&Observation> {
        self.observations.iter().find(|o| o.role == role)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureReason {
    None,
    Collision,
    GoalMissed,
    Timeout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeOutcome {
    pub success: bool,
    pub failure_reason: FailureReason,
    pub executed_path: Vec<Pose>,
    pub object_final_pose: Pose,
    /// Number of replanning calls made during the episode.
    pub replans: usize,
}

/// Simulator thresholds and perturbation magnitudes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    /// Control step in seconds.
    pub dt: f64,
    pub goal_tolerance: f64,
    pub contact_radius: f64,
    pub drawer_travel: f64,
    pub alignment_deg: f64,
    pub clearance: f64,
    /// Largest independent goal displacement relative to the cube, per axis.
    pub goal_jitter: f64,
    pub dcpt_noise: f64,
    pub dcpt_jump: f64,
    pub dcpt_max_jumps: usize,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            dt: 0.01,
            goal_tolerance: 0.05,
            contact_radius: 0.03,
            drawer_travel: 0.12,
            alignment_deg: 15.0,
            clearance: 0.10,
            goal_jitter: 0.05,
            dcpt_noise: 0.002,
            dcpt_jump: 0.05,
            dcpt_max_jumps: 2,
        }
    }
}

/// Demonstrated geometry of one task.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Layout {
    pub start: [f64; 3],
    pub object: [f64; 3],
    pub goal: [f64; 3],
    /// Tool position at first contact in the demonstration.
    pub contact_ref: [f64; 3],
    /// Final tool position of the demonstration.
    pub goal_ref: [f64; 3],
    pub start_orientation: [f64; 4],
}

pub fn layout(kind: EnvKind) -> Layout {
    let shape = kind.demo_shape();
    let (start, r0) = shape.pose(0.0);
    let (contact_ref, _) = shape.pose(shape.contact_phase());
    let (goal_ref, _) = shape.pose(1.0);
    let (object, goal) = match kind {
        EnvKind::Dot => (drawer::NOMINAL_HANDLE, goal_ref),
        EnvKind::SCpt | EnvKind::DCpt => (cube::NOMINAL_CUBE, cube::NOMINAL_GOAL),
        EnvKind::Bmt => (bars::NOMINAL_BAR, goal_ref),
    };
    Layout {
        start,
        object,
        goal,
        contact_ref,
        goal_ref,
        start_orientation: so3::rotvec_to_quat(r0),
    }
}

/// Task configuration with the object displaced by `delta` and the goal by
/// `delta + goal_shift` (both in the table plane).
pub fn tc_with_offset(kind: EnvKind, delta: [f64; 2], goal_shift: [f64; 2]) -> TaskConfiguration {
    let l = layout(kind);
    let add = |p: [f64; 3], d: [f64; 2]| [p[0] + d[0], p[1] + d[1], p[2]];
    let goal_delta = [delta[0] + goal_shift[0], delta[1] + goal_shift[1]];
    TaskConfiguration {
        env: kind,
        start_pose: Pose {
            position: l.start,
            orientation: l.start_orientation,
        },
        object_pose: Pose::at(add(l.object, delta)),
        goal_pose: Pose::at(add(l.goal, goal_delta)),
        offset: delta,
        observations: vec![
            Observation {
                role: Role::Contact,
                position: add(l.contact_ref, delta),
                orientation: None,
                reference_position: Some(l.contact_ref),
                reference_orientation: None,
            },
            Observation {
                role: Role::Goal,
                position: add(l.goal_ref, goal_delta),
                orientation: None,
                reference_position: Some(l.goal_ref),
                reference_orientation: None,
            },
        ],
        jumps: Vec::new(),
        seed: 0,
    }
}

/// The demonstrated configuration itself.
pub fn nominal_tc(kind: EnvKind) -> TaskConfiguration {
    tc_with_offset(kind, [0.0; 2], [0.0; 2])
}

/// Samples a task configuration with default simulator settings.
pub fn sample_tc<R: Rng>(kind: EnvKind, rng: &mut R, max_offset: f64) -> Result<TaskConfiguration> {
    sample_tc_with(kind, rng, max_offset, &EnvConfig::default())
}

/// Samples uniform offsets in the task's perturbation subspace.
pub fn sample_tc_with<R: Rng>(
    kind: EnvKind,
    rng: &mut R,
    max_offset: f64,
    cfg: &EnvConfig,
) -> Result<TaskConfiguration> {
    if !(max_offset > 0.0 && max_offset <= 0.3) {
        return Err(invalid(format!("max_offset must lie in (0, 0.3], got {max_offset}")));
    }
    let mut uniform = |a: f64| if a > 0.0 { rng.random_range(-a..=a) } else { 0.0 };
    let (delta, goal_shift) = match kind {
        EnvKind::Dot => ([uniform(max_offset), uniform(max_offset)], [0.0; 2]),
        EnvKind::SCpt | EnvKind::DCpt => {
            let delta = [uniform(max_offset), uniform(max_offset)];
            (delta, [uniform(cfg.goal_jitter), uniform(cfg.goal_jitter)])
        }
        EnvKind::Bmt => ([0.0, uniform(max_offset)], [0.0; 2]),
    };
    let mut tc = tc_with_offset(kind, delta, goal_shift);
    tc.seed = rng.random();
    if kind == EnvKind::DCpt {
        let count = rng.random_range(0..=cfg.dcpt_max_jumps);
        let mut jumps: Vec<Jump> = (0..count)
            .map(|_| {
                let angle = rng.random_range(0.0..std::f64::consts::TAU);
                Jump {
                    phase: rng.random_range(0.15..0.40),
                    direction: [angle.cos(), angle.sin()],
                }
            })
            .collect();
        jumps.sort_by(|a, b| a.phase.total_cmp(&b.phase));
        tc.jumps = jumps;
    }
    Ok(tc)
}

/// Mid-episode adapter invoked after each dynamic perturbation.
pub trait Replanner {
    /// Returns a trajectory on the same time grid as the one being executed.
    /// `phase` is the normalised episode time at which the jump happened.
    fn replan(&mut self, tc: &TaskConfiguration, phase: f64) -> Result<Vec<PoseTwistAccel>>;
}

pub(crate) trait Scene {
    /// Advances one control step; a returned reason ends the episode.
    fn step(&mut self, prev: &PoseTwistAccel, cur: &PoseTwistAccel) -> Option<FailureReason>;
    fn finish(&self) -> (FailureReason, Pose);
    fn shift_object(&mut self, _shift: [f64; 2]) {}
    fn set_jitter(&mut self, _jitter: [f64; 2]) {}
}

fn make_scene(kind: EnvKind, tc: &TaskConfiguration, cfg: &EnvConfig) -> Box<dyn Scene> {
    match kind {
        EnvKind::Dot => Box::new(drawer::DrawerScene::new(tc.object_pose.position, cfg.drawer_travel)),
        EnvKind::SCpt | EnvKind::DCpt => Box::new(cube::CubeScene::new(
            tc.object_pose.position,
            tc.goal_pose.position,
            cfg.contact_radius,
            cfg.goal_tolerance,
        )),
        EnvKind::Bmt => Box::new(bars::BarScene::new(
            tc.object_pose.position,
            cfg.alignment_deg,
            cfg.clearance,
        )),
    }
}

/// Executes a sampled trajectory open loop.
pub fn rollout(
    kind: EnvKind,
    trajectory: &[PoseTwistAccel],
    tc: &TaskConfiguration,
    cfg: &EnvConfig,
) -> Result<EpisodeOutcome> {
    run(kind, trajectory, tc, cfg, None)
}

/// Executes a trajectory, calling `replanner` after every dynamic jump.
pub fn rollout_with_replanner(
    kind: EnvKind,
    trajectory: &[PoseTwistAccel],
    tc: &TaskConfiguration,
    cfg: &EnvConfig,
    replanner: &mut dyn Replanner,
) -> Result<EpisodeOutcome> {
    run(kind, trajectory, tc, cfg, Some(replanner))
}

fn validate_trajectory(traj: &[PoseTwistAccel]) -> Result<()> {
    if traj.len() < 2 {
        return Err(invalid("trajectory needs at least two samples"));
    }
    if let Some(i) = traj.iter().position(|s| !s.is_finite()) {
        return Err(invalid(format!("trajectory sample {i} is not finite")));
    }
    Ok(())
}

fn pose_of(s: &PoseTwistAccel) -> Pose {
    Pose {
        position: s.position,
        orientation: so3::rotvec_to_quat(s.rotation_vector),
    }
}

fn run(
    kind: EnvKind,
    trajectory: &[PoseTwistAccel],
    tc: &TaskConfiguration,
    cfg: &EnvConfig,
    mut replanner: Option<&mut dyn Replanner>,
) -> Result<EpisodeOutcome> {
    validate_trajectory(trajectory)?;
    let mut scene = make_scene(kind, tc, cfg);
    let mut traj = trajectory.to_vec();
    let n = traj.len();
    let dynamic = kind == EnvKind::DCpt;
    let mut live_tc = tc.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
    let mut next_jump = 0;
    let mut replans = 0;

    let mut prev = traj[0];
    let mut path = Vec::with_capacity(n);
    path.push(pose_of(&prev));
    for i in 1..n {
        let phase = i as f64 / (n - 1) as f64;
        if dynamic {
            while cfg.dcpt_jump > 0.0 && next_jump < tc.jumps.len() && tc.jumps[next_jump].phase <= phase {
                let dir = tc.jumps[next_jump].direction;
                let shift = [dir[0] * cfg.dcpt_jump, dir[1] * cfg.dcpt_jump];
                scene.shift_object(shift);
                live_tc.shift_object(shift);
                next_jump += 1;
                if let Some(r) = replanner.as_deref_mut() {
                    let plan = r.replan(&live_tc, phase)?;
                    validate_trajectory(&plan)?;
                    if plan.len() != n {
                        return Err(invalid(format!(
                            "replanned trajectory has {} samples, expected {n}",
                            plan.len()
                        )));
                    }
                    traj = plan;
                    replans += 1;
                }
            }
            if cfg.dcpt_noise > 0.0 {
                let a = cfg.dcpt_noise;
                scene.set_jitter([rng.random_range(-a..=a), rng.random_range(-a..=a)]);
            }
        }
        let cur = traj[i];
        path.push(pose_of(&cur));
        if let Some(reason) = scene.step(&prev, &cur) {
            let (_, object) = scene.finish();
            return Ok(EpisodeOutcome {
                success: false,
                failure_reason: reason,
                executed_path: path,
                object_final_pose: object,
                replans,
            });
        }
        prev = cur;
    }
    let (reason, object) = scene.finish();
    Ok(EpisodeOutcome {
        success: reason == FailureReason::None,
        failure_reason: reason,
        executed_path: path,
        object_final_pose: object,
        replans,
    })
}
