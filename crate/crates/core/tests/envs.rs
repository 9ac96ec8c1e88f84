use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use viaskill::adapt::{select_anchors, ObjectiveWeights, SkillGpSolver};
use viaskill::envs::cube::{OBSTACLE_CENTER, OBSTACLE_RADIUS};
use viaskill::envs::{
    nominal_tc, rollout, rollout_with_replanner, sample_tc, sample_tc_with, tc_with_offset, EnvConfig, EnvKind,
    FailureReason, Replanner, TaskConfiguration,
};
use viaskill::gp::KernelParams;
use viaskill::skill::{condition_on_tc, fit_via_points, PoseTwistAccel, SkillModel};
use viaskill::Error;

fn demo_skill(kind: EnvKind) -> (SkillModel, SkillGpSolver) {
    let demo = kind.demo_shape().demonstration().unwrap();
    let fit = fit_via_points(&demo, 15, KernelParams::default()).unwrap();
    let skill = SkillModel::build(fit.via, KernelParams::default()).unwrap();
    let solver = SkillGpSolver::new(&skill, &demo, ObjectiveWeights::default()).unwrap();
    (skill, solver)
}

fn straight_line(from: [f64; 3], to: [f64; 3], n: usize) -> Vec<PoseTwistAccel> {
    (0..n)
        .map(|i| {
            let s = i as f64 / (n - 1) as f64;
            PoseTwistAccel {
                time: s,
                position: std::array::from_fn(|k| from[k] + s * (to[k] - from[k])),
                rotation_vector: [0.0; 3],
                linear_velocity: std::array::from_fn(|k| to[k] - from[k]),
                rotvec_rate: [0.0; 3],
                linear_accel: [0.0; 3],
                rotvec_accel: [0.0; 3],
            }
        })
        .collect()
}

#[test]
fn demonstrations_succeed_at_their_own_configuration() {
    let cfg = EnvConfig::default();
    for kind in EnvKind::ALL {
        let (skill, _) = demo_skill(kind);
        let out = rollout(kind, &skill.sample_step(cfg.dt), &nominal_tc(kind), &cfg).unwrap();
        assert!(out.success, "{kind:?}: {:?}", out.failure_reason);
        assert_eq!(out.failure_reason, FailureReason::None);
    }
}

#[test]
fn path_through_obstacle_collides() {
    let cfg = EnvConfig::default();
    let c = OBSTACLE_CENTER;
    let traj = straight_line([c[0] - 0.2, c[1] + 0.5 * OBSTACLE_RADIUS, 0.05], [c[0] + 0.2, c[1], 0.05], 200);
    let out = rollout(EnvKind::SCpt, &traj, &nominal_tc(EnvKind::SCpt), &cfg).unwrap();
    assert!(!out.success);
    assert_eq!(out.failure_reason, FailureReason::Collision);
    let over = straight_line([c[0] - 0.2, c[1], 0.2], [c[0] + 0.2, c[1], 0.2], 200);
    let out = rollout(EnvKind::SCpt, &over, &nominal_tc(EnvKind::SCpt), &cfg).unwrap();
    assert_ne!(out.failure_reason, FailureReason::Collision);
}

#[test]
fn non_finite_sample_rejected() {
    let mut traj = straight_line([0.3, 0.0, 0.2], [0.4, 0.0, 0.2], 20);
    traj[7].position[1] = f64::NAN;
    let err = rollout(EnvKind::Dot, &traj, &nominal_tc(EnvKind::Dot), &EnvConfig::default()).unwrap_err();
    assert!(matches!(err, Error::InvalidArgument(_)));
}

#[test]
fn sampling_and_rollout_are_deterministic() {
    let cfg = EnvConfig::default();
    for kind in EnvKind::ALL {
        let a = sample_tc(kind, &mut ChaCha8Rng::seed_from_u64(42), 0.2).unwrap();
        let b = sample_tc(kind, &mut ChaCha8Rng::seed_from_u64(42), 0.2).unwrap();
        assert_eq!(a, b);
        let (skill, _) = demo_skill(kind);
        let traj = condition_on_tc(&skill, &a).unwrap().sample_step(cfg.dt);
        assert_eq!(rollout(kind, &traj, &a, &cfg).unwrap(), rollout(kind, &traj, &a, &cfg).unwrap());
    }
}

#[test]
fn offsets_stay_within_bounds_over_many_samples() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for kind in EnvKind::ALL {
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for _ in 0..10_000 {
            let tc = sample_tc(kind, &mut rng, 0.2).unwrap();
            for k in 0..2 {
                lo[k] = lo[k].min(tc.offset[k]);
                hi[k] = hi[k].max(tc.offset[k]);
            }
        }
        for k in 0..2 {
            assert!(lo[k] >= -0.2 && hi[k] <= 0.2, "{kind:?} axis {k}: [{}, {}]", lo[k], hi[k]);
        }
        if kind == EnvKind::Bmt {
            assert_eq!((lo[0], hi[0]), (0.0, 0.0));
        }
    }
    assert!(sample_tc(EnvKind::Dot, &mut rng, 0.0).is_err());
    assert!(sample_tc(EnvKind::Dot, &mut rng, 0.31).is_err());
}

#[test]
fn dynamic_task_without_perturbation_matches_static_task() {
    let cfg = EnvConfig {
        dcpt_noise: 0.0,
        dcpt_jump: 0.0,
        ..EnvConfig::default()
    };
    let (skill, solver) = demo_skill(EnvKind::SCpt);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let tc = sample_tc_with(EnvKind::DCpt, &mut rng, 0.2, &cfg).unwrap();
        for adapted in [
            condition_on_tc(&skill, &tc).unwrap(),
            skill.with_via(solver.solve(&select_anchors(&skill, &tc).unwrap()).unwrap().via).unwrap(),
        ] {
            let traj = adapted.sample_step(cfg.dt);
            assert_eq!(
                rollout(EnvKind::DCpt, &traj, &tc, &cfg).unwrap(),
                rollout(EnvKind::SCpt, &traj, &tc, &cfg).unwrap()
            );
        }
    }
}

struct Fixed(Vec<PoseTwistAccel>, usize);

impl Replanner for Fixed {
    fn replan(&mut self, _tc: &TaskConfiguration, _phase: f64) -> viaskill::Result<Vec<PoseTwistAccel>> {
        self.1 += 1;
        Ok(self.0.clone())
    }
}

#[test]
fn replanner_runs_once_per_jump() {
    let cfg = EnvConfig::default();
    let (skill, _) = demo_skill(EnvKind::DCpt);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut seen = 0;
    for _ in 0..30 {
        let tc = sample_tc(EnvKind::DCpt, &mut rng, 0.2).unwrap();
        let traj = condition_on_tc(&skill, &tc).unwrap().sample_step(cfg.dt);
        let mut planner = Fixed(traj.clone(), 0);
        let out = rollout_with_replanner(EnvKind::DCpt, &traj, &tc, &cfg, &mut planner).unwrap();
        assert!(tc.jumps.len() <= cfg.dcpt_max_jumps);
        if out.failure_reason != FailureReason::Collision {
            assert_eq!(planner.1, tc.jumps.len());
            assert_eq!(out.replans, tc.jumps.len());
        }
        seen += tc.jumps.len();
    }
    assert!(seen > 0);
}

#[test]
fn vanilla_trails_skill_gp_on_bar_removal() {
    let cfg = EnvConfig::default();
    let (skill, solver) = demo_skill(EnvKind::Bmt);
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let (mut vanilla, mut skill_gp) = (0, 0);
    for _ in 0..100 {
        let tc = sample_tc(EnvKind::Bmt, &mut rng, 0.2).unwrap();
        let v = condition_on_tc(&skill, &tc).unwrap();
        let g = skill.with_via(solver.solve(&select_anchors(&skill, &tc).unwrap()).unwrap().via).unwrap();
        vanilla += usize::from(rollout(EnvKind::Bmt, &v.sample_step(cfg.dt), &tc, &cfg).unwrap().success);
        skill_gp += usize::from(rollout(EnvKind::Bmt, &g.sample_step(cfg.dt), &tc, &cfg).unwrap().success);
    }
    assert!(vanilla < skill_gp, "vanilla {vanilla} vs skill-gp {skill_gp}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn tighter_goal_tolerance_never_creates_success(
        dx in -0.2..0.2f64, dy in -0.2..0.2f64, loose in 0.01..0.1f64, factor in 0.1..1.0f64,
    ) {
        let (skill, _) = demo_skill(EnvKind::SCpt);
        let tc = tc_with_offset(EnvKind::SCpt, [dx, dy], [0.0, 0.0]);
        let traj = condition_on_tc(&skill, &tc).unwrap().sample_step(0.01);
        let wide = EnvConfig { goal_tolerance: loose, ..EnvConfig::default() };
        let tight = EnvConfig { goal_tolerance: loose * factor, ..EnvConfig::default() };
        let a = rollout(EnvKind::SCpt, &traj, &tc, &wide).unwrap();
        let b = rollout(EnvKind::SCpt, &traj, &tc, &tight).unwrap();
        prop_assert!(!b.success || a.success);
    }

    #[test]
    fn success_implies_no_failure_reason(dx in -0.2..0.2f64, dy in -0.2..0.2f64) {
        let (skill, _) = demo_skill(EnvKind::Dot);
        let tc = tc_with_offset(EnvKind::Dot, [dx, dy], [0.0, 0.0]);
        let out = rollout(EnvKind::Dot, &condition_on_tc(&skill, &tc).unwrap().sample_step(0.01), &tc, &EnvConfig::default()).unwrap();
        prop_assert_eq!(out.success, out.failure_reason == FailureReason::None);
    }
}
