use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use viaskill::adapt::{ObjectiveWeights, SkillGpSolver};
use viaskill::bc::{
    clone_adapt, generate_expert_dataset, train_clone, BcConfig, BcDataset, BcPolicy, BcState, ACTION_BOUND,
};
use viaskill::envs::{nominal_tc, rollout, sample_tc, EnvConfig, EnvKind};
use viaskill::gp::KernelParams;
use viaskill::skill::{fit_via_points, SkillModel};

fn solver(kind: EnvKind) -> SkillGpSolver {
    let demo = kind.demo_shape().demonstration().unwrap();
    let fit = fit_via_points(&demo, 15, KernelParams::default()).unwrap();
    let skill = SkillModel::build(fit.via, KernelParams::default()).unwrap();
    SkillGpSolver::new(&skill, &demo, ObjectiveWeights::default()).unwrap()
}

#[test]
fn dataset_is_seeded_and_starts_at_the_nominal_configuration() {
    let solver = solver(EnvKind::SCpt);
    let a = generate_expert_dataset(EnvKind::SCpt, &solver, 120, 0.2, 3).unwrap();
    let b = generate_expert_dataset(EnvKind::SCpt, &solver, 120, 0.2, 3).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.len() + a.skipped, 120);
    assert_eq!(a.states[0], BcState::from_tc(&nominal_tc(EnvKind::SCpt)));
    assert!(a.actions[0].iter().all(|v| v.abs() < 1e-6));
    assert!(a.actions.iter().flatten().all(|v| v.abs() <= ACTION_BOUND));
    assert_eq!(a.actions[0].len(), 45);
    assert!(generate_expert_dataset(EnvKind::SCpt, &solver, 99, 0.2, 3).is_err());
}

#[test]
fn dataset_csv_round_trips() {
    let solver = solver(EnvKind::Dot);
    let ds = generate_expert_dataset(EnvKind::Dot, &solver, 100, 0.2, 0).unwrap();
    let mut buf = Vec::new();
    ds.save_csv(&mut buf).unwrap();
    let back = BcDataset::load_csv(buf.as_slice()).unwrap();
    assert_eq!(back.states, ds.states);
    assert_eq!(back.actions, ds.actions);
}

fn block_means(losses: &[f64], block: usize) -> Vec<f64> {
    losses
        .chunks_exact(block)
        .map(|c| c.iter().sum::<f64>() / block as f64)
        .collect()
}

#[test]
fn clone_reproduces_expert_on_scpt() {
    let solver = solver(EnvKind::SCpt);
    let ds = generate_expert_dataset(EnvKind::SCpt, &solver, 2000, 0.2, 1).unwrap();
    let (policy, report) = train_clone(&ds, &BcConfig::default()).unwrap();

    assert!(report.holdout_mse <= 2.0 * report.train_mse, "{report:?}");
    let blocks = block_means(&report.epoch_losses, 10);
    for w in blocks.windows(2) {
        assert!(w[1] <= w[0], "block means {blocks:?}");
    }

    let close = ds
        .states
        .iter()
        .zip(&ds.actions)
        .filter(|(s, a)| {
            let p = policy.predict(s).unwrap();
            p.iter().zip(a.iter()).all(|(x, y)| (x - y).abs() <= 0.01)
        })
        .count();
    assert!(close as f64 >= 0.95 * ds.len() as f64, "{close} of {}", ds.len());

    let zero = policy.predict(&BcState::from_tc(&nominal_tc(EnvKind::SCpt))).unwrap();
    assert!(zero.iter().all(|v| v.abs() <= 0.01));

    let back = BcPolicy::from_json(&policy.to_json().unwrap()).unwrap();
    assert_eq!(back, policy);

    let cfg = EnvConfig::default();
    let skill = solver.skill();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut success = 0;
    for _ in 0..100 {
        let tc = sample_tc(EnvKind::SCpt, &mut rng, 0.2).unwrap();
        let start = Instant::now();
        let adapted = clone_adapt(&policy, skill, &tc).unwrap();
        let latency = start.elapsed().as_secs_f64();
        assert!(latency <= 0.05, "latency {latency}");
        success += usize::from(rollout(EnvKind::SCpt, &adapted.sample_step(cfg.dt), &tc, &cfg).unwrap().success);
    }
    assert!(success >= 80, "success {success}");
}
