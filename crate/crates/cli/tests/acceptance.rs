//! End-to-end acceptance checks. Each criterion prints one PASS or FAIL
//! line; the process exits non-zero when any criterion fails.

use std::fs;
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use viaskill::adapt::{select_anchors, ObjectiveWeights, SkillGpSolver};
use viaskill::bc::{generate_expert_dataset, train_clone, BcConfig};
use viaskill::envs::{nominal_tc, DemoShape, EnvConfig, EnvKind};
use viaskill::eval::{evaluate, Adapter, EvalSettings, Method};
use viaskill::gp::{GpModel, KernelParams};
use viaskill::gprl::{train_gprl, GprlConfig, ReplayBuffer, RewardWeights, SacAgent, SacConfig, Transition};
use viaskill::nn::{Activation, Network};
use viaskill::signature::{similarity, truncated_signature, VelocityPath, DEPTH};
use viaskill::skill::{fit_via_points, reconstruction_rmse, Demonstration, SkillModel};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn fitted(shape: DemoShape) -> (SkillModel, Demonstration) {
    let demo = shape.demonstration().unwrap();
    let fit = fit_via_points(&demo, 15, KernelParams::default()).unwrap();
    (SkillModel::build(fit.via, KernelParams::default()).unwrap(), demo)
}

fn skill_gp(shape: DemoShape) -> (SkillModel, Adapter) {
    let (skill, demo) = fitted(shape);
    let solver = SkillGpSolver::new(&skill, &demo, ObjectiveWeights::default()).unwrap();
    (skill, Adapter::SkillGp(Box::new(solver)))
}

fn settings(n: usize, seed: u64) -> EvalSettings {
    EvalSettings {
        n,
        seed,
        max_offset: 0.2,
    }
}

/// Desk-scale RL budget: about 100 s of training per run on one core.
fn desk_gprl(alpha: f64) -> GprlConfig {
    GprlConfig {
        episodes: 6000,
        warmup: 500,
        checkpoint_interval: 500,
        weights: RewardWeights {
            alpha,
            ..RewardWeights::default()
        },
        sac: SacConfig {
            hidden: vec![64, 64],
            batch_size: 128,
            actor_lr: 1e-3,
            critic_lr: 1e-3,
            ..SacConfig::default()
        },
        ..GprlConfig::default()
    }
}

fn gp_derivatives() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (h1, h2) = (1e-5, 1e-3);
    let (mut e1, mut e2) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let n = rng.random_range(5..20);
        let times: Vec<f64> = (0..n).map(|i| i as f64 * 8.0 / (n - 1) as f64).collect();
        let values: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let m = GpModel::fit(&times, &values, KernelParams::default()).unwrap();
        let f = |t: f64| m.query(t).unwrap().mean;
        for _ in 0..100 {
            let t = rng.random_range(0.0..8.0);
            let q = m.query(t).unwrap();
            e1 = e1.max((q.first_deriv - (f(t + h1) - f(t - h1)) / (2.0 * h1)).abs());
            e2 = e2.max((q.second_deriv - (f(t + h2) - 2.0 * f(t) + f(t - h2)) / (h2 * h2)).abs());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        e1 <= 1e-5 && e2 <= 1e-3 && secs < 10.0,
        format!("max first-derivative error {e1:.2e}, second {e2:.2e}, {secs:.2} s"),
    )
}

fn reconstruction() -> Outcome {
    let mut worst = (0.0f64, 0.0f64);
    for shape in DemoShape::ALL {
        let (skill, demo) = fitted(shape);
        let (p, r) = reconstruction_rmse(&skill, &demo);
        worst = (worst.0.max(p), worst.1.max(r));
    }
    check(
        worst.0 <= 0.01 && worst.1 <= 0.02,
        format!("worst position RMSE {:.4} m, rotation RMSE {:.4} rad", worst.0, worst.1),
    )
}

fn idempotence() -> Outcome {
    let mut worst = 0.0f64;
    for (shape, env) in [
        (DemoShape::SineArc, EnvKind::Dot),
        (DemoShape::PushSweep, EnvKind::SCpt),
        (DemoShape::LiftAndCarry, EnvKind::Bmt),
    ] {
        let (skill, demo) = fitted(shape);
        let solver = SkillGpSolver::new(&skill, &demo, ObjectiveWeights::default()).unwrap();
        let res = solver.solve(&select_anchors(&skill, &nominal_tc(env)).unwrap()).unwrap();
        for axis in 0..6 {
            for (a, b) in res.via.column(axis).iter().zip(skill.via().column(axis)) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    check(worst <= 1e-6, format!("max via-point change {worst:.2e}"))
}

fn kinematic_retention() -> Outcome {
    let start = Instant::now();
    let (skill, adapter) = skill_gp(DemoShape::PushSweep);
    let s = settings(100, 4);
    let report = evaluate(&[adapter], &skill, EnvKind::SCpt, &s, &EnvConfig::default()).unwrap();
    let summary = report.summarize(&s);
    let m = summary.get(Method::SkillGp, EnvKind::SCpt).unwrap();
    let cosine = 0.5 * (m.mean_cosine_linear + m.mean_cosine_angular);
    let secs = start.elapsed().as_secs_f64();
    check(
        cosine >= 0.95 && m.success_rate >= 0.95 && secs <= 600.0,
        format!(
            "mean cosine {cosine:.4} (linear {:.4}, angular {:.4}), success {:.2}, {secs:.1} s",
            m.mean_cosine_linear, m.mean_cosine_angular, m.success_rate
        ),
    )
}

fn bmt_ordering() -> Outcome {
    let env_cfg = EnvConfig::default();
    let (skill, adapter) = skill_gp(DemoShape::LiftAndCarry);
    let policy = train_gprl(EnvKind::Bmt, &skill, &desk_gprl(1.0), &env_cfg).unwrap().policy;
    let s = settings(100, 5);
    let adapters = [Adapter::Vanilla, adapter, Adapter::Gprl(Box::new(policy))];
    let summary = evaluate(&adapters, &skill, EnvKind::Bmt, &s, &env_cfg).unwrap().summarize(&s);
    let pct = |m| (100.0 * summary.get(m, EnvKind::Bmt).unwrap().success_rate).round();
    let (v, g, r) = (pct(Method::Vanilla), pct(Method::SkillGp), pct(Method::Gprl));
    check(
        g >= r && r >= v + 5.0 && g >= v + 5.0,
        format!("success skill-gp {g}%, gprl {r}%, vanilla {v}%"),
    )
}

fn random_walk(rng: &mut ChaCha8Rng) -> Vec<[f64; 3]> {
    let n = rng.random_range(2..30);
    let mut p = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
    let mut out = vec![p];
    for _ in 1..n {
        for c in p.iter_mut() {
            *c += rng.random_range(-0.2..0.2);
        }
        out.push(p);
    }
    out
}

fn flat(path: &[[f64; 3]]) -> Vec<f64> {
    let s = truncated_signature(&VelocityPath::new(path.to_vec()).unwrap(), DEPTH).unwrap();
    s.level1.iter().chain(&s.level2).chain(&s.level3).copied().collect()
}

fn signature_identities() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (mut self_err, mut sym_err, mut chen_err, mut seg_err) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for _ in 0..1000 {
        let a = random_walk(&mut rng);
        let b = random_walk(&mut rng);
        let (pa, pb) = (VelocityPath::new(a.clone()).unwrap(), VelocityPath::new(b.clone()).unwrap());
        let s = similarity(&pa, &pa);
        if !s.degenerate {
            self_err = self_err.max((s.value - 1.0).abs());
        }
        sym_err = sym_err.max((similarity(&pa, &pb).raw - similarity(&pb, &pa).raw).abs());

        let last = a[a.len() - 1];
        let tail: Vec<[f64; 3]> = b.iter().map(|p| std::array::from_fn(|k| p[k] - b[0][k] + last[k])).collect();
        let mut joined = a.clone();
        joined.extend_from_slice(&tail[1..]);
        let sa = truncated_signature(&pa, DEPTH).unwrap();
        let sb = truncated_signature(&VelocityPath::new(tail).unwrap(), DEPTH).unwrap();
        let chen = sa.concat(&sb);
        let chen: Vec<f64> = chen.level1.iter().chain(&chen.level2).chain(&chen.level3).copied().collect();
        for (x, y) in chen.iter().zip(flat(&joined)) {
            chen_err = chen_err.max((x - y).abs());
        }

        let d: [f64; 3] = std::array::from_fn(|k| a[a.len() - 1][k] - a[0][k]);
        let mut closed = d.to_vec();
        for i in 0..3 {
            for j in 0..3 {
                closed.push(d[i] * d[j] / 2.0);
            }
        }
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    closed.push(d[i] * d[j] * d[k] / 6.0);
                }
            }
        }
        for (x, y) in flat(&[a[0], a[a.len() - 1]]).iter().zip(&closed) {
            seg_err = seg_err.max((x - y).abs());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        self_err <= 1e-9 && sym_err <= 1e-12 && chen_err <= 1e-9 && seg_err <= 1e-12 && secs < 30.0,
        format!("self {self_err:.1e}, symmetry {sym_err:.1e}, Chen {chen_err:.1e}, segment {seg_err:.1e}, {secs:.2} s"),
    )
}

fn reward_ablation() -> Outcome {
    let env_cfg = EnvConfig::default();
    let (skill, _) = fitted(DemoShape::PushSweep);
    let s = settings(100, 7);
    let mut r_ss = Vec::new();
    for alpha in [1.0, 0.0] {
        let policy = train_gprl(EnvKind::SCpt, &skill, &desk_gprl(alpha), &env_cfg).unwrap().policy;
        let summary = evaluate(&[Adapter::Gprl(Box::new(policy))], &skill, EnvKind::SCpt, &s, &env_cfg)
            .unwrap()
            .summarize(&s);
        r_ss.push(summary.get(Method::Gprl, EnvKind::SCpt).unwrap().mean_r_ss);
    }
    check(
        r_ss[1] < r_ss[0],
        format!("mean r_ss full reward {:.4}, without similarity {:.4}", r_ss[0], r_ss[1]),
    )
}

fn bc_pipeline() -> Outcome {
    let (skill, demo) = fitted(DemoShape::PushSweep);
    let solver = SkillGpSolver::new(&skill, &demo, ObjectiveWeights::default()).unwrap();
    let ds = generate_expert_dataset(EnvKind::SCpt, &solver, 2000, 0.2, 0).unwrap();
    let (policy, report) = train_clone(&ds, &BcConfig::default()).unwrap();
    let s = settings(100, 8);
    let eval = evaluate(&[Adapter::Bc(Box::new(policy))], &skill, EnvKind::SCpt, &s, &EnvConfig::default()).unwrap();
    let latency = eval.rows.iter().map(|r| r.adapt_latency).fold(0.0, f64::max);
    let success = eval.summarize(&s).get(Method::Bc, EnvKind::SCpt).unwrap().success_rate;
    check(
        report.holdout_mse <= 2.0 * report.train_mse && success >= 0.8 && latency <= 0.05,
        format!(
            "train MSE {:.2e}, held-out {:.2e}, success {success:.2}, max latency {:.1} ms",
            report.train_mse,
            report.holdout_mse,
            1e3 * latency
        ),
    )
}

fn bandit(temperature: f64, updates: usize) -> (f64, f64, bool) {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let cfg = SacConfig {
        hidden: vec![32, 32],
        initial_temperature: temperature,
        temperature_floor: temperature,
        temperature_decay: 1.0,
        batch_size: 64,
        buffer_capacity: 10_000,
        actor_lr: 1e-3,
        critic_lr: 1e-3,
        ..SacConfig::default()
    };
    let mut agent = SacAgent::new(1, 1, cfg, &mut rng).unwrap();
    let mut buffer = ReplayBuffer::new(10_000).unwrap();
    let s = vec![0.0];
    let mut done = 0;
    let mut finite = true;
    while done < updates {
        let a = agent.act(&s, &mut rng).unwrap().action;
        let reward = -(a[0] - 0.3).powi(2);
        buffer.push(Transition {
            state: s.clone(),
            action: a,
            reward,
            next_state: s.clone(),
            done: true,
        });
        if buffer.len() >= 64 {
            finite &= !agent.update(&buffer.sample(64, &mut rng), &mut rng).unwrap().reverted;
            done += 1;
        }
    }
    let (mean, log_std) = agent.distribution(&s).unwrap();
    (mean[0].tanh(), log_std[0].exp(), finite)
}

fn sac_sanity() -> Outcome {
    let (mean, cold, finite) = bandit(0.01, 5000);
    let (_, warm, _) = bandit(0.2, 5000);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut agent = SacAgent::new(
        2,
        1,
        SacConfig {
            hidden: vec![8],
            initial_temperature: 0.2,
            temperature_decay: 0.9,
            temperature_floor: 0.01,
            ..SacConfig::default()
        },
        &mut rng,
    )
    .unwrap();
    let mut monotone = true;
    for _ in 0..100 {
        let before = agent.temperature;
        agent.anneal();
        monotone &= agent.temperature <= before;
    }
    check(
        (mean - 0.3).abs() <= 0.05 && warm > cold && monotone && finite,
        format!("mean action {mean:.4}, std at low/high temperature {cold:.3}/{warm:.3}, annealing monotone {monotone}"),
    )
}

fn strip_timing(csv: &str) -> String {
    csv.lines()
        .map(|l| l.rsplit_once(',').map_or(l, |(head, _)| head))
        .collect::<Vec<_>>()
        .join("\n")
}

fn eval_run(dir: &Path) -> (String, Vec<u8>) {
    let out = Command::new(env!("CARGO_BIN_EXE_viaskill"))
        .args(["eval", "--env", "s-cpt,bmt", "--methods", "vanilla,skill-gp", "--n", "50", "--seed", "3", "--out"])
        .arg(dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    (
        strip_timing(&fs::read_to_string(dir.join("report.csv")).unwrap()),
        fs::read(dir.join("summary.json")).unwrap(),
    )
}

fn determinism() -> Outcome {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (csv_a, json_a) = eval_run(a.path());
    let (csv_b, json_b) = eval_run(b.path());
    check(
        csv_a == csv_b && json_a == json_b,
        format!("{} report lines compared, summary {} bytes", csv_a.lines().count(), json_a.len()),
    )
}

fn weighted_output(net: &Network, x: &DMatrix<f64>, w: &DMatrix<f64>) -> f64 {
    net.forward_batch(x).unwrap().component_mul(w).sum()
}

fn relative(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs() + b.abs()).max(1e-6)
}

fn nn_gradients() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let acts = [Activation::Relu, Activation::Tanh, Activation::Linear];
    let h = 1e-6;
    let mut worst = 0.0f64;
    let mut configs = 0;
    while configs < 50 {
        let depth = rng.random_range(1..4);
        let mut sizes = vec![rng.random_range(1..7)];
        for _ in 0..depth {
            sizes.push(rng.random_range(1..9));
        }
        let net = Network::new(&sizes, acts[rng.random_range(0..3)], acts[rng.random_range(0..3)], &mut rng).unwrap();
        let rows = rng.random_range(1..6);
        let x = DMatrix::from_fn(rows, sizes[0], |_, _| rng.random_range(-1.5..1.5));
        let w = DMatrix::from_fn(rows, *sizes.last().unwrap(), |_, _| rng.random_range(-1.5..1.5));
        let cache = net.forward_cache(&x).unwrap();
        // Finite differences are meaningless across a relu kink.
        if cache.pre_activations.iter().flatten().any(|z| z.abs() < 1e-4) {
            continue;
        }
        configs += 1;
        let (g, gx) = net.backward(&cache, &w);
        let perturbed = |edit: &dyn Fn(&mut Network, f64)| {
            let (mut p, mut m) = (net.clone(), net.clone());
            edit(&mut p, h);
            edit(&mut m, -h);
            (weighted_output(&p, &x, &w) - weighted_output(&m, &x, &w)) / (2.0 * h)
        };
        for li in 0..net.layers().len() {
            for k in 0..net.layers()[li].weights.len() {
                let fd = perturbed(&|n, d| n.layers_mut()[li].weights[k] += d);
                worst = worst.max(relative(fd, g.weights[li][k]));
            }
            for k in 0..net.layers()[li].biases.len() {
                let fd = perturbed(&|n, d| n.layers_mut()[li].biases[k] += d);
                worst = worst.max(relative(fd, g.biases[li][k]));
            }
        }
        for k in 0..x.len() {
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp[k] += h;
            xm[k] -= h;
            let fd = (weighted_output(&net, &xp, &w) - weighted_output(&net, &xm, &w)) / (2.0 * h);
            worst = worst.max(relative(fd, gx[k]));
        }
    }
    check(worst <= 1e-4, format!("worst relative error {worst:.2e} over {configs} networks"))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 11] = [
        ("AC1 GP derivative fidelity", gp_derivatives),
        ("AC2 via-point reconstruction", reconstruction),
        ("AC3 Skill-GP idempotence", idempotence),
        ("AC4 Skill-GP kinematic retention", kinematic_retention),
        ("AC5 method ordering on BMT", bmt_ordering),
        ("AC6 signature identities", signature_identities),
        ("AC7 reward ablation", reward_ablation),
        ("AC8 BC pipeline", bc_pipeline),
        ("AC9 SAC sanity", sac_sanity),
        ("AC10 eval determinism", determinism),
        ("AC11 NN gradient checks", nn_gradients),
    ];
    let only: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    let mut stderr = std::io::stderr();
    for (name, f) in criteria {
        if !only.is_empty() && !only.iter().any(|o| name.starts_with(&format!("{o} "))) {
            continue;
        }
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        let line = match &result {
            Ok(d) => format!("{name}: PASS ({d}) [{secs:.1} s]"),
            Err(d) => {
                failed += 1;
                format!("{name}: FAIL ({d}) [{secs:.1} s]")
            }
        };
        let _ = writeln!(stderr, "{line}");
    }
    if failed > 0 {
        let _ = writeln!(stderr, "{failed} acceptance criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
