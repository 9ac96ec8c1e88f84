use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use viaskill::adapt::{ObjectiveWeights, SkillGpSolver};
use viaskill::bc::{generate_expert_dataset, train_clone, BcConfig, BcPolicy};
use viaskill::envs::{tc_with_offset, DemoShape, EnvConfig, EnvKind, TaskConfiguration};
use viaskill::eval::{evaluate, score_adapted, Adapter, EvalReport, EvalSettings, Method};
use viaskill::gp::KernelParams;
use viaskill::gprl::{train_gprl, write_curve_csv, GprlConfig, GprlPolicy};
use viaskill::skill::{fit_via_points, load_demonstration, reconstruction_rmse, Demonstration, SkillModel};
use viaskill::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "viaskill", version, about = "Fit, adapt, train and evaluate via-point GP skills")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit via-points to a demonstration CSV and write skill.json.
    Fit(FitArgs),
    /// Adapt a skill to one task configuration.
    Adapt(AdaptArgs),
    /// Generate Skill-GP expert pairs and train the cloning policy.
    TrainBc(TrainArgs),
    /// Train the RL shift policy.
    TrainRl(TrainArgs),
    /// Evaluate methods over seeded task configurations.
    Eval(EvalArgs),
    /// Write the synthetic demonstrations as CSV.
    DemoGen(DemoGenArgs),
}

#[derive(Args, Debug)]
struct Common {
    /// JSON run configuration; missing fields take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SkillSource {
    /// Skill JSON; defaults to a fit of the environment's synthetic demonstration.
    #[arg(long)]
    skill: Option<PathBuf>,
    /// Demonstration CSV used for fitting and as the Skill-GP reference.
    #[arg(long)]
    demo: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct FitArgs {
    #[arg(long)]
    demo: PathBuf,
    /// Number of via-points; overrides the configuration.
    #[arg(long)]
    via: Option<usize>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct AdaptArgs {
    #[arg(long)]
    method: Method,
    #[arg(long)]
    env: EnvKind,
    #[command(flatten)]
    source: SkillSource,
    /// Planar object offset `dx,dy` in metres.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_values_t = [0.0, 0.0])]
    offset: Vec<f64>,
    /// Additional planar goal offset `dx,dy` in metres.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_values_t = [0.0, 0.0])]
    goal_shift: Vec<f64>,
    /// Task configuration JSON; replaces --offset and --goal-shift.
    #[arg(long)]
    tc: Option<PathBuf>,
    /// Policy checkpoint for bc and gprl.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    env: EnvKind,
    #[command(flatten)]
    source: SkillSource,
    /// Expert pairs (train-bc) or episodes (train-rl); overrides the configuration.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Comma-separated environments.
    #[arg(long, value_delimiter = ',', required = true)]
    env: Vec<EnvKind>,
    /// Comma-separated methods.
    #[arg(long = "methods", alias = "method", value_delimiter = ',', required = true)]
    methods: Vec<Method>,
    #[arg(long, default_value_t = 100)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    source: SkillSource,
    /// Cloning policy checkpoint, required for bc.
    #[arg(long)]
    bc: Option<PathBuf>,
    /// RL policy checkpoint, required for gprl.
    #[arg(long)]
    gprl: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct DemoGenArgs {
    /// Shape to write; all shapes when omitted.
    #[arg(long)]
    shape: Option<String>,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RunConfig {
    via_count: usize,
    kernel: KernelParams,
    objective: ObjectiveWeights,
    env: EnvConfig,
    max_offset: f64,
    bc_pairs: usize,
    bc: BcConfig,
    gprl: GprlConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            via_count: 15,
            kernel: KernelParams::default(),
            objective: ObjectiveWeights::default(),
            env: EnvConfig::default(),
            max_offset: 0.2,
            bc_pairs: 2000,
            bc: BcConfig::default(),
            gprl: GprlConfig::default(),
        }
    }
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => Ok(serde_json::from_str(&read(p)?)?),
        None => Ok(RunConfig::default()),
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| invalid(format!("cannot read {}: {e}", path.display())))
}

fn write(dir: &Path, name: &str, contents: &[u8]) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let path = dir.join(name);
    fs::write(&path, contents)?;
    log::info!("wrote {}", path.display());
    Ok(path)
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<PathBuf> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write(dir, name, text.as_bytes())
}

fn load_demo(path: &Path) -> Result<Demonstration> {
    load_demonstration(fs::File::open(path).map_err(|e| invalid(format!("cannot open {}: {e}", path.display())))?)
}

/// Demonstration sampled from the skill itself, for Skill-GP references.
fn demo_from_skill(skill: &SkillModel) -> Result<Demonstration> {
    let samples = skill.sample_uniform(401);
    Demonstration::new(
        samples.iter().map(|s| s.time).collect(),
        samples.iter().map(|s| s.position).collect(),
        samples.iter().map(|s| s.orientation()).collect(),
    )
}

/// Resolves the skill and its reference demonstration for `env`.
fn resolve_skill(source: &SkillSource, env: EnvKind, cfg: &RunConfig) -> Result<(SkillModel, Demonstration)> {
    let demo = match &source.demo {
        Some(p) => Some(load_demo(p)?),
        None => None,
    };
    match (&source.skill, demo) {
        (Some(p), demo) => {
            let skill = SkillModel::from_json(&read(p)?)?;
            let demo = match demo {
                Some(d) => d,
                None => demo_from_skill(&skill)?,
            };
            Ok((skill, demo))
        }
        (None, demo) => {
            let demo = match demo {
                Some(d) => d,
                None => env.demo_shape().demonstration()?,
            };
            let fit = fit_via_points(&demo, cfg.via_count, cfg.kernel)?;
            Ok((SkillModel::build(fit.via, cfg.kernel)?, demo))
        }
    }
}

fn adapter_for(
    method: Method,
    skill: &SkillModel,
    demo: &Demonstration,
    cfg: &RunConfig,
    checkpoint: Option<&Path>,
) -> Result<Adapter> {
    let need = |what: &str| {
        checkpoint.ok_or_else(|| invalid(format!("method {method} needs a {what} checkpoint")))
    };
    Ok(match method {
        Method::Vanilla => Adapter::Vanilla,
        Method::SkillGp => Adapter::SkillGp(Box::new(SkillGpSolver::new(skill, demo, cfg.objective)?)),
        Method::Bc => Adapter::Bc(Box::new(BcPolicy::from_json(&read(need("cloning")?)?)?)),
        Method::Gprl => Adapter::Gprl(Box::new(GprlPolicy::from_json(&read(need("RL")?)?)?)),
    })
}

#[derive(Serialize)]
struct FitReport {
    via_count: usize,
    position_rmse: f64,
    rotation_rmse: f64,
    converged: bool,
    iterations: usize,
}

fn cmd_fit(args: FitArgs) -> Result<()> {
    let cfg = load_config(args.common.config.as_deref())?;
    let n_via = args.via.unwrap_or(cfg.via_count);
    let demo = load_demo(&args.demo)?;
    let fit = fit_via_points(&demo, n_via, cfg.kernel)?;
    let skill = SkillModel::build(fit.via.clone(), cfg.kernel)?;
    let (position_rmse, rotation_rmse) = reconstruction_rmse(&skill, &demo);
    write(&args.common.out, "skill.json", skill.to_json()?.as_bytes())?;
    write_json(
        &args.common.out,
        "fit_report.json",
        &FitReport {
            via_count: n_via,
            position_rmse,
            rotation_rmse,
            converged: fit.converged,
            iterations: fit.iterations,
        },
    )?;
    Ok(())
}

fn cmd_adapt(args: AdaptArgs) -> Result<()> {
    let cfg = load_config(args.common.config.as_deref())?;
    let (skill, demo) = resolve_skill(&args.source, args.env, &cfg)?;
    if args.offset.len() != 2 || args.goal_shift.len() != 2 {
        return Err(invalid("--offset and --goal-shift take exactly two values dx,dy"));
    }
    let tc: TaskConfiguration = match &args.tc {
        Some(p) => serde_json::from_str(&read(p)?)?,
        None => tc_with_offset(args.env, [args.offset[0], args.offset[1]], [args.goal_shift[0], args.goal_shift[1]]),
    };
    if tc.env != args.env {
        return Err(invalid(format!("task configuration is for {}, not {}", tc.env, args.env)));
    }
    let adapter = adapter_for(args.method, &skill, &demo, &cfg, args.checkpoint.as_deref())?;
    let started = Instant::now();
    let adapted = adapter.adapt(&skill, &tc, 0.0)?;
    let latency = started.elapsed().as_secs_f64();
    let row = score_adapted(&adapter, &skill, &tc, &cfg.env, &adapted, latency)?;
    write(&args.common.out, "adapted_skill.json", adapted.to_json()?.as_bytes())?;
    write_json(&args.common.out, "adapt_report.json", &row)?;
    Ok(())
}

#[derive(Serialize)]
struct BcSummary {
    pairs: usize,
    skipped: usize,
    clamped: usize,
    train_mse: f64,
    holdout_mse: f64,
    train_pairs: usize,
    holdout_pairs: usize,
}

fn cmd_train_bc(args: TrainArgs) -> Result<()> {
    let mut cfg = load_config(args.common.config.as_deref())?;
    if let Some(seed) = args.seed {
        cfg.bc.seed = seed;
    }
    let pairs = args.n.unwrap_or(cfg.bc_pairs);
    let (skill, demo) = resolve_skill(&args.source, args.env, &cfg)?;
    let solver = SkillGpSolver::new(&skill, &demo, cfg.objective)?;
    let ds = generate_expert_dataset(args.env, &solver, pairs, cfg.max_offset, cfg.bc.seed)?;
    let mut csv = Vec::new();
    ds.save_csv(&mut csv)?;
    write(&args.common.out, "bc_dataset.csv", &csv)?;
    let (policy, report) = train_clone(&ds, &cfg.bc)?;
    write(&args.common.out, "bc_policy.json", policy.to_json()?.as_bytes())?;
    let mut curve = String::from("epoch,loss\n");
    for (i, l) in report.epoch_losses.iter().enumerate() {
        curve.push_str(&format!("{i},{l}\n"));
    }
    write(&args.common.out, "bc_curve.csv", curve.as_bytes())?;
    write_json(
        &args.common.out,
        "bc_report.json",
        &BcSummary {
            pairs: ds.len(),
            skipped: ds.skipped,
            clamped: ds.clamped,
            train_mse: report.train_mse,
            holdout_mse: report.holdout_mse,
            train_pairs: report.train_pairs,
            holdout_pairs: report.holdout_pairs,
        },
    )?;
    Ok(())
}

#[derive(Serialize)]
struct RlSummary {
    episodes: usize,
    reloads: usize,
    reverted_updates: usize,
    best_score: f64,
    final_temperature: f64,
}

fn cmd_train_rl(args: TrainArgs) -> Result<()> {
    let mut cfg = load_config(args.common.config.as_deref())?;
    if let Some(seed) = args.seed {
        cfg.gprl.seed = seed;
    }
    if let Some(n) = args.n {
        cfg.gprl.episodes = n;
    }
    cfg.gprl.max_offset = cfg.max_offset;
    let (skill, _) = resolve_skill(&args.source, args.env, &cfg)?;
    let training = train_gprl(args.env, &skill, &cfg.gprl, &cfg.env)?;
    write(&args.common.out, "gprl_policy.json", training.policy.to_json()?.as_bytes())?;
    let mut curve = Vec::new();
    write_curve_csv(&training.curve, &mut curve)?;
    write(&args.common.out, "gprl_curve.csv", &curve)?;
    let last = training.curve.last();
    write_json(
        &args.common.out,
        "gprl_report.json",
        &RlSummary {
            episodes: training.curve.len(),
            reloads: training.reloads,
            reverted_updates: training.reverted_updates,
            best_score: last.map_or(f64::NEG_INFINITY, |r| r.best_score),
            final_temperature: last.map_or(0.0, |r| r.temperature),
        },
    )?;
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let cfg = load_config(args.common.config.as_deref())?;
    let settings = EvalSettings {
        n: args.n,
        seed: args.seed,
        max_offset: cfg.max_offset,
    };
    let mut report = EvalReport::default();
    for env in &args.env {
        let (skill, demo) = resolve_skill(&args.source, *env, &cfg)?;
        let adapters = args
            .methods
            .iter()
            .map(|m| {
                let ckpt = match m {
                    Method::Bc => args.bc.as_deref(),
                    Method::Gprl => args.gprl.as_deref(),
                    _ => None,
                };
                adapter_for(*m, &skill, &demo, &cfg, ckpt)
            })
            .collect::<Result<Vec<_>>>()?;
        report.extend(evaluate(&adapters, &skill, *env, &settings, &cfg.env)?);
    }
    let mut csv = Vec::new();
    report.write_csv(&mut csv, true)?;
    write(&args.common.out, "report.csv", &csv)?;
    write_json(&args.common.out, "summary.json", &report.summarize(&settings))?;
    Ok(())
}

fn cmd_demo_gen(args: DemoGenArgs) -> Result<()> {
    let shapes: Vec<DemoShape> = match &args.shape {
        Some(name) => vec![DemoShape::ALL
            .into_iter()
            .find(|s| s.name() == name)
            .ok_or_else(|| invalid(format!("unknown shape '{name}' (expected sine-arc, push-sweep or lift-and-carry)")))?],
        None => DemoShape::ALL.to_vec(),
    };
    for shape in shapes {
        let mut csv = Vec::new();
        shape.demonstration()?.save_csv(&mut csv)?;
        write(&args.out, &format!("{}.csv", shape.name()), &csv)?;
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::NumericFailure(_) => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Fit(a) => cmd_fit(a),
        Command::Adapt(a) => cmd_adapt(a),
        Command::TrainBc(a) => cmd_train_bc(a),
        Command::TrainRl(a) => cmd_train_rl(a),
        Command::Eval(a) => cmd_eval(a),
        Command::DemoGen(a) => cmd_demo_gen(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
