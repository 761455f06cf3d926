use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use wasabi_core::analysis::{
    ablate_horizon, aggregate, evaluate_checkpoint, evaluate_policy, histograms_csv, learning_curves_csv,
    reference_above_surface_quantile, reward_samples, reward_surface, surface_csv, SurfaceConfig,
};
use wasabi_core::dataset::{write_dataset, ReferenceDataset};
use wasabi_core::discriminator::LossKind;
use wasabi_core::error::Error;
use wasabi_core::sim::{demo_dataset, DemoOptions, Motion};
use wasabi_core::train::{run_training, Checkpoint, RunDir, TrainConfig, Trainer};

/// Relative output paths are resolved against this directory when it is set.
const OUTPUT_ROOT_VAR: &str = "WASABI_OUTPUT_ROOT";

#[derive(Parser)]
#[command(name = "wasabi", version, about = "Adversarial imitation from rough base-motion demonstrations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate rough demonstration CSVs for a motion.
    DemoGen(DemoGenArgs),
    /// Train policies (one run per seed).
    Train(TrainArgs),
    /// Evaluate trained runs with DTW and the handcrafted task reward.
    Eval(EvalArgs),
    /// Export reward surfaces and reward histograms of a trained run.
    Analyze(AnalyzeArgs),
    /// Sweep discriminator horizons for both losses.
    Ablate(AblateArgs),
}

#[derive(Args)]
struct DemoGenArgs {
    #[arg(long, value_parser = parse_motion)]
    motion: Motion,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 20)]
    trajectories: usize,
    /// Disable jitter and noise.
    #[arg(long)]
    clean: bool,
    /// Write all trajectories into one multi-trajectory file.
    #[arg(long)]
    single_file: bool,
}

#[derive(Args, Clone)]
struct Overrides {
    /// TOML config file; defaults apply to missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_parser = parse_motion)]
    task: Option<Motion>,
    #[arg(long, value_parser = parse_loss)]
    loss: Option<LossKind>,
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long)]
    iterations: Option<usize>,
    /// Comma-separated training seeds.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    w_imitation: Option<f64>,
    #[arg(long)]
    num_envs: Option<usize>,
    #[arg(long)]
    workers: Option<usize>,
    /// Reference CSV file or directory (generated demonstrations otherwise).
    #[arg(long)]
    reference: Option<PathBuf>,
    /// Output directory for runs.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    overrides: Overrides,
    /// Continue the run in this directory from its latest checkpoint.
    #[arg(long, conflicts_with_all = ["config", "task", "loss", "horizon", "seeds", "reference", "out"])]
    resume: Option<PathBuf>,
    /// Stop after this many iterations in this invocation (the run can be resumed).
    #[arg(long)]
    stop_after: Option<usize>,
    /// Skip the final evaluation.
    #[arg(long)]
    no_eval: bool,
}

#[derive(Args)]
struct EvalArgs {
    /// Run directories or checkpoint files.
    #[arg(long = "run", num_args = 1.., required_unless_present = "fresh")]
    runs: Vec<PathBuf>,
    /// Evaluate an untrained policy built from the config options instead.
    #[arg(long)]
    fresh: bool,
    #[command(flatten)]
    overrides: Overrides,
    /// Independent evaluations per run, each with its own evaluation seed.
    #[arg(long, default_value_t = 1)]
    eval_seeds: usize,
    /// Rollouts per evaluation.
    #[arg(long)]
    rollouts: Option<usize>,
    /// Report path (JSON); printed to stdout when omitted.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Run directory or checkpoint file.
    #[arg(long)]
    run: PathBuf,
    /// Grid points per axis.
    #[arg(long, default_value_t = 101)]
    points: usize,
    #[arg(long, default_value_t = 40)]
    bins: usize,
    /// Grid margin around the reference range, as a fraction of the span.
    #[arg(long, default_value_t = 0.25)]
    margin: f64,
    #[arg(long, value_delimiter = ',', num_args = 2)]
    pitch_rate_range: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', num_args = 2)]
    height_range: Option<Vec<f64>>,
    /// Output directory (the run directory by default).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    overrides: Overrides,
    #[arg(long, value_delimiter = ',', num_args = 1.., required = true)]
    horizons: Vec<usize>,
    #[arg(long, value_delimiter = ',', value_parser = parse_loss, default_value = "lsgan,wgan")]
    losses: Vec<LossKind>,
    #[arg(long)]
    no_eval: bool,
}

enum Failure {
    Usage(String),
    Config(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        match e.downcast_ref::<Error>() {
            Some(Error::Config(_)) | Some(Error::Toml(_)) => Failure::Config(format!("{e:#}")),
            _ => Failure::Runtime(e),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::from(anyhow::Error::from(e))
    }
}

fn parse_motion(s: &str) -> Result<Motion, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_loss(s: &str) -> Result<LossKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn output_path(p: &Path) -> PathBuf {
    match std::env::var_os(OUTPUT_ROOT_VAR) {
        Some(root) if p.is_relative() => PathBuf::from(root).join(p),
        _ => p.to_path_buf(),
    }
}

fn build_config(o: &Overrides) -> Result<TrainConfig, Failure> {
    let mut cfg = match &o.config {
        Some(p) => TrainConfig::load(p).with_context(|| format!("reading {}", p.display()))?,
        None => TrainConfig::default(),
    };
    if let Some(t) = o.task {
        cfg.task = t;
    }
    if let Some(l) = o.loss {
        cfg.discriminator.loss_kind = l;
    }
    if let Some(h) = o.horizon {
        cfg.discriminator.horizon = h;
    }
    if let Some(n) = o.iterations {
        cfg.iterations = n;
    }
    if let Some(s) = &o.seeds {
        cfg.seeds = s.clone();
    }
    if let Some(w) = o.w_imitation {
        cfg.reward.w_imitation = w;
    }
    if let Some(n) = o.num_envs {
        cfg.ppo.num_envs = n;
    }
    if let Some(n) = o.workers {
        cfg.workers = n;
    }
    if let Some(r) = &o.reference {
        cfg.reference = Some(r.clone());
    }
    if let Some(d) = &o.out {
        cfg.output_dir = d.clone();
    }
    cfg.output_dir = output_path(&cfg.output_dir);
    cfg.validate()?;
    Ok(cfg)
}

fn run_name(cfg: &TrainConfig, seed: u64) -> String {
    format!(
        "{}_{}_h{}/seed_{seed}",
        cfg.task,
        cfg.discriminator.loss_kind,
        cfg.discriminator.horizon
    )
}

fn checkpoint_path(p: &Path) -> PathBuf {
    if p.is_dir() {
        RunDir::new(p).latest_checkpoint()
    } else {
        p.to_path_buf()
    }
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, serde_json::to_string_pretty(value)?).with_context(|| format!("writing {}", path.display()))
}

fn train_one(mut trainer: Trainer, run: &RunDir, stop_after: Option<usize>, eval: bool) -> Result<(), Failure> {
    let target = trainer.config.iterations;
    if let Some(n) = stop_after {
        trainer.config.iterations = (trainer.iteration + n).min(target);
    }
    let every = (trainer.config.iterations / 20).max(1);
    run_training(&mut trainer, run, |m| {
        if m.iteration % every == 0 {
            info!(
                "iter {:5}  reward {:8.4}  imitation {:8.4}  D(ref) {:8.4}  D(pol) {:8.4}  kl {:.4}",
                m.iteration, m.mean_total_reward, m.mean_imitation_reward, m.disc_mean_ref, m.disc_mean_pol, m.kl
            );
        }
    })?;
    if trainer.iteration < target {
        // keep the real schedule in the checkpoint so a resume runs to the end
        trainer.config.iterations = target;
        trainer.checkpoint().save(&run.latest_checkpoint())?;
        println!("{}: stopped at iteration {}", run.root.display(), trainer.iteration);
        return Ok(());
    }
    if eval {
        let cfg = &trainer.config;
        let report = evaluate_policy(cfg, &trainer.ac, &trainer.dataset, trainer.seed, trainer.iteration, cfg.eval.seed)?;
        write_json(&run.root.join("eval.json"), &report)?;
        print!("{}: DTW {:.3} (stand-still {:.3}, ratio {:.3})", run.root.display(), report.dtw.mean, report.stand_still_dtw, report.dtw_ratio);
        if let Some(h) = &report.handcrafted {
            print!(", {} {:.3} ± {:.3}", h.metric, h.mean, h.std);
        }
        println!();
    } else {
        println!("{}: trained {} iterations", run.root.display(), trainer.iteration);
    }
    Ok(())
}

fn cmd_demo_gen(a: DemoGenArgs) -> Result<(), Failure> {
    if a.trajectories == 0 {
        return Err(Failure::Usage("--trajectories must be >= 1".into()));
    }
    let sim = wasabi_core::sim::SimParams::default();
    let base = if a.clean { DemoOptions::noiseless() } else { DemoOptions::default() };
    let opts = DemoOptions {
        trajectories: a.trajectories,
        dt: sim.control_dt(),
        ..base
    };
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let ds = demo_dataset(a.motion, &sim, &opts, &mut rng);
    let out = output_path(&a.out);
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    if a.single_file {
        let path = out.join(format!("{}.csv", a.motion));
        write_dataset(&path, &ds)?;
        println!("wrote {}", path.display());
    } else {
        for (k, t) in ds.trajectories.iter().enumerate() {
            let one = ReferenceDataset::new(vec![t.clone()], ds.motion_name.clone(), ds.dt);
            write_dataset(&out.join(format!("{}_{k:02}.csv", a.motion)), &one)?;
        }
        println!("wrote {} trajectories to {}", ds.trajectories.len(), out.display());
    }
    Ok(())
}

fn cmd_train(a: TrainArgs) -> Result<(), Failure> {
    if let Some(dir) = &a.resume {
        let run = RunDir::new(output_path(dir));
        let mut ck = Checkpoint::load(&run.latest_checkpoint())?;
        if let Some(n) = a.overrides.iterations {
            ck.config.iterations = n;
        }
        ck.config.validate()?;
        info!("resuming {} at iteration {}", run.root.display(), ck.iteration);
        return train_one(Trainer::from_checkpoint(ck)?, &run, a.stop_after, !a.no_eval);
    }
    let cfg = build_config(&a.overrides)?;
    for &seed in &cfg.seeds {
        let run = RunDir::new(cfg.output_dir.join(run_name(&cfg, seed)));
        info!("training {} for {} iterations", run.root.display(), cfg.iterations);
        let mut one = cfg.clone();
        one.seeds = vec![seed];
        train_one(Trainer::new(one, seed)?, &run, a.stop_after, !a.no_eval)?;
    }
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<(), Failure> {
    if a.eval_seeds == 0 {
        return Err(Failure::Usage("--eval-seeds must be >= 1".into()));
    }
    let mut reports = Vec::new();
    let mut evaluate = |ck: &mut Checkpoint, dataset: &ReferenceDataset| -> Result<(), Failure> {
        if let Some(n) = a.rollouts {
            ck.config.eval.rollouts = n;
        }
        for k in 0..a.eval_seeds as u64 {
            let seed = ck.config.eval.seed + 1000 * k;
            reports.push(evaluate_checkpoint(ck, dataset, seed)?);
        }
        Ok(())
    };
    if a.fresh {
        let cfg = build_config(&a.overrides)?;
        for &seed in &cfg.seeds {
            let mut ck = Trainer::new(cfg.clone(), seed)?.checkpoint();
            let ds = ck.config.reference_dataset()?;
            evaluate(&mut ck, &ds)?;
        }
    }
    for r in &a.runs {
        let path = checkpoint_path(&output_path(r));
        let mut ck = Checkpoint::load(&path)?;
        let ds = ck.config.reference_dataset()?;
        evaluate(&mut ck, &ds)?;
    }
    let agg = aggregate(reports);
    for r in &agg.runs {
        eprintln!(
            "{} {} H={} seed {} iter {} eval-seed {}: DTW {:.3} ± {:.3} (stand-still {:.3})",
            r.task, r.loss_kind, r.horizon, r.train_seed, r.iteration, r.eval_seed, r.dtw.mean, r.dtw.std, r.stand_still_dtw
        );
    }
    eprint!("aggregate DTW {:.3} ± {:.3}, ratio {:.3}", agg.dtw_mean, agg.dtw_std, agg.dtw_ratio_mean);
    if let (Some(m), Some(s)) = (agg.handcrafted_mean, agg.handcrafted_std) {
        eprint!(", handcrafted {m:.3} ± {s:.3}");
    }
    eprintln!();
    match &a.report {
        Some(p) => write_json(&output_path(p), &agg)?,
        None => println!("{}", serde_json::to_string_pretty(&agg).context("serializing report")?),
    }
    Ok(())
}

fn cmd_analyze(a: AnalyzeArgs) -> Result<(), Failure> {
    let run = output_path(&a.run);
    let ck = Checkpoint::load(&checkpoint_path(&run))?;
    let ds = ck.config.reference_dataset()?;
    let mut grid = SurfaceConfig::from_dataset(&ds, a.points, a.margin);
    if let Some(r) = &a.pitch_rate_range {
        grid.pitch_rate = (r[0], r[1]);
    }
    if let Some(r) = &a.height_range {
        grid.height = (r[0], r[1]);
    }
    let out = match &a.out {
        Some(o) => output_path(o),
        None if run.is_dir() => run.clone(),
        None => run.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;

    let surface = reward_surface(&ck.discriminator, &ck.stats, &ds, &grid)?;
    fs::write(out.join("reward_surface.csv"), surface_csv(&surface)).context("writing reward surface")?;
    let above = reference_above_surface_quantile(&ck.discriminator, &ck.stats, &ds, &surface, 0.9)?;
    let samples = reward_samples(&ck, &ds)?;
    fs::write(out.join("reward_histogram.csv"), histograms_csv(&samples, a.bins)?).context("writing histograms")?;
    let zero_frac = samples.policy.iter().filter(|&&r| r == 0.0).count() as f64 / samples.policy.len().max(1) as f64;
    let summary = serde_json::json!({
        "loss_kind": ck.config.discriminator.loss_kind,
        "iteration": ck.iteration,
        "grid": grid,
        "reference_above_surface_p90": above,
        "policy_reward_zero_fraction": zero_frac,
        "policy_samples": samples.policy.len(),
        "reference_samples": samples.reference.len(),
    });
    write_json(&out.join("analysis.json"), &summary)?;
    println!(
        "{}: {} grid points, {:.1}% of reference windows above the surface 90th percentile",
        out.display(),
        surface.len(),
        100.0 * above
    );
    Ok(())
}

fn cmd_ablate(a: AblateArgs) -> Result<(), Failure> {
    if a.horizons.is_empty() || a.horizons.contains(&0) {
        return Err(Failure::Usage("--horizons needs a non-empty list of positive values".into()));
    }
    let cfg = build_config(&a.overrides)?;
    let root = cfg.output_dir.join(format!("ablate_{}", cfg.task));
    let runs = ablate_horizon(&cfg, &a.losses, &a.horizons, &root, !a.no_eval, |tag| info!("ablation run {tag}"))?;
    fs::write(root.join("learning_curves.csv"), learning_curves_csv(&runs)).context("writing learning curves")?;
    let finals: Vec<_> = runs
        .iter()
        .map(|r| {
            serde_json::json!({
                "tag": r.tag,
                "loss_kind": r.loss_kind,
                "horizon": r.horizon,
                "seed": r.seed,
                "dtw": r.eval.as_ref().map(|e| e.dtw.mean),
                "dtw_ratio": r.eval.as_ref().map(|e| e.dtw_ratio),
                "handcrafted": r.eval.as_ref().and_then(|e| e.handcrafted.as_ref().map(|h| h.mean)),
            })
        })
        .collect();
    write_json(&root.join("summary.json"), &finals)?;
    println!("{} runs written to {}", runs.len(), root.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::DemoGen(a) => cmd_demo_gen(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Analyze(a) => cmd_analyze(a),
        Command::Ablate(a) => cmd_ablate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Config(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(3)
        }
    }
}
