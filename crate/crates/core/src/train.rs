//! Training configuration and the adversarial imitation loop: rollouts,
//! reward assembly, PPO, then discriminator updates, once per iteration.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{load_reference_dataset, ReferenceDataset};
use crate::discriminator::{Discriminator, DiscriminatorConfig};
use crate::dtw::DtwConfig;
use crate::error::{Error, Result};
use crate::observation::NUM_JOINTS;
use crate::reward::{HandcraftedWeights, RewardWeights, RunningStats};
use crate::rl::{collect_rollout, ActorCritic, EnvConfig, EnvPool, PpoConfig, RolloutBuffer};
use crate::sim::{demo_dataset, DemoOptions, Motion, SimParams};

pub const CHECKPOINT_FORMAT: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub rollouts: usize,
    /// Frames per evaluation rollout; the longest reference when unset.
    pub steps: Option<usize>,
    pub seed: u64,
    pub dtw: DtwConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            rollouts: 20,
            steps: None,
            seed: 10_000,
            dtw: DtwConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub task: Motion,
    pub seeds: Vec<u64>,
    /// Desk-scale default 2000 (the original schedule ran 5000).
    pub iterations: usize,
    pub output_dir: PathBuf,
    /// Reference CSV file or directory; generated demonstrations when unset.
    pub reference: Option<PathBuf>,
    pub demo_seed: u64,
    pub workers: usize,
    /// Checkpoint period in iterations; 0 keeps only the final checkpoint.
    pub checkpoint_every: usize,
    pub sim: SimParams,
    pub env: EnvConfig,
    pub ppo: PpoConfig,
    pub discriminator: DiscriminatorConfig,
    pub reward: RewardWeights,
    pub handcrafted: HandcraftedWeights,
    pub demo: DemoOptions,
    pub eval: EvalConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            task: Motion::Leap,
            seeds: vec![0],
            iterations: 2000,
            output_dir: PathBuf::from("runs"),
            reference: None,
            demo_seed: 7,
            workers: 1,
            checkpoint_every: 500,
            sim: SimParams::default(),
            env: EnvConfig::default(),
            ppo: PpoConfig::default(),
            discriminator: DiscriminatorConfig::default(),
            reward: RewardWeights::default(),
            handcrafted: HandcraftedWeights::default(),
            demo: DemoOptions::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Toml(e.to_string()))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Toml(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    /// Collects every violated constraint into one [`Error::Config`].
    pub fn validate(&self) -> Result<()> {
        let mut errors = Vec::new();
        if self.seeds.is_empty() {
            errors.push("seeds must not be empty".to_string());
        }
        if self.iterations == 0 {
            errors.push("iterations must be >= 1".to_string());
        }
        if self.workers == 0 {
            errors.push("workers must be >= 1".to_string());
        }
        if self.eval.rollouts == 0 {
            errors.push("eval.rollouts must be >= 1".to_string());
        }
        if self.eval.steps == Some(0) {
            errors.push("eval.steps must be >= 1".to_string());
        }
        if self.demo.trajectories == 0 {
            errors.push("demo.trajectories must be >= 1".to_string());
        }
        if !(self.demo.dt > 0.0) {
            errors.push("demo.dt must be > 0".to_string());
        }
        if (self.demo.dt - self.sim.control_dt()).abs() > 1e-9 {
            errors.push(format!(
                "demo.dt ({}) must equal the control period sim.dt_physics * sim.control_decimation ({})",
                self.demo.dt,
                self.sim.control_dt()
            ));
        }
        self.sim.validate("sim.", &mut errors);
        self.env.validate("env.", &mut errors);
        self.ppo.validate("ppo.", &mut errors);
        self.discriminator.validate("discriminator.", &mut errors);
        self.reward.validate("reward.", &mut errors);
        if (self.reward.gamma - self.ppo.gamma).abs() > 0.0 {
            errors.push("reward.gamma must equal ppo.gamma".to_string());
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errors))
        }
    }

    /// The reference dataset: loaded from `reference` or generated from `demo_seed`.
    pub fn reference_dataset(&self) -> Result<ReferenceDataset> {
        let ds = match &self.reference {
            Some(path) => load_reference_dataset(path, self.discriminator.horizon)?,
            None => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.demo_seed);
                let opts = DemoOptions {
                    dt: self.sim.control_dt(),
                    ..self.demo.clone()
                };
                demo_dataset(self.task, &self.sim, &opts, &mut rng)
            }
        };
        if self.discriminator.full_state && !ds.has_joints() {
            return Err(Error::InvalidArgument(
                "discriminator.full_state needs reference joint columns".into(),
            ));
        }
        if ds.window_count(self.discriminator.horizon) == 0 {
            return Err(Error::InvalidArgument(format!(
                "no reference trajectory is long enough for horizon {}",
                self.discriminator.horizon
            )));
        }
        Ok(ds)
    }

    pub fn eval_steps(&self, dataset: &ReferenceDataset) -> usize {
        self.eval.steps.unwrap_or_else(|| dataset.max_len())
    }
}

/// One JSONL metrics record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationMetrics {
    pub iteration: usize,
    pub mean_total_reward: f64,
    pub mean_imitation_reward: f64,
    pub mean_regularization_reward: f64,
    pub mean_score: f64,
    pub disc_loss: f64,
    pub disc_adversarial: f64,
    pub disc_grad_penalty: f64,
    pub disc_mean_ref: f64,
    pub disc_mean_pol: f64,
    pub kl: f64,
    pub clip_frac: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub lr: f64,
    pub mean_episode_length: Option<f64>,
    pub termination_rate: f64,
}

/// Everything needed to continue a run bit-exactly.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub build: String,
    pub iteration: usize,
    pub seed: u64,
    pub config: TrainConfig,
    pub actor_critic: ActorCritic,
    pub discriminator: Discriminator,
    pub stats: RunningStats,
    pub pool: EnvPool,
    pub rng: ChaCha8Rng,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        let tmp = path.with_extension("json.tmp");
        fs::write(&tmp, serde_json::to_vec(self)?)?;
        fs::rename(tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        let ck: Checkpoint = serde_json::from_slice(&bytes)?;
        if ck.format_version != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint format {} (expected {CHECKPOINT_FORMAT})",
                ck.format_version
            )));
        }
        Ok(ck)
    }
}

/// Build identifier recorded in run directories and checkpoints.
pub fn build_id() -> String {
    format!(
        "{}-{}",
        env!("CARGO_PKG_VERSION"),
        option_env!("WASABI_GIT_REV").unwrap_or("unknown")
    )
}

pub struct Trainer {
    pub config: TrainConfig,
    pub seed: u64,
    pub iteration: usize,
    pub ac: ActorCritic,
    pub disc: Discriminator,
    pub stats: RunningStats,
    pub pool: EnvPool,
    pub rng: ChaCha8Rng,
    pub dataset: ReferenceDataset,
}

impl Trainer {
    pub fn new(config: TrainConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let dataset = config.reference_dataset()?;
        Self::with_dataset(config, seed, dataset)
    }

    pub fn with_dataset(config: TrainConfig, seed: u64, dataset: ReferenceDataset) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mean, std) = dataset.frame_moments(config.discriminator.full_state);
        let disc = Discriminator::new(config.discriminator.clone(), &mean, &std, &mut rng)?;
        let ac = ActorCritic::new(config.env.obs_dim(), NUM_JOINTS, &config.ppo, &mut rng)?;
        let pool = EnvPool::new(
            config.sim.clone(),
            config.env.clone(),
            config.discriminator.horizon,
            config.discriminator.full_state,
            config.ppo.num_envs,
            seed,
        )?;
        Ok(Self {
            config,
            seed,
            iteration: 0,
            ac,
            disc,
            stats: RunningStats::default(),
            pool,
            rng,
            dataset,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format_version: CHECKPOINT_FORMAT,
            build: build_id(),
            iteration: self.iteration,
            seed: self.seed,
            config: self.config.clone(),
            actor_critic: self.ac.clone(),
            discriminator: self.disc.clone(),
            stats: self.stats.clone(),
            pool: self.pool.clone(),
            rng: self.rng.clone(),
        }
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self> {
        let dataset = ck.config.reference_dataset()?;
        Ok(Self {
            config: ck.config,
            seed: ck.seed,
            iteration: ck.iteration,
            ac: ck.actor_critic,
            disc: ck.discriminator,
            stats: ck.stats,
            pool: ck.pool,
            rng: ck.rng,
            dataset,
        })
    }

    /// One iteration: rollout, reward statistics, PPO, discriminator.
    pub fn step(&mut self) -> Result<IterationMetrics> {
        let cfg = &self.config;
        let buf = collect_rollout(
            &mut self.pool,
            &self.ac,
            &self.disc,
            &self.stats,
            &cfg.reward,
            cfg.ppo.steps_per_iter,
            cfg.workers,
        )?;
        self.stats.update_all(&buf.scores)?;
        let (batch, _) = buf.to_batch(cfg.ppo.gamma, cfg.ppo.gae_lambda)?;
        let ppo = self.ac.ppo_update(&batch, &cfg.ppo, &mut self.rng)?;
        let disc = self.update_discriminator(&buf)?;
        self.iteration += 1;

        let n = buf.len() as f64;
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
        Ok(IterationMetrics {
            iteration: self.iteration,
            mean_total_reward: mean(&buf.rewards),
            mean_imitation_reward: mean(&buf.imitation),
            mean_regularization_reward: mean(&buf.regularization),
            mean_score: mean(&buf.scores),
            disc_loss: disc[0],
            disc_adversarial: disc[1],
            disc_grad_penalty: disc[2],
            disc_mean_ref: disc[3],
            disc_mean_pol: disc[4],
            kl: ppo.kl,
            clip_frac: ppo.clip_frac,
            value_loss: ppo.value_loss,
            entropy: ppo.entropy,
            lr: ppo.learning_rate,
            mean_episode_length: (!buf.finished_lengths.is_empty())
                .then(|| buf.finished_lengths.iter().sum::<usize>() as f64 / buf.finished_lengths.len() as f64),
            termination_rate: buf.terminals.iter().filter(|&&t| t).count() as f64 / n,
        })
    }

    /// Minibatch updates over the fresh policy windows, paired with uniformly
    /// sampled reference windows. Returns averaged `[loss, adversarial, penalty, mean_ref, mean_pol]`.
    fn update_discriminator(&mut self, buf: &RolloutBuffer) -> Result<[f64; 5]> {
        let dc = self.config.discriminator.clone();
        let mut idx: Vec<usize> = (0..buf.windows.len()).collect();
        let mb = dc.minibatches.min(idx.len()).max(1);
        let mut acc = [0.0; 5];
        let mut count = 0.0;
        for _ in 0..dc.epochs_per_iter {
            idx.shuffle(&mut self.rng);
            for k in 0..mb {
                let part = &idx[k * idx.len() / mb..(k + 1) * idx.len() / mb];
                let policy: Vec<_> = part.iter().map(|&i| buf.windows[i].clone()).collect();
                let reference = self
                    .dataset
                    .sample_windows(policy.len(), dc.horizon, dc.full_state, &mut self.rng)?;
                let l = self.disc.update(&reference, &policy)?;
                for (a, v) in acc.iter_mut().zip([l.loss, l.adversarial, l.grad_norm2, l.mean_ref, l.mean_pol]) {
                    *a += v;
                }
                count += 1.0;
            }
        }
        Ok(acc.map(|a| if count > 0.0 { a / count } else { f64::NAN }))
    }
}

/// Files of one training run.
#[derive(Debug, Clone)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn metrics(&self) -> PathBuf {
        self.root.join("metrics.jsonl")
    }

    pub fn latest_checkpoint(&self) -> PathBuf {
        self.root.join("checkpoints").join("latest.json")
    }

    pub fn checkpoint_at(&self, iteration: usize) -> PathBuf {
        self.root.join("checkpoints").join(format!("iter_{iteration:06}.json"))
    }

    /// Writes the resolved config, seed and build identifier.
    pub fn write_manifest(&self, config: &TrainConfig, seed: u64) -> Result<()> {
        fs::create_dir_all(&self.root)?;
        fs::write(self.root.join("config.toml"), config.to_toml_string()?)?;
        fs::write(self.root.join("seed.txt"), format!("{seed}\n"))?;
        fs::write(self.root.join("build.txt"), format!("{}\n", build_id()))?;
        Ok(())
    }
}

/// Runs `trainer` until `config.iterations`, appending metrics and writing
/// checkpoints. `on_iteration` sees every record (e.g. for console output).
pub fn run_training(
    trainer: &mut Trainer,
    run: &RunDir,
    mut on_iteration: impl FnMut(&IterationMetrics),
) -> Result<Vec<IterationMetrics>> {
    run.write_manifest(&trainer.config, trainer.seed)?;
    // a resumed run drops records logged after its checkpoint
    if run.metrics().exists() {
        let kept: Vec<IterationMetrics> = read_metrics(&run.metrics())?
            .into_iter()
            .filter(|m| m.iteration <= trainer.iteration)
            .collect();
        let mut text = String::new();
        for m in &kept {
            text.push_str(&serde_json::to_string(m)?);
            text.push('\n');
        }
        fs::write(run.metrics(), text)?;
    }
    let mut log = fs::OpenOptions::new().create(true).append(true).open(run.metrics())?;
    let mut out = Vec::new();
    while trainer.iteration < trainer.config.iterations {
        let m = trainer.step()?;
        writeln!(log, "{}", serde_json::to_string(&m)?)?;
        on_iteration(&m);
        let every = trainer.config.checkpoint_every;
        if every > 0 && trainer.iteration.is_multiple_of(every) {
            let ck = trainer.checkpoint();
            ck.save(&run.checkpoint_at(trainer.iteration))?;
            ck.save(&run.latest_checkpoint())?;
        }
        out.push(m);
    }
    log.flush()?;
    trainer.checkpoint().save(&run.latest_checkpoint())?;
    Ok(out)
}

/// Reads a metrics JSONL file.
pub fn read_metrics(path: &Path) -> Result<Vec<IterationMetrics>> {
    fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}
