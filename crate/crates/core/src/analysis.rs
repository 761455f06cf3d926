//! Evaluation reports, reward surfaces and histograms, and the discriminator
//! horizon sweep. Everything here emits plain JSON or CSV; nothing is plotted.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::ReferenceDataset;
use crate::discriminator::{Discriminator, LossKind};
use crate::dtw::{evaluate_policy_dtw, mean_std, stand_still_baseline, DtwReport};
use crate::error::{Error, Result};
use crate::observation::ObservationWindow;
use crate::reward::RunningStats;
use crate::rl::{collect_rollout, ActorCritic};
use crate::sim::Motion;
use crate::train::{run_training, Checkpoint, EvalConfig, IterationMetrics, RunDir, TrainConfig, Trainer};

/// Handcrafted task reward summed over each evaluation rollout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HandcraftedEval {
    pub metric: String,
    pub values: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: Motion,
    pub loss_kind: LossKind,
    pub horizon: usize,
    pub train_seed: u64,
    pub iteration: usize,
    pub eval_seed: u64,
    pub rollout_len: usize,
    pub dtw: DtwReport,
    pub stand_still_dtw: f64,
    /// `dtw.mean / stand_still_dtw`.
    pub dtw_ratio: f64,
    pub handcrafted: Option<HandcraftedEval>,
    pub terminated_rollouts: usize,
    pub eval_config: EvalConfig,
}

/// Name of the handcrafted metric reported for `task`, if it has one.
pub fn handcrafted_metric(task: Motion) -> Option<&'static str> {
    match task {
        Motion::StandUp => Some("standup"),
        Motion::BackFlip => Some("traversed_angle"),
        Motion::Leap | Motion::Wave => None,
    }
}

/// Mean-action rollouts of `ac` scored by DTW against `dataset`, with the
/// stand-still baseline and the task's handcrafted reward.
pub fn evaluate_policy(
    config: &TrainConfig,
    ac: &ActorCritic,
    dataset: &ReferenceDataset,
    train_seed: u64,
    iteration: usize,
    eval_seed: u64,
) -> Result<EvalReport> {
    let len = config.eval_steps(dataset);
    let ev = evaluate_policy_dtw(
        &ac.policy,
        &config.sim,
        &config.env,
        dataset,
        config.eval.rollouts,
        len,
        eval_seed,
        &config.eval.dtw,
        &config.handcrafted,
    )?;
    let base = stand_still_baseline(dataset, config.sim.standing_height(), len, &config.eval.dtw)?;
    let handcrafted = handcrafted_metric(config.task).map(|metric| {
        let values: Vec<f64> = ev
            .episodes
            .iter()
            .map(|e| match config.task {
                Motion::StandUp => e.standup_reward,
                _ => e.backflip_reward,
            })
            .collect();
        let (mean, std) = mean_std(&values);
        HandcraftedEval {
            metric: metric.to_string(),
            values,
            mean,
            std,
        }
    });
    Ok(EvalReport {
        task: config.task,
        loss_kind: config.discriminator.loss_kind,
        horizon: config.discriminator.horizon,
        train_seed,
        iteration,
        eval_seed,
        rollout_len: len,
        stand_still_dtw: base.mean,
        dtw_ratio: ev.report.mean / base.mean,
        terminated_rollouts: ev.episodes.iter().filter(|e| e.terminated_at.is_some()).count(),
        dtw: ev.report,
        handcrafted,
        eval_config: config.eval.clone(),
    })
}

/// Evaluates a checkpoint with its own config.
pub fn evaluate_checkpoint(ck: &Checkpoint, dataset: &ReferenceDataset, eval_seed: u64) -> Result<EvalReport> {
    evaluate_policy(&ck.config, &ck.actor_critic, dataset, ck.seed, ck.iteration, eval_seed)
}

/// Mean and std over independent evaluations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub runs: Vec<EvalReport>,
    pub dtw_mean: f64,
    pub dtw_std: f64,
    pub dtw_ratio_mean: f64,
    pub handcrafted_mean: Option<f64>,
    pub handcrafted_std: Option<f64>,
}

pub fn aggregate(runs: Vec<EvalReport>) -> AggregateReport {
    let dtw: Vec<f64> = runs.iter().map(|r| r.dtw.mean).collect();
    let ratios: Vec<f64> = runs.iter().map(|r| r.dtw_ratio).collect();
    let (dtw_mean, dtw_std) = mean_std(&dtw);
    let hand: Vec<f64> = runs.iter().filter_map(|r| r.handcrafted.as_ref().map(|h| h.mean)).collect();
    let (hm, hs) = if hand.len() == runs.len() && !hand.is_empty() {
        let (m, s) = mean_std(&hand);
        (Some(m), Some(s))
    } else {
        (None, None)
    };
    AggregateReport {
        dtw_mean,
        dtw_std,
        dtw_ratio_mean: mean_std(&ratios).0,
        handcrafted_mean: hm,
        handcrafted_std: hs,
        runs,
    }
}

/// Grid bounds for [`reward_surface`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurfaceConfig {
    pub pitch_rate: (f64, f64),
    pub height: (f64, f64),
    /// Points per axis.
    pub points: usize,
}

impl SurfaceConfig {
    /// Dataset range of each axis widened by `margin` of its span on both sides.
    pub fn from_dataset(dataset: &ReferenceDataset, points: usize, margin: f64) -> Self {
        let range = |k: usize| {
            let vals = dataset.trajectories.iter().flat_map(|t| t.observations.iter().map(move |o| o.to_array()[k]));
            let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
            let pad = (hi - lo).max(1e-3) * margin;
            (lo - pad, hi + pad)
        };
        Self {
            pitch_rate: range(PITCH_RATE),
            height: range(HEIGHT),
            points,
        }
    }
}

const PITCH_RATE: usize = 2;
const HEIGHT: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurfacePoint {
    pub pitch_rate: f64,
    pub height: f64,
    pub score: f64,
    pub reward: f64,
}

/// Imitation reward the discriminator would hand out, as used during training.
/// Before the normalizer has warmed up the raw score stands in for the
/// Wasserstein reward, which keeps the ordering of points intact.
fn surface_reward(disc: &Discriminator, stats: &RunningStats, score: f64) -> f64 {
    match disc.config.loss_kind {
        LossKind::Wgan if !stats.is_warm() => score,
        _ => disc.imitation_reward(score, stats),
    }
}

/// Sweeps (pitch rate, height) with every other window feature held at the
/// reference frame means; each frame of the window gets the same values.
pub fn reward_surface(
    disc: &Discriminator,
    stats: &RunningStats,
    dataset: &ReferenceDataset,
    cfg: &SurfaceConfig,
) -> Result<Vec<SurfacePoint>> {
    if cfg.points < 2 {
        return Err(Error::InvalidArgument("surface needs at least 2 points per axis".into()));
    }
    let (mean, _) = dataset.frame_moments(disc.config.full_state);
    let h = disc.config.horizon;
    let axis = |(lo, hi): (f64, f64), k: usize| lo + (hi - lo) * k as f64 / (cfg.points - 1) as f64;
    let mut windows = Vec::with_capacity(cfg.points * cfg.points);
    let mut coords = Vec::with_capacity(windows.capacity());
    for a in 0..cfg.points {
        for b in 0..cfg.points {
            let (pr, z) = (axis(cfg.pitch_rate, a), axis(cfg.height, b));
            let mut frame = mean.clone();
            frame[PITCH_RATE] = pr;
            frame[HEIGHT] = z;
            windows.push(ObservationWindow::new(h, frame.len(), frame.repeat(h))?);
            coords.push((pr, z));
        }
    }
    let scores = disc.raw_scores(&windows)?;
    Ok(coords
        .into_iter()
        .zip(scores)
        .map(|((pitch_rate, height), score)| SurfacePoint {
            pitch_rate,
            height,
            score,
            reward: surface_reward(disc, stats, score),
        })
        .collect())
}

pub fn surface_csv(points: &[SurfacePoint]) -> String {
    let mut s = String::from("pitch_rate,height,score,reward\n");
    for p in points {
        s.push_str(&format!("{},{},{},{}\n", p.pitch_rate, p.height, p.score, p.reward));
    }
    s
}

/// Linear-interpolated quantile, `q` in [0, 1].
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    if v.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

/// Fraction of reference windows whose reward exceeds the `q` quantile of the surface.
pub fn reference_above_surface_quantile(
    disc: &Discriminator,
    stats: &RunningStats,
    dataset: &ReferenceDataset,
    surface: &[SurfacePoint],
    q: f64,
) -> Result<f64> {
    let threshold = quantile(&surface.iter().map(|p| p.reward).collect::<Vec<_>>(), q);
    let windows = dataset.all_windows(disc.config.horizon, disc.config.full_state)?;
    let scores = disc.raw_scores(&windows)?;
    let above = scores
        .iter()
        .filter(|&&s| surface_reward(disc, stats, s) > threshold)
        .count();
    Ok(above as f64 / windows.len().max(1) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<usize>,
}

impl Histogram {
    /// Equal-width bins over `[lo, hi]`; values outside are clamped into the edge bins.
    pub fn new(values: &[f64], bins: usize, lo: f64, hi: f64) -> Result<Self> {
        if bins == 0 || !(hi > lo) {
            return Err(Error::InvalidArgument("histogram needs bins >= 1 and hi > lo".into()));
        }
        let mut counts = vec![0; bins];
        for &v in values.iter().filter(|v| v.is_finite()) {
            let k = ((v - lo) / (hi - lo) * bins as f64).floor();
            counts[(k.max(0.0) as usize).min(bins - 1)] += 1;
        }
        Ok(Self { lo, hi, counts })
    }

    pub fn bin_edges(&self, k: usize) -> (f64, f64) {
        let w = (self.hi - self.lo) / self.counts.len() as f64;
        (self.lo + w * k as f64, self.lo + w * (k + 1) as f64)
    }
}

/// Imitation rewards of one policy rollout batch and of the reference windows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardSamples {
    pub policy: Vec<f64>,
    pub reference: Vec<f64>,
}

/// Collects a rollout batch from the checkpointed policy (without advancing the
/// checkpoint itself) and scores reference windows with the same mapping.
pub fn reward_samples(ck: &Checkpoint, dataset: &ReferenceDataset) -> Result<RewardSamples> {
    let cfg = &ck.config;
    let mut pool = ck.pool.clone();
    let buf = collect_rollout(
        &mut pool,
        &ck.actor_critic,
        &ck.discriminator,
        &ck.stats,
        &cfg.reward,
        cfg.ppo.steps_per_iter,
        cfg.workers,
    )?;
    let windows = dataset.all_windows(cfg.discriminator.horizon, cfg.discriminator.full_state)?;
    let reference = ck
        .discriminator
        .raw_scores(&windows)?
        .into_iter()
        .map(|s| surface_reward(&ck.discriminator, &ck.stats, s))
        .collect();
    let policy = buf
        .scores
        .iter()
        .map(|&s| surface_reward(&ck.discriminator, &ck.stats, s))
        .collect();
    Ok(RewardSamples { policy, reference })
}

/// CSV with columns `source,bin_lo,bin_hi,count` over a shared range.
pub fn histograms_csv(samples: &RewardSamples, bins: usize) -> Result<String> {
    let all = samples.policy.iter().chain(&samples.reference).copied().filter(|v| v.is_finite());
    let (mut lo, mut hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        (lo, hi) = (0.0, 1.0);
    }
    if hi <= lo {
        hi = lo + 1.0;
    }
    let mut s = String::from("source,bin_lo,bin_hi,count\n");
    for (name, values) in [("policy", &samples.policy), ("reference", &samples.reference)] {
        let h = Histogram::new(values, bins, lo, hi)?;
        for (k, c) in h.counts.iter().enumerate() {
            let (a, b) = h.bin_edges(k);
            s.push_str(&format!("{name},{a},{b},{c}\n"));
        }
    }
    Ok(s)
}

/// One run of the horizon sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRun {
    pub tag: String,
    pub loss_kind: LossKind,
    pub horizon: usize,
    pub seed: u64,
    pub dir: PathBuf,
    pub metrics: Vec<IterationMetrics>,
    pub eval: Option<EvalReport>,
}

pub fn ablation_tag(loss: LossKind, horizon: usize, seed: u64) -> String {
    format!("{loss}_h{horizon}_s{seed}")
}

/// Trains (and optionally evaluates) every loss x horizon x seed combination
/// of `base` under `root/<tag>`, one after another.
pub fn ablate_horizon(
    base: &TrainConfig,
    losses: &[LossKind],
    horizons: &[usize],
    root: &Path,
    evaluate: bool,
    mut on_run: impl FnMut(&str),
) -> Result<Vec<AblationRun>> {
    if horizons.is_empty() || losses.is_empty() {
        return Err(Error::InvalidArgument("ablation needs at least one horizon and one loss".into()));
    }
    let mut runs = Vec::new();
    for &loss in losses {
        for &h in horizons {
            for &seed in &base.seeds {
                let mut cfg = base.clone();
                cfg.discriminator.loss_kind = loss;
                cfg.discriminator.horizon = h;
                cfg.seeds = vec![seed];
                let tag = ablation_tag(loss, h, seed);
                on_run(&tag);
                let dir = root.join(&tag);
                let mut trainer = Trainer::new(cfg.clone(), seed)?;
                let metrics = run_training(&mut trainer, &RunDir::new(&dir), |_| {})?;
                let eval = if evaluate {
                    let report = evaluate_policy(&cfg, &trainer.ac, &trainer.dataset, seed, trainer.iteration, cfg.eval.seed)?;
                    fs::write(dir.join("eval.json"), serde_json::to_string_pretty(&report)?)?;
                    Some(report)
                } else {
                    None
                };
                runs.push(AblationRun {
                    tag,
                    loss_kind: loss,
                    horizon: h,
                    seed,
                    dir,
                    metrics,
                    eval,
                });
            }
        }
    }
    Ok(runs)
}

/// All learning curves in one long-format CSV.
pub fn learning_curves_csv(runs: &[AblationRun]) -> String {
    let mut s = String::from(
        "tag,loss,horizon,seed,iteration,mean_total_reward,mean_imitation_reward,mean_score,disc_mean_ref,disc_mean_pol,mean_episode_length\n",
    );
    for r in runs {
        for m in &r.metrics {
            let eplen = m.mean_episode_length.map(|v| v.to_string()).unwrap_or_default();
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{}\n",
                r.tag,
                r.loss_kind,
                r.horizon,
                r.seed,
                m.iteration,
                m.mean_total_reward,
                m.mean_imitation_reward,
                m.mean_score,
                m.disc_mean_ref,
                m.disc_mean_pol,
                eplen
            ));
        }
    }
    s
}
