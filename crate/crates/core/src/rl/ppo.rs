use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{clip_grad_norm, Activation, MlpNet, OptimizerConfig, OptimizerState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PpoConfig {
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub epochs: usize,
    pub minibatches: usize,
    pub kl_target: f64,
    pub steps_per_iter: usize,
    pub num_envs: usize,
    pub learning_rate: f64,
    pub adaptive_lr: bool,
    pub max_grad_norm: f64,
    pub hidden: Vec<usize>,
    pub init_log_std: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            gae_lambda: 0.95,
            clip: 0.2,
            entropy_coef: 0.01,
            value_coef: 1.0,
            epochs: 5,
            minibatches: 4,
            kl_target: 0.01,
            steps_per_iter: 24,
            num_envs: 16,
            learning_rate: 1e-3,
            adaptive_lr: true,
            max_grad_norm: 1.0,
            hidden: vec![64, 64],
            init_log_std: 0.0,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self, prefix: &str, errors: &mut Vec<String>) {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            errors.push(format!("{prefix}gamma must be in (0, 1)"));
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            errors.push(format!("{prefix}gae_lambda must be in [0, 1]"));
        }
        if !(self.clip > 0.0) {
            errors.push(format!("{prefix}clip must be > 0"));
        }
        if !(self.kl_target > 0.0) {
            errors.push(format!("{prefix}kl_target must be > 0"));
        }
        if !(self.learning_rate >= 0.0) {
            errors.push(format!("{prefix}learning_rate must be >= 0"));
        }
        if !(self.entropy_coef >= 0.0 && self.value_coef >= 0.0) {
            errors.push(format!("{prefix}entropy_coef and value_coef must be >= 0"));
        }
        if !(self.max_grad_norm > 0.0) {
            errors.push(format!("{prefix}max_grad_norm must be > 0"));
        }
        for (name, v) in [
            ("epochs", self.epochs),
            ("minibatches", self.minibatches),
            ("steps_per_iter", self.steps_per_iter),
            ("num_envs", self.num_envs),
        ] {
            if v == 0 {
                errors.push(format!("{prefix}{name} must be >= 1"));
            }
        }
        if self.minibatches > self.steps_per_iter * self.num_envs {
            errors.push(format!("{prefix}minibatches exceeds the batch size"));
        }
        if self.hidden.contains(&0) {
            errors.push(format!("{prefix}hidden layer sizes must be positive"));
        }
    }
}

/// Generalized advantage estimation over a `steps x envs` grid.
///
/// `dones[t][e]` cuts bootstrapping after step `t`; `last_values` are the
/// values of the observations following the final step.
pub fn gae_advantages(
    rewards: &[Vec<f64>],
    values: &[Vec<f64>],
    dones: &[Vec<bool>],
    last_values: &[f64],
    gamma: f64,
    lambda: f64,
) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let t_len = rewards.len();
    let n = last_values.len();
    if values.len() != t_len || dones.len() != t_len {
        return Err(Error::Shape("GAE inputs have different lengths".into()));
    }
    if rewards.iter().chain(values).any(|r| r.len() != n) || dones.iter().any(|d| d.len() != n) {
        return Err(Error::Shape("GAE rows must all have one entry per env".into()));
    }
    let mut adv = vec![vec![0.0; n]; t_len];
    let mut ret = vec![vec![0.0; n]; t_len];
    for e in 0..n {
        let mut running = 0.0;
        for t in (0..t_len).rev() {
            let next_value = if t + 1 < t_len { values[t + 1][e] } else { last_values[e] };
            let keep = if dones[t][e] { 0.0 } else { 1.0 };
            let delta = rewards[t][e] + gamma * keep * next_value - values[t][e];
            running = delta + gamma * lambda * keep * running;
            adv[t][e] = running;
            ret[t][e] = running + values[t][e];
        }
    }
    Ok((adv, ret))
}

/// Single-trajectory convenience wrapper around [`gae_advantages`].
pub fn gae_single(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    bootstrap: f64,
    gamma: f64,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let col = |v: &[f64]| v.iter().map(|&x| vec![x]).collect::<Vec<_>>();
    let d: Vec<Vec<bool>> = dones.iter().map(|&x| vec![x]).collect();
    let (a, r) = gae_advantages(&col(rewards), &col(values), &d, &[bootstrap], gamma, lambda)?;
    Ok((a.into_iter().map(|v| v[0]).collect(), r.into_iter().map(|v| v[0]).collect()))
}

/// `kl > 2 target` shrinks the rate by 1.5, `kl < target / 2` grows it by 1.5.
pub fn adaptive_lr(current_lr: f64, measured_kl: f64, kl_target: f64) -> f64 {
    let lr = if measured_kl > 2.0 * kl_target {
        current_lr / 1.5
    } else if measured_kl < 0.5 * kl_target {
        current_lr * 1.5
    } else {
        current_lr
    };
    lr.clamp(1e-7, 1e-2)
}

/// Diagonal Gaussian policy with a state-independent log standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianPolicy {
    pub mean_net: MlpNet,
    pub log_std: Vec<f64>,
}

const LOG_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

impl GaussianPolicy {
    pub fn new<R: Rng + ?Sized>(obs_dim: usize, action_dim: usize, hidden: &[usize], init_log_std: f64, rng: &mut R) -> Result<Self> {
        let mut sizes = vec![obs_dim];
        sizes.extend(hidden);
        sizes.push(action_dim);
        Ok(Self {
            mean_net: MlpNet::new(&sizes, Activation::Elu, 0.01, rng)?,
            log_std: vec![init_log_std; action_dim],
        })
    }

    pub fn obs_dim(&self) -> usize {
        self.mean_net.input_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.log_std.len()
    }

    pub fn means(&self, obs: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.mean_net.predict(obs)
    }

    /// Log density of `actions` given per-row `means`.
    pub fn log_prob(&self, means: &[f64], actions: &[f64]) -> f64 {
        means
            .iter()
            .zip(actions)
            .zip(&self.log_std)
            .map(|((m, a), ls)| {
                let z = (a - m) / ls.exp();
                -0.5 * z * z - ls - LOG_SQRT_2PI
            })
            .sum()
    }

    pub fn entropy(&self) -> f64 {
        self.log_std.iter().map(|ls| ls + 0.5 + LOG_SQRT_2PI).sum()
    }

    /// Draws one action around `mean`.
    pub fn sample<R: Rng + ?Sized>(&self, mean: &[f64], rng: &mut R) -> Vec<f64> {
        mean.iter()
            .zip(&self.log_std)
            .map(|(m, ls)| {
                let eps: f64 = StandardNormal.sample(rng);
                m + ls.exp() * eps
            })
            .collect()
    }
}

/// KL(old || new) between diagonal Gaussians, summed over dimensions.
pub fn gaussian_kl(old_mean: &[f64], old_log_std: &[f64], new_mean: &[f64], new_log_std: &[f64]) -> f64 {
    let mut kl = 0.0;
    for k in 0..old_mean.len() {
        let (so, sn) = (old_log_std[k].exp(), new_log_std[k].exp());
        let dm = old_mean[k] - new_mean[k];
        kl += new_log_std[k] - old_log_std[k] + (so * so + dm * dm) / (2.0 * sn * sn) - 0.5;
    }
    kl
}

pub fn value_net<R: Rng + ?Sized>(obs_dim: usize, hidden: &[usize], rng: &mut R) -> Result<MlpNet> {
    let mut sizes = vec![obs_dim];
    sizes.extend(hidden);
    sizes.push(1);
    MlpNet::new(&sizes, Activation::Elu, 1.0, rng)
}

/// Flattened training batch for one PPO update.
#[derive(Debug, Clone, Default)]
pub struct PpoBatch {
    pub obs: Array2<f64>,
    pub actions: Array2<f64>,
    pub old_log_probs: Vec<f64>,
    pub old_means: Array2<f64>,
    pub old_log_std: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl PpoBatch {
    pub fn len(&self) -> usize {
        self.advantages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.advantages.is_empty()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PpoStats {
    pub kl: f64,
    pub clip_frac: f64,
    pub surrogate_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub learning_rate: f64,
}

/// Policy, value function and their shared Adam state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActorCritic {
    pub policy: GaussianPolicy,
    pub value: MlpNet,
    pub optimizer: OptimizerState,
}

impl ActorCritic {
    pub fn new<R: Rng + ?Sized>(obs_dim: usize, action_dim: usize, config: &PpoConfig, rng: &mut R) -> Result<Self> {
        let policy = GaussianPolicy::new(obs_dim, action_dim, &config.hidden, config.init_log_std, rng)?;
        let value = value_net(obs_dim, &config.hidden, rng)?;
        let n = policy.mean_net.num_params() + action_dim + value.num_params();
        Ok(Self {
            policy,
            value,
            optimizer: OptimizerState::new(OptimizerConfig::adam(config.learning_rate), n),
        })
    }

    pub fn learning_rate(&self) -> f64 {
        self.optimizer.config.learning_rate
    }

    pub fn values(&self, obs: ArrayView2<f64>) -> Result<Vec<f64>> {
        Ok(self.value.predict(obs)?.column(0).to_vec())
    }

    fn flat_params(&self) -> Vec<f64> {
        let mut p = self.policy.mean_net.flat_params();
        p.extend(&self.policy.log_std);
        p.extend(self.value.flat_params());
        p
    }

    fn set_flat_params(&mut self, p: &[f64]) -> Result<()> {
        let a = self.policy.mean_net.num_params();
        let k = self.policy.log_std.len();
        self.policy.mean_net.set_flat_params(&p[..a])?;
        self.policy.log_std.copy_from_slice(&p[a..a + k]);
        self.value.set_flat_params(&p[a + k..])
    }

    /// Loss and flat gradient on one minibatch. Returns `(loss, grads, stats)`.
    pub fn minibatch_loss(&self, batch: &PpoBatch, idx: &[usize], config: &PpoConfig) -> Result<(f64, Vec<f64>, PpoStats)> {
        let b = idx.len();
        let bf = b as f64;
        let obs = batch.obs.select(ndarray::Axis(0), idx);
        let pc = self.policy.mean_net.forward_batch(obs.view())?;
        let vc = self.value.forward_batch(obs.view())?;
        let means = pc.output();
        let ad = self.policy.action_dim();
        let stds: Vec<f64> = self.policy.log_std.iter().map(|l| l.exp()).collect();

        let mut g_mean = Array2::zeros((b, ad));
        let mut g_log_std = vec![0.0; ad];
        let mut g_value = Array2::zeros((b, 1));
        let (mut surr, mut vloss, mut kl, mut clipped) = (0.0, 0.0, 0.0, 0usize);

        for (r, &i) in idx.iter().enumerate() {
            let m = means.row(r);
            let a = batch.actions.row(i);
            let lp = self.policy.log_prob(m.as_slice().unwrap(), a.as_slice().unwrap());
            let ratio = (lp - batch.old_log_probs[i]).exp();
            let adv = batch.advantages[i];
            let clipped_ratio = ratio.clamp(1.0 - config.clip, 1.0 + config.clip);
            let (u, c) = (ratio * adv, clipped_ratio * adv);
            surr += -u.min(c);
            if (ratio - 1.0).abs() > config.clip {
                clipped += 1;
            }
            // gradient only flows through the unclipped branch when it is the minimum
            if u <= c {
                let d_lp = -adv * ratio / bf;
                for k in 0..ad {
                    let z = (a[k] - m[k]) / stds[k];
                    g_mean[[r, k]] += d_lp * z / stds[k];
                    g_log_std[k] += d_lp * (z * z - 1.0);
                }
            }
            let v = vc.output()[[r, 0]];
            let err = v - batch.returns[i];
            vloss += err * err;
            g_value[[r, 0]] = 2.0 * config.value_coef * err / bf;
            kl += gaussian_kl(
                batch.old_means.row(i).as_slice().unwrap(),
                &batch.old_log_std,
                m.as_slice().unwrap(),
                &self.policy.log_std,
            );
        }
        let entropy = self.policy.entropy();
        for g in &mut g_log_std {
            *g -= config.entropy_coef;
        }
        surr /= bf;
        vloss /= bf;
        let loss = surr + config.value_coef * vloss - config.entropy_coef * entropy;

        let gp = self.policy.mean_net.backward_batch(&pc, g_mean.view())?;
        let gv = self.value.backward_batch(&vc, g_value.view())?;
        let mut grads = gp.flat();
        grads.extend(&g_log_std);
        grads.extend(gv.flat());
        let stats = PpoStats {
            kl: kl / bf,
            clip_frac: clipped as f64 / bf,
            surrogate_loss: surr,
            value_loss: vloss,
            entropy,
            learning_rate: self.learning_rate(),
        };
        Ok((loss, grads, stats))
    }

    /// Clipped-surrogate PPO over `config.epochs` shuffled passes.
    /// A non-finite loss restores the parameters held before the call.
    pub fn ppo_update<R: Rng + ?Sized>(&mut self, batch: &PpoBatch, config: &PpoConfig, rng: &mut R) -> Result<PpoStats> {
        if batch.is_empty() {
            return Err(Error::InvalidArgument("empty PPO batch".into()));
        }
        let backup = (self.flat_params(), self.optimizer.clone());
        let mut indices: Vec<usize> = (0..batch.len()).collect();
        let mb = config.minibatches.min(batch.len());
        let mut total = PpoStats::default();
        let mut count = 0.0;
        for _ in 0..config.epochs {
            indices.shuffle(rng);
            for chunk in 0..mb {
                let lo = chunk * batch.len() / mb;
                let hi = (chunk + 1) * batch.len() / mb;
                let idx = &indices[lo..hi];
                let (loss, mut grads, stats) = self.minibatch_loss(batch, idx, config)?;
                if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                    self.set_flat_params(&backup.0)?;
                    self.optimizer = backup.1;
                    return Err(Error::NonFinite("PPO loss".into()));
                }
                if config.adaptive_lr {
                    let lr = adaptive_lr(self.optimizer.config.learning_rate, stats.kl, config.kl_target);
                    self.optimizer.config.learning_rate = lr;
                }
                clip_grad_norm(&mut grads, config.max_grad_norm);
                let mut p = self.flat_params();
                self.optimizer.step(&mut p, &grads)?;
                self.set_flat_params(&p)?;
                total.kl += stats.kl;
                total.clip_frac += stats.clip_frac;
                total.surrogate_loss += stats.surrogate_loss;
                total.value_loss += stats.value_loss;
                total.entropy += stats.entropy;
                count += 1.0;
            }
        }
        Ok(PpoStats {
            kl: total.kl / count,
            clip_frac: total.clip_frac / count,
            surrogate_loss: total.surrogate_loss / count,
            value_loss: total.value_loss / count,
            entropy: total.entropy / count,
            learning_rate: self.learning_rate(),
        })
    }
}

/// Standardizes advantages in place (zero mean, unit std).
pub fn normalize_advantages(adv: &mut [f64]) {
    if adv.is_empty() {
        return;
    }
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let std = (adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n).sqrt();
    for a in adv.iter_mut() {
        *a = (*a - mean) / (std + 1e-8);
    }
}
