//! Discriminator objectives over observation windows.
//!
//! Both objectives are computed on already-normalized feature matrices
//! (`batch x (frame_dim * horizon)`); [`Discriminator`] owns the fixed input
//! normalization and the optimizer and works on [`ObservationWindow`]s.

use ndarray::{Array1, Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Activation, MlpNet, OptimizerConfig, OptimizerKind, OptimizerState, ParamGrads};
use crate::observation::{ObservationWindow, JOINT_FEATURE_DIM, OBS_DIM};
use crate::reward::{imitation_reward, RunningStats};

/// Floor on per-feature reference std used for input normalization.
pub const NORMALIZER_STD_FLOOR: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Lsgan,
    Wgan,
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lsgan" => Ok(LossKind::Lsgan),
            "wgan" | "wasabi" => Ok(LossKind::Wgan),
            other => Err(Error::InvalidArgument(format!(
                "unknown loss kind {other:?} (expected lsgan or wgan)"
            ))),
        }
    }
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LossKind::Lsgan => "lsgan",
            LossKind::Wgan => "wgan",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiscriminatorConfig {
    pub loss_kind: LossKind,
    pub horizon: usize,
    /// Weight on the adversarial (Wasserstein) term.
    pub w_loss: f64,
    /// Weight on the reference-sample gradient penalty.
    pub w_gp: f64,
    pub weight_decay: f64,
    pub learning_rate: f64,
    /// Momentum knob of the discriminator optimizer.
    pub momentum: f64,
    pub epochs_per_iter: usize,
    pub minibatches: usize,
    pub full_state: bool,
    pub hidden: Vec<usize>,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self {
            loss_kind: LossKind::Wgan,
            horizon: 2,
            w_loss: 0.5,
            w_gp: 5.0,
            weight_decay: 0.001,
            learning_rate: 1e-4,
            momentum: 0.05,
            epochs_per_iter: 1,
            minibatches: 4,
            full_state: false,
            hidden: vec![256, 128],
        }
    }
}

impl DiscriminatorConfig {
    pub fn frame_dim(&self) -> usize {
        if self.full_state {
            OBS_DIM + JOINT_FEATURE_DIM
        } else {
            OBS_DIM
        }
    }

    pub fn input_dim(&self) -> usize {
        self.frame_dim() * self.horizon
    }

    /// SGD for the least-squares objective, RMSProp for the Wasserstein one.
    pub fn optimizer(&self) -> OptimizerConfig {
        let base = match self.loss_kind {
            LossKind::Lsgan => OptimizerConfig::sgd(self.learning_rate),
            LossKind::Wgan => OptimizerConfig::rmsprop(self.learning_rate),
        };
        base.with_weight_decay(self.weight_decay)
            .with_momentum(self.momentum)
    }

    pub fn validate(&self, prefix: &str, errors: &mut Vec<String>) {
        if !(self.w_loss > 0.0) {
            errors.push(format!("{prefix}w_loss must be > 0 (got {})", self.w_loss));
        }
        if !(self.w_gp >= 0.0) {
            errors.push(format!("{prefix}w_gp must be >= 0 (got {})", self.w_gp));
        }
        if self.horizon < 1 {
            errors.push(format!("{prefix}horizon must be >= 1"));
        }
        if !(self.learning_rate > 0.0) {
            errors.push(format!("{prefix}learning_rate must be > 0"));
        }
        if !(self.weight_decay >= 0.0) {
            errors.push(format!("{prefix}weight_decay must be >= 0"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            errors.push(format!("{prefix}momentum must be in [0, 1)"));
        }
        if self.minibatches == 0 {
            errors.push(format!("{prefix}minibatches must be >= 1"));
        }
        if self.hidden.contains(&0) {
            errors.push(format!("{prefix}hidden layer sizes must be positive"));
        }
    }
}

/// Loss value, its parts and the parameter gradients.
#[derive(Debug, Clone)]
pub struct DiscLoss {
    pub loss: f64,
    /// Objective without the gradient penalty.
    pub adversarial: f64,
    /// Unweighted mean squared input-gradient norm on reference samples.
    pub grad_norm2: f64,
    pub mean_ref: f64,
    pub mean_pol: f64,
    pub grads: ParamGrads,
}

fn check_batches(net: &MlpNet, reference: &ArrayView2<f64>, policy: &ArrayView2<f64>) -> Result<()> {
    if reference.nrows() == 0 || policy.nrows() == 0 {
        return Err(Error::InvalidArgument("discriminator batches must be non-empty".into()));
    }
    if net.output_dim() != 1 {
        return Err(Error::Shape("discriminator must have a scalar output".into()));
    }
    if reference.ncols() != net.input_dim() || policy.ncols() != net.input_dim() {
        return Err(Error::Shape(format!(
            "discriminator expects {} features, got reference {} / policy {}",
            net.input_dim(),
            reference.ncols(),
            policy.ncols()
        )));
    }
    Ok(())
}

/// Adds `w_gp * mean ||dD/dx||^2` over `reference` to `grads`; returns the
/// unweighted mean squared norm.
fn add_gradient_penalty(
    net: &MlpNet,
    cache: &crate::nn::ForwardCache,
    w_gp: f64,
    grads: &mut ParamGrads,
) -> Result<f64> {
    let n = cache.batch_size();
    let ones = Array2::<f64>::ones((n, 1));
    let tangent = net.input_gradient(cache, ones.view())?;
    let g = tangent.input_gradient();
    let mean_norm2 = g.iter().map(|v| v * v).sum::<f64>() / n as f64;
    if w_gp > 0.0 {
        let g_bar = g * (2.0 * w_gp / n as f64);
        let gp = net.input_gradient_backward(cache, &tangent, g_bar.view())?;
        grads.add_scaled(&gp, 1.0);
    }
    Ok(mean_norm2)
}

/// `w_loss * (-mean D(ref) + mean D(pol)) + w_gp * mean ||grad D(ref)||^2`.
pub fn wgan_loss(
    net: &MlpNet,
    reference: ArrayView2<f64>,
    policy: ArrayView2<f64>,
    w_loss: f64,
    w_gp: f64,
) -> Result<DiscLoss> {
    check_batches(net, &reference, &policy)?;
    let nr = reference.nrows() as f64;
    let np = policy.nrows() as f64;
    let cr = net.forward_batch(reference)?;
    let cp = net.forward_batch(policy)?;
    let mean_ref = cr.output().mean().unwrap_or(0.0);
    let mean_pol = cp.output().mean().unwrap_or(0.0);
    let adversarial = w_loss * (-mean_ref + mean_pol);

    let gr = Array2::from_elem((reference.nrows(), 1), -w_loss / nr);
    let gp = Array2::from_elem((policy.nrows(), 1), w_loss / np);
    let mut grads = net.backward_batch(&cr, gr.view())?;
    grads.add_scaled(&net.backward_batch(&cp, gp.view())?, 1.0);
    let grad_norm2 = add_gradient_penalty(net, &cr, w_gp, &mut grads)?;
    Ok(DiscLoss {
        loss: adversarial + w_gp * grad_norm2,
        adversarial,
        grad_norm2,
        mean_ref,
        mean_pol,
        grads,
    })
}

/// `mean (D(ref) - 1)^2 + mean (D(pol) + 1)^2 + w_gp * mean ||grad D(ref)||^2`.
pub fn lsgan_loss(
    net: &MlpNet,
    reference: ArrayView2<f64>,
    policy: ArrayView2<f64>,
    w_gp: f64,
) -> Result<DiscLoss> {
    check_batches(net, &reference, &policy)?;
    let nr = reference.nrows() as f64;
    let np = policy.nrows() as f64;
    let cr = net.forward_batch(reference)?;
    let cp = net.forward_batch(policy)?;
    let yr = cr.output();
    let yp = cp.output();
    let adversarial = yr.iter().map(|y| (y - 1.0).powi(2)).sum::<f64>() / nr
        + yp.iter().map(|y| (y + 1.0).powi(2)).sum::<f64>() / np;
    let gr = yr.mapv(|y| 2.0 * (y - 1.0) / nr);
    let gp = yp.mapv(|y| 2.0 * (y + 1.0) / np);
    let mut grads = net.backward_batch(&cr, gr.view())?;
    grads.add_scaled(&net.backward_batch(&cp, gp.view())?, 1.0);
    let grad_norm2 = add_gradient_penalty(net, &cr, w_gp, &mut grads)?;
    Ok(DiscLoss {
        loss: adversarial + w_gp * grad_norm2,
        adversarial,
        grad_norm2,
        mean_ref: yr.mean().unwrap_or(0.0),
        mean_pol: yp.mean().unwrap_or(0.0),
        grads,
    })
}

/// Squared L2 norm of dD/dx at `x`.
pub fn input_gradient_norm2(net: &MlpNet, x: &[f64]) -> Result<f64> {
    let (_, cache) = net.forward(x)?;
    let tangent = net.input_gradient(&cache, Array2::ones((1, 1)).view())?;
    Ok(tangent.input_gradient().iter().map(|v| v * v).sum())
}

/// Bounded reward used with the least-squares discriminator.
pub fn lsgan_imitation_reward(score: f64) -> f64 {
    (1.0 - 0.25 * (score - 1.0).powi(2)).max(0.0)
}

/// Discriminator network with its input normalization and optimizer.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Discriminator {
    pub config: DiscriminatorConfig,
    pub net: MlpNet,
    pub input_mean: Vec<f64>,
    pub input_std: Vec<f64>,
    pub optimizer: OptimizerState,
}

impl Discriminator {
    /// `frame_mean` / `frame_std` are per-frame reference moments; they are
    /// tiled across the horizon.
    pub fn new<R: Rng + ?Sized>(
        config: DiscriminatorConfig,
        frame_mean: &[f64],
        frame_std: &[f64],
        rng: &mut R,
    ) -> Result<Self> {
        let fd = config.frame_dim();
        if frame_mean.len() != fd || frame_std.len() != fd {
            return Err(Error::Shape(format!(
                "normalizer needs {fd} moments, got {}/{}",
                frame_mean.len(),
                frame_std.len()
            )));
        }
        let mut sizes = vec![config.input_dim()];
        sizes.extend(&config.hidden);
        sizes.push(1);
        let net = MlpNet::new(&sizes, Activation::Relu, 1.0, rng)?;
        let input_mean = frame_mean.repeat(config.horizon);
        let input_std = frame_std
            .iter()
            .map(|s| s.max(NORMALIZER_STD_FLOOR))
            .collect::<Vec<_>>()
            .repeat(config.horizon);
        let optimizer = OptimizerState::new(config.optimizer(), net.num_params());
        Ok(Self {
            config,
            net,
            input_mean,
            input_std,
            optimizer,
        })
    }

    /// Identity normalization.
    pub fn unnormalized<R: Rng + ?Sized>(config: DiscriminatorConfig, rng: &mut R) -> Result<Self> {
        let fd = config.frame_dim();
        Self::new(config, &vec![0.0; fd], &vec![1.0; fd], rng)
    }

    pub fn input_dim(&self) -> usize {
        self.config.input_dim()
    }

    /// Normalized feature matrix for a set of windows.
    pub fn features(&self, windows: &[ObservationWindow]) -> Result<Array2<f64>> {
        let d = self.input_dim();
        let mut out = Array2::zeros((windows.len(), d));
        for (i, w) in windows.iter().enumerate() {
            if w.horizon() != self.config.horizon || w.frame_dim() != self.config.frame_dim() {
                return Err(Error::Shape(format!(
                    "window {}x{} does not match discriminator horizon {} / frame {}",
                    w.horizon(),
                    w.frame_dim(),
                    self.config.horizon,
                    self.config.frame_dim()
                )));
            }
            let mut row = out.row_mut(i);
            for (k, v) in w.as_slice().iter().enumerate() {
                row[k] = (v - self.input_mean[k]) / self.input_std[k];
            }
        }
        Ok(out)
    }

    pub fn normalize_row(&self, raw: &[f64]) -> Vec<f64> {
        raw.iter()
            .zip(self.input_mean.iter().zip(&self.input_std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    /// D(window).
    pub fn raw_score(&self, window: &ObservationWindow) -> Result<f64> {
        Ok(self.raw_scores(std::slice::from_ref(window))?[0])
    }

    pub fn raw_scores(&self, windows: &[ObservationWindow]) -> Result<Vec<f64>> {
        if windows.is_empty() {
            return Ok(Vec::new());
        }
        let x = self.features(windows)?;
        Ok(self.net.predict(x.view())?.column(0).to_vec())
    }

    /// Scores for raw (unnormalized) flattened feature rows.
    pub fn raw_scores_matrix(&self, raw: ArrayView2<f64>) -> Result<Array1<f64>> {
        let mut x = raw.to_owned();
        for mut row in x.rows_mut() {
            for (k, v) in row.iter_mut().enumerate() {
                *v = (*v - self.input_mean[k]) / self.input_std[k];
            }
        }
        Ok(self.net.predict(x.view())?.column(0).to_owned())
    }

    pub fn loss(&self, reference: &[ObservationWindow], policy: &[ObservationWindow]) -> Result<DiscLoss> {
        let r = self.features(reference)?;
        let p = self.features(policy)?;
        match self.config.loss_kind {
            LossKind::Wgan => wgan_loss(&self.net, r.view(), p.view(), self.config.w_loss, self.config.w_gp),
            LossKind::Lsgan => lsgan_loss(&self.net, r.view(), p.view(), self.config.w_gp),
        }
    }

    /// One optimizer step on a reference / policy minibatch pair.
    pub fn update(&mut self, reference: &[ObservationWindow], policy: &[ObservationWindow]) -> Result<DiscLoss> {
        let loss = self.loss(reference, policy)?;
        if !loss.loss.is_finite() {
            return Err(Error::NonFinite("discriminator loss".into()));
        }
        self.optimizer.step_net(&mut self.net, &loss.grads)?;
        Ok(loss)
    }

    /// Uses the optimizer kind matching the configured loss.
    pub fn reset_optimizer(&mut self) {
        self.optimizer = OptimizerState::new(self.config.optimizer(), self.net.num_params());
    }

    pub fn optimizer_kind(&self) -> OptimizerKind {
        self.optimizer.config.kind
    }

    /// Imitation reward for a raw score: normalized by `stats` for the
    /// Wasserstein objective, the bounded least-squares mapping otherwise.
    pub fn imitation_reward(&self, score: f64, stats: &RunningStats) -> f64 {
        match self.config.loss_kind {
            LossKind::Wgan => imitation_reward(score, stats),
            LossKind::Lsgan => lsgan_imitation_reward(score),
        }
    }
}
