//! Discriminators trained on separable synthetic windows.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use wasabi_core::discriminator::{Discriminator, DiscriminatorConfig, LossKind};
use wasabi_core::observation::{ObservationWindow, OBS_DIM};
use wasabi_core::reward::RunningStats;

const HORIZON: usize = 2;
const BATCH: usize = 64;
const UPDATES: usize = 400;
const SPREAD: f64 = 0.25;

/// Reference windows sit around +1 in every coordinate, policy windows
/// around -1.
fn sample(rng: &mut ChaCha8Rng, centre: f64, n: usize) -> Vec<ObservationWindow> {
    let noise = Normal::new(0.0, SPREAD).unwrap();
    (0..n)
        .map(|_| {
            let data = (0..HORIZON * OBS_DIM).map(|_| centre + noise.sample(rng)).collect();
            ObservationWindow::new(HORIZON, OBS_DIM, data).unwrap()
        })
        .collect()
}

pub fn trained(kind: LossKind, seed: u64) -> Discriminator {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let config = DiscriminatorConfig {
        loss_kind: kind,
        horizon: HORIZON,
        hidden: vec![64, 64],
        learning_rate: 1e-3,
        ..DiscriminatorConfig::default()
    };
    let mut disc = Discriminator::unnormalized(config, &mut rng).unwrap();
    for _ in 0..UPDATES {
        let r = sample(&mut rng, 1.0, BATCH);
        let p = sample(&mut rng, -1.0, BATCH);
        disc.update(&r, &p).unwrap();
    }
    disc
}

pub fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    for (rank, &i) in idx.iter().enumerate() {
        r[i] = rank as f64;
    }
    r
}

pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let d2: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - y).powi(2)).sum();
    1.0 - 6.0 * d2 / (n * (n * n - 1.0))
}

/// Fraction of fresh policy windows whose bounded reward is exactly zero.
pub fn lsgan_zero_fraction(seed: u64) -> f64 {
    let disc = trained(LossKind::Lsgan, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 500);
    let policy = sample(&mut rng, -1.0, 1000);
    let stats = RunningStats::default();
    let scores = disc.raw_scores(&policy).unwrap();
    scores.iter().filter(|&&s| disc.imitation_reward(s, &stats) == 0.0).count() as f64 / scores.len() as f64
}

/// Spearman correlation between the interpolation fraction and the mean
/// normalized reward along the policy-to-reference path.
pub fn wgan_path_correlation(seed: u64) -> f64 {
    let disc = trained(LossKind::Wgan, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 500);
    let mut stats = RunningStats::default();
    stats.update_all(&disc.raw_scores(&sample(&mut rng, -1.0, 1000)).unwrap()).unwrap();
    let pol = sample(&mut rng, -1.0, 200);
    let refs = sample(&mut rng, 1.0, 200);
    let ts: Vec<f64> = (0..=10).map(|k| k as f64 / 10.0).collect();
    let rewards: Vec<f64> = ts
        .iter()
        .map(|&t| {
            let mixed: Vec<ObservationWindow> = pol
                .iter()
                .zip(&refs)
                .map(|(p, r)| {
                    let data = p.as_slice().iter().zip(r.as_slice()).map(|(a, b)| (1.0 - t) * a + t * b).collect();
                    ObservationWindow::new(HORIZON, OBS_DIM, data).unwrap()
                })
                .collect();
            let scores = disc.raw_scores(&mixed).unwrap();
            scores.iter().map(|&s| disc.imitation_reward(s, &stats)).sum::<f64>() / scores.len() as f64
        })
        .collect();
    spearman(&ts, &rewards)
}

