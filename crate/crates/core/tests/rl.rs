use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wasabi_core::dataset::ReferenceDataset;
use wasabi_core::discriminator::{Discriminator, DiscriminatorConfig};
use wasabi_core::reward::{RewardWeights, RunningStats};
use wasabi_core::rl::*;
use wasabi_core::sim::{demo_dataset, DemoOptions, Motion, SimParams};

/// sum_k (gamma lambda)^k delta_{t+k}, truncated at the first done.
fn gae_direct(r: &[f64], v: &[f64], d: &[bool], boot: f64, g: f64, l: f64) -> Vec<f64> {
    let n = r.len();
    let next = |t: usize| if t + 1 < n { v[t + 1] } else { boot };
    let delta = |t: usize| r[t] + if d[t] { 0.0 } else { g * next(t) } - v[t];
    (0..n)
        .map(|t| {
            let mut sum = 0.0;
            let mut w = 1.0;
            for (k, &done) in d.iter().enumerate().skip(t) {
                sum += w * delta(k);
                if done {
                    break;
                }
                w *= g * l;
            }
            sum
        })
        .collect()
}

#[test]
fn gae_examples() {
    let (a, r) = gae_single(&[1.0], &[0.0], &[false], 0.0, 1.0, 1.0).unwrap();
    assert_eq!((a[0], r[0]), (1.0, 1.0));
    let (a, _) = gae_single(&[1.0, 2.0], &[0.5, 0.25], &[false, false], 3.0, 0.9, 0.0).unwrap();
    assert_eq!(a[0], 1.0 + 0.9 * 0.25 - 0.5);
    assert_eq!(a[1], 2.0 + 0.9 * 3.0 - 0.25);
    assert!(gae_single(&[1.0, 2.0], &[0.5], &[false, false], 0.0, 0.9, 0.9).is_err());
}

#[test]
fn gae_matches_direct_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..1000 {
        let n = rng.random_range(1..=10);
        let r: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let d: Vec<bool> = (0..n).map(|_| rng.random_bool(0.2)).collect();
        let boot = rng.random_range(-3.0..3.0);
        let (g, l) = (rng.random_range(0.5..1.0), rng.random_range(0.0..1.0));
        let (a, ret) = gae_single(&r, &v, &d, boot, g, l).unwrap();
        let oracle = gae_direct(&r, &v, &d, boot, g, l);
        for t in 0..n {
            assert!((a[t] - oracle[t]).abs() <= 1e-12);
            assert!((ret[t] - a[t] - v[t]).abs() <= 1e-12);
        }
    }
}

#[test]
fn adaptive_lr_examples() {
    assert!((adaptive_lr(3e-4, 0.03, 0.01) - 2e-4).abs() < 1e-18);
    assert!((adaptive_lr(3e-4, 0.004, 0.01) - 4.5e-4).abs() < 1e-18);
    assert_eq!(adaptive_lr(3e-4, 0.01, 0.01), 3e-4);
    assert_eq!(adaptive_lr(1e-2, 0.0, 0.01), 1e-2);
    assert_eq!(adaptive_lr(1e-7, 1.0, 0.01), 1e-7);
}

fn toy_batch(ac: &ActorCritic, n: usize, rng: &mut ChaCha8Rng) -> PpoBatch {
    let d = ac.policy.obs_dim();
    let ad = ac.policy.action_dim();
    let obs = Array2::from_shape_fn((n, d), |_| rng.random_range(-1.0..1.0));
    let means = ac.policy.means(obs.view()).unwrap();
    let mut actions = Array2::zeros((n, ad));
    let mut lps = Vec::new();
    for i in 0..n {
        let m = means.row(i).to_vec();
        let a = ac.policy.sample(&m, rng);
        lps.push(ac.policy.log_prob(&m, &a));
        for k in 0..ad {
            actions[[i, k]] = a[k];
        }
    }
    let mut advantages: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    normalize_advantages(&mut advantages);
    PpoBatch {
        obs,
        actions,
        old_log_probs: lps,
        old_means: means,
        old_log_std: ac.policy.log_std.clone(),
        advantages,
        returns: (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
    }
}

fn small_config() -> PpoConfig {
    PpoConfig {
        hidden: vec![16, 16],
        ..PpoConfig::default()
    }
}

#[test]
fn unchanged_policy_has_unit_ratio() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let cfg = small_config();
    let ac = ActorCritic::new(5, 3, &cfg, &mut rng).unwrap();
    let batch = toy_batch(&ac, 64, &mut rng);
    let idx: Vec<usize> = (0..64).collect();
    let (_, _, stats) = ac.minibatch_loss(&batch, &idx, &cfg).unwrap();
    assert_eq!(stats.clip_frac, 0.0);
    assert!(stats.kl.abs() < 1e-12);
    let mean_adv = batch.advantages.iter().sum::<f64>() / 64.0;
    assert!((stats.surrogate_loss + mean_adv).abs() < 1e-12);
}

#[test]
fn clipped_ratio_blocks_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let cfg = PpoConfig {
        entropy_coef: 0.0,
        value_coef: 0.0,
        ..small_config()
    };
    let ac = ActorCritic::new(4, 2, &cfg, &mut rng).unwrap();
    let mut batch = toy_batch(&ac, 8, &mut rng);
    for i in 0..8 {
        batch.old_log_probs[i] -= 1.5f64.ln();
        batch.advantages[i] = 1.0;
    }
    let idx: Vec<usize> = (0..8).collect();
    let (loss, grads, stats) = ac.minibatch_loss(&batch, &idx, &cfg).unwrap();
    assert!((loss + 1.2).abs() < 1e-12);
    assert_eq!(stats.clip_frac, 1.0);
    assert!(grads.iter().all(|g| *g == 0.0));
}

#[test]
fn zero_advantages_leave_only_entropy_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cfg = PpoConfig {
        value_coef: 0.0,
        ..small_config()
    };
    let ac = ActorCritic::new(4, 2, &cfg, &mut rng).unwrap();
    let mut batch = toy_batch(&ac, 16, &mut rng);
    batch.advantages.iter_mut().for_each(|a| *a = 0.0);
    let idx: Vec<usize> = (0..16).collect();
    let (_, grads, _) = ac.minibatch_loss(&batch, &idx, &cfg).unwrap();
    let np = ac.policy.mean_net.num_params();
    assert!(grads[..np].iter().all(|g| *g == 0.0));
    assert_eq!(&grads[np..np + 2], &[-cfg.entropy_coef, -cfg.entropy_coef]);
}

#[test]
fn loss_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let cfg = PpoConfig {
        clip: 10.0,
        ..small_config()
    };
    let ac = ActorCritic::new(3, 2, &cfg, &mut rng).unwrap();
    let batch = toy_batch(&ac, 12, &mut rng);
    let idx: Vec<usize> = (0..12).collect();
    let (_, grads, _) = ac.minibatch_loss(&batch, &idx, &cfg).unwrap();
    let np = ac.policy.mean_net.num_params();
    let eps = 1e-6;
    // spot-check policy weights, log std and value weights
    for k in [0, 7, np - 1, np, np + 1, np + 2, grads.len() - 1] {
        let eval = |delta: f64| {
            let mut a = ac.clone();
            let mut p = a.policy.mean_net.flat_params();
            let nv = a.value.num_params();
            if k < np {
                p[k] += delta;
                a.policy.mean_net.set_flat_params(&p).unwrap();
            } else if k < np + 2 {
                a.policy.log_std[k - np] += delta;
            } else {
                let mut v = a.value.flat_params();
                v[k - np - 2] += delta;
                assert_eq!(v.len(), nv);
                a.value.set_flat_params(&v).unwrap();
            }
            a.minibatch_loss(&batch, &idx, &cfg).unwrap().0
        };
        let fd = (eval(eps) - eval(-eps)) / (2.0 * eps);
        let scale = fd.abs().max(grads[k].abs()).max(1e-8);
        assert!((fd - grads[k]).abs() / scale < 1e-4, "param {k}: {fd} vs {}", grads[k]);
    }
}

#[test]
fn zero_learning_rate_changes_nothing() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let cfg = PpoConfig {
        learning_rate: 0.0,
        adaptive_lr: false,
        ..small_config()
    };
    let mut ac = ActorCritic::new(4, 2, &cfg, &mut rng).unwrap();
    let before = ac.clone();
    let batch = toy_batch(&ac, 32, &mut rng);
    ac.ppo_update(&batch, &cfg, &mut rng).unwrap();
    assert_eq!(ac.policy, before.policy);
    assert_eq!(ac.value, before.value);
}

#[test]
fn non_finite_loss_keeps_parameters() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let cfg = small_config();
    let mut ac = ActorCritic::new(4, 2, &cfg, &mut rng).unwrap();
    let before = ac.clone();
    let mut batch = toy_batch(&ac, 32, &mut rng);
    batch.returns[3] = f64::NAN;
    assert!(ac.ppo_update(&batch, &cfg, &mut rng).is_err());
    assert_eq!(ac, before);
}

#[test]
fn single_update_kl_stays_small() {
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let cfg = PpoConfig::default();
        let mut ac = ActorCritic::new(36, 4, &cfg, &mut rng).unwrap();
        let batch = toy_batch(&ac, 384, &mut rng);
        ac.ppo_update(&batch, &cfg, &mut rng).unwrap();
        let new_means = ac.policy.means(batch.obs.view()).unwrap();
        let kl: f64 = (0..batch.len())
            .map(|i| {
                gaussian_kl(
                    batch.old_means.row(i).as_slice().unwrap(),
                    &batch.old_log_std,
                    new_means.row(i).as_slice().unwrap(),
                    &ac.policy.log_std,
                )
            })
            .sum::<f64>()
            / batch.len() as f64;
        assert!(kl < 5.0 * cfg.kl_target, "seed {seed}: kl {kl}");
    }
}

fn setup(seed: u64, num_envs: usize) -> (EnvPool, ActorCritic, Discriminator, ReferenceDataset) {
    let params = SimParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ds = demo_dataset(Motion::Leap, &params, &DemoOptions::default(), &mut rng);
    let dcfg = DiscriminatorConfig {
        hidden: vec![32, 32],
        ..DiscriminatorConfig::default()
    };
    let (m, s) = ds.frame_moments(false);
    let disc = Discriminator::new(dcfg, &m, &s, &mut rng).unwrap();
    let env = EnvConfig::default();
    let ac = ActorCritic::new(env.obs_dim(), 4, &small_config(), &mut rng).unwrap();
    let pool = EnvPool::new(params, env, 2, false, num_envs, seed).unwrap();
    (pool, ac, disc, ds)
}

fn warm_stats() -> RunningStats {
    let mut s = RunningStats::default();
    for i in 0..200 {
        s.update((i % 7) as f64 * 0.1).unwrap();
    }
    s
}

#[test]
fn rollouts_are_identical_across_runs_and_worker_counts() {
    let run = |workers| {
        let (mut pool, ac, disc, _) = setup(7, 6);
        let b = collect_rollout(&mut pool, &ac, &disc, &warm_stats(), &RewardWeights::default(), 30, workers).unwrap();
        (b.rewards, b.actions, b.scores, pool)
    };
    let a = run(1);
    assert_eq!(a, run(1));
    assert_eq!(a, run(3));
    assert_eq!(a, run(6));
}

#[test]
fn zero_imitation_weight_leaves_regularization() {
    let (mut pool, ac, disc, _) = setup(8, 4);
    let w = RewardWeights {
        w_imitation: 0.0,
        ..RewardWeights::default()
    };
    let b = collect_rollout(&mut pool, &ac, &disc, &warm_stats(), &w, 20, 1).unwrap();
    for i in 0..b.len() {
        if !b.dones[i] || b.terminals[i] {
            assert_eq!(b.rewards[i], b.regularization[i]);
        }
    }
}

#[test]
fn termination_reward_includes_penalty() {
    let (mut pool, mut ac, disc, _) = setup(9, 4);
    // large random actions make the robot fall quickly
    ac.policy.log_std = vec![1.5; 4];
    let w = RewardWeights::default();
    let b = collect_rollout(&mut pool, &ac, &disc, &warm_stats(), &w, 120, 1).unwrap();
    let terminal: Vec<usize> = (0..b.len()).filter(|&i| b.terminals[i]).collect();
    assert!(!terminal.is_empty());
    for i in terminal {
        let expect = w.w_imitation * (b.imitation[i] - 5.0 / (1.0 - w.gamma)) + b.regularization[i];
        assert!((b.rewards[i] - expect).abs() < 1e-9);
    }
}

#[test]
fn warmup_gives_no_imitation_reward() {
    let (mut pool, ac, disc, _) = setup(10, 2);
    let b = collect_rollout(&mut pool, &ac, &disc, &RunningStats::default(), &RewardWeights::default(), 5, 1).unwrap();
    assert!(b.imitation.iter().all(|r| *r == 0.0));
    assert_eq!(b.windows.len(), 10);
    assert_eq!(b.scores.len(), 10);
}

#[test]
fn first_window_after_reset_is_padded() {
    let (pool, _, _, _) = setup(11, 1);
    let w = pool.slots[0].window.window();
    assert_eq!(w.frame(0), w.frame(1));
}

#[test]
fn evaluation_episode_has_requested_length() {
    let (_, ac, _, _) = setup(12, 1);
    let ep = evaluate_episode(&ac.policy, &SimParams::default(), &EnvConfig::default(), 130, 3, &Default::default()).unwrap();
    assert_eq!(ep.observations.len(), 130);
    let again = evaluate_episode(&ac.policy, &SimParams::default(), &EnvConfig::default(), 130, 3, &Default::default()).unwrap();
    assert_eq!(ep, again);
}

proptest! {
    #[test]
    fn normalized_surrogate_ignores_advantage_shift(shift in -50.0f64..50.0, seed in 0u64..50) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = small_config();
        let ac = ActorCritic::new(3, 2, &cfg, &mut rng).unwrap();
        let batch = toy_batch(&ac, 16, &mut rng);
        let mut raw: Vec<f64> = (0..16).map(|_| rng.random_range(-2.0..2.0)).collect();
        let mut shifted: Vec<f64> = raw.iter().map(|a| a + shift).collect();
        normalize_advantages(&mut raw);
        normalize_advantages(&mut shifted);
        let idx: Vec<usize> = (0..16).collect();
        let mut b1 = batch.clone();
        b1.advantages = raw;
        let mut b2 = batch;
        b2.advantages = shifted;
        let g1 = ac.minibatch_loss(&b1, &idx, &cfg).unwrap().1;
        let g2 = ac.minibatch_loss(&b2, &idx, &cfg).unwrap().1;
        for (a, b) in g1.iter().zip(&g2) {
            prop_assert!((a - b).abs() < 1e-6 * (1.0 + a.abs()));
        }
    }
}
