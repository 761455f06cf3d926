//! Analytic gradients against central finite differences.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wasabi_core::discriminator::{input_gradient_norm2, lsgan_loss, wgan_loss};
use wasabi_core::nn::{Activation, MlpNet};

pub const SEEDS: u64 = 120;
pub const TOL: f64 = 1e-4;
const STEP: f64 = 1e-6;

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(1e-6)
}

pub fn random_net(rng: &mut ChaCha8Rng, act: Activation, outputs: usize) -> MlpNet {
    let input = rng.random_range(1..6);
    let hidden = rng.random_range(1..3);
    let mut sizes = vec![input];
    for _ in 0..hidden {
        sizes.push(rng.random_range(2..9));
    }
    sizes.push(outputs);
    let mut net = MlpNet::new(&sizes, act, 1.0, rng).unwrap();
    // random biases so ELU sees both branches
    let params: Vec<f64> = net.flat_params().iter().map(|p| p + rng.random_range(-0.3..0.3)).collect();
    net.set_flat_params(&params).unwrap();
    net
}

pub fn random_batch(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.5..1.5))
}

fn param_fd(net: &MlpNet, f: impl Fn(&MlpNet) -> f64) -> Vec<f64> {
    let base = net.flat_params();
    let mut probe = net.clone();
    let mut out = Vec::with_capacity(base.len());
    for k in 0..base.len() {
        let mut p = base.clone();
        p[k] = base[k] + STEP;
        probe.set_flat_params(&p).unwrap();
        let plus = f(&probe);
        p[k] = base[k] - STEP;
        probe.set_flat_params(&p).unwrap();
        let minus = f(&probe);
        out.push((plus - minus) / (2.0 * STEP));
    }
    out
}

/// A check maps (activation, seeded rng) to a relative error.
pub type Check = fn(Activation, &mut ChaCha8Rng) -> f64;

/// Worst error over both hidden activations and all seeds, with its case.
pub fn worst(check: Check) -> (f64, Activation, u64) {
    let mut out = (0.0, Activation::Relu, 0);
    for act in [Activation::Relu, Activation::Elu] {
        for seed in 0..SEEDS {
            let e = check(act, &mut ChaCha8Rng::seed_from_u64(seed));
            if e > out.0 || e.is_nan() {
                out = (e, act, seed);
            }
        }
    }
    out
}

pub fn backward_error(act: Activation, rng: &mut ChaCha8Rng) -> f64 {
    let outputs = rng.random_range(1..4);
    let net = random_net(rng, act, outputs);
    let n = rng.random_range(1..5);
    let x = random_batch(rng, n, net.input_dim());
    let w = random_batch(rng, x.nrows(), outputs);
    let objective = |n: &MlpNet| (n.forward_batch(x.view()).unwrap().output() * &w).sum();

    let cache = net.forward_batch(x.view()).unwrap();
    let grads = net.backward_batch(&cache, w.view()).unwrap();
    let e_params = rel_err(&grads.flat(), &param_fd(&net, objective));

    let mut fd_input = Vec::new();
    for idx in 0..x.len() {
        let (r, c) = (idx / x.ncols(), idx % x.ncols());
        let mut xp = x.clone();
        xp[[r, c]] += STEP;
        let mut xm = x.clone();
        xm[[r, c]] -= STEP;
        let f = |xx: &Array2<f64>| (net.forward_batch(xx.view()).unwrap().output() * &w).sum();
        fd_input.push((f(&xp) - f(&xm)) / (2.0 * STEP));
    }
    let analytic: Vec<f64> = grads.input.iter().copied().collect();
    e_params.max(rel_err(&analytic, &fd_input))
}

pub fn wgan_error(act: Activation, rng: &mut ChaCha8Rng) -> f64 {
    let net = random_net(rng, act, 1);
    let d = net.input_dim();
    let (nr, np) = (rng.random_range(1..5), rng.random_range(1..5));
    let reference = random_batch(rng, nr, d);
    let policy = random_batch(rng, np, d);
    let (w_loss, w_gp) = (rng.random_range(0.1..2.0), rng.random_range(0.5..10.0));
    let f = |n: &MlpNet| wgan_loss(n, reference.view(), policy.view(), w_loss, w_gp).unwrap().loss;
    let analytic = wgan_loss(&net, reference.view(), policy.view(), w_loss, w_gp).unwrap();
    rel_err(&analytic.grads.flat(), &param_fd(&net, f))
}

pub fn lsgan_error(act: Activation, rng: &mut ChaCha8Rng) -> f64 {
    let net = random_net(rng, act, 1);
    let d = net.input_dim();
    let (nr, np) = (rng.random_range(1..5), rng.random_range(1..5));
    let reference = random_batch(rng, nr, d);
    let policy = random_batch(rng, np, d);
    let w_gp = rng.random_range(0.5..10.0);
    let f = |n: &MlpNet| lsgan_loss(n, reference.view(), policy.view(), w_gp).unwrap().loss;
    let analytic = lsgan_loss(&net, reference.view(), policy.view(), w_gp).unwrap();
    rel_err(&analytic.grads.flat(), &param_fd(&net, f))
}

pub fn input_norm_error(act: Activation, rng: &mut ChaCha8Rng) -> f64 {
    let net = random_net(rng, act, 1);
    let x: Vec<f64> = (0..net.input_dim()).map(|_| rng.random_range(-1.5..1.5)).collect();
    let out = |v: &[f64]| net.forward(v).unwrap().0[0];
    let fd: Vec<f64> = (0..x.len())
        .map(|k| {
            let mut p = x.clone();
            p[k] += STEP;
            let mut m = x.clone();
            m[k] -= STEP;
            (out(&p) - out(&m)) / (2.0 * STEP)
        })
        .collect();
    let fd_norm2: f64 = fd.iter().map(|v| v * v).sum();
    let norm2 = input_gradient_norm2(&net, &x).unwrap();
    (norm2 - fd_norm2).abs() / norm2.max(fd_norm2).max(1e-6)
}

/// Largest change of the loss and relative change of its gradient when a
/// constant is added to the output bias.
pub fn shift_change(seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
    let net = random_net(&mut rng, Activation::Elu, 1);
    let d = net.input_dim();
    let reference = random_batch(&mut rng, 6, d);
    let policy = random_batch(&mut rng, 6, d);
    let base = wgan_loss(&net, reference.view(), policy.view(), 0.5, 5.0).unwrap();
    let (mut dl, mut dg) = (0.0f64, 0.0f64);
    for c in [-10.0, 1.0, 1e3] {
        let mut shifted = net.clone();
        let mut p = shifted.flat_params();
        // the output bias is the last parameter
        *p.last_mut().unwrap() += c;
        shifted.set_flat_params(&p).unwrap();
        let moved = wgan_loss(&shifted, reference.view(), policy.view(), 0.5, 5.0).unwrap();
        dl = dl.max((moved.adversarial - base.adversarial).abs()).max((moved.loss - base.loss).abs());
        dg = dg.max(rel_err(&moved.grads.flat(), &base.grads.flat()));
    }
    (dl, dg)
}
