use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use wasabi_core::observation::phi_extract;
use wasabi_core::sim::*;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[test]
fn ballistic_flight_matches_projectile() {
    let p = SimParams::noiseless();
    let mut s = reset(&p, &mut rng(0));
    let (z0, vz0) = (1.5, 0.8);
    s.base_z = z0;
    s.base_vz = vz0;
    s.base_vx = 0.3;
    // 25 control steps of 0.02 s
    for _ in 0..25 {
        let r = step(&s, &p.nominal_joint_pos, &p).unwrap();
        assert!(!r.foot_contacts[0] && !r.foot_contacts[1]);
        s = r.next_state;
    }
    let t = 0.5;
    let expect = z0 + vz0 * t - 0.5 * p.gravity * t * t;
    assert!((s.time - t).abs() < 1e-9);
    assert!((s.base_z - expect).abs() < 5e-3, "{} vs {expect}", s.base_z);
    assert!((s.base_x - 0.15).abs() < 1e-9);
}

#[test]
fn standing_equilibrium_is_steady() {
    let p = SimParams::noiseless();
    let mut s = reset(&p, &mut rng(0));
    let z0 = s.base_z;
    for _ in 0..50 {
        s = step(&s, &p.nominal_joint_pos, &p).unwrap().next_state;
        assert!((s.base_z - z0).abs() <= 1e-3);
        assert!(!s.terminal);
    }
    assert!(p.leg_height() - z0 < 5e-3);
}

#[test]
fn noisy_reset_settles() {
    let p = SimParams::default();
    let mut s = reset(&p, &mut rng(4));
    for _ in 0..100 {
        s = step(&s, &p.nominal_joint_pos, &p).unwrap().next_state;
    }
    assert!(!s.terminal);
    assert!(s.base_vz.abs() < 1e-2 && s.pitch.abs() < 0.1);
}

#[test]
fn stepping_is_deterministic() {
    let p = SimParams::default();
    let run = || {
        let mut r = rng(9);
        let mut s = reset(&p, &mut r);
        let mut out = Vec::new();
        for k in 0..60 {
            let a = (k as f64 * 0.3).sin();
            let targets = [0.8 + a, -1.6 - a, -0.8 + a, 1.6 + 0.5 * a];
            let res = step(&s, &targets, &p).unwrap();
            out.push(res);
            s = res.next_state;
            if s.terminal {
                break;
            }
        }
        out
    };
    assert_eq!(run(), run());
}

#[test]
fn observation_ignores_joint_state() {
    let p = SimParams::default();
    let s = reset(&p, &mut rng(2));
    let a = step(&s, &[1.0, -1.0, -1.0, 1.0], &p).unwrap().next_state;
    let mut b = a;
    b.joint_pos = [0.0; 4];
    b.joint_vel = [3.0; 4];
    assert_eq!(phi_extract(&a).unwrap(), phi_extract(&b).unwrap());
}

/// Crouch, then extend all legs as fast as possible.
fn jump(p: &SimParams) -> (f64, Vec<StepResult>) {
    let mut s = reset(p, &mut rng(0));
    let crouch = [1.2, -2.4, -1.2, 2.4];
    let extend = [0.3, -0.6, -0.3, 0.6];
    let mut peak: f64 = 0.0;
    let mut results = Vec::new();
    for k in 0..60 {
        let t = if k < 15 { crouch } else if k < 25 { extend } else { p.nominal_joint_pos };
        let r = step(&s, &t, p).unwrap();
        s = r.next_state;
        peak = peak.max(s.base_z);
        results.push(r);
        if s.terminal {
            break;
        }
    }
    (peak, results)
}

#[test]
fn robot_can_jump_and_land() {
    let p = SimParams::noiseless();
    let (peak, results) = jump(&p);
    assert!(peak > p.standing_height() + 0.1, "peak {peak}");
    assert!(results.iter().any(|r| r.landing_event));
    assert!(!results.last().unwrap().next_state.terminal);
}

#[test]
fn flight_angle_accounting() {
    let p = SimParams::noiseless();
    let mut s = reset(&p, &mut rng(0));
    s.base_z = 1.0;
    s.pitch_rate = -2.0;
    let mut landed = None;
    let mut integral = 0.0;
    for _ in 0..50 {
        let r = step(&s, &p.nominal_joint_pos, &p).unwrap();
        if r.landing_event {
            landed = Some(r.flight_traversed_angle);
            break;
        }
        integral += -(r.next_state.pitch - s.pitch);
        assert_eq!(r.flight_traversed_angle, 0.0);
        s = r.next_state;
        if s.terminal {
            break;
        }
    }
    if let Some(angle) = landed {
        // the landing step also rotates before touchdown
        assert!(angle >= integral - 1e-9);
        assert!(angle > 0.0);
    } else {
        assert!(s.terminal);
        assert!((-s.flight_angle - integral).abs() < 0.05);
    }
}

#[test]
fn scripted_backflip_is_not_ballistic() {
    let p = SimParams::default();
    let obs = generate_rough_demo(Motion::BackFlip, &p, &DemoOptions::noiseless(), &mut rng(0));
    let dt = 0.02;
    // flight frames: script phase 0.15..0.85 of 1 s
    let z: Vec<f64> = obs.iter().map(|o| o.height).collect();
    let mut worst: f64 = 0.0;
    for k in 12..40 {
        let acc = (z[k + 1] - 2.0 * z[k] + z[k - 1]) / (dt * dt);
        worst = worst.max((acc + p.gravity).abs());
    }
    assert!(worst > 2.0, "implied vertical acceleration too close to free fall ({worst})");
}
