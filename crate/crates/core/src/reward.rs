//! Reward terms: normalized imitation reward, termination penalty,
//! regularization penalties and the handcrafted task rewards used for
//! baselines and evaluation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::observation::{SimState, NUM_JOINTS};

/// Streaming mean and population variance (Welford).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunningStats {
    count: u64,
    mean: f64,
    m2: f64,
    pub epsilon: f64,
    /// Updates required before [`imitation_reward`] starts normalizing.
    pub warmup: u64,
}

impl Default for RunningStats {
    fn default() -> Self {
        Self::new(1e-6, 100)
    }
}

impl RunningStats {
    pub fn new(epsilon: f64, warmup: u64) -> Self {
        Self {
            count: 0,
            mean: 0.0,
            m2: 0.0,
            epsilon,
            warmup,
        }
    }

    pub fn update(&mut self, value: f64) -> Result<()> {
        if !value.is_finite() {
            return Err(Error::NonFinite("running-stats sample".into()));
        }
        self.count += 1;
        let delta = value - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (value - self.mean);
        Ok(())
    }

    pub fn update_all(&mut self, values: &[f64]) -> Result<()> {
        values.iter().try_for_each(|&v| self.update(v))
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn variance(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            (self.m2 / self.count as f64).max(0.0)
        }
    }

    /// `max(sqrt(variance), epsilon)`.
    pub fn std(&self) -> f64 {
        self.variance().sqrt().max(self.epsilon)
    }

    pub fn is_warm(&self) -> bool {
        self.count >= self.warmup
    }
}

/// Welford update returning the new statistics.
pub fn stats_update(stats: &RunningStats, value: f64) -> Result<RunningStats> {
    let mut s = stats.clone();
    s.update(value)?;
    Ok(s)
}

/// `(score - mean) / std`, or 0 while the statistics are still warming up.
pub fn imitation_reward(score: f64, stats: &RunningStats) -> f64 {
    if !stats.is_warm() {
        return 0.0;
    }
    (score - stats.mean()) / stats.std()
}

/// `-5 / (1 - gamma)` on early termination (the normalized reward has unit std).
pub fn termination_penalty(is_early_termination: bool, gamma: f64) -> f64 {
    if is_early_termination {
        -5.0 / (1.0 - gamma)
    } else {
        0.0
    }
}

/// `w_imitation * (r_imitation + r_termination) + r_regularization`.
pub fn total_reward(r_imitation: f64, r_termination: f64, r_regularization: f64, w_imitation: f64) -> f64 {
    w_imitation * (r_imitation + r_termination) + r_regularization
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardWeights {
    pub w_imitation: f64,
    pub w_action_rate: f64,
    pub w_joint_accel: f64,
    pub w_joint_torque: f64,
    /// Planar stand-in for the roll-rate, yaw-rate and lateral-velocity penalties.
    pub w_pitch_rate: f64,
    pub gamma: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            w_imitation: 1.0,
            w_action_rate: -0.005,
            w_joint_accel: -1.25e-8,
            w_joint_torque: -1.25e-6,
            w_pitch_rate: 0.0,
            gamma: 0.99,
        }
    }
}

impl RewardWeights {
    pub fn validate(&self, prefix: &str, errors: &mut Vec<String>) {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            errors.push(format!("{prefix}gamma must be in (0, 1) (got {})", self.gamma));
        }
        if !self.w_imitation.is_finite() || self.w_imitation < 0.0 {
            errors.push(format!("{prefix}w_imitation must be finite and >= 0"));
        }
        for (name, w) in [
            ("w_action_rate", self.w_action_rate),
            ("w_joint_accel", self.w_joint_accel),
            ("w_joint_torque", self.w_joint_torque),
            ("w_pitch_rate", self.w_pitch_rate),
        ] {
            if !w.is_finite() {
                errors.push(format!("{prefix}{name} must be finite"));
            }
        }
    }
}

/// Inputs of the regularization terms for one control step.
#[derive(Debug, Clone, Copy)]
pub struct RegularizationInput<'a> {
    pub action: &'a [f64],
    pub prev_action: &'a [f64],
    pub joint_vel: &'a [f64; NUM_JOINTS],
    pub prev_joint_vel: &'a [f64; NUM_JOINTS],
    pub joint_torque: &'a [f64; NUM_JOINTS],
    pub pitch_rate: f64,
    pub dt: f64,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Action-rate, joint-acceleration, joint-torque and pitch-rate penalties.
pub fn regularization_reward(input: &RegularizationInput<'_>, weights: &RewardWeights) -> f64 {
    let accel: f64 = input
        .joint_vel
        .iter()
        .zip(input.prev_joint_vel)
        .map(|(v, p)| ((v - p) / input.dt).powi(2))
        .sum();
    let torque: f64 = input.joint_torque.iter().map(|t| t * t).sum();
    weights.w_action_rate * sq_dist(input.action, input.prev_action)
        + weights.w_joint_accel * accel
        + weights.w_joint_torque * torque
        + weights.w_pitch_rate * input.pitch_rate * input.pitch_rate
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HandcraftedWeights {
    /// Stand-up: pitch weight.
    pub w_pitch: f64,
    /// Stand-up: base height weight.
    pub w_height: f64,
    /// Stand-up: front feet off the ground.
    pub w_front_lift: f64,
    /// Back-flip: traversed flight angle weight.
    pub w_flip: f64,
}

impl Default for HandcraftedWeights {
    fn default() -> Self {
        Self {
            w_pitch: 1.0,
            w_height: 3.0,
            w_front_lift: 2.0,
            w_flip: 5.0,
        }
    }
}

/// Stand-up task reward. The lift bonus is paid while the front foot is off the ground.
pub fn handcrafted_standup_reward(state: &SimState, front_feet_contact: bool, weights: &HandcraftedWeights) -> f64 {
    let lift = if front_feet_contact { 0.0 } else { 1.0 };
    weights.w_pitch * state.pitch + weights.w_height * state.base_z + weights.w_front_lift * lift
}

/// Back-flip task reward, paid on landing only.
pub fn handcrafted_backflip_reward(flight_traversed_angle: f64, landed: bool, weight: f64) -> f64 {
    if landed {
        weight * flight_traversed_angle
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use std::f64::consts::{FRAC_PI_2, PI};

    use super::*;

    #[test]
    fn welford_two_values() {
        let mut s = RunningStats::new(1e-6, 0);
        s.update(0.0).unwrap();
        s.update(2.0).unwrap();
        assert_eq!(s.mean(), 1.0);
        assert_eq!(s.variance(), 1.0);
        assert_eq!(s.count(), 2);
    }

    #[test]
    fn constant_stream_hits_floor() {
        let mut s = RunningStats::default();
        for _ in 0..500 {
            s.update(4.25).unwrap();
        }
        assert_eq!(s.mean(), 4.25);
        assert_eq!(s.std(), 1e-6);
    }

    #[test]
    fn non_finite_sample_rejected() {
        let s = RunningStats::default();
        assert!(stats_update(&s, f64::INFINITY).is_err());
        assert_eq!(stats_update(&s, 1.0).unwrap().count(), 1);
    }

    #[test]
    fn warmup_gives_zero_reward() {
        let mut s = RunningStats::new(1e-6, 100);
        for i in 0..99 {
            s.update(i as f64).unwrap();
        }
        assert_eq!(imitation_reward(1e3, &s), 0.0);
        s.update(99.0).unwrap();
        assert!(imitation_reward(1e3, &s) > 0.0);
    }

    #[test]
    fn imitation_reward_standardizes() {
        let mut s = RunningStats::new(1e-6, 0);
        s.update_all(&[1.0, 3.0, 5.0, 7.0]).unwrap();
        assert_eq!(imitation_reward(s.mean(), &s), 0.0);
        assert!((imitation_reward(s.mean() + s.std(), &s) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn termination_values() {
        assert!((termination_penalty(true, 0.99) + 500.0).abs() < 1e-9);
        assert!((termination_penalty(true, 0.9) + 50.0).abs() < 1e-12);
        assert_eq!(termination_penalty(false, 0.99), 0.0);
    }

    #[test]
    fn total_reward_values() {
        assert_eq!(total_reward(1.0, 0.0, 0.0, 4.0), 4.0);
        assert!((total_reward(0.0, -500.0, -0.1, 1.0) + 500.1).abs() < 1e-12);
        assert_eq!(total_reward(3.0, -7.0, -0.25, 0.0), -0.25);
    }

    fn reg_input<'a>(
        a: &'a [f64],
        pa: &'a [f64],
        v: &'a [f64; 4],
        pv: &'a [f64; 4],
        t: &'a [f64; 4],
    ) -> RegularizationInput<'a> {
        RegularizationInput {
            action: a,
            prev_action: pa,
            joint_vel: v,
            prev_joint_vel: pv,
            joint_torque: t,
            pitch_rate: 0.5,
            dt: 0.02,
        }
    }

    #[test]
    fn regularization_values() {
        let w = RewardWeights::default();
        let z = [0.0; 4];
        let a = [0.3, -0.1, 0.0, 1.0];
        assert_eq!(regularization_reward(&reg_input(&a, &a, &z, &z, &z), &w), 0.0);

        let pa = [0.3, -0.1, 2.0, 1.0]; // squared distance 4
        let only_ar = RewardWeights {
            w_joint_accel: 0.0,
            w_joint_torque: 0.0,
            ..w.clone()
        };
        let r = regularization_reward(&reg_input(&a, &pa, &z, &z, &z), &only_ar);
        assert!((r + 0.02).abs() < 1e-15);

        let zero = RewardWeights {
            w_action_rate: 0.0,
            w_joint_accel: 0.0,
            w_joint_torque: 0.0,
            w_pitch_rate: 0.0,
            ..w
        };
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(regularization_reward(&reg_input(&a, &pa, &v, &z, &v), &zero), 0.0);
    }

    fn st(pitch: f64, z: f64) -> SimState {
        SimState {
            base_x: 0.0,
            base_z: z,
            pitch,
            base_vx: 0.0,
            base_vz: 0.0,
            pitch_rate: 0.0,
            joint_pos: [0.0; 4],
            joint_vel: [0.0; 4],
            time: 0.0,
            terminal: false,
            mass: 2.5,
            flight_angle: 0.0,
            airborne: false,
        }
    }

    #[test]
    fn standup_values() {
        let w = HandcraftedWeights::default();
        assert!((handcrafted_standup_reward(&st(0.0, 0.3), true, &w) - 0.9).abs() < 1e-12);
        let r = handcrafted_standup_reward(&st(FRAC_PI_2, 0.5), false, &w);
        assert!((r - (FRAC_PI_2 + 1.5 + 2.0)).abs() < 1e-12);
        assert!((r - 5.071).abs() < 1e-3);
        let z = HandcraftedWeights {
            w_pitch: 0.0,
            w_height: 0.0,
            w_front_lift: 0.0,
            w_flip: 0.0,
        };
        assert_eq!(handcrafted_standup_reward(&st(1.0, 0.4), false, &z), 0.0);
    }

    #[test]
    fn backflip_values() {
        assert!((handcrafted_backflip_reward(2.0 * PI, true, 5.0) - 31.4159).abs() < 1e-4);
        assert_eq!(handcrafted_backflip_reward(3.0, false, 5.0), 0.0);
        assert_eq!(handcrafted_backflip_reward(0.0, true, 5.0), 0.0);
    }
}
