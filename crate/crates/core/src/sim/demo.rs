//! Kinematic "hand-carried" reference motions.
//!
//! Each motion is a scripted base pose `(x, z, pitch)` over time. Poses are
//! jittered with smooth noise and a per-trajectory time scale, sampled at the
//! control rate, and velocities come from backward differences of the jittered
//! poses. Nothing here is integrated through the dynamics, so the result is
//! only roughly achievable by the robot.

use std::f64::consts::{PI, TAU};
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::SimParams;
use crate::dataset::{ReferenceDataset, Trajectory};
use crate::error::{Error, Result};
use crate::observation::Observation;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Motion {
    Leap,
    Wave,
    StandUp,
    BackFlip,
}

impl Motion {
    pub const ALL: [Motion; 4] = [Motion::Leap, Motion::Wave, Motion::StandUp, Motion::BackFlip];

    /// Frames per recorded trajectory.
    pub fn frames(self) -> usize {
        match self {
            Motion::Leap | Motion::Wave => 130,
            Motion::StandUp => 100,
            Motion::BackFlip => 60,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Motion::Leap => "leap",
            Motion::Wave => "wave",
            Motion::StandUp => "standup",
            Motion::BackFlip => "backflip",
        }
    }
}

impl fmt::Display for Motion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Motion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "leap" => Ok(Motion::Leap),
            "wave" => Ok(Motion::Wave),
            "standup" => Ok(Motion::StandUp),
            "backflip" => Ok(Motion::BackFlip),
            _ => Err(Error::InvalidArgument(format!(
                "unknown motion '{s}' (expected leap, wave, standup or backflip)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DemoOptions {
    pub noise: bool,
    /// Half-width of the uniform per-trajectory time-scale jitter.
    pub time_scale_jitter: f64,
    pub position_noise: f64,
    pub pitch_noise: f64,
    /// Constant added to the recorded height, e.g. a carrying offset.
    pub height_offset: f64,
    pub trajectories: usize,
    pub dt: f64,
}

impl Default for DemoOptions {
    fn default() -> Self {
        Self {
            noise: true,
            time_scale_jitter: 0.15,
            position_noise: 0.01,
            pitch_noise: 0.05,
            height_offset: 0.0,
            trajectories: 20,
            dt: 0.02,
        }
    }
}

impl DemoOptions {
    pub fn noiseless() -> Self {
        Self {
            noise: false,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScriptPose {
    pub x: f64,
    pub z: f64,
    pub pitch: f64,
}

fn smoothstep(u: f64) -> f64 {
    let u = u.clamp(0.0, 1.0);
    u * u * (3.0 - 2.0 * u)
}

/// Length of the non-periodic scripts in seconds; the rest of the recording holds the final pose.
const BACKFLIP_SCRIPT: f64 = 1.0;
const STANDUP_SCRIPT: f64 = 1.4;

/// Noise-free pose of `motion` at script time `t` for a robot standing at `h0`.
pub fn script_pose(motion: Motion, t: f64, h0: f64) -> ScriptPose {
    match motion {
        Motion::Leap => {
            let period = 0.65;
            let phase = (t / period).fract();
            let z = if phase < 0.45 {
                h0 - 0.03 * (PI * phase / 0.45).sin()
            } else {
                h0 + 0.12 * (PI * (phase - 0.45) / 0.55).sin()
            };
            ScriptPose {
                x: 0.5 * t,
                z,
                pitch: 0.15 * (TAU * phase).sin(),
            }
        }
        Motion::Wave => {
            let w = TAU / 1.0;
            ScriptPose {
                x: 0.2 * t,
                z: h0 + 0.04 * (w * t).sin(),
                pitch: 0.2 * (w * t).cos() - 0.2,
            }
        }
        Motion::StandUp => {
            let s = smoothstep((t - 0.2) / (STANDUP_SCRIPT - 0.2));
            ScriptPose {
                x: -0.1 * s,
                z: h0 + 0.22 * s,
                pitch: 0.5 * PI * s,
            }
        }
        Motion::BackFlip => {
            let u = (t / BACKFLIP_SCRIPT).clamp(0.0, 1.0);
            let crouch = h0 - 0.05;
            let (z, pitch) = if u < 0.15 {
                (h0 - 0.05 * smoothstep(u / 0.15), 0.0)
            } else if u < 0.85 {
                let v = (u - 0.15) / 0.7;
                let base = crouch + (h0 - crouch) * v;
                let lift = 0.6 - 0.5 * (crouch + h0);
                (base + lift * (PI * v).sin(), -TAU * smoothstep(v))
            } else {
                (h0 - 0.03 * (PI * (u - 0.85) / 0.15).sin(), -TAU)
            };
            ScriptPose { x: 0.0, z, pitch }
        }
    }
}

/// Smooth zero-mean noise: a sum of three low-frequency sinusoids.
struct SmoothNoise {
    terms: [(f64, f64, f64); 3],
}

impl SmoothNoise {
    fn new<R: Rng + ?Sized>(amplitude: f64, rng: &mut R) -> Self {
        let terms = std::array::from_fn(|_| {
            (
                amplitude * rng.random_range(0.0..1.0) / 3f64.sqrt(),
                rng.random_range(0.3..2.0),
                rng.random_range(0.0..TAU),
            )
        });
        Self { terms }
    }

    fn at(&self, t: f64) -> f64 {
        self.terms.iter().map(|(a, f, p)| a * (TAU * f * t + p).sin()).sum()
    }
}

/// One rough demonstration of `motion` as a sequence of base-only observations.
pub fn generate_rough_demo<R: Rng + ?Sized>(
    motion: Motion,
    params: &SimParams,
    options: &DemoOptions,
    rng: &mut R,
) -> Vec<Observation> {
    let h0 = params.standing_height();
    let n = motion.frames();
    let dt = options.dt;
    let (scale, noise) = if options.noise {
        let j = options.time_scale_jitter;
        let scale = if j > 0.0 { rng.random_range(1.0 - j..=1.0 + j) } else { 1.0 };
        let noise = [
            SmoothNoise::new(2.0 * options.position_noise, rng),
            SmoothNoise::new(options.position_noise, rng),
            SmoothNoise::new(options.pitch_noise, rng),
        ];
        (scale, Some(noise))
    } else {
        (1.0, None)
    };

    let poses: Vec<[f64; 3]> = (0..n)
        .map(|k| {
            let t = k as f64 * dt;
            let p = script_pose(motion, t / scale, h0);
            match &noise {
                Some([nx, nz, np]) => [p.x + nx.at(t), p.z + nz.at(t), p.pitch + np.at(t)],
                None => [p.x, p.z, p.pitch],
            }
        })
        .collect();

    (0..n)
        .map(|k| {
            let [x, z, pitch] = poses[k];
            let [vx, vz, rate] = if k == 0 {
                [0.0; 3]
            } else {
                let [px, pz, pp] = poses[k - 1];
                [(x - px) / dt, (z - pz) / dt, (pitch - pp) / dt]
            };
            Observation::from_world(vx, vz, pitch, rate, z + options.height_offset)
        })
        .collect()
}

/// A full reference dataset of `options.trajectories` rough demonstrations.
pub fn demo_dataset<R: Rng + ?Sized>(
    motion: Motion,
    params: &SimParams,
    options: &DemoOptions,
    rng: &mut R,
) -> ReferenceDataset {
    let trajectories = (0..options.trajectories)
        .map(|_| Trajectory::new(generate_rough_demo(motion, params, options, rng)))
        .collect();
    ReferenceDataset::new(trajectories, motion.name(), options.dt)
}
