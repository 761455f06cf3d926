//! Simulator state, the partial observation map and observation windows.
//!
//! Rotation convention: pitch is the counter-clockwise angle of the body
//! x-axis in the world x-z plane, so a world vector is expressed in the body
//! frame by rotating it by `-pitch`.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};

pub const NUM_JOINTS: usize = 4;
/// Length of a flattened [`Observation`].
pub const OBS_DIM: usize = 6;
/// Extra per-frame features appended in full-state mode (joint positions and velocities).
pub const JOINT_FEATURE_DIM: usize = 2 * NUM_JOINTS;

/// Full planar simulator state.
///
/// Joints are ordered `[front hip, front knee, hind hip, hind knee]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimState {
    pub base_x: f64,
    pub base_z: f64,
    pub pitch: f64,
    pub base_vx: f64,
    pub base_vz: f64,
    pub pitch_rate: f64,
    pub joint_pos: [f64; NUM_JOINTS],
    pub joint_vel: [f64; NUM_JOINTS],
    pub time: f64,
    pub terminal: bool,
    /// Body mass for this episode (nominal mass plus any perturbation).
    pub mass: f64,
    /// Pitch accumulated since the robot last left the ground.
    pub flight_angle: f64,
    /// Whether both feet and the body were out of contact at the end of the last substep.
    pub airborne: bool,
}

impl SimState {
    pub fn is_finite(&self) -> bool {
        [
            self.base_x,
            self.base_z,
            self.pitch,
            self.base_vx,
            self.base_vz,
            self.pitch_rate,
            self.time,
            self.mass,
            self.flight_angle,
        ]
        .iter()
        .chain(self.joint_pos.iter())
        .chain(self.joint_vel.iter())
        .all(|v| v.is_finite())
    }

    /// Joint positions followed by joint velocities.
    pub fn joint_features(&self) -> [f64; JOINT_FEATURE_DIM] {
        let mut out = [0.0; JOINT_FEATURE_DIM];
        out[..NUM_JOINTS].copy_from_slice(&self.joint_pos);
        out[NUM_JOINTS..].copy_from_slice(&self.joint_vel);
        out
    }
}

/// Base-only observation shared by the simulator and the demonstrations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub vx_body: f64,
    pub vz_body: f64,
    pub pitch_rate: f64,
    pub grav_x_body: f64,
    pub grav_z_body: f64,
    pub height: f64,
}

impl Observation {
    pub fn to_array(&self) -> [f64; OBS_DIM] {
        [
            self.vx_body,
            self.vz_body,
            self.pitch_rate,
            self.grav_x_body,
            self.grav_z_body,
            self.height,
        ]
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        if v.len() != OBS_DIM {
            return Err(Error::Shape(format!(
                "observation needs {OBS_DIM} values, got {}",
                v.len()
            )));
        }
        Ok(Self {
            vx_body: v[0],
            vz_body: v[1],
            pitch_rate: v[2],
            grav_x_body: v[3],
            grav_z_body: v[4],
            height: v[5],
        })
    }

    /// Observation built from a world-frame base motion.
    pub fn from_world(vx: f64, vz: f64, pitch: f64, pitch_rate: f64, height: f64) -> Self {
        let (vx_body, vz_body) = rotate(vx, vz, -pitch);
        let (grav_x_body, grav_z_body) = rotate(0.0, -1.0, -pitch);
        Self {
            vx_body,
            vz_body,
            pitch_rate,
            grav_x_body,
            grav_z_body,
            height,
        }
    }

    /// Observation of a motionless robot at `height`.
    pub fn standing(height: f64) -> Self {
        Self::from_world(0.0, 0.0, 0.0, 0.0, height)
    }

    pub fn gravity_norm(&self) -> f64 {
        self.grav_x_body.hypot(self.grav_z_body)
    }
}

/// Counter-clockwise rotation of `(x, z)` by `angle`.
pub fn rotate(x: f64, z: f64, angle: f64) -> (f64, f64) {
    let (s, c) = angle.sin_cos();
    (c * x - s * z, s * x + c * z)
}

/// The observation map: projects a full state onto base-only features.
/// Joint positions and velocities are never read.
pub fn phi_extract(state: &SimState) -> Result<Observation> {
    ensure_finite(
        &[
            state.base_z,
            state.pitch,
            state.base_vx,
            state.base_vz,
            state.pitch_rate,
        ],
        "simulator state passed to phi_extract",
    )?;
    Ok(Observation::from_world(
        state.base_vx,
        state.base_vz,
        state.pitch,
        state.pitch_rate,
        state.base_z,
    ))
}

/// Per-frame discriminator features: the observation, optionally followed by
/// joint positions and velocities.
pub fn frame_features(obs: &Observation, joints: Option<&[f64; JOINT_FEATURE_DIM]>) -> Vec<f64> {
    let mut v = obs.to_array().to_vec();
    if let Some(j) = joints {
        v.extend_from_slice(j);
    }
    v
}

/// `H` consecutive frames, oldest first, flattened time-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationWindow {
    horizon: usize,
    frame_dim: usize,
    data: Vec<f64>,
}

impl ObservationWindow {
    pub fn new(horizon: usize, frame_dim: usize, data: Vec<f64>) -> Result<Self> {
        if horizon == 0 || frame_dim == 0 {
            return Err(Error::InvalidArgument(
                "window horizon and frame dimension must be positive".into(),
            ));
        }
        if data.len() != horizon * frame_dim {
            return Err(Error::Shape(format!(
                "window of {horizon}x{frame_dim} needs {} values, got {}",
                horizon * frame_dim,
                data.len()
            )));
        }
        Ok(Self {
            horizon,
            frame_dim,
            data,
        })
    }

    pub fn from_observations(obs: &[Observation]) -> Result<Self> {
        let data = obs.iter().flat_map(|o| o.to_array()).collect();
        Self::new(obs.len(), OBS_DIM, data)
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn frame_dim(&self) -> usize {
        self.frame_dim
    }

    /// Flattened features, length `horizon * frame_dim`.
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn frame(&self, i: usize) -> &[f64] {
        &self.data[i * self.frame_dim..(i + 1) * self.frame_dim]
    }

    /// Newest frame.
    pub fn last(&self) -> &[f64] {
        self.frame(self.horizon - 1)
    }
}

/// Rolling buffer that produces the window ending at the latest frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowBuffer {
    horizon: usize,
    frame_dim: usize,
    frames: VecDeque<Vec<f64>>,
}

impl WindowBuffer {
    pub fn new(horizon: usize, frame_dim: usize) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::InvalidArgument("horizon must be at least 1".into()));
        }
        Ok(Self {
            horizon,
            frame_dim,
            frames: VecDeque::with_capacity(horizon),
        })
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// Episode start: fill with `horizon` copies of the first frame.
    pub fn reset(&mut self, first: &[f64]) -> ObservationWindow {
        assert_eq!(first.len(), self.frame_dim, "frame dimension mismatch");
        self.frames.clear();
        for _ in 0..self.horizon {
            self.frames.push_back(first.to_vec());
        }
        self.window()
    }

    /// Drops the oldest frame and appends `frame`.
    pub fn push(&mut self, frame: &[f64]) -> ObservationWindow {
        assert_eq!(frame.len(), self.frame_dim, "frame dimension mismatch");
        if self.frames.is_empty() {
            return self.reset(frame);
        }
        if self.frames.len() == self.horizon {
            self.frames.pop_front();
        }
        self.frames.push_back(frame.to_vec());
        self.window()
    }

    pub fn window(&self) -> ObservationWindow {
        let data = self.frames.iter().flatten().copied().collect();
        ObservationWindow {
            horizon: self.horizon,
            frame_dim: self.frame_dim,
            data,
        }
    }
}
