//! Planar quadruped: a rigid body with two massless two-link legs, first-order
//! joint target tracking, spring-damper ground contact and ballistic flight.
//!
//! Joint angles are measured in the body frame. A hip angle of zero points the
//! thigh straight down and positive angles swing the leg forward (towards +x).
//! The knee angle is relative to the thigh.

mod demo;

pub use demo::{demo_dataset, generate_rough_demo, script_pose, DemoOptions, Motion, ScriptPose};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::observation::{rotate, SimState, NUM_JOINTS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimParams {
    pub mass: f64,
    pub inertia: f64,
    pub half_length: f64,
    pub half_height: f64,
    /// Hip x-offset from the body centre (front at `+`, hind at `-`).
    pub hip_offset: f64,
    pub link_lengths: [f64; 2],
    pub hip_limits: [f64; 2],
    pub knee_limits: [f64; 2],
    /// Standing joint configuration `[front hip, front knee, hind hip, hind knee]`.
    pub nominal_joint_pos: [f64; NUM_JOINTS],
    pub kp: f64,
    pub kd: f64,
    pub tracking_rate: f64,
    pub max_joint_vel: f64,
    pub contact_stiffness: f64,
    pub contact_damping: f64,
    /// Viscous tangential contact coefficient, capped by `friction * normal force`.
    pub tangential_damping: f64,
    pub friction: f64,
    /// Per-foot normal force cap, a stand-in for actuator saturation.
    pub max_contact_force: f64,
    pub gravity: f64,
    pub dt_physics: f64,
    pub control_decimation: usize,
    pub max_episode_time: f64,
    /// Uniform additive body-mass perturbation sampled at reset, if any.
    pub mass_perturbation: Option<[f64; 2]>,
    pub joint_noise: f64,
    pub height_noise: f64,
}

impl Default for SimParams {
    fn default() -> Self {
        let mass = 2.5;
        let (l, h) = (0.2, 0.05);
        Self {
            mass,
            inertia: mass * ((2.0 * l) * (2.0 * l) + (2.0 * h) * (2.0 * h)) / 12.0,
            half_length: l,
            half_height: h,
            hip_offset: 0.19,
            link_lengths: [0.16, 0.16],
            hip_limits: [-2.5, 2.5],
            knee_limits: [-2.7, 2.7],
            nominal_joint_pos: [0.8, -1.6, -0.8, 1.6],
            kp: 5.0,
            kd: 0.1,
            tracking_rate: 30.0,
            max_joint_vel: 25.0,
            contact_stiffness: 5000.0,
            contact_damping: 150.0,
            tangential_damping: 300.0,
            friction: 0.8,
            max_contact_force: 60.0,
            gravity: 9.81,
            dt_physics: 1e-3,
            control_decimation: 20,
            max_episode_time: 20.0,
            mass_perturbation: None,
            joint_noise: 0.05,
            height_noise: 0.01,
        }
    }
}

impl SimParams {
    /// Parameters with reset noise and mass perturbation switched off.
    pub fn noiseless() -> Self {
        Self {
            joint_noise: 0.0,
            height_noise: 0.0,
            mass_perturbation: None,
            ..Self::default()
        }
    }

    pub fn control_dt(&self) -> f64 {
        self.dt_physics * self.control_decimation as f64
    }

    pub fn validate(&self, prefix: &str, errors: &mut Vec<String>) {
        let mut positive = |name: &str, v: f64| {
            if !(v.is_finite() && v > 0.0) {
                errors.push(format!("{prefix}{name} must be positive (got {v})"));
            }
        };
        positive("mass", self.mass);
        positive("inertia", self.inertia);
        positive("half_length", self.half_length);
        positive("half_height", self.half_height);
        positive("link_lengths[0]", self.link_lengths[0]);
        positive("link_lengths[1]", self.link_lengths[1]);
        positive("tracking_rate", self.tracking_rate);
        positive("max_joint_vel", self.max_joint_vel);
        positive("contact_stiffness", self.contact_stiffness);
        positive("max_contact_force", self.max_contact_force);
        positive("gravity", self.gravity);
        positive("dt_physics", self.dt_physics);
        positive("max_episode_time", self.max_episode_time);
        if self.control_decimation == 0 {
            errors.push(format!("{prefix}control_decimation must be at least 1"));
        }
        for (name, lim) in [("hip_limits", self.hip_limits), ("knee_limits", self.knee_limits)] {
            if !(lim[0] < lim[1]) {
                errors.push(format!("{prefix}{name} must be an increasing pair"));
            }
        }
        if self.contact_damping < 0.0 || self.tangential_damping < 0.0 || self.friction < 0.0 {
            errors.push(format!("{prefix}contact damping and friction must be non-negative"));
        }
        if let Some([lo, hi]) = self.mass_perturbation {
            if !(lo <= hi) || self.mass + lo <= 0.0 {
                errors.push(format!("{prefix}mass_perturbation must be [lo, hi] with lo <= hi and mass + lo > 0"));
            }
        }
        if self.joint_noise < 0.0 || self.height_noise < 0.0 {
            errors.push(format!("{prefix}reset noise must be non-negative"));
        }
    }

    fn joint_limits(&self, j: usize) -> [f64; 2] {
        if j.is_multiple_of(2) {
            self.hip_limits
        } else {
            self.knee_limits
        }
    }

    /// Clamps joint targets to the joint limits.
    pub fn clip_targets(&self, targets: &[f64; NUM_JOINTS]) -> [f64; NUM_JOINTS] {
        let mut out = *targets;
        for (j, t) in out.iter_mut().enumerate() {
            let [lo, hi] = self.joint_limits(j);
            *t = t.clamp(lo, hi);
        }
        out
    }

    /// Foot position relative to its hip in the body frame.
    pub fn foot_offset(&self, hip: f64, knee: f64) -> [f64; 2] {
        let [l1, l2] = self.link_lengths;
        [
            l1 * hip.sin() + l2 * (hip + knee).sin(),
            -l1 * hip.cos() - l2 * (hip + knee).cos(),
        ]
    }

    /// Jacobian of [`Self::foot_offset`] with respect to `(hip, knee)`, row-major.
    pub fn foot_jacobian(&self, hip: f64, knee: f64) -> [[f64; 2]; 2] {
        let [l1, l2] = self.link_lengths;
        let (c1, c12) = (hip.cos(), (hip + knee).cos());
        let (s1, s12) = (hip.sin(), (hip + knee).sin());
        [[l1 * c1 + l2 * c12, l2 * c12], [l1 * s1 + l2 * s12, l2 * s12]]
    }

    fn hip_x(&self, leg: usize) -> f64 {
        if leg == 0 {
            self.hip_offset
        } else {
            -self.hip_offset
        }
    }

    /// Base height at which the nominal pose rests on undeformed ground.
    pub fn leg_height(&self) -> f64 {
        let q = self.nominal_joint_pos;
        let front = self.foot_offset(q[0], q[1])[1];
        let hind = self.foot_offset(q[2], q[3])[1];
        -front.min(hind)
    }

    /// Base height of the nominal pose at contact-spring equilibrium.
    pub fn standing_height(&self) -> f64 {
        self.standing_height_for_mass(self.mass)
    }

    pub fn standing_height_for_mass(&self, mass: f64) -> f64 {
        self.leg_height() - mass * self.gravity / (2.0 * self.contact_stiffness)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepResult {
    pub next_state: SimState,
    /// Some body-polygon vertex is at or below the ground.
    pub base_contact: bool,
    /// `[front, hind]` foot contact at the end of the control step.
    pub foot_contacts: [bool; 2],
    /// Torque proxy averaged over the control step.
    pub joint_torques: [f64; NUM_JOINTS],
    pub landing_event: bool,
    /// Rotation in the back-flip (negative pitch) direction accumulated during
    /// the flight that ended with this step's landing, zero otherwise.
    pub flight_traversed_angle: f64,
    /// The episode reached the time limit without terminating.
    pub time_out: bool,
}

/// Initial state: nominal pose resting at contact equilibrium, plus reset noise.
pub fn reset<R: Rng + ?Sized>(params: &SimParams, rng: &mut R) -> SimState {
    let mass = match params.mass_perturbation {
        Some([lo, hi]) if hi > lo => params.mass + rng.random_range(lo..=hi),
        Some([lo, _]) => params.mass + lo,
        None => params.mass,
    };
    let mut joint_pos = params.nominal_joint_pos;
    if params.joint_noise > 0.0 {
        for q in &mut joint_pos {
            *q += rng.random_range(-params.joint_noise..=params.joint_noise);
        }
    }
    let joint_pos = params.clip_targets(&joint_pos);
    let mut base_z = params.standing_height_for_mass(mass);
    if params.height_noise > 0.0 {
        base_z += rng.random_range(-params.height_noise..=params.height_noise);
    }
    SimState {
        base_x: 0.0,
        base_z,
        pitch: 0.0,
        base_vx: 0.0,
        base_vz: 0.0,
        pitch_rate: 0.0,
        joint_pos,
        joint_vel: [0.0; NUM_JOINTS],
        time: 0.0,
        terminal: false,
        mass,
        flight_angle: 0.0,
        airborne: false,
    }
}

/// World-frame body rectangle corners.
pub fn body_vertices(state: &SimState, params: &SimParams) -> [[f64; 2]; 4] {
    let (l, h) = (params.half_length, params.half_height);
    [[l, h], [l, -h], [-l, -h], [-l, h]].map(|[x, z]| {
        let (wx, wz) = rotate(x, z, state.pitch);
        [state.base_x + wx, state.base_z + wz]
    })
}

/// True iff any body-polygon vertex is at or below the ground.
pub fn check_termination(state: &SimState, params: &SimParams) -> bool {
    body_vertices(state, params).iter().any(|v| v[1] <= 0.0)
}

/// World-frame foot positions `[front, hind]`.
pub fn foot_positions(state: &SimState, params: &SimParams) -> [[f64; 2]; 2] {
    let mut out = [[0.0; 2]; 2];
    for (leg, p) in out.iter_mut().enumerate() {
        let q = &state.joint_pos[2 * leg..2 * leg + 2];
        let off = params.foot_offset(q[0], q[1]);
        let (rx, rz) = rotate(params.hip_x(leg) + off[0], off[1], state.pitch);
        *p = [state.base_x + rx, state.base_z + rz];
    }
    out
}

struct ContactForces {
    force: [f64; 2],
    torque: f64,
    /// Ground reaction per foot in the body frame.
    foot_force_body: [[f64; 2]; 2],
    feet: [bool; 2],
}

fn contact_forces(state: &SimState, params: &SimParams) -> ContactForces {
    let mut out = ContactForces {
        force: [0.0; 2],
        torque: 0.0,
        foot_force_body: [[0.0; 2]; 2],
        feet: [false; 2],
    };
    for leg in 0..2 {
        let (qh, qk) = (state.joint_pos[2 * leg], state.joint_pos[2 * leg + 1]);
        let (dh, dk) = (state.joint_vel[2 * leg], state.joint_vel[2 * leg + 1]);
        let off = params.foot_offset(qh, qk);
        let (rx, rz) = rotate(params.hip_x(leg) + off[0], off[1], state.pitch);
        let foot_z = state.base_z + rz;
        if foot_z > 0.0 {
            continue;
        }
        let jac = params.foot_jacobian(qh, qk);
        let (jvx, jvz) = rotate(
            jac[0][0] * dh + jac[0][1] * dk,
            jac[1][0] * dh + jac[1][1] * dk,
            state.pitch,
        );
        let vx = state.base_vx - state.pitch_rate * rz + jvx;
        let vz = state.base_vz + state.pitch_rate * rx + jvz;
        let fz = (-params.contact_stiffness * foot_z - params.contact_damping * vz)
            .clamp(0.0, params.max_contact_force);
        let cap = params.friction * fz;
        let fx = (-params.tangential_damping * vx).clamp(-cap, cap);
        out.force[0] += fx;
        out.force[1] += fz;
        out.torque += rx * fz - rz * fx;
        let (bx, bz) = rotate(fx, fz, -state.pitch);
        out.foot_force_body[leg] = [bx, bz];
        out.feet[leg] = fz > 0.0;
    }
    out
}

/// Advances one control period with the given joint position targets.
pub fn step(state: &SimState, targets: &[f64; NUM_JOINTS], params: &SimParams) -> Result<StepResult> {
    ensure_finite(targets, "joint targets")?;
    if state.terminal {
        return Err(Error::InvalidArgument("cannot step a terminated episode".into()));
    }
    let targets = params.clip_targets(targets);
    let dt = params.dt_physics;
    let mut s = *state;
    let mut torque_sum = [0.0; NUM_JOINTS];
    let mut landing = false;
    let mut traversed = 0.0;
    let mut feet = [false; 2];

    for _ in 0..params.control_decimation {
        for j in 0..NUM_JOINTS {
            let [lo, hi] = params.joint_limits(j);
            let rate = (params.tracking_rate * (targets[j] - s.joint_pos[j]))
                .clamp(-params.max_joint_vel, params.max_joint_vel);
            let q = (s.joint_pos[j] + rate * dt).clamp(lo, hi);
            s.joint_vel[j] = (q - s.joint_pos[j]) / dt;
            s.joint_pos[j] = q;
        }

        let c = contact_forces(&s, params);
        for leg in 0..2 {
            let (qh, qk) = (s.joint_pos[2 * leg], s.joint_pos[2 * leg + 1]);
            let jac = params.foot_jacobian(qh, qk);
            let f = c.foot_force_body[leg];
            for k in 0..2 {
                let j = 2 * leg + k;
                let pd = params.kp * (targets[j] - s.joint_pos[j]) - params.kd * s.joint_vel[j];
                torque_sum[j] += pd - (jac[0][k] * f[0] + jac[1][k] * f[1]);
            }
        }

        s.base_vx += c.force[0] / s.mass * dt;
        s.base_vz += (c.force[1] / s.mass - params.gravity) * dt;
        s.pitch_rate += c.torque / params.inertia * dt;
        s.base_x += s.base_vx * dt;
        s.base_z += s.base_vz * dt;
        s.pitch += s.pitch_rate * dt;
        s.time += dt;

        let after = contact_forces(&s, params);
        feet = after.feet;
        let body = check_termination(&s, params);
        let airborne = !(feet[0] || feet[1] || body);
        if airborne {
            s.flight_angle += s.pitch_rate * dt;
        } else if s.airborne && (feet[0] || feet[1]) {
            landing = true;
            traversed += -s.flight_angle;
            s.flight_angle = 0.0;
        } else {
            s.flight_angle = 0.0;
        }
        s.airborne = airborne;
        if body {
            s.terminal = true;
            break;
        }
    }

    if !s.is_finite() {
        return Err(Error::NonFinite("simulator state".into()));
    }
    let n = params.control_decimation as f64;
    let base_contact = check_termination(&s, params);
    let time_out = !s.terminal && s.time >= params.max_episode_time - 1e-9;
    Ok(StepResult {
        next_state: s,
        base_contact,
        foot_contacts: feet,
        joint_torques: torque_sum.map(|t| t / n),
        landing_event: landing,
        flight_traversed_angle: traversed,
        time_out,
    })
}
