use std::collections::VecDeque;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ppo::{ActorCritic, GaussianPolicy, PpoBatch};
use crate::discriminator::Discriminator;
use crate::error::{Error, Result};
use crate::observation::{frame_features, phi_extract, Observation, ObservationWindow, SimState, WindowBuffer, NUM_JOINTS};
use crate::reward::{
    handcrafted_backflip_reward, handcrafted_standup_reward, regularization_reward,
    termination_penalty, total_reward, HandcraftedWeights, RegularizationInput, RewardWeights, RunningStats,
};
use crate::sim::{self, SimParams, StepResult};

/// Per-frame width of the policy observation.
pub const POLICY_FRAME_DIM: usize = 6 + 3 * NUM_JOINTS;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    /// Joint target offset per unit action.
    pub action_scale: f64,
    /// Actions are clipped to `[-action_clip, action_clip]` before use.
    pub action_clip: f64,
    /// Consecutive frames stacked into the policy observation.
    pub history: usize,
    /// Uniform noise half-width on policy observations (off by default).
    pub obs_noise: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            action_scale: 0.5,
            action_clip: 4.0,
            history: 2,
            obs_noise: 0.0,
        }
    }
}

impl EnvConfig {
    pub fn obs_dim(&self) -> usize {
        POLICY_FRAME_DIM * self.history
    }

    pub fn validate(&self, prefix: &str, errors: &mut Vec<String>) {
        if !(self.action_scale > 0.0) || !(self.action_clip > 0.0) {
            errors.push(format!("{prefix}action_scale and action_clip must be > 0"));
        }
        if self.history == 0 {
            errors.push(format!("{prefix}history must be >= 1"));
        }
        if !(self.obs_noise >= 0.0) {
            errors.push(format!("{prefix}obs_noise must be >= 0"));
        }
    }

    pub fn targets(&self, action: &[f64], params: &SimParams) -> [f64; NUM_JOINTS] {
        std::array::from_fn(|j| {
            params.nominal_joint_pos[j] + self.action_scale * action[j].clamp(-self.action_clip, self.action_clip)
        })
    }
}

/// Policy features of one frame: base observation, joint offsets from the
/// nominal pose, joint velocities and the previous action.
pub fn policy_frame(state: &SimState, prev_action: &[f64; NUM_JOINTS], params: &SimParams) -> Result<Vec<f64>> {
    let o = phi_extract(state)?;
    let mut f = Vec::with_capacity(POLICY_FRAME_DIM);
    f.extend([
        o.vx_body,
        o.vz_body,
        0.25 * o.pitch_rate,
        o.grav_x_body,
        o.grav_z_body,
        4.0 * (o.height - params.standing_height()),
    ]);
    f.extend((0..NUM_JOINTS).map(|j| state.joint_pos[j] - params.nominal_joint_pos[j]));
    f.extend(state.joint_vel.iter().map(|v| 0.05 * v));
    f.extend(prev_action);
    Ok(f)
}

/// One simulated robot with its observation histories and generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSlot {
    pub state: SimState,
    pub rng: ChaCha8Rng,
    pub window: WindowBuffer,
    pub frames: VecDeque<Vec<f64>>,
    pub prev_action: [f64; NUM_JOINTS],
    pub episode_steps: usize,
}

/// Result of advancing one slot by one control step.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub result: StepResult,
    pub window: ObservationWindow,
    pub regularization: f64,
    pub terminal: bool,
    pub time_out: bool,
    /// Policy observation of the final state when the episode ended.
    pub final_obs: Option<Vec<f64>>,
    pub episode_steps: usize,
}

/// Vector of independently seeded environments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvPool {
    pub params: SimParams,
    pub config: EnvConfig,
    pub horizon: usize,
    pub full_state: bool,
    pub slots: Vec<EnvSlot>,
}

fn disc_frame(state: &SimState, full_state: bool) -> Result<Vec<f64>> {
    let o = phi_extract(state)?;
    let j = state.joint_features();
    Ok(frame_features(&o, full_state.then_some(&j)))
}

impl EnvSlot {
    fn new(seed: u64, index: usize, pool: &EnvPool) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(index as u64 + 1);
        let frame_dim = disc_frame(&sim::reset(&pool.params, &mut ChaCha8Rng::seed_from_u64(0)), pool.full_state)?.len();
        let mut slot = Self {
            state: sim::reset(&pool.params, &mut rng),
            rng,
            window: WindowBuffer::new(pool.horizon, frame_dim)?,
            frames: VecDeque::new(),
            prev_action: [0.0; NUM_JOINTS],
            episode_steps: 0,
        };
        slot.restart(pool, false)?;
        Ok(slot)
    }

    /// Starts a new episode; the first window is padded with the initial frame.
    fn restart(&mut self, pool: &EnvPool, resample: bool) -> Result<()> {
        if resample {
            self.state = sim::reset(&pool.params, &mut self.rng);
        }
        self.prev_action = [0.0; NUM_JOINTS];
        self.episode_steps = 0;
        self.window.reset(&disc_frame(&self.state, pool.full_state)?);
        let f = policy_frame(&self.state, &self.prev_action, &pool.params)?;
        self.frames = std::iter::repeat_n(f, pool.config.history).collect();
        Ok(())
    }

    fn observation(&self) -> Vec<f64> {
        self.frames.iter().flatten().copied().collect()
    }

    fn advance(&mut self, action: &[f64], pool: &EnvPool, weights: &RewardWeights) -> Result<StepOutcome> {
        let params = &pool.params;
        let clipped: Vec<f64> = action
            .iter()
            .map(|a| a.clamp(-pool.config.action_clip, pool.config.action_clip))
            .collect();
        let result = sim::step(&self.state, &pool.config.targets(&clipped, params), params)?;
        let next = result.next_state;
        let regularization = regularization_reward(
            &RegularizationInput {
                action: &clipped,
                prev_action: &self.prev_action,
                joint_vel: &next.joint_vel,
                prev_joint_vel: &self.state.joint_vel,
                joint_torque: &result.joint_torques,
                pitch_rate: next.pitch_rate,
                dt: params.control_dt(),
            },
            weights,
        );
        self.state = next;
        self.prev_action.copy_from_slice(&clipped);
        self.episode_steps += 1;
        let window = self.window.push(&disc_frame(&next, pool.full_state)?);
        self.frames.pop_front();
        self.frames.push_back(policy_frame(&next, &self.prev_action, params)?);

        let terminal = next.terminal;
        let time_out = result.time_out;
        let episode_steps = self.episode_steps;
        let final_obs = if terminal || time_out {
            let obs = self.observation();
            self.restart(pool, true)?;
            Some(obs)
        } else {
            None
        };
        Ok(StepOutcome {
            result,
            window,
            regularization,
            terminal,
            time_out,
            final_obs,
            episode_steps,
        })
    }
}

impl EnvPool {
    /// `num_envs` environments; env `i` draws from stream `i + 1` of the seed.
    pub fn new(
        params: SimParams,
        config: EnvConfig,
        horizon: usize,
        full_state: bool,
        num_envs: usize,
        seed: u64,
    ) -> Result<Self> {
        let mut pool = Self {
            params,
            config,
            horizon,
            full_state,
            slots: Vec::new(),
        };
        pool.slots = (0..num_envs)
            .map(|i| EnvSlot::new(seed, i, &pool))
            .collect::<Result<_>>()?;
        Ok(pool)
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn obs_dim(&self) -> usize {
        self.config.obs_dim()
    }

    /// Current policy observations, one row per env.
    pub fn observations(&self) -> Array2<f64> {
        let d = self.obs_dim();
        let mut out = Array2::zeros((self.len(), d));
        for (i, s) in self.slots.iter().enumerate() {
            for (k, v) in s.frames.iter().flatten().enumerate() {
                out[[i, k]] = *v;
            }
        }
        out
    }

    /// Advances every env with its action. Envs are split across `workers`
    /// threads; each env only touches its own state, so results do not depend
    /// on the split.
    pub fn step_all(&mut self, actions: &[Vec<f64>], weights: &RewardWeights, workers: usize) -> Result<Vec<StepOutcome>> {
        if actions.len() != self.len() {
            return Err(Error::Shape(format!("{} actions for {} envs", actions.len(), self.len())));
        }
        let mut slots = std::mem::take(&mut self.slots);
        let pool = &*self;
        let workers = workers.clamp(1, slots.len().max(1));
        let results: Vec<Result<StepOutcome>> = if workers == 1 {
            slots
                .iter_mut()
                .zip(actions)
                .map(|(s, a)| s.advance(a, pool, weights))
                .collect()
        } else {
            let chunk = slots.len().div_ceil(workers);
            std::thread::scope(|scope| {
                let handles: Vec<_> = slots
                    .chunks_mut(chunk)
                    .zip(actions.chunks(chunk))
                    .map(|(ss, aa)| {
                        scope.spawn(move || {
                            ss.iter_mut()
                                .zip(aa)
                                .map(|(s, a)| s.advance(a, pool, weights))
                                .collect::<Vec<_>>()
                        })
                    })
                    .collect();
                handles
                    .into_iter()
                    .flat_map(|h| h.join().expect("rollout worker panicked"))
                    .collect()
            })
        };
        self.slots = slots;
        results.into_iter().collect()
    }
}

/// Transitions of one iteration, stored step-major (`index = t * envs + e`).
#[derive(Debug, Clone, Default)]
pub struct RolloutBuffer {
    pub steps: usize,
    pub envs: usize,
    pub obs: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub means: Vec<Vec<f64>>,
    pub log_std: Vec<f64>,
    pub log_probs: Vec<f64>,
    pub values: Vec<f64>,
    pub rewards: Vec<f64>,
    pub dones: Vec<bool>,
    pub terminals: Vec<bool>,
    /// Discriminator windows ending at the state reached by each transition.
    pub windows: Vec<ObservationWindow>,
    pub scores: Vec<f64>,
    pub imitation: Vec<f64>,
    pub regularization: Vec<f64>,
    pub last_values: Vec<f64>,
    /// Lengths of episodes that ended during this rollout.
    pub finished_lengths: Vec<usize>,
}

impl RolloutBuffer {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    fn grid<T: Copy>(&self, v: &[T]) -> Vec<Vec<T>> {
        v.chunks(self.envs).map(|c| c.to_vec()).collect()
    }

    /// GAE, then a flat batch with per-batch normalized advantages.
    pub fn to_batch(&self, gamma: f64, lambda: f64) -> Result<(PpoBatch, Vec<f64>)> {
        let (adv, ret) = super::ppo::gae_advantages(
            &self.grid(&self.rewards),
            &self.grid(&self.values),
            &self.grid(&self.dones),
            &self.last_values,
            gamma,
            lambda,
        )?;
        let mut advantages: Vec<f64> = adv.into_iter().flatten().collect();
        let raw = advantages.clone();
        super::ppo::normalize_advantages(&mut advantages);
        let n = self.len();
        let d = self.obs.first().map_or(0, |o| o.len());
        let ad = self.actions.first().map_or(0, |a| a.len());
        let to_matrix = |rows: &[Vec<f64>], w: usize| {
            Array2::from_shape_vec((n, w), rows.iter().flatten().copied().collect()).map_err(|e| Error::Shape(e.to_string()))
        };
        Ok((
            PpoBatch {
                obs: to_matrix(&self.obs, d)?,
                actions: to_matrix(&self.actions, ad)?,
                old_log_probs: self.log_probs.clone(),
                old_means: to_matrix(&self.means, ad)?,
                old_log_std: self.log_std.clone(),
                advantages,
                returns: ret.into_iter().flatten().collect(),
            },
            raw,
        ))
    }
}

/// Steps all envs `steps` times with sampled actions and assembles rewards.
///
/// Imitation rewards use `stats` as given; the caller updates the statistics
/// from `buffer.scores` afterwards.
#[allow(clippy::too_many_arguments)]
pub fn collect_rollout(
    pool: &mut EnvPool,
    ac: &ActorCritic,
    disc: &Discriminator,
    stats: &RunningStats,
    weights: &RewardWeights,
    steps: usize,
    workers: usize,
) -> Result<RolloutBuffer> {
    let envs = pool.len();
    let mut buf = RolloutBuffer {
        steps,
        envs,
        log_std: ac.policy.log_std.clone(),
        ..RolloutBuffer::default()
    };
    for _ in 0..steps {
        let obs = pool.observations();
        let means = ac.policy.means(obs.view())?;
        let values = ac.values(obs.view())?;
        let mut actions = Vec::with_capacity(envs);
        for (e, slot) in pool.slots.iter_mut().enumerate() {
            let m = means.row(e).to_vec();
            let a = ac.policy.sample(&m, &mut slot.rng);
            buf.log_probs.push(ac.policy.log_prob(&m, &a));
            buf.means.push(m);
            actions.push(a);
        }
        let outcomes = pool.step_all(&actions, weights, workers)?;
        let windows: Vec<ObservationWindow> = outcomes.iter().map(|o| o.window.clone()).collect();
        let scores = disc.raw_scores(&windows)?;

        let finals: Vec<(usize, Vec<f64>)> = outcomes
            .iter()
            .enumerate()
            .filter(|(_, o)| o.time_out)
            .filter_map(|(e, o)| o.final_obs.clone().map(|f| (e, f)))
            .collect();
        let mut bootstrap = vec![0.0; envs];
        if !finals.is_empty() {
            let d = pool.obs_dim();
            let m = Array2::from_shape_vec((finals.len(), d), finals.iter().flat_map(|(_, f)| f.clone()).collect())
                .map_err(|e| Error::Shape(e.to_string()))?;
            for ((e, _), v) in finals.iter().zip(ac.values(m.view())?) {
                bootstrap[*e] = v;
            }
        }

        for (e, o) in outcomes.into_iter().enumerate() {
            let r_i = disc.imitation_reward(scores[e], stats);
            let r_t = termination_penalty(o.terminal, weights.gamma);
            let mut r = total_reward(r_i, r_t, o.regularization, weights.w_imitation);
            if o.time_out {
                r += weights.gamma * bootstrap[e];
            }
            if o.terminal || o.time_out {
                buf.finished_lengths.push(o.episode_steps);
            }
            buf.obs.push(obs.row(e).to_vec());
            buf.actions.push(actions[e].clone());
            buf.values.push(values[e]);
            buf.rewards.push(r);
            buf.dones.push(o.terminal || o.time_out);
            buf.terminals.push(o.terminal);
            buf.imitation.push(r_i);
            buf.regularization.push(o.regularization);
            buf.windows.push(o.window);
        }
        buf.scores.extend(scores);
    }
    buf.last_values = ac.values(pool.observations().view())?;
    Ok(buf)
}

/// One deterministic (mean-action) evaluation episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalEpisode {
    /// Base observations from the initial state on, `len` frames. Frames after
    /// an early termination repeat the terminal observation.
    pub observations: Vec<Observation>,
    pub terminated_at: Option<usize>,
    pub standup_reward: f64,
    pub backflip_reward: f64,
}

/// Runs the mean action of `policy` for `len - 1` control steps from a seeded reset.
pub fn evaluate_episode(
    policy: &GaussianPolicy,
    params: &SimParams,
    config: &EnvConfig,
    len: usize,
    seed: u64,
    handcrafted: &HandcraftedWeights,
) -> Result<EvalEpisode> {
    let mut pool = EnvPool::new(params.clone(), config.clone(), 1, false, 1, seed)?;
    let mut observations = vec![phi_extract(&pool.slots[0].state)?];
    let mut terminated_at = None;
    let (mut standup, mut backflip) = (0.0, 0.0);
    let weights = RewardWeights::default();
    while observations.len() < len {
        if terminated_at.is_some() {
            let last = *observations.last().unwrap();
            observations.push(last);
            continue;
        }
        let obs = pool.observations();
        let mean = policy.means(obs.view())?.row(0).to_vec();
        let mut out = pool.step_all(&[mean], &weights, 1)?;
        let o = out.remove(0);
        let s = o.result.next_state;
        observations.push(phi_extract(&s)?);
        standup += handcrafted_standup_reward(&s, o.result.foot_contacts[0], handcrafted);
        backflip += handcrafted_backflip_reward(o.result.flight_traversed_angle, o.result.landing_event, handcrafted.w_flip);
        if o.terminal || o.time_out {
            terminated_at = Some(observations.len() - 1);
        }
    }
    Ok(EvalEpisode {
        observations,
        terminated_at,
        standup_reward: standup,
        backflip_reward: backflip,
    })
}
