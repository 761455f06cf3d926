//! PPO with GAE, a Gaussian policy, and vectorized rollout collection.

mod ppo;
mod rollout;

pub use ppo::{
    adaptive_lr, gae_advantages, gae_single, gaussian_kl, normalize_advantages, value_net, ActorCritic,
    GaussianPolicy, PpoBatch, PpoConfig, PpoStats,
};
pub use rollout::{
    collect_rollout, evaluate_episode, policy_frame, EnvConfig, EnvPool, EnvSlot, EvalEpisode, RolloutBuffer,
    StepOutcome, POLICY_FRAME_DIM,
};
