//! State discretization, tabular Q-learning over match-plan actions, reward
//! computation, the training loop, and greedy policy execution.

mod binner;
mod episode;
mod qtable;
mod reward;
mod train;

pub use binner::{fit_binner, StateBinner};
pub use episode::{run_episode, EpisodeCaps, EpisodeResult, Policy, StepRecord};
pub use qtable::{q_update, Action, QTable};
pub use reward::{
    agent_reward, baseline_relative_reward, baseline_reward_trace, BaselineAlignment,
    RewardConfig,
};
pub use train::{train_policy, BaselineTraceCache, TrainConfig};
