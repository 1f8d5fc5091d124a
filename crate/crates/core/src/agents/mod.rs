//! Replay-based learners: DQN and its conservative variant DCPI.
//!
//! Both share one [`Agent`] type. DCPI adds a policy network trained by KL
//! distillation towards `(1 - α) π⁻ + α 𝒢(q)`, with α from [`crate::rates`].

mod agent;
mod buffer;
mod targets;

pub use agent::{
    Agent, AgentConfig, AgentKind, BehaviorMode, EpisodeRecord, EpsilonSchedule, PolicyMode, StepReport, UpdateReport,
    AGENT_CHECKPOINT_FORMAT,
};
pub use buffer::{ReplayBuffer, Transition};
pub use targets::{act, compute_policy_targets, compute_q_targets, greedy_rows, Behavior, TargetPolicy};
