//! Double-DQN subgoal learning over spatial Q-maps and the plan-execute
//! training loop.

pub mod agent;
pub mod qnet;
pub mod replay;
pub mod schedule;
pub mod training;

pub use agent::{
    double_dqn_targets, encode_onehots, greedy_action, role_rng, Trainer, ROLE_EPISODE,
    ROLE_EVAL, ROLE_INIT, ROLE_META, ROLE_POLICY, ROLE_TRAIN,
};
pub use qnet::{QInput, QNet};
pub use replay::{Experience, ReplayBuffer};
pub use schedule::{EpsilonSchedule, GoalDistribution};
pub use training::{
    execute_subgoal, mean_progress, mean_success, GoalEval, MethodState, RunStatus, TrainRun,
};
