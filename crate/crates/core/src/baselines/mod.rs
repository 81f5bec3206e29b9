//! Comparison methods sharing the simulator, network core, exploration
//! schedule and evaluation protocol. The method tag in the config is the
//! only difference between runs; the shared-config hash in the metrics
//! makes that checkable.

mod flat;
mod hdqn;
mod relabel;

pub use flat::{episode_flat, shaped_reward, CurriculumState};
pub use hdqn::{episode_hdqn, eval_episode_hdqn, MetaController, MetaNet};
pub use relabel::{her_relabel, neighbor_relabel};
