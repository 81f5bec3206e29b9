//! Multi-goal block construction with a planned abstract goal space.
//!
//! The crate bundles everything needed to train and evaluate pick/place
//! policies that build block structures on a platform:
//!
//! * [`sim`] — a deterministic heightmap world with pixel-indexed
//!   PICK/PLACE actions and simplified stability rules.
//! * [`graph`] — the enumerable abstract state space (layer grammar),
//!   the ground-truth abstraction function and a trainable side-view
//!   classifier standing in for it.
//! * [`plan`] — shortest-path subgoal queries over the goal graph.
//! * [`nn`] — a small dense-tensor core with reverse-mode gradients,
//!   enough for the convolutional Q-network and the classifier.
//! * [`rl`] — Double-DQN learning over spatial Q-maps plus the
//!   plan-execute training loop and evaluation.
//! * [`baselines`] — the comparison methods (UVFA, HER, h-DQN, shaped
//!   reward, neighbor replay, sequential curriculum).

pub mod baselines;
pub mod config;
pub mod error;
pub mod graph;
pub mod metrics;
pub mod nn;
pub mod plan;
pub mod rl;
pub mod sim;

pub use error::{Error, Result};
