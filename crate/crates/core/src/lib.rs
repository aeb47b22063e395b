//! Neuroevolution-based inverse reinforcement learning on gridworld MDPs.
//!
//! The crate is organised bottom-up:
//!
//! - [`gridworld`] builds standard and linearly-solvable grid MDPs.
//! - [`solvers`] computes optimal values and greedy policies for both kinds.
//! - [`demos`] samples expert demonstrations from an optimal policy.
//! - [`neat`] is a direct-encoding NEAT engine.
//! - [`neat_irl`] evolves networks mapping state features to state values.
//! - [`reward_trace`] runs a Bayesian reward sampler and aggregates its
//!   per-iteration reward trace either by mean or by an evolved network.
//! - [`metrics`] scores policies and compares samples with Welch's t-test.
//! - [`experiment`] is the seeded batch runner behind the CLI.

pub mod binary;
pub mod demos;
pub mod error;
pub mod experiment;
pub mod gridworld;
pub mod metrics;
pub mod neat;
pub mod neat_irl;
pub mod reward_trace;
pub mod rng;
pub mod solvers;

pub use error::{Error, Result};
pub use gridworld::{Action, GridSpec, GridWorld, MdpKind, RewardMode, StateId};
