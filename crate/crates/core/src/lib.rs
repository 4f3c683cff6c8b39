//! Goal-conditioned actor-critic reinforcement learning with hindsight
//! experience replay, where the actor and critic networks can be trained
//! either with Adam or with a Kronecker-factored approximate natural
//! gradient (K-FAC).
//!
//! The crate is organised bottom-up:
//!
//! - [`linalg`]: a small dense [`Matrix`] type with the products, symmetric
//!   inversion and Kronecker helpers the rest of the crate needs.
//! - [`nn`]: dense MLPs with manual backpropagation that also expose the
//!   per-layer statistics K-FAC consumes.
//! - [`kfac`]: the K-FAC optimizer and the Adam baseline.
//! - [`envs`]: sparse-reward goal-reaching environments.
//! - [`replay`]: the episodic hindsight replay buffer.
//! - [`agents`]: DDPG and TD3 agents.
//! - [`harness`]: training loop, evaluation, checkpoints, plots and sweeps.

pub mod agents;
pub mod envs;
pub mod error;
pub mod harness;
pub mod kfac;
pub mod linalg;
pub mod nn;
pub mod replay;

pub use error::{Error, Result};
pub use linalg::Matrix;
