//! Phased actor-critic (PAAC) policy gradients and the dHDP/DDPG family of
//! deterministic actor-critic agents it plugs into.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`]: dense matrices, the two-hidden-layer MLP and Adam.
//! - [`networks`]: actor/critic wrappers and target-network bookkeeping.
//! - [`replay`]: FIFO experience memory with seeded uniform sampling.
//! - [`paac`]: Bellman targets, TD errors, the critic update, the phase
//!   schedule and the phased actor gradient.
//! - [`agents`]: the seven algorithm variants and the training loop.
//! - [`envs`]: LQR, cart-pole and pendulum tasks plus the Riccati and
//!   tabular value-iteration oracles.
//! - [`bench`]: multi-trial experiments, evaluation metrics and the
//!   gradient-variance probe.
//! - [`checkpoint`] and [`csv`]: on-disk formats.
//! - [`checks`]: the invariant suites behind `paac check`.

pub mod agents;
pub mod bench;
pub mod checkpoint;
pub mod checks;
pub mod csv;
pub mod envs;
mod error;
pub mod networks;
pub mod paac;
pub mod replay;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
