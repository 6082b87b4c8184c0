//! Sequential multi-task training for model-based reinforcement learning.
//!
//! A shared neural dynamics model is learned across a sequence of tasks that
//! differ only in their reward functions. For each new task a fresh policy is
//! warmed up entirely inside the learned model (consuming zero real samples),
//! then refined by alternating real data collection, model refitting, and
//! virtual policy optimization. Unseen tasks are adapted to zero- or few-shot
//! from the transferred model and dataset.
//!
//! Crate layout:
//! - [`ndmath`]: dense arrays, feedforward nets with reverse/forward-mode
//!   gradients, Adam, and conjugate gradient.
//! - [`envs`]: analytic point-mass and pendulum environments forming
//!   reward-parameterized task families.
//! - [`dynmodel`]: the learned dynamics model, transition dataset, and the
//!   multi-step prediction loss.
//! - [`virtualenv`]: rollouts against real or learned dynamics and return
//!   estimation.
//! - [`trpo`]: Gaussian policies, GAE, and trust-region policy updates.
//! - [`trainer`]: the sequential multi-task training loop.
//! - [`adapt`]: test-time adaptation and the evaluation protocol.
//! - [`baselines`]: first-order MAML and task-conditioned oracle baselines.
//! - [`active`]: difficulty rating and quantile-based task skipping.
//! - [`cli`]: experiment configs, run modes, metrics, and checkpoints.

// Indexed loops over rows/columns are the house style for the numeric
// kernels; iterator chains obscure the matrix math they implement.
#![allow(clippy::needless_range_loop)]

pub mod active;
pub mod adapt;
pub mod baselines;
pub mod cli;
pub mod dynmodel;
pub mod envs;
pub mod error;
pub mod fsutil;
pub mod ndmath;
pub mod seeding;
pub mod trainer;
pub mod trpo;
pub mod virtualenv;

pub use error::{Error, Result};
