//! Goal-conditioned bisimulation on discrete factored environments.
//!
//! This crate groups *tasks* — (state, goal) pairs — by behavioral
//! equivalence instead of grouping raw states. It provides:
//!
//! - [`gcmdp`]: goal-conditioned MDPs with exact dynamic-programming
//!   oracles (value iteration, policy evaluation, optimal goal policies).
//! - [`envs`]: the discrete "drawer-grid" environment family, analogy
//!   sampling and noisy-expert offline dataset generation.
//! - [`ot`]: exact discrete optimal transport (network simplex with dual
//!   certificates) plus a Sinkhorn approximation.
//! - [`metric`]: the paired-state bisimulation metric computed to its
//!   fixed point, value-difference bound checkers, and the concatenated
//!   single-task route used to cross-validate it.
//! - [`nn`]: small feedforward networks with exact reverse-mode gradients
//!   and Adam with decoupled weight decay.
//! - [`repr`]: the paired encoder phi and state encoder psi, their losses
//!   (with all ablation variants), latent analogy arithmetic and
//!   nearest-neighbor probes.
//! - [`offline_rl`]: expectile-regression Q-learning over the learned
//!   representations and the standard/analogy evaluation harness.
//! - [`config`] / [`cli`]: reproducible, config-driven experiment
//!   orchestration backing the `gcb` binary.
//!
//! Start with the `examples/` directory: each major capability has a
//! runnable example (`cargo run --example chain_metric`, ...).

pub mod cli;
pub mod config;
pub mod envs;
pub mod error;
pub mod gcmdp;
pub mod metric;
pub mod nn;
pub mod offline_rl;
pub mod ot;
pub mod repr;
pub mod rng;

pub use error::{Error, Result};
