//! Combined deep constructor and perturbator for the capacitated vehicle
//! routing problem (CVRP).
//!
//! The crate is organized around six subsystems:
//!
//! * [`cvrp`] — instances, route plans, insertion/removal primitives and an
//!   exact brute-force oracle for small instances.
//! * [`autodiff`] — a reverse-mode tape with gradient accumulation across
//!   backward passes, a record-off mode and retained-graph accounting.
//! * [`nn`] — differentiable building blocks: linear maps, multi-head
//!   attention, edge-aware graph attention, a GRU cell.
//! * [`constructor`] — the attention-based constructive policy, trained by
//!   REINFORCE with a greedy rollout baseline under two backpropagation
//!   strategies (whole-rollout graph vs. per-step accumulation).
//! * [`perturbator`] — the learned destroy/repair local search with simulated
//!   annealing acceptance and actor-critic PPO training.
//! * [`pipeline`] — dataset generation, combined training, evaluation,
//!   checkpointing and memory/runtime benchmarking.

pub mod autodiff;
pub mod constructor;
pub mod cvrp;
pub mod error;
pub mod nn;
pub mod perturbator;
pub mod pipeline;

pub use error::{Error, Result};
