//! Attention-based constructive policy for the CVRP.
//!
//! The encoder lifts (x, y, demand) node features and runs a stack of
//! multi-head attention layers with skip connections, masking customers that
//! are already part of the solution. The decoder builds a context from the
//! graph embedding, the last visited node and the remaining capacity, then
//! scores the feasible nodes; embeddings are recomputed every time the
//! vehicle returns to the depot.
//!
//! Training is REINFORCE with a greedy rollout baseline, with two
//! gradient strategies that produce the same update: one backward pass over
//! the whole retained rollout graph, or a per-step backward with gradient
//! accumulation that retains at most one encoder subgraph at a time.

mod model;
mod rollout;
mod train;

pub use model::{ConstructorConfig, ConstructorModel, Encoded};
pub use rollout::{
    choose_node, construct, construct_traced, replay_log_prob, sample_best_of_k, ConstructionEnv,
    DecodeMode, Trace,
};
pub use train::{
    greedy_rollout_baseline, maybe_update_baseline, reinforce_step, reinforce_step_precomputed,
    BaselineParams, GradStrategy, StepReport,
};
