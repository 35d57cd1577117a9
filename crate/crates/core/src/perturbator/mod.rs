//! Learned destroy/repair local search.
//!
//! A stack of edge-aware graph attention layers encodes the instance
//! together with its current solution (node features carry demand and
//! accumulated tour quantities, edge features carry distance and an
//! in-solution flag). A GRU pointer decoder selects the customers to remove;
//! repair reinserts them in order by the minimum cost principle, and
//! simulated annealing decides whether the perturbed plan replaces the
//! current one. Training is actor-critic: a two-layer value network learns
//! temporal-difference estimates and the removal policy ascends a clipped
//! PPO surrogate.

mod model;
mod sa;
mod state;
mod train;

pub use model::{CriticModel, PerturbConfig, PerturbModel};
pub use sa::{sa_accept, sa_alpha, SaSchedule};
pub use state::{compute_edge_indicators, compute_node_features, PerturbState};
pub use train::{
    critic_update, initial_random_perturbation, perturb_once, ppo_actor_update, td_error,
    train_perturbator, PerturbTrainConfig, PerturbTrainReport, TransitionRecord,
};
