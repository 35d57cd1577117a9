//! CVRP instances, route plans and the solution-manipulation primitives the
//! constructive and perturbative policies are built on.

mod instance;
mod io;
mod ops;
mod oracle;
mod plan;

pub use instance::{dist, sample_instance, CvrpInstance};
pub use io::{read_instances, read_solutions, write_instances, write_solutions, SolutionRecord};
pub use ops::{min_cost_insert, naive_initial_solution, remove_nodes, scan_all_insertions, NodeSet};
pub use oracle::{brute_force_optimal, BRUTE_FORCE_LIMIT};
pub use plan::{route_cost, validate, RoutePlan, Violation};
