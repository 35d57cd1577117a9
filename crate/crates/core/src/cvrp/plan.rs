use serde::{Deserialize, Serialize};

use crate::cvrp::instance::CvrpInstance;
use crate::error::{Error, Result};

/// Cached-cost tolerance used by [`validate`].
const COST_TOL: f64 = 1e-9;

/// An ordered set of depot-to-depot tours covering every customer exactly
/// once, with the total Euclidean length cached.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutePlan {
    pub instance_id: String,
    /// Tours as nonempty ordered lists of 0-based customer indices.
    pub routes: Vec<Vec<usize>>,
    pub cost: f64,
}

impl RoutePlan {
    /// Builds a plan from tours, computing and caching the cost.
    pub fn new(instance: &CvrpInstance, routes: Vec<Vec<usize>>) -> Result<Self> {
        let cost = route_cost(instance, &routes)?;
        Ok(RoutePlan {
            instance_id: instance.id.clone(),
            routes,
            cost,
        })
    }

    /// The empty plan (no customers visited).
    pub fn empty(instance: &CvrpInstance) -> Self {
        RoutePlan {
            instance_id: instance.id.clone(),
            routes: Vec::new(),
            cost: 0.0,
        }
    }

    /// Total number of visited customers.
    pub fn n_visited(&self) -> usize {
        self.routes.iter().map(|t| t.len()).sum()
    }

    /// Tour index and position of a customer, if present.
    pub fn position_of(&self, customer: usize) -> Option<(usize, usize)> {
        for (t, tour) in self.routes.iter().enumerate() {
            if let Some(p) = tour.iter().position(|&c| c == customer) {
                return Some((t, p));
            }
        }
        None
    }
}

/// Total Euclidean length of a set of tours: depot -> c1 -> ... -> ck -> depot
/// summed over tours.
pub fn route_cost(instance: &CvrpInstance, routes: &[Vec<usize>]) -> Result<f64> {
    let n = instance.n();
    let mut total = 0.0;
    for tour in routes {
        if tour.is_empty() {
            continue;
        }
        if let Some(&bad) = tour.iter().find(|&&c| c >= n) {
            return Err(Error::Structural(format!(
                "customer index {bad} out of range for instance with {n} customers"
            )));
        }
        total += instance.d_depot(tour[0]);
        for w in tour.windows(2) {
            total += instance.d(w[0], w[1]);
        }
        total += instance.d_depot(*tour.last().unwrap());
    }
    Ok(total)
}

/// One broken [`RoutePlan`] invariant.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    InstanceMismatch { plan: String, instance: String },
    UnknownCustomer { customer: usize },
    DuplicateCustomer { customer: usize },
    MissingCustomer { customer: usize },
    EmptyTour { tour: usize },
    CapacityExceeded { tour: usize, demand: u32, capacity: u32 },
    CostMismatch { cached: f64, actual: f64 },
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::InstanceMismatch { plan, instance } => {
                write!(f, "plan references instance {plan}, validated against {instance}")
            }
            Violation::UnknownCustomer { customer } => write!(f, "unknown customer {customer}"),
            Violation::DuplicateCustomer { customer } => {
                write!(f, "customer {customer} appears more than once")
            }
            Violation::MissingCustomer { customer } => write!(f, "customer {customer} unvisited"),
            Violation::EmptyTour { tour } => write!(f, "tour {tour} is empty"),
            Violation::CapacityExceeded { tour, demand, capacity } => {
                write!(f, "tour {tour} carries demand {demand} > capacity {capacity}")
            }
            Violation::CostMismatch { cached, actual } => {
                write!(f, "cached cost {cached} != recomputed cost {actual}")
            }
        }
    }
}

/// Reports every broken plan invariant; an empty list means the plan is
/// feasible and its cached cost is accurate.
pub fn validate(instance: &CvrpInstance, plan: &RoutePlan) -> Vec<Violation> {
    let mut out = Vec::new();
    if plan.instance_id != instance.id {
        out.push(Violation::InstanceMismatch {
            plan: plan.instance_id.clone(),
            instance: instance.id.clone(),
        });
    }
    let n = instance.n();
    let mut seen = vec![0usize; n];
    for (t, tour) in plan.routes.iter().enumerate() {
        if tour.is_empty() {
            out.push(Violation::EmptyTour { tour: t });
            continue;
        }
        let mut load: u64 = 0;
        for &c in tour {
            if c >= n {
                out.push(Violation::UnknownCustomer { customer: c });
                continue;
            }
            seen[c] += 1;
            load += u64::from(instance.demand(c));
        }
        if load > u64::from(instance.capacity) {
            out.push(Violation::CapacityExceeded {
                tour: t,
                demand: load as u32,
                capacity: instance.capacity,
            });
        }
    }
    for (c, &count) in seen.iter().enumerate() {
        if count == 0 {
            out.push(Violation::MissingCustomer { customer: c });
        } else if count > 1 {
            out.push(Violation::DuplicateCustomer { customer: c });
        }
    }
    if let Ok(actual) = route_cost(instance, &plan.routes) {
        if (actual - plan.cost).abs() > COST_TOL {
            out.push(Violation::CostMismatch {
                cached: plan.cost,
                actual,
            });
        }
    }
    out
}
