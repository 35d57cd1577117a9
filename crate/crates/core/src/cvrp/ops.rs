use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cvrp::instance::CvrpInstance;
use crate::cvrp::plan::{route_cost, RoutePlan};
use crate::error::{Error, Result};

/// An ordered list of distinct customer indices; the order is the
/// removal/reinsertion order of a destroy/repair move.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSet(Vec<usize>);

impl NodeSet {
    pub fn new(nodes: Vec<usize>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for &c in &nodes {
            if !seen.insert(c) {
                return Err(Error::Precondition(format!(
                    "node {c} repeated in node set"
                )));
            }
        }
        Ok(NodeSet(nodes))
    }

    pub fn nodes(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

fn tour_demand(instance: &CvrpInstance, tour: &[usize]) -> u64 {
    tour.iter().map(|&c| u64::from(instance.demand(c))).sum()
}

/// Cost increase of inserting `node` into `tour` at `pos` (0..=len).
fn insertion_delta(instance: &CvrpInstance, tour: &[usize], pos: usize, node: usize) -> f64 {
    let before = if pos == 0 {
        instance.d_depot(node)
    } else {
        instance.d(tour[pos - 1], node)
    };
    let after = if pos == tour.len() {
        instance.d_depot(node)
    } else {
        instance.d(node, tour[pos])
    };
    let removed = match (pos == 0, pos == tour.len()) {
        (true, true) => 0.0,
        (true, false) => instance.d_depot(tour[pos]),
        (false, true) => instance.d_depot(tour[pos - 1]),
        (false, false) => instance.d(tour[pos - 1], tour[pos]),
    };
    before + after - removed
}

/// Inserts `node` at the capacity-feasible position with the smallest cost
/// increase, considering every position in every tour plus a new singleton
/// tour. Ties break on the lowest (tour, position) pair; the new tour ranks
/// after all existing ones.
pub fn min_cost_insert(
    instance: &CvrpInstance,
    plan: &RoutePlan,
    node: usize,
) -> Result<RoutePlan> {
    if node >= instance.n() {
        return Err(Error::Structural(format!(
            "customer {node} out of range for instance with {} customers",
            instance.n()
        )));
    }
    if plan.position_of(node).is_some() {
        return Err(Error::Precondition(format!(
            "customer {node} already present in plan"
        )));
    }
    let need = u64::from(instance.demand(node));
    let mut best: Option<(f64, usize, usize)> = None;
    for (t, tour) in plan.routes.iter().enumerate() {
        if tour_demand(instance, tour) + need > u64::from(instance.capacity) {
            continue;
        }
        for pos in 0..=tour.len() {
            let delta = insertion_delta(instance, tour, pos, node);
            if best.map_or(true, |(b, _, _)| delta < b) {
                best = Some((delta, t, pos));
            }
        }
    }
    // Opening a fresh tour is always a candidate position.
    let new_tour_delta = 2.0 * instance.d_depot(node);
    if best.map_or(true, |(b, _, _)| new_tour_delta < b) {
        best = Some((new_tour_delta, plan.routes.len(), 0));
    }
    let (delta, t, pos) = best.unwrap();
    let mut routes = plan.routes.clone();
    if t == routes.len() {
        routes.push(vec![node]);
    } else {
        routes[t].insert(pos, node);
    }
    Ok(RoutePlan {
        instance_id: plan.instance_id.clone(),
        routes,
        cost: plan.cost + delta,
    })
}

/// Removes `nodes` from the plan, preserving the visiting order of the
/// remaining customers and dropping tours that become empty.
pub fn remove_nodes(
    instance: &CvrpInstance,
    plan: &RoutePlan,
    nodes: &NodeSet,
) -> Result<RoutePlan> {
    for &c in nodes.nodes() {
        if plan.position_of(c).is_none() {
            return Err(Error::Precondition(format!(
                "customer {c} not present in plan"
            )));
        }
    }
    let drop: std::collections::HashSet<usize> = nodes.nodes().iter().copied().collect();
    let routes: Vec<Vec<usize>> = plan
        .routes
        .iter()
        .map(|tour| tour.iter().copied().filter(|c| !drop.contains(c)).collect())
        .filter(|tour: &Vec<usize>| !tour.is_empty())
        .collect();
    let cost = route_cost(instance, &routes)?;
    Ok(RoutePlan {
        instance_id: plan.instance_id.clone(),
        routes,
        cost,
    })
}

/// Visits the customers in a seeded uniformly random order, inserting each by
/// the minimum cost principle.
pub fn naive_initial_solution(instance: &CvrpInstance, seed: u64) -> RoutePlan {
    let mut order: Vec<usize> = (0..instance.n()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let mut plan = RoutePlan::empty(instance);
    for node in order {
        plan = min_cost_insert(instance, &plan, node).expect("fresh node insertion cannot fail");
    }
    plan
}

/// Exhaustive scan over all feasible insertion positions; test oracle for
/// [`min_cost_insert`].
pub fn scan_all_insertions(
    instance: &CvrpInstance,
    plan: &RoutePlan,
    node: usize,
) -> Vec<(f64, usize, usize)> {
    let need = u64::from(instance.demand(node));
    let mut out = Vec::new();
    for (t, tour) in plan.routes.iter().enumerate() {
        if tour_demand(instance, tour) + need > u64::from(instance.capacity) {
            continue;
        }
        for pos in 0..=tour.len() {
            out.push((insertion_delta(instance, tour, pos, node), t, pos));
        }
    }
    out.push((2.0 * instance.d_depot(node), plan.routes.len(), 0));
    out
}
