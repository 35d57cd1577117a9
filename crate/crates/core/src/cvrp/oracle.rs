use crate::cvrp::instance::CvrpInstance;
use crate::cvrp::plan::RoutePlan;
use crate::error::{Error, Result};

/// Largest instance the exhaustive oracle accepts.
pub const BRUTE_FORCE_LIMIT: usize = 9;

/// Globally optimal plan by exhaustive enumeration: every permutation of the
/// customers is split into capacity-feasible tours by a shortest-path dynamic
/// program, and the cheapest split over all permutations wins.
pub fn brute_force_optimal(instance: &CvrpInstance) -> Result<RoutePlan> {
    let n = instance.n();
    if n > BRUTE_FORCE_LIMIT {
        return Err(Error::Parameter(format!(
            "brute force limited to {BRUTE_FORCE_LIMIT} customers, got {n}"
        )));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best: Option<(f64, Vec<Vec<usize>>)> = None;
    permute(&mut perm, 0, &mut |p| {
        let (cost, routes) = split_giant_tour(instance, p);
        if best.as_ref().map_or(true, |(b, _)| cost < *b) {
            best = Some((cost, routes));
        }
    });
    let (cost, routes) = best.expect("n >= 1 yields at least one permutation");
    Ok(RoutePlan {
        instance_id: instance.id.clone(),
        routes,
        cost,
    })
}

fn permute(items: &mut Vec<usize>, k: usize, visit: &mut impl FnMut(&[usize])) {
    if k == items.len() {
        visit(items);
        return;
    }
    for i in k..items.len() {
        items.swap(k, i);
        permute(items, k + 1, visit);
        items.swap(k, i);
    }
}

/// Optimal capacity-feasible segmentation of a fixed visiting order.
/// `pot[j]` is the cheapest cost of serving the first `j` customers; each arc
/// (i, j] is one tour if its demand fits the capacity.
fn split_giant_tour(instance: &CvrpInstance, order: &[usize]) -> (f64, Vec<Vec<usize>>) {
    let n = order.len();
    let cap = u64::from(instance.capacity);
    let mut pot = vec![f64::INFINITY; n + 1];
    let mut pred = vec![0usize; n + 1];
    pot[0] = 0.0;
    for i in 0..n {
        let mut load = 0u64;
        let mut inner = 0.0; // distance along order[i..j]
        for j in i..n {
            load += u64::from(instance.demand(order[j]));
            if load > cap {
                break;
            }
            if j > i {
                inner += instance.d(order[j - 1], order[j]);
            }
            let tour_cost = instance.d_depot(order[i]) + inner + instance.d_depot(order[j]);
            let cand = pot[i] + tour_cost;
            if cand < pot[j + 1] {
                pot[j + 1] = cand;
                pred[j + 1] = i;
            }
        }
    }
    let mut routes = Vec::new();
    let mut j = n;
    while j > 0 {
        let i = pred[j];
        routes.push(order[i..j].to_vec());
        j = i;
    }
    routes.reverse();
    (pot[n], routes)
}
