use std::rc::Rc;

use ndarray::Array2;

use crate::cvrp::{dist, CvrpInstance, RoutePlan};
use crate::perturbator::sa::SaSchedule;

/// Raw per-node features of a plan, one row per graph node (row 0 is the
/// depot): demand, total demand of the node's tour, demand accumulated
/// strictly before the node, and distance traveled up to the node.
pub fn compute_node_features(instance: &CvrpInstance, plan: &RoutePlan) -> Array2<f64> {
    let n = instance.n();
    let mut feats = Array2::zeros((n + 1, 4));
    for tour in &plan.routes {
        let total: f64 = tour.iter().map(|&c| f64::from(instance.demand(c))).sum();
        let mut acc_demand = 0.0;
        let mut acc_dist = 0.0;
        let mut prev: Option<usize> = None;
        for &c in tour {
            acc_dist += match prev {
                None => instance.d_depot(c),
                Some(p) => instance.d(p, c),
            };
            let row = c + 1;
            feats[[row, 0]] = f64::from(instance.demand(c));
            feats[[row, 1]] = total;
            feats[[row, 2]] = acc_demand;
            feats[[row, 3]] = acc_dist;
            acc_demand += f64::from(instance.demand(c));
            prev = Some(c);
        }
    }
    feats
}

/// In-solution indicator for every directed node pair (row-major over
/// `(n+1)^2` pairs): 1 when the pair is consecutive in some tour, in either
/// direction, including the depot legs.
pub fn compute_edge_indicators(instance: &CvrpInstance, plan: &RoutePlan) -> Vec<f64> {
    let big_n = instance.n() + 1;
    let mut ind = vec![0.0; big_n * big_n];
    let mut link = |a: usize, b: usize, v: f64, ind: &mut Vec<f64>| {
        ind[a * big_n + b] = v;
        ind[b * big_n + a] = v;
    };
    for tour in &plan.routes {
        link(0, tour[0] + 1, 1.0, &mut ind);
        for w in tour.windows(2) {
            link(w[0] + 1, w[1] + 1, 1.0, &mut ind);
        }
        link(0, tour.last().unwrap() + 1, 1.0, &mut ind);
    }
    ind
}

/// Pairwise distances over the `n+1` graph nodes, row-major.
pub fn pairwise_distances(instance: &CvrpInstance) -> Vec<f64> {
    let n = instance.n();
    let big_n = n + 1;
    let pos = |i: usize| if i == 0 { instance.depot } else { instance.coords[i - 1] };
    let mut d = vec![0.0; big_n * big_n];
    for i in 0..big_n {
        for j in 0..big_n {
            d[i * big_n + j] = dist(pos(i), pos(j));
        }
    }
    d
}

/// Perturbation state: the instance, the current and best-so-far plans, the
/// annealing schedule position and the policy input features, which are kept
/// in sync with the current plan (only the rows and edges of tours that
/// changed are recomputed).
#[derive(Debug, Clone)]
pub struct PerturbState {
    pub instance: Rc<CvrpInstance>,
    pub plan: RoutePlan,
    pub best: RoutePlan,
    pub schedule: SaSchedule,
    node_feats: Array2<f64>,
    edge_indicators: Vec<f64>,
    /// Static pairwise distances, shared by clones of this state.
    distances: Rc<Vec<f64>>,
}

impl PerturbState {
    pub fn new(instance: Rc<CvrpInstance>, plan: RoutePlan, schedule: SaSchedule) -> Self {
        let node_feats = compute_node_features(&instance, &plan);
        let edge_indicators = compute_edge_indicators(&instance, &plan);
        let distances = Rc::new(pairwise_distances(&instance));
        PerturbState {
            best: plan.clone(),
            plan,
            schedule,
            node_feats,
            edge_indicators,
            distances,
            instance,
        }
    }

    pub fn node_features(&self) -> &Array2<f64> {
        &self.node_feats
    }

    pub fn edge_indicators(&self) -> &[f64] {
        &self.edge_indicators
    }

    pub fn distances(&self) -> &[f64] {
        &self.distances
    }

    /// Replaces the current plan, updating features incrementally: rows of
    /// customers whose tour is unchanged keep their values; indicator edges
    /// of dropped tours are cleared and of new tours set.
    pub fn apply_plan(&mut self, plan: RoutePlan) {
        let big_n = self.instance.n() + 1;
        let old: std::collections::HashSet<&[usize]> =
            self.plan.routes.iter().map(|t| t.as_slice()).collect();
        let new: std::collections::HashSet<&[usize]> =
            plan.routes.iter().map(|t| t.as_slice()).collect();

        let mut unlink = |a: usize, b: usize, v: f64, ind: &mut Vec<f64>| {
            ind[a * big_n + b] = v;
            ind[b * big_n + a] = v;
        };
        for tour in self.plan.routes.iter().filter(|t| !new.contains(t.as_slice())) {
            unlink(0, tour[0] + 1, 0.0, &mut self.edge_indicators);
            for w in tour.windows(2) {
                unlink(w[0] + 1, w[1] + 1, 0.0, &mut self.edge_indicators);
            }
            unlink(0, tour.last().unwrap() + 1, 0.0, &mut self.edge_indicators);
            for &c in tour {
                for f in 0..4 {
                    self.node_feats[[c + 1, f]] = 0.0;
                }
            }
        }
        for tour in plan.routes.iter().filter(|t| !old.contains(t.as_slice())) {
            unlink(0, tour[0] + 1, 1.0, &mut self.edge_indicators);
            for w in tour.windows(2) {
                unlink(w[0] + 1, w[1] + 1, 1.0, &mut self.edge_indicators);
            }
            unlink(0, tour.last().unwrap() + 1, 1.0, &mut self.edge_indicators);
            let total: f64 = tour.iter().map(|&c| f64::from(self.instance.demand(c))).sum();
            let mut acc_demand = 0.0;
            let mut acc_dist = 0.0;
            let mut prev: Option<usize> = None;
            for &c in tour {
                acc_dist += match prev {
                    None => self.instance.d_depot(c),
                    Some(p) => self.instance.d(p, c),
                };
                self.node_feats[[c + 1, 0]] = f64::from(self.instance.demand(c));
                self.node_feats[[c + 1, 1]] = total;
                self.node_feats[[c + 1, 2]] = acc_demand;
                self.node_feats[[c + 1, 3]] = acc_dist;
                acc_demand += f64::from(self.instance.demand(c));
                prev = Some(c);
            }
        }
        self.plan = plan;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cvrp::{naive_initial_solution, sample_instance};

    #[test]
    fn features_match_the_plan() {
        let inst = sample_instance(6, 30, 3).unwrap();
        let plan = RoutePlan::new(&inst, vec![vec![2, 0, 4], vec![1, 3, 5]]).unwrap();
        let f = compute_node_features(&inst, &plan);
        // customer 0 is second in tour 0
        let row = 1;
        assert_eq!(f[[row, 0]], f64::from(inst.demand(0)));
        let tour_total: f64 = [2usize, 0, 4].iter().map(|&c| f64::from(inst.demand(c))).sum();
        assert_eq!(f[[row, 1]], tour_total);
        assert_eq!(f[[row, 2]], f64::from(inst.demand(2)));
        let expect_dist = inst.d_depot(2) + inst.d(2, 0);
        assert!((f[[row, 3]] - expect_dist).abs() < 1e-12);
        // depot row is all zeros
        for c in 0..4 {
            assert_eq!(f[[0, c]], 0.0);
        }
    }

    #[test]
    fn indicators_are_symmetric_links() {
        let inst = sample_instance(4, 30, 5).unwrap();
        let plan = RoutePlan::new(&inst, vec![vec![1, 3], vec![0], vec![2]]).unwrap();
        let ind = compute_edge_indicators(&inst, &plan);
        let big_n = 5;
        let at = |a: usize, b: usize| ind[a * big_n + b];
        assert_eq!(at(0, 2), 1.0); // depot -> customer 1
        assert_eq!(at(2, 0), 1.0);
        assert_eq!(at(2, 4), 1.0); // customer 1 -> customer 3
        assert_eq!(at(0, 1), 1.0); // out-and-back tour of customer 0
        assert_eq!(at(2, 3), 0.0); // customers 1 and 2 not linked
        assert_eq!(at(1, 3), 0.0);
    }

    #[test]
    fn incremental_maintenance_matches_recompute() {
        use crate::cvrp::{min_cost_insert, remove_nodes, NodeSet};
        let inst = Rc::new(sample_instance(12, 30, 9).unwrap());
        let plan = naive_initial_solution(&inst, 1);
        let sched = SaSchedule::from_steps(100.0, 1).unwrap();
        let mut state = PerturbState::new(Rc::clone(&inst), plan, sched);
        for round in 0..30u64 {
            let nodes = NodeSet::new(vec![
                (round as usize * 3) % 12,
                (round as usize * 5 + 1) % 12,
            ])
            .unwrap();
            let removed = remove_nodes(&inst, &state.plan, &nodes).unwrap();
            let mut cand = removed;
            for &c in nodes.nodes() {
                cand = min_cost_insert(&inst, &cand, c).unwrap();
            }
            state.apply_plan(cand);

            let expect_nodes = compute_node_features(&inst, &state.plan);
            let expect_edges = compute_edge_indicators(&inst, &state.plan);
            assert_eq!(state.edge_indicators(), expect_edges.as_slice(), "round {round}");
            for (a, b) in state.node_features().iter().zip(expect_nodes.iter()) {
                assert!((a - b).abs() < 1e-9, "round {round}");
            }
        }
    }
}
