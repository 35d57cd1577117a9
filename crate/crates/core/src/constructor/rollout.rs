use std::rc::Rc;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{ParameterStore, Tape, Value};
use crate::constructor::model::ConstructorModel;
use crate::cvrp::{CvrpInstance, RoutePlan};
use crate::error::{Error, Result};

/// Node selection rule during decoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodeMode {
    Greedy,
    Sample,
}

/// Construction state: node 0 is the depot, node c+1 is customer c.
pub struct ConstructionEnv<'a> {
    pub instance: &'a CvrpInstance,
    visited: Vec<bool>,
    remaining: u32,
    current_tour: Vec<usize>,
    routes: Vec<Vec<usize>>,
    n_visited: usize,
    last_node: usize,
    needs_encode: bool,
}

impl<'a> ConstructionEnv<'a> {
    pub fn new(instance: &'a CvrpInstance) -> Self {
        ConstructionEnv {
            instance,
            visited: vec![false; instance.n()],
            remaining: instance.capacity,
            current_tour: Vec::new(),
            routes: Vec::new(),
            n_visited: 0,
            last_node: 0,
            needs_encode: true,
        }
    }

    pub fn done(&self) -> bool {
        self.n_visited == self.instance.n()
    }

    pub fn needs_encode(&self) -> bool {
        self.needs_encode
    }

    pub fn took_encode(&mut self) {
        self.needs_encode = false;
    }

    pub fn visited(&self) -> &[bool] {
        &self.visited
    }

    pub fn last_node(&self) -> usize {
        self.last_node
    }

    pub fn remaining_frac(&self) -> f64 {
        f64::from(self.remaining) / f64::from(self.instance.capacity)
    }

    /// Exclusion mask over the n+1 nodes: visited or over-capacity customers,
    /// and the depot while the current tour is empty.
    pub fn excluded(&self) -> Rc<Array2<bool>> {
        let n = self.instance.n();
        let mut m = Array2::from_elem((1, n + 1), false);
        m[[0, 0]] = self.current_tour.is_empty();
        for c in 0..n {
            m[[0, c + 1]] = self.visited[c] || self.instance.demand(c) > self.remaining;
        }
        Rc::new(m)
    }

    /// Applies a decoded node. Selecting the depot closes the current tour
    /// and schedules a re-encode.
    pub fn apply(&mut self, node: usize) {
        if node == 0 {
            debug_assert!(!self.current_tour.is_empty(), "empty depot loop");
            self.routes.push(std::mem::take(&mut self.current_tour));
            self.remaining = self.instance.capacity;
            self.last_node = 0;
            self.needs_encode = true;
        } else {
            let c = node - 1;
            debug_assert!(!self.visited[c]);
            self.visited[c] = true;
            self.remaining -= self.instance.demand(c);
            self.current_tour.push(c);
            self.n_visited += 1;
            self.last_node = node;
        }
    }

    /// Closes the final tour and returns the finished plan.
    pub fn finish(mut self) -> Result<RoutePlan> {
        if !self.current_tour.is_empty() {
            self.routes.push(std::mem::take(&mut self.current_tour));
        }
        RoutePlan::new(self.instance, self.routes)
    }
}

/// Picks a node from a probability row. Greedy takes the argmax (lowest
/// index on ties); sampling inverts one uniform draw against the cumulative
/// distribution.
pub fn choose_node(probs: &Array2<f64>, excluded: &Array2<bool>, mode: DecodeMode, rng: &mut ChaCha8Rng) -> usize {
    let cols = probs.dim().1;
    match mode {
        DecodeMode::Greedy => {
            let mut best = usize::MAX;
            let mut best_p = -1.0;
            for c in 0..cols {
                if !excluded[[0, c]] && probs[[0, c]] > best_p {
                    best_p = probs[[0, c]];
                    best = c;
                }
            }
            best
        }
        DecodeMode::Sample => {
            let u: f64 = rng.random();
            let mut cum = 0.0;
            let mut last_feasible = 0;
            for c in 0..cols {
                if excluded[[0, c]] {
                    continue;
                }
                last_feasible = c;
                cum += probs[[0, c]];
                if u < cum {
                    return c;
                }
            }
            last_feasible
        }
    }
}

/// The actions and per-step log-probabilities of one full construction.
#[derive(Debug, Clone)]
pub struct Trace {
    pub actions: Vec<usize>,
    pub log_probs: Vec<f64>,
}

impl Trace {
    pub fn total_log_prob(&self) -> f64 {
        self.log_probs.iter().sum()
    }
}

/// Full rollout without recording; returns the plan and its trace.
pub fn construct_traced(
    tape: &Tape,
    store: &ParameterStore,
    model: &ConstructorModel,
    instance: &CvrpInstance,
    mode: DecodeMode,
    seed: u64,
) -> Result<(RoutePlan, Trace)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    tape.record_scope(false, || {
        let mut env = ConstructionEnv::new(instance);
        let mut encoded = None;
        let mut trace = Trace { actions: Vec::new(), log_probs: Vec::new() };
        while !env.done() {
            if env.needs_encode() {
                encoded = Some(model.encode(tape, store, instance, env.visited())?);
                env.took_encode();
            }
            let enc = encoded.as_ref().expect("encoded before decode");
            let excluded = env.excluded();
            let probs =
                model.decode_probs(tape, store, enc, env.last_node(), env.remaining_frac(), &excluded)?;
            let node = choose_node(probs.data(), &excluded, mode, &mut rng);
            if node == usize::MAX {
                return Err(Error::Structural(
                    "construction dead end: no selectable node".into(),
                ));
            }
            trace.actions.push(node);
            trace.log_probs.push(probs.data()[[0, node]].ln());
            env.apply(node);
        }
        let plan = env.finish()?;
        Ok((plan, trace))
    })
}

/// Builds a feasible plan visiting every customer; returns the plan and the
/// summed log-probability of the taken actions.
pub fn construct(
    tape: &Tape,
    store: &ParameterStore,
    model: &ConstructorModel,
    instance: &CvrpInstance,
    mode: DecodeMode,
    seed: u64,
) -> Result<(RoutePlan, f64)> {
    let (plan, trace) = construct_traced(tape, store, model, instance, mode, seed)?;
    Ok((plan, trace.total_log_prob()))
}

/// Summed log-probability of a fixed action sequence under the current
/// parameters, built through the tape (so it is differentiable while
/// recording is on). The sequence must be a complete, feasible construction.
pub fn replay_log_prob(
    tape: &Tape,
    store: &ParameterStore,
    model: &ConstructorModel,
    instance: &CvrpInstance,
    actions: &[usize],
) -> Result<Value> {
    let mut env = ConstructionEnv::new(instance);
    let mut encoded = None;
    let mut ll: Option<Value> = None;
    for (step, &action) in actions.iter().enumerate() {
        if env.needs_encode() {
            encoded = Some(model.encode(tape, store, instance, env.visited())?);
            env.took_encode();
        }
        let enc = encoded.as_ref().expect("encoded");
        let excluded = env.excluded();
        if excluded[[0, action]] {
            return Err(Error::Replay(format!(
                "action {action} infeasible at step {step}"
            )));
        }
        let probs =
            model.decode_probs(tape, store, enc, env.last_node(), env.remaining_frac(), &excluded)?;
        let step_ll = tape.ln(&tape.slice_cols(&probs, action..action + 1)?);
        ll = Some(match ll {
            Some(acc) => tape.add(&acc, &step_ll)?,
            None => step_ll,
        });
        env.apply(action);
    }
    if !env.done() {
        return Err(Error::Replay("action sequence leaves customers unvisited".into()));
    }
    ll.ok_or_else(|| Error::Parameter("empty action sequence".into()))
}

/// Best (lowest-cost) of `k` independent sampled constructions. The i-th
/// sample uses the seed stream `seed + i`, so the k = 1 draw is the first of
/// any larger k with the same base seed.
pub fn sample_best_of_k(
    tape: &Tape,
    store: &ParameterStore,
    model: &ConstructorModel,
    instance: &CvrpInstance,
    k: usize,
    seed: u64,
) -> Result<RoutePlan> {
    if k < 1 {
        return Err(Error::Parameter("k must be >= 1".into()));
    }
    let mut best: Option<RoutePlan> = None;
    for i in 0..k as u64 {
        let (plan, _) = construct(tape, store, model, instance, DecodeMode::Sample, seed + i)?;
        if best.as_ref().map_or(true, |b| plan.cost < b.cost) {
            best = Some(plan);
        }
    }
    Ok(best.expect("k >= 1"))
}
