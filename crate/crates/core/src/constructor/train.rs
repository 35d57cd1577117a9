use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{ParameterStore, Tape, Value};
use crate::constructor::model::ConstructorModel;
use crate::constructor::rollout::{choose_node, construct, construct_traced, ConstructionEnv, DecodeMode, Trace};
use crate::cvrp::{CvrpInstance, RoutePlan};
use crate::error::{Error, Result};

/// How the REINFORCE gradient is materialized.
///
/// Both strategies compute the same update (to floating-point rounding):
/// `FullGraph` records the whole rollout and backpropagates once, retaining
/// every intermediate tensor of every step; `Stepwise` fixes actions and
/// costs in a recording-off pass, then replays them and backpropagates at
/// every step, so gradients accumulate and at most one encoder subgraph
/// stays retained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradStrategy {
    FullGraph,
    Stepwise,
}

/// Frozen policy copy used for greedy rollout baselines.
#[derive(Debug, Clone)]
pub struct BaselineParams {
    pub store: ParameterStore,
    /// Mean greedy cost on the held-out evaluation set.
    pub eval_cost: f64,
}

impl BaselineParams {
    pub fn new(
        tape: &Tape,
        model: &ConstructorModel,
        store: &ParameterStore,
        eval_set: &[CvrpInstance],
    ) -> Result<Self> {
        let frozen = store.clone();
        let eval_cost = mean_greedy_cost(tape, model, &frozen, eval_set)?;
        Ok(BaselineParams { store: frozen, eval_cost })
    }
}

fn mean_greedy_cost(
    tape: &Tape,
    model: &ConstructorModel,
    store: &ParameterStore,
    instances: &[CvrpInstance],
) -> Result<f64> {
    if instances.is_empty() {
        return Err(Error::Parameter("empty evaluation set".into()));
    }
    let mut total = 0.0;
    for inst in instances {
        let (plan, _) = construct(tape, store, model, inst, DecodeMode::Greedy, 0)?;
        total += plan.cost;
    }
    Ok(total / instances.len() as f64)
}

/// Greedy constructions under the frozen baseline, recording off.
pub fn greedy_rollout_baseline(
    tape: &Tape,
    model: &ConstructorModel,
    baseline: &BaselineParams,
    batch: &[CvrpInstance],
) -> Result<Vec<f64>> {
    batch
        .iter()
        .map(|inst| {
            construct(tape, &baseline.store, model, inst, DecodeMode::Greedy, 0)
                .map(|(plan, _)| plan.cost)
        })
        .collect()
}

/// Replaces the baseline with a frozen copy of the current parameters iff
/// the current greedy mean cost on the evaluation set improves on the
/// baseline's by more than `threshold`. Returns whether it updated.
pub fn maybe_update_baseline(
    tape: &Tape,
    model: &ConstructorModel,
    current: &ParameterStore,
    baseline: &mut BaselineParams,
    eval_set: &[CvrpInstance],
    threshold: f64,
) -> Result<bool> {
    let cur_cost = mean_greedy_cost(tape, model, current, eval_set)?;
    if baseline.eval_cost - cur_cost > threshold {
        baseline.store = current.clone();
        baseline.eval_cost = cur_cost;
        Ok(true)
    } else {
        Ok(false)
    }
}

/// Outcome of one training batch.
#[derive(Debug, Clone)]
pub struct StepReport {
    pub costs: Vec<f64>,
    pub baseline_costs: Vec<f64>,
    pub peak_retained: usize,
    pub wall_ms: f64,
}

impl StepReport {
    pub fn mean_cost(&self) -> f64 {
        self.costs.iter().sum::<f64>() / self.costs.len() as f64
    }

    pub fn mean_baseline_cost(&self) -> f64 {
        self.baseline_costs.iter().sum::<f64>() / self.baseline_costs.len() as f64
    }
}

fn child_seed(seed: u64, i: u64) -> u64 {
    seed.wrapping_add((i + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// One REINFORCE batch: sampled rollouts against greedy baseline costs, one
/// SGD step `theta -= lr * mean((cost - baseline) * grad log-prob)`.
pub fn reinforce_step(
    tape: &Tape,
    model: &ConstructorModel,
    store: &mut ParameterStore,
    baseline: &BaselineParams,
    batch: &[CvrpInstance],
    lr: f64,
    seed: u64,
    strategy: GradStrategy,
) -> Result<StepReport> {
    let baseline_costs = greedy_rollout_baseline(tape, model, baseline, batch)?;
    reinforce_step_precomputed(tape, model, store, &baseline_costs, batch, lr, seed, strategy)
}

/// [`reinforce_step`] with the baseline costs already evaluated. Baseline
/// rollouts are deterministic per instance, so they are typically computed
/// once per pool pass; the reported wall time then covers only the gradient
/// work, which is what the strategy benchmarks compare.
#[allow(clippy::too_many_arguments)]
pub fn reinforce_step_precomputed(
    tape: &Tape,
    model: &ConstructorModel,
    store: &mut ParameterStore,
    baseline_costs: &[f64],
    batch: &[CvrpInstance],
    lr: f64,
    seed: u64,
    strategy: GradStrategy,
) -> Result<StepReport> {
    if batch.is_empty() {
        return Err(Error::Parameter("empty training batch".into()));
    }
    if baseline_costs.len() != batch.len() {
        return Err(Error::Parameter(format!(
            "{} baseline costs for a batch of {}",
            baseline_costs.len(),
            batch.len()
        )));
    }
    let start = Instant::now();
    tape.clear();
    tape.begin_epoch();
    store.zero_grads();
    let report = match strategy {
        GradStrategy::FullGraph => {
            step_full_graph(tape, model, store, baseline_costs, batch, seed)?
        }
        GradStrategy::Stepwise => step_stepwise(tape, model, store, baseline_costs, batch, seed)?,
    };
    if !store.all_grads_finite() {
        return Err(Error::Numeric("non-finite gradient in REINFORCE step".into()));
    }
    store.descend(lr);
    Ok(StepReport {
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
        ..report
    })
}

/// Records every step of every rollout and backpropagates the batch loss
/// once; the whole computational graph stays retained until then.
fn step_full_graph(
    tape: &Tape,
    model: &ConstructorModel,
    store: &mut ParameterStore,
    baseline_costs: &[f64],
    batch: &[CvrpInstance],
    seed: u64,
) -> Result<StepReport> {
    let b = batch.len() as f64;
    let mut costs = Vec::with_capacity(batch.len());

    let loss = tape.record_scope(true, || -> Result<Value> {
        let mut loss: Option<Value> = None;
        for (i, inst) in batch.iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(child_seed(seed, i as u64));
            let (plan, ll) = recorded_sampled_rollout(tape, store, model, inst, &mut rng)?;
            costs.push(plan.cost);

            let coef = (plan.cost - baseline_costs[i]) / b;
            let term = tape.scale(&ll, coef);
            loss = Some(match loss {
                Some(acc) => tape.add(&acc, &term)?,
                None => term,
            });
        }
        Ok(loss.expect("nonempty batch"))
    })?;
    if !loss.scalar().is_finite() {
        return Err(Error::Numeric(format!(
            "non-finite REINFORCE loss {} (costs {:?})",
            loss.scalar(),
            costs
        )));
    }
    let peak_retained = tape.peak_retained();
    tape.backward(&loss, store)?;
    Ok(StepReport {
        costs,
        baseline_costs: baseline_costs.to_vec(),
        peak_retained,
        wall_ms: 0.0,
    })
}

/// Sampled rollout with recording on; returns the plan and the recorded
/// total log-probability.
fn recorded_sampled_rollout(
    tape: &Tape,
    store: &ParameterStore,
    model: &ConstructorModel,
    instance: &CvrpInstance,
    rng: &mut ChaCha8Rng,
) -> Result<(RoutePlan, Value)> {
    tape.record_scope(true, || {
        let mut env = ConstructionEnv::new(instance);
        let mut encoded = None;
        let mut ll: Option<Value> = None;
        while !env.done() {
            if env.needs_encode() {
                encoded = Some(model.encode(tape, store, instance, env.visited())?);
                env.took_encode();
            }
            let enc = encoded.as_ref().expect("encoded");
            let excluded = env.excluded();
            let probs = model.decode_probs(
                tape,
                store,
                enc,
                env.last_node(),
                env.remaining_frac(),
                &excluded,
            )?;
            let node = choose_node(probs.data(), &excluded, DecodeMode::Sample, rng);
            let step_ll = tape.ln(&tape.slice_cols(&probs, node..node + 1)?);
            ll = Some(match ll {
                Some(acc) => tape.add(&acc, &step_ll)?,
                None => step_ll,
            });
            env.apply(node);
        }
        let plan = env.finish()?;
        Ok((plan, ll.expect("at least one step")))
    })
}

/// Two-pass strategy: pass 1 (recording off) fixes sampled actions and
/// costs; pass 2 replays the same actions with recording on and calls
/// backward at every step, so parameter gradients accumulate while only the
/// current encoder subgraph stays retained.
fn step_stepwise(
    tape: &Tape,
    model: &ConstructorModel,
    store: &mut ParameterStore,
    baseline_costs: &[f64],
    batch: &[CvrpInstance],
    seed: u64,
) -> Result<StepReport> {
    let b = batch.len() as f64;
    let mut costs = Vec::with_capacity(batch.len());

    for (i, inst) in batch.iter().enumerate() {
        // Pass 1: same seed stream as the full-graph strategy, recording off.
        let (plan, trace) = construct_traced(
            tape,
            store,
            model,
            inst,
            DecodeMode::Sample,
            child_seed(seed, i as u64),
        )?;
        let coef = (plan.cost - baseline_costs[i]) / b;
        if !coef.is_finite() {
            return Err(Error::Numeric(format!("non-finite advantage {coef}")));
        }
        costs.push(plan.cost);

        replay_backward(tape, store, model, inst, &trace, coef)?;
    }
    Ok(StepReport {
        costs,
        baseline_costs: baseline_costs.to_vec(),
        peak_retained: tape.peak_retained(),
        wall_ms: 0.0,
    })
}

/// Pass 2 of the stepwise strategy: replays `trace`, backpropagating
/// `coef * log p(action)` at every step. Each backward frees the step's own
/// nodes; the encoder subgraph is kept until the next depot return.
fn replay_backward(
    tape: &Tape,
    store: &mut ParameterStore,
    model: &ConstructorModel,
    instance: &CvrpInstance,
    trace: &Trace,
    coef: f64,
) -> Result<()> {
    tape.clear();
    tape.set_recording(true);
    let mut env = ConstructionEnv::new(instance);
    let mut encoded = None;
    let mut mark = tape.mark();
    for (step, (&action, &recorded_ll)) in
        trace.actions.iter().zip(&trace.log_probs).enumerate()
    {
        if env.needs_encode() {
            tape.clear();
            encoded = Some(model.encode(tape, store, instance, env.visited())?);
            env.took_encode();
            mark = tape.mark();
        }
        let enc = encoded.as_ref().expect("encoded");
        let excluded = env.excluded();
        let probs = model.decode_probs(
            tape,
            store,
            enc,
            env.last_node(),
            env.remaining_frac(),
            &excluded,
        )?;
        if excluded[[0, action]] {
            tape.set_recording(false);
            return Err(Error::Replay(format!(
                "replayed action {action} infeasible at step {step}"
            )));
        }
        let step_ll = tape.ln(&tape.slice_cols(&probs, action..action + 1)?);
        if step_ll.scalar() != recorded_ll {
            tape.set_recording(false);
            return Err(Error::Replay(format!(
                "step {step}: replayed log-prob {} != recorded {recorded_ll}",
                step_ll.scalar()
            )));
        }
        let root = tape.scale(&step_ll, coef);
        tape.backward_free_above(&root, store, mark)?;
        env.apply(action);
    }
    tape.set_recording(false);
    tape.clear();
    Ok(())
}
