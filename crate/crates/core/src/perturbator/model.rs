use std::rc::Rc;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamId, ParameterStore, Tape, Value};
use crate::cvrp::NodeSet;
use crate::error::{Error, Result};
use crate::nn::{uniform_init, EgateLayer, GruCell, Linear, LEAKY_RELU_SLOPE};
use crate::perturbator::state::PerturbState;

/// Architecture of the removal policy and its critic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PerturbConfig {
    pub node_dim: usize,
    pub edge_dim: usize,
    pub layers: usize,
    pub critic_hidden: usize,
}

impl PerturbConfig {
    pub fn full() -> Self {
        PerturbConfig { node_dim: 64, edge_dim: 16, layers: 3, critic_hidden: 64 }
    }

    pub fn toy() -> Self {
        PerturbConfig { node_dim: 32, edge_dim: 8, layers: 2, critic_hidden: 32 }
    }
}

/// Removal policy: EGATE encoder over (instance, current solution), mean
/// pooling, and a GRU pointer decoder over node embeddings.
#[derive(Debug, Clone)]
pub struct PerturbModel {
    pub cfg: PerturbConfig,
    pub lift_node: Linear,
    pub lift_edge: Linear,
    pub layers: Vec<EgateLayer>,
    pub gru: GruCell,
    /// Pointer scoring: v^T tanh(emb W_ref + h W_q).
    pub ptr_ref: ParamId,
    pub ptr_q: ParamId,
    pub ptr_v: ParamId,
}

impl PerturbModel {
    pub fn build(store: &mut ParameterStore, rng: &mut impl Rng, cfg: PerturbConfig) -> Result<Self> {
        let dn = cfg.node_dim;
        let de = cfg.edge_dim;
        let lift_node = Linear::new(store, rng, "ptb.lift_node", 4, dn, true)?;
        let lift_edge = Linear::new(store, rng, "ptb.lift_edge", 2, de, true)?;
        let mut layers = Vec::with_capacity(cfg.layers);
        for l in 0..cfg.layers {
            layers.push(EgateLayer::new(
                store,
                rng,
                &format!("ptb.egate{l}"),
                dn,
                de,
                LEAKY_RELU_SLOPE,
            )?);
        }
        let gru = GruCell::new(store, rng, "ptb.gru", dn, dn)?;
        let ptr_ref = store.add("ptb.ptr_ref", uniform_init(rng, dn, dn, dn))?;
        let ptr_q = store.add("ptb.ptr_q", uniform_init(rng, dn, dn, dn))?;
        let ptr_v = store.add("ptb.ptr_v", uniform_init(rng, dn, dn, 1))?;
        Ok(PerturbModel { cfg, lift_node, lift_edge, layers, gru, ptr_ref, ptr_q, ptr_v })
    }

    /// Model inputs from a perturbation state: scaled node features and the
    /// (distance, in-solution) edge features over all node pairs.
    pub fn state_inputs(state: &PerturbState) -> (Array2<f64>, Array2<f64>) {
        let cap = f64::from(state.instance.capacity);
        let raw = state.node_features();
        let n1 = raw.dim().0;
        let mut nodes = Array2::zeros((n1, 4));
        for i in 0..n1 {
            nodes[[i, 0]] = raw[[i, 0]] / cap;
            nodes[[i, 1]] = raw[[i, 1]] / cap;
            nodes[[i, 2]] = raw[[i, 2]] / cap;
            nodes[[i, 3]] = raw[[i, 3]];
        }
        let dists = state.distances();
        let ind = state.edge_indicators();
        let mut edges = Array2::zeros((n1 * n1, 2));
        for p in 0..n1 * n1 {
            edges[[p, 0]] = dists[p];
            edges[[p, 1]] = ind[p];
        }
        (nodes, edges)
    }

    /// Runs the EGATE stack and mean pooling. For the plain CVRP no edge
    /// violates a constraint, so the mask is empty.
    pub fn encode_state(
        &self,
        tape: &Tape,
        store: &ParameterStore,
        state: &PerturbState,
    ) -> Result<(Value, Value)> {
        let (nodes, edges) = Self::state_inputs(state);
        let n1 = nodes.dim().0;
        let mask = Rc::new(Array2::from_elem((n1, n1), false));
        let mut emb = self.lift_node.forward(tape, store, &Value::constant(nodes))?;
        let edge_emb = self.lift_edge.forward(tape, store, &Value::constant(edges))?;
        for layer in &self.layers {
            emb = layer.forward(tape, store, &emb, &edge_emb, &mask)?;
        }
        let pooled = tape.mean_rows(&emb);
        Ok((emb, pooled))
    }

    /// Decodes `nnodes` distinct customers to remove, in reinsertion order.
    /// Returns the chosen customers and the log-probability of each choice.
    pub fn select_removals(
        &self,
        tape: &Tape,
        store: &ParameterStore,
        node_embs: &Value,
        pooled: &Value,
        nnodes: usize,
        seed: u64,
    ) -> Result<(NodeSet, Vec<f64>)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (chosen, lls, _) = self.decode_removals(
            tape,
            store,
            node_embs,
            pooled,
            nnodes,
            Some(&mut rng),
            None,
        )?;
        Ok((NodeSet::new(chosen)?, lls))
    }

    /// Log-probability of a fixed removal sequence under the current
    /// parameters; differentiable while recording is on.
    pub fn removal_log_prob(
        &self,
        tape: &Tape,
        store: &ParameterStore,
        node_embs: &Value,
        pooled: &Value,
        removed: &NodeSet,
    ) -> Result<Value> {
        let (_, _, ll) = self.decode_removals(
            tape,
            store,
            node_embs,
            pooled,
            removed.len(),
            None,
            Some(removed.nodes()),
        )?;
        Ok(ll.expect("nonempty removal sequence"))
    }

    fn decode_removals(
        &self,
        tape: &Tape,
        store: &ParameterStore,
        node_embs: &Value,
        pooled: &Value,
        nnodes: usize,
        mut rng: Option<&mut ChaCha8Rng>,
        replay: Option<&[usize]>,
    ) -> Result<(Vec<usize>, Vec<f64>, Option<Value>)> {
        let n1 = node_embs.dim().0;
        let n = n1 - 1;
        if nnodes > n {
            return Err(Error::Parameter(format!(
                "cannot remove {nnodes} of {n} customers"
            )));
        }
        if nnodes == 0 {
            return Err(Error::Parameter("nnodes must be >= 1".into()));
        }
        let ref_proj = tape.matmul(node_embs, &Value::param(store, self.ptr_ref))?;
        let ptr_v = Value::param(store, self.ptr_v);

        let mut hidden = pooled.clone();
        let mut input = Value::constant(Array2::zeros((1, self.cfg.node_dim)));
        let mut excluded = Array2::from_elem((1, n1), false);
        excluded[[0, 0]] = true; // the depot is never removable

        let mut chosen = Vec::with_capacity(nnodes);
        let mut lls = Vec::with_capacity(nnodes);
        let mut ll_total: Option<Value> = None;
        for step in 0..nnodes {
            hidden = self.gru.step(tape, store, &input, &hidden)?;
            let q = tape.matmul(&hidden, &Value::param(store, self.ptr_q))?;
            let scores = tape.tanh(&tape.add(&ref_proj, &q)?);
            let logits = tape.transpose(&tape.matmul(&scores, &ptr_v)?);
            let mask = Rc::new(excluded.clone());
            let probs = tape.softmax_masked(&logits, &mask)?;

            let node = match replay {
                Some(actions) => {
                    let a = actions[step];
                    if a >= n || excluded[[0, a + 1]] {
                        return Err(Error::Replay(format!(
                            "removal {a} invalid at step {step}"
                        )));
                    }
                    a + 1
                }
                None => {
                    let r = rng.as_deref_mut().expect("rng for sampling");
                    sample_row(probs.data(), &excluded, r)
                }
            };
            let step_ll = tape.ln(&tape.slice_cols(&probs, node..node + 1)?);
            lls.push(step_ll.scalar());
            ll_total = Some(match ll_total {
                Some(acc) => tape.add(&acc, &step_ll)?,
                None => step_ll,
            });
            chosen.push(node - 1);
            excluded[[0, node]] = true;
            input = tape.gather_rows(node_embs, &[node])?;
        }
        Ok((chosen, lls, ll_total))
    }
}

fn sample_row(probs: &Array2<f64>, excluded: &Array2<bool>, rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.random();
    let mut cum = 0.0;
    let mut last = 0;
    for c in 0..probs.dim().1 {
        if excluded[[0, c]] {
            continue;
        }
        last = c;
        cum += probs[[0, c]];
        if u < cum {
            return c;
        }
    }
    last
}

/// Two-layer value network over the pooled state embedding.
#[derive(Debug, Clone)]
pub struct CriticModel {
    pub l1: Linear,
    pub l2: Linear,
}

impl CriticModel {
    pub fn build(store: &mut ParameterStore, rng: &mut impl Rng, cfg: PerturbConfig) -> Result<Self> {
        let l1 = Linear::new(store, rng, "critic.l1", cfg.node_dim, cfg.critic_hidden, true)?;
        let l2 = Linear::new(store, rng, "critic.l2", cfg.critic_hidden, 1, true)?;
        Ok(CriticModel { l1, l2 })
    }

    /// Scalar state value.
    pub fn value(&self, tape: &Tape, store: &ParameterStore, pooled: &Value) -> Result<Value> {
        let h = tape.relu(&self.l1.forward(tape, store, pooled)?);
        self.l2.forward(tape, store, &h)
    }
}
