use std::rc::Rc;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamId, ParameterStore, Tape, Value};
use crate::cvrp::CvrpInstance;
use crate::error::{Error, Result};
use crate::nn::{skip_connect, Linear, MhaLayer};

/// Range of the tanh-clipped decoder scores.
pub const LOGIT_CLIP: f64 = 10.0;

/// Architecture of the constructive policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstructorConfig {
    pub embed_dim: usize,
    pub layers: usize,
    pub heads: usize,
}

impl ConstructorConfig {
    /// Full-scale profile (embedding width 128).
    pub fn full() -> Self {
        ConstructorConfig { embed_dim: 128, layers: 3, heads: 8 }
    }

    /// CI-speed profile.
    pub fn toy() -> Self {
        ConstructorConfig { embed_dim: 32, layers: 2, heads: 4 }
    }

    /// Profile for memory/runtime scaling benchmarks; narrow embeddings and
    /// many heads keep the quadratic attention terms dominant over the
    /// linear ones.
    pub fn bench() -> Self {
        ConstructorConfig { embed_dim: 16, layers: 2, heads: 8 }
    }
}

/// Parameters of the constructive policy.
#[derive(Debug, Clone)]
pub struct ConstructorModel {
    pub cfg: ConstructorConfig,
    /// Input lift from (x, y, demand/capacity) to the embedding width.
    pub lift: Linear,
    pub stack: Vec<MhaLayer>,
    /// Context projection from (graph mean | last node | remaining capacity).
    pub ctx_proj: Linear,
    /// Decoder attention over node embeddings with the context as query.
    pub glimpse: MhaLayer,
    /// Output scoring projection of node embeddings.
    pub w_out: ParamId,
}

/// Per-encode tensors reused by every decode step until the next depot
/// return: node embeddings, graph mean, per-head glimpse keys/values and the
/// scoring projection.
pub struct Encoded {
    pub emb: Value,
    pub graph_mean: Value,
    pub k_heads: Vec<Value>,
    pub v_heads: Vec<Value>,
    pub out_proj: Value,
}

impl ConstructorModel {
    pub fn build(
        store: &mut ParameterStore,
        rng: &mut impl Rng,
        cfg: ConstructorConfig,
    ) -> Result<Self> {
        let d = cfg.embed_dim;
        let lift = Linear::new(store, rng, "ctor.lift", 3, d, true)?;
        let mut stack = Vec::with_capacity(cfg.layers);
        for l in 0..cfg.layers {
            stack.push(MhaLayer::new(store, rng, &format!("ctor.enc{l}"), d, cfg.heads)?);
        }
        let ctx_proj = Linear::new(store, rng, "ctor.ctx", 2 * d + 1, d, false)?;
        let glimpse = MhaLayer::new(store, rng, "ctor.glimpse", d, cfg.heads)?;
        let w_out = store.add(
            "ctor.w_out",
            crate::nn::uniform_init(rng, d, d, d),
        )?;
        Ok(ConstructorModel { cfg, lift, stack, ctx_proj, glimpse, w_out })
    }

    /// Node features: row 0 is the depot, row c+1 customer c; demands are
    /// normalized by the vehicle capacity.
    pub fn node_features(instance: &CvrpInstance) -> Array2<f64> {
        let n = instance.n();
        let mut x = Array2::zeros((n + 1, 3));
        x[[0, 0]] = instance.depot[0];
        x[[0, 1]] = instance.depot[1];
        for c in 0..n {
            x[[c + 1, 0]] = instance.coords[c][0];
            x[[c + 1, 1]] = instance.coords[c][1];
            x[[c + 1, 2]] = f64::from(instance.demand(c)) / f64::from(instance.capacity);
        }
        x
    }

    /// Encodes the instance with `visited` customers masked out of attention
    /// (the depot is never masked) and precomputes the decoder projections.
    pub fn encode(
        &self,
        tape: &Tape,
        store: &ParameterStore,
        instance: &CvrpInstance,
        visited: &[bool],
    ) -> Result<Encoded> {
        let n = instance.n();
        if visited.len() != n {
            return Err(Error::Shape(format!(
                "visited mask has {} entries for {n} customers",
                visited.len()
            )));
        }
        if visited.iter().all(|&v| v) && n > 0 {
            // Depot alone still encodes, but no decode step could follow.
            return Err(Error::DegenerateMask(
                "every customer is masked at encode time".into(),
            ));
        }
        let big_n = n + 1;
        let mask = {
            let mut m = Array2::from_elem((big_n, big_n), false);
            for k in 0..n {
                if visited[k] {
                    for q in 0..big_n {
                        m[[q, k + 1]] = true;
                    }
                }
            }
            Rc::new(m)
        };

        let x = Value::constant(Self::node_features(instance));
        let mut emb = self.lift.forward(tape, store, &x)?;
        for layer in &self.stack {
            let attn = layer.forward(tape, store, &emb, &emb, &emb, Some(&mask))?;
            emb = skip_connect(tape, &emb, &attn)?;
        }

        let unmasked: Vec<usize> = std::iter::once(0)
            .chain((0..n).filter(|&c| !visited[c]).map(|c| c + 1))
            .collect();
        let graph_mean = tape.mean_rows(&tape.gather_rows(&emb, &unmasked)?);

        let k = tape.matmul(&emb, &Value::param(store, self.glimpse.wk))?;
        let v = tape.matmul(&emb, &Value::param(store, self.glimpse.wv))?;
        let dh = self.glimpse.head_dim();
        let mut k_heads = Vec::with_capacity(self.cfg.heads);
        let mut v_heads = Vec::with_capacity(self.cfg.heads);
        for h in 0..self.cfg.heads {
            let span = h * dh..(h + 1) * dh;
            k_heads.push(tape.slice_cols(&k, span.clone())?);
            v_heads.push(tape.slice_cols(&v, span)?);
        }
        let out_proj = tape.matmul(&emb, &Value::param(store, self.w_out))?;

        Ok(Encoded { emb, graph_mean, k_heads, v_heads, out_proj })
    }

    /// One decoder step: selection probabilities over the n+1 nodes
    /// (depot first), masked by `excluded`.
    pub fn decode_probs(
        &self,
        tape: &Tape,
        store: &ParameterStore,
        encoded: &Encoded,
        last_node: usize,
        remaining_frac: f64,
        excluded: &Rc<Array2<bool>>,
    ) -> Result<Value> {
        let d = self.cfg.embed_dim;
        let dh = self.glimpse.head_dim();
        let last = tape.gather_rows(&encoded.emb, &[last_node])?;
        let cap = Value::scalar_const(remaining_frac);
        let ctx_in = tape.concat_cols(&[&encoded.graph_mean, &last, &cap])?;
        let query = self.ctx_proj.forward(tape, store, &ctx_in)?;

        let q = tape.matmul(&query, &Value::param(store, self.glimpse.wq))?;
        let mut heads = Vec::with_capacity(self.cfg.heads);
        for h in 0..self.cfg.heads {
            let qh = tape.slice_cols(&q, h * dh..(h + 1) * dh)?;
            let scores =
                tape.scale(&tape.matmul_nt(&qh, &encoded.k_heads[h])?, 1.0 / (dh as f64).sqrt());
            let weights = tape.softmax_masked(&scores, excluded)?;
            heads.push(tape.matmul(&weights, &encoded.v_heads[h])?);
        }
        let refs: Vec<&Value> = heads.iter().collect();
        let glimpsed = tape.matmul(
            &tape.concat_cols(&refs)?,
            &Value::param(store, self.glimpse.wo),
        )?;

        // Scores are clipped to (-C, C) through tanh; keeps the softmax
        // trainable at large step sizes without runaway logits.
        let raw = tape.scale(
            &tape.matmul_nt(&glimpsed, &encoded.out_proj)?,
            1.0 / (d as f64).sqrt(),
        );
        let logits = tape.scale(&tape.tanh(&raw), LOGIT_CLIP);
        tape.softmax_masked(&logits, excluded)
    }
}
