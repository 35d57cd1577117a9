use std::rc::Rc;

use ndarray::Array2;
use rand::Rng;

use crate::autodiff::{ParamId, ParameterStore, Tape, Value};
use crate::error::{Error, Result};
use crate::nn::init::uniform_init;

/// Edge-aware graph attention layer.
///
/// Attention logits come from a learned score over the LeakyReLU-activated
/// concatenation of the two endpoint node embeddings and the edge embedding;
/// each node aggregates its unmasked neighbours' projected embeddings by an
/// attention-weighted sum. Output width equals the input node width, so
/// layers stack.
#[derive(Debug, Clone)]
pub struct EgateLayer {
    pub node_dim: usize,
    pub edge_dim: usize,
    pub slope: f64,
    /// Node projection (node_dim -> node_dim).
    pub w_node: ParamId,
    /// Edge projection (edge_dim -> edge_dim).
    pub w_edge: ParamId,
    /// Attention score vector (2 node_dim + edge_dim -> 1).
    pub w_score: ParamId,
}

impl EgateLayer {
    pub fn new(
        store: &mut ParameterStore,
        rng: &mut impl Rng,
        name: &str,
        node_dim: usize,
        edge_dim: usize,
        slope: f64,
    ) -> Result<Self> {
        let w_node = store.add(
            format!("{name}.w_node"),
            uniform_init(rng, node_dim, node_dim, node_dim),
        )?;
        let w_edge = store.add(
            format!("{name}.w_edge"),
            uniform_init(rng, edge_dim, edge_dim, edge_dim),
        )?;
        let cat = 2 * node_dim + edge_dim;
        let w_score = store.add(format!("{name}.w_score"), uniform_init(rng, cat, cat, 1))?;
        Ok(EgateLayer {
            node_dim,
            edge_dim,
            slope,
            w_node,
            w_edge,
            w_score,
        })
    }

    /// Forward pass over `n` nodes.
    ///
    /// `node_embs` is (n, node_dim); `edge_embs` is (n*n, edge_dim) with the
    /// pair (i, j) at row `i*n + j`; `mask[i][j] == true` excludes edge
    /// (i, j) from i's aggregation. A node with every incident edge masked is
    /// a degenerate-mask error.
    pub fn forward(
        &self,
        tape: &Tape,
        store: &ParameterStore,
        node_embs: &Value,
        edge_embs: &Value,
        mask: &Rc<Array2<bool>>,
    ) -> Result<Value> {
        let n = node_embs.dim().0;
        if edge_embs.dim() != (n * n, self.edge_dim) {
            return Err(Error::Shape(format!(
                "edge embeddings {:?}, expected ({}, {})",
                edge_embs.dim(),
                n * n,
                self.edge_dim
            )));
        }
        if mask.dim() != (n, n) {
            return Err(Error::Shape(format!("mask {:?} vs ({n},{n})", mask.dim())));
        }
        let h = tape.matmul(node_embs, &Value::param(store, self.w_node))?;
        let g = tape.matmul(edge_embs, &Value::param(store, self.w_edge))?;

        let mut src_idx = Vec::with_capacity(n * n);
        let mut dst_idx = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                src_idx.push(i);
                dst_idx.push(j);
            }
        }
        let hi = tape.gather_rows(&h, &src_idx)?;
        let hj = tape.gather_rows(&h, &dst_idx)?;
        let cat = tape.concat_cols(&[&hi, &hj, &g])?;
        let act = tape.leaky_relu(&cat, self.slope);
        let scores = tape.matmul(&act, &Value::param(store, self.w_score))?;
        let logits = tape.reshape(&scores, n, n)?;
        let weights = tape.softmax_masked(&logits, mask)?;
        tape.matmul(&weights, &h)
    }
}
