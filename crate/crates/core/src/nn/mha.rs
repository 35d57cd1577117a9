use std::rc::Rc;

use ndarray::Array2;
use rand::Rng;

use crate::autodiff::{ParamId, ParameterStore, Tape, Value};
use crate::error::{Error, Result};
use crate::nn::init::uniform_init;

/// Multi-head attention: per head, `softmax(Q K^T / sqrt(d_head))` over
/// unmasked keys, weighted value sum, heads concatenated and projected.
#[derive(Debug, Clone)]
pub struct MhaLayer {
    pub heads: usize,
    pub dim: usize,
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
}

impl MhaLayer {
    pub fn new(
        store: &mut ParameterStore,
        rng: &mut impl Rng,
        name: &str,
        dim: usize,
        heads: usize,
    ) -> Result<Self> {
        if dim % heads != 0 {
            return Err(Error::Parameter(format!(
                "embedding width {dim} not divisible by {heads} heads"
            )));
        }
        let wq = store.add(format!("{name}.wq"), uniform_init(rng, dim, dim, dim))?;
        let wk = store.add(format!("{name}.wk"), uniform_init(rng, dim, dim, dim))?;
        let wv = store.add(format!("{name}.wv"), uniform_init(rng, dim, dim, dim))?;
        let wo = store.add(format!("{name}.wo"), uniform_init(rng, dim, dim, dim))?;
        Ok(MhaLayer { heads, dim, wq, wk, wv, wo })
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    /// Full attention with raw inputs: projects queries/keys/values, attends
    /// per head and projects the concatenated heads.
    ///
    /// `mask[q][k] == true` excludes key `k` for query `q`; excluded keys get
    /// exactly zero attention weight. A query with every key masked is a
    /// degenerate-mask error.
    pub fn forward(
        &self,
        tape: &Tape,
        store: &ParameterStore,
        queries: &Value,
        keys: &Value,
        values: &Value,
        mask: Option<&Rc<Array2<bool>>>,
    ) -> Result<Value> {
        let q = tape.matmul(queries, &Value::param(store, self.wq))?;
        let k = tape.matmul(keys, &Value::param(store, self.wk))?;
        let v = tape.matmul(values, &Value::param(store, self.wv))?;
        let ctx = self.attend(tape, &q, &k, &v, mask)?;
        tape.matmul(&ctx, &Value::param(store, self.wo))
    }

    /// Attention on already-projected Q/K/V; output is the concatenation of
    /// the per-head weighted value sums (no output projection).
    pub fn attend(
        &self,
        tape: &Tape,
        q: &Value,
        k: &Value,
        v: &Value,
        mask: Option<&Rc<Array2<bool>>>,
    ) -> Result<Value> {
        let (nq, _) = q.dim();
        let (nk, _) = k.dim();
        let dh = self.head_dim();
        let no_mask = Rc::new(Array2::from_elem((nq, nk), false));
        let mask = mask.unwrap_or(&no_mask);
        if mask.dim() != (nq, nk) {
            return Err(Error::Shape(format!(
                "attention mask {:?} vs ({nq},{nk})",
                mask.dim()
            )));
        }
        let mut heads = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let span = h * dh..(h + 1) * dh;
            let qh = tape.slice_cols(q, span.clone())?;
            let kh = tape.slice_cols(k, span.clone())?;
            let vh = tape.slice_cols(v, span)?;
            let scores = tape.scale(&tape.matmul_nt(&qh, &kh)?, 1.0 / (dh as f64).sqrt());
            let weights = tape.softmax_masked(&scores, mask)?;
            heads.push(tape.matmul(&weights, &vh)?);
        }
        let refs: Vec<&Value> = heads.iter().collect();
        tape.concat_cols(&refs)
    }
}

/// Residual connection between a sublayer input and output.
pub fn skip_connect(tape: &Tape, x: &Value, sublayer_out: &Value) -> Result<Value> {
    if x.dim() != sublayer_out.dim() {
        return Err(Error::Shape(format!(
            "skip connection {:?} + {:?}",
            x.dim(),
            sublayer_out.dim()
        )));
    }
    tape.add(x, sublayer_out)
}
