use rand::Rng;

use crate::autodiff::{ParamId, ParameterStore, Tape, Value};
use crate::error::Result;
use crate::nn::init::uniform_init;

/// Affine map `x W + b` on row-major inputs (rows are items).
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(
        store: &mut ParameterStore,
        rng: &mut impl Rng,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        bias: bool,
    ) -> Result<Self> {
        let w = store.add(format!("{name}.w"), uniform_init(rng, in_dim, in_dim, out_dim))?;
        let b = if bias {
            Some(store.add(format!("{name}.b"), uniform_init(rng, in_dim, 1, out_dim))?)
        } else {
            None
        };
        Ok(Linear { w, b, in_dim, out_dim })
    }

    pub fn forward(&self, tape: &Tape, store: &ParameterStore, x: &Value) -> Result<Value> {
        let y = tape.matmul(x, &Value::param(store, self.w))?;
        match self.b {
            Some(b) => tape.add(&y, &Value::param(store, b)),
            None => Ok(y),
        }
    }
}
