use ndarray::Array2;
use rand::Rng;

use crate::autodiff::{ParamId, ParameterStore, Tape, Value};
use crate::error::{Error, Result};
use crate::nn::init::uniform_init;

/// Gated recurrent cell.
///
/// `z = sigmoid(x Wz + h Uz + bz)`, `r = sigmoid(x Wr + h Ur + br)`,
/// `c = tanh(x Wc + (r . h) Uc + bc)`, `h' = (1 - z) . h + z . c`.
#[derive(Debug, Clone)]
pub struct GruCell {
    pub in_dim: usize,
    pub hidden: usize,
    pub wz: ParamId,
    pub uz: ParamId,
    pub bz: ParamId,
    pub wr: ParamId,
    pub ur: ParamId,
    pub br: ParamId,
    pub wc: ParamId,
    pub uc: ParamId,
    pub bc: ParamId,
}

impl GruCell {
    pub fn new(
        store: &mut ParameterStore,
        rng: &mut impl Rng,
        name: &str,
        in_dim: usize,
        hidden: usize,
    ) -> Result<Self> {
        let wz = store.add(format!("{name}.wz"), uniform_init(rng, in_dim, in_dim, hidden))?;
        let uz = store.add(format!("{name}.uz"), uniform_init(rng, hidden, hidden, hidden))?;
        let bz = store.add(format!("{name}.bz"), uniform_init(rng, hidden, 1, hidden))?;
        let wr = store.add(format!("{name}.wr"), uniform_init(rng, in_dim, in_dim, hidden))?;
        let ur = store.add(format!("{name}.ur"), uniform_init(rng, hidden, hidden, hidden))?;
        let br = store.add(format!("{name}.br"), uniform_init(rng, hidden, 1, hidden))?;
        let wc = store.add(format!("{name}.wc"), uniform_init(rng, in_dim, in_dim, hidden))?;
        let uc = store.add(format!("{name}.uc"), uniform_init(rng, hidden, hidden, hidden))?;
        let bc = store.add(format!("{name}.bc"), uniform_init(rng, hidden, 1, hidden))?;
        Ok(GruCell { in_dim, hidden, wz, uz, bz, wr, ur, br, wc, uc, bc })
    }

    pub fn step(
        &self,
        tape: &Tape,
        store: &ParameterStore,
        input: &Value,
        hidden: &Value,
    ) -> Result<Value> {
        if input.dim().1 != self.in_dim || hidden.dim().1 != self.hidden {
            return Err(Error::Shape(format!(
                "gru step input {:?}, hidden {:?}",
                input.dim(),
                hidden.dim()
            )));
        }
        let gate = |w: ParamId, u: ParamId, b: ParamId, pre_h: &Value| -> Result<Value> {
            let xw = tape.matmul(input, &Value::param(store, w))?;
            let hu = tape.matmul(pre_h, &Value::param(store, u))?;
            tape.add(&tape.add(&xw, &hu)?, &Value::param(store, b))
        };
        let z = tape.sigmoid(&gate(self.wz, self.uz, self.bz, hidden)?);
        let r = tape.sigmoid(&gate(self.wr, self.ur, self.br, hidden)?);
        let rh = tape.mul(&r, hidden)?;
        let c = tape.tanh(&gate(self.wc, self.uc, self.bc, &rh)?);

        let ones = Value::constant(Array2::from_elem(hidden.dim(), 1.0));
        let keep = tape.mul(&tape.sub(&ones, &z)?, hidden)?;
        let update = tape.mul(&z, &c)?;
        tape.add(&keep, &update)
    }
}
