use std::collections::HashMap;
use std::rc::Rc;

use ndarray::Array2;

use crate::error::{Error, Result};

/// Handle to a named parameter array inside a [`ParameterStore`].
pub type ParamId = usize;

#[derive(Debug, Clone)]
struct Param {
    name: String,
    value: Rc<Array2<f64>>,
    grad: Array2<f64>,
}

/// Named, shaped parameter arrays with gradient slots.
///
/// Values are handed to the tape as cheaply cloned `Rc`s; updating a
/// parameter copies-on-write, so frozen clones of the store (e.g. a rollout
/// baseline) keep their snapshot.
#[derive(Debug, Clone, Default)]
pub struct ParameterStore {
    params: Vec<Param>,
    by_name: HashMap<String, ParamId>,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Array2<f64>) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(Error::Parameter(format!("duplicate parameter name {name}")));
        }
        let id = self.params.len();
        let grad = Array2::zeros(value.raw_dim());
        self.params.push(Param {
            name: name.clone(),
            value: Rc::new(value),
            grad,
        });
        self.by_name.insert(name, id);
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id].name
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn value(&self, id: ParamId) -> &Array2<f64> {
        &self.params[id].value
    }

    pub(crate) fn value_rc(&self, id: ParamId) -> Rc<Array2<f64>> {
        Rc::clone(&self.params[id].value)
    }

    pub fn grad(&self, id: ParamId) -> &Array2<f64> {
        &self.params[id].grad
    }

    pub(crate) fn grad_add(&mut self, id: ParamId, delta: &Array2<f64>) {
        self.params[id].grad += delta;
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }

    /// Overwrites a parameter value (shape-checked).
    pub fn set_value(&mut self, id: ParamId, value: Array2<f64>) -> Result<()> {
        if value.raw_dim() != self.params[id].value.raw_dim() {
            return Err(Error::Shape(format!(
                "parameter {} expects shape {:?}",
                self.params[id].name,
                self.params[id].value.dim()
            )));
        }
        self.params[id].value = Rc::new(value);
        Ok(())
    }

    /// Gradient-descent step on every parameter: `value -= lr * grad`.
    pub fn descend(&mut self, lr: f64) {
        for p in &mut self.params {
            let v = Rc::make_mut(&mut p.value);
            v.zip_mut_with(&p.grad, |x, g| *x -= lr * g);
        }
    }

    /// Gradient-ascent step: `value += lr * grad`.
    pub fn ascend(&mut self, lr: f64) {
        self.descend(-lr);
    }

    /// All gradients flattened in parameter order; used by tests comparing
    /// gradient strategies.
    pub fn flat_grads(&self) -> Vec<f64> {
        self.params
            .iter()
            .flat_map(|p| p.grad.iter().copied())
            .collect()
    }

    /// All values flattened in parameter order.
    pub fn flat_values(&self) -> Vec<f64> {
        self.params
            .iter()
            .flat_map(|p| p.value.iter().copied())
            .collect()
    }

    /// Iterator over `(name, value)` pairs in insertion order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array2<f64>)> {
        self.params.iter().map(|p| (p.name.as_str(), &*p.value))
    }

    pub fn all_grads_finite(&self) -> bool {
        self.params
            .iter()
            .all(|p| p.grad.iter().all(|g| g.is_finite()))
    }
}
