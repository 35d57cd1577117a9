use ndarray::Array2;

use crate::autodiff::params::ParameterStore;
use crate::autodiff::tape::{Tape, Value};
use crate::error::Result;

/// Compares analytic gradients against central finite differences.
///
/// `f` must be a deterministic scalar function of the store's parameters.
/// Returns the worst relative error over all parameter coordinates, with
/// denominator `|analytic| + |numeric| + 1e-12`.
pub fn grad_check<F>(tape: &Tape, store: &mut ParameterStore, f: F, step: f64) -> Result<f64>
where
    F: Fn(&Tape, &ParameterStore) -> Result<Value>,
{
    store.zero_grads();
    let root = tape.record_scope(true, || f(tape, store))?;
    tape.backward(&root, store)?;
    let analytic: Vec<Array2<f64>> = (0..store.len()).map(|id| store.grad(id).clone()).collect();

    let mut worst = 0.0f64;
    for id in 0..store.len() {
        let base = store.value(id).clone();
        let (rows, cols) = base.dim();
        for r in 0..rows {
            for c in 0..cols {
                let x = base[[r, c]];

                let mut plus = base.clone();
                plus[[r, c]] = x + step;
                store.set_value(id, plus)?;
                let up = tape.record_scope(false, || f(tape, store))?.scalar();

                let mut minus = base.clone();
                minus[[r, c]] = x - step;
                store.set_value(id, minus)?;
                let down = tape.record_scope(false, || f(tape, store))?.scalar();

                let numeric = (up - down) / (2.0 * step);
                let a = analytic[id][[r, c]];
                let err = (a - numeric).abs() / (a.abs() + numeric.abs() + 1e-12);
                worst = worst.max(err);
            }
        }
        store.set_value(id, base)?;
    }
    Ok(worst)
}

/// Directional finite-difference check for composite functions.
///
/// Per-coordinate central differences lose all accuracy on coordinates whose
/// gradient magnitude sits near the rounding floor of `f` itself; projecting
/// onto a random unit direction compares a well-scaled scalar instead.
/// Returns the relative error between `grad . v` and the central difference
/// of `f` along `v`.
pub fn grad_check_directional<F>(
    tape: &Tape,
    store: &mut ParameterStore,
    f: F,
    step: f64,
    direction_seed: u64,
) -> Result<f64>
where
    F: Fn(&Tape, &ParameterStore) -> Result<Value>,
{
    use rand::{Rng, SeedableRng};

    store.zero_grads();
    let root = tape.record_scope(true, || f(tape, store))?;
    tape.backward(&root, store)?;
    let grads: Vec<Array2<f64>> = (0..store.len()).map(|id| store.grad(id).clone()).collect();

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(direction_seed);
    let mut dirs: Vec<Array2<f64>> = (0..store.len())
        .map(|id| {
            let (r, c) = store.value(id).dim();
            Array2::from_shape_fn((r, c), |_| rng.random_range(-1.0..1.0))
        })
        .collect();
    let norm: f64 = dirs
        .iter()
        .map(|d| d.iter().map(|x| x * x).sum::<f64>())
        .sum::<f64>()
        .sqrt();
    for d in &mut dirs {
        *d /= norm;
    }

    let analytic: f64 = grads
        .iter()
        .zip(&dirs)
        .map(|(g, d)| (g * d).sum())
        .sum();

    let base: Vec<Array2<f64>> = (0..store.len()).map(|id| store.value(id).clone()).collect();
    let eval_at = |offset: f64, store: &mut ParameterStore| -> Result<f64> {
        for id in 0..store.len() {
            store.set_value(id, &base[id] + &(&dirs[id] * offset))?;
        }
        Ok(tape.record_scope(false, || f(tape, store))?.scalar())
    };
    let up = eval_at(step, store)?;
    let down = eval_at(-step, store)?;
    for id in 0..store.len() {
        store.set_value(id, base[id].clone())?;
    }
    let numeric = (up - down) / (2.0 * step);
    Ok((analytic - numeric).abs() / (analytic.abs() + numeric.abs() + 1e-12))
}
