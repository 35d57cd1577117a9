use ndarray::Array2;
use rand::Rng;

/// Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) initialization; keeps initial
/// logits O(1).
pub fn uniform_init(rng: &mut impl Rng, fan_in: usize, rows: usize, cols: usize) -> Array2<f64> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-bound..bound))
}
