use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Euclidean distance between two points.
pub fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    (dx * dx + dy * dy).sqrt()
}

/// A CVRP instance: a depot, customer locations in the unit square, integer
/// demands and a single vehicle capacity.
///
/// Customers are indexed `0..n` internally; serialized formats use 1-based
/// customer indices with the depot as node 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvrpInstance {
    pub id: String,
    pub capacity: u32,
    pub depot: [f64; 2],
    pub coords: Vec<[f64; 2]>,
    pub demands: Vec<u32>,
}

impl CvrpInstance {
    /// Builds an instance, checking the type invariants.
    pub fn new(
        id: impl Into<String>,
        capacity: u32,
        depot: [f64; 2],
        coords: Vec<[f64; 2]>,
        demands: Vec<u32>,
    ) -> Result<Self> {
        let inst = CvrpInstance {
            id: id.into(),
            capacity,
            depot,
            coords,
            demands,
        };
        inst.check()?;
        Ok(inst)
    }

    fn check(&self) -> Result<()> {
        if self.coords.len() != self.demands.len() {
            return Err(Error::Structural(format!(
                "instance {}: {} coords but {} demands",
                self.id,
                self.coords.len(),
                self.demands.len()
            )));
        }
        let in_unit = |p: [f64; 2]| p.iter().all(|v| (0.0..=1.0).contains(v));
        if !in_unit(self.depot) || !self.coords.iter().all(|&p| in_unit(p)) {
            return Err(Error::Structural(format!(
                "instance {}: coordinates outside the unit square",
                self.id
            )));
        }
        for (c, &d) in self.demands.iter().enumerate() {
            if d < 1 || d > self.capacity {
                return Err(Error::Structural(format!(
                    "instance {}: demand {} of customer {} outside [1, {}]",
                    self.id, d, c, self.capacity
                )));
            }
        }
        Ok(())
    }

    /// Number of customers.
    pub fn n(&self) -> usize {
        self.coords.len()
    }

    pub fn demand(&self, customer: usize) -> u32 {
        self.demands[customer]
    }

    /// Distance between two customers.
    pub fn d(&self, a: usize, b: usize) -> f64 {
        dist(self.coords[a], self.coords[b])
    }

    /// Distance from the depot to a customer.
    pub fn d_depot(&self, customer: usize) -> f64 {
        dist(self.depot, self.coords[customer])
    }
}

/// Samples an instance with coordinates i.i.d. uniform on the unit square and
/// demands i.i.d. uniform integers in `1..=9`. Deterministic for a fixed seed.
pub fn sample_instance(n: usize, capacity: u32, seed: u64) -> Result<CvrpInstance> {
    if n < 1 {
        return Err(Error::Parameter("customer count must be >= 1".into()));
    }
    if capacity < 9 {
        return Err(Error::Parameter(format!(
            "capacity must be >= 9 so every sampled demand fits, got {capacity}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let depot = [rng.random::<f64>(), rng.random::<f64>()];
    let coords: Vec<[f64; 2]> = (0..n)
        .map(|_| [rng.random::<f64>(), rng.random::<f64>()])
        .collect();
    let demands: Vec<u32> = (0..n).map(|_| rng.random_range(1..=9)).collect();
    CvrpInstance::new(format!("cvrp{n}-s{seed}"), capacity, depot, coords, demands)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sampling_is_deterministic() {
        let a = sample_instance(20, 30, 7).unwrap();
        let b = sample_instance(20, 30, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.n(), 20);
        assert_eq!(a.capacity, 30);
    }

    #[test]
    fn sampling_rejects_bad_parameters() {
        assert!(sample_instance(0, 30, 1).is_err());
        assert!(sample_instance(5, 8, 1).is_err());
    }

    #[test]
    fn demand_frequencies_are_uniform() {
        // Law-of-large-numbers check over 10^4 demands.
        let mut counts = [0usize; 10];
        let mut total = 0usize;
        for seed in 0..500 {
            let inst = sample_instance(20, 30, seed).unwrap();
            for &d in &inst.demands {
                counts[d as usize] += 1;
                total += 1;
            }
        }
        assert_eq!(total, 10_000);
        for d in 1..=9 {
            let freq = counts[d] as f64 / total as f64;
            assert!(
                (freq - 1.0 / 9.0).abs() < 0.02,
                "demand {d} frequency {freq} off uniform"
            );
        }
    }

    #[test]
    fn invalid_demand_is_rejected() {
        let err = CvrpInstance::new("x", 10, [0.0, 0.0], vec![[0.5, 0.5]], vec![11]);
        assert!(err.is_err());
    }
}
