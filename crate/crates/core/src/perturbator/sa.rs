use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Decay factor bringing the temperature from `t0` to exactly 1 after
/// `steps_t1` steps: `alpha = (1/t0)^(1/steps_t1)`.
pub fn sa_alpha(t0: f64, steps_t1: u32) -> Result<f64> {
    if !(t0 >= 1.0) {
        return Err(Error::Parameter(format!("initial temperature {t0} must be >= 1")));
    }
    if steps_t1 < 1 {
        return Err(Error::Parameter("steps_t1 must be >= 1".into()));
    }
    Ok((1.0 / t0).powf(1.0 / f64::from(steps_t1)))
}

/// Geometric cooling schedule with a step counter.
///
/// The temperature at step `t` is `t0 * alpha^t`; the first acceptance test
/// runs at `t = 0` (temperature `t0`) and the counter advances once per
/// perturbation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SaSchedule {
    pub t0: f64,
    pub alpha: f64,
    pub t: u32,
}

impl SaSchedule {
    /// Schedule whose alpha is derived from the steps needed to cool to 1.
    pub fn from_steps(t0: f64, steps_t1: u32) -> Result<Self> {
        Ok(SaSchedule { t0, alpha: sa_alpha(t0, steps_t1)?, t: 0 })
    }

    /// Schedule with an explicit alpha (e.g. the initial-perturbation phase,
    /// where alpha may be 0 so that only improvements survive after the
    /// first step).
    pub fn with_alpha(t0: f64, alpha: f64) -> Self {
        SaSchedule { t0, alpha, t: 0 }
    }

    pub fn temperature(&self) -> f64 {
        // 0^0 == 1 keeps t == 0 at the initial temperature even for alpha 0.
        self.t0 * self.alpha.powi(self.t as i32)
    }

    pub fn advance(&mut self) {
        self.t += 1;
    }
}

/// Metropolis-style acceptance: the candidate replaces the current solution
/// iff `cost_new < cost_old - temperature * ln(mu)` for a uniform draw
/// `mu` in (0, 1]. Improvements always pass; a Delta-worse candidate passes
/// with probability `exp(-Delta / temperature)`.
pub fn sa_accept(cost_new: f64, cost_old: f64, schedule: &SaSchedule, mu: f64) -> bool {
    debug_assert!(mu > 0.0 && mu <= 1.0);
    cost_new < cost_old - schedule.temperature() * mu.ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn alpha_closed_forms() {
        assert!((sa_alpha(100.0, 1).unwrap() - 0.01).abs() < 1e-15);
        assert!((sa_alpha(100.0, 2).unwrap() - 0.1).abs() < 1e-15);
        for k in [1, 3, 17] {
            assert_eq!(sa_alpha(1.0, k).unwrap(), 1.0);
        }
        assert!(sa_alpha(0.5, 1).is_err());
        assert!(sa_alpha(100.0, 0).is_err());
    }

    #[test]
    fn temperature_reaches_one_after_steps_t1() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            let t0 = rng.random_range(1.0..1000.0);
            let steps = rng.random_range(1..200u32);
            let mut sched = SaSchedule::from_steps(t0, steps).unwrap();
            sched.t = steps;
            assert!(
                (sched.temperature() - 1.0).abs() < 1e-9,
                "t0 {t0} steps {steps} -> {}",
                sched.temperature()
            );
            assert!((t0 * sched.alpha.powi(steps as i32) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn improvements_always_accepted() {
        let sched = SaSchedule::from_steps(100.0, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let mu = 1.0 - rng.random::<f64>();
            assert!(sa_accept(1.0, 1.5, &sched, mu));
        }
    }

    #[test]
    fn mu_one_accepts_only_strict_improvement() {
        let sched = SaSchedule::from_steps(100.0, 5).unwrap();
        assert!(sa_accept(0.9, 1.0, &sched, 1.0));
        assert!(!sa_accept(1.0, 1.0, &sched, 1.0));
        assert!(!sa_accept(1.1, 1.0, &sched, 1.0));
    }

    #[test]
    fn acceptance_rate_matches_the_closed_form() {
        // Delta = +0.1 at temperature 1: acceptance probability e^(-0.1).
        let mut sched = SaSchedule::from_steps(100.0, 1).unwrap();
        sched.t = 1; // temperature exactly 1
        assert!((sched.temperature() - 1.0).abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let trials = 100_000;
        let mut accepted = 0;
        for _ in 0..trials {
            let mu = 1.0 - rng.random::<f64>();
            if sa_accept(1.1, 1.0, &sched, mu) {
                accepted += 1;
            }
        }
        let rate = accepted as f64 / trials as f64;
        let expect = (-0.1f64).exp();
        assert!(
            (rate - expect).abs() < 0.005,
            "acceptance rate {rate} vs {expect}"
        );
    }

    #[test]
    fn zero_alpha_is_hot_once_then_improvement_only() {
        let mut sched = SaSchedule::with_alpha(100.0, 0.0);
        assert_eq!(sched.temperature(), 100.0); // first test runs hot
        sched.advance();
        assert_eq!(sched.temperature(), 0.0);
        assert!(!sa_accept(1.0 + 1e-9, 1.0, &sched, 0.5));
        assert!(sa_accept(1.0 - 1e-9, 1.0, &sched, 0.5));
    }
}
