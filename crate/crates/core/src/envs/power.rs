//! Sum-rate power allocation over orthogonal channels, with the
//! water-filling optimum as oracle.

use rand::{Rng, RngCore};

use super::{BanditEnv, Squash};
use crate::error::{Error, Result};

/// Exact solution of `max sum log2(1 + g_m p_m)` subject to `p_m >= 0`,
/// `sum p_m = budget`: powers `p_m = max(0, mu - 1/g_m)` with the water
/// level `mu` fixed by iterative channel exclusion until every active
/// channel gets nonnegative power. Returns the allocation and its rate.
pub fn water_filling(gains: &[f64], budget: f64) -> (Vec<f64>, f64) {
    assert!(!gains.is_empty() && budget > 0.0);
    assert!(gains.iter().all(|&g| g > 0.0));
    let inverse: Vec<f64> = gains.iter().map(|g| 1.0 / g).collect();
    let mut active: Vec<bool> = vec![true; gains.len()];
    loop {
        let count = active.iter().filter(|&&a| a).count();
        let inv_sum: f64 = inverse
            .iter()
            .zip(&active)
            .filter(|(_, &a)| a)
            .map(|(v, _)| v)
            .sum();
        let level = (budget + inv_sum) / count as f64;
        let mut excluded = false;
        for (i, &a) in active.clone().iter().enumerate() {
            if a && level < inverse[i] {
                active[i] = false;
                excluded = true;
            }
        }
        if !excluded {
            let allocation: Vec<f64> = inverse
                .iter()
                .zip(&active)
                .map(|(&inv, &a)| if a { level - inv } else { 0.0 })
                .collect();
            let rate = sum_rate(gains, &allocation);
            return (allocation, rate);
        }
    }
}

fn sum_rate(gains: &[f64], powers: &[f64]) -> f64 {
    gains
        .iter()
        .zip(powers)
        .map(|(g, p)| (1.0 + g * p).log2())
        .sum()
}

/// Power-allocation bandit: gains drawn uniformly per channel, solutions are
/// softmax shares of the power budget, reward is the sum rate with the noise
/// floor normalized to 1.
#[derive(Debug, Clone)]
pub struct PowerEnv {
    channels: usize,
    gain_min: f64,
    gain_max: f64,
    budget: f64,
    squash: Squash,
}

impl PowerEnv {
    pub fn new(channels: usize, gain_min: f64, gain_max: f64, budget: f64) -> Result<Self> {
        if channels == 0 {
            return Err(Error::InvalidArgument("need at least one channel".into()));
        }
        if !(gain_min > 0.0 && gain_min <= gain_max) {
            return Err(Error::InvalidArgument(format!(
                "need 0 < gain_min <= gain_max, got ({gain_min}, {gain_max})"
            )));
        }
        if budget <= 0.0 {
            return Err(Error::InvalidArgument("power budget must be > 0".into()));
        }
        Ok(Self {
            channels,
            gain_min,
            gain_max,
            budget,
            squash: Squash::Simplex { budget },
        })
    }

    pub fn budget(&self) -> f64 {
        self.budget
    }
}

impl BanditEnv for PowerEnv {
    fn condition_dim(&self) -> usize {
        self.channels
    }

    fn solution_dim(&self) -> usize {
        self.channels
    }

    fn sample_condition(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        (0..self.channels)
            .map(|_| rng.random_range(self.gain_min..self.gain_max))
            .collect()
    }

    fn squash_spec(&self) -> &Squash {
        &self.squash
    }

    fn evaluate(&self, cond: &[f64], solution: &[f64]) -> f64 {
        sum_rate(cond, solution)
    }

    fn oracle(&self, cond: &[f64]) -> Option<(Vec<f64>, f64)> {
        Some(water_filling(cond, self.budget))
    }
}
