//! Bandwidth allocation across the three transmission hops of a semantic
//! content pipeline (semantic upload, inference result, rendered output).
//!
//! The solution splits the total bandwidth into three shares; each hop
//! carries a payload at the Shannon rate `W * log2(1 + snr)`. Utility is the
//! sum of log-rates (subjective experience follows a logarithmic law), paid
//! only when all compute plus transmission time meets the deadline.

use rand::{Rng, RngCore};

use super::grid::simplex_grid_best;
use super::{BanditEnv, Squash};

#[derive(Debug, Clone)]
pub struct BandwidthEnv {
    pub total_bandwidth: f64,
    pub payload_range: (f64, f64),
    pub snr_range: (f64, f64),
    pub compute_range: (f64, f64),
    /// Deadline slack relative to the fastest possible transmission time;
    /// above 1 a feasible allocation always exists, and values near 1 make
    /// the deadline bind so the optimum depends on the condition.
    pub slack_range: (f64, f64),
    pub penalty: f64,
    /// Simplex resolution of the oracle: shares in multiples of 1/steps.
    pub oracle_steps: usize,
    squash: Squash,
}

impl Default for BandwidthEnv {
    fn default() -> Self {
        let total_bandwidth = 10.0;
        Self {
            total_bandwidth,
            payload_range: (1.0, 10.0),
            snr_range: (1.0, 15.0),
            compute_range: (0.1, 0.5),
            slack_range: (1.02, 1.2),
            penalty: 100.0,
            oracle_steps: 200,
            squash: Squash::Simplex {
                budget: total_bandwidth,
            },
        }
    }
}

/// Condition layout: `[payload x3, snr x3, compute x3, deadline]`.
const COND_DIM: usize = 10;
const HOPS: usize = 3;

impl BandwidthEnv {
    pub fn new() -> Self {
        Self::default()
    }

    fn spectral_efficiency(snr: f64) -> f64 {
        (1.0 + snr).log2()
    }

    /// Total time of an allocation: all compute plus per-hop payload over
    /// achieved rate.
    fn total_time(cond: &[f64], shares: &[f64]) -> f64 {
        let compute: f64 = cond[6..9].iter().sum();
        let transmission: f64 = (0..HOPS)
            .map(|i| cond[i] / (shares[i] * Self::spectral_efficiency(cond[3 + i])))
            .sum();
        compute + transmission
    }
}

impl BanditEnv for BandwidthEnv {
    fn condition_dim(&self) -> usize {
        COND_DIM
    }

    fn solution_dim(&self) -> usize {
        HOPS
    }

    fn sample_condition(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        let mut cond = Vec::with_capacity(COND_DIM);
        for _ in 0..HOPS {
            cond.push(rng.random_range(self.payload_range.0..self.payload_range.1));
        }
        for _ in 0..HOPS {
            cond.push(rng.random_range(self.snr_range.0..self.snr_range.1));
        }
        let mut compute_total = 0.0;
        for _ in 0..HOPS {
            let c = rng.random_range(self.compute_range.0..self.compute_range.1);
            compute_total += c;
            cond.push(c);
        }
        // Fastest possible transmission time over the simplex: allocating
        // W_i proportional to sqrt(payload_i / efficiency_i) minimizes the
        // total, giving (sum sqrt(c_i))^2 / W_max for c_i = payload/eff.
        let root_sum: f64 = (0..HOPS)
            .map(|i| (cond[i] / Self::spectral_efficiency(cond[3 + i])).sqrt())
            .sum();
        let fastest = root_sum * root_sum / self.total_bandwidth;
        let slack = rng.random_range(self.slack_range.0..self.slack_range.1);
        cond.push(compute_total + fastest * slack);
        cond
    }

    fn squash_spec(&self) -> &Squash {
        &self.squash
    }

    fn evaluate(&self, cond: &[f64], shares: &[f64]) -> f64 {
        let deadline = cond[9];
        if Self::total_time(cond, shares) > deadline {
            return -self.penalty;
        }
        (0..HOPS)
            .map(|i| (shares[i] * Self::spectral_efficiency(cond[3 + i])).ln())
            .sum()
    }

    fn oracle(&self, cond: &[f64]) -> Option<(Vec<f64>, f64)> {
        Some(simplex_grid_best(
            HOPS,
            self.oracle_steps,
            self.total_bandwidth,
            |shares| self.evaluate(cond, shares),
        ))
    }
}
