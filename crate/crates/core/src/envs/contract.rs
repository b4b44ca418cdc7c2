//! Two-level contract design between users and service providers.
//!
//! The condition describes a population of providers at two complexity
//! levels; the solution is a pair of contracts `(L1, R1, L2, R2)` — a latency
//! target and a reward for each level. Latencies are carried as fractions of
//! the maximum expected latency so the squash box is state-independent.
//!
//! User utility per level:    `a1 * theta^b1 - a2 * (L/Lmax)^b2 - R`
//! Provider utility per level: `R - (Lmax - L) / L * theta`
//!
//! The reward is the proportion-weighted user utility when every provider
//! level clears its individual-rationality threshold and prefers its own
//! contract (incentive compatibility); otherwise a flat penalty.

use rand::{Rng, RngCore};

use super::grid::box_grid_best;
use super::{BanditEnv, Squash};

const LATENCY_FRAC_FLOOR: f64 = 0.1;
const REWARD_CAP: f64 = 50.0;

#[derive(Debug, Clone)]
pub struct ContractEnv {
    pub alpha1: f64,
    pub alpha2: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Individual-rationality threshold for provider utility.
    pub utility_threshold: f64,
    /// Flat penalty returned on any constraint violation.
    pub penalty: f64,
    /// Grid steps per solution dimension used by the oracle.
    pub oracle_steps: usize,
    squash: Squash,
}

impl Default for ContractEnv {
    fn default() -> Self {
        Self {
            alpha1: 30.0,
            alpha2: 5.0,
            beta1: 1.0,
            beta2: 1.0,
            utility_threshold: 0.0,
            penalty: 100.0,
            oracle_steps: 20,
            squash: Squash::Box {
                lo: vec![LATENCY_FRAC_FLOOR, 0.0, LATENCY_FRAC_FLOOR, 0.0],
                hi: vec![1.0, REWARD_CAP, 1.0, REWARD_CAP],
            },
        }
    }
}

/// Condition layout: `[n, l_max, p1, p2, theta1, theta2]`. The provider
/// count `n` rides along as an inert feature.
const COND_DIM: usize = 6;

impl ContractEnv {
    pub fn new() -> Self {
        Self::default()
    }

    fn level_params(cond: &[f64]) -> (f64, [f64; 2], [f64; 2]) {
        (cond[1], [cond[2], cond[3]], [cond[4], cond[5]])
    }

    fn user_utility(&self, theta: f64, latency_frac: f64, reward: f64) -> f64 {
        self.alpha1 * theta.powf(self.beta1) - self.alpha2 * latency_frac.powf(self.beta2) - reward
    }

    fn provider_utility(l_max: f64, latency_frac: f64, reward: f64, theta: f64) -> f64 {
        let latency = latency_frac * l_max;
        reward - (l_max - latency) / latency * theta
    }

    /// True when both IR constraints and both IC constraints hold.
    pub fn feasible(&self, cond: &[f64], solution: &[f64]) -> bool {
        let (l_max, _, thetas) = Self::level_params(cond);
        let own = [
            Self::provider_utility(l_max, solution[0], solution[1], thetas[0]),
            Self::provider_utility(l_max, solution[2], solution[3], thetas[1]),
        ];
        let crossed = [
            Self::provider_utility(l_max, solution[2], solution[3], thetas[0]),
            Self::provider_utility(l_max, solution[0], solution[1], thetas[1]),
        ];
        own.iter().all(|&u| u >= self.utility_threshold)
            && own[0] >= crossed[0]
            && own[1] >= crossed[1]
    }
}

impl BanditEnv for ContractEnv {
    fn condition_dim(&self) -> usize {
        COND_DIM
    }

    fn solution_dim(&self) -> usize {
        4
    }

    fn sample_condition(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        let n = rng.random_range(1.0..10.0);
        let l_max = rng.random_range(2.0..10.0);
        let p1 = rng.random_range(0.2..0.8);
        let theta1 = rng.random_range(0.5..1.5);
        let theta2 = theta1 + rng.random_range(0.5..1.5);
        vec![n, l_max, p1, 1.0 - p1, theta1, theta2]
    }

    fn squash_spec(&self) -> &Squash {
        &self.squash
    }

    fn evaluate(&self, cond: &[f64], solution: &[f64]) -> f64 {
        if !self.feasible(cond, solution) {
            return -self.penalty;
        }
        let (_, proportions, thetas) = Self::level_params(cond);
        proportions[0] * self.user_utility(thetas[0], solution[0], solution[1])
            + proportions[1] * self.user_utility(thetas[1], solution[2], solution[3])
    }

    /// Brute-force optimum over the discretized contract box.
    fn oracle(&self, cond: &[f64]) -> Option<(Vec<f64>, f64)> {
        let (lo, hi) = match &self.squash {
            Squash::Box { lo, hi } => (lo.clone(), hi.clone()),
            _ => unreachable!("contract squash is a box"),
        };
        Some(box_grid_best(&lo, &hi, self.oracle_steps, |p| {
            self.evaluate(cond, p)
        }))
    }
}
