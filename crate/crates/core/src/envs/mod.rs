//! Benchmark problems with exact oracles and naive baselines.
//!
//! Two environment contracts:
//!
//! - [`BanditEnv`]: one-shot allocation problems. The environment samples a
//!   condition vector, owns the squash from unconstrained chain logits into
//!   its feasible set, scores solutions, and may expose an exact oracle.
//! - [`MdpEnv`]: sequential decision problems with reset/step dynamics.
//!
//! All environments are pure given their RNG stream: the same seed yields
//! the same state sequence, and `evaluate` never mutates anything.

mod bandwidth;
mod cartpole;
mod contract;
pub mod grid;
mod power;
mod provider;

pub use bandwidth::BandwidthEnv;
pub use cartpole::CartPoleEnv;
pub use contract::ContractEnv;
pub use power::{water_filling, PowerEnv};
pub use provider::{greedy_provider_action, provider_best_return_exhaustive, ProviderEnv};

use rand::{Rng, RngCore};

use crate::error::Result;

/// Pre-squash logits are clamped to this magnitude before squashing so that
/// softmax and affine maps cannot overflow.
pub const LOGIT_CLAMP: f64 = 20.0;

fn clamp_logit(z: f64) -> f64 {
    z.clamp(-LOGIT_CLAMP, LOGIT_CLAMP)
}

/// Environment-owned map from unconstrained chain output to the feasible
/// solution set. Differentiable (piecewise) so actor gradients can flow
/// through it.
#[derive(Debug, Clone, PartialEq)]
pub enum Squash {
    /// `softmax(logits) * budget`: nonnegative shares summing to the budget.
    Simplex { budget: f64 },
    /// Per-component affine map of the clamped logit range onto `[lo, hi]`.
    Box { lo: Vec<f64>, hi: Vec<f64> },
}

impl Squash {
    /// Centered-clamped logits for the simplex map. Softmax is invariant to
    /// a common shift, so centering changes nothing where the clamp is
    /// inactive while keeping the unanchored common mode of chain outputs
    /// from ratcheting every component into the clamp (which would freeze
    /// the allocation at uniform with no way back).
    fn simplex_weights(logits: &[f64]) -> Vec<f64> {
        let mean = logits.iter().sum::<f64>() / logits.len() as f64;
        let centered: Vec<f64> = logits.iter().map(|&z| clamp_logit(z - mean)).collect();
        let max = centered.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = centered.iter().map(|z| (z - max).exp()).collect();
        let total: f64 = weights.iter().sum();
        weights.iter().map(|w| w / total).collect()
    }

    pub fn apply(&self, logits: &[f64]) -> Vec<f64> {
        match self {
            Squash::Simplex { budget } => Self::simplex_weights(logits)
                .iter()
                .map(|w| budget * w)
                .collect(),
            Squash::Box { lo, hi } => logits
                .iter()
                .zip(lo.iter().zip(hi))
                .map(|(&z, (&l, &h))| l + (clamp_logit(z) + LOGIT_CLAMP) / (2.0 * LOGIT_CLAMP) * (h - l))
                .collect(),
        }
    }

    /// Vector-Jacobian product: given dLoss/dSolution, returns dLoss/dLogits.
    /// The clamp is straight-through: saturated components keep their slope
    /// so a solution pinned at a bound can be pulled back into the interior.
    pub fn vjp(&self, logits: &[f64], upstream: &[f64]) -> Vec<f64> {
        match self {
            Squash::Simplex { budget } => {
                let probs = Self::simplex_weights(logits);
                let dot: f64 = upstream.iter().zip(&probs).map(|(u, s)| u * s).sum();
                probs
                    .iter()
                    .zip(upstream)
                    .map(|(&s, &u)| budget * s * (u - dot))
                    .collect()
            }
            Squash::Box { lo, hi } => lo
                .iter()
                .zip(hi)
                .zip(upstream)
                .map(|((&l, &h), &u)| u * (h - l) / (2.0 * LOGIT_CLAMP))
                .collect(),
        }
    }

    /// A logit vector that squashes (approximately) onto `solution`, used to
    /// lift expert labels into the chain's pre-squash space. Zero-probability
    /// simplex components saturate at the clamp bound.
    pub fn preimage(&self, solution: &[f64]) -> Vec<f64> {
        match self {
            Squash::Simplex { budget } => solution
                .iter()
                .map(|&p| (p / budget).max(f64::MIN_POSITIVE).ln().max(-LOGIT_CLAMP))
                .collect(),
            Squash::Box { lo, hi } => solution
                .iter()
                .zip(lo.iter().zip(hi))
                .map(|(&p, (&l, &h))| {
                    if h > l {
                        ((p - l) / (h - l)) * 2.0 * LOGIT_CLAMP - LOGIT_CLAMP
                    } else {
                        0.0
                    }
                })
                .collect(),
        }
    }
}

/// One-shot allocation problem: condition sampling plus reward evaluation.
pub trait BanditEnv: Sync {
    /// Condition vector length.
    fn condition_dim(&self) -> usize;
    /// Solution vector length.
    fn solution_dim(&self) -> usize;
    /// Draws a fresh environment condition.
    fn sample_condition(&self, rng: &mut dyn RngCore) -> Vec<f64>;
    /// The environment's feasibility squash.
    fn squash_spec(&self) -> &Squash;
    /// Scores a feasible solution under a condition. Pure.
    fn evaluate(&self, cond: &[f64], solution: &[f64]) -> f64;
    /// Exact optimum, when the environment has one.
    fn oracle(&self, cond: &[f64]) -> Option<(Vec<f64>, f64)> {
        let _ = cond;
        None
    }

    fn squash(&self, logits: &[f64]) -> Vec<f64> {
        self.squash_spec().apply(logits)
    }
}

/// Outcome of one MDP step. `terminal` means the state itself ended the
/// episode (and must not be bootstrapped); `truncated` means the horizon ran
/// out (bootstrapping is still valid).
#[derive(Debug, Clone)]
pub struct Step {
    pub state: Vec<f64>,
    pub reward: f64,
    pub terminal: bool,
    pub truncated: bool,
}

/// Sequential decision problem with reset/step dynamics. Instances are
/// single-owner per episode.
pub trait MdpEnv {
    fn state_dim(&self) -> usize;
    fn action_count(&self) -> usize;
    fn reset(&mut self, rng: &mut dyn RngCore) -> Vec<f64>;
    fn step(&mut self, action: usize, rng: &mut dyn RngCore) -> Result<Step>;
}

/// Uniform feasible split: all-equal logits through the environment squash.
pub fn average_allocation(env: &dyn BanditEnv) -> Vec<f64> {
    env.squash(&vec![0.0; env.solution_dim()])
}

/// Uniform draw from the feasible set: a flat-Dirichlet point on the simplex,
/// or a uniform point in the box.
pub fn random_allocation(env: &dyn BanditEnv, rng: &mut dyn RngCore) -> Vec<f64> {
    match env.squash_spec() {
        Squash::Simplex { budget } => {
            let draws: Vec<f64> = (0..env.solution_dim())
                .map(|_| -rng.random_range(f64::MIN_POSITIVE..1.0f64).ln())
                .collect();
            let total: f64 = draws.iter().sum();
            draws.iter().map(|e| budget * e / total).collect()
        }
        Squash::Box { lo, hi } => lo
            .iter()
            .zip(hi)
            .map(|(&l, &h)| if h > l { rng.random_range(l..h) } else { l })
            .collect(),
    }
}

#[cfg(test)]
mod tests;
