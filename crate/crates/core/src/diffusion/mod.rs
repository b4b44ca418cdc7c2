//! Noise schedules, forward noising and the conditional reverse chain.
//!
//! The forward process corrupts a solution `x0` over `T` steps with per-step
//! variances `beta_t`; precomputing `alpha_t = 1 - beta_t` and the cumulative
//! product `alpha_bar_t` lets any timestep be sampled directly:
//!
//! ```text
//! x_t = sqrt(alpha_bar_t) * x0 + sqrt(1 - alpha_bar_t) * eps
//! ```
//!
//! The reverse chain starts from a standard Gaussian and repeatedly applies
//!
//! ```text
//! x_{t-1} = x_t / sqrt(alpha_t)
//!         - beta_t / sqrt(alpha_t * (1 - alpha_bar_t)) * eps_hat(x_t, t, g)
//!         + sqrt(beta_t) * noise
//! ```
//!
//! where `eps_hat` is the conditional noise predictor. Chain outputs are
//! pre-squash logit vectors; environments own the map into their feasible
//! sets.

mod denoiser;

pub use denoiser::{
    chain_backward, expert_loss, expert_loss_value, reverse_step, sample_chain,
    sample_chain_taped, time_embedding, time_embedding_dim, ChainTape, ConditionalDenoiser,
    ExpertExample,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleKind {
    /// `beta_t` interpolated linearly from `beta_min` to `beta_max`.
    Linear,
    /// `beta_t = 1 - exp(-beta_min/T - (beta_max-beta_min)(2t-1)/(2T^2))`,
    /// the discretized variance-preserving rate schedule. Bounds are rates,
    /// not variances, so `beta_max` may exceed 1; the induced per-step
    /// variances always stay in (0, 1).
    VariancePreserving,
}

/// Serializable description of a schedule, stored in checkpoint headers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSpec {
    pub kind: ScheduleKind,
    pub steps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
}

/// Per-step variance tables governing both chain directions.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    spec: ScheduleSpec,
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    /// Default for few-step chains: variance-preserving with rates 0.1..10.
    pub const DEFAULT_BETA_MIN: f64 = 0.1;
    pub const DEFAULT_BETA_MAX: f64 = 10.0;

    pub fn new(steps: usize, kind: ScheduleKind, beta_min: f64, beta_max: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::InvalidArgument("schedule needs T >= 1".into()));
        }
        if !(beta_min > 0.0 && beta_min <= beta_max) {
            return Err(Error::InvalidArgument(format!(
                "need 0 < beta_min <= beta_max, got ({beta_min}, {beta_max})"
            )));
        }
        if kind == ScheduleKind::Linear && beta_max >= 1.0 {
            return Err(Error::InvalidArgument(format!(
                "linear schedule needs beta_max < 1, got {beta_max}"
            )));
        }
        let t_total = steps as f64;
        let beta: Vec<f64> = (1..=steps)
            .map(|t| match kind {
                ScheduleKind::Linear => {
                    if steps == 1 {
                        beta_min
                    } else {
                        beta_min + (beta_max - beta_min) * (t - 1) as f64 / (t_total - 1.0)
                    }
                }
                ScheduleKind::VariancePreserving => {
                    let rate = beta_min / t_total
                        + (beta_max - beta_min) * (2 * t - 1) as f64 / (2.0 * t_total * t_total);
                    1.0 - (-rate).exp()
                }
            })
            .collect();
        let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bar = Vec::with_capacity(steps);
        let mut prod = 1.0;
        for a in &alpha {
            prod *= a;
            alpha_bar.push(prod);
        }
        let schedule = Self {
            spec: ScheduleSpec {
                kind,
                steps,
                beta_min,
                beta_max,
            },
            beta,
            alpha,
            alpha_bar,
        };
        schedule.check_invariants()?;
        Ok(schedule)
    }

    pub fn default_vp(steps: usize) -> Result<Self> {
        Self::new(
            steps,
            ScheduleKind::VariancePreserving,
            Self::DEFAULT_BETA_MIN,
            Self::DEFAULT_BETA_MAX,
        )
    }

    pub fn from_spec(spec: &ScheduleSpec) -> Result<Self> {
        Self::new(spec.steps, spec.kind, spec.beta_min, spec.beta_max)
    }

    fn check_invariants(&self) -> Result<()> {
        if self.beta.iter().any(|&b| !(0.0 < b && b < 1.0)) {
            return Err(Error::InvalidArgument(
                "schedule produced beta outside (0, 1)".into(),
            ));
        }
        if self.alpha_bar.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::InvalidArgument(
                "alpha_bar must be strictly decreasing".into(),
            ));
        }
        Ok(())
    }

    pub fn spec(&self) -> &ScheduleSpec {
        &self.spec
    }

    pub fn steps(&self) -> usize {
        self.spec.steps
    }

    fn check_t(&self, t: usize) -> Result<()> {
        if t < 1 || t > self.spec.steps {
            return Err(Error::TimestepOutOfRange {
                t,
                max: self.spec.steps,
            });
        }
        Ok(())
    }

    /// `beta_t`, 1-based.
    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t - 1]
    }

    /// `alpha_t = 1 - beta_t`, 1-based.
    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t - 1]
    }

    /// Cumulative product of alphas up to `t`, 1-based.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t - 1]
    }
}

/// Noises `x0` directly to timestep `t` given caller-supplied standard normal
/// noise: `sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) noise`.
pub fn forward_sample(
    schedule: &NoiseSchedule,
    x0: &[f64],
    t: usize,
    noise: &[f64],
) -> Result<Vec<f64>> {
    schedule.check_t(t)?;
    if x0.len() != noise.len() {
        return Err(Error::DimMismatch {
            context: "forward_sample noise",
            expected: x0.len(),
            got: noise.len(),
        });
    }
    let signal = schedule.alpha_bar(t).sqrt();
    let spread = (1.0 - schedule.alpha_bar(t)).sqrt();
    Ok(x0
        .iter()
        .zip(noise)
        .map(|(x, n)| signal * x + spread * n)
        .collect())
}
