//! Service-provider selection MDP: route arriving tasks to one of K
//! providers with distinct qualities and limited serving capacity.
//!
//! Assigning a task of size `s` to provider `k` carrying load `w` yields
//! `quality_k * ln(1 + s / (w + s))` — diminishing returns as the provider
//! congests. Overflowing a provider's capacity crashes it: its running tasks
//! terminate (load resets), the incoming task is lost and a flat penalty is
//! paid. Providers work their queues down by a fixed fraction of capacity
//! per step.

use rand::{Rng, RngCore};

use super::{MdpEnv, Step};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
enum TaskSource {
    Uniform { min: f64, max: f64 },
    Fixed(Vec<f64>),
}

#[derive(Debug, Clone)]
pub struct ProviderEnv {
    capacities: Vec<f64>,
    qualities: Vec<f64>,
    horizon: usize,
    crash_penalty: f64,
    /// Fraction of capacity each provider clears per step.
    release_frac: f64,
    tasks: TaskSource,
    loads: Vec<f64>,
    pending_task: f64,
    steps_done: usize,
}

impl ProviderEnv {
    pub fn new(capacities: Vec<f64>, qualities: Vec<f64>, horizon: usize) -> Result<Self> {
        if capacities.len() < 2 {
            return Err(Error::InvalidArgument(
                "need at least two providers".into(),
            ));
        }
        if capacities.len() != qualities.len() {
            return Err(Error::DimMismatch {
                context: "provider qualities",
                expected: capacities.len(),
                got: qualities.len(),
            });
        }
        if capacities.iter().chain(&qualities).any(|&v| v <= 0.0) || horizon == 0 {
            return Err(Error::InvalidArgument(
                "capacities, qualities and horizon must be positive".into(),
            ));
        }
        let k = capacities.len();
        Ok(Self {
            capacities,
            qualities,
            horizon,
            crash_penalty: 5.0,
            release_frac: 0.125,
            tasks: TaskSource::Uniform { min: 0.5, max: 2.0 },
            loads: vec![0.0; k],
            pending_task: 0.0,
            steps_done: 0,
        })
    }

    /// Deterministic variant with a preset task sequence, used by exhaustive
    /// search oracles. The horizon is the sequence length.
    pub fn with_task_sequence(
        capacities: Vec<f64>,
        qualities: Vec<f64>,
        tasks: Vec<f64>,
    ) -> Result<Self> {
        let mut env = Self::new(capacities, qualities, tasks.len())?;
        env.tasks = TaskSource::Fixed(tasks);
        Ok(env)
    }

    fn observe(&self) -> Vec<f64> {
        let mut state: Vec<f64> = self
            .capacities
            .iter()
            .zip(&self.loads)
            .map(|(c, w)| c - w)
            .collect();
        state.push(self.pending_task);
        state
    }

    fn draw_task(&self, rng: &mut dyn RngCore) -> f64 {
        match &self.tasks {
            TaskSource::Uniform { min, max } => rng.random_range(*min..*max),
            TaskSource::Fixed(seq) => seq[self.steps_done.min(seq.len() - 1)],
        }
    }

    /// Immediate reward of assigning the pending task to `action` in the
    /// current state, as the environment itself would score it.
    pub fn immediate_reward(&self, action: usize) -> f64 {
        let size = self.pending_task;
        if self.loads[action] + size > self.capacities[action] {
            -self.crash_penalty
        } else {
            self.qualities[action] * (1.0 + size / (self.loads[action] + size)).ln()
        }
    }
}

impl MdpEnv for ProviderEnv {
    fn state_dim(&self) -> usize {
        self.capacities.len() + 1
    }

    fn action_count(&self) -> usize {
        self.capacities.len()
    }

    fn reset(&mut self, rng: &mut dyn RngCore) -> Vec<f64> {
        self.loads.iter_mut().for_each(|w| *w = 0.0);
        self.steps_done = 0;
        self.pending_task = self.draw_task(rng);
        self.observe()
    }

    fn step(&mut self, action: usize, rng: &mut dyn RngCore) -> Result<Step> {
        if action >= self.capacities.len() {
            return Err(Error::Env(format!(
                "action {action} out of range for {} providers",
                self.capacities.len()
            )));
        }
        let reward = self.immediate_reward(action);
        let size = self.pending_task;
        if self.loads[action] + size > self.capacities[action] {
            self.loads[action] = 0.0;
        } else {
            self.loads[action] += size;
        }
        for (load, cap) in self.loads.iter_mut().zip(&self.capacities) {
            *load = (*load - cap * self.release_frac).max(0.0);
        }
        self.steps_done += 1;
        let truncated = self.steps_done >= self.horizon;
        self.pending_task = self.draw_task(rng);
        Ok(Step {
            state: self.observe(),
            reward,
            terminal: false,
            truncated,
        })
    }
}

/// Myopic baseline: the provider with the highest immediate reward, ties to
/// the lowest index.
pub fn greedy_provider_action(env: &ProviderEnv) -> usize {
    (0..env.action_count())
        .map(|a| (a, env.immediate_reward(a)))
        .fold((0usize, f64::NEG_INFINITY), |best, cur| {
            if cur.1 > best.1 {
                cur
            } else {
                best
            }
        })
        .0
}

/// Exhaustive action-tree search over a fixed-task-sequence instance:
/// the best achievable total reward. Exponential in the horizon; for small
/// test instances only.
pub fn provider_best_return_exhaustive(env: &ProviderEnv) -> f64 {
    fn recurse(env: &ProviderEnv, rng: &mut dyn RngCore) -> f64 {
        if env.steps_done >= env.horizon {
            return 0.0;
        }
        (0..env.action_count())
            .map(|a| {
                let mut branch = env.clone();
                let step = branch.step(a, rng).expect("valid action");
                step.reward + recurse(&branch, rng)
            })
            .fold(f64::NEG_INFINITY, f64::max)
    }
    assert!(
        matches!(env.tasks, TaskSource::Fixed(_)),
        "exhaustive search needs a preset task sequence"
    );
    let mut env = env.clone();
    let mut rng = crate::rng::substream(0, "unused");
    env.reset(&mut rng);
    recurse(&env, &mut rng)
}
