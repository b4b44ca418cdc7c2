//! Training the conditional denoiser on allocation problems.
//!
//! Two regimes:
//!
//! - **Online, no expert data**: a solution evaluator `Q(g, p)` is regressed
//!   onto observed rewards (critic loss), while the denoiser is updated to
//!   emit solutions the evaluator scores highly (actor loss). The actor
//!   gradient flows through the whole reverse chain and the environment
//!   squash; the evaluator's parameters stay frozen during actor updates and
//!   vice versa.
//! - **Expert datasets**: plain noise-prediction regression onto labelled
//!   optimal solutions (see [`crate::diffusion::expert_loss`]).
//!
//! Inference runs the chain without exploration noise and squashes.

mod replay;

pub use replay::{BanditExperience, BanditReplay};

use rand::Rng;
use rand_distr::StandardNormal;

use crate::diffusion::{
    chain_backward, expert_loss, sample_chain, sample_chain_taped, ConditionalDenoiser,
    ExpertExample, NoiseSchedule, ScheduleKind,
};
use crate::envs::{BanditEnv, Squash};
use crate::error::{Error, Result};
use crate::exec;
use crate::harness::MetricsRow;
use crate::nn::{Adam, Grads, Mlp, GRAD_CLIP_NORM};
use crate::rng::{derive_seed, substream, substream_indexed};

/// Learned value map from (condition, solution) to expected objective value.
///
/// Inputs are standardized by fixed per-dimension scales chosen at
/// construction; the value surface near the optimum is shallow relative to
/// the reward magnitude, and a well-conditioned first layer is what lets the
/// regression resolve it.
#[derive(Debug, Clone)]
pub struct SolutionEvaluator {
    net: Mlp,
    cond_dim: usize,
    solution_dim: usize,
    input_scale: Vec<f64>,
}

impl SolutionEvaluator {
    pub fn new(net: Mlp, cond_dim: usize, solution_dim: usize) -> Result<Self> {
        if net.in_dim() != cond_dim + solution_dim {
            return Err(Error::DimMismatch {
                context: "evaluator input",
                expected: cond_dim + solution_dim,
                got: net.in_dim(),
            });
        }
        if net.out_dim() != 1 {
            return Err(Error::DimMismatch {
                context: "evaluator output",
                expected: 1,
                got: net.out_dim(),
            });
        }
        Ok(Self {
            net,
            cond_dim,
            solution_dim,
            input_scale: vec![1.0; cond_dim + solution_dim],
        })
    }

    pub fn init<R: Rng + ?Sized>(
        cond_dim: usize,
        solution_dim: usize,
        hidden: &[usize],
        rng: &mut R,
    ) -> Result<Self> {
        let mut dims = vec![cond_dim + solution_dim];
        dims.extend_from_slice(hidden);
        dims.push(1);
        Self::new(Mlp::glorot_tanh(&dims, rng)?, cond_dim, solution_dim)
    }

    /// Fixed per-dimension input scales (conditions first, then solution).
    pub fn with_input_scale(mut self, scale: Vec<f64>) -> Result<Self> {
        if scale.len() != self.cond_dim + self.solution_dim {
            return Err(Error::DimMismatch {
                context: "evaluator input scale",
                expected: self.cond_dim + self.solution_dim,
                got: scale.len(),
            });
        }
        if scale.iter().any(|s| !s.is_finite() || *s <= 0.0) {
            return Err(Error::InvalidArgument(
                "input scales must be positive and finite".into(),
            ));
        }
        self.input_scale = scale;
        Ok(self)
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut Mlp {
        &mut self.net
    }

    fn input(&self, cond: &[f64], solution: &[f64]) -> Vec<f64> {
        cond.iter()
            .chain(solution)
            .zip(&self.input_scale)
            .map(|(x, s)| x * s)
            .collect()
    }
}

/// What the actor update needs from a critic: a value and its gradient with
/// respect to the solution. Implemented by [`SolutionEvaluator`] and by
/// analytic stubs in tests.
pub trait SolutionCritic: Sync {
    fn value(&self, cond: &[f64], solution: &[f64]) -> f64;
    fn value_and_solution_grad(&self, cond: &[f64], solution: &[f64]) -> (f64, Vec<f64>);
}

impl SolutionCritic for SolutionEvaluator {
    fn value(&self, cond: &[f64], solution: &[f64]) -> f64 {
        self.net.forward(&self.input(cond, solution)).expect("dims checked")[0]
    }

    fn value_and_solution_grad(&self, cond: &[f64], solution: &[f64]) -> (f64, Vec<f64>) {
        let (out, tape) = self
            .net
            .forward_taped(&self.input(cond, solution))
            .expect("dims checked");
        let (_, input_grad) = self.net.backward(&tape, &[1.0]).expect("dims checked");
        let grad = input_grad[self.cond_dim..]
            .iter()
            .zip(&self.input_scale[self.cond_dim..])
            .map(|(g, s)| g * s)
            .collect();
        (out[0], grad)
    }
}

/// Per-dimension inverse-RMS scales for evaluator inputs, probed from the
/// environment's own condition and feasible-solution distributions.
fn probe_input_scale(env: &dyn BanditEnv, seed: u64) -> Vec<f64> {
    const PROBES: usize = 256;
    let mut rng = substream(seed, "scale-probe");
    let dim = env.condition_dim() + env.solution_dim();
    let mut sum_sq = vec![0.0f64; dim];
    for _ in 0..PROBES {
        let cond = env.sample_condition(&mut rng);
        let solution = crate::envs::random_allocation(env, &mut rng);
        for (acc, x) in sum_sq.iter_mut().zip(cond.iter().chain(&solution)) {
            *acc += x * x;
        }
    }
    sum_sq
        .iter()
        .map(|s| 1.0 / (s / PROBES as f64).sqrt().max(1e-3))
        .collect()
}

/// Mean squared error between predicted values and recorded rewards, with
/// gradients for the evaluator only.
pub fn critic_loss(
    evaluator: &SolutionEvaluator,
    batch: &[BanditExperience],
) -> Result<(f64, Grads)> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch("critic_loss"));
    }
    let items = exec::map_indexed(batch.len(), |i| -> Result<(f64, Grads)> {
        let exp = &batch[i];
        let (out, tape) = evaluator
            .net
            .forward_taped(&evaluator.input(&exp.condition, &exp.solution))?;
        let residual = out[0] - exp.reward;
        let (grads, _) = evaluator.net.backward(&tape, &[2.0 * residual])?;
        Ok((residual * residual, grads))
    });
    let mut losses = Vec::with_capacity(batch.len());
    let mut grads = Vec::with_capacity(batch.len());
    for item in items {
        let (l, g) = item?;
        losses.push(l);
        grads.push(g);
    }
    Ok((
        losses.iter().sum::<f64>() / batch.len() as f64,
        Grads::mean_of(grads).expect("non-empty"),
    ))
}

/// Actor objective: the negated mean critic value of freshly sampled,
/// squashed chain outputs. One chain sample per condition (single-sample
/// reparameterized gradient); the gradient flows through every reverse step
/// and the squash into the denoiser parameters. Critic parameters are
/// treated as constants.
pub fn actor_loss<C: SolutionCritic>(
    denoiser: &ConditionalDenoiser,
    critic: &C,
    schedule: &NoiseSchedule,
    squash: &Squash,
    conditions: &[Vec<f64>],
    noise_seed: u64,
) -> Result<(f64, Grads)> {
    if conditions.is_empty() {
        return Err(Error::EmptyBatch("actor_loss"));
    }
    let items = exec::map_indexed(conditions.len(), |i| -> Result<(f64, Grads)> {
        let cond = &conditions[i];
        let mut rng = substream_indexed(noise_seed, "actor-chain", i as u64);
        let (logits, tape) = sample_chain_taped(denoiser, schedule, cond, &mut rng)?;
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("actor chain output".into()));
        }
        let solution = squash.apply(&logits);
        let (value, solution_grad) = critic.value_and_solution_grad(cond, &solution);
        let upstream_solution: Vec<f64> = solution_grad.iter().map(|g| -g).collect();
        let upstream_logits = squash.vjp(&logits, &upstream_solution);
        let grads = chain_backward(denoiser, schedule, &tape, &upstream_logits)?;
        Ok((-value, grads))
    });
    let mut losses = Vec::with_capacity(conditions.len());
    let mut grads = Vec::with_capacity(conditions.len());
    for item in items {
        let (l, g) = item?;
        losses.push(l);
        grads.push(g);
    }
    Ok((
        losses.iter().sum::<f64>() / conditions.len() as f64,
        Grads::mean_of(grads).expect("non-empty"),
    ))
}

/// Hyper-parameters of both training regimes.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GdmTrainConfig {
    pub epochs: u64,
    pub batch_size: usize,
    pub actor_lr: f64,
    pub critic_lr: f64,
    /// Number of denoising steps T.
    pub denoise_steps: usize,
    pub schedule_kind: ScheduleKind,
    pub beta_min: f64,
    pub beta_max: f64,
    /// Exploration noise applied to pre-squash logits of executed solutions.
    pub explore_sigma: f64,
    pub explore_decay: f64,
    pub explore_floor: f64,
    pub buffer_capacity: usize,
    /// Epochs of critic-only updates before actor updates begin, so the
    /// actor ascends a fitted value surface instead of chasing an untrained
    /// critic to allocation extremes.
    pub actor_warmup_epochs: u64,
    /// Evaluate every this many epochs.
    pub eval_cadence: u64,
    /// Fresh states per evaluation.
    pub eval_states: usize,
    /// Hidden layer widths of denoiser and evaluator.
    pub hidden: Vec<usize>,
    /// Expert dataset size (expert regime only).
    pub expert_dataset_size: usize,
}

impl Default for GdmTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 3000,
            batch_size: 64,
            actor_lr: 1e-3,
            critic_lr: 3e-4,
            denoise_steps: 9,
            schedule_kind: ScheduleKind::VariancePreserving,
            beta_min: NoiseSchedule::DEFAULT_BETA_MIN,
            beta_max: NoiseSchedule::DEFAULT_BETA_MAX,
            explore_sigma: 0.1,
            explore_decay: 0.999,
            explore_floor: 0.01,
            buffer_capacity: 10_000,
            actor_warmup_epochs: 200,
            eval_cadence: 10,
            eval_states: 32,
            hidden: vec![64, 64],
            expert_dataset_size: 1000,
        }
    }
}

impl GdmTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0
            || self.batch_size == 0
            || self.denoise_steps == 0
            || self.buffer_capacity == 0
            || self.eval_cadence == 0
            || self.eval_states == 0
            || self.expert_dataset_size == 0
        {
            return Err(Error::InvalidConfig(
                "counts and cadences must be positive".into(),
            ));
        }
        if self.actor_lr <= 0.0 || self.critic_lr <= 0.0 {
            return Err(Error::InvalidConfig("learning rates must be > 0".into()));
        }
        if self.explore_sigma < 0.0 || self.explore_floor < 0.0 {
            return Err(Error::InvalidConfig("noise levels must be >= 0".into()));
        }
        if !(0.0 < self.explore_decay && self.explore_decay <= 1.0) {
            return Err(Error::InvalidConfig("explore_decay must be in (0, 1]".into()));
        }
        Ok(())
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::new(
            self.denoise_steps,
            self.schedule_kind,
            self.beta_min,
            self.beta_max,
        )
    }
}

/// Evaluation-time view of a training run, handed to progress callbacks so
/// callers can stream rows and checkpoint the latest good parameters.
pub struct TrainProgress<'a> {
    pub row: &'a MetricsRow,
    pub denoiser: &'a ConditionalDenoiser,
    pub evaluator: Option<&'a SolutionEvaluator>,
    pub schedule: &'a NoiseSchedule,
}

/// A trained model bundle plus its learning curve.
pub struct TrainOutcome {
    pub denoiser: ConditionalDenoiser,
    pub evaluator: Option<SolutionEvaluator>,
    pub schedule: NoiseSchedule,
    pub metrics: Vec<MetricsRow>,
}

/// Aggregate of a greedy evaluation pass over fresh states.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalSummary {
    pub reward_mean: f64,
    pub reward_std: f64,
    pub gap_mean: Option<f64>,
}

/// Evaluates the denoiser greedily (no exploration noise) on `n` fresh
/// states, fanning out over workers with independent substreams.
pub fn evaluate_policy(
    denoiser: &ConditionalDenoiser,
    schedule: &NoiseSchedule,
    env: &dyn BanditEnv,
    n: usize,
    seed: u64,
) -> Result<EvalSummary> {
    let results = exec::map_indexed(n, |i| -> Result<(f64, Option<f64>)> {
        let mut state_rng = substream_indexed(seed, "eval-state", i as u64);
        let cond = env.sample_condition(&mut state_rng);
        let mut chain_rng = substream_indexed(seed, "eval-chain", i as u64);
        let logits = sample_chain(denoiser, schedule, &cond, &mut chain_rng)?;
        let reward = env.evaluate(&cond, &env.squash(&logits));
        let gap = env.oracle(&cond).map(|(_, best)| best - reward);
        Ok((reward, gap))
    });
    let mut rewards = Vec::with_capacity(n);
    let mut gaps = Vec::new();
    for r in results {
        let (reward, gap) = r?;
        rewards.push(reward);
        if let Some(g) = gap {
            gaps.push(g);
        }
    }
    let mean = rewards.iter().sum::<f64>() / rewards.len() as f64;
    let var = rewards.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>()
        / rewards.len() as f64;
    Ok(EvalSummary {
        reward_mean: mean,
        reward_std: var.sqrt(),
        gap_mean: if gaps.is_empty() {
            None
        } else {
            Some(gaps.iter().sum::<f64>() / gaps.len() as f64)
        },
    })
}

/// Single-solution inference: runs the chain for one condition without
/// exploration noise and returns the squashed solution and its objective.
pub fn infer(
    denoiser: &ConditionalDenoiser,
    schedule: &NoiseSchedule,
    env: &dyn BanditEnv,
    cond: &[f64],
    seed: u64,
) -> Result<(Vec<f64>, f64)> {
    let mut rng = substream(seed, "infer-chain");
    let logits = sample_chain(denoiser, schedule, cond, &mut rng)?;
    let solution = env.squash(&logits);
    let reward = env.evaluate(cond, &solution);
    Ok((solution, reward))
}

fn eval_row(
    denoiser: &ConditionalDenoiser,
    schedule: &NoiseSchedule,
    env: &dyn BanditEnv,
    cfg: &GdmTrainConfig,
    seed: u64,
    epoch: u64,
    losses: (Option<f64>, Option<f64>),
    sigma: Option<f64>,
    started: std::time::Instant,
) -> Result<MetricsRow> {
    let summary = evaluate_policy(
        denoiser,
        schedule,
        env,
        cfg.eval_states,
        derive_seed(seed, "eval", epoch),
    )?;
    Ok(MetricsRow {
        epoch,
        reward_mean: summary.reward_mean,
        reward_std: summary.reward_std,
        gap_mean: summary.gap_mean,
        actor_loss: losses.0,
        critic_loss: losses.1,
        sigma,
        wall_ms: started.elapsed().as_millis() as u64,
    })
}

/// Online training without expert data (critic-guided).
///
/// Per epoch: observe a fresh condition, sample a solution from the chain,
/// add exploration noise to the pre-squash logits, squash, execute in the
/// environment, record the reward, then update the evaluator on a replay
/// batch and the denoiser through the actor loss on the same batch's
/// conditions. Evaluation rows are emitted every `eval_cadence` epochs and
/// at the final epoch.
pub fn train_online(
    env: &dyn BanditEnv,
    cfg: &GdmTrainConfig,
    seed: u64,
    mut on_eval: impl FnMut(TrainProgress),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let schedule = cfg.schedule()?;
    let started = std::time::Instant::now();
    let mut denoiser = ConditionalDenoiser::init(
        env.solution_dim(),
        env.condition_dim(),
        cfg.denoise_steps,
        &cfg.hidden,
        &mut substream(seed, "init-actor"),
    )?;
    let mut evaluator = SolutionEvaluator::init(
        env.condition_dim(),
        env.solution_dim(),
        &cfg.hidden,
        &mut substream(seed, "init-critic"),
    )?
    .with_input_scale(probe_input_scale(env, seed))?;
    let mut actor_adam = Adam::new(cfg.actor_lr, denoiser.net());
    let mut critic_adam = Adam::new(cfg.critic_lr, evaluator.net());
    let mut replay = BanditReplay::new(cfg.buffer_capacity);
    let mut env_rng = substream(seed, "env");
    let mut explore_rng = substream(seed, "explore");
    let mut replay_rng = substream(seed, "replay");
    let mut sigma = cfg.explore_sigma;
    let mut metrics = Vec::new();
    let squash = env.squash_spec().clone();

    for epoch in 0..cfg.epochs {
        let cond = env.sample_condition(&mut env_rng);
        let mut logits = sample_chain(
            &denoiser,
            &schedule,
            &cond,
            &mut substream_indexed(seed, "chain", epoch),
        )?;
        for z in &mut logits {
            *z += sigma * explore_rng.sample::<f64, _>(StandardNormal);
        }
        let solution = env.squash(&logits);
        let reward = env.evaluate(&cond, &solution);
        if !reward.is_finite() {
            return Err(Error::Env(format!(
                "non-finite reward at epoch {epoch} for condition {cond:?}"
            )));
        }
        replay.push(BanditExperience {
            condition: cond,
            solution,
            logits,
            reward,
        });

        let mut losses = (None, None);
        if replay.len() >= cfg.batch_size {
            let batch = replay.sample(cfg.batch_size, &mut replay_rng);
            let (closs, mut cgrads) = critic_loss(&evaluator, &batch)?;
            cgrads.clip_global_norm(GRAD_CLIP_NORM);
            critic_adam.step(evaluator.net_mut(), &cgrads)?;
            let mut aloss = None;
            if epoch >= cfg.actor_warmup_epochs {
                let conditions: Vec<Vec<f64>> =
                    batch.iter().map(|e| e.condition.clone()).collect();
                let (al, mut agrads) = actor_loss(
                    &denoiser,
                    &evaluator,
                    &schedule,
                    &squash,
                    &conditions,
                    derive_seed(seed, "actor-noise", epoch),
                )?;
                agrads.clip_global_norm(GRAD_CLIP_NORM);
                actor_adam.step(denoiser.net_mut(), &agrads)?;
                aloss = Some(al);
            }
            losses = (aloss, Some(closs));
        }
        sigma = (sigma * cfg.explore_decay).max(cfg.explore_floor);

        if (epoch + 1) % cfg.eval_cadence == 0 || epoch + 1 == cfg.epochs {
            let row = eval_row(
                &denoiser,
                &schedule,
                env,
                cfg,
                seed,
                epoch + 1,
                losses,
                Some(sigma),
                started,
            )?;
            on_eval(TrainProgress {
                row: &row,
                denoiser: &denoiser,
                evaluator: Some(&evaluator),
                schedule: &schedule,
            });
            metrics.push(row);
        }
    }
    Ok(TrainOutcome {
        denoiser,
        evaluator: Some(evaluator),
        schedule,
        metrics,
    })
}

/// Builds an expert dataset by labelling sampled conditions with the
/// environment oracle, lifted into pre-squash logit space.
pub fn expert_dataset(
    env: &dyn BanditEnv,
    n: usize,
    seed: u64,
) -> Result<Vec<ExpertExample>> {
    let mut rng = substream(seed, "expert-data");
    (0..n)
        .map(|_| {
            let cond = env.sample_condition(&mut rng);
            let (best, _) = env
                .oracle(&cond)
                .ok_or_else(|| Error::Env("environment has no oracle for expert labels".into()))?;
            Ok(ExpertExample {
                solution_logits: env.squash_spec().preimage(&best),
                condition: cond,
            })
        })
        .collect()
}

/// Expert-dataset training: minibatch noise-prediction regression.
pub fn train_expert(
    env: &dyn BanditEnv,
    dataset: &[ExpertExample],
    cfg: &GdmTrainConfig,
    seed: u64,
    mut on_eval: impl FnMut(TrainProgress),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptyBatch("train_expert dataset"));
    }
    let schedule = cfg.schedule()?;
    let started = std::time::Instant::now();
    let mut denoiser = ConditionalDenoiser::init(
        env.solution_dim(),
        env.condition_dim(),
        cfg.denoise_steps,
        &cfg.hidden,
        &mut substream(seed, "init-actor"),
    )?;
    let mut adam = Adam::new(cfg.actor_lr, denoiser.net());
    let mut batch_rng = substream(seed, "expert-batch");
    let mut metrics = Vec::new();

    for epoch in 0..cfg.epochs {
        let take = cfg.batch_size.min(dataset.len());
        let batch: Vec<ExpertExample> = rand::seq::index::sample(&mut batch_rng, dataset.len(), take)
            .into_iter()
            .map(|i| dataset[i].clone())
            .collect();
        let (loss, mut grads) = expert_loss(
            &denoiser,
            &schedule,
            &batch,
            derive_seed(seed, "expert-noise", epoch),
        )?;
        grads.clip_global_norm(GRAD_CLIP_NORM);
        adam.step(denoiser.net_mut(), &grads)?;

        if (epoch + 1) % cfg.eval_cadence == 0 || epoch + 1 == cfg.epochs {
            let row = eval_row(
                &denoiser,
                &schedule,
                env,
                cfg,
                seed,
                epoch + 1,
                (Some(loss), None),
                None,
                started,
            )?;
            on_eval(TrainProgress {
                row: &row,
                denoiser: &denoiser,
                evaluator: None,
                schedule: &schedule,
            });
            metrics.push(row);
        }
    }
    Ok(TrainOutcome {
        denoiser,
        evaluator: None,
        schedule,
        metrics,
    })
}

#[cfg(test)]
mod tests;
