//! Diffusion-policy actor-critic for discrete-action MDPs.
//!
//! The actor is a conditional denoising chain over an A-dimensional logit
//! vector conditioned on the state; softmax of the emitted logits is the
//! action distribution. Two critics with target copies provide conservative
//! value estimates (`min(Q1, Q2)`), and an entropy bonus keeps the policy
//! from collapsing prematurely:
//!
//! ```text
//! y      = r + gamma * (1-done) * E_a'[ min(Qbar1,Qbar2)(s',a') - lambda_H ln pi(a'|s') ]
//! L_pi   = -E_s[ sum_a pi(a|s) min(Q1,Q2)(s,a) + lambda_H H(pi(.|s)) ]
//! ```
//!
//! The expectation over next actions is computed exactly from the softmax
//! (action sets are small), not by sampling.

mod memory;

pub use memory::{PendingTicket, ReplayMemory, Transition};

use rand::Rng;

use crate::diffusion::{chain_backward, sample_chain, sample_chain_taped, ConditionalDenoiser};
use crate::envs::MdpEnv;
use crate::error::{Error, Result};
use crate::exec;
use crate::harness::MetricsRow;
use crate::nn::{soft_update, Adam, Grads, Mlp, GRAD_CLIP_NORM};
use crate::rng::{derive_seed, substream, substream_indexed};

/// Numerically stable softmax with temperature.
fn softmax(logits: &[f64], temperature: f64) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logits
        .iter()
        .map(|z| ((z - max) / temperature).exp())
        .collect();
    let total: f64 = weights.iter().sum();
    weights.iter().map(|w| w / total).collect()
}

/// Shannon entropy in nats; lies in `[0, ln A]`.
pub fn entropy(probs: &[f64]) -> f64 {
    -probs
        .iter()
        .filter(|p| **p > 0.0)
        .map(|p| p * p.ln())
        .sum::<f64>()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActMode {
    Sample,
    Greedy,
}

/// An action plus the distribution it was drawn from, for logging.
#[derive(Debug, Clone)]
pub struct ActionChoice {
    pub action: usize,
    pub probs: Vec<f64>,
}

/// Diffusion chain over action logits conditioned on the state.
#[derive(Debug, Clone)]
pub struct DiffusionActor {
    pub denoiser: ConditionalDenoiser,
    pub schedule: crate::diffusion::NoiseSchedule,
    pub temperature: f64,
}

impl DiffusionActor {
    pub fn action_count(&self) -> usize {
        self.denoiser.solution_dim()
    }

    /// One action distribution: a single chain draw squashed by softmax.
    pub fn policy<R: Rng + ?Sized>(&self, state: &[f64], rng: &mut R) -> Result<Vec<f64>> {
        let logits = sample_chain(&self.denoiser, &self.schedule, state, rng)?;
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("actor logits".into()));
        }
        Ok(softmax(&logits, self.temperature))
    }

    /// Samples or argmaxes an action from one policy draw.
    pub fn act<R: Rng + ?Sized>(
        &self,
        state: &[f64],
        rng: &mut R,
        mode: ActMode,
    ) -> Result<ActionChoice> {
        let probs = self.policy(state, rng)?;
        debug_assert!(entropy(&probs) <= (probs.len() as f64).ln() + 1e-9);
        let action = match mode {
            ActMode::Greedy => {
                probs
                    .iter()
                    .enumerate()
                    .fold((0usize, f64::NEG_INFINITY), |best, (a, &p)| {
                        if p > best.1 {
                            (a, p)
                        } else {
                            best
                        }
                    })
                    .0
            }
            ActMode::Sample => {
                let draw: f64 = rng.random_range(0.0..1.0);
                let mut acc = 0.0;
                let mut chosen = probs.len() - 1;
                for (a, &p) in probs.iter().enumerate() {
                    acc += p;
                    if draw < acc {
                        chosen = a;
                        break;
                    }
                }
                chosen
            }
        };
        Ok(ActionChoice { action, probs })
    }
}

/// Two online state-to-action-values networks plus their target copies.
#[derive(Debug, Clone)]
pub struct DoubleCritic {
    q1: Mlp,
    q2: Mlp,
    target1: Mlp,
    target2: Mlp,
    pub gamma: f64,
    pub tau: f64,
    pub entropy_coef: f64,
}

impl DoubleCritic {
    pub fn init<R: Rng + ?Sized>(
        state_dim: usize,
        action_count: usize,
        hidden: &[usize],
        gamma: f64,
        tau: f64,
        entropy_coef: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::InvalidArgument(format!(
                "gamma must be in [0, 1), got {gamma}"
            )));
        }
        let mut dims = vec![state_dim];
        dims.extend_from_slice(hidden);
        dims.push(action_count);
        let q1 = Mlp::glorot_tanh(&dims, rng)?;
        let q2 = Mlp::glorot_tanh(&dims, rng)?;
        Ok(Self {
            target1: q1.clone(),
            target2: q2.clone(),
            q1,
            q2,
            gamma,
            tau,
            entropy_coef,
        })
    }

    pub fn nets(&self) -> (&Mlp, &Mlp) {
        (&self.q1, &self.q2)
    }

    pub fn targets(&self) -> (&Mlp, &Mlp) {
        (&self.target1, &self.target2)
    }

    /// Conservative estimate from the online critics.
    pub fn min_q(&self, state: &[f64]) -> Vec<f64> {
        let a = self.q1.forward(state).expect("state dim");
        let b = self.q2.forward(state).expect("state dim");
        let min: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x.min(*y)).collect();
        for ((m, x), y) in min.iter().zip(&a).zip(&b) {
            assert!(m <= x && m <= y);
        }
        min
    }

    fn min_target(&self, state: &[f64]) -> Vec<f64> {
        let a = self.target1.forward(state).expect("state dim");
        let b = self.target2.forward(state).expect("state dim");
        a.iter().zip(&b).map(|(x, y)| x.min(*y)).collect()
    }
}

/// What the actor update needs from the critics. Stubbed in tests.
pub trait ActionCritic: Sync {
    fn min_action_values(&self, state: &[f64]) -> Vec<f64>;
}

impl ActionCritic for DoubleCritic {
    fn min_action_values(&self, state: &[f64]) -> Vec<f64> {
        self.min_q(state)
    }
}

/// Soft TD target for one transition. Terminal transitions never bootstrap.
pub fn td_target(
    reward: f64,
    terminal: bool,
    gamma: f64,
    next_probs: &[f64],
    next_min_q: &[f64],
    entropy_coef: f64,
) -> f64 {
    if terminal {
        return reward;
    }
    let value: f64 = next_probs
        .iter()
        .zip(next_min_q)
        .filter(|(p, _)| **p > 0.0)
        .map(|(p, q)| p * (q - entropy_coef * p.ln()))
        .sum();
    reward + gamma * value
}

/// One gradient step on both critics toward the soft TD targets, plus a
/// soft update of the target copies. Returns the two regression losses.
pub fn critic_update(
    critic: &mut DoubleCritic,
    actor: &DiffusionActor,
    batch: &[Transition],
    opt1: &mut Adam,
    opt2: &mut Adam,
    noise_seed: u64,
) -> Result<(f64, f64)> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch("critic_update"));
    }
    let targets = exec::map_indexed(batch.len(), |i| -> Result<f64> {
        let tr = &batch[i];
        if tr.terminal {
            return Ok(tr.reward);
        }
        let mut rng = substream_indexed(noise_seed, "next-chain", i as u64);
        let probs = actor.policy(&tr.next_state, &mut rng)?;
        let min_q = critic.min_target(&tr.next_state);
        Ok(td_target(
            tr.reward,
            false,
            critic.gamma,
            &probs,
            &min_q,
            critic.entropy_coef,
        ))
    });
    let mut y = Vec::with_capacity(batch.len());
    for t in targets {
        y.push(t?);
    }
    let regress = |net: &Mlp| -> Result<(f64, Grads)> {
        let items = exec::map_indexed(batch.len(), |i| -> Result<(f64, Grads)> {
            let tr = &batch[i];
            let (out, tape) = net.forward_taped(&tr.state)?;
            let residual = out[tr.action] - y[i];
            let mut upstream = vec![0.0; out.len()];
            upstream[tr.action] = 2.0 * residual;
            let (grads, _) = net.backward(&tape, &upstream)?;
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
    };
    let (loss1, mut g1) = regress(&critic.q1)?;
    let (loss2, mut g2) = regress(&critic.q2)?;
    g1.clip_global_norm(GRAD_CLIP_NORM);
    g2.clip_global_norm(GRAD_CLIP_NORM);
    opt1.step(&mut critic.q1, &g1)?;
    opt2.step(&mut critic.q2, &g2)?;
    let tau = critic.tau;
    soft_update(&mut critic.target1, &critic.q1, tau)?;
    soft_update(&mut critic.target2, &critic.q2, tau)?;
    Ok((loss1, loss2))
}

/// One gradient step on the actor:
/// `max E_s[sum_a pi(a|s) q_min(s,a) + lambda_H H(pi)]`, with the gradient
/// flowing through the diffusion chain. Returns the (negated) objective.
pub fn actor_update<C: ActionCritic>(
    actor: &mut DiffusionActor,
    critic: &C,
    entropy_coef: f64,
    states: &[Vec<f64>],
    opt: &mut Adam,
    noise_seed: u64,
) -> Result<f64> {
    if states.is_empty() {
        return Err(Error::EmptyBatch("actor_update"));
    }
    let temperature = actor.temperature;
    let denoiser = &actor.denoiser;
    let schedule = &actor.schedule;
    let items = exec::map_indexed(states.len(), |i| -> Result<(f64, Grads)> {
        let state = &states[i];
        let mut rng = substream_indexed(noise_seed, "actor-chain", i as u64);
        let (logits, tape) = sample_chain_taped(denoiser, schedule, state, &mut rng)?;
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("actor logits".into()));
        }
        let probs = softmax(&logits, temperature);
        let q = critic.min_action_values(state);
        let value: f64 = probs.iter().zip(&q).map(|(p, qa)| p * qa).sum();
        let ent = entropy(&probs);
        let objective = value + entropy_coef * ent;
        // d objective / d logit_k, through the softmax:
        //   value term:   pi_k (q_k - <pi, q>) / temp
        //   entropy term: -pi_k (ln pi_k + H) / temp
        let upstream: Vec<f64> = probs
            .iter()
            .zip(&q)
            .map(|(p, qa)| {
                let dvalue = p * (qa - value);
                let dentropy = -p * (p.max(f64::MIN_POSITIVE).ln() + ent);
                -(dvalue + entropy_coef * dentropy) / temperature
            })
            .collect();
        let grads = chain_backward(denoiser, schedule, &tape, &upstream)?;
        Ok((-objective, grads))
    });
    let mut losses = Vec::with_capacity(states.len());
    let mut grads = Vec::with_capacity(states.len());
    for item in items {
        let (l, g) = item?;
        losses.push(l);
        grads.push(g);
    }
    let loss = losses.iter().sum::<f64>() / states.len() as f64;
    let mut grad = Grads::mean_of(grads).expect("non-empty");
    grad.clip_global_norm(GRAD_CLIP_NORM);
    opt.step(actor.denoiser.net_mut(), &grad)?;
    Ok(loss)
}

/// Hyper-parameters of the MDP trainer.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct D2sacConfig {
    pub total_steps: u64,
    /// Environment steps collected before updates begin.
    pub warmup_steps: u64,
    pub batch_size: usize,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub gamma: f64,
    pub tau: f64,
    pub entropy_coef: f64,
    pub temperature: f64,
    /// Actor chain length.
    pub denoise_steps: usize,
    pub schedule_kind: crate::diffusion::ScheduleKind,
    pub beta_min: f64,
    pub beta_max: f64,
    pub buffer_capacity: usize,
    /// Gradient updates every this many environment steps.
    pub update_every: u64,
    /// Critic gradient steps per update round (the actor always takes one).
    pub critic_updates_per_round: u32,
    /// Evaluate every this many environment steps.
    pub eval_cadence: u64,
    pub eval_episodes: usize,
    pub hidden: Vec<usize>,
}

impl Default for D2sacConfig {
    fn default() -> Self {
        Self {
            total_steps: 30_000,
            warmup_steps: 1_000,
            batch_size: 128,
            actor_lr: 3e-4,
            critic_lr: 1e-3,
            gamma: 0.99,
            tau: 0.005,
            entropy_coef: 0.05,
            temperature: 1.0,
            denoise_steps: 5,
            schedule_kind: crate::diffusion::ScheduleKind::VariancePreserving,
            beta_min: crate::diffusion::NoiseSchedule::DEFAULT_BETA_MIN,
            beta_max: crate::diffusion::NoiseSchedule::DEFAULT_BETA_MAX,
            buffer_capacity: 50_000,
            update_every: 1,
            critic_updates_per_round: 1,
            eval_cadence: 2_000,
            eval_episodes: 10,
            hidden: vec![64, 64],
        }
    }
}

impl D2sacConfig {
    pub fn validate(&self) -> Result<()> {
        if self.total_steps == 0
            || self.batch_size == 0
            || self.denoise_steps == 0
            || self.buffer_capacity == 0
            || self.update_every == 0
            || self.critic_updates_per_round == 0
            || self.eval_cadence == 0
            || self.eval_episodes == 0
        {
            return Err(Error::InvalidConfig(
                "counts and cadences must be positive".into(),
            ));
        }
        if self.actor_lr <= 0.0 || self.critic_lr <= 0.0 {
            return Err(Error::InvalidConfig("learning rates must be > 0".into()));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::InvalidConfig("gamma must be in [0, 1)".into()));
        }
        if !(0.0 < self.tau && self.tau <= 1.0) {
            return Err(Error::InvalidConfig("tau must be in (0, 1]".into()));
        }
        if self.entropy_coef < 0.0 || self.temperature <= 0.0 {
            return Err(Error::InvalidConfig(
                "entropy_coef must be >= 0 and temperature > 0".into(),
            ));
        }
        Ok(())
    }
}

/// Evaluation-time view of a training run, handed to progress callbacks.
pub struct MdpProgress<'a> {
    pub row: &'a MetricsRow,
    pub actor: &'a DiffusionActor,
    pub critic: &'a DoubleCritic,
}

/// Trained policy bundle plus learning curves.
pub struct MdpTrainOutcome {
    pub actor: DiffusionActor,
    pub critic: DoubleCritic,
    pub metrics: Vec<MetricsRow>,
    /// Per training episode: (episode index, undiscounted return, length).
    pub episode_log: Vec<(u64, f64, u64)>,
}

/// Mean/std of greedy-evaluation returns over fresh episodes, fanned out
/// over workers with per-episode env clones and substreams.
pub fn evaluate_greedy<E: MdpEnv + Clone + Sync>(
    actor: &DiffusionActor,
    env: &E,
    episodes: usize,
    max_steps: u64,
    seed: u64,
) -> Result<(f64, f64)> {
    let returns = exec::map_indexed(episodes, |i| -> Result<f64> {
        let mut env = env.clone();
        let mut rng = substream_indexed(seed, "eval-episode", i as u64);
        let mut state = env.reset(&mut rng);
        let mut total = 0.0;
        for _ in 0..max_steps {
            let choice = actor.act(&state, &mut rng, ActMode::Greedy)?;
            let step = env.step(choice.action, &mut rng)?;
            total += step.reward;
            if step.terminal || step.truncated {
                break;
            }
            state = step.state;
        }
        Ok(total)
    });
    let mut values = Vec::with_capacity(episodes);
    for r in returns {
        values.push(r?);
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / values.len() as f64;
    Ok((mean, var.sqrt()))
}

/// Off-policy training loop: stochastic rollouts feed the replay memory;
/// critics and actor update every `update_every` steps once warm.
pub fn train_mdp<E: MdpEnv + Clone + Sync>(
    env: &E,
    cfg: &D2sacConfig,
    seed: u64,
    mut on_eval: impl FnMut(MdpProgress),
) -> Result<MdpTrainOutcome> {
    cfg.validate()?;
    let started = std::time::Instant::now();
    let state_dim = env.state_dim();
    let action_count = env.action_count();
    let denoiser = ConditionalDenoiser::init(
        action_count,
        state_dim,
        cfg.denoise_steps,
        &cfg.hidden,
        &mut substream(seed, "init-actor"),
    )?;
    let mut actor = DiffusionActor {
        denoiser,
        schedule: crate::diffusion::NoiseSchedule::new(
            cfg.denoise_steps,
            cfg.schedule_kind,
            cfg.beta_min,
            cfg.beta_max,
        )?,
        temperature: cfg.temperature,
    };
    let mut critic = DoubleCritic::init(
        state_dim,
        action_count,
        &cfg.hidden,
        cfg.gamma,
        cfg.tau,
        cfg.entropy_coef,
        &mut substream(seed, "init-critic"),
    )?;
    let mut actor_opt = Adam::new(cfg.actor_lr, actor.denoiser.net());
    let mut critic_opt1 = Adam::new(cfg.critic_lr, critic.nets().0);
    let mut critic_opt2 = Adam::new(cfg.critic_lr, critic.nets().1);
    let mut memory = ReplayMemory::new(cfg.buffer_capacity);
    let mut env = env.clone();
    let mut env_rng = substream(seed, "env");
    let mut replay_rng = substream(seed, "replay");
    let mut state = env.reset(&mut env_rng);
    let mut episode_return = 0.0;
    let mut episode_len = 0u64;
    let mut episode_index = 0u64;
    let mut episode_log = Vec::new();
    let mut metrics = Vec::new();
    let mut last_losses = (None, None);

    for step in 0..cfg.total_steps {
        let choice = actor.act(
            &state,
            &mut substream_indexed(seed, "act", step),
            ActMode::Sample,
        )?;
        let outcome = env
            .step(choice.action, &mut env_rng)
            .map_err(|e| Error::Env(format!("step {step}: {e}")))?;
        memory.push(Transition {
            state: state.clone(),
            action: choice.action,
            reward: outcome.reward,
            next_state: outcome.state.clone(),
            terminal: outcome.terminal,
        });
        episode_return += outcome.reward;
        episode_len += 1;
        if outcome.terminal || outcome.truncated {
            episode_log.push((episode_index, episode_return, episode_len));
            episode_index += 1;
            episode_return = 0.0;
            episode_len = 0;
            state = env.reset(&mut env_rng);
        } else {
            state = outcome.state;
        }

        if step >= cfg.warmup_steps && (step + 1) % cfg.update_every == 0 {
            let mut closs = None;
            let mut batch = Vec::new();
            for round in 0..cfg.critic_updates_per_round {
                batch = memory.sample(cfg.batch_size, &mut replay_rng);
                if batch.is_empty() {
                    break;
                }
                let (l1, l2) = critic_update(
                    &mut critic,
                    &actor,
                    &batch,
                    &mut critic_opt1,
                    &mut critic_opt2,
                    derive_seed(seed, "critic-noise", step * 31 + round as u64),
                )?;
                closs = Some(0.5 * (l1 + l2));
            }
            if !batch.is_empty() {
                let states: Vec<Vec<f64>> = batch.iter().map(|t| t.state.clone()).collect();
                let aloss = actor_update(
                    &mut actor,
                    &critic,
                    cfg.entropy_coef,
                    &states,
                    &mut actor_opt,
                    derive_seed(seed, "actor-noise", step),
                )?;
                last_losses = (Some(aloss), closs);
            }
        }

        if (step + 1) % cfg.eval_cadence == 0 || step + 1 == cfg.total_steps {
            let (mean, std) = evaluate_greedy(
                &actor,
                &env,
                cfg.eval_episodes,
                1_000_000,
                derive_seed(seed, "eval", step),
            )?;
            let row = MetricsRow {
                epoch: step + 1,
                reward_mean: mean,
                reward_std: std,
                gap_mean: None,
                actor_loss: last_losses.0,
                critic_loss: last_losses.1,
                sigma: None,
                wall_ms: started.elapsed().as_millis() as u64,
            };
            on_eval(MdpProgress {
                row: &row,
                actor: &actor,
                critic: &critic,
            });
            metrics.push(row);
        }
    }
    Ok(MdpTrainOutcome {
        actor,
        critic,
        metrics,
        episode_log,
    })
}

#[cfg(test)]
mod tests;
