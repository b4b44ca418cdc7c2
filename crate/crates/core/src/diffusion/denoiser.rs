//! Conditional noise predictor and the reverse denoising chain.

use rand::Rng;
use rand_distr::StandardNormal;

use super::{forward_sample, NoiseSchedule};
use crate::error::{Error, Result};
use crate::exec;
use crate::nn::{Grads, Mlp, Tape};
use crate::rng::substream_indexed;

/// Multiscale sinusoidal features of a timestep: `sin/cos(pi t / 2^k)` for
/// `k = 0..ceil(log2(T)+2)`. Dimension-stable across chain lengths and
/// distinguishes every step of short chains.
pub fn time_embedding(t: usize, steps: usize) -> Vec<f64> {
    let half = ((steps as f64).log2() + 2.0).ceil().max(1.0) as usize;
    let mut out = Vec::with_capacity(2 * half);
    for k in 0..half {
        let arg = std::f64::consts::PI * t as f64 / (1u64 << k) as f64;
        out.push(arg.sin());
        out.push(arg.cos());
    }
    out
}

/// Dimension of [`time_embedding`] for a chain of `steps`.
pub fn time_embedding_dim(steps: usize) -> usize {
    2 * ((steps as f64).log2() + 2.0).ceil().max(1.0) as usize
}

/// An expert-labelled training pair. The solution is stored in pre-squash
/// logit space so the chain target lives in the same unconstrained space the
/// chain samples from.
#[derive(Debug, Clone)]
pub struct ExpertExample {
    pub condition: Vec<f64>,
    pub solution_logits: Vec<f64>,
}

/// Noise predictor `eps_hat(x_t, t, g)`: an MLP over the concatenation of the
/// noised solution, the timestep embedding, and the condition vector.
#[derive(Debug, Clone)]
pub struct ConditionalDenoiser {
    net: Mlp,
    solution_dim: usize,
    cond_dim: usize,
    steps: usize,
    /// Precomputed embeddings for t = 1..=steps.
    embeddings: Vec<Vec<f64>>,
}

impl ConditionalDenoiser {
    /// Wraps a network whose input is `solution_dim + embed_dim + cond_dim`
    /// and whose output is `solution_dim`.
    pub fn new(net: Mlp, solution_dim: usize, cond_dim: usize, steps: usize) -> Result<Self> {
        let embed_dim = time_embedding_dim(steps);
        let expected_in = solution_dim + embed_dim + cond_dim;
        if net.in_dim() != expected_in {
            return Err(Error::DimMismatch {
                context: "denoiser input",
                expected: expected_in,
                got: net.in_dim(),
            });
        }
        if net.out_dim() != solution_dim {
            return Err(Error::DimMismatch {
                context: "denoiser output",
                expected: solution_dim,
                got: net.out_dim(),
            });
        }
        let embeddings = (1..=steps).map(|t| time_embedding(t, steps)).collect();
        Ok(Self {
            net,
            solution_dim,
            cond_dim,
            steps,
            embeddings,
        })
    }

    /// Fresh Glorot-initialized denoiser with tanh hidden layers.
    pub fn init<R: Rng + ?Sized>(
        solution_dim: usize,
        cond_dim: usize,
        steps: usize,
        hidden: &[usize],
        rng: &mut R,
    ) -> Result<Self> {
        let mut dims = vec![solution_dim + time_embedding_dim(steps) + cond_dim];
        dims.extend_from_slice(hidden);
        dims.push(solution_dim);
        let net = Mlp::glorot_tanh(&dims, rng)?;
        Self::new(net, solution_dim, cond_dim, steps)
    }

    pub fn solution_dim(&self) -> usize {
        self.solution_dim
    }

    pub fn cond_dim(&self) -> usize {
        self.cond_dim
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut Mlp {
        &mut self.net
    }

    pub fn into_net(self) -> Mlp {
        self.net
    }

    fn assemble_input(&self, x_t: &[f64], t: usize, cond: &[f64]) -> Result<Vec<f64>> {
        if x_t.len() != self.solution_dim {
            return Err(Error::DimMismatch {
                context: "denoiser x_t",
                expected: self.solution_dim,
                got: x_t.len(),
            });
        }
        if cond.len() != self.cond_dim {
            return Err(Error::DimMismatch {
                context: "denoiser condition",
                expected: self.cond_dim,
                got: cond.len(),
            });
        }
        if t < 1 || t > self.steps {
            return Err(Error::TimestepOutOfRange {
                t,
                max: self.steps,
            });
        }
        let mut input = Vec::with_capacity(self.net.in_dim());
        input.extend_from_slice(x_t);
        input.extend_from_slice(&self.embeddings[t - 1]);
        input.extend_from_slice(cond);
        Ok(input)
    }

    /// `eps_hat(x_t, t, g)`.
    pub fn predict(&self, x_t: &[f64], t: usize, cond: &[f64]) -> Result<Vec<f64>> {
        self.net.forward(&self.assemble_input(x_t, t, cond)?)
    }

    fn predict_taped(&self, x_t: &[f64], t: usize, cond: &[f64]) -> Result<(Vec<f64>, Tape)> {
        self.net.forward_taped(&self.assemble_input(x_t, t, cond)?)
    }
}

/// One reverse-chain update producing `x_{t-1}` from `x_t`. The caller
/// supplies the injected standard normal noise (zero for the final step).
pub fn reverse_step(
    denoiser: &ConditionalDenoiser,
    schedule: &NoiseSchedule,
    x_t: &[f64],
    t: usize,
    cond: &[f64],
    noise: &[f64],
) -> Result<Vec<f64>> {
    if t < 1 || t > schedule.steps() {
        return Err(Error::TimestepOutOfRange {
            t,
            max: schedule.steps(),
        });
    }
    if noise.len() != x_t.len() {
        return Err(Error::DimMismatch {
            context: "reverse_step noise",
            expected: x_t.len(),
            got: noise.len(),
        });
    }
    let eps_hat = denoiser.predict(x_t, t, cond)?;
    if eps_hat.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("denoiser prediction".into()));
    }
    let alpha = schedule.alpha(t);
    let beta = schedule.beta(t);
    let coef = beta / (alpha * (1.0 - schedule.alpha_bar(t))).sqrt();
    let inv_sqrt_alpha = 1.0 / alpha.sqrt();
    let sigma = beta.sqrt();
    Ok(x_t
        .iter()
        .zip(&eps_hat)
        .zip(noise)
        .map(|((x, e), n)| x * inv_sqrt_alpha - coef * e + sigma * n)
        .collect())
}

fn draw_normal<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.sample(StandardNormal)).collect()
}

/// Runs the full reverse chain: draws `x_T ~ N(0, I)` and denoises down to
/// the pre-squash solution logits `x0`. The final step injects no noise so
/// inference is deterministic given the RNG stream.
pub fn sample_chain<R: Rng + ?Sized>(
    denoiser: &ConditionalDenoiser,
    schedule: &NoiseSchedule,
    cond: &[f64],
    rng: &mut R,
) -> Result<Vec<f64>> {
    let dim = denoiser.solution_dim();
    let mut x = draw_normal(rng, dim);
    for t in (1..=schedule.steps()).rev() {
        let noise = if t > 1 {
            draw_normal(rng, dim)
        } else {
            vec![0.0; dim]
        };
        x = reverse_step(denoiser, schedule, &x, t, cond, &noise)?;
    }
    Ok(x)
}

/// Everything needed to backpropagate through one sampled chain.
#[derive(Debug)]
pub struct ChainTape {
    /// Per executed step, in execution order (t = T down to 1).
    steps: Vec<StepRecord>,
    cond: Vec<f64>,
}

#[derive(Debug)]
struct StepRecord {
    t: usize,
    tape: Tape,
}

/// [`sample_chain`] that also records the per-step forward tapes.
pub fn sample_chain_taped<R: Rng + ?Sized>(
    denoiser: &ConditionalDenoiser,
    schedule: &NoiseSchedule,
    cond: &[f64],
    rng: &mut R,
) -> Result<(Vec<f64>, ChainTape)> {
    let dim = denoiser.solution_dim();
    let mut x = draw_normal(rng, dim);
    let mut steps = Vec::with_capacity(schedule.steps());
    for t in (1..=schedule.steps()).rev() {
        let (eps_hat, tape) = denoiser.predict_taped(&x, t, cond)?;
        if eps_hat.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("denoiser prediction".into()));
        }
        let alpha = schedule.alpha(t);
        let beta = schedule.beta(t);
        let coef = beta / (alpha * (1.0 - schedule.alpha_bar(t))).sqrt();
        let inv_sqrt_alpha = 1.0 / alpha.sqrt();
        let sigma = beta.sqrt();
        let noise = if t > 1 {
            draw_normal(rng, dim)
        } else {
            vec![0.0; dim]
        };
        x = x
            .iter()
            .zip(&eps_hat)
            .zip(&noise)
            .map(|((xv, e), n)| xv * inv_sqrt_alpha - coef * e + sigma * n)
            .collect();
        steps.push(StepRecord { t, tape });
    }
    Ok((
        x,
        ChainTape {
            steps,
            cond: cond.to_vec(),
        },
    ))
}

/// Backpropagates `upstream = dLoss/dx0` through a recorded chain, returning
/// dLoss/dTheta for the denoiser parameters. Gradient flows through every
/// reverse step; injected noise terms are exogenous.
pub fn chain_backward(
    denoiser: &ConditionalDenoiser,
    schedule: &NoiseSchedule,
    tape: &ChainTape,
    upstream: &[f64],
) -> Result<Grads> {
    if tape.cond.len() != denoiser.cond_dim() {
        return Err(Error::DimMismatch {
            context: "chain tape condition",
            expected: denoiser.cond_dim(),
            got: tape.cond.len(),
        });
    }
    let dim = denoiser.solution_dim();
    let mut acc = Grads::zeros_like(denoiser.net());
    let mut u = upstream.to_vec();
    // Execution order was t = T..1; walk it backwards (t = 1..T).
    for record in tape.steps.iter().rev() {
        let t = record.t;
        let alpha = schedule.alpha(t);
        let beta = schedule.beta(t);
        let coef = beta / (alpha * (1.0 - schedule.alpha_bar(t))).sqrt();
        let inv_sqrt_alpha = 1.0 / alpha.sqrt();
        let (mut step_grads, input_grad) = denoiser.net.backward(&record.tape, &u)?;
        // x_{t-1} depends on eps_hat with factor -coef.
        step_grads.scale(-coef);
        acc.add_assign(&step_grads);
        // dLoss/dx_t = u / sqrt(alpha) - coef * (d eps_hat / d x_t)^T u.
        u = (0..dim)
            .map(|i| u[i] * inv_sqrt_alpha - coef * input_grad[i])
            .collect();
    }
    Ok(acc)
}

/// Noise-prediction training loss over an expert batch. For each example a
/// timestep is drawn uniformly, the expert solution is noised to it, and the
/// denoiser is scored on recovering the injected noise:
///
/// ```text
/// loss = mean_i || eps_i - eps_hat(sqrt(ab_t) x0_i + sqrt(1-ab_t) eps_i, t_i, g_i) ||^2
/// ```
///
/// Per-example noise comes from substreams of `noise_seed`, so the loss is a
/// deterministic function of the parameters and the seed (which is what the
/// finite-difference checks rely on), and batch items can run in parallel.
pub fn expert_loss(
    denoiser: &ConditionalDenoiser,
    schedule: &NoiseSchedule,
    batch: &[ExpertExample],
    noise_seed: u64,
) -> Result<(f64, Grads)> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch("expert_loss"));
    }
    let items = exec::map_indexed(batch.len(), |i| -> Result<(f64, Grads)> {
        let example = &batch[i];
        let mut rng = substream_indexed(noise_seed, "expert-item", i as u64);
        let t = rng.random_range(1..=schedule.steps());
        let eps = draw_normal(&mut rng, example.solution_logits.len());
        let x_t = forward_sample(schedule, &example.solution_logits, t, &eps)?;
        let (eps_hat, tape) = denoiser.predict_taped(&x_t, t, &example.condition)?;
        let residual: Vec<f64> = eps_hat.iter().zip(&eps).map(|(p, e)| p - e).collect();
        let loss: f64 = residual.iter().map(|r| r * r).sum();
        let upstream: Vec<f64> = residual.iter().map(|r| 2.0 * r).collect();
        let (grads, _) = denoiser.net.backward(&tape, &upstream)?;
        Ok((loss, grads))
    });
    let mut losses = Vec::with_capacity(batch.len());
    let mut grads = Vec::with_capacity(batch.len());
    for item in items {
        let (l, g) = item?;
        losses.push(l);
        grads.push(g);
    }
    let loss = losses.iter().sum::<f64>() / batch.len() as f64;
    let grad = Grads::mean_of(grads).expect("non-empty batch");
    Ok((loss, grad))
}

/// Loss-only variant generic over the noise predictor, used by tests that
/// substitute analytic predictors, and by evaluation code that does not need
/// gradients. Draws the same noise stream as [`expert_loss`].
pub fn expert_loss_value<P>(
    predict: P,
    schedule: &NoiseSchedule,
    batch: &[ExpertExample],
    noise_seed: u64,
) -> Result<f64>
where
    P: Fn(&[f64], usize, &[f64]) -> Vec<f64> + Sync + Send,
{
    if batch.is_empty() {
        return Err(Error::EmptyBatch("expert_loss_value"));
    }
    let losses = exec::map_indexed(batch.len(), |i| -> Result<f64> {
        let example = &batch[i];
        let mut rng = substream_indexed(noise_seed, "expert-item", i as u64);
        let t = rng.random_range(1..=schedule.steps());
        let eps = draw_normal(&mut rng, example.solution_logits.len());
        let x_t = forward_sample(schedule, &example.solution_logits, t, &eps)?;
        let eps_hat = predict(&x_t, t, &example.condition);
        Ok(eps_hat.iter().zip(&eps).map(|(p, e)| (p - e) * (p - e)).sum())
    });
    let mut total = 0.0;
    for l in losses {
        total += l?;
    }
    Ok(total / batch.len() as f64)
}
