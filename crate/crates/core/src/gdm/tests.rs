use super::*;
use crate::envs::PowerEnv;
use crate::rng::substream;

fn zero_evaluator(cond_dim: usize, solution_dim: usize) -> SolutionEvaluator {
    let net = Mlp::zeros(
        &[cond_dim + solution_dim, 1],
        &[crate::nn::Activation::Linear],
    )
    .unwrap();
    SolutionEvaluator::new(net, cond_dim, solution_dim).unwrap()
}

fn experience(cond: Vec<f64>, solution: Vec<f64>, reward: f64) -> BanditExperience {
    BanditExperience {
        logits: vec![0.0; solution.len()],
        condition: cond,
        solution,
        reward,
    }
}

#[test]
fn critic_loss_of_zero_predictor_is_squared_reward() {
    let evaluator = zero_evaluator(2, 2);
    let batch = vec![experience(vec![1.0, 2.0], vec![0.5, 0.5], 1.0)];
    let (loss, _) = critic_loss(&evaluator, &batch).unwrap();
    assert!((loss - 1.0).abs() < 1e-12);
}

#[test]
fn critic_loss_is_zero_when_predictions_match_rewards() {
    let mut rng = substream(1, "init");
    let evaluator = SolutionEvaluator::init(2, 2, &[8], &mut rng).unwrap();
    let batch: Vec<BanditExperience> = (0..5)
        .map(|i| {
            let cond = vec![i as f64 * 0.1, 0.3];
            let solution = vec![0.2, 0.7];
            let reward = evaluator.value(&cond, &solution);
            experience(cond, solution, reward)
        })
        .collect();
    let (loss, grads) = critic_loss(&evaluator, &batch).unwrap();
    assert!(loss < 1e-24);
    assert!(grads.global_norm() < 1e-10);
}

#[test]
fn critic_loss_rejects_empty_batch() {
    let evaluator = zero_evaluator(1, 1);
    assert!(matches!(
        critic_loss(&evaluator, &[]),
        Err(Error::EmptyBatch(_))
    ));
}

#[test]
fn critic_gradient_matches_finite_differences() {
    let mut rng = substream(2, "init");
    let evaluator = SolutionEvaluator::init(2, 2, &[6], &mut rng).unwrap();
    let batch: Vec<BanditExperience> = (0..4)
        .map(|i| {
            experience(
                vec![0.1 * i as f64, -0.2],
                vec![0.3, 0.4 + 0.1 * i as f64],
                (i as f64).sin(),
            )
        })
        .collect();
    let (_, grads) = critic_loss(&evaluator, &batch).unwrap();
    let flat = {
        let mut flat = Vec::new();
        for k in 0..grads.weights.len() {
            flat.extend_from_slice(&grads.weights[k]);
            flat.extend_from_slice(&grads.bias[k]);
        }
        flat
    };
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for (i, a) in flat.iter().enumerate() {
        let eval = |delta: f64| {
            let mut nudged = evaluator.clone();
            nudged.net_mut().nudge(i, delta);
            critic_loss(&nudged, &batch).unwrap().0
        };
        let fd = (eval(h) - eval(-h)) / (2.0 * h);
        let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-3);
        worst = worst.max(rel);
    }
    assert!(worst < 1e-4, "worst relative error {worst}");
}

struct ConstCritic(f64);

impl SolutionCritic for ConstCritic {
    fn value(&self, _cond: &[f64], _solution: &[f64]) -> f64 {
        self.0
    }
    fn value_and_solution_grad(&self, _cond: &[f64], solution: &[f64]) -> (f64, Vec<f64>) {
        (self.0, vec![0.0; solution.len()])
    }
}

/// Value `-(p - target)^2`, an analytic bowl around a fixed target.
struct BowlCritic {
    target: Vec<f64>,
}

impl SolutionCritic for BowlCritic {
    fn value(&self, _cond: &[f64], solution: &[f64]) -> f64 {
        -solution
            .iter()
            .zip(&self.target)
            .map(|(p, t)| (p - t) * (p - t))
            .sum::<f64>()
    }
    fn value_and_solution_grad(&self, cond: &[f64], solution: &[f64]) -> (f64, Vec<f64>) {
        (
            self.value(cond, solution),
            solution
                .iter()
                .zip(&self.target)
                .map(|(p, t)| -2.0 * (p - t))
                .collect(),
        )
    }
}

fn tiny_denoiser(solution_dim: usize, cond_dim: usize, steps: usize, seed: u64) -> ConditionalDenoiser {
    ConditionalDenoiser::init(
        solution_dim,
        cond_dim,
        steps,
        &[16, 16],
        &mut substream(seed, "init-actor"),
    )
    .unwrap()
}

#[test]
fn constant_critic_gives_zero_actor_gradient() {
    let schedule = NoiseSchedule::default_vp(3).unwrap();
    let denoiser = tiny_denoiser(2, 1, 3, 10);
    let squash = Squash::Box {
        lo: vec![-1.0, -1.0],
        hi: vec![1.0, 1.0],
    };
    let (loss, grads) = actor_loss(
        &denoiser,
        &ConstCritic(3.5),
        &schedule,
        &squash,
        &[vec![0.2]],
        99,
    )
    .unwrap();
    assert!((loss + 3.5).abs() < 1e-12);
    assert!(grads.is_zero());
}

#[test]
fn actor_loss_rejects_empty_conditions() {
    let schedule = NoiseSchedule::default_vp(3).unwrap();
    let denoiser = tiny_denoiser(2, 1, 3, 11);
    let squash = Squash::Simplex { budget: 1.0 };
    assert!(matches!(
        actor_loss(&denoiser, &ConstCritic(0.0), &schedule, &squash, &[], 0),
        Err(Error::EmptyBatch(_))
    ));
}

#[test]
fn quadratic_bowl_pulls_generated_solutions_to_target() {
    let schedule = NoiseSchedule::default_vp(3).unwrap();
    let mut denoiser = tiny_denoiser(2, 1, 3, 12);
    let squash = Squash::Box {
        lo: vec![-1.0, -1.0],
        hi: vec![1.0, 1.0],
    };
    let critic = BowlCritic {
        target: vec![0.3, -0.4],
    };
    let conditions = vec![vec![0.5]; 8];
    let mut adam = Adam::new(5e-3, denoiser.net());
    let mut losses = Vec::new();
    for step in 0..50u64 {
        let (loss, mut grads) = actor_loss(
            &denoiser,
            &critic,
            &schedule,
            &squash,
            &conditions,
            derive_seed(1000, "bowl", step),
        )
        .unwrap();
        grads.clip_global_norm(GRAD_CLIP_NORM);
        adam.step(denoiser.net_mut(), &grads).unwrap();
        losses.push(loss);
    }
    let first: f64 = losses[..5].iter().sum::<f64>() / 5.0;
    let last: f64 = losses[45..].iter().sum::<f64>() / 5.0;
    assert!(
        last < first * 0.5,
        "loss did not fall: first {first}, last {last}"
    );
    // The generated solutions end near the bowl target.
    let mut rng = substream(77, "check");
    let logits = sample_chain(&denoiser, &schedule, &[0.5], &mut rng).unwrap();
    let p = squash.apply(&logits);
    let dist = ((p[0] - 0.3).powi(2) + (p[1] + 0.4).powi(2)).sqrt();
    assert!(dist < 0.25, "generated {p:?} too far from target");
}

#[test]
fn full_chain_actor_gradient_matches_finite_differences() {
    let schedule = NoiseSchedule::default_vp(2).unwrap();
    let denoiser = tiny_denoiser(2, 2, 2, 13);
    let mut rng = substream(14, "init");
    let evaluator = SolutionEvaluator::init(2, 2, &[6], &mut rng).unwrap();
    let squash = Squash::Simplex { budget: 1.0 };
    let conditions = vec![vec![0.4, -0.1], vec![-0.3, 0.2]];
    let seed = 15;
    let (_, grads) = actor_loss(&denoiser, &evaluator, &schedule, &squash, &conditions, seed).unwrap();
    let flat = {
        let mut flat = Vec::new();
        for k in 0..grads.weights.len() {
            flat.extend_from_slice(&grads.weights[k]);
            flat.extend_from_slice(&grads.bias[k]);
        }
        flat
    };
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for (i, a) in flat.iter().enumerate() {
        let eval = |delta: f64| {
            let mut nudged = denoiser.clone();
            nudged.net_mut().nudge(i, delta);
            actor_loss(&nudged, &evaluator, &schedule, &squash, &conditions, seed)
                .unwrap()
                .0
        };
        let fd = (eval(h) - eval(-h)) / (2.0 * h);
        let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-3);
        worst = worst.max(rel);
    }
    assert!(worst < 1e-3, "worst relative error {worst}");
}

#[test]
fn actor_loss_does_not_touch_evaluator_parameters() {
    let schedule = NoiseSchedule::default_vp(3).unwrap();
    let denoiser = tiny_denoiser(2, 1, 3, 16);
    let mut rng = substream(17, "init");
    let evaluator = SolutionEvaluator::init(1, 2, &[6], &mut rng).unwrap();
    let before = evaluator.net().clone();
    let squash = Squash::Simplex { budget: 1.0 };
    actor_loss(&denoiser, &evaluator, &schedule, &squash, &[vec![0.1]], 18).unwrap();
    assert_eq!(before, *evaluator.net());
}

#[test]
fn single_channel_power_env_is_immediately_optimal() {
    let env = PowerEnv::new(1, 0.5, 2.5, 10.0).unwrap();
    let cfg = GdmTrainConfig {
        epochs: 30,
        eval_cadence: 10,
        eval_states: 8,
        hidden: vec![8],
        denoise_steps: 3,
        ..Default::default()
    };
    let outcome = train_online(&env, &cfg, 7, |_| {}).unwrap();
    assert!(!outcome.metrics.is_empty());
    for row in &outcome.metrics {
        let gap = row.gap_mean.unwrap();
        assert!(gap.abs() < 1e-9, "gap {gap} should be zero with one channel");
    }
}

#[test]
fn online_training_is_deterministic_per_seed() {
    let env = PowerEnv::new(2, 0.5, 2.5, 10.0).unwrap();
    let cfg = GdmTrainConfig {
        epochs: 40,
        batch_size: 16,
        eval_cadence: 20,
        eval_states: 4,
        hidden: vec![8],
        denoise_steps: 3,
        ..Default::default()
    };
    let a = train_online(&env, &cfg, 21, |_| {}).unwrap();
    let b = train_online(&env, &cfg, 21, |_| {}).unwrap();
    assert_eq!(a.denoiser.net(), b.denoiser.net());
    for (ra, rb) in a.metrics.iter().zip(&b.metrics) {
        assert_eq!(ra.epoch, rb.epoch);
        assert_eq!(ra.reward_mean.to_bits(), rb.reward_mean.to_bits());
        assert_eq!(ra.gap_mean.map(f64::to_bits), rb.gap_mean.map(f64::to_bits));
    }
}

#[test]
fn expert_memorizes_a_single_example() {
    let env = PowerEnv::new(2, 0.5, 2.5, 10.0).unwrap();
    let mut rng = substream(30, "state");
    let cond = env.sample_condition(&mut rng);
    let (best, best_rate) = env.oracle(&cond).unwrap();
    let dataset = vec![crate::diffusion::ExpertExample {
        condition: cond.clone(),
        solution_logits: env.squash_spec().preimage(&best),
    }];
    let cfg = GdmTrainConfig {
        epochs: 1500,
        batch_size: 1,
        actor_lr: 2e-3,
        denoise_steps: 5,
        eval_cadence: 1500,
        eval_states: 1,
        hidden: vec![32, 32],
        ..Default::default()
    };
    let outcome = train_expert(&env, &dataset, &cfg, 31, |_| {}).unwrap();
    let (_, reward) = infer(&outcome.denoiser, &outcome.schedule, &env, &cond, 32).unwrap();
    assert!(
        (reward - best_rate).abs() < 1e-2,
        "memorized reward {reward} vs expert {best_rate}"
    );
}

#[test]
fn infer_is_deterministic_and_bounded_by_oracle() {
    let env = PowerEnv::new(3, 0.5, 2.5, 10.0).unwrap();
    let denoiser = tiny_denoiser(3, 3, 4, 33);
    let schedule = NoiseSchedule::default_vp(4).unwrap();
    let mut rng = substream(34, "state");
    for _ in 0..10 {
        let cond = env.sample_condition(&mut rng);
        let (p1, r1) = infer(&denoiser, &schedule, &env, &cond, 35).unwrap();
        let (p2, r2) = infer(&denoiser, &schedule, &env, &cond, 35).unwrap();
        assert_eq!(p1, p2);
        assert_eq!(r1.to_bits(), r2.to_bits());
        let (_, best) = env.oracle(&cond).unwrap();
        assert!(r1 <= best + 1e-9);
    }
}

#[test]
fn expert_dataset_requires_an_oracle() {
    let env = PowerEnv::new(2, 0.5, 2.5, 10.0).unwrap();
    let dataset = expert_dataset(&env, 5, 36).unwrap();
    assert_eq!(dataset.len(), 5);
    for ex in &dataset {
        // Labels squash back onto the oracle allocation.
        let p = env.squash(&ex.solution_logits);
        let (best, _) = env.oracle(&ex.condition).unwrap();
        for (a, b) in p.iter().zip(&best) {
            assert!((a - b).abs() < 1e-6);
        }
    }
}

#[test]
fn train_rejects_invalid_config() {
    let env = PowerEnv::new(2, 0.5, 2.5, 10.0).unwrap();
    let cfg = GdmTrainConfig {
        actor_lr: 0.0,
        ..Default::default()
    };
    assert!(matches!(
        train_online(&env, &cfg, 1, |_| {}),
        Err(Error::InvalidConfig(_))
    ));
}
