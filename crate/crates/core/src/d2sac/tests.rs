use super::*;
use crate::envs::Step;
use crate::nn::Activation;
use crate::rng::substream;
use proptest::prelude::*;

fn zero_actor(actions: usize, state_dim: usize, steps: usize) -> DiffusionActor {
    let embed = crate::diffusion::time_embedding_dim(steps);
    let net = Mlp::zeros(
        &[actions + embed + state_dim, actions],
        &[Activation::Linear],
    )
    .unwrap();
    DiffusionActor {
        denoiser: ConditionalDenoiser::new(net, actions, state_dim, steps).unwrap(),
        schedule: crate::diffusion::NoiseSchedule::default_vp(steps).unwrap(),
        temperature: 1.0,
    }
}

fn random_actor(actions: usize, state_dim: usize, steps: usize, seed: u64) -> DiffusionActor {
    DiffusionActor {
        denoiser: ConditionalDenoiser::init(
            actions,
            state_dim,
            steps,
            &[16, 16],
            &mut substream(seed, "init-actor"),
        )
        .unwrap(),
        schedule: crate::diffusion::NoiseSchedule::default_vp(steps).unwrap(),
        temperature: 1.0,
    }
}

#[test]
fn untrained_single_step_actor_is_symmetric_across_actions() {
    let actions = 4;
    let actor = zero_actor(actions, 2, 1);
    let n = 10_000;
    let mut rng = substream(1, "sym");
    let mut counts = vec![0usize; actions];
    for _ in 0..n {
        let state = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        let choice = actor.act(&state, &mut rng, ActMode::Sample).unwrap();
        counts[choice.action] += 1;
    }
    let p = 1.0 / actions as f64;
    let sigma = (p * (1.0 - p) / n as f64).sqrt();
    for (a, &c) in counts.iter().enumerate() {
        let freq = c as f64 / n as f64;
        assert!(
            (freq - p).abs() < 3.0 * sigma + 1e-9,
            "action {a} frequency {freq} vs {p}"
        );
    }
}

#[test]
fn greedy_action_is_deterministic_per_seed() {
    let actor = random_actor(3, 2, 4, 2);
    let state = [0.3, -0.8];
    let a = actor
        .act(&state, &mut substream(5, "act"), ActMode::Greedy)
        .unwrap();
    let b = actor
        .act(&state, &mut substream(5, "act"), ActMode::Greedy)
        .unwrap();
    assert_eq!(a.action, b.action);
    assert_eq!(a.probs, b.probs);
}

#[test]
fn one_action_mdp_always_returns_zero() {
    let actor = random_actor(1, 2, 3, 3);
    let mut rng = substream(6, "act");
    for _ in 0..20 {
        let choice = actor.act(&[0.1, 0.2], &mut rng, ActMode::Sample).unwrap();
        assert_eq!(choice.action, 0);
        assert_eq!(choice.probs, vec![1.0]);
    }
}

#[test]
fn td_target_terminal_is_reward() {
    assert_eq!(
        td_target(1.25, true, 0.99, &[0.5, 0.5], &[10.0, 10.0], 0.05),
        1.25
    );
}

#[test]
fn td_target_gamma_zero_is_reward() {
    assert_eq!(
        td_target(-0.5, false, 0.0, &[0.5, 0.5], &[10.0, -3.0], 0.05),
        -0.5
    );
}

#[test]
fn td_target_matches_scalar_recomputation() {
    // Independent scalar evaluation with fixed tables.
    let (r, gamma, lambda) = (1.5, 0.9, 0.05);
    let probs = [0.3f64, 0.7];
    let min_q = [2.0, 1.0];
    let by_hand = r
        + gamma
            * (probs[0] * (min_q[0] - lambda * probs[0].ln())
                + probs[1] * (min_q[1] - lambda * probs[1].ln()));
    let y = td_target(r, false, gamma, &probs, &min_q, lambda);
    assert!((y - by_hand).abs() < 1e-12);
}

#[test]
fn min_q_is_conservative() {
    let mut rng = substream(7, "init");
    let critic = DoubleCritic::init(3, 2, &[8], 0.99, 0.005, 0.05, &mut rng).unwrap();
    let state = [0.1, -0.4, 0.9];
    let min = critic.min_q(&state);
    let q1 = critic.nets().0.forward(&state).unwrap();
    let q2 = critic.nets().1.forward(&state).unwrap();
    for a in 0..2 {
        assert!(min[a] <= q1[a] && min[a] <= q2[a]);
    }
}

#[test]
fn critic_update_regresses_toward_terminal_rewards() {
    // All-terminal transitions make the targets exactly the rewards.
    let mut rng = substream(8, "init");
    let mut critic = DoubleCritic::init(2, 2, &[16, 16], 0.99, 0.01, 0.05, &mut rng).unwrap();
    let actor = random_actor(2, 2, 3, 9);
    let batch: Vec<Transition> = (0..32)
        .map(|i| Transition {
            state: vec![(i % 7) as f64 / 7.0, (i % 3) as f64 / 3.0],
            action: i % 2,
            reward: if i % 2 == 0 { 1.0 } else { -1.0 },
            next_state: vec![0.0, 0.0],
            terminal: true,
        })
        .collect();
    let mut opt1 = Adam::new(3e-3, critic.nets().0);
    let mut opt2 = Adam::new(3e-3, critic.nets().1);
    let mut first = None;
    let mut last = (0.0, 0.0);
    for step in 0..400u64 {
        last = critic_update(&mut critic, &actor, &batch, &mut opt1, &mut opt2, step).unwrap();
        first.get_or_insert(last);
    }
    let first = first.unwrap();
    assert!(last.0 < first.0 * 0.05, "q1 loss {} -> {}", first.0, last.0);
    assert!(last.1 < first.1 * 0.05, "q2 loss {} -> {}", first.1, last.1);
}

#[test]
fn target_networks_trail_online_networks() {
    let mut rng = substream(10, "init");
    let mut critic = DoubleCritic::init(2, 2, &[8], 0.9, 0.05, 0.0, &mut rng).unwrap();
    let actor = random_actor(2, 2, 2, 11);
    let batch = vec![Transition {
        state: vec![0.2, 0.4],
        action: 0,
        reward: 1.0,
        next_state: vec![0.0, 0.0],
        terminal: true,
    }];
    let target_before = critic.targets().0.clone();
    let mut opt1 = Adam::new(1e-2, critic.nets().0);
    let mut opt2 = Adam::new(1e-2, critic.nets().1);
    critic_update(&mut critic, &actor, &batch, &mut opt1, &mut opt2, 0).unwrap();
    // Targets moved, but only by the soft-update fraction.
    assert_ne!(*critic.targets().0, target_before);
    let online_delta: f64 = critic
        .nets()
        .0
        .flatten()
        .iter()
        .zip(target_before.flatten())
        .map(|(a, b)| (a - b).abs())
        .sum();
    let target_delta: f64 = critic
        .targets()
        .0
        .flatten()
        .iter()
        .zip(target_before.flatten())
        .map(|(a, b)| (a - b).abs())
        .sum();
    assert!(target_delta < online_delta * 0.1);
}

struct ConstActionCritic(Vec<f64>);

impl ActionCritic for ConstActionCritic {
    fn min_action_values(&self, _state: &[f64]) -> Vec<f64> {
        self.0.clone()
    }
}

#[test]
fn constant_critic_reduces_actor_update_to_entropy_gradient() {
    let states: Vec<Vec<f64>> = vec![vec![0.1, 0.2], vec![-0.4, 0.3]];
    let run = |offset: f64| {
        let mut actor = random_actor(2, 2, 3, 12);
        let mut opt = Adam::new(1e-3, actor.denoiser.net());
        for step in 0..5u64 {
            actor_update(
                &mut actor,
                &ConstActionCritic(vec![offset, offset]),
                0.5,
                &states,
                &mut opt,
                step,
            )
            .unwrap();
        }
        actor.denoiser.net().flatten()
    };
    // Any constant value surface contributes nothing to the gradient beyond
    // rounding dust, so the trajectories agree to high precision.
    let zero = run(0.0);
    let offset = run(7.5);
    let worst = zero
        .iter()
        .zip(&offset)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    assert!(worst < 1e-6, "parameter trajectories diverged by {worst}");
}

#[test]
fn entropy_dominance_drives_policy_to_uniform() {
    let states: Vec<Vec<f64>> = (0..8)
        .map(|i| vec![(i as f64 / 8.0) - 0.5, ((i * 3) % 8) as f64 / 8.0])
        .collect();
    let mut actor = DiffusionActor {
        denoiser: ConditionalDenoiser::init(
            3,
            2,
            2,
            &[32, 32],
            &mut substream(13, "init-actor"),
        )
        .unwrap(),
        schedule: crate::diffusion::NoiseSchedule::default_vp(2).unwrap(),
        temperature: 1.0,
    };
    let mut opt = Adam::new(3e-3, actor.denoiser.net());
    for step in 0..1500u64 {
        actor_update(
            &mut actor,
            &ConstActionCritic(vec![0.0; 3]),
            10.0,
            &states,
            &mut opt,
            step,
        )
        .unwrap();
    }
    let mut rng = substream(14, "check");
    let mut worst_tv: f64 = 0.0;
    let mut mean_tv = 0.0;
    let n = 100;
    for i in 0..n {
        let probs = actor.policy(&states[i % states.len()], &mut rng).unwrap();
        let tv: f64 = 0.5 * probs.iter().map(|p| (p - 1.0 / 3.0).abs()).sum::<f64>();
        worst_tv = worst_tv.max(tv);
        mean_tv += tv / n as f64;
    }
    assert!(mean_tv < 0.05, "mean TV {mean_tv}, worst {worst_tv}");
}

#[test]
fn two_armed_bandit_concentrates_on_better_arm() {
    let states = vec![vec![0.0, 0.0]];
    let mut actor = random_actor(2, 2, 3, 15);
    let mut opt = Adam::new(3e-3, actor.denoiser.net());
    for step in 0..400u64 {
        actor_update(
            &mut actor,
            &ConstActionCritic(vec![1.0, 0.0]),
            0.0,
            &states,
            &mut opt,
            step,
        )
        .unwrap();
    }
    let mut rng = substream(16, "check");
    let mut mean_p0 = 0.0;
    for _ in 0..100 {
        mean_p0 += actor.policy(&states[0], &mut rng).unwrap()[0] / 100.0;
    }
    assert!(mean_p0 > 0.95, "p(best arm) = {mean_p0}");
}

/// Fixed-horizon MDP paying a constant reward for every action.
#[derive(Clone)]
struct ConstantEnv {
    horizon: u64,
    taken: u64,
}

impl MdpEnv for ConstantEnv {
    fn state_dim(&self) -> usize {
        1
    }
    fn action_count(&self) -> usize {
        2
    }
    fn reset(&mut self, _rng: &mut dyn rand::RngCore) -> Vec<f64> {
        self.taken = 0;
        vec![0.0]
    }
    fn step(&mut self, _action: usize, _rng: &mut dyn rand::RngCore) -> crate::Result<Step> {
        self.taken += 1;
        Ok(Step {
            state: vec![self.taken as f64 / self.horizon as f64],
            reward: 0.5,
            terminal: false,
            truncated: self.taken >= self.horizon,
        })
    }
}

#[test]
fn constant_reward_mdp_gives_flat_learning_curve() {
    let env = ConstantEnv {
        horizon: 10,
        taken: 0,
    };
    let cfg = D2sacConfig {
        total_steps: 600,
        warmup_steps: 100,
        batch_size: 16,
        eval_cadence: 200,
        eval_episodes: 4,
        hidden: vec![8],
        denoise_steps: 2,
        ..Default::default()
    };
    let outcome = train_mdp(&env, &cfg, 17, |_| {}).unwrap();
    assert!(outcome.metrics.len() >= 3);
    for row in &outcome.metrics {
        assert!((row.reward_mean - 5.0).abs() < 1e-9);
        assert_eq!(row.reward_std, 0.0);
    }
    // Ten-step episodes, logged on truncation.
    assert!(outcome.episode_log.iter().all(|(_, ret, len)| {
        (*ret - 5.0).abs() < 1e-9 && *len == 10
    }));
}

#[test]
fn replay_skips_pending_rows_until_patched() {
    let mut memory = ReplayMemory::new(8);
    let make = |tag: f64| Transition {
        state: vec![tag],
        action: 0,
        reward: 0.0,
        next_state: vec![tag],
        terminal: false,
    };
    memory.push(make(1.0));
    let ticket = memory.push_pending(make(2.0));
    assert_eq!(memory.len(), 2);
    assert_eq!(memory.ready_len(), 1);
    let mut rng = substream(18, "replay");
    let batch = memory.sample(8, &mut rng);
    assert_eq!(batch.len(), 1);
    assert_eq!(batch[0].state, vec![1.0]);
    assert!(memory.fill_reward(ticket, 3.5));
    assert_eq!(memory.ready_len(), 2);
    let batch = memory.sample(8, &mut rng);
    assert!(batch.iter().any(|t| t.reward == 3.5));
    // Patching twice is rejected.
    assert!(!memory.fill_reward(ticket, 9.9));
}

#[test]
fn pending_ticket_dies_with_eviction() {
    let mut memory = ReplayMemory::new(2);
    let make = |tag: f64| Transition {
        state: vec![tag],
        action: 0,
        reward: 0.0,
        next_state: vec![tag],
        terminal: false,
    };
    let ticket = memory.push_pending(make(1.0));
    memory.push(make(2.0));
    memory.push(make(3.0));
    assert!(!memory.fill_reward(ticket, 1.0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn replay_eviction_order_equals_insertion_order(
        capacity in 1usize..16,
        count in 0usize..64,
    ) {
        let mut memory = ReplayMemory::new(capacity);
        for i in 0..count {
            memory.push(Transition {
                state: vec![i as f64],
                action: 0,
                reward: i as f64,
                next_state: vec![],
                terminal: false,
            });
        }
        let kept: Vec<f64> = memory.iter_fifo().map(|t| t.reward).collect();
        let expected: Vec<f64> = (count.saturating_sub(capacity)..count)
            .map(|i| i as f64)
            .collect();
        prop_assert_eq!(kept, expected);
    }

    #[test]
    fn softmax_entropy_is_within_bounds(
        logits in proptest::collection::vec(-30.0f64..30.0, 1..6),
    ) {
        let probs = softmax(&logits, 1.0);
        let h = entropy(&probs);
        prop_assert!(h >= -1e-12);
        prop_assert!(h <= (probs.len() as f64).ln() + 1e-9);
        let total: f64 = probs.iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-9);
    }
}
