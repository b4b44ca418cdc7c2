// Scratch diagnosis: is the diffusion policy's residual chain noise what
// limits greedy evaluation returns?

use gdopt_core::d2sac::{train_mdp, ActMode, D2sacConfig, DiffusionActor};
use gdopt_core::diffusion::sample_chain;
use gdopt_core::envs::{CartPoleEnv, MdpEnv};
use gdopt_core::rng::{substream, substream_indexed};

fn greedy_avg(actor: &DiffusionActor, state: &[f64], draws: usize, rng: &mut rand_chacha::ChaCha8Rng) -> usize {
    let mut mean = vec![0.0; actor.action_count()];
    for _ in 0..draws {
        let logits = sample_chain(&actor.denoiser, &actor.schedule, state, rng).unwrap();
        for (m, z) in mean.iter_mut().zip(&logits) {
            *m += z / draws as f64;
        }
    }
    mean.iter().enumerate().fold((0, f64::NEG_INFINITY), |b, (a, &v)| if v > b.1 { (a, v) } else { b }).0
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let steps: u64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(15_000);
    let env = CartPoleEnv::new();
    let cfg = D2sacConfig {
        total_steps: steps,
        batch_size: 64,
        denoise_steps: 3,
        beta_max: 5.0,
        eval_cadence: 5000,
        ..Default::default()
    };
    let outcome = train_mdp(&env, &cfg, 1, |p| {
        eprintln!("step {:6} return {:.1}", p.row.epoch, p.row.reward_mean);
    })
    .unwrap();
    let actor = outcome.actor;

    // Flip rate: how often does a fresh chain draw change the argmax?
    let mut rng = substream(99, "diag");
    let mut probe_env = env.clone();
    let mut state = probe_env.reset(&mut rng);
    let mut flips = 0;
    let mut total = 0;
    let mut gaps = Vec::new();
    for _ in 0..300 {
        let reference = actor.act(&state, &mut rng, ActMode::Greedy).unwrap();
        for _ in 0..5 {
            let redraw = actor.act(&state, &mut rng, ActMode::Greedy).unwrap();
            total += 1;
            if redraw.action != reference.action {
                flips += 1;
            }
        }
        let logits = sample_chain(&actor.denoiser, &actor.schedule, &state, &mut rng).unwrap();
        let mut sorted = logits.clone();
        sorted.sort_by(f64::total_cmp);
        gaps.push(sorted[sorted.len() - 1] - sorted[sorted.len() - 2]);
        let step = probe_env.step(reference.action, &mut rng).unwrap();
        state = if step.terminal || step.truncated {
            probe_env.reset(&mut rng)
        } else {
            step.state
        };
    }
    println!(
        "argmax flip rate {:.3}, median top-logit gap {:.3}",
        flips as f64 / total as f64,
        { let mut g = gaps.clone(); g.sort_by(f64::total_cmp); g[g.len()/2] }
    );

    // Return with 1-draw greedy vs 8-draw averaged logits.
    for draws in [1usize, 8] {
        let mut mean_return = 0.0;
        for ep in 0..10u64 {
            let mut env = env.clone();
            let mut rng = substream_indexed(7, "avg-eval", ep);
            let mut state = env.reset(&mut rng);
            let mut total = 0.0;
            for _ in 0..500 {
                let a = if draws == 1 {
                    actor.act(&state, &mut rng, ActMode::Greedy).unwrap().action
                } else {
                    greedy_avg(&actor, &state, draws, &mut rng)
                };
                let step = env.step(a, &mut rng).unwrap();
                total += step.reward;
                if step.terminal || step.truncated {
                    break;
                }
                state = step.state;
            }
            mean_return += total / 10.0;
        }
        println!("greedy with {draws}-draw logits: mean return {mean_return:.1}");
    }
}
