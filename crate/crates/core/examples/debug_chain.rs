// Scratch calibration for the MDP and bandit trainers (not part of the
// test suite).

use gdopt_core::d2sac::{evaluate_greedy, train_mdp, D2sacConfig};
use gdopt_core::envs::{BanditEnv, BandwidthEnv, CartPoleEnv, ContractEnv};
use gdopt_core::gdm::{evaluate_policy, train_online, GdmTrainConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let which = args.get(1).map(String::as_str).unwrap_or("cartpole");
    let steps: u64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(30_000);
    let seed: u64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(1);
    let start = std::time::Instant::now();
    match which {
        "cartpole" => {
            let env = CartPoleEnv::new();
            let cfg = D2sacConfig {
                total_steps: steps,
                update_every: args.get(4).and_then(|s| s.parse().ok()).unwrap_or(1),
                entropy_coef: args.get(5).and_then(|s| s.parse().ok()).unwrap_or(0.05),
                batch_size: args.get(6).and_then(|s| s.parse().ok()).unwrap_or(128),
                critic_lr: args.get(7).and_then(|s| s.parse().ok()).unwrap_or(1e-3),
                actor_lr: args.get(8).and_then(|s| s.parse().ok()).unwrap_or(3e-4),
                denoise_steps: args.get(9).and_then(|s| s.parse().ok()).unwrap_or(5),
                beta_max: args.get(10).and_then(|s| s.parse().ok()).unwrap_or(10.0),
                gamma: args.get(11).and_then(|s| s.parse().ok()).unwrap_or(0.99),
                critic_updates_per_round: args.get(12).and_then(|s| s.parse().ok()).unwrap_or(1),
                eval_cadence: 1500,
                ..Default::default()
            };
            let outcome = train_mdp(&env, &cfg, seed, |p| {
                let row = p.row;
                eprintln!(
                    "step {:6}  return {:7.1} ± {:6.1}  aloss {:+.3}  closs {:.4}  {}ms",
                    row.epoch,
                    row.reward_mean,
                    row.reward_std,
                    row.actor_loss.unwrap_or(f64::NAN),
                    row.critic_loss.unwrap_or(f64::NAN),
                    row.wall_ms
                );
            })
            .unwrap();
            let (mean, std) = evaluate_greedy(&outcome.actor, &env, 20, 500, 4242).unwrap();
            println!(
                "FINAL cartpole steps={steps} seed={seed}: return {mean:.2} ± {std:.2} over 20 episodes ({:.1}s)",
                start.elapsed().as_secs_f64()
            );
        }
        "contract" | "bandwidth" => {
            let env: Box<dyn BanditEnv> = if which == "contract" {
                Box::new(ContractEnv::new())
            } else {
                Box::new(BandwidthEnv::new())
            };
            let cfg = GdmTrainConfig {
                epochs: steps,
                denoise_steps: 6,
                eval_cadence: 250,
                eval_states: 16,
                explore_floor: 0.05,
                explore_decay: 0.9995,
                ..Default::default()
            };
            let outcome = train_online(env.as_ref(), &cfg, seed, |p| {
                let row = p.row;
                eprintln!(
                    "epoch {:6}  reward {:9.3}  gap {:+9.4}  aloss {:+9.3}  closs {:9.4}  {}ms",
                    row.epoch,
                    row.reward_mean,
                    row.gap_mean.unwrap_or(f64::NAN),
                    row.actor_loss.unwrap_or(f64::NAN),
                    row.critic_loss.unwrap_or(f64::NAN),
                    row.wall_ms
                );
            })
            .unwrap();
            let eval = evaluate_policy(
                &outcome.denoiser,
                &outcome.schedule,
                env.as_ref(),
                100,
                999,
            )
            .unwrap();
            println!(
                "FINAL {which} epochs={steps} seed={seed}: reward {:.4} gap {:.4} ({:.1}s)",
                eval.reward_mean,
                eval.gap_mean.unwrap_or(f64::NAN),
                start.elapsed().as_secs_f64()
            );
        }
        other => panic!("unknown mode {other}"),
    }
}
