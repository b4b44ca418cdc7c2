// Scratch calibration harness (not part of the test suite).

use gdopt_core::envs::{average_allocation, BanditEnv, PowerEnv};
use gdopt_core::gdm::{evaluate_policy, train_online, GdmTrainConfig};
use gdopt_core::rng::{substream, substream_indexed};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let epochs: u64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(2000);
    let seed: u64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(1);
    let m: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(3);
    let t: usize = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(9);
    let lr: f64 = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(1e-3);

    let hidden: usize = args.get(6).and_then(|s| s.parse().ok()).unwrap_or(64);
    let critic_lr: f64 = args.get(7).and_then(|s| s.parse().ok()).unwrap_or(3e-4);
    let floor: f64 = args.get(8).and_then(|s| s.parse().ok()).unwrap_or(0.01);
    let decay: f64 = args.get(9).and_then(|s| s.parse().ok()).unwrap_or(0.999);

    let (gmin, gmax) = match m {
        5 => (0.5, 5.0),
        55 => (0.1, 5.0),
        _ => (0.5, 2.5),
    };
    let m = if m == 55 { 5 } else { m };
    let env = PowerEnv::new(m, gmin, gmax, 10.0).unwrap();
    let cfg = GdmTrainConfig {
        epochs,
        actor_lr: lr,
        critic_lr,
        denoise_steps: t,
        eval_cadence: 50,
        hidden: vec![hidden, hidden],
        explore_floor: floor,
        explore_decay: decay,
        ..Default::default()
    };
    let start = std::time::Instant::now();
    let mut crossing: Option<u64> = None;
    let outcome = train_online(&env, &cfg, seed, |p| {
        let row = p.row;
        if crossing.is_none() && row.gap_mean.is_some_and(|g| g <= 0.25) {
            crossing = Some(row.epoch);
        }
        eprintln!(
            "epoch {:5}  reward {:.3}  gap {:+.4}  aloss {:+.3}  closs {:.4}  sigma {:.3}  {}ms",
            row.epoch,
            row.reward_mean,
            row.gap_mean.unwrap_or(f64::NAN),
            row.actor_loss.unwrap_or(f64::NAN),
            row.critic_loss.unwrap_or(f64::NAN),
            row.sigma.unwrap_or(f64::NAN),
            row.wall_ms
        );
    })
    .unwrap();
    let final_eval =
        evaluate_policy(&outcome.denoiser, &outcome.schedule, &env, 100, 999).unwrap();
    // Baseline comparison on the same fresh states.
    let mut avg_total = 0.0;
    let mut oracle_total = 0.0;
    for i in 0..100u64 {
        let mut rng = substream_indexed(999, "eval-state", i);
        let g = env.sample_condition(&mut rng);
        avg_total += env.evaluate(&g, &average_allocation(&env));
        oracle_total += env.oracle(&g).unwrap().1;
    }
    let _ = substream(0, "x");
    println!(
        "FINAL m={m} t={t} lr={lr} seed={seed}: gap {:.6}  reward {:.6}  avg-gap {:.6}  margin-vs-avg {:+.6}  cross025 {:?}  ({:.1}s)",
        final_eval.gap_mean.unwrap(),
        final_eval.reward_mean,
        oracle_total / 100.0 - avg_total / 100.0,
        final_eval.reward_mean - avg_total / 100.0,
        crossing,
        start.elapsed().as_secs_f64()
    );
}
