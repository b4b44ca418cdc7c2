//! Backends of the CLI subcommands: train, eval, oracle, sweep.
//!
//! A run is fully determined by (config, seed): every output byte except the
//! measured wall_ms column reproduces exactly. Metrics and checkpoints are
//! written atomically, and the checkpoint on disk always holds the latest
//! parameters that produced a finite evaluation, so a run that aborts on a
//! non-finite loss leaves its last good state behind.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::checkpoint::Checkpoint;
use super::config::{Algorithm, BaselineKind, EnvConfig, RunConfig};
use super::metrics::{write_metrics_csv, MetricsRow};
use crate::d2sac::{self, ActMode, DiffusionActor, MdpProgress};
use crate::diffusion::{ConditionalDenoiser, NoiseSchedule};
use crate::envs::{average_allocation, random_allocation, BanditEnv, MdpEnv};
use crate::error::{Error, Result};
use crate::exec;
use crate::gdm::{self, evaluate_policy, expert_dataset, TrainProgress};
use crate::rng::{substream, substream_indexed};

/// Filenames inside a run's output directory.
pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const EPISODES_FILE: &str = "episodes.csv";
pub const CONFIG_KEY: &str = "config";
pub const ALGORITHM_KEY: &str = "algorithm";

/// Summary of a training run.
#[derive(Debug, Clone, Serialize)]
pub struct TrainReport {
    pub algorithm: String,
    pub epochs: u64,
    pub final_reward_mean: f64,
    pub final_gap_mean: Option<f64>,
    pub metrics_path: PathBuf,
    pub checkpoint_path: PathBuf,
}

fn net_checkpoint(
    config: &RunConfig,
    denoiser: &ConditionalDenoiser,
    evaluator: Option<&gdm::SolutionEvaluator>,
    schedule: &NoiseSchedule,
) -> Checkpoint {
    let mut ckpt = Checkpoint::new(config.seed, Some(*schedule.spec()));
    ckpt.push_net("denoiser", denoiser.net());
    if let Some(eval) = evaluator {
        ckpt.push_net("evaluator", eval.net());
    }
    ckpt.insert_metadata(ALGORITHM_KEY, config.algorithm.name());
    ckpt.insert_metadata(CONFIG_KEY, config.to_toml());
    ckpt.insert_metadata("solution_dim", denoiser.solution_dim().to_string());
    ckpt.insert_metadata("cond_dim", denoiser.cond_dim().to_string());
    ckpt
}

fn actor_checkpoint(config: &RunConfig, actor: &DiffusionActor) -> Checkpoint {
    let mut ckpt = Checkpoint::new(config.seed, Some(*actor.schedule.spec()));
    ckpt.push_net("denoiser", actor.denoiser.net());
    ckpt.insert_metadata(ALGORITHM_KEY, config.algorithm.name());
    ckpt.insert_metadata(CONFIG_KEY, config.to_toml());
    ckpt.insert_metadata("solution_dim", actor.denoiser.solution_dim().to_string());
    ckpt.insert_metadata("cond_dim", actor.denoiser.cond_dim().to_string());
    ckpt
}

fn write_episode_csv(path: &Path, episodes: &[(u64, f64, u64)]) -> Result<()> {
    let tmp = path.with_extension("csv.tmp");
    {
        let file = fs::File::create(&tmp)?;
        let mut writer = csv::Writer::from_writer(file);
        writer.write_record(["episode", "return", "steps"])?;
        for (index, ret, steps) in episodes {
            writer.write_record([index.to_string(), ret.to_string(), steps.to_string()])?;
        }
        writer.flush()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Runs a full training job from a parsed config, streaming rows to
/// `on_row`, and writes metrics plus the final checkpoint.
pub fn run_train(config: &RunConfig, mut on_row: impl FnMut(&MetricsRow)) -> Result<TrainReport> {
    config.validate()?;
    let out_dir = config.resolved_out_dir();
    fs::create_dir_all(&out_dir)?;
    let metrics_path = out_dir.join(METRICS_FILE);
    let checkpoint_path = out_dir.join(CHECKPOINT_FILE);

    let (metrics, episodes) = match config.algorithm {
        Algorithm::GdmOnline | Algorithm::GdmExpert => {
            let env = config.env.build_bandit()?;
            let mut sink = |p: TrainProgress| {
                on_row(p.row);
                let ckpt = net_checkpoint(config, p.denoiser, p.evaluator, p.schedule);
                if let Err(e) = ckpt.save(&checkpoint_path) {
                    eprintln!("warning: checkpoint write failed: {e}");
                }
            };
            let outcome = if config.algorithm == Algorithm::GdmOnline {
                gdm::train_online(env.as_ref(), &config.gdm, config.seed, &mut sink)?
            } else {
                let dataset = expert_dataset(
                    env.as_ref(),
                    config.gdm.expert_dataset_size,
                    config.seed,
                )?;
                gdm::train_expert(env.as_ref(), &dataset, &config.gdm, config.seed, &mut sink)?
            };
            (outcome.metrics, None)
        }
        Algorithm::D2sac => {
            let env = config.env.build_mdp()?;
            let mut sink = |p: MdpProgress| {
                on_row(p.row);
                if let Err(e) = actor_checkpoint(config, p.actor).save(&checkpoint_path) {
                    eprintln!("warning: checkpoint write failed: {e}");
                }
            };
            let outcome = d2sac::train_mdp(&env, &config.d2sac, config.seed, &mut sink)?;
            (outcome.metrics, Some(outcome.episode_log))
        }
        Algorithm::Baseline => {
            let env = config.env.build_bandit()?;
            let kind = config.baseline.expect("validated");
            let row = baseline_row(env.as_ref(), kind, config.baseline_states, config.seed)?;
            on_row(&row);
            (vec![row], None)
        }
    };

    write_metrics_csv(&metrics_path, &metrics)?;
    if let Some(episodes) = &episodes {
        write_episode_csv(&out_dir.join(EPISODES_FILE), episodes)?;
    }
    let last = metrics.last().ok_or_else(|| {
        Error::InvalidConfig("training produced no evaluation rows".into())
    })?;
    Ok(TrainReport {
        algorithm: config.algorithm.name().to_string(),
        epochs: last.epoch,
        final_reward_mean: last.reward_mean,
        final_gap_mean: last.gap_mean,
        metrics_path,
        checkpoint_path,
    })
}

/// One evaluation row for a naive baseline on a bandit environment.
fn baseline_row(
    env: &dyn BanditEnv,
    kind: BaselineKind,
    states: usize,
    seed: u64,
) -> Result<MetricsRow> {
    let started = std::time::Instant::now();
    let results = exec::map_indexed(states, |i| {
        let mut state_rng = substream_indexed(seed, "baseline-state", i as u64);
        let cond = env.sample_condition(&mut state_rng);
        let solution = match kind {
            BaselineKind::Average => average_allocation(env),
            BaselineKind::Random => {
                let mut rng = substream_indexed(seed, "baseline-draw", i as u64);
                random_allocation(env, &mut rng)
            }
        };
        let reward = env.evaluate(&cond, &solution);
        let gap = env.oracle(&cond).map(|(_, best)| best - reward);
        (reward, gap)
    });
    let rewards: Vec<f64> = results.iter().map(|(r, _)| *r).collect();
    let gaps: Vec<f64> = results.iter().filter_map(|(_, g)| *g).collect();
    let mean = rewards.iter().sum::<f64>() / rewards.len().max(1) as f64;
    let var = rewards.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>()
        / rewards.len().max(1) as f64;
    Ok(MetricsRow {
        epoch: 1,
        reward_mean: mean,
        reward_std: var.sqrt(),
        gap_mean: if gaps.is_empty() {
            None
        } else {
            Some(gaps.iter().sum::<f64>() / gaps.len() as f64)
        },
        actor_loss: None,
        critic_loss: None,
        sigma: None,
        wall_ms: started.elapsed().as_millis() as u64,
    })
}

/// Greedy evaluation summary of a stored checkpoint.
#[derive(Debug, Clone, Serialize)]
pub struct EvalSummaryJson {
    pub episodes: usize,
    pub reward_mean: Option<f64>,
    pub reward_std: Option<f64>,
    pub gap_mean: Option<f64>,
}

/// Evaluates a checkpoint greedily over fresh states or episodes and
/// returns the summary (also suitable for JSON output).
pub fn run_eval(checkpoint_path: &Path, episodes: usize, seed: u64) -> Result<EvalSummaryJson> {
    let ckpt = Checkpoint::load(checkpoint_path)?;
    if episodes == 0 {
        return Ok(EvalSummaryJson {
            episodes: 0,
            reward_mean: None,
            reward_std: None,
            gap_mean: None,
        });
    }
    let config_text = ckpt
        .metadata(CONFIG_KEY)
        .ok_or_else(|| Error::Checkpoint("checkpoint has no embedded config".into()))?;
    let config = RunConfig::from_toml(config_text)?;
    let schedule_spec = ckpt
        .header
        .schedule
        .ok_or_else(|| Error::Checkpoint("checkpoint has no schedule".into()))?;
    let schedule = NoiseSchedule::from_spec(&schedule_spec)?;
    let solution_dim: usize = ckpt
        .metadata("solution_dim")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Checkpoint("checkpoint has no solution_dim".into()))?;
    let cond_dim: usize = ckpt
        .metadata("cond_dim")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Checkpoint("checkpoint has no cond_dim".into()))?;
    let denoiser = ConditionalDenoiser::new(
        ckpt.net("denoiser")?,
        solution_dim,
        cond_dim,
        schedule.steps(),
    )?;

    match config.algorithm {
        Algorithm::GdmOnline | Algorithm::GdmExpert => {
            let env = config.env.build_bandit()?;
            let summary = evaluate_policy(&denoiser, &schedule, env.as_ref(), episodes, seed)?;
            Ok(EvalSummaryJson {
                episodes,
                reward_mean: Some(summary.reward_mean),
                reward_std: Some(summary.reward_std),
                gap_mean: summary.gap_mean,
            })
        }
        Algorithm::D2sac => {
            let env = config.env.build_mdp()?;
            let actor = DiffusionActor {
                denoiser,
                schedule,
                temperature: config.d2sac.temperature,
            };
            let (mean, std) = d2sac::evaluate_greedy(&actor, &env, episodes, 1_000_000, seed)?;
            Ok(EvalSummaryJson {
                episodes,
                reward_mean: Some(mean),
                reward_std: Some(std),
                gap_mean: None,
            })
        }
        Algorithm::Baseline => Err(Error::Checkpoint(
            "baseline runs produce no evaluable checkpoint".into(),
        )),
    }
}

/// Exact-oracle output for one sampled (or supplied) condition.
#[derive(Debug, Clone, Serialize)]
pub struct OracleJson {
    /// Named `gains` for the power environment in CLI output.
    pub condition: Vec<f64>,
    pub solution: Vec<f64>,
    pub value: f64,
}

/// Solves one instance with the environment's exact oracle. When `condition`
/// is `None`, a fresh state is drawn from the seed.
pub fn run_oracle(
    env_config: &EnvConfig,
    condition: Option<Vec<f64>>,
    seed: u64,
) -> Result<OracleJson> {
    let env = env_config.build_bandit()?;
    let cond = match condition {
        Some(c) => {
            if c.len() != env.condition_dim() {
                return Err(Error::DimMismatch {
                    context: "oracle condition",
                    expected: env.condition_dim(),
                    got: c.len(),
                });
            }
            c
        }
        None => env.sample_condition(&mut substream(seed, "oracle-state")),
    };
    let (solution, value) = env
        .oracle(&cond)
        .ok_or_else(|| Error::Env("environment exposes no oracle".into()))?;
    Ok(OracleJson {
        condition: cond,
        solution,
        value,
    })
}

/// One grid point of a sweep: the key assignments and where its run landed.
#[derive(Debug, Clone, Serialize)]
pub struct SweepPoint {
    pub assignments: Vec<(String, String)>,
    pub out_dir: PathBuf,
    pub final_reward_mean: f64,
    pub final_gap_mean: Option<f64>,
}

fn set_dotted_key(table: &mut toml::Table, dotted: &str, value: toml::Value) -> Result<()> {
    let mut parts = dotted.split('.').peekable();
    let mut current = table;
    while let Some(part) = parts.next() {
        if parts.peek().is_none() {
            current.insert(part.to_string(), value);
            return Ok(());
        }
        current = current
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| {
                Error::InvalidConfig(format!("sweep key {dotted:?} crosses a non-table value"))
            })?;
    }
    unreachable!("split yields at least one part")
}

/// Expands the config's `[sweep]` table into the cartesian product of its
/// value lists and trains every point, one subdirectory and metrics CSV per
/// point.
pub fn run_sweep(
    config_text: &str,
    mut on_point: impl FnMut(&SweepPoint),
) -> Result<Vec<SweepPoint>> {
    let base = RunConfig::from_toml(config_text)?;
    let sweep = base.sweep.clone().ok_or_else(|| {
        Error::InvalidConfig("sweep requires a [sweep] table mapping keys to value lists".into())
    })?;
    if sweep.is_empty() {
        return Err(Error::InvalidConfig("[sweep] table is empty".into()));
    }
    let mut keys = Vec::new();
    for (key, value) in &sweep {
        let list = value.as_array().ok_or_else(|| {
            Error::InvalidConfig(format!("sweep key {key:?} must map to an array of values"))
        })?;
        if list.is_empty() {
            return Err(Error::InvalidConfig(format!(
                "sweep key {key:?} has no values"
            )));
        }
        keys.push((key.clone(), list.clone()));
    }

    let mut base_table: toml::Table = toml::from_str(config_text)
        .map_err(|e| Error::InvalidConfig(e.to_string().trim_end().to_string()))?;
    base_table.remove("sweep");
    let base_out = base.resolved_out_dir();

    let mut counters = vec![0usize; keys.len()];
    let mut points = Vec::new();
    loop {
        let mut table = base_table.clone();
        let mut assignments = Vec::new();
        let mut label_parts = Vec::new();
        for ((key, values), &index) in keys.iter().zip(&counters) {
            let value = values[index].clone();
            set_dotted_key(&mut table, key, value.clone())?;
            let short = key.rsplit('.').next().unwrap_or(key);
            let rendered = value.to_string().replace('"', "");
            assignments.push((key.clone(), rendered.clone()));
            label_parts.push(format!("{short}={rendered}"));
        }
        let label = label_parts.join(",");
        let point_dir = base_out.join(&label);
        set_dotted_key(
            &mut table,
            "out_dir",
            toml::Value::String(point_dir.to_string_lossy().into_owned()),
        )?;
        let rendered = toml::to_string(&table)
            .map_err(|e| Error::InvalidConfig(format!("sweep point render: {e}")))?;
        let point_config = RunConfig::from_toml(&rendered)?;
        let report = run_train(&point_config, |_| {})?;
        let point = SweepPoint {
            assignments,
            out_dir: point_dir,
            final_reward_mean: report.final_reward_mean,
            final_gap_mean: report.final_gap_mean,
        };
        on_point(&point);
        points.push(point);

        // Odometer over the grid.
        let mut d = keys.len();
        loop {
            if d == 0 {
                return Ok(points);
            }
            d -= 1;
            counters[d] += 1;
            if counters[d] < keys[d].1.len() {
                break;
            }
            counters[d] = 0;
            if d == 0 {
                return Ok(points);
            }
        }
    }
}

/// Serializes a JSON report atomically.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let tmp = path.with_extension("json.tmp");
    fs::write(&tmp, serde_json::to_vec_pretty(value)?)?;
    fs::rename(&tmp, path)?;
    Ok(())
}
