//! Run configuration: one human-editable TOML document per run.
//!
//! Unknown keys are rejected everywhere so a typo fails loudly instead of
//! silently training with a default. Parse errors carry the offending line.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::d2sac::D2sacConfig;
use crate::envs::{
    BanditEnv, BandwidthEnv, CartPoleEnv, ContractEnv, MdpEnv, PowerEnv, ProviderEnv,
};
use crate::error::{Error, Result};
use crate::gdm::GdmTrainConfig;

/// Environment variable that overrides the output directory.
pub const OUT_DIR_ENV: &str = "GDOPT_OUT_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    GdmOnline,
    GdmExpert,
    D2sac,
    Baseline,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::GdmOnline => "gdm-online",
            Algorithm::GdmExpert => "gdm-expert",
            Algorithm::D2sac => "d2sac",
            Algorithm::Baseline => "baseline",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineKind {
    Average,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum EnvConfig {
    Power {
        channels: usize,
        gain_min: f64,
        gain_max: f64,
        power_budget: f64,
    },
    Contract {},
    Bandwidth {},
    Provider {
        capacities: Vec<f64>,
        qualities: Vec<f64>,
        horizon: usize,
    },
    Cartpole {},
}

impl EnvConfig {
    pub fn is_bandit(&self) -> bool {
        matches!(
            self,
            EnvConfig::Power { .. } | EnvConfig::Contract {} | EnvConfig::Bandwidth {}
        )
    }

    pub fn build_bandit(&self) -> Result<Box<dyn BanditEnv>> {
        match self {
            EnvConfig::Power {
                channels,
                gain_min,
                gain_max,
                power_budget,
            } => Ok(Box::new(PowerEnv::new(
                *channels,
                *gain_min,
                *gain_max,
                *power_budget,
            )?)),
            EnvConfig::Contract {} => Ok(Box::new(ContractEnv::new())),
            EnvConfig::Bandwidth {} => Ok(Box::new(BandwidthEnv::new())),
            other => Err(Error::InvalidConfig(format!(
                "{other:?} is a sequential environment; it needs the d2sac algorithm"
            ))),
        }
    }

    pub fn build_mdp(&self) -> Result<MdpEnvKind> {
        match self {
            EnvConfig::Provider {
                capacities,
                qualities,
                horizon,
            } => Ok(MdpEnvKind::Provider(ProviderEnv::new(
                capacities.clone(),
                qualities.clone(),
                *horizon,
            )?)),
            EnvConfig::Cartpole {} => Ok(MdpEnvKind::Cartpole(CartPoleEnv::new())),
            other => Err(Error::InvalidConfig(format!(
                "{other:?} is a one-shot environment; use a gdm algorithm"
            ))),
        }
    }
}

/// Concrete MDP environments, statically dispatched so the trainer can clone
/// them for evaluation fan-out.
#[derive(Debug, Clone)]
pub enum MdpEnvKind {
    Provider(ProviderEnv),
    Cartpole(CartPoleEnv),
}

impl MdpEnv for MdpEnvKind {
    fn state_dim(&self) -> usize {
        match self {
            MdpEnvKind::Provider(e) => e.state_dim(),
            MdpEnvKind::Cartpole(e) => e.state_dim(),
        }
    }
    fn action_count(&self) -> usize {
        match self {
            MdpEnvKind::Provider(e) => e.action_count(),
            MdpEnvKind::Cartpole(e) => e.action_count(),
        }
    }
    fn reset(&mut self, rng: &mut dyn rand::RngCore) -> Vec<f64> {
        match self {
            MdpEnvKind::Provider(e) => e.reset(rng),
            MdpEnvKind::Cartpole(e) => e.reset(rng),
        }
    }
    fn step(&mut self, action: usize, rng: &mut dyn rand::RngCore) -> Result<crate::envs::Step> {
        match self {
            MdpEnvKind::Provider(e) => e.step(action, rng),
            MdpEnvKind::Cartpole(e) => e.step(action, rng),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub algorithm: Algorithm,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub env: EnvConfig,
    #[serde(default)]
    pub gdm: GdmTrainConfig,
    #[serde(default)]
    pub d2sac: D2sacConfig,
    /// Which baseline the `baseline` algorithm evaluates.
    #[serde(default)]
    pub baseline: Option<BaselineKind>,
    /// States (bandit) or episodes (MDP) for baseline evaluation.
    #[serde(default = "default_baseline_states")]
    pub baseline_states: usize,
    /// Grid declaration for the sweep subcommand: dotted config key to the
    /// list of values it takes. Ignored by plain training.
    #[serde(default)]
    pub sweep: Option<toml::Table>,
}

fn default_baseline_states() -> usize {
    1000
}

impl RunConfig {
    /// Parses and validates; errors carry the offending line and column.
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: RunConfig = toml::from_str(text)
            .map_err(|e| Error::InvalidConfig(e.to_string().trim_end().to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        match self.algorithm {
            Algorithm::GdmOnline | Algorithm::GdmExpert => {
                if !self.env.is_bandit() {
                    return Err(Error::InvalidConfig(format!(
                        "algorithm {:?} needs a one-shot environment, got {:?}",
                        self.algorithm.name(),
                        self.env
                    )));
                }
                self.gdm.validate()?;
            }
            Algorithm::D2sac => {
                if self.env.is_bandit() {
                    return Err(Error::InvalidConfig(
                        "d2sac needs a sequential environment (provider or cartpole)".into(),
                    ));
                }
                self.d2sac.validate()?;
            }
            Algorithm::Baseline => {
                if !self.env.is_bandit() {
                    return Err(Error::InvalidConfig(
                        "baseline evaluation needs a one-shot environment".into(),
                    ));
                }
                if self.baseline.is_none() {
                    return Err(Error::InvalidConfig(
                        "algorithm \"baseline\" requires the `baseline` key (average | random)"
                            .into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Output directory after the environment override.
    pub fn resolved_out_dir(&self) -> PathBuf {
        std::env::var_os(OUT_DIR_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| self.out_dir.clone())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
