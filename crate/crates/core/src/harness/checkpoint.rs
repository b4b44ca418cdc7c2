//! Checkpoint format: one line of JSON (schema version, per-net layer dims
//! and activations, noise schedule, RNG seed, free-form metadata) followed by
//! a length-prefixed flat array of f64 parameters, little-endian, in layer
//! order, nets concatenated in header order.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diffusion::ScheduleSpec;
use crate::error::{Error, Result};
use crate::nn::{Activation, Mlp};

pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetSpec {
    pub name: String,
    /// Layer sizes including input: `[n0, n1, ..., nL]`.
    pub dims: Vec<usize>,
    pub activations: Vec<String>,
}

impl NetSpec {
    fn param_count(&self) -> usize {
        self.dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub schema_version: u32,
    pub nets: Vec<NetSpec>,
    pub schedule: Option<ScheduleSpec>,
    pub seed: u64,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

/// A bundle of named networks plus the schedule and run metadata needed to
/// rebuild a policy.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    params: Vec<f64>,
}

impl Checkpoint {
    pub fn new(seed: u64, schedule: Option<ScheduleSpec>) -> Self {
        Self {
            header: CheckpointHeader {
                schema_version: CHECKPOINT_SCHEMA_VERSION,
                nets: Vec::new(),
                schedule,
                seed,
                metadata: BTreeMap::new(),
            },
            params: Vec::new(),
        }
    }

    pub fn insert_metadata(&mut self, key: &str, value: impl Into<String>) {
        self.header.metadata.insert(key.to_string(), value.into());
    }

    pub fn metadata(&self, key: &str) -> Option<&str> {
        self.header.metadata.get(key).map(String::as_str)
    }

    /// Appends a network; order defines parameter layout.
    pub fn push_net(&mut self, name: &str, net: &Mlp) {
        self.header.nets.push(NetSpec {
            name: name.to_string(),
            dims: net.dims(),
            activations: net.activations().iter().map(|a| a.name().to_string()).collect(),
        });
        self.params.extend(net.flatten());
    }

    /// Rebuilds a network by name.
    pub fn net(&self, name: &str) -> Result<Mlp> {
        let mut offset = 0;
        for spec in &self.header.nets {
            let count = spec.param_count();
            if spec.name == name {
                let activations: Vec<Activation> = spec
                    .activations
                    .iter()
                    .map(|n| Activation::from_name(n))
                    .collect::<Result<_>>()?;
                return Mlp::from_flat(&spec.dims, &activations, &self.params[offset..offset + count]);
            }
            offset += count;
        }
        Err(Error::Checkpoint(format!("no net named {name:?}")))
    }

    /// Writes atomically (temp file + rename).
    pub fn save(&self, path: &Path) -> Result<()> {
        let expected: usize = self.header.nets.iter().map(NetSpec::param_count).sum();
        if expected != self.params.len() {
            return Err(Error::Checkpoint(format!(
                "header declares {expected} parameters but {} are present",
                self.params.len()
            )));
        }
        let tmp = path.with_extension("ckpt.tmp");
        {
            let mut file = fs::File::create(&tmp)?;
            serde_json::to_writer(&mut file, &self.header)?;
            file.write_all(b"\n")?;
            file.write_all(&(self.params.len() as u64).to_le_bytes())?;
            for value in &self.params {
                file.write_all(&value.to_le_bytes())?;
            }
            file.flush()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        fs::File::open(path)?.read_to_end(&mut bytes)?;
        let newline = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::Checkpoint("missing header terminator".into()))?;
        let header: CheckpointHeader = serde_json::from_slice(&bytes[..newline])?;
        if header.schema_version != CHECKPOINT_SCHEMA_VERSION {
            return Err(Error::Checkpoint(format!(
                "schema version {} is not supported (expected {}); migrate the checkpoint",
                header.schema_version, CHECKPOINT_SCHEMA_VERSION
            )));
        }
        let body = &bytes[newline + 1..];
        if body.len() < 8 {
            return Err(Error::Checkpoint("truncated length prefix".into()));
        }
        let declared = u64::from_le_bytes(body[..8].try_into().expect("8 bytes")) as usize;
        let payload = &body[8..];
        if payload.len() != declared * 8 {
            return Err(Error::Checkpoint(format!(
                "payload holds {} bytes but the length prefix declares {} values",
                payload.len(),
                declared
            )));
        }
        let expected: usize = header.nets.iter().map(NetSpec::param_count).sum();
        if declared != expected {
            return Err(Error::Checkpoint(format!(
                "length prefix declares {declared} values but net specs need {expected}"
            )));
        }
        let params: Vec<f64> = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        if params.iter().any(|v| !v.is_finite()) {
            return Err(Error::Checkpoint("non-finite parameter in payload".into()));
        }
        Ok(Self { header, params })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::ScheduleKind;
    use crate::rng::substream;

    fn sample_checkpoint() -> Checkpoint {
        let mut rng = substream(3, "ckpt");
        let denoiser = Mlp::glorot_tanh(&[6, 8, 2], &mut rng).unwrap();
        let evaluator = Mlp::glorot_tanh(&[4, 8, 1], &mut rng).unwrap();
        let mut ckpt = Checkpoint::new(
            7,
            Some(ScheduleSpec {
                kind: ScheduleKind::VariancePreserving,
                steps: 5,
                beta_min: 0.1,
                beta_max: 10.0,
            }),
        );
        ckpt.push_net("denoiser", &denoiser);
        ckpt.push_net("evaluator", &evaluator);
        ckpt.insert_metadata("algorithm", "gdm-online");
        ckpt
    }

    #[test]
    fn roundtrip_preserves_everything() {
        let dir = std::env::temp_dir().join("gdopt-ckpt-roundtrip");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("model.ckpt");
        let ckpt = sample_checkpoint();
        ckpt.save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        assert_eq!(loaded.header.seed, 7);
        assert_eq!(loaded.metadata("algorithm"), Some("gdm-online"));
        assert_eq!(loaded.net("denoiser").unwrap(), ckpt.net("denoiser").unwrap());
        assert_eq!(loaded.net("evaluator").unwrap(), ckpt.net("evaluator").unwrap());
        assert!(loaded.net("missing").is_err());
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn tampered_length_prefix_is_rejected() {
        let dir = std::env::temp_dir().join("gdopt-ckpt-tamper");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("model.ckpt");
        sample_checkpoint().save(&path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        let truncated = bytes.len() - 8;
        bytes.truncate(truncated);
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(Checkpoint::load(&path), Err(Error::Checkpoint(_))));
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn future_schema_version_is_a_migration_error() {
        let dir = std::env::temp_dir().join("gdopt-ckpt-version");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("model.ckpt");
        let mut ckpt = sample_checkpoint();
        ckpt.header.schema_version = 99;
        ckpt.save(&path).unwrap();
        let err = Checkpoint::load(&path).unwrap_err();
        assert!(err.to_string().contains("schema version 99"));
        std::fs::remove_dir_all(&dir).ok();
    }
}
