//! Per-epoch metrics records and their CSV serialization.
//!
//! The column set is fixed and versioned so downstream plotting never breaks
//! silently: `epoch,reward_mean,reward_std,gap_mean,actor_loss,critic_loss,
//! sigma,wall_ms`. Optional fields serialize as empty cells. `wall_ms` is
//! measured wall-clock and is the one column excluded from byte-for-byte
//! reproducibility comparisons.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub const METRICS_SCHEMA_VERSION: u32 = 1;
pub const METRICS_HEADER: &str =
    "epoch,reward_mean,reward_std,gap_mean,actor_loss,critic_loss,sigma,wall_ms";

/// One evaluation record of a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub epoch: u64,
    pub reward_mean: f64,
    pub reward_std: f64,
    /// Mean oracle gap, when the environment exposes an oracle.
    pub gap_mean: Option<f64>,
    pub actor_loss: Option<f64>,
    pub critic_loss: Option<f64>,
    /// Exploration noise level, for algorithms that use one.
    pub sigma: Option<f64>,
    /// Milliseconds since the start of the run.
    pub wall_ms: u64,
}

impl MetricsRow {
    fn check(&self) -> Result<()> {
        let finite = |v: &Option<f64>| v.map_or(true, f64::is_finite);
        if !self.reward_mean.is_finite()
            || !self.reward_std.is_finite()
            || !finite(&self.gap_mean)
            || !finite(&self.actor_loss)
            || !finite(&self.critic_loss)
            || !finite(&self.sigma)
        {
            return Err(Error::NonFinite(format!(
                "metrics row at epoch {}",
                self.epoch
            )));
        }
        Ok(())
    }

    fn to_record(&self) -> Vec<String> {
        let opt = |v: &Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        vec![
            self.epoch.to_string(),
            self.reward_mean.to_string(),
            self.reward_std.to_string(),
            opt(&self.gap_mean),
            opt(&self.actor_loss),
            opt(&self.critic_loss),
            opt(&self.sigma),
            self.wall_ms.to_string(),
        ]
    }
}

/// Writes a metrics CSV atomically (temp file + rename). Epochs must be
/// strictly increasing.
pub fn write_metrics_csv(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    for pair in rows.windows(2) {
        if pair[1].epoch <= pair[0].epoch {
            return Err(Error::InvalidArgument(format!(
                "metrics epochs must strictly increase ({} then {})",
                pair[0].epoch, pair[1].epoch
            )));
        }
    }
    let tmp = path.with_extension("csv.tmp");
    {
        let mut file = fs::File::create(&tmp)?;
        writeln!(file, "# metrics-schema v{METRICS_SCHEMA_VERSION}")?;
        let mut writer = csv::Writer::from_writer(file);
        writer.write_record(METRICS_HEADER.split(','))?;
        for row in rows {
            row.check()?;
            writer.write_record(row.to_record())?;
        }
        writer.flush()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Reads back a metrics CSV written by [`write_metrics_csv`].
pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricsRow>> {
    let text = fs::read_to_string(path)?;
    let body: String = text
        .lines()
        .filter(|l| !l.starts_with('#'))
        .collect::<Vec<_>>()
        .join("\n");
    let mut reader = csv::Reader::from_reader(body.as_bytes());
    let parse_opt = |s: &str| -> Result<Option<f64>> {
        if s.is_empty() {
            Ok(None)
        } else {
            s.parse::<f64>()
                .map(Some)
                .map_err(|e| Error::InvalidArgument(format!("bad metrics value {s:?}: {e}")))
        }
    };
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::InvalidArgument(e.to_string()))?;
        if record.len() != 8 {
            return Err(Error::InvalidArgument(format!(
                "metrics row has {} columns, expected 8",
                record.len()
            )));
        }
        rows.push(MetricsRow {
            epoch: record[0]
                .parse()
                .map_err(|e| Error::InvalidArgument(format!("bad epoch: {e}")))?,
            reward_mean: record[1]
                .parse()
                .map_err(|e| Error::InvalidArgument(format!("bad reward_mean: {e}")))?,
            reward_std: record[2]
                .parse()
                .map_err(|e| Error::InvalidArgument(format!("bad reward_std: {e}")))?,
            gap_mean: parse_opt(&record[3])?,
            actor_loss: parse_opt(&record[4])?,
            critic_loss: parse_opt(&record[5])?,
            sigma: parse_opt(&record[6])?,
            wall_ms: record[7]
                .parse()
                .map_err(|e| Error::InvalidArgument(format!("bad wall_ms: {e}")))?,
        });
    }
    Ok(rows)
}

/// First epoch at which the gap dropped to `threshold` or below; `None` when
/// the run never got there.
pub fn convergence_epoch(rows: &[MetricsRow], threshold: f64) -> Option<u64> {
    rows.iter()
        .find(|r| r.gap_mean.is_some_and(|g| g <= threshold))
        .map(|r| r.epoch)
}
