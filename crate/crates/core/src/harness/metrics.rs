//! Per-epoch metrics and run artifacts, exported as JSONL or CSV.
//!
//! Field names (frozen): `epoch`, `train_loss`, `lr`, `probe_top1`,
//! `wall_clock_s`, `config_hash`. A missing probe is `null` in JSONL and an
//! empty cell in CSV.

use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    /// 1-based index of the completed epoch.
    pub epoch: usize,
    /// Mean per-sample training loss over the epoch.
    pub train_loss: f64,
    /// Learning rate of the epoch's last step.
    pub lr: f64,
    pub probe_top1: Option<f64>,
    /// Cumulative training time.
    pub wall_clock_s: f64,
    pub config_hash: String,
}

impl MetricsRecord {
    /// Equality ignoring wall-clock time.
    pub fn same_numbers(&self, other: &MetricsRecord) -> bool {
        self.epoch == other.epoch
            && self.train_loss.to_bits() == other.train_loss.to_bits()
            && self.lr.to_bits() == other.lr.to_bits()
            && self.probe_top1.map(f64::to_bits) == other.probe_top1.map(f64::to_bits)
            && self.config_hash == other.config_hash
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricsFormat {
    Jsonl,
    Csv,
}

impl MetricsFormat {
    pub fn extension(&self) -> &'static str {
        match self {
            MetricsFormat::Jsonl => "jsonl",
            MetricsFormat::Csv => "csv",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunArtifact {
    pub name: String,
    pub config: TrainConfig,
    pub metrics: Vec<MetricsRecord>,
    pub checkpoint: Option<PathBuf>,
}

impl RunArtifact {
    pub fn final_loss(&self) -> Option<f64> {
        self.metrics.last().map(|m| m.train_loss)
    }

    /// Probe accuracy of the latest epoch that was probed.
    pub fn final_probe(&self) -> Option<f64> {
        self.metrics.iter().rev().find_map(|m| m.probe_top1)
    }

    pub fn probe_at(&self, epoch: usize) -> Option<f64> {
        self.metrics
            .iter()
            .find(|m| m.epoch == epoch)
            .and_then(|m| m.probe_top1)
    }

    pub fn same_numbers(&self, other: &RunArtifact) -> bool {
        self.config == other.config
            && self.metrics.len() == other.metrics.len()
            && self
                .metrics
                .iter()
                .zip(&other.metrics)
                .all(|(a, b)| a.same_numbers(b))
    }

    /// Writes `config.toml`, `metrics.<ext>` and `run.json` into `dir`.
    pub fn write_dir(&self, dir: &Path, format: MetricsFormat) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("config.toml"), self.config.to_toml())?;
        let f = std::fs::File::create(dir.join(format!("metrics.{}", format.extension())))?;
        write_metrics(std::io::BufWriter::new(f), &self.metrics, format)?;
        let json = serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))?;
        std::fs::write(dir.join("run.json"), json)?;
        Ok(())
    }

    pub fn read_dir(dir: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(dir.join("run.json"))?;
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", dir.display())))
    }
}

pub fn write_metrics<W: Write>(
    mut w: W,
    records: &[MetricsRecord],
    format: MetricsFormat,
) -> Result<()> {
    match format {
        MetricsFormat::Jsonl => {
            for r in records {
                let line = serde_json::to_string(r).map_err(|e| Error::Format(e.to_string()))?;
                writeln!(w, "{line}")?;
            }
        }
        MetricsFormat::Csv => {
            let mut csv = csv::Writer::from_writer(&mut w);
            for r in records {
                csv.serialize(r).map_err(|e| Error::Format(e.to_string()))?;
            }
            if records.is_empty() {
                csv.write_record([
                    "epoch",
                    "train_loss",
                    "lr",
                    "probe_top1",
                    "wall_clock_s",
                    "config_hash",
                ])
                .map_err(|e| Error::Format(e.to_string()))?;
            }
            csv.flush()?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics<R: BufRead>(r: R, format: MetricsFormat) -> Result<Vec<MetricsRecord>> {
    match format {
        MetricsFormat::Jsonl => r
            .lines()
            .filter(|l| l.as_ref().map_or(true, |s| !s.trim().is_empty()))
            .map(|l| {
                let l = l?;
                serde_json::from_str(&l).map_err(|e| Error::Format(e.to_string()))
            })
            .collect(),
        MetricsFormat::Csv => csv::Reader::from_reader(r)
            .deserialize()
            .map(|rec| rec.map_err(|e| Error::Format(e.to_string())))
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn records() -> Vec<MetricsRecord> {
        vec![
            MetricsRecord {
                epoch: 1,
                train_loss: 7.25,
                lr: 1e-4,
                probe_top1: None,
                wall_clock_s: 0.5,
                config_hash: "abc".into(),
            },
            MetricsRecord {
                epoch: 2,
                train_loss: 6.5,
                lr: 2e-4,
                probe_top1: Some(0.75),
                wall_clock_s: 1.0,
                config_hash: "abc".into(),
            },
        ]
    }

    #[test]
    fn jsonl_field_names_are_frozen() {
        let mut buf = Vec::new();
        write_metrics(&mut buf, &records(), MetricsFormat::Jsonl).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        let first = text.lines().next().unwrap();
        assert_eq!(
            first,
            r#"{"epoch":1,"train_loss":7.25,"lr":0.0001,"probe_top1":null,"wall_clock_s":0.5,"config_hash":"abc"}"#
        );
        assert_eq!(
            read_metrics(&buf[..], MetricsFormat::Jsonl).unwrap(),
            records()
        );
    }

    #[test]
    fn csv_layout() {
        let mut buf = Vec::new();
        write_metrics(&mut buf, &records(), MetricsFormat::Csv).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(
            lines[0],
            "epoch,train_loss,lr,probe_top1,wall_clock_s,config_hash"
        );
        assert_eq!(lines[1], "1,7.25,0.0001,,0.5,abc");
        assert_eq!(
            read_metrics(&buf[..], MetricsFormat::Csv).unwrap(),
            records()
        );
    }
}
