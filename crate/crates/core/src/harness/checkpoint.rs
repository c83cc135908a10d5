//! Resumable run checkpoints.
//!
//! Layout (all integers and floats little endian):
//!
//! ```text
//! "DIETCK1"                      7 bytes magic
//! u32 schema version             currently 1
//! str config (TOML)              u64 length + UTF-8 bytes
//! u64 epochs completed
//! u64 optimizer steps completed
//! f64 elapsed training seconds
//! rng segment                    str algorithm, u64 seed, u64 position
//! encoder segment                see MlpEncoder::write_segment
//! head segment                   see DietHead::write_segment
//! optimizer segment              see Optimizer::write_segment
//! metrics segment                u64 count, then per record:
//!                                u64 epoch, f64 loss, f64 lr, u8 has_probe,
//!                                f64 probe, f64 wall_clock_s
//! ```
//!
//! Datasets are not stored; they are regenerated from the config.

use std::io::{Read, Write};
use std::path::Path;

use super::config::TrainConfig;
use super::metrics::MetricsRecord;
use super::train::{build_datasets, Trainer};
use crate::binio::*;
use crate::encoder::MlpEncoder;
use crate::error::{Error, Result};
use crate::head::DietHead;
use crate::numeric::{Rng, RngState};
use crate::optim::Optimizer;

pub const CHECKPOINT_MAGIC: &[u8; 7] = b"DIETCK1";
pub const CHECKPOINT_VERSION: u32 = 1;

impl Trainer {
    pub fn write_checkpoint<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        put_u32(w, CHECKPOINT_VERSION)?;
        put_str(w, &self.cfg.to_toml())?;
        put_u64(w, self.epochs_done as u64)?;
        put_u64(w, self.step)?;
        put_f64(w, self.elapsed_s)?;
        let rng = self.sampler_rng.state();
        put_str(w, &rng.algorithm)?;
        put_u64(w, rng.seed)?;
        put_u64(w, rng.position)?;
        self.encoder.write_segment(w)?;
        self.head.write_segment(w)?;
        self.optimizer.write_segment(w)?;
        put_u64(w, self.metrics.len() as u64)?;
        for m in &self.metrics {
            put_u64(w, m.epoch as u64)?;
            put_f64(w, m.train_loss)?;
            put_f64(w, m.lr)?;
            put_u8(w, m.probe_top1.is_some() as u8)?;
            put_f64(w, m.probe_top1.unwrap_or(0.0))?;
            put_f64(w, m.wall_clock_s)?;
        }
        Ok(())
    }

    pub fn checkpoint_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_checkpoint(&mut buf)
            .expect("writing to a Vec cannot fail");
        buf
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_checkpoint(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 7];
        r.read_exact(&mut magic)
            .map_err(|_| Error::Format("truncated checkpoint".into()))?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Format("bad checkpoint magic".into()));
        }
        let version = get_u32(r)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint version {version}"
            )));
        }
        let cfg = TrainConfig::from_toml(&get_str(r)?)
            .map_err(|e| Error::Format(format!("embedded config: {e}")))?;
        let epochs_done = get_usize(r)?;
        let step = get_u64(r)?;
        let elapsed_s = get_f64(r)?;
        let rng_state = RngState {
            algorithm: get_str(r)?,
            seed: get_u64(r)?,
            position: get_u64(r)?,
        };
        let sampler_rng = Rng::from_state(&rng_state).ok_or_else(|| {
            Error::Format(format!("unknown rng algorithm {}", rng_state.algorithm))
        })?;
        let encoder = MlpEncoder::read_segment(r)?;
        let head = DietHead::read_segment(r)?;
        let optimizer = Optimizer::read_segment(r)?;
        let n = get_usize(r)?;
        let hash = cfg.hash();
        let mut metrics = Vec::with_capacity(n.min(1 << 20));
        for _ in 0..n {
            let epoch = get_usize(r)?;
            let train_loss = get_f64(r)?;
            let lr = get_f64(r)?;
            let has_probe = get_u8(r)? != 0;
            let probe = get_f64(r)?;
            let wall_clock_s = get_f64(r)?;
            metrics.push(MetricsRecord {
                epoch,
                train_loss,
                lr,
                probe_top1: has_probe.then_some(probe),
                wall_clock_s,
                config_hash: hash.clone(),
            });
        }

        let (train, test) = build_datasets(&cfg)?;
        let mut t = Trainer::with_data(cfg, train, test)?;
        if encoder.layer_dims() != t.encoder.layer_dims()
            || head.weights().shape() != t.head.weights().shape()
            || optimizer.slots().len() != t.optimizer.slots().len()
            || optimizer.kind() != t.optimizer.kind()
        {
            return Err(Error::Format(
                "checkpoint state does not match its config".into(),
            ));
        }
        for (a, b) in optimizer.slots().iter().zip(t.optimizer.slots()) {
            if a.first.len() != b.first.len() || a.second.len() != b.second.len() {
                return Err(Error::Format(
                    "optimizer state does not match its config".into(),
                ));
            }
        }
        t.encoder = encoder;
        t.head = head;
        t.optimizer = optimizer;
        t.sampler_rng = sampler_rng;
        t.epochs_done = epochs_done;
        t.step = step;
        t.elapsed_s = elapsed_s;
        t.metrics = metrics;
        Ok(t)
    }

    pub fn load_checkpoint(path: &Path) -> Result<Self> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::read_checkpoint(&mut f)
    }
}

/// Writes the trainer's checkpoint to `path`.
pub fn save_checkpoint(trainer: &Trainer, path: &Path) -> Result<()> {
    trainer.save_checkpoint(path)
}

pub fn load_checkpoint(path: &Path) -> Result<Trainer> {
    Trainer::load_checkpoint(path)
}
