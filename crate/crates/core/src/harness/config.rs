//! Flat key-value run configuration (TOML), schema version 1.
//!
//! Every key is optional in the file; missing keys take the defaults below,
//! which reproduce the reference recipe: AdamW at lr 0.001 / weight decay
//! 0.05 for batch 256, 10 warmup epochs then cosine decay, label smoothing
//! 0.8, augmentation strength 2.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{DatasetKind, SyntheticSpec};
use crate::error::{Error, Result};
use crate::optim::{OptimConfig, OptimKind};
use crate::probe::ProbeConfig;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Diet,
    Supervised,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadVariant {
    Full,
    Sampled,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub schema_version: u32,
    pub mode: Mode,
    pub seed: u64,

    pub dataset_kind: DatasetKind,
    pub n_train: usize,
    pub n_test: usize,
    /// Feature dimension (clusters) or grid side (patterned grids).
    pub dim: usize,
    pub n_classes: usize,
    pub noise_sigma: f64,
    pub data_seed: u64,
    /// Keep only this many training samples (0 = all).
    pub subsample: usize,
    pub subsample_seed: u64,

    pub hidden: Vec<usize>,
    pub feature_dim: usize,
    pub zero_init_last_layer: bool,

    pub label_smoothing: f64,
    pub head: HeadVariant,
    /// Candidate classes per step for the sampled head.
    pub candidates: usize,

    pub da_strength: u8,

    pub optimizer: OptimKind,
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub momentum: f64,
    pub warmup_epochs: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_floor: f64,
    pub decay_head: bool,
    pub head_lr_scale: f64,

    /// Probe every this many epochs (0 = final epoch only).
    pub probe_every: usize,
    pub probe_epochs: usize,
    pub probe_online_epochs: usize,
    pub probe_lr: f64,
    pub probe_l2: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let optim = OptimConfig::default();
        let probe = ProbeConfig::default();
        Self {
            schema_version: SCHEMA_VERSION,
            mode: Mode::Diet,
            seed: 0,
            dataset_kind: DatasetKind::GaussianClusters,
            n_train: 2000,
            n_test: 1000,
            dim: 32,
            n_classes: 10,
            noise_sigma: 0.15,
            data_seed: 0,
            subsample: 0,
            subsample_seed: 0,
            hidden: vec![128, 128],
            feature_dim: 64,
            zero_init_last_layer: false,
            label_smoothing: 0.8,
            head: HeadVariant::Full,
            candidates: 256,
            da_strength: 2,
            optimizer: optim.kind,
            lr: optim.base_lr,
            weight_decay: optim.weight_decay,
            beta1: optim.beta1,
            beta2: optim.beta2,
            eps: optim.eps,
            momentum: optim.momentum,
            warmup_epochs: optim.warmup_epochs,
            epochs: 300,
            batch_size: optim.batch_size,
            lr_floor: optim.final_lr_floor,
            decay_head: true,
            head_lr_scale: 1.0,
            probe_every: 0,
            probe_epochs: probe.epochs,
            probe_online_epochs: ProbeConfig::online().epochs,
            probe_lr: probe.lr,
            probe_l2: probe.l2_penalty,
        }
    }
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    /// First 16 hex digits of the SHA-256 of the canonical TOML form.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return Err(Error::Config(format!(
                "label_smoothing {} not in [0, 1)",
                self.label_smoothing
            )));
        }
        if !(1..=3).contains(&self.da_strength) {
            return Err(Error::Config(format!(
                "da_strength {} not in 1..=3",
                self.da_strength
            )));
        }
        if self.feature_dim == 0 || self.hidden.contains(&0) {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.n_test == 0 {
            return Err(Error::Config("n_test must be at least 1".into()));
        }
        let n = self.effective_n_train();
        if self.subsample > self.n_train {
            return Err(Error::Config(format!(
                "subsample {} exceeds n_train {}",
                self.subsample, self.n_train
            )));
        }
        if self.batch_size == 0 || self.batch_size > n {
            return Err(Error::Config(format!(
                "batch_size {} outside [1, {n}]",
                self.batch_size
            )));
        }
        if self.head == HeadVariant::Sampled && self.candidates == 0 {
            return Err(Error::Config("sampled head needs candidates >= 1".into()));
        }
        if self.head_lr_scale.is_nan() || self.head_lr_scale < 0.0 {
            return Err(Error::Config("head_lr_scale must be >= 0".into()));
        }
        self.dataset_spec().validate()?;
        self.optim_config().validate()?;
        self.probe_config(false).validate()?;
        Ok(())
    }

    pub fn effective_n_train(&self) -> usize {
        if self.subsample > 0 {
            self.subsample
        } else {
            self.n_train
        }
    }

    pub fn dataset_spec(&self) -> SyntheticSpec {
        SyntheticSpec {
            kind: self.dataset_kind,
            n_samples: self.n_train,
            dim: self.dim,
            n_classes: self.n_classes,
            noise_sigma: self.noise_sigma,
            seed: self.data_seed,
            sample_seed: 0,
        }
    }

    /// Held-out split: same task, different sample draw.
    pub fn test_spec(&self) -> SyntheticSpec {
        self.dataset_spec()
            .with_n_samples(self.n_test)
            .with_sample_seed(1)
    }

    pub fn layer_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.dataset_spec().feature_dim()];
        dims.extend(&self.hidden);
        dims.push(self.feature_dim);
        dims
    }

    pub fn optim_config(&self) -> OptimConfig {
        OptimConfig {
            kind: self.optimizer,
            base_lr: self.lr,
            weight_decay: self.weight_decay,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            momentum: self.momentum,
            warmup_epochs: self.warmup_epochs,
            total_epochs: self.epochs,
            batch_size: self.batch_size,
            final_lr_floor: self.lr_floor,
        }
    }

    pub fn probe_config(&self, online: bool) -> ProbeConfig {
        ProbeConfig {
            l2_penalty: self.probe_l2,
            epochs: if online {
                self.probe_online_epochs
            } else {
                self.probe_epochs
            },
            lr: self.probe_lr,
            batch_size: 0,
        }
    }
}
