//! The training loop: augment → encode → head → smoothed cross-entropy →
//! backprop → AdamW with warmup-cosine schedule, one epoch at a time.
//!
//! In DIET mode the targets are the sample indices and the whole epoch runs
//! inside an [`UnsupervisedScope`]; only the probe, between epochs, reads
//! labels. Supervised mode is the same pipeline with a C-way head and the
//! true labels as targets.

use std::time::Instant;

use super::config::{HeadVariant, Mode, TrainConfig};
use super::metrics::{MetricsRecord, RunArtifact};
use crate::data::{
    epoch_batches, subsample, AugmentationPolicy, IndexedDataset, UnsupervisedScope,
};
use crate::encoder::MlpEncoder;
use crate::error::{Error, Result};
use crate::head::{xent_smoothed, CandidateSampler, DietHead, UniformNegatives};
use crate::numeric::{derive_seed, Rng};
use crate::optim::{lr_at, OptimConfig, Optimizer};
use crate::probe::probe_accuracy;

const TAG_ENCODER: u64 = 0xE1;
const TAG_HEAD: u64 = 0xE2;
const TAG_BATCHES: u64 = 0xE3;
const TAG_SAMPLER: u64 = 0xE4;

/// A run in progress. Everything needed to continue it lives here, which is
/// exactly what a checkpoint stores.
pub struct Trainer {
    pub(crate) cfg: TrainConfig,
    pub(crate) train: IndexedDataset,
    pub(crate) test: IndexedDataset,
    policy: AugmentationPolicy,
    optim_cfg: OptimConfig,
    config_hash: String,
    pub(crate) encoder: MlpEncoder,
    pub(crate) head: DietHead,
    pub(crate) optimizer: Optimizer,
    pub(crate) sampler_rng: Rng,
    pub(crate) epochs_done: usize,
    pub(crate) step: u64,
    pub(crate) elapsed_s: f64,
    pub(crate) metrics: Vec<MetricsRecord>,
    /// Targets of the supervised head, read once at construction.
    class_targets: Option<Vec<usize>>,
}

impl Trainer {
    pub fn new(cfg: TrainConfig) -> Result<Self> {
        let (train, test) = build_datasets(&cfg)?;
        Self::with_data(cfg, train, test)
    }

    /// Trainer on caller-supplied splits. `cfg` still provides every other knob.
    pub fn with_data(
        cfg: TrainConfig,
        train: IndexedDataset,
        test: IndexedDataset,
    ) -> Result<Self> {
        cfg.validate()?;
        let dims = cfg.layer_dims();
        if train.dim() != dims[0] || test.dim() != dims[0] {
            return Err(Error::dim(
                "Trainer",
                format!(
                    "data dimension {} / {} vs encoder input {}",
                    train.dim(),
                    test.dim(),
                    dims[0]
                ),
            ));
        }
        if cfg.batch_size > train.len() {
            return Err(Error::Config(format!(
                "batch_size {} exceeds {} samples",
                cfg.batch_size,
                train.len()
            )));
        }
        let mut encoder = MlpEncoder::init(&dims, derive_seed(cfg.seed, &[TAG_ENCODER]))?;
        if cfg.zero_init_last_layer {
            encoder.zero_output_layer();
        }
        let (n_out, class_targets) = match cfg.mode {
            Mode::Diet => (train.len(), None),
            Mode::Supervised => (
                train.n_classes(),
                Some(train.labels().iter().map(|&l| l as usize).collect()),
            ),
        };
        let head = DietHead::init(
            n_out,
            cfg.feature_dim,
            cfg.label_smoothing,
            derive_seed(cfg.seed, &[TAG_HEAD]),
        )?;
        let mut slots: Vec<usize> = encoder.param_slices().iter().map(|s| s.len()).collect();
        slots.push(head.weights().data().len());
        let optimizer = Optimizer::new(cfg.optimizer, &slots);
        let policy =
            AugmentationPolicy::for_data(cfg.da_strength, train.grid_side(), train.feature_std())?;
        Ok(Self {
            optim_cfg: cfg.optim_config(),
            config_hash: cfg.hash(),
            sampler_rng: Rng::derived(cfg.seed, &[TAG_SAMPLER]),
            cfg,
            train,
            test,
            policy,
            encoder,
            head,
            optimizer,
            epochs_done: 0,
            step: 0,
            elapsed_s: 0.0,
            metrics: Vec::new(),
            class_targets,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn encoder(&self) -> &MlpEncoder {
        &self.encoder
    }

    pub fn head(&self) -> &DietHead {
        &self.head
    }

    pub fn optimizer(&self) -> &Optimizer {
        &self.optimizer
    }

    pub fn train_data(&self) -> &IndexedDataset {
        &self.train
    }

    pub fn test_data(&self) -> &IndexedDataset {
        &self.test
    }

    pub fn epochs_done(&self) -> usize {
        self.epochs_done
    }

    pub fn steps_done(&self) -> u64 {
        self.step
    }

    pub fn metrics(&self) -> &[MetricsRecord] {
        &self.metrics
    }

    pub fn steps_per_epoch(&self) -> u64 {
        self.train.len().div_ceil(self.cfg.batch_size) as u64
    }

    pub fn is_finished(&self) -> bool {
        self.epochs_done >= self.cfg.epochs
    }

    /// Trains until `epoch` epochs are complete (capped at the configured total).
    pub fn run_until(&mut self, epoch: usize) -> Result<()> {
        while self.epochs_done < epoch.min(self.cfg.epochs) {
            self.run_epoch()?;
        }
        Ok(())
    }

    pub fn run_to_end(&mut self) -> Result<()> {
        self.run_until(self.cfg.epochs)
    }

    pub fn run_epoch(&mut self) -> Result<()> {
        let started = Instant::now();
        let epoch = self.epochs_done as u64;
        let (loss_sum, last_lr) = match self.cfg.mode {
            Mode::Diet => {
                let _scope = UnsupervisedScope::enter();
                self.train_epoch(epoch)?
            }
            Mode::Supervised => self.train_epoch(epoch)?,
        };
        self.elapsed_s += started.elapsed().as_secs_f64();
        self.epochs_done += 1;
        let probe_top1 = if self.probe_due() {
            let online = self.epochs_done < self.cfg.epochs;
            Some(self.probe(online)?)
        } else {
            None
        };
        self.metrics.push(MetricsRecord {
            epoch: self.epochs_done,
            train_loss: loss_sum / self.train.len() as f64,
            lr: last_lr,
            probe_top1,
            wall_clock_s: self.elapsed_s,
            config_hash: self.config_hash.clone(),
        });
        Ok(())
    }

    /// Probe accuracy of the current encoder: fit on clean training features,
    /// score on the held-out split.
    pub fn probe(&self, online: bool) -> Result<f64> {
        probe_accuracy(
            &self.encoder,
            &self.train,
            &self.test,
            &self.cfg.probe_config(online),
        )
    }

    pub fn into_artifact(self, name: impl Into<String>) -> RunArtifact {
        RunArtifact {
            name: name.into(),
            config: self.cfg,
            metrics: self.metrics,
            checkpoint: None,
        }
    }

    fn probe_due(&self) -> bool {
        let e = self.epochs_done;
        e == self.cfg.epochs || (self.cfg.probe_every > 0 && e.is_multiple_of(self.cfg.probe_every))
    }

    /// Returns (sum of per-sample losses, lr of the last step).
    fn train_epoch(&mut self, epoch: u64) -> Result<(f64, f64)> {
        let spe = self.steps_per_epoch();
        let batch_seed = derive_seed(self.cfg.seed, &[TAG_BATCHES]);
        let batches = epoch_batches(
            self.train.unlabeled(),
            Some(&self.policy),
            self.cfg.batch_size,
            epoch,
            batch_seed,
        )?
        .collect::<Result<Vec<_>>>()?;
        let mut loss_sum = 0.0;
        let mut lr = 0.0;
        for batch in batches {
            let targets = match &self.class_targets {
                Some(classes) => batch.targets.iter().map(|&i| classes[i]).collect(),
                None => batch.targets,
            };
            lr = lr_at(&self.optim_cfg, self.step, spe);
            let step = self.step;
            let loss = self
                .step_on(&batch.features, &targets, lr)
                .map_err(|e| match e {
                    Error::NonFinite(_) => Error::Divergence {
                        step,
                        loss: f64::NAN,
                    },
                    e => e,
                })?;
            loss_sum += loss * targets.len() as f64;
        }
        Ok((loss_sum, lr))
    }

    fn step_on(&mut self, x: &crate::numeric::Matrix, targets: &[usize], lr: f64) -> Result<f64> {
        let alpha = self.cfg.label_smoothing;
        let (features, cache) = self.encoder.forward(x)?;
        let sampled = self.cfg.head == HeadVariant::Sampled && self.cfg.mode == Mode::Diet;
        let (loss, grad_features, head_update) = if sampled {
            let sampler = UniformNegatives {
                total: self.cfg.candidates,
            };
            let cands = sampler.sample(targets, self.head.n_classes(), &mut self.sampler_rng);
            let s = self.head.sampled_xent(&features, targets, alpha, &cands)?;
            (
                s.loss,
                s.grad_features,
                HeadUpdate::Rows(cands.classes().to_vec(), s.grad_rows),
            )
        } else {
            let logits = self.head.logits(&features)?;
            let (loss, grad_logits) = xent_smoothed(&logits, targets, alpha)?;
            let (grad_w, grad_features) = self.head.backward(&features, &grad_logits)?;
            (loss, grad_features, HeadUpdate::Dense(grad_w))
        };
        if !loss.is_finite() {
            return Err(Error::Divergence {
                step: self.step,
                loss,
            });
        }
        let (enc_grads, _) = self.encoder.backward(&cache, &grad_features)?;

        let cfg = &self.optim_cfg;
        let wd = cfg.weight_decay;
        self.optimizer.begin_step();
        let grads = enc_grads.slices();
        for (slot, (p, g)) in self
            .encoder
            .param_slices_mut()
            .into_iter()
            .zip(grads)
            .enumerate()
        {
            self.optimizer.update(slot, p, g, lr, wd, cfg)?;
        }
        let head_slot = 2 * self.encoder.n_layers();
        let head_lr = lr * self.cfg.head_lr_scale;
        let head_wd = if self.cfg.decay_head { wd } else { 0.0 };
        match head_update {
            HeadUpdate::Dense(g) => self.optimizer.update(
                head_slot,
                self.head.weights_mut().data_mut(),
                g.data(),
                head_lr,
                head_wd,
                cfg,
            )?,
            HeadUpdate::Rows(rows, g) => self.optimizer.update_rows(
                head_slot,
                self.head.weights_mut(),
                &rows,
                &g,
                head_lr,
                head_wd,
                cfg,
            )?,
        }
        self.step += 1;
        if !self.encoder.is_finite() || !self.head.is_finite() {
            return Err(Error::Divergence {
                step: self.step - 1,
                loss,
            });
        }
        Ok(loss)
    }
}

enum HeadUpdate {
    Dense(crate::numeric::Matrix),
    Rows(Vec<usize>, crate::numeric::Matrix),
}

/// Training split (subsampled if configured) and held-out split.
pub fn build_datasets(cfg: &TrainConfig) -> Result<(IndexedDataset, IndexedDataset)> {
    let full = cfg.dataset_spec().generate()?;
    let train = if cfg.subsample > 0 {
        subsample(&full, cfg.subsample, cfg.subsample_seed)?
    } else {
        full
    };
    let test = cfg.test_spec().generate()?;
    Ok((train, test))
}

fn run_mode(cfg: TrainConfig, mode: Mode) -> Result<RunArtifact> {
    if cfg.mode != mode {
        return Err(Error::Config(format!(
            "expected mode {mode:?}, config has {:?}",
            cfg.mode
        )));
    }
    let name = format!("{:?}-{}", mode, cfg.hash()).to_lowercase();
    let mut t = Trainer::new(cfg)?;
    t.run_to_end()?;
    Ok(t.into_artifact(name))
}

/// Full unsupervised run.
pub fn run_diet(cfg: TrainConfig) -> Result<RunArtifact> {
    run_mode(cfg, Mode::Diet)
}

/// Supervised reference run: same pipeline, C-way head on the true labels.
pub fn run_supervised(cfg: TrainConfig) -> Result<RunArtifact> {
    run_mode(cfg, Mode::Supervised)
}

/// Dispatches on `cfg.mode`.
pub fn run(cfg: TrainConfig) -> Result<RunArtifact> {
    let mode = cfg.mode;
    run_mode(cfg, mode)
}
