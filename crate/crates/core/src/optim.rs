//! AdamW with decoupled weight decay, SGD with momentum, and the
//! warmup + cosine learning-rate schedule.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::binio::*;
use crate::error::{Error, Result};
use crate::numeric::Matrix;

/// Batch size at which `base_lr` applies unscaled.
pub const REFERENCE_BATCH: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimKind {
    Adamw,
    Sgd,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimConfig {
    pub kind: OptimKind,
    /// Learning rate at batch size 256.
    pub base_lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub momentum: f64,
    pub warmup_epochs: usize,
    pub total_epochs: usize,
    pub batch_size: usize,
    pub final_lr_floor: f64,
}

impl Default for OptimConfig {
    /// AdamW, lr 0.001, weight decay 0.05, 10 warmup epochs, batch 256.
    fn default() -> Self {
        Self {
            kind: OptimKind::Adamw,
            base_lr: 1e-3,
            weight_decay: 0.05,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            momentum: 0.9,
            warmup_epochs: 10,
            total_epochs: 100,
            batch_size: 256,
            final_lr_floor: 0.0,
        }
    }
}

impl OptimConfig {
    /// lr 0.0002 / weight decay 0.01, the setting used for transformer backbones.
    pub fn transformer_preset() -> Self {
        Self {
            base_lr: 2e-4,
            weight_decay: 0.01,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return Err(Error::Config(format!(
                "base_lr {} must be positive",
                self.base_lr
            )));
        }
        if self.warmup_epochs > self.total_epochs {
            return Err(Error::Config(format!(
                "warmup_epochs {} exceeds total_epochs {}",
                self.warmup_epochs, self.total_epochs
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.weight_decay < 0.0 || self.final_lr_floor < 0.0 {
            return Err(Error::Config(
                "weight decay and lr floor must be >= 0".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("betas must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// `base_lr · batch_size / 256`.
pub fn scaled_lr(cfg: &OptimConfig) -> f64 {
    cfg.base_lr * cfg.batch_size as f64 / REFERENCE_BATCH as f64
}

/// Learning rate for the optimizer step with 0-based index `step`.
///
/// Rises linearly from 0 over the warmup steps, then follows a half cosine
/// from `scaled_lr` down to `final_lr_floor`, reached at `total_epochs ·
/// steps_per_epoch`.
pub fn lr_at(cfg: &OptimConfig, step: u64, steps_per_epoch: u64) -> f64 {
    let peak = scaled_lr(cfg);
    let warmup = cfg.warmup_epochs as u64 * steps_per_epoch;
    let total = cfg.total_epochs as u64 * steps_per_epoch;
    if step < warmup {
        return peak * step as f64 / warmup as f64;
    }
    if total <= warmup {
        return peak;
    }
    if step >= total {
        return cfg.final_lr_floor;
    }
    let progress = (step - warmup) as f64 / (total - warmup) as f64;
    cfg.final_lr_floor
        + (peak - cfg.final_lr_floor) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}

/// First and second moments (AdamW) or velocity in `first` (SGD).
#[derive(Clone, Debug, PartialEq)]
pub struct Moments {
    pub first: Vec<f64>,
    pub second: Vec<f64>,
}

impl Moments {
    pub fn zeros(kind: OptimKind, len: usize) -> Self {
        Self {
            first: vec![0.0; len],
            second: match kind {
                OptimKind::Adamw => vec![0.0; len],
                OptimKind::Sgd => Vec::new(),
            },
        }
    }
}

/// One AdamW update of one tensor at (1-based) step `t`:
///
/// ```text
/// m ← β₁m + (1−β₁)g        v ← β₂v + (1−β₂)g²
/// θ ← θ − lr·wd·θ − lr · (m / (1−β₁ᵗ)) / (√(v / (1−β₂ᵗ)) + ε)
/// ```
#[allow(clippy::too_many_arguments)]
pub fn adamw_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut Moments,
    t: u64,
    lr: f64,
    weight_decay: f64,
    cfg: &OptimConfig,
) -> Result<()> {
    if params.len() != grads.len()
        || state.first.len() != params.len()
        || state.second.len() != params.len()
    {
        return Err(Error::dim(
            "adamw_step",
            format!(
                "{} params, {} grads, {} state",
                params.len(),
                grads.len(),
                state.first.len()
            ),
        ));
    }
    let t = t.max(1) as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let decay = 1.0 - lr * weight_decay;
    for i in 0..params.len() {
        let g = grads[i];
        let m = cfg.beta1 * state.first[i] + (1.0 - cfg.beta1) * g;
        let v = cfg.beta2 * state.second[i] + (1.0 - cfg.beta2) * g * g;
        state.first[i] = m;
        state.second[i] = v;
        let step = (m / bc1) / ((v / bc2).sqrt() + cfg.eps);
        params[i] = params[i] * decay - lr * step;
    }
    Ok(())
}

/// `velocity ← momentum·velocity + g; θ ← θ − lr·velocity`.
pub fn sgd_step(
    params: &mut [f64],
    grads: &[f64],
    velocity: &mut [f64],
    lr: f64,
    cfg: &OptimConfig,
) -> Result<()> {
    if params.len() != grads.len() || velocity.len() != params.len() {
        return Err(Error::dim(
            "sgd_step",
            format!(
                "{} params, {} grads, {} velocity",
                params.len(),
                grads.len(),
                velocity.len()
            ),
        ));
    }
    for i in 0..params.len() {
        velocity[i] = cfg.momentum * velocity[i] + grads[i];
        params[i] -= lr * velocity[i];
    }
    Ok(())
}

/// Optimizer state for a fixed list of parameter tensors ("slots").
#[derive(Clone, Debug, PartialEq)]
pub struct Optimizer {
    kind: OptimKind,
    step: u64,
    slots: Vec<Moments>,
}

impl Optimizer {
    pub fn new(kind: OptimKind, slot_sizes: &[usize]) -> Self {
        Self {
            kind,
            step: 0,
            slots: slot_sizes
                .iter()
                .map(|&n| Moments::zeros(kind, n))
                .collect(),
        }
    }

    pub fn kind(&self) -> OptimKind {
        self.kind
    }

    /// Number of completed `begin_step` calls.
    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn slots(&self) -> &[Moments] {
        &self.slots
    }

    pub fn begin_step(&mut self) {
        self.step += 1;
    }

    /// Dense update of one slot. Weight decay only applies to AdamW.
    pub fn update(
        &mut self,
        slot: usize,
        params: &mut [f64],
        grads: &[f64],
        lr: f64,
        weight_decay: f64,
        cfg: &OptimConfig,
    ) -> Result<()> {
        let t = self.step;
        let kind = self.kind;
        let state = self.slot_mut(slot)?;
        match kind {
            OptimKind::Adamw => adamw_step(params, grads, state, t, lr, weight_decay, cfg),
            OptimKind::Sgd => sgd_step(params, grads, &mut state.first, lr, cfg),
        }
    }

    /// Updates only the listed rows of a row-major slot whose rows are
    /// `grad_rows.cols()` wide. Rows not listed keep their parameters and
    /// moments untouched (lazy update).
    #[allow(clippy::too_many_arguments)]
    pub fn update_rows(
        &mut self,
        slot: usize,
        params: &mut Matrix,
        rows: &[usize],
        grad_rows: &Matrix,
        lr: f64,
        weight_decay: f64,
        cfg: &OptimConfig,
    ) -> Result<()> {
        let width = params.cols();
        if grad_rows.shape() != (rows.len(), width) {
            return Err(Error::dim(
                "update_rows",
                format!(
                    "{:?} gradient rows for {} rows of width {width}",
                    grad_rows.shape(),
                    rows.len()
                ),
            ));
        }
        let t = self.step;
        let kind = self.kind;
        let state = self.slot_mut(slot)?;
        if state.first.len() != params.data().len() {
            return Err(Error::dim(
                "update_rows",
                "slot size does not match parameters",
            ));
        }
        for (i, &r) in rows.iter().enumerate() {
            let span = r * width..(r + 1) * width;
            let mut row_state = Moments {
                first: state.first[span.clone()].to_vec(),
                second: match kind {
                    OptimKind::Adamw => state.second[span.clone()].to_vec(),
                    OptimKind::Sgd => Vec::new(),
                },
            };
            let p = params.row_mut(r);
            match kind {
                OptimKind::Adamw => adamw_step(
                    p,
                    grad_rows.row(i),
                    &mut row_state,
                    t,
                    lr,
                    weight_decay,
                    cfg,
                )?,
                OptimKind::Sgd => sgd_step(p, grad_rows.row(i), &mut row_state.first, lr, cfg)?,
            }
            state.first[span.clone()].copy_from_slice(&row_state.first);
            if kind == OptimKind::Adamw {
                state.second[span].copy_from_slice(&row_state.second);
            }
        }
        Ok(())
    }

    fn slot_mut(&mut self, slot: usize) -> Result<&mut Moments> {
        let n = self.slots.len();
        self.slots
            .get_mut(slot)
            .ok_or_else(|| Error::dim("optimizer", format!("slot {slot} of {n}")))
    }

    /// Segment layout: u8 kind (0 adamw, 1 sgd), u64 step, u64 slot count,
    /// then per slot two length-prefixed f64 arrays (first, second moment).
    pub fn write_segment<W: Write>(&self, w: &mut W) -> Result<()> {
        put_u8(
            w,
            match self.kind {
                OptimKind::Adamw => 0,
                OptimKind::Sgd => 1,
            },
        )?;
        put_u64(w, self.step)?;
        put_u64(w, self.slots.len() as u64)?;
        for s in &self.slots {
            put_f64s(w, &s.first)?;
            put_f64s(w, &s.second)?;
        }
        Ok(())
    }

    pub fn read_segment<R: Read>(r: &mut R) -> Result<Self> {
        let kind = match get_u8(r)? {
            0 => OptimKind::Adamw,
            1 => OptimKind::Sgd,
            k => return Err(Error::Format(format!("unknown optimizer kind {k}"))),
        };
        let step = get_u64(r)?;
        let n = get_usize(r)?;
        let mut slots = Vec::with_capacity(n.min(1024));
        for _ in 0..n {
            let first = get_f64s(r)?;
            let second = get_f64s(r)?;
            slots.push(Moments { first, second });
        }
        Ok(Self { kind, step, slots })
    }
}
