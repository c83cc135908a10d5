//! Unsupervised representation learning that uses each training sample's
//! index as its classification target, at desk scale on synthetic data.
//!
//! Layers, bottom up: [`numeric`] (matrices, RNG), [`data`] (synthetic
//! datasets, augmentation, batching), [`encoder`] (MLP backbone), [`head`]
//! (index head and smoothed cross-entropy), [`optim`] (AdamW / SGD and the
//! learning-rate schedule), [`probe`] (linear evaluation) and [`harness`]
//! (runs, checkpoints, sweeps, reports).

mod binio;
pub mod data;
pub mod encoder;
pub mod error;
pub mod harness;
pub mod head;
pub mod numeric;
pub mod optim;
pub mod probe;

pub use error::{Error, Result};
