//! Synthetic data, the index-as-target wrapper, augmentation and batching.

pub mod augment;
pub mod batching;
pub mod dataset;

pub use augment::{augment, AugmentationPolicy, Layout, Transform};
pub use batching::{epoch_batches, subsample, Batch, EpochBatches};
pub use dataset::{
    firewall_violations, DatasetKind, IndexedDataset, SyntheticSpec, UnlabeledView,
    UnsupervisedScope,
};
