//! Run configuration, training loop, checkpoints, metrics, sweeps and the
//! loss/accuracy correlation report.

pub mod checkpoint;
pub mod config;
pub mod metrics;
pub mod report;
pub mod sweep;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use config::{HeadVariant, Mode, TrainConfig};
pub use metrics::{read_metrics, write_metrics, MetricsFormat, MetricsRecord, RunArtifact};
pub use report::{correlation_report, spearman, CorrelationReport};
pub use sweep::{parse_grid, parse_grid_seeded, sweep, SweepRun};
pub use train::{build_datasets, run, run_diet, run_supervised, Trainer};
