//! Training harness: configuration, the epoch loop, evaluation,
//! checkpoints, plots and sweeps.

pub mod checkpoint;
pub mod config;
pub mod plot;
pub mod sweep;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use config::TrainConfig;
pub use plot::emit_plot;
pub use sweep::sweep;
pub use train::{evaluate, read_metrics, train, MetricsRow, TrainOutcome, METRICS_HEADER};
