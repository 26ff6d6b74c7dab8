//! Threaded stage runtime, experiment harness and file formats for
//! layer-parallel residual network training. The numerical work lives in
//! `respar-core`.

pub mod config;
pub mod dataset_io;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod params_io;
pub mod runtime;

pub use config::{Mode, TrainConfig};
pub use error::{HarnessError, HarnessResult};
pub use experiment::{run_experiment, train, train_with_workers, TrainOutput};
pub use metrics::{MetricsRow, Summary};
pub use runtime::{measure_speedup, EpochTiming, ThreadedExecutor};
