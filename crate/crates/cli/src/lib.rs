//! Command implementations behind the `afdet` binary. Each `cmd_*`
//! validates its configuration before touching the output directory and
//! writes files atomically.

pub mod args;
pub mod augment;
pub mod config;
pub mod error;
pub mod fsutil;
pub mod report;
pub mod targets;
pub mod train;

pub use augment::{cmd_augment, AugmentOp, AugmentOptions, AugmentReport};
pub use config::{load_config, ConfigSource};
pub use error::{CliError, Result, EXIT_RUNTIME, EXIT_USAGE};
pub use report::{cmd_bench, cmd_flops, BenchReport, FlopsOutput};
pub use targets::{cmd_decode, cmd_dump_heatmap, cmd_encode, EncodeInput, EncodeReport};
pub use train::{cmd_eval, cmd_train, read_metrics, TrainOptions, TrainSummary};
