use std::path::PathBuf;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};

use crate::augment::AugmentOp;
use crate::config::{config_help, ConfigSource};

#[derive(Debug, Parser)]
#[command(
    name = "afdet",
    version,
    about = "Anchor-free detector toolkit: target codec, augmentation, toy training and evaluation"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// JSON run configuration; omitted keys take their defaults.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Overrides `seed`.
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Overrides `output_dir`.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Overrides one config key, e.g. `--set loss.ags.lambda=0.3`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

impl GlobalArgs {
    pub fn config_source(&self) -> ConfigSource {
        ConfigSource {
            path: self.config.clone(),
            seed: self.seed,
            out: self.out.clone(),
            overrides: self.set.clone(),
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Encode one image's boxes into training targets.
    Encode {
        /// COCO annotation file; without it a sample of the configured
        /// dataset is encoded.
        #[arg(long)]
        annotations: Option<PathBuf>,
        #[arg(long)]
        image_dir: Option<PathBuf>,
        #[arg(long)]
        image_id: Option<u64>,
        /// Dataset sample to encode when no annotations are given.
        #[arg(long, default_value_t = 0)]
        index: usize,
        /// Also write each class heatmap as a grayscale PNG.
        #[arg(long)]
        viz: bool,
    },
    /// Decode a targets container back into boxes.
    Decode {
        #[arg(long, value_name = "PATH")]
        input: PathBuf,
    },
    /// Write augmented samples as PNG plus COCO annotations.
    Augment {
        #[arg(long, value_enum, default_value = "pipeline")]
        op: AugmentOp,
        /// Fixed mixing weight for cutmix / mixup.
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        count: Option<usize>,
    },
    /// Train the toy detector.
    Train {
        /// Overrides `train.iterations`.
        #[arg(long)]
        iterations: Option<u64>,
        /// Continue from a checkpoint written under the same config.
        #[arg(long, value_name = "PATH")]
        resume: Option<PathBuf>,
        #[arg(long, default_value_t = 50)]
        log_every: u64,
    },
    /// Evaluate a checkpoint on the configured dataset (COCO-style mAP).
    Eval {
        /// Defaults to `<output_dir>/last.afdet`.
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
        /// Use the EMA shadow weights.
        #[arg(long)]
        ema: bool,
    },
    /// Time encode, decode, loss and model forward.
    Bench {
        #[arg(long, default_value_t = 100)]
        iters: usize,
        #[arg(long, default_value_t = 5)]
        warmup: usize,
    },
    /// Per-layer multiply-accumulate counts.
    Flops {
        #[arg(long)]
        height: Option<usize>,
        #[arg(long)]
        width: Option<usize>,
    },
    /// Write predicted and ground-truth class heatmaps of one sample.
    DumpHeatmap {
        /// Without a checkpoint the freshly initialized model is used.
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        ema: bool,
        #[arg(long, default_value_t = 0)]
        index: usize,
    },
}

/// The full command with the config key listing attached to `--help`.
pub fn command() -> clap::Command {
    let keys = config_help();
    Cli::command().after_help(keys.clone()).after_long_help(keys)
}

pub fn parse_from<I, T>(args: I) -> Result<Cli, clap::Error>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let matches = command().try_get_matches_from(args)?;
    Cli::from_arg_matches(&matches)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn command_definition_is_consistent() {
        command().debug_assert();
    }

    #[test]
    fn global_flags_after_subcommand() {
        let cli = parse_from(["afdet", "train", "--seed", "4", "--out", "d", "--set", "a.b=1"]).unwrap();
        assert_eq!(cli.global.seed, Some(4));
        assert_eq!(cli.global.set, ["a.b=1"]);
        assert!(matches!(cli.command, Command::Train { .. }));
    }
}
