use std::process::ExitCode;

use afdet_cli::args::{parse_from, Cli, Command};
use afdet_cli::train::LAST_CHECKPOINT;
use afdet_cli::{
    cmd_augment, cmd_bench, cmd_decode, cmd_dump_heatmap, cmd_encode, cmd_eval, cmd_flops, cmd_train, load_config,
    AugmentOptions, CliError, EncodeInput, TrainOptions, EXIT_RUNTIME, EXIT_USAGE,
};
use anyhow::{Context, Result};
use clap::error::ErrorKind;
use serde::Serialize;

fn threads_from_env() -> Result<usize, CliError> {
    match std::env::var("AFDET_THREADS") {
        Err(_) => Ok(1),
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| CliError::Usage(format!("AFDET_THREADS must be a positive integer, got `{v}`"))),
    }
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let threads = threads_from_env()?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .context("starting worker pool")?;
    let mut cfg = load_config(&cli.global.config_source()).context("loading configuration")?;
    match cli.command {
        Command::Encode {
            annotations,
            image_dir,
            image_id,
            index,
            viz,
        } => {
            let input = EncodeInput {
                annotations,
                image_dir,
                image_id,
                index,
            };
            print_json(&cmd_encode(&cfg, &input, viz).context("encode")?)
        }
        Command::Decode { input } => {
            let dets = cmd_decode(&cfg, &input).with_context(|| format!("decoding {}", input.display()))?;
            print_json(&serde_json::json!({ "detections": dets }))
        }
        Command::Augment { op, lambda, count } => {
            let opts = AugmentOptions { op, lambda, count };
            print_json(&cmd_augment(&cfg, &opts).context("augment")?)
        }
        Command::Train {
            iterations,
            resume,
            log_every,
        } => {
            if let Some(n) = iterations {
                cfg.train.iterations = n;
            }
            let opts = TrainOptions { resume, log_every };
            print_json(&cmd_train(&cfg, &opts).context("training")?)
        }
        Command::Eval { checkpoint, ema } => {
            let path = checkpoint.unwrap_or_else(|| cfg.output_dir.join(LAST_CHECKPOINT));
            let r = cmd_eval(&cfg, &path, ema).with_context(|| format!("evaluating {}", path.display()))?;
            print_json(&r)
        }
        Command::Bench { iters, warmup } => print_json(&cmd_bench(&cfg, iters, warmup).context("bench")?),
        Command::Flops { height, width } => print_json(&cmd_flops(&cfg, height, width).context("flops")?),
        Command::DumpHeatmap {
            checkpoint,
            ema,
            index,
        } => print_json(&cmd_dump_heatmap(&cfg, checkpoint.as_deref(), ema, index).context("dump-heatmap")?),
    }
}

fn main() -> ExitCode {
    let cli = match parse_from(std::env::args_os()) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(EXIT_USAGE as u8),
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e.downcast_ref::<CliError>().map_or(EXIT_RUNTIME, CliError::exit_code);
            ExitCode::from(code as u8)
        }
    }
}
