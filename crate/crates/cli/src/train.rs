//! `train` and `eval`.
//!
//! A run directory holds `config.json`, `metrics.jsonl` (one
//! [`StepMetrics`] object per completed iteration), `ckpt-NNNNNN.afdet` at
//! every `train.checkpoint_every` iterations and `last.afdet` at the end.
//! Each checkpoint carries raw weights, the EMA shadow and the optimizer
//! state. The metrics log is rewritten whole alongside every checkpoint, so
//! a log on disk always ends at the newest checkpoint.

use std::path::{Path, PathBuf};

use afdet_core::data::EvalResult;
use afdet_core::rng::substream;
use afdet_core::store::{load_model_state, Container};
use afdet_core::train::{evaluate, load_dataset, StepMetrics, Trainer};
use afdet_core::nn::ToyDetector;
use afdet_core::RunConfig;
use serde::Serialize;

use crate::error::{CliError, Result};
use crate::fsutil::{ensure_dir, write_text};

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const LAST_CHECKPOINT: &str = "last.afdet";
pub const CONFIG_FILE: &str = "config.json";

pub fn checkpoint_name(iteration: u64) -> String {
    format!("ckpt-{iteration:06}.afdet")
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Continue from this checkpoint (written under the same config).
    pub resume: Option<PathBuf>,
    /// Progress line on stderr every this many iterations; 0 is silent.
    pub log_every: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainSummary {
    pub iterations: u64,
    pub resumed_from: Option<u64>,
    pub final_loss: Option<f64>,
    pub metrics: PathBuf,
    pub checkpoints: Vec<PathBuf>,
}

/// Lines of an existing log up to and including `iteration`.
fn previous_log(path: &Path, iteration: u64) -> Result<Vec<String>> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(CliError::io(path, e)),
    };
    let mut kept = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let m: StepMetrics = serde_json::from_str(line)
            .map_err(|e| CliError::Usage(format!("{}: unreadable metrics line: {e}", path.display())))?;
        if m.iteration <= iteration {
            kept.push(line.to_string());
        }
    }
    Ok(kept)
}

fn write_log(path: &Path, lines: &[String]) -> Result<()> {
    let mut text = lines.join("\n");
    if !text.is_empty() {
        text.push('\n');
    }
    write_text(path, &text)
}

pub fn cmd_train(cfg: &RunConfig, opts: &TrainOptions) -> Result<TrainSummary> {
    cfg.validate()?;
    let data = load_dataset(cfg)?;
    let mut trainer = match &opts.resume {
        Some(path) => Trainer::resume(cfg.clone(), data, &Container::read(path)?)?,
        None => Trainer::new(cfg.clone(), data)?,
    };
    let resumed_from = opts.resume.as_ref().map(|_| trainer.iteration);

    let out = &cfg.output_dir;
    ensure_dir(out)?;
    write_text(&out.join(CONFIG_FILE), &cfg.to_json())?;
    let metrics_path = out.join(METRICS_FILE);
    let mut lines = match resumed_from {
        Some(it) => previous_log(&metrics_path, it)?,
        None => Vec::new(),
    };

    let mut checkpoints = Vec::new();
    let mut final_loss = None;
    let every = cfg.train.checkpoint_every;
    while trainer.iteration < cfg.train.iterations {
        let m = trainer.step()?;
        final_loss = Some(m.loss.total);
        lines.push(serde_json::to_string(&m).expect("metrics always serialize"));
        if opts.log_every > 0 && m.iteration % opts.log_every == 0 {
            eprintln!(
                "iter {:>6}  total {:.4}  loc {:.4}  reg {:.4}  lr {:.5}",
                m.iteration, m.loss.total, m.loss.loc, m.loss.reg, m.lr
            );
        }
        if every > 0 && m.iteration % every == 0 {
            let path = out.join(checkpoint_name(m.iteration));
            trainer.checkpoint().write(&path)?;
            write_log(&metrics_path, &lines)?;
            checkpoints.push(path);
        }
    }
    let last = out.join(LAST_CHECKPOINT);
    trainer.checkpoint().write(&last)?;
    write_log(&metrics_path, &lines)?;
    checkpoints.push(last);
    Ok(TrainSummary {
        iterations: trainer.iteration,
        resumed_from,
        final_loss,
        metrics: metrics_path,
        checkpoints,
    })
}

/// Parses a metrics log written by [`cmd_train`].
pub fn read_metrics(path: &Path) -> Result<Vec<StepMetrics>> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| CliError::Usage(format!("{}: {e}", path.display()))))
        .collect()
}

/// Loads `checkpoint` into a model built from `cfg` and scores it on the
/// configured dataset.
pub fn cmd_eval(cfg: &RunConfig, checkpoint: &Path, use_ema: bool) -> Result<EvalResult> {
    let data = load_dataset(cfg)?;
    // The initial weights are overwritten; the draw only fixes shapes.
    let mut model = ToyDetector::<f32>::new(cfg.model.clone(), &mut substream(cfg.seed, 0))?;
    load_model_state(&Container::read(checkpoint)?, &mut model, use_ema)?;
    Ok(evaluate(&mut model, &data, cfg)?)
}
