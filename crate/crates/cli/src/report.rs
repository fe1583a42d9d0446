//! `bench` and `flops`.

use std::time::Instant;

use afdet_core::codec::{decode, encode, DecodeConfig, GroundTruth};
use afdet_core::nn::{flops_count, lite_vs_plain_ratio, FlopsRow, Mode, ToyDetector};
use afdet_core::rng::substream;
use afdet_core::train::{batch_tensor, detector_loss, load_dataset};
use afdet_core::{RunConfig, Tensor};
use rand::Rng;
use serde::Serialize;

use crate::error::{CliError, Result};

pub const MIN_BENCH_ITERS: usize = 50;
/// Decode benchmark map: COCO-sized class count on a 32×32 grid.
const DECODE_SHAPE: [usize; 3] = [80, 32, 32];

#[derive(Debug, Clone, Serialize)]
pub struct StageTiming {
    pub stage: String,
    pub detail: String,
    pub median_ms: f64,
    pub p95_ms: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub iterations: usize,
    pub warmup: usize,
    pub stages: Vec<StageTiming>,
}

/// Median and nearest-rank 95th percentile of `samples` (milliseconds).
pub fn summarize(samples: &mut [f64]) -> (f64, f64) {
    assert!(!samples.is_empty());
    samples.sort_by(f64::total_cmp);
    let n = samples.len();
    let median = if n % 2 == 1 {
        samples[n / 2]
    } else {
        0.5 * (samples[n / 2 - 1] + samples[n / 2])
    };
    let rank = (0.95 * n as f64).ceil() as usize;
    (median, samples[rank.clamp(1, n) - 1])
}

fn time_stage(
    stage: &str,
    detail: String,
    iters: usize,
    warmup: usize,
    mut f: impl FnMut() -> afdet_core::Result<()>,
) -> Result<StageTiming> {
    for _ in 0..warmup {
        f()?;
    }
    let mut ms = Vec::with_capacity(iters);
    for _ in 0..iters {
        let t = Instant::now();
        f()?;
        ms.push(t.elapsed().as_secs_f64() * 1e3);
    }
    let (median_ms, p95_ms) = summarize(&mut ms);
    Ok(StageTiming {
        stage: stage.into(),
        detail,
        median_ms,
        p95_ms,
    })
}

/// Wall time of encode, decode, loss forward+backward and a full model
/// forward. Warmup runs are not timed.
pub fn cmd_bench(cfg: &RunConfig, iters: usize, warmup: usize) -> Result<BenchReport> {
    if iters < MIN_BENCH_ITERS {
        return Err(CliError::Usage(format!("bench needs at least {MIN_BENCH_ITERS} iterations")));
    }
    let (h, w) = (cfg.image_height, cfg.image_width);
    let c = cfg.model.num_classes;
    let mut data = load_dataset(cfg)?;
    data.truncate(cfg.train.batch_size);
    let gts: Vec<Vec<GroundTruth<f32>>> = data
        .iter()
        .map(|s| {
            s.ground_truth(0.0)
                .iter()
                .map(|g| GroundTruth {
                    bbox: g.bbox.cast::<f32>(),
                    class_id: g.class_id,
                })
                .collect()
        })
        .collect();
    let mut stages = Vec::new();

    stages.push(time_stage(
        "encode",
        format!("{} objects, {h}x{w}, C={c}", gts[0].len()),
        iters,
        warmup,
        || encode(&gts[0], h, w, c, cfg.alpha).map(drop),
    )?);

    let mut rng = substream(cfg.seed, 0);
    let heat = Tensor::<f32>::from_fn(&DECODE_SHAPE, |_| rng.random::<f32>());
    let reg = Tensor::<f32>::from_fn(&[4, DECODE_SHAPE[1], DECODE_SHAPE[2]], |_| 1.0 + 20.0 * rng.random::<f32>());
    let dcfg = DecodeConfig {
        topk: 100,
        score_thresh: cfg.decode.score_thresh,
    };
    let [dc, dh, dw] = DECODE_SHAPE;
    stages.push(time_stage(
        "decode",
        format!("topk=100 on {dc}x{dh}x{dw}"),
        iters,
        warmup,
        || decode(&heat, &reg, &dcfg, 4 * dh, 4 * dw).map(drop),
    )?);

    let targets = gts
        .iter()
        .map(|g| encode(g, h, w, c, cfg.alpha))
        .collect::<afdet_core::Result<Vec<_>>>()?;
    let mut model = ToyDetector::<f32>::new(cfg.model.clone(), &mut substream(cfg.seed, 1))?;
    let x = batch_tensor(&data, cfg)?;
    let out = model.forward(&x, Mode::Eval)?;
    stages.push(time_stage(
        "loss_fwd_bwd",
        format!("batch {}, AGS {}", data.len(), if cfg.loss.ags.enabled { "on" } else { "off" }),
        iters,
        warmup,
        || detector_loss(&out, &targets, &cfg.loss, cfg.model.reg_scale).map(drop),
    )?);

    stages.push(time_stage(
        "model_forward",
        format!("batch {}, {h}x{w}, eval mode", data.len()),
        iters,
        warmup,
        || model.forward(&x, Mode::Eval).map(drop),
    )?);

    Ok(BenchReport {
        iterations: iters,
        warmup,
        stages,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct LiteRatio {
    pub channels: usize,
    /// Counted convolution MACs of a lite block over a plain 5×5 conv.
    pub ratio: f64,
    /// `(2·25·c + 2·c²) / (25·c²)`.
    pub analytic: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct FlopsOutput {
    pub input: [usize; 2],
    pub rows: Vec<FlopsRow>,
    pub total: u64,
    pub conv_total: u64,
    pub lite_vs_plain: LiteRatio,
}

pub fn lite_ratio_formula(c: usize) -> f64 {
    let c = c as f64;
    (2.0 * 25.0 * c + 2.0 * c * c) / (25.0 * c * c)
}

/// Per-layer MACs of the toy detector at `height × width` (defaults to the
/// configured input size).
pub fn cmd_flops(cfg: &RunConfig, height: Option<usize>, width: Option<usize>) -> Result<FlopsOutput> {
    let (h, w) = (height.unwrap_or(cfg.image_height), width.unwrap_or(cfg.image_width));
    if h == 0 || w == 0 || h % 16 != 0 || w % 16 != 0 {
        return Err(CliError::Usage(format!("input {h}x{w} must be positive multiples of 16")));
    }
    let model = ToyDetector::<f32>::new(cfg.model.clone(), &mut substream(cfg.seed, 0))?;
    let report = flops_count(&model.describe(h, w))?;
    let c = cfg.model.head_width;
    Ok(FlopsOutput {
        input: [h, w],
        total: report.total,
        conv_total: report.conv_macs(),
        rows: report.rows,
        lite_vs_plain: LiteRatio {
            channels: c,
            ratio: lite_vs_plain_ratio(c, h / 4, w / 4)?,
            analytic: lite_ratio_formula(c),
        },
    })
}
