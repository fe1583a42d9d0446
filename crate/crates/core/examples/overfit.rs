//! Trains the toy detector on a tiny synthetic set and reports mAP.
//!
//! `cargo run --release -p afdet-core --example overfit -- [iterations] [lr] [warmup]`
//!
//! Set `AGS=0` to train without the adaptive regression weighting.

use std::time::Instant;

use afdet_core::train::{evaluate, load_dataset, Trainer};
use afdet_core::RunConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let mut cfg = RunConfig::default();
    cfg.train.iterations = args.next().map(|s| s.parse()).transpose()?.unwrap_or(500);
    if let Some(lr) = args.next() {
        cfg.optim.lr.base_lr = lr.parse()?;
    }
    if let Some(w) = args.next() {
        cfg.optim.lr.warmup_iters = w.parse()?;
    }
    if std::env::var("AGS").as_deref() == Ok("0") {
        cfg.loss.ags.enabled = false;
    }
    let data = load_dataset(&cfg)?;
    let mut trainer = Trainer::new(cfg.clone(), data.clone())?;
    let start = Instant::now();
    for _ in 0..cfg.train.iterations {
        let m = trainer.step()?;
        if m.iteration % 25 == 0 || m.iteration == 10 {
            println!(
                "{:4} total {:.4} loc {:.4} reg {:.4} ({:.1}s)",
                m.iteration,
                m.loss.total,
                m.loss.loc,
                m.loss.reg,
                start.elapsed().as_secs_f64()
            );
        }
    }
    let r = evaluate(&mut trainer.model, &data, &cfg)?;
    println!("mAP@0.5 {:?} mAP {:.3}", r.map_50, r.map);
    Ok(())
}
