//! Train one variant on the default synthetic market and print metrics.
//!
//! `cargo run --release --example benchmark -- [variant] [seed] [key=value ...]`

use std::time::Instant;

use gdgm::data::{synth_dataset, SynthConfig};
use gdgm::trainer::{train, RunConfig};

fn main() -> gdgm::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let mut cfg = RunConfig::default();
    if let Some(v) = args.first() {
        cfg.variant = v.parse()?;
    }
    if let Some(s) = args.get(1) {
        cfg.seed = s.parse().expect("seed");
    }
    for kv in args.iter().skip(2) {
        let (k, v) = kv.split_once('=').expect("key=value");
        cfg.set(k, v)?;
    }
    let records = synth_dataset(&SynthConfig { seed: cfg.seed, ..SynthConfig::default() })?;
    let start = Instant::now();
    let out = train(&cfg, &records)?;
    let secs = start.elapsed().as_secs_f64();
    for t in out.fitted.trace.iter().step_by(10) {
        println!("epoch {:4} loss {:.5} val_auc {:.4}", t.epoch, t.loss, t.val_auc);
    }
    println!("variant {} seed {} best_epoch {} ({secs:.1}s)", cfg.variant, cfg.seed, out.fitted.best_epoch);
    println!("valid {}", out.valid);
    println!("test  {}", out.test);
    Ok(())
}
