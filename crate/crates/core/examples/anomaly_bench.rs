//! End-to-end synthetic detection benchmark.
//!
//! cargo run --release --example anomaly_bench -- [seed] [key=value ...]
//!
//! Environment: ROTATE=1 moves every test sample, POINTS sets the sample size.

use pcad::config::PipelineConfig;
use pcad::pipeline::{run_pipeline, synth_dataset, SynthSpec};
use std::time::Instant;

fn main() {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().map_or(0, |s| s.parse().expect("integer seed"));
    let mut cfg = PipelineConfig { target_fine: 2048, ..Default::default() };
    cfg.apply_overrides(&args.collect::<Vec<_>>()).expect("overrides");
    let points = std::env::var("POINTS").ok().map_or(4000, |v| v.parse().unwrap());
    let spec = SynthSpec {
        seed,
        points,
        target_fine: cfg.target_fine,
        rotate_test: std::env::var("ROTATE").is_ok_and(|v| v == "1"),
        ..Default::default()
    };
    let start = Instant::now();
    let data = synth_dataset(&spec).unwrap();
    let run = run_pipeline(&data.train, &data.test, &cfg, None, 0).unwrap();
    for s in &run.metrics.samples {
        println!("{:14} label {:?} score {:?} {}", s.name, s.label, s.object_score, s.error.as_deref().unwrap_or(""));
    }
    println!(
        "o_auroc {:?} p_auroc {:?} bank {} failures {} voxel {:.4} in {:.1}s",
        run.metrics.o_auroc,
        run.metrics.p_auroc,
        run.metrics.bank_size,
        run.metrics.failures,
        data.fine_voxel,
        start.elapsed().as_secs_f64()
    );
}
