//! Registration accuracy and timing on seeded synthetic pairs.
//!
//! cargo run --release --example registration_bench -- [pairs] [points] [fine_target]
//!
//! Environment overrides: NC, K, ALPHA, NK (neighbor_k), PS (point_scale),
//! CF (coarse factor), TH (inlier threshold in fine voxels), SCORING.

use pcad::descriptor::{DescriptorConfig, FeaturedCloud};
use pcad::geometry::{adaptive_voxel_size, build_multiscale_with_voxel};
use pcad::groundtruth::make_pair;
use pcad::registration::{register, RegisterConfig};
use pcad::synth::{sample_normal, Shape};
use std::f64::consts::PI;
use std::time::Instant;

fn env(key: &str, default: f64) -> f64 {
    std::env::var(key).ok().map_or(default, |v| v.parse().expect("numeric override"))
}

fn main() {
    let args: Vec<usize> = std::env::args().skip(1).map(|a| a.parse().expect("integer argument")).collect();
    let pairs = args.first().copied().unwrap_or(20);
    let points = args.get(1).copied().unwrap_or(4000);
    let target = args.get(2).copied().unwrap_or(2048);
    let mut cfg = RegisterConfig::default();
    cfg.matching.n_c = env("NC", cfg.matching.n_c as f64) as usize;
    cfg.matching.k = env("K", cfg.matching.k as f64) as usize;
    cfg.matching.alpha = env("ALPHA", cfg.matching.alpha);
    if let Ok(s) = std::env::var("SCORING") {
        cfg.ransac.scoring = s.parse().unwrap();
    }
    let d = DescriptorConfig::default();
    let dcfg = DescriptorConfig { neighbor_k: env("NK", d.neighbor_k as f64) as usize, point_scale: env("PS", d.point_scale), ..d };
    let cf = env("CF", 8.0);
    let mut ok = 0;
    let mut worst: f64 = 0.0;
    for s in 0..pairs as u64 {
        let start = Instant::now();
        let cloud = sample_normal(Shape::SphereBumps, points, s).unwrap();
        let (p, q, t_gt) = make_pair(&cloud, 1000 + s, PI, 1.0).unwrap();
        let v = adaptive_voxel_size(&p, target, 0.02).unwrap();
        let fp = FeaturedCloud::describe(build_multiscale_with_voxel(&p, v, cf).unwrap(), &dcfg).unwrap();
        let fq = FeaturedCloud::describe(build_multiscale_with_voxel(&q, v, cf).unwrap(), &dcfg).unwrap();
        cfg.ransac.thresh_voxels = env("TH", cfg.ransac.thresh_voxels);
        let rep = register(&fp, &fq, &cfg).map(|r| r.with_ground_truth(&t_gt));
        let secs = start.elapsed().as_secs_f64();
        worst = worst.max(secs);
        match rep {
            Ok(r) => {
                let (rre, rte) = (r.rre_deg.unwrap(), r.rte.unwrap());
                let pass = rre < 2.0 && rte < 2.0 * v;
                ok += pass as usize;
                println!(
                    "pair {s:2}: rre {rre:7.3} rte {rte:.4} (2v {:.4}) inliers {}/{} {secs:.2}s {}",
                    2.0 * v,
                    r.inliers,
                    r.correspondences,
                    if pass { "ok" } else { "FAIL" }
                );
            }
            Err(e) => println!("pair {s:2}: error {e}"),
        }
    }
    println!("{ok}/{pairs} passed, slowest {worst:.2}s");
}
