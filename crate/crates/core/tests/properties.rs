use nalgebra::DMatrix;
use pcad::config::PipelineConfig;
use pcad::eval::{auroc, roc_curve, trapezoid_area, ScoredSet};
use pcad::features::{FeatureLevel, FeatureMatrix};
use pcad::geometry::{build_multiscale_with_voxel, random_rigid, voxel_downsample, KdTree, PointCloud, RigidTransform, Vec3};
use pcad::matching::{augment_dustbin, sinkhorn};
use pcad::memorybank::{coreset_greedy, MemoryBank, NormalizationParams};
use proptest::prelude::*;

fn points(max: usize) -> impl Strategy<Value = Vec<Vec3>> {
    prop::collection::vec((-5.0..5.0f64, -5.0..5.0f64, -5.0..5.0f64), 1..max)
        .prop_map(|v| v.into_iter().map(|(x, y, z)| Vec3::new(x, y, z)).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn transform_text_round_trip(seed in any::<u64>(), angle in 0.0..std::f64::consts::PI, shift in 0.0..10.0f64) {
        let t = random_rigid(seed, angle, shift);
        let back = RigidTransform::parse_text(&t.to_text()).unwrap();
        prop_assert_eq!(back.to_rows(), t.to_rows());
        let id = t.compose(&t.inverse());
        prop_assert!(id.angle() < 1e-7);
    }

    #[test]
    fn knn_distances_sorted_and_self_first(pts in points(200), k in 1usize..10) {
        let tree = KdTree::new(&pts);
        let k = k.min(pts.len());
        for (i, p) in pts.iter().enumerate().take(20) {
            let r = tree.knn(p, k).unwrap();
            prop_assert_eq!(r.indices.len(), k);
            prop_assert!(r.distances.windows(2).all(|w| w[0] <= w[1]));
            prop_assert_eq!(r.distances[0], 0.0);
            prop_assert!(pts[r.indices[0]] == pts[i]);
        }
    }

    #[test]
    fn voxel_output_is_bounded_and_keeps_bbox(pts in points(300), voxel in 0.05..3.0f64) {
        let cloud = PointCloud::new(pts).unwrap();
        let down = voxel_downsample(&cloud, voxel).unwrap();
        prop_assert!(!down.is_empty() && down.len() <= cloud.len());
        let (lo, hi) = cloud.bbox();
        for p in &down.points {
            for a in 0..3 {
                prop_assert!(p[a] >= lo[a] - 1e-12 && p[a] <= hi[a] + 1e-12);
            }
        }
    }

    #[test]
    fn multiscale_partitions_fine_points(pts in points(300), voxel in 0.2..2.0f64) {
        let ms = build_multiscale_with_voxel(&PointCloud::new(pts).unwrap(), voxel, 4.0).unwrap();
        let mut seen = vec![0usize; ms.fine.len()];
        for (node, members) in ms.fine_of.iter().enumerate() {
            prop_assert!(!members.is_empty());
            for &m in members {
                seen[m] += 1;
                prop_assert_eq!(ms.patch_of[m], node);
            }
        }
        prop_assert!(seen.iter().all(|&c| c == 1));
    }

    #[test]
    fn sinkhorn_entries_respect_mass_bounds(n in 1usize..12, m in 1usize..12, seed in any::<u64>(), alpha in -2.0..2.0f64) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let c = DMatrix::from_fn(n, m, |_, _| rng.gen_range(-2.0..2.0));
        let z = sinkhorn(&augment_dustbin(&c, alpha), 100).unwrap();
        for i in 0..=n {
            for j in 0..=m {
                let p = z.prob(i, j);
                // dustbin cells carry up to n or m units of mass
                let cap = if i < n && j < m { 1.0 } else { n.max(m) as f64 };
                prop_assert!(p.is_finite() && (0.0..=cap + 1e-9).contains(&p), "({}, {}) = {}", i, j, p);
            }
        }
    }

    #[test]
    fn coreset_is_distinct_and_sized(rows in prop::collection::vec(prop::collection::vec(-3.0..3.0f64, 4), 1..60), rate in 0.01..=1.0f64, seed in any::<u64>()) {
        let fm = FeatureMatrix::from_rows(&rows, FeatureLevel::Local).unwrap();
        let idx = coreset_greedy(&fm, rate, seed).unwrap();
        let want = ((rate * rows.len() as f64).ceil() as usize).clamp(1, rows.len());
        prop_assert_eq!(idx.len(), want);
        let mut sorted = idx.clone();
        sorted.sort_unstable();
        sorted.dedup();
        prop_assert_eq!(sorted.len(), idx.len());
    }

    #[test]
    fn bank_bytes_round_trip_to_f32(rows in prop::collection::vec(prop::collection::vec(-3.0..3.0f64, 5), 1..30)) {
        let fm = FeatureMatrix::from_rows(&rows, FeatureLevel::Local).unwrap();
        let bank = MemoryBank::new(fm, NormalizationParams { gamma_f: 2.5, gamma_c: 0.75 }, Some(rows.len())).unwrap();
        let back = MemoryBank::from_bytes(&bank.to_bytes()).unwrap();
        prop_assert_eq!(back.len(), bank.len());
        prop_assert_eq!(back.fused_dim(), bank.fused_dim());
        for (a, b) in back.entries.data.iter().zip(&bank.entries.data) {
            prop_assert_eq!(*a, *b as f32 as f64);
        }
        prop_assert_eq!(back.to_bytes(), bank.to_bytes());
    }

    #[test]
    fn feature_csv_is_lossless(rows in prop::collection::vec(prop::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), 3), 1..20)) {
        let fm = FeatureMatrix::from_rows(&rows, FeatureLevel::Patch).unwrap();
        prop_assert_eq!(FeatureMatrix::from_csv(&fm.to_csv()).unwrap(), fm);
    }

    #[test]
    fn roc_area_equals_auroc(scores in prop::collection::vec(0u8..20, 2..200), labels in prop::collection::vec(0u8..=1, 2..200)) {
        let n = scores.len().min(labels.len());
        let mut labels = labels[..n].to_vec();
        labels[0] = 0;
        labels[1] = 1;
        let set = ScoredSet::new(scores[..n].iter().map(|&s| s as f64).collect(), labels).unwrap();
        let a = auroc(&set).unwrap();
        prop_assert!((0.0..=1.0).contains(&a));
        prop_assert!((trapezoid_area(&roc_curve(&set).unwrap()) - a).abs() < 1e-12);
    }

    #[test]
    fn config_overrides_round_trip(alpha in -5.0..5.0f64, rate in 0.001..=1.0f64, k in 1usize..8, fine in 16usize..20000) {
        let mut cfg = PipelineConfig::default();
        cfg.apply_overrides(&[format!("matching.alpha={alpha}"), format!("bank.rate={rate}"), format!("matching.k={k}"), format!("target_fine={fine}")]).unwrap();
        let text = cfg.to_text();
        let back = PipelineConfig::parse_text(&text).unwrap();
        prop_assert_eq!(back, cfg);
        prop_assert_eq!(back.to_text(), text);
    }
}
