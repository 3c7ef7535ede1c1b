use pcad::config::PipelineConfig;
use pcad::features::write_features;
use pcad::geometry::{dist2, random_rigid, read_cloud, RigidTransform};
use pcad::pairs::{ground_truth_pair, pair_loss, read_pair_dir, write_pair_dir};
use pcad::pipeline::{load_dir, prepare, read_manifest, run_pipeline, synth_dataset, write_dataset, SynthSpec};
use pcad::registration::register;
use pcad::synth::{sample_anomalous, sample_normal, Shape};
use pcad::Error;
use std::collections::BTreeMap;
use std::fs;

fn small_spec() -> SynthSpec {
    SynthSpec { points: 2500, n_train: 2, n_normal: 3, n_anomalous: 3, target_fine: 1024, ..Default::default() }
}

fn small_config() -> PipelineConfig {
    PipelineConfig { target_fine: 1024, ..Default::default() }
}

#[test]
fn train_as_test_with_full_bank_reports_degenerate_labels() {
    let data = synth_dataset(&small_spec()).unwrap();
    let mut cfg = small_config();
    cfg.bank.rate = 1.0;
    let run = run_pipeline(&data.train, &data.train, &cfg, None, 2).unwrap();
    assert_eq!(run.metrics.failures, 0);
    assert!(run.metrics.degenerate());
    assert_eq!(run.metrics.o_auroc, None);
    assert_eq!(run.metrics.o_auroc_error.as_deref(), Some("degenerate labels"));
    let json: serde_json::Value = serde_json::from_str(&run.metrics.to_json()).unwrap();
    assert_eq!(json["schema_version"], 1);
    assert!(json["o_auroc"].is_null());
}

#[test]
fn synthetic_run_reports_both_metrics_and_ignores_job_count() {
    let data = synth_dataset(&small_spec()).unwrap();
    let cfg = small_config();
    let a = run_pipeline(&data.train, &data.test, &cfg, None, 1).unwrap();
    let b = run_pipeline(&data.train, &data.test, &cfg, None, 3).unwrap();
    assert!(a.metrics.o_auroc.is_some() && a.metrics.p_auroc.is_some(), "{}", a.metrics.to_json());
    assert_eq!(a.metrics.failures, 0);
    assert_eq!(a.metrics.samples.len(), 6);
    assert_eq!(a.metrics.to_json(), b.metrics.to_json());
    let names: Vec<&str> = a.records.iter().map(|(n, _)| n.as_str()).collect();
    let mut sorted = names.clone();
    sorted.sort();
    assert_eq!(names, sorted);
}

#[test]
fn missing_feature_files_fail_per_sample() {
    let data = synth_dataset(&small_spec()).unwrap();
    let cfg = small_config();
    let dir = tempfile::tempdir().unwrap();
    for s in &data.train {
        let fc = prepare(s, &cfg, None).unwrap();
        write_features(&dir.path().join(format!("{}.local.feat", s.name)), &fc.local).unwrap();
    }
    // only the first test sample gets a feature file
    let first = &data.test[0];
    let fc = prepare(first, &cfg, None).unwrap();
    write_features(&dir.path().join(format!("{}.local.csv", first.name)), &fc.local).unwrap();

    let run = run_pipeline(&data.train, &data.test, &cfg, Some(dir.path()), 2).unwrap();
    assert_eq!(run.metrics.failures, data.test.len() - 1);
    for (name, rec) in &run.records {
        if name == &first.name {
            assert!(rec.is_ok());
        } else {
            match rec {
                Err(Error::Io { source, .. }) => assert_eq!(source.kind(), std::io::ErrorKind::NotFound),
                other => panic!("{name}: expected a missing-file error, got {other:?}"),
            }
        }
    }
    let failed = run.metrics.samples.iter().filter(|s| s.error.is_some()).count();
    assert_eq!(failed, data.test.len() - 1);
}

#[test]
fn missing_training_features_abort_the_run() {
    let data = synth_dataset(&small_spec()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    assert!(run_pipeline(&data.train, &data.test, &small_config(), Some(dir.path()), 1).is_err());
}

#[test]
fn written_dataset_reloads() {
    let data = synth_dataset(&small_spec()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path(), &data).unwrap();
    let train = load_dir(&dir.path().join("train")).unwrap();
    let test = load_dir(&dir.path().join("test")).unwrap();
    assert_eq!(train.len(), data.train.len());
    assert_eq!(test.len(), data.test.len());
    let manifest = read_manifest(&dir.path().join("labels.csv")).unwrap();
    let expected: BTreeMap<String, u8> = data.test.iter().map(|s| (s.name.clone(), s.object_label().unwrap())).collect();
    assert_eq!(manifest, expected);
    for s in &test {
        let orig = data.test.iter().find(|o| o.name == s.name).unwrap();
        assert_eq!(s.cloud, orig.cloud);
    }
}

#[test]
fn synthetic_labels() {
    for (shape, frac) in [(Shape::SphereBumps, 0.05), (Shape::PlaneDents, 0.1), (Shape::SphereBumps, 0.2)] {
        let data = synth_dataset(&SynthSpec { shape, defect_fraction: frac, points: 3000, n_train: 1, n_normal: 4, n_anomalous: 6, ..Default::default() }).unwrap();
        for s in &data.test {
            let labels = s.cloud.labels.as_ref().unwrap();
            let sum = labels.iter().map(|&l| l as f64).sum::<f64>();
            if s.name.starts_with("normal") {
                assert_eq!(sum, 0.0, "{}", s.name);
            } else {
                let expected = frac * labels.len() as f64;
                assert!((sum - expected).abs() <= 0.2 * expected, "{}: {sum} vs {expected}", s.name);
            }
        }
    }
    for frac in [0.0, -0.1, 0.25, f64::NAN] {
        assert!(synth_dataset(&SynthSpec { defect_fraction: frac, ..Default::default() }).is_err());
        assert!(sample_anomalous(Shape::SphereBumps, 1000, frac, 0.1, 0).is_err());
    }
}

#[test]
fn same_seed_same_dataset() {
    let a = synth_dataset(&small_spec()).unwrap();
    let b = synth_dataset(&small_spec()).unwrap();
    let c = synth_dataset(&SynthSpec { seed: 1, ..small_spec() }).unwrap();
    assert_eq!(a.test[4].cloud, b.test[4].cloud);
    assert_ne!(a.test[4].cloud, c.test[4].cloud);
}

#[test]
fn self_registration_is_identity() {
    let cfg = small_config();
    let cloud = sample_normal(Shape::SphereBumps, 2500, 5).unwrap();
    let fc = prepare(&pcad::pipeline::Sample { name: "a".into(), cloud }, &cfg, None).unwrap();
    let report = register(&fc, &fc, &cfg.register).unwrap().with_ground_truth(&RigidTransform::identity());
    assert!(report.rre_deg.unwrap() < 0.5);
    assert!(report.rte.unwrap() < 0.5 * fc.ms.fine_voxel);
}

#[test]
fn featureless_sphere_does_not_panic() {
    let cfg = small_config();
    let sphere = sample_normal(Shape::Sphere, 2500, 1).unwrap();
    let moved = pcad::geometry::apply_transform(&sphere, &random_rigid(3, 1.0, 0.5));
    let p = prepare(&pcad::pipeline::Sample { name: "p".into(), cloud: sphere }, &cfg, None).unwrap();
    let q = prepare(&pcad::pipeline::Sample { name: "q".into(), cloud: moved }, &cfg, None).unwrap();
    // any outcome is acceptable as long as it is a value or a typed error
    match register(&p, &q, &cfg.register) {
        Ok(r) => assert!(r.transform.validate().is_ok() && r.inlier_ratio <= 1.0),
        Err(e) => assert!(matches!(e, Error::RegistrationFailed(_) | Error::Degenerate(_))),
    }
}

#[test]
fn pair_directory_round_trip() {
    let cfg = small_config();
    let cloud = sample_normal(Shape::SphereBumps, 2500, 9).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let pair = ground_truth_pair(&cloud, &cfg, 4, std::f64::consts::PI, 1.0).unwrap();
    assert!(!pair.matches.patch_matches.is_empty());
    assert!(pair.matches.point_matches.iter().any(|s| !s.pairs.is_empty()));
    write_pair_dir(dir.path(), &pair).unwrap();

    let p = read_cloud(&dir.path().join("P.xyz")).unwrap();
    let q = read_cloud(&dir.path().join("Q.xyz")).unwrap();
    let t = RigidTransform::parse_text(&fs::read_to_string(dir.path().join("T_gt.txt")).unwrap()).unwrap();
    assert_eq!(p.len(), q.len());
    let worst = p.points.iter().zip(&q.points).map(|(a, b)| dist2(&t.apply(a), b).sqrt()).fold(0.0, f64::max);
    assert!(worst < 1e-6, "{worst}");

    let back = read_pair_dir(dir.path()).unwrap();
    assert_eq!(back.matches, pair.matches);
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("matches.json")).unwrap()).unwrap();
    assert_eq!(json["schema_version"], 1);

    let again = ground_truth_pair(&cloud, &cfg, 4, std::f64::consts::PI, 1.0).unwrap();
    let dir2 = tempfile::tempdir().unwrap();
    write_pair_dir(dir2.path(), &again).unwrap();
    for f in ["P.xyz", "Q.xyz", "T_gt.txt", "matches.json"] {
        assert_eq!(fs::read(dir.path().join(f)).unwrap(), fs::read(dir2.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn pair_loss_is_finite_and_accepts_feature_files() {
    let cfg = small_config();
    let cloud = sample_normal(Shape::SphereBumps, 2500, 11).unwrap();
    let pair = ground_truth_pair(&cloud, &cfg, 2, 1.0, 0.5).unwrap();
    let built_in = pair_loss(&pair, &cfg, None).unwrap();
    for v in [built_in.l_f, built_in.l_p, built_in.l_oc, built_in.total] {
        assert!(v.is_finite() && v >= 0.0);
    }
    assert!((built_in.total - (built_in.l_f + built_in.l_p + built_in.l_oc)).abs() < 1e-12);

    let dir = tempfile::tempdir().unwrap();
    for (name, c) in [("P", &pair.p), ("Q", &pair.q)] {
        let fc = prepare(&pcad::pipeline::Sample { name: name.into(), cloud: c.clone() }, &cfg, None).unwrap();
        write_features(&dir.path().join(format!("{name}.local.csv")), &fc.local).unwrap();
        write_features(&dir.path().join(format!("{name}.point.csv")), &fc.point).unwrap();
        write_features(&dir.path().join(format!("{name}.patch.csv")), &fc.patch).unwrap();
    }
    let loaded = pair_loss(&pair, &cfg, Some(dir.path())).unwrap();
    assert!((loaded.total - built_in.total).abs() < 1e-9 * built_in.total.max(1.0), "{loaded:?} vs {built_in:?}");
}
