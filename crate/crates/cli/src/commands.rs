use crate::{Command, ConfigArgs};
use pcad::anomaly::detect;
use pcad::config::PipelineConfig;
use pcad::eval::{roc_curve, ScoredSet};
use pcad::features::write_features;
use pcad::geometry::{read_cloud, write_cloud, write_ply_colored, RigidTransform};
use pcad::memorybank::{build_bank, MemoryBank};
use pcad::pairs::{ground_truth_pair, pair_loss, read_pair_dir, write_pair_dir};
use pcad::pipeline::{
    evaluate_records, load_dir, prepare, read_manifest, run_pipeline, scored_sets, synth_dataset, write_dataset, DetectionRecord,
    Sample, SynthSpec, SCHEMA_VERSION,
};
use pcad::registration::register;
use pcad::{Error, Result};
use serde::Serialize;
use serde_json::json;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

pub const EXIT_BAD_INPUT: u8 = 2;
pub const EXIT_REGISTRATION: u8 = 3;
pub const EXIT_DEGENERATE: u8 = 4;

pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::RegistrationFailed(_) => EXIT_REGISTRATION,
        Error::DegenerateLabels => EXIT_DEGENERATE,
        _ => EXIT_BAD_INPUT,
    }
}

fn io_err(context: String, e: std::io::Error) -> Error {
    Error::Io { context, source: e }
}

fn load_config(args: &ConfigArgs) -> Result<PipelineConfig> {
    let mut cfg = match &args.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    cfg.apply_overrides(&args.overrides)?;
    Ok(cfg)
}

fn to_json(value: &impl Serialize) -> Result<String> {
    Ok(serde_json::to_string_pretty(value)? + "\n")
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent().filter(|p| !p.as_os_str().is_empty()) {
        Some(parent) => fs::create_dir_all(parent).map_err(|e| io_err(format!("creating {}", parent.display()), e)),
        None => Ok(()),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    ensure_parent(path)?;
    fs::write(path, text).map_err(|e| io_err(format!("writing {}", path.display()), e))
}

/// Writes JSON to `path`, or to stdout when `path` is `None`.
fn emit(path: Option<&Path>, value: &impl Serialize) -> Result<()> {
    let text = to_json(value)?;
    match path {
        Some(p) => write_text(p, &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn stem(path: &Path) -> String {
    path.file_stem().and_then(|s| s.to_str()).unwrap_or("cloud").to_string()
}

fn load_sample(path: &Path) -> Result<Sample> {
    Ok(Sample { name: stem(path), cloud: read_cloud(path)? })
}

pub fn run(command: Command) -> Result<ExitCode> {
    match command {
        Command::GenPairs { inputs, count, seed, max_angle, max_translation, out, cfg } => {
            let cfg = load_config(&cfg)?;
            gen_pairs(&inputs, count, seed, max_angle, max_translation, &out, &cfg)
        }
        Command::Synth { shape, points, n_train, n_normal, n_anomalous, defect_fraction, seed, target_fine, rotate_test, out } => {
            let spec = SynthSpec {
                shape: shape.parse()?,
                points,
                n_train,
                n_normal,
                n_anomalous,
                defect_fraction,
                seed,
                target_fine,
                rotate_test,
            };
            synth(&spec, &out)
        }
        Command::Features { input, out_dir, name, format, cfg } => features(&input, &out_dir, name, &format, &load_config(&cfg)?),
        Command::Register { p, q, features_dir, gt, transform_out, report, n_c, k, sinkhorn_iters, alpha, cfg } => {
            let mut cfg = load_config(&cfg)?;
            let m = &mut cfg.register.matching;
            m.n_c = n_c.unwrap_or(m.n_c);
            m.k = k.unwrap_or(m.k);
            m.sinkhorn_iters = sinkhorn_iters.unwrap_or(m.sinkhorn_iters);
            m.alpha = alpha.unwrap_or(m.alpha);
            cfg.validate()?;
            register_cmd(&p, &q, features_dir.as_deref(), gt.as_deref(), transform_out.as_deref(), report.as_deref(), &cfg)
        }
        Command::LossEval { pair, features_dir, cfg } => {
            let cfg = load_config(&cfg)?;
            let report = pair_loss(&read_pair_dir(&pair)?, &cfg, features_dir.as_deref())?;
            emit(None, &json!({"schema_version": SCHEMA_VERSION, "L_f": report.l_f, "L_p": report.l_p, "L_oc": report.l_oc, "L": report.total}))?;
            Ok(ExitCode::SUCCESS)
        }
        Command::BuildBank { train, out, template_out, features_dir, cfg } => {
            build_bank_cmd(&train, &out, template_out, features_dir.as_deref(), &load_config(&cfg)?)
        }
        Command::Detect { cloud, bank, template, features_dir, out, ply, cfg } => {
            detect_cmd(&cloud, &bank, &template, features_dir.as_deref(), out.as_deref(), ply.as_deref(), &load_config(&cfg)?)
        }
        Command::Evaluate { detections, labels, roc, out } => evaluate(&detections, labels.as_deref(), roc.as_deref(), out.as_deref()),
        Command::Pipeline { train, test, out, features_dir, jobs, cfg } => {
            pipeline(&train, &test, &out, features_dir.as_deref(), jobs, &load_config(&cfg)?)
        }
        Command::Config { dump: _, cfg } => {
            print!("{}", load_config(&cfg)?.to_text());
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn gen_pairs(inputs: &[PathBuf], count: usize, seed: u64, max_angle: f64, max_translation: f64, out: &Path, cfg: &PipelineConfig) -> Result<ExitCode> {
    if count == 0 {
        return Err(Error::InvalidArgument("count must be at least 1".into()));
    }
    if !(max_angle >= 0.0 && max_translation >= 0.0) {
        return Err(Error::InvalidArgument("max-angle and max-translation must be non-negative".into()));
    }
    let clouds = inputs.iter().map(|p| read_cloud(p)).collect::<Result<Vec<_>>>()?;
    let mut dirs = Vec::with_capacity(count);
    for i in 0..count {
        let pair = ground_truth_pair(&clouds[i % clouds.len()], cfg, seed.wrapping_add(i as u64), max_angle, max_translation)?;
        let dir = out.join(format!("pair_{i:03}"));
        write_pair_dir(&dir, &pair)?;
        dirs.push(json!({
            "dir": dir.display().to_string(),
            "patch_matches": pair.matches.patch_matches.len(),
            "point_matches": pair.matches.point_matches.iter().map(|s| s.pairs.len()).sum::<usize>(),
        }));
    }
    emit(None, &json!({"schema_version": SCHEMA_VERSION, "pairs": dirs}))?;
    Ok(ExitCode::SUCCESS)
}

fn synth(spec: &SynthSpec, out: &Path) -> Result<ExitCode> {
    let data = synth_dataset(spec)?;
    write_dataset(out, &data)?;
    emit(
        None,
        &json!({
            "schema_version": SCHEMA_VERSION,
            "train": data.train.len(),
            "test": data.test.len(),
            "fine_voxel": data.fine_voxel,
            "labels": out.join("labels.csv").display().to_string(),
        }),
    )?;
    Ok(ExitCode::SUCCESS)
}

fn features(input: &Path, out_dir: &Path, name: Option<String>, format: &str, cfg: &PipelineConfig) -> Result<ExitCode> {
    let mut sample = load_sample(input)?;
    if let Some(n) = name {
        sample.name = n;
    }
    let fc = prepare(&sample, cfg, None)?;
    fs::create_dir_all(out_dir).map_err(|e| io_err(format!("creating {}", out_dir.display()), e))?;
    let mut files = Vec::new();
    for m in [&fc.local, &fc.point, &fc.patch] {
        let path = out_dir.join(format!("{}.{}.{format}", sample.name, m.level.name()));
        write_features(&path, m)?;
        files.push(path.display().to_string());
    }
    emit(
        None,
        &json!({
            "schema_version": SCHEMA_VERSION,
            "name": sample.name,
            "fine_points": fc.ms.fine.len(),
            "patches": fc.ms.num_patches(),
            "dim": fc.local.dim,
            "files": files,
        }),
    )?;
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct RegisterOutput {
    schema_version: u32,
    rre_deg: Option<f64>,
    rte: Option<f64>,
    inliers: usize,
    inlier_ratio: f64,
    correspondences: usize,
    transform: [[f64; 4]; 3],
}

fn register_cmd(
    p: &Path,
    q: &Path,
    features_dir: Option<&Path>,
    gt: Option<&Path>,
    transform_out: Option<&Path>,
    report_out: Option<&Path>,
    cfg: &PipelineConfig,
) -> Result<ExitCode> {
    let fp = prepare(&load_sample(p)?, cfg, features_dir)?;
    let fq = prepare(&load_sample(q)?, cfg, features_dir)?;
    let mut report = register(&fp, &fq, &cfg.register)?;
    if let Some(gt) = gt {
        let text = fs::read_to_string(gt).map_err(|e| io_err(format!("reading {}", gt.display()), e))?;
        report = report.with_ground_truth(&RigidTransform::parse_text(&text)?);
    }
    if let Some(path) = transform_out {
        write_text(path, &report.transform.to_text())?;
    }
    let out = RegisterOutput {
        schema_version: SCHEMA_VERSION,
        rre_deg: report.rre_deg,
        rte: report.rte,
        inliers: report.inliers,
        inlier_ratio: report.inlier_ratio,
        correspondences: report.correspondences,
        transform: report.transform.to_rows(),
    };
    emit(report_out, &out)?;
    Ok(ExitCode::SUCCESS)
}

fn build_bank_cmd(train: &Path, out: &Path, template_out: Option<PathBuf>, features_dir: Option<&Path>, cfg: &PipelineConfig) -> Result<ExitCode> {
    let samples = load_dir(train)?;
    let prepared = samples.iter().map(|s| prepare(s, cfg, features_dir)).collect::<Result<Vec<_>>>()?;
    let (bank, reports) = build_bank(&prepared, &cfg.bank, &cfg.register)?;
    ensure_parent(out)?;
    bank.save(out)?;
    let template_path = template_out.unwrap_or_else(|| out.with_file_name("template.xyz"));
    let template = &samples[cfg.bank.template_index];
    ensure_parent(&template_path)?;
    write_cloud(&template_path, &template.cloud)?;
    let registrations: Vec<_> = samples
        .iter()
        .zip(&reports)
        .map(|(s, r)| json!({"name": s.name, "inliers": r.inliers, "inlier_ratio": r.inlier_ratio}))
        .collect();
    emit(
        None,
        &json!({
            "schema_version": SCHEMA_VERSION,
            "bank": out.display().to_string(),
            "template": template_path.display().to_string(),
            "template_name": template.name,
            "bank_size": bank.len(),
            "source_rows": bank.source_count,
            "fused_dim": bank.fused_dim(),
            "registrations": registrations,
        }),
    )?;
    Ok(ExitCode::SUCCESS)
}

fn detect_cmd(
    cloud: &Path,
    bank: &Path,
    template: &Path,
    features_dir: Option<&Path>,
    out: Option<&Path>,
    ply: Option<&Path>,
    cfg: &PipelineConfig,
) -> Result<ExitCode> {
    let bank = MemoryBank::load(bank)?;
    let sample = load_sample(cloud)?;
    let test = prepare(&sample, cfg, features_dir)?;
    let tmpl = prepare(&load_sample(template)?, cfg, features_dir)?;
    let result = detect(&test, &tmpl, &bank, &cfg.anomaly, &cfg.register)?;
    let record = DetectionRecord::new(&sample.name, &test, &result);
    if let Some(path) = ply {
        ensure_parent(path)?;
        write_ply_colored(path, &test.ms.fine, &record.point_scores)?;
    }
    emit(out, &record)?;
    Ok(ExitCode::SUCCESS)
}

fn collect_json_files(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for input in inputs {
        if input.is_dir() {
            let entries = fs::read_dir(input).map_err(|e| io_err(format!("listing {}", input.display()), e))?;
            let mut found: Vec<PathBuf> = entries
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "json"))
                .collect();
            found.sort();
            files.extend(found);
        } else {
            files.push(input.clone());
        }
    }
    if files.is_empty() {
        return Err(Error::InvalidArgument("no detection JSON files found".into()));
    }
    Ok(files)
}

fn read_record(path: &Path) -> Result<DetectionRecord> {
    let text = fs::read_to_string(path).map_err(|e| io_err(format!("reading {}", path.display()), e))?;
    let record: DetectionRecord = serde_json::from_str(&text)
        .map_err(|e| Error::InvalidArgument(format!("{}: not a detection record ({e})", path.display())))?;
    if record.schema_version != SCHEMA_VERSION {
        return Err(Error::InvalidArgument(format!("{}: unsupported schema_version {}", path.display(), record.schema_version)));
    }
    Ok(record)
}

fn roc_csv(objects: &ScoredSet, points: &ScoredSet) -> String {
    let mut out = String::from("level,fpr,tpr\n");
    for (level, set) in [("object", objects), ("point", points)] {
        if let Ok(curve) = roc_curve(set) {
            for (fpr, tpr) in curve {
                let _ = writeln!(out, "{level},{fpr:?},{tpr:?}");
            }
        }
    }
    out
}

fn metric(r: Result<f64>) -> (Option<f64>, Option<String>) {
    match r {
        Ok(v) => (Some(v), None),
        Err(e) => (None, Some(e.to_string())),
    }
}

fn evaluate(inputs: &[PathBuf], labels: Option<&Path>, roc: Option<&Path>, out: Option<&Path>) -> Result<ExitCode> {
    let records = collect_json_files(inputs)?.iter().map(|p| read_record(p)).collect::<Result<Vec<_>>>()?;
    let manifest = match labels {
        Some(p) => read_manifest(p)?,
        None => BTreeMap::new(),
    };
    let (objects, points) = scored_sets(&records, &manifest);
    let (o, p) = evaluate_records(&records, &manifest);
    let (o_auroc, o_err) = metric(o);
    let (p_auroc, p_err) = metric(p);
    if let Some(path) = roc {
        write_text(path, &roc_csv(&objects, &points))?;
    }
    let mut value = json!({
        "schema_version": SCHEMA_VERSION,
        "o_auroc": o_auroc,
        "p_auroc": p_auroc,
        "objects": objects.scores.len(),
        "points": points.scores.len(),
    });
    if let Some(e) = &o_err {
        value["o_auroc_error"] = json!(e);
    }
    if let Some(e) = &p_err {
        value["p_auroc_error"] = json!(e);
    }
    emit(out, &value)?;
    if o_err.is_some() || p_err.is_some() {
        eprintln!("error: degenerate labels");
        return Ok(ExitCode::from(EXIT_DEGENERATE));
    }
    Ok(ExitCode::SUCCESS)
}

fn pipeline(train: &Path, test: &Path, out: &Path, features_dir: Option<&Path>, jobs: usize, cfg: &PipelineConfig) -> Result<ExitCode> {
    let train = load_dir(train)?;
    let test = load_dir(test)?;
    let run = run_pipeline(&train, &test, cfg, features_dir, jobs)?;
    let det_dir = out.join("detections");
    fs::create_dir_all(&det_dir).map_err(|e| io_err(format!("creating {}", det_dir.display()), e))?;
    for (name, rec) in &run.records {
        match rec {
            Ok(r) => write_text(&det_dir.join(format!("{name}.json")), &to_json(r)?)?,
            Err(e) => eprintln!("warning: {name}: {e}"),
        }
    }
    run.bank.save(&out.join("bank.bin"))?;
    write_text(&out.join("config.txt"), &cfg.to_text())?;
    let metrics = run.metrics.to_json();
    write_text(&out.join("metrics.json"), &metrics)?;
    print!("{metrics}");
    if run.metrics.degenerate() {
        eprintln!("error: degenerate labels");
        return Ok(ExitCode::from(EXIT_DEGENERATE));
    }
    Ok(ExitCode::SUCCESS)
}
