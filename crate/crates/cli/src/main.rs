mod commands;

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

/// Registration-based anomaly detection for 3D point clouds.
#[derive(Parser, Debug)]
#[command(name = "pcad", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Configuration sources shared by every subcommand that runs the pipeline.
#[derive(Args, Debug, Clone, Default)]
struct ConfigArgs {
    /// Flat `key = value` config file; defaults are used for missing keys.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set matching.alpha=0.5` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write rigidly transformed training pairs with ground-truth matches.
    GenPairs {
        /// Source clouds (.xyz or .ply); pair i uses input i mod N.
        #[arg(long = "input", required = true, num_args = 1..)]
        inputs: Vec<PathBuf>,
        #[arg(long, default_value_t = 1)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Largest rotation angle in radians.
        #[arg(long, default_value_t = std::f64::consts::PI)]
        max_angle: f64,
        /// Largest absolute translation per axis.
        #[arg(long, default_value_t = 1.0)]
        max_translation: f64,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Generate a labeled synthetic dataset (train/, test/, labels.csv).
    Synth {
        #[arg(long, default_value = "sphere-bumps")]
        shape: String,
        #[arg(long, default_value_t = 4000)]
        points: usize,
        #[arg(long, default_value_t = 4)]
        n_train: usize,
        #[arg(long, default_value_t = 20)]
        n_normal: usize,
        #[arg(long, default_value_t = 20)]
        n_anomalous: usize,
        #[arg(long, default_value_t = 0.05)]
        defect_fraction: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Fine-level size used to express defect magnitudes in voxels.
        #[arg(long, default_value_t = 2048)]
        target_fine: usize,
        /// Apply a random rigid motion to every test sample.
        #[arg(long)]
        rotate_test: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute built-in local, point and patch features for a cloud.
    Features {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Sample name used in the file names; defaults to the input stem.
        #[arg(long)]
        name: Option<String>,
        #[arg(long, default_value = "feat", value_parser = ["feat", "csv"])]
        format: String,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Estimate the rigid motion taking cloud P onto cloud Q.
    Register {
        p: PathBuf,
        q: PathBuf,
        /// Directory with `<stem>.local.feat|csv` files for both clouds.
        #[arg(long)]
        features_dir: Option<PathBuf>,
        /// Ground-truth motion (3x4 text) for RRE / RTE.
        #[arg(long)]
        gt: Option<PathBuf>,
        /// Where to write the estimated 3x4 transform.
        #[arg(long)]
        transform_out: Option<PathBuf>,
        /// Where to write the JSON report (stdout when absent).
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long)]
        n_c: Option<usize>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        sinkhorn_iters: Option<usize>,
        #[arg(long)]
        alpha: Option<f64>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Evaluate the training losses on a pair directory from gen-pairs.
    LossEval {
        pair: PathBuf,
        /// Directory with `P.*` / `Q.*` feature files.
        #[arg(long)]
        features_dir: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Build a memory bank from a directory of normal training clouds.
    BuildBank {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Copy of the template cloud; defaults to template.xyz next to the bank.
        #[arg(long)]
        template_out: Option<PathBuf>,
        #[arg(long)]
        features_dir: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Score one cloud against a bank and its template.
    Detect {
        #[arg(long)]
        cloud: PathBuf,
        #[arg(long)]
        bank: PathBuf,
        #[arg(long)]
        template: PathBuf,
        #[arg(long)]
        features_dir: Option<PathBuf>,
        /// JSON output (stdout when absent).
        #[arg(long)]
        out: Option<PathBuf>,
        /// PLY of the fine-level points colored by normalized score.
        #[arg(long)]
        ply: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Object- and point-level AUROC over detect outputs.
    Evaluate {
        /// Detection JSON files or directories containing them.
        #[arg(required = true, num_args = 1..)]
        detections: Vec<PathBuf>,
        /// `name,label` manifest; otherwise labels come from point labels.
        #[arg(long)]
        labels: Option<PathBuf>,
        /// ROC points as CSV (`level,fpr,tpr`).
        #[arg(long)]
        roc: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build the bank, detect every test sample and evaluate.
    Pipeline {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        features_dir: Option<PathBuf>,
        /// Worker threads; 0 uses every core.
        #[arg(long, default_value_t = 0)]
        jobs: usize,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Print the resolved configuration.
    Config {
        /// Print every key with its value (the default action).
        #[arg(long)]
        dump: bool,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
