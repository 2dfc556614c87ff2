//! Command-line front end: train, sweep, ablate, generate data, and solve
//! standalone min-norm problems. Failures print a machine-readable error
//! JSON to stderr and exit nonzero.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use tpareto::harness::{
    emit_metrics, run_ablation, run_sweep, run_train, ExperimentConfig, SweepParameter,
};
use tpareto::metrics::to_csv;
use tpareto::pareto::{frank_wolfe_minnorm, minnorm_oracle, ParetoProblem, SolverConfig};
use tpareto::synth::{generate, save_dataset};
use tpareto::tensor::{GradientVector, GroupId};

#[derive(Parser)]
#[command(
    name = "tpareto",
    about = "Hierarchical multimodal fusion with targeted Pareto gradient integration",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonOpts {
    /// Experiment config JSON; defaults apply for missing fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config's seed list with a single seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for metrics, checkpoints, and reports.
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    /// Worker threads (0 = all cores). Runs are deterministic regardless.
    #[arg(long, default_value_t = 0)]
    threads: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Train per seed and write per-level test metrics plus checkpoints.
    Train {
        #[command(flatten)]
        common: CommonOpts,
        /// Also write per-step JSON-lines reports, one file per seed.
        #[arg(long)]
        step_report: bool,
    },
    /// Sweep the angle threshold or the weight threshold over a grid.
    Sweep {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long, value_enum)]
        param: SweepParamArg,
        /// Comma-separated grid values; defaults to the standard grid.
        #[arg(long, value_delimiter = ',')]
        grid: Option<Vec<f64>>,
    },
    /// Per-level ablation: each truncation trained plainly and with
    /// integration.
    Ablate {
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Generate a dataset file (JSON header line + one instance per line).
    GenData {
        #[command(flatten)]
        common: CommonOpts,
        /// Output file path.
        #[arg(long, default_value = "dataset.jsonl")]
        out: PathBuf,
    },
    /// Solve one min-norm problem from a JSON file of gradient vectors.
    SolveMinnorm {
        /// JSON file: {"gradients": [[...], [...], ...]}.
        #[arg(long)]
        input: PathBuf,
        /// Cross-check against the simplex-grid oracle with this step.
        #[arg(long)]
        grid_check: Option<f64>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SweepParamArg {
    Gamma,
    K,
}

impl From<SweepParamArg> for SweepParameter {
    fn from(p: SweepParamArg) -> Self {
        match p {
            SweepParamArg::Gamma => SweepParameter::Gamma,
            SweepParamArg::K => SweepParameter::K,
        }
    }
}

fn load_config(common: &CommonOpts) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::from_json_file(path)
            .with_context(|| format!("loading config {}", path.display()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seeds = vec![seed];
    }
    cfg.validate()?;
    Ok(cfg)
}

fn init_threads(threads: usize) -> Result<()> {
    #[cfg(feature = "parallel")]
    if threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .context("building thread pool")?;
    }
    #[cfg(not(feature = "parallel"))]
    let _ = threads;
    Ok(())
}

fn ensure_out_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn cmd_train(common: &CommonOpts, step_report: bool) -> Result<()> {
    let cfg = load_config(common)?;
    ensure_out_dir(&common.out_dir)?;
    let results = run_train(&cfg, step_report)?;
    let rows: Vec<_> = results.iter().flat_map(|r| r.rows.clone()).collect();
    let metrics_path = common.out_dir.join("metrics.csv");
    emit_metrics(&rows, &metrics_path)?;
    for r in &results {
        r.checkpoint.save(&common.out_dir.join(format!("checkpoint-seed{}.json", r.seed)))?;
        if step_report {
            let mut body = String::new();
            for s in &r.steps {
                body.push_str(&serde_json::to_string(s)?);
                body.push('\n');
            }
            std::fs::write(common.out_dir.join(format!("steps-seed{}.jsonl", r.seed)), body)?;
        }
        eprintln!(
            "seed {}: {} epochs, best val acc {:.4}",
            r.seed, r.fit.epochs_run, r.fit.best_val_accuracy
        );
    }
    print!("{}", to_csv(&rows));
    eprintln!("wrote {}", metrics_path.display());
    Ok(())
}

fn cmd_sweep(common: &CommonOpts, param: SweepParameter, grid: Option<Vec<f64>>) -> Result<()> {
    let cfg = load_config(common)?;
    ensure_out_dir(&common.out_dir)?;
    let grid = grid.unwrap_or_else(|| param.default_grid());
    let out = run_sweep(&cfg, param, &grid)?;
    emit_metrics(&out.rows, &common.out_dir.join(format!("sweep-{param}.csv")))?;
    let table_path = common.out_dir.join(format!("sweep-{param}-table.csv"));
    std::fs::write(&table_path, out.table.to_csv())?;
    std::fs::write(
        common.out_dir.join(format!("sweep-{param}-std.csv")),
        out.table.std_csv(),
    )?;
    print!("{}", out.table.to_csv());
    eprintln!("std over seeds:\n{}", out.table.std_csv());
    eprintln!("wrote {}", table_path.display());
    Ok(())
}

fn cmd_ablate(common: &CommonOpts) -> Result<()> {
    let cfg = load_config(common)?;
    ensure_out_dir(&common.out_dir)?;
    let rows = run_ablation(&cfg)?;
    let path = common.out_dir.join("ablation.csv");
    emit_metrics(&rows, &path)?;
    print!("{}", to_csv(&rows));
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn cmd_gen_data(common: &CommonOpts, out: &Path) -> Result<()> {
    let cfg = load_config(common)?;
    let mut gen_cfg = cfg.gen.clone();
    if let Some(seed) = common.seed {
        gen_cfg.seed = seed;
    }
    let data = generate(&gen_cfg)?;
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    save_dataset(out, &gen_cfg, &data)?;
    eprintln!("wrote {} samples to {}", data.len(), out.display());
    Ok(())
}

#[derive(serde::Deserialize)]
struct MinnormInput {
    gradients: Vec<Vec<f64>>,
}

fn cmd_solve_minnorm(input: &Path, grid_check: Option<f64>) -> Result<()> {
    let raw =
        std::fs::read_to_string(input).with_context(|| format!("reading {}", input.display()))?;
    let parsed: MinnormInput = serde_json::from_str(&raw).context("parsing gradient JSON")?;
    let gradients: Vec<GradientVector> = parsed
        .gradients
        .into_iter()
        .map(|values| GradientVector { group: GroupId::Theta1, values })
        .collect();
    let problem = ParetoProblem::new(gradients)?;
    let weights = frank_wolfe_minnorm(&problem, &SolverConfig::default())?;
    let value = problem.combined_norm_sq(&weights.alpha);
    let mut report = serde_json::json!({
        "weights": weights.alpha,
        "min_norm_sq": value,
    });
    if let Some(step) = grid_check {
        let oracle = minnorm_oracle(&problem, step)?;
        report["oracle_weights"] = serde_json::json!(oracle.alpha);
        report["oracle_min_norm_sq"] = serde_json::json!(problem.combined_norm_sq(&oracle.alpha));
    }
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn main() {
    env_logger::init();
    let cli = Cli::parse();
    let result = (|| -> Result<()> {
        match &cli.command {
            Command::Train { common, step_report } => {
                init_threads(common.threads)?;
                cmd_train(common, *step_report)
            }
            Command::Sweep { common, param, grid } => {
                init_threads(common.threads)?;
                cmd_sweep(common, (*param).into(), grid.clone())
            }
            Command::Ablate { common } => {
                init_threads(common.threads)?;
                cmd_ablate(common)
            }
            Command::GenData { common, out } => {
                init_threads(common.threads)?;
                cmd_gen_data(common, out)
            }
            Command::SolveMinnorm { input, grid_check } => cmd_solve_minnorm(input, *grid_check),
        }
    })();
    if let Err(err) = result {
        let payload = serde_json::json!({
            "error": {
                "message": format!("{err:#}"),
            }
        });
        eprintln!("{payload}");
        std::process::exit(1);
    }
}
