//! Experiment orchestration: configuration, training runs over seed lists,
//! threshold sweeps, per-level ablations, and metrics/checkpoint emission.
//!
//! Every run is a pure function of (config, seed): the seed drives data
//! generation, parameter initialization, and batch order through fixed
//! derivations, so re-running a config reproduces its outputs byte for
//! byte. Runs across seeds and grid points execute in parallel; results
//! are sorted before emission so aggregation is order-independent.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrate::TParetoConfig;
use crate::metrics::{to_csv, to_jsonl, ConfusionMatrix, MetricsRow};
use crate::model::{FusionLevel, HierFusionModel, ModelConfig};
use crate::optim::OptimConfig;
use crate::par;
use crate::synth::{as_pairs, generate, split, GenConfig, SplitMode, SyntheticInstance};
use crate::tensor::ParameterGroup;
use crate::train::{fit, FitOutcome, StepReport, StepStrategy, TrainSettings};

pub const CONFIG_VERSION: u32 = 1;

/// Training method selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Full model, targeted Pareto integration.
    Tpareto,
    /// Full model, all-modal loss only.
    Plain,
    /// Stage-I-only model trained on its single loss.
    LevelOnly1,
    /// Stages I–II with integration over their two losses.
    LevelOnly2,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Tpareto => "tpareto",
            Method::Plain => "plain",
            Method::LevelOnly1 => "level-only-1",
            Method::LevelOnly2 => "level-only-2",
        }
    }

    fn max_level(&self) -> usize {
        match self {
            Method::Tpareto | Method::Plain => 3,
            Method::LevelOnly1 => 1,
            Method::LevelOnly2 => 2,
        }
    }

    fn strategy(&self) -> StepStrategy {
        match self {
            Method::Plain => StepStrategy::Plain,
            _ => StepStrategy::TPareto,
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Full experiment description; the JSON schema is this struct plus a
/// `version` field.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub gen: GenConfig,
    pub model: ModelConfig,
    pub tpareto: TParetoConfig,
    pub optim: OptimConfig,
    pub epochs: usize,
    /// Early-stopping patience on validation accuracy.
    pub patience: usize,
    pub seeds: Vec<u64>,
    pub method: Method,
    pub split_ratios: (f64, f64, f64),
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            gen: GenConfig::default(),
            model: ModelConfig::default(),
            tpareto: TParetoConfig::default(),
            optim: OptimConfig::default(),
            epochs: 30,
            patience: 5,
            seeds: vec![0],
            method: Method::Tpareto,
            split_ratios: (0.7, 0.15, 0.15),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::InvalidConfig(format!(
                "config version {} (supported: {CONFIG_VERSION})",
                self.version
            )));
        }
        self.gen.validate()?;
        self.model.validate()?;
        self.tpareto.validate()?;
        if self.gen.dim != self.model.d {
            return Err(Error::InvalidConfig(format!(
                "generator dim {} != model dim {}",
                self.gen.dim, self.model.d
            )));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be positive".into()));
        }
        if self.optim.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be positive".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::InvalidConfig("at least one seed required".into()));
        }
        Ok(())
    }

    pub fn from_json_str(json: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(json)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }
}

/// Splitmix64-style derivation of role-specific seeds from the run seed,
/// so data, init, and shuffle streams never collide.
fn derive_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

const SALT_INIT: u64 = 1;
const SALT_SHUFFLE: u64 = 2;

/// A trained model snapshot: config plus named flat parameter arrays per
/// group. JSON numbers round-trip f64 exactly, so checkpoints restore bit
/// for bit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub model: ModelConfig,
    pub max_level: usize,
    pub groups: Vec<ParameterGroup>,
}

impl Checkpoint {
    pub fn of(model: &HierFusionModel) -> Self {
        Self {
            version: CONFIG_VERSION,
            model: model.config.clone(),
            max_level: model.max_level,
            groups: model.groups().to_vec(),
        }
    }

    pub fn into_model(self) -> Result<HierFusionModel> {
        HierFusionModel::from_groups(self.model, self.max_level, self.groups)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string(self)?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// Everything one (config, seed) training run produces.
pub struct RunResult {
    pub seed: u64,
    pub rows: Vec<MetricsRow>,
    pub checkpoint: Checkpoint,
    pub fit: FitOutcome,
    pub steps: Vec<StepReport>,
}

/// Evaluates a trained model on a test set, one row per built level.
fn evaluate(
    model: &HierFusionModel,
    test: &[SyntheticInstance],
    seed: u64,
    method_name: &str,
) -> Result<Vec<MetricsRow>> {
    let mut truth = Vec::with_capacity(test.len());
    let mut preds: Vec<Vec<usize>> = vec![Vec::with_capacity(test.len()); model.max_level];
    for inst in test {
        let p = model.predict_levels(&inst.embeddings)?;
        for (level, &pl) in p.iter().enumerate() {
            preds[level].push(pl);
        }
        truth.push(inst.label);
    }
    Ok((1..=model.max_level)
        .map(|level| {
            let cm = ConfusionMatrix::from_predictions(&truth, &preds[level - 1]);
            MetricsRow::from_confusion(
                seed,
                method_name,
                FusionLevel::from_index(level).unwrap(),
                cm,
            )
        })
        .collect())
}

/// One full training run: generate, split, fit, evaluate each level on the
/// test split.
fn run_one(
    cfg: &ExperimentConfig,
    seed: u64,
    max_level: usize,
    strategy: StepStrategy,
    method_name: &str,
    collect_steps: bool,
) -> Result<RunResult> {
    let gen_cfg = GenConfig { seed, ..cfg.gen.clone() };
    let data = generate(&gen_cfg)?;
    let sets = split(&data, cfg.split_ratios, SplitMode::Ordered)?;
    let mut model =
        HierFusionModel::new(cfg.model.clone(), max_level, derive_seed(seed, SALT_INIT))?;
    let settings = TrainSettings {
        epochs: cfg.epochs,
        patience: cfg.patience,
        strategy,
        tpareto: cfg.tpareto.clone(),
        optim: cfg.optim.clone(),
        shuffle_seed: derive_seed(seed, SALT_SHUFFLE),
    };
    let mut steps = Vec::new();
    let fit_outcome = {
        let mut sink = |r: &StepReport| {
            if collect_steps {
                steps.push(r.clone());
            }
        };
        fit(
            &mut model,
            &as_pairs(&sets.train),
            &as_pairs(&sets.val),
            &settings,
            Some(&mut sink),
        )?
    };
    let rows = evaluate(&model, &sets.test, seed, method_name)?;
    Ok(RunResult { seed, rows, checkpoint: Checkpoint::of(&model), fit: fit_outcome, steps })
}

/// Trains `cfg.method` once per seed (in parallel) and collects per-level
/// test metrics plus checkpoints.
pub fn run_train(cfg: &ExperimentConfig, collect_steps: bool) -> Result<Vec<RunResult>> {
    cfg.validate()?;
    let method = cfg.method;
    let mut results = par::try_map(cfg.seeds.clone(), |seed| {
        run_one(
            cfg,
            seed,
            method.max_level(),
            method.strategy(),
            method.as_str(),
            collect_steps,
        )
    })?;
    results.sort_by_key(|r| r.seed);
    Ok(results)
}

/// Which threshold a sweep walks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepParameter {
    Gamma,
    K,
}

impl SweepParameter {
    pub fn default_grid(&self) -> Vec<f64> {
        match self {
            SweepParameter::Gamma => vec![-0.25, 0.0, 0.25, 0.5],
            SweepParameter::K => vec![0.5, 1.0, 1.5, 2.0],
        }
    }
}

impl std::fmt::Display for SweepParameter {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SweepParameter::Gamma => "gamma",
            SweepParameter::K => "k",
        })
    }
}

/// Level × grid-value accuracy table (mean and standard deviation over
/// seeds), plus the raw rows.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepTable {
    pub parameter: SweepParameter,
    pub grid: Vec<f64>,
    pub levels: Vec<FusionLevel>,
    /// `mean_acc[level_index][grid_index]`
    pub mean_acc: Vec<Vec<f64>>,
    /// Population standard deviation over seeds, same shape.
    pub std_acc: Vec<Vec<f64>>,
}

impl SweepTable {
    /// Pivot CSV of mean accuracies: one row per fusion level, one column
    /// per grid value.
    pub fn to_csv(&self) -> String {
        Self::pivot(&self.grid, &self.levels, &self.mean_acc)
    }

    /// Same shape as [`to_csv`], holding the per-cell standard deviation
    /// over seeds.
    ///
    /// [`to_csv`]: SweepTable::to_csv
    pub fn std_csv(&self) -> String {
        Self::pivot(&self.grid, &self.levels, &self.std_acc)
    }

    fn pivot(grid: &[f64], levels: &[FusionLevel], cells: &[Vec<f64>]) -> String {
        let mut out = String::from("level");
        for v in grid {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
        for (i, level) in levels.iter().enumerate() {
            out.push_str(&level.to_string());
            for value in &cells[i] {
                out.push_str(&format!(",{value:.4}"));
            }
            out.push('\n');
        }
        out
    }
}

pub struct SweepOutput {
    pub rows: Vec<MetricsRow>,
    pub table: SweepTable,
}

/// One `run_train` per grid value per seed; accuracies are averaged over
/// seeds into a level × grid table.
pub fn run_sweep(
    cfg: &ExperimentConfig,
    parameter: SweepParameter,
    grid: &[f64],
) -> Result<SweepOutput> {
    cfg.validate()?;
    if grid.is_empty() {
        return Err(Error::InvalidConfig("sweep grid is empty".into()));
    }
    let jobs: Vec<(usize, f64)> = grid.iter().copied().enumerate().collect();
    let per_value = par::try_map(jobs, |(gi, value)| {
        let mut sub = cfg.clone();
        match parameter {
            SweepParameter::Gamma => sub.tpareto.gamma = value,
            SweepParameter::K => sub.tpareto.k = value,
        }
        sub.validate()?;
        let results = run_train(&sub, false)?;
        Ok::<(usize, Vec<RunResult>), Error>((gi, results))
    })?;

    let method = cfg.method;
    let levels: Vec<FusionLevel> =
        (1..=method.max_level()).map(|i| FusionLevel::from_index(i).unwrap()).collect();
    let mut mean_acc = vec![vec![0.0; grid.len()]; levels.len()];
    let mut std_acc = vec![vec![0.0; grid.len()]; levels.len()];
    let mut rows = Vec::new();
    for (gi, results) in per_value {
        for (li, level) in levels.iter().enumerate() {
            let accs: Vec<f64> = results
                .iter()
                .flat_map(|r| r.rows.iter())
                .filter(|row| row.level == *level)
                .map(|row| row.acc)
                .collect();
            if !accs.is_empty() {
                let mean = accs.iter().sum::<f64>() / accs.len() as f64;
                let var =
                    accs.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / accs.len() as f64;
                mean_acc[li][gi] = mean;
                std_acc[li][gi] = var.sqrt();
            }
        }
        for r in results {
            let value = grid[gi];
            for mut row in r.rows {
                row.method = format!("{}={}", parameter, value);
                rows.push(row);
            }
        }
    }
    rows.sort_by(|a, b| (a.seed, &a.method, a.level).cmp(&(b.seed, &b.method, b.level)));
    Ok(SweepOutput {
        rows,
        table: SweepTable { parameter, grid: grid.to_vec(), levels, mean_acc, std_acc },
    })
}

/// Per-level ablation: for each fusion level, train the model truncated at
/// that level both plainly and with integration; each run is evaluated at
/// its own top level. Six rows per seed.
pub fn run_ablation(cfg: &ExperimentConfig) -> Result<Vec<MetricsRow>> {
    cfg.validate()?;
    let mut jobs = Vec::new();
    for &seed in &cfg.seeds {
        for level in 1..=3usize {
            for pareto in [false, true] {
                jobs.push((seed, level, pareto));
            }
        }
    }
    let results = par::try_map(jobs, |(seed, level, pareto)| {
        let strategy = if pareto { StepStrategy::TPareto } else { StepStrategy::Plain };
        let name = if pareto { "tpareto" } else { "plain" };
        let run = run_one(cfg, seed, level, strategy, name, false)?;
        // keep only the top-level row: the ablation compares each truncated
        // model at the level it was trained for
        let top = FusionLevel::from_index(level).unwrap();
        Ok::<Vec<MetricsRow>, Error>(
            run.rows.into_iter().filter(|r| r.level == top).collect(),
        )
    })?;
    let mut rows: Vec<MetricsRow> = results.into_iter().flatten().collect();
    rows.sort_by(|a, b| (a.seed, &a.method, a.level).cmp(&(b.seed, &b.method, b.level)));
    Ok(rows)
}

/// Writes the CSV at `path` and the JSON-lines variant alongside it.
pub fn emit_metrics(rows: &[MetricsRow], path: &Path) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::InvalidConfig("no metrics rows to emit".into()));
    }
    std::fs::write(path, to_csv(rows))?;
    std::fs::write(path.with_extension("jsonl"), to_jsonl(rows))?;
    Ok(())
}
