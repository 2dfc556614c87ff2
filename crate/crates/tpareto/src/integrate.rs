//! Targeted Pareto gradient integration.
//!
//! Per training step each fusion module j collects the gradients of every
//! level loss that reaches its parameters (module I: levels 1, 2, all;
//! module II: 2, all; module III: all only). The all-modal gradient is
//! prioritized: non-all-modal gradients participate only if their cosine
//! against it exceeds the angle threshold, their min-norm simplex weights
//! are re-expressed relative to the all-modal weight (which is pinned to 1),
//! and the summed non-all-modal relative weight is truncated to the weight
//! threshold. A module with a single loss falls back to the plain gradient.

use std::collections::BTreeMap;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{FusionLevel, HierFusionModel, ModalityEmbeddings};
use crate::pareto::{frank_wolfe_minnorm, ParetoProblem, ParetoWeights, SolverConfig};
use crate::tensor::{GradientVector, GroupId};

/// Which level loss a gradient came from. The top level of a model is
/// always the all-modal loss, so a level-2-truncated model labels its
/// second loss `All`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossLevel {
    L1,
    L2,
    All,
}

impl std::fmt::Display for LossLevel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LossLevel::L1 => "l1",
            LossLevel::L2 => "l2",
            LossLevel::All => "all",
        })
    }
}

/// One level loss value.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LevelLoss {
    pub level: LossLevel,
    pub value: f64,
}

impl LevelLoss {
    fn checked(level: LossLevel, value: f64) -> Result<Self> {
        if !value.is_finite() || value < 0.0 {
            return Err(Error::NonFinite(format!("{level} loss = {value}")));
        }
        Ok(Self { level, value })
    }
}

/// The level gradients of one fusion module, all-modal last.
#[derive(Debug, Clone)]
pub struct ModuleGradientSet {
    pub module: FusionLevel,
    pub gradients: Vec<GradientVector>,
    pub levels: Vec<LossLevel>,
    pub all_modal_index: usize,
}

impl ModuleGradientSet {
    pub fn task_count(&self) -> usize {
        self.gradients.len()
    }

    pub fn all_modal(&self) -> &GradientVector {
        &self.gradients[self.all_modal_index]
    }

    pub fn validate(&self) -> Result<()> {
        if self.gradients.is_empty() || self.gradients.len() != self.levels.len() {
            return Err(Error::InvalidConfig("malformed module gradient set".into()));
        }
        if self.all_modal_index != self.gradients.len() - 1
            || self.levels[self.all_modal_index] != LossLevel::All
        {
            return Err(Error::InvalidConfig("all-modal gradient must be present and last".into()));
        }
        let dim = self.gradients[0].dim();
        for g in &self.gradients {
            if g.dim() != dim {
                return Err(Error::DimMismatch(dim, g.dim()));
            }
        }
        Ok(())
    }
}

/// Whether angle filtering happens before or after the min-norm solve.
/// Filtering first keeps simplex mass off gradients that will be dropped;
/// the alternative solves over the full set and then drops.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PipelineOrder {
    #[default]
    FilterThenSolve,
    SolveThenFilter,
}

/// Integration thresholds.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TParetoConfig {
    /// Angle cosine threshold: a non-all-modal gradient participates only
    /// if its cosine against the all-modal gradient exceeds this. Values
    /// above 1 disable integration entirely (no cosine can pass).
    pub gamma: f64,
    /// Cap on the summed relative weights of non-all-modal gradients.
    pub k: f64,
    /// Floor on the all-modal simplex weight before division, bounding the
    /// relative weights when the solver drives it to zero.
    pub epsilon_alpha: f64,
    pub order: PipelineOrder,
    pub solver: SolverConfig,
}

impl Default for TParetoConfig {
    fn default() -> Self {
        Self {
            gamma: 0.25,
            k: 1.0,
            epsilon_alpha: 1e-3,
            order: PipelineOrder::default(),
            solver: SolverConfig::default(),
        }
    }
}

impl TParetoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(-1.0..=2.0).contains(&self.gamma) {
            return Err(Error::InvalidConfig(format!(
                "gamma {} outside [-1, 2] (values > 1 disable integration)",
                self.gamma
            )));
        }
        if self.k.is_nan() || self.k <= 0.0 {
            return Err(Error::InvalidConfig(format!("k must be positive, got {}", self.k)));
        }
        if self.epsilon_alpha.is_nan() || self.epsilon_alpha <= 0.0 {
            return Err(Error::InvalidConfig("epsilon_alpha must be positive".into()));
        }
        Ok(())
    }
}

/// Per-non-all-modal-gradient record of one integration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConflictReport {
    pub level: LossLevel,
    /// cos of the angle against the all-modal gradient (0 for a zero
    /// gradient).
    pub cosine: f64,
    pub included: bool,
    pub raw_relative_weight: f64,
    pub truncated_relative_weight: f64,
}

/// Which of the conflict rules fired during one integration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConflictCase {
    NonConflict,
    AngleConflict,
    WeightConflict,
    Both,
}

impl ConflictCase {
    fn from_flags(angle: bool, weight: bool) -> Self {
        match (angle, weight) {
            (false, false) => ConflictCase::NonConflict,
            (true, false) => ConflictCase::AngleConflict,
            (false, true) => ConflictCase::WeightConflict,
            (true, true) => ConflictCase::Both,
        }
    }
}

/// The integrated gradient of one module plus its conflict report.
#[derive(Debug, Clone)]
pub struct IntegratedGradient {
    pub module: FusionLevel,
    pub values: GradientVector,
    pub report: Vec<ConflictReport>,
    pub case: ConflictCase,
}

/// Cosine test of a non-all-modal gradient against the all-modal gradient.
/// A zero `g_i` is excluded with its cosine defined as 0 regardless of the
/// threshold; a zero `g_all` signals a dead module and is an error for the
/// caller to absorb.
pub fn angle_filter(
    g_all: &GradientVector,
    g_i: &GradientVector,
    gamma: f64,
) -> Result<(bool, f64)> {
    if g_all.dim() != g_i.dim() {
        return Err(Error::DimMismatch(g_all.dim(), g_i.dim()));
    }
    let na = g_all.norm();
    if na == 0.0 {
        return Err(Error::ZeroAllModalGradient("angle filter".into()));
    }
    let ni = g_i.norm();
    if ni == 0.0 {
        return Ok((false, 0.0));
    }
    let cosine = g_all.dot(g_i) / (na * ni);
    Ok((cosine > gamma, cosine))
}

/// Simplex weights re-expressed relative to the all-modal weight:
/// `αⁱ / max(α^All, ε)`, with the all-modal entry pinned to exactly 1.
pub fn relative_weights(
    alpha: &ParetoWeights,
    all_modal_index: usize,
    epsilon_alpha: f64,
) -> Vec<f64> {
    let denom = alpha.alpha[all_modal_index].max(epsilon_alpha);
    alpha
        .alpha
        .iter()
        .enumerate()
        .map(|(i, a)| if i == all_modal_index { 1.0 } else { a / denom })
        .collect()
}

/// Scales the non-all-modal entries so their sum does not exceed `k`,
/// preserving their proportions. The all-modal entry stays 1. Returns the
/// truncated weights and whether truncation fired.
pub fn weight_truncate(relative: &[f64], all_modal_index: usize, k: f64) -> (Vec<f64>, bool) {
    assert_eq!(relative[all_modal_index], 1.0, "all-modal relative weight must be 1");
    let sum: f64 = relative
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != all_modal_index)
        .map(|(_, w)| *w)
        .sum();
    if sum <= k {
        return (relative.to_vec(), false);
    }
    let scale = k / sum;
    let out = relative
        .iter()
        .enumerate()
        .map(|(i, w)| if i == all_modal_index { 1.0 } else { w * scale })
        .collect();
    (out, true)
}

/// Runs the integration pipeline for one module: angle-filter, min-norm
/// solve, relative weighting, weight truncation, weighted combination.
///
/// A single-loss module returns its all-modal gradient unchanged, and so
/// does any call where every non-all-modal gradient is filtered out.
pub fn integrate_module_gradient(
    set: &ModuleGradientSet,
    cfg: &TParetoConfig,
) -> Result<IntegratedGradient> {
    set.validate()?;
    cfg.validate()?;
    let g_all = set.all_modal();

    if set.task_count() == 1 {
        return Ok(IntegratedGradient {
            module: set.module,
            values: g_all.clone(),
            report: Vec::new(),
            case: ConflictCase::NonConflict,
        });
    }

    let non_all: Vec<usize> =
        (0..set.task_count()).filter(|i| *i != set.all_modal_index).collect();

    if g_all.is_zero() {
        warn!("module {} has a zero all-modal gradient; passing it through", set.module);
        let report = non_all
            .iter()
            .map(|&i| ConflictReport {
                level: set.levels[i],
                cosine: 0.0,
                included: false,
                raw_relative_weight: 0.0,
                truncated_relative_weight: 0.0,
            })
            .collect();
        return Ok(IntegratedGradient {
            module: set.module,
            values: g_all.clone(),
            report,
            case: ConflictCase::AngleConflict,
        });
    }

    // The solver runs its full iteration budget here (tol 0 ≙ stop only at
    // an exactly-zero gap). A gap-threshold stop can fire one iteration
    // earlier or later when the inputs are rescaled, which jitters the
    // weights by the last step size; a fixed budget pins the integrated
    // gradient to ulp-level reproducibility instead.
    let solver = SolverConfig { max_iter: cfg.solver.max_iter.max(200), tol: 0.0 };

    let mut cosines = Vec::with_capacity(non_all.len());
    let mut included = Vec::with_capacity(non_all.len());
    for &i in &non_all {
        let (inc, cos) = angle_filter(g_all, &set.gradients[i], cfg.gamma)?;
        cosines.push(cos);
        included.push(inc);
    }
    let survivors: Vec<usize> = non_all
        .iter()
        .zip(&included)
        .filter(|(_, inc)| **inc)
        .map(|(i, _)| *i)
        .collect();
    let angle_fired = survivors.len() < non_all.len();

    // raw/truncated relative weight per original gradient index
    let mut raw = vec![0.0; set.task_count()];
    let mut truncated = vec![0.0; set.task_count()];
    let mut weight_fired = false;

    if !survivors.is_empty() {
        match cfg.order {
            PipelineOrder::FilterThenSolve => {
                let mut subset: Vec<GradientVector> =
                    survivors.iter().map(|&i| set.gradients[i].clone()).collect();
                subset.push(g_all.clone());
                let problem = ParetoProblem::new(subset)?;
                let alpha = frank_wolfe_minnorm(&problem, &solver)?;
                let all_idx = survivors.len();
                let rel = relative_weights(&alpha, all_idx, cfg.epsilon_alpha);
                let (trunc, fired) = weight_truncate(&rel, all_idx, cfg.k);
                weight_fired = fired;
                for (pos, &i) in survivors.iter().enumerate() {
                    raw[i] = rel[pos];
                    truncated[i] = trunc[pos];
                }
            }
            PipelineOrder::SolveThenFilter => {
                let problem = ParetoProblem::new(set.gradients.clone())?;
                let alpha = frank_wolfe_minnorm(&problem, &solver)?;
                let rel = relative_weights(&alpha, set.all_modal_index, cfg.epsilon_alpha);
                for &i in &non_all {
                    raw[i] = rel[i];
                }
                // drop excluded gradients, then truncate the survivors
                let mut kept = vec![0.0; set.task_count()];
                kept[set.all_modal_index] = 1.0;
                for &i in &survivors {
                    kept[i] = rel[i];
                }
                let (trunc, fired) = weight_truncate(&kept, set.all_modal_index, cfg.k);
                weight_fired = fired;
                for &i in &survivors {
                    truncated[i] = trunc[i];
                }
            }
        }
    }

    // g_all enters with weight exactly 1; an empty survivor set therefore
    // reproduces the all-modal gradient bit for bit.
    let mut values = g_all.clone();
    for &i in &survivors {
        values.add_scaled(&set.gradients[i], truncated[i]);
    }
    if !values.values.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite(format!("integrated gradient of module {}", set.module)));
    }

    let report: Vec<ConflictReport> = non_all
        .iter()
        .enumerate()
        .map(|(pos, &i)| ConflictReport {
            level: set.levels[i],
            cosine: cosines[pos],
            included: included[pos],
            raw_relative_weight: raw[i],
            truncated_relative_weight: truncated[i],
        })
        .collect();

    Ok(IntegratedGradient {
        module: set.module,
        values,
        report,
        case: ConflictCase::from_flags(angle_fired, weight_fired),
    })
}

/// Level gradients of a whole step: losses, per-module gradient sets, and
/// the head gradient (taken from the all-modal loss only).
pub struct LevelGradients {
    pub losses: Vec<LevelLoss>,
    pub modules: BTreeMap<FusionLevel, ModuleGradientSet>,
    pub head: GradientVector,
}

impl LevelGradients {
    pub fn loss_value(&self, level: LossLevel) -> Option<f64> {
        self.losses.iter().find(|l| l.level == level).map(|l| l.value)
    }
}

fn loss_label(level: usize, max_level: usize) -> LossLevel {
    if level == max_level {
        LossLevel::All
    } else if level == 1 {
        LossLevel::L1
    } else {
        LossLevel::L2
    }
}

/// One backward pass per level loss; module j collects the gradients of
/// levels `j ..= max`, all-modal last.
pub fn compute_level_gradients(
    model: &HierFusionModel,
    batch: &[(ModalityEmbeddings, usize)],
) -> Result<LevelGradients> {
    let max = model.max_level;
    let mut losses = Vec::with_capacity(max);
    let mut per_level = Vec::with_capacity(max);
    for level in 1..=max {
        let (value, grads) = model.level_loss_gradients(batch, level)?;
        losses.push(LevelLoss::checked(loss_label(level, max), value)?);
        per_level.push(grads);
    }

    let mut modules = BTreeMap::new();
    for j in 1..=max {
        let fl = FusionLevel::from_index(j).expect("level in range");
        let gid = fl.group();
        let gradients: Vec<GradientVector> =
            (j..=max).map(|level| per_level[level - 1][&gid].clone()).collect();
        let levels: Vec<LossLevel> = (j..=max).map(|level| loss_label(level, max)).collect();
        let all_modal_index = gradients.len() - 1;
        let set = ModuleGradientSet { module: fl, gradients, levels, all_modal_index };
        set.validate()?;
        modules.insert(fl, set);
    }

    let head = per_level[max - 1][&GroupId::ThetaCls].clone();
    Ok(LevelGradients { losses, modules, head })
}
