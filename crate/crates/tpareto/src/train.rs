//! Training loop: per-step gradient integration, Adam updates, early
//! stopping on validation accuracy, and streamable step reports.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrate::{
    compute_level_gradients, integrate_module_gradient, ConflictCase, LossLevel, TParetoConfig,
};
use crate::model::{HierFusionModel, ModalityEmbeddings};
use crate::optim::{Adam, OptimConfig};
use crate::tensor::{GroupId, ParameterGroup};

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

/// Loss values of one step. Truncated models leave the missing levels
/// unset; plain training only evaluates the all-modal loss.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct StepLosses {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l2: Option<f64>,
    pub all: f64,
}

/// Conflict summary of one module in one step.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModuleStepReport {
    pub module: String,
    pub case: ConflictCase,
    pub cosines: Vec<f64>,
    pub weights: Vec<f64>,
}

/// One training step, JSON-lines friendly.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepReport {
    pub step: usize,
    pub losses: StepLosses,
    #[serde(rename = "per-module")]
    pub modules: Vec<ModuleStepReport>,
}

/// Whether a step integrates level gradients or descends the all-modal
/// loss alone.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepStrategy {
    TPareto,
    Plain,
}

/// Runs one optimization step over `batch` and updates the model in place.
///
/// TPareto steps backward every level loss, integrate per module, and
/// update each fusion group with its integrated gradient; the head always
/// follows the all-modal gradient. Plain steps backward the all-modal loss
/// only and never touch the min-norm solver.
pub fn train_step(
    model: &mut HierFusionModel,
    batch: &[(ModalityEmbeddings, usize)],
    strategy: StepStrategy,
    tcfg: &TParetoConfig,
    adam: &mut Adam,
    step: usize,
) -> Result<StepReport> {
    match strategy {
        StepStrategy::Plain => {
            let max = model.max_level;
            let (value, grads) = model.level_loss_gradients(batch, max).map_err(|e| {
                Error::Divergence { step, detail: e.to_string() }
            })?;
            for level in model.fusion_levels() {
                let gid = level.group();
                adam.step(model.group_mut(gid), &grads[&gid]);
            }
            adam.step(model.group_mut(GroupId::ThetaCls), &grads[&GroupId::ThetaCls]);
            Ok(StepReport {
                step,
                losses: StepLosses { l1: None, l2: None, all: value },
                modules: Vec::new(),
            })
        }
        StepStrategy::TPareto => {
            let lg = compute_level_gradients(model, batch)
                .map_err(|e| Error::Divergence { step, detail: e.to_string() })?;
            let mut modules = Vec::with_capacity(lg.modules.len());
            let mut integrated = Vec::with_capacity(lg.modules.len());
            for (level, set) in &lg.modules {
                let ig = integrate_module_gradient(set, tcfg)?;
                modules.push(ModuleStepReport {
                    module: level.to_string(),
                    case: ig.case,
                    cosines: ig.report.iter().map(|r| r.cosine).collect(),
                    weights: ig.report.iter().map(|r| r.truncated_relative_weight).collect(),
                });
                integrated.push((*level, ig));
            }
            for (level, ig) in integrated {
                let gid = level.group();
                adam.step(model.group_mut(gid), &ig.values);
            }
            adam.step(model.group_mut(GroupId::ThetaCls), &lg.head);
            Ok(StepReport {
                step,
                losses: StepLosses {
                    l1: lg.loss_value(LossLevel::L1),
                    l2: lg.loss_value(LossLevel::L2),
                    all: lg.loss_value(LossLevel::All).expect("all-modal loss present"),
                },
                modules,
            })
        }
    }
}

/// Fitting controls. `shuffle_seed` fully determines batch order.
#[derive(Debug, Clone)]
pub struct TrainSettings {
    pub epochs: usize,
    pub patience: usize,
    pub strategy: StepStrategy,
    pub tpareto: TParetoConfig,
    pub optim: OptimConfig,
    pub shuffle_seed: u64,
}

/// Fit summary. The best-validation parameters are restored into the model
/// before returning.
#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
    pub steps_run: usize,
}

/// Fraction of samples whose top-level prediction matches the label.
pub fn top_level_accuracy(
    model: &HierFusionModel,
    data: &[(ModalityEmbeddings, usize)],
) -> Result<f64> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0usize;
    for (emb, label) in data {
        let preds = model.predict_levels(emb)?;
        if preds[model.max_level - 1] == *label {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

/// Trains with early stopping on validation accuracy. Every step report is
/// handed to `sink` as it is produced.
pub fn fit(
    model: &mut HierFusionModel,
    train: &[(ModalityEmbeddings, usize)],
    val: &[(ModalityEmbeddings, usize)],
    settings: &TrainSettings,
    mut sink: Option<&mut dyn FnMut(&StepReport)>,
) -> Result<FitOutcome> {
    assert!(!train.is_empty(), "empty training set");
    let mut adam = Adam::new(settings.optim.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(settings.shuffle_seed);
    let mut indices: Vec<usize> = (0..train.len()).collect();

    let mut best_val = f64::NEG_INFINITY;
    let mut best_epoch = 0;
    let mut best_params: Option<Vec<ParameterGroup>> = None;
    let mut stall = 0usize;
    let mut step = 0usize;
    let mut epochs_run = 0usize;

    for epoch in 0..settings.epochs {
        epochs_run = epoch + 1;
        indices.shuffle(&mut rng);
        for chunk in indices.chunks(settings.optim.batch_size.max(1)) {
            let batch: Vec<(ModalityEmbeddings, usize)> =
                chunk.iter().map(|&i| train[i].clone()).collect();
            let report =
                train_step(model, &batch, settings.strategy, &settings.tpareto, &mut adam, step)?;
            if let Some(s) = sink.as_deref_mut() {
                s(&report);
            }
            step += 1;
        }
        if !val.is_empty() {
            let acc = top_level_accuracy(model, val)?;
            if acc > best_val {
                best_val = acc;
                best_epoch = epoch;
                best_params = Some(model.groups().to_vec());
                stall = 0;
            } else {
                stall += 1;
                if stall >= settings.patience {
                    break;
                }
            }
        }
    }

    if let Some(params) = best_params {
        for p in params {
            let id = p.id;
            *model.group_mut(id) = p;
        }
    }
    Ok(FitOutcome {
        epochs_run,
        best_epoch,
        best_val_accuracy: if best_val.is_finite() { best_val } else { 0.0 },
        steps_run: step,
    })
}
