//! Patient-level cross-validation: fold = case index mod k.

use crate::error::{Error, Result};
use crate::evalx::infer::{binarize, sliding_window_infer};
use crate::evalx::{CaseMetrics, MetricsReport};
use crate::net::PhnnParams;
use crate::phantom::PhantomCase;
use crate::pipeline::{assemble_stack, AugmentPolicy, ChannelLayout, Normalization, OarSource};
use crate::train::{train, TrainConfig, TrainOutcome};
use crate::voxgrid::VolumeGrid;

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub window: [usize; 3],
    pub stride: [usize; 3],
    pub threshold: f32,
    pub norm: Normalization,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            window: [64, 64, 16],
            stride: [32, 32, 8],
            threshold: 0.5,
            norm: Normalization::default(),
        }
    }
}

pub fn fold_of(case_index: usize, folds: usize) -> usize {
    case_index % folds
}

/// Probability map of a case under `layout`, with clean tumor masks and
/// organ masks from `oar`.
pub fn predict_case(
    case: &PhantomCase,
    params: &PhnnParams<f32>,
    layout: ChannelLayout,
    oar: OarSource,
    cfg: &EvalConfig,
) -> Result<VolumeGrid> {
    let stack = assemble_stack(case, layout, &AugmentPolicy::eval(oar), &cfg.norm, 0)?;
    sliding_window_infer(&stack, params, cfg.window, cfg.stride)
}

pub fn evaluate_case(
    case: &PhantomCase,
    params: &PhnnParams<f32>,
    layout: ChannelLayout,
    oar: OarSource,
    cfg: &EvalConfig,
) -> Result<CaseMetrics> {
    let prob = predict_case(case, params, layout, oar, cfg)?;
    CaseMetrics::score(&case.case_id, &binarize(&prob, cfg.threshold), &case.ctv_truth)
}

/// Result of one cross-validation run.
#[derive(Debug, Clone)]
pub struct CvOutcome {
    pub models: Vec<TrainOutcome>,
    /// One report per requested OAR source, rows in case order.
    pub reports: Vec<(OarSource, MetricsReport)>,
}

impl CvOutcome {
    pub fn report(&self, oar: OarSource) -> Option<&MetricsReport> {
        self.reports.iter().find(|(o, _)| *o == oar).map(|(_, r)| r)
    }
}

pub fn train_fold(cases: &[PhantomCase], fold: usize, folds: usize, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let train_set: Vec<&PhantomCase> = cases
        .iter()
        .enumerate()
        .filter(|(i, _)| fold_of(*i, folds) != fold)
        .map(|(_, c)| c)
        .collect();
    train(&train_set, cfg)
}

/// Evaluates every case with the model of its own fold.
pub fn evaluate_folds(
    cases: &[PhantomCase],
    models: &[PhnnParams<f32>],
    layout: ChannelLayout,
    oar: OarSource,
    cfg: &EvalConfig,
) -> Result<MetricsReport> {
    let folds = models.len();
    let rows = cases
        .iter()
        .enumerate()
        .map(|(i, c)| evaluate_case(c, &models[fold_of(i, folds)], layout, oar, cfg))
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricsReport::new(rows))
}

/// Trains one model per fold on the other folds and scores every held-out
/// case once per entry of `oar_sources`.
pub fn cross_validate(
    cases: &[PhantomCase],
    folds: usize,
    train_cfg: &TrainConfig,
    eval_cfg: &EvalConfig,
    oar_sources: &[OarSource],
) -> Result<CvOutcome> {
    if folds < 2 || cases.len() < folds {
        return Err(Error::Config(format!("{} cases cannot form {folds} folds", cases.len())));
    }
    let models = (0..folds)
        .map(|k| train_fold(cases, k, folds, train_cfg))
        .collect::<Result<Vec<_>>>()?;
    let params: Vec<PhnnParams<f32>> = models.iter().map(|m| m.params.clone()).collect();
    let reports = oar_sources
        .iter()
        .map(|&o| Ok((o, evaluate_folds(cases, &params, train_cfg.layout, o, eval_cfg)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(CvOutcome { models, reports })
}
