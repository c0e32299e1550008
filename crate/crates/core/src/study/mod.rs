//! Multi-replicate simulation studies: generate, fit every model, score.
//!
//! Replicates run in parallel on the rayon pool; each produces one row per
//! model, and the rows are folded in replicate order so the report does not
//! depend on scheduling.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{compute_mse, score_detection, Confusion, DetectionScore};
use crate::error::{Error, Result};
use crate::fit::fit;
use crate::graph::SpatialGraph;
use crate::model::{Dataset, ModelSpec, ModelVariant};
use crate::rng::SeedTree;
use crate::sampler::ChainConfig;
use crate::simulate::{offset_category, SimulatedDataset, SimulationScenario};

#[cfg(test)]
mod tests;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "status", content = "detail")]
pub enum FitStatus {
    Converged,
    /// Some `R̂` exceeded the threshold; the row is kept but left out of the
    /// aggregates.
    NotConverged,
    /// The fit raised an error.
    Failed(String),
}

/// Scores of one model on one replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub replicate: usize,
    pub model: ModelVariant,
    #[serde(flatten)]
    pub status: FitStatus,
    pub max_rhat: Option<f64>,
    pub divergences: Option<usize>,
    pub waic: Option<f64>,
    pub p_w: Option<f64>,
    /// Over cells of contaminated areas; absent without contamination.
    pub mse_contaminated: Option<f64>,
    /// Over cells of clean areas; absent when every area is contaminated.
    pub mse_clean: Option<f64>,
    pub mse_overall: Option<f64>,
    /// Flagged areas and their score; only for models with `κ`.
    pub flagged: Option<Vec<usize>>,
    pub detection: Option<DetectionScore>,
}

impl StudyRow {
    fn failed(replicate: usize, model: ModelVariant, err: &Error) -> Self {
        StudyRow {
            replicate,
            model,
            status: FitStatus::Failed(err.to_string()),
            max_rhat: None,
            divergences: None,
            waic: None,
            p_w: None,
            mse_contaminated: None,
            mse_clean: None,
            mse_overall: None,
            flagged: None,
            detection: None,
        }
    }

    pub fn converged(&self) -> bool {
        self.status == FitStatus::Converged
    }
}

/// Means over the converged replicates of one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelAggregate {
    pub model: ModelVariant,
    pub converged: usize,
    pub not_converged: usize,
    pub failed: usize,
    pub waic: Option<f64>,
    pub p_w: Option<f64>,
    pub mse_contaminated: Option<f64>,
    pub mse_clean: Option<f64>,
    pub mse_overall: Option<f64>,
    /// Mean of per-replicate sensitivities and specificities.
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    /// Confusion counts pooled over converged replicates.
    pub pooled_detection: Option<DetectionScore>,
}

/// How often each area was flagged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AreaDetection {
    pub area: usize,
    pub offset: f64,
    pub category: String,
    pub contaminated: bool,
    /// Percentage of converged fits flagging the area, per `κ` model.
    pub frequency: BTreeMap<ModelVariant, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub scenario: SimulationScenario,
    pub models: Vec<ModelVariant>,
    pub chain_config: ChainConfig,
    /// Ordered by replicate, then by position in `models`.
    pub rows: Vec<StudyRow>,
    pub aggregates: Vec<ModelAggregate>,
    pub areas: Vec<AreaDetection>,
}

impl StudyReport {
    pub fn rows_for(&self, model: ModelVariant) -> impl Iterator<Item = &StudyRow> {
        self.rows.iter().filter(move |r| r.model == model)
    }

    pub fn aggregate(&self, model: ModelVariant) -> Option<&ModelAggregate> {
        self.aggregates.iter().find(|a| a.model == model)
    }
}

/// Chain settings for replicate `r`: the same settings with the seed moved to
/// the replicate's own stream.
pub fn replicate_config(cfg: &ChainConfig, r: usize) -> ChainConfig {
    ChainConfig {
        seed: SeedTree::new(cfg.seed).child("replicate", r as u64).seed(),
        ..cfg.clone()
    }
}

/// Scores one fitted model against one simulated replicate.
pub fn score_replicate(
    sim: &SimulatedDataset,
    graph: &SpatialGraph,
    model: ModelVariant,
    cfg: &ChainConfig,
) -> StudyRow {
    match try_score(sim, graph, model, cfg) {
        Ok(row) => row,
        Err(e) => StudyRow::failed(sim.replicate, model, &e),
    }
}

fn try_score(
    sim: &SimulatedDataset,
    graph: &SpatialGraph,
    model: ModelVariant,
    cfg: &ChainConfig,
) -> Result<StudyRow> {
    let data = Dataset::without_covariates(sim.counts.clone(), sim.offsets.clone())?;
    let result = fit(&data, graph, ModelSpec::new(model), cfg)?;
    let truth = sim.truth_flags();
    let observed: Vec<f64> = sim.counts.as_slice().iter().map(|&y| y as f64).collect();
    let clean: Vec<bool> = truth.iter().map(|t| !t).collect();
    let subset = |mask: &[bool]| -> Result<Option<f64>> {
        if mask.iter().any(|&m| m) {
            compute_mse(&result.fitted, &observed, mask).map(Some)
        } else {
            Ok(None)
        }
    };
    let (flagged, detection) = match &result.outliers {
        Some(report) => {
            let categories: Vec<&str> = sim.offsets.iter().map(|&e| offset_category(e).label()).collect();
            let score = score_detection(&report.flags(), &truth, &categories)?;
            (Some(report.flagged_areas()), Some(score))
        }
        None => (None, None),
    };
    Ok(StudyRow {
        replicate: sim.replicate,
        model,
        status: if result.converged() {
            FitStatus::Converged
        } else {
            FitStatus::NotConverged
        },
        max_rhat: Some(result.max_rhat()),
        divergences: Some(result.divergences()),
        waic: Some(result.waic.waic),
        p_w: Some(result.waic.p_w),
        mse_contaminated: if sim.contamination.is_some() { subset(&truth)? } else { None },
        mse_clean: subset(&clean)?,
        mse_overall: subset(&vec![true; truth.len()])?,
        flagged,
        detection,
    })
}

/// Generates every replicate of `scenario`, fits each model to each and
/// aggregates the scores.
///
/// Fit errors and non-converged fits are recorded in their rows and left out
/// of the aggregates.
pub fn run_study(scenario: &SimulationScenario, models: &[ModelVariant], cfg: &ChainConfig) -> Result<StudyReport> {
    if models.is_empty() {
        return Err(Error::InvalidScenario("a study needs at least one model".into()));
    }
    let graph = scenario.validate()?;
    cfg.validate()?;
    let per_replicate: Vec<Result<Vec<StudyRow>>> = (0..scenario.replicates)
        .into_par_iter()
        .map(|r| {
            let sim = scenario.replicate(r)?;
            let rep_cfg = replicate_config(cfg, r);
            Ok(models
                .iter()
                .map(|&m| score_replicate(&sim, &graph, m, &rep_cfg))
                .collect())
        })
        .collect();
    let mut rows = Vec::with_capacity(scenario.replicates * models.len());
    for rep in per_replicate {
        rows.extend(rep?);
    }
    let offsets = scenario.offsets()?;
    let truth = scenario
        .contamination
        .as_ref()
        .map_or_else(|| vec![false; offsets.len()], |c| {
            let mut t = vec![false; offsets.len()];
            c.targets.iter().for_each(|&j| t[j] = true);
            t
        });
    let aggregates = models.iter().map(|&m| aggregate(m, &rows)).collect();
    let areas = area_detection(models, &rows, &offsets, &truth);
    Ok(StudyReport {
        scenario: scenario.clone(),
        models: models.to_vec(),
        chain_config: cfg.clone(),
        rows,
        aggregates,
        areas,
    })
}

fn mean_of<'a>(values: impl Iterator<Item = Option<f64>> + 'a) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn aggregate(model: ModelVariant, rows: &[StudyRow]) -> ModelAggregate {
    let mine: Vec<&StudyRow> = rows.iter().filter(|r| r.model == model).collect();
    let ok: Vec<&StudyRow> = mine.iter().copied().filter(|r| r.converged()).collect();
    let count = |pred: fn(&FitStatus) -> bool| mine.iter().filter(|r| pred(&r.status)).count();
    let pooled_detection = ok
        .iter()
        .filter_map(|r| r.detection.as_ref())
        .fold(None::<(Confusion, BTreeMap<String, Confusion>)>, |acc, d| {
            let (mut all, mut cats) = acc.unwrap_or_default();
            all.merge(&d.overall);
            for (k, c) in &d.by_category {
                cats.entry(k.clone()).or_default().merge(c);
            }
            Some((all, cats))
        })
        .map(|(all, cats)| DetectionScore::from_confusions(all, cats));
    ModelAggregate {
        model,
        converged: ok.len(),
        not_converged: count(|s| *s == FitStatus::NotConverged),
        failed: count(|s| matches!(s, FitStatus::Failed(_))),
        waic: mean_of(ok.iter().map(|r| r.waic)),
        p_w: mean_of(ok.iter().map(|r| r.p_w)),
        mse_contaminated: mean_of(ok.iter().map(|r| r.mse_contaminated)),
        mse_clean: mean_of(ok.iter().map(|r| r.mse_clean)),
        mse_overall: mean_of(ok.iter().map(|r| r.mse_overall)),
        sensitivity: mean_of(ok.iter().map(|r| r.detection.as_ref().and_then(|d| d.sensitivity))),
        specificity: mean_of(ok.iter().map(|r| r.detection.as_ref().and_then(|d| d.specificity))),
        pooled_detection,
    }
}

fn area_detection(models: &[ModelVariant], rows: &[StudyRow], offsets: &[f64], truth: &[bool]) -> Vec<AreaDetection> {
    let kappa_models: Vec<ModelVariant> = models
        .iter()
        .copied()
        .filter(|m| ModelSpec::new(*m).has_kappa())
        .collect();
    (0..offsets.len())
        .map(|area| {
            let frequency = kappa_models
                .iter()
                .filter_map(|&m| {
                    let fits: Vec<&Vec<usize>> = rows
                        .iter()
                        .filter(|r| r.model == m && r.converged())
                        .filter_map(|r| r.flagged.as_ref())
                        .collect();
                    (!fits.is_empty()).then(|| {
                        let hits = fits.iter().filter(|f| f.contains(&area)).count();
                        (m, 100.0 * hits as f64 / fits.len() as f64)
                    })
                })
                .collect();
            AreaDetection {
                area,
                offset: offsets[area],
                category: offset_category(offsets[area]).label().to_string(),
                contaminated: truth[area],
                frequency,
            }
        })
        .collect()
}
