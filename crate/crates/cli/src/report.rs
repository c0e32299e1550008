//! The JSON documents the tool emits.

use heavyrush::diagnostics::{OutlierReport, ParameterSummary, PosteriorSummary, Waic};
use heavyrush::fit::{ChainStats, RHAT_THRESHOLD};
use heavyrush::model::{ModelSpec, ModelVariant};
use heavyrush::sampler::ChainConfig;
use serde::{Deserialize, Serialize};

use crate::config::FitConfig;
use crate::ingest::CovariateScaling;

/// Bumped whenever a field of [`FitReport`] changes meaning or shape.
pub const FIT_REPORT_SCHEMA_VERSION: u32 = 1;

/// The schema shipped with the tool, for `FitReport` documents.
pub const FIT_REPORT_SCHEMA: &str = include_str!("../schema/fit_report.schema.json");

/// One row of the posterior summary. `rhat` is null with a single chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterRow {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub q975: f64,
    pub rhat: Option<f64>,
    pub ess: f64,
}

impl From<&ParameterSummary> for ParameterRow {
    fn from(p: &ParameterSummary) -> Self {
        ParameterRow {
            name: p.name.clone(),
            mean: p.mean,
            sd: p.sd,
            q025: p.q025,
            q975: p.q975,
            rhat: (!p.rhat.is_nan()).then_some(p.rhat),
            ess: p.ess,
        }
    }
}

pub fn parameter_rows(summary: &PosteriorSummary) -> Vec<ParameterRow> {
    summary.parameters.iter().map(ParameterRow::from).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Convergence {
    pub converged: bool,
    pub max_rhat: Option<f64>,
    pub rhat_threshold: f64,
}

impl Convergence {
    pub fn from_rows(rows: &[ParameterRow]) -> Self {
        let max_rhat = rows.iter().filter_map(|r| r.rhat).reduce(f64::max);
        Convergence {
            converged: max_rhat.is_none_or(|r| r <= RHAT_THRESHOLD),
            max_rhat,
            rhat_threshold: RHAT_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSummary {
    pub n_areas: usize,
    pub n_times: usize,
    pub covariates: Vec<String>,
    /// Standardization constants, one per covariate when scaling was on.
    pub scaling: Vec<CovariateScaling>,
}

/// Everything `heavyrush fit` learned about one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub schema_version: u32,
    pub model: ModelVariant,
    pub notation: String,
    pub seed: u64,
    pub data: DataSummary,
    pub model_spec: ModelSpec,
    pub sampler: ChainConfig,
    pub convergence: Convergence,
    pub waic: Waic,
    /// Mean squared error of the fitted counts over all cells.
    pub mse: f64,
    pub chains: Vec<ChainStats>,
    pub parameters: Vec<ParameterRow>,
    pub outliers: Option<OutlierReport>,
    pub config: FitConfig,
}

/// Output of `heavyrush diagnose`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnoseReport {
    pub schema_version: u32,
    pub chains: usize,
    pub draws_per_chain: Vec<usize>,
    pub convergence: Convergence,
    pub waic: Option<Waic>,
    pub parameters: Vec<ParameterRow>,
    pub outliers: Option<OutlierReport>,
}
