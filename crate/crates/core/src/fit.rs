//! One model fitted to one dataset: sampling plus every derived quantity.

use serde::{Deserialize, Serialize};

use crate::diagnostics::{
    compute_waic, detect_outliers, summarize, OutlierReport, PosteriorSummary, Waic,
};
use crate::error::{Error, Result};
use crate::graph::SpatialGraph;
use crate::model::{Dataset, ModelSpec, ModelVariant, Posterior};
use crate::sampler::{run_chains, ChainConfig, ChainOutput};

/// R̂ above this marks a fit as not converged.
pub const RHAT_THRESHOLD: f64 = 1.1;

/// Per-chain sampler statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainStats {
    pub chain: usize,
    pub step_size: f64,
    pub mean_acceptance: f64,
    pub divergences: usize,
    pub warmup_divergences: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub variant: ModelVariant,
    pub parameter_names: Vec<String>,
    /// Natural-scale draws as `draws[chain][draw][parameter]`.
    pub draws: Vec<Vec<Vec<f64>>>,
    pub summary: PosteriorSummary,
    pub waic: Waic,
    /// Posterior mean of `E_i μ_it`, time-major, averaged draw by draw.
    pub fitted: Vec<f64>,
    /// Per-cell log-likelihood as `[draw][cell]`, draws pooled in chain order.
    pub pointwise_loglik: Vec<Vec<f64>>,
    /// Present for models with `κ`.
    pub outliers: Option<OutlierReport>,
    pub chain_stats: Vec<ChainStats>,
}

impl FitResult {
    pub fn max_rhat(&self) -> f64 {
        self.summary.max_rhat()
    }

    /// Every parameter has `R̂ <= 1.1`.
    pub fn converged(&self) -> bool {
        self.summary
            .parameters
            .iter()
            .all(|p| p.rhat.is_nan() || p.rhat <= RHAT_THRESHOLD)
    }

    pub fn divergences(&self) -> usize {
        self.chain_stats.iter().map(|c| c.divergences).sum()
    }

    /// Pooled draws of the named scalar.
    pub fn pooled(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.parameter_names.iter().position(|p| p == name)?;
        Some(self.draws.iter().flatten().map(|d| d[k]).collect())
    }

    /// Pooled `κ` draws as an `S x n` matrix; empty rows without `κ`.
    pub fn kappa_draws(&self) -> Vec<Vec<f64>> {
        let idx: Vec<usize> = self
            .parameter_names
            .iter()
            .enumerate()
            .filter_map(|(k, p)| p.starts_with("kappa[").then_some(k))
            .collect();
        self.draws
            .iter()
            .flatten()
            .map(|d| idx.iter().map(|&k| d[k]).collect())
            .collect()
    }
}

/// Runs the sampler and derives summary, WAIC, fitted means and outliers.
pub fn fit(data: &Dataset, graph: &SpatialGraph, spec: ModelSpec, cfg: &ChainConfig) -> Result<FitResult> {
    let post = Posterior::new(data, graph, spec)?;
    let chains = run_chains(&post, cfg, &[])?;
    fit_from_chains(&post, &chains)
}

/// Derived quantities from finished chains.
pub fn fit_from_chains(post: &Posterior<'_>, chains: &[ChainOutput]) -> Result<FitResult> {
    let layout = *post.layout();
    let cells = layout.n * layout.t;
    let mut draws = Vec::with_capacity(chains.len());
    let mut loglik = Vec::new();
    let mut fitted = vec![0.0; cells];
    let mut count = 0usize;
    for chain in chains {
        let mut natural = Vec::with_capacity(chain.draws.len());
        for u in &chain.draws {
            let state = layout.constrain(u)?;
            natural.push(layout.natural_values(&state));
            loglik.push(post.pointwise_log_likelihood(&state));
            for (f, m) in fitted.iter_mut().zip(post.expected_counts(&state)) {
                *f += m;
            }
            count += 1;
        }
        draws.push(natural);
    }
    if count == 0 {
        return Err(Error::InsufficientDraws("no retained draws".into()));
    }
    fitted.iter_mut().for_each(|f| *f /= count as f64);
    let parameter_names = layout.parameter_names();
    let summary = summarize(&parameter_names, &draws)?;
    let waic = compute_waic(&loglik)?;
    let mut result = FitResult {
        variant: post.spec().variant(),
        parameter_names,
        draws,
        summary,
        waic,
        fitted,
        pointwise_loglik: loglik,
        outliers: None,
        chain_stats: chains
            .iter()
            .map(|c| ChainStats {
                chain: c.chain,
                step_size: c.step_size,
                mean_acceptance: c.mean_acceptance(),
                divergences: c.divergences,
                warmup_divergences: c.warmup_divergences,
            })
            .collect(),
    };
    if post.spec().has_kappa() {
        result.outliers = Some(detect_outliers(&result.kappa_draws())?);
    }
    Ok(result)
}
