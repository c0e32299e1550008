//! Convergence diagnostics, model comparison and outlier scoring.
//!
//! Everything here is a pure function of draw matrices. Chains are passed as
//! `&[Vec<f64>]`, one inner vector per chain, all of equal length.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};


fn check_chains(chains: &[Vec<f64>], min_chains: usize) -> Result<usize> {
    if chains.len() < min_chains {
        return Err(Error::InsufficientDraws(format!(
            "need at least {min_chains} chains, got {}",
            chains.len()
        )));
    }
    let n = chains[0].len();
    if chains.iter().any(|c| c.len() != n) {
        return Err(Error::DimensionMismatch("chains of unequal length".into()));
    }
    if n < 4 {
        return Err(Error::InsufficientDraws(format!(
            "need at least 4 draws per chain, got {n}"
        )));
    }
    Ok(n)
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Sample variance with an `n - 1` denominator.
fn sample_variance(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() as f64 - 1.0)
}

/// Classic potential scale reduction on already-split chains.
fn basic_rhat(chains: &[Vec<f64>]) -> f64 {
    let m = chains.len() as f64;
    let n = chains[0].len() as f64;
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let w = chains.iter().map(|c| sample_variance(c)).sum::<f64>() / m;
    let b = n * sample_variance(&means);
    if w == 0.0 {
        return if b == 0.0 { 1.0 } else { f64::INFINITY };
    }
    let var_plus = (n - 1.0) / n * w + b / n;
    (var_plus / w).sqrt()
}

/// Halves every chain, dropping the middle draw of odd-length chains.
fn split(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = chains[0].len();
    let half = n / 2;
    chains
        .iter()
        .flat_map(|c| [c[..half].to_vec(), c[n - half..].to_vec()])
        .collect()
}

/// Replaces every value by the normal score of its pooled rank, with ties
/// sharing their average rank.
fn rank_normalize(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = chains[0].len();
    let total = chains.len() * n;
    let mut order: Vec<(f64, usize)> = chains
        .iter()
        .flatten()
        .copied()
        .enumerate()
        .map(|(k, v)| (v, k))
        .collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0));
    let normal = Normal::standard();
    let mut z = vec![0.0; total];
    let mut i = 0;
    while i < total {
        let mut j = i;
        while j + 1 < total && order[j + 1].0 == order[i].0 {
            j += 1;
        }
        // Ranks are 1-based; the tied block i..=j shares the mean rank.
        let rank = (i + j) as f64 / 2.0 + 1.0;
        let score = normal.inverse_cdf((rank - 0.375) / (total as f64 + 0.25));
        for item in &order[i..=j] {
            z[item.1] = score;
        }
        i = j + 1;
    }
    z.chunks(n).map(<[f64]>::to_vec).collect()
}

fn median(x: &[f64]) -> f64 {
    let mut s = x.to_vec();
    s.sort_by(f64::total_cmp);
    quantile_sorted(&s, 0.5)
}

/// Split-R̂: the largest of the classic split statistic and the
/// rank-normalized bulk and folded statistics.
///
/// Rank normalization bounds the statistic for completely separated chains
/// (about 1.66 for two chains), so the classic value is kept alongside it to
/// report gross disagreement at its true size. Draws that are all identical
/// report 1.0.
pub fn split_rhat(chains: &[Vec<f64>]) -> Result<f64> {
    check_chains(chains, 2)?;
    let first = chains[0][0];
    if chains.iter().flatten().all(|&v| v == first) {
        return Ok(1.0);
    }
    let halves = split(chains);
    let bulk = basic_rhat(&rank_normalize(&halves));
    let pooled: Vec<f64> = halves.iter().flatten().copied().collect();
    let med = median(&pooled);
    let folded: Vec<Vec<f64>> = halves
        .iter()
        .map(|c| c.iter().map(|v| (v - med).abs()).collect())
        .collect();
    let tail = basic_rhat(&rank_normalize(&folded));
    Ok(basic_rhat(&halves).max(bulk).max(tail))
}

/// Biased autocovariance at `lag`.
fn autocovariance(x: &[f64], m: f64, lag: usize) -> f64 {
    let n = x.len();
    x[..n - lag]
        .iter()
        .zip(&x[lag..])
        .map(|(a, b)| (a - m) * (b - m))
        .sum::<f64>()
        / n as f64
}

/// Multi-chain effective sample size from autocorrelations summed in
/// consecutive pairs, truncated at the first non-positive pair and forced to
/// be monotone. Clipped to `[1, N]`. A single chain is accepted.
pub fn effective_sample_size(chains: &[Vec<f64>]) -> Result<f64> {
    let n = check_chains(chains, 1)?;
    let m = chains.len();
    let total = (n * m) as f64;
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let acov0: Vec<f64> = chains
        .iter()
        .zip(&means)
        .map(|(c, &mu)| autocovariance(c, mu, 0))
        .collect();
    let nf = n as f64;
    let mean_var = mean(&acov0) * nf / (nf - 1.0);
    let mut var_plus = mean_var * (nf - 1.0) / nf;
    if m > 1 {
        var_plus += sample_variance(&means);
    }
    if !(var_plus > 0.0) {
        return Ok(1.0);
    }
    let rho = |lag: usize| {
        let acov = chains
            .iter()
            .zip(&means)
            .map(|(c, &mu)| autocovariance(c, mu, lag))
            .sum::<f64>()
            / m as f64;
        1.0 - (mean_var - acov) / var_plus
    };
    let mut tau = 0.0;
    let mut prev_pair = f64::INFINITY;
    let mut lag = 0;
    while lag + 1 < n {
        let mut pair = if lag == 0 { 1.0 } else { rho(lag) } + rho(lag + 1);
        if pair <= 0.0 {
            break;
        }
        pair = pair.min(prev_pair);
        tau += pair;
        prev_pair = pair;
        lag += 2;
    }
    let tau = (2.0 * tau - 1.0).max(1.0 / total);
    Ok((total / tau).clamp(1.0, total))
}

/// WAIC on the deviance scale with its parts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Waic {
    pub waic: f64,
    /// Effective number of parameters: summed per-cell variance of the
    /// log-density.
    pub p_w: f64,
    /// Log pointwise predictive density.
    pub lppd: f64,
}

/// WAIC from an `S x cells` matrix of pointwise log-densities.
///
/// ```
/// use heavyrush::diagnostics::compute_waic;
///
/// let draws = vec![vec![0.2f64.ln()], vec![0.4f64.ln()]];
/// let w = compute_waic(&draws).unwrap();
/// assert!((w.lppd - 0.3f64.ln()).abs() < 1e-12);
/// ```
pub fn compute_waic(loglik: &[Vec<f64>]) -> Result<Waic> {
    let s = loglik.len();
    if s < 2 {
        return Err(Error::InsufficientDraws(format!(
            "WAIC needs at least 2 draws, got {s}"
        )));
    }
    let cells = loglik[0].len();
    if loglik.iter().any(|row| row.len() != cells) {
        return Err(Error::DimensionMismatch("ragged log-likelihood matrix".into()));
    }
    let mut lppd = 0.0;
    let mut p_w = 0.0;
    let mut column = vec![0.0; s];
    for k in 0..cells {
        for (c, row) in column.iter_mut().zip(loglik) {
            *c = row[k];
        }
        if let Some(bad) = column.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "non-finite log-density {bad} in cell {k}"
            )));
        }
        let max = column.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum_exp: f64 = column.iter().map(|v| (v - max).exp()).sum();
        lppd += max + (sum_exp / s as f64).ln();
        p_w += sample_variance(&column);
    }
    Ok(Waic {
        waic: -2.0 * (lppd - p_w),
        p_w,
        lppd,
    })
}

/// Mean squared error over the cells of the areas selected by `mask`.
///
/// `fitted` and `observed` are time-major `n x T` panels flattened, so cell
/// `(i, t)` sits at `t * n + i`.
pub fn compute_mse(fitted: &[f64], observed: &[f64], mask: &[bool]) -> Result<f64> {
    let n = mask.len();
    if fitted.len() != observed.len() || n == 0 || !fitted.len().is_multiple_of(n) {
        return Err(Error::DimensionMismatch(format!(
            "{} fitted and {} observed cells for {n} areas",
            fitted.len(),
            observed.len()
        )));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for (k, (f, o)) in fitted.iter().zip(observed).enumerate() {
        if mask[k % n] {
            sum += (f - o).powi(2);
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::EmptyMask);
    }
    Ok(sum / count as f64)
}

/// Type-7 quantile of already sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Type-7 quantile (linear interpolation between order statistics).
pub fn quantile(draws: &[f64], p: f64) -> Result<f64> {
    if draws.is_empty() {
        return Err(Error::InsufficientDraws("quantile of no draws".into()));
    }
    let mut s = draws.to_vec();
    s.sort_by(f64::total_cmp);
    Ok(quantile_sorted(&s, p.clamp(0.0, 1.0)))
}

/// Equal-tailed interval at `level`, e.g. `0.95` for the 2.5% and 97.5%
/// quantiles. Needs at least `2 / (1 - level)` draws so that each tail holds
/// at least one draw.
///
/// ```
/// use heavyrush::diagnostics::credible_interval;
///
/// let draws: Vec<f64> = (1..=100).map(f64::from).collect();
/// let (lo, hi) = credible_interval(&draws, 0.95).unwrap();
/// assert!((lo - 3.475).abs() < 1e-12 && (hi - 97.525).abs() < 1e-12);
/// ```
pub fn credible_interval(draws: &[f64], level: f64) -> Result<(f64, f64)> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidConfig(format!("level {level} not in (0, 1)")));
    }
    let need = (2.0 / (1.0 - level) - 1e-9).ceil() as usize;
    if draws.len() < need {
        return Err(Error::InsufficientDraws(format!(
            "{} draws for a {level} interval, need {need}",
            draws.len()
        )));
    }
    let mut s = draws.to_vec();
    s.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    Ok((quantile_sorted(&s, tail), quantile_sorted(&s, 1.0 - tail)))
}

/// Summary of one scalar parameter across all chains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub q975: f64,
    pub rhat: f64,
    pub ess: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub parameters: Vec<ParameterSummary>,
}

impl PosteriorSummary {
    pub fn get(&self, name: &str) -> Option<&ParameterSummary> {
        self.parameters.iter().find(|p| p.name == name)
    }

    pub fn max_rhat(&self) -> f64 {
        self.parameters.iter().map(|p| p.rhat).fold(1.0, f64::max)
    }
}

/// Summarizes one scalar given per-chain draws.
pub fn summarize_scalar(name: &str, chains: &[Vec<f64>]) -> Result<ParameterSummary> {
    check_chains(chains, 1)?;
    let pooled: Vec<f64> = chains.iter().flatten().copied().collect();
    let mut sorted = pooled.clone();
    sorted.sort_by(f64::total_cmp);
    let rhat = if chains.len() >= 2 {
        split_rhat(chains)?
    } else {
        f64::NAN
    };
    Ok(ParameterSummary {
        name: name.to_string(),
        mean: mean(&pooled),
        sd: sample_variance(&pooled).sqrt(),
        q025: quantile_sorted(&sorted, 0.025),
        q975: quantile_sorted(&sorted, 0.975),
        rhat,
        ess: effective_sample_size(chains)?,
    })
}

/// Summarizes draws laid out as `chains[c][s][k]`: chain, draw, parameter.
pub fn summarize(names: &[String], chains: &[Vec<Vec<f64>>]) -> Result<PosteriorSummary> {
    if chains.iter().flatten().any(|d| d.len() != names.len()) {
        return Err(Error::DimensionMismatch(format!(
            "draws do not match the {} parameter names",
            names.len()
        )));
    }
    let parameters = names
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let per_chain: Vec<Vec<f64>> = chains
                .iter()
                .map(|c| c.iter().map(|d| d[k]).collect())
                .collect();
            summarize_scalar(name, &per_chain)
        })
        .collect::<Result<_>>()?;
    Ok(PosteriorSummary { parameters })
}

/// Per-area κ verdict.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AreaOutlier {
    pub kappa_mean: f64,
    /// 97.5% posterior quantile of κ.
    pub kappa_upper: f64,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct OutlierReport {
    pub areas: Vec<AreaOutlier>,
}

impl OutlierReport {
    pub fn flags(&self) -> Vec<bool> {
        self.areas.iter().map(|a| a.flagged).collect()
    }

    pub fn flagged_areas(&self) -> Vec<usize> {
        self.areas
            .iter()
            .enumerate()
            .filter_map(|(i, a)| a.flagged.then_some(i))
            .collect()
    }
}

/// Flags area `i` when the 97.5% quantile of its κ draws is below 1.
///
/// `kappa_draws` is `S x n`. A matrix with no columns means the model had no
/// κ and yields [`Error::KappaAbsent`].
pub fn detect_outliers(kappa_draws: &[Vec<f64>]) -> Result<OutlierReport> {
    let n = kappa_draws.first().map_or(0, Vec::len);
    if n == 0 {
        return Err(Error::KappaAbsent);
    }
    if kappa_draws.iter().any(|d| d.len() != n) {
        return Err(Error::DimensionMismatch("ragged κ draw matrix".into()));
    }
    let areas = (0..n)
        .map(|i| {
            let mut col: Vec<f64> = kappa_draws.iter().map(|d| d[i]).collect();
            col.sort_by(f64::total_cmp);
            let upper = quantile_sorted(&col, 0.975);
            AreaOutlier {
                kappa_mean: mean(&col),
                kappa_upper: upper,
                flagged: upper < 1.0,
            }
        })
        .collect();
    Ok(OutlierReport { areas })
}

/// Confusion counts of flags against the truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Confusion {
    fn add(&mut self, flag: bool, truth: bool) {
        match (flag, truth) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, false) => self.tn += 1,
            (false, true) => self.fn_ += 1,
        }
    }

    /// `100 TP / (TP + FN)`; absent without any true outlier.
    pub fn sensitivity(&self) -> Option<f64> {
        let pos = self.tp + self.fn_;
        (pos > 0).then(|| 100.0 * self.tp as f64 / pos as f64)
    }

    /// `100 TN / (TN + FP)`; absent without any clean area.
    pub fn specificity(&self) -> Option<f64> {
        let neg = self.tn + self.fp;
        (neg > 0).then(|| 100.0 * self.tn as f64 / neg as f64)
    }

    pub fn merge(&mut self, other: &Confusion) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.tn += other.tn;
        self.fn_ += other.fn_;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionScore {
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub overall: Confusion,
    pub by_category: BTreeMap<String, Confusion>,
}

impl DetectionScore {
    pub fn from_confusions(overall: Confusion, by_category: BTreeMap<String, Confusion>) -> Self {
        DetectionScore {
            sensitivity: overall.sensitivity(),
            specificity: overall.specificity(),
            overall,
            by_category,
        }
    }
}

/// Sensitivity and specificity of `flags` against `truth`, overall and per
/// category label.
///
/// ```
/// use heavyrush::diagnostics::score_detection;
///
/// let s = score_detection(&[true, true, false], &[true, false, false], &["a", "a", "b"]).unwrap();
/// assert_eq!(s.sensitivity, Some(100.0));
/// assert_eq!(s.specificity, Some(50.0));
/// ```
pub fn score_detection<S: AsRef<str>>(
    flags: &[bool],
    truth: &[bool],
    categories: &[S],
) -> Result<DetectionScore> {
    if flags.len() != truth.len() || flags.len() != categories.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} flags, {} truths, {} categories",
            flags.len(),
            truth.len(),
            categories.len()
        )));
    }
    let mut overall = Confusion::default();
    let mut by_category: BTreeMap<String, Confusion> = BTreeMap::new();
    for ((&f, &t), c) in flags.iter().zip(truth).zip(categories) {
        overall.add(f, t);
        by_category.entry(c.as_ref().to_string()).or_default().add(f, t);
    }
    Ok(DetectionScore::from_confusions(overall, by_category))
}
