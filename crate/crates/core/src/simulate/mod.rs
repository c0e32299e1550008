//! Synthetic panels: latent fields, contamination, offsets and counts.
//!
//! A [`SimulationScenario`] fixes the graph, the true parameters and the
//! contamination design; [`SimulationScenario::generate`] turns it into
//! replicate datasets. All randomness descends from the scenario seed through
//! named streams, so a replicate depends only on `(seed, replicate index)`.

use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, Gamma, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gmrf::{build_congdon_precision, build_leroux_precision, sample_factored, PrecisionMatrix};
use crate::graph::SpatialGraph;
use crate::model::Covariates;
use crate::panel::AreaTime;
use crate::rng::SeedTree;

pub mod fixture;


/// Attempts at drawing a `κ` vector whose Congdon precision is positive
/// definite before generation gives up.
pub const MAX_KAPPA_ATTEMPTS: usize = 100;

fn check_latent_args(t_len: usize, lambda: f64, sigma: f64, alpha: f64) -> Result<()> {
    if t_len == 0 {
        return Err(Error::DimensionMismatch("need at least one time point".into()));
    }
    if !(0.0..1.0).contains(&lambda) {
        return Err(Error::ParameterOutOfRange {
            name: "lambda",
            value: lambda,
            range: "[0, 1)",
        });
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::ParameterOutOfRange {
            name: "sigma",
            value: sigma,
            range: "(0, inf)",
        });
    }
    if !(alpha.abs() <= 1.0) {
        return Err(Error::ParameterOutOfRange {
            name: "alpha",
            value: alpha,
            range: "[-1, 1]",
        });
    }
    Ok(())
}

/// `b_1 ~ N(0, σ² Q^{-1})`, then `b_t = α b_{t-1} + N(0, σ² Q^{-1})`.
///
/// With `sum_sd`, `b_1` is drawn from the same field tilted by
/// `Σ_i b_i1 ~ N(0, sum_sd²)`, by conditioning a free draw on a noisy
/// observation of its sum.
fn generate_latents<R: Rng + ?Sized>(
    rng: &mut R,
    q: &PrecisionMatrix,
    t_len: usize,
    sigma: f64,
    alpha: f64,
    sum_sd: Option<f64>,
) -> Result<AreaTime<f64>> {
    let n = q.n();
    let factor = q.cholesky()?;
    let mut data = Vec::with_capacity(n * t_len);
    let mut mean = vec![0.0; n];
    for t in 0..t_len {
        let mut column = sample_factored(rng, &mean, &factor, sigma);
        if let (0, Some(sd)) = (t, sum_sd) {
            // Σ1 = σ² Q^{-1} 1; x - Σ1 (1ᵀΣ1 + sd²)^{-1} (1ᵀx + ε).
            let cov_one: Vec<f64> = factor
                .solve(&vec![1.0; n])
                .into_iter()
                .map(|v| sigma * sigma * v)
                .collect();
            let total_var: f64 = cov_one.iter().sum::<f64>() + sd * sd;
            let eps: f64 = sd * rng.sample::<f64, _>(StandardNormal);
            let shift = (column.iter().sum::<f64>() + eps) / total_var;
            for (x, c) in column.iter_mut().zip(&cov_one) {
                *x -= c * shift;
            }
        }
        for (m, v) in mean.iter_mut().zip(&column) {
            *m = alpha * v;
        }
        data.extend(column);
    }
    AreaTime::from_time_major(n, t_len, data)
}

/// Latent panel from the autoregressive Leroux field.
pub fn generate_rushworth_latents<R: Rng + ?Sized>(
    rng: &mut R,
    g: &SpatialGraph,
    t_len: usize,
    lambda: f64,
    sigma: f64,
    alpha: f64,
) -> Result<AreaTime<f64>> {
    check_latent_args(t_len, lambda, sigma, alpha)?;
    generate_latents(rng, &build_leroux_precision(g, lambda)?, t_len, sigma, alpha, None)
}

/// Latent panel from the autoregressive Congdon field. With `κ = 1` this
/// consumes the stream exactly like [`generate_rushworth_latents`].
pub fn generate_heavy_rushworth_latents<R: Rng + ?Sized>(
    rng: &mut R,
    g: &SpatialGraph,
    t_len: usize,
    lambda: f64,
    sigma: f64,
    alpha: f64,
    kappa: &[f64],
) -> Result<AreaTime<f64>> {
    check_latent_args(t_len, lambda, sigma, alpha)?;
    generate_latents(rng, &build_congdon_precision(g, lambda, kappa)?, t_len, sigma, alpha, None)
}

/// What [`contaminate`] did to a latent panel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContaminationRecord {
    pub targets: Vec<usize>,
    /// `r[(j, t)]` is true when cell `(j, t)` was inflated.
    pub r: AreaTime<bool>,
    /// Inflation added to each cell; zero where `r` is false.
    pub c: AreaTime<f64>,
    /// `M_t = max(|min_i b_it|, |max_i b_it|)` of the clean panel.
    pub column_max: Vec<f64>,
    pub b_before: AreaTime<f64>,
    pub b_after: AreaTime<f64>,
}

impl ContaminationRecord {
    /// Areas in the target list, as an `n`-vector of flags.
    pub fn truth_flags(&self) -> Vec<bool> {
        let mut flags = vec![false; self.b_before.n_areas()];
        for &j in &self.targets {
            flags[j] = true;
        }
        flags
    }
}

/// Contamination settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContaminationSpec {
    pub targets: Vec<usize>,
    /// Probability of an outlying cell when `r` is redrawn.
    #[serde(default = "default_q")]
    pub q: f64,
    /// Probability that `r_{jt}` repeats `r_{j,t-1}`.
    #[serde(default = "default_persist")]
    pub persist: f64,
    /// Inflation is drawn from `U(lo M_t, hi M_t)`.
    #[serde(default = "default_multipliers")]
    pub multipliers: (f64, f64),
}

fn default_q() -> f64 {
    0.4
}

fn default_persist() -> f64 {
    0.8
}

fn default_multipliers() -> (f64, f64) {
    (1.0, 1.5)
}

impl ContaminationSpec {
    pub fn new(targets: Vec<usize>) -> Self {
        ContaminationSpec {
            targets,
            q: default_q(),
            persist: default_persist(),
            multipliers: default_multipliers(),
        }
    }

    fn validate(&self, n: usize) -> Result<()> {
        if self.targets.is_empty() {
            return Err(Error::InvalidScenario("contamination needs at least one target".into()));
        }
        if let Some(&j) = self.targets.iter().find(|&&j| j >= n) {
            return Err(Error::IndexOutOfRange { index: j, n });
        }
        for (name, p) in [("q", self.q), ("persist", self.persist)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidScenario(format!("{name} = {p} is not a probability")));
            }
        }
        let (lo, hi) = self.multipliers;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(Error::InvalidScenario(format!(
                "multipliers ({lo}, {hi}) must be finite and ordered"
            )));
        }
        Ok(())
    }
}

/// Adds positive bursts to the target areas.
///
/// For each target `j` in list order and each `t`: at `t = 0`,
/// `r ~ Ber(q)`; afterwards `r` keeps its previous value with probability
/// `persist` and is redrawn from `Ber(q)` otherwise. Where `r = 1` the cell
/// gains `c ~ U(lo M_t, hi M_t)`, with `M_t` taken from the clean panel
/// before any target is touched.
pub fn contaminate<R: Rng + ?Sized>(
    rng: &mut R,
    b: &AreaTime<f64>,
    spec: &ContaminationSpec,
) -> Result<ContaminationRecord> {
    let (n, t_len) = (b.n_areas(), b.n_times());
    spec.validate(n)?;
    let column_max: Vec<f64> = (0..t_len)
        .map(|t| {
            let col = b.column(t);
            let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            lo.abs().max(hi.abs())
        })
        .collect();
    let (lo, hi) = spec.multipliers;
    let mut r = AreaTime::filled(n, t_len, false);
    let mut c = AreaTime::filled(n, t_len, 0.0);
    let mut after = b.clone();
    for &j in &spec.targets {
        let mut prev = false;
        for t in 0..t_len {
            let on = if t > 0 && rng.random::<f64>() < spec.persist {
                prev
            } else {
                rng.random::<f64>() < spec.q
            };
            if on {
                let u: f64 = rng.random();
                let inc = column_max[t] * (lo + (hi - lo) * u);
                r[(j, t)] = true;
                c[(j, t)] = inc;
                after[(j, t)] = b[(j, t)] + inc;
            }
            prev = on;
        }
    }
    Ok(ContaminationRecord {
        targets: spec.targets.clone(),
        r,
        c,
        column_max,
        b_before: b.clone(),
        b_after: after,
    })
}

/// `E_i = (Σ_{i,t} Y_it / Σ_i P_i) P_i / T`.
///
/// ```
/// use heavyrush::{panel::AreaTime, simulate::compute_offsets};
///
/// // 100 cases over two areas and ten periods.
/// let mut y = AreaTime::filled(2, 10, 0u64);
/// y[(0, 0)] = 40;
/// y[(1, 3)] = 60;
/// let e = compute_offsets(&y, &[100.0, 900.0]).unwrap();
/// assert_eq!(e, vec![1.0, 9.0]);
/// ```
pub fn compute_offsets(counts: &AreaTime<u64>, population: &[f64]) -> Result<Vec<f64>> {
    if population.len() != counts.n_areas() {
        return Err(Error::DimensionMismatch(format!(
            "{} populations for {} areas",
            population.len(),
            counts.n_areas()
        )));
    }
    let total_pop: f64 = population.iter().sum();
    if !(total_pop > 0.0) {
        return Err(Error::ZeroPopulation);
    }
    let total_y: f64 = counts.as_slice().iter().map(|&y| y as f64).sum();
    let t_len = counts.n_times() as f64;
    Ok(population
        .iter()
        .map(|p| total_y / total_pop * p / t_len)
        .collect())
}

/// Offset size classes with half-open boundaries at 26, 45, 108 and 147.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum OffsetCategory {
    Small,
    MediumLow,
    Medium,
    MediumHigh,
    High,
}

impl OffsetCategory {
    pub const ALL: [OffsetCategory; 5] = [
        OffsetCategory::Small,
        OffsetCategory::MediumLow,
        OffsetCategory::Medium,
        OffsetCategory::MediumHigh,
        OffsetCategory::High,
    ];

    pub fn label(self) -> &'static str {
        match self {
            OffsetCategory::Small => "Small",
            OffsetCategory::MediumLow => "Medium low",
            OffsetCategory::Medium => "Medium",
            OffsetCategory::MediumHigh => "Medium high",
            OffsetCategory::High => "High",
        }
    }
}

impl fmt::Display for OffsetCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// ```
/// use heavyrush::simulate::{offset_category, OffsetCategory};
///
/// assert_eq!(offset_category(26.0), OffsetCategory::MediumLow);
/// assert_eq!(offset_category(147.0), OffsetCategory::High);
/// ```
pub fn offset_category(e: f64) -> OffsetCategory {
    match e {
        e if e < 26.0 => OffsetCategory::Small,
        e if e < 45.0 => OffsetCategory::MediumLow,
        e if e < 108.0 => OffsetCategory::Medium,
        e if e < 147.0 => OffsetCategory::MediumHigh,
        _ => OffsetCategory::High,
    }
}

/// Independent `Y_it ~ Pois(E_i exp(β₀ + x_iᵀβ + b_it))`.
pub fn generate_counts<R: Rng + ?Sized>(
    rng: &mut R,
    offsets: &[f64],
    beta0: f64,
    beta: &[f64],
    covariates: &Covariates,
    b: &AreaTime<f64>,
) -> Result<AreaTime<u64>> {
    let n = b.n_areas();
    if offsets.len() != n || covariates.rows.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "{} offsets and {} covariate rows for {n} areas",
            offsets.len(),
            covariates.rows.len()
        )));
    }
    if beta.len() != covariates.p() {
        return Err(Error::DimensionMismatch(format!(
            "{} coefficients for {} covariates",
            beta.len(),
            covariates.p()
        )));
    }
    if let Some((index, &value)) = offsets.iter().enumerate().find(|(_, &e)| !(e > 0.0)) {
        return Err(Error::NonPositiveOffset { index, value });
    }
    let fixed: Vec<f64> = (0..n)
        .map(|i| {
            let xb: f64 = covariates.rows[i].iter().zip(beta).map(|(x, b)| x * b).sum();
            offsets[i].ln() + beta0 + xb
        })
        .collect();
    let mut data = Vec::with_capacity(b.as_slice().len());
    for (k, &bv) in b.as_slice().iter().enumerate() {
        let mean = (fixed[k % n] + bv).exp();
        data.push(poisson(rng, mean));
    }
    AreaTime::from_time_major(n, b.n_times(), data)
}

fn poisson<R: Rng + ?Sized>(rng: &mut R, mean: f64) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    // Poisson::new only rejects non-positive or non-finite means.
    let draw: f64 = Poisson::new(mean).map_or(f64::INFINITY, |d| d.sample(rng));
    draw.min(u64::MAX as f64) as u64
}

/// Graph used by a scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GraphSpec {
    Ring { n: usize },
    /// The bundled 33-area fixture, see [`fixture`].
    Fixture33,
    Edges { n: usize, edges: Vec<(usize, usize)> },
}

impl GraphSpec {
    pub fn build(&self) -> Result<SpatialGraph> {
        match self {
            GraphSpec::Ring { n } => SpatialGraph::ring(*n),
            GraphSpec::Fixture33 => fixture::graph(),
            GraphSpec::Edges { n, edges } => SpatialGraph::new(*n, edges.iter().copied()),
        }
    }
}

/// Where the offsets come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OffsetSpec {
    Given { values: Vec<f64> },
    /// `E_i ~ Pois(mean)`, drawn once per study and redrawn while zero.
    Poisson { mean: f64 },
    /// Offsets bundled with the 33-area fixture.
    Fixture33,
}

/// How the per-area scales are set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum KappaTruth {
    /// No scales: the clean autoregressive Leroux field.
    None,
    /// `κ_i ~ Gamma(ν/2, rate ν/2)`, redrawn until the precision is positive
    /// definite.
    Gamma { nu: f64 },
    Given { values: Vec<f64> },
}

/// Whether replicates share one latent panel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatentSharing {
    /// One latent panel (and one contamination) for all replicates; only the
    /// counts are redrawn.
    #[default]
    Shared,
    PerReplicate,
}

/// True parameter values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrueParameters {
    pub beta0: f64,
    pub lambda: f64,
    pub sigma: f64,
    pub alpha: f64,
    #[serde(default = "kappa_none")]
    pub kappa: KappaTruth,
}

fn kappa_none() -> KappaTruth {
    KappaTruth::None
}

/// Full description of a simulation study's data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationScenario {
    pub graph: GraphSpec,
    pub n_times: usize,
    pub truth: TrueParameters,
    pub offsets: OffsetSpec,
    #[serde(default)]
    pub contamination: Option<ContaminationSpec>,
    pub replicates: usize,
    pub seed: u64,
    #[serde(default)]
    pub latents: LatentSharing,
    /// Draw the first period under the fitted model's soft constraint
    /// `Σ_i b_i1 ~ N(0, (0.001 n)²)`, so that `β₀` means the same thing in the
    /// generator and in the fit. Off by default.
    #[serde(default)]
    pub soft_sum_to_zero: bool,
}

/// One generated replicate with its truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatedDataset {
    pub replicate: usize,
    pub counts: AreaTime<u64>,
    pub offsets: Vec<f64>,
    /// Latent panel the counts were drawn from, after any contamination.
    pub b: AreaTime<f64>,
    pub kappa: Option<Vec<f64>>,
    pub contamination: Option<ContaminationRecord>,
}

impl SimulatedDataset {
    /// Contaminated-area flags; all false without contamination.
    pub fn truth_flags(&self) -> Vec<bool> {
        self.contamination
            .as_ref()
            .map_or_else(|| vec![false; self.offsets.len()], ContaminationRecord::truth_flags)
    }
}

struct LatentDraw {
    b: AreaTime<f64>,
    kappa: Option<Vec<f64>>,
    contamination: Option<ContaminationRecord>,
}

impl SimulationScenario {
    pub fn validate(&self) -> Result<SpatialGraph> {
        let g = self.graph.build()?;
        let n = g.n();
        if self.replicates == 0 {
            return Err(Error::InvalidScenario("replicates must be positive".into()));
        }
        let t = &self.truth;
        check_latent_args(self.n_times, t.lambda, t.sigma, t.alpha)?;
        if !t.beta0.is_finite() {
            return Err(Error::InvalidScenario("beta0 must be finite".into()));
        }
        match &t.kappa {
            KappaTruth::None => {}
            KappaTruth::Gamma { nu } => {
                if !(*nu > 0.0 && nu.is_finite()) {
                    return Err(Error::InvalidScenario(format!("nu = {nu} must be positive")));
                }
            }
            KappaTruth::Given { values } => {
                if values.len() != n {
                    return Err(Error::InvalidScenario(format!(
                        "{} kappa values for {n} areas",
                        values.len()
                    )));
                }
            }
        }
        match &self.offsets {
            OffsetSpec::Given { values } => {
                if values.len() != n {
                    return Err(Error::InvalidScenario(format!(
                        "{} offsets for {n} areas",
                        values.len()
                    )));
                }
                if let Some((index, &value)) =
                    values.iter().enumerate().find(|(_, &e)| !(e > 0.0))
                {
                    return Err(Error::NonPositiveOffset { index, value });
                }
            }
            OffsetSpec::Poisson { mean } => {
                if !(*mean > 0.0 && mean.is_finite()) {
                    return Err(Error::InvalidScenario(format!(
                        "offset mean {mean} must be positive"
                    )));
                }
            }
            OffsetSpec::Fixture33 => {
                if n != fixture::N_AREAS {
                    return Err(Error::InvalidScenario(format!(
                        "fixture offsets cover {} areas, graph has {n}",
                        fixture::N_AREAS
                    )));
                }
            }
        }
        if let Some(c) = &self.contamination {
            c.validate(n)?;
        }
        Ok(g)
    }

    fn root(&self) -> SeedTree {
        SeedTree::new(self.seed).child("simulate", 0)
    }

    /// Offsets shared by every replicate.
    pub fn offsets(&self) -> Result<Vec<f64>> {
        let g = self.validate()?;
        Ok(match &self.offsets {
            OffsetSpec::Given { values } => values.clone(),
            OffsetSpec::Fixture33 => fixture::OFFSETS.to_vec(),
            OffsetSpec::Poisson { mean } => {
                let mut rng = self.root().child("offsets", 0).rng();
                let dist = Poisson::new(*mean).map_err(|e| Error::InvalidScenario(e.to_string()))?;
                (0..g.n())
                    .map(|_| loop {
                        let e: f64 = dist.sample(&mut rng);
                        if e > 0.0 {
                            break e;
                        }
                    })
                    .collect()
            }
        })
    }

    fn draw_latents(&self, g: &SpatialGraph, stream: SeedTree) -> Result<LatentDraw> {
        let t = &self.truth;
        let mut rng = stream.rng();
        let sum_sd = self.soft_sum_to_zero.then(|| 0.001 * g.n() as f64);
        let (q, kappa) = match &t.kappa {
            KappaTruth::None => (build_leroux_precision(g, t.lambda)?, None),
            KappaTruth::Given { values } => (
                build_congdon_precision(g, t.lambda, values)?,
                Some(values.clone()),
            ),
            KappaTruth::Gamma { nu } => {
                let dist = Gamma::new(nu / 2.0, 2.0 / nu)
                    .map_err(|e| Error::InvalidScenario(e.to_string()))?;
                let mut found = None;
                for _ in 0..MAX_KAPPA_ATTEMPTS {
                    let kappa: Vec<f64> = (0..g.n()).map(|_| dist.sample(&mut rng)).collect();
                    if build_congdon_precision(g, t.lambda, &kappa)?.is_positive_definite() {
                        found = Some(kappa);
                        break;
                    }
                }
                let kappa = found.ok_or(Error::NotPositiveDefinite { pivot: 0 })?;
                (build_congdon_precision(g, t.lambda, &kappa)?, Some(kappa))
            }
        };
        let b = generate_latents(&mut rng, &q, self.n_times, t.sigma, t.alpha, sum_sd)?;
        let contamination = match &self.contamination {
            Some(spec) => Some(contaminate(&mut rng, &b, spec)?),
            None => None,
        };
        let b = contamination.as_ref().map_or(b, |c| c.b_after.clone());
        Ok(LatentDraw {
            b,
            kappa,
            contamination,
        })
    }

    /// Generates replicate `r`.
    pub fn replicate(&self, r: usize) -> Result<SimulatedDataset> {
        let g = self.validate()?;
        let offsets = self.offsets()?;
        let latent_stream = match self.latents {
            LatentSharing::Shared => self.root().child("latents", 0),
            LatentSharing::PerReplicate => self.root().child("latents", r as u64 + 1),
        };
        let draw = self.draw_latents(&g, latent_stream)?;
        let mut rng = self.root().child("counts", r as u64).rng();
        let counts = generate_counts(
            &mut rng,
            &offsets,
            self.truth.beta0,
            &[],
            &Covariates::none(g.n()),
            &draw.b,
        )?;
        Ok(SimulatedDataset {
            replicate: r,
            counts,
            offsets,
            b: draw.b,
            kappa: draw.kappa,
            contamination: draw.contamination,
        })
    }

    /// All replicates in order.
    pub fn generate(&self) -> Result<Vec<SimulatedDataset>> {
        (0..self.replicates).map(|r| self.replicate(r)).collect()
    }
}
