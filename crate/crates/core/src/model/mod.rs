//! The hierarchical Poisson model.
//!
//! Counts `Y_it` are Poisson with mean `E_i exp(β₀ + x_i'β + b_it)`. Latent
//! effects follow a first-order autoregression in time whose innovations are
//! Leroux (Rushworth variants) or Congdon (heavy variants) fields in space:
//!
//! ```text
//! b_·1         ~ N(0,          σ² Q^{-1})
//! b_·t | b_·t-1 ~ N(α b_·t-1,  σ² Q^{-1}),   t ≥ 2
//! ```
//!
//! plus a soft sum-to-zero penalty on `b_·1`. The heavy variants put either
//! independent `Gamma(ν/2, ν/2)` priors or a log-PCAR prior on the scales `κ`.
//!
//! Inference works on an unconstrained vector; see [`ParameterLayout`].

mod posterior;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use posterior::{
    grad_log_posterior, log_likelihood, log_posterior, log_prior, Posterior,
};

use crate::error::{Error, Result};
use crate::panel::AreaTime;

/// Prior family for the per-area scales `κ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KappaPrior {
    /// No scales: `κ ≡ 1` (Rushworth).
    None,
    /// `κ_i ~ Gamma(ν/2, ν/2)` independently.
    IndependentGamma,
    /// `ln κ_i = -ν/2 + z_i` with `z ~ N(0, ν Q_{ρ,*}^{-1})`.
    LogPcar,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaMode {
    FixedOne,
    /// `α ~ U(-1, 1)`.
    Estimated,
}

/// The six fitted variants. Serialized as their command-line tags.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModelVariant {
    R1,
    #[serde(rename = "Ralpha")]
    RAlpha,
    HR1,
    #[serde(rename = "HRalpha")]
    HRAlpha,
    HRLPC1,
    #[serde(rename = "HRLPCalpha")]
    HRLPCAlpha,
}

impl ModelVariant {
    pub const ALL: [ModelVariant; 6] = [
        ModelVariant::R1,
        ModelVariant::RAlpha,
        ModelVariant::HR1,
        ModelVariant::HRAlpha,
        ModelVariant::HRLPC1,
        ModelVariant::HRLPCAlpha,
    ];

    /// Command-line tag, e.g. `HRLPCalpha`.
    pub fn tag(self) -> &'static str {
        match self {
            ModelVariant::R1 => "R1",
            ModelVariant::RAlpha => "Ralpha",
            ModelVariant::HR1 => "HR1",
            ModelVariant::HRAlpha => "HRalpha",
            ModelVariant::HRLPC1 => "HRLPC1",
            ModelVariant::HRLPCAlpha => "HRLPCalpha",
        }
    }

    /// Conventional notation, e.g. `HR-LPC(α)`.
    pub fn notation(self) -> &'static str {
        match self {
            ModelVariant::R1 => "R(1)",
            ModelVariant::RAlpha => "R(α)",
            ModelVariant::HR1 => "HR(1)",
            ModelVariant::HRAlpha => "HR(α)",
            ModelVariant::HRLPC1 => "HR-LPC(1)",
            ModelVariant::HRLPCAlpha => "HR-LPC(α)",
        }
    }

    pub fn kappa_prior(self) -> KappaPrior {
        match self {
            ModelVariant::R1 | ModelVariant::RAlpha => KappaPrior::None,
            ModelVariant::HR1 | ModelVariant::HRAlpha => KappaPrior::IndependentGamma,
            ModelVariant::HRLPC1 | ModelVariant::HRLPCAlpha => KappaPrior::LogPcar,
        }
    }

    pub fn alpha_mode(self) -> AlphaMode {
        match self {
            ModelVariant::R1 | ModelVariant::HR1 | ModelVariant::HRLPC1 => AlphaMode::FixedOne,
            _ => AlphaMode::Estimated,
        }
    }
}

impl fmt::Display for ModelVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for ModelVariant {
    type Err = Error;

    /// Accepts tags (`HRLPCalpha`), notation (`HR-LPC(α)`) and dashed forms
    /// (`HR-LPC-alpha`), case-insensitively.
    fn from_str(s: &str) -> Result<Self> {
        let key: String = s
            .replace('α', "alpha")
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        ModelVariant::ALL
            .into_iter()
            .find(|v| v.tag().to_ascii_lowercase() == key)
            .ok_or_else(|| Error::UnknownModel(s.to_string()))
    }
}

/// Everything that selects and parameterizes one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kappa_prior: KappaPrior,
    pub alpha_mode: AlphaMode,
    /// Rate of the exponential prior on `ν`.
    pub nu_rate: f64,
    /// PCAR dependence for the log-PCAR prior.
    pub rho: f64,
    pub beta0_sd: f64,
    pub beta_sd: f64,
    /// Scale of the half-normal prior on `σ`.
    pub sigma_scale: f64,
    /// The soft constraint is `Σ_i b_i1 ~ N(0, (sum_to_zero_scale · n)²)`.
    pub sum_to_zero_scale: f64,
}

impl ModelSpec {
    pub fn new(variant: ModelVariant) -> Self {
        let kappa_prior = variant.kappa_prior();
        ModelSpec {
            kappa_prior,
            alpha_mode: variant.alpha_mode(),
            nu_rate: match kappa_prior {
                KappaPrior::LogPcar => 1.0 / 0.3,
                _ => 0.25,
            },
            rho: 0.99,
            beta0_sd: 1.0,
            beta_sd: 1.0,
            sigma_scale: 0.1,
            sum_to_zero_scale: 0.001,
        }
    }

    /// The variant this spec corresponds to, ignoring hyperparameters.
    pub fn variant(&self) -> ModelVariant {
        use AlphaMode::*;
        use KappaPrior::*;
        match (self.kappa_prior, self.alpha_mode) {
            (None, FixedOne) => ModelVariant::R1,
            (None, Estimated) => ModelVariant::RAlpha,
            (IndependentGamma, FixedOne) => ModelVariant::HR1,
            (IndependentGamma, Estimated) => ModelVariant::HRAlpha,
            (LogPcar, FixedOne) => ModelVariant::HRLPC1,
            (LogPcar, Estimated) => ModelVariant::HRLPCAlpha,
        }
    }

    pub fn has_kappa(&self) -> bool {
        self.kappa_prior != KappaPrior::None
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("nu_rate", self.nu_rate),
            ("beta0_sd", self.beta0_sd),
            ("beta_sd", self.beta_sd),
            ("sigma_scale", self.sigma_scale),
            ("sum_to_zero_scale", self.sum_to_zero_scale),
        ];
        for (name, value) in positive {
            if !(value > 0.0 && value.is_finite()) {
                return Err(Error::ParameterOutOfRange {
                    name,
                    value,
                    range: "(0, inf)",
                });
            }
        }
        if !(0.0..1.0).contains(&self.rho) {
            return Err(Error::ParameterOutOfRange {
                name: "rho",
                value: self.rho,
                range: "[0, 1)",
            });
        }
        Ok(())
    }
}

impl From<ModelVariant> for ModelSpec {
    fn from(v: ModelVariant) -> Self {
        ModelSpec::new(v)
    }
}

/// Area-level covariates, one row per area.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Covariates {
    pub names: Vec<String>,
    /// `rows[i][j]`: covariate `j` of area `i`.
    pub rows: Vec<Vec<f64>>,
}

/// Centring and scaling applied to one covariate column.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: f64,
    pub sd: f64,
}

impl Covariates {
    pub fn none(n: usize) -> Self {
        Covariates {
            names: Vec::new(),
            rows: vec![Vec::new(); n],
        }
    }

    pub fn p(&self) -> usize {
        self.names.len()
    }

    /// Centres each column and scales it to unit sample standard deviation.
    /// Constant columns are only centred.
    pub fn standardize(&mut self) -> Vec<Standardization> {
        let n = self.rows.len() as f64;
        (0..self.p())
            .map(|j| {
                let mean = self.rows.iter().map(|r| r[j]).sum::<f64>() / n;
                let var = self.rows.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>()
                    / (n - 1.0).max(1.0);
                let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
                for row in &mut self.rows {
                    row[j] = (row[j] - mean) / sd;
                }
                Standardization { mean, sd }
            })
            .collect()
    }
}

/// Observed counts, offsets and covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    counts: AreaTime<u64>,
    offsets: Vec<f64>,
    covariates: Covariates,
    log_factorials: Vec<f64>,
}

impl Dataset {
    pub fn new(counts: AreaTime<u64>, offsets: Vec<f64>, covariates: Covariates) -> Result<Self> {
        let n = counts.n_areas();
        if counts.n_times() == 0 || n == 0 {
            return Err(Error::DimensionMismatch("empty count panel".into()));
        }
        if offsets.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "{} offsets for {n} areas",
                offsets.len()
            )));
        }
        if let Some((index, &value)) = offsets
            .iter()
            .enumerate()
            .find(|(_, &e)| !(e > 0.0 && e.is_finite()))
        {
            return Err(Error::NonPositiveOffset { index, value });
        }
        if covariates.rows.len() != n || covariates.rows.iter().any(|r| r.len() != covariates.p()) {
            return Err(Error::DimensionMismatch(
                "covariate table must have one row of p values per area".into(),
            ));
        }
        let log_factorials = counts
            .as_slice()
            .iter()
            .map(|&y| statrs::function::gamma::ln_gamma(y as f64 + 1.0))
            .collect();
        Ok(Dataset {
            counts,
            offsets,
            covariates,
            log_factorials,
        })
    }

    pub fn without_covariates(counts: AreaTime<u64>, offsets: Vec<f64>) -> Result<Self> {
        let n = counts.n_areas();
        Self::new(counts, offsets, Covariates::none(n))
    }

    pub fn n_areas(&self) -> usize {
        self.counts.n_areas()
    }

    pub fn n_times(&self) -> usize {
        self.counts.n_times()
    }

    pub fn p(&self) -> usize {
        self.covariates.p()
    }

    pub fn counts(&self) -> &AreaTime<u64> {
        &self.counts
    }

    pub fn offsets(&self) -> &[f64] {
        &self.offsets
    }

    pub fn covariates(&self) -> &Covariates {
        &self.covariates
    }

    /// `ln(Y_it!)`, time-major.
    pub fn log_factorials(&self) -> &[f64] {
        &self.log_factorials
    }
}

/// One point in parameter space, on the natural scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterState {
    pub beta0: f64,
    pub beta: Vec<f64>,
    pub sigma: f64,
    pub lambda: f64,
    /// 1 under [`AlphaMode::FixedOne`].
    pub alpha: f64,
    /// All ones under [`KappaPrior::None`].
    pub kappa: Vec<f64>,
    pub nu: Option<f64>,
    /// Log-PCAR auxiliary field; `ln κ_i = -ν/2 + z_i`.
    pub z: Option<Vec<f64>>,
    pub b: AreaTime<f64>,
}

/// How a model's parameters sit in the flat unconstrained vector:
///
/// | block | length | map to natural scale |
/// |-------|--------|----------------------|
/// | `β₀`  | 1      | identity |
/// | `β`   | p      | identity |
/// | `s`   | 1      | `σ = exp(s)` |
/// | `l`   | 1      | `λ = 1 / (1 + exp(-l))` |
/// | `a`   | 1 if α estimated | `α = tanh(a)` |
/// | `ln κ` or `z` | n if κ present | `κ = exp(·)` or the log-PCAR map |
/// | `m`   | 1 if κ present | `ν = exp(m)` |
/// | `b`   | n·T, time-major | identity |
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParameterLayout {
    pub n: usize,
    pub t: usize,
    pub p: usize,
    pub kappa_prior: KappaPrior,
    pub alpha_mode: AlphaMode,
}

impl ParameterLayout {
    pub fn new(spec: &ModelSpec, n: usize, t: usize, p: usize) -> Self {
        ParameterLayout {
            n,
            t,
            p,
            kappa_prior: spec.kappa_prior,
            alpha_mode: spec.alpha_mode,
        }
    }

    fn has_kappa(&self) -> bool {
        self.kappa_prior != KappaPrior::None
    }

    pub fn beta0(&self) -> usize {
        0
    }

    pub fn beta(&self) -> std::ops::Range<usize> {
        1..1 + self.p
    }

    pub fn log_sigma(&self) -> usize {
        1 + self.p
    }

    pub fn logit_lambda(&self) -> usize {
        2 + self.p
    }

    pub fn atanh_alpha(&self) -> Option<usize> {
        (self.alpha_mode == AlphaMode::Estimated).then_some(3 + self.p)
    }

    fn after_alpha(&self) -> usize {
        3 + self.p + usize::from(self.alpha_mode == AlphaMode::Estimated)
    }

    /// `ln κ` (independent gamma) or `z` (log-PCAR).
    pub fn kappa(&self) -> Option<std::ops::Range<usize>> {
        let start = self.after_alpha();
        self.has_kappa().then(|| start..start + self.n)
    }

    pub fn log_nu(&self) -> Option<usize> {
        self.has_kappa().then(|| self.after_alpha() + self.n)
    }

    pub fn latent(&self) -> std::ops::Range<usize> {
        let start = self.after_alpha() + if self.has_kappa() { self.n + 1 } else { 0 };
        start..start + self.n * self.t
    }

    pub fn dim(&self) -> usize {
        self.latent().end
    }

    /// Human-readable name of every unconstrained coordinate, on the scale
    /// of the corresponding natural parameter.
    pub fn parameter_names(&self) -> Vec<String> {
        let mut names = vec!["beta0".to_string()];
        names.extend((0..self.p).map(|j| format!("beta[{j}]")));
        names.push("sigma".into());
        names.push("lambda".into());
        if self.atanh_alpha().is_some() {
            names.push("alpha".into());
        }
        if self.has_kappa() {
            names.extend((0..self.n).map(|i| format!("kappa[{i}]")));
            names.push("nu".into());
        }
        for t in 0..self.t {
            for i in 0..self.n {
                names.push(format!("b[{i},{t}]"));
            }
        }
        names
    }

    /// Natural-scale values in the order of [`ParameterLayout::parameter_names`].
    pub fn natural_values(&self, state: &ParameterState) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.dim());
        v.push(state.beta0);
        v.extend_from_slice(&state.beta);
        v.push(state.sigma);
        v.push(state.lambda);
        if self.atanh_alpha().is_some() {
            v.push(state.alpha);
        }
        if self.has_kappa() {
            v.extend_from_slice(&state.kappa);
            v.push(state.nu.unwrap_or(f64::NAN));
        }
        v.extend_from_slice(state.b.as_slice());
        v
    }

    /// Maps an unconstrained vector to the natural parameterization.
    pub fn constrain(&self, u: &[f64]) -> Result<ParameterState> {
        if u.len() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "unconstrained vector of length {}, layout expects {}",
                u.len(),
                self.dim()
            )));
        }
        let nu = self.log_nu().map(|k| u[k].exp());
        let (kappa, z) = match (self.kappa_prior, self.kappa()) {
            (KappaPrior::IndependentGamma, Some(r)) => (u[r].iter().map(|v| v.exp()).collect(), None),
            (KappaPrior::LogPcar, Some(r)) => {
                let half_nu = 0.5 * nu.expect("nu present with kappa");
                (
                    u[r.clone()].iter().map(|zi| (zi - half_nu).exp()).collect(),
                    Some(u[r].to_vec()),
                )
            }
            _ => (vec![1.0; self.n], None),
        };
        Ok(ParameterState {
            beta0: u[0],
            beta: u[self.beta()].to_vec(),
            sigma: u[self.log_sigma()].exp(),
            lambda: logistic(u[self.logit_lambda()]),
            alpha: self.atanh_alpha().map_or(1.0, |k| u[k].tanh()),
            kappa,
            nu,
            z,
            b: AreaTime::from_time_major(self.n, self.t, u[self.latent()].to_vec())?,
        })
    }

    /// Inverse of [`ParameterLayout::constrain`]. For log-PCAR states `z` is
    /// taken from the state when present, otherwise recovered from `κ` and `ν`.
    pub fn unconstrain(&self, state: &ParameterState) -> Result<Vec<f64>> {
        if state.beta.len() != self.p
            || state.b.n_areas() != self.n
            || state.b.n_times() != self.t
            || (self.has_kappa() && state.kappa.len() != self.n)
        {
            return Err(Error::DimensionMismatch(
                "parameter state does not match layout".into(),
            ));
        }
        let mut u = Vec::with_capacity(self.dim());
        u.push(state.beta0);
        u.extend_from_slice(&state.beta);
        u.push(state.sigma.ln());
        u.push(logit(state.lambda));
        if self.atanh_alpha().is_some() {
            u.push(state.alpha.atanh());
        }
        if self.has_kappa() {
            let nu = state.nu.ok_or_else(|| {
                Error::DimensionMismatch("state lacks nu for a kappa model".into())
            })?;
            match self.kappa_prior {
                KappaPrior::IndependentGamma => u.extend(state.kappa.iter().map(|k| k.ln())),
                _ => match &state.z {
                    Some(z) => u.extend_from_slice(z),
                    None => u.extend(state.kappa.iter().map(|k| k.ln() + 0.5 * nu)),
                },
            }
            u.push(nu.ln());
        }
        u.extend_from_slice(state.b.as_slice());
        Ok(u)
    }
}

pub(crate) fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// `ln(1 + e^x)` without overflow.
pub(crate) fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}
