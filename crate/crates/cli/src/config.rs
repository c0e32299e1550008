//! JSON configuration files and the flags that override them.

use std::path::{Path, PathBuf};

use heavyrush::model::{ModelSpec, ModelVariant};
use heavyrush::sampler::ChainConfig;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::ingest::{DataPaths, IngestOptions};

/// Reads a JSON file; on failure the error names the JSON pointer of the
/// offending value.
pub fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de).map_err(|e| CliError::Json {
        file: path.display().to_string(),
        pointer: json_pointer(e.path()),
        message: e.inner().to_string(),
    })
}

fn json_pointer(path: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment;
    let mut out = String::new();
    for seg in path.iter() {
        let token = match seg {
            Segment::Seq { index } => index.to_string(),
            Segment::Map { key } => key.replace('~', "~0").replace('/', "~1"),
            Segment::Enum { variant } => variant.clone(),
            Segment::Unknown => "?".into(),
        };
        out.push('/');
        out.push_str(&token);
    }
    out
}

/// Prior hyperparameters that may be changed from their defaults.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorOverrides {
    pub nu_rate: Option<f64>,
    pub rho: Option<f64>,
    pub beta0_sd: Option<f64>,
    pub beta_sd: Option<f64>,
    pub sigma_scale: Option<f64>,
    pub sum_to_zero_scale: Option<f64>,
}

impl PriorOverrides {
    pub fn apply(&self, variant: ModelVariant) -> Result<ModelSpec> {
        let mut spec = ModelSpec::new(variant);
        let fields = [
            (&mut spec.nu_rate, self.nu_rate),
            (&mut spec.rho, self.rho),
            (&mut spec.beta0_sd, self.beta0_sd),
            (&mut spec.beta_sd, self.beta_sd),
            (&mut spec.sigma_scale, self.sigma_scale),
            (&mut spec.sum_to_zero_scale, self.sum_to_zero_scale),
        ];
        for (slot, value) in fields {
            if let Some(v) = value {
                *slot = v;
            }
        }
        spec.validate()?;
        Ok(spec)
    }
}

fn fit_sampler_default() -> ChainConfig {
    ChainConfig {
        iterations: 10_000,
        burn_in: 5_000,
        ..ChainConfig::default()
    }
}

/// Settings of `heavyrush fit`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub counts: Option<PathBuf>,
    pub adjacency: Option<PathBuf>,
    pub covariates: Option<PathBuf>,
    pub population: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub model: Option<String>,
    pub one_based: bool,
    pub scale_covariates: bool,
    pub priors: PriorOverrides,
    pub sampler: ChainConfig,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            counts: None,
            adjacency: None,
            covariates: None,
            population: None,
            out: None,
            model: None,
            one_based: false,
            scale_covariates: true,
            priors: PriorOverrides::default(),
            sampler: fit_sampler_default(),
        }
    }
}

fn required<'a, T>(value: &'a Option<T>, name: &str) -> Result<&'a T> {
    value
        .as_ref()
        .ok_or_else(|| CliError::Config(format!("`{name}` is required (flag or config file)")))
}

impl FitConfig {
    pub fn data_paths(&self) -> Result<DataPaths> {
        Ok(DataPaths {
            counts: required(&self.counts, "counts")?.clone(),
            adjacency: required(&self.adjacency, "adjacency")?.clone(),
            covariates: self.covariates.clone(),
            population: self.population.clone(),
        })
    }

    pub fn ingest_options(&self) -> IngestOptions {
        IngestOptions {
            one_based: self.one_based,
            scale_covariates: self.scale_covariates,
        }
    }

    pub fn variant(&self) -> Result<ModelVariant> {
        Ok(required(&self.model, "model")?.parse()?)
    }

    pub fn out_dir(&self) -> Result<&Path> {
        Ok(required(&self.out, "out")?.as_path())
    }
}

/// Settings of `heavyrush study`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyConfig {
    pub scenario: Option<PathBuf>,
    pub models: Option<Vec<String>>,
    pub out: Option<PathBuf>,
    pub sampler: ChainConfig,
}

impl StudyConfig {
    pub fn scenario_path(&self) -> Result<&Path> {
        Ok(required(&self.scenario, "scenario")?.as_path())
    }

    /// The model list, every variant when unset.
    pub fn variants(&self) -> Result<Vec<ModelVariant>> {
        match &self.models {
            None => Ok(ModelVariant::ALL.to_vec()),
            Some(tags) if tags.is_empty() => Err(CliError::Config("`models` is empty".into())),
            Some(tags) => tags.iter().map(|t| Ok(t.parse()?)).collect(),
        }
    }

    pub fn out_dir(&self) -> Result<&Path> {
        Ok(required(&self.out, "out")?.as_path())
    }
}

/// Sampler settings given on the command line; each replaces the file value
/// when present.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SamplerOverrides {
    pub iterations: Option<usize>,
    pub burn_in: Option<usize>,
    pub thin: Option<usize>,
    pub chains: Option<usize>,
    pub seed: Option<u64>,
    pub leapfrog_steps: Option<usize>,
    pub target_accept: Option<f64>,
    pub step_size: Option<f64>,
    pub unit_mass: bool,
}

impl SamplerOverrides {
    pub fn apply(&self, cfg: &mut ChainConfig) {
        let set = |slot: &mut usize, v: Option<usize>| {
            if let Some(v) = v {
                *slot = v;
            }
        };
        set(&mut cfg.iterations, self.iterations);
        set(&mut cfg.burn_in, self.burn_in);
        set(&mut cfg.thin, self.thin);
        set(&mut cfg.chains, self.chains);
        set(&mut cfg.leapfrog_steps, self.leapfrog_steps);
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(a) = self.target_accept {
            cfg.target_accept = a;
        }
        if self.step_size.is_some() {
            cfg.step_size = self.step_size;
        }
        if self.unit_mass {
            cfg.adapt_mass = false;
        }
    }
}
