//! The four subcommands, as functions from settings to files on disk.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use heavyrush::diagnostics::{compute_mse, compute_waic, detect_outliers, summarize};
use heavyrush::fit::{fit, FitResult};
use heavyrush::model::ModelSpec;
use heavyrush::simulate::{OffsetCategory, SimulatedDataset, SimulationScenario, TrueParameters};
use heavyrush::study::{run_study, StudyReport, StudyRow};
use serde::{Deserialize, Serialize};

use crate::config::{load_json, FitConfig, StudyConfig};
use crate::error::{CliError, Result};
use crate::ingest::{parse_dataset, write_adjacency, write_counts, write_rows, Ingested};
use crate::report::{
    parameter_rows, Convergence, DataSummary, DiagnoseReport, FitReport, FIT_REPORT_SCHEMA_VERSION,
};

/// How a command that ran to completion ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    /// Some R̂ is above the threshold, or a study fit did not converge.
    ConvergenceWarning,
}

impl Outcome {
    pub fn exit_code(self) -> u8 {
        match self {
            Outcome::Success => 0,
            Outcome::ConvergenceWarning => 2,
        }
    }

    fn from_converged(ok: bool) -> Self {
        if ok {
            Outcome::Success
        } else {
            Outcome::ConvergenceWarning
        }
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("reports serialize");
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

/// Fits one model and writes `report.json`, `summary.csv`, `draws.csv`,
/// `loglik.csv` and `fitted.csv` to the output directory.
pub fn cmd_fit(cfg: &FitConfig) -> Result<(FitReport, Outcome)> {
    let variant = cfg.variant()?;
    let spec = cfg.priors.apply(variant)?;
    cfg.sampler.validate()?;
    let out = cfg.out_dir()?;
    let Ingested { dataset, graph, scaling } = parse_dataset(&cfg.data_paths()?, cfg.ingest_options())?;
    let result = fit(&dataset, &graph, spec.clone(), &cfg.sampler)?;

    let observed: Vec<f64> = dataset.counts().as_slice().iter().map(|&y| y as f64).collect();
    let mse = compute_mse(&result.fitted, &observed, &vec![true; dataset.n_areas()])?;
    let parameters = parameter_rows(&result.summary);
    let convergence = Convergence::from_rows(&parameters);
    let outcome = Outcome::from_converged(convergence.converged);
    let report = FitReport {
        schema_version: FIT_REPORT_SCHEMA_VERSION,
        model: variant,
        notation: variant.notation().to_string(),
        seed: cfg.sampler.seed,
        data: DataSummary {
            n_areas: dataset.n_areas(),
            n_times: dataset.n_times(),
            covariates: dataset.covariates().names.clone(),
            scaling,
        },
        model_spec: spec,
        sampler: cfg.sampler.clone(),
        convergence,
        waic: result.waic,
        mse,
        chains: result.chain_stats.clone(),
        parameters,
        outliers: result.outliers.clone(),
        config: cfg.clone(),
    };

    create_dir(out)?;
    write_json(&out.join("report.json"), &report)?;
    write_summary_csv(&out.join("summary.csv"), &report)?;
    write_draws(out, &result)?;
    write_rows(
        &out.join("fitted.csv"),
        &["area", "time", "observed", "fitted"],
        (0..dataset.n_areas()).flat_map(|i| {
            let (n, obs, fitted) = (dataset.n_areas(), &observed, &result.fitted);
            (0..dataset.n_times()).map(move |t| {
                let cell = t * n + i;
                vec![i.to_string(), t.to_string(), obs[cell].to_string(), fitted[cell].to_string()]
            })
        }),
    )?;
    Ok((report, outcome))
}

fn write_summary_csv(path: &Path, report: &FitReport) -> Result<()> {
    write_rows(
        path,
        &["name", "mean", "sd", "q025", "q975", "rhat", "ess"],
        report.parameters.iter().map(|p| {
            vec![
                p.name.clone(),
                p.mean.to_string(),
                p.sd.to_string(),
                p.q025.to_string(),
                p.q975.to_string(),
                opt(p.rhat),
                p.ess.to_string(),
            ]
        }),
    )
}

/// `draws.csv` holds natural-scale parameters and `loglik.csv` the per-cell
/// log-likelihood, both keyed by `chain,draw`.
fn write_draws(out: &Path, result: &FitResult) -> Result<()> {
    let mut header = vec!["chain".to_string(), "draw".to_string()];
    header.extend(result.parameter_names.iter().cloned());
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let keyed = result
        .draws
        .iter()
        .enumerate()
        .flat_map(|(c, chain)| chain.iter().enumerate().map(move |(s, d)| (c, s, d)));
    write_rows(
        &out.join("draws.csv"),
        &header,
        keyed.clone().map(|(c, s, d)| {
            [c.to_string(), s.to_string()]
                .into_iter()
                .chain(d.iter().map(f64::to_string))
                .collect::<Vec<_>>()
        }),
    )?;

    let cells = result.fitted.len();
    let mut header = vec!["chain".to_string(), "draw".to_string()];
    header.extend((0..cells).map(|k| format!("cell{k}")));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    write_rows(
        &out.join("loglik.csv"),
        &header,
        keyed.zip(&result.pointwise_loglik).map(|((c, s, _), ll)| {
            [c.to_string(), s.to_string()]
                .into_iter()
                .chain(ll.iter().map(f64::to_string))
                .collect::<Vec<_>>()
        }),
    )
}

/// Truth sidecar written next to each simulated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub replicate: usize,
    pub parameters: TrueParameters,
    pub offsets: Vec<f64>,
    pub kappa: Option<Vec<f64>>,
    /// Latent effects as `b[area][time]`, after contamination.
    pub b: Vec<Vec<f64>>,
    pub contaminated_areas: Vec<usize>,
    /// `r[area][time]`: whether the cell was inflated.
    pub contaminated_cells: Option<Vec<Vec<bool>>>,
    /// `c[area][time]`: the inflation added.
    pub inflation: Option<Vec<Vec<f64>>>,
    pub column_max: Option<Vec<f64>>,
}

impl Truth {
    pub fn new(scenario: &SimulationScenario, d: &SimulatedDataset) -> Self {
        let c = d.contamination.as_ref();
        Truth {
            replicate: d.replicate,
            parameters: scenario.truth.clone(),
            offsets: d.offsets.clone(),
            kappa: d.kappa.clone(),
            b: d.b.rows(),
            contaminated_areas: c.map_or_else(Vec::new, |c| c.targets.clone()),
            contaminated_cells: c.map(|c| c.r.rows()),
            inflation: c.map(|c| c.c.rows()),
            column_max: c.map(|c| c.column_max.clone()),
        }
    }
}

pub fn dataset_file(r: usize) -> String {
    format!("replicate_{r:03}_counts.csv")
}

pub fn truth_file(r: usize) -> String {
    format!("replicate_{r:03}_truth.json")
}

/// Writes `adjacency.csv` plus one counts CSV and one truth JSON per
/// replicate. Returns the paths written.
pub fn cmd_simulate(scenario_path: &Path, out: &Path) -> Result<Vec<PathBuf>> {
    let scenario: SimulationScenario = load_json(scenario_path)?;
    let graph = scenario.validate()?;
    let datasets = scenario.generate()?;
    create_dir(out)?;
    let mut written = vec![out.join("adjacency.csv")];
    write_adjacency(&written[0], &graph)?;
    for d in &datasets {
        let counts = out.join(dataset_file(d.replicate));
        write_counts(&counts, &d.counts, &d.offsets)?;
        let truth = out.join(truth_file(d.replicate));
        write_json(&truth, &Truth::new(&scenario, d))?;
        written.extend([counts, truth]);
    }
    Ok(written)
}

/// Runs a study and writes `study.json`, `study_rows.csv`,
/// `study_summary.csv`, `study_detection.csv` and `study_areas.csv`.
pub fn cmd_study(cfg: &StudyConfig) -> Result<(StudyReport, Outcome)> {
    let scenario: SimulationScenario = load_json(cfg.scenario_path()?)?;
    let models = cfg.variants()?;
    let out = cfg.out_dir()?;
    let report = run_study(&scenario, &models, &cfg.sampler)?;
    create_dir(out)?;
    write_json(&out.join("study.json"), &report)?;
    write_study_csvs(out, &report)?;
    let outcome = Outcome::from_converged(report.rows.iter().all(StudyRow::converged));
    Ok((report, outcome))
}

pub fn write_study_csvs(out: &Path, report: &StudyReport) -> Result<()> {
    write_rows(
        &out.join("study_rows.csv"),
        &[
            "replicate",
            "model",
            "status",
            "max_rhat",
            "divergences",
            "waic",
            "p_w",
            "mse_contaminated",
            "mse_clean",
            "mse_overall",
            "sensitivity",
            "specificity",
            "flagged",
        ],
        report.rows.iter().map(|r| {
            let status = serde_json::to_value(&r.status).expect("status serializes");
            vec![
                r.replicate.to_string(),
                r.model.tag().to_string(),
                status["status"].as_str().unwrap_or_default().to_string(),
                opt(r.max_rhat),
                r.divergences.map_or_else(String::new, |d| d.to_string()),
                opt(r.waic),
                opt(r.p_w),
                opt(r.mse_contaminated),
                opt(r.mse_clean),
                opt(r.mse_overall),
                opt(r.detection.as_ref().and_then(|d| d.sensitivity)),
                opt(r.detection.as_ref().and_then(|d| d.specificity)),
                r.flagged.as_ref().map_or_else(String::new, |f| {
                    f.iter().map(usize::to_string).collect::<Vec<_>>().join(";")
                }),
            ]
        }),
    )?;

    write_rows(
        &out.join("study_summary.csv"),
        &[
            "model",
            "converged",
            "not_converged",
            "failed",
            "waic",
            "p_w",
            "mse_contaminated",
            "mse_clean",
            "mse_overall",
            "sensitivity",
            "specificity",
        ],
        report.aggregates.iter().map(|a| {
            vec![
                a.model.tag().to_string(),
                a.converged.to_string(),
                a.not_converged.to_string(),
                a.failed.to_string(),
                opt(a.waic),
                opt(a.p_w),
                opt(a.mse_contaminated),
                opt(a.mse_clean),
                opt(a.mse_overall),
                opt(a.sensitivity),
                opt(a.specificity),
            ]
        }),
    )?;

    // Pooled sensitivity per offset category, then overall specificity.
    let mut header = vec!["model".to_string()];
    header.extend(OffsetCategory::ALL.iter().map(|c| format!("sensitivity {}", c.label())));
    header.push("specificity".into());
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    write_rows(
        &out.join("study_detection.csv"),
        &header,
        report.aggregates.iter().filter_map(|a| {
            let d = a.pooled_detection.as_ref()?;
            let mut row = vec![a.model.tag().to_string()];
            row.extend(
                OffsetCategory::ALL
                    .iter()
                    .map(|c| opt(d.by_category.get(c.label()).and_then(|k| k.sensitivity()))),
            );
            row.push(opt(d.specificity));
            Some(row)
        }),
    )?;

    let kappa_models: Vec<_> = report
        .models
        .iter()
        .copied()
        .filter(|m| ModelSpec::new(*m).has_kappa())
        .collect();
    let mut header = vec!["area", "offset", "category", "contaminated"];
    header.extend(kappa_models.iter().map(|m| m.tag()));
    write_rows(
        &out.join("study_areas.csv"),
        &header,
        report.areas.iter().map(|a| {
            let mut row = vec![
                a.area.to_string(),
                a.offset.to_string(),
                a.category.clone(),
                a.contaminated.to_string(),
            ];
            row.extend(kappa_models.iter().map(|m| opt(a.frequency.get(m).copied())));
            row
        }),
    )
}

/// Parses a `chain,draw,...` CSV into `chains[c][s][k]` plus the value
/// column names.
#[allow(clippy::type_complexity)]
fn read_keyed_draws(path: &Path) -> Result<(Vec<String>, Vec<Vec<Vec<f64>>>)> {
    let file = fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut reader = csv::Reader::from_reader(file);
    let headers = reader.headers().map_err(|e| CliError::csv(path, e))?.clone();
    let name = path.display().to_string();
    if headers.get(0) != Some("chain") || headers.get(1) != Some("draw") {
        return Err(CliError::MissingColumn {
            file: name,
            column: "chain,draw".into(),
        });
    }
    let names: Vec<String> = headers.iter().skip(2).map(str::to_string).collect();
    let mut chains: BTreeMap<usize, Vec<Vec<f64>>> = BTreeMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| CliError::csv(path, e))?;
        let line = record.position().map_or(0, |p| p.line());
        let bad = |what: &str| CliError::InvalidValue {
            file: name.clone(),
            line,
            message: format!("unparseable {what}"),
        };
        let chain: usize = record[0].parse().map_err(|_| bad("chain"))?;
        let values = record
            .iter()
            .skip(2)
            .map(|f| f.parse::<f64>().map_err(|_| bad("value")))
            .collect::<Result<Vec<_>>>()?;
        chains.entry(chain).or_default().push(values);
    }
    Ok((names, chains.into_values().collect()))
}

/// Recomputes R̂, ESS, WAIC and outlier flags from the files `fit` wrote and
/// writes `diagnostics.json` to `out` (default: the draws directory).
pub fn cmd_diagnose(dir: &Path, out: Option<&Path>) -> Result<(DiagnoseReport, Outcome)> {
    let (names, chains) = read_keyed_draws(&dir.join("draws.csv"))?;
    let summary = summarize(&names, &chains)?;
    let loglik_path = dir.join("loglik.csv");
    let waic = if loglik_path.exists() {
        let (_, ll) = read_keyed_draws(&loglik_path)?;
        let pooled: Vec<Vec<f64>> = ll.into_iter().flatten().collect();
        Some(compute_waic(&pooled)?)
    } else {
        None
    };
    let kappa: Vec<usize> = names
        .iter()
        .enumerate()
        .filter_map(|(k, n)| n.starts_with("kappa[").then_some(k))
        .collect();
    let outliers = if kappa.is_empty() {
        None
    } else {
        let draws: Vec<Vec<f64>> = chains
            .iter()
            .flatten()
            .map(|d| kappa.iter().map(|&k| d[k]).collect())
            .collect();
        Some(detect_outliers(&draws)?)
    };
    let parameters = parameter_rows(&summary);
    let convergence = Convergence::from_rows(&parameters);
    let outcome = Outcome::from_converged(convergence.converged);
    let report = DiagnoseReport {
        schema_version: FIT_REPORT_SCHEMA_VERSION,
        chains: chains.len(),
        draws_per_chain: chains.iter().map(Vec::len).collect(),
        convergence,
        waic,
        parameters,
        outliers,
    };
    let out = out.unwrap_or(dir);
    create_dir(out)?;
    write_json(&out.join("diagnostics.json"), &report)?;
    Ok((report, outcome))
}

/// Returns the dataset paths `cmd_simulate` wrote for replicate `r`, for
/// feeding back into `fit`.
pub fn simulated_paths(dir: &Path, r: usize) -> crate::ingest::DataPaths {
    crate::ingest::DataPaths {
        counts: dir.join(dataset_file(r)),
        adjacency: dir.join("adjacency.csv"),
        covariates: None,
        population: None,
    }
}
