use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use heavyrush_cli::commands::{cmd_diagnose, cmd_fit, cmd_simulate, cmd_study, Outcome};
use heavyrush_cli::config::{load_json, FitConfig, SamplerOverrides, StudyConfig};
use heavyrush_cli::CliError;

/// Spatio-temporal disease mapping with outlier-robust area scales.
#[derive(Parser)]
#[command(name = "heavyrush", version)]
struct Cli {
    /// Worker threads for chains and replicates (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit one model to a count panel.
    Fit(FitArgs),
    /// Generate synthetic datasets from a scenario file.
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulate, fit several models to every replicate and score them.
    Study(StudyArgs),
    /// Recompute R̂, ESS, WAIC and outlier flags from a fit's output directory.
    Diagnose {
        #[arg(long)]
        draws: PathBuf,
        /// Where to write diagnostics.json (default: the draws directory).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct SamplerArgs {
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    burnin: Option<usize>,
    #[arg(long)]
    thin: Option<usize>,
    #[arg(long)]
    chains: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Leapfrog steps per iteration.
    #[arg(long)]
    leapfrog: Option<usize>,
    #[arg(long)]
    target_accept: Option<f64>,
    /// Fixed step size; disables step-size adaptation.
    #[arg(long)]
    step_size: Option<f64>,
    /// Keep a unit mass matrix instead of adapting a diagonal one.
    #[arg(long)]
    unit_mass: bool,
}

impl SamplerArgs {
    fn overrides(&self) -> SamplerOverrides {
        SamplerOverrides {
            iterations: self.iters,
            burn_in: self.burnin,
            thin: self.thin,
            chains: self.chains,
            seed: self.seed,
            leapfrog_steps: self.leapfrog,
            target_accept: self.target_accept,
            step_size: self.step_size,
            unit_mass: self.unit_mass,
        }
    }
}

#[derive(Args)]
struct FitArgs {
    /// JSON file with any of the settings below; flags win.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    counts: Option<PathBuf>,
    #[arg(long)]
    adjacency: Option<PathBuf>,
    #[arg(long)]
    covariates: Option<PathBuf>,
    #[arg(long)]
    population: Option<PathBuf>,
    /// R1, Ralpha, HR1, HRalpha, HRLPC1 or HRLPCalpha.
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Indices in the input files start at 1.
    #[arg(long)]
    one_based: bool,
    /// Use covariates as given instead of standardizing them.
    #[arg(long)]
    no_scale: bool,
    #[command(flatten)]
    sampler: SamplerArgs,
}

#[derive(Args)]
struct StudyArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Comma-separated model tags (default: all six).
    #[arg(long, value_delimiter = ',')]
    models: Option<Vec<String>>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    sampler: SamplerArgs,
}

fn fit_config(args: FitArgs) -> Result<FitConfig, CliError> {
    let mut cfg: FitConfig = match &args.config {
        Some(path) => load_json(path)?,
        None => FitConfig::default(),
    };
    let paths = [
        (&mut cfg.counts, args.counts),
        (&mut cfg.adjacency, args.adjacency),
        (&mut cfg.covariates, args.covariates),
        (&mut cfg.population, args.population),
        (&mut cfg.out, args.out),
    ];
    for (slot, value) in paths {
        if value.is_some() {
            *slot = value;
        }
    }
    if args.model.is_some() {
        cfg.model = args.model;
    }
    cfg.one_based |= args.one_based;
    if args.no_scale {
        cfg.scale_covariates = false;
    }
    args.sampler.overrides().apply(&mut cfg.sampler);
    Ok(cfg)
}

fn study_config(args: StudyArgs) -> Result<StudyConfig, CliError> {
    let mut cfg: StudyConfig = match &args.config {
        Some(path) => load_json(path)?,
        None => StudyConfig::default(),
    };
    if args.scenario.is_some() {
        cfg.scenario = args.scenario;
    }
    if args.models.is_some() {
        cfg.models = args.models;
    }
    if args.out.is_some() {
        cfg.out = args.out;
    }
    args.sampler.overrides().apply(&mut cfg.sampler);
    Ok(cfg)
}

fn run(command: Command) -> Result<Outcome, CliError> {
    match command {
        Command::Fit(args) => {
            let (report, outcome) = cmd_fit(&fit_config(args)?)?;
            eprintln!(
                "{}: WAIC {:.1}, max R̂ {}",
                report.notation,
                report.waic.waic,
                report.convergence.max_rhat.map_or("n/a".into(), |r| format!("{r:.3}"))
            );
            Ok(outcome)
        }
        Command::Simulate { scenario, out } => {
            let written = cmd_simulate(&scenario, &out)?;
            eprintln!("wrote {} files to {}", written.len(), out.display());
            Ok(Outcome::Success)
        }
        Command::Study(args) => {
            let (report, outcome) = cmd_study(&study_config(args)?)?;
            eprintln!("{} fits over {} replicates", report.rows.len(), report.scenario.replicates);
            Ok(outcome)
        }
        Command::Diagnose { draws, out } => Ok(cmd_diagnose(&draws, out.as_deref())?.1),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot start {n} threads: {e}");
            return ExitCode::from(1);
        }
    }
    match run(cli.command) {
        Ok(outcome) => {
            if outcome == Outcome::ConvergenceWarning {
                eprintln!("warning: some parameters have R̂ above 1.1");
            }
            ExitCode::from(outcome.exit_code())
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
