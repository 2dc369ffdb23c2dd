//! `itval`: fit, validate and simulate ITE prediction models from the command line.
//!
//! Exit status: 0 on success, 1 on a computation or input error, 2 on a usage error.
//! `ITVAL_THREADS` caps the worker thread count.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use itval_core::config::{parse_config, preset, Config, ModelSection};
use itval_core::data::MetricName;
use itval_core::glm::{predict_potential_risks, IteModel};
use itval_core::io::{load_trial_csv, read_model_json, write_model_json, write_predictions_csv, LoadedTrial, ModelFile, TrialSchema};
use itval_core::report::{plot_tsv, summary_tsv, estimates_tsv, to_json, Report};
use itval_core::resampling::{apparent_performance, external_validate, internal_validate, ExternalMode, ValidationPlan};
use itval_core::simulation::{performance_summary, plot_data, run_study, SimulationResult, StudyConfig};
use itval_core::{Error, Result};

#[derive(Parser)]
#[command(name = "itval", version, about = "Validate individualized treatment effect models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the ITE model and write the model and per-row predictions.
    Fit(FitArgs),
    /// Evaluate discrimination and calibration.
    Validate(ValidateArgs),
    /// Run the simulation study.
    Simulate(SimulateArgs),
    /// Rebuild summary tables from saved simulation records.
    Report(ReportArgs),
}

#[derive(Args)]
struct DataArgs {
    /// Trial CSV with a header row.
    #[arg(long)]
    data: PathBuf,
    /// TOML configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Outcome column (overrides the config).
    #[arg(long)]
    outcome: Option<String>,
    /// Treatment column (overrides the config).
    #[arg(long)]
    treatment: Option<String>,
    /// Comma-separated covariate columns (overrides the config; default: all others).
    #[arg(long, value_delimiter = ',')]
    covariates: Option<Vec<String>>,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    model_out: PathBuf,
    #[arg(long)]
    predictions_out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Apparent,
    Internal,
    External,
}

#[derive(Args)]
struct ValidateArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_enum)]
    mode: Mode,
    /// Fitted model JSON (required for external validation).
    #[arg(long)]
    model: Option<PathBuf>,
    /// Re-estimate control risk and benefit probabilities on the validation data.
    #[arg(long)]
    local_refit: bool,
    #[arg(long)]
    bootstrap: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// JSON report path.
    #[arg(long)]
    out: PathBuf,
    /// Optional TSV table path.
    #[arg(long)]
    tsv: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, default_value = "paper-desk")]
    preset: String,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    n_sim: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    sizes: Option<Vec<usize>>,
    #[arg(long)]
    population_size: Option<usize>,
    #[arg(long)]
    bootstrap: Option<usize>,
    /// Skip bootstrap internal validation.
    #[arg(long)]
    no_bootstrap: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// `records.json` written by `simulate`.
    #[arg(long)]
    records: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
}

/// Files to write once everything has been computed.
type Outputs = Vec<(PathBuf, Vec<u8>)>;

fn write_all(outputs: Outputs) -> Result<()> {
    let mut written: Vec<PathBuf> = Vec::new();
    for (path, bytes) in outputs {
        let res = path
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .map_or(Ok(()), std::fs::create_dir_all)
            .and_then(|_| std::fs::write(&path, bytes));
        if let Err(e) = res {
            for p in &written {
                let _ = std::fs::remove_file(p);
            }
            let _ = std::fs::remove_file(&path);
            return Err(Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))));
        }
        written.push(path);
    }
    Ok(())
}

fn load_config(path: Option<&Path>) -> Result<Config> {
    match path {
        Some(p) => parse_config(&std::fs::read_to_string(p)?),
        None => Ok(Config::default()),
    }
}

fn schema(args: &DataArgs, cfg: &Config) -> TrialSchema {
    let mut s = cfg.data.clone().unwrap_or_default();
    if let Some(o) = &args.outcome {
        s.outcome = o.clone();
    }
    if let Some(t) = &args.treatment {
        s.treatment = t.clone();
    }
    if let Some(c) = &args.covariates {
        s.covariates = c.clone();
    }
    s
}

fn fit_model(trial: &LoadedTrial, cfg: &Config) -> Result<ModelFile> {
    let spec = cfg.model.clone().unwrap_or_default().design(&trial.covariate_names)?;
    Ok(ModelFile {
        covariates: trial.covariate_names.clone(),
        model: IteModel::fit(&spec, &trial.data)?,
    })
}

fn fit(args: FitArgs) -> Result<Outputs> {
    let cfg = load_config(args.data.config.as_deref())?;
    let trial = load_trial_csv(&args.data.data, &schema(&args.data, &cfg))?;
    let file = fit_model(&trial, &cfg)?;
    let mut model_bytes = Vec::new();
    write_model_json(&mut model_bytes, &file)?;
    let mut out = vec![(args.model_out, model_bytes)];
    if let Some(p) = args.predictions_out {
        let preds = predict_potential_risks(&file.model, trial.data.covariates())?;
        let mut buf = Vec::new();
        write_predictions_csv(&mut buf, &preds)?;
        out.push((p, buf));
    }
    Ok(out)
}

fn validate(args: ValidateArgs) -> Result<Outputs> {
    let cfg = load_config(args.data.config.as_deref())?;
    let mut schema = schema(&args.data, &cfg);
    let model = args.model.as_deref().map(read_model_json).transpose()?;
    if let Some(m) = &model {
        // The model decides which covariates are read, in its own order.
        schema.covariates = m.covariates.clone();
    }
    let trial = load_trial_csv(&args.data.data, &schema)?;
    let mut plan: ValidationPlan = cfg.validation.clone().unwrap_or_default().plan()?;
    if let Some(b) = args.bootstrap {
        plan.bootstrap_replicates = b;
    }
    if let Some(s) = args.seed {
        plan.seed = s;
    }
    let all_metrics = MetricName::ALL.to_vec();

    let mut warnings = Vec::new();
    let estimates = match args.mode {
        Mode::Apparent => {
            let m = match model {
                Some(m) => m,
                None => fit_model(&trial, &cfg)?,
            };
            apparent_performance(&trial.data, &m.model, &all_metrics, &plan.matching, plan.repeats)?
        }
        Mode::Internal => {
            if model.is_some() {
                return Err(Error::Invalid("internal validation refits the model; omit --model".into()));
            }
            let spec = cfg.model.clone().unwrap_or(ModelSection::default()).design(&trial.covariate_names)?;
            let iv = internal_validate(&trial.data, &spec, &plan)?;
            warnings.extend(iv.warnings.iter().cloned());
            if iv.dropped > 0 {
                warnings.push(format!("{} bootstrap replicates dropped", iv.dropped));
            }
            iv.estimates
        }
        Mode::External => {
            let m = model.ok_or_else(|| Error::Invalid("external validation needs --model".into()))?;
            let mode = if args.local_refit { ExternalMode::LocalRefit } else { ExternalMode::Naive };
            let ev = external_validate(&m.model, &trial.data, mode, &all_metrics, &plan.matching, plan.repeats)?;
            warnings.extend(ev.warnings);
            ev.estimates
        }
    };
    let (n0, n1) = trial.data.arm_sizes();
    let mut report = Report::new("validate", Some(plan.seed), &(&cfg, &plan, args.local_refit))?;
    report.estimates = estimates;
    report.warnings = warnings;
    report.warnings.retain(|w| !w.is_empty());
    if n0.min(n1) < itval_core::calibration::MIN_ARM_SIZE {
        report.warnings.push(format!("small arm: {n0} controls, {n1} treated"));
    }
    let mut out = vec![(args.out, to_json(&report)?.into_bytes())];
    if let Some(p) = args.tsv {
        out.push((p, estimates_tsv(&report.estimates).into_bytes()));
    }
    Ok(out)
}

fn study_config(args: &SimulateArgs) -> Result<StudyConfig> {
    let mut c = match &args.config {
        Some(p) => match load_config(Some(p))?.simulation {
            Some(s) => s.study()?,
            None => preset(&args.preset)?,
        },
        None => preset(&args.preset)?,
    };
    if let Some(n) = args.n_sim {
        c.n_sim = n;
    }
    if let Some(s) = &args.sizes {
        c.sample_sizes = s.clone();
    }
    if let Some(n) = args.population_size {
        c.development.population_size = n;
        c.external.population_size = n;
    }
    if let Some(b) = args.bootstrap {
        c.bootstrap_replicates = b;
    }
    if args.no_bootstrap {
        c.bootstrap = false;
    }
    if let Some(s) = args.seed {
        c.seed = s;
    }
    c.validate()?;
    Ok(c)
}

fn simulation_outputs(result: &SimulationResult, dir: &Path, with_records: bool) -> Result<Outputs> {
    let summary = performance_summary(&result.records);
    let mut report = Report::new("simulate", Some(result.config.seed), &result.config)?;
    report.summary = summary.clone();
    report.failures = result.failures.clone();
    if !result.failures.is_empty() {
        report.warnings.push(format!("{} runs failed and were excluded", result.failures.len()));
    }
    let mut out = Vec::new();
    if with_records {
        out.push((dir.join("records.json"), serde_json::to_vec(result)?));
    }
    out.push((dir.join("report.json"), to_json(&report)?.into_bytes()));
    out.push((dir.join("summary.tsv"), summary_tsv(&summary).into_bytes()));
    out.push((dir.join("plot_data.tsv"), plot_tsv(&plot_data(&summary)).into_bytes()));
    Ok(out)
}

fn simulate(args: SimulateArgs) -> Result<Outputs> {
    let cfg = study_config(&args)?;
    let result = run_study(&cfg)?;
    simulation_outputs(&result, &args.out_dir, true)
}

fn report(args: ReportArgs) -> Result<Outputs> {
    let result: SimulationResult = serde_json::from_slice(&std::fs::read(&args.records)?)?;
    simulation_outputs(&result, &args.out_dir, false)
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("ITVAL_THREADS") {
        let n: usize = v
            .parse()
            .map_err(|_| Error::Invalid(format!("ITVAL_THREADS must be a positive integer, got {v:?}")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Invalid(e.to_string()))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = configure_threads().and_then(|_| match cli.command {
        Command::Fit(a) => fit(a),
        Command::Validate(a) => validate(a),
        Command::Simulate(a) => simulate(a),
        Command::Report(a) => report(a),
    });
    match res.and_then(write_all) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
