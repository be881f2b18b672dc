//! Command-line front end. The `shadowadj` binary is a thin wrapper over
//! [`run`].
//!
//! Exit status: 0 on success, 1 on errors, 2 on usage mistakes, 3 when the
//! incentive test (C1) fails and 4 when no adjustment set is found.

use std::path::{Path, PathBuf};
use std::ffi::OsString;
use std::io::Write;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use shadowadj::data::{load_csv, oracle_sibling_path, write_csv, write_oracle_csv, Dataset, RoleMap};
use shadowadj::estimate::{
    baseline_ignore_missingness, baseline_wrong_adjustment, estimate_ace, ClipBounds, FittedEstimate, Method,
};
use shadowadj::experiments::{
    run_estimation_experiment, run_search_experiment, EstimationExperimentConfig, SearchExperimentConfig,
    DEFAULT_SAMPLE_SIZES,
};
use shadowadj::citest::LrtBackend;
use shadowadj::pipeline::{run_pipeline_with, PipelineConfig, Stage};
use shadowadj::search::{search_with, SearchOptions, SearchOutcome, SearchStatus};
use shadowadj::shadow::HMode;
use shadowadj::simulate::{default_config, generate, DgpConfig, Scenario};

const SEED_ENV: &str = "SHADOWADJ_SEED";

#[derive(Parser, Debug)]
#[command(name = "shadowadj", version, about = "Incentive-based tests and estimation under a self-censoring outcome")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Draw a dataset from the simulation model
    Simulate(SimulateArgs),
    /// Test C1 and search for a witness and adjustment set
    Search(SearchArgs),
    /// Estimate the ACE for a given adjustment set
    Estimate(EstimateArgs),
    /// Test C1, search, then estimate
    Pipeline(PipelineArgs),
    /// Monte Carlo experiments
    #[command(subcommand)]
    Experiment(ExperimentCommand),
}

#[derive(Subcommand, Debug)]
enum ExperimentCommand {
    /// Sensitivity and specificity of the adjustment-set search
    Search(ExperimentSearchArgs),
    /// ACE estimates of the full method and the baselines
    Estimate(ExperimentEstimateArgs),
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long, default_value_t = 10_000)]
    n: usize,
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    seed: u64,
    /// base, hide-w4, add-a-to-ry or add-a-to-ry=<coef>
    #[arg(long, default_value = "base")]
    scenario: Scenario,
    /// Output CSV; oracle columns go to <stem>.oracle.csv
    #[arg(long)]
    out: PathBuf,
}

/// Role and test settings shared by the data commands. Flags override the
/// config file.
#[derive(Args, Debug, Clone)]
struct DataArgs {
    /// Input CSV
    #[arg(long)]
    data: PathBuf,
    /// JSON file with any of: roles, alpha, clip, h_mode, max_subset_size, seed, missing_token
    #[arg(long)]
    config: Option<PathBuf>,
    /// Binary treatment column [default: A]
    #[arg(long)]
    treatment: Option<String>,
    /// Outcome column, blank or NA where missing [default: Y]
    #[arg(long)]
    outcome: Option<String>,
    /// Binary response indicator column [default: R]
    #[arg(long)]
    response: Option<String>,
    /// Incentive column [default: I]
    #[arg(long)]
    incentive: Option<String>,
    /// Comma-separated; defaults to every non-role column in file order
    #[arg(long, value_delimiter = ',')]
    covariates: Option<Vec<String>>,
    /// [default: 0.05]
    #[arg(long)]
    alpha: Option<f64>,
    /// Largest adjustment set tried; unbounded when absent
    #[arg(long)]
    max_subset_size: Option<usize>,
    /// Extra token read as a missing outcome, besides "" and NA
    #[arg(long)]
    missing_token: Option<String>,
    /// Report file; standard output when absent
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, env = SEED_ENV)]
    seed: Option<u64>,
}

#[derive(Args, Debug, Clone)]
struct ModelArgs {
    /// papermean or shadowa [default: papermean]
    #[arg(long)]
    h_mode: Option<HMode>,
    /// [default: 0.01]
    #[arg(long)]
    clip_lo: Option<f64>,
    /// [default: 0.99]
    #[arg(long)]
    clip_hi: Option<f64>,
}

#[derive(Args, Debug)]
struct SearchArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Worker threads for speculative candidate checks; the report does not depend on it
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args, Debug)]
struct EstimateArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    /// Comma-separated adjustment set (ignored by wrong-adjustment)
    #[arg(long, value_delimiter = ',')]
    adjustment: Vec<String>,
    /// full, ignore-missingness or wrong-adjustment
    #[arg(long, default_value = "full")]
    method: Method,
}

#[derive(Args, Debug)]
struct PipelineArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    /// Worker threads for speculative candidate checks; the report does not depend on it
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args, Debug)]
struct ExperimentCommon {
    /// Comma-separated sample sizes
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_SAMPLE_SIZES)]
    n_grid: Vec<usize>,
    #[arg(long, default_value_t = 200)]
    trials: usize,
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
    /// Largest adjustment set tried; unbounded when absent
    #[arg(long)]
    max_subset_size: Option<usize>,
    /// Worker threads; defaults to the number of logical cores
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args, Debug)]
struct ExperimentSearchArgs {
    #[command(flatten)]
    common: ExperimentCommon,
    /// Comma-separated significance levels
    #[arg(long, value_delimiter = ',', default_values_t = [0.05])]
    alpha: Vec<f64>,
    /// Use d-separation in the generating graph instead of tests
    #[arg(long)]
    oracle: bool,
}

#[derive(Args, Debug)]
struct ExperimentEstimateArgs {
    #[command(flatten)]
    common: ExperimentCommon,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Comma-separated subset of full, oracle-search, ignore-missingness, wrong-adjustment
    #[arg(long, value_delimiter = ',', default_values_t = Method::ALL)]
    methods: Vec<Method>,
    /// Include the search-free oracle method (same as listing oracle-search)
    #[arg(long)]
    oracle: bool,
    #[arg(long, default_value = "papermean")]
    h_mode: HMode,
    #[arg(long, default_value_t = 0.01)]
    clip_lo: f64,
    #[arg(long, default_value_t = 0.99)]
    clip_hi: f64,
    /// Counterfactual draws for the ground truth
    #[arg(long, default_value_t = 1_000_000)]
    n_oracle: usize,
}

/// Optional settings read from `--config`.
#[derive(Deserialize, Debug, Default)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    roles: Option<FileRoles>,
    alpha: Option<f64>,
    clip: Option<ClipBounds>,
    h_mode: Option<HMode>,
    max_subset_size: Option<usize>,
    seed: Option<u64>,
    missing_token: Option<String>,
}

#[derive(Deserialize, Debug, Default)]
#[serde(deny_unknown_fields)]
struct FileRoles {
    treatment: Option<String>,
    outcome: Option<String>,
    response: Option<String>,
    incentive: Option<String>,
    covariates: Option<Vec<String>>,
}

fn read_file_config(path: Option<&Path>) -> Result<FileConfig> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
}

/// Fully resolved settings for one data command.
struct Resolved {
    config: PipelineConfig,
    missing_token: String,
    dataset: Dataset,
}

fn resolve(data: &DataArgs, model: Option<&ModelArgs>) -> Result<Resolved> {
    let file = read_file_config(data.config.as_deref())?;
    let file_roles = file.roles.unwrap_or_default();
    let pick = |flag: &Option<String>, from_file: Option<String>, default: &str| {
        flag.clone().or(from_file).unwrap_or_else(|| default.to_owned())
    };
    let mut roles = RoleMap::new(
        pick(&data.treatment, file_roles.treatment, "A"),
        pick(&data.outcome, file_roles.outcome, "Y"),
        pick(&data.response, file_roles.response, "R"),
        pick(&data.incentive, file_roles.incentive, "I"),
        Vec::<String>::new(),
    );
    let covariates = data.covariates.clone().or(file_roles.covariates);
    roles.covariates = covariates.clone().unwrap_or_default();
    let missing_token = data
        .missing_token
        .clone()
        .or(file.missing_token)
        .unwrap_or_else(|| "NA".to_owned());

    let dataset = load_csv(&data.data, &roles, &missing_token)
        .with_context(|| format!("loading {}", data.data.display()))?;
    if covariates.is_none() {
        roles.covariates = dataset
            .columns()
            .iter()
            .filter(|c| !c.oracle && !roles.is_role_column(&c.name))
            .map(|c| c.name.clone())
            .collect();
    }

    let alpha = data.alpha.or(file.alpha).unwrap_or(0.05);
    let file_clip = file.clip.unwrap_or_default();
    let clip = ClipBounds::new(
        model.and_then(|m| m.clip_lo).unwrap_or(file_clip.lo),
        model.and_then(|m| m.clip_hi).unwrap_or(file_clip.hi),
    )
    .context("invalid key `clip`")?;
    let config = PipelineConfig {
        roles,
        alpha,
        clip,
        h_mode: model.and_then(|m| m.h_mode).or(file.h_mode).unwrap_or_default(),
        max_subset_size: data.max_subset_size.or(file.max_subset_size),
        seed: data.seed.or(file.seed).unwrap_or(0),
    };
    if !(alpha > 0.0 && alpha < 1.0) {
        bail!("invalid key `alpha`: must lie in (0, 1), got {alpha}");
    }
    let dataset = dataset
        .with_roles(config.roles.clone())
        .context("invalid key `roles`")?;
    Ok(Resolved {
        config,
        missing_token,
        dataset,
    })
}

fn emit(w: &mut dyn Write, out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, text).with_context(|| format!("writing {}", path.display())),
        None => Ok(w.write_all(text.as_bytes())?),
    }
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("reports serialize") + "\n"
}

fn search_code(status: SearchStatus) -> u8 {
    match status {
        SearchStatus::Found => 0,
        SearchStatus::C1Failed => Stage::C1Failed.exit_code() as u8,
        SearchStatus::NotFound => Stage::NotFound.exit_code() as u8,
    }
}

#[derive(Serialize)]
struct SimulateReport<'a> {
    config: &'a DgpConfig,
    data: String,
    oracle: Option<String>,
    n_rows: usize,
    n_observed: usize,
}

fn cmd_simulate(args: &SimulateArgs, w: &mut dyn Write) -> Result<u8> {
    let config = default_config()
        .with_n(args.n)
        .with_seed(args.seed)
        .with_scenario(args.scenario);
    let ds = generate(&config)?;
    write_csv(&ds, &args.out).with_context(|| format!("writing {}", args.out.display()))?;
    let oracle_path = oracle_sibling_path(&args.out);
    let wrote = write_oracle_csv(&ds, &oracle_path)?;
    let n_observed = ds.values("R")?.iter().filter(|&&r| r == 1.0).count();
    let report = SimulateReport {
        config: &config,
        data: args.out.display().to_string(),
        oracle: wrote.then(|| oracle_path.display().to_string()),
        n_rows: ds.n_rows(),
        n_observed,
    };
    w.write_all(to_json(&report).as_bytes())?;
    Ok(0)
}

#[derive(Serialize)]
struct SearchReport<'a> {
    config: &'a PipelineConfig,
    missing_token: &'a str,
    outcome: SearchOutcome,
}

fn cmd_search(args: &SearchArgs, w: &mut dyn Write) -> Result<u8> {
    let r = resolve(&args.data, None)?;
    let backend = LrtBackend::new(&r.dataset, r.config.alpha)?;
    let opts = SearchOptions {
        max_subset_size: r.config.max_subset_size,
        parallel: args.jobs != Some(1),
    };
    let outcome = pool(args.jobs)?.install(|| search_with(&backend, opts))?;
    let code = search_code(outcome.status);
    let report = SearchReport {
        config: &r.config,
        missing_token: &r.missing_token,
        outcome,
    };
    emit(w, args.data.out.as_deref(), &to_json(&report))?;
    Ok(code)
}

#[derive(Serialize)]
struct EstimateReport<'a> {
    config: &'a PipelineConfig,
    missing_token: &'a str,
    method: Method,
    adjustment: Vec<String>,
    result: FittedEstimate,
}

fn cmd_estimate(args: &EstimateArgs, w: &mut dyn Write) -> Result<u8> {
    let r = resolve(&args.data, Some(&args.model))?;
    let opts = r.config.estimate_options();
    let (adjustment, result) = match args.method {
        Method::Full | Method::OracleSearch => {
            if args.adjustment.is_empty() {
                bail!("--adjustment is required for method {}", args.method);
            }
            let fitted = estimate_ace(&r.dataset, &args.adjustment, &opts, args.method)?;
            (args.adjustment.clone(), fitted)
        }
        Method::IgnoreMissingness => {
            let fitted = baseline_ignore_missingness(&r.dataset, &args.adjustment, r.config.clip)?;
            (args.adjustment.clone(), fitted)
        }
        Method::WrongAdjustment => {
            let z = shadowadj::estimate::WRONG_ADJUSTMENT.iter().map(|s| s.to_string()).collect();
            (z, baseline_wrong_adjustment(&r.dataset, &opts)?)
        }
    };
    let report = EstimateReport {
        config: &r.config,
        missing_token: &r.missing_token,
        method: args.method,
        adjustment,
        result,
    };
    emit(w, args.data.out.as_deref(), &to_json(&report))?;
    Ok(0)
}

fn cmd_pipeline(args: &PipelineArgs, w: &mut dyn Write) -> Result<u8> {
    let r = resolve(&args.data, Some(&args.model))?;
    let parallel = args.jobs != Some(1);
    let report = pool(args.jobs)?.install(|| run_pipeline_with(&r.dataset, &r.config, parallel))?;
    emit(w, args.data.out.as_deref(), &report.to_json())?;
    Ok(report.stage.exit_code() as u8)
}

fn pool(jobs: Option<usize>) -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(j) = jobs {
        if j == 0 {
            bail!("--jobs must be at least 1");
        }
        builder = builder.num_threads(j);
    }
    builder.build().context("starting worker threads")
}

fn cmd_experiment_search(args: &ExperimentSearchArgs, w: &mut dyn Write) -> Result<u8> {
    let c = &args.common;
    let cfg = SearchExperimentConfig {
        sample_sizes: c.n_grid.clone(),
        trials: c.trials,
        alphas: args.alpha.clone(),
        seed: c.seed,
        oracle: args.oracle,
        max_subset_size: c.max_subset_size,
        ..SearchExperimentConfig::default()
    };
    let report = pool(c.jobs)?.install(|| run_search_experiment(&cfg))?;
    report.write_to_dir(&c.out_dir)?;
    w.write_all(report.summary_csv().as_bytes())?;
    Ok(0)
}

fn cmd_experiment_estimate(args: &ExperimentEstimateArgs, w: &mut dyn Write) -> Result<u8> {
    let c = &args.common;
    let mut methods = args.methods.clone();
    if args.oracle {
        methods.push(Method::OracleSearch);
    }
    let cfg = EstimationExperimentConfig {
        sample_sizes: c.n_grid.clone(),
        trials: c.trials,
        alpha: args.alpha,
        methods,
        seed: c.seed,
        max_subset_size: c.max_subset_size,
        h_mode: args.h_mode,
        clip: ClipBounds::new(args.clip_lo, args.clip_hi)?,
        n_oracle: args.n_oracle,
        ..EstimationExperimentConfig::default()
    };
    let report = pool(c.jobs)?.install(|| run_estimation_experiment(&cfg))?;
    report.write_to_dir(&c.out_dir)?;
    w.write_all(report.summary_csv().as_bytes())?;
    Ok(0)
}

/// Parses `args` (program name first) and runs the command, writing reports
/// to `w`. Returns the process exit status.
pub fn run<I, T>(args: I, w: &mut dyn Write) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // help and version land here too, with status 0
            let _ = e.print();
            return e.exit_code() as u8;
        }
    };
    let outcome = match &cli.command {
        Command::Simulate(a) => cmd_simulate(a, w),
        Command::Search(a) => cmd_search(a, w),
        Command::Estimate(a) => cmd_estimate(a, w),
        Command::Pipeline(a) => cmd_pipeline(a, w),
        Command::Experiment(ExperimentCommand::Search(a)) => cmd_experiment_search(a, w),
        Command::Experiment(ExperimentCommand::Estimate(a)) => cmd_experiment_estimate(a, w),
    };
    match outcome.and_then(|code| w.flush().map(|_| code).map_err(Into::into)) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}
