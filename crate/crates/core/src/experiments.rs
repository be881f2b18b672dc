//! Monte Carlo harness for the search-accuracy and estimation studies.
//!
//! Trials run in parallel on the current rayon pool and are folded in trial
//! order, so reports do not depend on the number of threads.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::citest::LrtBackend;
use crate::error::{Error, Result};
use crate::estimate::{
    baseline_ignore_missingness, baseline_wrong_adjustment, estimate_ace, ClipBounds,
    EstimateOptions, FittedEstimate, Method,
};
use crate::search::{search_with, SearchOptions, SearchOutcome, SearchStatus};
use crate::shadow::{HMode, SolverOptions};
use crate::simulate::{default_config, generate, simulation_oracle, true_ace, DgpConfig, GroundTruth, Scenario};

pub const DEFAULT_SAMPLE_SIZES: [usize; 4] = [500, 2500, 5000, 10_000];

/// Set the search must return on a positive trial.
pub const CORRECT_SET: [&str; 3] = ["W2", "W3", "W4"];

/// Stream used for the negative-scenario coin.
const STREAM_SCENARIO: u64 = 6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchExperimentConfig {
    pub sample_sizes: Vec<usize>,
    pub trials: usize,
    pub alphas: Vec<f64>,
    pub seed: u64,
    /// Use d-separation in the generating graph instead of data.
    pub oracle: bool,
    pub max_subset_size: Option<usize>,
    /// Coefficient of A in the response model for the AddAtoRy negatives.
    pub add_a_coef: f64,
    pub dgp: DgpConfig,
}

impl Default for SearchExperimentConfig {
    fn default() -> Self {
        SearchExperimentConfig {
            sample_sizes: DEFAULT_SAMPLE_SIZES.to_vec(),
            trials: 200,
            alphas: vec![0.05],
            seed: 0,
            oracle: false,
            max_subset_size: None,
            add_a_coef: 1.5,
            dgp: default_config(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchTrial {
    pub sample_size: usize,
    pub alpha: f64,
    pub trial: usize,
    pub seed: u64,
    pub positive: bool,
    pub scenario: Scenario,
    pub status: Option<SearchStatus>,
    pub witness: Option<String>,
    pub adjustment_set: Option<Vec<String>>,
    pub tests_run: usize,
    /// Whether the trial was classified correctly (TP or TN).
    pub correct: bool,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchCell {
    pub sample_size: usize,
    pub alpha: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub trials_positive: usize,
    pub trials_negative: usize,
    pub tp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
    pub fp: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchExperimentReport {
    pub config: SearchExperimentConfig,
    pub cells: Vec<SearchCell>,
    pub trials: Vec<SearchTrial>,
}

impl SearchExperimentReport {
    pub fn cell(&self, sample_size: usize, alpha: f64) -> Option<&SearchCell> {
        self.cells
            .iter()
            .find(|c| c.sample_size == sample_size && c.alpha == alpha)
    }

    pub fn summary_csv(&self) -> String {
        let mut out = String::from(
            "sample_size,alpha,sensitivity,specificity,trials_positive,trials_negative,tp,fn,tn,fp\n",
        );
        for c in &self.cells {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                c.sample_size,
                c.alpha,
                c.sensitivity,
                c.specificity,
                c.trials_positive,
                c.trials_negative,
                c.tp,
                c.fn_,
                c.tn,
                c.fp
            );
        }
        out
    }

    pub fn trials_csv(&self) -> String {
        let mut out = String::from(
            "sample_size,alpha,trial,seed,positive,scenario,status,witness,adjustment_set,tests_run,correct,error\n",
        );
        for t in &self.trials {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                t.sample_size,
                t.alpha,
                t.trial,
                t.seed,
                t.positive,
                t.scenario,
                t.status.map(|s| format!("{s:?}")).unwrap_or_default(),
                t.witness.as_deref().unwrap_or(""),
                t.adjustment_set.as_ref().map(|z| z.join(" ")).unwrap_or_default(),
                t.tests_run,
                t.correct,
                csv_field(t.error.as_deref().unwrap_or(""))
            );
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    /// Writes `search_summary.csv`, `search_trials.csv` and `search_report.json`.
    pub fn write_to_dir(&self, dir: &Path) -> Result<()> {
        write_files(
            dir,
            &[
                ("search_summary.csv", self.summary_csv()),
                ("search_trials.csv", self.trials_csv()),
                ("search_report.json", self.to_json()),
            ],
        )
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}

fn write_files(dir: &Path, files: &[(&str, String)]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (name, contents) in files {
        let path = dir.join(name);
        std::fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

fn validate_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("alpha must lie in (0, 1), got {alpha}")))
    }
}

/// Seed of a trial. Negatives are offset by `trials`, so the two streams
/// never share a seed within one run.
pub fn trial_seed(base: u64, trial: usize, positive: bool, trials: usize) -> u64 {
    let offset = if positive { trial } else { trials + trial };
    base.wrapping_add(offset as u64)
}

/// Scenario of a negative trial: AddAtoRy or HideW4 with equal chance.
pub fn negative_scenario(seed: u64, add_a_coef: f64) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(STREAM_SCENARIO);
    if rng.random::<bool>() {
        Scenario::AddAtoRy(add_a_coef)
    } else {
        Scenario::HideW4
    }
}

fn is_correct_set(z: &[String]) -> bool {
    let got: BTreeSet<&str> = z.iter().map(String::as_str).collect();
    got == CORRECT_SET.into_iter().collect()
}

fn run_search(
    cfg: &SearchExperimentConfig,
    ds: Option<&crate::data::Dataset>,
    scenario: Scenario,
    alpha: f64,
) -> Result<SearchOutcome> {
    let opts = SearchOptions {
        max_subset_size: cfg.max_subset_size,
        parallel: false,
    };
    match ds {
        Some(ds) => search_with(&LrtBackend::new(ds, alpha)?, opts),
        None => search_with(&simulation_oracle(scenario, alpha), opts),
    }
}

fn search_trials(
    cfg: &SearchExperimentConfig,
    sample_size: usize,
    trial: usize,
    positive: bool,
) -> Vec<SearchTrial> {
    let seed = trial_seed(cfg.seed, trial, positive, cfg.trials);
    let scenario = if positive {
        Scenario::Base
    } else {
        negative_scenario(seed, cfg.add_a_coef)
    };
    let dgp = cfg
        .dgp
        .clone()
        .with_n(sample_size)
        .with_seed(seed)
        .with_scenario(scenario);
    let data = if cfg.oracle { None } else { Some(generate(&dgp)) };

    cfg.alphas
        .iter()
        .map(|&alpha| {
            let outcome = match &data {
                Some(Ok(ds)) => run_search(cfg, Some(ds), scenario, alpha),
                Some(Err(e)) => Err(Error::Config(e.to_string())),
                None => run_search(cfg, None, scenario, alpha),
            };
            let mut t = SearchTrial {
                sample_size,
                alpha,
                trial,
                seed,
                positive,
                scenario,
                status: None,
                witness: None,
                adjustment_set: None,
                tests_run: 0,
                correct: false,
                error: None,
            };
            match outcome {
                Ok(o) => {
                    let found = o.status == SearchStatus::Found;
                    t.correct = if positive {
                        found && o.adjustment_set.as_deref().is_some_and(is_correct_set)
                    } else {
                        !found
                    };
                    t.status = Some(o.status);
                    t.witness = o.witness;
                    t.adjustment_set = o.adjustment_set;
                    t.tests_run = o.tests_run;
                }
                // an error counts against the trial: FN if positive, FP if negative
                Err(e) => t.error = Some(e.to_string()),
            }
            t
        })
        .collect()
}

pub fn run_search_experiment(cfg: &SearchExperimentConfig) -> Result<SearchExperimentReport> {
    if cfg.trials == 0 {
        return Err(Error::Config("trials must be at least 1".into()));
    }
    if cfg.alphas.is_empty() || cfg.sample_sizes.is_empty() {
        return Err(Error::Config("need at least one alpha and one sample size".into()));
    }
    for &alpha in &cfg.alphas {
        validate_alpha(alpha)?;
    }

    let jobs: Vec<(usize, usize, bool)> = cfg
        .sample_sizes
        .iter()
        .flat_map(|&n| {
            [true, false]
                .into_iter()
                .flat_map(move |pos| (0..cfg.trials).map(move |t| (n, t, pos)))
        })
        .collect();
    let per_job: Vec<Vec<SearchTrial>> = jobs
        .par_iter()
        .map(|&(n, t, pos)| search_trials(cfg, n, t, pos))
        .collect();

    // rows ordered by sample size, alpha, then positives before negatives
    let mut trials = Vec::with_capacity(per_job.len() * cfg.alphas.len());
    for &n in &cfg.sample_sizes {
        for ai in 0..cfg.alphas.len() {
            for (job, rows) in jobs.iter().zip(&per_job) {
                if job.0 == n {
                    trials.push(rows[ai].clone());
                }
            }
        }
    }

    let mut cells = Vec::new();
    for &n in &cfg.sample_sizes {
        for &alpha in &cfg.alphas {
            let rows = trials.iter().filter(|t| t.sample_size == n && t.alpha == alpha);
            let (mut tp, mut fn_, mut tn, mut fp) = (0, 0, 0, 0);
            for t in rows {
                match (t.positive, t.correct) {
                    (true, true) => tp += 1,
                    (true, false) => fn_ += 1,
                    (false, true) => tn += 1,
                    (false, false) => fp += 1,
                }
            }
            cells.push(SearchCell {
                sample_size: n,
                alpha,
                sensitivity: tp as f64 / (tp + fn_) as f64,
                specificity: tn as f64 / (tn + fp) as f64,
                trials_positive: tp + fn_,
                trials_negative: tn + fp,
                tp,
                fn_,
                tn,
                fp,
            });
        }
    }
    Ok(SearchExperimentReport {
        config: cfg.clone(),
        cells,
        trials,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimationExperimentConfig {
    pub sample_sizes: Vec<usize>,
    pub trials: usize,
    pub alpha: f64,
    pub methods: Vec<Method>,
    pub seed: u64,
    pub max_subset_size: Option<usize>,
    pub h_mode: HMode,
    pub clip: ClipBounds,
    /// Counterfactual draws for the ground truth.
    pub n_oracle: usize,
    pub dgp: DgpConfig,
}

impl Default for EstimationExperimentConfig {
    fn default() -> Self {
        EstimationExperimentConfig {
            sample_sizes: DEFAULT_SAMPLE_SIZES.to_vec(),
            trials: 200,
            alpha: 0.05,
            methods: Method::ALL.to_vec(),
            seed: 0,
            max_subset_size: None,
            h_mode: HMode::PaperMean,
            clip: ClipBounds::default(),
            n_oracle: 1_000_000,
            dgp: default_config(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimationTrial {
    pub sample_size: usize,
    pub trial: usize,
    pub seed: u64,
    pub method: Method,
    pub adjustment_set: Option<Vec<String>>,
    pub ace: Option<f64>,
    pub mean_treated: Option<f64>,
    pub mean_control: Option<f64>,
    pub gamma: Option<f64>,
    pub converged: Option<bool>,
    pub clipped_fraction: Option<f64>,
    /// Why no estimate was produced.
    pub note: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quantiles {
    pub min: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub max: f64,
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Some(quantile(&v, 0.5))
}

impl Quantiles {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        Some(Quantiles {
            min: v[0],
            q25: quantile(&v, 0.25),
            median: quantile(&v, 0.5),
            q75: quantile(&v, 0.75),
            max: v[v.len() - 1],
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimationCell {
    pub sample_size: usize,
    pub method: Method,
    /// One entry per trial; `None` where the method produced no estimate.
    pub estimates: Vec<Option<f64>>,
    pub n_missing: usize,
    pub quantiles: Option<Quantiles>,
    pub median_abs_error: Option<f64>,
}

impl EstimationCell {
    pub fn present(&self) -> Vec<f64> {
        self.estimates.iter().flatten().copied().collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimationExperimentReport {
    pub config: EstimationExperimentConfig,
    pub ground_truth: GroundTruth,
    pub cells: Vec<EstimationCell>,
    pub trials: Vec<EstimationTrial>,
}

impl EstimationExperimentReport {
    pub fn cell(&self, sample_size: usize, method: Method) -> Option<&EstimationCell> {
        self.cells
            .iter()
            .find(|c| c.sample_size == sample_size && c.method == method)
    }

    pub fn summary_csv(&self) -> String {
        let mut out = String::from(
            "sample_size,method,ground_truth,trials,n_missing,min,q25,median,q75,max,median_abs_error\n",
        );
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for c in &self.cells {
            let q = c.quantiles;
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{}",
                c.sample_size,
                c.method,
                self.ground_truth.ace,
                c.estimates.len(),
                c.n_missing,
                opt(q.map(|q| q.min)),
                opt(q.map(|q| q.q25)),
                opt(q.map(|q| q.median)),
                opt(q.map(|q| q.q75)),
                opt(q.map(|q| q.max)),
                opt(c.median_abs_error)
            );
        }
        out
    }

    pub fn trials_csv(&self) -> String {
        let mut out = String::from(
            "sample_size,trial,seed,method,adjustment_set,ace,mean_treated,mean_control,gamma,converged,clipped_fraction,note\n",
        );
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for t in &self.trials {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                t.sample_size,
                t.trial,
                t.seed,
                t.method,
                t.adjustment_set.as_ref().map(|z| z.join(" ")).unwrap_or_default(),
                opt(t.ace),
                opt(t.mean_treated),
                opt(t.mean_control),
                opt(t.gamma),
                t.converged.map(|c| c.to_string()).unwrap_or_default(),
                opt(t.clipped_fraction),
                csv_field(t.note.as_deref().unwrap_or(""))
            );
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    /// Writes `estimate_summary.csv`, `estimate_trials.csv` and
    /// `estimate_report.json`.
    pub fn write_to_dir(&self, dir: &Path) -> Result<()> {
        write_files(
            dir,
            &[
                ("estimate_summary.csv", self.summary_csv()),
                ("estimate_trials.csv", self.trials_csv()),
                ("estimate_report.json", self.to_json()),
            ],
        )
    }
}

fn estimation_row(
    sample_size: usize,
    trial: usize,
    seed: u64,
    method: Method,
    z: Option<Vec<String>>,
    fitted: Result<FittedEstimate>,
) -> EstimationTrial {
    let mut row = EstimationTrial {
        sample_size,
        trial,
        seed,
        method,
        adjustment_set: z,
        ace: None,
        mean_treated: None,
        mean_control: None,
        gamma: None,
        converged: None,
        clipped_fraction: None,
        note: None,
    };
    match fitted {
        Ok(f) => {
            row.ace = Some(f.estimate.ace);
            row.mean_treated = Some(f.estimate.mean_treated);
            row.mean_control = Some(f.estimate.mean_control);
            row.clipped_fraction = Some(f.estimate.clipped_fraction);
            if let Some(m) = &f.response_model {
                row.gamma = Some(m.gamma);
                row.converged = Some(m.converged);
            }
        }
        Err(e) => row.note = Some(e.to_string()),
    }
    row
}

fn estimation_trial(
    cfg: &EstimationExperimentConfig,
    oracle_set: &[String],
    sample_size: usize,
    trial: usize,
) -> Vec<EstimationTrial> {
    let seed = trial_seed(cfg.seed, trial, true, cfg.trials);
    let dgp = cfg.dgp.clone().with_n(sample_size).with_seed(seed).with_scenario(Scenario::Base);
    let opts = EstimateOptions {
        clip: cfg.clip,
        solver: SolverOptions {
            h_mode: cfg.h_mode,
            ..SolverOptions::default()
        },
    };
    let ds = match generate(&dgp) {
        Ok(ds) => ds,
        Err(e) => {
            return cfg
                .methods
                .iter()
                .map(|&m| estimation_row(sample_size, trial, seed, m, None, Err(Error::Config(e.to_string()))))
                .collect()
        }
    };
    cfg.methods
        .iter()
        .map(|&method| match method {
            Method::Full => {
                let searched = LrtBackend::new(&ds, cfg.alpha).and_then(|b| {
                    search_with(
                        &b,
                        SearchOptions {
                            max_subset_size: cfg.max_subset_size,
                            parallel: false,
                        },
                    )
                });
                match searched {
                    Ok(o) if o.status == SearchStatus::Found => {
                        let z = o.adjustment_set.expect("found sets are present");
                        let fitted = estimate_ace(&ds, &z, &opts, method);
                        estimation_row(sample_size, trial, seed, method, Some(z), fitted)
                    }
                    Ok(o) => estimation_row(
                        sample_size,
                        trial,
                        seed,
                        method,
                        None,
                        Err(Error::Config(format!("search status {:?}", o.status))),
                    ),
                    Err(e) => estimation_row(sample_size, trial, seed, method, None, Err(e)),
                }
            }
            Method::OracleSearch => {
                let fitted = estimate_ace(&ds, oracle_set, &opts, method);
                estimation_row(sample_size, trial, seed, method, Some(oracle_set.to_vec()), fitted)
            }
            Method::IgnoreMissingness => {
                let fitted = baseline_ignore_missingness(&ds, oracle_set, cfg.clip);
                estimation_row(sample_size, trial, seed, method, Some(oracle_set.to_vec()), fitted)
            }
            Method::WrongAdjustment => {
                let fitted = baseline_wrong_adjustment(&ds, &opts);
                let z = crate::estimate::WRONG_ADJUSTMENT.iter().map(|s| s.to_string()).collect();
                estimation_row(sample_size, trial, seed, method, Some(z), fitted)
            }
        })
        .collect()
}

pub fn run_estimation_experiment(cfg: &EstimationExperimentConfig) -> Result<EstimationExperimentReport> {
    if cfg.trials == 0 {
        return Err(Error::Config("trials must be at least 1".into()));
    }
    if cfg.methods.is_empty() || cfg.sample_sizes.is_empty() {
        return Err(Error::Config("need at least one method and one sample size".into()));
    }
    validate_alpha(cfg.alpha)?;
    let mut methods = cfg.methods.clone();
    methods.sort();
    methods.dedup();
    let cfg = EstimationExperimentConfig {
        methods,
        ..cfg.clone()
    };

    let oracle = search_with(&simulation_oracle(Scenario::Base, cfg.alpha), SearchOptions::default())?;
    let oracle_set = oracle
        .adjustment_set
        .ok_or_else(|| Error::Config("oracle search found no adjustment set".into()))?;
    let ground_truth = true_ace(&cfg.dgp.clone().with_seed(cfg.seed), cfg.n_oracle)?;

    let jobs: Vec<(usize, usize)> = cfg
        .sample_sizes
        .iter()
        .flat_map(|&n| (0..cfg.trials).map(move |t| (n, t)))
        .collect();
    let per_job: Vec<Vec<EstimationTrial>> = jobs
        .par_iter()
        .map(|&(n, t)| estimation_trial(&cfg, &oracle_set, n, t))
        .collect();
    let trials: Vec<EstimationTrial> = per_job.into_iter().flatten().collect();

    let mut cells = Vec::new();
    for &n in &cfg.sample_sizes {
        for &method in &cfg.methods {
            let estimates: Vec<Option<f64>> = trials
                .iter()
                .filter(|t| t.sample_size == n && t.method == method)
                .map(|t| t.ace)
                .collect();
            let present: Vec<f64> = estimates.iter().flatten().copied().collect();
            let errors: Vec<f64> = present.iter().map(|e| (e - ground_truth.ace).abs()).collect();
            cells.push(EstimationCell {
                sample_size: n,
                method,
                n_missing: estimates.len() - present.len(),
                quantiles: Quantiles::of(&present),
                median_abs_error: median(&errors),
                estimates,
            });
        }
    }
    Ok(EstimationExperimentReport {
        config: cfg,
        ground_truth,
        cells,
        trials,
    })
}
