//! Test C1, search for (W, Z), then estimate the ACE.

use serde::{Deserialize, Serialize};

use crate::citest::{ConditionRecord, LrtBackend};
use crate::data::{Dataset, RoleMap};
use crate::error::{Error, Result};
use crate::estimate::{estimate_ace, ClipBounds, EstimateOptions, FittedEstimate, Method};
use crate::search::{search_with, SearchOptions, SearchOutcome, SearchStatus};
use crate::shadow::{HMode, SolverOptions};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub roles: RoleMap,
    pub alpha: f64,
    pub clip: ClipBounds,
    pub h_mode: HMode,
    pub max_subset_size: Option<usize>,
    pub seed: u64,
}

impl PipelineConfig {
    pub fn new(roles: RoleMap) -> Self {
        PipelineConfig {
            roles,
            alpha: 0.05,
            clip: ClipBounds::default(),
            h_mode: HMode::PaperMean,
            max_subset_size: None,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        ClipBounds::new(self.clip.lo, self.clip.hi)?;
        Ok(())
    }

    pub fn estimate_options(&self) -> EstimateOptions {
        EstimateOptions {
            clip: self.clip,
            solver: SolverOptions {
                h_mode: self.h_mode,
                ..SolverOptions::default()
            },
        }
    }
}

/// Where the pipeline stopped.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    Success,
    C1Failed,
    NotFound,
}

impl Stage {
    /// Process exit status: 0, 3 and 4. Status 1 is left for errors and 2 for
    /// usage mistakes.
    pub fn exit_code(self) -> i32 {
        match self {
            Stage::Success => 0,
            Stage::C1Failed => 3,
            Stage::NotFound => 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub config: PipelineConfig,
    pub n_rows: usize,
    pub n_observed: usize,
    pub stage: Stage,
    pub c1: ConditionRecord,
    pub search: SearchOutcome,
    pub estimate: Option<FittedEstimate>,
}

impl PipelineReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }
}

/// Runs the procedure on `ds`, whose roles are replaced by `config.roles`.
pub fn run_pipeline(ds: &Dataset, config: &PipelineConfig) -> Result<PipelineReport> {
    run_pipeline_with(ds, config, false)
}

/// As [`run_pipeline`]; `parallel` evaluates search candidates speculatively
/// on the rayon pool without changing the report.
pub fn run_pipeline_with(ds: &Dataset, config: &PipelineConfig, parallel: bool) -> Result<PipelineReport> {
    config.validate()?;
    let ds = ds.clone().with_roles(config.roles.clone())?;
    let n_observed = ds
        .values(&config.roles.response)?
        .iter()
        .filter(|&&r| r == 1.0)
        .count();

    let backend = LrtBackend::new(&ds, config.alpha)?;
    let search = search_with(
        &backend,
        SearchOptions {
            max_subset_size: config.max_subset_size,
            parallel,
        },
    )?;
    let c1 = search.trail[0].clone();
    let (stage, estimate) = match search.status {
        SearchStatus::C1Failed => (Stage::C1Failed, None),
        SearchStatus::NotFound => (Stage::NotFound, None),
        SearchStatus::Found => {
            let z = search.adjustment_set.clone().expect("found sets are present");
            let fitted = estimate_ace(&ds, &z, &config.estimate_options(), Method::Full)?;
            (Stage::Success, Some(fitted))
        }
    };
    Ok(PipelineReport {
        config: config.clone(),
        n_rows: ds.n_rows(),
        n_observed,
        stage,
        c1,
        search,
        estimate,
    })
}
