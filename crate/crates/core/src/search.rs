//! Exhaustive search for a witness W and an adjustment set **Z**.
//!
//! After C1 passes, witnesses are tried in covariate order. For each witness,
//! candidate sets drawn from the remaining covariates are tried by ascending
//! size and then lexicographically by column position. The first candidate
//! passing C2, C3 and C4 (tested in that order, stopping at the first
//! failure) is returned.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::citest::{Condition, ConditionRecord, IndependenceBackend, LrtBackend};
use crate::data::Dataset;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SearchStatus {
    Found,
    NotFound,
    C1Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchOutcome {
    pub status: SearchStatus,
    pub witness: Option<String>,
    pub adjustment_set: Option<Vec<String>>,
    /// Every test that ran, in canonical order.
    pub trail: Vec<ConditionRecord>,
    pub tests_run: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SearchOptions {
    /// Largest candidate set considered; unbounded when `None`.
    pub max_subset_size: Option<usize>,
    /// Evaluate one witness's candidates concurrently.
    pub parallel: bool,
}

/// All `size`-subsets of `items`, lexicographic in item position.
pub fn enumerate_subsets<T: Clone>(items: &[T], size: usize) -> Vec<Vec<T>> {
    if size > items.len() {
        return Vec::new();
    }
    let mut out = Vec::new();
    let mut idx: Vec<usize> = (0..size).collect();
    loop {
        out.push(idx.iter().map(|&i| items[i].clone()).collect());
        // advance the rightmost index that still has room
        let Some(pos) = (0..size).rev().find(|&i| idx[i] < items.len() - size + i) else {
            break;
        };
        idx[pos] += 1;
        for j in pos + 1..size {
            idx[j] = idx[j - 1] + 1;
        }
    }
    out
}

/// Upper bound on tests for `n_covariates` with unbounded subsets, C1 included.
pub fn worst_case_tests(n_covariates: usize) -> usize {
    n_covariates * (1usize << (n_covariates - 1)) * 3 + 1
}

/// Runs the search with likelihood-ratio tests on `ds`.
pub fn find_adjustment_set(
    ds: &Dataset,
    alpha: f64,
    max_subset_size: Option<usize>,
) -> Result<SearchOutcome> {
    let backend = LrtBackend::new(ds, alpha)?;
    search_with(
        &backend,
        SearchOptions {
            max_subset_size,
            parallel: false,
        },
    )
}

fn evaluate_candidate(
    backend: &dyn IndependenceBackend,
    witness: &str,
    z: &[String],
) -> (Vec<ConditionRecord>, bool) {
    let mut records = Vec::with_capacity(3);
    for (cond, w) in [
        (Condition::C2, None),
        (Condition::C3, Some(witness)),
        (Condition::C4, Some(witness)),
    ] {
        let rec = backend.check(cond, w, z);
        let passed = rec.passed;
        records.push(rec);
        if !passed {
            return (records, false);
        }
    }
    (records, true)
}

pub fn search_with(backend: &dyn IndependenceBackend, opts: SearchOptions) -> Result<SearchOutcome> {
    let covariates = backend.covariates().to_vec();
    if covariates.len() < 2 {
        return Err(Error::Config(format!(
            "search needs at least two covariates, got {}",
            covariates.len()
        )));
    }
    let c1 = backend.check(Condition::C1, None, &[]);
    let mut trail = vec![c1];
    if !trail[0].passed {
        return Ok(SearchOutcome {
            status: SearchStatus::C1Failed,
            witness: None,
            adjustment_set: None,
            tests_run: trail.len(),
            trail,
        });
    }

    for (wi, witness) in covariates.iter().enumerate() {
        let pool: Vec<String> = covariates
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != wi)
            .map(|(_, c)| c.clone())
            .collect();
        let largest = opts.max_subset_size.unwrap_or(pool.len()).min(pool.len());
        let candidates: Vec<Vec<String>> = (0..=largest)
            .flat_map(|size| enumerate_subsets(&pool, size))
            .collect();

        let evaluated: Vec<(Vec<ConditionRecord>, bool)> = if opts.parallel {
            candidates
                .par_iter()
                .map(|z| evaluate_candidate(backend, witness, z))
                .collect()
        } else {
            // sequential evaluation stops at the first hit
            let mut out = Vec::new();
            for z in &candidates {
                let res = evaluate_candidate(backend, witness, z);
                let hit = res.1;
                out.push(res);
                if hit {
                    break;
                }
            }
            out
        };

        for ((records, hit), z) in evaluated.into_iter().zip(&candidates) {
            trail.extend(records);
            if hit {
                return Ok(SearchOutcome {
                    status: SearchStatus::Found,
                    witness: Some(witness.clone()),
                    adjustment_set: Some(z.clone()),
                    tests_run: trail.len(),
                    trail,
                });
            }
        }
    }

    Ok(SearchOutcome {
        status: SearchStatus::NotFound,
        witness: None,
        adjustment_set: None,
        tests_run: trail.len(),
        trail,
    })
}
