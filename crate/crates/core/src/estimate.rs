//! Doubly inverse-weighted ACE estimator and the two baselines.
//!
//! For each arm `a`,
//!
//! ```text
//! Ê[Y(a)] = (1/n) Σ R · 1(A = a) · Y / (clip(p(R=1 | Y, Z)) · clip(p(A = a | Z)))
//! ```
//!
//! over all rows; rows with a missing outcome contribute zero.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::glm::{fit_glm, DesignMatrix, Family, FitOptions, GlmFit};
use crate::shadow::{or_propensity, solve_propensity, ShadowPropensityModel, SolverOptions};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    Full,
    OracleSearch,
    IgnoreMissingness,
    WrongAdjustment,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::Full,
        Method::OracleSearch,
        Method::IgnoreMissingness,
        Method::WrongAdjustment,
    ];
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{self:?}")
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        Method::ALL
            .into_iter()
            .find(|m| m.to_string().to_ascii_lowercase() == key)
            .ok_or_else(|| Error::Config(format!("unknown method `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipBounds {
    pub lo: f64,
    pub hi: f64,
}

impl Default for ClipBounds {
    fn default() -> Self {
        ClipBounds { lo: 0.01, hi: 0.99 }
    }
}

impl ClipBounds {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(0.0 < lo && lo < hi && hi < 1.0) {
            return Err(Error::Config(format!("clip bounds must satisfy 0 < lo < hi < 1, got ({lo}, {hi})")));
        }
        Ok(ClipBounds { lo, hi })
    }

    pub fn apply(&self, p: f64) -> f64 {
        clip(p, self.lo, self.hi)
    }
}

pub fn clip(p: f64, lo: f64, hi: f64) -> f64 {
    hi.min(lo.max(p))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AceEstimate {
    pub mean_treated: f64,
    pub mean_control: f64,
    pub ace: f64,
    pub n: usize,
    pub n_observed: usize,
    /// Share of the propensities entering the weights that were clipped.
    pub clipped_fraction: f64,
    pub method: Method,
}

impl AceEstimate {
    pub const CSV_HEADER: &'static str =
        "method,mean_treated,mean_control,ace,n,n_observed,clipped_fraction";

    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.method,
            self.mean_treated,
            self.mean_control,
            self.ace,
            self.n,
            self.n_observed,
            self.clipped_fraction
        )
    }
}

/// Logistic regression of the treatment on an intercept and `z`, all rows.
pub fn fit_treatment_propensity(ds: &Dataset, z: &[String]) -> Result<GlmFit> {
    let roles = ds.require_roles()?;
    let a = ds.values(&roles.treatment)?;
    if a.iter().all(|&v| v == a[0]) {
        return Err(Error::Degenerate(format!(
            "treatment `{}` is constant; its propensity is not estimable",
            roles.treatment
        )));
    }
    let cols: Vec<&str> = z.iter().map(String::as_str).collect();
    let x = DesignMatrix::from_dataset(ds, &cols)?;
    fit_glm(&a, &x, Family::Logistic, FitOptions::default())
}

/// Fitted p(A=1 | Z) on every row of `ds`.
pub fn treatment_probabilities(ds: &Dataset, treat: &GlmFit) -> Result<Vec<f64>> {
    let cols: Vec<&str> = treat.terms[1..].iter().map(String::as_str).collect();
    let x = DesignMatrix::from_dataset(ds, &cols)?;
    Ok(treat.predict(&x))
}

/// p(R=1 | Y, Z) on every row; 1 where the outcome is missing, since those
/// rows carry no weight.
pub fn response_probabilities(ds: &Dataset, shadow: &ShadowPropensityModel) -> Result<Vec<f64>> {
    let roles = ds.require_roles()?;
    let r = ds.values(&roles.response)?;
    let y = ds.values_or(&roles.outcome, shadow.y_ref)?;
    let cols: Vec<Vec<f64>> = shadow
        .adjustment
        .iter()
        .map(|c| ds.values(c))
        .collect::<Result<_>>()?;
    let mut z = vec![0.0; cols.len()];
    Ok((0..ds.n_rows())
        .map(|i| {
            if r[i] != 1.0 {
                return 1.0;
            }
            for (zj, col) in z.iter_mut().zip(&cols) {
                *zj = col[i];
            }
            or_propensity(y[i], &z, shadow)
        })
        .collect())
}

/// The weighted arm means given per-row propensities. `p_response` is only
/// read on rows with an observed outcome; `p_treated` is p(A=1 | Z). Both are
/// clipped, except that a response propensity of exactly 1 is kept as is.
pub fn ipw_from_propensities(
    ds: &Dataset,
    p_response: &[f64],
    p_treated: &[f64],
    bounds: ClipBounds,
    method: Method,
) -> Result<AceEstimate> {
    let roles = ds.require_roles()?;
    let n = ds.n_rows();
    for (name, len) in [("response propensity", p_response.len()), ("treatment propensity", p_treated.len())] {
        if len != n {
            return Err(Error::LengthMismatch {
                column: name.into(),
                got: len,
                expected: n,
            });
        }
    }
    if n == 0 {
        return Err(Error::Empty("no rows to estimate from".into()));
    }
    let a = ds.values(&roles.treatment)?;
    let r = ds.values(&roles.response)?;
    let y = ds.values_or(&roles.outcome, 0.0)?;

    let (mut sum1, mut sum0) = (0.0, 0.0);
    let (mut evaluated, mut clipped) = (0usize, 0usize);
    let mut n_observed = 0;
    for i in 0..n {
        if r[i] != 1.0 {
            continue;
        }
        n_observed += 1;
        let pa = if a[i] == 1.0 { p_treated[i] } else { 1.0 - p_treated[i] };
        // an exact 1 comes from a fully observed design and is left alone
        let pr = p_response[i];
        let cr = if pr == 1.0 { pr } else { bounds.apply(pr) };
        let ca = bounds.apply(pa);
        evaluated += 2;
        clipped += (cr != pr) as usize + (ca != pa) as usize;
        let term = y[i] / (cr * ca);
        if a[i] == 1.0 {
            sum1 += term;
        } else {
            sum0 += term;
        }
    }
    let mean_treated = sum1 / n as f64;
    let mean_control = sum0 / n as f64;
    Ok(AceEstimate {
        mean_treated,
        mean_control,
        ace: mean_treated - mean_control,
        n,
        n_observed,
        clipped_fraction: if evaluated == 0 { 0.0 } else { clipped as f64 / evaluated as f64 },
        method,
    })
}

/// The estimator with a fitted response model and treatment model.
pub fn ipw_ace(
    ds: &Dataset,
    shadow: &ShadowPropensityModel,
    treat: &GlmFit,
    bounds: ClipBounds,
    method: Method,
) -> Result<AceEstimate> {
    let p_response = response_probabilities(ds, shadow)?;
    let p_treated = treatment_probabilities(ds, treat)?;
    ipw_from_propensities(ds, &p_response, &p_treated, bounds, method)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EstimateOptions {
    pub clip: ClipBounds,
    pub solver: SolverOptions,
}

/// An estimate with the models behind it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FittedEstimate {
    pub estimate: AceEstimate,
    pub response_model: Option<ShadowPropensityModel>,
    pub treatment_model: GlmFit,
}

/// Solves for the response model on `z`, fits the treatment model and
/// applies the estimator.
pub fn estimate_ace(
    ds: &Dataset,
    z: &[String],
    opts: &EstimateOptions,
    method: Method,
) -> Result<FittedEstimate> {
    let shadow = solve_propensity(ds, z, &opts.solver)?;
    let treat = fit_treatment_propensity(ds, z)?;
    let estimate = ipw_ace(ds, &shadow, &treat, opts.clip, method)?;
    Ok(FittedEstimate {
        estimate,
        response_model: Some(shadow),
        treatment_model: treat,
    })
}

/// Complete-case IPW: drops rows with a missing outcome and weights by the
/// treatment propensity refitted on the remaining rows.
pub fn baseline_ignore_missingness(
    ds: &Dataset,
    z: &[String],
    bounds: ClipBounds,
) -> Result<FittedEstimate> {
    let complete = ds.subset_observed()?;
    if complete.is_empty() {
        return Err(Error::Empty("no rows with an observed outcome".into()));
    }
    let treat = fit_treatment_propensity(&complete, z)?;
    let p_treated = treatment_probabilities(&complete, &treat)?;
    let ones = vec![1.0; complete.n_rows()];
    let mut estimate =
        ipw_from_propensities(&complete, &ones, &p_treated, bounds, Method::IgnoreMissingness)?;
    estimate.n = ds.n_rows();
    Ok(FittedEstimate {
        estimate,
        response_model: None,
        treatment_model: treat,
    })
}

/// Adjustment set used by the wrong-adjustment baseline.
pub const WRONG_ADJUSTMENT: [&str; 2] = ["W2", "W3"];

/// The full estimator with the adjustment set fixed to {W2, W3}.
pub fn baseline_wrong_adjustment(ds: &Dataset, opts: &EstimateOptions) -> Result<FittedEstimate> {
    let z: Vec<String> = WRONG_ADJUSTMENT.iter().map(|s| s.to_string()).collect();
    estimate_ace(ds, &z, opts, Method::WrongAdjustment)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Column, RoleMap};

    fn randomized(n: usize, response: impl Fn(usize) -> u8) -> Dataset {
        let a: Vec<u8> = (0..n).map(|i| ((i * 7 + 3) % 5 < 2) as u8).collect();
        let r: Vec<u8> = (0..n).map(&response).collect();
        let y = (0..n)
            .map(|i| (r[i] == 1).then_some(((i * 13) % 7 < 3 + a[i] as usize) as u8 as f64))
            .collect();
        Dataset::new(vec![
            Column::binary("A", a),
            Column::optional("Y", y),
            Column::binary("R", r),
            Column::continuous("I", (0..n).map(|i| (i as f64).cos()).collect()),
            Column::continuous("W1", (0..n).map(|i| (i as f64 * 0.7).sin()).collect()),
            Column::continuous("W2", (0..n).map(|i| (i as f64 * 1.3).sin()).collect()),
        ])
        .unwrap()
        .with_roles(RoleMap::new("A", "Y", "R", "I", ["W1", "W2"]))
        .unwrap()
    }

    fn arm_means(ds: &Dataset) -> (f64, f64) {
        let a = ds.values("A").unwrap();
        let y = ds.values("Y").unwrap();
        let mean = |arm: f64| {
            let v: Vec<f64> = (0..a.len()).filter(|&i| a[i] == arm).map(|i| y[i]).collect();
            v.iter().sum::<f64>() / v.len() as f64
        };
        (mean(1.0), mean(0.0))
    }

    #[test]
    fn clip_examples() {
        assert_eq!(clip(0.5, 0.01, 0.99), 0.5);
        assert_eq!(clip(0.001, 0.01, 0.99), 0.01);
        assert_eq!(clip(0.9999, 0.01, 0.99), 0.99);
        assert!(ClipBounds::new(0.5, 0.4).is_err());
    }

    #[test]
    fn known_half_propensity_gives_mean_difference() {
        let ds = randomized(200, |_| 1);
        let est = ipw_from_propensities(&ds, &[1.0; 200], &[0.5; 200], ClipBounds::default(), Method::Full)
            .unwrap();
        let y = ds.values("Y").unwrap();
        let a = ds.values("A").unwrap();
        let s1: f64 = (0..200).filter(|&i| a[i] == 1.0).map(|i| y[i]).sum();
        let s0: f64 = (0..200).filter(|&i| a[i] == 0.0).map(|i| y[i]).sum();
        assert!((est.mean_treated - 2.0 * s1 / 200.0).abs() < 1e-12);
        assert!((est.ace - 2.0 * (s1 - s0) / 200.0).abs() < 1e-12);
        assert_eq!(est.clipped_fraction, 0.0);
    }

    #[test]
    fn fitted_intercept_only_model_gives_mean_difference() {
        let ds = randomized(300, |_| 1);
        let treat = fit_treatment_propensity(&ds, &[]).unwrap();
        let shadow = ShadowPropensityModel::all_observed(Vec::new());
        let est = ipw_ace(&ds, &shadow, &treat, ClipBounds::default(), Method::Full).unwrap();
        let (m1, m0) = arm_means(&ds);
        assert!((est.mean_treated - m1).abs() < 1e-9);
        assert!((est.mean_control - m0).abs() < 1e-9);
        let base = baseline_ignore_missingness(&ds, &[], ClipBounds::default()).unwrap();
        assert!((base.estimate.ace - est.ace).abs() < 1e-12);
    }

    #[test]
    fn missing_rows_contribute_nothing() {
        let ds = randomized(200, |i| (i % 4 != 0) as u8);
        let mut p = vec![0.6; 200];
        let a = ipw_from_propensities(&ds, &p, &[0.4; 200], ClipBounds::default(), Method::Full).unwrap();
        for i in (0..200).step_by(4) {
            p[i] = 1e-9;
        }
        let b = ipw_from_propensities(&ds, &p, &[0.4; 200], ClipBounds::default(), Method::Full).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.n_observed, 150);
    }

    #[test]
    fn clipped_fraction_counts_extremes() {
        let ds = randomized(100, |_| 1);
        let est = ipw_from_propensities(&ds, &[0.001; 100], &[0.5; 100], ClipBounds::default(), Method::Full)
            .unwrap();
        assert_eq!(est.clipped_fraction, 0.5);
    }

    #[test]
    fn constant_treatment_is_an_error() {
        let ds = Dataset::new(vec![
            Column::binary("A", vec![1; 20]),
            Column::optional("Y", vec![Some(1.0); 20]),
            Column::binary("R", vec![1; 20]),
            Column::continuous("I", vec![0.0; 20]),
            Column::continuous("W1", (0..20).map(f64::from).collect()),
        ])
        .unwrap()
        .with_roles(RoleMap::new("A", "Y", "R", "I", ["W1"]))
        .unwrap();
        assert!(matches!(
            fit_treatment_propensity(&ds, &["W1".into()]),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn csv_row_matches_header() {
        let est = AceEstimate {
            mean_treated: 0.5,
            mean_control: 0.25,
            ace: 0.25,
            n: 10,
            n_observed: 6,
            clipped_fraction: 0.0,
            method: Method::WrongAdjustment,
        };
        assert_eq!(est.to_csv_row(), "WrongAdjustment,0.5,0.25,0.25,10,6,0");
        assert_eq!(
            AceEstimate::CSV_HEADER.split(',').count(),
            est.to_csv_row().split(',').count()
        );
    }

    #[test]
    fn method_parsing() {
        assert_eq!("ignore-missingness".parse::<Method>().unwrap(), Method::IgnoreMissingness);
        assert_eq!("full".parse::<Method>().unwrap(), Method::Full);
        assert!("other".parse::<Method>().is_err());
    }
}
