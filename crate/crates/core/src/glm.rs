//! Logistic and Gaussian GLMs and the likelihood-ratio test built on them.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
pub use crate::special::chi_square_sf;

pub const INTERCEPT: &str = "(intercept)";

/// Coefficient norm past which a logistic fit is treated as separated.
pub const SEPARATION_NORM: f64 = 30.0;

const MAX_HALVINGS: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Logistic,
    Gaussian,
}

/// Dense row-major design matrix. The first column is always the intercept.
#[derive(Clone, Debug, PartialEq)]
pub struct DesignMatrix {
    n_rows: usize,
    names: Vec<String>,
    values: Vec<f64>,
}

impl DesignMatrix {
    /// Intercept followed by the given regressors.
    pub fn with_intercept(regressors: &[(&str, &[f64])]) -> Result<Self> {
        let n_rows = regressors.first().map_or(0, |(_, v)| v.len());
        Self::with_intercept_n(n_rows, regressors)
    }

    /// Intercept-only design with `n_rows` rows.
    pub fn intercept_only(n_rows: usize) -> Self {
        Self::with_intercept_n(n_rows, &[]).expect("no regressors to check")
    }

    fn with_intercept_n(n_rows: usize, regressors: &[(&str, &[f64])]) -> Result<Self> {
        let p = regressors.len() + 1;
        for (name, v) in regressors {
            if v.len() != n_rows {
                return Err(Error::LengthMismatch {
                    column: (*name).to_owned(),
                    got: v.len(),
                    expected: n_rows,
                });
            }
        }
        let mut values = Vec::with_capacity(n_rows * p);
        for row in 0..n_rows {
            values.push(1.0);
            values.extend(regressors.iter().map(|(_, v)| v[row]));
        }
        if values.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("design matrix".into()));
        }
        let names = std::iter::once(INTERCEPT.to_owned())
            .chain(regressors.iter().map(|(n, _)| (*n).to_owned()))
            .collect();
        Ok(DesignMatrix {
            n_rows,
            names,
            values,
        })
    }

    /// Intercept plus the named dataset columns. Missing cells are an error.
    pub fn from_dataset(ds: &Dataset, columns: &[&str]) -> Result<Self> {
        let data: Vec<Vec<f64>> = columns
            .iter()
            .map(|c| ds.values(c))
            .collect::<Result<_>>()?;
        let regressors: Vec<(&str, &[f64])> = columns
            .iter()
            .zip(&data)
            .map(|(n, v)| (*n, v.as_slice()))
            .collect();
        Self::with_intercept_n(ds.n_rows(), &regressors)
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let p = self.n_cols();
        &self.values[i * p..(i + 1) * p]
    }

    fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.n_cols())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FitOptions {
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            max_iter: 50,
            tol: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlmFit {
    pub family: Family,
    pub terms: Vec<String>,
    pub coefficients: Vec<f64>,
    pub log_likelihood: f64,
    pub converged: bool,
    pub iterations: usize,
    pub n_obs: usize,
    /// Logistic coefficients diverged or the response is constant.
    pub separated: bool,
    pub rank_deficient: bool,
    /// Max-norm of the score at the returned coefficients (logistic only).
    pub score_norm: f64,
}

impl GlmFit {
    pub fn coefficient(&self, term: &str) -> Option<f64> {
        self.terms
            .iter()
            .position(|t| t == term)
            .map(|i| self.coefficients[i])
    }

    pub fn linear_predictor(&self, row: &[f64]) -> f64 {
        row.iter().zip(&self.coefficients).map(|(x, b)| x * b).sum()
    }

    /// Fitted mean for one design row.
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let eta = self.linear_predictor(row);
        match self.family {
            Family::Logistic => expit(eta),
            Family::Gaussian => eta,
        }
    }

    pub fn predict(&self, x: &DesignMatrix) -> Vec<f64> {
        x.rows().map(|r| self.predict_row(r)).collect()
    }
}

pub fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// log(1 + e^x) without overflow.
fn log1p_exp(x: f64) -> f64 {
    if x > 35.0 {
        x
    } else if x < -35.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

pub fn fit_glm(y: &[f64], x: &DesignMatrix, family: Family, opts: FitOptions) -> Result<GlmFit> {
    let n = x.n_rows();
    let p = x.n_cols();
    if y.len() != n {
        return Err(Error::LengthMismatch {
            column: "response".into(),
            got: y.len(),
            expected: n,
        });
    }
    if n <= p {
        return Err(Error::TooFewObservations {
            n_obs: n,
            n_coef: p,
        });
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("response".into()));
    }
    match family {
        Family::Gaussian => Ok(fit_gaussian(y, x)),
        Family::Logistic => {
            if let Some(bad) = y.iter().find(|&&v| v != 0.0 && v != 1.0) {
                return Err(Error::Config(format!(
                    "logistic response must be 0/1, found {bad}"
                )));
            }
            Ok(fit_logistic(y, x, opts))
        }
    }
}

/// Solves `a · δ = b` for symmetric positive semi-definite `a`. Falls back
/// to the minimum-norm pseudo-inverse solution when `a` is singular.
fn solve_spd(a: DMatrix<f64>, b: &DVector<f64>) -> (DVector<f64>, bool) {
    let scale = a.diagonal().amax().max(f64::MIN_POSITIVE);
    if let Some(chol) = a.clone().cholesky() {
        let d = chol.l().diagonal();
        let min = d.iter().fold(f64::INFINITY, |m, v| m.min(v * v));
        if min > scale * 1e-12 {
            return (chol.solve(b), false);
        }
    }
    let svd = a.svd(true, true);
    let sol = svd
        .solve(b, scale * 1e-12)
        .unwrap_or_else(|_| DVector::zeros(b.len()));
    (sol, true)
}

fn fit_gaussian(y: &[f64], x: &DesignMatrix) -> GlmFit {
    let n = x.n_rows();
    let p = x.n_cols();
    let mut xtx = DMatrix::<f64>::zeros(p, p);
    let mut xty = DVector::<f64>::zeros(p);
    for (row, &yi) in x.rows().zip(y) {
        for j in 0..p {
            xty[j] += row[j] * yi;
            for k in 0..=j {
                xtx[(j, k)] += row[j] * row[k];
            }
        }
    }
    symmetrize(&mut xtx);
    let (beta, rank_deficient) = solve_spd(xtx, &xty);
    let coefficients: Vec<f64> = beta.iter().copied().collect();
    let rss: f64 = x
        .rows()
        .zip(y)
        .map(|(row, &yi)| {
            let fit: f64 = row.iter().zip(&coefficients).map(|(a, b)| a * b).sum();
            (yi - fit).powi(2)
        })
        .sum();
    // MLE variance, floored so an exact fit keeps a finite likelihood.
    let sigma2 = (rss / n as f64).max(1e-300);
    let log_likelihood =
        -0.5 * n as f64 * ((2.0 * std::f64::consts::PI * sigma2).ln() + 1.0);
    GlmFit {
        family: Family::Gaussian,
        terms: x.names().to_vec(),
        coefficients,
        log_likelihood,
        converged: true,
        iterations: 1,
        n_obs: n,
        separated: false,
        rank_deficient,
        score_norm: 0.0,
    }
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let p = m.nrows();
    for j in 0..p {
        for k in 0..j {
            m[(k, j)] = m[(j, k)];
        }
    }
}

fn logistic_loglik(y: &[f64], x: &DesignMatrix, beta: &[f64]) -> f64 {
    x.rows()
        .zip(y)
        .map(|(row, &yi)| {
            let eta: f64 = row.iter().zip(beta).map(|(a, b)| a * b).sum();
            yi * eta - log1p_exp(eta)
        })
        .sum()
}

/// Score X'(y − μ) and Fisher information X'WX at `beta`.
fn logistic_score_info(
    y: &[f64],
    x: &DesignMatrix,
    beta: &[f64],
) -> (DVector<f64>, DMatrix<f64>) {
    let p = x.n_cols();
    let mut score = DVector::<f64>::zeros(p);
    let mut info = DMatrix::<f64>::zeros(p, p);
    for (row, &yi) in x.rows().zip(y) {
        let eta: f64 = row.iter().zip(beta).map(|(a, b)| a * b).sum();
        let mu = expit(eta);
        let w = mu * (1.0 - mu);
        let r = yi - mu;
        for j in 0..p {
            score[j] += row[j] * r;
            let wj = w * row[j];
            for k in 0..=j {
                info[(j, k)] += wj * row[k];
            }
        }
    }
    symmetrize(&mut info);
    (score, info)
}

fn fit_logistic(y: &[f64], x: &DesignMatrix, opts: FitOptions) -> GlmFit {
    let n = x.n_rows();
    let p = x.n_cols();
    let constant = y.iter().all(|&v| v == y[0]);
    let mut beta = vec![0.0; p];
    let mut ll = logistic_loglik(y, x, &beta);
    let mut converged = false;
    let mut separated = constant;
    let mut rank_deficient = false;
    let mut iterations = 0;
    let (mut score, mut info) = logistic_score_info(y, x, &beta);
    let mut score_norm = score.amax();

    while iterations < opts.max_iter {
        if score_norm < opts.tol {
            converged = true;
            break;
        }
        iterations += 1;
        let (step, deficient) = solve_spd(info.clone(), &score);
        rank_deficient |= deficient;

        // Newton step, halved while the likelihood decreases.
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let cand: Vec<f64> = beta.iter().zip(step.iter()).map(|(b, s)| b + t * s).collect();
            let cand_ll = logistic_loglik(y, x, &cand);
            if cand_ll.is_finite() && cand_ll >= ll - 1e-12 * ll.abs().max(1.0) {
                accepted = Some((cand, cand_ll));
                break;
            }
            t *= 0.5;
        }
        let Some((cand, cand_ll)) = accepted else {
            break;
        };
        beta = cand;
        ll = cand_ll;
        (score, info) = logistic_score_info(y, x, &beta);
        score_norm = score.amax();

        if norm2(&beta) > SEPARATION_NORM {
            separated = true;
            break;
        }
    }
    if !converged && score_norm < opts.tol {
        converged = true;
    }
    if separated {
        converged = false;
    }

    GlmFit {
        family: Family::Logistic,
        terms: x.names().to_vec(),
        coefficients: beta,
        log_likelihood: ll,
        converged,
        iterations,
        n_obs: n,
        separated,
        rank_deficient,
        score_norm,
    }
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CiTestResult {
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
    /// `p_value >= alpha`.
    pub independent: bool,
    pub alpha: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub diagnostics: Vec<String>,
}

impl CiTestResult {
    pub fn from_p_value(statistic: f64, df: usize, p_value: f64, alpha: f64) -> Self {
        CiTestResult {
            statistic,
            df,
            p_value,
            independent: p_value >= alpha,
            alpha,
            diagnostics: Vec::new(),
        }
    }
}

/// Likelihood-ratio test of `null_fit` nested in `full_fit`.
pub fn likelihood_ratio_test(
    null_fit: &GlmFit,
    full_fit: &GlmFit,
    alpha: f64,
) -> Result<CiTestResult> {
    if null_fit.family != full_fit.family {
        return Err(Error::NotNested("fits use different families".into()));
    }
    if null_fit.n_obs != full_fit.n_obs {
        return Err(Error::NotNested(format!(
            "fits use {} and {} observations",
            null_fit.n_obs, full_fit.n_obs
        )));
    }
    if let Some(t) = null_fit.terms.iter().find(|t| !full_fit.terms.contains(t)) {
        return Err(Error::NotNested(format!(
            "term `{t}` of the null model is absent from the full model"
        )));
    }
    let df = full_fit.terms.len() - null_fit.terms.len();
    let mut diagnostics = Vec::new();
    for (label, fit) in [("null", null_fit), ("full", full_fit)] {
        if fit.separated {
            diagnostics.push(format!("{label} fit separated; likelihood is capped"));
        } else if !fit.converged {
            diagnostics.push(format!("{label} fit did not converge"));
        }
    }
    let raw = 2.0 * (full_fit.log_likelihood - null_fit.log_likelihood);
    if raw < -2e-8 {
        diagnostics.push(format!("full likelihood below null by {:.3e}", -raw / 2.0));
    }
    let statistic = raw.max(0.0);
    let p_value = if df == 0 {
        1.0
    } else {
        chi_square_sf(statistic, df)
    };
    let mut result = CiTestResult::from_p_value(statistic, df, p_value, alpha);
    result.diagnostics = diagnostics;
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn logistic_sample(n: usize, b0: f64, b1: f64, seed: u64) -> (Vec<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect();
        let y = x
            .iter()
            .map(|&xi| f64::from(rng.random::<f64>() < expit(b0 + b1 * xi)))
            .collect();
        (x, y)
    }

    #[test]
    fn constant_response_is_separation() {
        let x: Vec<f64> = (0..20).map(f64::from).collect();
        let y = vec![1.0; 20];
        let design = DesignMatrix::intercept_only(20);
        let fit = fit_glm(&y, &design, Family::Logistic, FitOptions::default()).unwrap();
        assert!(fit.separated);
        assert!(!fit.converged);
        let design = DesignMatrix::with_intercept(&[("x", &x)]).unwrap();
        let fit = fit_glm(&y, &design, Family::Logistic, FitOptions::default()).unwrap();
        assert!(fit.separated && !fit.converged);
    }

    #[test]
    fn perfectly_separated_regressor_diverges() {
        let x: Vec<f64> = (0..40).map(|i| f64::from(i) - 19.5).collect();
        let y: Vec<f64> = x.iter().map(|&v| f64::from(v > 0.0)).collect();
        let design = DesignMatrix::with_intercept(&[("x", &x)]).unwrap();
        let fit = fit_glm(&y, &design, Family::Logistic, FitOptions::default()).unwrap();
        assert!(fit.separated);
        assert!(!fit.converged);
    }

    #[test]
    fn gaussian_exact_line() {
        let x: Vec<f64> = (0..10).map(f64::from).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        let design = DesignMatrix::with_intercept(&[("x", &x)]).unwrap();
        let fit = fit_glm(&y, &design, Family::Gaussian, FitOptions::default()).unwrap();
        assert!(fit.coefficients[0].abs() < 1e-12);
        assert!((fit.coefficients[1] - 2.0).abs() < 1e-12);
        assert!(fit.log_likelihood.is_finite());
    }

    #[test]
    fn gaussian_loglik_at_mle_variance() {
        let y = [1.0, 2.0, 4.0, 7.0];
        let x = [0.0, 1.0, 0.0, 1.0];
        let design = DesignMatrix::with_intercept(&[("x", &x)]).unwrap();
        let fit = fit_glm(&y, &design, Family::Gaussian, FitOptions::default()).unwrap();
        // group means 2.5 and 4.5; residuals ±1.5, ±2.5
        let sigma2: f64 = (2.0 * 1.5f64.powi(2) + 2.0 * 2.5f64.powi(2)) / 4.0;
        let expected = -2.0 * ((2.0 * std::f64::consts::PI * sigma2).ln() + 1.0);
        assert!((fit.log_likelihood - expected).abs() < 1e-12);
    }

    #[test]
    fn rank_deficient_design_is_reported() {
        let x: Vec<f64> = (0..30).map(|i| f64::from(i % 7)).collect();
        let x2: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        let (_, y) = logistic_sample(30, 0.0, 0.0, 3);
        let design = DesignMatrix::with_intercept(&[("x", &x), ("x2", &x2)]).unwrap();
        let fit = fit_glm(&y, &design, Family::Logistic, FitOptions::default()).unwrap();
        assert!(fit.rank_deficient);
        assert!(fit.log_likelihood.is_finite());
        // minimum-norm solution splits the effect 1:2
        assert!((fit.coefficients[2] - 2.0 * fit.coefficients[1]).abs() < 1e-6);
    }

    #[test]
    fn too_few_rows() {
        let x = [1.0, 2.0];
        let design = DesignMatrix::with_intercept(&[("x", &x)]).unwrap();
        assert!(matches!(
            fit_glm(&[0.0, 1.0], &design, Family::Logistic, FitOptions::default()),
            Err(Error::TooFewObservations { .. })
        ));
    }

    #[test]
    fn logistic_score_vanishes_at_convergence() {
        let (x, y) = logistic_sample(5_000, -0.3, 0.8, 11);
        let design = DesignMatrix::with_intercept(&[("x", &x)]).unwrap();
        let fit = fit_glm(&y, &design, Family::Logistic, FitOptions::default()).unwrap();
        assert!(fit.converged);
        let (score, _) = logistic_score_info(&y, &design, &fit.coefficients);
        assert!(score.amax() < 1e-8);
    }

    #[test]
    fn logistic_recovers_coefficients_at_large_n() {
        let (x, y) = logistic_sample(100_000, 0.5, 1.0, 7);
        let design = DesignMatrix::with_intercept(&[("x", &x)]).unwrap();
        let fit = fit_glm(&y, &design, Family::Logistic, FitOptions::default()).unwrap();
        assert!(fit.converged);
        assert!((fit.coefficients[0] - 0.5).abs() < 0.05, "{:?}", fit.coefficients);
        assert!((fit.coefficients[1] - 1.0).abs() < 0.05, "{:?}", fit.coefficients);
    }

    #[test]
    fn identical_designs_give_unit_p_value() {
        let (x, y) = logistic_sample(500, 0.0, 1.0, 5);
        let design = DesignMatrix::with_intercept(&[("x", &x)]).unwrap();
        let fit = fit_glm(&y, &design, Family::Logistic, FitOptions::default()).unwrap();
        let lrt = likelihood_ratio_test(&fit, &fit, 0.05).unwrap();
        assert_eq!(lrt.statistic, 0.0);
        assert_eq!(lrt.df, 0);
        assert_eq!(lrt.p_value, 1.0);
        assert!(lrt.independent);
    }

    #[test]
    fn lrt_rejects_non_nested_and_mismatched() {
        let (x, y) = logistic_sample(200, 0.0, 1.0, 9);
        let z: Vec<f64> = x.iter().map(|v| v * v).collect();
        let fx = fit_glm(
            &y,
            &DesignMatrix::with_intercept(&[("x", &x)]).unwrap(),
            Family::Logistic,
            FitOptions::default(),
        )
        .unwrap();
        let fz = fit_glm(
            &y,
            &DesignMatrix::with_intercept(&[("z", &z)]).unwrap(),
            Family::Logistic,
            FitOptions::default(),
        )
        .unwrap();
        assert!(matches!(
            likelihood_ratio_test(&fx, &fz, 0.05),
            Err(Error::NotNested(_))
        ));
        let mut short = fx.clone();
        short.n_obs -= 1;
        assert!(likelihood_ratio_test(&short, &fx, 0.05).is_err());
    }

    #[test]
    fn lrt_p_value_matches_chi_square_tail() {
        let null = GlmFit {
            family: Family::Logistic,
            terms: vec![INTERCEPT.into()],
            coefficients: vec![0.0],
            log_likelihood: -100.0,
            converged: true,
            iterations: 3,
            n_obs: 50,
            separated: false,
            rank_deficient: false,
            score_norm: 0.0,
        };
        let mut full = null.clone();
        full.terms.push("x".into());
        full.coefficients.push(0.1);
        full.log_likelihood = -100.0 + 3.841 / 2.0;
        let lrt = likelihood_ratio_test(&null, &full, 0.05).unwrap();
        assert_eq!(lrt.df, 1);
        assert!((lrt.p_value - 0.0500).abs() < 5e-5, "{}", lrt.p_value);
    }
}
