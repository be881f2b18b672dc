//! Response propensity under self-censoring, via the odds-ratio
//! factorization
//!
//! ```text
//! p(R=1 | y, z) = π0(z) / (π0(z) + η(y, z) · (1 − π0(z)))
//! π0(z) = expit(βᵀz),   η(y, z) = exp(γ · (y − y_ref))
//! ```
//!
//! which is the same as `expit(βᵀz − γ(y − y_ref))`. The parameters are
//! estimated from mean-zero moment conditions
//! `E[(R / p(R=1 | Y, Z) − 1) · h(A, Z)] = 0` with `h` ranging over the
//! adjustment columns and one treatment-based function. Rows with a missing
//! outcome enter only through the `−1` term.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::glm::expit;

/// Bound applied to the log-odds before exponentiating.
pub const SATURATION: f64 = 500.0;

const MAX_HALVINGS: usize = 20;

/// Choice of the last estimating function.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum HMode {
    /// The sample mean of the treatment, a constant.
    #[default]
    PaperMean,
    /// The treatment itself, row by row.
    ShadowA,
}

impl std::str::FromStr for HMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "papermean" | "paper-mean" | "mean" => Ok(HMode::PaperMean),
            "shadowa" | "shadow-a" | "a" => Ok(HMode::ShadowA),
            _ => Err(Error::Config(format!("unknown h mode `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShadowPropensityModel {
    pub beta: Vec<f64>,
    pub gamma: f64,
    pub y_ref: f64,
    pub adjustment: Vec<String>,
    pub residual_norm: f64,
    pub converged: bool,
    pub iterations: usize,
    /// No missing outcomes: the propensity is identically 1.
    pub all_observed: bool,
    pub used_fallback: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl ShadowPropensityModel {
    /// Model with the given parameters and no solver diagnostics.
    pub fn with_params(adjustment: Vec<String>, beta: Vec<f64>, gamma: f64, y_ref: f64) -> Self {
        ShadowPropensityModel {
            beta,
            gamma,
            y_ref,
            adjustment,
            residual_norm: f64::NAN,
            converged: false,
            iterations: 0,
            all_observed: false,
            used_fallback: false,
            warnings: Vec::new(),
        }
    }

    /// The degenerate model for data without missing outcomes.
    pub fn all_observed(adjustment: Vec<String>) -> Self {
        let k = adjustment.len();
        ShadowPropensityModel {
            beta: vec![0.0; k],
            gamma: 0.0,
            y_ref: 0.0,
            adjustment,
            residual_norm: 0.0,
            converged: true,
            iterations: 0,
            all_observed: true,
            used_fallback: false,
            warnings: vec!["no missing outcomes; response propensity fixed at 1".into()],
        }
    }

    fn log_odds(&self, y: f64, z: &[f64]) -> f64 {
        let lin: f64 = self.beta.iter().zip(z).map(|(b, x)| b * x).sum();
        (lin - self.gamma * (y - self.y_ref)).clamp(-SATURATION, SATURATION)
    }
}

/// p(R=1 | y, z) under `model`.
pub fn or_propensity(y: f64, z: &[f64], model: &ShadowPropensityModel) -> f64 {
    assert_eq!(z.len(), model.beta.len(), "z must have one entry per beta");
    if model.all_observed {
        return 1.0;
    }
    expit(model.log_odds(y, z)).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

/// Strictly positive joint `p(R, Y | Z)` over finitely many values.
///
/// Cells are indexed `(z, r, y)` with `r ∈ {0, 1}`; each `z` stratum sums
/// to one.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteJoint {
    pub n_z: usize,
    pub n_y: usize,
    pub probs: Vec<f64>,
}

impl DiscreteJoint {
    pub fn new(n_z: usize, n_y: usize, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != n_z * 2 * n_y {
            return Err(Error::Config(format!(
                "joint needs {} cells, got {}",
                n_z * 2 * n_y,
                probs.len()
            )));
        }
        if let Some(i) = probs.iter().position(|&p| !(p > 0.0) || !p.is_finite()) {
            return Err(Error::Config(format!("joint cell {i} is not strictly positive")));
        }
        for z in 0..n_z {
            let total: f64 = probs[z * 2 * n_y..(z + 1) * 2 * n_y].iter().sum();
            if (total - 1.0).abs() > 1e-9 {
                return Err(Error::Config(format!("stratum {z} sums to {total}")));
            }
        }
        Ok(DiscreteJoint { n_z, n_y, probs })
    }

    pub fn p(&self, z: usize, r: usize, y: usize) -> f64 {
        self.probs[(z * 2 + r) * self.n_y + y]
    }
}

/// p(R=1 | y, z) for every cell, with the pieces used to build it.
#[derive(Clone, Debug, PartialEq)]
pub struct PropensityTable {
    pub n_z: usize,
    pub n_y: usize,
    /// π0(z), one per stratum.
    pub baseline: Vec<f64>,
    /// η(y, z), indexed `z * n_y + y`.
    pub odds_ratio: Vec<f64>,
    /// p(R=1 | y, z), indexed `z * n_y + y`.
    pub propensity: Vec<f64>,
}

impl PropensityTable {
    pub fn get(&self, z: usize, y: usize) -> f64 {
        self.propensity[z * self.n_y + y]
    }
}

/// Rebuilds the response propensity from π0 and the odds ratio η taken
/// from `joint`, with reference levels `R = 1` and `Y = y_ref`.
pub fn reconstruct_propensity_from_joint(
    joint: &DiscreteJoint,
    y_ref: usize,
) -> Result<PropensityTable> {
    if y_ref >= joint.n_y {
        return Err(Error::Config(format!("reference level {y_ref} out of range")));
    }
    let n_y = joint.n_y;
    let mut baseline = Vec::with_capacity(joint.n_z);
    let mut odds_ratio = Vec::with_capacity(joint.n_z * n_y);
    let mut propensity = Vec::with_capacity(joint.n_z * n_y);
    for z in 0..joint.n_z {
        // conditional of R given Y = y within the stratum
        let cond = |r: usize, y: usize| joint.p(z, r, y) / (joint.p(z, 0, y) + joint.p(z, 1, y));
        let pi0 = cond(1, y_ref);
        baseline.push(pi0);
        for y in 0..n_y {
            let eta = (cond(0, y) / cond(1, y)) * (cond(1, y_ref) / cond(0, y_ref));
            odds_ratio.push(eta);
            propensity.push(pi0 / (pi0 + eta * (1.0 - pi0)));
        }
    }
    Ok(PropensityTable {
        n_z: joint.n_z,
        n_y,
        baseline,
        odds_ratio,
        propensity,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentVector {
    pub values: Vec<f64>,
}

impl MomentVector {
    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Per-row inputs to the estimating equations.
struct MomentData {
    k: usize,
    n: usize,
    z: Vec<f64>,
    y: Vec<f64>,
    observed: Vec<bool>,
    h_last: Vec<f64>,
}

impl MomentData {
    fn build(ds: &Dataset, adjustment: &[String], h_mode: HMode, y_ref: f64) -> Result<Self> {
        let roles = ds.require_roles()?;
        let n = ds.n_rows();
        let k = adjustment.len();
        for name in adjustment {
            if !roles.covariates.contains(name) {
                return Err(Error::Roles(format!("`{name}` is not a covariate")));
            }
        }
        let cols: Vec<Vec<f64>> = adjustment
            .iter()
            .map(|c| ds.values(c))
            .collect::<Result<_>>()?;
        let mut z = Vec::with_capacity(n * k);
        for i in 0..n {
            z.extend(cols.iter().map(|c| c[i]));
        }
        let y = ds.values_or(&roles.outcome, y_ref)?;
        let observed: Vec<bool> = ds.values(&roles.response)?.iter().map(|&r| r == 1.0).collect();
        let a = ds.values(&roles.treatment)?;
        let h_last = match h_mode {
            HMode::PaperMean => {
                let mean = if n == 0 { 0.0 } else { a.iter().sum::<f64>() / n as f64 };
                vec![mean; n]
            }
            HMode::ShadowA => a,
        };
        Ok(MomentData {
            k,
            n,
            z,
            y,
            observed,
            h_last,
        })
    }

    fn z_row(&self, i: usize) -> &[f64] {
        &self.z[i * self.k..(i + 1) * self.k]
    }

    fn h(&self, i: usize, j: usize) -> f64 {
        if j < self.k {
            self.z[i * self.k + j]
        } else {
            self.h_last[i]
        }
    }

    /// exp(−logit p) for an observed row, i.e. `1/p − 1`.
    fn inverse_odds(&self, i: usize, beta: &[f64], gamma: f64, y_ref: f64) -> (f64, bool) {
        let lin: f64 = beta.iter().zip(self.z_row(i)).map(|(b, x)| b * x).sum();
        let logit = lin - gamma * (self.y[i] - y_ref);
        let saturated = logit.abs() > SATURATION;
        ((-logit.clamp(-SATURATION, SATURATION)).exp(), saturated)
    }

    fn residuals(&self, theta: &[f64], y_ref: f64) -> DVector<f64> {
        let (beta, gamma) = (&theta[..self.k], theta[self.k]);
        let mut r = DVector::zeros(self.k + 1);
        for i in 0..self.n {
            let m = if self.observed[i] {
                self.inverse_odds(i, beta, gamma, y_ref).0
            } else {
                -1.0
            };
            for j in 0..=self.k {
                r[j] += m * self.h(i, j);
            }
        }
        r / self.n as f64
    }

    fn jacobian(&self, theta: &[f64], y_ref: f64) -> DMatrix<f64> {
        let (beta, gamma) = (&theta[..self.k], theta[self.k]);
        let p = self.k + 1;
        let mut jac = DMatrix::zeros(p, p);
        for i in 0..self.n {
            if !self.observed[i] {
                continue;
            }
            let (e, saturated) = self.inverse_odds(i, beta, gamma, y_ref);
            if saturated {
                continue;
            }
            let z = self.z_row(i);
            for j in 0..p {
                let he = self.h(i, j) * e;
                for l in 0..self.k {
                    jac[(j, l)] -= he * z[l];
                }
                jac[(j, self.k)] += he * (self.y[i] - y_ref);
            }
        }
        jac / self.n as f64
    }
}

/// Empirical estimating equations at the model's parameters.
pub fn moment_residuals(
    ds: &Dataset,
    model: &ShadowPropensityModel,
    h_mode: HMode,
) -> Result<MomentVector> {
    let data = MomentData::build(ds, &model.adjustment, h_mode, model.y_ref)?;
    if model.all_observed {
        // R / p − 1 is 0 on observed rows and −1 elsewhere
        let mut values = vec![0.0; data.k + 1];
        for i in 0..data.n {
            if !data.observed[i] {
                for (j, v) in values.iter_mut().enumerate() {
                    *v -= data.h(i, j);
                }
            }
        }
        let n = data.n.max(1) as f64;
        return Ok(MomentVector {
            values: values.into_iter().map(|v| v / n).collect(),
        });
    }
    let mut theta = model.beta.clone();
    theta.push(model.gamma);
    Ok(MomentVector {
        values: data.residuals(&theta, model.y_ref).iter().copied().collect(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolverOptions {
    pub h_mode: HMode,
    /// Starting point `(β, γ)`; zeros when `None`.
    pub init: Option<Vec<f64>>,
    pub tol: f64,
    pub max_iter: usize,
    pub y_ref: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            h_mode: HMode::PaperMean,
            init: None,
            tol: 1e-10,
            max_iter: 100,
            y_ref: 0.0,
        }
    }
}

fn solve_linear(jac: &DMatrix<f64>, rhs: &DVector<f64>) -> Option<DVector<f64>> {
    if let Some(sol) = jac.clone().lu().solve(rhs) {
        if sol.iter().all(|v| v.is_finite()) {
            return Some(sol);
        }
    }
    let svd = jac.clone().svd(true, true);
    let eps = svd.singular_values.max() * 1e-12;
    svd.solve(rhs, eps).ok().filter(|s| s.iter().all(|v| v.is_finite()))
}

struct NewtonResult {
    theta: Vec<f64>,
    norm: f64,
    iterations: usize,
    stalled: bool,
}

fn newton(data: &MomentData, start: Vec<f64>, y_ref: f64, tol: f64, max_iter: usize) -> NewtonResult {
    let mut theta = start;
    let mut r = data.residuals(&theta, y_ref);
    let mut iterations = 0;
    let mut stalled = false;
    while r.amax() >= tol && iterations < max_iter {
        iterations += 1;
        let jac = data.jacobian(&theta, y_ref);
        let Some(step) = solve_linear(&jac, &(-&r)) else {
            stalled = true;
            break;
        };
        let current = r.norm();
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..=MAX_HALVINGS {
            let cand: Vec<f64> = theta.iter().zip(step.iter()).map(|(a, d)| a + t * d).collect();
            let cand_r = data.residuals(&cand, y_ref);
            if cand_r.iter().all(|v| v.is_finite()) && cand_r.norm() < current {
                theta = cand;
                r = cand_r;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            stalled = true;
            break;
        }
    }
    NewtonResult {
        norm: r.amax(),
        theta,
        iterations,
        stalled,
    }
}

/// Nelder–Mead minimization of `f` from `start`.
fn nelder_mead(f: impl Fn(&[f64]) -> f64, start: &[f64], max_evals: usize) -> Vec<f64> {
    let dim = start.len();
    let mut simplex: Vec<Vec<f64>> = vec![start.to_vec()];
    for i in 0..dim {
        let mut v = start.to_vec();
        v[i] += if v[i].abs() > 1e-3 { 0.1 * v[i].abs() } else { 0.25 };
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| f(v)).collect();
    let mut evals = values.len();
    let nan_last = |x: f64| if x.is_nan() { f64::INFINITY } else { x };

    while evals < max_evals {
        let mut order: Vec<usize> = (0..=dim).collect();
        order.sort_by(|&a, &b| nan_last(values[a]).total_cmp(&nan_last(values[b])));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();
        if (values[dim] - values[0]).abs() <= 1e-30 + 1e-15 * values[0].abs() {
            break;
        }
        let centroid: Vec<f64> = (0..dim)
            .map(|j| simplex[..dim].iter().map(|v| v[j]).sum::<f64>() / dim as f64)
            .collect();
        let towards = |coef: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&simplex[dim])
                .map(|(c, w)| c + coef * (c - w))
                .collect()
        };
        let reflected = towards(1.0);
        let fr = nan_last(f(&reflected));
        evals += 1;
        if fr < values[0] {
            let expanded = towards(2.0);
            let fe = nan_last(f(&expanded));
            evals += 1;
            if fe < fr {
                simplex[dim] = expanded;
                values[dim] = fe;
            } else {
                simplex[dim] = reflected;
                values[dim] = fr;
            }
        } else if fr < values[dim - 1] {
            simplex[dim] = reflected;
            values[dim] = fr;
        } else {
            let contracted = if fr < values[dim] { towards(0.5) } else { towards(-0.5) };
            let fc = nan_last(f(&contracted));
            evals += 1;
            if fc < values[dim].min(fr) {
                simplex[dim] = contracted;
                values[dim] = fc;
            } else {
                let best = simplex[0].clone();
                for i in 1..=dim {
                    simplex[i] = best
                        .iter()
                        .zip(&simplex[i])
                        .map(|(b, v)| b + 0.5 * (v - b))
                        .collect();
                    values[i] = nan_last(f(&simplex[i]));
                    evals += 1;
                }
            }
        }
    }
    let best = (0..=dim)
        .min_by(|&a, &b| nan_last(values[a]).total_cmp(&nan_last(values[b])))
        .expect("non-empty simplex");
    simplex[best].clone()
}

/// Solves the estimating equations for `(β, γ)` with adjustment set `z`.
///
/// Damped Newton with the analytic Jacobian first. If Newton stalls, the
/// squared residual norm is minimized with Nelder–Mead and Newton is
/// restarted from there.
pub fn solve_propensity(
    ds: &Dataset,
    z: &[String],
    opts: &SolverOptions,
) -> Result<ShadowPropensityModel> {
    if z.is_empty() {
        return Err(Error::Config("the adjustment set must be non-empty".into()));
    }
    let roles = ds.require_roles()?;
    let response = ds.values(&roles.response)?;
    let n_observed = response.iter().filter(|&&r| r == 1.0).count();
    if n_observed == 0 {
        return Err(Error::Empty("no rows with an observed outcome".into()));
    }
    let data = MomentData::build(ds, z, opts.h_mode, opts.y_ref)?;
    if n_observed == response.len() {
        return Ok(ShadowPropensityModel::all_observed(z.to_vec()));
    }

    let k = z.len();
    let start = match &opts.init {
        Some(init) if init.len() == k + 1 => init.clone(),
        Some(init) => {
            return Err(Error::Config(format!(
                "initial point has {} entries, expected {}",
                init.len(),
                k + 1
            )))
        }
        None => vec![0.0; k + 1],
    };

    let mut result = newton(&data, start, opts.y_ref, opts.tol, opts.max_iter);
    let mut used_fallback = false;
    let mut warnings = Vec::new();
    if result.norm >= opts.tol && result.stalled {
        used_fallback = true;
        warnings.push("newton stalled; restarted from a Nelder-Mead minimum".to_owned());
        let objective = |t: &[f64]| data.residuals(t, opts.y_ref).norm_squared();
        let polished = nelder_mead(objective, &result.theta, 400 * (k + 1));
        let retry = newton(&data, polished, opts.y_ref, opts.tol, opts.max_iter);
        let iterations = result.iterations + retry.iterations;
        if retry.norm < result.norm {
            result = retry;
        }
        result.iterations = iterations;
    }
    let converged = result.norm < opts.tol;
    if !converged {
        warnings.push(format!(
            "estimating equations not solved: residual {:.3e}",
            result.norm
        ));
    }
    let gamma = result.theta[k];
    let beta = result.theta[..k].to_vec();
    Ok(ShadowPropensityModel {
        beta,
        gamma,
        y_ref: opts.y_ref,
        adjustment: z.to_vec(),
        residual_norm: result.norm,
        converged,
        iterations: result.iterations,
        all_observed: false,
        used_fallback,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Column, RoleMap};

    fn model(beta: Vec<f64>, gamma: f64, y_ref: f64) -> ShadowPropensityModel {
        let k = beta.len();
        ShadowPropensityModel::with_params((0..k).map(|i| format!("Z{i}")).collect(), beta, gamma, y_ref)
    }

    // literal π0 / (π0 + η(1 − π0))
    fn factorized(y: f64, z: &[f64], m: &ShadowPropensityModel) -> f64 {
        let pi0 = expit(m.beta.iter().zip(z).map(|(b, x)| b * x).sum());
        let eta = (m.gamma * (y - m.y_ref)).exp();
        pi0 / (pi0 + eta * (1.0 - pi0))
    }

    #[test]
    fn reference_outcome_gives_baseline() {
        let m = model(vec![0.3, -1.2], 2.5, 0.7);
        let z = [1.5, 0.25];
        assert_eq!(or_propensity(0.7, &z, &m), expit(0.3 * 1.5 - 1.2 * 0.25));
    }

    #[test]
    fn zero_gamma_ignores_outcome() {
        let m = model(vec![0.8], 0.0, 0.0);
        assert_eq!(or_propensity(0.0, &[1.0], &m), or_propensity(5.0, &[1.0], &m));
    }

    #[test]
    fn worked_example() {
        let m = model(vec![1.0, 0.0, 0.0], -1.5, 0.0);
        let p = or_propensity(1.0, &[1.0, 0.0, 0.0], &m);
        assert!((expit(1.0) - 0.731_058_578_6).abs() < 1e-9);
        assert!(((-1.5f64).exp() - 0.223_130_160_1).abs() < 1e-9);
        assert!((p - 0.924_141_819_98).abs() < 1e-10, "{p}");
        assert!((p - factorized(1.0, &[1.0, 0.0, 0.0], &m)).abs() < 1e-15);
    }

    #[test]
    fn saturates_at_extremes() {
        let m = model(vec![1e6], 0.0, 0.0);
        let hi = or_propensity(0.0, &[1.0], &m);
        let lo = or_propensity(0.0, &[-1.0], &m);
        assert!(hi < 1.0 && hi > 0.999);
        assert!(lo > 0.0 && lo < 1e-200);
    }

    #[test]
    fn half_at_origin() {
        let m = model(vec![0.4, -0.4], 1.0, 0.0);
        assert_eq!(or_propensity(0.0, &[1.0, 1.0], &m), 0.5);
    }

    #[test]
    fn independent_joint_has_unit_odds_ratio() {
        // p(R, Y | z) = p(R | z) p(Y | z)
        let (pr, py) = ([0.3, 0.7], [0.2, 0.5, 0.3]);
        let probs = (0..2)
            .flat_map(|r| (0..3).map(move |y| pr[r] * py[y]))
            .collect();
        let joint = DiscreteJoint::new(1, 3, probs).unwrap();
        let table = reconstruct_propensity_from_joint(&joint, 1).unwrap();
        for y in 0..3 {
            assert!((table.odds_ratio[y] - 1.0).abs() < 1e-14);
            assert!((table.get(0, y) - 0.7).abs() < 1e-14);
        }
        assert_eq!(table.get(0, 1), table.baseline[0]);
    }

    #[test]
    fn zero_cell_is_rejected() {
        assert!(DiscreteJoint::new(1, 2, vec![0.5, 0.0, 0.25, 0.25]).is_err());
        assert!(DiscreteJoint::new(1, 2, vec![0.5, 0.1, 0.25, 0.25]).is_err());
    }

    fn toy(response: Vec<u8>) -> Dataset {
        let n = response.len();
        let y = response
            .iter()
            .enumerate()
            .map(|(i, &r)| (r == 1).then_some((i % 2) as f64))
            .collect();
        Dataset::new(vec![
            Column::binary("A", (0..n).map(|i| (i % 3 == 0) as u8).collect()),
            Column::optional("Y", y),
            Column::binary("R", response),
            Column::continuous("I", vec![0.0; n]),
            Column::continuous("W1", (0..n).map(|i| (i as f64 * 0.37).sin()).collect()),
        ])
        .unwrap()
        .with_roles(RoleMap::new("A", "Y", "R", "I", ["W1"]))
        .unwrap()
    }

    #[test]
    fn fully_observed_gives_trivial_model() {
        let ds = toy(vec![1; 40]);
        let m = solve_propensity(&ds, &["W1".into()], &SolverOptions::default()).unwrap();
        assert!(m.all_observed);
        assert_eq!(m.gamma, 0.0);
        assert!(!m.warnings.is_empty());
        assert_eq!(or_propensity(1.0, &[0.3], &m), 1.0);
        let r = moment_residuals(&ds, &m, HMode::PaperMean).unwrap();
        assert!(r.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn empty_adjustment_is_rejected() {
        let ds = toy((0..40).map(|i| (i % 3 != 0) as u8).collect());
        assert!(solve_propensity(&ds, &[], &SolverOptions::default()).is_err());
    }

    #[test]
    fn constant_h_factors_out() {
        let ds = toy((0..40).map(|i| (i % 3 != 1) as u8).collect());
        let mut m = model(vec![0.4], -0.7, 0.0);
        m.adjustment = vec!["W1".into()];
        let r = moment_residuals(&ds, &m, HMode::PaperMean).unwrap();
        // h ≡ 1 residual computed directly
        let y = ds.values_or("Y", 0.0).unwrap();
        let w = ds.values("W1").unwrap();
        let resp = ds.values("R").unwrap();
        let h1: f64 = (0..40)
            .map(|i| resp[i] / factorized(y[i], &[w[i]], &m) - 1.0)
            .sum::<f64>()
            / 40.0;
        let a_bar = ds.values("A").unwrap().iter().sum::<f64>() / 40.0;
        assert!((r.values[1] - a_bar * h1).abs() < 1e-12);
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let ds = toy((0..60).map(|i| (i % 4 != 1) as u8).collect());
        for mode in [HMode::PaperMean, HMode::ShadowA] {
            let data = MomentData::build(&ds, &["W1".into()], mode, 0.0).unwrap();
            let theta = [0.3, -0.8];
            let jac = data.jacobian(&theta, 0.0);
            let h = 1e-6;
            for l in 0..2 {
                let mut up = theta;
                let mut dn = theta;
                up[l] += h;
                dn[l] -= h;
                let fd = (data.residuals(&up, 0.0) - data.residuals(&dn, 0.0)) / (2.0 * h);
                for j in 0..2 {
                    assert!((jac[(j, l)] - fd[j]).abs() < 1e-7, "{mode:?} ({j},{l})");
                }
            }
        }
    }

    #[test]
    fn nelder_mead_finds_quadratic_minimum() {
        let f = |x: &[f64]| (x[0] - 1.0).powi(2) + 3.0 * (x[1] + 2.0).powi(2);
        let m = nelder_mead(f, &[0.0, 0.0], 2000);
        assert!((m[0] - 1.0).abs() < 1e-5 && (m[1] + 2.0).abs() < 1e-5);
    }

    #[test]
    fn h_mode_parses() {
        assert_eq!("PaperMean".parse::<HMode>().unwrap(), HMode::PaperMean);
        assert_eq!("shadow-a".parse::<HMode>().unwrap(), HMode::ShadowA);
        assert!("other".parse::<HMode>().is_err());
    }
}
