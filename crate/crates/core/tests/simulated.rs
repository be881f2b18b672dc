//! Tests, search and estimation on data drawn from the simulation model.

use rayon::prelude::*;
use shadowadj::citest::{test_c1, test_c2, test_c3, test_c4, Condition, IndependenceBackend, LrtBackend};
use shadowadj::data::{Column, Dataset};
use shadowadj::estimate::{
    baseline_wrong_adjustment, estimate_ace, fit_treatment_propensity, ipw_from_propensities, ClipBounds,
    EstimateOptions, Method,
};
use shadowadj::experiments::median;
use shadowadj::glm::expit;
use shadowadj::search::{find_adjustment_set, SearchStatus};
use shadowadj::shadow::{
    moment_residuals, or_propensity, solve_propensity, HMode, ShadowPropensityModel, SolverOptions,
};
use shadowadj::simulate::{default_config, generate, true_ace, DgpConfig, Scenario};

fn z_star() -> Vec<String> {
    ["W2", "W3", "W4"].iter().map(|s| s.to_string()).collect()
}

fn base(n: usize, seed: u64) -> Dataset {
    generate(&default_config().with_n(n).with_seed(seed)).unwrap()
}

/// Response follows the odds-ratio model in Z exactly: no incentive term and
/// no clipping.
fn exact_model(n: usize, seed: u64) -> DgpConfig {
    let mut c = default_config().with_n(n).with_seed(seed);
    c.coef_r_ref[3] = 0.0;
    c.prob_clip = (0.0, 1.0);
    c
}

#[test]
fn roughly_sixty_percent_respond() {
    let ds = base(100_000, 11);
    let kept = ds.subset_observed().unwrap().n_rows() as f64 / 1e5;
    assert!((kept - 0.6).abs() < 0.02, "{kept}");
}

#[test]
fn covariance_matches_sigma() {
    let ds = base(100_000, 12);
    let cols: Vec<Vec<f64>> = ["W1", "W2", "W3", "W4"].iter().map(|c| ds.values(c).unwrap()).collect();
    let sigma = default_config().sigma;
    for i in 0..4 {
        for j in 0..4 {
            let mi = cols[i].iter().sum::<f64>() / 1e5;
            let mj = cols[j].iter().sum::<f64>() / 1e5;
            let cov = cols[i].iter().zip(&cols[j]).map(|(a, b)| (a - mi) * (b - mj)).sum::<f64>() / 1e5;
            assert!((cov - sigma[i][j]).abs() < 0.03, "({i},{j}) {cov}");
        }
    }
}

#[test]
fn subset_observed_is_idempotent() {
    let once = base(2000, 13).subset_observed().unwrap();
    assert_eq!(once.subset_observed().unwrap(), once);
}

#[test]
fn conditions_hold_for_the_true_set() {
    let ds = base(10_000, 22);
    let z = z_star();
    assert!(test_c1(&ds, 0.05).unwrap().passed);
    assert!(test_c2(&ds, &z, 0.05).unwrap().passed);
    assert!(test_c3(&ds, "W1", &z, 0.05).unwrap().passed);
    assert!(test_c4(&ds, "W1", &z, 0.05).unwrap().passed);
    let partial = &z[..2];
    assert!(!test_c4(&ds, "W1", partial, 0.05).unwrap().passed);
}

#[test]
fn c2_detects_a_treatment_response_edge_at_scale() {
    let ds = generate(&default_config().with_n(100_000).with_seed(22).with_scenario(Scenario::AddAtoRy(1.5))).unwrap();
    let rec = test_c2(&ds, &z_star(), 0.05).unwrap();
    assert!(!rec.passed, "{:?}", rec.result);
}

#[test]
fn c1_fails_without_an_incentive_effect() {
    let mut c = default_config().with_n(10_000).with_seed(23);
    c.coef_r_ref[3] = 0.0;
    let ds = generate(&c).unwrap();
    let rec = test_c1(&ds, 0.05).unwrap();
    assert!(rec.result.unwrap().p_value > 0.05);
}

#[test]
fn c2_ignores_rows_with_a_missing_outcome() {
    let ds = base(5000, 24);
    let full = test_c2(&ds, &z_star(), 0.05).unwrap();
    let observed = test_c2(&ds.subset_observed().unwrap(), &z_star(), 0.05).unwrap();
    assert_eq!(full.result, observed.result);
}

#[test]
fn search_finds_the_true_set() {
    let out = find_adjustment_set(&base(10_000, 31), 0.05, None).unwrap();
    assert_eq!(out.status, SearchStatus::Found);
    assert_eq!(out.witness.as_deref(), Some("W1"));
    assert_eq!(out.adjustment_set, Some(z_star()));
    assert_eq!(out.tests_run, out.trail.len());
}

#[test]
fn search_rejects_a_treatment_response_edge() {
    let ds = generate(&default_config().with_n(50_000).with_seed(32).with_scenario(Scenario::AddAtoRy(1.5))).unwrap();
    assert_eq!(find_adjustment_set(&ds, 0.05, None).unwrap().status, SearchStatus::NotFound);
}

#[test]
fn search_trail_replays() {
    let ds = base(5000, 33);
    let out = find_adjustment_set(&ds, 0.05, None).unwrap();
    let backend = LrtBackend::new(&ds, 0.05).unwrap();
    for rec in &out.trail {
        let again = backend.check(rec.condition, rec.witness.as_deref(), &rec.adjustment);
        assert_eq!(&again, rec);
    }
    assert_eq!(out, find_adjustment_set(&ds, 0.05, None).unwrap());
}

#[test]
fn search_stops_at_c1_without_incentive() {
    let ds = base(3000, 34);
    let mut cols = ds.columns().to_vec();
    let n = ds.n_rows();
    let idx = cols.iter().position(|c| c.name == "I").unwrap();
    cols[idx] = Column::continuous("I", (0..n).map(|i| ((i * 7919) % 1000) as f64 / 1000.0).collect());
    let noisy = Dataset::new(cols).unwrap().with_roles(ds.roles().unwrap().clone()).unwrap();
    let out = find_adjustment_set(&noisy, 0.05, None).unwrap();
    assert_eq!(out.status, SearchStatus::C1Failed);
    assert_eq!(out.trail.len(), 1);
    assert_eq!(out.trail[0].condition, Condition::C1);
}

#[test]
fn residuals_vanish_at_the_true_parameters() {
    let n = 1_000_000;
    let ds = generate(&exact_model(n, 41)).unwrap();
    let truth = ShadowPropensityModel::with_params(z_star(), vec![1.0, 1.0, 1.0], -1.5, 0.0);
    let z: Vec<Vec<f64>> = z_star().iter().map(|c| ds.values(c).unwrap()).collect();
    let y = ds.values_or("Y", 0.0).unwrap();
    let r = ds.values("R").unwrap();
    // R / p - 1 is heavy tailed, so the bound uses its empirical spread
    let mut sq = 0.0;
    for i in 0..n {
        let zi = [z[0][i], z[1][i], z[2][i]];
        let term = r[i] / or_propensity(y[i], &zi, &truth) - 1.0;
        sq += term * term * zi.iter().map(|v| v * v).sum::<f64>().max(1.0);
    }
    let se = (sq / n as f64).sqrt() / (n as f64).sqrt();
    for mode in [HMode::PaperMean, HMode::ShadowA] {
        let res = moment_residuals(&ds, &truth, mode).unwrap();
        assert_eq!(res.values.len(), 4);
        assert!(res.max_abs() < 4.0 * se, "{mode:?} {:?} se {se}", res.values);
    }
}

#[test]
fn solver_recovers_an_exact_model() {
    let ds = generate(&exact_model(100_000, 42)).unwrap();
    for mode in [HMode::PaperMean, HMode::ShadowA] {
        let m = solve_propensity(
            &ds,
            &z_star(),
            &SolverOptions {
                h_mode: mode,
                ..SolverOptions::default()
            },
        )
        .unwrap();
        assert!(m.converged && m.residual_norm < 1e-10, "{mode:?}");
        assert!((m.gamma + 1.5).abs() < 0.2, "{mode:?} gamma {}", m.gamma);
        for b in &m.beta {
            assert!((b - 1.0).abs() < 0.15, "{mode:?} beta {:?}", m.beta);
        }
    }
}

#[test]
fn solution_ignores_row_order_and_duplication() {
    let ds = base(5000, 43);
    let opts = SolverOptions::default();
    let m = solve_propensity(&ds, &z_star(), &opts).unwrap();
    let perm: Vec<usize> = (0..ds.n_rows()).rev().collect();
    let shuffled = solve_propensity(&ds.permute_rows(&perm), &z_star(), &opts).unwrap();
    let doubled = solve_propensity(&ds.concat(&ds).unwrap(), &z_star(), &opts).unwrap();
    for other in [shuffled, doubled] {
        assert!((other.gamma - m.gamma).abs() < 1e-7);
        for (a, b) in other.beta.iter().zip(&m.beta) {
            assert!((a - b).abs() < 1e-7);
        }
    }
}

#[test]
fn treatment_model_recovers_pseudo_true_coefficients() {
    let z = z_star();
    let big = fit_treatment_propensity(&base(1_000_000, 51), &z).unwrap();
    let fit = fit_treatment_propensity(&base(100_000, 52), &z).unwrap();
    for (a, b) in fit.coefficients.iter().zip(&big.coefficients) {
        assert!((a - b).abs() < 0.1, "{:?} vs {:?}", fit.coefficients, big.coefficients);
    }
    // leaving out W1 attenuates the true coefficient of 2
    assert!(big.coefficients[1..].iter().all(|&c| c > 1.0 && c < 2.0));
}

#[test]
fn treatment_model_is_flat_when_treatment_is_randomized() {
    let mut c = default_config().with_n(100_000).with_seed(53);
    c.coef_a = [0.52, 0.0, 0.0, 0.0, 0.0];
    let fit = fit_treatment_propensity(&generate(&c).unwrap(), &z_star()).unwrap();
    assert!((fit.coefficients[0] - 0.52).abs() < 0.05);
    assert!(fit.coefficients[1..].iter().all(|c| c.abs() < 0.05), "{:?}", fit.coefficients);
}

#[test]
fn true_propensities_give_unbiased_arm_means() {
    let cfg = default_config();
    let reps = 500;
    let arms: Vec<(f64, f64)> = (0..reps as u64)
        .into_par_iter()
        .map(|s| {
            let c = cfg.clone().with_n(10_000).with_seed(10_000 + s);
            let ds = generate(&c).unwrap();
            let w: Vec<Vec<f64>> = ["W1", "W2", "W3", "W4"].iter().map(|n| ds.values(n).unwrap()).collect();
            let a = ds.values("A").unwrap();
            let y1 = ds.values("Y1").unwrap();
            let inc = ds.values("I").unwrap();
            let mut p_r = Vec::with_capacity(c.n);
            let mut p_a = Vec::with_capacity(c.n);
            for i in 0..c.n {
                let wi = [w[0][i], w[1][i], w[2][i], w[3][i]];
                p_a.push(c.treatment_probability(&wi));
                p_r.push(c.response_probability(y1[i], a[i], &wi, inc[i]));
            }
            let est = ipw_from_propensities(&ds, &p_r, &p_a, ClipBounds::default(), Method::Full).unwrap();
            (est.mean_treated, est.mean_control)
        })
        .collect();

    // arm means of the counterfactual columns, independent draws
    let oracle = generate(&cfg.clone().with_n(1_000_000).with_seed(99)).unwrap();
    let truth1 = oracle.values("Y_a1").unwrap().iter().sum::<f64>() / 1e6;
    let truth0 = oracle.values("Y_a0").unwrap().iter().sum::<f64>() / 1e6;
    for (k, truth) in [(0, truth1), (1, truth0)] {
        let v: Vec<f64> = arms.iter().map(|p| if k == 0 { p.0 } else { p.1 }).collect();
        let mean = v.iter().sum::<f64>() / reps as f64;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (reps - 1) as f64;
        let se = (var / reps as f64 + truth * (1.0 - truth) / 1e6).sqrt();
        assert!((mean - truth).abs() < 3.0 * se, "arm {k}: {mean} vs {truth} (se {se})");
    }
}

#[test]
fn ace_scales_with_the_outcome() {
    let ds = base(5000, 61);
    let opts = EstimateOptions::default();
    let one = estimate_ace(&ds, &z_star(), &opts, Method::Full).unwrap();
    let mut cols = ds.columns().to_vec();
    let idx = cols.iter().position(|c| c.name == "Y").unwrap();
    let y = ds.column("Y").unwrap();
    cols[idx] = Column::optional("Y", (0..ds.n_rows()).map(|i| y.data.get(i).map(|v| 2.0 * v)).collect());
    let scaled = Dataset::new(cols).unwrap().with_roles(ds.roles().unwrap().clone()).unwrap();
    let two = estimate_ace(&scaled, &z_star(), &opts, Method::Full).unwrap();
    assert!((two.estimate.ace - 2.0 * one.estimate.ace).abs() < 1e-6);
    let (g1, g2) = (one.response_model.unwrap().gamma, two.response_model.unwrap().gamma);
    assert!((g2 - g1 / 2.0).abs() < 1e-6);
}

#[test]
fn interior_propensities_ignore_clip_bounds() {
    let ds = base(2000, 62);
    let n = ds.n_rows();
    let p_r: Vec<f64> = (0..n).map(|i| 0.3 + 0.4 * expit(i as f64 / n as f64)).collect();
    let p_a: Vec<f64> = (0..n).map(|i| 0.2 + 0.5 * ((i % 10) as f64 / 10.0)).collect();
    let wide = ipw_from_propensities(&ds, &p_r, &p_a, ClipBounds::default(), Method::Full).unwrap();
    let narrow = ipw_from_propensities(&ds, &p_r, &p_a, ClipBounds::new(0.1, 0.9).unwrap(), Method::Full).unwrap();
    assert_eq!(wide.clipped_fraction, 0.0);
    assert_eq!(wide.ace, narrow.ace);
}

#[test]
fn wrong_set_is_fine_when_w4_is_inert() {
    let mut c = default_config();
    c.coef_a[4] = 0.0;
    c.coef_y[3] = 0.0;
    c.coef_r_ref[2] = 0.0;
    for j in 0..4 {
        if j != 3 {
            c.sigma[3][j] = 0.0;
            c.sigma[j][3] = 0.0;
        }
    }
    let truth = true_ace(&c.clone().with_seed(1), 1_000_000).unwrap().ace;
    let opts = EstimateOptions::default();
    let (wrong, full): (Vec<f64>, Vec<f64>) = (0..40u64)
        .into_par_iter()
        .map(|s| {
            let ds = generate(&c.clone().with_n(10_000).with_seed(700 + s)).unwrap();
            let w = baseline_wrong_adjustment(&ds, &opts).unwrap().estimate.ace;
            let f = estimate_ace(&ds, &z_star(), &opts, Method::Full).unwrap().estimate.ace;
            (w, f)
        })
        .unzip();
    let (mw, mf) = (median(&wrong).unwrap(), median(&full).unwrap());
    assert!((mw - mf).abs() < 0.02, "wrong {mw} full {mf}");
    assert!((mw - truth).abs() < 0.04, "wrong {mw} truth {truth}");
}

#[test]
fn ground_truth_is_stable() {
    let c = default_config();
    let a = true_ace(&c, 1_000_000).unwrap();
    let b = true_ace(&c.clone().with_seed(5), 2_000_000).unwrap();
    assert!(a.std_error < 0.001);
    assert!((a.ace - b.ace).abs() < 2.0 * (a.std_error.powi(2) + b.std_error.powi(2)).sqrt() + 1e-3);
}

#[test]
fn calibration_of_the_lrt_under_an_independent_regressor() {
    use shadowadj::glm::{fit_glm, likelihood_ratio_test, DesignMatrix, Family, FitOptions};
    use rand::{Rng, SeedableRng};
    let rejections = (0..2000u64)
        .into_par_iter()
        .filter(|&s| {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(s);
            let n = 400;
            let x: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
            let v: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
            let y: Vec<f64> = x.iter().map(|&xi| (rng.random::<f64>() < expit(0.3 + xi)) as u8 as f64).collect();
            let null = DesignMatrix::with_intercept(&[("x", &x)]).unwrap();
            let full = DesignMatrix::with_intercept(&[("x", &x), ("v", &v)]).unwrap();
            let f0 = fit_glm(&y, &null, Family::Logistic, FitOptions::default()).unwrap();
            let f1 = fit_glm(&y, &full, Family::Logistic, FitOptions::default()).unwrap();
            !likelihood_ratio_test(&f0, &f1, 0.05).unwrap().independent
        })
        .count();
    // exact binomial 99% interval for 2000 draws at 0.05
    assert!((76..=126).contains(&rejections), "{rejections}");
}
