//! Synthetic data from the simulation study's structural equations.
//!
//! ```text
//! W  ~ N(0, Σ)
//! A  ~ Bernoulli(expit(0.52 + 2·W1 + 2·W2 + 2·W3 + 2·W4))
//! Y1 ~ Bernoulli(expit(3·A + 2·W2 + 2·W3 + 2·W4))
//! I  ~ N(0, 2)
//! R  ~ Bernoulli(π0 / (π0 + η·(1 − π0)))
//!      π0 = expit(W2 + W3 + W4 + 0.5·I),  η = exp(−1.5·Y1)
//! ```
//!
//! Every probability is clipped to `prob_clip`. Each variable draws from its
//! own ChaCha stream, so switching scenario leaves the other draws unchanged.

use nalgebra::{Matrix4, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::citest::GraphOracle;
use crate::data::{Column, Dataset, RoleMap};
use crate::dsep::Dag;
use crate::error::{Error, Result};
use crate::glm::expit;

pub const TREATMENT: &str = "A";
pub const OUTCOME: &str = "Y";
pub const RESPONSE: &str = "R";
pub const INCENTIVE: &str = "I";
pub const COVARIATES: [&str; 4] = ["W1", "W2", "W3", "W4"];
/// Oracle column with the outcome under no missingness.
pub const FULL_OUTCOME: &str = "Y1";
pub const OUTCOME_TREATED: &str = "Y_a1";
pub const OUTCOME_CONTROL: &str = "Y_a0";

const STREAM_W: u64 = 1;
const STREAM_A: u64 = 2;
const STREAM_Y: u64 = 3;
const STREAM_I: u64 = 4;
const STREAM_R: u64 = 5;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    #[default]
    Base,
    /// Adds `coef · A` inside the baseline response expit.
    AddAtoRy(f64),
    /// W4 is generated but not emitted.
    HideW4,
}

impl std::fmt::Display for Scenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Scenario::Base => write!(f, "base"),
            Scenario::AddAtoRy(c) => write!(f, "add-a-to-ry={c}"),
            Scenario::HideW4 => write!(f, "hide-w4"),
        }
    }
}

impl std::str::FromStr for Scenario {
    type Err = Error;

    /// Accepts `base`, `hide-w4`, `add-a-to-ry` (coefficient 1.5) and
    /// `add-a-to-ry=<coef>`.
    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase().replace('_', "-");
        let (name, arg) = match lower.split_once('=') {
            Some((n, a)) => (n, Some(a)),
            None => (lower.as_str(), None),
        };
        match (name, arg) {
            ("base", None) => Ok(Scenario::Base),
            ("hide-w4" | "hidew4", None) => Ok(Scenario::HideW4),
            ("add-a-to-ry" | "addatory", None) => Ok(Scenario::AddAtoRy(1.5)),
            ("add-a-to-ry" | "addatory", Some(c)) => c
                .parse()
                .map(Scenario::AddAtoRy)
                .map_err(|_| Error::Config(format!("bad scenario coefficient `{c}`"))),
            _ => Err(Error::Config(format!("unknown scenario `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DgpConfig {
    pub n: usize,
    pub seed: u64,
    pub sigma: [[f64; 4]; 4],
    /// Intercept, then W1..W4.
    pub coef_a: [f64; 5],
    /// On A, W2, W3, W4.
    pub coef_y: [f64; 4],
    /// On W2, W3, W4, I.
    pub coef_r_ref: [f64; 4],
    pub gamma_true: f64,
    pub incentive_variance: f64,
    pub prob_clip: (f64, f64),
    pub scenario: Scenario,
}

pub fn default_config() -> DgpConfig {
    DgpConfig {
        n: 10_000,
        seed: 0,
        sigma: [
            [1.2, 0.0, 0.0, 0.0],
            [0.0, 1.0, 0.4, 0.4],
            [0.0, 0.4, 1.0, 0.3],
            [0.0, 0.4, 0.3, 1.0],
        ],
        coef_a: [0.52, 2.0, 2.0, 2.0, 2.0],
        coef_y: [3.0, 2.0, 2.0, 2.0],
        coef_r_ref: [1.0, 1.0, 1.0, 0.5],
        gamma_true: -1.5,
        incentive_variance: 2.0,
        prob_clip: (0.01, 0.99),
        scenario: Scenario::Base,
    }
}

impl Default for DgpConfig {
    fn default() -> Self {
        default_config()
    }
}

impl DgpConfig {
    pub fn with_n(mut self, n: usize) -> Self {
        self.n = n;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_scenario(mut self, scenario: Scenario) -> Self {
        self.scenario = scenario;
        self
    }

    fn clip(&self, p: f64) -> f64 {
        p.clamp(self.prob_clip.0, self.prob_clip.1)
    }

    fn validate(&self) -> Result<Matrix4<f64>> {
        let (lo, hi) = self.prob_clip;
        if !(0.0 <= lo && lo < hi && hi <= 1.0) {
            return Err(Error::Config(format!("invalid prob_clip ({lo}, {hi})")));
        }
        if !(self.incentive_variance >= 0.0 && self.incentive_variance.is_finite()) {
            return Err(Error::Config("incentive_variance must be non-negative".into()));
        }
        let sigma = Matrix4::from_fn(|i, j| self.sigma[i][j]);
        if (sigma - sigma.transpose()).amax() > 1e-12 {
            return Err(Error::NotPositiveDefinite);
        }
        sigma
            .cholesky()
            .map(|c| c.l())
            .ok_or(Error::NotPositiveDefinite)
    }

    /// p(A=1 | w).
    pub fn treatment_probability(&self, w: &[f64; 4]) -> f64 {
        let c = &self.coef_a;
        self.clip(expit(c[0] + c[1] * w[0] + c[2] * w[1] + c[3] * w[2] + c[4] * w[3]))
    }

    /// p(Y1=1 | a, w).
    pub fn outcome_probability(&self, a: f64, w: &[f64; 4]) -> f64 {
        let c = &self.coef_y;
        self.clip(expit(c[0] * a + c[1] * w[1] + c[2] * w[2] + c[3] * w[3]))
    }

    /// p(R=1 | y1, a, w, i) for the configured scenario.
    pub fn response_probability(&self, y1: f64, a: f64, w: &[f64; 4], i: f64) -> f64 {
        let c = &self.coef_r_ref;
        let mut lin = c[0] * w[1] + c[1] * w[2] + c[2] * w[3] + c[3] * i;
        if let Scenario::AddAtoRy(coef) = self.scenario {
            lin += coef * a;
        }
        let pi0 = self.clip(expit(lin));
        let eta = (self.gamma_true * y1).exp();
        self.clip(pi0 / (pi0 + eta * (1.0 - pi0)))
    }
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn draw_covariates(config: &DgpConfig, chol: &Matrix4<f64>) -> Vec<[f64; 4]> {
    let mut rng = stream(config.seed, STREAM_W);
    (0..config.n)
        .map(|_| {
            let e = Vector4::from_fn(|_, _| StandardNormal.sample(&mut rng));
            let w = chol * e;
            [w[0], w[1], w[2], w[3]]
        })
        .collect()
}

/// Counterfactual outcomes `(Y(1), Y(0))`, sharing one uniform per unit.
fn counterfactuals(config: &DgpConfig, w: &[[f64; 4]], rng: &mut ChaCha8Rng) -> Vec<(u8, u8)> {
    w.iter()
        .map(|wi| {
            let u: f64 = rng.random();
            (
                (u < config.outcome_probability(1.0, wi)) as u8,
                (u < config.outcome_probability(0.0, wi)) as u8,
            )
        })
        .collect()
}

/// Draws a dataset with roles set and the oracle columns attached.
pub fn generate(config: &DgpConfig) -> Result<Dataset> {
    let chol = config.validate()?;
    let w = draw_covariates(config, &chol);

    let mut rng_a = stream(config.seed, STREAM_A);
    let a: Vec<u8> = w
        .iter()
        .map(|wi| (rng_a.random::<f64>() < config.treatment_probability(wi)) as u8)
        .collect();

    let cf = counterfactuals(config, &w, &mut stream(config.seed, STREAM_Y));
    let y1: Vec<u8> = a
        .iter()
        .zip(&cf)
        .map(|(&ai, &(y_1, y_0))| if ai == 1 { y_1 } else { y_0 })
        .collect();

    let incentive = Normal::new(0.0, config.incentive_variance.sqrt())
        .map_err(|e| Error::Config(e.to_string()))?;
    let mut rng_i = stream(config.seed, STREAM_I);
    let inc: Vec<f64> = (0..config.n).map(|_| incentive.sample(&mut rng_i)).collect();

    let mut rng_r = stream(config.seed, STREAM_R);
    let r: Vec<u8> = (0..config.n)
        .map(|k| {
            let p = config.response_probability(y1[k] as f64, a[k] as f64, &w[k], inc[k]);
            (rng_r.random::<f64>() < p) as u8
        })
        .collect();

    let y: Vec<Option<f64>> = y1
        .iter()
        .zip(&r)
        .map(|(&yk, &rk)| (rk == 1).then_some(yk as f64))
        .collect();

    let emitted: &[&str] = match config.scenario {
        Scenario::HideW4 => &COVARIATES[..3],
        _ => &COVARIATES,
    };
    let mut columns = vec![
        Column::binary(TREATMENT, a),
        Column::optional(OUTCOME, y),
        Column::binary(RESPONSE, r),
        Column::continuous(INCENTIVE, inc),
    ];
    for (j, name) in emitted.iter().enumerate() {
        columns.push(Column::continuous(*name, w.iter().map(|wi| wi[j]).collect()));
    }
    columns.push(Column::binary(FULL_OUTCOME, y1).into_oracle());
    columns.push(Column::binary(OUTCOME_TREATED, cf.iter().map(|c| c.0).collect()).into_oracle());
    columns.push(Column::binary(OUTCOME_CONTROL, cf.iter().map(|c| c.1).collect()).into_oracle());

    Dataset::new(columns)?.with_roles(RoleMap::new(
        TREATMENT,
        OUTCOME,
        RESPONSE,
        INCENTIVE,
        emitted.iter().copied(),
    ))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub ace: f64,
    pub std_error: f64,
    pub n_oracle: usize,
}

/// Monte Carlo value of E[Y(1) − Y(0)] from `n_oracle` counterfactual draws
/// with the seed of `config`.
pub fn true_ace(config: &DgpConfig, n_oracle: usize) -> Result<GroundTruth> {
    if n_oracle < 2 {
        return Err(Error::Config("n_oracle must be at least 2".into()));
    }
    let sized = config.clone().with_n(n_oracle);
    let chol = sized.validate()?;
    let w = draw_covariates(&sized, &chol);
    let cf = counterfactuals(&sized, &w, &mut stream(sized.seed, STREAM_Y));
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for &(y_1, y_0) in &cf {
        let d = y_1 as f64 - y_0 as f64;
        sum += d;
        sum_sq += d * d;
    }
    let n = n_oracle as f64;
    let mean = sum / n;
    let var = (sum_sq / n - mean * mean) * n / (n - 1.0);
    Ok(GroundTruth {
        ace: mean,
        std_error: (var / n).sqrt(),
        n_oracle,
    })
}

/// Generating graph of the simulation study, with `Y1` as the outcome node.
pub fn simulation_graph(scenario: Scenario) -> Dag {
    let mut g = Dag::new();
    let edges = [
        ("W1", "A"),
        ("W2", "A"),
        ("W3", "A"),
        ("W4", "A"),
        ("W2", "Y1"),
        ("W3", "Y1"),
        ("W4", "Y1"),
        ("W2", "R"),
        ("W3", "R"),
        ("W4", "R"),
        ("A", "Y1"),
        ("Y1", "R"),
        ("I", "R"),
    ];
    for (a, b) in edges {
        g.add_edge(a, b).expect("acyclic");
    }
    for (a, b) in [("W2", "W3"), ("W3", "W4"), ("W2", "W4")] {
        g.add_bidirected(a, b).expect("acyclic");
    }
    if let Scenario::AddAtoRy(_) = scenario {
        g.add_edge("A", "R").expect("acyclic");
    }
    g
}

/// d-separation oracle for the simulation graph. Under `HideW4` the search
/// only sees W1..W3.
pub fn simulation_oracle(scenario: Scenario, alpha: f64) -> GraphOracle {
    let covariates = match scenario {
        Scenario::HideW4 => &COVARIATES[..3],
        _ => &COVARIATES[..],
    };
    GraphOracle {
        dag: simulation_graph(scenario),
        treatment: TREATMENT.into(),
        outcome: FULL_OUTCOME.into(),
        response: RESPONSE.into(),
        incentive: INCENTIVE.into(),
        covariates: covariates.iter().map(|s| s.to_string()).collect(),
        alpha,
    }
}

/// Small teaching graph in which W3 is the witness and {W1, W2} adjusts.
pub fn pedagogical_graph() -> Dag {
    let mut g = Dag::new();
    let edges = [
        ("A", "Y1"),
        ("Y1", "R"),
        ("I", "R"),
        ("U1", "W1"),
        ("U1", "W2"),
        ("U2", "W1"),
        ("U2", "A"),
        ("W1", "R"),
        ("W2", "Y1"),
        ("W3", "A"),
    ];
    for (a, b) in edges {
        g.add_edge(a, b).expect("acyclic");
    }
    g
}

pub fn pedagogical_oracle(alpha: f64) -> GraphOracle {
    GraphOracle {
        dag: pedagogical_graph(),
        treatment: "A".into(),
        outcome: "Y1".into(),
        response: "R".into(),
        incentive: "I".into(),
        covariates: vec!["W1".into(), "W2".into(), "W3".into()],
        alpha,
    }
}
