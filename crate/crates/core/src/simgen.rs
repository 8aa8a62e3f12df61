//! Synthetic data from the simulation design: eight equicorrelated Gaussian
//! exposures, covariates `z = (1, z1, z2, z3)`, one of three true links, and
//! continuous, binary, count, or right-censored survival outcomes.
//!
//! The binary, count, and survival recipes are this crate's own conventions
//! and are tagged `synthetic-convention` in the metadata.

use std::fmt;
use std::str::FromStr;

use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Family, Outcome};
use crate::error::{PlsiError, Result};
use crate::model::sigmoid;
use crate::numerics::{cholesky, dot, mvn_sample, norm2, Matrix, Rng};

/// Unnormalized true index direction.
pub const BETA_RAW: [f64; 8] = [1.0, 0.7, -0.5, 0.5, 0.3, -0.1, 0.0, 0.0];
/// True linear coefficients, intercept first.
pub const GAMMA_TRUE: [f64; 4] = [1.0, 1.0, -0.5, 0.5];
/// Normalizer that omits the `0.5^2` term; yields a direction of norm > 1.
pub const LITERAL_NORMALIZER_SQ: f64 = 1.84;
pub const DEFAULT_RHO: f64 = 0.3;
pub const DEFAULT_CENSORING_RATE: f64 = 0.25;

/// Shape of the true index-response function.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkShape {
    Linear,
    SShape,
    Sigmoid,
}

impl LinkShape {
    pub const ALL: [LinkShape; 3] = [LinkShape::Linear, LinkShape::SShape, LinkShape::Sigmoid];

    pub fn as_str(self) -> &'static str {
        match self {
            LinkShape::Linear => "linear",
            LinkShape::SShape => "s_shape",
            LinkShape::Sigmoid => "sigmoid",
        }
    }
}

impl fmt::Display for LinkShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LinkShape {
    type Err = PlsiError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "linear" => Ok(LinkShape::Linear),
            "s_shape" | "sshape" => Ok(LinkShape::SShape),
            "sigmoid" => Ok(LinkShape::Sigmoid),
            other => Err(PlsiError::Argument(format!("unknown link shape '{other}'"))),
        }
    }
}

/// Closed-form true link.
pub fn eval_true_link(shape: LinkShape, s: f64) -> f64 {
    match shape {
        LinkShape::Linear => s,
        LinkShape::SShape => 10.0 * (2.0 * sigmoid(s) - 0.2 * s - 1.0),
        LinkShape::Sigmoid => 5.0 * (sigmoid(2.0 * s) - 0.5),
    }
}

/// How survival times are censored.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum Censoring {
    None,
    /// `C ~ Uniform(0, c0)` with `c0` solved so the expected censoring
    /// fraction given the realized hazards equals the target.
    Calibrated(f64),
    /// `C ~ Uniform(0, c0)` with the given `c0`.
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimScenario {
    pub link: LinkShape,
    pub family: Family,
    pub n: usize,
    pub rho: f64,
    pub beta_true: Vec<f64>,
    pub gamma_true: Vec<f64>,
    pub seed: u64,
    /// Standard deviation of the Gaussian noise (1 in the design).
    pub noise_sd: f64,
    pub censoring: Censoring,
}

impl SimScenario {
    /// The design's settings: unit-norm `beta`, `rho = 0.3`, unit noise.
    pub fn standard(link: LinkShape, family: Family, n: usize, seed: u64) -> Self {
        let norm = norm2(&BETA_RAW);
        SimScenario {
            link,
            family,
            n,
            rho: DEFAULT_RHO,
            beta_true: BETA_RAW.iter().map(|b| b / norm).collect(),
            gamma_true: GAMMA_TRUE.to_vec(),
            seed,
            noise_sd: 1.0,
            censoring: Censoring::Calibrated(DEFAULT_CENSORING_RATE),
        }
    }

    /// Rescales `beta_true` with the literal normalizer `sqrt(1.84)`.
    pub fn with_literal_normalizer(mut self) -> Self {
        let norm = LITERAL_NORMALIZER_SQ.sqrt();
        self.beta_true = BETA_RAW.iter().map(|b| b / norm).collect();
        self
    }

    pub fn p(&self) -> usize {
        self.beta_true.len()
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.p();
        if p == 0 || self.gamma_true.len() != 4 {
            return Err(PlsiError::Config(
                "scenario needs a non-empty beta and four gamma entries".into(),
            ));
        }
        let lower = -1.0 / (p as f64 - 1.0).max(1.0);
        if !(self.rho > lower && self.rho < 1.0) {
            return Err(PlsiError::Domain(format!(
                "rho = {} is outside ({lower:.4}, 1), the positive-definite range for p = {p}",
                self.rho
            )));
        }
        if !(self.noise_sd >= 0.0) {
            return Err(PlsiError::Domain("noise sd must be non-negative".into()));
        }
        match self.censoring {
            Censoring::Calibrated(r) if !(r > 0.0 && r < 1.0) => {
                return Err(PlsiError::Domain(format!("censoring rate {r} outside (0, 1)")))
            }
            Censoring::Fixed(c) if !(c > 0.0) => {
                return Err(PlsiError::Domain(format!("censoring bound {c} must be positive")))
            }
            _ => {}
        }
        Ok(())
    }

    fn require(&self, family: Family) -> Result<()> {
        if self.family != family {
            return Err(PlsiError::Config(format!(
                "scenario family is {} but a {family} generator was requested",
                self.family
            )));
        }
        self.validate()
    }
}

/// Provenance stored beside every generated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimMetadata {
    pub scenario: SimScenario,
    pub conventions: Vec<String>,
    /// Upper bound of the uniform censoring distribution actually used.
    pub censoring_bound: Option<f64>,
    pub censored_fraction: Option<f64>,
}

/// Generated data together with the true index and predictor.
#[derive(Debug, Clone)]
pub struct SimData {
    pub dataset: Dataset,
    pub index_true: Vec<f64>,
    pub eta_true: Vec<f64>,
    pub meta: SimMetadata,
}

/// `n` rows of eight exposures with unit variances and common correlation `rho`.
pub fn gen_exposures(rng: &mut Rng, n: usize, rho: f64) -> Result<Matrix> {
    gen_exposures_p(rng, n, 8, rho)
}

pub fn gen_exposures_p(rng: &mut Rng, n: usize, p: usize, rho: f64) -> Result<Matrix> {
    let mut cov = Matrix::zeros(p, p);
    for i in 0..p {
        for j in 0..p {
            cov.set(i, j, if i == j { 1.0 } else { rho });
        }
    }
    let chol = cholesky(&cov).map_err(|_| {
        PlsiError::Domain(format!("rho = {rho} does not give a positive-definite covariance"))
    })?;
    mvn_sample(rng, &vec![0.0; p], &chol, n)
}

/// `(1, N(0,1), N(0,1), Bernoulli(0.5))` rows.
pub fn gen_covariates(rng: &mut Rng, n: usize) -> Matrix {
    let mut z = Matrix::zeros(n, 4);
    for i in 0..n {
        let row = z.row_mut(i);
        row[0] = 1.0;
        row[1] = rng.normal();
        row[2] = rng.normal();
        row[3] = f64::from(u8::from(rng.bernoulli(0.5)));
    }
    z
}

struct Design {
    x: Matrix,
    z: Matrix,
    index: Vec<f64>,
    eta: Vec<f64>,
}

fn design(rng: &mut Rng, scenario: &SimScenario) -> Result<Design> {
    let x = gen_exposures_p(rng, scenario.n, scenario.p(), scenario.rho)?;
    let z = gen_covariates(rng, scenario.n);
    let index: Vec<f64> = (0..scenario.n)
        .map(|i| dot(x.row(i), &scenario.beta_true))
        .collect();
    let eta = index
        .iter()
        .enumerate()
        .map(|(i, &s)| eval_true_link(scenario.link, s) + dot(z.row(i), &scenario.gamma_true))
        .collect();
    Ok(Design { x, z, index, eta })
}

fn conventions(scenario: &SimScenario) -> Vec<String> {
    let mut c = Vec::new();
    if scenario.family != Family::Gaussian {
        c.push("synthetic-convention".to_string());
    }
    let norm = norm2(&scenario.beta_true);
    if (norm - 1.0).abs() > 1e-12 {
        c.push(format!("beta_true has norm {norm:.6} (literal normalizer)"));
    }
    c.push("gamma1..gamma3 are the non-intercept coefficients of z1..z3".to_string());
    c
}

fn finish(
    scenario: &SimScenario,
    d: Design,
    outcome: Outcome,
    censoring_bound: Option<f64>,
    censored_fraction: Option<f64>,
) -> Result<SimData> {
    Ok(SimData {
        dataset: Dataset::new(d.x, d.z, outcome)?,
        index_true: d.index,
        eta_true: d.eta,
        meta: SimMetadata {
            scenario: scenario.clone(),
            conventions: conventions(scenario),
            censoring_bound,
            censored_fraction,
        },
    })
}

/// `y = g(beta'x) + gamma'z + noise_sd * e`.
pub fn gen_continuous(rng: &mut Rng, scenario: &SimScenario) -> Result<SimData> {
    scenario.require(Family::Gaussian)?;
    let d = design(rng, scenario)?;
    let y = d
        .eta
        .iter()
        .map(|e| e + scenario.noise_sd * rng.normal())
        .collect();
    finish(scenario, d, Outcome::Gaussian(y), None, None)
}

/// `y ~ Bernoulli(sigmoid(eta))` for each entry of `eta`.
pub fn binary_from_eta(rng: &mut Rng, eta: &[f64]) -> Vec<f64> {
    eta.iter()
        .map(|&e| f64::from(u8::from(rng.uniform() < sigmoid(e))))
        .collect()
}

pub fn gen_binary(rng: &mut Rng, scenario: &SimScenario) -> Result<SimData> {
    scenario.require(Family::Binomial)?;
    let d = design(rng, scenario)?;
    let y = binary_from_eta(rng, &d.eta);
    finish(scenario, d, Outcome::Binomial(y), None, None)
}

pub fn gen_count(rng: &mut Rng, scenario: &SimScenario) -> Result<SimData> {
    scenario.require(Family::Poisson)?;
    let d = design(rng, scenario)?;
    let mut y = Vec::with_capacity(d.eta.len());
    for &e in &d.eta {
        let mu = e.exp();
        let draw = if mu > 0.0 && mu.is_finite() {
            let dist = Poisson::new(mu).map_err(|err| PlsiError::Domain(err.to_string()))?;
            dist.sample(&mut PoissonSource(rng))
        } else {
            0.0
        };
        y.push(draw);
    }
    finish(scenario, d, Outcome::Poisson(y), None, None)
}

// Adapter so rand_distr samplers can draw from our generator.
struct PoissonSource<'a>(&'a mut Rng);

impl rand::RngCore for PoissonSource<'_> {
    fn next_u32(&mut self) -> u32 {
        (self.0.next_u64() >> 32) as u32
    }

    fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        for chunk in dst.chunks_mut(8) {
            let bytes = self.0.next_u64().to_le_bytes();
            chunk.copy_from_slice(&bytes[..chunk.len()]);
        }
    }
}

/// Expected censored fraction `mean_i (1 - exp(-h_i c0)) / (h_i c0)` for
/// exponential event times with hazards `h_i` and `C ~ Uniform(0, c0)`.
pub fn expected_censoring(hazards: &[f64], c0: f64) -> f64 {
    let total: f64 = hazards
        .iter()
        .map(|&h| {
            let x = h * c0;
            if x < 1e-8 {
                1.0 - x / 2.0
            } else {
                -(-x).exp_m1() / x
            }
        })
        .sum();
    total / hazards.len() as f64
}

/// Solves `expected_censoring(hazards, c0) = rate` by bisection on `log c0`.
pub fn calibrate_censoring_bound(hazards: &[f64], rate: f64) -> Result<f64> {
    if hazards.is_empty() {
        return Err(PlsiError::EmptyData("no hazards to calibrate against".into()));
    }
    if !(rate > 0.0 && rate < 1.0) {
        return Err(PlsiError::Domain(format!("censoring rate {rate} outside (0, 1)")));
    }
    let (mut lo, mut hi) = (-60.0f64, 60.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        // Censoring decreases as the bound grows.
        if expected_censoring(hazards, mid.exp()) > rate {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok((0.5 * (lo + hi)).exp())
}

/// Exponential event times with hazard `exp(eta_i)` and the given censoring.
/// Returns observed times, event flags, and the censoring bound used.
pub fn survival_from_eta(
    rng: &mut Rng,
    eta: &[f64],
    censoring: Censoring,
) -> Result<(Vec<f64>, Vec<bool>, Option<f64>)> {
    let hazards: Vec<f64> = eta.iter().map(|e| e.exp()).collect();
    let bound = match censoring {
        Censoring::None => None,
        Censoring::Fixed(c) => Some(c),
        Censoring::Calibrated(rate) => Some(calibrate_censoring_bound(&hazards, rate)?),
    };
    let mut time = Vec::with_capacity(eta.len());
    let mut event = Vec::with_capacity(eta.len());
    for &h in &hazards {
        let t = -rng.uniform_open().ln() / h;
        match bound {
            None => {
                time.push(t);
                event.push(true);
            }
            Some(c0) => {
                let c = c0 * rng.uniform_open();
                time.push(t.min(c));
                event.push(t <= c);
            }
        }
    }
    Ok((time, event, bound))
}

pub fn gen_survival(rng: &mut Rng, scenario: &SimScenario) -> Result<SimData> {
    scenario.require(Family::Cox)?;
    let d = design(rng, scenario)?;
    let (time, event, bound) = survival_from_eta(rng, &d.eta, scenario.censoring)?;
    let censored = event.iter().filter(|&&e| !e).count() as f64 / event.len().max(1) as f64;
    finish(
        scenario,
        d,
        Outcome::Cox { time, event },
        bound,
        Some(censored),
    )
}

/// Generates a dataset for the scenario's family from `Rng::new(seed)`.
pub fn simulate(scenario: &SimScenario) -> Result<SimData> {
    let mut rng = Rng::new(scenario.seed);
    match scenario.family {
        Family::Gaussian => gen_continuous(&mut rng, scenario),
        Family::Binomial => gen_binary(&mut rng, scenario),
        Family::Poisson => gen_count(&mut rng, scenario),
        Family::Cox => gen_survival(&mut rng, scenario),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{mean, sample_sd};

    fn corr(a: &[f64], b: &[f64]) -> f64 {
        let (ma, mb) = (mean(a), mean(b));
        let c: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        c / ((a.len() - 1) as f64 * sample_sd(a) * sample_sd(b))
    }

    #[test]
    fn true_links_at_reference_points() {
        assert_eq!(eval_true_link(LinkShape::SShape, 0.0), 0.0);
        assert_eq!(eval_true_link(LinkShape::Sigmoid, 0.0), 0.0);
        assert_eq!(eval_true_link(LinkShape::Linear, 0.0), 0.0);
        assert!((eval_true_link(LinkShape::SShape, 1.0) - 2.621_172).abs() < 1e-6);
    }

    #[test]
    fn standard_beta_is_unit_norm() {
        let s = SimScenario::standard(LinkShape::Linear, Family::Gaussian, 10, 0);
        assert!((norm2(&s.beta_true) - 1.0).abs() < 1e-15);
        assert!((norm2(&BETA_RAW) - 1.445_683).abs() < 1e-6);
        let lit = s.with_literal_normalizer();
        assert!(norm2(&lit.beta_true) > 1.0);
    }

    #[test]
    fn rho_range_enforced() {
        let mut s = SimScenario::standard(LinkShape::Linear, Family::Gaussian, 10, 0);
        s.rho = -0.2;
        assert!(matches!(simulate(&s), Err(PlsiError::Domain(_))));
        assert!(gen_exposures(&mut Rng::new(0), 5, 1.0).is_err());
    }

    #[test]
    fn family_mismatch_rejected_before_sampling() {
        let s = SimScenario::standard(LinkShape::Linear, Family::Gaussian, 10, 0);
        let mut rng = Rng::new(1);
        let before = rng.clone().next_u64();
        assert!(matches!(gen_binary(&mut rng, &s), Err(PlsiError::Config(_))));
        assert!(gen_survival(&mut rng, &s).is_err());
        assert_eq!(rng.next_u64(), before);
    }

    #[test]
    fn independent_exposures_at_rho_zero() {
        let x = gen_exposures(&mut Rng::new(3), 100_000, 0.0).unwrap();
        for a in 0..8 {
            for b in (a + 1)..8 {
                assert!(corr(&x.column(a), &x.column(b)).abs() < 0.02);
            }
        }
    }

    #[test]
    fn correlated_exposures_at_design_rho() {
        let x = gen_exposures(&mut Rng::new(4), 100_000, 0.3).unwrap();
        for a in 0..8 {
            for b in (a + 1)..8 {
                assert!((corr(&x.column(a), &x.column(b)) - 0.3).abs() < 0.01);
            }
        }
    }

    #[test]
    fn exposures_reproducible() {
        let a = gen_exposures(&mut Rng::new(5), 50, 0.3).unwrap();
        let b = gen_exposures(&mut Rng::new(5), 50, 0.3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn noiseless_continuous_equals_true_predictor() {
        let mut s = SimScenario::standard(LinkShape::SShape, Family::Gaussian, 200, 6);
        s.noise_sd = 0.0;
        let sim = simulate(&s).unwrap();
        assert_eq!(sim.dataset.outcome, Outcome::Gaussian(sim.eta_true.clone()));
    }

    #[test]
    fn continuous_noise_has_unit_variance() {
        let s = SimScenario::standard(LinkShape::Linear, Family::Gaussian, 100_000, 7);
        let sim = simulate(&s).unwrap();
        let y = sim.dataset.outcome.response().unwrap();
        let resid: Vec<f64> = y.iter().zip(&sim.eta_true).map(|(a, b)| a - b).collect();
        let var = sample_sd(&resid).powi(2);
        assert!((var - 1.0).abs() < 0.02, "{var}");
    }

    #[test]
    fn saturated_binary_is_all_ones() {
        let y = binary_from_eta(&mut Rng::new(1), &[f64::INFINITY; 100]);
        assert!(y.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn binary_is_calibrated() {
        let s = SimScenario::standard(LinkShape::Linear, Family::Binomial, 100_000, 8);
        let sim = simulate(&s).unwrap();
        let y = sim.dataset.outcome.response().unwrap();
        // Bin by true probability deciles.
        let mut pairs: Vec<(f64, f64)> = sim
            .eta_true
            .iter()
            .zip(y)
            .map(|(&e, &v)| (sigmoid(e), v))
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        for bin in pairs.chunks(pairs.len() / 10) {
            let p: f64 = bin.iter().map(|v| v.0).sum::<f64>() / bin.len() as f64;
            let obs: f64 = bin.iter().map(|v| v.1).sum::<f64>() / bin.len() as f64;
            assert!((p - obs).abs() < 0.02, "{p} vs {obs}");
        }
    }

    #[test]
    fn binary_reproducible() {
        let s = SimScenario::standard(LinkShape::Sigmoid, Family::Binomial, 300, 9);
        assert_eq!(simulate(&s).unwrap().dataset, simulate(&s).unwrap().dataset);
    }

    #[test]
    fn uncensored_unit_hazard_times_are_standard_exponential() {
        let n = 100_000;
        let (mut t, e, _) = survival_from_eta(&mut Rng::new(10), &vec![0.0; n], Censoring::None).unwrap();
        assert!(e.iter().all(|&v| v));
        t.sort_by(f64::total_cmp);
        let ks = t
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let f = 1.0 - (-x).exp();
                (f - i as f64 / n as f64).abs().max((f - (i + 1) as f64 / n as f64).abs())
            })
            .fold(0.0, f64::max);
        assert!(ks < 0.01, "KS distance {ks}");
    }

    #[test]
    fn calibrated_censoring_rate() {
        for link in LinkShape::ALL {
            let s = SimScenario::standard(link, Family::Cox, 10_000, 11);
            let sim = simulate(&s).unwrap();
            let rate = sim.meta.censored_fraction.unwrap();
            assert!((rate - 0.25).abs() < 0.03, "{link}: {rate}");
            assert!(sim.meta.conventions.iter().any(|c| c == "synthetic-convention"));
        }
    }

    #[test]
    fn doubling_hazard_halves_median() {
        let n = 20_001;
        let (mut a, _, _) = survival_from_eta(&mut Rng::new(12), &vec![0.0; n], Censoring::None).unwrap();
        let (mut b, _, _) =
            survival_from_eta(&mut Rng::new(12), &vec![2f64.ln(); n], Censoring::None).unwrap();
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        assert!((b[n / 2] * 2.0 - a[n / 2]).abs() < 1e-12);
    }

    #[test]
    fn count_outcomes_are_valid() {
        let s = SimScenario::standard(LinkShape::Sigmoid, Family::Poisson, 500, 13);
        let sim = simulate(&s).unwrap();
        sim.dataset.outcome.validate().unwrap();
    }
}
