//! Simulation designs: a mixed-covariate design with uniform running variable
//! and a Gaussian design where the running variable depends on the covariates.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::data::{Dataset, EncodedColumn};
use crate::error::{Error, Result};
use crate::rng::{self, ChainRng};
use crate::stats::{mean, norm_cdf, norm_pdf, sample_sd, sample_variance};

pub const DEFAULT_TARGETS: usize = 200;
pub const DEFAULT_CALIBRATION_DRAWS: usize = 1_000_000;
/// Seed for all calibration Monte Carlo.
pub const CALIBRATION_SEED: u64 = 20_240_601;

const GAMMA0: f64 = -1.0;
const GAMMA1: f64 = 0.55;
/// Sum of the entries of the Scenario 2 covariance.
const SIGMA_Z_TOTAL: f64 = 56.0 / 3.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variability {
    /// `Var(μ(0,Z) | X=0) = 1`.
    Small,
    /// `Var(μ(0,Z) | X=0) = 15`.
    Large,
}

impl Variability {
    pub fn target_variance(self) -> f64 {
        match self {
            Variability::Small => 1.0,
            Variability::Large => 15.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Variability::Small => "small",
            Variability::Large => "large",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "small" | "a" => Ok(Variability::Small),
            "large" | "b" => Ok(Variability::Large),
            other => Err(Error::Config(format!("unknown variability case `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scenario1Spec {
    pub n: usize,
    pub case: Variability,
    pub sigma2: f64,
    pub seed: u64,
    pub n_targets: usize,
}

impl Scenario1Spec {
    pub fn new(case: Variability, sigma2: f64, seed: u64) -> Self {
        Self {
            n: 1200,
            case,
            sigma2,
            seed,
            n_targets: DEFAULT_TARGETS,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n < 4 || self.n % 2 != 0 {
            return Err(Error::Config(format!("n must be even and at least 4, got {}", self.n)));
        }
        if !(self.sigma2 >= 0.0) || !self.sigma2.is_finite() {
            return Err(Error::Config(format!("sigma2 must be non-negative, got {}", self.sigma2)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scenario2Spec {
    pub n: usize,
    pub rho: f64,
    pub sigma2: f64,
    pub seed: u64,
    pub n_targets: usize,
}

impl Scenario2Spec {
    pub fn new(rho: f64, sigma2: f64, seed: u64) -> Self {
        Self {
            n: 600,
            rho,
            sigma2,
            seed,
            n_targets: DEFAULT_TARGETS,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n < 4 {
            return Err(Error::Config(format!("n must be at least 4, got {}", self.n)));
        }
        if !(self.rho.abs() < 1.0) {
            return Err(Error::Domain(format!("rho must lie in (-1, 1), got {}", self.rho)));
        }
        if !(self.sigma2 >= 0.0) || !self.sigma2.is_finite() {
            return Err(Error::Config(format!("sigma2 must be non-negative, got {}", self.sigma2)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Scenario1Constants {
    pub alpha_mu: f64,
    pub alpha_tau: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Scenario2Constants {
    /// Common component of `γ`.
    pub gamma: f64,
    pub nu: f64,
    pub beta_mu: f64,
    pub alpha_tau: f64,
    pub beta_tau: f64,
}

#[derive(Clone, Debug)]
pub struct SimulatedData {
    pub data: Dataset,
    /// `μ(X_i, Z_i)`.
    pub mu: Vec<f64>,
    /// `τ(Z_i)`.
    pub true_tau: Vec<f64>,
    /// Fresh covariate draws from `Z | X = 0`, encoded like the dataset.
    pub targets: Vec<Vec<f64>>,
    pub target_tau: Vec<f64>,
}

/// Draws from `N(mean, cov)` through a symmetric square root, so singular
/// covariances are fine.
#[derive(Clone, Debug)]
pub struct MvNormal {
    mean: DVector<f64>,
    root: DMatrix<f64>,
}

impl MvNormal {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let eig = SymmetricEigen::new(cov);
        let tol = 1e-10 * eig.eigenvalues.amax().max(1.0);
        if eig.eigenvalues.iter().any(|&l| l < -tol) {
            return Err(Error::Numeric("covariance is not positive semidefinite".into()));
        }
        let sqrt = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
        let root = &eig.eigenvectors * DMatrix::from_diagonal(&sqrt);
        Ok(Self { mean, root })
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let k = self.mean.len();
        let xi = DVector::from_fn(k, |_, _| rng.sample::<f64, _>(StandardNormal));
        (&self.mean + &self.root * xi).as_slice().to_vec()
    }
}

/// `Σ_jk = 1 / (1 + |j - k|)`.
pub fn scenario1_covariance() -> DMatrix<f64> {
    DMatrix::from_fn(4, 4, |j, k| 1.0 / (1.0 + j.abs_diff(k) as f64))
}

/// Toeplitz with first row `(2, 4/3, 2/3, 0)`.
pub fn scenario2_covariance() -> DMatrix<f64> {
    let row = [2.0, 4.0 / 3.0, 2.0 / 3.0, 0.0];
    DMatrix::from_fn(4, 4, |j, k| row[j.abs_diff(k)])
}

fn logistic(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

pub fn f_running(x: f64) -> f64 {
    x + (2.0 * PI * x).sin()
}

/// `g_int / α_μ`; `level` is the categorical value in `{1, 2, 3}`.
pub fn g_int_unscaled(z: &[f64], level: u8) -> f64 {
    let d1 = f64::from(u8::from(level == 1));
    let d3 = f64::from(u8::from(level == 3));
    1.0 + norm_cdf((z[0] + 1.0) / 2.0) + 0.1 * (PI * z[0]).sin() + (z[1] - 1.0).atan() / PI
        + 0.5 * d1
        + d3
}

pub fn g_slope(z: &[f64], level: u8) -> f64 {
    let d3 = f64::from(u8::from(level == 3));
    let neg = if z[2] < 0.0 { z[2].abs().sqrt() } else { 0.0 };
    2.0 + logistic(z[0]) + neg + z[3].max(0.0) + d3
}

/// `τ / α_τ` in Scenario 1.
pub fn tau1_unscaled(z: &[f64], level: u8) -> f64 {
    let d2 = f64::from(u8::from(level == 2));
    1.0 + 0.5 * (2.0 * PI * z[0]).cos() + 0.6 * z[1] * z[2] + 0.4 * z[3] - 0.5 * d2
}

/// Category logits at running value `x`; the third is the reference.
pub fn category_logits(x: f64, z: &[f64]) -> [f64; 3] {
    [
        0.8 * x + 0.5 * z[0] - 0.3 * z[1],
        -0.4 * x + 0.2 * z[0] + 0.4 * z[1],
        0.0,
    ]
}

fn draw_category<R: Rng + ?Sized>(x: f64, z: &[f64], rng: &mut R) -> u8 {
    let eta = category_logits(x, z);
    let top = eta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = eta.iter().map(|e| (e - top).exp()).collect();
    let u = rng.random::<f64>() * w.iter().sum::<f64>();
    if u < w[0] {
        1
    } else if u < w[0] + w[1] {
        2
    } else {
        3
    }
}

fn encode1(z: &[f64], level: u8) -> Vec<f64> {
    let mut row = z[..4].to_vec();
    row.push(f64::from(u8::from(level == 1)));
    row.push(f64::from(u8::from(level == 2)));
    row
}

/// Level recovered from an encoded Scenario 1 row.
pub fn level_of(row: &[f64]) -> u8 {
    if row[4] == 1.0 {
        1
    } else if row[5] == 1.0 {
        2
    } else {
        3
    }
}

fn scenario1_columns() -> Vec<EncodedColumn> {
    let mut cols: Vec<EncodedColumn> = (1..=4)
        .map(|j| EncodedColumn {
            name: format!("z{j}"),
            level: None,
        })
        .collect();
    for level in ["1", "2"] {
        cols.push(EncodedColumn {
            name: format!("z5={level}"),
            level: Some(("z5".into(), level.into())),
        });
    }
    cols
}

/// Continuous part and level of one Scenario 1 covariate draw at running value `x`.
fn draw_z1<R: Rng + ?Sized>(x: f64, chol: &MvNormal, rng: &mut R) -> (Vec<f64>, u8) {
    let shift = (GAMMA0 + GAMMA1 * x) - GAMMA0;
    let mut z = chol.draw(rng);
    for v in &mut z {
        *v += shift;
    }
    let level = draw_category(x, &z, rng);
    (z, level)
}

fn scenario1_at_cutoff() -> Result<MvNormal> {
    MvNormal::new(DVector::from_element(4, GAMMA0), scenario1_covariance())
}

/// Monte Carlo draws of `Z | X = 0` in Scenario 1, as `(continuous, level)`.
pub fn scenario1_conditional_draws(n: usize, rng: &mut ChainRng) -> Result<Vec<(Vec<f64>, u8)>> {
    let mvn = scenario1_at_cutoff()?;
    Ok((0..n).map(|_| draw_z1(0.0, &mvn, rng)).collect())
}

pub fn calibrate_scenario1(
    case: Variability,
    n_mc: usize,
    seed: u64,
) -> Result<Scenario1Constants> {
    if n_mc < 2 {
        return Err(Error::Config("calibration needs at least two draws".into()));
    }
    let mut r = rng::stream(seed, rng::ids::CALIBRATION);
    let draws = scenario1_conditional_draws(n_mc, &mut r)?;
    let gi: Vec<f64> = draws.iter().map(|(z, l)| g_int_unscaled(z, *l)).collect();
    let tu: Vec<f64> = draws.iter().map(|(z, l)| tau1_unscaled(z, *l)).collect();
    Ok(Scenario1Constants {
        alpha_mu: (case.target_variance() / sample_variance(&gi)).sqrt(),
        alpha_tau: (0.5 / sample_variance(&tu)).sqrt(),
    })
}

pub fn generate_scenario1(spec: &Scenario1Spec, k: &Scenario1Constants) -> Result<SimulatedData> {
    spec.validate()?;
    let mut r = rng::stream(spec.seed, rng::ids::DATA);
    let mvn = scenario1_at_cutoff()?;
    let sigma = spec.sigma2.sqrt();
    let half = spec.n / 2;
    let mut y = Vec::with_capacity(spec.n);
    let mut xs = Vec::with_capacity(spec.n);
    let mut zs = Vec::with_capacity(spec.n);
    let mut mu = Vec::with_capacity(spec.n);
    let mut tau = Vec::with_capacity(spec.n);
    for i in 0..spec.n {
        let x: f64 = if i < half {
            r.random_range(-1.0..0.0)
        } else {
            r.random_range(0.0..1.0)
        };
        let (z, level) = draw_z1(x, &mvn, &mut r);
        let m = k.alpha_mu * g_int_unscaled(&z, level) + g_slope(&z, level) * f_running(x);
        let t = k.alpha_tau * tau1_unscaled(&z, level);
        let w = if x >= 0.0 { 1.0 } else { 0.0 };
        let e: f64 = r.sample(StandardNormal);
        y.push(m + w * t + sigma * e);
        xs.push(x);
        zs.push(encode1(&z, level));
        mu.push(m);
        tau.push(t);
    }
    let data = Dataset::new(y, xs, zs, 0.0)?.with_columns(scenario1_columns())?;

    let mut rt = rng::stream(spec.seed, rng::ids::TARGETS);
    let mut targets = Vec::with_capacity(spec.n_targets);
    let mut target_tau = Vec::with_capacity(spec.n_targets);
    for (z, level) in scenario1_conditional_draws(spec.n_targets, &mut rt)? {
        target_tau.push(k.alpha_tau * tau1_unscaled(&z, level));
        targets.push(encode1(&z, level));
    }
    Ok(SimulatedData {
        data,
        mu,
        true_tau: tau,
        targets,
        target_tau,
    })
}

pub fn z_star(z: &[f64]) -> f64 {
    z.iter().sum::<f64>() / 2.0
}

pub fn mu2_star(x: f64, z: &[f64]) -> f64 {
    let s = x + 1.0;
    s.powi(3) + (z_star(z) + 2.0).powi(2) * s.signum() * s.abs().sqrt()
}

pub fn tau2_star(z: &[f64]) -> f64 {
    0.5 * norm_cdf(2.0 * z[0] + 3.0) + norm_pdf(z[0])
}

/// `γ` component and `ν` giving `Var(X) = 1` and `Cor(X, γᵀZ) = ρ`.
pub fn scenario2_gamma_nu(rho: f64) -> Result<(f64, f64)> {
    if !(rho.abs() < 1.0) {
        return Err(Error::Domain(format!("rho must lie in (-1, 1), got {rho}")));
    }
    Ok((rho / SIGMA_Z_TOTAL.sqrt(), 1.0 - rho * rho))
}

/// Exact Gaussian conditional `Z | X = x0` in Scenario 2.
pub fn scenario2_conditional(gamma: f64, x0: f64) -> Result<MvNormal> {
    let sigma = scenario2_covariance();
    let g = DVector::from_element(4, gamma);
    let cov_zx = &sigma * &g;
    // Var(X) = 1 by construction; E[X] = 1.
    let mean = &cov_zx * (x0 - 1.0);
    let cov = &sigma - &cov_zx * cov_zx.transpose();
    MvNormal::new(mean, cov)
}

pub fn calibrate_scenario2(rho: f64, n_mc: usize, seed: u64) -> Result<Scenario2Constants> {
    if n_mc < 2 {
        return Err(Error::Config("calibration needs at least two draws".into()));
    }
    let (gamma, nu) = scenario2_gamma_nu(rho)?;
    let cond = scenario2_conditional(gamma, 0.0)?;
    let mut r = rng::stream(seed, rng::ids::CALIBRATION);
    let mut mu0 = Vec::with_capacity(n_mc);
    let mut ts = Vec::with_capacity(n_mc);
    for _ in 0..n_mc {
        let z = cond.draw(&mut r);
        mu0.push(mu2_star(0.0, &z));
        ts.push(tau2_star(&z));
    }
    let beta_tau = 1.0 / sample_sd(&ts);
    let min = ts.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(Scenario2Constants {
        gamma,
        nu,
        beta_mu: 1.0 / sample_sd(&mu0),
        alpha_tau: -beta_tau * min,
        beta_tau,
    })
}

pub fn generate_scenario2(spec: &Scenario2Spec, k: &Scenario2Constants) -> Result<SimulatedData> {
    spec.validate()?;
    let mut r = rng::stream(spec.seed, rng::ids::DATA);
    let zdist = MvNormal::new(DVector::zeros(4), scenario2_covariance())?;
    let sigma = spec.sigma2.sqrt();
    let sd_x = k.nu.sqrt();
    let tau_of = |z: &[f64]| k.alpha_tau + k.beta_tau * tau2_star(z);
    let mut y = Vec::with_capacity(spec.n);
    let mut xs = Vec::with_capacity(spec.n);
    let mut zs = Vec::with_capacity(spec.n);
    let mut mu = Vec::with_capacity(spec.n);
    let mut tau = Vec::with_capacity(spec.n);
    for _ in 0..spec.n {
        let z = zdist.draw(&mut r);
        let e_x: f64 = r.sample(StandardNormal);
        let x = 1.0 + k.gamma * z.iter().sum::<f64>() + sd_x * e_x;
        let m = k.beta_mu * mu2_star(x, &z);
        let t = tau_of(&z);
        let w = if x >= 0.0 { 1.0 } else { 0.0 };
        let e: f64 = r.sample(StandardNormal);
        y.push(m + w * t + sigma * e);
        xs.push(x);
        zs.push(z);
        mu.push(m);
        tau.push(t);
    }
    let columns = (1..=4)
        .map(|j| EncodedColumn {
            name: format!("z{j}"),
            level: None,
        })
        .collect();
    let data = Dataset::new(y, xs, zs, 0.0)?.with_columns(columns)?;

    let cond = scenario2_conditional(k.gamma, 0.0)?;
    let mut rt = rng::stream(spec.seed, rng::ids::TARGETS);
    let targets: Vec<Vec<f64>> = (0..spec.n_targets).map(|_| cond.draw(&mut rt)).collect();
    let target_tau = targets.iter().map(|z| tau_of(z)).collect();
    Ok(SimulatedData {
        data,
        mu,
        true_tau: tau,
        targets,
        target_tau,
    })
}

/// `(parameter, value)` pairs for the constants file.
pub fn scenario1_constant_rows(k: &Scenario1Constants) -> Vec<(&'static str, f64)> {
    vec![("alpha_mu", k.alpha_mu), ("alpha_tau", k.alpha_tau)]
}

pub fn scenario2_constant_rows(k: &Scenario2Constants) -> Vec<(&'static str, f64)> {
    vec![
        ("gamma", k.gamma),
        ("nu", k.nu),
        ("beta_mu", k.beta_mu),
        ("alpha_tau", k.alpha_tau),
        ("beta_tau", k.beta_tau),
    ]
}

/// Mean of the continuous columns of a set of draws; a convenience for checks.
pub fn column_means(rows: &[Vec<f64>], d: usize) -> Vec<f64> {
    (0..d)
        .map(|j| mean(&rows.iter().map(|r| r[j]).collect::<Vec<_>>()))
        .collect()
}
