//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero when any criterion fails.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use direct_bart::bandwidth::{
    eval_size, evaluation_set, hyvarinen_score, short_chain, DEFAULT_GRID_SIZE,
};
use direct_bart::bart::{leaf_log_marginal, mh_tree_update, LeafHyper, LeafStats, TreeData};
use direct_bart::data::{kernel_weights, near_cutoff_units, polynomial_basis, Dataset, DesignRow};
use direct_bart::dgp::{
    calibrate_scenario1, calibrate_scenario2, category_logits, g_int_unscaled, mu2_star,
    scenario2_conditional, tau1_unscaled, tau2_star, Variability, CALIBRATION_SEED,
    DEFAULT_CALIBRATION_DRAWS,
};
use direct_bart::eval::{
    fit_direct_bart, lp_fit, rmse, run_experiment, ExperimentSpec, Method, Sample, Scenario,
    IN_SAMPLE_RADIUS,
};
use direct_bart::gibbs::{run_chain, LeafPriorSpec, SamplerConfig};
use direct_bart::locallinear::{sample_b, sample_omega, BConditional, LocalLinearPrior};
use direct_bart::rng::stream;
use direct_bart::trees::{log_tree_prior, SplitCandidates, Tree};
use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use statrs::distribution::{ContinuousCDF, Gamma};

type Check = Result<String, String>;

fn verdict(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn err(e: direct_bart::Error) -> String {
    e.to_string()
}

// ---------------------------------------------------------------- helpers

/// Sign-preserving one-sided powers, built here without the library basis.
fn oracle_basis(u: f64, q: usize) -> Vec<f64> {
    let mut b = vec![1.0];
    for p in 1..=q as i32 {
        b.push(if u < 0.0 { u.powi(p) } else { 0.0 });
        b.push(if u >= 0.0 { u.powi(p) } else { 0.0 });
    }
    b
}

/// `(1, z) ⊗ basis`, matching column-major `vec(B)`.
fn oracle_kron(u: f64, z: &[f64], q: usize) -> Vec<f64> {
    let xb = oracle_basis(u, q);
    let mut zt = vec![1.0];
    zt.extend_from_slice(z);
    let mut out = Vec::new();
    for a in &zt {
        for b in &xb {
            out.push(a * b);
        }
    }
    out
}

fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows() * b.nrows(), a.ncols() * b.ncols(), |i, j| {
        a[(i / b.nrows(), j / b.ncols())] * b[(i % b.nrows(), j % b.ncols())]
    })
}

/// Posterior mean and covariance of `vec(B)` by dense LU solves.
fn dense_posterior(
    u: &[Vec<f64>],
    k: &[f64],
    r: &[f64],
    omega: f64,
    prior: &LocalLinearPrior,
) -> (DVector<f64>, DMatrix<f64>) {
    let dim = u[0].len();
    let p0 = kron(&prior.u0, &prior.v0).lu().try_inverse().unwrap();
    let mut prec = p0.clone();
    let mut rhs = &p0 * DVector::from_column_slice(prior.m0.as_slice());
    for ((ui, &ki), &ri) in u.iter().zip(k).zip(r) {
        let v = DVector::from_column_slice(ui);
        prec += &v * v.transpose() * (omega * ki);
        rhs += v * (omega * ki * ri);
    }
    let cov = prec.lu().try_inverse().unwrap();
    assert_eq!(cov.nrows(), dim);
    (&cov * rhs, cov)
}

fn ks_distance(mut draws: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
    draws.sort_by(f64::total_cmp);
    let n = draws.len() as f64;
    draws
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn var(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64
}

fn cor(a: &[f64], b: &[f64]) -> f64 {
    let (ma, mb) = (mean(a), mean(b));
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    sab / (saa * sbb).sqrt()
}

fn rel(a: f64, target: f64) -> f64 {
    (a / target - 1.0).abs()
}

// ---------------------------------------------------------------- 1

fn conjugate_oracles() -> Check {
    let xs = [-0.7, -0.35, -0.05, 0.1, 0.45, 0.8];
    let zs = [0.4, -1.2, 0.9, 1.5, -0.3, 0.2];
    let r = [0.3, -0.6, 1.1, 2.4, 1.7, 3.3];
    let q = 1;
    let rows: Vec<DesignRow> = xs
        .iter()
        .zip(&zs)
        .map(|(&x, &z)| DesignRow::new(polynomial_basis(x, 0.0, q), &[z], 1.0))
        .collect();
    let mut prior = LocalLinearPrior::default_for(q, 1);
    prior.m0 = DMatrix::from_row_slice(3, 2, &[0.5, -0.2, 1.0, 0.0, -0.4, 0.3]);
    prior.v0 = DMatrix::from_row_slice(3, 3, &[4.0, 0.5, 0.0, 0.5, 2.0, 0.3, 0.0, 0.3, 1.0]);
    prior.u0 = DMatrix::from_row_slice(2, 2, &[1.5, 0.4, 0.4, 0.8]);
    let omega = 1.7;
    let u: Vec<Vec<f64>> = xs.iter().zip(&zs).map(|(&x, &z)| oracle_kron(x, &[z], q)).collect();
    let (want, cov) = dense_posterior(&u, &[1.0; 6], &r, omega, &prior);
    let (got, _) = BConditional::new(&rows, &prior)
        .and_then(|c| c.posterior(&rows, &r, omega))
        .map_err(err)?;
    let mean_err = (&got - &want).amax();

    let mut rng = stream(101, 0);
    let n = 100_000;
    let mut acc = DVector::<f64>::zeros(6);
    for _ in 0..n {
        let b = sample_b(&r, &rows, omega, &prior, &mut rng).map_err(err)?;
        acc += DVector::from_column_slice(b.as_slice());
    }
    acc /= n as f64;
    let z_max = (0..6)
        .map(|j| (acc[j] - want[j]).abs() / (cov[(j, j)] / n as f64).sqrt())
        .fold(0.0, f64::max);

    let resid: Vec<f64> = (0..30).map(|i| ((i * 13) % 17) as f64 / 6.0 - 1.3).collect();
    let weights: Vec<f64> = (0..30).map(|i| if i % 4 == 1 { 0.0 } else { 1.0 }).collect();
    let kept: Vec<f64> = resid.iter().zip(&weights).filter(|p| *p.1 > 0.0).map(|p| *p.0).collect();
    let shape = prior.nu0 + kept.len() as f64 / 2.0;
    let rate = prior.eta0 + 0.5 * kept.iter().map(|e| e * e).sum::<f64>();
    let gamma = Gamma::new(shape, rate).map_err(|e| e.to_string())?;
    let draws = (0..n)
        .map(|_| sample_omega(&resid, &weights, &prior, &mut rng))
        .collect::<direct_bart::Result<Vec<f64>>>()
        .map_err(err)?;
    let ks = ks_distance(draws, |x| gamma.cdf(x));
    verdict(
        mean_err < 1e-8 && z_max < 5.0 && ks < 0.01,
        format!("max |mean error| {mean_err:.2e}, sample-mean z {z_max:.2}, omega KS {ks:.4}"),
    )
}

// ---------------------------------------------------------------- 2

fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson(fa: f64, fm: f64, fb: f64, a: f64, b: f64) -> f64 {
        (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    }
    #[allow(clippy::too_many_arguments)]
    fn rec(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = simpson(fa, flm, fm, a, m);
        let right = simpson(fm, frm, fb, m, b);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            left + right + delta / 15.0
        } else {
            rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
                + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
        }
    }
    let (fa, fm, fb) = (f(a), f(0.5 * (a + b)), f(b));
    rec(f, a, b, fa, fm, fb, simpson(fa, fm, fb, a, b), tol, 50)
}

fn log_normal_pdf(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * (2.0 * std::f64::consts::PI * var).ln() - 0.5 * (x - mean) * (x - mean) / var
}

fn leaf_quadrature() -> Check {
    let mut rng = stream(202, 0);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n = rng.random_range(0..12usize);
        let r: Vec<f64> = (0..n).map(|_| 2.0 * rng.sample::<f64, _>(StandardNormal)).collect();
        let k: Vec<f64> = (0..n).map(|_| if rng.random::<f64>() < 0.3 { 0.0 } else { 1.0 }).collect();
        let omega = rng.random_range(0.1..5.0);
        let mu_mu = rng.random_range(-1.0..1.0);
        let sigma = rng.random_range(0.05..2.0);
        let hyper = LeafHyper::new(mu_mu, sigma, 20).map_err(err)?;
        let mut stats = LeafStats::default();
        for (&ki, &ri) in k.iter().zip(&r) {
            stats.push(ki, ri);
        }
        let got = leaf_log_marginal(&stats, &hyper, omega);

        let log_f = |mu: f64| {
            let mut s = log_normal_pdf(mu, mu_mu, sigma * sigma);
            for (&ki, &ri) in k.iter().zip(&r) {
                if ki > 0.0 {
                    s += log_normal_pdf(ri, mu, 1.0 / (omega * ki));
                }
            }
            s
        };
        // Locate the mode by golden-section search and integrate the rescaled integrand.
        let (mut lo, mut hi) = (-60.0, 60.0);
        let g = 0.5 * (5f64.sqrt() - 1.0);
        for _ in 0..200 {
            let a = hi - g * (hi - lo);
            let b = lo + g * (hi - lo);
            if log_f(a) > log_f(b) {
                hi = b;
            } else {
                lo = a;
            }
        }
        let mode = 0.5 * (lo + hi);
        let peak = log_f(mode);
        let width = 40.0 * sigma;
        let integral =
            adaptive_simpson(&|mu| (log_f(mu) - peak).exp(), mode - width, mode + width, 1e-13);
        let want = peak + integral.ln();
        worst = worst.max(((got - want).exp() - 1.0).abs());
    }
    verdict(worst < 1e-6, format!("worst relative error {worst:.2e} over 100 leaves"))
}

// ---------------------------------------------------------------- 3

fn mvn_log_density(r: &[f64], mean: f64, omega: f64, sigma: f64) -> f64 {
    let n = r.len();
    if n == 0 {
        return 0.0;
    }
    let cov = DMatrix::from_fn(n, n, |i, j| sigma * sigma + if i == j { 1.0 / omega } else { 0.0 });
    let chol = Cholesky::new(cov).unwrap();
    let dev = DVector::from_iterator(n, r.iter().map(|x| x - mean));
    let sol = chol.solve(&dev);
    let log_det: f64 = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    -0.5 * (n as f64 * (2.0 * std::f64::consts::PI).ln() + log_det + dev.dot(&sol))
}

fn tiny_space() -> Check {
    let z: Vec<f64> = vec![0.0, 1.0, 0.0, 1.0, 1.0, 0.0, 1.0, 0.0];
    let resid = [0.2, 1.4, 0.6, 1.0, 0.6, 1.0, 0.2, 1.4];
    let weights = [1.0; 8];
    let omega = 1.3;
    let (mu_mu, sd) = (0.0, 3.0);
    let mut hyper = LeafHyper::new(mu_mu, sd, 1).map_err(err)?;
    hyper.max_depth = 1;
    let candidates = SplitCandidates::from_rows(&z, 1);
    let data = TreeData {
        z: &z,
        dim: 1,
        weights: &weights,
        candidates: &candidates,
    };

    let stump = Tree::stump(1, 0.0);
    let split = stump.grow(0, direct_bart::trees::SplitRule { var: 0, threshold: 0.0 });
    let prior = hyper.tree_prior();
    let group = |left: bool| -> Vec<f64> {
        z.iter()
            .zip(&resid)
            .filter(|(zi, _)| (**zi <= 0.0) == left)
            .map(|(_, r)| *r)
            .collect()
    };
    let log_post = [
        log_tree_prior(&stump, &prior) + mvn_log_density(&resid, mu_mu, omega, sd),
        log_tree_prior(&split, &prior)
            + mvn_log_density(&group(true), mu_mu, omega, sd)
            + mvn_log_density(&group(false), mu_mu, omega, sd),
    ];
    let top = log_post[0].max(log_post[1]);
    let w: Vec<f64> = log_post.iter().map(|l| (l - top).exp()).collect();
    let exact = [w[0] / (w[0] + w[1]), w[1] / (w[0] + w[1])];

    let mut rng = stream(303, 0);
    let sweeps = 200_000;
    let mut tree = stump.clone();
    let mut visits = [0usize; 2];
    for _ in 0..sweeps {
        tree = mh_tree_update(&tree, &data, &resid, &hyper, omega, &mut rng).0;
        visits[usize::from(tree.n_leaves() == 2)] += 1;
    }
    let emp = [visits[0] as f64 / sweeps as f64, visits[1] as f64 / sweeps as f64];
    let tv = 0.5 * ((emp[0] - exact[0]).abs() + (emp[1] - exact[1]).abs());
    verdict(
        tv < 0.05,
        format!("TV {tv:.5} (exact split mass {:.4}, chain {:.4})", exact[1], emp[1]),
    )
}

// ---------------------------------------------------------------- 4

fn hyvarinen_closed_form() -> Check {
    let n = 300;
    let mut rng = stream(404, 0);
    let mut x = Vec::with_capacity(n);
    let mut z = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let xi: f64 = rng.random_range(-1.0..1.0);
        let zi: f64 = rng.sample(StandardNormal);
        let e: f64 = rng.sample(StandardNormal);
        x.push(xi);
        z.push(vec![zi]);
        y.push(0.5 + xi + 0.3 * zi + 0.4 * xi * zi + 0.6 * e);
    }
    let ds = Dataset::new(y.clone(), x.clone(), z.clone(), 0.0).map_err(err)?;
    let (q, h, omega) = (1, 0.5, 2.0);
    let config = SamplerConfig {
        leaf_prior: LeafPriorSpec::Fixed {
            mu_mu: 0.0,
            sigma_mu: 1e-8,
        },
        fixed_omega: Some(omega),
        ..SamplerConfig::new(q, h, 404)
    };
    let eval = evaluation_set(&ds, eval_size(n));
    let draws = run_chain(&config, &ds, &[], &eval).map_err(err)?;
    if draws.n_draws() != 4500 {
        return Err(format!("expected 4500 draws, got {}", draws.n_draws()));
    }
    let got = hyvarinen_score(&draws, &ds, h, &eval).map_err(err)?;

    let k = kernel_weights(&ds, h).map_err(err)?;
    let u: Vec<Vec<f64>> = (0..n).map(|i| oracle_kron(x[i], &z[i], q)).collect();
    let prior = LocalLinearPrior::default_for(q, 1);
    let (m, s) = dense_posterior(&u, &k, &y, omega, &prior);
    let mut want = 0.0;
    for &i in &eval {
        if k[i] == 0.0 {
            continue;
        }
        let ui = DVector::from_column_slice(&u[i]);
        let resid = y[i] - ui.dot(&m);
        let spread = (ui.transpose() * &s * &ui)[(0, 0)];
        want += -2.0 * omega + omega * omega * (resid * resid + 2.0 * spread);
    }
    let err_rel = rel(got, want);
    verdict(
        err_rel < 0.02,
        format!("sampled H {got:.5}, closed form {want:.5}, relative error {err_rel:.4}"),
    )
}

// ---------------------------------------------------------------- 5

fn step_recovery() -> Check {
    let mut ratios = Vec::new();
    let (mut sum_db, mut sum_lp) = (0.0, 0.0);
    for seed in 0..5u64 {
        let mut rng = stream(500 + seed, 0);
        let n = 1000;
        let (mut y, mut x, mut z, mut tau) = (vec![], vec![], vec![], vec![]);
        for _ in 0..n {
            let xi: f64 = rng.random_range(-1.0..1.0);
            let z1: f64 = rng.sample(StandardNormal);
            let z2: f64 = rng.sample(StandardNormal);
            let t = 1.0 + if z1 > 0.0 { 1.0 } else { 0.0 };
            let w = if xi >= 0.0 { 1.0 } else { 0.0 };
            let e: f64 = rng.sample(StandardNormal);
            y.push(0.5 + xi + 0.3 * z2 + 0.2 * xi * z1 + w * t + 0.3 * e);
            x.push(xi);
            z.push(vec![z1, z2]);
            tau.push(t);
        }
        let ds = Dataset::new(y, x, z, 0.0).map_err(err)?;
        let near = near_cutoff_units(&ds, IN_SAMPLE_RADIUS);
        let truth: Vec<f64> = near.iter().map(|&i| tau[i]).collect();
        let targets: Vec<Vec<f64>> = near.iter().map(|&i| ds.z(i).to_vec()).collect();
        let config = SamplerConfig::new(1, 1.0, seed);
        let fit = fit_direct_bart(&ds, &config, &short_chain(&config), DEFAULT_GRID_SIZE, 1, &targets, 0.95)
            .map_err(err)?;
        let db = rmse(&fit.summary.mean, &truth).map_err(err)?;
        let lp = lp_fit(&ds, 1).map_err(err)?;
        let lp_rmse = rmse(&vec![lp.tau_hat; truth.len()], &truth).map_err(err)?;
        sum_db += db;
        sum_lp += lp_rmse;
        ratios.push(format!("{db:.3}/{lp_rmse:.3}"));
    }
    let ratio = sum_db / sum_lp;
    verdict(
        ratio < 0.5,
        format!("mean RMSE ratio {ratio:.3} (per seed Direct-BART/LP: {})", ratios.join(" ")),
    )
}

// ---------------------------------------------------------------- 6, 7

const TABLE_SEED: u64 = 1;

fn scenario1_table() -> Check {
    let small = Scenario::One {
        case: Variability::Small,
        sigma2: 0.25,
        n: 1200,
    };
    let result = run_experiment(&ExperimentSpec::new(small, 5, TABLE_SEED)).map_err(err)?;
    let db = result.table.get(Method::DirectBart, Sample::In).ok_or("missing row")?;
    let lp = result.table.get(Method::Lp, Sample::In).ok_or("missing row")?;
    let noisy = Scenario::One {
        case: Variability::Small,
        sigma2: 1.0,
        n: 1200,
    };
    let spec = ExperimentSpec {
        methods: vec![Method::DirectBart],
        ..ExperimentSpec::new(noisy, 5, TABLE_SEED)
    };
    let result1 = run_experiment(&spec).map_err(err)?;
    let db1 = result1.table.get(Method::DirectBart, Sample::In).ok_or("missing row")?;
    let rmse_ok = (0.4..=0.8).contains(&db.rmse) && db.rmse < lp.rmse;
    let cov_ok = (85.0..=100.0).contains(&db1.coverage);
    verdict(
        rmse_ok && cov_ok && db.failed == 0 && db1.failed == 0,
        format!(
            "sigma2=0.25 in-sample RMSE {:.3} (LP {:.3}, band [0.4, 0.8]); sigma2=1 coverage {:.1}% (band [85, 100])",
            db.rmse, lp.rmse, db1.coverage
        ),
    )
}

fn scenario2_table() -> Check {
    let scenario = Scenario::Two {
        rho: 0.0,
        sigma2: 0.5,
        n: 600,
    };
    let spec = ExperimentSpec {
        methods: vec![Method::DirectBart],
        ..ExperimentSpec::new(scenario, 5, TABLE_SEED)
    };
    let result = run_experiment(&spec).map_err(err)?;
    let db = result.table.get(Method::DirectBart, Sample::In).ok_or("missing row")?;
    verdict(
        (0.6..=1.0).contains(&db.rmse) && db.coverage >= 80.0 && db.failed == 0,
        format!(
            "in-sample RMSE {:.3} (band [0.6, 1.0]); coverage {:.1}% (needs >= 80)",
            db.rmse, db.coverage
        ),
    )
}

// ---------------------------------------------------------------- 8

const TOEPLITZ_ROW: [f64; 4] = [2.0, 4.0 / 3.0, 2.0 / 3.0, 0.0];

fn sigma2_z() -> DMatrix<f64> {
    DMatrix::from_fn(4, 4, |j, k| TOEPLITZ_ROW[j.abs_diff(k)])
}

struct Gaussian {
    mean: DVector<f64>,
    l: DMatrix<f64>,
}

impl Gaussian {
    fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Self {
        let l = Cholesky::new(cov).expect("positive definite").l();
        Self { mean, l }
    }

    fn draw(&self, rng: &mut impl Rng) -> Vec<f64> {
        let xi = DVector::from_fn(self.mean.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
        (&self.mean + &self.l * xi).as_slice().to_vec()
    }
}

fn calibration() -> Check {
    let n = DEFAULT_CALIBRATION_DRAWS;
    let mut notes = Vec::new();
    let mut ok = true;

    // Scenario 1: Z | X = 0 is N(-1, Σ) with Σ_jk = 1/(1+|j-k|), then a softmax category.
    let s1 = Gaussian::new(
        DVector::from_element(4, -1.0),
        DMatrix::from_fn(4, 4, |j, k| 1.0 / (1.0 + j.abs_diff(k) as f64)),
    );
    let mut rng = stream(808, 1);
    let draws1: Vec<(Vec<f64>, u8)> = (0..n)
        .map(|_| {
            let z = s1.draw(&mut rng);
            let eta = category_logits(0.0, &z);
            let w: Vec<f64> = eta.iter().map(|e| e.exp()).collect();
            let u = rng.random::<f64>() * w.iter().sum::<f64>();
            let level = if u < w[0] {
                1
            } else if u < w[0] + w[1] {
                2
            } else {
                3
            };
            (z, level)
        })
        .collect();
    for case in [Variability::Small, Variability::Large] {
        let k = calibrate_scenario1(case, n, CALIBRATION_SEED).map_err(err)?;
        let mu: Vec<f64> = draws1.iter().map(|(z, l)| k.alpha_mu * g_int_unscaled(z, *l)).collect();
        let tau: Vec<f64> = draws1.iter().map(|(z, l)| k.alpha_tau * tau1_unscaled(z, *l)).collect();
        let target = case.target_variance();
        let (e_mu, e_tau) = (rel(var(&mu), target), rel(var(&tau), 0.5));
        ok &= e_mu < 0.02 && e_tau < 0.02;
        notes.push(format!("S1 {}: var mu err {e_mu:.4}, var tau err {e_tau:.4}", case.name()));
    }

    // Scenario 2: joint draws give Var(X) and Cor(X, γᵀZ); Z | X = 0 by Gaussian conditioning.
    let sigma = sigma2_z();
    let zdist = Gaussian::new(DVector::zeros(4), sigma.clone());
    for rho in [0.0, 0.25, 0.5] {
        let k = calibrate_scenario2(rho, n, CALIBRATION_SEED).map_err(err)?;
        let mut rng = stream(809, (rho * 100.0) as u64);
        let mut xs = Vec::with_capacity(n);
        let mut lin = Vec::with_capacity(n);
        for _ in 0..n {
            let z = zdist.draw(&mut rng);
            let g: f64 = k.gamma * z.iter().sum::<f64>();
            let e: f64 = rng.sample(StandardNormal);
            xs.push(1.0 + g + k.nu.sqrt() * e);
            lin.push(g);
        }
        let e_var = rel(var(&xs), 1.0);
        let e_cor = if rho == 0.0 {
            if k.gamma == 0.0 { 0.0 } else { 1.0 }
        } else {
            rel(cor(&xs, &lin), rho)
        };
        let gvec = DVector::from_element(4, k.gamma);
        let c_zx = &sigma * &gvec;
        let var_x = (gvec.transpose() * &sigma * &gvec)[(0, 0)] + k.nu;
        let cond = Gaussian::new(
            &c_zx * ((0.0 - 1.0) / var_x),
            &sigma - &c_zx * c_zx.transpose() / var_x,
        );
        let zs: Vec<Vec<f64>> = (0..n).map(|_| cond.draw(&mut rng)).collect();
        let mu: Vec<f64> = zs.iter().map(|z| k.beta_mu * mu2_star(0.0, z)).collect();
        let tau: Vec<f64> = zs.iter().map(|z| k.alpha_tau + k.beta_tau * tau2_star(z)).collect();
        let e_mu = rel(var(&mu), 1.0);
        let e_sd = rel(var(&tau).sqrt(), 1.0);
        let min_tau = tau.iter().copied().fold(f64::INFINITY, f64::min);
        ok &= e_var < 0.02 && e_cor < 0.02 && e_mu < 0.02 && e_sd < 0.02 && min_tau.abs() < 0.02;
        notes.push(format!(
            "S2 rho={rho}: var x {e_var:.4}, cor {e_cor:.4}, var mu {e_mu:.4}, sd tau {e_sd:.4}, min tau {min_tau:.4}"
        ));
    }

    // Rejection cross-check of the library's conditional sampler at rho = 0.5.
    let k = calibrate_scenario2(0.5, n, CALIBRATION_SEED).map_err(err)?;
    let mut rng = stream(810, 0);
    let mut accepted = Vec::new();
    for _ in 0..4_000_000 {
        let z = zdist.draw(&mut rng);
        let e: f64 = rng.sample(StandardNormal);
        let x = 1.0 + k.gamma * z.iter().sum::<f64>() + k.nu.sqrt() * e;
        if x.abs() < 0.01 {
            accepted.push(z);
        }
    }
    let lib = scenario2_conditional(k.gamma, 0.0).map_err(err)?;
    let mut rng = stream(811, 0);
    let lib_draws: Vec<Vec<f64>> = (0..n).map(|_| lib.draw(&mut rng)).collect();
    let m = accepted.len() as f64;
    let mut worst_z: f64 = 0.0;
    for j in 0..4 {
        let a: Vec<f64> = accepted.iter().map(|z| z[j]).collect();
        let b: Vec<f64> = lib_draws.iter().map(|z| z[j]).collect();
        let se = (var(&a) / m + var(&b) / n as f64).sqrt();
        worst_z = worst_z.max((mean(&a) - mean(&b)).abs() / se);
        let se_var = var(&b) * (2.0 / m).sqrt();
        worst_z = worst_z.max((var(&a) - var(&b)).abs() / se_var);
    }
    ok &= worst_z < 4.5;
    notes.push(format!("rejection check: {} accepted, worst z {worst_z:.2}", accepted.len()));
    verdict(ok, notes.join("; "))
}

// ---------------------------------------------------------------- 9

fn run_binary(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_direct-bart"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(String::from_utf8_lossy(&out.stderr).into_owned())
    }
}

fn same_files(a: &Path, b: &Path, names: &[&str]) -> Result<bool, String> {
    for name in names {
        let x = std::fs::read(a.join(name)).map_err(|e| format!("{name}: {e}"))?;
        let y = std::fs::read(b.join(name)).map_err(|e| format!("{name}: {e}"))?;
        if x != y {
            return Ok(false);
        }
    }
    Ok(true)
}

fn determinism() -> Check {
    let config = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/example.conf");
    let config = config.to_str().ok_or("non-utf8 path")?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut verdicts = Vec::new();
    for (cmd, files) in [
        ("fit", vec!["cate.csv", "scores.csv", "manifest.txt"]),
        ("simulate", vec!["metrics.csv", "detail.csv", "constants.csv", "manifest.txt"]),
    ] {
        let a = dir.path().join(format!("{cmd}-a"));
        let b = dir.path().join(format!("{cmd}-b"));
        for out in [&a, &b] {
            run_binary(&[cmd, "--config", config, "--out", out.to_str().unwrap()])?;
        }
        verdicts.push((cmd, same_files(&a, &b, &files)?));
    }
    verdict(
        verdicts.iter().all(|v| v.1),
        verdicts
            .iter()
            .map(|(c, same)| format!("{c}: {}", if *same { "identical" } else { "differs" }))
            .collect::<Vec<_>>()
            .join(", "),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Check); 9] = [
        ("conjugate B and omega updates", conjugate_oracles),
        ("leaf marginal against quadrature", leaf_quadrature),
        ("tiny tree space against enumeration", tiny_space),
        ("Hyvarinen score closed form", hyvarinen_closed_form),
        ("step CATE recovery", step_recovery),
        ("Scenario 1 desk scale", scenario1_table),
        ("Scenario 2 desk scale", scenario2_table),
        ("DGP calibration", calibration),
        ("byte-identical reruns", determinism),
    ];
    let filter: Option<usize> = std::env::var("ACCEPTANCE_ONLY").ok().and_then(|v| v.parse().ok());
    let mut failed = 0;
    for (k, (name, check)) in criteria.iter().enumerate() {
        let id = k + 1;
        if filter.is_some_and(|f| f != id) {
            continue;
        }
        let start = Instant::now();
        let result = check();
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS {id} {name}: {detail} [{secs:.1}s]"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {id} {name}: {detail} [{secs:.1}s]");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
