//! Local polynomial baseline, accuracy metrics and the replication loop.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::bandwidth::{
    candidate_grid, select_bandwidth, short_chain, ScoreReport, DEFAULT_GRID_SIZE,
};
use crate::data::{near_cutoff_units, polynomial_basis, Dataset};
use crate::dgp::{
    calibrate_scenario1, calibrate_scenario2, generate_scenario1, generate_scenario2,
    scenario1_constant_rows, scenario2_constant_rows, Scenario1Constants, Scenario1Spec,
    Scenario2Constants, Scenario2Spec, SimulatedData, Variability, CALIBRATION_SEED,
    DEFAULT_CALIBRATION_DRAWS, DEFAULT_TARGETS,
};
use crate::error::{Error, Result};
use crate::gibbs::{run_chain, summarize, CateSummary, PosteriorDraws, SamplerConfig};

/// Two-sided normal quantile for 95% intervals.
const Z95: f64 = 1.96;
/// Points on the LP cross-validation grid.
pub const LP_GRID_POINTS: usize = 20;
/// LP grid range as multiples of `sd(x)`.
pub const LP_GRID_RANGE: (f64, f64) = (0.05, 2.0);
/// Half-width of the in-sample evaluation window as a multiple of `sd(x)`.
pub const IN_SAMPLE_RADIUS: f64 = 0.1;
/// Polynomial order of the LP baseline, independent of the Direct-BART order.
pub const LP_ORDER: usize = 1;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LpFit {
    pub tau_hat: f64,
    pub se: f64,
    pub h_lp: f64,
    pub ci: (f64, f64),
}

/// Weighted least squares of `y` on `(polynomial basis, W)` within `h`.
struct LpDesign {
    /// Dataset indices inside the window.
    units: Vec<usize>,
    x: DMatrix<f64>,
    y: DVector<f64>,
}

fn lp_design(ds: &Dataset, q: usize, h: f64) -> LpDesign {
    let c = ds.cutoff();
    let units: Vec<usize> = (0..ds.n()).filter(|&i| (ds.x()[i] - c).abs() <= h).collect();
    let p = 2 * q + 2;
    let mut x = DMatrix::zeros(units.len(), p);
    for (r, &i) in units.iter().enumerate() {
        let basis = polynomial_basis(ds.x()[i], c, q);
        for (j, b) in basis.iter().enumerate() {
            x[(r, j)] = *b;
        }
        x[(r, p - 1)] = ds.w(i);
    }
    let y = DVector::from_iterator(units.len(), units.iter().map(|&i| ds.y()[i]));
    LpDesign { units, x, y }
}

fn lp_feasible(ds: &Dataset, q: usize, h: f64) -> bool {
    let (lo, hi) = crate::bandwidth::side_counts(ds, h);
    lo >= q + 2 && hi >= q + 2
}

/// Fitted coefficients, inverse Gram matrix and residuals.
fn lp_solve(design: &LpDesign) -> Option<(DVector<f64>, DMatrix<f64>, DVector<f64>)> {
    let xt = design.x.transpose();
    let gram_inv = (&xt * &design.x).try_inverse()?;
    let beta = &gram_inv * (&xt * &design.y);
    let resid = &design.y - &design.x * &beta;
    Some((beta, gram_inv, resid))
}

/// LP fit at a given bandwidth with an HC1 sandwich standard error.
pub fn lp_at(ds: &Dataset, q: usize, h: f64) -> Result<LpFit> {
    if !lp_feasible(ds, q, h) {
        return Err(Error::Config(format!(
            "bandwidth {h} leaves fewer than {} units on a side for the local polynomial",
            q + 2
        )));
    }
    let design = lp_design(ds, q, h);
    let (beta, gram_inv, resid) = lp_solve(&design)
        .ok_or_else(|| Error::Numeric(format!("singular local polynomial design at h = {h}")))?;
    let n = design.units.len();
    let p = design.x.ncols();
    let mut meat = DMatrix::zeros(p, p);
    for r in 0..n {
        let row = design.x.row(r).transpose();
        meat += &row * row.transpose() * (resid[r] * resid[r]);
    }
    let scale = if n > p { n as f64 / (n - p) as f64 } else { 1.0 };
    let cov = &gram_inv * meat * &gram_inv * scale;
    let tau_hat = beta[p - 1];
    let se = cov[(p - 1, p - 1)].max(0.0).sqrt();
    Ok(LpFit {
        tau_hat,
        se,
        h_lp: h,
        ci: (tau_hat - Z95 * se, tau_hat + Z95 * se),
    })
}

/// `LP_GRID_POINTS` geometric points over `LP_GRID_RANGE * sd(x)`.
pub fn lp_grid(ds: &Dataset) -> Vec<f64> {
    let sd = ds.sd_x();
    let (lo, hi) = (LP_GRID_RANGE.0 * sd, LP_GRID_RANGE.1 * sd);
    let ratio = hi / lo;
    (0..LP_GRID_POINTS)
        .map(|j| lo * ratio.powf(j as f64 / (LP_GRID_POINTS - 1) as f64))
        .collect()
}

/// Share of each side, nearest the cutoff first, on which the bandwidth is cross-validated.
pub const LP_CV_SHARE: f64 = 0.5;

/// Prediction at `x0` from an order-`q` polynomial in `x - x0` fitted to `(xs, ys)`.
fn boundary_prediction(xs: &[f64], ys: &[f64], x0: f64, q: usize) -> Option<f64> {
    let p = q + 1;
    // Power sums Σ u^k for k <= 2q and Σ y u^k for k <= q.
    let mut su = vec![0.0; 2 * q + 1];
    let mut syu = vec![0.0; p];
    for (&x, &y) in xs.iter().zip(ys) {
        let u = x - x0;
        let mut pow = 1.0;
        for k in 0..=2 * q {
            su[k] += pow;
            if k < p {
                syu[k] += y * pow;
            }
            pow *= u;
        }
    }
    let gram = DMatrix::from_fn(p, p, |j, k| su[j + k]);
    let coef = gram.lu().solve(&DVector::from_vec(syu))?;
    coef[0].is_finite().then_some(coef[0])
}

/// `(x, y)` of one side of the cutoff, sorted by `x`.
struct SortedSide {
    x: Vec<f64>,
    y: Vec<f64>,
}

fn sorted_sides(ds: &Dataset) -> [SortedSide; 2] {
    [false, true].map(|treated| {
        let mut idx: Vec<usize> = (0..ds.n()).filter(|&i| ds.treated(i) == treated).collect();
        idx.sort_by(|&a, &b| ds.x()[a].total_cmp(&ds.x()[b]).then(a.cmp(&b)));
        SortedSide {
            x: idx.iter().map(|&i| ds.x()[i]).collect(),
            y: idx.iter().map(|&i| ds.y()[i]).collect(),
        }
    })
}

/// Boundary leave-one-out error: each evaluation unit is predicted from the
/// same-side units within `h` that lie farther from the cutoff, mimicking
/// estimation at the cutoff itself.
fn lp_cv_error(
    ds: &Dataset,
    sides: &[SortedSide; 2],
    q: usize,
    h: f64,
    eval_units: &[usize],
) -> Option<f64> {
    let mut total = 0.0;
    for &i in eval_units {
        let (xi, yi) = (ds.x()[i], ds.y()[i]);
        let side = &sides[usize::from(ds.treated(i))];
        let (lo, hi) = if ds.treated(i) {
            (
                side.x.partition_point(|&v| v <= xi),
                side.x.partition_point(|&v| v <= xi + h),
            )
        } else {
            (
                side.x.partition_point(|&v| v < xi - h),
                side.x.partition_point(|&v| v < xi),
            )
        };
        if hi < lo + q + 2 {
            return None;
        }
        let e = yi - boundary_prediction(&side.x[lo..hi], &side.y[lo..hi], xi, q)?;
        total += e * e;
    }
    Some(total / eval_units.len() as f64)
}

/// Units in the `LP_CV_SHARE` of each side closest to the cutoff.
fn lp_cv_units(ds: &Dataset) -> Vec<usize> {
    let c = ds.cutoff();
    let mut units = Vec::new();
    for treated in [false, true] {
        let mut side: Vec<usize> = (0..ds.n()).filter(|&i| ds.treated(i) == treated).collect();
        side.sort_by(|&a, &b| (ds.x()[a] - c).abs().total_cmp(&(ds.x()[b] - c).abs()).then(a.cmp(&b)));
        let keep = ((side.len() as f64) * LP_CV_SHARE).ceil() as usize;
        units.extend_from_slice(&side[..keep.min(side.len())]);
    }
    units.sort_unstable();
    units
}

/// LP estimate with the bandwidth chosen by boundary leave-one-out
/// cross-validation over [`lp_grid`].
pub fn lp_fit(ds: &Dataset, q: usize) -> Result<LpFit> {
    let eval_units = lp_cv_units(ds);
    let sides = sorted_sides(ds);
    let mut best: Option<(f64, f64)> = None;
    for h in lp_grid(ds) {
        if !lp_feasible(ds, q, h) {
            continue;
        }
        if let Some(err) = lp_cv_error(ds, &sides, q, h, &eval_units) {
            if best.is_none_or(|(_, e)| err < e) {
                best = Some((h, err));
            }
        }
    }
    let (h, _) = best.ok_or_else(|| {
        Error::Config(format!(
            "no bandwidth on the local polynomial grid leaves {} units on each side with a defined cross-validation error",
            q + 2
        ))
    })?;
    lp_at(ds, q, h)
}

pub fn rmse(estimates: &[f64], truth: &[f64]) -> Result<f64> {
    if estimates.len() != truth.len() || estimates.is_empty() {
        return Err(Error::Domain(format!(
            "rmse needs equal non-empty lengths, got {} and {}",
            estimates.len(),
            truth.len()
        )));
    }
    let ss: f64 = estimates.iter().zip(truth).map(|(e, t)| (e - t).powi(2)).sum();
    Ok((ss / truth.len() as f64).sqrt())
}

/// Fraction of closed intervals containing the truth.
pub fn coverage(intervals: &[(f64, f64)], truth: &[f64]) -> Result<f64> {
    if intervals.len() != truth.len() || truth.is_empty() {
        return Err(Error::Domain(format!(
            "coverage needs equal non-empty lengths, got {} and {}",
            intervals.len(),
            truth.len()
        )));
    }
    let hits = intervals
        .iter()
        .zip(truth)
        .filter(|((lo, hi), t)| lo <= t && *t <= hi)
        .count();
    Ok(hits as f64 / truth.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Method {
    DirectBart,
    Lp,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::DirectBart => "direct-bart",
            Method::Lp => "lp",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "direct-bart" | "directbart" | "direct_bart" => Ok(Method::DirectBart),
            "lp" => Ok(Method::Lp),
            other => Err(Error::Config(format!("unknown method `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Sample {
    In,
    Out,
}

impl Sample {
    pub fn name(self) -> &'static str {
        match self {
            Sample::In => "in",
            Sample::Out => "out",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Scenario {
    One { case: Variability, sigma2: f64, n: usize },
    Two { rho: f64, sigma2: f64, n: usize },
}

impl Scenario {
    pub fn name(&self) -> &'static str {
        match self {
            Scenario::One { .. } => "scenario1",
            Scenario::Two { .. } => "scenario2",
        }
    }

    /// Variability case or correlation, as printed in the tables.
    pub fn setting(&self) -> String {
        match self {
            Scenario::One { case, .. } => case.name().to_string(),
            Scenario::Two { rho, .. } => format!("rho={rho}"),
        }
    }

    pub fn sigma2(&self) -> f64 {
        match self {
            Scenario::One { sigma2, .. } | Scenario::Two { sigma2, .. } => *sigma2,
        }
    }

    /// Polynomial order used for this design.
    pub fn default_q(&self) -> usize {
        match self {
            Scenario::One { .. } => 2,
            Scenario::Two { .. } => 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Constants {
    One(Scenario1Constants),
    Two(Scenario2Constants),
}

impl Constants {
    pub fn rows(&self) -> Vec<(&'static str, f64)> {
        match self {
            Constants::One(k) => scenario1_constant_rows(k),
            Constants::Two(k) => scenario2_constant_rows(k),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentSpec {
    pub scenario: Scenario,
    pub methods: Vec<Method>,
    pub replications: usize,
    pub base_seed: u64,
    pub q: usize,
    /// Order of the LP baseline, which also supplies the grid anchor.
    pub lp_q: usize,
    pub m: usize,
    pub n_iter: usize,
    pub n_burn: usize,
    pub grid_size: usize,
    /// Chain lengths for bandwidth scoring.
    pub bw_burn: usize,
    pub bw_keep: usize,
    pub n_targets: usize,
    pub calibration_draws: usize,
    pub calibration_seed: u64,
    pub level: f64,
}

impl ExperimentSpec {
    pub fn new(scenario: Scenario, replications: usize, base_seed: u64) -> Self {
        let q = scenario.default_q();
        let short = short_chain(&SamplerConfig::new(q, 1.0, 0));
        Self {
            scenario,
            methods: vec![Method::DirectBart, Method::Lp],
            replications,
            base_seed,
            q,
            lp_q: LP_ORDER,
            m: crate::bart::DEFAULT_TREES,
            n_iter: 5000,
            n_burn: 500,
            grid_size: DEFAULT_GRID_SIZE,
            bw_burn: short.n_burn,
            bw_keep: short.n_iter - short.n_burn,
            n_targets: DEFAULT_TARGETS,
            calibration_draws: DEFAULT_CALIBRATION_DRAWS,
            calibration_seed: CALIBRATION_SEED,
            level: 0.95,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::Config("replications must be positive".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("no methods requested".into()));
        }
        if self.grid_size == 0 {
            return Err(Error::Config("grid size must be positive".into()));
        }
        if self.bw_keep == 0 || self.n_iter <= self.n_burn {
            return Err(Error::Config("chains need at least one retained draw".into()));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::Config(format!("level must lie in (0,1), got {}", self.level)));
        }
        Ok(())
    }

    fn sampler_config(&self, seed: u64) -> SamplerConfig {
        SamplerConfig {
            m: self.m,
            n_iter: self.n_iter,
            n_burn: self.n_burn,
            ..SamplerConfig::new(self.q, 1.0, seed)
        }
    }
}

/// Outcome of one method on one replication.
#[derive(Clone, Debug, PartialEq)]
pub struct DetailRow {
    pub replication: usize,
    pub method: Method,
    pub sample: Sample,
    /// `None` when the method failed on this replication.
    pub rmse: Option<f64>,
    /// Percent.
    pub coverage: Option<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub method: Method,
    pub scenario: String,
    pub setting: String,
    pub sigma2: f64,
    pub sample: Sample,
    pub rmse: f64,
    /// Percent.
    pub coverage: f64,
    pub replications: usize,
    pub failed: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsTable {
    pub rows: Vec<MetricsRow>,
}

impl MetricsTable {
    pub fn get(&self, method: Method, sample: Sample) -> Option<&MetricsRow> {
        self.rows.iter().find(|r| r.method == method && r.sample == sample)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentResult {
    pub table: MetricsTable,
    pub detail: Vec<DetailRow>,
    pub constants: Constants,
}

pub fn calibrate(spec: &ExperimentSpec) -> Result<Constants> {
    Ok(match spec.scenario {
        Scenario::One { case, .. } => Constants::One(calibrate_scenario1(
            case,
            spec.calibration_draws,
            spec.calibration_seed,
        )?),
        Scenario::Two { rho, .. } => Constants::Two(calibrate_scenario2(
            rho,
            spec.calibration_draws,
            spec.calibration_seed,
        )?),
    })
}

pub fn simulate(spec: &ExperimentSpec, constants: &Constants, seed: u64) -> Result<SimulatedData> {
    match (&spec.scenario, constants) {
        (Scenario::One { case, sigma2, n }, Constants::One(k)) => generate_scenario1(
            &Scenario1Spec {
                n: *n,
                case: *case,
                sigma2: *sigma2,
                seed,
                n_targets: spec.n_targets,
            },
            k,
        ),
        (Scenario::Two { rho, sigma2, n }, Constants::Two(k)) => generate_scenario2(
            &Scenario2Spec {
                n: *n,
                rho: *rho,
                sigma2: *sigma2,
                seed,
                n_targets: spec.n_targets,
            },
            k,
        ),
        _ => Err(Error::Config("constants do not match the scenario".into())),
    }
}

/// Point estimates and intervals on (in-sample units, fresh targets).
type MethodOutput = [(Vec<f64>, Vec<(f64, f64)>); 2];

/// Everything produced by one end-to-end Direct-BART fit.
#[derive(Clone, Debug)]
pub struct DirectBartFit {
    /// Local polynomial fit whose bandwidth anchors the candidate grid.
    pub lp: LpFit,
    pub report: ScoreReport,
    pub draws: PosteriorDraws,
    pub summary: CateSummary,
}

/// LP anchor of order `lp_q`, bandwidth selection with `short` chains, then a
/// chain with `config`'s lengths at the selected bandwidth. `config.h` is ignored.
pub fn fit_direct_bart(
    ds: &Dataset,
    config: &SamplerConfig,
    short: &SamplerConfig,
    grid_size: usize,
    lp_q: usize,
    targets: &[Vec<f64>],
    level: f64,
) -> Result<DirectBartFit> {
    let lp = lp_fit(ds, lp_q)?;
    let grid = candidate_grid(lp.h_lp, grid_size)?;
    let report = select_bandwidth(ds, short, &grid)?;
    let chain = SamplerConfig {
        h: report.selected,
        ..config.clone()
    };
    let draws = run_chain(&chain, ds, targets, &[])?;
    let summary = summarize(&draws, level)?;
    Ok(DirectBartFit {
        lp,
        report,
        draws,
        summary,
    })
}

fn run_direct_bart(
    spec: &ExperimentSpec,
    sim: &SimulatedData,
    in_units: &[usize],
    seed: u64,
) -> Result<MethodOutput> {
    let ds = &sim.data;
    let base = spec.sampler_config(seed);
    let short = SamplerConfig {
        n_burn: spec.bw_burn,
        n_iter: spec.bw_burn + spec.bw_keep,
        ..base.clone()
    };
    let mut targets: Vec<Vec<f64>> = in_units.iter().map(|&i| ds.z(i).to_vec()).collect();
    targets.extend(sim.targets.iter().cloned());
    let summary = fit_direct_bart(ds, &base, &short, spec.grid_size, spec.lp_q, &targets, spec.level)?
        .summary;
    let split = in_units.len();
    let intervals: Vec<(f64, f64)> = summary
        .lower
        .iter()
        .zip(&summary.upper)
        .map(|(&l, &u)| (l, u))
        .collect();
    Ok([
        (summary.mean[..split].to_vec(), intervals[..split].to_vec()),
        (summary.mean[split..].to_vec(), intervals[split..].to_vec()),
    ])
}

fn run_lp(lp: &Result<LpFit>, n_in: usize, n_out: usize) -> Result<MethodOutput> {
    let fit = lp
        .as_ref()
        .map_err(|e| Error::Config(format!("local polynomial fit failed: {e}")))?;
    Ok([
        (vec![fit.tau_hat; n_in], vec![fit.ci; n_in]),
        (vec![fit.tau_hat; n_out], vec![fit.ci; n_out]),
    ])
}

fn replication(
    spec: &ExperimentSpec,
    constants: &Constants,
    r: usize,
    methods: &[Method],
) -> Vec<DetailRow> {
    let seed = spec.base_seed.wrapping_add(r as u64);
    let failed = |method: Method, e: &Error| {
        [Sample::In, Sample::Out]
            .into_iter()
            .map(|sample| DetailRow {
                replication: r,
                method,
                sample,
                rmse: None,
                coverage: None,
                error: Some(e.to_string()),
            })
            .collect::<Vec<_>>()
    };
    let sim = match simulate(spec, constants, seed) {
        Ok(sim) => sim,
        Err(e) => return methods.iter().flat_map(|&m| failed(m, &e)).collect(),
    };
    let in_units = near_cutoff_units(&sim.data, IN_SAMPLE_RADIUS);
    let in_truth: Vec<f64> = in_units.iter().map(|&i| sim.true_tau[i]).collect();
    let lp = lp_fit(&sim.data, spec.lp_q);
    let mut rows = Vec::new();
    for &method in methods {
        let output = match method {
            Method::DirectBart => run_direct_bart(spec, &sim, &in_units, seed),
            Method::Lp => run_lp(&lp, in_units.len(), sim.targets.len()),
        };
        let scored = output.and_then(|out| {
            let mut scored = Vec::with_capacity(2);
            for (sample, (est, ci), truth) in [
                (Sample::In, &out[0], &in_truth),
                (Sample::Out, &out[1], &sim.target_tau),
            ] {
                scored.push((sample, rmse(est, truth)?, 100.0 * coverage(ci, truth)?));
            }
            Ok(scored)
        });
        match scored {
            Ok(scored) => rows.extend(scored.into_iter().map(|(sample, e, c)| DetailRow {
                replication: r,
                method,
                sample,
                rmse: Some(e),
                coverage: Some(c),
                error: None,
            })),
            Err(e) => rows.extend(failed(method, &e)),
        }
    }
    rows
}

/// Means over successful replications per (method, sample).
pub fn aggregate(spec: &ExperimentSpec, detail: &[DetailRow]) -> MetricsTable {
    let mut methods = spec.methods.clone();
    methods.sort();
    methods.dedup();
    let mut rows = Vec::new();
    for method in methods {
        for sample in [Sample::In, Sample::Out] {
            let cell: Vec<&DetailRow> = detail
                .iter()
                .filter(|d| d.method == method && d.sample == sample)
                .collect();
            let ok: Vec<(f64, f64)> = cell
                .iter()
                .filter_map(|d| Some((d.rmse?, d.coverage?)))
                .collect();
            let k = ok.len() as f64;
            let (rmse, cov) = if ok.is_empty() {
                (f64::NAN, f64::NAN)
            } else {
                (
                    ok.iter().map(|o| o.0).sum::<f64>() / k,
                    ok.iter().map(|o| o.1).sum::<f64>() / k,
                )
            };
            rows.push(MetricsRow {
                method,
                scenario: spec.scenario.name().to_string(),
                setting: spec.scenario.setting(),
                sigma2: spec.scenario.sigma2(),
                sample,
                rmse,
                coverage: cov,
                replications: ok.len(),
                failed: cell.len() - ok.len(),
            });
        }
    }
    MetricsTable { rows }
}

/// Replication `r` uses seed `base_seed + r`; calibration runs once up front.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentResult> {
    spec.validate()?;
    let constants = calibrate(spec)?;
    let mut methods = spec.methods.clone();
    methods.sort();
    methods.dedup();
    let detail: Vec<DetailRow> = (0..spec.replications)
        .into_par_iter()
        .map(|r| replication(spec, &constants, r, &methods))
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect();
    let table = aggregate(spec, &detail);
    Ok(ExperimentResult {
        table,
        detail,
        constants,
    })
}
