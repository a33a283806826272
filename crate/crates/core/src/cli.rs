//! Configuration files, the `fit`, `bandwidth` and `simulate` subcommands, and their outputs.
//!
//! A configuration file is plain `key = value` text split into `[fit]`,
//! `[bandwidth]` and `[simulate]` sections. Keys above the first section header
//! are shared by all sections. Lines starting with `#` are comments.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::bandwidth::{candidate_grid, select_bandwidth, short_chain, ScoreReport, DEFAULT_GRID_SIZE};
use crate::bart::DEFAULT_TREES;
use crate::data::{load_dataset, CovariateKind, CovariateSpec, Dataset, Schema};
use crate::dgp::Variability;
use crate::error::{Error, Result};
use crate::eval::{
    fit_direct_bart, lp_fit, DetailRow, ExperimentResult, ExperimentSpec, Method, MetricsTable,
    Scenario, LP_ORDER,
};
use crate::gibbs::{CateSummary, SamplerConfig};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Parsed sections of a configuration file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConfigFile {
    pub shared: BTreeMap<String, String>,
    pub sections: BTreeMap<String, BTreeMap<String, String>>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut file = ConfigFile::default();
        let mut current: Option<String> = None;
        for (k, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                let name = name.trim().to_string();
                file.sections.entry(name.clone()).or_default();
                current = Some(name);
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`, got `{line}`", k + 1))
            })?;
            let key = key.trim().to_string();
            if key.is_empty() {
                return Err(Error::Config(format!("line {}: empty key", k + 1)));
            }
            let map = match &current {
                Some(s) => file.sections.get_mut(s).expect("section inserted above"),
                None => &mut file.shared,
            };
            if map.insert(key.clone(), value.trim().to_string()).is_some() {
                return Err(Error::Config(format!("line {}: duplicate key `{key}`", k + 1)));
            }
        }
        Ok(file)
    }

    /// Shared keys overlaid by the keys of `section`.
    pub fn section(&self, section: &str) -> Result<Keys> {
        let own = self
            .sections
            .get(section)
            .ok_or_else(|| Error::Config(format!("configuration has no [{section}] section")))?;
        let mut map = self.shared.clone();
        map.extend(own.iter().map(|(k, v)| (k.clone(), v.clone())));
        Ok(Keys {
            section: section.to_string(),
            own: own.keys().cloned().collect(),
            map,
            used: Default::default(),
        })
    }
}

/// Key lookup that remembers which keys were read, so leftovers can be rejected.
/// Shared keys a section does not use are allowed.
#[derive(Debug)]
pub struct Keys {
    section: String,
    own: std::collections::BTreeSet<String>,
    map: BTreeMap<String, String>,
    used: std::cell::RefCell<std::collections::BTreeSet<String>>,
}

impl Keys {
    fn raw(&self, key: &str) -> Option<&str> {
        self.used.borrow_mut().insert(key.to_string());
        self.map.get(key).map(|s| s.as_str())
    }

    fn required(&self, key: &str) -> Result<&str> {
        self.raw(key)
            .ok_or_else(|| Error::Config(format!("[{}] is missing key `{key}`", self.section)))
    }

    fn parsed<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T> {
        match self.raw(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| {
                Error::Config(format!("[{}] key `{key}`: cannot parse `{v}`", self.section))
            }),
        }
    }

    fn required_parsed<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let v = self.required(key)?;
        v.parse()
            .map_err(|_| Error::Config(format!("[{}] key `{key}`: cannot parse `{v}`", self.section)))
    }

    fn list(&self, key: &str) -> Option<Vec<String>> {
        self.raw(key).map(split_list)
    }

    fn finish(&self) -> Result<()> {
        let used = self.used.borrow();
        let unknown: Vec<&str> = self
            .own
            .iter()
            .filter(|k| !used.contains(*k))
            .map(|k| k.as_str())
            .collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "[{}] has unknown keys: {}",
                self.section,
                unknown.join(", ")
            )))
        }
    }
}

fn split_list(v: &str) -> Vec<String> {
    v.split(',')
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect()
}

/// Data source and chain settings shared by `fit` and `bandwidth`.
#[derive(Clone, Debug, PartialEq)]
pub struct BandwidthSpec {
    pub data: PathBuf,
    pub schema: Schema,
    pub q: usize,
    /// Order of the local polynomial fit that anchors the grid.
    pub lp_q: usize,
    pub m: usize,
    pub grid_size: usize,
    /// Explicit candidates; replaces the grid built from the LP anchor.
    pub grid: Option<Vec<f64>>,
    /// Overrides the LP bandwidth as the grid anchor.
    pub anchor: Option<f64>,
    pub bw_burn: usize,
    pub bw_keep: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitSpec {
    pub bandwidth: BandwidthSpec,
    pub n_iter: usize,
    pub n_burn: usize,
    pub level: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimulateSpec {
    pub experiment: ExperimentSpec,
}

#[derive(Clone, Debug, PartialEq)]
pub enum RunConfig {
    Fit(FitSpec),
    Bandwidth(BandwidthSpec),
    Simulate(SimulateSpec),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Fit,
    Bandwidth,
    Simulate,
}

impl Command {
    pub fn section(self) -> &'static str {
        match self {
            Command::Fit => "fit",
            Command::Bandwidth => "bandwidth",
            Command::Simulate => "simulate",
        }
    }
}

/// Reads `path` and resolves the section for `command`. Relative data paths are
/// taken relative to the configuration file. `seed` overrides the file's seed.
pub fn load_config(path: &Path, command: Command, seed: Option<u64>) -> Result<RunConfig> {
    let text = fs::read_to_string(path).map_err(|e| {
        Error::Config(format!("cannot read configuration {}: {e}", path.display()))
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_run_config(&text, base, command, seed)
}

pub fn parse_run_config(
    text: &str,
    base: &Path,
    command: Command,
    seed: Option<u64>,
) -> Result<RunConfig> {
    let file = ConfigFile::parse(text)?;
    let keys = file.section(command.section())?;
    let config = match command {
        Command::Fit => {
            let bandwidth = bandwidth_spec(&keys, base, seed)?;
            let n_iter = keys.parsed("n_iter", 5000usize)?;
            let n_burn = keys.parsed("n_burn", 500usize)?;
            let level = keys.parsed("level", 0.95f64)?;
            if n_iter <= n_burn {
                return Err(Error::Config(format!(
                    "n_iter ({n_iter}) must exceed n_burn ({n_burn})"
                )));
            }
            check_level(level)?;
            RunConfig::Fit(FitSpec {
                bandwidth,
                n_iter,
                n_burn,
                level,
            })
        }
        Command::Bandwidth => RunConfig::Bandwidth(bandwidth_spec(&keys, base, seed)?),
        Command::Simulate => RunConfig::Simulate(simulate_spec(&keys, seed)?),
    };
    keys.finish()?;
    Ok(config)
}

fn check_level(level: f64) -> Result<()> {
    if level > 0.0 && level < 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("level must lie in (0,1), got {level}")))
    }
}

fn bandwidth_spec(keys: &Keys, base: &Path, seed: Option<u64>) -> Result<BandwidthSpec> {
    let data = base.join(keys.required("data")?);
    if !data.is_file() {
        return Err(Error::Config(format!("data file {} does not exist", data.display())));
    }
    let data = fs::canonicalize(&data)?;
    let outcome = keys.required("outcome")?.to_string();
    let running = keys.required("running")?.to_string();
    let cutoff: f64 = keys.required_parsed("cutoff")?;
    if !cutoff.is_finite() {
        return Err(Error::Config("cutoff must be finite".into()));
    }
    let names = keys.list("covariates").unwrap_or_default();
    let categorical = keys.list("categorical").unwrap_or_default();
    if let Some(c) = categorical.iter().find(|c| !names.contains(c)) {
        return Err(Error::Config(format!("categorical column `{c}` is not listed in covariates")));
    }
    let mut covariates = Vec::with_capacity(names.len());
    for name in &names {
        let kind = if categorical.contains(name) {
            let levels = keys.list(&format!("{name}.levels")).ok_or_else(|| {
                Error::Config(format!("categorical column `{name}` needs `{name}.levels`"))
            })?;
            if levels.len() < 2 {
                return Err(Error::Config(format!("`{name}.levels` needs at least two levels")));
            }
            let reference = match keys.raw(&format!("{name}.reference")) {
                Some(r) => r.to_string(),
                None => levels[0].clone(),
            };
            CovariateKind::Categorical { levels, reference }
        } else {
            CovariateKind::Continuous
        };
        covariates.push(CovariateSpec {
            name: name.clone(),
            kind,
        });
    }
    let q = keys.parsed("q", 1usize)?;
    if !(1..=4).contains(&q) {
        return Err(Error::Config(format!("q must lie in 1..=4, got {q}")));
    }
    let lp_q = keys.parsed("lp_q", LP_ORDER)?;
    if !(1..=4).contains(&lp_q) {
        return Err(Error::Config(format!("lp_q must lie in 1..=4, got {lp_q}")));
    }
    let m = keys.parsed("m", DEFAULT_TREES)?;
    if m == 0 {
        return Err(Error::Config("m must be positive".into()));
    }
    let grid = match keys.list("grid") {
        None => None,
        Some(items) => {
            let mut grid = Vec::with_capacity(items.len());
            for item in items {
                let h: f64 = item
                    .parse()
                    .map_err(|_| Error::Config(format!("grid entry `{item}` is not a number")))?;
                if !(h > 0.0) || !h.is_finite() {
                    return Err(Error::Config(format!("grid entry {h} is not positive")));
                }
                grid.push(h);
            }
            if grid.is_empty() {
                return Err(Error::Config("grid is empty".into()));
            }
            Some(grid)
        }
    };
    let anchor = match keys.raw("anchor") {
        None => None,
        Some(v) => {
            let a: f64 = v
                .parse()
                .map_err(|_| Error::Config(format!("anchor `{v}` is not a number")))?;
            if !(a > 0.0) || !a.is_finite() {
                return Err(Error::Config(format!("anchor must be positive, got {a}")));
            }
            Some(a)
        }
    };
    let grid_size = keys.parsed("grid_size", DEFAULT_GRID_SIZE)?;
    if grid_size == 0 {
        return Err(Error::Config("grid_size must be positive".into()));
    }
    let short = short_chain(&SamplerConfig::new(q, 1.0, 0));
    let bw_burn = keys.parsed("bw_burn", short.n_burn)?;
    let bw_keep = keys.parsed("bw_keep", short.n_iter - short.n_burn)?;
    if bw_keep == 0 {
        return Err(Error::Config("bw_keep must be positive".into()));
    }
    let file_seed = keys.parsed("seed", 0u64)?;
    Ok(BandwidthSpec {
        data,
        schema: Schema {
            outcome,
            running,
            covariates,
            cutoff,
        },
        q,
        lp_q,
        m,
        grid_size,
        grid,
        anchor,
        bw_burn,
        bw_keep,
        seed: seed.unwrap_or(file_seed),
    })
}

fn simulate_spec(keys: &Keys, seed: Option<u64>) -> Result<SimulateSpec> {
    let name = keys.required("scenario")?;
    let sigma2: f64 = keys.required_parsed("sigma2")?;
    if !(sigma2 >= 0.0) || !sigma2.is_finite() {
        return Err(Error::Config(format!("sigma2 must be non-negative, got {sigma2}")));
    }
    let scenario = match name {
        "scenario1" | "1" => {
            let case = Variability::parse(keys.required("case")?)?;
            let n = keys.parsed("n", 1200usize)?;
            Scenario::One { case, sigma2, n }
        }
        "scenario2" | "2" => {
            let rho: f64 = keys.required_parsed("rho")?;
            if !(rho > -1.0 && rho < 1.0) {
                return Err(Error::Config(format!("rho must lie in (-1,1), got {rho}")));
            }
            let n = keys.parsed("n", 600usize)?;
            Scenario::Two { rho, sigma2, n }
        }
        other => {
            return Err(Error::Config(format!(
                "unknown scenario `{other}` (expected scenario1 or scenario2)"
            )))
        }
    };
    let defaults = ExperimentSpec::new(scenario.clone(), 15, 0);
    let methods = match keys.list("methods") {
        None => defaults.methods.clone(),
        Some(items) => items.iter().map(|m| Method::parse(m)).collect::<Result<Vec<_>>>()?,
    };
    let spec = ExperimentSpec {
        methods,
        replications: keys.parsed("replications", defaults.replications)?,
        base_seed: seed.unwrap_or(keys.parsed("seed", 0u64)?),
        q: keys.parsed("q", defaults.q)?,
        lp_q: keys.parsed("lp_q", defaults.lp_q)?,
        m: keys.parsed("m", defaults.m)?,
        n_iter: keys.parsed("n_iter", defaults.n_iter)?,
        n_burn: keys.parsed("n_burn", defaults.n_burn)?,
        grid_size: keys.parsed("grid_size", defaults.grid_size)?,
        bw_burn: keys.parsed("bw_burn", defaults.bw_burn)?,
        bw_keep: keys.parsed("bw_keep", defaults.bw_keep)?,
        n_targets: keys.parsed("n_targets", defaults.n_targets)?,
        calibration_draws: keys.parsed("calibration_draws", defaults.calibration_draws)?,
        calibration_seed: keys.parsed("calibration_seed", defaults.calibration_seed)?,
        level: keys.parsed("level", defaults.level)?,
        scenario,
    };
    if spec.q == 0 || spec.lp_q == 0 || spec.m == 0 || spec.n_targets == 0 || spec.calibration_draws < 2 {
        return Err(Error::Config(
            "q, lp_q, m and n_targets must be positive and calibration_draws at least 2".into(),
        ));
    }
    spec.validate()?;
    Ok(SimulateSpec { experiment: spec })
}

/// Outputs of `fit` before they are written.
#[derive(Clone, Debug)]
pub struct FitOutput {
    pub h_lp: f64,
    pub report: ScoreReport,
    pub summary: CateSummary,
}

fn sampler_configs(spec: &BandwidthSpec, n_iter: usize, n_burn: usize) -> (SamplerConfig, SamplerConfig) {
    let base = SamplerConfig {
        m: spec.m,
        n_iter,
        n_burn,
        ..SamplerConfig::new(spec.q, 1.0, spec.seed)
    };
    let short = SamplerConfig {
        n_burn: spec.bw_burn,
        n_iter: spec.bw_burn + spec.bw_keep,
        ..base.clone()
    };
    (base, short)
}

fn candidates(spec: &BandwidthSpec, ds: &Dataset) -> Result<(f64, Vec<f64>)> {
    let h_lp = match spec.anchor {
        Some(a) => a,
        None => lp_fit(ds, spec.lp_q)?.h_lp,
    };
    let grid = match &spec.grid {
        Some(g) => g.clone(),
        None => candidate_grid(h_lp, spec.grid_size)?,
    };
    Ok((h_lp, grid))
}

pub fn run_fit(spec: &FitSpec) -> Result<FitOutput> {
    let bw = &spec.bandwidth;
    let ds = load_dataset(&bw.data, &bw.schema)?;
    let targets: Vec<Vec<f64>> = (0..ds.n()).map(|i| ds.z(i).to_vec()).collect();
    let (base, short) = sampler_configs(bw, spec.n_iter, spec.n_burn);
    if bw.grid.is_none() && bw.anchor.is_none() {
        let fit = fit_direct_bart(&ds, &base, &short, bw.grid_size, bw.lp_q, &targets, spec.level)?;
        return Ok(FitOutput {
            h_lp: fit.lp.h_lp,
            report: fit.report,
            summary: fit.summary,
        });
    }
    let (h_lp, grid) = candidates(bw, &ds)?;
    let report = select_bandwidth(&ds, &short, &grid)?;
    let chain = SamplerConfig {
        h: report.selected,
        ..base
    };
    let draws = crate::gibbs::run_chain(&chain, &ds, &targets, &[])?;
    let summary = crate::gibbs::summarize(&draws, spec.level)?;
    Ok(FitOutput {
        h_lp,
        report,
        summary,
    })
}

pub fn run_bandwidth(spec: &BandwidthSpec) -> Result<ScoreReport> {
    let ds = load_dataset(&spec.data, &spec.schema)?;
    let (_, short) = sampler_configs(spec, 2, 1);
    let (_, grid) = candidates(spec, &ds)?;
    select_bandwidth(&ds, &short, &grid)
}

pub fn cate_csv(summary: &CateSummary) -> String {
    let mut out = String::from("id,tau_mean,lower,upper\n");
    for i in 0..summary.mean.len() {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            i, summary.mean[i], summary.lower[i], summary.upper[i]
        );
    }
    out
}

pub fn scores_csv(report: &ScoreReport) -> String {
    let mut out = String::from("candidate,score,feasible\n");
    for j in 0..report.candidates.len() {
        let _ = writeln!(
            out,
            "{},{},{}",
            report.candidates[j], report.scores[j], report.feasible[j]
        );
    }
    out
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn metrics_csv(table: &MetricsTable) -> String {
    let mut out =
        String::from("method,scenario,setting,sigma2,sample,rmse,coverage,replications,failed\n");
    for r in &table.rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.method.name(),
            r.scenario,
            r.setting,
            r.sigma2,
            r.sample.name(),
            r.rmse,
            r.coverage,
            r.replications,
            r.failed
        );
    }
    out
}

pub fn detail_csv(detail: &[DetailRow]) -> String {
    let mut out = String::from("replication,method,sample,rmse,coverage,error\n");
    for d in detail {
        let error = d
            .error
            .as_deref()
            .map(|e| format!("\"{}\"", e.replace('"', "\"\"")))
            .unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            d.replication,
            d.method.name(),
            d.sample.name(),
            opt(d.rmse),
            opt(d.coverage),
            error
        );
    }
    out
}

pub fn constants_csv(spec: &ExperimentSpec, result: &ExperimentResult) -> String {
    let mut out = String::from("scenario,parameter,value,calibration_seed\n");
    for (name, value) in result.constants.rows() {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            spec.scenario.name(),
            name,
            value,
            spec.calibration_seed
        );
    }
    out
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

fn bandwidth_manifest(out: &mut String, spec: &BandwidthSpec) {
    let s = &spec.schema;
    let _ = writeln!(out, "data = {}", spec.data.display());
    let _ = writeln!(out, "outcome = {}", s.outcome);
    let _ = writeln!(out, "running = {}", s.running);
    let _ = writeln!(out, "cutoff = {}", s.cutoff);
    let names: Vec<&str> = s.covariates.iter().map(|c| c.name.as_str()).collect();
    let _ = writeln!(out, "covariates = {}", names.join(","));
    let categorical: Vec<&CovariateSpec> = s
        .covariates
        .iter()
        .filter(|c| matches!(c.kind, CovariateKind::Categorical { .. }))
        .collect();
    if !categorical.is_empty() {
        let cat: Vec<&str> = categorical.iter().map(|c| c.name.as_str()).collect();
        let _ = writeln!(out, "categorical = {}", cat.join(","));
        for c in categorical {
            if let CovariateKind::Categorical { levels, reference } = &c.kind {
                let _ = writeln!(out, "{}.levels = {}", c.name, levels.join(","));
                let _ = writeln!(out, "{}.reference = {}", c.name, reference);
            }
        }
    }
    let _ = writeln!(out, "q = {}", spec.q);
    let _ = writeln!(out, "lp_q = {}", spec.lp_q);
    let _ = writeln!(out, "m = {}", spec.m);
    let _ = writeln!(out, "grid_size = {}", spec.grid_size);
    if let Some(g) = &spec.grid {
        let _ = writeln!(out, "grid = {}", join(g));
    }
    if let Some(a) = spec.anchor {
        let _ = writeln!(out, "anchor = {a}");
    }
    let _ = writeln!(out, "bw_burn = {}", spec.bw_burn);
    let _ = writeln!(out, "bw_keep = {}", spec.bw_keep);
    let _ = writeln!(out, "seed = {}", spec.seed);
}

/// Resolved parameters as a loadable `[fit]` section, followed by derived values as comments.
pub fn fit_manifest(spec: &FitSpec, output: &FitOutput) -> String {
    let mut out = format!("# direct-bart {VERSION}\n[fit]\n");
    bandwidth_manifest(&mut out, &spec.bandwidth);
    let _ = writeln!(out, "n_iter = {}", spec.n_iter);
    let _ = writeln!(out, "n_burn = {}", spec.n_burn);
    let _ = writeln!(out, "level = {}", spec.level);
    let _ = writeln!(out, "# anchor_bandwidth = {}", output.h_lp);
    let _ = writeln!(out, "# selected_bandwidth = {}", output.report.selected);
    let _ = writeln!(out, "# evaluation_units = {}", output.report.s);
    let _ = writeln!(out, "# units = {}", output.summary.mean.len());
    out
}

pub fn simulate_manifest(spec: &SimulateSpec) -> String {
    let e = &spec.experiment;
    let mut out = format!("# direct-bart {VERSION}\n[simulate]\n");
    match &e.scenario {
        Scenario::One { case, sigma2, n } => {
            let _ = writeln!(out, "scenario = scenario1");
            let _ = writeln!(out, "case = {}", case.name());
            let _ = writeln!(out, "sigma2 = {sigma2}");
            let _ = writeln!(out, "n = {n}");
        }
        Scenario::Two { rho, sigma2, n } => {
            let _ = writeln!(out, "scenario = scenario2");
            let _ = writeln!(out, "rho = {rho}");
            let _ = writeln!(out, "sigma2 = {sigma2}");
            let _ = writeln!(out, "n = {n}");
        }
    }
    let methods: Vec<&str> = e.methods.iter().map(|m| m.name()).collect();
    let _ = writeln!(out, "methods = {}", methods.join(","));
    let _ = writeln!(out, "replications = {}", e.replications);
    let _ = writeln!(out, "seed = {}", e.base_seed);
    let _ = writeln!(out, "q = {}", e.q);
    let _ = writeln!(out, "lp_q = {}", e.lp_q);
    let _ = writeln!(out, "m = {}", e.m);
    let _ = writeln!(out, "n_iter = {}", e.n_iter);
    let _ = writeln!(out, "n_burn = {}", e.n_burn);
    let _ = writeln!(out, "grid_size = {}", e.grid_size);
    let _ = writeln!(out, "bw_burn = {}", e.bw_burn);
    let _ = writeln!(out, "bw_keep = {}", e.bw_keep);
    let _ = writeln!(out, "n_targets = {}", e.n_targets);
    let _ = writeln!(out, "calibration_draws = {}", e.calibration_draws);
    let _ = writeln!(out, "calibration_seed = {}", e.calibration_seed);
    let _ = writeln!(out, "level = {}", e.level);
    out
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<PathBuf> {
    let path = dir.join(name);
    fs::write(&path, contents)?;
    Ok(path)
}

/// Runs `config` and writes its files into `out`, creating it if needed.
pub fn execute(config: &RunConfig, out: &Path) -> Result<Vec<PathBuf>> {
    match config {
        RunConfig::Fit(spec) => {
            let output = run_fit(spec)?;
            fs::create_dir_all(out)?;
            Ok(vec![
                write_file(out, "cate.csv", &cate_csv(&output.summary))?,
                write_file(out, "scores.csv", &scores_csv(&output.report))?,
                write_file(out, "manifest.txt", &fit_manifest(spec, &output))?,
            ])
        }
        RunConfig::Bandwidth(spec) => {
            let report = run_bandwidth(spec)?;
            fs::create_dir_all(out)?;
            Ok(vec![write_file(out, "scores.csv", &scores_csv(&report))?])
        }
        RunConfig::Simulate(spec) => {
            let result = crate::eval::run_experiment(&spec.experiment)?;
            fs::create_dir_all(out)?;
            Ok(vec![
                write_file(out, "metrics.csv", &metrics_csv(&result.table))?,
                write_file(out, "detail.csv", &detail_csv(&result.detail))?,
                write_file(out, "constants.csv", &constants_csv(&spec.experiment, &result))?,
                write_file(out, "manifest.txt", &simulate_manifest(spec))?,
            ])
        }
    }
}
