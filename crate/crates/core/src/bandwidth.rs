//! Bandwidth selection by the local Hyvärinen score.

use rayon::prelude::*;

use crate::data::{kernel_weights, Dataset};
use crate::error::{Error, Result};
use crate::gibbs::{run_chain, PosteriorDraws, SamplerConfig};
use crate::rng;

/// Number of candidates on the default grid.
pub const DEFAULT_GRID_SIZE: usize = 6;
/// Burn-in and retained lengths of the per-candidate chains.
pub const SHORT_BURN: usize = 500;
pub const SHORT_KEEP: usize = 500;

#[derive(Clone, Debug, PartialEq)]
pub struct ScoreReport {
    pub candidates: Vec<f64>,
    /// `+∞` for infeasible candidates.
    pub scores: Vec<f64>,
    pub feasible: Vec<bool>,
    pub selected: f64,
    pub eval_set: Vec<usize>,
    pub s: usize,
}

/// `max(⌈0.02 n⌉, 5)`, capped at `n`.
pub fn eval_size(n: usize) -> usize {
    let s = (n * 2).div_ceil(100).max(5);
    s.min(n)
}

/// The `s` units closest to the cutoff, ties broken by index.
pub fn evaluation_set(ds: &Dataset, s: usize) -> Vec<usize> {
    let c = ds.cutoff();
    let mut order: Vec<usize> = (0..ds.n()).collect();
    order.sort_by(|&a, &b| {
        (ds.x()[a] - c)
            .abs()
            .total_cmp(&(ds.x()[b] - c).abs())
            .then(a.cmp(&b))
    });
    order.truncate(s);
    order.sort_unstable();
    order
}

/// `ℓ · 2·anchor / L` for `ℓ = 1..L`.
pub fn candidate_grid(anchor: f64, l: usize) -> Result<Vec<f64>> {
    if !(anchor > 0.0) || !anchor.is_finite() {
        return Err(Error::Domain(format!("grid anchor must be positive, got {anchor}")));
    }
    if l < 1 {
        return Err(Error::Domain("grid needs at least one candidate".into()));
    }
    let step = 2.0 * anchor / l as f64;
    Ok((1..=l).map(|j| j as f64 * step).collect())
}

/// Sample-average form of
/// `H = Σ_i {2 E[ℓ⁽²⁾ + (ℓ⁽¹⁾)²] - (E ℓ⁽¹⁾)²}` with
/// `ℓ⁽¹⁾ = -ω k_i r_i` and `ℓ⁽²⁾ = -ω k_i`.
pub fn hyvarinen_score(
    draws: &PosteriorDraws,
    ds: &Dataset,
    h: f64,
    eval_set: &[usize],
) -> Result<f64> {
    if eval_set.is_empty() {
        return Err(Error::Domain("empty evaluation set".into()));
    }
    if draws.n_draws() == 0 {
        return Err(Error::Domain("no posterior draws to score".into()));
    }
    if draws.eval_set != eval_set {
        return Err(Error::Domain(
            "draws were not recorded on the requested evaluation set".into(),
        ));
    }
    let k = kernel_weights(ds, h)?;
    let n_draws = draws.n_draws() as f64;
    let mut total = 0.0;
    for (pos, &i) in eval_set.iter().enumerate() {
        let ki = k[i];
        if ki == 0.0 {
            continue;
        }
        let mut e1 = 0.0;
        let mut e2 = 0.0;
        for (d, &omega) in draws.omega.iter().enumerate() {
            let l1 = -omega * ki * draws.eval_residuals[d][pos];
            let l2 = -omega * ki;
            e1 += l1;
            e2 += l2 + l1 * l1;
        }
        e1 /= n_draws;
        e2 /= n_draws;
        total += 2.0 * e2 - e1 * e1;
    }
    Ok(total)
}

/// In-window unit counts `(control, treated)` at `h`.
pub fn side_counts(ds: &Dataset, h: f64) -> (usize, usize) {
    let c = ds.cutoff();
    let mut counts = (0, 0);
    for (i, &x) in ds.x().iter().enumerate() {
        if (x - c).abs() <= h {
            if ds.treated(i) {
                counts.1 += 1;
            } else {
                counts.0 += 1;
            }
        }
    }
    counts
}

/// Smallest bandwidth leaving at least `need` units on each side, if any.
pub fn min_feasible_bandwidth(ds: &Dataset, need: usize) -> Option<f64> {
    let c = ds.cutoff();
    let mut below = Vec::new();
    let mut above = Vec::new();
    for (i, &x) in ds.x().iter().enumerate() {
        if ds.treated(i) {
            above.push((x - c).abs());
        } else {
            below.push((x - c).abs());
        }
    }
    if need == 0 {
        return Some(0.0);
    }
    if below.len() < need || above.len() < need {
        return None;
    }
    below.sort_by(f64::total_cmp);
    above.sort_by(f64::total_cmp);
    Some(below[need - 1].max(above[need - 1]))
}

/// Index of the smallest score; ties go to the smaller candidate.
pub fn argmin_score(candidates: &[f64], scores: &[f64]) -> Option<usize> {
    (0..candidates.len().min(scores.len()))
        .filter(|&j| scores[j].is_finite())
        .min_by(|&a, &b| {
            scores[a]
                .total_cmp(&scores[b])
                .then(candidates[a].total_cmp(&candidates[b]))
        })
}

/// `config` with the short per-candidate chain lengths.
pub fn short_chain(config: &SamplerConfig) -> SamplerConfig {
    SamplerConfig {
        n_burn: SHORT_BURN,
        n_iter: SHORT_BURN + SHORT_KEEP,
        thin: 1,
        ..config.clone()
    }
}

/// Runs one chain per candidate (chain lengths taken from `config` as given)
/// and scores it on the units nearest the cutoff.
pub fn select_bandwidth(
    ds: &Dataset,
    config: &SamplerConfig,
    grid: &[f64],
) -> Result<ScoreReport> {
    if grid.is_empty() {
        return Err(Error::Config("empty bandwidth grid".into()));
    }
    let s = eval_size(ds.n());
    let eval_set = evaluation_set(ds, s);
    let need = 2 * config.q + 2;
    let results: Vec<Result<(f64, bool)>> = grid
        .par_iter()
        .enumerate()
        .map(|(j, &h)| {
            let (lo, hi) = side_counts(ds, h);
            if lo < need || hi < need {
                return Ok((f64::INFINITY, false));
            }
            let chain = SamplerConfig {
                h,
                stream: rng::ids::BANDWIDTH + j as u64,
                ..config.clone()
            };
            let draws = run_chain(&chain, ds, &[], &eval_set)?;
            Ok((hyvarinen_score(&draws, ds, h, &eval_set)?, true))
        })
        .collect();
    let mut scores = Vec::with_capacity(grid.len());
    let mut feasible = Vec::with_capacity(grid.len());
    for r in results {
        let (score, ok) = r?;
        scores.push(score);
        feasible.push(ok);
    }
    let best = argmin_score(grid, &scores).ok_or_else(|| {
        let hint = match min_feasible_bandwidth(ds, need) {
            Some(h) => format!("the smallest feasible window is h = {h}"),
            None => "no bandwidth is feasible for this dataset".to_string(),
        };
        Error::Config(format!(
            "every bandwidth candidate leaves fewer than {need} units on a side; {hint}"
        ))
    })?;
    Ok(ScoreReport {
        candidates: grid.to_vec(),
        scores,
        feasible,
        selected: grid[best],
        eval_set,
        s,
    })
}
