//! Sum-of-trees prior on the treatment effect function: leaf-prior elicitation,
//! the weighted leaf marginal likelihood, Metropolis–Hastings tree updates,
//! conjugate leaf-mean draws and forest prediction.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::trees::{
    propose_move, MoveKind, ProposalOutcome, SplitCandidates, Tree, TreePrior, MAX_DEPTH,
};

pub const DEFAULT_TREES: usize = 20;
pub const DEFAULT_ALPHA: f64 = 0.95;
pub const DEFAULT_BETA: f64 = 2.0;
const ELICITATION_RETRIES: usize = 10;

/// Leaf prior `N(mu_mu, sigma_mu^2)` and tree-prior settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LeafHyper {
    pub mu_mu: f64,
    pub sigma_mu: f64,
    pub m: usize,
    pub alpha: f64,
    pub beta: f64,
    pub max_depth: u32,
}

impl LeafHyper {
    pub fn new(mu_mu: f64, sigma_mu: f64, m: usize) -> Result<Self> {
        if !(sigma_mu > 0.0) || !sigma_mu.is_finite() || !mu_mu.is_finite() {
            return Err(Error::Config(format!(
                "leaf prior needs finite mean and positive sd, got ({mu_mu}, {sigma_mu})"
            )));
        }
        if m == 0 {
            return Err(Error::Config("tree count must be positive".into()));
        }
        Ok(Self {
            mu_mu,
            sigma_mu,
            m,
            alpha: DEFAULT_ALPHA,
            beta: DEFAULT_BETA,
            max_depth: MAX_DEPTH,
        })
    }

    pub fn tree_prior(&self) -> TreePrior {
        TreePrior {
            max_depth: self.max_depth,
            ..TreePrior::new(self.alpha, self.beta)
        }
    }
}

/// Empirical effect bounds and the elicited leaf prior.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Elicitation {
    pub tau_min: f64,
    pub tau_max: f64,
    /// Half-width actually used (after any doubling).
    pub delta: f64,
    pub hyper: LeafHyper,
}

/// Sets `mu_mu`, `sigma_mu` so that `m mu_mu ± k sqrt(m) sigma_mu` spans the range
/// of outcome differences across the cutoff within `(c - delta, c + delta)`.
///
/// An empty window on either side doubles `delta`, at most ten times.
pub fn elicit_leaf_prior(ds: &Dataset, delta: f64, k: f64, m: usize) -> Result<Elicitation> {
    if !(delta > 0.0) || !(k > 0.0) || m == 0 {
        return Err(Error::Config(format!(
            "elicitation needs delta > 0, k > 0, m > 0 (got {delta}, {k}, {m})"
        )));
    }
    let c = ds.cutoff();
    let mut delta = delta;
    for _ in 0..=ELICITATION_RETRIES {
        let mut treated = (f64::INFINITY, f64::NEG_INFINITY);
        let mut control = (f64::INFINITY, f64::NEG_INFINITY);
        for (&x, &y) in ds.x().iter().zip(ds.y()) {
            let side = if x > c && x < c + delta {
                &mut treated
            } else if x < c && x > c - delta {
                &mut control
            } else {
                continue;
            };
            side.0 = side.0.min(y);
            side.1 = side.1.max(y);
        }
        if treated.0.is_finite() && control.0.is_finite() {
            let tau_max = treated.1 - control.0;
            let tau_min = treated.0 - control.1;
            let mf = m as f64;
            let mu_mu = (tau_max + tau_min) / (2.0 * mf);
            let sigma_mu = (tau_max - tau_min) / (2.0 * k * mf.sqrt());
            let hyper = LeafHyper::new(mu_mu, sigma_mu, m).map_err(|_| {
                Error::Config(format!(
                    "degenerate effect range [{tau_min}, {tau_max}] near the cutoff gives a non-positive leaf sd"
                ))
            })?;
            return Ok(Elicitation {
                tau_min,
                tau_max,
                delta,
                hyper,
            });
        }
        delta *= 2.0;
    }
    Err(Error::Config(format!(
        "no units on one side of the cutoff within {delta} after {ELICITATION_RETRIES} doublings"
    )))
}

/// Weighted residual sufficient statistics of one leaf.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LeafStats {
    pub sum_w: f64,
    pub sum_wr: f64,
    pub sum_wr2: f64,
    /// Units with positive weight in the leaf.
    pub count: usize,
}

impl LeafStats {
    pub fn push(&mut self, weight: f64, residual: f64) {
        if weight > 0.0 {
            self.sum_w += weight;
            self.sum_wr += weight * residual;
            self.sum_wr2 += weight * residual * residual;
            self.count += 1;
        }
    }
}

/// Log marginal likelihood of a leaf with its mean integrated against the leaf prior.
///
/// Equal to
/// `-(n/2) log 2π + (n/2) log ω - ½ log σ² - ½ log(σ⁻² + ωS)
///  + ½ {(σ⁻²μ + ωT)² / (σ⁻² + ωS) - ωQ - μ²/σ²}`
/// with `S = Σk`, `T = Σk r`, `Q = Σk r²`; evaluated in a rearranged form that stays
/// accurate for tiny `σ`.
pub fn leaf_log_marginal(stats: &LeafStats, hyper: &LeafHyper, omega: f64) -> f64 {
    let n = stats.count as f64;
    let s2 = hyper.sigma_mu * hyper.sigma_mu;
    let ws = omega * stats.sum_w;
    let wt = omega * stats.sum_wr;
    let mu = hyper.mu_mu;
    // -½ log σ² - ½ log(σ⁻² + ωS) = -½ log(1 + σ² ωS)
    let log_det = -0.5 * (s2 * ws).ln_1p();
    // (aμ + T)²/(a + S) - aμ² = (2aμT + T² - aSμ²)/(a + S), divided through by a.
    let quad = (2.0 * mu * wt + s2 * wt * wt - ws * mu * mu) / (1.0 + s2 * ws);
    -0.5 * n * (2.0 * std::f64::consts::PI).ln() + 0.5 * n * omega.ln() + log_det
        + 0.5 * (quad - omega * stats.sum_wr2)
}

/// Conditional `N(m_n, σ_n²)` of a leaf mean.
pub fn leaf_posterior(stats: &LeafStats, hyper: &LeafHyper, omega: f64) -> (f64, f64) {
    let s2 = hyper.sigma_mu * hyper.sigma_mu;
    let ws = omega * stats.sum_w;
    let denom = 1.0 + s2 * ws;
    let mean = (hyper.mu_mu + s2 * omega * stats.sum_wr) / denom;
    (mean, s2 / denom)
}

/// Covariates and likelihood weights of the units that inform the trees.
#[derive(Clone, Copy, Debug)]
pub struct TreeData<'a> {
    /// Row-major, `dim` columns.
    pub z: &'a [f64],
    pub dim: usize,
    pub weights: &'a [f64],
    pub candidates: &'a SplitCandidates,
}

impl TreeData<'_> {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.z[i * self.dim..(i + 1) * self.dim]
    }
}

/// Leaf statistics indexed by node id (internal nodes stay zero).
pub fn leaf_stats(tree: &Tree, data: &TreeData<'_>, residuals: &[f64]) -> Vec<LeafStats> {
    let mut stats = vec![LeafStats::default(); tree.nodes().len()];
    for i in 0..data.len() {
        stats[tree.route(data.row(i))].push(data.weights[i], residuals[i]);
    }
    stats
}

/// Sum of leaf log marginals over the partition defined by `tree`.
pub fn tree_log_marginal(
    tree: &Tree,
    data: &TreeData<'_>,
    residuals: &[f64],
    hyper: &LeafHyper,
    omega: f64,
) -> f64 {
    let stats = leaf_stats(tree, data, residuals);
    tree.leaves()
        .into_iter()
        .map(|l| leaf_log_marginal(&stats[l], hyper, omega))
        .sum()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MhOutcome {
    pub kind: Option<MoveKind>,
    /// False when no valid proposal could be formed.
    pub proposed: bool,
    pub accepted: bool,
}

/// One Metropolis–Hastings step on the structure of `tree`, with leaf means
/// integrated out. Returns the (possibly unchanged) tree; leaf means are
/// not refreshed here.
pub fn mh_tree_update<R: Rng + ?Sized>(
    tree: &Tree,
    data: &TreeData<'_>,
    partial_residuals: &[f64],
    hyper: &LeafHyper,
    omega: f64,
    rng: &mut R,
) -> (Tree, MhOutcome) {
    let prior = hyper.tree_prior();
    match propose_move(tree, data.z, data.candidates, &prior, rng) {
        ProposalOutcome::Stay(kind) => (tree.clone(), MhOutcome {
                kind,
                proposed: false,
                accepted: false,
            }),
        ProposalOutcome::Move(p) => {
            let log_ratio = tree_log_marginal(&p.tree, data, partial_residuals, hyper, omega)
                - tree_log_marginal(tree, data, partial_residuals, hyper, omega)
                + p.log_prior_ratio
                + p.log_proposal_ratio;
            let u: f64 = rng.random();
            let accepted = log_ratio >= 0.0 || u.ln() < log_ratio;
            let outcome = MhOutcome {
                kind: Some(p.kind),
                proposed: true,
                accepted,
            };
            if accepted {
                (p.tree, outcome)
            } else {
                (tree.clone(), outcome)
            }
        }
    }
}

/// Draws every leaf mean of `tree` from its conditional given the partial residuals.
pub fn sample_leaf_means<R: Rng + ?Sized>(
    tree: &mut Tree,
    data: &TreeData<'_>,
    partial_residuals: &[f64],
    hyper: &LeafHyper,
    omega: f64,
    rng: &mut R,
) {
    let stats = leaf_stats(tree, data, partial_residuals);
    for leaf in tree.leaves() {
        let (mean, var) = leaf_posterior(&stats[leaf], hyper, omega);
        let xi: f64 = rng.sample(StandardNormal);
        tree.set_leaf_mean(leaf, mean + var.sqrt() * xi);
    }
}

/// The trees plus their summed prediction at each working unit.
#[derive(Clone, Debug)]
pub struct ForestState {
    pub trees: Vec<Tree>,
    /// `f_u = Σ_j g(z_u | T_j, M_j)` for the working units.
    pub fit: Vec<f64>,
}

impl ForestState {
    pub fn new(trees: Vec<Tree>, data: &TreeData<'_>) -> Self {
        let mut forest = Self {
            trees,
            fit: vec![0.0; data.len()],
        };
        forest.recompute_fit(data);
        forest
    }

    pub fn recompute_fit(&mut self, data: &TreeData<'_>) {
        for (u, f) in self.fit.iter_mut().enumerate() {
            let z = data.row(u);
            *f = self.trees.iter().map(|t| t.predict(z)).sum();
        }
    }

    pub fn predict(&self, z: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.predict(z)).sum()
    }

    pub fn dim(&self) -> usize {
        self.trees.first().map_or(0, Tree::dim)
    }
}

/// `τ(z) = Σ_j g(z | T_j, M_j)`.
pub fn forest_cate(forest: &ForestState, z: &[f64]) -> Result<f64> {
    if z.len() != forest.dim() {
        return Err(Error::Domain(format!(
            "covariate vector has length {}, forest expects {}",
            z.len(),
            forest.dim()
        )));
    }
    Ok(forest.predict(z))
}
