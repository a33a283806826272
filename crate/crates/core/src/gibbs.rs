//! The Gibbs sampler: Bayesian backfitting over the trees, then `B`, then `ω`.
//!
//! Only units inside the kernel window carry likelihood weight, and only the
//! treated ones among them inform the trees (the effect enters the working
//! likelihood as `W_i τ(z_i)`), so the sampler keeps two working sets:
//! `window` for the local polynomial and `tree units` for the forest.

use nalgebra::DMatrix;

use crate::bart::{
    elicit_leaf_prior, mh_tree_update, sample_leaf_means, ForestState, LeafHyper, TreeData,
    DEFAULT_ALPHA, DEFAULT_BETA, DEFAULT_TREES,
};
use crate::data::{design_rows, kernel_weights, polynomial_basis, Dataset, DesignRow};
use crate::error::{Error, Result};
use crate::locallinear::{sample_omega, BConditional, LocalLinearPrior, LocalLinearState};
use crate::rng::{self, ChainRng};
use crate::stats;
use crate::trees::{MoveKind, SplitCandidates, Tree};

/// Sweeps between full recomputations of the cached forest fit.
const REFRESH_EVERY: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LeafPriorSpec {
    /// Elicit from outcomes within `delta_multiplier * sd(x)` of the cutoff.
    Elicit { delta_multiplier: f64, k: f64 },
    Fixed { mu_mu: f64, sigma_mu: f64 },
}

impl Default for LeafPriorSpec {
    fn default() -> Self {
        LeafPriorSpec::Elicit {
            delta_multiplier: 0.1,
            k: 2.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SamplerConfig {
    /// Polynomial order of the local model.
    pub q: usize,
    /// Number of trees.
    pub m: usize,
    /// Total sweeps, burn-in included.
    pub n_iter: usize,
    pub n_burn: usize,
    pub thin: usize,
    /// Bandwidth.
    pub h: f64,
    pub leaf_prior: LeafPriorSpec,
    pub alpha: f64,
    pub beta: f64,
    /// Defaults to [`LocalLinearPrior::default_for`] when `None`.
    pub prior: Option<LocalLinearPrior>,
    pub seed: u64,
    /// Stream id under `seed`; distinct chains use distinct streams.
    pub stream: u64,
    /// Hold `ω` at this value instead of sampling it.
    pub fixed_omega: Option<f64>,
}

impl SamplerConfig {
    /// 20 trees, 500 burn-in sweeps followed by 4500 retained draws.
    pub fn new(q: usize, h: f64, seed: u64) -> Self {
        Self {
            q,
            m: DEFAULT_TREES,
            n_iter: 5000,
            n_burn: 500,
            thin: 1,
            h,
            leaf_prior: LeafPriorSpec::default(),
            alpha: DEFAULT_ALPHA,
            beta: DEFAULT_BETA,
            prior: None,
            seed,
            stream: rng::ids::CHAIN,
            fixed_omega: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.q == 0 {
            return Err(Error::Config("polynomial order q must be at least 1".into()));
        }
        if self.m == 0 {
            return Err(Error::Config("tree count m must be positive".into()));
        }
        if self.n_iter <= self.n_burn {
            return Err(Error::Config(format!(
                "n_iter ({}) must exceed n_burn ({})",
                self.n_iter, self.n_burn
            )));
        }
        if self.thin == 0 {
            return Err(Error::Config("thin must be at least 1".into()));
        }
        if !(self.h > 0.0) || !self.h.is_finite() {
            return Err(Error::Config(format!("bandwidth must be positive, got {}", self.h)));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) || !(self.beta >= 0.0) {
            return Err(Error::Config("tree prior needs alpha in (0,1) and beta >= 0".into()));
        }
        if let Some(w) = self.fixed_omega {
            if !(w > 0.0) {
                return Err(Error::Config("fixed omega must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn retained(&self) -> usize {
        (self.n_iter - self.n_burn) / self.thin
    }

    fn local_prior(&self, d: usize) -> LocalLinearPrior {
        self.prior
            .clone()
            .unwrap_or_else(|| LocalLinearPrior::default_for(self.q, d))
    }
}

/// Leaf hyperparameters implied by `config` for `ds`.
pub fn resolve_leaf_hyper(config: &SamplerConfig, ds: &Dataset) -> Result<LeafHyper> {
    let mut hyper = match config.leaf_prior {
        LeafPriorSpec::Elicit { delta_multiplier, k } => {
            elicit_leaf_prior(ds, delta_multiplier * ds.sd_x(), k, config.m)?.hyper
        }
        LeafPriorSpec::Fixed { mu_mu, sigma_mu } => LeafHyper::new(mu_mu, sigma_mu, config.m)?,
    };
    hyper.alpha = config.alpha;
    hyper.beta = config.beta;
    Ok(hyper)
}

/// Proposal and acceptance counts per move kind.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct AcceptanceCounts {
    pub proposed: [usize; 4],
    pub accepted: [usize; 4],
    /// Steps where no valid proposal could be formed.
    pub stays: usize,
}

impl AcceptanceCounts {
    fn record(&mut self, kind: Option<MoveKind>, proposed_valid: bool, accepted: bool) {
        if !proposed_valid {
            self.stays += 1;
            return;
        }
        if let Some(k) = kind {
            self.proposed[k.index()] += 1;
            if accepted {
                self.accepted[k.index()] += 1;
            }
        }
    }

    pub fn rate(&self, kind: MoveKind) -> f64 {
        let p = self.proposed[kind.index()];
        if p == 0 {
            0.0
        } else {
            self.accepted[kind.index()] as f64 / p as f64
        }
    }
}

/// Retained posterior draws.
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorDraws {
    n_targets: usize,
    /// Row-major `draws x targets`.
    tau: Vec<f64>,
    pub b: Vec<DMatrix<f64>>,
    pub omega: Vec<f64>,
    /// Units whose residuals are recorded per draw.
    pub eval_set: Vec<usize>,
    /// Kernel weights of `eval_set` at the chain's bandwidth.
    pub eval_weights: Vec<f64>,
    /// `y_i - W_i τ(z_i) - x̃ᵢᵀ B z̃ᵢ` for each draw and each unit of `eval_set`.
    pub eval_residuals: Vec<Vec<f64>>,
    pub acceptance: AcceptanceCounts,
    pub hyper: LeafHyper,
    pub h: f64,
}

impl PosteriorDraws {
    pub fn n_draws(&self) -> usize {
        self.omega.len()
    }

    pub fn n_targets(&self) -> usize {
        self.n_targets
    }

    pub fn tau_draw(&self, draw: usize) -> &[f64] {
        &self.tau[draw * self.n_targets..(draw + 1) * self.n_targets]
    }

    /// All draws of `τ` at one target.
    pub fn tau_at(&self, target: usize) -> Vec<f64> {
        (0..self.n_draws())
            .map(|d| self.tau[d * self.n_targets + target])
            .collect()
    }

    /// Builds draws directly; used by scoring code and tests that bypass the sampler.
    pub fn from_parts(
        n_targets: usize,
        tau: Vec<f64>,
        omega: Vec<f64>,
        eval_set: Vec<usize>,
        eval_weights: Vec<f64>,
        eval_residuals: Vec<Vec<f64>>,
    ) -> Self {
        Self {
            n_targets,
            tau,
            b: Vec::new(),
            omega,
            eval_set,
            eval_weights,
            eval_residuals,
            acceptance: AcceptanceCounts::default(),
            hyper: LeafHyper {
                mu_mu: 0.0,
                sigma_mu: 1.0,
                m: 1,
                alpha: DEFAULT_ALPHA,
                beta: DEFAULT_BETA,
                max_depth: crate::trees::MAX_DEPTH,
            },
            h: f64::NAN,
        }
    }
}

/// Posterior means and equal-tailed credible bounds per target.
#[derive(Clone, Debug, PartialEq)]
pub struct CateSummary {
    pub mean: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub level: f64,
}

/// Stumps at the prior leaf mean, `B = M0`, `ω = ν0 / η0`.
pub fn initialize_state(
    config: &SamplerConfig,
    ds: &Dataset,
) -> Result<(ForestState, LocalLinearState)> {
    let sampler = Sampler::new(config, ds)?;
    Ok((sampler.forest, sampler.state))
}

/// A single chain.
pub struct Sampler<'a> {
    ds: &'a Dataset,
    config: SamplerConfig,
    hyper: LeafHyper,
    prior: LocalLinearPrior,
    /// Dataset indices of in-window units.
    window: Vec<usize>,
    rows: Vec<DesignRow>,
    weights: Vec<f64>,
    /// Positions in `window` of the treated units.
    tree_pos: Vec<usize>,
    tree_z: Vec<f64>,
    tree_weights: Vec<f64>,
    candidates: SplitCandidates,
    b_cond: BConditional,
    forest: ForestState,
    state: LocalLinearState,
    /// `x̃ᵀ B z̃` per window unit.
    lin: Vec<f64>,
    rng: ChainRng,
    sweeps: usize,
    acceptance: AcceptanceCounts,
    scratch_resid: Vec<f64>,
    scratch_pred: Vec<f64>,
}

impl<'a> Sampler<'a> {
    pub fn new(config: &SamplerConfig, ds: &'a Dataset) -> Result<Self> {
        config.validate()?;
        let hyper = resolve_leaf_hyper(config, ds)?;
        let prior = config.local_prior(ds.d());
        prior.validate()?;
        if prior.rows() != 2 * config.q + 1 || prior.cols() != ds.d() + 1 {
            return Err(Error::Config(format!(
                "prior mean is {}x{}, expected {}x{}",
                prior.rows(),
                prior.cols(),
                2 * config.q + 1,
                ds.d() + 1
            )));
        }
        let k = kernel_weights(ds, config.h)?;
        let window: Vec<usize> = (0..ds.n()).filter(|&i| k[i] > 0.0).collect();
        let n_treated = window.iter().filter(|&&i| ds.treated(i)).count();
        if n_treated == 0 || n_treated == window.len() {
            return Err(Error::Config(format!(
                "bandwidth {} leaves {} treated and {} control units in the window; both sides are needed",
                config.h,
                n_treated,
                window.len() - n_treated
            )));
        }
        let all_rows = design_rows(ds, config.q, config.h)?;
        let rows: Vec<DesignRow> = window.iter().map(|&i| all_rows[i].clone()).collect();
        let weights: Vec<f64> = window.iter().map(|&i| k[i]).collect();
        let tree_pos: Vec<usize> = (0..window.len())
            .filter(|&p| ds.treated(window[p]))
            .collect();
        let tree_z: Vec<f64> = tree_pos
            .iter()
            .flat_map(|&p| ds.z(window[p]).iter().copied())
            .collect();
        let tree_weights: Vec<f64> = tree_pos.iter().map(|&p| weights[p]).collect();
        let candidates = SplitCandidates::from_rows(&tree_z, ds.d());
        let b_cond = BConditional::new(&rows, &prior)?;

        let trees = (0..config.m)
            .map(|_| Tree::stump(ds.d(), hyper.mu_mu))
            .collect();
        let data = TreeData {
            z: &tree_z,
            dim: ds.d(),
            weights: &tree_weights,
            candidates: &candidates,
        };
        let forest = ForestState::new(trees, &data);
        let state = LocalLinearState {
            b: prior.m0.clone(),
            omega: config.fixed_omega.unwrap_or(prior.nu0 / prior.eta0),
        };
        let lin = rows.iter().map(|r| state.linear_fit(r)).collect();
        let n_tree = tree_pos.len();
        Ok(Self {
            ds,
            config: config.clone(),
            hyper,
            prior,
            window,
            rows,
            weights,
            tree_pos,
            tree_z,
            tree_weights,
            candidates,
            b_cond,
            forest,
            state,
            lin,
            rng: rng::stream(config.seed, config.stream),
            sweeps: 0,
            acceptance: AcceptanceCounts::default(),
            scratch_resid: vec![0.0; n_tree],
            scratch_pred: vec![0.0; n_tree],
        })
    }

    pub fn hyper(&self) -> &LeafHyper {
        &self.hyper
    }

    pub fn forest(&self) -> &ForestState {
        &self.forest
    }

    pub fn state(&self) -> &LocalLinearState {
        &self.state
    }

    pub fn window(&self) -> &[usize] {
        &self.window
    }

    pub fn acceptance(&self) -> &AcceptanceCounts {
        &self.acceptance
    }

    /// One full sweep: each tree (structure, then leaf means), then `B`, then `ω`.
    pub fn step(&mut self) -> Result<()> {
        let dim = self.ds.d();
        let y = self.ds.y();
        let data = TreeData {
            z: &self.tree_z,
            dim,
            weights: &self.tree_weights,
            candidates: &self.candidates,
        };
        for j in 0..self.config.m {
            let tree = &self.forest.trees[j];
            for (u, &p) in self.tree_pos.iter().enumerate() {
                let old = tree.predict(data.row(u));
                self.scratch_pred[u] = old;
                self.scratch_resid[u] =
                    y[self.window[p]] - (self.forest.fit[u] - old) - self.lin[p];
            }
            let (mut new_tree, outcome) = mh_tree_update(
                tree,
                &data,
                &self.scratch_resid,
                &self.hyper,
                self.state.omega,
                &mut self.rng,
            );
            self.acceptance
                .record(outcome.kind, outcome.proposed, outcome.accepted);
            sample_leaf_means(
                &mut new_tree,
                &data,
                &self.scratch_resid,
                &self.hyper,
                self.state.omega,
                &mut self.rng,
            );
            for u in 0..self.tree_pos.len() {
                self.forest.fit[u] += new_tree.predict(data.row(u)) - self.scratch_pred[u];
            }
            self.forest.trees[j] = new_tree;
        }

        // B | τ, ω uses y - W τ on the window; controls carry no effect.
        let mut resid_b: Vec<f64> = self.window.iter().map(|&i| y[i]).collect();
        for (u, &p) in self.tree_pos.iter().enumerate() {
            resid_b[p] -= self.forest.fit[u];
        }
        self.state.b = self
            .b_cond
            .sample(&self.rows, &resid_b, self.state.omega, &mut self.rng)?;
        for (l, row) in self.lin.iter_mut().zip(&self.rows) {
            *l = self.state.linear_fit(row);
        }

        if self.config.fixed_omega.is_none() {
            let full: Vec<f64> = resid_b.iter().zip(&self.lin).map(|(r, l)| r - l).collect();
            self.state.omega = sample_omega(&full, &self.weights, &self.prior, &mut self.rng)?;
        }

        self.sweeps += 1;
        if self.sweeps % REFRESH_EVERY == 0 {
            self.forest.recompute_fit(&data);
        }
        Ok(())
    }

    /// Largest gap between the cached working residuals and a from-scratch recomputation.
    pub fn residual_drift(&self) -> f64 {
        let y = self.ds.y();
        let mut worst: f64 = 0.0;
        let mut treated_fit = vec![0.0; self.window.len()];
        for (u, &p) in self.tree_pos.iter().enumerate() {
            treated_fit[p] = self.forest.fit[u];
        }
        for (p, &i) in self.window.iter().enumerate() {
            let tau = self.forest.predict(self.ds.z(i));
            let fresh = y[i] - self.ds.w(i) * tau - self.state.linear_fit(&self.rows[p]);
            let cached = y[i] - treated_fit[p] - self.lin[p];
            worst = worst.max((fresh - cached).abs());
        }
        worst
    }

    /// Working residual `y_i - W_i τ(z_i) - x̃ᵢᵀ B z̃ᵢ` for any unit.
    pub fn residual(&self, i: usize) -> f64 {
        let row = DesignRow::new(
            polynomial_basis(self.ds.x()[i], self.ds.cutoff(), self.config.q),
            self.ds.z(i),
            1.0,
        );
        self.ds.y()[i] - self.ds.w(i) * self.forest.predict(self.ds.z(i))
            - self.state.linear_fit(&row)
    }
}

/// One sweep from an existing state.
pub fn gibbs_step(sampler: &mut Sampler<'_>) -> Result<()> {
    sampler.step()
}

/// Runs a chain and records `τ` at `targets`, plus residuals at `eval_set`, for
/// every retained sweep.
pub fn run_chain(
    config: &SamplerConfig,
    ds: &Dataset,
    targets: &[Vec<f64>],
    eval_set: &[usize],
) -> Result<PosteriorDraws> {
    if let Some(t) = targets.iter().find(|t| t.len() != ds.d()) {
        return Err(Error::Domain(format!(
            "target has {} covariates, dataset has {}",
            t.len(),
            ds.d()
        )));
    }
    if let Some(&i) = eval_set.iter().find(|&&i| i >= ds.n()) {
        return Err(Error::Domain(format!("evaluation unit {i} out of range")));
    }
    let mut sampler = Sampler::new(config, ds)?;
    let k = kernel_weights(ds, config.h)?;
    let eval_weights: Vec<f64> = eval_set.iter().map(|&i| k[i]).collect();
    let retained = config.retained();
    let mut tau = Vec::with_capacity(retained * targets.len());
    let mut b = Vec::with_capacity(retained);
    let mut omega = Vec::with_capacity(retained);
    let mut eval_residuals = Vec::with_capacity(retained);
    for sweep in 1..=config.n_iter {
        sampler.step()?;
        if sweep <= config.n_burn || (sweep - config.n_burn) % config.thin != 0 {
            continue;
        }
        if omega.len() == retained {
            break;
        }
        tau.extend(targets.iter().map(|z| sampler.forest.predict(z)));
        b.push(sampler.state.b.clone());
        omega.push(sampler.state.omega);
        eval_residuals.push(eval_set.iter().map(|&i| sampler.residual(i)).collect());
    }
    Ok(PosteriorDraws {
        n_targets: targets.len(),
        tau,
        b,
        omega,
        eval_set: eval_set.to_vec(),
        eval_weights,
        eval_residuals,
        acceptance: sampler.acceptance,
        hyper: sampler.hyper,
        h: config.h,
    })
}

/// Posterior mean and equal-tailed `level` interval per target.
pub fn summarize(draws: &PosteriorDraws, level: f64) -> Result<CateSummary> {
    if draws.n_draws() < 2 {
        return Err(Error::Domain("need at least two retained draws".into()));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Domain(format!("level must lie in (0,1), got {level}")));
    }
    let tail = (1.0 - level) / 2.0;
    let mut mean = Vec::with_capacity(draws.n_targets());
    let mut lower = Vec::with_capacity(draws.n_targets());
    let mut upper = Vec::with_capacity(draws.n_targets());
    for t in 0..draws.n_targets() {
        let mut column = draws.tau_at(t);
        let m = stats::mean(&column);
        column.sort_by(f64::total_cmp);
        let lo = stats::quantile_sorted(&column, tail);
        let hi = stats::quantile_sorted(&column, 1.0 - tail);
        // Guard against rounding in the mean of a constant column.
        mean.push(m.clamp(lo, hi));
        lower.push(lo);
        upper.push(hi);
    }
    Ok(CateSummary {
        mean,
        lower,
        upper,
        level,
    })
}
