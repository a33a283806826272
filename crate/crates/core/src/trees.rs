//! Binary regression trees, the depth-penalising tree prior and the
//! structural Metropolis–Hastings proposals (grow, prune, change, swap).
//!
//! Trees live in a small arena kept in canonical pre-order: the root is node
//! 0 and every internal node is followed by its left subtree and then its
//! right subtree. Structural edits rebuild the arena, so two trees with the
//! same shape and rules have identical node vectors.

use rand::Rng;

use crate::error::{Error, Result};

/// Hard depth cap; nodes at this depth cannot split.
pub const MAX_DEPTH: u32 = 10;

/// Base probabilities of grow, prune, change and swap moves.
pub const MOVE_PROBABILITIES: [f64; 4] = [0.25, 0.25, 0.40, 0.10];

/// `z[var] <= threshold` goes left.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitRule {
    pub var: usize,
    pub threshold: f64,
}

impl SplitRule {
    #[inline]
    pub fn goes_left(&self, z: &[f64]) -> bool {
        z[self.var] <= self.threshold
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum NodeKind {
    Leaf { mean: f64 },
    Internal { rule: SplitRule, left: usize, right: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Node {
    pub kind: NodeKind,
    pub depth: u32,
}

impl Node {
    pub fn is_leaf(&self) -> bool {
        matches!(self.kind, NodeKind::Leaf { .. })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tree {
    nodes: Vec<Node>,
    dim: usize,
}

impl Tree {
    /// Single leaf over a `dim`-dimensional covariate space.
    pub fn stump(dim: usize, mean: f64) -> Self {
        Self {
            nodes: vec![Node {
                kind: NodeKind::Leaf { mean },
                depth: 0,
            }],
            dim,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, idx: usize) -> &Node {
        &self.nodes[idx]
    }

    /// Leaf node indices in pre-order.
    pub fn leaves(&self) -> Vec<usize> {
        (0..self.nodes.len()).filter(|&i| self.nodes[i].is_leaf()).collect()
    }

    pub fn internal_nodes(&self) -> Vec<usize> {
        (0..self.nodes.len()).filter(|&i| !self.nodes[i].is_leaf()).collect()
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| n.is_leaf()).count()
    }

    pub fn n_internal(&self) -> usize {
        self.nodes.len() - self.n_leaves()
    }

    pub fn max_depth(&self) -> u32 {
        self.nodes.iter().map(|n| n.depth).max().unwrap_or(0)
    }

    /// Internal nodes whose two children are both leaves (candidates for pruning).
    pub fn prunable_nodes(&self) -> Vec<usize> {
        self.internal_nodes()
            .into_iter()
            .filter(|&i| match self.nodes[i].kind {
                NodeKind::Internal { left, right, .. } => {
                    self.nodes[left].is_leaf() && self.nodes[right].is_leaf()
                }
                NodeKind::Leaf { .. } => false,
            })
            .collect()
    }

    /// `(parent, child)` pairs of internal nodes, the candidates for a swap.
    pub fn swappable_pairs(&self) -> Vec<(usize, usize)> {
        let mut pairs = Vec::new();
        for i in self.internal_nodes() {
            if let NodeKind::Internal { left, right, .. } = self.nodes[i].kind {
                for child in [left, right] {
                    if !self.nodes[child].is_leaf() {
                        pairs.push((i, child));
                    }
                }
            }
        }
        pairs
    }

    pub fn rule(&self, idx: usize) -> Option<SplitRule> {
        match self.nodes[idx].kind {
            NodeKind::Internal { rule, .. } => Some(rule),
            NodeKind::Leaf { .. } => None,
        }
    }

    pub fn leaf_mean(&self, idx: usize) -> f64 {
        match self.nodes[idx].kind {
            NodeKind::Leaf { mean } => mean,
            NodeKind::Internal { .. } => panic!("node {idx} is not a leaf"),
        }
    }

    pub fn set_leaf_mean(&mut self, idx: usize, value: f64) {
        match &mut self.nodes[idx].kind {
            NodeKind::Leaf { mean } => *mean = value,
            NodeKind::Internal { .. } => panic!("node {idx} is not a leaf"),
        }
    }

    /// Leaf reached by `z`. No dimension check.
    #[inline]
    pub fn route(&self, z: &[f64]) -> usize {
        let mut idx = 0;
        loop {
            match &self.nodes[idx].kind {
                NodeKind::Leaf { .. } => return idx,
                NodeKind::Internal { rule, left, right } => {
                    idx = if rule.goes_left(z) { *left } else { *right };
                }
            }
        }
    }

    /// Leaf index of the region containing `z`.
    pub fn assign_region(&self, z: &[f64]) -> Result<usize> {
        if z.len() != self.dim {
            return Err(Error::Domain(format!(
                "covariate vector has length {}, tree expects {}",
                z.len(),
                self.dim
            )));
        }
        Ok(self.route(z))
    }

    /// `g(z | T, M)`: the leaf mean of the region containing `z`.
    #[inline]
    pub fn predict(&self, z: &[f64]) -> f64 {
        self.leaf_mean(self.route(z))
    }

    /// Same shape and split rules, ignoring leaf means.
    pub fn same_structure(&self, other: &Tree) -> bool {
        self.nodes.len() == other.nodes.len()
            && self.nodes.iter().zip(&other.nodes).all(|(a, b)| {
                a.depth == b.depth
                    && match (&a.kind, &b.kind) {
                        (NodeKind::Leaf { .. }, NodeKind::Leaf { .. }) => true,
                        (
                            NodeKind::Internal { rule: ra, .. },
                            NodeKind::Internal { rule: rb, .. },
                        ) => ra == rb,
                        _ => false,
                    }
            })
    }

    /// Splits leaf `leaf` with `rule`; both children inherit the leaf mean.
    pub fn grow(&self, leaf: usize, rule: SplitRule) -> Tree {
        let mean = self.leaf_mean(leaf);
        let depth = self.nodes[leaf].depth;
        let mut nodes = self.nodes.clone();
        let left = nodes.len();
        nodes.push(Node {
            kind: NodeKind::Leaf { mean },
            depth: depth + 1,
        });
        nodes.push(Node {
            kind: NodeKind::Leaf { mean },
            depth: depth + 1,
        });
        nodes[leaf].kind = NodeKind::Internal {
            rule,
            left,
            right: left + 1,
        };
        Tree::canonical(nodes, self.dim)
    }

    /// Collapses internal node `node` (whose children are leaves) into a leaf.
    pub fn prune(&self, node: usize) -> Tree {
        let (left, right) = match self.nodes[node].kind {
            NodeKind::Internal { left, right, .. } => (left, right),
            NodeKind::Leaf { .. } => panic!("node {node} is not internal"),
        };
        let mean = 0.5 * (self.leaf_mean(left) + self.leaf_mean(right));
        let mut nodes = self.nodes.clone();
        nodes[node].kind = NodeKind::Leaf { mean };
        Tree::canonical(nodes, self.dim)
    }

    pub fn with_rule(&self, node: usize, new_rule: SplitRule) -> Tree {
        let mut out = self.clone();
        if let NodeKind::Internal { rule, .. } = &mut out.nodes[node].kind {
            *rule = new_rule;
        }
        out
    }

    fn canonical(nodes: Vec<Node>, dim: usize) -> Tree {
        let mut out = Vec::with_capacity(nodes.len());
        fn visit(nodes: &[Node], idx: usize, depth: u32, out: &mut Vec<Node>) -> usize {
            let at = out.len();
            match &nodes[idx].kind {
                NodeKind::Leaf { mean } => out.push(Node {
                    kind: NodeKind::Leaf { mean: *mean },
                    depth,
                }),
                NodeKind::Internal { rule, left, right } => {
                    out.push(Node {
                        kind: NodeKind::Leaf { mean: 0.0 },
                        depth,
                    });
                    let l = visit(nodes, *left, depth + 1, out);
                    let r = visit(nodes, *right, depth + 1, out);
                    out[at].kind = NodeKind::Internal {
                        rule: *rule,
                        left: l,
                        right: r,
                    };
                }
            }
            at
        }
        visit(&nodes, 0, 0, &mut out);
        Tree { nodes: out, dim }
    }

    /// Number of rows of `z` (row-major, `dim` columns) routed to each node.
    pub fn node_counts(&self, z: &[f64]) -> Vec<usize> {
        let mut counts = vec![0; self.nodes.len()];
        for row in z.chunks_exact(self.dim) {
            counts[self.route(row)] += 1;
        }
        counts
    }
}

/// Depth-dependent split probability `alpha (1 + depth)^(-beta)`, zero at the depth cap.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TreePrior {
    pub alpha: f64,
    pub beta: f64,
    pub max_depth: u32,
}

impl TreePrior {
    pub fn new(alpha: f64, beta: f64) -> Self {
        Self {
            alpha,
            beta,
            max_depth: MAX_DEPTH,
        }
    }

    pub fn split_probability(&self, depth: u32) -> f64 {
        if depth >= self.max_depth {
            0.0
        } else {
            self.alpha * (1.0 + depth as f64).powf(-self.beta)
        }
    }
}

/// Log prior of the tree shape: splits contribute `log p(depth)`, leaves `log(1 - p(depth))`.
/// Split-rule selection is not included.
pub fn log_tree_prior(tree: &Tree, prior: &TreePrior) -> f64 {
    tree.nodes()
        .iter()
        .map(|node| {
            let p = prior.split_probability(node.depth);
            if node.is_leaf() {
                (1.0 - p).ln()
            } else {
                p.ln()
            }
        })
        .sum()
}

/// Admissible thresholds per covariate: the distinct observed values except the
/// largest, so both sides of a split can be non-empty.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitCandidates {
    thresholds: Vec<Vec<f64>>,
    usable: Vec<usize>,
}

impl SplitCandidates {
    /// From the row-major covariate rows of the units that carry likelihood weight.
    pub fn from_rows(z: &[f64], dim: usize) -> Self {
        let mut thresholds = vec![Vec::new(); dim];
        for (j, t) in thresholds.iter_mut().enumerate() {
            let mut values: Vec<f64> = z.chunks_exact(dim).map(|row| row[j]).collect();
            values.sort_by(f64::total_cmp);
            values.dedup();
            values.pop();
            *t = values;
        }
        let usable = (0..dim).filter(|&j| !thresholds[j].is_empty()).collect();
        Self { thresholds, usable }
    }

    pub fn thresholds(&self, var: usize) -> &[f64] {
        &self.thresholds[var]
    }

    /// Covariates with at least one admissible threshold.
    pub fn usable_vars(&self) -> &[usize] {
        &self.usable
    }

    pub fn is_empty(&self) -> bool {
        self.usable.is_empty()
    }

    /// Prior probability of `rule` under uniform variable and threshold choice.
    pub fn rule_probability(&self, rule: &SplitRule) -> f64 {
        1.0 / (self.usable.len() as f64 * self.thresholds[rule.var].len() as f64)
    }

    fn draw_rule<R: Rng + ?Sized>(&self, rng: &mut R) -> SplitRule {
        let var = self.usable[rng.random_range(0..self.usable.len())];
        let t = &self.thresholds[var];
        SplitRule {
            var,
            threshold: t[rng.random_range(0..t.len())],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MoveKind {
    Grow,
    Prune,
    Change,
    Swap,
}

impl MoveKind {
    pub const ALL: [MoveKind; 4] = [MoveKind::Grow, MoveKind::Prune, MoveKind::Change, MoveKind::Swap];

    pub fn index(self) -> usize {
        match self {
            MoveKind::Grow => 0,
            MoveKind::Prune => 1,
            MoveKind::Change => 2,
            MoveKind::Swap => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MoveKind::Grow => "grow",
            MoveKind::Prune => "prune",
            MoveKind::Change => "change",
            MoveKind::Swap => "swap",
        }
    }
}

/// Move-kind probabilities for `tree`, with the mass of impossible moves
/// spread proportionally over the possible ones.
pub fn move_probabilities(tree: &Tree, candidates: &SplitCandidates) -> [f64; 4] {
    let has_rules = !candidates.is_empty();
    let possible = [
        has_rules,
        tree.n_internal() > 0,
        has_rules && tree.n_internal() > 0,
        !tree.swappable_pairs().is_empty(),
    ];
    let total: f64 = (0..4)
        .filter(|&k| possible[k])
        .map(|k| MOVE_PROBABILITIES[k])
        .sum();
    let mut probs = [0.0; 4];
    if total > 0.0 {
        for k in 0..4 {
            if possible[k] {
                probs[k] = MOVE_PROBABILITIES[k] / total;
            }
        }
    }
    probs
}

#[derive(Clone, Debug)]
pub struct Proposal {
    pub kind: MoveKind,
    pub tree: Tree,
    /// `log q(T*→T) − log q(T→T*)` with split-rule selection probabilities folded in.
    pub log_proposal_ratio: f64,
    /// `log_tree_prior(T*) − log_tree_prior(T)`.
    pub log_prior_ratio: f64,
}

/// Result of a proposal attempt. `Stay` means the drawn move could not produce a
/// valid tree (empty child, depth cap, nothing to move) and counts as a rejection.
#[derive(Clone, Debug)]
pub enum ProposalOutcome {
    Move(Proposal),
    Stay(Option<MoveKind>),
}

/// Draws a structural move for `tree`.
///
/// `z` holds the row-major covariates of the units carrying likelihood weight;
/// proposals that leave any leaf without such units are returned as `Stay`.
pub fn propose_move<R: Rng + ?Sized>(
    tree: &Tree,
    z: &[f64],
    candidates: &SplitCandidates,
    prior: &TreePrior,
    rng: &mut R,
) -> ProposalOutcome {
    let probs = move_probabilities(tree, candidates);
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut kind = None;
    for k in MoveKind::ALL {
        if probs[k.index()] == 0.0 {
            continue;
        }
        acc += probs[k.index()];
        kind = Some(k);
        if u < acc {
            break;
        }
    }
    let Some(kind) = kind else {
        return ProposalOutcome::Stay(None);
    };

    let proposal = match kind {
        MoveKind::Grow => {
            let leaves = tree.leaves();
            let leaf = leaves[rng.random_range(0..leaves.len())];
            let rule = candidates.draw_rule(rng);
            if tree.node(leaf).depth >= prior.max_depth {
                return ProposalOutcome::Stay(Some(kind));
            }
            let new_tree = tree.grow(leaf, rule);
            let forward = probs[MoveKind::Grow.index()] / leaves.len() as f64;
            let reverse = move_probabilities(&new_tree, candidates)[MoveKind::Prune.index()]
                / new_tree.prunable_nodes().len() as f64;
            Proposal {
                kind,
                log_proposal_ratio: reverse.ln() - forward.ln(),
                log_prior_ratio: log_tree_prior(&new_tree, prior) - log_tree_prior(tree, prior),
                tree: new_tree,
            }
        }
        MoveKind::Prune => {
            let nodes = tree.prunable_nodes();
            let node = nodes[rng.random_range(0..nodes.len())];
            let new_tree = tree.prune(node);
            let forward = probs[MoveKind::Prune.index()] / nodes.len() as f64;
            let reverse = move_probabilities(&new_tree, candidates)[MoveKind::Grow.index()]
                / new_tree.n_leaves() as f64;
            Proposal {
                kind,
                log_proposal_ratio: reverse.ln() - forward.ln(),
                log_prior_ratio: log_tree_prior(&new_tree, prior) - log_tree_prior(tree, prior),
                tree: new_tree,
            }
        }
        MoveKind::Change => {
            let nodes = tree.internal_nodes();
            let node = nodes[rng.random_range(0..nodes.len())];
            let rule = candidates.draw_rule(rng);
            Proposal {
                kind,
                tree: tree.with_rule(node, rule),
                log_proposal_ratio: 0.0,
                log_prior_ratio: 0.0,
            }
        }
        MoveKind::Swap => {
            let pairs = tree.swappable_pairs();
            let (parent, child) = pairs[rng.random_range(0..pairs.len())];
            let parent_rule = tree.rule(parent).expect("internal parent");
            let child_rule = tree.rule(child).expect("internal child");
            Proposal {
                kind,
                tree: tree.with_rule(parent, child_rule).with_rule(child, parent_rule),
                log_proposal_ratio: 0.0,
                log_prior_ratio: 0.0,
            }
        }
    };

    let counts = proposal.tree.node_counts(z);
    if proposal.tree.leaves().iter().any(|&l| counts[l] == 0) {
        return ProposalOutcome::Stay(Some(kind));
    }
    ProposalOutcome::Move(proposal)
}
