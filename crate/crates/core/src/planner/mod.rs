//! Monte Carlo tree search over deterministic, fully observable MDPs.
//!
//! Each simulation descends from the root by the modified UCT score
//! `Q + [P] * alpha * sqrt(N) / (1 + N_a)`, expands the first unexpanded node
//! it reaches and backs up normalized discounted returns along the traversed
//! edges. There are no rollouts: a freshly created edge starts at its
//! immediate normalized reward. Normalized rewards keep every `Q` in `[0, 1]`.

mod heatpump;
mod prior;

pub use heatpump::{HeatPumpSim, SimSettings, SimState};
pub use prior::{
    collect_prior_samples, prior_features, prior_network, train_prior, PriorConfig, PriorEpisode,
    PriorSample, PRIOR_FEATURES,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Network;

/// A deterministic decision problem the planner can search.
///
/// Actions are indices `0..n_actions()`.
pub trait Fomdp {
    type State: Clone;

    fn n_actions(&self) -> usize;

    /// Steps available below the root; the tree never goes deeper.
    fn horizon(&self) -> usize;

    /// Nonempty, ascending list of actions permitted in `s` at `depth`.
    fn allowed_actions(&self, s: &Self::State, depth: usize) -> Vec<usize>;

    /// Fills in lazily computed parts of `s` before it is expanded.
    fn prepare(&self, _s: &mut Self::State, _depth: usize) -> Result<()> {
        Ok(())
    }

    /// Successor state and normalized reward in `[0, 1]`.
    fn transition(
        &self,
        s: &Self::State,
        depth: usize,
        action: usize,
    ) -> Result<(Self::State, f64)>;

    /// Input of the prior network for a prepared state.
    fn prior_features(&self, _s: &Self::State, _depth: usize) -> Result<Vec<f64>> {
        Err(Error::Search("this problem has no prior features".into()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SearchMode {
    Vanilla,
    AlphaZero,
}

/// Where AlphaZero priors come from.
#[derive(Debug, Clone, Copy)]
pub enum PriorSource<'a> {
    /// Every edge gets `P = 1`; reproduces vanilla search exactly.
    Ones,
    /// Network output renormalized over the allowed actions.
    Network(&'a Network),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchConfig {
    pub n_simulations: usize,
    /// Tree depth limit; `None` uses the problem horizon.
    pub max_depth: Option<usize>,
    pub alpha: f64,
    pub gamma: f64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self::vanilla(500)
    }
}

impl SearchConfig {
    pub fn vanilla(n_simulations: usize) -> Self {
        Self {
            n_simulations,
            max_depth: None,
            alpha: 1.0,
            gamma: 0.97,
        }
    }

    pub fn alphazero(n_simulations: usize) -> Self {
        Self {
            alpha: 3.5,
            ..Self::vanilla(n_simulations)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_simulations == 0 {
            return Err(Error::config("n_simulations must be >= 1"));
        }
        if self.max_depth == Some(0) {
            return Err(Error::config("max_depth must be >= 1"));
        }
        if !(self.alpha > 0.0) {
            return Err(Error::config("alpha must be > 0"));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::config("gamma must lie in [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Edge {
    pub action: usize,
    pub n: u64,
    pub q: f64,
    pub prior: f64,
    pub reward: f64,
    pub child: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Node<S> {
    pub state: S,
    pub depth: usize,
    pub n: u64,
    pub edges: Vec<Edge>,
    pub expanded: bool,
    pub terminal: bool,
}

/// Arena-allocated search tree; node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SearchTree<S> {
    pub nodes: Vec<Node<S>>,
}

impl<S> SearchTree<S> {
    pub fn new(root: S) -> Self {
        Self {
            nodes: vec![Node {
                state: root,
                depth: 0,
                n: 0,
                edges: Vec::new(),
                expanded: false,
                terminal: false,
            }],
        }
    }

    pub fn root(&self) -> &Node<S> {
        &self.nodes[0]
    }

    /// Every expanded node has `N = 1 + sum of its edge visits` and every `Q`
    /// lies in `[0, 1]`.
    pub fn check_invariants(&self) -> Result<()> {
        for (i, node) in self.nodes.iter().enumerate() {
            if node.expanded {
                let sum: u64 = node.edges.iter().map(|e| e.n).sum();
                if node.n != 1 + sum {
                    return Err(Error::Search(format!(
                        "node {i}: N = {} but 1 + sum N_a = {}",
                        node.n,
                        1 + sum
                    )));
                }
            }
            if let Some(e) = node.edges.iter().find(|e| !(0.0..=1.0).contains(&e.q)) {
                return Err(Error::Search(format!(
                    "node {i} action {}: Q = {} outside [0, 1]",
                    e.action, e.q
                )));
            }
        }
        Ok(())
    }
}

/// Modified UCT score of one edge.
pub fn uct_score(q: f64, prior_factor: f64, alpha: f64, n_node: u64, n_edge: u64) -> f64 {
    q + prior_factor * alpha * (n_node as f64).sqrt() / (1.0 + n_edge as f64)
}

/// Index into `edges` of the highest-scoring edge; ties go to the lowest
/// action index.
pub fn select_edge(edges: &[Edge], n_node: u64, alpha: f64, mode: SearchMode) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, e) in edges.iter().enumerate() {
        let p = match mode {
            SearchMode::Vanilla => 1.0,
            SearchMode::AlphaZero => e.prior,
        };
        let s = uct_score(e.q, p, alpha, n_node, e.n);
        let better = match best {
            None => true,
            Some((j, bs)) => s > bs || (s == bs && e.action < edges[j].action),
        };
        if better {
            best = Some((i, s));
        }
    }
    best.map(|(i, _)| i)
}

/// Discounted returns `G_k = r_k + gamma * G_{k+1}` for a reward path.
pub fn discounted_returns(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut g = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for k in (0..rewards.len()).rev() {
        acc = rewards[k] + gamma * acc;
        g[k] = acc;
    }
    g
}

/// Backs up one traversal. `path` lists `(node, edge index)` from the root;
/// `leaf` is the node the traversal ended in.
pub fn backpropagate<S>(
    tree: &mut SearchTree<S>,
    path: &[(usize, usize)],
    leaf: usize,
    gamma: f64,
) {
    let rewards: Vec<f64> = path
        .iter()
        .map(|&(n, e)| tree.nodes[n].edges[e].reward)
        .collect();
    let g = discounted_returns(&rewards, gamma);
    let len = path.len();
    for (k, &(n, ei)) in path.iter().enumerate().rev() {
        let e = &mut tree.nodes[n].edges[ei];
        let target = (g[k] / (len - k) as f64).clamp(0.0, 1.0);
        e.q = (e.n as f64 * e.q + target) / (e.n as f64 + 1.0);
        e.n += 1;
    }
    for &(n, _) in path {
        tree.nodes[n].n += 1;
    }
    tree.nodes[leaf].n += 1;
}

fn priors_for<P: Fomdp>(
    problem: &P,
    state: &P::State,
    depth: usize,
    allowed: &[usize],
    source: PriorSource<'_>,
    mode: SearchMode,
) -> Result<Vec<f64>> {
    match (mode, source) {
        (SearchMode::Vanilla, _) | (_, PriorSource::Ones) => Ok(vec![1.0; allowed.len()]),
        (SearchMode::AlphaZero, PriorSource::Network(net)) => {
            let p = net.predict(&problem.prior_features(state, depth)?)?;
            if p.len() != problem.n_actions() {
                return Err(Error::ShapeMismatch {
                    expected: problem.n_actions(),
                    got: p.len(),
                });
            }
            let sel: Vec<f64> = allowed.iter().map(|&a| p[a]).collect();
            let total: f64 = sel.iter().sum();
            if total > 0.0 && total.is_finite() {
                Ok(sel.iter().map(|v| v / total).collect())
            } else {
                Ok(vec![1.0 / allowed.len() as f64; allowed.len()])
            }
        }
    }
}

/// Creates one child per allowed action. Nodes at the depth limit become
/// terminal instead.
pub fn expand<P: Fomdp>(
    problem: &P,
    tree: &mut SearchTree<P::State>,
    node: usize,
    max_depth: usize,
    source: PriorSource<'_>,
    mode: SearchMode,
) -> Result<()> {
    let depth = tree.nodes[node].depth;
    if depth >= max_depth {
        tree.nodes[node].terminal = true;
        return Ok(());
    }
    problem.prepare(&mut tree.nodes[node].state, depth)?;
    let state = tree.nodes[node].state.clone();
    let allowed = problem.allowed_actions(&state, depth);
    if allowed.is_empty() {
        return Err(Error::Search(format!("no allowed action at depth {depth}")));
    }
    let priors = priors_for(problem, &state, depth, &allowed, source, mode)?;
    let mut edges = Vec::with_capacity(allowed.len());
    for (&a, &p) in allowed.iter().zip(&priors) {
        let (child, r) = problem.transition(&state, depth, a)?;
        let r = r.clamp(0.0, 1.0);
        let id = tree.nodes.len();
        tree.nodes.push(Node {
            state: child,
            depth: depth + 1,
            n: 0,
            edges: Vec::new(),
            expanded: false,
            terminal: false,
        });
        edges.push(Edge {
            action: a,
            n: 0,
            q: r,
            prior: p,
            reward: r,
            child: id,
        });
    }
    let n = &mut tree.nodes[node];
    n.edges = edges;
    n.expanded = true;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SearchStats {
    pub simulations: usize,
    pub nodes: usize,
    pub max_depth_reached: usize,
    /// `Q` of each root action; `None` for pruned actions.
    pub root_q: Vec<Option<f64>>,
    /// Best root `Q`, an estimate of the normalized discounted return.
    pub best_q: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutcome<S> {
    pub action: usize,
    /// Root visit share per action (zeros for pruned actions).
    pub visits: Vec<f64>,
    pub stats: SearchStats,
    pub tree: SearchTree<S>,
}

/// Runs `n_simulations` select-expand-backup iterations from `root`.
///
/// The root is expanded before the first simulation, so `N(root)` ends at
/// `1 + n_simulations`. The returned action is the most visited root action,
/// ties going to higher `Q` and then to the lower index.
pub fn search<P: Fomdp>(
    problem: &P,
    root: P::State,
    config: &SearchConfig,
    mode: SearchMode,
    source: PriorSource<'_>,
) -> Result<SearchOutcome<P::State>> {
    config.validate()?;
    let max_depth = config
        .max_depth
        .unwrap_or(usize::MAX)
        .min(problem.horizon());
    if max_depth == 0 {
        return Err(Error::Search("problem horizon is zero".into()));
    }
    let mut tree = SearchTree::new(root);
    expand(problem, &mut tree, 0, max_depth, source, mode)?;
    tree.nodes[0].n = 1;
    let mut path = Vec::with_capacity(max_depth);
    for _ in 0..config.n_simulations {
        path.clear();
        let mut node = 0;
        loop {
            let cur = &tree.nodes[node];
            if cur.terminal {
                break;
            }
            if !cur.expanded {
                expand(problem, &mut tree, node, max_depth, source, mode)?;
                break;
            }
            let ei = select_edge(&cur.edges, cur.n, config.alpha, mode)
                .expect("expanded nodes have edges");
            path.push((node, ei));
            node = cur.edges[ei].child;
        }
        backpropagate(&mut tree, &path, node, config.gamma);
    }

    let n_act = problem.n_actions();
    let root = tree.root();
    let total: u64 = root.edges.iter().map(|e| e.n).sum();
    let mut visits = vec![0.0; n_act];
    let mut root_q = vec![None; n_act];
    for e in &root.edges {
        visits[e.action] = e.n as f64 / total.max(1) as f64;
        root_q[e.action] = Some(e.q);
    }
    let chosen = root
        .edges
        .iter()
        .max_by(|a, b| {
            a.n.cmp(&b.n)
                .then(a.q.total_cmp(&b.q))
                .then(b.action.cmp(&a.action))
        })
        .expect("root has at least one edge");
    let stats = SearchStats {
        simulations: config.n_simulations,
        nodes: tree.nodes.len(),
        max_depth_reached: tree
            .nodes
            .iter()
            .filter(|n| n.n > 0)
            .map(|n| n.depth)
            .max()
            .unwrap_or(0),
        root_q,
        best_q: root.edges.iter().map(|e| e.q).fold(0.0, f64::max),
    };
    Ok(SearchOutcome {
        action: chosen.action,
        visits,
        stats,
        tree,
    })
}

/// JSON-friendly view of a tree: one entry per visited node.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TreeDump<V: Serialize> {
    pub nodes: Vec<NodeDump<V>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NodeDump<V: Serialize> {
    pub id: usize,
    pub depth: usize,
    pub n: u64,
    pub terminal: bool,
    pub state: V,
    pub edges: Vec<Edge>,
}

impl<S> SearchTree<S> {
    /// Dumps nodes visited at least once, mapping each state through `view`.
    pub fn dump<V: Serialize>(&self, view: impl Fn(&S) -> V) -> TreeDump<V> {
        TreeDump {
            nodes: self
                .nodes
                .iter()
                .enumerate()
                .filter(|(_, n)| n.n > 0)
                .map(|(id, n)| NodeDump {
                    id,
                    depth: n.depth,
                    n: n.n,
                    terminal: n.terminal,
                    state: view(&n.state),
                    edges: n.edges.clone(),
                })
                .collect(),
        }
    }
}
