//! Monte-Carlo Tree Search over complete pruning configurations.
//!
//! Every node holds a full ratio vector. Children are perturbed copies of
//! their parent: each ratio moves by `U(-δ, δ)` with `δ = 0.1 · 0.9^depth`
//! (depth of the parent) and is clipped to `[0.1, 1.0]`. A simulation
//! descends by UCB through fully expanded nodes, expands one child,
//! evaluates it (invalid configurations score 0 without being evaluated)
//! and adds the reward to every edge on the path.

use std::collections::HashMap;
use std::time::Instant;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::CalibrationSet;
use crate::error::{Error, Result};
use crate::importance::{config_to_masks, ImportanceTable, PruningConfig};
use crate::model::TargetModel;
use crate::rng::{self, Rng};

pub const RATIO_MIN: f64 = 0.1;
pub const RATIO_MAX: f64 = 1.0;
pub const INITIAL_DELTA: f64 = 0.1;
pub const DELTA_DECAY: f64 = 0.9;
/// Slack admitted by the mean-ratio constraint.
pub const VALID_TOLERANCE: f64 = 1e-12;

/// Target mean pruning ratio `b`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSpec {
    pub b: f64,
}

impl ConstraintSpec {
    pub fn new(b: f64) -> Result<Self> {
        if !b.is_finite() || b < 0.0 {
            return Err(Error::InvalidArgument(format!("b must be finite and >= 0, got {b}")));
        }
        Ok(Self { b })
    }

    /// Converts a neuron budget `B_total` into a mean ratio. With equal
    /// layer widths, `Σ θ_l d_l <= B_total` is exactly `mean(θ) <= B_total / Σ d_l`;
    /// with unequal widths this is the uniform-allocation equivalent.
    pub fn from_total_budget(total: f64, widths: &[usize]) -> Result<Self> {
        let neurons: usize = widths.iter().sum();
        if neurons == 0 {
            return Err(Error::Empty("layer widths"));
        }
        Self::new(total / neurons as f64)
    }

    /// Searches need `b >= 0.1` because every ratio is clipped to at least 0.1.
    pub fn ensure_feasible(&self) -> Result<()> {
        if self.b < RATIO_MIN {
            return Err(Error::InfeasibleBudget(self.b));
        }
        Ok(())
    }
}

/// `mean(θ) <= b` up to [`VALID_TOLERANCE`].
pub fn check_valid(config: &PruningConfig, constraint: &ConstraintSpec) -> Result<bool> {
    if config.is_empty() {
        return Err(Error::Empty("pruning config"));
    }
    Ok(config.mean() <= constraint.b + VALID_TOLERANCE)
}

/// Perturbation half-width at tree depth `depth`.
pub fn perturbation_magnitude(depth: usize) -> f64 {
    INITIAL_DELTA * DELTA_DECAY.powi(depth as i32)
}

pub fn clip_ratio(r: f64) -> f64 {
    r.clamp(RATIO_MIN, RATIO_MAX)
}

/// Maps a configuration to a reward in `[0, 1]`.
pub trait RewardModel {
    fn num_layers(&self) -> usize;
    fn reward(&self, config: &PruningConfig) -> Result<f64>;
}

/// Validation accuracy of the model pruned by `config`.
pub fn evaluate_config(
    config: &PruningConfig,
    model: &TargetModel,
    importance: &ImportanceTable,
    eval_set: &CalibrationSet,
) -> Result<f64> {
    if config.len() != model.num_layers() {
        return Err(Error::LengthMismatch {
            what: "config layers",
            expected: model.num_layers(),
            actual: config.len(),
        });
    }
    let masks = config_to_masks(config, importance, model.widths())?;
    Ok(model.evaluate(&masks, eval_set)?.accuracy)
}

/// [`RewardModel`] backed by a target model, an importance table and an
/// evaluation set.
#[derive(Clone, Copy, Debug)]
pub struct PrunedAccuracy<'a> {
    pub model: &'a TargetModel,
    pub importance: &'a ImportanceTable,
    pub eval_set: &'a CalibrationSet,
}

impl RewardModel for PrunedAccuracy<'_> {
    fn num_layers(&self) -> usize {
        self.model.num_layers()
    }

    fn reward(&self, config: &PruningConfig) -> Result<f64> {
        evaluate_config(config, self.model, self.importance, self.eval_set)
    }
}

/// Reward given by a closure; handy for synthetic landscapes.
pub struct FnReward<F> {
    layers: usize,
    f: F,
}

impl<F: Fn(&PruningConfig) -> f64> FnReward<F> {
    pub fn new(layers: usize, f: F) -> Self {
        Self { layers, f }
    }
}

impl<F: Fn(&PruningConfig) -> f64> RewardModel for FnReward<F> {
    fn num_layers(&self) -> usize {
        self.layers
    }

    fn reward(&self, config: &PruningConfig) -> Result<f64> {
        Ok((self.f)(config))
    }
}

/// Memoizing wrapper that counts unique evaluations.
pub struct MemoEvaluator<'r, R: ?Sized> {
    reward: &'r R,
    memo: HashMap<Vec<u64>, f64>,
    unique: usize,
    hits: usize,
}

impl<'r, R: RewardModel + ?Sized> MemoEvaluator<'r, R> {
    pub fn new(reward: &'r R) -> Self {
        Self {
            reward,
            memo: HashMap::new(),
            unique: 0,
            hits: 0,
        }
    }

    pub fn evaluate(&mut self, config: &PruningConfig) -> Result<f64> {
        let key = config.key();
        if let Some(&r) = self.memo.get(&key) {
            self.hits += 1;
            return Ok(r);
        }
        let r = self.reward.reward(config)?;
        self.memo.insert(key, r);
        self.unique += 1;
        Ok(r)
    }

    pub fn unique_evaluations(&self) -> usize {
        self.unique
    }

    pub fn memo_hits(&self) -> usize {
        self.hits
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchBudget {
    pub simulations: usize,
    pub eval_cap: usize,
    pub max_children: usize,
    pub exploration: f64,
    pub seed: u64,
}

impl Default for SearchBudget {
    fn default() -> Self {
        Self {
            simulations: 300,
            eval_cap: 200,
            max_children: 5,
            exploration: std::f64::consts::SQRT_2,
            seed: 0,
        }
    }
}

impl SearchBudget {
    pub fn validate(&self) -> Result<()> {
        if self.simulations == 0 || self.eval_cap == 0 || self.max_children == 0 {
            return Err(Error::InvalidArgument(
                "simulations, eval_cap and max_children must be >= 1".into(),
            ));
        }
        if !self.exploration.is_finite() || self.exploration < 0.0 {
            return Err(Error::InvalidArgument("exploration constant must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchNode {
    pub config: PruningConfig,
    pub depth: usize,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    /// `N(s)`: backpropagations through this node, its own evaluation included.
    pub visits: u64,
    /// `N(parent, s)`.
    pub edge_visits: u64,
    /// `W(parent, s)`.
    pub edge_reward: f64,
    pub reward: Option<f64>,
    pub valid: bool,
}

impl SearchNode {
    /// Mean edge reward `Q = W / N`, zero before the first visit.
    pub fn q(&self) -> f64 {
        if self.edge_visits == 0 {
            0.0
        } else {
            self.edge_reward / self.edge_visits as f64
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchTree {
    nodes: Vec<SearchNode>,
}

impl SearchTree {
    pub fn new(root: PruningConfig) -> Self {
        Self {
            nodes: vec![SearchNode {
                config: root,
                depth: 0,
                parent: None,
                children: Vec::new(),
                visits: 0,
                edge_visits: 0,
                edge_reward: 0.0,
                reward: None,
                valid: false,
            }],
        }
    }

    pub const ROOT: usize = 0;

    pub fn node(&self, id: usize) -> &SearchNode {
        &self.nodes[id]
    }

    pub fn nodes(&self) -> &[SearchNode] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Position (within `children`) of the child maximizing
    /// `Q + c sqrt(ln N(s) / N(s,a))`. Unvisited children come first in
    /// index order; ties go to the lowest position.
    pub fn ucb_select(&self, node: usize, c: f64) -> Result<usize> {
        let n = &self.nodes[node];
        if n.children.is_empty() {
            return Err(Error::InvalidArgument(format!("node {node} has no children")));
        }
        let ln_n = (n.visits.max(1) as f64).ln();
        let mut best = 0;
        let mut best_score = f64::NEG_INFINITY;
        for (pos, &child) in n.children.iter().enumerate() {
            let ch = &self.nodes[child];
            if ch.edge_visits == 0 {
                return Ok(pos);
            }
            let score = ch.q() + c * (ln_n / ch.edge_visits as f64).sqrt();
            if score > best_score {
                best_score = score;
                best = pos;
            }
        }
        Ok(best)
    }

    /// Appends a perturbed copy of `node` as a new child with zero stats.
    pub fn expand(&mut self, node: usize, max_children: usize, rng: &mut Rng) -> Result<usize> {
        let parent = &self.nodes[node];
        if parent.children.len() >= max_children {
            return Err(Error::InvalidArgument(format!("node {node} is fully expanded")));
        }
        let delta = perturbation_magnitude(parent.depth);
        let ratios = parent
            .config
            .0
            .iter()
            .map(|&r| clip_ratio(r + rng.random_range(-delta..=delta)))
            .collect();
        let child = SearchNode {
            config: PruningConfig(ratios),
            depth: parent.depth + 1,
            parent: Some(node),
            children: Vec::new(),
            visits: 0,
            edge_visits: 0,
            edge_reward: 0.0,
            reward: None,
            valid: false,
        };
        self.nodes.push(child);
        let id = self.nodes.len() - 1;
        self.nodes[node].children.push(id);
        Ok(id)
    }

    /// Adds one visit and `reward` to every edge on `path` (root first) and
    /// one visit to every node on it.
    pub fn backpropagate(&mut self, path: &[usize], reward: f64) {
        for (i, &id) in path.iter().enumerate() {
            let n = &mut self.nodes[id];
            n.visits += 1;
            if i > 0 {
                n.edge_visits += 1;
                n.edge_reward += reward;
            }
        }
    }

    fn record(&mut self, id: usize, reward: f64, valid: bool) {
        let n = &mut self.nodes[id];
        n.reward = Some(reward);
        n.valid = valid;
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRecord {
    pub config: PruningConfig,
    pub reward: f64,
    pub valid: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub best_config: PruningConfig,
    pub best_reward: f64,
    pub evaluations: Vec<EvaluationRecord>,
    pub unique_evaluations: usize,
    pub simulations_run: usize,
    pub wall_clock_seconds: f64,
}

impl SearchResult {
    /// One evaluated configuration per line.
    pub fn trace_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for e in &self.evaluations {
            out.push_str(&serde_json::to_string(e)?);
            out.push('\n');
        }
        Ok(out)
    }
}

/// Runs the search and also returns the final tree.
pub fn search<R: RewardModel + ?Sized>(
    reward: &R,
    constraint: &ConstraintSpec,
    budget: &SearchBudget,
) -> Result<(SearchResult, SearchTree)> {
    budget.validate()?;
    constraint.ensure_feasible()?;
    let start = Instant::now();
    let layers = reward.num_layers();
    if layers == 0 {
        return Err(Error::Empty("layers"));
    }
    let mut rng = rng::from_seed(budget.seed);
    let mut eval = MemoEvaluator::new(reward);
    let mut tree = SearchTree::new(PruningConfig::uniform(clip_ratio(constraint.b), layers));
    let mut evaluations = Vec::new();

    let root_cfg = tree.node(SearchTree::ROOT).config.clone();
    let root_valid = check_valid(&root_cfg, constraint)?;
    let root_reward = if root_valid { eval.evaluate(&root_cfg)? } else { 0.0 };
    tree.record(SearchTree::ROOT, root_reward, root_valid);
    tree.backpropagate(&[SearchTree::ROOT], root_reward);
    evaluations.push(EvaluationRecord {
        config: root_cfg,
        reward: root_reward,
        valid: root_valid,
    });

    let mut simulations_run = 0;
    for _ in 0..budget.simulations {
        if eval.unique_evaluations() >= budget.eval_cap {
            break;
        }
        let mut path = vec![SearchTree::ROOT];
        let mut node = SearchTree::ROOT;
        while tree.node(node).children.len() >= budget.max_children {
            let pos = tree.ucb_select(node, budget.exploration)?;
            node = tree.node(node).children[pos];
            path.push(node);
        }
        let child = tree.expand(node, budget.max_children, &mut rng)?;
        path.push(child);
        let cfg = tree.node(child).config.clone();
        let valid = check_valid(&cfg, constraint)?;
        let r = if valid { eval.evaluate(&cfg)? } else { 0.0 };
        tree.record(child, r, valid);
        tree.backpropagate(&path, r);
        evaluations.push(EvaluationRecord {
            config: cfg,
            reward: r,
            valid,
        });
        simulations_run += 1;
    }

    let mut best: Option<&EvaluationRecord> = None;
    for e in evaluations.iter().filter(|e| e.valid) {
        if best.is_none_or(|b| e.reward > b.reward) {
            best = Some(e);
        }
    }
    let best = best.ok_or(Error::NoValidConfig(constraint.b))?;
    let result = SearchResult {
        best_config: best.config.clone(),
        best_reward: best.reward,
        unique_evaluations: eval.unique_evaluations(),
        simulations_run,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
        evaluations,
    };
    Ok((result, tree))
}

/// Searches ratios for `model` pruned by `importance`, scored on `eval_set`.
pub fn run_search(
    model: &TargetModel,
    importance: &ImportanceTable,
    eval_set: &CalibrationSet,
    constraint: &ConstraintSpec,
    budget: &SearchBudget,
) -> Result<SearchResult> {
    let reward = PrunedAccuracy {
        model,
        importance,
        eval_set,
    };
    Ok(search(&reward, constraint, budget)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_children(w: [(f64, u64); 2], root_visits: u64) -> SearchTree {
        let mut tree = SearchTree::new(PruningConfig(vec![0.5]));
        let mut r = rng::from_seed(0);
        for _ in 0..2 {
            tree.expand(0, 5, &mut r).unwrap();
        }
        for (i, (wsum, n)) in w.iter().enumerate() {
            let c = &mut tree.nodes[i + 1];
            c.edge_reward = *wsum;
            c.edge_visits = *n;
        }
        tree.nodes[0].visits = root_visits;
        tree
    }

    #[test]
    fn ucb_prefers_higher_q_at_equal_bonus() {
        let tree = two_children([(0.8, 1), (0.4, 1)], 2);
        assert_eq!(tree.ucb_select(0, std::f64::consts::SQRT_2).unwrap(), 0);
        let bonus = std::f64::consts::SQRT_2 * (2f64.ln()).sqrt();
        assert!((bonus - 1.1774).abs() < 1e-4);
    }

    #[test]
    fn ucb_picks_unvisited_first() {
        let tree = two_children([(0.9, 3), (0.0, 0)], 4);
        assert_eq!(tree.ucb_select(0, 1.0).unwrap(), 1);
    }

    #[test]
    fn ucb_greedy_without_exploration() {
        let tree = two_children([(0.3, 1), (1.8, 3)], 10);
        assert_eq!(tree.ucb_select(0, 0.0).unwrap(), 1);
        let tree = two_children([(0.3, 1), (0.3, 1)], 10);
        assert_eq!(tree.ucb_select(0, 0.0).unwrap(), 0);
    }

    #[test]
    fn ucb_without_children_is_an_error() {
        let tree = SearchTree::new(PruningConfig(vec![0.5]));
        assert!(tree.ucb_select(0, 1.0).is_err());
    }

    #[test]
    fn delta_schedule() {
        assert_eq!(perturbation_magnitude(0), 0.1);
        assert!((perturbation_magnitude(2) - 0.081).abs() < 1e-15);
        for d in 0..20 {
            assert!(perturbation_magnitude(d + 1) < perturbation_magnitude(d));
        }
    }

    #[test]
    fn expansion_clips_and_bounds() {
        assert_eq!(clip_ratio(0.12 - 0.05), 0.1);
        assert_eq!(clip_ratio(1.3), 1.0);
        let mut tree = SearchTree::new(PruningConfig(vec![0.12, 0.5, 0.98]));
        let mut r = rng::from_seed(3);
        for _ in 0..5 {
            let c = tree.expand(0, 5, &mut r).unwrap();
            let node = tree.node(c);
            assert_eq!(node.depth, 1);
            for (a, b) in node.config.0.iter().zip(&tree.node(0).config.0) {
                assert!((RATIO_MIN..=RATIO_MAX).contains(a));
                assert!((a - b).abs() <= 0.1 + 1e-15);
            }
        }
        assert!(tree.expand(0, 5, &mut r).is_err());
    }

    #[test]
    fn validity_rule() {
        let c = ConstraintSpec::new(0.3).unwrap();
        assert!(check_valid(&PruningConfig(vec![0.3, 0.3, 0.3]), &c).unwrap());
        assert!(!check_valid(&PruningConfig(vec![0.4, 0.3, 0.3]), &c).unwrap());
        assert!(check_valid(&PruningConfig(vec![]), &c).is_err());
    }

    #[test]
    fn backprop_accumulates_mean() {
        let mut tree = SearchTree::new(PruningConfig(vec![0.5]));
        let mut r = rng::from_seed(0);
        let c = tree.expand(0, 5, &mut r).unwrap();
        tree.backpropagate(&[0, c], 0.7);
        assert!((tree.node(c).q() - 0.7).abs() < 1e-15);
        tree.backpropagate(&[0, c], 0.5);
        tree.nodes[c].edge_reward = 0.0;
        tree.nodes[c].edge_visits = 0;
        tree.backpropagate(&[0, c], 0.5);
        tree.backpropagate(&[0, c], 0.9);
        assert!((tree.node(c).q() - 0.7).abs() < 1e-15);
        for _ in 0..4 {
            tree.backpropagate(&[0, c], 0.0);
        }
        assert!(tree.node(c).q() < 0.7 / 2.0);
    }

    #[test]
    fn single_simulation_budget() {
        let reward = FnReward::new(3, |c: &PruningConfig| 1.0 - c.mean());
        let budget = SearchBudget {
            simulations: 1,
            ..SearchBudget::default()
        };
        let (res, tree) = search(&reward, &ConstraintSpec::new(0.4).unwrap(), &budget).unwrap();
        assert_eq!(res.simulations_run, 1);
        assert_eq!(tree.len(), 2);
        assert_eq!(res.evaluations.len(), 2);
        let child = &res.evaluations[1];
        if child.valid && child.reward > res.evaluations[0].reward {
            assert_eq!(res.best_config, child.config);
        } else {
            assert_eq!(res.best_config, PruningConfig::uniform(0.4, 3));
        }
    }

    #[test]
    fn infeasible_budget() {
        let reward = FnReward::new(2, |_: &PruningConfig| 1.0);
        let err = search(&reward, &ConstraintSpec::new(0.05).unwrap(), &SearchBudget::default()).unwrap_err();
        assert!(matches!(err, Error::InfeasibleBudget(_)));
    }

    #[test]
    fn memo_serves_repeats() {
        let reward = FnReward::new(2, |c: &PruningConfig| c.mean());
        let mut m = MemoEvaluator::new(&reward);
        let c = PruningConfig(vec![0.2, 0.4]);
        let a = m.evaluate(&c).unwrap();
        let b = m.evaluate(&c).unwrap();
        assert_eq!(a, b);
        assert_eq!((m.unique_evaluations(), m.memo_hits()), (1, 1));
    }

    #[test]
    fn eval_cap_stops_search() {
        let reward = FnReward::new(4, |c: &PruningConfig| 1.0 - c.mean());
        let budget = SearchBudget {
            simulations: 300,
            eval_cap: 10,
            ..SearchBudget::default()
        };
        let res = run_budget(&reward, 0.6, &budget);
        assert_eq!(res.unique_evaluations, 10);
        assert!(res.simulations_run < 300);
    }

    fn run_budget<R: RewardModel>(r: &R, b: f64, budget: &SearchBudget) -> SearchResult {
        search(r, &ConstraintSpec::new(b).unwrap(), budget).unwrap().0
    }

    #[test]
    fn budget_mapping_from_total() {
        let c = ConstraintSpec::from_total_budget(96.0, &[64, 64, 64]).unwrap();
        assert_eq!(c.b, 0.5);
    }
}
