//! Heuristic gradient-guided hybrid search over (state, mode, parameter).
//!
//! Best-first tree search whose vertices are system states reached by holding
//! one mode and parameter for a dwell window. Vertices are ordered by
//! cost-to-come plus a balanced heuristic that mixes a recursively propagated
//! local-gradient estimate with a global lower bound. Expansion seeds each
//! mode with a primitive parameter set and adds the iterates of a local
//! parameter refinement (see [`crate::paramopt`]).

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap, HashSet};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Coalition, HybridPlan, Mode, ModeId, ModeRef, PlanStep, SystemState};
use crate::paramopt::{self, SolverConfig};

/// A single-task hybrid optimization problem for a fixed coalition.
///
/// The global heuristic must be a non-negative lower bound that vanishes on
/// the goal set; the local heuristic is anchored at a state and should be
/// smooth inside the search neighborhood of that anchor.
pub trait HybridProblem: Sync {
    fn modes(&self) -> &[ModeRef];
    fn coalition(&self) -> &Coalition;
    fn is_goal(&self, state: &SystemState) -> bool;
    fn is_safe(&self, state: &SystemState) -> bool;

    /// Domain gate on top of [`Mode::feasible_coalition`].
    fn mode_available(&self, _mode: &dyn Mode, _state: &SystemState) -> bool {
        true
    }

    fn global_h(&self, state: &SystemState) -> f64;
    fn local_h(&self, anchor: &SystemState, state: &SystemState) -> f64;

    /// Low-dimensional projection used for deduplication cells and for
    /// neighborhood distances.
    fn features(&self, state: &SystemState) -> Vec<f64>;

    fn primitives(&self, mode: &dyn Mode, state: &SystemState) -> Vec<Vec<f64>>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Lambda {
    Fixed(f64),
    /// Per-node weight from [`lambda_bound`] using the configured constants.
    Adaptive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchConfig {
    pub lambda: Lambda,
    pub dedup_radius: f64,
    pub dwell: u32,
    pub neighborhood: f64,
    pub epsilon: f64,
    pub grad_err_bound: f64,
    pub max_edge_len: f64,
    pub max_step_cost: f64,
    pub node_cap: usize,
    pub refine_iters: usize,
    pub penalty_weight: f64,
    pub solver: SolverConfig,
    #[serde(skip)]
    pub record_expansions: bool,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            lambda: Lambda::Fixed(0.5),
            dedup_radius: 0.1,
            dwell: 5,
            neighborhood: 0.3,
            epsilon: 0.5,
            grad_err_bound: 0.0,
            max_edge_len: 1.0,
            max_step_cost: 0.0,
            node_cap: 50_000,
            refine_iters: 10,
            penalty_weight: 100.0,
            solver: SolverConfig::default(),
            record_expansions: false,
        }
    }
}

impl SearchConfig {
    fn lambda_for(&self, h_g: f64) -> f64 {
        match self.lambda {
            Lambda::Fixed(l) => l,
            Lambda::Adaptive => lambda_bound(h_g, self.grad_err_bound, self.max_edge_len, self.max_step_cost, self.epsilon),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EdgeLabel {
    pub mode: ModeId,
    pub param: Vec<f64>,
    pub dwell: u32,
}

#[derive(Debug, Clone)]
pub struct SearchNode {
    pub state: SystemState,
    pub cost_to_come: f64,
    pub parent: Option<usize>,
    pub edge: Option<EdgeLabel>,
    pub h_b: f64,
    pub h_g: f64,
    pub goal: bool,
}

impl SearchNode {
    pub fn root(state: SystemState, h_g: f64, goal: bool) -> Self {
        Self { state, cost_to_come: 0.0, parent: None, edge: None, h_b: h_g, h_g, goal }
    }

    pub fn priority(&self) -> f64 {
        self.cost_to_come + self.h_b
    }
}

/// Per-search counters reported to the harness.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SearchStats {
    pub expanded: usize,
    pub generated: usize,
    pub filtered: usize,
    pub dedup_rejected: usize,
    pub coarse_deltas: usize,
    /// Largest parent-child feature distance seen.
    pub max_edge_len: f64,
    /// Largest single-tick cost seen.
    pub max_step_cost: f64,
    #[serde(skip)]
    pub wall_time: Duration,
}

#[derive(Debug, Clone)]
pub struct ExpandedRecord {
    pub state: SystemState,
    pub cost_to_come: f64,
    pub h_b: f64,
    pub h_g: f64,
}

#[derive(Debug, Clone)]
pub struct SearchResult {
    pub plan: HybridPlan,
    pub cost: f64,
    pub final_state: SystemState,
    pub stats: SearchStats,
    pub expanded: Vec<ExpandedRecord>,
}

#[derive(Debug, Clone, Error)]
pub enum SearchError {
    #[error("start state is outside the safe set")]
    UnsafeStart,
    #[error("search exhausted after {} expansions (nearest global heuristic {nearest_h:.3})", stats.expanded)]
    SearchExhausted { stats: SearchStats, nearest_plan: HybridPlan, nearest_h: f64 },
    #[error("consecutive path states {index} and {} are {distance:.4} apart (limit {limit})", index + 1)]
    PathStepTooLarge { index: usize, distance: f64, limit: f64 },
}

/// Weighted mix of the propagated local estimate and the global bound.
pub fn balanced_heuristic(parent_h_b: f64, delta_local: f64, h_g: f64, lambda: f64) -> f64 {
    lambda * (parent_h_b + delta_local) + (1.0 - lambda) * h_g
}

/// Largest per-node weight that keeps the balanced heuristic within
/// `1 + epsilon` of the exact cost-to-go.
pub fn lambda_bound(h_g: f64, grad_err: f64, max_edge: f64, max_step_cost: f64, epsilon: f64) -> f64 {
    if h_g <= 0.0 {
        return 0.0;
    }
    let slack = if grad_err * max_edge == 0.0 { 0.0 } else { grad_err * max_edge / epsilon };
    h_g / (slack + max_step_cost + h_g)
}

pub(crate) fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Accumulated change of the local heuristic along a path, each term
/// anchored at the later state of the pair.
pub fn local_delta<F, D>(path: &[SystemState], local_h: F, features: D, neighborhood: f64) -> Result<f64, SearchError>
where
    F: Fn(&SystemState, &SystemState) -> f64,
    D: Fn(&SystemState) -> Vec<f64>,
{
    let mut total = 0.0;
    for (i, w) in path.windows(2).enumerate() {
        let d = distance(&features(&w[0]), &features(&w[1]));
        if d > neighborhood {
            return Err(SearchError::PathStepTooLarge { index: i, distance: d, limit: neighborhood });
        }
        total += local_h(&w[1], &w[1]) - local_h(&w[1], &w[0]);
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy)]
struct OpenEntry {
    key: f64,
    seq: u64,
    node: usize,
}

impl PartialEq for OpenEntry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for OpenEntry {}
impl PartialOrd for OpenEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for OpenEntry {
    // reversed: BinaryHeap is a max-heap
    fn cmp(&self, other: &Self) -> Ordering {
        other.key.total_cmp(&self.key).then_with(|| other.seq.cmp(&self.seq))
    }
}

/// Priority queue on `cost_to_come + h_b`, FIFO among equal keys, with lazy
/// removal of evicted entries.
#[derive(Debug, Default)]
pub struct OpenSet {
    heap: BinaryHeap<OpenEntry>,
    removed: HashSet<usize>,
    live: usize,
    seq: u64,
}

impl OpenSet {
    pub fn push(&mut self, node: usize, key: f64) {
        self.heap.push(OpenEntry { key, seq: self.seq, node });
        self.seq += 1;
        self.live += 1;
    }

    pub fn remove(&mut self, node: usize) {
        if self.removed.insert(node) {
            self.live -= 1;
        }
    }

    pub fn len(&self) -> usize {
        self.live
    }

    pub fn is_empty(&self) -> bool {
        self.live == 0
    }

    /// Pops the node with the lowest key; `None` signals search failure.
    pub fn select(&mut self) -> Option<usize> {
        while let Some(e) = self.heap.pop() {
            if self.removed.remove(&e.node) {
                continue;
            }
            self.live -= 1;
            return Some(e.node);
        }
        None
    }
}

pub fn select_node(open: &mut OpenSet) -> Option<usize> {
    open.select()
}

pub type Cell = Vec<i64>;

pub fn cell_of(features: &[f64], radius: f64) -> Cell {
    features.iter().map(|v| (v / radius).round() as i64).collect()
}

/// Rounded-cell index: at most one open node per cell and the set of cells
/// that have been fully explored.
#[derive(Debug, Default)]
pub struct DedupIndex {
    occupants: HashMap<Cell, (usize, f64)>,
    closed: HashSet<Cell>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Admission {
    Rejected,
    Admitted { evicted: Option<usize> },
}

impl DedupIndex {
    pub fn close(&mut self, cell: Cell) {
        self.closed.insert(cell);
    }

    pub fn is_closed(&self, cell: &Cell) -> bool {
        self.closed.contains(cell)
    }

    /// Admits `node` into `cell` iff the cell is not closed and no occupant is
    /// strictly cheaper; an admitted node replaces the occupant.
    pub fn admit(&mut self, cell: Cell, node: usize, cost: f64) -> Admission {
        if self.closed.contains(&cell) {
            return Admission::Rejected;
        }
        match self.occupants.get(&cell) {
            Some(&(_, existing)) if cost > existing => Admission::Rejected,
            Some(&(old, _)) => {
                self.occupants.insert(cell, (node, cost));
                Admission::Admitted { evicted: Some(old) }
            }
            None => {
                self.occupants.insert(cell, (node, cost));
                Admission::Admitted { evicted: None }
            }
        }
    }
}

pub fn dedup_admit(candidate_cell: Cell, candidate: usize, cost: f64, index: &mut DedupIndex) -> bool {
    matches!(index.admit(candidate_cell, candidate, cost), Admission::Admitted { .. })
}

/// A child produced by holding one mode/parameter from a parent.
#[derive(Debug, Clone)]
pub struct Child {
    pub path: Vec<SystemState>,
    pub cost_to_come: f64,
    pub edge: EdgeLabel,
    pub goal: bool,
    pub max_step_cost: f64,
}

impl Child {
    pub fn state(&self) -> &SystemState {
        self.path.last().expect("non-empty path")
    }
}

/// Holds `param` for up to `dwell` ticks. Returns `None` when a state leaves
/// the safe set; stops early at the first goal tick.
pub fn rollout(
    problem: &dyn HybridProblem,
    start: &SystemState,
    start_cost: f64,
    mode: &dyn Mode,
    param: &[f64],
    dwell: u32,
) -> Option<Child> {
    let coalition = problem.coalition();
    let mut path = Vec::with_capacity(dwell as usize + 1);
    path.push(start.clone());
    let mut cost = start_cost;
    let mut max_step = 0.0_f64;
    let mut goal = false;
    let mut ticks = 0;
    for _ in 0..dwell {
        let s = path.last().unwrap();
        let c = mode.step_cost(s, coalition, param);
        max_step = max_step.max(c);
        cost += c;
        let next = s.advanced(mode.step(s, coalition, param));
        if next.values.iter().any(|v| !v.is_finite()) || !problem.is_safe(&next) {
            return None;
        }
        ticks += 1;
        goal = problem.is_goal(&next);
        path.push(next);
        if goal {
            break;
        }
    }
    Some(Child {
        path,
        cost_to_come: cost,
        edge: EdgeLabel { mode: mode.id(), param: param.to_vec(), dwell: ticks },
        goal,
        max_step_cost: max_step,
    })
}

/// Expands `node` under `mode` for every parameter; unsafe children are
/// dropped and counted.
pub fn expand_node(
    problem: &dyn HybridProblem,
    node: &SearchNode,
    mode: &dyn Mode,
    params: &[Vec<f64>],
    dwell: u32,
) -> (Vec<Child>, usize) {
    let mut filtered = 0;
    let mut out = Vec::with_capacity(params.len());
    for p in params {
        if !mode.bounds().contains(p) {
            filtered += 1;
            continue;
        }
        match rollout(problem, &node.state, node.cost_to_come, mode, p, dwell) {
            Some(c) => out.push(c),
            None => filtered += 1,
        }
    }
    (out, filtered)
}

/// Heuristic values a child would receive under `node`.
pub(crate) fn child_heuristics(
    problem: &dyn HybridProblem,
    node: &SearchNode,
    child: &Child,
    config: &SearchConfig,
    stats: &mut SearchStats,
) -> (f64, f64) {
    let h_g = problem.global_h(child.state());
    let feat = |s: &SystemState| problem.features(s);
    let delta = match local_delta(&child.path, |a, s| problem.local_h(a, s), feat, config.neighborhood) {
        Ok(d) => d,
        Err(_) => {
            stats.coarse_deltas += 1;
            let end = child.state();
            problem.local_h(end, end) - problem.local_h(end, &node.state)
        }
    };
    let lambda = config.lambda_for(h_g);
    (h_g, balanced_heuristic(node.h_b, delta, h_g, lambda))
}

fn trace_plan(nodes: &[SearchNode], mut idx: usize, coalition: &Coalition) -> HybridPlan {
    let mut steps = Vec::new();
    while let Some(parent) = nodes[idx].parent {
        let e = nodes[idx].edge.as_ref().expect("non-root node has an edge");
        steps.push(PlanStep { mode: e.mode, coalition: coalition.clone(), param: e.param.clone(), dwell: e.dwell });
        idx = parent;
    }
    steps.reverse();
    HybridPlan { steps }
}

/// Finds a mode sequence and per-window parameters that drive the problem's
/// start state into its goal set.
pub fn hgg_hs(problem: &dyn HybridProblem, start: &SystemState, config: &SearchConfig) -> Result<SearchResult, SearchError> {
    let t0 = Instant::now();
    if !problem.is_safe(start) {
        return Err(SearchError::UnsafeStart);
    }
    let mut stats = SearchStats::default();
    let root_h = problem.global_h(start);
    let mut nodes = vec![SearchNode::root(start.clone(), root_h, problem.is_goal(start))];
    let mut open = OpenSet::default();
    let mut index = DedupIndex::default();
    let mut expanded_log = Vec::new();
    open.push(0, nodes[0].priority());
    index.admit(cell_of(&problem.features(start), config.dedup_radius), 0, 0.0);

    let mut nearest = 0usize;
    while let Some(idx) = select_node(&mut open) {
        if nodes[idx].goal {
            stats.wall_time = t0.elapsed();
            let plan = trace_plan(&nodes, idx, problem.coalition());
            return Ok(SearchResult {
                plan,
                cost: nodes[idx].cost_to_come,
                final_state: nodes[idx].state.clone(),
                stats,
                expanded: expanded_log,
            });
        }
        if stats.expanded >= config.node_cap {
            break;
        }
        stats.expanded += 1;
        if nodes[idx].h_g < nodes[nearest].h_g {
            nearest = idx;
        }
        if config.record_expansions {
            let n = &nodes[idx];
            expanded_log.push(ExpandedRecord {
                state: n.state.clone(),
                cost_to_come: n.cost_to_come,
                h_b: n.h_b,
                h_g: n.h_g,
            });
        }

        let node = nodes[idx].clone();
        let node_feat = problem.features(&node.state);
        let mut candidates: Vec<Child> = Vec::new();
        for mode in problem.modes() {
            if !mode.feasible_coalition(problem.coalition()) || !problem.mode_available(mode.as_ref(), &node.state) {
                continue;
            }
            let prims = problem.primitives(mode.as_ref(), &node.state);
            let expansion = paramopt::primitive_expand(problem, &node, mode.as_ref(), &prims, config, &mut stats);
            let (children, best) = match expansion {
                Ok(v) => v,
                Err(_) => continue,
            };
            if mode.refinable() && config.refine_iters > 0 {
                let seed = children[best].edge.param.clone();
                let trace = paramopt::refine_parameters(problem, &node, mode.as_ref(), &seed, config);
                for it in &trace.iterates {
                    match rollout(problem, &node.state, node.cost_to_come, mode.as_ref(), &it.param, config.dwell) {
                        Some(c) => candidates.push(c),
                        None => stats.filtered += 1,
                    }
                }
            }
            candidates.extend(children);
        }

        for child in candidates {
            stats.generated += 1;
            stats.max_step_cost = stats.max_step_cost.max(child.max_step_cost);
            let feat = problem.features(child.state());
            stats.max_edge_len = stats.max_edge_len.max(distance(&feat, &node_feat));
            let (h_g, h_b) = child_heuristics(problem, &node, &child, config, &mut stats);
            let new_idx = nodes.len();
            match index.admit(cell_of(&feat, config.dedup_radius), new_idx, child.cost_to_come) {
                Admission::Rejected => {
                    stats.dedup_rejected += 1;
                    continue;
                }
                Admission::Admitted { evicted } => {
                    if let Some(old) = evicted {
                        open.remove(old);
                    }
                }
            }
            let state = child.path.last().unwrap().clone();
            nodes.push(SearchNode {
                state,
                cost_to_come: child.cost_to_come,
                parent: Some(idx),
                edge: Some(child.edge),
                h_b,
                h_g,
                goal: child.goal,
            });
            open.push(new_idx, nodes[new_idx].priority());
        }
        index.close(cell_of(&node_feat, config.dedup_radius));
    }

    stats.wall_time = t0.elapsed();
    Err(SearchError::SearchExhausted {
        nearest_plan: trace_plan(&nodes, nearest, problem.coalition()),
        nearest_h: nodes[nearest].h_g,
        stats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{plan_cost, ModeRef};
    use crate::toy::{ChainProblem, GridInstance};

    // shortest path on the integer chain with moves ±1 (cost 1) and ±2 (cost 1.5)
    fn chain_dijkstra(lo: i64, hi: i64, start: i64, goal: i64) -> Option<f64> {
        let n = (hi - lo + 1) as usize;
        let mut dist = vec![f64::INFINITY; n];
        let mut done = vec![false; n];
        dist[(start - lo) as usize] = 0.0;
        loop {
            let u = (0..n).filter(|&i| !done[i] && dist[i].is_finite()).min_by(|&a, &b| dist[a].total_cmp(&dist[b]))?;
            if u as i64 + lo == goal {
                return Some(dist[u]);
            }
            done[u] = true;
            for (d, c) in [(1i64, 1.0), (-1, 1.0), (2, 1.5), (-2, 1.5)] {
                let v = u as i64 + d;
                if v >= 0 && v < n as i64 && dist[u] + c < dist[v as usize] {
                    dist[v as usize] = dist[u] + c;
                }
            }
        }
    }

    fn st(v: &[f64]) -> SystemState {
        SystemState::new(v.to_vec()).unwrap()
    }

    #[test]
    fn balanced_examples() {
        assert_eq!(balanced_heuristic(10.0, -2.0, 6.0, 0.0), 6.0);
        assert_eq!(balanced_heuristic(10.0, -2.0, 6.0, 1.0), 8.0);
        assert_eq!(balanced_heuristic(10.0, -2.0, 6.0, 0.5), 7.0);
    }

    #[test]
    fn lambda_bound_examples() {
        assert_eq!(lambda_bound(3.0, 0.0, 1.0, 0.0, 0.5), 1.0);
        assert_eq!(lambda_bound(0.0, 1.0, 1.0, 1.0, 0.5), 0.0);
        assert!((lambda_bound(10.0, 1.0, 1.0, 0.0, 1.0) - 10.0 / 11.0).abs() < 1e-15);
    }

    #[test]
    fn local_delta_examples() {
        let goal = 5.0;
        let h = |_a: &SystemState, s: &SystemState| (goal - s.values[0]).abs();
        let f = |s: &SystemState| s.values.clone();
        assert_eq!(local_delta(&[st(&[1.0])], h, f, 0.3).unwrap(), 0.0);
        let path = [st(&[1.0]), st(&[1.2]), st(&[1.4])];
        let d = local_delta(&path, h, f, 0.3).unwrap();
        assert!((d - ((goal - 1.4) - (goal - 1.0))).abs() < 1e-12);
        let big = [st(&[1.0]), st(&[2.0])];
        assert!(matches!(local_delta(&big, h, f, 0.3), Err(SearchError::PathStepTooLarge { index: 0, .. })));
    }

    #[test]
    fn local_delta_closed_loop_vanishes() {
        // anchor-free Euclidean distance to a fixed point, square loop
        let h = |_a: &SystemState, s: &SystemState| ((s.values[0] - 3.0).powi(2) + (s.values[1] + 1.0).powi(2)).sqrt();
        let f = |s: &SystemState| s.values.clone();
        let loop_path = [st(&[0.0, 0.0]), st(&[0.2, 0.0]), st(&[0.2, 0.2]), st(&[0.0, 0.2]), st(&[0.0, 0.0])];
        assert!(local_delta(&loop_path, h, f, 0.3).unwrap().abs() < 1e-12);
    }

    #[test]
    fn open_set_order() {
        let mut open = OpenSet::default();
        open.push(0, 3.0 + 4.0);
        open.push(1, 5.0 + 1.0);
        assert_eq!(select_node(&mut open), Some(1));

        let mut open = OpenSet::default();
        open.push(7, 2.0);
        open.push(8, 2.0);
        assert_eq!(select_node(&mut open), Some(7));
        assert_eq!(select_node(&mut open), Some(8));
        assert_eq!(select_node(&mut open), None);

        let mut open = OpenSet::default();
        open.push(3, 1.0);
        assert_eq!(select_node(&mut open), Some(3));
    }

    #[test]
    fn open_set_skips_evicted() {
        let mut open = OpenSet::default();
        open.push(0, 1.0);
        open.push(1, 2.0);
        open.remove(0);
        assert_eq!(open.len(), 1);
        assert_eq!(select_node(&mut open), Some(1));
        assert!(open.is_empty());
    }

    #[test]
    fn dedup_examples() {
        let mut idx = DedupIndex::default();
        let cell = cell_of(&[1.02, 2.0], 0.1);
        assert!(dedup_admit(cell.clone(), 0, 5.0, &mut idx));
        assert_eq!(idx.admit(cell_of(&[1.0, 2.01], 0.1), 1, 4.0), Admission::Admitted { evicted: Some(0) });
        assert!(!dedup_admit(cell.clone(), 2, 6.0, &mut idx));
        idx.close(cell.clone());
        assert!(!dedup_admit(cell, 3, 0.0, &mut idx));
    }

    #[test]
    fn expand_identity_and_move() {
        let p = ChainProblem::new(0.0, 10.0, -100.0, 100.0);
        let node = SearchNode::root(st(&[2.0]), 0.0, false);
        let stay = p.modes()[2].clone();
        let (kids, filtered) = expand_node(&p, &node, stay.as_ref(), &[vec![0.0]], 4);
        assert_eq!(filtered, 0);
        assert_eq!(kids[0].state().values, vec![2.0]);
        assert!((kids[0].cost_to_come - 4.0 * 0.5).abs() < 1e-12);

        let right = p.modes()[0].clone();
        let (kids, _) = expand_node(&p, &node, right.as_ref(), &[vec![1.0]], 1);
        assert_eq!(kids[0].state().values, vec![3.0]);
    }

    #[test]
    fn expand_filters_wall() {
        let p = ChainProblem::new(0.0, 10.0, -100.0, 2.5);
        let node = SearchNode::root(st(&[2.0]), 0.0, false);
        let right = p.modes()[0].clone();
        let (kids, filtered) = expand_node(&p, &node, right.as_ref(), &[vec![0.4], vec![1.0]], 1);
        assert_eq!(kids.len(), 1);
        assert_eq!(filtered, 1);
    }

    #[test]
    fn start_in_goal_returns_empty_plan() {
        let p = ChainProblem::new(0.0, 0.0, -10.0, 10.0);
        let r = hgg_hs(&p, &st(&[0.0]), &SearchConfig::default()).unwrap();
        assert!(r.plan.is_empty());
        assert_eq!(r.cost, 0.0);
    }

    #[test]
    fn chain_search_matches_dijkstra_at_lambda_zero() {
        let p = ChainProblem::new(0.0, 7.0, -3.0, 12.0);
        let cfg = ChainProblem::exact_config(0.0);
        let r = hgg_hs(&p, &st(&[0.0]), &cfg).unwrap();
        let oracle = chain_dijkstra(-3, 12, 0, 7).unwrap();
        assert!((r.cost - oracle).abs() < 1e-9, "{} vs {}", r.cost, oracle);
        let modes: Vec<ModeRef> = p.modes().to_vec();
        let re = plan_cost(&r.plan, &st(&[0.0]), &modes).unwrap();
        assert!((re - r.cost).abs() < 1e-9);
        assert!(p.is_goal(&r.final_state));
    }

    #[test]
    fn grid_search_is_deterministic() {
        let inst = GridInstance::random(11, 12, 12, 0.2);
        let cfg = GridInstance::config(Lambda::Fixed(0.5));
        let a = hgg_hs(&inst, &inst.start_state(), &cfg).unwrap();
        let b = hgg_hs(&inst, &inst.start_state(), &cfg).unwrap();
        assert_eq!(a.plan, b.plan);
        assert_eq!(a.cost.to_bits(), b.cost.to_bits());
    }

    #[test]
    fn grid_open_nodes_never_share_cells() {
        // admission replaces occupants, so the open set has one node per cell
        let inst = GridInstance::random(5, 10, 10, 0.15);
        let mut cfg = GridInstance::config(Lambda::Fixed(0.0));
        cfg.record_expansions = true;
        let r = hgg_hs(&inst, &inst.start_state(), &cfg).unwrap();
        let mut seen = HashSet::new();
        for e in &r.expanded {
            assert!(seen.insert(cell_of(&e.state.values, cfg.dedup_radius)), "cell expanded twice");
        }
    }
}
