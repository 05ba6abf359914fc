//! Small discrete domains with known structure, used to exercise the search
//! and coalition layers against exhaustive oracles.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::coalition::{ActualCost, CoalitionProblem};
use crate::model::{AgentId, Coalition, HybridPlan, Mode, ModeId, ModeRef, ParamBounds, SystemState, TaskId};
use crate::search::{HybridProblem, Lambda, SearchConfig};

/// Moves one coordinate by `step * param` per tick at cost `|param| + 0.1`.
pub struct ChainMove {
    id: ModeId,
    dim: usize,
    step: f64,
    bounds: ParamBounds,
}

impl ChainMove {
    pub fn new(id: ModeId, dim: usize, step: f64) -> Self {
        Self { id, dim, step, bounds: ParamBounds::uniform(1, -1.0, 1.0) }
    }
}

impl Mode for ChainMove {
    fn id(&self) -> ModeId {
        self.id
    }
    fn name(&self) -> &str {
        "chain-move"
    }
    fn bounds(&self) -> &ParamBounds {
        &self.bounds
    }
    fn feasible_coalition(&self, c: &Coalition) -> bool {
        !c.is_empty()
    }
    fn step(&self, state: &SystemState, _c: &Coalition, param: &[f64]) -> Vec<f64> {
        let mut v = state.values.clone();
        v[self.dim] += self.step * param[0];
        v
    }
    fn step_cost(&self, _s: &SystemState, _c: &Coalition, param: &[f64]) -> f64 {
        param[0].abs() + 0.1
    }
}

/// Identity dynamics with a constant per-tick cost.
pub struct ConstantCost {
    id: ModeId,
    cost: f64,
    bounds: ParamBounds,
}

impl ConstantCost {
    pub fn new(id: ModeId, cost: f64) -> Self {
        Self { id, cost, bounds: ParamBounds::uniform(1, -1.0, 1.0) }
    }
}

impl Mode for ConstantCost {
    fn id(&self) -> ModeId {
        self.id
    }
    fn name(&self) -> &str {
        "constant"
    }
    fn bounds(&self) -> &ParamBounds {
        &self.bounds
    }
    fn feasible_coalition(&self, c: &Coalition) -> bool {
        !c.is_empty()
    }
    fn step(&self, state: &SystemState, _c: &Coalition, _p: &[f64]) -> Vec<f64> {
        state.values.clone()
    }
    fn step_cost(&self, _s: &SystemState, _c: &Coalition, _p: &[f64]) -> f64 {
        self.cost
    }
}

/// Lattice move: shifts each coordinate by `scale * round(param_i)` at a
/// fixed per-tick cost. Not refinable; parameters are discrete choices.
pub struct LatticeMove {
    id: ModeId,
    name: &'static str,
    scale: f64,
    cost: f64,
    bounds: ParamBounds,
    primitives: Vec<Vec<f64>>,
}

impl LatticeMove {
    pub fn new(id: ModeId, name: &'static str, dims: usize, scale: f64, cost: f64, primitives: Vec<Vec<f64>>) -> Self {
        Self { id, name, scale, cost, bounds: ParamBounds::uniform(dims, -1.0, 1.0), primitives }
    }

    pub fn primitives(&self) -> &[Vec<f64>] {
        &self.primitives
    }
}

impl Mode for LatticeMove {
    fn id(&self) -> ModeId {
        self.id
    }
    fn name(&self) -> &str {
        self.name
    }
    fn bounds(&self) -> &ParamBounds {
        &self.bounds
    }
    fn feasible_coalition(&self, c: &Coalition) -> bool {
        !c.is_empty()
    }
    fn step(&self, state: &SystemState, _c: &Coalition, param: &[f64]) -> Vec<f64> {
        state.values.iter().zip(param).map(|(v, p)| v + self.scale * p.round()).collect()
    }
    fn step_cost(&self, _s: &SystemState, _c: &Coalition, _p: &[f64]) -> f64 {
        self.cost
    }
    fn refinable(&self) -> bool {
        false
    }
}

fn lattice_primitives(modes: &[ModeRef], mode: &dyn Mode) -> Vec<Vec<f64>> {
    // the trait object has no downcast; primitives are fixed per mode id
    let _ = modes;
    match (mode.bounds().dim(), mode.id()) {
        (1, 1) | (1, 2) => vec![vec![-1.0], vec![1.0]],
        (1, _) => vec![vec![0.0]],
        (2, 1) | (2, 3) => vec![vec![1.0, 0.0], vec![-1.0, 0.0], vec![0.0, 1.0], vec![0.0, -1.0]],
        (2, 2) => vec![vec![1.0, 1.0], vec![1.0, -1.0], vec![-1.0, 1.0], vec![-1.0, -1.0]],
        _ => Vec::new(),
    }
}

/// One-dimensional chain on the integer lattice `[lo, hi]`.
///
/// Modes: walk (±1 per tick, cost 1), run (±2 per tick, cost 1.5) and stay
/// (cost 0.5). The global heuristic `0.75 |goal - x|` is consistent.
pub struct ChainProblem {
    pub start: f64,
    pub goal: f64,
    pub lo: f64,
    pub hi: f64,
    modes: Vec<ModeRef>,
    coalition: Coalition,
}

impl ChainProblem {
    pub fn new(start: f64, goal: f64, lo: f64, hi: f64) -> Self {
        let modes: Vec<ModeRef> = vec![
            Arc::new(LatticeMove::new(1, "walk", 1, 1.0, 1.0, vec![vec![-1.0], vec![1.0]])),
            Arc::new(LatticeMove::new(2, "run", 1, 2.0, 1.5, vec![vec![-1.0], vec![1.0]])),
            Arc::new(LatticeMove::new(3, "stay", 1, 0.0, 0.5, vec![vec![0.0]])),
        ];
        Self { start, goal, lo, hi, modes, coalition: Coalition::new([0]) }
    }

    pub fn exact_config(lambda: f64) -> SearchConfig {
        SearchConfig {
            lambda: Lambda::Fixed(lambda),
            dedup_radius: 0.5,
            dwell: 1,
            neighborhood: 10.0,
            node_cap: 100_000,
            refine_iters: 0,
            ..SearchConfig::default()
        }
    }
}

impl HybridProblem for ChainProblem {
    fn modes(&self) -> &[ModeRef] {
        &self.modes
    }
    fn coalition(&self) -> &Coalition {
        &self.coalition
    }
    fn is_goal(&self, s: &SystemState) -> bool {
        (s.values[0] - self.goal).abs() < 1e-9
    }
    fn is_safe(&self, s: &SystemState) -> bool {
        s.values[0] >= self.lo && s.values[0] <= self.hi
    }
    fn global_h(&self, s: &SystemState) -> f64 {
        0.75 * (self.goal - s.values[0]).abs()
    }
    fn local_h(&self, _a: &SystemState, s: &SystemState) -> f64 {
        (self.goal - s.values[0]).abs()
    }
    fn features(&self, s: &SystemState) -> Vec<f64> {
        s.values.clone()
    }
    fn primitives(&self, mode: &dyn Mode, _s: &SystemState) -> Vec<Vec<f64>> {
        lattice_primitives(&self.modes, mode)
    }
}

/// Random 4/8-connected grid world with at most a few hundred cells.
///
/// Modes: walk (4-neighbour, cost 1), diagonal (cost 1.5) and dash (two
/// cells straight, may hop a wall, cost 1.8). The global heuristic is
/// `0.9 * chebyshev`, consistent for this move set.
pub struct GridInstance {
    pub width: i64,
    pub height: i64,
    pub blocked: Vec<bool>,
    pub start: (i64, i64),
    pub goal: (i64, i64),
    modes: Vec<ModeRef>,
    coalition: Coalition,
}

pub const GRID_WALK_COST: f64 = 1.0;
pub const GRID_DIAG_COST: f64 = 1.5;
pub const GRID_DASH_COST: f64 = 1.8;

impl GridInstance {
    pub fn new(width: i64, height: i64, blocked: Vec<bool>, start: (i64, i64), goal: (i64, i64)) -> Self {
        let modes: Vec<ModeRef> = vec![
            Arc::new(LatticeMove::new(1, "walk", 2, 1.0, GRID_WALK_COST, Vec::new())),
            Arc::new(LatticeMove::new(2, "diagonal", 2, 1.0, GRID_DIAG_COST, Vec::new())),
            Arc::new(LatticeMove::new(3, "dash", 2, 2.0, GRID_DASH_COST, Vec::new())),
        ];
        Self { width, height, blocked, start, goal, modes, coalition: Coalition::new([0]) }
    }

    /// Random instance; start and goal are distinct free cells joined by a
    /// walk-only path.
    pub fn random(seed: u64, width: i64, height: i64, density: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        loop {
            let blocked: Vec<bool> = (0..width * height).map(|_| rng.gen_bool(density)).collect();
            let free: Vec<(i64, i64)> =
                (0..width * height).filter(|&i| !blocked[i as usize]).map(|i| (i % width, i / width)).collect();
            if free.len() < 2 {
                continue;
            }
            let start = free[rng.gen_range(0..free.len())];
            let goal = free[rng.gen_range(0..free.len())];
            if start == goal {
                continue;
            }
            let inst = Self::new(width, height, blocked, start, goal);
            if inst.walk_connected() {
                return inst;
            }
        }
    }

    fn walk_connected(&self) -> bool {
        let mut seen = vec![false; (self.width * self.height) as usize];
        let mut stack = vec![self.start];
        seen[self.index(self.start)] = true;
        while let Some((x, y)) = stack.pop() {
            if (x, y) == self.goal {
                return true;
            }
            for (dx, dy) in [(1, 0), (-1, 0), (0, 1), (0, -1)] {
                let n = (x + dx, y + dy);
                if self.free(n) && !seen[self.index(n)] {
                    seen[self.index(n)] = true;
                    stack.push(n);
                }
            }
        }
        false
    }

    pub fn index(&self, c: (i64, i64)) -> usize {
        (c.1 * self.width + c.0) as usize
    }

    pub fn free(&self, c: (i64, i64)) -> bool {
        c.0 >= 0 && c.1 >= 0 && c.0 < self.width && c.1 < self.height && !self.blocked[self.index(c)]
    }

    pub fn start_state(&self) -> SystemState {
        SystemState::new(vec![self.start.0 as f64, self.start.1 as f64]).unwrap()
    }

    pub fn state_at(&self, c: (i64, i64)) -> SystemState {
        SystemState::new(vec![c.0 as f64, c.1 as f64]).unwrap()
    }

    pub fn config(lambda: Lambda) -> SearchConfig {
        SearchConfig {
            lambda,
            dedup_radius: 0.5,
            dwell: 1,
            neighborhood: 10.0,
            node_cap: 100_000,
            refine_iters: 0,
            ..SearchConfig::default()
        }
    }

    fn cell(s: &SystemState) -> (i64, i64) {
        (s.values[0].round() as i64, s.values[1].round() as i64)
    }
}

impl HybridProblem for GridInstance {
    fn modes(&self) -> &[ModeRef] {
        &self.modes
    }
    fn coalition(&self) -> &Coalition {
        &self.coalition
    }
    fn is_goal(&self, s: &SystemState) -> bool {
        Self::cell(s) == self.goal
    }
    fn is_safe(&self, s: &SystemState) -> bool {
        self.free(Self::cell(s))
    }
    fn global_h(&self, s: &SystemState) -> f64 {
        let (x, y) = Self::cell(s);
        0.9 * ((x - self.goal.0).abs().max((y - self.goal.1).abs())) as f64
    }
    fn local_h(&self, _a: &SystemState, s: &SystemState) -> f64 {
        let dx = s.values[0] - self.goal.0 as f64;
        let dy = s.values[1] - self.goal.1 as f64;
        0.9 * (dx * dx + dy * dy).sqrt()
    }
    fn features(&self, s: &SystemState) -> Vec<f64> {
        s.values.clone()
    }
    fn primitives(&self, mode: &dyn Mode, _s: &SystemState) -> Vec<Vec<f64>> {
        lattice_primitives(&self.modes, mode)
    }
}

/// Single refinable mode whose window cost is `(param - target)^2` and whose
/// state never moves.
pub struct QuadraticProblem {
    modes: Vec<ModeRef>,
    coalition: Coalition,
}

struct QuadraticMode {
    target: f64,
    dwell: u32,
    bounds: ParamBounds,
}

impl Mode for QuadraticMode {
    fn id(&self) -> ModeId {
        1
    }
    fn name(&self) -> &str {
        "quadratic"
    }
    fn bounds(&self) -> &ParamBounds {
        &self.bounds
    }
    fn feasible_coalition(&self, _c: &Coalition) -> bool {
        true
    }
    fn step(&self, s: &SystemState, _c: &Coalition, _p: &[f64]) -> Vec<f64> {
        s.values.clone()
    }
    fn step_cost(&self, _s: &SystemState, _c: &Coalition, p: &[f64]) -> f64 {
        (p[0] - self.target).powi(2) / self.dwell as f64
    }
}

impl QuadraticProblem {
    pub fn new(target: f64, bounds: ParamBounds) -> Self {
        let dwell = QuadraticProblem::DWELL;
        Self { modes: vec![Arc::new(QuadraticMode { target, dwell, bounds })], coalition: Coalition::new([0]) }
    }

    const DWELL: u32 = 5;

    pub fn mode(&self) -> &dyn Mode {
        self.modes[0].as_ref()
    }

    pub fn config(&self) -> SearchConfig {
        SearchConfig { dwell: Self::DWELL, ..SearchConfig::default() }
    }
}

impl HybridProblem for QuadraticProblem {
    fn modes(&self) -> &[ModeRef] {
        &self.modes
    }
    fn coalition(&self) -> &Coalition {
        &self.coalition
    }
    fn is_goal(&self, _s: &SystemState) -> bool {
        false
    }
    fn is_safe(&self, _s: &SystemState) -> bool {
        true
    }
    fn global_h(&self, _s: &SystemState) -> f64 {
        0.0
    }
    fn local_h(&self, _a: &SystemState, _s: &SystemState) -> f64 {
        0.0
    }
    fn features(&self, s: &SystemState) -> Vec<f64> {
        s.values.clone()
    }
    fn primitives(&self, _m: &dyn Mode, _s: &SystemState) -> Vec<Vec<f64>> {
        vec![vec![0.0]]
    }
}

/// Agents and tasks on a line. A coalition's actual cost is the time for
/// its farthest member to arrive plus the task's workload shared among the
/// members; the estimate is the summed distance plus the workload.
#[derive(Debug, Clone)]
pub struct LineWorld {
    pub agents: Vec<f64>,
    pub tasks: Vec<f64>,
    pub workload: Vec<f64>,
    pub speed: f64,
}

impl LineWorld {
    pub fn random(seed: u64, n_agents: usize, n_tasks: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            agents: (0..n_agents).map(|_| rng.gen_range(0.0..10.0)).collect(),
            tasks: (0..n_tasks).map(|_| rng.gen_range(0.0..10.0)).collect(),
            workload: (0..n_tasks).map(|_| rng.gen_range(1.0..8.0)).collect(),
            speed: 1.0,
        }
    }

    pub fn cost(&self, task: TaskId, coalition: &Coalition) -> f64 {
        if coalition.is_empty() {
            return f64::INFINITY;
        }
        let arrive = coalition.iter().map(|a| (self.agents[a] - self.tasks[task]).abs()).fold(0.0, f64::max) / self.speed;
        arrive + self.workload[task] / coalition.len() as f64
    }
}

impl CoalitionProblem for LineWorld {
    fn agents(&self) -> Vec<AgentId> {
        (0..self.agents.len()).collect()
    }
    fn tasks(&self) -> Vec<TaskId> {
        (0..self.tasks.len()).collect()
    }
    fn agent_task_distance(&self, agent: AgentId, task: TaskId) -> f64 {
        (self.agents[agent] - self.tasks[task]).abs()
    }
    fn estimate(&self, task: TaskId, coalition: &Coalition) -> f64 {
        coalition.iter().map(|a| (self.agents[a] - self.tasks[task]).abs()).sum::<f64>() + self.workload[task]
    }
    fn actual(&self, task: TaskId, coalition: &Coalition) -> ActualCost {
        ActualCost { cost: self.cost(task, coalition), plan: Some(HybridPlan::default()) }
    }
}
