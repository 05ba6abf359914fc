//! Switch-based coalition formation over a cost oracle backed by the
//! hybrid search layer.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{cho_objective, validate_assignment, AgentId, Assignment, Coalition, HybridPlan, TaskId};

/// Result of an actual-cost query. `plan` is `None` when no feasible plan
/// was found, in which case `cost` is infinite.
#[derive(Debug, Clone, PartialEq)]
pub struct ActualCost {
    pub cost: f64,
    pub plan: Option<HybridPlan>,
}

/// What the coalition layer needs from a scenario at a fixed start state.
pub trait CoalitionProblem: Sync {
    fn agents(&self) -> Vec<AgentId>;
    fn tasks(&self) -> Vec<TaskId>;
    /// Used for round-robin seeding of the greedy initial assignment.
    fn agent_task_distance(&self, agent: AgentId, task: TaskId) -> f64;
    fn capable(&self, _agent: AgentId, _task: TaskId) -> bool {
        true
    }
    /// Cheap heuristic cost, in the same units as `actual`.
    fn estimate(&self, task: TaskId, coalition: &Coalition) -> f64;
    fn actual(&self, task: TaskId, coalition: &Coalition) -> ActualCost;
    /// Start state used to key memoized actual costs.
    fn state_key(&self) -> Vec<f64> {
        Vec::new()
    }
}

#[derive(Debug, Error)]
pub enum CoalitionError {
    #[error("infeasible scenario: {0}")]
    InfeasibleScenario(String),
    #[error("no cost recorded for task {task} with coalition {coalition}")]
    MissingCost { task: TaskId, coalition: Coalition },
    #[error("invalid switch of agent {agent} to task {task}: {reason}")]
    InvalidSwitch { agent: AgentId, task: TaskId, reason: &'static str },
    #[error("k = {k} outside 1..={m}")]
    RoundOutOfRange { k: usize, m: usize },
    #[error("switch cap of {cap} exceeded")]
    IterationCapExceeded { cap: usize, best: Box<Formation> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostKind {
    Estimated,
    Actual,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostEntry {
    pub cost: f64,
    pub kind: CostKind,
}

/// Costs of candidate coalitions, keyed by task and member set.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CostTable {
    entries: BTreeMap<(TaskId, Coalition), CostEntry>,
}

impl CostTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records an estimate unless an actual value is already known.
    pub fn record_estimate(&mut self, task: TaskId, coalition: &Coalition, cost: f64) {
        self.entries
            .entry((task, coalition.clone()))
            .or_insert(CostEntry { cost, kind: CostKind::Estimated });
    }

    pub fn record_actual(&mut self, task: TaskId, coalition: &Coalition, cost: f64) {
        self.entries.insert((task, coalition.clone()), CostEntry { cost, kind: CostKind::Actual });
    }

    pub fn get(&self, task: TaskId, coalition: &Coalition) -> Option<CostEntry> {
        self.entries.get(&(task, coalition.clone())).copied()
    }

    pub fn cost(&self, task: TaskId, coalition: &Coalition) -> Result<f64, CoalitionError> {
        self.get(task, coalition)
            .map(|e| e.cost)
            .ok_or_else(|| CoalitionError::MissingCost { task, coalition: coalition.clone() })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&(TaskId, Coalition), &CostEntry)> {
        self.entries.iter()
    }
}

type OracleKey = (TaskId, Vec<AgentId>, Vec<i64>);

/// Memoizing wrapper around a [`CoalitionProblem`]; safe to query from
/// several threads at once.
pub struct CostOracle<'a> {
    problem: &'a dyn CoalitionProblem,
    state_key: Vec<i64>,
    cache: Mutex<HashMap<OracleKey, ActualCost>>,
    calls: AtomicUsize,
}

impl<'a> CostOracle<'a> {
    pub fn new(problem: &'a dyn CoalitionProblem) -> Self {
        let state_key = problem.state_key().iter().map(|v| (v * 1e6).round() as i64).collect();
        Self { problem, state_key, cache: Mutex::new(HashMap::new()), calls: AtomicUsize::new(0) }
    }

    pub fn problem(&self) -> &dyn CoalitionProblem {
        self.problem
    }

    pub fn estimate(&self, task: TaskId, coalition: &Coalition) -> f64 {
        self.problem.estimate(task, coalition)
    }

    pub fn actual(&self, task: TaskId, coalition: &Coalition) -> ActualCost {
        let key = (task, coalition.ids(), self.state_key.clone());
        if let Some(hit) = self.cache.lock().unwrap().get(&key) {
            return hit.clone();
        }
        // computed outside the lock; identical keys give identical values
        let value = self.problem.actual(task, coalition);
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.cache.lock().unwrap().insert(key, value.clone());
        value
    }

    /// Number of distinct actual-cost computations performed.
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitPolicy {
    Random,
    #[default]
    Greedy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CoalitionConfig {
    pub policy: InitPolicy,
    pub seed: u64,
    /// Overrides the default switch cap of `25 * N * M`.
    pub max_switches: Option<usize>,
}

impl Default for CoalitionConfig {
    fn default() -> Self {
        Self { policy: InitPolicy::Greedy, seed: 0, max_switches: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Formation {
    pub assignment: Assignment,
    pub plans: BTreeMap<TaskId, HybridPlan>,
    pub costs: BTreeMap<TaskId, f64>,
    pub table: CostTable,
    pub switches: usize,
    pub restarts: usize,
    pub oracle_calls: usize,
}

impl Formation {
    pub fn objective(&self) -> f64 {
        balanced(&self.costs.values().copied().collect::<Vec<_>>())
    }
}

fn check_sizes(problem: &dyn CoalitionProblem) -> Result<(Vec<AgentId>, Vec<TaskId>), CoalitionError> {
    let agents = problem.agents();
    let tasks = problem.tasks();
    if tasks.is_empty() || agents.len() < tasks.len() {
        return Err(CoalitionError::InfeasibleScenario(format!(
            "{} agents cannot staff {} tasks",
            agents.len(),
            tasks.len()
        )));
    }
    for &t in &tasks {
        if !agents.iter().any(|&a| problem.capable(a, t)) {
            return Err(CoalitionError::InfeasibleScenario(format!("no agent can perform task {t}")));
        }
    }
    Ok((agents, tasks))
}

// Marginal estimate of adding an agent; completing an infeasible coalition
// is preferred over everything else.
fn marginal(before: f64, after: f64) -> f64 {
    match (before.is_finite(), after.is_finite()) {
        (true, true) => after - before,
        (false, true) => f64::NEG_INFINITY,
        (true, false) => f64::INFINITY,
        (false, false) => f64::MAX,
    }
}

/// Builds the starting assignment: every task first gets one agent
/// (round-robin by distance), remaining agents are placed by `policy`.
pub fn initial_assignment(
    problem: &dyn CoalitionProblem,
    policy: InitPolicy,
    seed: u64,
) -> Result<Assignment, CoalitionError> {
    let (agents, tasks) = check_sizes(problem)?;
    let mut members: BTreeMap<TaskId, BTreeSet<AgentId>> = tasks.iter().map(|&t| (t, BTreeSet::new())).collect();
    let mut free: BTreeSet<AgentId> = agents.iter().copied().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    match policy {
        InitPolicy::Greedy => {
            for &t in &tasks {
                let pick = free
                    .iter()
                    .copied()
                    .filter(|&a| problem.capable(a, t))
                    .min_by(|&a, &b| problem.agent_task_distance(a, t).total_cmp(&problem.agent_task_distance(b, t)).then(a.cmp(&b)));
                let Some(a) = pick else {
                    return Err(CoalitionError::InfeasibleScenario(format!("no free agent for task {t}")));
                };
                free.remove(&a);
                members.get_mut(&t).unwrap().insert(a);
            }
            for a in free {
                // completing several coalitions ties at -inf; the cheaper completed
                // coalition wins, then the lower task id
                let mut best: Option<(f64, f64, TaskId)> = None;
                for &t in &tasks {
                    if !problem.capable(a, t) {
                        continue;
                    }
                    let cur = Coalition::new(members[&t].iter().copied());
                    let after = problem.estimate(t, &cur.with(a));
                    let m = marginal(problem.estimate(t, &cur), after);
                    if best.map_or(true, |(bm, ba, _)| m < bm || (m == bm && after < ba)) {
                        best = Some((m, after, t));
                    }
                }
                let (_, _, t) = best.ok_or_else(|| CoalitionError::InfeasibleScenario(format!("agent {a} fits no task")))?;
                members.get_mut(&t).unwrap().insert(a);
            }
        }
        InitPolicy::Random => {
            let mut order: Vec<AgentId> = agents.clone();
            order.shuffle(&mut rng);
            for &t in &tasks {
                let pos = order.iter().position(|&a| problem.capable(a, t)).ok_or_else(|| {
                    CoalitionError::InfeasibleScenario(format!("no free agent for task {t}"))
                })?;
                members.get_mut(&t).unwrap().insert(order.remove(pos));
            }
            for a in order {
                let options: Vec<TaskId> = tasks.iter().copied().filter(|&t| problem.capable(a, t)).collect();
                if options.is_empty() {
                    return Err(CoalitionError::InfeasibleScenario(format!("agent {a} fits no task")));
                }
                let t = options[rng.gen_range(0..options.len())];
                members.get_mut(&t).unwrap().insert(a);
            }
        }
    }
    Ok(Assignment::from_pairs(members.into_iter().map(|(t, m)| (t, Coalition::new(m)))))
}

/// Balanced objective of `a` using whatever values `table` holds.
pub fn assignment_cost(a: &Assignment, table: &CostTable) -> Result<f64, CoalitionError> {
    let costs = a.iter().map(|(t, c)| table.cost(t, c)).collect::<Result<Vec<_>, _>>()?;
    Ok(balanced(&costs))
}

/// Coalition with the k-th largest table cost; ties go to the smaller task id.
pub fn kth_target_coalition(
    a: &Assignment,
    table: &CostTable,
    k: usize,
) -> Result<(Coalition, TaskId), CoalitionError> {
    let m = a.num_tasks();
    if k == 0 || k > m {
        return Err(CoalitionError::RoundOutOfRange { k, m });
    }
    let mut ranked = a
        .iter()
        .map(|(t, c)| Ok((table.cost(t, c)?, t, c.clone())))
        .collect::<Result<Vec<_>, CoalitionError>>()?;
    ranked.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)));
    let (_, t, c) = ranked.swap_remove(k - 1);
    Ok((c, t))
}

// balanced objective using actual values where known, estimates elsewhere
fn mixed_cost(a: &Assignment, oracle: &CostOracle, table: &CostTable) -> f64 {
    let costs: Vec<f64> =
        a.iter().map(|(t, c)| table.get(t, c).map_or_else(|| oracle.estimate(t, c), |e| e.cost)).collect();
    balanced(&costs)
}

fn ensure_estimates(a: &Assignment, oracle: &CostOracle, table: &mut CostTable) {
    for (t, c) in a.iter() {
        if table.get(t, c).is_none() {
            table.record_estimate(t, c, oracle.estimate(t, c));
        }
    }
}

/// Moves `agent` into the target task if that lowers the larger of the two
/// affected costs: new actual costs on the left, current table values on
/// the right.
pub fn try_switch(
    a: &Assignment,
    agent: AgentId,
    target: TaskId,
    oracle: &CostOracle,
    table: &mut CostTable,
) -> Result<Option<Assignment>, CoalitionError> {
    let invalid = |reason| CoalitionError::InvalidSwitch { agent, task: target, reason };
    let dest = a.coalition(target).ok_or(invalid("unknown target task"))?.clone();
    if dest.contains(agent) {
        return Err(invalid("agent already in target coalition"));
    }
    let source_task = a.task_of(agent).ok_or(invalid("agent not assigned"))?;
    let source = a.coalition(source_task).unwrap().clone();
    if source.len() == 1 {
        return Err(invalid("source coalition would become empty"));
    }
    if !oracle.problem().capable(agent, target) {
        return Err(invalid("agent cannot perform target task"));
    }
    ensure_estimates(a, oracle, table);
    let current = table.cost(target, &dest)?.max(table.cost(source_task, &source)?);

    let grown = dest.with(agent);
    let shrunk = source.without(agent);
    let (f_dest, f_src) = rayon::join(|| oracle.actual(target, &grown), || oracle.actual(source_task, &shrunk));
    table.record_actual(target, &grown, f_dest.cost);
    table.record_actual(source_task, &shrunk, f_src.cost);

    if f_dest.cost.max(f_src.cost) < current {
        let next = a.switched(agent, target);
        debug_assert!(validate_assignment(&next, &oracle.problem().agents().into_iter().collect(), &oracle.problem().tasks()).is_ok());
        Ok(Some(next))
    } else {
        Ok(None)
    }
}

// assignments always hold at least one task
fn balanced(costs: &[f64]) -> f64 {
    cho_objective(costs).unwrap_or(f64::INFINITY)
}

const STABILITY_EPS: f64 = 1e-9;

fn actual_costs(a: &Assignment, oracle: &CostOracle) -> BTreeMap<TaskId, ActualCost> {
    let pairs: Vec<(TaskId, Coalition)> = a.iter().map(|(t, c)| (t, c.clone())).collect();
    pairs.into_par_iter().map(|(t, c)| (t, oracle.actual(t, &c))).collect()
}

fn valid_moves(a: &Assignment, oracle: &CostOracle) -> Vec<(AgentId, TaskId, TaskId)> {
    let mut moves = Vec::new();
    for (agent, src) in a.agent_map() {
        if a.coalition(src).map_or(true, |c| c.len() < 2) {
            continue;
        }
        for t in a.tasks() {
            if t != src && oracle.problem().capable(agent, t) {
                moves.push((agent, src, t));
            }
        }
    }
    moves
}

// First (agent, task) switch that lowers the balanced objective under
// actual costs, in ascending agent then task order.
fn improving_switch(a: &Assignment, oracle: &CostOracle) -> Option<(AgentId, TaskId)> {
    let base = actual_costs(a, oracle);
    let base_obj = balanced(&base.values().map(|c| c.cost).collect::<Vec<_>>());
    let moves = valid_moves(a, oracle);
    let improves: Vec<bool> = moves
        .par_iter()
        .map(|&(agent, src, dst)| {
            let mut costs: BTreeMap<TaskId, f64> = base.iter().map(|(t, c)| (*t, c.cost)).collect();
            costs.insert(src, oracle.actual(src, &a.coalition(src).unwrap().without(agent)).cost);
            costs.insert(dst, oracle.actual(dst, &a.coalition(dst).unwrap().with(agent)).cost);
            let obj = balanced(&costs.values().copied().collect::<Vec<_>>());
            obj < base_obj - STABILITY_EPS * base_obj.abs().max(1.0)
        })
        .collect();
    moves.iter().zip(improves).find(|(_, ok)| *ok).map(|(&(agent, _, dst), _)| (agent, dst))
}

/// True iff no valid single-agent switch lowers the balanced objective,
/// with every coalition evaluated by the actual oracle.
pub fn verify_nash_stable(a: &Assignment, oracle: &CostOracle) -> bool {
    improving_switch(a, oracle).is_none()
}

fn finish(
    a: &Assignment,
    oracle: &CostOracle,
    table: &mut CostTable,
    switches: usize,
    restarts: usize,
) -> Formation {
    let actual = actual_costs(a, oracle);
    let mut plans = BTreeMap::new();
    let mut costs = BTreeMap::new();
    for (t, ac) in actual {
        table.record_actual(t, a.coalition(t).unwrap(), ac.cost);
        costs.insert(t, ac.cost);
        if let Some(p) = ac.plan {
            plans.insert(t, p);
        }
    }
    Formation {
        assignment: a.clone(),
        plans,
        costs,
        table: table.clone(),
        switches,
        restarts,
        oracle_calls: oracle.calls(),
    }
}

/// Iterated target-coalition rounds followed by a stability sweep; see the
/// crate README for the exact procedure.
pub fn form_coalitions(problem: &dyn CoalitionProblem, config: &CoalitionConfig) -> Result<Formation, CoalitionError> {
    let initial = initial_assignment(problem, config.policy, config.seed)?;
    form_coalitions_from(problem, initial, config)
}

/// As [`form_coalitions`] but starting from a given assignment.
pub fn form_coalitions_from(
    problem: &dyn CoalitionProblem,
    initial: Assignment,
    config: &CoalitionConfig,
) -> Result<Formation, CoalitionError> {
    let (agents, tasks) = check_sizes(problem)?;
    let agent_set: BTreeSet<AgentId> = agents.iter().copied().collect();
    if let Err(v) = validate_assignment(&initial, &agent_set, &tasks) {
        return Err(CoalitionError::InfeasibleScenario(format!("invalid initial assignment: {v:?}")));
    }
    let oracle = CostOracle::new(problem);
    let cap = config.max_switches.unwrap_or(25 * agents.len() * tasks.len());
    let m = tasks.len();

    let mut a = initial;
    let mut table = CostTable::new();
    let mut switches = 0usize;
    let mut restarts = 0usize;
    let mut best: Option<(f64, Assignment)> = None;

    loop {
        let mut round_targets: Vec<TaskId> = Vec::with_capacity(m);
        let mut k = 1;
        while k <= m {
            ensure_estimates(&a, &oracle, &mut table);
            let (coalition, target) = kth_target_coalition(&a, &table, k)?;
            if table.get(target, &coalition).map(|e| e.kind) != Some(CostKind::Actual) {
                // the estimate is replaced and the target re-selected
                let ac = oracle.actual(target, &coalition);
                table.record_actual(target, &coalition, ac.cost);
                continue;
            }
            round_targets.truncate(k - 1);
            round_targets.push(target);

            let mut switched = None;
            for agent in agents.iter().copied() {
                if coalition.contains(agent) {
                    continue;
                }
                let src = a.task_of(agent).unwrap();
                if a.coalition(src).unwrap().len() < 2 || !problem.capable(agent, target) {
                    continue;
                }
                if let Some(next) = try_switch(&a, agent, target, &oracle, &mut table)? {
                    // a switch may lower the pair maximum yet raise the mean
                    // enough to undo an earlier stability step; such moves
                    // are skipped so the process cannot cycle
                    let before = mixed_cost(&a, &oracle, &table);
                    let after = mixed_cost(&next, &oracle, &table);
                    if after <= before {
                        switched = Some((next, src));
                        break;
                    }
                }
            }
            match switched {
                Some((next, src)) => {
                    a = next;
                    switches += 1;
                    let obj = mixed_cost(&a, &oracle, &table);
                    if best.as_ref().map_or(true, |(b, _)| obj < *b) {
                        best = Some((obj, a.clone()));
                    }
                    if switches > cap {
                        let best_a = best.map(|(_, b)| b).unwrap_or(a);
                        let f = finish(&best_a, &oracle, &mut table, switches, restarts);
                        return Err(CoalitionError::IterationCapExceeded { cap, best: Box::new(f) });
                    }
                    if round_targets[..k - 1].contains(&src) {
                        restarts += 1;
                        k = 1;
                        round_targets.clear();
                    }
                }
                None => k += 1,
            }
        }

        // Eq.-style switches do not by themselves rule out every
        // objective-lowering move, so finish with a full stability sweep.
        match improving_switch(&a, &oracle) {
            None => return Ok(finish(&a, &oracle, &mut table, switches, restarts)),
            Some((agent, dst)) => {
                a = a.switched(agent, dst);
                switches += 1;
                restarts += 1;
                if switches > cap {
                    let f = finish(&a, &oracle, &mut table, switches, restarts);
                    return Err(CoalitionError::IterationCapExceeded { cap, best: Box::new(f) });
                }
            }
        }
    }
}
