//! Shared state, mode, plan and assignment types, plus the concurrent
//! state-composition algebra every other module builds on.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type AgentId = usize;
pub type TaskId = usize;
pub type ModeId = usize;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("tasks {first} and {second} both write state dimension {dim}")]
    OverlappingSlices { first: TaskId, second: TaskId, dim: usize },
    #[error("mode {mode} of task {task} wrote dimension {dim} outside its slice")]
    SliceViolation { task: TaskId, mode: ModeId, dim: usize },
    #[error("state entry {index} is not finite")]
    NonFiniteState { index: usize },
    #[error("state has dimension {got}, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("parameter for mode {mode} lies outside its bounds")]
    InfeasibleParam { mode: ModeId },
    #[error("unknown mode id {0}")]
    UnknownMode(ModeId),
    #[error("objective needs at least one task cost")]
    EmptyTaskList,
}

/// Flat vector of every dynamic component (agents, boxes, evaders).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemState {
    pub values: Vec<f64>,
    pub time_step: u64,
}

impl SystemState {
    pub fn new(values: Vec<f64>) -> Result<Self, ModelError> {
        check_finite(&values)?;
        Ok(Self { values, time_step: 0 })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// Successor state carrying `values` one tick later.
    pub fn advanced(&self, values: Vec<f64>) -> Self {
        Self { values, time_step: self.time_step + 1 }
    }
}

fn check_finite(values: &[f64]) -> Result<(), ModelError> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(ModelError::NonFiniteState { index }),
        None => Ok(()),
    }
}

/// Axis-aligned box in parameter space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamBounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl ParamBounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Self {
        assert_eq!(lower.len(), upper.len(), "bounds dimension mismatch");
        assert!(lower.iter().zip(&upper).all(|(l, u)| l <= u), "empty parameter box");
        Self { lower, upper }
    }

    pub fn uniform(dim: usize, lower: f64, upper: f64) -> Self {
        Self::new(vec![lower; dim], vec![upper; dim])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, p: &[f64]) -> bool {
        p.len() == self.dim()
            && p.iter().zip(self.lower.iter().zip(&self.upper)).all(|(v, (l, u))| *v >= *l && *v <= *u)
    }

    pub fn project(&self, p: &[f64]) -> Vec<f64> {
        p.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(v, (l, u))| v.clamp(*l, *u))
            .collect()
    }

    pub fn range(&self, i: usize) -> f64 {
        self.upper[i] - self.lower[i]
    }
}

/// Set of agents jointly executing one task.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
pub struct Coalition(BTreeSet<AgentId>);

impl Coalition {
    pub fn new(agents: impl IntoIterator<Item = AgentId>) -> Self {
        Self(agents.into_iter().collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, agent: AgentId) -> bool {
        self.0.contains(&agent)
    }

    pub fn iter(&self) -> impl Iterator<Item = AgentId> + '_ {
        self.0.iter().copied()
    }

    pub fn with(&self, agent: AgentId) -> Self {
        let mut s = self.0.clone();
        s.insert(agent);
        Self(s)
    }

    pub fn without(&self, agent: AgentId) -> Self {
        let mut s = self.0.clone();
        s.remove(&agent);
        Self(s)
    }

    pub fn ids(&self) -> Vec<AgentId> {
        self.0.iter().copied().collect()
    }
}

impl fmt::Display for Coalition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (i, a) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{a}")?;
        }
        write!(f, "}}")
    }
}

/// A parameterized closed-loop behavior: one-tick dynamics and per-tick cost.
///
/// Implementations must be deterministic and return non-negative costs.
pub trait Mode: Send + Sync {
    fn id(&self) -> ModeId;
    fn name(&self) -> &str;
    fn bounds(&self) -> &ParamBounds;

    /// Minimum number of ticks the mode is held once chosen.
    fn min_dwell(&self) -> u32 {
        1
    }

    fn feasible_coalition(&self, coalition: &Coalition) -> bool;

    /// Next state values after one tick.
    fn step(&self, state: &SystemState, coalition: &Coalition, param: &[f64]) -> Vec<f64>;

    fn step_cost(&self, state: &SystemState, coalition: &Coalition, param: &[f64]) -> f64;

    /// Whether continuous refinement of the parameter is meaningful.
    fn refinable(&self) -> bool {
        true
    }
}

pub type ModeRef = Arc<dyn Mode>;

pub fn find_mode(modes: &[ModeRef], id: ModeId) -> Option<&ModeRef> {
    modes.iter().find(|m| m.id() == id)
}

/// A task: the state dimensions it owns and its goal set.
#[derive(Clone)]
pub struct Task {
    pub id: TaskId,
    pub state_slice: Vec<usize>,
    pub goal: Arc<dyn Fn(&SystemState) -> bool + Send + Sync>,
    pub goal_tolerance: f64,
}

impl fmt::Debug for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Task")
            .field("id", &self.id)
            .field("state_slice", &self.state_slice)
            .field("goal_tolerance", &self.goal_tolerance)
            .finish()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanStep {
    pub mode: ModeId,
    pub coalition: Coalition,
    pub param: Vec<f64>,
    pub dwell: u32,
}

/// Ordered mode/coalition/parameter/dwell sequence for one task.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct HybridPlan {
    pub steps: Vec<PlanStep>,
}

impl HybridPlan {
    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn total_ticks(&self) -> u64 {
        self.steps.iter().map(|s| s.dwell as u64).sum()
    }

    pub fn concat(&self, other: &HybridPlan) -> HybridPlan {
        let mut steps = self.steps.clone();
        steps.extend(other.steps.iter().cloned());
        HybridPlan { steps }
    }
}

/// One task's active mode for a single composition tick.
pub struct ActiveMode<'a> {
    pub task: TaskId,
    /// Dimensions this task may write.
    pub slice: &'a [usize],
    pub mode: &'a dyn Mode,
    pub coalition: &'a Coalition,
    pub param: &'a [f64],
}

/// Advances the state by one tick with every task's active mode applied
/// concurrently.
///
/// Each dimension has at most one writer, so the sum of per-task deltas
/// collapses to the writer's value; dimensions without a writer keep their
/// value. Modes may read any dimension.
pub fn compose_step(state: &SystemState, active: &[ActiveMode<'_>]) -> Result<SystemState, ModelError> {
    let mut order: Vec<usize> = (0..active.len()).collect();
    order.sort_by_key(|&i| active[i].task);

    let mut owner: BTreeMap<usize, TaskId> = BTreeMap::new();
    for &i in &order {
        let a = &active[i];
        if !a.mode.bounds().contains(a.param) {
            return Err(ModelError::InfeasibleParam { mode: a.mode.id() });
        }
        for &dim in a.slice {
            if let Some(&first) = owner.get(&dim) {
                return Err(ModelError::OverlappingSlices { first, second: a.task, dim });
            }
            owner.insert(dim, a.task);
        }
    }

    let mut out = state.values.clone();
    for &i in &order {
        let a = &active[i];
        let next = a.mode.step(state, a.coalition, a.param);
        if next.len() != state.dim() {
            return Err(ModelError::DimensionMismatch { expected: state.dim(), got: next.len() });
        }
        for (dim, (n, s)) in next.iter().zip(&state.values).enumerate() {
            if owner.get(&dim) == Some(&a.task) {
                out[dim] = *n;
            } else if n.to_bits() != s.to_bits() {
                return Err(ModelError::SliceViolation { task: a.task, mode: a.mode.id(), dim });
            }
        }
    }
    check_finite(&out)?;
    Ok(state.advanced(out))
}

/// Rolls `plan` forward from `start` and returns its accumulated cost and the
/// final state. Each tick is charged at the state before the step.
pub fn rollout_plan(
    plan: &HybridPlan,
    start: &SystemState,
    modes: &[ModeRef],
) -> Result<(f64, SystemState), ModelError> {
    let mut state = start.clone();
    let mut cost = 0.0;
    for step in &plan.steps {
        let mode = find_mode(modes, step.mode).ok_or(ModelError::UnknownMode(step.mode))?;
        if !mode.bounds().contains(&step.param) {
            return Err(ModelError::InfeasibleParam { mode: step.mode });
        }
        for _ in 0..step.dwell {
            cost += mode.step_cost(&state, &step.coalition, &step.param);
            let next = mode.step(&state, &step.coalition, &step.param);
            check_finite(&next)?;
            state = state.advanced(next);
        }
    }
    Ok((cost, state))
}

pub fn plan_cost(plan: &HybridPlan, start: &SystemState, modes: &[ModeRef]) -> Result<f64, ModelError> {
    rollout_plan(plan, start, modes).map(|(c, _)| c)
}

/// Task → coalition map; coalitions are expected to be pairwise disjoint.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct Assignment {
    coalitions: BTreeMap<TaskId, Coalition>,
}

impl Assignment {
    pub fn new(coalitions: BTreeMap<TaskId, Coalition>) -> Self {
        Self { coalitions }
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (TaskId, Coalition)>) -> Self {
        Self { coalitions: pairs.into_iter().collect() }
    }

    pub fn coalition(&self, task: TaskId) -> Option<&Coalition> {
        self.coalitions.get(&task)
    }

    pub fn tasks(&self) -> impl Iterator<Item = TaskId> + '_ {
        self.coalitions.keys().copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (TaskId, &Coalition)> {
        self.coalitions.iter().map(|(t, c)| (*t, c))
    }

    pub fn num_tasks(&self) -> usize {
        self.coalitions.len()
    }

    /// Task of `agent`, smallest task id first if the assignment is invalid.
    pub fn task_of(&self, agent: AgentId) -> Option<TaskId> {
        self.coalitions.iter().find(|(_, c)| c.contains(agent)).map(|(t, _)| *t)
    }

    pub fn agent_map(&self) -> BTreeMap<AgentId, TaskId> {
        let mut map = BTreeMap::new();
        for (t, c) in &self.coalitions {
            for a in c.iter() {
                map.entry(a).or_insert(*t);
            }
        }
        map
    }

    /// The switch operation: moves `agent` into `task`.
    pub fn switched(&self, agent: AgentId, task: TaskId) -> Assignment {
        let mut coalitions = self.coalitions.clone();
        for c in coalitions.values_mut() {
            if c.contains(agent) {
                *c = c.without(agent);
            }
        }
        let dest = coalitions.entry(task).or_default();
        *dest = dest.with(agent);
        Assignment { coalitions }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Violation {
    SharedAgent { agent: AgentId, first: TaskId, second: TaskId },
    EmptyCoalition { task: TaskId },
    UnknownAgent { agent: AgentId, task: TaskId },
    UnknownTask { task: TaskId },
    MissingTask { task: TaskId },
}

/// Checks disjointness, membership and non-emptiness; reports every
/// violation found.
pub fn validate_assignment(
    a: &Assignment,
    agents: &BTreeSet<AgentId>,
    tasks: &[TaskId],
) -> Result<(), Vec<Violation>> {
    let mut violations = Vec::new();
    let mut seen: BTreeMap<AgentId, TaskId> = BTreeMap::new();
    for (task, coalition) in a.iter() {
        if !tasks.contains(&task) {
            violations.push(Violation::UnknownTask { task });
        }
        if coalition.is_empty() {
            violations.push(Violation::EmptyCoalition { task });
        }
        for agent in coalition.iter() {
            if !agents.contains(&agent) {
                violations.push(Violation::UnknownAgent { agent, task });
            }
            if let Some(&first) = seen.get(&agent) {
                violations.push(Violation::SharedAgent { agent, first, second: task });
            } else {
                seen.insert(agent, task);
            }
        }
    }
    for &task in tasks {
        if a.coalition(task).is_none() {
            violations.push(Violation::MissingTask { task });
        }
    }
    if violations.is_empty() {
        Ok(())
    } else {
        Err(violations)
    }
}

/// Balanced objective: maximum plus mean of the per-task costs.
pub fn cho_objective(costs: &[f64]) -> Result<f64, ModelError> {
    if costs.is_empty() {
        return Err(ModelError::EmptyTaskList);
    }
    let max = costs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mean = costs.iter().sum::<f64>() / costs.len() as f64;
    Ok(max + mean)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toy::{ChainMove, ConstantCost};
    use proptest::prelude::*;

    fn state(v: &[f64]) -> SystemState {
        SystemState::new(v.to_vec()).unwrap()
    }

    #[test]
    fn empty_composition_only_advances_time() {
        let s = state(&[1.0, 2.0]);
        let next = compose_step(&s, &[]).unwrap();
        assert_eq!(next.values, s.values);
        assert_eq!(next.time_step, 1);
    }

    #[test]
    fn single_mode_composition_is_exactly_the_mode() {
        let s = state(&[0.3, -1.7]);
        let m = ChainMove::new(1, 0, 0.1);
        let c = Coalition::new([0]);
        let next = compose_step(&s, &[ActiveMode { task: 0, slice: &[0], mode: &m, coalition: &c, param: &[0.7] }]).unwrap();
        assert_eq!(next.values, m.step(&s, &c, &[0.7]));
    }

    #[test]
    fn overlapping_slices_rejected() {
        let s = state(&[0.0, 0.0]);
        let m = ChainMove::new(1, 0, 1.0);
        let c = Coalition::new([0]);
        let err = compose_step(
            &s,
            &[
                ActiveMode { task: 0, slice: &[0], mode: &m, coalition: &c, param: &[1.0] },
                ActiveMode { task: 1, slice: &[0, 1], mode: &m, coalition: &c, param: &[1.0] },
            ],
        )
        .unwrap_err();
        assert_eq!(err, ModelError::OverlappingSlices { first: 0, second: 1, dim: 0 });
    }

    #[test]
    fn write_outside_slice_rejected() {
        let s = state(&[0.0, 0.0]);
        let m = ChainMove::new(1, 1, 1.0);
        let c = Coalition::new([0]);
        let err = compose_step(&s, &[ActiveMode { task: 0, slice: &[0], mode: &m, coalition: &c, param: &[1.0] }])
            .unwrap_err();
        assert!(matches!(err, ModelError::SliceViolation { dim: 1, .. }));
    }

    #[test]
    fn non_finite_output_rejected() {
        let s = state(&[0.0]);
        let m = ChainMove::new(1, 0, f64::INFINITY);
        let c = Coalition::new([0]);
        let err = compose_step(&s, &[ActiveMode { task: 0, slice: &[0], mode: &m, coalition: &c, param: &[1.0] }])
            .unwrap_err();
        assert_eq!(err, ModelError::NonFiniteState { index: 0 });
    }

    #[test]
    fn plan_cost_basics() {
        let modes: Vec<ModeRef> = vec![Arc::new(ConstantCost::new(7, 2.5))];
        let s = state(&[0.0]);
        assert_eq!(plan_cost(&HybridPlan::default(), &s, &modes).unwrap(), 0.0);
        let plan = HybridPlan {
            steps: vec![PlanStep { mode: 7, coalition: Coalition::new([0]), param: vec![0.0], dwell: 1 }],
        };
        assert_eq!(plan_cost(&plan, &s, &modes).unwrap(), 2.5);
        let bad = HybridPlan {
            steps: vec![PlanStep { mode: 7, coalition: Coalition::new([0]), param: vec![9.0], dwell: 1 }],
        };
        assert_eq!(plan_cost(&bad, &s, &modes), Err(ModelError::InfeasibleParam { mode: 7 }));
    }

    #[test]
    fn plan_cost_matches_step_by_step_simulation() {
        // chain: position x, move mode advances by step*param, cost |param| + 0.1 per tick
        let modes: Vec<ModeRef> = vec![Arc::new(ChainMove::new(1, 0, 1.0))];
        let c = Coalition::new([0]);
        let plan = HybridPlan {
            steps: vec![
                PlanStep { mode: 1, coalition: c.clone(), param: vec![1.0], dwell: 2 },
                PlanStep { mode: 1, coalition: c.clone(), param: vec![-0.5], dwell: 3 },
                PlanStep { mode: 1, coalition: c.clone(), param: vec![0.25], dwell: 1 },
            ],
        };
        // independent re-simulation
        let mut x = 0.0_f64;
        let mut cost = 0.0_f64;
        for (p, n) in [(1.0_f64, 2), (-0.5, 3), (0.25, 1)] {
            for _ in 0..n {
                cost += p.abs() + 0.1;
                x += p;
            }
        }
        let (c_plan, end) = rollout_plan(&plan, &state(&[0.0]), &modes).unwrap();
        assert!((c_plan - cost).abs() < 1e-12);
        assert!((end.values[0] - x).abs() < 1e-12);
        assert_eq!(end.time_step, 6);
    }

    #[test]
    fn validate_examples() {
        let agents: BTreeSet<AgentId> = [1, 2, 3].into_iter().collect();
        let ok = Assignment::from_pairs([(1, Coalition::new([1, 2])), (2, Coalition::new([3]))]);
        assert!(validate_assignment(&ok, &agents, &[1, 2]).is_ok());

        let shared = Assignment::from_pairs([(1, Coalition::new([1, 2])), (2, Coalition::new([2, 3]))]);
        let v = validate_assignment(&shared, &agents, &[1, 2]).unwrap_err();
        assert_eq!(v, vec![Violation::SharedAgent { agent: 2, first: 1, second: 2 }]);

        let empty = Assignment::from_pairs([(1, Coalition::default())]);
        let v = validate_assignment(&empty, &agents, &[1]).unwrap_err();
        assert_eq!(v, vec![Violation::EmptyCoalition { task: 1 }]);
    }

    #[test]
    fn objective_examples() {
        assert_eq!(cho_objective(&[4.0, 2.0]).unwrap(), 7.0);
        assert_eq!(cho_objective(&[0.0, 0.0, 0.0]).unwrap(), 0.0);
        assert_eq!(cho_objective(&[3.5]).unwrap(), 7.0);
        assert_eq!(cho_objective(&[]), Err(ModelError::EmptyTaskList));
    }

    #[test]
    fn switch_moves_agent() {
        let a = Assignment::from_pairs([(0, Coalition::new([0, 1])), (1, Coalition::new([2]))]);
        let b = a.switched(1, 1);
        assert_eq!(b.coalition(0), Some(&Coalition::new([0])));
        assert_eq!(b.coalition(1), Some(&Coalition::new([1, 2])));
        assert_eq!(b.task_of(1), Some(1));
    }

    proptest! {
        #[test]
        fn composition_order_independent(x0 in -5.0..5.0f64, x1 in -5.0..5.0f64, p in -1.0..1.0f64, q in -1.0..1.0f64) {
            let s = state(&[x0, x1]);
            let m0 = ChainMove::new(1, 0, 0.3);
            let m1 = ChainMove::new(1, 1, 0.3);
            let c = Coalition::new([0]);
            let a = ActiveMode { task: 0, slice: &[0], mode: &m0, coalition: &c, param: &[p] };
            let b = ActiveMode { task: 1, slice: &[1], mode: &m1, coalition: &c, param: &[q] };
            let ab = compose_step(&s, &[a, b]).unwrap();
            let a = ActiveMode { task: 0, slice: &[0], mode: &m0, coalition: &c, param: &[p] };
            let b = ActiveMode { task: 1, slice: &[1], mode: &m1, coalition: &c, param: &[q] };
            let ba = compose_step(&s, &[b, a]).unwrap();
            prop_assert!(ab.values.iter().zip(&ba.values).all(|(u, v)| u.to_bits() == v.to_bits()));
        }

        #[test]
        fn objective_monotone(costs in proptest::collection::vec(0.0..100.0f64, 1..6), i in 0usize..6, bump in 0.0..10.0f64) {
            let base = cho_objective(&costs).unwrap();
            let mut up = costs.clone();
            let i = i % up.len();
            up[i] += bump;
            prop_assert!(cho_objective(&up).unwrap() >= base);
        }

        #[test]
        fn plan_cost_additive(p1 in -1.0..1.0f64, p2 in -1.0..1.0f64, n1 in 1u32..4, n2 in 1u32..4) {
            let modes: Vec<ModeRef> = vec![Arc::new(ChainMove::new(1, 0, 1.0))];
            let c = Coalition::new([0]);
            let a = HybridPlan { steps: vec![PlanStep { mode: 1, coalition: c.clone(), param: vec![p1], dwell: n1 }] };
            let b = HybridPlan { steps: vec![PlanStep { mode: 1, coalition: c.clone(), param: vec![p2], dwell: n2 }] };
            let s = state(&[0.0]);
            let (ca, mid) = rollout_plan(&a, &s, &modes).unwrap();
            let cb = plan_cost(&b, &mid, &modes).unwrap();
            let cab = plan_cost(&a.concat(&b), &s, &modes).unwrap();
            prop_assert!(cab >= 0.0);
            prop_assert!((cab - (ca + cb)).abs() < 1e-12);
        }

        #[test]
        fn valid_assignment_has_unique_agents(sizes in proptest::collection::vec(1usize..4, 1..4)) {
            let mut next = 0;
            let mut pairs = Vec::new();
            for (t, n) in sizes.iter().enumerate() {
                pairs.push((t, Coalition::new(next..next + n)));
                next += n;
            }
            let a = Assignment::from_pairs(pairs);
            let agents: BTreeSet<_> = (0..next).collect();
            let tasks: Vec<_> = (0..sizes.len()).collect();
            prop_assert!(validate_assignment(&a, &agents, &tasks).is_ok());
            let mut count = vec![0; next];
            for (_, c) in a.iter() { for ag in c.iter() { count[ag] += 1; } }
            prop_assert!(count.iter().all(|&k| k == 1));
        }
    }
}
