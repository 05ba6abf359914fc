//! Interface every simulated domain offers to the allocation layer and the
//! episode harness.

use std::collections::HashMap;
use std::sync::Mutex;

use crate::coalition::{ActualCost, CoalitionProblem};
use crate::model::{AgentId, Coalition, HybridPlan, ModeId, ModeRef, SystemState, TaskId};
use crate::search::{hgg_hs, HybridProblem, SearchConfig, SearchError};

/// One row of the trajectory log.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajRow {
    pub kind: &'static str,
    pub id: usize,
    pub x: f64,
    pub y: f64,
    pub extra: f64,
}

pub trait Domain: Sync {
    fn name(&self) -> &'static str;
    fn initial_state(&self) -> SystemState;
    fn agents(&self) -> Vec<AgentId>;
    fn tasks(&self) -> Vec<TaskId>;
    fn task_done(&self, state: &SystemState, task: TaskId) -> bool;
    /// State dimensions written while `coalition` works on `task`.
    fn task_slice(&self, task: TaskId, coalition: &Coalition) -> Vec<usize>;
    fn modes(&self, task: TaskId) -> &[ModeRef];
    /// Search problem for one task, optionally restricted to a mode subset.
    fn problem<'a>(
        &'a self,
        task: TaskId,
        coalition: &Coalition,
        state: &SystemState,
        only: Option<&[ModeId]>,
    ) -> Box<dyn HybridProblem + 'a>;
    /// Estimated cost, in the same units as plan costs.
    fn estimate(&self, state: &SystemState, task: TaskId, coalition: &Coalition) -> f64;
    fn agent_task_distance(&self, state: &SystemState, agent: AgentId, task: TaskId) -> f64;
    /// Single mode used by the fixed-mode baseline.
    fn baseline_mode(&self) -> ModeId;
    fn search_config(&self) -> &SearchConfig;
    /// Values of `task_slice` after one tick with nobody acting on the task.
    fn idle_step(&self, state: &SystemState, task: TaskId, coalition: &Coalition) -> Vec<f64>;
    /// Whether the current state violates a hard constraint.
    fn state_safe(&self, state: &SystemState) -> bool;
    /// Whether the tick `prev -> next` respects every speed limit.
    fn speed_ok(&self, prev: &SystemState, next: &SystemState) -> bool;
    fn dt(&self) -> f64;
    /// Agent rows first (in agent order), then one row per task.
    fn trajectory(&self, state: &SystemState) -> Vec<TrajRow>;
}

type CacheKey = (TaskId, Vec<AgentId>, Option<Vec<ModeId>>, Vec<u64>);

/// Plan cost and plan on success; on failure, the partial plan that came
/// closest to the goal (empty if the search never left the start).
pub type SearchOutcome = Result<(f64, HybridPlan), HybridPlan>;

/// Search outcomes keyed by task, coalition, mode subset and exact state, so
/// that an episode never repeats an identical search.
#[derive(Default)]
pub struct SearchCache {
    map: Mutex<HashMap<CacheKey, SearchOutcome>>,
}

impl SearchCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.map.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn search(
        &self,
        domain: &dyn Domain,
        task: TaskId,
        coalition: &Coalition,
        state: &SystemState,
        only: Option<&[ModeId]>,
        config: &SearchConfig,
    ) -> SearchOutcome {
        let key = (task, coalition.ids(), only.map(<[ModeId]>::to_vec), state.values.iter().map(|v| v.to_bits()).collect());
        if let Some(hit) = self.map.lock().unwrap().get(&key) {
            return hit.clone();
        }
        let problem = domain.problem(task, coalition, state, only);
        let out = match hgg_hs(problem.as_ref(), state, config) {
            Ok(r) => Ok((r.cost, r.plan)),
            Err(SearchError::SearchExhausted { nearest_plan, .. }) => Err(nearest_plan),
            Err(_) => Err(HybridPlan::default()),
        };
        self.map.lock().unwrap().insert(key, out.clone());
        out
    }

    /// Plan cost and plan, or `None` when the search fails.
    pub fn solve(
        &self,
        domain: &dyn Domain,
        task: TaskId,
        coalition: &Coalition,
        state: &SystemState,
        only: Option<&[ModeId]>,
        config: &SearchConfig,
    ) -> Option<(f64, HybridPlan)> {
        self.search(domain, task, coalition, state, only, config).ok()
    }
}

/// Coalition-layer view of a domain at a fixed state, restricted to a
/// subset of agents and tasks.
pub struct Allocation<'a> {
    pub domain: &'a dyn Domain,
    pub state: SystemState,
    pub agents: Vec<AgentId>,
    pub tasks: Vec<TaskId>,
    pub config: SearchConfig,
    pub only: Option<Vec<ModeId>>,
    pub cache: Option<&'a SearchCache>,
}

impl<'a> Allocation<'a> {
    pub fn new(domain: &'a dyn Domain, state: SystemState, agents: Vec<AgentId>, tasks: Vec<TaskId>) -> Self {
        let config = domain.search_config().clone();
        Self { domain, state, agents, tasks, config, only: None, cache: None }
    }
}

impl CoalitionProblem for Allocation<'_> {
    fn agents(&self) -> Vec<AgentId> {
        self.agents.clone()
    }
    fn tasks(&self) -> Vec<TaskId> {
        self.tasks.clone()
    }
    fn agent_task_distance(&self, agent: AgentId, task: TaskId) -> f64 {
        self.domain.agent_task_distance(&self.state, agent, task)
    }
    fn estimate(&self, task: TaskId, coalition: &Coalition) -> f64 {
        self.domain.estimate(&self.state, task, coalition)
    }
    fn actual(&self, task: TaskId, coalition: &Coalition) -> ActualCost {
        let only = self.only.as_deref();
        let out = match self.cache {
            Some(c) => c.solve(self.domain, task, coalition, &self.state, only, &self.config),
            None => {
                let problem = self.domain.problem(task, coalition, &self.state, only);
                hgg_hs(problem.as_ref(), &self.state, &self.config).ok().map(|r| (r.cost, r.plan))
            }
        };
        match out {
            Some((cost, plan)) => ActualCost { cost, plan: Some(plan) },
            None => ActualCost { cost: f64::INFINITY, plan: None },
        }
    }
    fn state_key(&self) -> Vec<f64> {
        self.state.values.clone()
    }
}
