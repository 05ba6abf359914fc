//! Comparison methods: greedy nearest-agent assignment (GA) and single-mode
//! search under the normal coalition layer (FM).

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coalition::{form_coalitions, CoalitionConfig, CoalitionError, CoalitionProblem};
use crate::domain::{Allocation, Domain, SearchCache};
use crate::model::{AgentId, Assignment, Coalition, HybridPlan, SystemState, TaskId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Cho,
    Ga,
    Fm,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Cho, Method::Ga, Method::Fm];

    pub fn name(self) -> &'static str {
        match self {
            Method::Cho => "cho",
            Method::Ga => "ga",
            Method::Fm => "fm",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown method {s:?} (expected cho, ga or fm)"))
    }
}

/// Round-robin over tasks in id order; each turn the task claims its nearest
/// unassigned agent (ties by agent id) until every agent is placed.
pub fn greedy_assignment(
    agents: &[AgentId],
    tasks: &[TaskId],
    distance: impl Fn(AgentId, TaskId) -> f64,
) -> Assignment {
    let mut free: Vec<AgentId> = agents.to_vec();
    free.sort_unstable();
    let mut tasks = tasks.to_vec();
    tasks.sort_unstable();
    let mut groups: BTreeMap<TaskId, Vec<AgentId>> = tasks.iter().map(|&t| (t, Vec::new())).collect();
    'outer: loop {
        for &t in &tasks {
            if free.is_empty() {
                break 'outer;
            }
            let (pos, _) = free
                .iter()
                .enumerate()
                .map(|(i, &a)| (i, distance(a, t)))
                .min_by(|x, y| x.1.total_cmp(&y.1).then(free[x.0].cmp(&free[y.0])))
                .expect("non-empty");
            let a = free.remove(pos);
            groups.get_mut(&t).unwrap().push(a);
        }
        if tasks.is_empty() {
            break;
        }
    }
    Assignment::from_pairs(groups.into_iter().map(|(t, g)| (t, Coalition::new(g))))
}

/// Coalitions, plans and plan costs produced by one allocation round.
#[derive(Debug, Clone, PartialEq)]
pub struct Allocated {
    pub assignment: Assignment,
    pub plans: BTreeMap<TaskId, HybridPlan>,
    pub costs: BTreeMap<TaskId, f64>,
}

/// Runs one allocation round of `method` over the given agents and tasks.
pub fn allocate(
    method: Method,
    domain: &dyn Domain,
    state: &SystemState,
    agents: Vec<AgentId>,
    tasks: Vec<TaskId>,
    seed: u64,
    cache: Option<&SearchCache>,
) -> Result<Allocated, CoalitionError> {
    let mut problem = Allocation::new(domain, state.clone(), agents, tasks);
    problem.cache = cache;
    let config = CoalitionConfig { seed, ..CoalitionConfig::default() };
    match method {
        Method::Cho => {
            let f = form_coalitions(&problem, &config)?;
            Ok(Allocated { assignment: f.assignment, plans: f.plans, costs: f.costs })
        }
        Method::Fm => {
            problem.only = Some(vec![domain.baseline_mode()]);
            let f = form_coalitions(&problem, &config)?;
            Ok(Allocated { assignment: f.assignment, plans: f.plans, costs: f.costs })
        }
        Method::Ga => {
            if problem.tasks.is_empty() || problem.agents.len() < problem.tasks.len() {
                return Err(CoalitionError::InfeasibleScenario(format!(
                    "{} agents cannot staff {} tasks",
                    problem.agents.len(),
                    problem.tasks.len()
                )));
            }
            let assignment =
                greedy_assignment(&problem.agents, &problem.tasks, |a, t| problem.agent_task_distance(a, t));
            let results: Vec<_> = assignment
                .iter()
                .collect::<Vec<_>>()
                .into_par_iter()
                .map(|(t, c)| (t, problem.actual(t, c)))
                .collect();
            let mut plans = BTreeMap::new();
            let mut costs = BTreeMap::new();
            for (t, r) in results {
                costs.insert(t, r.cost);
                if let Some(p) = r.plan {
                    plans.insert(t, p);
                }
            }
            Ok(Allocated { assignment, plans, costs })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::validate_assignment;
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    fn sizes(a: &Assignment) -> Vec<usize> {
        a.iter().map(|(_, c)| c.len()).collect()
    }

    #[test]
    fn collocated_agents_get_identity() {
        let a = greedy_assignment(&[0, 1, 2], &[0, 1, 2], |a, t| if a == t { 0.0 } else { 1.0 });
        for t in 0..3 {
            assert_eq!(a.coalition(t).unwrap().ids(), vec![t]);
        }
    }

    #[test]
    fn round_robin_staffs_every_task() {
        // agent 0 and 1 are both closest to task 0; task 1 still gets one in round one
        let d = |a: AgentId, t: TaskId| if t == 0 { a as f64 } else { 10.0 + a as f64 };
        let a = greedy_assignment(&[0, 1], &[0, 1], d);
        assert_eq!(a.coalition(0).unwrap().ids(), vec![0]);
        assert_eq!(a.coalition(1).unwrap().ids(), vec![1]);
    }

    #[test]
    fn four_agents_two_tasks_split_evenly() {
        let a = greedy_assignment(&[0, 1, 2, 3], &[0, 1], |a, t| (a as f64 - 3.0 * t as f64).abs());
        assert_eq!(sizes(&a), vec![2, 2]);
    }

    #[test]
    fn ties_go_to_lowest_agent_id() {
        let a = greedy_assignment(&[3, 1, 2], &[0], |_, _| 1.0);
        assert_eq!(a.coalition(0).unwrap().ids(), vec![1, 2, 3]);
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert!("astar".parse::<Method>().is_err());
    }

    proptest! {
        #[test]
        fn greedy_is_valid(n in 1usize..9, extra in 0usize..5, seed in any::<u64>()) {
            let m = n;
            let n = n + extra;
            let agents: Vec<AgentId> = (0..n).collect();
            let tasks: Vec<TaskId> = (0..m).collect();
            let d = |a: AgentId, t: TaskId| ((seed ^ (a as u64 * 31 + t as u64 * 17)).wrapping_mul(0x9E37_79B9_7F4A_7C15) >> 40) as f64;
            let a = greedy_assignment(&agents, &tasks, d);
            let all: BTreeSet<AgentId> = agents.iter().copied().collect();
            prop_assert!(validate_assignment(&a, &all, &tasks).is_ok());
            let s = sizes(&a);
            prop_assert!(s.iter().max().unwrap() - s.iter().min().unwrap() <= 1);
        }
    }
}
