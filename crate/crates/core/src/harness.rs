//! Episode execution: periodic re-allocation and re-planning around a
//! composed simulation, metrics, and file outputs.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::{allocate, Method};
use crate::domain::{Domain, SearchCache, SearchOutcome};
use crate::model::{
    cho_objective, compose_step, find_mode, validate_assignment, ActiveMode, AgentId, Assignment, Coalition,
    HybridPlan, ModeId, ModelError, SystemState, TaskId,
};
use crate::scenario::{Scenario, ScenarioError};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("simulation step failed at tick {tick}: {source}")]
    Step { tick: u64, source: ModelError },
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub domain: String,
    pub method: Method,
    pub seed: u64,
    pub solved: bool,
    /// Seconds until the last task was completed (tick cap time if unsolved).
    pub completion_time: f64,
    pub completion_tick: u64,
    pub per_task_cost: Vec<f64>,
    pub mean_cost: f64,
    pub max_cost: f64,
    pub objective: f64,
    pub mode_switch_count: u64,
    pub task_switch_count: u64,
    pub allocations: u64,
    pub replans: u64,
    pub failed_searches: u64,
    pub invariant_violations: u64,
    /// Not serialized, so that repeated runs write identical files.
    #[serde(skip)]
    pub wall_time: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub tick: u64,
    pub kind: &'static str,
    pub id: usize,
    pub x: f64,
    pub y: f64,
    pub extra: f64,
    pub mode: Option<ModeId>,
    pub task: Option<TaskId>,
}

#[derive(Debug, Clone)]
pub struct Episode {
    pub metrics: MetricsReport,
    pub trajectory: Vec<TrajectoryRecord>,
    /// Descriptions of runtime invariant failures (empty on a clean run).
    pub violations: Vec<String>,
}

// a task's current plan and the cursor into it
#[derive(Debug, Clone)]
struct Run {
    coalition: Coalition,
    plan: HybridPlan,
    step: usize,
    tick_in_step: u32,
}

impl Run {
    fn new(coalition: Coalition, plan: HybridPlan) -> Self {
        Self { coalition, plan, step: 0, tick_in_step: 0 }
    }

    fn current(&self) -> Option<&crate::model::PlanStep> {
        self.plan.steps.get(self.step)
    }

    fn advance(&mut self) {
        if let Some(dwell) = self.current().map(|s| s.dwell) {
            self.tick_in_step += 1;
            if self.tick_in_step >= dwell {
                self.step += 1;
                self.tick_in_step = 0;
            }
        }
    }
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Runs one episode of `method` on `scenario` (already seeded).
pub fn run_episode(scenario: &Scenario, method: Method) -> Result<Episode, HarnessError> {
    let domain = scenario.build()?;
    run_domain(domain.as_ref(), scenario, method)
}

/// Like [`run_episode`] with an already-built domain.
pub fn run_domain(domain: &dyn Domain, scenario: &Scenario, method: Method) -> Result<Episode, HarnessError> {
    let started = Instant::now();
    let cfg = &scenario.run;
    let agents = domain.agents();
    let all_agents: BTreeSet<AgentId> = agents.iter().copied().collect();
    let tasks = domain.tasks();
    let dt = domain.dt();
    let only: Option<Vec<ModeId>> = (method == Method::Fm).then(|| vec![domain.baseline_mode()]);

    let mut state = domain.initial_state();
    let mut done: BTreeMap<TaskId, bool> = tasks.iter().map(|&t| (t, domain.task_done(&state, t))).collect();
    let mut cost: BTreeMap<TaskId, f64> = tasks.iter().map(|&t| (t, 0.0)).collect();
    let mut runs: BTreeMap<TaskId, Run> = BTreeMap::new();
    let mut assignment = Assignment::default();
    let mut trajectory = Vec::new();
    let mut violations = Vec::new();
    let mut completion_tick = 0;
    let (mut allocations, mut replans, mut failed) = (0u64, 0u64, 0u64);
    let (mut mode_switches, mut task_switches) = (0u64, 0u64);
    let mut prev_modes: Option<BTreeMap<TaskId, Option<ModeId>>> = None;
    let mut prev_tasks: Option<BTreeMap<AgentId, TaskId>> = None;
    let mut tick: u64 = 0;
    let cache = SearchCache::new();

    let solved = loop {
        let open: Vec<TaskId> = tasks.iter().copied().filter(|t| !done[t]).collect();
        if open.is_empty() || tick >= cfg.tick_cap {
            log_tick(domain, &state, tick, &assignment, &BTreeMap::new(), &mut trajectory);
            break open.is_empty();
        }

        if tick % cfg.alloc_period == 0 {
            allocations += 1;
            match allocate(method, domain, &state, agents.clone(), open.clone(), cfg.seed, Some(&cache)) {
                Ok(a) => {
                    assignment = a.assignment;
                    failed += open.iter().filter(|t| !a.plans.contains_key(t)).count() as u64;
                    runs = assignment
                        .iter()
                        .map(|(t, c)| {
                            let plan = match a.plans.get(&t) {
                                Some(p) => p.clone(),
                                None => fallback(&cache, domain, t, c, &state, only.as_deref()),
                            };
                            (t, Run::new(c.clone(), plan))
                        })
                        .collect();
                }
                // keep the previous assignment and plans
                Err(e) => violations.push(format!("tick {tick}: allocation failed: {e}")),
            }
        } else if tick % cfg.plan_period == 0 {
            let fresh: Vec<(TaskId, SearchOutcome)> = runs
                .iter()
                .filter(|(t, _)| !done[*t])
                .collect::<Vec<_>>()
                .into_par_iter()
                .map(|(&t, r)| (t, cache.search(domain, t, &r.coalition, &state, only.as_deref(), domain.search_config())))
                .collect();
            for (t, out) in fresh {
                replans += 1;
                let c = runs[&t].coalition.clone();
                match out {
                    Ok((_, p)) => {
                        runs.insert(t, Run::new(c, p));
                    }
                    Err(nearest) => {
                        failed += 1;
                        // keep the last plan while it lasts, then head for the nearest node
                        if runs[&t].current().is_none() {
                            runs.insert(t, Run::new(c, nearest));
                        }
                    }
                }
            }
        }

        if let Err(v) = validate_assignment(&assignment, &all_agents, &assignment.tasks().collect::<Vec<_>>()) {
            violations.push(format!("tick {tick}: invalid assignment {v:?}"));
        }

        // active modes for open tasks; idle tasks fall back to the domain's idle step
        let mut modes_now: BTreeMap<TaskId, Option<ModeId>> = BTreeMap::new();
        let mut slices: BTreeMap<TaskId, Vec<usize>> = BTreeMap::new();
        for &t in &open {
            let Some(run) = runs.get(&t) else {
                modes_now.insert(t, None);
                continue;
            };
            modes_now.insert(t, run.current().map(|s| s.mode));
            slices.insert(t, domain.task_slice(t, &run.coalition));
        }
        let mut active = Vec::new();
        for (&t, m) in &modes_now {
            let (Some(id), Some(run)) = (m, runs.get(&t)) else { continue };
            let step = run.current().expect("mode implies step");
            let mode = find_mode(domain.modes(t), *id).expect("plan uses domain modes");
            cost.entry(t).and_modify(|c| *c += mode.step_cost(&state, &step.coalition, &step.param));
            active.push(ActiveMode {
                task: t,
                slice: &slices[&t],
                mode: mode.as_ref(),
                coalition: &step.coalition,
                param: &step.param,
            });
        }
        let mut next = compose_step(&state, &active).map_err(|source| HarnessError::Step { tick, source })?;
        for (&t, m) in &modes_now {
            if m.is_some() {
                continue;
            }
            let c = runs.get(&t).map(|r| r.coalition.clone()).unwrap_or_else(|| Coalition::new([]));
            let slice = domain.task_slice(t, &c);
            for (dim, v) in slice.iter().zip(domain.idle_step(&state, t, &c)) {
                next.values[*dim] = v;
            }
            *cost.get_mut(&t).unwrap() += dt;
        }

        if let Some(prev) = &prev_modes {
            if *prev != modes_now {
                mode_switches += 1;
            }
        }
        let agent_map = assignment.agent_map();
        if let Some(prev) = &prev_tasks {
            if *prev != agent_map {
                task_switches += 1;
            }
        }
        log_tick(domain, &state, tick, &assignment, &modes_now, &mut trajectory);
        prev_modes = Some(modes_now);
        prev_tasks = Some(agent_map);

        if !domain.state_safe(&next) {
            violations.push(format!("tick {tick}: unsafe state"));
        }
        if !domain.speed_ok(&state, &next) {
            violations.push(format!("tick {tick}: speed limit exceeded"));
        }
        for run in runs.values_mut() {
            run.advance();
        }
        state = next;
        tick += 1;
        for &t in &open {
            if domain.task_done(&state, t) {
                done.insert(t, true);
                completion_tick = tick;
            }
        }
    };

    let per_task_cost: Vec<f64> = cost.values().copied().collect();
    let metrics = MetricsReport {
        domain: domain.name().to_string(),
        method,
        seed: cfg.seed,
        solved,
        completion_time: if solved { completion_tick } else { tick } as f64 * dt,
        completion_tick: if solved { completion_tick } else { tick },
        mean_cost: mean(&per_task_cost),
        max_cost: per_task_cost.iter().copied().fold(0.0, f64::max),
        objective: cho_objective(&per_task_cost).unwrap_or(f64::INFINITY),
        per_task_cost,
        mode_switch_count: mode_switches,
        task_switch_count: task_switches,
        allocations,
        replans,
        failed_searches: failed,
        invariant_violations: violations.len() as u64,
        wall_time: started.elapsed().as_secs_f64(),
    };
    Ok(Episode { metrics, trajectory, violations })
}

// best partial plan for a coalition whose search failed
fn fallback(
    cache: &SearchCache,
    domain: &dyn Domain,
    task: TaskId,
    coalition: &Coalition,
    state: &SystemState,
    only: Option<&[ModeId]>,
) -> HybridPlan {
    if coalition.is_empty() {
        return HybridPlan::default();
    }
    match cache.search(domain, task, coalition, state, only, domain.search_config()) {
        Ok((_, p)) | Err(p) => p,
    }
}

fn log_tick(
    domain: &dyn Domain,
    state: &SystemState,
    tick: u64,
    assignment: &Assignment,
    modes: &BTreeMap<TaskId, Option<ModeId>>,
    out: &mut Vec<TrajectoryRecord>,
) {
    let n = domain.agents().len();
    for (i, row) in domain.trajectory(state).into_iter().enumerate() {
        let task = if i < n { assignment.task_of(row.id) } else { Some(row.id) };
        let mode = task.and_then(|t| modes.get(&t).copied().flatten());
        out.push(TrajectoryRecord { tick, kind: row.kind, id: row.id, x: row.x, y: row.y, extra: row.extra, mode, task });
    }
}

pub const TRAJECTORY_HEADER: &str = "tick,kind,id,x,y,extra,mode,task";

pub fn trajectory_csv(rows: &[TrajectoryRecord]) -> String {
    let mut s = String::from(TRAJECTORY_HEADER);
    s.push('\n');
    let opt = |v: Option<usize>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{:.6},{:.6},{:.6},{},{}",
            r.tick,
            r.kind,
            r.id,
            r.x,
            r.y,
            r.extra,
            opt(r.mode),
            opt(r.task)
        );
    }
    s
}

fn write(path: PathBuf, text: &str) -> Result<PathBuf, HarnessError> {
    std::fs::write(&path, text).map_err(|source| HarnessError::Io { path: path.clone(), source })?;
    Ok(path)
}

/// Writes `metrics.json`, `trajectory.csv` and `run_config.json` into `dir`.
pub fn emit_outputs(
    scenario: &Scenario,
    method: Method,
    episode: &Episode,
    dir: &Path,
) -> Result<Vec<PathBuf>, HarnessError> {
    std::fs::create_dir_all(dir).map_err(|source| HarnessError::Io { path: dir.to_path_buf(), source })?;
    #[derive(Serialize)]
    struct RunConfigFile<'a> {
        method: Method,
        scenario: &'a Scenario,
    }
    let metrics = serde_json::to_string_pretty(&episode.metrics).expect("metrics serialize") + "\n";
    let config = serde_json::to_string_pretty(&RunConfigFile { method, scenario }).expect("config serializes") + "\n";
    Ok(vec![
        write(dir.join("metrics.json"), &metrics)?,
        write(dir.join("trajectory.csv"), &trajectory_csv(&episode.trajectory))?,
        write(dir.join("run_config.json"), &config)?,
    ])
}

/// Aggregate over seeds for one (scenario, method) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub scenario: String,
    pub method: Method,
    pub runs: usize,
    pub solved: usize,
    pub failed_runs: usize,
    pub mean_time: f64,
    pub min_time: f64,
    pub max_time: f64,
    pub mean_cost: f64,
    pub mean_objective: f64,
}

/// One run request in a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub scenario: PathBuf,
    pub seeds: Vec<u64>,
    #[serde(default = "all_methods")]
    pub methods: Vec<Method>,
}

fn all_methods() -> Vec<Method> {
    Method::ALL.to_vec()
}

/// Thread pool honouring `CHO_THREADS`.
pub fn sweep_pool() -> rayon::ThreadPool {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = std::env::var("CHO_THREADS").ok().and_then(|v| v.parse::<usize>().ok()).filter(|&n| n > 0) {
        b = b.num_threads(n);
    }
    b.build().expect("thread pool")
}

/// Runs every (scenario, method, seed) combination; per-run errors are
/// counted, never fatal.
pub fn compare_methods(
    scenarios: &[(String, Scenario)],
    methods: &[Method],
    seeds: &[u64],
) -> Vec<(ComparisonRow, Vec<Result<MetricsReport, String>>)> {
    let jobs: Vec<(usize, Method, u64)> = (0..scenarios.len())
        .flat_map(|i| methods.iter().flat_map(move |&m| seeds.iter().map(move |&s| (i, m, s))))
        .collect();
    let results: Vec<Result<MetricsReport, String>> = sweep_pool().install(|| {
        jobs.par_iter()
            .map(|&(i, m, s)| {
                run_episode(&scenarios[i].1.seeded(s), m).map(|e| e.metrics).map_err(|e| e.to_string())
            })
            .collect()
    });
    let mut out = Vec::new();
    let mut it = results.into_iter();
    for (name, _) in scenarios {
        for &m in methods {
            let runs: Vec<_> = it.by_ref().take(seeds.len()).collect();
            out.push((summarize(name, m, &runs), runs));
        }
    }
    out
}

pub fn summarize(name: &str, method: Method, runs: &[Result<MetricsReport, String>]) -> ComparisonRow {
    let ok: Vec<&MetricsReport> = runs.iter().filter_map(|r| r.as_ref().ok()).collect();
    let times: Vec<f64> = ok.iter().map(|m| m.completion_time).collect();
    ComparisonRow {
        scenario: name.to_string(),
        method,
        runs: runs.len(),
        solved: ok.iter().filter(|m| m.solved).count(),
        failed_runs: runs.len() - ok.len(),
        mean_time: mean(&times),
        min_time: times.iter().copied().fold(f64::INFINITY, f64::min),
        max_time: times.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        mean_cost: mean(&ok.iter().map(|m| m.mean_cost).collect::<Vec<_>>()),
        mean_objective: mean(&ok.iter().map(|m| m.objective).collect::<Vec<_>>()),
    }
}

pub fn comparison_table(rows: &[ComparisonRow]) -> String {
    let mut s = format!(
        "{:<24} {:<6} {:>5} {:>6} {:>6} {:>10} {:>10} {:>10} {:>10}\n",
        "scenario", "method", "runs", "solved", "failed", "mean_t", "min_t", "max_t", "mean_cost"
    );
    for r in rows {
        let _ = writeln!(
            s,
            "{:<24} {:<6} {:>5} {:>6} {:>6} {:>10.3} {:>10.3} {:>10.3} {:>10.4}",
            r.scenario, r.method, r.runs, r.solved, r.failed_runs, r.mean_time, r.min_time, r.max_time, r.mean_cost
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_log_is_header_only() {
        assert_eq!(trajectory_csv(&[]), "tick,kind,id,x,y,extra,mode,task\n");
    }

    #[test]
    fn metrics_round_trip() {
        let m = MetricsReport {
            domain: "capture".into(),
            method: Method::Ga,
            seed: 3,
            solved: true,
            completion_time: 1.5,
            completion_tick: 30,
            per_task_cost: vec![1.0, 2.0],
            mean_cost: 1.5,
            max_cost: 2.0,
            objective: 3.5,
            mode_switch_count: 4,
            task_switch_count: 1,
            allocations: 2,
            replans: 4,
            failed_searches: 0,
            invariant_violations: 0,
            wall_time: 0.0,
        };
        let text = serde_json::to_string(&m).unwrap();
        assert!(!text.contains("wall_time"));
        assert_eq!(serde_json::from_str::<MetricsReport>(&text).unwrap(), m);
    }

    #[test]
    fn single_run_summary_equals_run() {
        let m = MetricsReport {
            domain: "t".into(),
            method: Method::Cho,
            seed: 0,
            solved: true,
            completion_time: 2.0,
            completion_tick: 20,
            per_task_cost: vec![3.0],
            mean_cost: 3.0,
            max_cost: 3.0,
            objective: 6.0,
            mode_switch_count: 0,
            task_switch_count: 0,
            allocations: 1,
            replans: 0,
            failed_searches: 0,
            invariant_violations: 0,
            wall_time: 0.0,
        };
        let r = summarize("t", Method::Cho, &[Ok(m)]);
        assert_eq!((r.mean_time, r.min_time, r.max_time, r.mean_cost), (2.0, 2.0, 2.0, 3.0));
    }
}
