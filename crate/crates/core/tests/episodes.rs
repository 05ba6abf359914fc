use std::collections::BTreeMap;

use cho_core::baselines::Method;
use cho_core::harness::{emit_outputs, run_episode, trajectory_csv, Episode, MetricsReport, TRAJECTORY_HEADER};
use cho_core::model::cho_objective;
use cho_core::scenario::{generate, DomainSpec, Scenario};

fn capture(seed: u64) -> Scenario {
    generate("capture").unwrap().seeded(seed)
}

fn run(s: &Scenario, m: Method) -> Episode {
    run_episode(s, m).unwrap()
}

#[test]
fn already_solved_start_finishes_at_tick_zero() {
    let mut s = generate("capture").unwrap();
    if let DomainSpec::Capture(c) = &mut s.spec {
        c.evaders = vec![[c.pursuers[0][0] + 0.1, c.pursuers[0][1]], [c.pursuers[1][0], c.pursuers[1][1] + 0.05]];
    }
    for m in Method::ALL {
        let e = run(&s, m);
        let r = &e.metrics;
        assert!(r.solved);
        assert_eq!((r.completion_tick, r.completion_time), (0, 0.0));
        assert_eq!((r.mode_switch_count, r.task_switch_count, r.allocations, r.replans), (0, 0, 0, 0));
        assert_eq!(r.per_task_cost, vec![0.0, 0.0]);
        // one logged tick: four pursuers and two evaders
        assert_eq!(e.trajectory.len(), 6);
    }
}

#[test]
fn repeated_runs_are_identical() {
    let s = capture(3);
    let a = run(&s, Method::Cho);
    let b = run(&s, Method::Cho);
    assert_eq!(serde_json::to_string(&a.metrics).unwrap(), serde_json::to_string(&b.metrics).unwrap());
    assert_eq!(trajectory_csv(&a.trajectory), trajectory_csv(&b.trajectory));
}

#[test]
fn metrics_are_consistent() {
    for m in Method::ALL {
        let e = run(&capture(1), m);
        let r = &e.metrics;
        assert!(r.solved, "{m} failed to capture");
        assert!(e.violations.is_empty(), "{:?}", e.violations);
        assert_eq!(r.objective, cho_objective(&r.per_task_cost).unwrap());
        assert_eq!(r.completion_time, r.completion_tick as f64 * 0.05);
        let mean = r.per_task_cost.iter().sum::<f64>() / r.per_task_cost.len() as f64;
        assert!((r.mean_cost - mean).abs() < 1e-12);
        assert_eq!(r.max_cost, r.per_task_cost.iter().copied().fold(0.0, f64::max));
    }
}

#[test]
fn trajectory_has_one_row_per_entity_per_tick() {
    let e = run(&capture(2), Method::Cho);
    let last = e.metrics.completion_tick;
    let mut per_tick: BTreeMap<u64, usize> = BTreeMap::new();
    for r in &e.trajectory {
        *per_tick.entry(r.tick).or_default() += 1;
    }
    assert_eq!(per_tick.keys().copied().collect::<Vec<_>>(), (0..=last).collect::<Vec<_>>());
    assert!(per_tick.values().all(|&n| n == 6));
}

#[test]
fn switch_counters_match_trajectory() {
    let e = run(&capture(4), Method::Cho);
    let last = e.metrics.completion_tick;
    // modes are keyed by the task rows; the final logged tick carries no modes
    let mut modes: BTreeMap<u64, Vec<Option<usize>>> = BTreeMap::new();
    let mut tasks: BTreeMap<u64, Vec<Option<usize>>> = BTreeMap::new();
    for r in e.trajectory.iter().filter(|r| r.tick < last) {
        match r.kind {
            "evader" => modes.entry(r.tick).or_default().push(r.mode),
            _ => tasks.entry(r.tick).or_default().push(r.task),
        }
    }
    let changes = |m: &BTreeMap<u64, Vec<Option<usize>>>| {
        let v: Vec<_> = m.values().collect();
        v.windows(2).filter(|w| w[0] != w[1]).count() as u64
    };
    // tasks captured mid-episode drop out of the mode map, which also counts as a change
    assert!(changes(&modes) <= e.metrics.mode_switch_count);
    assert_eq!(changes(&tasks), e.metrics.task_switch_count);
}

#[test]
fn outputs_round_trip_and_are_reproducible() {
    let s = capture(5);
    let e = run(&s, Method::Ga);
    let dir = tempfile::tempdir().unwrap();
    let first = emit_outputs(&s, Method::Ga, &e, dir.path()).unwrap();
    let names: Vec<_> = first.iter().map(|p| p.file_name().unwrap().to_string_lossy().into_owned()).collect();
    assert_eq!(names, ["metrics.json", "trajectory.csv", "run_config.json"]);

    let text = std::fs::read_to_string(dir.path().join("metrics.json")).unwrap();
    let back: MetricsReport = serde_json::from_str(&text).unwrap();
    assert_eq!(back, MetricsReport { wall_time: 0.0, ..e.metrics.clone() });

    let csv = std::fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some(TRAJECTORY_HEADER));
    assert_eq!(csv.lines().count(), e.trajectory.len() + 1);
    assert!(!csv.contains('\r'));

    let config: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("run_config.json")).unwrap()).unwrap();
    assert_eq!(config["method"], "ga");
    assert_eq!(config["scenario"]["run"]["seed"], 5);
    let restored: Scenario = serde_json::from_value(config["scenario"].clone()).unwrap();
    assert_eq!(restored, s);

    // a fresh run of the same triple writes the same bytes
    let again = tempfile::tempdir().unwrap();
    emit_outputs(&s, Method::Ga, &run(&s, Method::Ga), again.path()).unwrap();
    for name in &names {
        assert_eq!(std::fs::read(dir.path().join(name)).unwrap(), std::fs::read(again.path().join(name)).unwrap());
    }
}

#[test]
fn empty_log_writes_header_only() {
    assert_eq!(trajectory_csv(&[]), format!("{TRAJECTORY_HEADER}\n"));
}

#[test]
fn tick_cap_reports_unsolved() {
    let mut s = capture(0);
    s.run.tick_cap = 3;
    let r = run(&s, Method::Cho).metrics;
    assert!(!r.solved);
    assert_eq!(r.completion_tick, 3);
    assert!((r.completion_time - 0.15).abs() < 1e-12);
}

#[test]
fn transport_episode_completes_cleanly() {
    let s = generate("transport").unwrap().seeded(0);
    let e = run(&s, Method::Cho);
    assert!(e.metrics.solved);
    assert!(e.violations.is_empty(), "{:?}", e.violations);
    assert_eq!(e.metrics.domain, "transport");
    // two boxes and four agents per tick
    assert_eq!(e.trajectory.len() as u64, 6 * (e.metrics.completion_tick + 1));
}
