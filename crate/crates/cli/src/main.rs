use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::Parser;

use cho_core::baselines::Method;
use cho_core::harness::{comparison_table, compare_methods, emit_outputs, run_episode, SweepEntry};
use cho_core::scenario::{generate, Scenario};

/// Run coalition-based hybrid planning episodes on transport and capture scenarios.
#[derive(Debug, Parser)]
#[command(name = "cho", version)]
struct Args {
    /// Scenario JSON file.
    #[arg(long, required_unless_present_any = ["sweep", "generate"])]
    scenario: Option<PathBuf>,
    /// Planning method.
    #[arg(long, default_value = "cho")]
    method: Method,
    /// Seed (overrides the scenario's seed and drives start jitter).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for metrics.json, trajectory.csv and run_config.json.
    #[arg(long)]
    out: Option<PathBuf>,
    /// JSON list of {scenario, seeds, methods} entries to compare.
    #[arg(long, conflicts_with = "scenario")]
    sweep: Option<PathBuf>,
    /// Print a bundled scenario ("transport" or "capture") with all defaults.
    #[arg(long, conflicts_with_all = ["scenario", "sweep"])]
    generate: Option<String>,
    /// Suppress the summary on stdout.
    #[arg(long)]
    quiet: bool,
}

fn single(args: &Args, path: &Path) -> Result<bool> {
    let base = Scenario::load(path).with_context(|| format!("loading {}", path.display()))?;
    let scenario = base.seeded(args.seed.unwrap_or(base.run.seed));
    let episode = run_episode(&scenario, args.method)?;
    if let Some(dir) = &args.out {
        emit_outputs(&scenario, args.method, &episode, dir)?;
    }
    if !args.quiet {
        let m = &episode.metrics;
        println!(
            "{} {} seed {}: {} in {:.2} s ({} ticks), mean cost {:.4}, objective {:.4}, {} mode / {} task switches, {:.1} s wall",
            m.domain,
            m.method,
            m.seed,
            if m.solved { "solved" } else { "unsolved" },
            m.completion_time,
            m.completion_tick,
            m.mean_cost,
            m.objective,
            m.mode_switch_count,
            m.task_switch_count,
            m.wall_time
        );
        for v in &episode.violations {
            eprintln!("warning: {v}");
        }
    }
    Ok(episode.metrics.solved)
}

fn sweep(args: &Args, path: &Path) -> Result<bool> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let entries: Vec<SweepEntry> = serde_json::from_str(&text).context("parsing sweep file")?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut rows = Vec::new();
    let mut all_solved = true;
    for e in &entries {
        let p = if e.scenario.is_absolute() { e.scenario.clone() } else { base.join(&e.scenario) };
        let s = Scenario::load(&p).with_context(|| format!("loading {}", p.display()))?;
        let name = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        for (row, runs) in compare_methods(&[(name, s)], &e.methods, &e.seeds) {
            all_solved &= runs.iter().all(|r| r.as_ref().map(|m| m.solved).unwrap_or(false));
            rows.push(row);
        }
    }
    if let Some(dir) = &args.out {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("comparison.json"), serde_json::to_string_pretty(&rows)? + "\n")?;
        std::fs::write(dir.join("comparison.txt"), comparison_table(&rows))?;
    }
    if !args.quiet {
        print!("{}", comparison_table(&rows));
    }
    Ok(all_solved)
}

fn run(args: &Args) -> Result<bool> {
    if let Some(domain) = &args.generate {
        let text = generate(domain)?.to_json() + "\n";
        match &args.out {
            Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display()))?,
            None => print!("{text}"),
        }
        return Ok(true);
    }
    match (&args.sweep, &args.scenario) {
        (Some(p), _) => sweep(args, p),
        (None, Some(p)) => single(args, p),
        (None, None) => bail!("one of --scenario, --sweep or --generate is required"),
    }
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(&args) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
