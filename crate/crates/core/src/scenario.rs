//! Scenario files: one JSON document naming the domain, its geometry and
//! every run setting explicitly.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::capture::{self, CaptureDomain, CaptureScenario};
use crate::domain::Domain;
use crate::grid::{Point, Workspace};
use crate::transport::{self, TransportDomain, TransportScenario};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("invalid scenario ({rule}): {detail}")]
    Validation { rule: &'static str, detail: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn invalid(rule: &'static str, detail: impl Into<String>) -> ScenarioError {
    ScenarioError::Validation { rule, detail: detail.into() }
}

/// Episode settings shared by all domains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// Ticks between re-allocations.
    pub alloc_period: u64,
    /// Ticks between re-plans for unchanged coalitions.
    pub plan_period: u64,
    pub tick_cap: u64,
    pub seed: u64,
    /// Per-seed uniform perturbation of agent start positions (metres).
    pub start_jitter: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self { alloc_period: 15, plan_period: 5, tick_cap: 10_000, seed: 0, start_jitter: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "domain", rename_all = "lowercase")]
pub enum DomainSpec {
    Transport(TransportScenario),
    Capture(CaptureScenario),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub run: RunConfig,
    #[serde(flatten)]
    pub spec: DomainSpec,
}

const DOMAINS: [&str; 2] = ["transport", "capture"];

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let parse_err = |e: serde_json::Error| ScenarioError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        };
        let value: serde_json::Value = serde_json::from_str(text).map_err(parse_err)?;
        match value.get("domain").and_then(|d| d.as_str()) {
            Some(d) if DOMAINS.contains(&d) => {}
            Some(d) => return Err(invalid("unknown domain", d)),
            None => return Err(invalid("unknown domain", "missing \"domain\" field")),
        }
        let scenario: Scenario = serde_json::from_str(text).map_err(parse_err)?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn domain_name(&self) -> &'static str {
        match self.spec {
            DomainSpec::Transport(_) => "transport",
            DomainSpec::Capture(_) => "capture",
        }
    }

    fn workspace(&self) -> &Workspace {
        match &self.spec {
            DomainSpec::Transport(t) => &t.workspace,
            DomainSpec::Capture(c) => &c.workspace,
        }
    }

    fn agent_starts(&self) -> &[Point] {
        match &self.spec {
            DomainSpec::Transport(t) => &t.agents,
            DomainSpec::Capture(c) => &c.pursuers,
        }
    }

    fn task_count(&self) -> usize {
        match &self.spec {
            DomainSpec::Transport(t) => t.boxes.len(),
            DomainSpec::Capture(c) => c.evaders.len(),
        }
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let r = &self.run;
        if r.alloc_period == 0 || r.plan_period == 0 || r.tick_cap == 0 {
            return Err(invalid("positive periods", "alloc_period, plan_period and tick_cap must be at least 1"));
        }
        if !(r.start_jitter >= 0.0 && r.start_jitter.is_finite()) {
            return Err(invalid("start jitter", "must be a finite non-negative distance"));
        }
        let ws = self.workspace();
        let b = &ws.bounds;
        if !(b.width() > 0.0 && b.height() > 0.0) {
            return Err(invalid("bounds", "workspace must have positive area"));
        }
        if !(ws.grid_resolution > 0.0) {
            return Err(invalid("grid resolution", "must be positive"));
        }
        for (i, o) in ws.obstacles.iter().enumerate() {
            if !(b.contains(o.min) && b.contains(o.max)) {
                return Err(invalid("obstacle inside bounds", format!("obstacle {i} leaves the workspace")));
            }
        }
        for (i, p) in self.agent_starts().iter().enumerate() {
            if !b.contains(*p) {
                return Err(invalid("agent inside bounds", format!("agent {i} starts outside the workspace")));
            }
        }
        let dt = match &self.spec {
            DomainSpec::Transport(t) => {
                for (i, bx) in t.boxes.iter().enumerate() {
                    if !b.contains([bx.start[0], bx.start[1]]) || !b.contains(bx.goal) {
                        return Err(invalid("box inside bounds", format!("box {i} start or goal is outside")));
                    }
                }
                t.dt
            }
            DomainSpec::Capture(c) => {
                for (i, e) in c.evaders.iter().enumerate() {
                    if !b.contains(*e) {
                        return Err(invalid("evader inside bounds", format!("evader {i} starts outside")));
                    }
                }
                c.dt
            }
        };
        if !(dt > 0.0) {
            return Err(invalid("time step", "dt must be positive"));
        }
        let (n, m) = (self.agent_starts().len(), self.task_count());
        if m == 0 || n < m {
            return Err(invalid("agents cover tasks", format!("{n} agents for {m} tasks")));
        }
        Ok(())
    }

    /// Copy with the seed set and agent starts perturbed by the seeded
    /// jitter; perturbations landing in collision are redrawn.
    pub fn seeded(&self, seed: u64) -> Scenario {
        let mut s = self.clone();
        s.run.seed = seed;
        let j = s.run.start_jitter;
        if j <= 0.0 {
            return s;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ws = self.workspace().clone();
        let starts: Vec<Point> = match &mut s.spec {
            DomainSpec::Transport(t) => t.agents.clone(),
            DomainSpec::Capture(c) => c.pursuers.clone(),
        };
        let mut moved = Vec::with_capacity(starts.len());
        for p in starts {
            let mut q = p;
            for _ in 0..50 {
                let c = [p[0] + rng.gen_range(-j..=j), p[1] + rng.gen_range(-j..=j)];
                if ws.disc_free(c, 0.05) {
                    q = c;
                    break;
                }
            }
            moved.push(q);
        }
        match &mut s.spec {
            DomainSpec::Transport(t) => t.agents = moved,
            DomainSpec::Capture(c) => c.pursuers = moved,
        }
        s
    }

    pub fn build(&self) -> Result<Box<dyn Domain>, ScenarioError> {
        match &self.spec {
            DomainSpec::Transport(t) => TransportDomain::new(t.clone())
                .map(|d| Box::new(d) as Box<dyn Domain>)
                .map_err(|e| invalid("transport geometry", e.to_string())),
            DomainSpec::Capture(c) => CaptureDomain::new(c.clone())
                .map(|d| Box::new(d) as Box<dyn Domain>)
                .map_err(|e| invalid("capture geometry", e.to_string())),
        }
    }
}

/// Bundled desk-scale scenarios with every default written out.
pub fn generate(domain: &str) -> Result<Scenario, ScenarioError> {
    match domain {
        "transport" => Ok(Scenario {
            run: RunConfig { start_jitter: 0.2, ..RunConfig::default() },
            spec: DomainSpec::Transport(transport::demo_scenario()),
        }),
        "capture" => Ok(Scenario {
            run: RunConfig { start_jitter: 0.1, ..RunConfig::default() },
            spec: DomainSpec::Capture(capture::demo_scenario()),
        }),
        other => Err(invalid("unknown domain", other)),
    }
}
