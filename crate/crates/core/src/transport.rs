//! Collaborative box pushing: planar rigid boxes pushed at fixed contact
//! points by first-order agents.

use std::collections::HashMap;
use std::f64::consts::{FRAC_PI_2, PI};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{Domain, TrajRow};
use crate::grid::{dist, geodesic, Cell, DistanceField, OccupancyGrid, Point, Rect, Workspace};
use crate::model::{AgentId, Coalition, Mode, ModeId, ModeRef, ParamBounds, SystemState, TaskId};
use crate::search::{HybridProblem, Lambda, SearchConfig};

#[derive(Debug, Error, PartialEq)]
pub enum TransportError {
    #[error("box {0} starts in collision or outside the workspace")]
    BoxInCollision(usize),
    #[error("goal of box {0} is not reachable on the grid")]
    GoalUnreachable(usize),
    #[error("scenario needs at least one agent and one box")]
    Empty,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TransportParams {
    pub mass: f64,
    pub damping: f64,
    pub f_max: f64,
    pub box_length: f64,
    pub box_width: f64,
    pub agent_speed: f64,
    pub attach_tol: f64,
    pub goal_tol: f64,
    pub effort_weight: f64,
    pub align_weight: f64,
    pub lookahead: f64,
}

impl Default for TransportParams {
    fn default() -> Self {
        Self {
            mass: 1.0,
            damping: 2.0,
            f_max: 2.0,
            box_length: 1.0,
            box_width: 0.5,
            agent_speed: 1.0,
            attach_tol: 0.05,
            goal_tol: 0.15,
            effort_weight: 0.1,
            align_weight: 0.2,
            lookahead: 1.0,
        }
    }
}

impl TransportParams {
    pub fn inertia(&self) -> f64 {
        self.mass * (self.box_length.powi(2) + self.box_width.powi(2)) / 12.0
    }

    pub fn half_extents(&self) -> Point {
        [self.box_length / 2.0, self.box_width / 2.0]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxTask {
    /// Initial pose `[x, y, psi]`.
    pub start: [f64; 3],
    pub goal: Point,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransportScenario {
    pub workspace: Workspace,
    pub dt: f64,
    pub agents: Vec<Point>,
    pub boxes: Vec<BoxTask>,
    #[serde(default)]
    pub params: TransportParams,
    #[serde(default = "default_transport_search")]
    pub solver: SearchConfig,
}

pub fn default_transport_search() -> SearchConfig {
    let mut c = SearchConfig {
        lambda: Lambda::Fixed(0.5),
        dedup_radius: 0.3,
        dwell: 10,
        neighborhood: 1.2,
        node_cap: 4000,
        refine_iters: 1,
        ..SearchConfig::default()
    };
    c.solver.max_iters = 3;
    c
}

pub fn wrap_angle(a: f64) -> f64 {
    let r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r - 2.0 * PI
    } else {
        r
    }
}

fn rot(psi: f64, v: Point) -> Point {
    let (s, c) = psi.sin_cos();
    [c * v[0] - s * v[1], s * v[0] + c * v[1]]
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BoxState {
    pub x: f64,
    pub y: f64,
    pub psi: f64,
    pub vx: f64,
    pub vy: f64,
    pub omega: f64,
}

impl BoxState {
    pub fn at(x: f64, y: f64, psi: f64) -> Self {
        Self { x, y, psi: wrap_angle(psi), ..Self::default() }
    }

    pub fn from_slice(v: &[f64]) -> Self {
        Self { x: v[0], y: v[1], psi: v[2], vx: v[3], vy: v[4], omega: v[5] }
    }

    pub fn to_array(self) -> [f64; 6] {
        [self.x, self.y, self.psi, self.vx, self.vy, self.omega]
    }

    pub fn pos(&self) -> Point {
        [self.x, self.y]
    }

    /// World position of a box-frame offset.
    pub fn world(&self, offset: Point) -> Point {
        let r = rot(self.psi, offset);
        [self.x + r[0], self.y + r[1]]
    }

    pub fn corners(&self, half: Point) -> [Point; 4] {
        [
            self.world([-half[0], -half[1]]),
            self.world([half[0], -half[1]]),
            self.world([half[0], half[1]]),
            self.world([-half[0], half[1]]),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Contact {
    pub offset: Point,
    pub normal: Point,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PushKind {
    LongSide,
    ShortSide,
    Diagonal,
}

impl PushKind {
    pub const ALL: [PushKind; 3] = [PushKind::LongSide, PushKind::ShortSide, PushKind::Diagonal];

    pub fn mode_id(self) -> ModeId {
        match self {
            PushKind::LongSide => 1,
            PushKind::ShortSide => 2,
            PushKind::Diagonal => 3,
        }
    }

    pub fn from_id(id: ModeId) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.mode_id() == id)
    }

    pub fn name(self) -> &'static str {
        match self {
            PushKind::LongSide => "long_side",
            PushKind::ShortSide => "short_side",
            PushKind::Diagonal => "diagonal",
        }
    }

    /// Contact points on the box perimeter with inward normals.
    pub fn contacts(self, half: Point) -> Vec<Contact> {
        let (hx, hy) = (half[0], half[1]);
        match self {
            PushKind::LongSide => vec![
                Contact { offset: [-0.6 * hx, -hy], normal: [0.0, 1.0] },
                Contact { offset: [0.6 * hx, -hy], normal: [0.0, 1.0] },
            ],
            PushKind::ShortSide => vec![
                Contact { offset: [-hx, -0.6 * hy], normal: [1.0, 0.0] },
                Contact { offset: [-hx, 0.6 * hy], normal: [1.0, 0.0] },
            ],
            PushKind::Diagonal => {
                let n = (hx * hx + hy * hy).sqrt();
                [[-hx, -hy], [hx, -hy], [hx, hy], [-hx, hy]]
                    .into_iter()
                    .map(|c| Contact { offset: c, normal: [-c[0] / n, -c[1] / n] })
                    .collect()
            }
        }
    }

    pub fn required_agents(self) -> usize {
        match self {
            PushKind::Diagonal => 4,
            _ => 2,
        }
    }

    /// Discrete force patterns tried before refinement.
    pub fn primitives(self, f_max: f64) -> Vec<Vec<f64>> {
        match self {
            PushKind::LongSide | PushKind::ShortSide => vec![
                vec![0.25 * f_max, 0.25 * f_max],
                vec![0.5 * f_max, 0.5 * f_max],
                vec![f_max, f_max],
                vec![f_max, 0.25 * f_max],
                vec![0.25 * f_max, f_max],
            ],
            // uniform forces through the centre cancel, so push with one side
            PushKind::Diagonal => {
                let mut out = Vec::new();
                for level in [0.5, 1.0] {
                    for pair in [(0, 1), (1, 2), (2, 3), (3, 0)] {
                        let mut f = vec![0.0; 4];
                        f[pair.0] = level * f_max;
                        f[pair.1] = level * f_max;
                        out.push(f);
                    }
                }
                out
            }
        }
    }
}

/// One semi-implicit Euler step of the pushed box.
pub fn box_dynamics(b: &BoxState, contacts: &[Contact], forces: &[f64], p: &TransportParams, dt: f64) -> BoxState {
    let mut f = [0.0, 0.0];
    let mut tau = 0.0;
    for (c, &fi) in contacts.iter().zip(forces) {
        let n = rot(b.psi, c.normal);
        let r = rot(b.psi, c.offset);
        let fw = [n[0] * fi, n[1] * fi];
        f[0] += fw[0];
        f[1] += fw[1];
        tau += r[0] * fw[1] - r[1] * fw[0];
    }
    let vx = b.vx + dt * (f[0] / p.mass - p.damping * b.vx);
    let vy = b.vy + dt * (f[1] / p.mass - p.damping * b.vy);
    let omega = b.omega + dt * (tau / p.inertia() - p.damping * b.omega);
    BoxState { x: b.x + dt * vx, y: b.y + dt * vy, psi: wrap_angle(b.psi + dt * omega), vx, vy, omega }
}

pub fn transport_goal(b: &BoxState, target: Point, tol_pos: f64) -> bool {
    dist(b.pos(), target) <= tol_pos
}

/// Summed agent-to-box distance plus box-to-goal distance.
pub fn transport_estimate(agents: &[Point], box_pos: Point, goal: Point) -> f64 {
    agents.iter().map(|a| dist(*a, box_pos)).sum::<f64>() + dist(box_pos, goal)
}

/// Distance to the waypoint plus an alignment penalty on the heading error.
pub fn transport_hl(pos: Point, psi: f64, waypoint: Point, heading: f64, w_a: f64) -> f64 {
    dist(pos, waypoint) + w_a * (1.0 - (psi - heading).cos())
}

/// Gradient of [`transport_hl`] with respect to `(x, y, psi)`.
pub fn transport_hl_grad(pos: Point, psi: f64, waypoint: Point, heading: f64, w_a: f64) -> [f64; 3] {
    let d = dist(pos, waypoint);
    let (gx, gy) = if d > 0.0 { ((pos[0] - waypoint[0]) / d, (pos[1] - waypoint[1]) / d) } else { (0.0, 0.0) };
    [gx, gy, w_a * (psi - heading).sin()]
}

/// Maximum steady-state box speed over all modes and force vertices.
pub fn max_box_speed(p: &TransportParams) -> f64 {
    let mut best: f64 = 0.0;
    for kind in PushKind::ALL {
        let contacts = kind.contacts(p.half_extents());
        for mask in 0u32..(1 << contacts.len()) {
            let mut f = [0.0, 0.0];
            for (i, c) in contacts.iter().enumerate() {
                if mask & (1 << i) != 0 {
                    f[0] += c.normal[0] * p.f_max;
                    f[1] += c.normal[1] * p.f_max;
                }
            }
            best = best.max((f[0] * f[0] + f[1] * f[1]).sqrt() / (p.mass * p.damping));
        }
    }
    best
}

/// Lowest running cost per metre of steady-state pushing, over a grid of
/// force patterns in every mode, with a 10% margin for the sampling.
pub fn min_cost_per_metre(p: &TransportParams) -> f64 {
    const LEVELS: usize = 8;
    let mut best = f64::INFINITY;
    for kind in PushKind::ALL {
        let contacts = kind.contacts(p.half_extents());
        let k = contacts.len();
        for code in 0..(LEVELS + 1).pow(k as u32) {
            let mut c = code;
            let mut f = [0.0, 0.0];
            let mut effort = 0.0;
            for ct in &contacts {
                let fi = (c % (LEVELS + 1)) as f64 / LEVELS as f64 * p.f_max;
                c /= LEVELS + 1;
                f[0] += ct.normal[0] * fi;
                f[1] += ct.normal[1] * fi;
                effort += fi * fi;
            }
            let speed = (f[0] * f[0] + f[1] * f[1]).sqrt() / (p.mass * p.damping);
            if speed > 1e-9 {
                best = best.min((1.0 + p.effort_weight * effort) / speed);
            }
        }
    }
    0.9 * best
}

fn polygons_overlap(a: &[Point; 4], b: &[Point; 4]) -> bool {
    for poly in [a, b] {
        for i in 0..2 {
            let e = [poly[i + 1][0] - poly[i][0], poly[i + 1][1] - poly[i][1]];
            let axis = [-e[1], e[0]];
            let proj = |p: &[Point; 4]| {
                p.iter().map(|q| q[0] * axis[0] + q[1] * axis[1]).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
            };
            let (alo, ahi) = proj(a);
            let (blo, bhi) = proj(b);
            if ahi < blo || bhi < alo {
                return false;
            }
        }
    }
    true
}

/// Rotated box inside the bounds and clear of obstacles and `others`.
pub fn box_pose_safe(ws: &Workspace, b: &BoxState, half: Point, others: &[[Point; 4]]) -> bool {
    let corners = b.corners(half);
    if !corners.iter().all(|c| ws.bounds.contains(*c)) {
        return false;
    }
    ws.obstacles.iter().all(|o| !polygons_overlap(&corners, &o.corners()))
        && others.iter().all(|o| !polygons_overlap(&corners, o))
}

/// State layout: agents `[x, y]` first, then boxes `[x, y, psi, vx, vy, omega]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Layout {
    pub agents: usize,
    pub boxes: usize,
}

impl Layout {
    pub fn agent(&self, n: AgentId) -> usize {
        2 * n
    }
    pub fn boxed(&self, m: TaskId) -> usize {
        2 * self.agents + 6 * m
    }
    pub fn dim(&self) -> usize {
        2 * self.agents + 6 * self.boxes
    }
}

/// Push mode for one box.
pub struct PushMode {
    kind: PushKind,
    task: TaskId,
    layout: Layout,
    params: Arc<TransportParams>,
    dt: f64,
    contacts: Vec<Contact>,
    bounds: ParamBounds,
}

const MAX_CONTACTS: usize = 4;

struct Engagement {
    len: usize,
    agents: [AgentId; MAX_CONTACTS],
    attached: [bool; MAX_CONTACTS],
}

// exhaustive injective assignment of members to contacts; `d[i][k]` is the
// distance from member i to contact k
struct Matching<'a> {
    d: &'a [(AgentId, [f64; MAX_CONTACTS])],
    k: usize,
    used: u64,
    chosen: [usize; MAX_CONTACTS],
    best_key: (f64, f64),
    best: Option<[usize; MAX_CONTACTS]>,
}

impl Matching<'_> {
    fn run(&mut self, col: usize, max: f64, sum: f64) {
        if max > self.best_key.0 + 1e-12 {
            return;
        }
        if col == self.k {
            let k = self.best_key;
            if self.best.is_none() || max < k.0 - 1e-12 || ((max - k.0).abs() <= 1e-12 && sum < k.1 - 1e-12) {
                self.best_key = (max, sum);
                self.best = Some(self.chosen);
            }
            return;
        }
        for i in 0..self.d.len() {
            if self.used & (1 << i) != 0 {
                continue;
            }
            self.used |= 1 << i;
            self.chosen[col] = i;
            let di = self.d[i].1[col];
            self.run(col + 1, max.max(di), sum + di);
            self.used &= !(1 << i);
        }
    }
}

impl PushMode {
    pub fn new(kind: PushKind, task: TaskId, layout: Layout, params: Arc<TransportParams>, dt: f64) -> Self {
        let contacts = kind.contacts(params.half_extents());
        let bounds = ParamBounds::uniform(contacts.len(), 0.0, params.f_max);
        Self { kind, task, layout, params, dt, contacts, bounds }
    }

    pub fn kind(&self) -> PushKind {
        self.kind
    }

    fn agent_pos(&self, s: &SystemState, n: AgentId) -> Point {
        let i = self.layout.agent(n);
        [s.values[i], s.values[i + 1]]
    }

    fn box_of(&self, s: &SystemState) -> BoxState {
        let i = self.layout.boxed(self.task);
        BoxState::from_slice(&s.values[i..i + 6])
    }

    // contact -> agent matching minimising the largest travel distance,
    // then the total
    fn engage(&self, s: &SystemState, coalition: &Coalition) -> Engagement {
        let b = self.box_of(s);
        let k = self.contacts.len();
        let mut targets = [[0.0; 2]; MAX_CONTACTS];
        for (t, c) in targets.iter_mut().zip(&self.contacts) {
            *t = b.world(c.offset);
        }
        let d: Vec<(AgentId, [f64; MAX_CONTACTS])> = coalition
            .iter()
            .map(|n| {
                let p = self.agent_pos(s, n);
                let mut row = [0.0; MAX_CONTACTS];
                for (r, t) in row.iter_mut().zip(&targets[..k]) {
                    *r = dist(p, *t);
                }
                (n, row)
            })
            .collect();
        assert!(d.len() <= 64, "coalitions are limited to 64 agents");
        let mut m = Matching { d: &d, k, used: 0, chosen: [0; MAX_CONTACTS], best_key: (f64::INFINITY, f64::INFINITY), best: None };
        if d.len() >= k {
            m.run(0, 0.0, 0.0);
        }
        let mut e = Engagement { len: 0, agents: [0; MAX_CONTACTS], attached: [false; MAX_CONTACTS] };
        if let Some(best) = m.best {
            e.len = k;
            for (col, &i) in best[..k].iter().enumerate() {
                e.agents[col] = d[i].0;
                e.attached[col] = d[i].1[col] <= self.params.attach_tol;
            }
        }
        e
    }

    fn applied(&self, e: &Engagement, param: &[f64]) -> [f64; MAX_CONTACTS] {
        let mut out = [0.0; MAX_CONTACTS];
        for (o, (&f, &on)) in out.iter_mut().zip(param.iter().zip(&e.attached[..e.len])) {
            *o = if on { f } else { 0.0 };
        }
        out
    }
}

impl Mode for PushMode {
    fn id(&self) -> ModeId {
        self.kind.mode_id()
    }
    fn name(&self) -> &str {
        self.kind.name()
    }
    fn bounds(&self) -> &ParamBounds {
        &self.bounds
    }
    fn feasible_coalition(&self, c: &Coalition) -> bool {
        c.len() >= self.kind.required_agents()
    }
    fn step(&self, s: &SystemState, c: &Coalition, param: &[f64]) -> Vec<f64> {
        let mut v = s.values.clone();
        let e = self.engage(s, c);
        if e.len < self.contacts.len() {
            return v;
        }
        let forces = self.applied(&e, param);
        let b = self.box_of(s);
        let nb = box_dynamics(&b, &self.contacts, &forces[..e.len], &self.params, self.dt);
        let bi = self.layout.boxed(self.task);
        v[bi..bi + 6].copy_from_slice(&nb.to_array());
        let reach = self.params.agent_speed * self.dt;
        for (k, &n) in e.agents[..e.len].iter().enumerate() {
            let ai = self.layout.agent(n);
            let target = nb.world(self.contacts[k].offset);
            if e.attached[k] {
                v[ai] = target[0];
                v[ai + 1] = target[1];
                continue;
            }
            let p = self.agent_pos(s, n);
            let d = dist(p, target);
            if d <= reach + self.params.attach_tol {
                v[ai] = target[0];
                v[ai + 1] = target[1];
            } else {
                v[ai] = p[0] + (target[0] - p[0]) * reach / d;
                v[ai + 1] = p[1] + (target[1] - p[1]) * reach / d;
            }
        }
        v
    }
    fn step_cost(&self, s: &SystemState, c: &Coalition, param: &[f64]) -> f64 {
        let e = self.engage(s, c);
        let effort: f64 = self.applied(&e, param).iter().map(|f| f * f).sum();
        self.dt * (self.params.effort_weight * effort + 1.0)
    }
}

/// Loaded transport scenario with precomputed grids and modes.
pub struct TransportDomain {
    pub scenario: TransportScenario,
    pub layout: Layout,
    pub params: Arc<TransportParams>,
    grid_radius: f64,
    fields: Vec<DistanceField>,
    modes: Vec<Vec<ModeRef>>,
    v_max: f64,
    cost_per_metre: f64,
}

impl TransportDomain {
    pub fn new(scenario: TransportScenario) -> Result<Self, TransportError> {
        if scenario.agents.is_empty() || scenario.boxes.is_empty() {
            return Err(TransportError::Empty);
        }
        let params = Arc::new(scenario.params.clone());
        let layout = Layout { agents: scenario.agents.len(), boxes: scenario.boxes.len() };
        // inscribed radius of the box footprint
        let grid_radius = params.box_width / 2.0;
        let grid = OccupancyGrid::build(&scenario.workspace, grid_radius);
        let mut fields = Vec::new();
        for (m, b) in scenario.boxes.iter().enumerate() {
            let goal = grid.nearest_free(b.goal, 3).ok_or(TransportError::GoalUnreachable(m))?;
            let field = grid.distance_field(goal);
            if !field.at([b.start[0], b.start[1]]).is_finite() {
                return Err(TransportError::GoalUnreachable(m));
            }
            fields.push(field);
        }
        let modes = (0..scenario.boxes.len())
            .map(|m| {
                PushKind::ALL
                    .into_iter()
                    .map(|k| Arc::new(PushMode::new(k, m, layout, params.clone(), scenario.dt)) as ModeRef)
                    .collect()
            })
            .collect();
        let v_max = max_box_speed(&params);
        let cost_per_metre = min_cost_per_metre(&params);
        let d = Self { scenario, layout, params, grid_radius, fields, modes, v_max, cost_per_metre };
        let s0 = d.initial_state();
        for m in 0..d.layout.boxes {
            if !d.box_safe(&s0, m) {
                return Err(TransportError::BoxInCollision(m));
            }
        }
        Ok(d)
    }

    pub fn box_state(&self, s: &SystemState, m: TaskId) -> BoxState {
        let i = self.layout.boxed(m);
        BoxState::from_slice(&s.values[i..i + 6])
    }

    pub fn agent_pos(&self, s: &SystemState, n: AgentId) -> Point {
        let i = self.layout.agent(n);
        [s.values[i], s.values[i + 1]]
    }

    pub fn v_max(&self) -> f64 {
        self.v_max
    }

    pub fn cost_per_metre(&self) -> f64 {
        self.cost_per_metre
    }

    fn others(&self, s: &SystemState, m: TaskId) -> Vec<[Point; 4]> {
        (0..self.layout.boxes)
            .filter(|&o| o != m)
            .map(|o| self.box_state(s, o).corners(self.params.half_extents()))
            .collect()
    }

    pub fn box_safe(&self, s: &SystemState, m: TaskId) -> bool {
        box_pose_safe(&self.scenario.workspace, &self.box_state(s, m), self.params.half_extents(), &self.others(s, m))
    }

    /// Grid/straight-line distance from a point to box `m`'s goal.
    pub fn transport_hg(&self, m: TaskId, p: Point) -> f64 {
        geodesic(&self.scenario.workspace, &self.fields[m], self.grid_radius, p, self.scenario.boxes[m].goal)
    }
}

impl Domain for TransportDomain {
    fn name(&self) -> &'static str {
        "transport"
    }
    fn initial_state(&self) -> SystemState {
        let mut v = vec![0.0; self.layout.dim()];
        for (n, a) in self.scenario.agents.iter().enumerate() {
            v[2 * n] = a[0];
            v[2 * n + 1] = a[1];
        }
        for (m, b) in self.scenario.boxes.iter().enumerate() {
            let i = self.layout.boxed(m);
            v[i..i + 6].copy_from_slice(&BoxState::at(b.start[0], b.start[1], b.start[2]).to_array());
        }
        SystemState::new(v).expect("finite scenario")
    }
    fn agents(&self) -> Vec<AgentId> {
        (0..self.layout.agents).collect()
    }
    fn tasks(&self) -> Vec<TaskId> {
        (0..self.layout.boxes).collect()
    }
    fn task_done(&self, s: &SystemState, m: TaskId) -> bool {
        transport_goal(&self.box_state(s, m), self.scenario.boxes[m].goal, self.params.goal_tol)
    }
    fn task_slice(&self, m: TaskId, c: &Coalition) -> Vec<usize> {
        let mut slice: Vec<usize> = c.iter().flat_map(|n| [2 * n, 2 * n + 1]).collect();
        let b = self.layout.boxed(m);
        slice.extend(b..b + 6);
        slice
    }
    fn modes(&self, m: TaskId) -> &[ModeRef] {
        &self.modes[m]
    }
    fn problem<'a>(
        &'a self,
        m: TaskId,
        c: &Coalition,
        s: &SystemState,
        only: Option<&[ModeId]>,
    ) -> Box<dyn HybridProblem + 'a> {
        let modes = self.modes[m].iter().filter(|md| only.map_or(true, |o| o.contains(&md.id()))).cloned().collect();
        Box::new(TransportTask {
            domain: self,
            task: m,
            coalition: c.clone(),
            modes,
            others: self.others(s, m),
            waypoints: Mutex::new(HashMap::new()),
        })
    }
    fn estimate(&self, s: &SystemState, m: TaskId, c: &Coalition) -> f64 {
        if c.len() < 2 {
            return f64::INFINITY;
        }
        let agents: Vec<Point> = c.iter().map(|n| self.agent_pos(s, n)).collect();
        transport_estimate(&agents, self.box_state(s, m).pos(), self.scenario.boxes[m].goal)
    }
    fn agent_task_distance(&self, s: &SystemState, n: AgentId, m: TaskId) -> f64 {
        dist(self.agent_pos(s, n), self.box_state(s, m).pos())
    }
    fn baseline_mode(&self) -> ModeId {
        PushKind::LongSide.mode_id()
    }
    fn search_config(&self) -> &SearchConfig {
        &self.scenario.solver
    }
    fn idle_step(&self, s: &SystemState, m: TaskId, c: &Coalition) -> Vec<f64> {
        let nb = box_dynamics(&self.box_state(s, m), &[], &[], &self.params, self.scenario.dt);
        let mut out: Vec<f64> = c.iter().flat_map(|n| self.agent_pos(s, n)).collect();
        out.extend(nb.to_array());
        out
    }
    fn state_safe(&self, s: &SystemState) -> bool {
        (0..self.layout.boxes).all(|m| self.box_safe(s, m))
    }
    fn speed_ok(&self, prev: &SystemState, next: &SystemState) -> bool {
        let dt = self.scenario.dt;
        let v_box = max_box_speed(&self.params) + 1e-9;
        let half = self.params.half_extents();
        let radius = (half[0] * half[0] + half[1] * half[1]).sqrt();
        let mut carry: f64 = 0.0;
        for m in 0..self.layout.boxes {
            let (a, b) = (self.box_state(prev, m), self.box_state(next, m));
            if (b.vx * b.vx + b.vy * b.vy).sqrt() > v_box {
                return false;
            }
            carry = carry.max(dist(a.pos(), b.pos()) + wrap_angle(b.psi - a.psi).abs() * radius);
        }
        let reach = self.params.agent_speed * dt + self.params.attach_tol + carry + 1e-9;
        (0..self.layout.agents).all(|n| dist(self.agent_pos(prev, n), self.agent_pos(next, n)) <= reach)
    }
    fn dt(&self) -> f64 {
        self.scenario.dt
    }
    fn trajectory(&self, s: &SystemState) -> Vec<TrajRow> {
        let mut rows: Vec<TrajRow> = (0..self.layout.agents)
            .map(|n| {
                let p = self.agent_pos(s, n);
                TrajRow { kind: "agent", id: n, x: p[0], y: p[1], extra: 0.0 }
            })
            .collect();
        rows.extend((0..self.layout.boxes).map(|m| {
            let b = self.box_state(s, m);
            TrajRow { kind: "box", id: m, x: b.x, y: b.y, extra: b.psi }
        }));
        rows
    }
}

/// Search problem for moving one box with a fixed coalition.
pub struct TransportTask<'a> {
    domain: &'a TransportDomain,
    task: TaskId,
    coalition: Coalition,
    modes: Vec<ModeRef>,
    others: Vec<[Point; 4]>,
    waypoints: Mutex<HashMap<Cell, (Point, f64)>>,
}

impl TransportTask<'_> {
    // waypoint one lookahead along the grid path from the anchor, and the
    // box heading that points the pushing face along it
    fn waypoint(&self, anchor: Point) -> (Point, f64) {
        let field = &self.domain.fields[self.task];
        let goal = self.domain.scenario.boxes[self.task].goal;
        let key = field.grid().cell_of(anchor).unwrap_or((usize::MAX, usize::MAX));
        if let Some(hit) = self.waypoints.lock().unwrap().get(&key) {
            return *hit;
        }
        let ws = &self.domain.scenario.workspace;
        let wp = if dist(anchor, goal) <= self.domain.params.lookahead
            || ws.segment_free(anchor, goal, self.domain.grid_radius)
        {
            goal
        } else {
            field.descend(anchor, self.domain.params.lookahead)
        };
        let heading = (wp[1] - anchor[1]).atan2(wp[0] - anchor[0]) - FRAC_PI_2;
        self.waypoints.lock().unwrap().insert(key, (wp, heading));
        (wp, heading)
    }
}

impl TransportTask<'_> {
    /// Seconds until the `k`-th nearest coalition agent (0-based) can reach
    /// the box's circumscribed circle.
    fn transit_time(&self, s: &SystemState, k: usize) -> f64 {
        let b = self.domain.box_state(s, self.task).pos();
        let h = self.domain.params.half_extents();
        let r = (h[0] * h[0] + h[1] * h[1]).sqrt();
        let mut d: Vec<f64> =
            self.coalition.iter().map(|n| (dist(self.domain.agent_pos(s, n), b) - r).max(0.0)).collect();
        d.sort_by(f64::total_cmp);
        d.get(k).map_or(0.0, |x| x / self.domain.params.agent_speed)
    }
}

impl HybridProblem for TransportTask<'_> {
    fn modes(&self) -> &[ModeRef] {
        &self.modes
    }
    fn coalition(&self) -> &Coalition {
        &self.coalition
    }
    fn is_goal(&self, s: &SystemState) -> bool {
        self.domain.task_done(s, self.task)
    }
    fn is_safe(&self, s: &SystemState) -> bool {
        box_pose_safe(
            &self.domain.scenario.workspace,
            &self.domain.box_state(s, self.task),
            self.domain.params.half_extents(),
            &self.others,
        )
    }
    // the box cannot move before the nearest agent arrives, and every tick
    // costs at least dt
    fn global_h(&self, s: &SystemState) -> f64 {
        let p = self.domain.box_state(s, self.task).pos();
        let box_part =
            (self.domain.transport_hg(self.task, p) - self.domain.params.goal_tol).max(0.0) * self.domain.cost_per_metre;
        box_part + self.transit_time(s, 0)
    }
    fn local_h(&self, anchor: &SystemState, s: &SystemState) -> f64 {
        let (wp, heading) = self.waypoint(self.domain.box_state(anchor, self.task).pos());
        let b = self.domain.box_state(s, self.task);
        transport_hl(b.pos(), b.psi, wp, heading, self.domain.params.align_weight) * self.domain.cost_per_metre
    }
    fn features(&self, s: &SystemState) -> Vec<f64> {
        let b = self.domain.box_state(s, self.task);
        let mut f = vec![b.x, b.y, 0.3 * b.psi.cos(), 0.3 * b.psi.sin()];
        for n in self.coalition.iter() {
            let p = self.domain.agent_pos(s, n);
            f.push(0.5 * p[0]);
            f.push(0.5 * p[1]);
        }
        f
    }
    fn primitives(&self, mode: &dyn Mode, _s: &SystemState) -> Vec<Vec<f64>> {
        PushKind::from_id(mode.id()).map(|k| k.primitives(self.domain.params.f_max)).unwrap_or_default()
    }
}

/// Small default scenario: 4 agents, 2 boxes and a two-segment wall
/// with a gap only a short-side push fits through.
pub fn demo_scenario() -> TransportScenario {
    TransportScenario {
        workspace: Workspace {
            bounds: Rect::new(0.0, 0.0, 10.0, 10.0),
            obstacles: vec![Rect::new(4.5, 5.3, 7.1, 5.7), Rect::new(7.9, 5.3, 10.0, 5.7)],
            grid_resolution: 0.1,
        },
        dt: 0.1,
        agents: vec![[0.5, 1.0], [3.6, 2.4], [2.0, 1.8], [7.0, 1.5]],
        boxes: vec![
            BoxTask { start: [2.0, 3.0, 0.0], goal: [2.5, 8.0] },
            BoxTask { start: [8.0, 3.0, 0.0], goal: [7.5, 8.0] },
        ],
        params: TransportParams::default(),
        solver: default_transport_search(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::search::hgg_hs;
    use proptest::prelude::*;

    fn params() -> TransportParams {
        TransportParams::default()
    }

    #[test]
    fn zero_force_is_equilibrium() {
        let b = BoxState::at(1.0, 2.0, 0.3);
        let c = PushKind::LongSide.contacts(params().half_extents());
        assert_eq!(box_dynamics(&b, &c, &[0.0, 0.0], &params(), 0.1), b);
    }

    #[test]
    fn symmetric_long_push_translates() {
        let b = BoxState::at(1.0, 2.0, 0.0);
        let c = PushKind::LongSide.contacts(params().half_extents());
        let n = box_dynamics(&b, &c, &[1.5, 1.5], &params(), 0.1);
        assert_eq!(n.omega, 0.0);
        assert_eq!(n.psi, 0.0);
        assert!(n.y > b.y && n.x == b.x);
    }

    #[test]
    fn single_force_matches_hand_integration() {
        // one force F on the left long-side contact at offset (-0.3, -0.25), normal +y
        let p = params();
        let b = BoxState::at(0.0, 0.0, 0.0);
        let c = PushKind::LongSide.contacts(p.half_extents());
        let f = 2.0;
        let dt = 0.1;
        let n = box_dynamics(&b, &c, &[f, 0.0], &p, dt);
        let inertia = (1.0 + 0.25) / 12.0;
        let tau = -0.3 * f; // r x F with r = (-0.3, -0.25), F = (0, f)
        let omega = dt * tau / inertia;
        let vy = dt * f;
        assert!((n.vy - vy).abs() < 1e-12);
        assert!((n.y - dt * vy).abs() < 1e-12);
        assert!((n.omega - omega).abs() < 1e-12);
        assert!((n.psi - dt * omega).abs() < 1e-12);
        assert_eq!(n.vx, 0.0);
    }

    #[test]
    fn goal_examples() {
        let g = [3.0, 4.0];
        assert!(transport_goal(&BoxState::at(3.0, 4.0, 0.0), g, 0.15));
        assert!(!transport_goal(&BoxState::at(3.16, 4.0, 0.0), g, 0.15));
        assert!(transport_goal(&BoxState::at(3.0, 4.0, 2.7), g, 0.15));
    }

    #[test]
    fn estimate_examples() {
        assert_eq!(transport_estimate(&[[1.0, 1.0], [1.0, 1.0]], [1.0, 1.0], [1.0, 1.0]), 0.0);
        assert_eq!(transport_estimate(&[[3.0, 0.0]], [0.0, 0.0], [0.0, 4.0]), 7.0);
        let a = [[1.0, 2.0], [5.0, -1.0], [0.5, 0.5]];
        let b = [[0.5, 0.5], [1.0, 2.0], [5.0, -1.0]];
        assert_eq!(transport_estimate(&a, [2.0, 2.0], [7.0, 1.0]), transport_estimate(&b, [2.0, 2.0], [7.0, 1.0]));
    }

    #[test]
    fn hl_examples() {
        assert_eq!(transport_hl([1.0, 1.0], 0.4, [1.0, 1.0], 0.4, 0.2), 0.0);
        let base = transport_hl([0.0, 0.0], 0.0, [2.0, 0.0], 0.0, 0.2);
        let turned = transport_hl([0.0, 0.0], 0.1, [2.0, 0.0], 0.0, 0.2);
        assert!((turned - base - 0.2 * (1.0 - 0.1f64.cos())).abs() < 1e-15);
    }

    #[test]
    fn speed_bound_from_vertices() {
        // two contacts pushing the same way at full force: 2 * 2 N / (1 kg * 2 /s)
        assert!((max_box_speed(&params()) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn cost_rate_bound() {
        // two equal long-side forces F: rate (1 + 0.2 F^2) over speed F;
        // minimised at the force limit F = 2 -> 0.9 per metre
        let b = min_cost_per_metre(&params());
        assert!(b <= 0.9 * 0.9 + 1e-12 && b > 0.5);
    }

    #[test]
    fn diagonal_has_no_torque() {
        let c = PushKind::Diagonal.contacts(params().half_extents());
        let b = BoxState::at(0.0, 0.0, 0.7);
        for f in PushKind::Diagonal.primitives(2.0) {
            let n = box_dynamics(&b, &c, &f, &params(), 0.1);
            assert!(n.omega.abs() < 1e-12);
        }
    }

    #[test]
    fn box_collision_check() {
        let ws = Workspace { bounds: Rect::new(0.0, 0.0, 5.0, 5.0), obstacles: vec![Rect::new(2.0, 2.0, 3.0, 3.0)], grid_resolution: 0.1 };
        let half = params().half_extents();
        assert!(box_pose_safe(&ws, &BoxState::at(1.0, 1.0, 0.0), half, &[]));
        assert!(!box_pose_safe(&ws, &BoxState::at(1.6, 2.5, 0.0), half, &[]));
        // rotated so the long axis is vertical it clears the obstacle
        assert!(box_pose_safe(&ws, &BoxState::at(1.7, 2.5, FRAC_PI_2), half, &[]));
        assert!(!box_pose_safe(&ws, &BoxState::at(0.2, 1.0, 0.0), half, &[]));
    }

    #[test]
    fn agents_walk_then_push() {
        let d = TransportDomain::new(demo_scenario()).unwrap();
        let s = d.initial_state();
        let mode = &d.modes(0)[0];
        let c = Coalition::new([0, 1]);
        let mut cur = s.clone();
        for _ in 0..60 {
            cur = cur.advanced(mode.step(&cur, &c, &[1.0, 1.0]));
        }
        assert!(d.box_state(&cur, 0).y > 3.2, "box should have moved once agents arrived");
        // box 1 and agents 2, 3 untouched
        assert_eq!(d.box_state(&cur, 1), d.box_state(&s, 1));
        assert_eq!(d.agent_pos(&cur, 2), d.agent_pos(&s, 2));
    }

    #[test]
    fn coalition_size_gates_modes() {
        let d = TransportDomain::new(demo_scenario()).unwrap();
        let modes = d.modes(0);
        assert!(modes[0].feasible_coalition(&Coalition::new([0, 1])));
        assert!(!modes[0].feasible_coalition(&Coalition::new([0])));
        assert!(!modes[2].feasible_coalition(&Coalition::new([0, 1, 2])));
        assert!(modes[2].feasible_coalition(&Coalition::new([0, 1, 2, 3])));
    }

    #[test]
    fn search_pushes_box_to_goal() {
        let d = TransportDomain::new(demo_scenario()).unwrap();
        let s = d.initial_state();
        let p = d.problem(0, &Coalition::new([0, 1]), &s, None);
        let r = hgg_hs(p.as_ref(), &s, d.search_config()).unwrap();
        assert!(d.task_done(&r.final_state, 0));
        assert!(r.cost.is_finite() && r.cost > 0.0);
    }

    proptest! {
        #[test]
        fn hl_gradient_matches_fd(x in -5.0f64..5.0, y in -5.0f64..5.0, psi in -3.0f64..3.0,
                                  wx in -5.0f64..5.0, wy in -5.0f64..5.0, h in -3.0f64..3.0) {
            prop_assume!(dist([x, y], [wx, wy]) > 0.1);
            let g = transport_hl_grad([x, y], psi, [wx, wy], h, 0.2);
            let e = 1e-6;
            let f = |x: f64, y: f64, p: f64| transport_hl([x, y], p, [wx, wy], h, 0.2);
            let fd = [
                (f(x + e, y, psi) - f(x - e, y, psi)) / (2.0 * e),
                (f(x, y + e, psi) - f(x, y - e, psi)) / (2.0 * e),
                (f(x, y, psi + e) - f(x, y, psi - e)) / (2.0 * e),
            ];
            for k in 0..3 {
                let scale = g[k].abs().max(fd[k].abs()).max(1e-3);
                prop_assert!((g[k] - fd[k]).abs() / scale < 1e-4, "component {} {} vs {}", k, g[k], fd[k]);
            }
        }

        #[test]
        fn translation_invariance(dx in -3.0f64..3.0, dy in -3.0f64..3.0, f0 in 0.0f64..2.0, f1 in 0.0f64..2.0, psi in -3.0f64..3.0) {
            let p = params();
            let c = PushKind::LongSide.contacts(p.half_extents());
            let a = BoxState::at(1.0, 1.0, psi);
            let b = BoxState::at(1.0 + dx, 1.0 + dy, psi);
            let na = box_dynamics(&a, &c, &[f0, f1], &p, 0.1);
            let nb = box_dynamics(&b, &c, &[f0, f1], &p, 0.1);
            prop_assert!(((na.x - a.x) - (nb.x - b.x)).abs() < 1e-12);
            prop_assert!(((na.y - a.y) - (nb.y - b.y)).abs() < 1e-12);
            prop_assert!((na.psi - nb.psi).abs() < 1e-12);
            let agents = [[0.0, 0.0], [2.0, 1.0]];
            let moved = [[dx, dy], [2.0 + dx, 1.0 + dy]];
            let e1 = transport_estimate(&agents, [1.0, 1.0], [4.0, 5.0]);
            let e2 = transport_estimate(&moved, [1.0 + dx, 1.0 + dy], [4.0 + dx, 5.0 + dy]);
            prop_assert!((e1 - e2).abs() < 1e-9);
        }

        #[test]
        fn psi_stays_normalised(psi in -10.0f64..10.0, f0 in 0.0f64..2.0, f1 in 0.0f64..2.0) {
            let p = params();
            let c = PushKind::ShortSide.contacts(p.half_extents());
            let n = box_dynamics(&BoxState { psi: wrap_angle(psi), omega: 5.0, ..Default::default() }, &c, &[f0, f1], &p, 0.1);
            prop_assert!(n.psi > -PI && n.psi <= PI);
        }
    }
}
