//! Pursuit–evasion: point pursuers and fleeing evaders at equal top speed
//! in a cluttered square workspace.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{Domain, TrajRow};
use crate::grid::{dist, Cell, DistanceField, OccupancyGrid, Point, Rect, Workspace};
use crate::model::{AgentId, Coalition, Mode, ModeId, ModeRef, ParamBounds, SystemState, TaskId};
use crate::search::{HybridProblem, Lambda, SearchConfig};

#[derive(Debug, Error, PartialEq)]
pub enum CaptureError {
    #[error("agent starts inside an obstacle or outside the workspace")]
    StartInCollision,
    #[error("no grid path to the hide anchor")]
    UnreachableAnchor,
    #[error("advantage region is empty")]
    DegenerateRegion,
    #[error("scenario needs at least one pursuer and one evader")]
    Empty,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CaptureParams {
    pub v_max: f64,
    pub capture_radius: f64,
    pub hold_radius: f64,
    /// Grid used for advantage regions; coarser than the navigation grid.
    pub region_resolution: f64,
    pub hide_candidates: usize,
    /// Seconds of straight-line evader motion used to rank hide anchors.
    pub predict_horizon: f64,
}

impl Default for CaptureParams {
    fn default() -> Self {
        Self {
            v_max: 4.0,
            capture_radius: 0.15,
            hold_radius: 0.1,
            region_resolution: 0.1,
            hide_candidates: 8,
            predict_horizon: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptureScenario {
    pub workspace: Workspace,
    pub dt: f64,
    pub pursuers: Vec<Point>,
    pub evaders: Vec<Point>,
    #[serde(default)]
    pub params: CaptureParams,
    #[serde(default = "default_capture_search")]
    pub solver: SearchConfig,
}

pub fn default_capture_search() -> SearchConfig {
    SearchConfig {
        lambda: Lambda::Fixed(0.8),
        dedup_radius: 0.1,
        dwell: 4,
        neighborhood: 1.0,
        node_cap: 1500,
        refine_iters: 0,
        ..SearchConfig::default()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PursuitKind {
    PurePursuit,
    HideAttack,
    Enclosure,
}

impl PursuitKind {
    pub const ALL: [PursuitKind; 3] = [PursuitKind::PurePursuit, PursuitKind::HideAttack, PursuitKind::Enclosure];

    pub fn mode_id(self) -> ModeId {
        match self {
            PursuitKind::PurePursuit => 1,
            PursuitKind::HideAttack => 2,
            PursuitKind::Enclosure => 3,
        }
    }

    pub fn from_id(id: ModeId) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.mode_id() == id)
    }

    pub fn name(self) -> &'static str {
        match self {
            PursuitKind::PurePursuit => "pure_pursuit",
            PursuitKind::HideAttack => "hide_attack",
            PursuitKind::Enclosure => "enclosure",
        }
    }
}

fn unit(v: Point) -> Option<Point> {
    let n = (v[0] * v[0] + v[1] * v[1]).sqrt();
    (n > 1e-12).then(|| [v[0] / n, v[1] / n])
}

const SKIN: f64 = 1e-6;

// earliest entry of segment a->b into the (slightly shrunk) rectangle, with
// the outward normal of the face hit
fn entry(rect: &Rect, a: Point, b: Point) -> Option<(f64, Point)> {
    let r = rect.inflate(SKIN);
    let mut t0 = 0.0f64;
    let mut t1 = 1.0f64;
    let mut normal = [0.0, 0.0];
    for k in 0..2 {
        let d = b[k] - a[k];
        if d.abs() < 1e-15 {
            if a[k] <= r.min[k] || a[k] >= r.max[k] {
                return None;
            }
            continue;
        }
        let (mut ta, mut tb) = ((r.min[k] - a[k]) / d, (r.max[k] - a[k]) / d);
        let mut n = [0.0, 0.0];
        n[k] = if d > 0.0 { -1.0 } else { 1.0 };
        if ta > tb {
            std::mem::swap(&mut ta, &mut tb);
        }
        if ta > t0 {
            t0 = ta;
            normal = n;
        }
        t1 = t1.min(tb);
        if t0 >= t1 {
            return None;
        }
    }
    (t0 > 0.0 || normal != [0.0, 0.0]).then_some((t0, normal))
}

// earliest exit of segment a->b from the bounds, with the inward normal
fn exit(bounds: &Rect, a: Point, b: Point) -> Option<(f64, Point)> {
    let mut best: Option<(f64, Point)> = None;
    for k in 0..2 {
        let d = b[k] - a[k];
        let (lim, n) = if b[k] > bounds.max[k] {
            (bounds.max[k], if k == 0 { [-1.0, 0.0] } else { [0.0, -1.0] })
        } else if b[k] < bounds.min[k] {
            (bounds.min[k], if k == 0 { [1.0, 0.0] } else { [0.0, 1.0] })
        } else {
            continue;
        };
        let t = if d.abs() < 1e-15 { 0.0 } else { ((lim - a[k]) / d).clamp(0.0, 1.0) };
        if best.map_or(true, |(bt, _)| t < bt) {
            best = Some((t, n));
        }
    }
    best
}

fn first_contact(ws: &Workspace, a: Point, b: Point) -> Option<(f64, Point)> {
    let mut best = exit(&ws.bounds, a, b);
    for o in &ws.obstacles {
        if let Some((t, n)) = entry(o, a, b) {
            if best.map_or(true, |(bt, _)| t < bt) {
                best = Some((t, n));
            }
        }
    }
    best
}

/// Moves a point agent with velocity `v` for `dt`, stopping at the first
/// wall and sliding along it for the remaining time. Returns the new
/// position.
pub fn advance(ws: &Workspace, p: Point, v: Point, dt: f64) -> Point {
    let mut pos = p;
    let mut vel = v;
    let mut remaining = dt;
    for _ in 0..3 {
        let target = [pos[0] + vel[0] * remaining, pos[1] + vel[1] * remaining];
        match first_contact(ws, pos, target) {
            None => return target,
            Some((t, n)) => {
                let t = (t - 1e-9).max(0.0);
                pos = [pos[0] + vel[0] * remaining * t, pos[1] + vel[1] * remaining * t];
                remaining *= 1.0 - t;
                let vn = vel[0] * n[0] + vel[1] * n[1];
                if vn < 0.0 {
                    vel = [vel[0] - vn * n[0], vel[1] - vn * n[1]];
                }
                if remaining <= 1e-15 || (vel[0] == 0.0 && vel[1] == 0.0) {
                    return pos;
                }
            }
        }
    }
    pos
}

/// Point is inside the bounds and not strictly inside any obstacle.
pub fn point_free(ws: &Workspace, p: Point) -> bool {
    ws.bounds.contains(p) && ws.obstacles.iter().all(|o| !o.inflate(-SKIN).contains(p))
}

/// Flee direction scaled to `v_max`, weighting pursuers by inverse squared
/// distance; zero when the pulls cancel.
pub fn evader_policy(evader: Point, pursuers: &[Point], v_max: f64) -> Point {
    let mut s = [0.0, 0.0];
    for x in pursuers {
        let d = [evader[0] - x[0], evader[1] - x[1]];
        let r2 = d[0] * d[0] + d[1] * d[1];
        if r2 < 1e-18 {
            continue;
        }
        s[0] += d[0] / r2;
        s[1] += d[1] / r2;
    }
    match unit(s) {
        Some(u) if (s[0] * s[0] + s[1] * s[1]).sqrt() > 1e-12 => [u[0] * v_max, u[1] * v_max],
        _ => [0.0, 0.0],
    }
}

/// Velocity toward `aim` at `v_max`, shortened so one tick does not overshoot.
pub fn pursue(p: Point, aim: Point, v_max: f64, dt: f64) -> Point {
    let d = dist(p, aim);
    match unit([aim[0] - p[0], aim[1] - p[1]]) {
        Some(u) => {
            let speed = v_max.min(d / dt);
            [u[0] * speed, u[1] * speed]
        }
        None => [0.0, 0.0],
    }
}

/// Inverse-distance weighted mean distance (a harmonic mean).
pub fn capture_estimate(pursuers: &[Point], evader: Point) -> f64 {
    let ds: Vec<f64> = pursuers.iter().map(|p| dist(*p, evader)).collect();
    if ds.iter().any(|&d| d <= 0.0) {
        return 0.0;
    }
    ds.len() as f64 / ds.iter().map(|d| 1.0 / d).sum::<f64>()
}

pub fn capture_goal(pursuers: &[Point], evader: Point, r_c: f64) -> bool {
    pursuers.iter().any(|p| dist(*p, evader) <= r_c)
}

/// Cells the evader reaches strictly before every pursuer, by grid distance.
pub fn advantage_region(grid: &OccupancyGrid, evader: Point, pursuers: &[Point]) -> Vec<bool> {
    let n = grid.nx * grid.ny;
    let Some(ec) = grid.nearest_free(evader, 2) else {
        return vec![false; n];
    };
    let fe = grid.distance_field(ec);
    let fps: Vec<DistanceField> =
        pursuers.iter().filter_map(|p| grid.nearest_free(*p, 2)).map(|c| grid.distance_field(c)).collect();
    (0..n)
        .map(|i| {
            let c = (i % grid.nx, i / grid.nx);
            let de = fe.cell_distance(c);
            de.is_finite() && fps.iter().all(|f| de < f.cell_distance(c))
        })
        .collect()
}

/// Region cells bordering a free cell outside the region.
pub fn region_boundary(grid: &OccupancyGrid, region: &[bool]) -> Vec<Cell> {
    let mut out = Vec::new();
    for j in 0..grid.ny {
        for i in 0..grid.nx {
            if !region[grid.index((i, j))] {
                continue;
            }
            let border = [(1i64, 0i64), (-1, 0), (0, 1), (0, -1)].iter().any(|&(dx, dy)| {
                let (x, y) = (i as i64 + dx, j as i64 + dy);
                x >= 0
                    && y >= 0
                    && (x as usize) < grid.nx
                    && (y as usize) < grid.ny
                    && !grid.is_blocked((x as usize, y as usize))
                    && !region[grid.index((x as usize, y as usize))]
            });
            if border {
                out.push((i, j));
            }
        }
    }
    out
}

/// `k` points evenly spaced by arc length along a polyline, at fractions
/// `(i + 0.5) / k`.
pub fn arc_anchors(polyline: &[Point], k: usize) -> Vec<Point> {
    if polyline.is_empty() || k == 0 {
        return Vec::new();
    }
    let mut cum = vec![0.0];
    for w in polyline.windows(2) {
        cum.push(cum.last().unwrap() + dist(w[0], w[1]));
    }
    let total = *cum.last().unwrap();
    (0..k)
        .map(|i| {
            let s = total * (i as f64 + 0.5) / k as f64;
            let seg = cum.windows(2).position(|w| s <= w[1]).unwrap_or(polyline.len().saturating_sub(2));
            if polyline.len() == 1 || total == 0.0 {
                return polyline[0];
            }
            let (a, b) = (polyline[seg], polyline[seg + 1]);
            let len = cum[seg + 1] - cum[seg];
            let t = if len > 0.0 { (s - cum[seg]) / len } else { 0.0 };
            [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]
        })
        .collect()
}

fn angle_from(origin: Point, p: Point, reference: f64) -> f64 {
    ((p[1] - origin[1]).atan2(p[0] - origin[0]) - reference).rem_euclid(2.0 * PI)
}

/// Enclosure anchors: boundary arc of the advantage region on the side
/// facing away from `rho3`, split evenly among the pursuers. Anchors are
/// returned in the order of the pursuers they are matched to.
pub fn enclosure_targets(
    grid: &OccupancyGrid,
    evader: Point,
    pursuers: &[Point],
    rho3: Point,
) -> Result<Vec<Point>, CaptureError> {
    let region = advantage_region(grid, evader, pursuers);
    if !region.iter().any(|&r| r) {
        return Err(CaptureError::DegenerateRegion);
    }
    let reference = (rho3[1] - evader[1]).atan2(rho3[0] - evader[0]);
    let mut arc: Vec<(f64, Point)> = region_boundary(grid, &region)
        .into_iter()
        .map(|c| grid.center(c))
        .map(|p| (angle_from(evader, p, reference), p))
        .filter(|(a, _)| (PI / 2.0..=3.0 * PI / 2.0).contains(a))
        .collect();
    if arc.is_empty() {
        return Err(CaptureError::DegenerateRegion);
    }
    arc.sort_by(|a, b| a.0.total_cmp(&b.0));
    let polyline: Vec<Point> = arc.iter().map(|(_, p)| *p).collect();
    let anchors = arc_anchors(&polyline, pursuers.len());
    let mut order: Vec<usize> = (0..pursuers.len()).collect();
    order.sort_by(|&a, &b| {
        angle_from(evader, pursuers[a], reference).total_cmp(&angle_from(evader, pursuers[b], reference)).then(a.cmp(&b))
    });
    let mut out = vec![[0.0, 0.0]; pursuers.len()];
    for (slot, &who) in order.iter().enumerate() {
        out[who] = anchors[slot];
    }
    Ok(out)
}

/// State layout: pursuers `[x, y, vx, vy]`, then evaders `[x, y, vx, vy]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Layout {
    pub pursuers: usize,
    pub evaders: usize,
}

impl Layout {
    pub fn pursuer(&self, n: AgentId) -> usize {
        4 * n
    }
    pub fn evader(&self, m: TaskId) -> usize {
        4 * self.pursuers + 4 * m
    }
    pub fn dim(&self) -> usize {
        4 * (self.pursuers + self.evaders)
    }
}

struct Shared {
    ws: Workspace,
    params: CaptureParams,
    dt: f64,
    layout: Layout,
    nav: OccupancyGrid,
    coarse: OccupancyGrid,
    fields: Mutex<HashMap<Cell, Arc<DistanceField>>>,
}

impl Shared {
    fn pos(&self, s: &SystemState, i: usize) -> Point {
        [s.values[i], s.values[i + 1]]
    }

    fn pursuers(&self, s: &SystemState) -> Vec<Point> {
        (0..self.layout.pursuers).map(|n| self.pos(s, self.layout.pursuer(n))).collect()
    }

    fn field_to(&self, target: Point) -> Option<Arc<DistanceField>> {
        let cell = self.nav.nearest_free(target, 3)?;
        if let Some(f) = self.fields.lock().unwrap().get(&cell) {
            return Some(f.clone());
        }
        let f = Arc::new(self.nav.distance_field(cell));
        self.fields.lock().unwrap().insert(cell, f.clone());
        Some(f)
    }

    // velocity toward `target` following the navigation grid where the
    // straight line is blocked
    fn navigate(&self, p: Point, target: Point) -> Result<Point, CaptureError> {
        if self.ws.segment_free(p, target, 0.0) {
            return Ok(pursue(p, target, self.params.v_max, self.dt));
        }
        let field = self.field_to(target).ok_or(CaptureError::UnreachableAnchor)?;
        if !field.at(p).is_finite() {
            return Err(CaptureError::UnreachableAnchor);
        }
        let wp = field.descend(p, 2.0 * self.params.v_max * self.dt);
        Ok(pursue(p, wp, self.params.v_max, self.dt))
    }

    fn evader_velocity(&self, s: &SystemState, m: TaskId) -> Point {
        evader_policy(self.pos(s, self.layout.evader(m)), &self.pursuers(s), self.params.v_max)
    }
}

/// Pursuit mode for one evader.
pub struct PursuitMode {
    kind: PursuitKind,
    task: TaskId,
    shared: Arc<Shared>,
    bounds: ParamBounds,
}

impl PursuitMode {
    fn velocities(&self, s: &SystemState, c: &Coalition, param: &[f64]) -> Vec<(AgentId, Point)> {
        let sh = &self.shared;
        let rho = [param[0], param[1]];
        let evader = sh.pos(s, sh.layout.evader(self.task));
        let members = c.ids();
        let chase = |p: Point| sh.navigate(p, evader).unwrap_or([0.0, 0.0]);
        match self.kind {
            PursuitKind::PurePursuit => members
                .iter()
                .map(|&n| (n, pursue(sh.pos(s, sh.layout.pursuer(n)), rho, sh.params.v_max, sh.dt)))
                .collect(),
            PursuitKind::HideAttack => members
                .iter()
                .map(|&n| {
                    let p = sh.pos(s, sh.layout.pursuer(n));
                    let v = if dist(p, rho) <= sh.params.hold_radius {
                        if sh.ws.segment_free(p, evader, 0.0) {
                            pursue(p, evader, sh.params.v_max, sh.dt)
                        } else {
                            [0.0, 0.0]
                        }
                    } else {
                        sh.navigate(p, rho).unwrap_or([0.0, 0.0])
                    };
                    (n, v)
                })
                .collect(),
            PursuitKind::Enclosure => {
                let ps: Vec<Point> = members.iter().map(|&n| sh.pos(s, sh.layout.pursuer(n))).collect();
                match enclosure_targets(&sh.coarse, evader, &ps, rho) {
                    Ok(anchors) => members
                        .iter()
                        .zip(ps.iter().zip(&anchors))
                        .map(|(&n, (p, a))| (n, sh.navigate(*p, *a).unwrap_or([0.0, 0.0])))
                        .collect(),
                    Err(_) => members.iter().zip(&ps).map(|(&n, p)| (n, chase(*p))).collect(),
                }
            }
        }
    }
}

impl Mode for PursuitMode {
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
        match self.kind {
            PursuitKind::Enclosure => c.len() >= 2,
            _ => !c.is_empty(),
        }
    }
    fn step(&self, s: &SystemState, c: &Coalition, param: &[f64]) -> Vec<f64> {
        let sh = &self.shared;
        let mut v = s.values.clone();
        for (n, vel) in self.velocities(s, c, param) {
            let i = sh.layout.pursuer(n);
            let p = sh.pos(s, i);
            let q = advance(&sh.ws, p, vel, sh.dt);
            v[i..i + 4].copy_from_slice(&[q[0], q[1], (q[0] - p[0]) / sh.dt, (q[1] - p[1]) / sh.dt]);
        }
        let e = sh.layout.evader(self.task);
        let y = sh.pos(s, e);
        let q = advance(&sh.ws, y, sh.evader_velocity(s, self.task), sh.dt);
        v[e..e + 4].copy_from_slice(&[q[0], q[1], (q[0] - y[0]) / sh.dt, (q[1] - y[1]) / sh.dt]);
        v
    }
    fn step_cost(&self, _s: &SystemState, _c: &Coalition, _p: &[f64]) -> f64 {
        self.shared.dt
    }
    fn refinable(&self) -> bool {
        false
    }
}

pub struct CaptureDomain {
    pub scenario: CaptureScenario,
    pub layout: Layout,
    shared: Arc<Shared>,
    modes: Vec<Vec<ModeRef>>,
    hide_points: Vec<Point>,
}

impl CaptureDomain {
    pub fn new(scenario: CaptureScenario) -> Result<Self, CaptureError> {
        if scenario.pursuers.is_empty() || scenario.evaders.is_empty() {
            return Err(CaptureError::Empty);
        }
        let ws = scenario.workspace.clone();
        if !scenario.pursuers.iter().chain(&scenario.evaders).all(|p| point_free(&ws, *p)) {
            return Err(CaptureError::StartInCollision);
        }
        let layout = Layout { pursuers: scenario.pursuers.len(), evaders: scenario.evaders.len() };
        let nav = OccupancyGrid::build(&ws, 0.0);
        let coarse_ws = Workspace { grid_resolution: scenario.params.region_resolution, ..ws.clone() };
        let coarse = OccupancyGrid::build(&coarse_ws, 0.0);
        let shared = Arc::new(Shared {
            ws: ws.clone(),
            params: scenario.params.clone(),
            dt: scenario.dt,
            layout,
            nav,
            coarse,
            fields: Mutex::new(HashMap::new()),
        });
        let b = &ws.bounds;
        let bounds = ParamBounds::new(vec![b.min[0], b.min[1]], vec![b.max[0], b.max[1]]);
        let modes = (0..layout.evaders)
            .map(|m| {
                PursuitKind::ALL
                    .into_iter()
                    .map(|kind| {
                        Arc::new(PursuitMode { kind, task: m, shared: shared.clone(), bounds: bounds.clone() }) as ModeRef
                    })
                    .collect()
            })
            .collect();
        // free points just outside every obstacle corner
        let off = 0.1;
        let hide_points = ws
            .obstacles
            .iter()
            .flat_map(|o| {
                [
                    [o.min[0] - off, o.min[1] - off],
                    [o.max[0] + off, o.min[1] - off],
                    [o.max[0] + off, o.max[1] + off],
                    [o.min[0] - off, o.max[1] + off],
                ]
            })
            .filter(|p| point_free(&ws, *p))
            .collect();
        Ok(Self { scenario, layout, shared, modes, hide_points })
    }

    pub fn pursuer_pos(&self, s: &SystemState, n: AgentId) -> Point {
        self.shared.pos(s, self.layout.pursuer(n))
    }

    pub fn evader_pos(&self, s: &SystemState, m: TaskId) -> Point {
        self.shared.pos(s, self.layout.evader(m))
    }

    pub fn region_grid(&self) -> &OccupancyGrid {
        &self.shared.coarse
    }

    /// Hide anchors nearest the evader's straight-line predicted path.
    pub fn hide_candidates(&self, s: &SystemState, m: TaskId) -> Vec<Point> {
        let y = self.evader_pos(s, m);
        let v = self.shared.evader_velocity(s, m);
        let h = self.scenario.params.predict_horizon;
        let end = [y[0] + v[0] * h, y[1] + v[1] * h];
        let seg_dist = |p: Point| {
            let d = [end[0] - y[0], end[1] - y[1]];
            let l2 = d[0] * d[0] + d[1] * d[1];
            let t = if l2 > 0.0 { (((p[0] - y[0]) * d[0] + (p[1] - y[1]) * d[1]) / l2).clamp(0.0, 1.0) } else { 0.0 };
            dist(p, [y[0] + t * d[0], y[1] + t * d[1]])
        };
        let mut pts: Vec<(f64, usize)> = self.hide_points.iter().enumerate().map(|(i, p)| (seg_dist(*p), i)).collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        pts.into_iter().take(self.scenario.params.hide_candidates).map(|(_, i)| self.hide_points[i]).collect()
    }

    /// Four workspace corners, inset, as enclosure targets.
    pub fn corner_targets(&self) -> Vec<Point> {
        let b = &self.scenario.workspace.bounds;
        let i = 0.2;
        vec![
            [b.min[0] + i, b.min[1] + i],
            [b.max[0] - i, b.min[1] + i],
            [b.max[0] - i, b.max[1] - i],
            [b.min[0] + i, b.max[1] - i],
        ]
    }
}

impl Domain for CaptureDomain {
    fn name(&self) -> &'static str {
        "capture"
    }
    fn initial_state(&self) -> SystemState {
        let mut v = vec![0.0; self.layout.dim()];
        for (n, p) in self.scenario.pursuers.iter().enumerate() {
            v[4 * n] = p[0];
            v[4 * n + 1] = p[1];
        }
        for (m, p) in self.scenario.evaders.iter().enumerate() {
            let i = self.layout.evader(m);
            v[i] = p[0];
            v[i + 1] = p[1];
        }
        SystemState::new(v).expect("finite scenario")
    }
    fn agents(&self) -> Vec<AgentId> {
        (0..self.layout.pursuers).collect()
    }
    fn tasks(&self) -> Vec<TaskId> {
        (0..self.layout.evaders).collect()
    }
    fn task_done(&self, s: &SystemState, m: TaskId) -> bool {
        capture_goal(&self.shared.pursuers(s), self.evader_pos(s, m), self.scenario.params.capture_radius)
    }
    fn task_slice(&self, m: TaskId, c: &Coalition) -> Vec<usize> {
        let mut slice: Vec<usize> = c.iter().flat_map(|n| 4 * n..4 * n + 4).collect();
        let e = self.layout.evader(m);
        slice.extend(e..e + 4);
        slice
    }
    fn modes(&self, m: TaskId) -> &[ModeRef] {
        &self.modes[m]
    }
    fn problem<'a>(
        &'a self,
        m: TaskId,
        c: &Coalition,
        _s: &SystemState,
        only: Option<&[ModeId]>,
    ) -> Box<dyn HybridProblem + 'a> {
        let modes = self.modes[m].iter().filter(|md| only.map_or(true, |o| o.contains(&md.id()))).cloned().collect();
        Box::new(CaptureTask { domain: self, task: m, coalition: c.clone(), modes })
    }
    fn estimate(&self, s: &SystemState, m: TaskId, c: &Coalition) -> f64 {
        let ps: Vec<Point> = c.iter().map(|n| self.pursuer_pos(s, n)).collect();
        capture_estimate(&ps, self.evader_pos(s, m)) / self.scenario.params.v_max
    }
    fn agent_task_distance(&self, s: &SystemState, n: AgentId, m: TaskId) -> f64 {
        dist(self.pursuer_pos(s, n), self.evader_pos(s, m))
    }
    fn baseline_mode(&self) -> ModeId {
        PursuitKind::PurePursuit.mode_id()
    }
    fn search_config(&self) -> &SearchConfig {
        &self.scenario.solver
    }
    fn idle_step(&self, s: &SystemState, m: TaskId, c: &Coalition) -> Vec<f64> {
        let sh = &self.shared;
        let mut out: Vec<f64> = c.iter().flat_map(|n| {
            let p = self.pursuer_pos(s, n);
            [p[0], p[1], 0.0, 0.0]
        }).collect();
        let y = self.evader_pos(s, m);
        let q = advance(&sh.ws, y, sh.evader_velocity(s, m), sh.dt);
        out.extend([q[0], q[1], (q[0] - y[0]) / sh.dt, (q[1] - y[1]) / sh.dt]);
        out
    }
    fn state_safe(&self, s: &SystemState) -> bool {
        let ws = &self.scenario.workspace;
        (0..self.layout.pursuers).all(|n| point_free(ws, self.pursuer_pos(s, n)))
            && (0..self.layout.evaders).all(|m| point_free(ws, self.evader_pos(s, m)))
    }
    fn speed_ok(&self, prev: &SystemState, next: &SystemState) -> bool {
        let reach = self.scenario.params.v_max * self.scenario.dt + 1e-9;
        (0..self.layout.pursuers).all(|n| dist(self.pursuer_pos(prev, n), self.pursuer_pos(next, n)) <= reach)
            && (0..self.layout.evaders).all(|m| dist(self.evader_pos(prev, m), self.evader_pos(next, m)) <= reach)
    }
    fn dt(&self) -> f64 {
        self.scenario.dt
    }
    fn trajectory(&self, s: &SystemState) -> Vec<TrajRow> {
        let mut rows: Vec<TrajRow> = (0..self.layout.pursuers)
            .map(|n| {
                let p = self.pursuer_pos(s, n);
                TrajRow { kind: "pursuer", id: n, x: p[0], y: p[1], extra: 0.0 }
            })
            .collect();
        rows.extend((0..self.layout.evaders).map(|m| {
            let p = self.evader_pos(s, m);
            TrajRow { kind: "evader", id: m, x: p[0], y: p[1], extra: 0.0 }
        }));
        rows
    }
}

/// Search problem for catching one evader with a fixed coalition.
pub struct CaptureTask<'a> {
    domain: &'a CaptureDomain,
    task: TaskId,
    coalition: Coalition,
    modes: Vec<ModeRef>,
}

impl CaptureTask<'_> {
    fn members(&self, s: &SystemState) -> Vec<Point> {
        self.coalition.iter().map(|n| self.domain.pursuer_pos(s, n)).collect()
    }
}

impl HybridProblem for CaptureTask<'_> {
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
        self.domain.state_safe(s)
    }
    fn global_h(&self, s: &SystemState) -> f64 {
        let y = self.domain.evader_pos(s, self.task);
        let p = &self.domain.scenario.params;
        let d = self.members(s).iter().map(|x| dist(*x, y)).fold(f64::INFINITY, f64::min);
        (d - p.capture_radius).max(0.0) / p.v_max
    }
    fn local_h(&self, _anchor: &SystemState, s: &SystemState) -> f64 {
        capture_estimate(&self.members(s), self.domain.evader_pos(s, self.task)) / self.domain.scenario.params.v_max
    }
    fn features(&self, s: &SystemState) -> Vec<f64> {
        let mut f: Vec<f64> = self.members(s).into_iter().flatten().collect();
        f.extend(self.domain.evader_pos(s, self.task));
        f
    }
    fn primitives(&self, mode: &dyn Mode, s: &SystemState) -> Vec<Vec<f64>> {
        match PursuitKind::from_id(mode.id()) {
            Some(PursuitKind::PurePursuit) => vec![self.domain.evader_pos(s, self.task).to_vec()],
            Some(PursuitKind::HideAttack) => {
                let c = self.domain.hide_candidates(s, self.task);
                if c.is_empty() {
                    vec![self.domain.evader_pos(s, self.task).to_vec()]
                } else {
                    c.into_iter().map(|p| p.to_vec()).collect()
                }
            }
            Some(PursuitKind::Enclosure) => self.domain.corner_targets().into_iter().map(|p| p.to_vec()).collect(),
            None => Vec::new(),
        }
    }
}

/// Small default scenario: 2.5 m square, four blocks, 4 pursuers, 2 evaders.
pub fn demo_scenario() -> CaptureScenario {
    // two pursuers sit between the evaders and two wait on the far wall, so
    // nearest-first round-robin pairs the far evader with a distant pursuer;
    // the bar blocks straight-line pursuit toward the right-hand evader
    CaptureScenario {
        workspace: Workspace {
            bounds: Rect::new(0.0, 0.0, 2.5, 2.5),
            obstacles: vec![Rect::new(1.55, 0.8, 1.7, 1.7)],
            grid_resolution: 0.05,
        },
        dt: 0.05,
        pursuers: vec![[1.1, 1.0], [1.1, 1.5], [0.2, 0.3], [0.2, 2.2]],
        evaders: vec![[0.4, 1.25], [2.1, 1.25]],
        params: CaptureParams::default(),
        solver: default_capture_search(),
    }
}
