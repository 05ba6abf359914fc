//! Planar workspace geometry, occupancy grids and grid shortest paths.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

pub type Point = [f64; 2];

pub fn dist(a: Point, b: Point) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Axis-aligned rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub min: Point,
    pub max: Point,
}

impl Rect {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self { min: [x0.min(x1), y0.min(y1)], max: [x0.max(x1), y0.max(y1)] }
    }

    pub fn width(&self) -> f64 {
        self.max[0] - self.min[0]
    }

    pub fn height(&self) -> f64 {
        self.max[1] - self.min[1]
    }

    pub fn center(&self) -> Point {
        [(self.min[0] + self.max[0]) / 2.0, (self.min[1] + self.max[1]) / 2.0]
    }

    pub fn contains(&self, p: Point) -> bool {
        p[0] >= self.min[0] && p[0] <= self.max[0] && p[1] >= self.min[1] && p[1] <= self.max[1]
    }

    pub fn inflate(&self, r: f64) -> Rect {
        Rect { min: [self.min[0] - r, self.min[1] - r], max: [self.max[0] + r, self.max[1] + r] }
    }

    pub fn intersects(&self, o: &Rect) -> bool {
        self.min[0] <= o.max[0] && o.min[0] <= self.max[0] && self.min[1] <= o.max[1] && o.min[1] <= self.max[1]
    }

    /// Euclidean distance from `p` to the rectangle (0 inside).
    pub fn distance_to(&self, p: Point) -> f64 {
        let dx = (self.min[0] - p[0]).max(0.0).max(p[0] - self.max[0]);
        let dy = (self.min[1] - p[1]).max(0.0).max(p[1] - self.max[1]);
        (dx * dx + dy * dy).sqrt()
    }

    /// Whether the closed segment `a`-`b` touches the rectangle (slab test).
    pub fn segment_intersects(&self, a: Point, b: Point) -> bool {
        let mut t0 = 0.0f64;
        let mut t1 = 1.0f64;
        for k in 0..2 {
            let d = b[k] - a[k];
            if d.abs() < 1e-15 {
                if a[k] < self.min[k] || a[k] > self.max[k] {
                    return false;
                }
            } else {
                let mut ta = (self.min[k] - a[k]) / d;
                let mut tb = (self.max[k] - a[k]) / d;
                if ta > tb {
                    std::mem::swap(&mut ta, &mut tb);
                }
                t0 = t0.max(ta);
                t1 = t1.min(tb);
                if t0 > t1 {
                    return false;
                }
            }
        }
        true
    }

    pub fn corners(&self) -> [Point; 4] {
        [self.min, [self.max[0], self.min[1]], self.max, [self.min[0], self.max[1]]]
    }
}

/// Bounded workspace with rectangular obstacles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Workspace {
    pub bounds: Rect,
    #[serde(default)]
    pub obstacles: Vec<Rect>,
    pub grid_resolution: f64,
}

impl Workspace {
    /// Disc of radius `r` at `p` lies inside the bounds and clear of obstacles.
    pub fn disc_free(&self, p: Point, r: f64) -> bool {
        p[0] - r >= self.bounds.min[0]
            && p[0] + r <= self.bounds.max[0]
            && p[1] - r >= self.bounds.min[1]
            && p[1] + r <= self.bounds.max[1]
            && self.obstacles.iter().all(|o| o.distance_to(p) > r)
    }

    /// Straight segment is clear of every obstacle inflated by `r`.
    pub fn segment_free(&self, a: Point, b: Point, r: f64) -> bool {
        self.obstacles.iter().all(|o| !o.inflate(r).segment_intersects(a, b))
    }
}

pub type Cell = (usize, usize);

const SQRT2: f64 = std::f64::consts::SQRT_2;

/// Occupancy grid over a workspace; a cell is blocked iff it intersects an
/// obstacle inflated by the footprint radius or pokes out of the shrunk
/// bounds.
#[derive(Debug, Clone)]
pub struct OccupancyGrid {
    pub origin: Point,
    pub resolution: f64,
    pub nx: usize,
    pub ny: usize,
    blocked: Vec<bool>,
}

impl OccupancyGrid {
    pub fn build(ws: &Workspace, radius: f64) -> Self {
        let res = ws.grid_resolution;
        let nx = (ws.bounds.width() / res).ceil().max(1.0) as usize;
        let ny = (ws.bounds.height() / res).ceil().max(1.0) as usize;
        let inflated: Vec<Rect> = ws.obstacles.iter().map(|o| o.inflate(radius)).collect();
        let inner = Rect {
            min: [ws.bounds.min[0] + radius, ws.bounds.min[1] + radius],
            max: [ws.bounds.max[0] - radius, ws.bounds.max[1] - radius],
        };
        let mut blocked = vec![false; nx * ny];
        for j in 0..ny {
            for i in 0..nx {
                let x0 = ws.bounds.min[0] + i as f64 * res;
                let y0 = ws.bounds.min[1] + j as f64 * res;
                let cell = Rect::new(x0, y0, x0 + res, y0 + res);
                let c = cell.center();
                blocked[j * nx + i] = !inner.contains(c) || inflated.iter().any(|o| o.intersects(&cell));
            }
        }
        Self { origin: ws.bounds.min, resolution: res, nx, ny, blocked }
    }

    pub fn index(&self, c: Cell) -> usize {
        c.1 * self.nx + c.0
    }

    pub fn cell_of(&self, p: Point) -> Option<Cell> {
        let i = ((p[0] - self.origin[0]) / self.resolution).floor();
        let j = ((p[1] - self.origin[1]) / self.resolution).floor();
        if i < 0.0 || j < 0.0 || i as usize >= self.nx || j as usize >= self.ny {
            return None;
        }
        Some((i as usize, j as usize))
    }

    pub fn center(&self, c: Cell) -> Point {
        [
            self.origin[0] + (c.0 as f64 + 0.5) * self.resolution,
            self.origin[1] + (c.1 as f64 + 0.5) * self.resolution,
        ]
    }

    pub fn is_blocked(&self, c: Cell) -> bool {
        self.blocked[self.index(c)]
    }

    pub fn blocked_cells(&self) -> &[bool] {
        &self.blocked
    }

    /// 8-connected free neighbours; diagonals may not cut blocked corners.
    pub fn neighbors(&self, c: Cell) -> Vec<(Cell, f64)> {
        let mut out = Vec::with_capacity(8);
        let (x, y) = (c.0 as i64, c.1 as i64);
        let free = |x: i64, y: i64| {
            x >= 0 && y >= 0 && (x as usize) < self.nx && (y as usize) < self.ny && !self.blocked[y as usize * self.nx + x as usize]
        };
        for dy in -1i64..=1 {
            for dx in -1i64..=1 {
                if (dx, dy) == (0, 0) || !free(x + dx, y + dy) {
                    continue;
                }
                if dx != 0 && dy != 0 {
                    if !free(x + dx, y) || !free(x, y + dy) {
                        continue;
                    }
                    out.push((((x + dx) as usize, (y + dy) as usize), SQRT2 * self.resolution));
                } else {
                    out.push((((x + dx) as usize, (y + dy) as usize), self.resolution));
                }
            }
        }
        out
    }

    /// Nearest free cell to `p` within `rings` cells, or `None`.
    pub fn nearest_free(&self, p: Point, rings: usize) -> Option<Cell> {
        let c = self.cell_of(p).or_else(|| {
            let x = ((p[0] - self.origin[0]) / self.resolution).floor().clamp(0.0, (self.nx - 1) as f64);
            let y = ((p[1] - self.origin[1]) / self.resolution).floor().clamp(0.0, (self.ny - 1) as f64);
            Some((x as usize, y as usize))
        })?;
        if !self.is_blocked(c) {
            return Some(c);
        }
        let mut best: Option<(f64, Cell)> = None;
        let r = rings as i64;
        for dy in -r..=r {
            for dx in -r..=r {
                let (x, y) = (c.0 as i64 + dx, c.1 as i64 + dy);
                if x < 0 || y < 0 || x as usize >= self.nx || y as usize >= self.ny {
                    continue;
                }
                let n = (x as usize, y as usize);
                if self.is_blocked(n) {
                    continue;
                }
                let d = dist(self.center(n), p);
                if best.map_or(true, |(bd, _)| d < bd) {
                    best = Some((d, n));
                }
            }
        }
        best.map(|(_, n)| n)
    }

    /// A* over the 8-connected grid with the octile heuristic; returns the
    /// path length in metres and the cell sequence.
    pub fn astar(&self, from: Cell, to: Cell) -> Option<(f64, Vec<Cell>)> {
        if self.is_blocked(from) || self.is_blocked(to) {
            return None;
        }
        let h = |c: Cell| {
            let dx = (c.0 as f64 - to.0 as f64).abs();
            let dy = (c.1 as f64 - to.1 as f64).abs();
            (dx.max(dy) + (SQRT2 - 1.0) * dx.min(dy)) * self.resolution
        };
        let mut g = vec![f64::INFINITY; self.nx * self.ny];
        let mut parent = vec![usize::MAX; self.nx * self.ny];
        let mut heap = BinaryHeap::new();
        g[self.index(from)] = 0.0;
        heap.push(HeapItem { key: h(from), idx: self.index(from) });
        while let Some(HeapItem { key, idx }) = heap.pop() {
            let c = (idx % self.nx, idx / self.nx);
            if key > g[idx] + h(c) + 1e-12 {
                continue;
            }
            if c == to {
                let mut path = vec![c];
                let mut cur = idx;
                while parent[cur] != usize::MAX {
                    cur = parent[cur];
                    path.push((cur % self.nx, cur / self.nx));
                }
                path.reverse();
                return Some((g[idx], path));
            }
            for (n, w) in self.neighbors(c) {
                let ni = self.index(n);
                let cand = g[idx] + w;
                if cand < g[ni] {
                    g[ni] = cand;
                    parent[ni] = idx;
                    heap.push(HeapItem { key: cand + h(n), idx: ni });
                }
            }
        }
        None
    }

    /// Single-source shortest-path distances to `goal` from every cell.
    pub fn distance_field(&self, goal: Cell) -> DistanceField {
        let mut d = vec![f64::INFINITY; self.nx * self.ny];
        if !self.is_blocked(goal) {
            let mut heap = BinaryHeap::new();
            d[self.index(goal)] = 0.0;
            heap.push(HeapItem { key: 0.0, idx: self.index(goal) });
            while let Some(HeapItem { key, idx }) = heap.pop() {
                if key > d[idx] {
                    continue;
                }
                let c = (idx % self.nx, idx / self.nx);
                for (n, w) in self.neighbors(c) {
                    let ni = self.index(n);
                    if key + w < d[ni] {
                        d[ni] = key + w;
                        heap.push(HeapItem { key: key + w, idx: ni });
                    }
                }
            }
        }
        DistanceField { grid: self.clone(), goal, dist: d }
    }
}

/// Precomputed grid distances to one goal cell.
#[derive(Debug, Clone)]
pub struct DistanceField {
    grid: OccupancyGrid,
    pub goal: Cell,
    dist: Vec<f64>,
}

impl DistanceField {
    pub fn grid(&self) -> &OccupancyGrid {
        &self.grid
    }

    pub fn cell_distance(&self, c: Cell) -> f64 {
        self.dist[self.grid.index(c)]
    }

    /// Distance from the cell of `p` (or the nearest free cell close by).
    pub fn at(&self, p: Point) -> f64 {
        match self.grid.nearest_free(p, 3) {
            Some(c) => self.cell_distance(c),
            None => f64::INFINITY,
        }
    }

    /// Walks down the field from `p` for roughly `length` metres and returns
    /// the reached cell centre.
    pub fn descend(&self, p: Point, length: f64) -> Point {
        let Some(mut c) = self.grid.nearest_free(p, 3) else {
            return p;
        };
        let mut walked = 0.0;
        while walked < length && c != self.goal {
            let here = self.cell_distance(c);
            let next = self
                .grid
                .neighbors(c)
                .into_iter()
                .map(|(n, w)| (self.cell_distance(n), w, n))
                .filter(|(d, _, _)| *d < here)
                .min_by(|a, b| a.0.total_cmp(&b.0).then(a.2.cmp(&b.2)));
            match next {
                Some((_, w, n)) => {
                    walked += w;
                    c = n;
                }
                None => break,
            }
        }
        self.grid.center(c)
    }
}

#[derive(Debug, Clone, Copy)]
struct HeapItem {
    key: f64,
    idx: usize,
}

impl PartialEq for HeapItem {
    fn eq(&self, o: &Self) -> bool {
        self.cmp(o) == Ordering::Equal
    }
}
impl Eq for HeapItem {}
impl PartialOrd for HeapItem {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for HeapItem {
    // min-heap on key, ties on index for determinism
    fn cmp(&self, o: &Self) -> Ordering {
        o.key.total_cmp(&self.key).then(o.idx.cmp(&self.idx))
    }
}

/// Geodesic distance estimate: exact Euclidean when the straight segment is
/// clear, otherwise the grid distance (never below Euclidean).
pub fn geodesic(ws: &Workspace, field: &DistanceField, radius: f64, from: Point, to: Point) -> f64 {
    let straight = dist(from, to);
    if ws.segment_free(from, to, radius) {
        return straight;
    }
    field.at(from).max(straight)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ws(obstacles: Vec<Rect>) -> Workspace {
        Workspace { bounds: Rect::new(0.0, 0.0, 4.0, 3.0), obstacles, grid_resolution: 0.1 }
    }

    // plain Dijkstra with an O(V^2) frontier scan and the same move rules
    fn oracle(grid: &OccupancyGrid, from: Cell, to: Cell) -> Option<f64> {
        let n = grid.nx * grid.ny;
        let mut d = vec![f64::INFINITY; n];
        let mut done = vec![false; n];
        d[grid.index(from)] = 0.0;
        loop {
            let u = (0..n).filter(|&i| !done[i] && d[i].is_finite()).min_by(|&a, &b| d[a].total_cmp(&d[b]))?;
            done[u] = true;
            let c = (u % grid.nx, u / grid.nx);
            if c == to {
                return Some(d[u]);
            }
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let (x, y) = (c.0 as i64 + dx, c.1 as i64 + dy);
                    let ok = |x: i64, y: i64| {
                        x >= 0 && y >= 0 && (x as usize) < grid.nx && (y as usize) < grid.ny && !grid.is_blocked((x as usize, y as usize))
                    };
                    if (dx, dy) == (0, 0) || !ok(x, y) {
                        continue;
                    }
                    if dx != 0 && dy != 0 && (!ok(c.0 as i64 + dx, c.1 as i64) || !ok(c.0 as i64, c.1 as i64 + dy)) {
                        continue;
                    }
                    let w = if dx != 0 && dy != 0 { 0.1 * 2f64.sqrt() } else { 0.1 };
                    let v = grid.index((x as usize, y as usize));
                    d[v] = d[v].min(d[u] + w);
                }
            }
        }
    }

    #[test]
    fn rect_geometry() {
        let r = Rect::new(1.0, 1.0, 2.0, 2.0);
        assert!(r.segment_intersects([0.0, 1.5], [3.0, 1.5]));
        assert!(!r.segment_intersects([0.0, 0.0], [3.0, 0.5]));
        assert!(r.segment_intersects([1.5, 1.5], [1.6, 1.6]));
        assert_eq!(r.distance_to([1.5, 1.5]), 0.0);
        assert!((r.distance_to([3.0, 3.0]) - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn wall_detour_matches_dijkstra() {
        let w = ws(vec![Rect::new(1.9, 0.0, 2.1, 2.2)]);
        let g = OccupancyGrid::build(&w, 0.0);
        let a = g.cell_of([1.0, 0.5]).unwrap();
        let b = g.cell_of([3.0, 0.5]).unwrap();
        let (len, path) = g.astar(a, b).unwrap();
        let o = oracle(&g, a, b).unwrap();
        assert!((len - o).abs() < 1e-9, "{len} vs {o}");
        assert_eq!(path.first(), Some(&a));
        assert_eq!(path.last(), Some(&b));
        let field = g.distance_field(b);
        assert!((field.cell_distance(a) - o).abs() < 1e-9);
        assert!(geodesic(&w, &field, 0.0, g.center(a), g.center(b)) >= 2.0);
    }

    #[test]
    fn empty_workspace_is_euclidean() {
        let w = ws(vec![]);
        let g = OccupancyGrid::build(&w, 0.0);
        let field = g.distance_field(g.cell_of([3.5, 2.5]).unwrap());
        let d = geodesic(&w, &field, 0.0, [0.5, 0.5], [3.5, 2.5]);
        assert!((d - dist([0.5, 0.5], [3.5, 2.5])).abs() < 1e-12);
        assert_eq!(geodesic(&w, &field, 0.0, [3.5, 2.5], [3.5, 2.5]), 0.0);
    }

    #[test]
    fn descend_moves_toward_goal() {
        let w = ws(vec![Rect::new(1.9, 0.0, 2.1, 2.2)]);
        let g = OccupancyGrid::build(&w, 0.0);
        let goal = g.cell_of([3.0, 0.5]).unwrap();
        let field = g.distance_field(goal);
        let p = [1.0, 0.5];
        let wp = field.descend(p, 1.0);
        assert!(field.at(wp) < field.at(p) - 0.8);
    }

    proptest! {
        #[test]
        fn astar_matches_oracle(seed_obs in proptest::collection::vec((0.0f64..3.5, 0.0f64..2.5, 0.1f64..0.8, 0.1f64..0.8), 0..4),
                                a in (0.0f64..4.0, 0.0f64..3.0), b in (0.0f64..4.0, 0.0f64..3.0)) {
            let obs = seed_obs.iter().map(|&(x, y, w, h)| Rect::new(x, y, x + w, y + h)).collect();
            let w = ws(obs);
            let g = OccupancyGrid::build(&w, 0.0);
            let (ca, cb) = (g.cell_of([a.0, a.1]).unwrap(), g.cell_of([b.0, b.1]).unwrap());
            prop_assume!(!g.is_blocked(ca) && !g.is_blocked(cb));
            let got = g.astar(ca, cb).map(|(l, _)| l);
            let want = oracle(&g, ca, cb);
            match (got, want) {
                (Some(x), Some(y)) => prop_assert!((x - y).abs() < 1e-9),
                (None, None) => {}
                other => prop_assert!(false, "mismatch {:?}", other),
            }
        }
    }
}
