//! Expansion-time parameter proposals: primitive seeding and iterative local
//! refinement, backed by a projected-gradient box-constrained solver.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Mode, ModeId, ParamBounds, SystemState};
use crate::search::{child_heuristics, distance, expand_node, Child, HybridProblem, SearchConfig, SearchNode, SearchStats};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OptError {
    #[error("objective evaluated to a non-finite value")]
    NonFiniteObjective,
    #[error("every primitive of mode {0} left the safe set")]
    AllPrimitivesInfeasible(ModeId),
    #[error("empty primitive set")]
    NoPrimitives,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub tol: f64,
    pub max_iters: usize,
    /// Finite-difference step relative to each parameter's range.
    pub fd_step: f64,
    pub armijo: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { tol: 1e-6, max_iters: 200, fd_step: 1e-5, armijo: 1e-4 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrimitiveSet {
    pub mode: ModeId,
    pub primitives: Vec<Vec<f64>>,
}

impl PrimitiveSet {
    pub fn new(mode: ModeId, primitives: Vec<Vec<f64>>, bounds: &ParamBounds) -> Result<Self, OptError> {
        if primitives.is_empty() {
            return Err(OptError::NoPrimitives);
        }
        let primitives = primitives.iter().map(|p| bounds.project(p)).collect();
        Ok(Self { mode, primitives })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefineIterate {
    pub param: Vec<f64>,
    pub end_state: SystemState,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefinementTrace {
    pub iterates: Vec<RefineIterate>,
    pub converged: bool,
}

/// Central finite-difference gradient; falls back to one-sided differences
/// against a bound.
pub fn fd_gradient(objective: &dyn Fn(&[f64]) -> f64, x: &[f64], bounds: &ParamBounds, rel_step: f64) -> Vec<f64> {
    let mut g = vec![0.0; x.len()];
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        let range = bounds.range(i);
        let h = rel_step * if range > 0.0 && range.is_finite() { range } else { 1.0 };
        let hi = (x[i] + h).min(bounds.upper[i]);
        let lo = (x[i] - h).max(bounds.lower[i]);
        if hi <= lo {
            continue;
        }
        probe[i] = hi;
        let fh = objective(&probe);
        probe[i] = lo;
        let fl = objective(&probe);
        probe[i] = x[i];
        g[i] = (fh - fl) / (hi - lo);
    }
    g
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Box-constrained local minimization: projected gradient descent with
/// Barzilai-Borwein trial steps and Armijo backtracking along the projection
/// arc. Only improving steps are accepted.
pub fn solve_local(
    objective: &dyn Fn(&[f64]) -> f64,
    bounds: &ParamBounds,
    init: &[f64],
    config: &SolverConfig,
) -> Result<Vec<f64>, OptError> {
    let eval = |x: &[f64]| -> Result<f64, OptError> {
        let v = objective(x);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(OptError::NonFiniteObjective)
        }
    };
    let mut x = bounds.project(init);
    let mut fx = eval(&x)?;
    let mut g = fd_gradient(objective, &x, bounds, config.fd_step);
    let mut step = 1.0;
    for _ in 0..config.max_iters {
        let trial: Vec<f64> = x.iter().zip(&g).map(|(xi, gi)| xi - gi).collect();
        let pg: Vec<f64> = bounds.project(&trial).iter().zip(&x).map(|(p, xi)| p - xi).collect();
        if dot(&pg, &pg).sqrt() < config.tol {
            break;
        }
        let mut alpha = step;
        let mut accepted = None;
        for _ in 0..60 {
            let cand: Vec<f64> = x.iter().zip(&g).map(|(xi, gi)| xi - alpha * gi).collect();
            let cand = bounds.project(&cand);
            let d: Vec<f64> = cand.iter().zip(&x).map(|(c, xi)| c - xi).collect();
            let fc = eval(&cand)?;
            if fc <= fx + config.armijo * dot(&g, &d) && fc <= fx {
                accepted = Some((cand, fc, d));
                break;
            }
            alpha *= 0.5;
        }
        let Some((x_new, f_new, s)) = accepted else { break };
        let g_new = fd_gradient(objective, &x_new, bounds, config.fd_step);
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        step = if sy > 0.0 { (dot(&s, &s) / sy).clamp(1e-10, 1e10) } else { (alpha * 2.0).min(1e10) };
        x = x_new;
        fx = f_new;
        g = g_new;
    }
    Ok(x)
}

/// Expands every primitive and picks the child with the lowest
/// `cost + h_b + h_local(node, child)`; ties go to the earlier primitive.
/// Returns all surviving children and the index of the best.
pub fn primitive_expand(
    problem: &dyn HybridProblem,
    node: &SearchNode,
    mode: &dyn Mode,
    primitives: &[Vec<f64>],
    config: &SearchConfig,
    stats: &mut SearchStats,
) -> Result<(Vec<Child>, usize), OptError> {
    if primitives.is_empty() {
        return Err(OptError::NoPrimitives);
    }
    let (children, filtered) = expand_node(problem, node, mode, primitives, config.dwell);
    stats.filtered += filtered;
    if children.is_empty() {
        return Err(OptError::AllPrimitivesInfeasible(mode.id()));
    }
    let mut best = 0;
    let mut best_score = f64::INFINITY;
    for (i, c) in children.iter().enumerate() {
        let (_, h_b) = child_heuristics(problem, node, c, config, stats);
        let score = c.cost_to_come + h_b + problem.local_h(&node.state, c.state());
        if score < best_score {
            best_score = score;
            best = i;
        }
    }
    Ok((children, best))
}

/// Full-dwell rollout ignoring safety and goal truncation; used inside the
/// refinement objective.
fn simulate(
    problem: &dyn HybridProblem,
    start: &SystemState,
    mode: &dyn Mode,
    param: &[f64],
    dwell: u32,
) -> (f64, SystemState) {
    let coalition = problem.coalition();
    let mut s = start.clone();
    let mut cost = 0.0;
    for _ in 0..dwell {
        cost += mode.step_cost(&s, coalition, param);
        s = s.advanced(mode.step(&s, coalition, param));
    }
    (cost, s)
}

/// Iteratively re-optimizes the parameter against the window cost plus the
/// local heuristic anchored at the previous end state, softly confined to
/// the neighborhood of that end state.
pub fn refine_parameters(
    problem: &dyn HybridProblem,
    node: &SearchNode,
    mode: &dyn Mode,
    seed: &[f64],
    config: &SearchConfig,
) -> RefinementTrace {
    let bounds = mode.bounds();
    let mut param = bounds.project(seed);
    let mut anchor = simulate(problem, &node.state, mode, &param, config.dwell).1;
    let mut iterates = Vec::new();
    let mut last_value = f64::INFINITY;
    let mut converged = false;

    for _ in 0..config.refine_iters {
        let anchor_feat = problem.features(&anchor);
        let objective = |p: &[f64]| -> f64 {
            let (cost, end) = simulate(problem, &node.state, mode, p, config.dwell);
            let excess = (distance(&problem.features(&end), &anchor_feat) - config.neighborhood).max(0.0);
            cost + problem.local_h(&anchor, &end) + config.penalty_weight * excess * excess
        };
        let next = match solve_local(&objective, bounds, &param, &config.solver) {
            Ok(p) => p,
            Err(_) => break,
        };
        let value = objective(&next);
        if !value.is_finite() || value > last_value {
            break;
        }
        last_value = value;
        let end = simulate(problem, &node.state, mode, &next, config.dwell).1;
        let moved = distance(&problem.features(&end), &anchor_feat);
        iterates.push(RefineIterate { param: next.clone(), end_state: end.clone(), objective: value });
        param = next;
        anchor = end;
        if moved < config.neighborhood {
            converged = true;
            break;
        }
    }
    RefinementTrace { iterates, converged }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::search::SearchNode;
    use crate::toy::{ChainProblem, QuadraticProblem};
    use proptest::prelude::*;

    fn cfg() -> SolverConfig {
        SolverConfig::default()
    }

    #[test]
    fn solve_local_origin() {
        let f = |p: &[f64]| p.iter().map(|v| v * v).sum::<f64>();
        let b = ParamBounds::uniform(3, -2.0, 3.0);
        let x = solve_local(&f, &b, &[1.5, -1.0, 2.5], &cfg()).unwrap();
        assert!(x.iter().all(|v| v.abs() < 1e-6), "{x:?}");
    }

    #[test]
    fn solve_local_rosenbrock_beats_grid() {
        let rosen = |p: &[f64]| (1.0 - p[0]).powi(2) + 100.0 * (p[1] - p[0] * p[0]).powi(2);
        let b = ParamBounds::uniform(2, -2.0, 2.0);
        let cfg = SolverConfig { tol: 1e-9, max_iters: 20_000, ..SolverConfig::default() };
        let x = solve_local(&rosen, &b, &[-1.0, 1.0], &cfg).unwrap();
        // dense 200 x 200 grid oracle
        let mut grid_best = f64::INFINITY;
        for i in 0..200 {
            for j in 0..200 {
                let p = [-2.0 + 4.0 * i as f64 / 199.0, -2.0 + 4.0 * j as f64 / 199.0];
                grid_best = grid_best.min(rosen(&p));
            }
        }
        assert!(rosen(&x) <= grid_best, "{} > {}", rosen(&x), grid_best);
    }

    #[test]
    fn solve_local_boundary_minimum() {
        let f = |p: &[f64]| 2.0 * p[0] - p[1];
        let b = ParamBounds::new(vec![0.0, -1.0], vec![1.0, 1.0]);
        let x = solve_local(&f, &b, &[0.5, 0.0], &cfg()).unwrap();
        assert!(x[0].abs() < 1e-6 && (x[1] - 1.0).abs() < 1e-6, "{x:?}");
    }

    #[test]
    fn solve_local_non_finite() {
        let f = |p: &[f64]| if p[0] < 0.5 { f64::NAN } else { p[0] };
        let b = ParamBounds::uniform(1, 0.0, 1.0);
        assert_eq!(solve_local(&f, &b, &[1.0], &cfg()), Err(OptError::NonFiniteObjective));
    }

    #[test]
    fn fd_gradient_polynomial() {
        let f = |p: &[f64]| p[0].powi(3) - 2.0 * p[0] * p[1] + 0.5 * p[1].powi(2);
        let df = |p: &[f64]| vec![3.0 * p[0] * p[0] - 2.0 * p[1], -2.0 * p[0] + p[1]];
        let b = ParamBounds::uniform(2, -3.0, 3.0);
        let x = [0.7, -1.3];
        let g = fd_gradient(&f, &x, &b, 1e-5);
        for (a, e) in g.iter().zip(df(&x)) {
            assert!((a - e).abs() <= 1e-4 * e.abs().max(1e-8));
        }
    }

    #[test]
    fn primitive_expand_examples() {
        let p = ChainProblem::new(0.0, 5.0, -10.0, 10.0);
        let node = SearchNode::root(SystemState::new(vec![0.0]).unwrap(), 5.0, false);
        let cfg = ChainProblem::exact_config(0.5);
        let mut stats = SearchStats::default();
        let right = p.modes()[0].clone();
        let (kids, best) = primitive_expand(&p, &node, right.as_ref(), &[vec![1.0]], &cfg, &mut stats).unwrap();
        assert_eq!((kids.len(), best), (1, 0));

        let (kids, best) =
            primitive_expand(&p, &node, right.as_ref(), &[vec![-1.0], vec![1.0]], &cfg, &mut stats).unwrap();
        assert_eq!(kids.len(), 2);
        assert_eq!(best, 1);
        assert!(kids[best].state().values[0] > 0.0);
    }

    #[test]
    fn primitive_expand_all_into_wall() {
        let p = ChainProblem::new(0.0, 5.0, -0.5, 0.5);
        let node = SearchNode::root(SystemState::new(vec![0.0]).unwrap(), 5.0, false);
        let cfg = ChainProblem::exact_config(0.5);
        let mut stats = SearchStats::default();
        let right = p.modes()[0].clone();
        let err = primitive_expand(&p, &node, right.as_ref(), &[vec![-1.0], vec![1.0]], &cfg, &mut stats).unwrap_err();
        assert_eq!(err, OptError::AllPrimitivesInfeasible(right.id()));
    }

    #[test]
    fn refine_fixed_point_single_iterate() {
        let q = QuadraticProblem::new(0.3, ParamBounds::uniform(1, -1.0, 1.0));
        let node = SearchNode::root(SystemState::new(vec![0.0]).unwrap(), 0.0, false);
        let trace = refine_parameters(&q, &node, q.mode(), &[0.3], &q.config());
        assert!(trace.converged);
        assert_eq!(trace.iterates.len(), 1);
    }

    #[test]
    fn refine_reaches_interior_minimum() {
        let q = QuadraticProblem::new(0.42, ParamBounds::uniform(1, -1.0, 1.0));
        let node = SearchNode::root(SystemState::new(vec![0.0]).unwrap(), 0.0, false);
        let trace = refine_parameters(&q, &node, q.mode(), &[-0.9], &q.config());
        let last = trace.iterates.last().unwrap();
        assert!((last.param[0] - 0.42).abs() < 1e-3, "{:?}", last.param);
    }

    #[test]
    fn refine_clamps_to_bound() {
        let q = QuadraticProblem::new(1.7, ParamBounds::uniform(1, -1.0, 1.0));
        let node = SearchNode::root(SystemState::new(vec![0.0]).unwrap(), 0.0, false);
        let trace = refine_parameters(&q, &node, q.mode(), &[0.0], &q.config());
        let last = trace.iterates.last().unwrap();
        assert!((last.param[0] - 1.0).abs() < 1e-6);
    }

    proptest! {
        #[test]
        fn refinement_in_bounds_and_non_increasing(a in -2.0..2.0f64, seed in -1.0..1.0f64) {
            let q = QuadraticProblem::new(a, ParamBounds::uniform(1, -1.0, 1.0));
            let node = SearchNode::root(SystemState::new(vec![0.0]).unwrap(), 0.0, false);
            let trace = refine_parameters(&q, &node, q.mode(), &[seed], &q.config());
            for w in trace.iterates.windows(2) {
                prop_assert!(w[1].objective <= w[0].objective);
            }
            for it in &trace.iterates {
                prop_assert!(q.mode().bounds().contains(&it.param));
            }
        }

        #[test]
        fn solver_stays_in_box(x0 in -5.0..5.0f64, y0 in -5.0..5.0f64, cx in -9.0..9.0f64, cy in -9.0..9.0f64) {
            let f = move |p: &[f64]| (p[0] - cx).powi(2) + 3.0 * (p[1] - cy).powi(2);
            let b = ParamBounds::uniform(2, -5.0, 5.0);
            let x = solve_local(&f, &b, &[x0, y0], &SolverConfig::default()).unwrap();
            prop_assert!(b.contains(&x));
            prop_assert!((x[0] - cx.clamp(-5.0, 5.0)).abs() < 1e-4);
            prop_assert!((x[1] - cy.clamp(-5.0, 5.0)).abs() < 1e-4);
        }
    }
}
