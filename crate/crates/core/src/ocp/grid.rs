use rayon::prelude::*;

use super::{OcpBackend, OcpInstance, OcpSolution, REPLAY_TOL};
use crate::error::{Error, Result};
use crate::model::{is_admissible, Input, State};

pub const DEFAULT_GRID_BUDGET: u128 = 10_000_000;

/// Finite set of candidate inputs, used identically at every stage.
#[derive(Debug, Clone, PartialEq)]
pub struct InputGrid {
    points: Vec<Input>,
}

impl InputGrid {
    pub fn new(points: Vec<Input>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidArgument("input grid is empty".into()));
        }
        let dim = points[0].len();
        if points.iter().any(|p| p.len() != dim) {
            return Err(Error::Dimension(
                "input grid points have different lengths".into(),
            ));
        }
        Ok(Self { points })
    }

    /// `count` equispaced values on `[lo, hi]` for a scalar input.
    pub fn uniform(lo: f64, hi: f64, count: usize) -> Result<Self> {
        if count < 2 || !(lo < hi) {
            return Err(Error::InvalidArgument(format!(
                "bad uniform grid [{lo}, {hi}] with {count} points"
            )));
        }
        let step = (hi - lo) / (count - 1) as f64;
        Self::new(
            (0..count)
                .map(|i| Input::from_element(1, lo + step * i as f64))
                .collect(),
        )
    }

    /// Cartesian product of per-component value lists, first component varying slowest.
    pub fn tensor(axes: &[Vec<f64>]) -> Result<Self> {
        let mut points = vec![Vec::new()];
        for axis in axes {
            points = points
                .into_iter()
                .flat_map(|p| {
                    axis.iter().map(move |&v| {
                        let mut q = p.clone();
                        q.push(v);
                        q
                    })
                })
                .collect();
        }
        Self::new(points.into_iter().map(Input::from_vec).collect())
    }

    pub fn points(&self) -> &[Input] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Exhaustive search over `grid^N`. Stages are pruned as soon as a pair leaves the
/// constraint set. Among equal values the lexicographically smallest index sequence wins.
pub fn brute_force_solve(
    inst: &OcpInstance<'_>,
    grid: &InputGrid,
    budget: u128,
) -> Result<OcpSolution> {
    let n = inst.horizon;
    let count = (grid.len() as u128)
        .checked_pow(n as u32)
        .unwrap_or(u128::MAX);
    if count > budget {
        return Err(Error::BudgetExceeded { count, budget });
    }
    if grid.points[0].len() != inst.model.input_dim() {
        return Err(Error::Dimension(
            "grid points do not match the model input dimension".into(),
        ));
    }

    let per_first: Vec<Option<(f64, Vec<usize>)>> = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let x0 = inst.initial_state;
            let u = &grid.points[i];
            if !is_admissible(inst.model, x0, u, REPLAY_TOL) {
                return None;
            }
            let cost = inst.model.stage_cost(x0, u);
            let next = inst.model.dynamics(x0, u);
            let mut path = vec![i];
            let mut best = None;
            search(inst, grid, &next, cost, &mut path, &mut best);
            best
        })
        .collect();

    let mut best: Option<(f64, Vec<usize>)> = None;
    for candidate in per_first.into_iter().flatten() {
        if best.as_ref().is_none_or(|b| candidate.0 < b.0) {
            best = Some(candidate);
        }
    }
    match best {
        None => Ok(OcpSolution::infeasible(inst.initial_state)),
        Some((_, path)) => {
            let inputs = path.into_iter().map(|i| grid.points[i].clone()).collect();
            OcpSolution::from_inputs(inst, inputs, None)
        }
    }
}

fn search(
    inst: &OcpInstance<'_>,
    grid: &InputGrid,
    x: &State,
    cost: f64,
    path: &mut Vec<usize>,
    best: &mut Option<(f64, Vec<usize>)>,
) {
    if path.len() == inst.horizon {
        if inst.terminal.violation(x) > REPLAY_TOL.max(inst.terminal.tolerance()) {
            return;
        }
        let total = cost + inst.terminal.cost(x);
        if best.as_ref().is_none_or(|b| total < b.0) {
            *best = Some((total, path.clone()));
        }
        return;
    }
    for (i, u) in grid.points.iter().enumerate() {
        if !is_admissible(inst.model, x, u, REPLAY_TOL) {
            continue;
        }
        let next = inst.model.dynamics(x, u);
        path.push(i);
        search(
            inst,
            grid,
            &next,
            cost + inst.model.stage_cost(x, u),
            path,
            best,
        );
        path.pop();
    }
}

#[derive(Debug, Clone)]
pub struct GridBackend {
    pub grid: InputGrid,
    pub budget: u128,
}

impl GridBackend {
    pub fn new(grid: InputGrid) -> Self {
        Self {
            grid,
            budget: DEFAULT_GRID_BUDGET,
        }
    }
}

impl OcpBackend for GridBackend {
    fn name(&self) -> &str {
        "grid"
    }

    fn solve(&self, inst: &OcpInstance<'_>, _warm_start: Option<&[Input]>) -> Result<OcpSolution> {
        brute_force_solve(inst, &self.grid, self.budget)
    }
}
