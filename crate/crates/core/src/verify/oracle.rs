//! Comparison of the schedule-enumeration solver against brute force over an input grid
//! on a scalar plant.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Input, State};
use crate::ncs::NcsSystem;
use crate::ocp::{brute_force_solve, InputGrid, OcpInstance, DEFAULT_GRID_BUDGET};
use crate::solver_lq::{solve_schedule_ocp, ScheduleOptions};

#[derive(Debug, Clone, PartialEq)]
pub struct OracleOptions {
    pub horizon: usize,
    pub grid_points: usize,
    pub instances: usize,
    pub seed: u64,
    pub schedule: ScheduleOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub instances: usize,
    pub solver_feasible: usize,
    pub both_feasible: usize,
    /// Instances where the solver value exceeds the grid value.
    pub solver_worse: usize,
    /// Instances feasible on the grid but not for the solver.
    pub grid_only_feasible: usize,
    /// Instances whose optimizer stays admissible after rounding to the grid.
    pub rounded_admissible: usize,
    /// Rounded instances where the grid loses more than the rounded optimizer does.
    pub rounding_bound_broken: usize,
    /// Largest `|V_grid − V*|` over grids containing the optimal transmitted values.
    pub aligned_deviation: f64,
}

impl OracleReport {
    /// The solver is never beaten, the grid never gains feasibility, the rounding bound
    /// holds, a majority of optimizers round admissibly and aligned grids reproduce `V*`.
    pub fn pass(&self, tol: f64) -> bool {
        self.solver_worse == 0
            && self.grid_only_feasible == 0
            && self.rounding_bound_broken == 0
            && self.rounded_admissible > self.solver_feasible / 2
            && self.aligned_deviation <= tol
    }
}

/// Uniform grid with the points nearest to `targets` replaced by the targets.
pub fn aligned_axis(lo: f64, hi: f64, count: usize, targets: &[f64]) -> Vec<f64> {
    let step = (hi - lo) / (count - 1) as f64;
    let mut axis: Vec<f64> = (0..count).map(|i| lo + step * i as f64).collect();
    let mut taken = vec![false; count];
    for &t in targets {
        if axis.contains(&t) {
            continue;
        }
        let Some(nearest) = (0..count)
            .filter(|&i| !taken[i])
            .min_by(|&i, &j| (axis[i] - t).abs().total_cmp(&(axis[j] - t).abs()))
        else {
            break;
        };
        axis[nearest] = t;
        taken[nearest] = true;
    }
    axis
}

/// Solves `instances` random problems both ways. Starting states are uniform in the
/// state and input boxes with a uniform integer bucket level.
pub fn compare_with_grid(sys: &NcsSystem, opts: &OracleOptions) -> Result<OracleReport> {
    let plant = sys.plant();
    if plant.plant_dim() != 1 || plant.input_dim() != 1 {
        return Err(Error::InvalidArgument(
            "the grid oracle needs a scalar plant".into(),
        ));
    }
    if opts.grid_points < 2 {
        return Err(Error::InvalidArgument(
            "the grid needs at least two points".into(),
        ));
    }
    let (ti, cert) = (sys.terminal_ingredients(), sys.certificate());
    let (xlo, xhi) = (plant.state_box().lower()[0], plant.state_box().upper()[0]);
    let (ulo, uhi) = (plant.input_box().lower()[0], plant.input_box().upper()[0]);
    let last = (opts.grid_points - 1) as f64;
    let step = (uhi - ulo) / last;
    let uniform: Vec<f64> = (0..opts.grid_points)
        .map(|i| ulo + step * i as f64)
        .collect();
    let grid = InputGrid::tensor(&[uniform.clone(), vec![0.0, 1.0]])?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);

    let mut report = OracleReport {
        instances: opts.instances,
        solver_feasible: 0,
        both_feasible: 0,
        solver_worse: 0,
        grid_only_feasible: 0,
        rounded_admissible: 0,
        rounding_bound_broken: 0,
        aligned_deviation: 0.0,
    };
    for _ in 0..opts.instances {
        let x0 = State::from_vec(vec![
            rng.random_range(xlo..=xhi),
            rng.random_range(ulo..=uhi),
            rng.random_range(0..=sys.bucket().size()) as f64,
        ]);
        let inst = OcpInstance::new(sys, &ti, &cert, &x0, opts.horizon)?;
        let exact = solve_schedule_ocp(&inst, sys, &opts.schedule)?;
        let gridded = brute_force_solve(&inst, &grid, DEFAULT_GRID_BUDGET)?;
        if gridded.feasible && !exact.feasible {
            report.grid_only_feasible += 1;
        }
        if !exact.feasible {
            continue;
        }
        report.solver_feasible += 1;
        if gridded.feasible {
            report.both_feasible += 1;
            if exact.value > gridded.value + 1e-9 {
                report.solver_worse += 1;
            }
        }

        let rounded: Vec<Input> = exact
            .inputs
            .iter()
            .map(|u| {
                let k = ((u[0] - ulo) / step).round().clamp(0.0, last);
                Input::from_vec(vec![uniform[k as usize], u[1]])
            })
            .collect();
        if let Some((j_round, _, _)) = inst.evaluate(&rounded) {
            report.rounded_admissible += 1;
            if !gridded.feasible || gridded.value - exact.value > j_round - exact.value + 1e-9 {
                report.rounding_bound_broken += 1;
            }
        }

        let transmitted: Vec<f64> = exact
            .inputs
            .iter()
            .filter(|u| u[1] == 1.0)
            .map(|u| u[0])
            .collect();
        let axis = aligned_axis(ulo, uhi, opts.grid_points, &transmitted);
        let aligned = brute_force_solve(
            &inst,
            &InputGrid::tensor(&[axis, vec![0.0, 1.0]])?,
            DEFAULT_GRID_BUDGET,
        )?;
        let dev = if aligned.feasible {
            (aligned.value - exact.value).abs()
        } else {
            f64::INFINITY
        };
        report.aligned_deviation = report.aligned_deviation.max(dev);
    }
    Ok(report)
}
