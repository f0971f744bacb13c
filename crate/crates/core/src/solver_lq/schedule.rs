//! Mixed-integer NCS problem: enumerate bucket-feasible transmission schedules and solve
//! one convex subproblem per schedule over the transmitted inputs.

use std::sync::Arc;

use nalgebra::DVector;
use rayon::prelude::*;

use super::condense::{propagate, Affine, Quadratic, RowBuilder};
use super::qp::{QpOptions, QuadraticProgram};
use super::subproblem::{
    EllipsoidConstraint, EllipsoidMethod, QuadraticSubproblem, SubproblemOutcome,
};
use crate::error::{Error, Result};
use crate::model::{Input, ProblemModel, State};
use crate::ncs::{bucket_step, NcsSystem, TokenBucketParams};
use crate::ocp::{OcpBackend, OcpInstance, OcpSolution};

pub type Schedule = Vec<bool>;

/// All `γ ∈ {0,1}^N` keeping the bucket nonnegative, in lexicographic order (0 < 1).
pub fn enumerate_schedules(
    horizon: usize,
    bucket: &TokenBucketParams,
    beta0: i64,
) -> Result<Vec<Schedule>> {
    if horizon == 0 {
        return Err(Error::InvalidArgument("horizon must be at least 1".into()));
    }
    if beta0 < 0 || beta0 > bucket.size() {
        return Err(Error::InvalidArgument(format!(
            "bucket level {beta0} outside [0, {}]",
            bucket.size()
        )));
    }
    let mut out = Vec::new();
    let mut prefix = Vec::with_capacity(horizon);
    extend(horizon, bucket, beta0, &mut prefix, &mut out);
    Ok(out)
}

fn extend(
    horizon: usize,
    bucket: &TokenBucketParams,
    beta: i64,
    prefix: &mut Schedule,
    out: &mut Vec<Schedule>,
) {
    if prefix.len() == horizon {
        out.push(prefix.clone());
        return;
    }
    for transmit in [false, true] {
        if let Some(next) = bucket_step(bucket, beta, transmit) {
            prefix.push(transmit);
            extend(horizon, bucket, next, prefix, out);
            prefix.pop();
        }
    }
}

/// Bucket level after applying `schedule` from `beta0`.
pub fn terminal_bucket_level(
    bucket: &TokenBucketParams,
    beta0: i64,
    schedule: &[bool],
) -> Option<i64> {
    schedule
        .iter()
        .try_fold(beta0, |b, &t| bucket_step(bucket, b, t))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleOptions {
    pub qp: QpOptions,
    /// Largest horizon accepted for enumeration.
    pub max_horizon: usize,
    /// Values within `relative·|v| + absolute` of the incumbent count as ties and keep the
    /// lexicographically smaller schedule.
    pub tie_relative: f64,
    pub tie_absolute: f64,
    pub ellipsoid_method: EllipsoidMethod,
}

impl Default for ScheduleOptions {
    fn default() -> Self {
        Self {
            qp: QpOptions::default(),
            max_horizon: 12,
            tie_relative: 1e-10,
            tie_absolute: 1e-14,
            ellipsoid_method: EllipsoidMethod::Multiplier,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ScheduleResult {
    pub solution: OcpSolution,
    pub schedule: Option<Schedule>,
    pub schedules_considered: usize,
}

struct Candidate {
    value: f64,
    kkt: f64,
    inputs: Vec<Input>,
}

pub fn solve_schedule_ocp(
    inst: &OcpInstance<'_>,
    sys: &NcsSystem,
    opts: &ScheduleOptions,
) -> Result<OcpSolution> {
    Ok(solve_schedule_ocp_detailed(inst, sys, opts)?.solution)
}

pub fn solve_schedule_ocp_detailed(
    inst: &OcpInstance<'_>,
    sys: &NcsSystem,
    opts: &ScheduleOptions,
) -> Result<ScheduleResult> {
    let horizon = inst.horizon;
    if horizon > opts.max_horizon {
        return Err(Error::InvalidArgument(format!(
            "horizon {horizon} exceeds the schedule enumeration bound {}",
            opts.max_horizon
        )));
    }
    if inst.model.state_dim() != sys.state_dim() || inst.model.input_dim() != sys.input_dim() {
        return Err(Error::Dimension(
            "instance does not match the NCS system".into(),
        ));
    }
    let infeasible = |count| ScheduleResult {
        solution: OcpSolution::infeasible(inst.initial_state),
        schedule: None,
        schedules_considered: count,
    };
    let x0 = inst.initial_state;
    if sys.state_violation(x0).is_some() {
        return Ok(infeasible(0));
    }
    let state = sys.split(x0)?;
    let schedules = enumerate_schedules(horizon, sys.bucket(), state.beta)?;

    let outcomes: Vec<Result<Option<Candidate>>> = schedules
        .par_iter()
        .map(|s| solve_one(sys, x0, state.beta, s, opts))
        .collect();

    let mut best: Option<(usize, Candidate)> = None;
    for (idx, outcome) in outcomes.into_iter().enumerate() {
        let Some(c) = outcome? else { continue };
        let better = match &best {
            None => true,
            Some((_, b)) => {
                c.value < b.value - (opts.tie_relative * b.value.abs() + opts.tie_absolute)
            }
        };
        if better {
            best = Some((idx, c));
        }
    }
    match best {
        None => Ok(infeasible(schedules.len())),
        Some((idx, c)) => Ok(ScheduleResult {
            solution: OcpSolution::from_inputs(inst, c.inputs, Some(c.kkt))?,
            schedule: Some(schedules[idx].clone()),
            schedules_considered: schedules.len(),
        }),
    }
}

fn solve_one(
    sys: &NcsSystem,
    x0: &State,
    beta0: i64,
    schedule: &[bool],
    opts: &ScheduleOptions,
) -> Result<Option<Candidate>> {
    let plant = sys.plant();
    let (n, m) = (plant.plant_dim(), plant.input_dim());
    let horizon = schedule.len();
    let transmissions = schedule.iter().filter(|&&t| t).count();
    let vars = transmissions * m;
    let xp0 = x0.rows(0, n).into_owned();
    let us0 = x0.rows(n, m).into_owned();

    // Applied input per stage: the latest transmitted block, or the initial held input.
    let mut applied = Vec::with_capacity(horizon);
    let mut current = Affine::constant(us0.clone(), vars);
    let mut slot = 0;
    let mut rows = RowBuilder::new(vars, opts.qp.tolerance);
    for &t in schedule {
        if t {
            current = Affine::select(slot * m, m, vars);
            rows.add_box(
                &current,
                plant.input_box().lower(),
                plant.input_box().upper(),
            );
            slot += 1;
        }
        applied.push(current.clone());
    }
    let states = propagate(plant.a(), plant.b(), &xp0, &applied, vars);

    let mut cost = Quadratic::zero(vars);
    for j in 0..horizon {
        cost.add_form(&states[j], plant.q());
        cost.add_form(&applied[j], plant.r());
        rows.add_box(
            &states[j + 1],
            plant.state_box().lower(),
            plant.state_box().upper(),
        );
    }
    cost.add_form(&states[horizon], &sys.terminal_cost_matrix());
    let cost = cost.symmetrized();

    let beta_n = terminal_bucket_level(sys.bucket(), beta0, schedule)
        .expect("enumerated schedules are feasible");
    let design = sys.design();
    let equality_branch = beta_n < sys.bucket().threshold();
    let held_n = &applied[horizon - 1];

    if !rows.feasible() {
        return Ok(None);
    }
    if vars == 0 {
        let xn = &states[horizon].offset;
        let ok = if equality_branch {
            xn.amax() <= opts.qp.tolerance && held_n.offset.amax() <= opts.qp.tolerance
        } else {
            xn.dot(&(&design.p * xn)) - design.level <= opts.qp.tolerance
        };
        return Ok(ok.then(|| Candidate {
            value: cost.constant,
            kkt: 0.0,
            inputs: build_inputs(schedule, &DVector::zeros(0), m),
        }));
    }

    let (g, h) = rows.build();
    let mut qp = QuadraticProgram::new(cost.hessian.clone(), cost.linear.clone())?
        .with_inequalities(g, h)?;
    let mut ellipsoid = None;
    if equality_branch {
        let e = crate::solver_lq::qp::stack_rows(&states[horizon].matrix, &held_n.matrix);
        let rhs = -crate::solver_lq::qp::stack_vec(&states[horizon].offset, &held_n.offset);
        qp = qp.with_equalities(e, rhs)?;
    } else {
        ellipsoid = Some(EllipsoidConstraint {
            map: states[horizon].matrix.clone(),
            offset: states[horizon].offset.clone(),
            shape: design.p.clone(),
            level: design.level,
        });
    }
    let sub = QuadraticSubproblem { qp, ellipsoid };
    match sub.solve(&opts.qp, opts.ellipsoid_method)? {
        SubproblemOutcome::Infeasible(_) => Ok(None),
        SubproblemOutcome::Solved(s) => Ok(Some(Candidate {
            value: s.value + cost.constant,
            kkt: s.kkt_residual,
            inputs: build_inputs(schedule, &s.x, m),
        })),
    }
}

fn build_inputs(schedule: &[bool], v: &DVector<f64>, m: usize) -> Vec<Input> {
    let mut slot = 0;
    schedule
        .iter()
        .map(|&t| {
            if t {
                let uc = v.rows(slot * m, m).into_owned();
                slot += 1;
                NcsSystem::join_input(&uc, true)
            } else {
                NcsSystem::join_input(&DVector::zeros(m), false)
            }
        })
        .collect()
}

/// Schedule-enumeration backend for an [`NcsSystem`].
#[derive(Debug, Clone)]
pub struct NcsBackend {
    system: Arc<NcsSystem>,
    pub options: ScheduleOptions,
}

impl NcsBackend {
    pub fn new(system: Arc<NcsSystem>) -> Self {
        Self {
            system,
            options: ScheduleOptions::default(),
        }
    }

    pub fn with_options(mut self, options: ScheduleOptions) -> Self {
        self.options = options;
        self
    }

    pub fn system(&self) -> &Arc<NcsSystem> {
        &self.system
    }
}

impl OcpBackend for NcsBackend {
    fn name(&self) -> &str {
        "ncs-schedule"
    }

    fn solve(&self, inst: &OcpInstance<'_>, _warm_start: Option<&[Input]>) -> Result<OcpSolution> {
        solve_schedule_ocp(inst, &self.system, &self.options)
    }
}
