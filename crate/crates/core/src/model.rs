//! Problem abstractions: dynamics, mixed constraints, economic cost, target set,
//! storage function, terminal ingredients, and the cost rotation built on them.

use std::fmt;
use std::sync::Arc;

use nalgebra::DVector;

use crate::error::{ConstraintViolation, Error, Result};

pub type Vector = DVector<f64>;
pub type State = Vector;
pub type Input = Vector;

/// Default absolute tolerance for membership and comparison tests.
pub const DEFAULT_TOL: f64 = 1e-9;

pub type StateFn<T> = Arc<dyn Fn(&State) -> T + Send + Sync>;

/// The set on which the best asymptotic average cost is attained.
pub trait TargetSet: Send + Sync {
    /// Euclidean projection of `x` onto the set.
    fn project(&self, x: &State) -> State;

    fn distance(&self, x: &State) -> f64 {
        (x - self.project(x)).norm()
    }

    fn contains(&self, x: &State, tol: f64) -> bool {
        self.distance(x) <= tol
    }
}

/// Axis-aligned product of intervals; degenerate intervals encode point components.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxSet {
    lower: Vector,
    upper: Vector,
}

impl BoxSet {
    pub fn new(lower: Vector, upper: Vector) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::Dimension(format!(
                "box bounds have lengths {} and {}",
                lower.len(),
                upper.len()
            )));
        }
        if let Some(i) = (0..lower.len()).find(|&i| !(lower[i] <= upper[i])) {
            return Err(Error::InvalidArgument(format!(
                "box component {i} is empty: [{}, {}]",
                lower[i], upper[i]
            )));
        }
        Ok(Self { lower, upper })
    }

    pub fn lower(&self) -> &Vector {
        &self.lower
    }

    pub fn upper(&self) -> &Vector {
        &self.upper
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    /// Largest componentwise excursion outside the box (0 inside).
    pub fn excess(&self, x: &Vector) -> f64 {
        x.iter()
            .zip(self.lower.iter().zip(self.upper.iter()))
            .map(|(&v, (&lo, &hi))| (lo - v).max(v - hi).max(0.0))
            .fold(0.0, f64::max)
    }
}

impl TargetSet for BoxSet {
    fn project(&self, x: &State) -> State {
        State::from_iterator(
            x.len(),
            x.iter()
                .zip(self.lower.iter().zip(self.upper.iter()))
                .map(|(&v, (&lo, &hi))| v.clamp(lo, hi)),
        )
    }
}

/// Target set described only through a user-supplied projection.
pub struct ProjectionSet {
    projection: StateFn<State>,
}

impl ProjectionSet {
    pub fn new(projection: impl Fn(&State) -> State + Send + Sync + 'static) -> Self {
        Self {
            projection: Arc::new(projection),
        }
    }
}

impl TargetSet for ProjectionSet {
    fn project(&self, x: &State) -> State {
        (self.projection)(x)
    }
}

pub fn set_distance(target: &dyn TargetSet, x: &State) -> f64 {
    target.distance(x)
}

/// System `x⁺ = f(x, u)` with mixed constraints `(x, u) ∈ Z`, economic stage cost and
/// target set.
pub trait ProblemModel: Send + Sync {
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn dynamics(&self, x: &State, u: &Input) -> State;
    fn stage_cost(&self, x: &State, u: &Input) -> f64;

    /// Worst violated predicate of `(x, u) ∈ Z`, or `None` when satisfied exactly.
    fn constraint_violation(&self, x: &State, u: &Input) -> Option<ConstraintViolation>;

    /// Worst violated predicate of `x ∈ X`.
    fn state_violation(&self, x: &State) -> Option<ConstraintViolation>;

    fn optimal_average_cost(&self) -> f64;
    fn target_set(&self) -> &dyn TargetSet;

    fn state_labels(&self) -> Vec<String> {
        (0..self.state_dim()).map(|i| format!("x{i}")).collect()
    }

    fn input_labels(&self) -> Vec<String> {
        (0..self.input_dim()).map(|i| format!("u{i}")).collect()
    }

    /// Token-bucket level carried in the state, for models that have one.
    fn bucket_level(&self, _x: &State) -> Option<i64> {
        None
    }
}

pub fn is_admissible(model: &dyn ProblemModel, x: &State, u: &Input, tol: f64) -> bool {
    model
        .constraint_violation(x, u)
        .is_none_or(|v| v.amount <= tol)
}

type DynamicsFn = Arc<dyn Fn(&State, &Input) -> State + Send + Sync>;
type CostFn = Arc<dyn Fn(&State, &Input) -> f64 + Send + Sync>;
type PairViolationFn = Arc<dyn Fn(&State, &Input) -> Option<ConstraintViolation> + Send + Sync>;
type StateViolationFn = Arc<dyn Fn(&State) -> Option<ConstraintViolation> + Send + Sync>;

/// Closure-backed model, mostly for small examples and oracle instances.
#[derive(Clone)]
pub struct FnModel {
    state_dim: usize,
    input_dim: usize,
    dynamics: DynamicsFn,
    stage_cost: CostFn,
    constraints: Option<PairViolationFn>,
    state_set: Option<StateViolationFn>,
    optimal_average_cost: f64,
    target: Arc<dyn TargetSet>,
}

impl FnModel {
    /// Unconstrained model whose target set is the origin.
    pub fn new(
        state_dim: usize,
        input_dim: usize,
        dynamics: impl Fn(&State, &Input) -> State + Send + Sync + 'static,
        stage_cost: impl Fn(&State, &Input) -> f64 + Send + Sync + 'static,
    ) -> Self {
        let origin = BoxSet::new(Vector::zeros(state_dim), Vector::zeros(state_dim))
            .expect("origin box is well formed");
        Self {
            state_dim,
            input_dim,
            dynamics: Arc::new(dynamics),
            stage_cost: Arc::new(stage_cost),
            constraints: None,
            state_set: None,
            optimal_average_cost: 0.0,
            target: Arc::new(origin),
        }
    }

    pub fn with_constraints(
        mut self,
        f: impl Fn(&State, &Input) -> Option<ConstraintViolation> + Send + Sync + 'static,
    ) -> Self {
        self.constraints = Some(Arc::new(f));
        self
    }

    pub fn with_state_set(
        mut self,
        f: impl Fn(&State) -> Option<ConstraintViolation> + Send + Sync + 'static,
    ) -> Self {
        self.state_set = Some(Arc::new(f));
        self
    }

    pub fn with_target(mut self, target: Arc<dyn TargetSet>) -> Self {
        self.target = target;
        self
    }

    pub fn with_optimal_average_cost(mut self, value: f64) -> Self {
        self.optimal_average_cost = value;
        self
    }
}

impl fmt::Debug for FnModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FnModel")
            .field("state_dim", &self.state_dim)
            .field("input_dim", &self.input_dim)
            .field("optimal_average_cost", &self.optimal_average_cost)
            .finish_non_exhaustive()
    }
}

impl ProblemModel for FnModel {
    fn state_dim(&self) -> usize {
        self.state_dim
    }

    fn input_dim(&self) -> usize {
        self.input_dim
    }

    fn dynamics(&self, x: &State, u: &Input) -> State {
        (self.dynamics)(x, u)
    }

    fn stage_cost(&self, x: &State, u: &Input) -> f64 {
        (self.stage_cost)(x, u)
    }

    fn constraint_violation(&self, x: &State, u: &Input) -> Option<ConstraintViolation> {
        let pair = self.constraints.as_ref().and_then(|c| c(x, u));
        ConstraintViolation::worst(self.state_violation(x), pair)
    }

    fn state_violation(&self, x: &State) -> Option<ConstraintViolation> {
        self.state_set.as_ref().and_then(|s| s(x))
    }

    fn optimal_average_cost(&self) -> f64 {
        self.optimal_average_cost
    }

    fn target_set(&self) -> &dyn TargetSet {
        self.target.as_ref()
    }
}

/// Quadratic class-K∞ function `r ↦ c·r²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadraticKInf {
    coefficient: f64,
}

impl QuadraticKInf {
    pub fn new(coefficient: f64) -> Result<Self> {
        if !(coefficient > 0.0 && coefficient.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "K-infinity coefficient must be positive and finite, got {coefficient}"
            )));
        }
        Ok(Self { coefficient })
    }

    pub fn coefficient(&self) -> f64 {
        self.coefficient
    }

    pub fn eval(&self, r: f64) -> f64 {
        self.coefficient * r * r
    }

    pub fn inverse(&self, v: f64) -> f64 {
        (v.max(0.0) / self.coefficient).sqrt()
    }
}

/// Storage function `λ` and the lower bound `ρ` of a strict dissipation inequality.
#[derive(Clone)]
pub struct DissipativityCertificate {
    storage: StateFn<f64>,
    lower_bound: QuadraticKInf,
}

impl DissipativityCertificate {
    pub fn new(
        storage: impl Fn(&State) -> f64 + Send + Sync + 'static,
        lower_bound: QuadraticKInf,
    ) -> Self {
        Self {
            storage: Arc::new(storage),
            lower_bound,
        }
    }

    /// Zero storage with a unit quadratic bound; useful when only the plain value
    /// function matters.
    pub fn zero() -> Self {
        Self::new(|_| 0.0, QuadraticKInf { coefficient: 1.0 })
    }

    pub fn storage(&self, x: &State) -> f64 {
        (self.storage)(x)
    }

    pub fn lower_bound(&self) -> QuadraticKInf {
        self.lower_bound
    }
}

impl fmt::Debug for DissipativityCertificate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DissipativityCertificate")
            .field("lower_bound", &self.lower_bound)
            .finish_non_exhaustive()
    }
}

/// Terminal region, terminal cost, cycle length and the `M` terminal control laws.
#[derive(Clone)]
pub struct TerminalIngredients {
    cycle_length: usize,
    violation: StateFn<f64>,
    cost: StateFn<f64>,
    controllers: Vec<StateFn<Input>>,
    tolerance: f64,
}

impl TerminalIngredients {
    /// `violation` returns 0 inside the terminal region and a positive excursion outside.
    pub fn new(
        violation: StateFn<f64>,
        cost: StateFn<f64>,
        controllers: Vec<StateFn<Input>>,
    ) -> Result<Self> {
        if controllers.is_empty() {
            return Err(Error::InvalidArgument(
                "at least one terminal controller is required".into(),
            ));
        }
        Ok(Self {
            cycle_length: controllers.len(),
            violation,
            cost,
            controllers,
            tolerance: DEFAULT_TOL,
        })
    }

    pub fn with_tolerance(mut self, tol: f64) -> Self {
        self.tolerance = tol;
        self
    }

    /// Same region and controllers with the terminal cost multiplied by `scale`.
    pub fn with_cost_scale(&self, scale: f64) -> Self {
        let cost = self.cost.clone();
        Self {
            cost: Arc::new(move |x| scale * cost(x)),
            ..self.clone()
        }
    }

    pub fn cycle_length(&self) -> usize {
        self.cycle_length
    }

    pub fn tolerance(&self) -> f64 {
        self.tolerance
    }

    pub fn violation(&self, x: &State) -> f64 {
        (self.violation)(x)
    }

    pub fn contains(&self, x: &State) -> bool {
        self.violation(x) <= self.tolerance
    }

    pub fn cost(&self, x: &State) -> f64 {
        (self.cost)(x)
    }

    /// `κ_i(x)` for `i` in `0..cycle_length`.
    pub fn control(&self, i: usize, x: &State) -> Input {
        (self.controllers[i])(x)
    }
}

impl fmt::Debug for TerminalIngredients {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TerminalIngredients")
            .field("cycle_length", &self.cycle_length)
            .field("tolerance", &self.tolerance)
            .finish_non_exhaustive()
    }
}

/// `L(x, u) = ℓ(x, u) + λ(x) − λ(f(x, u)) − ℓ*_av`, defined on `Z`.
pub fn rotated_stage_cost(
    model: &dyn ProblemModel,
    cert: &DissipativityCertificate,
    x: &State,
    u: &Input,
) -> Result<f64> {
    if let Some(v) = model
        .constraint_violation(x, u)
        .filter(|v| v.amount > DEFAULT_TOL)
    {
        return Err(Error::Domain(v));
    }
    Ok(rotated_stage_cost_unchecked(model, cert, x, u))
}

pub(crate) fn rotated_stage_cost_unchecked(
    model: &dyn ProblemModel,
    cert: &DissipativityCertificate,
    x: &State,
    u: &Input,
) -> f64 {
    let next = model.dynamics(x, u);
    model.stage_cost(x, u) + cert.storage(x) - cert.storage(&next) - model.optimal_average_cost()
}

/// `V̄_f(x) = V_f(x) + λ(x)`, defined on the terminal region.
pub fn rotated_terminal_cost(
    ti: &TerminalIngredients,
    cert: &DissipativityCertificate,
    x: &State,
) -> Result<f64> {
    let excess = ti.violation(x);
    if excess > ti.tolerance() {
        return Err(Error::Domain(ConstraintViolation::new(
            "terminal region",
            excess,
        )));
    }
    Ok(ti.cost(x) + cert.storage(x))
}
