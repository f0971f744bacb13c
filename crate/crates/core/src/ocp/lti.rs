use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::{OcpBackend, OcpInstance, OcpSolution};
use crate::error::{ConstraintViolation, Error, Result};
use crate::linalg::is_positive_definite;
use crate::model::{BoxSet, Input, ProblemModel, State, TargetSet, TerminalIngredients};
use crate::solver_lq::condense::{propagate, Affine, Quadratic, RowBuilder};
use crate::solver_lq::qp::{solve_qp, QpOptions, QpOutcome, QuadraticProgram};

/// `x⁺ = Ax + Bu`, `ℓ = xᵀQx + uᵀRu`, `V_f = xᵀPx` with `X_f` the whole space and
/// optional input and state boxes.
#[derive(Debug, Clone)]
pub struct LtiModel {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    q: DMatrix<f64>,
    r: DMatrix<f64>,
    terminal_cost: DMatrix<f64>,
    input_box: Option<BoxSet>,
    state_box: Option<BoxSet>,
    target: BoxSet,
}

impl LtiModel {
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        q: DMatrix<f64>,
        r: DMatrix<f64>,
        terminal_cost: DMatrix<f64>,
    ) -> Result<Self> {
        let n = a.nrows();
        let m = b.ncols();
        if a.ncols() != n
            || b.nrows() != n
            || q.shape() != (n, n)
            || r.shape() != (m, m)
            || terminal_cost.shape() != (n, n)
        {
            return Err(Error::Dimension("LTI model blocks are inconsistent".into()));
        }
        if !is_positive_definite(&r) {
            return Err(Error::InvalidArgument("R must be positive definite".into()));
        }
        let target = BoxSet::new(DVector::zeros(n), DVector::zeros(n))?;
        Ok(Self {
            a,
            b,
            q,
            r,
            terminal_cost,
            input_box: None,
            state_box: None,
            target,
        })
    }

    pub fn with_input_box(mut self, b: BoxSet) -> Result<Self> {
        if b.dim() != self.b.ncols() {
            return Err(Error::Dimension("input box dimension".into()));
        }
        self.input_box = Some(b);
        Ok(self)
    }

    pub fn with_state_box(mut self, b: BoxSet) -> Result<Self> {
        if b.dim() != self.a.nrows() {
            return Err(Error::Dimension("state box dimension".into()));
        }
        self.state_box = Some(b);
        Ok(self)
    }

    /// Unconstrained terminal region with `V_f = xᵀPx` and a zero terminal controller.
    pub fn terminal_ingredients(&self) -> TerminalIngredients {
        let p = self.terminal_cost.clone();
        let m = self.b.ncols();
        TerminalIngredients::new(
            Arc::new(|_| 0.0),
            Arc::new(move |x: &State| x.dot(&(&p * x))),
            vec![Arc::new(move |_| Input::zeros(m))],
        )
        .expect("one controller")
    }
}

impl ProblemModel for LtiModel {
    fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    fn dynamics(&self, x: &State, u: &Input) -> State {
        &self.a * x + &self.b * u
    }

    fn stage_cost(&self, x: &State, u: &Input) -> f64 {
        x.dot(&(&self.q * x)) + u.dot(&(&self.r * u))
    }

    fn constraint_violation(&self, x: &State, u: &Input) -> Option<ConstraintViolation> {
        let input = self
            .input_box
            .as_ref()
            .map(|b| b.excess(u))
            .filter(|&e| e > 0.0)
            .map(|e| ConstraintViolation::new("input box", e));
        ConstraintViolation::worst(self.state_violation(x), input)
    }

    fn state_violation(&self, x: &State) -> Option<ConstraintViolation> {
        self.state_box
            .as_ref()
            .map(|b| b.excess(x))
            .filter(|&e| e > 0.0)
            .map(|e| ConstraintViolation::new("state box", e))
    }

    fn optimal_average_cost(&self) -> f64 {
        0.0
    }

    fn target_set(&self) -> &dyn TargetSet {
        &self.target
    }
}

/// Condensed QP backend for [`LtiModel`] instances.
#[derive(Debug, Clone)]
pub struct LtiBackend {
    model: Arc<LtiModel>,
    pub options: QpOptions,
}

impl LtiBackend {
    pub fn new(model: Arc<LtiModel>) -> Self {
        Self {
            model,
            options: QpOptions::default(),
        }
    }
}

impl OcpBackend for LtiBackend {
    fn name(&self) -> &str {
        "lti-qp"
    }

    fn solve(&self, inst: &OcpInstance<'_>, _warm_start: Option<&[Input]>) -> Result<OcpSolution> {
        let lti = &self.model;
        let (n, m) = (lti.a.nrows(), lti.b.ncols());
        if inst.model.state_dim() != n || inst.model.input_dim() != m {
            return Err(Error::Dimension(
                "instance does not match the LTI backend model".into(),
            ));
        }
        if lti.state_violation(inst.initial_state).is_some() {
            return Ok(OcpSolution::infeasible(inst.initial_state));
        }
        let horizon = inst.horizon;
        let vars = horizon * m;
        let inputs: Vec<Affine> = (0..horizon)
            .map(|j| Affine::select(j * m, m, vars))
            .collect();
        let states = propagate(&lti.a, &lti.b, inst.initial_state, &inputs, vars);

        let mut cost = Quadratic::zero(vars);
        let mut rows = RowBuilder::new(vars, self.options.tolerance);
        for j in 0..horizon {
            cost.add_form(&states[j], &lti.q);
            cost.add_form(&inputs[j], &lti.r);
            if let Some(b) = &lti.input_box {
                rows.add_box(&inputs[j], b.lower(), b.upper());
            }
            if let Some(b) = &lti.state_box {
                rows.add_box(&states[j + 1], b.lower(), b.upper());
            }
        }
        cost.add_form(&states[horizon], &lti.terminal_cost);
        if !rows.feasible() {
            return Ok(OcpSolution::infeasible(inst.initial_state));
        }
        let cost = cost.symmetrized();
        let (g, h) = rows.build();
        let qp = QuadraticProgram::new(cost.hessian, cost.linear)?.with_inequalities(g, h)?;
        match solve_qp(&qp, &self.options)? {
            QpOutcome::Infeasible(_) => Ok(OcpSolution::infeasible(inst.initial_state)),
            QpOutcome::Optimal(s) => {
                let inputs = (0..horizon)
                    .map(|j| s.x.rows(j * m, m).into_owned())
                    .collect();
                OcpSolution::from_inputs(inst, inputs, Some(s.kkt_residual))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::DissipativityCertificate;
    use crate::ocp::{brute_force_solve, solve_ocp, InputGrid, DEFAULT_GRID_BUDGET};
    use approx::assert_relative_eq;

    fn scalar(bound: Option<f64>) -> LtiModel {
        let one = DMatrix::from_element(1, 1, 1.0);
        let m = LtiModel::new(one.clone(), one.clone(), one.clone(), one.clone(), one).unwrap();
        match bound {
            None => m,
            Some(c) => m
                .with_input_box(
                    BoxSet::new(DVector::from_element(1, -c), DVector::from_element(1, c)).unwrap(),
                )
                .unwrap(),
        }
    }

    #[test]
    fn scalar_examples_against_grid() {
        // Oracle: a 1e-4 grid on [−1, 1] contains both optima.
        let grid = InputGrid::uniform(-1.0, 1.0, 20_001).unwrap();
        for (bound, x, u_star, v_star) in [
            (None, 1.0, -0.5, 1.5),
            (None, 0.0, 0.0, 0.0),
            (Some(0.2), 1.0, -0.2, 1.68),
        ] {
            let model = Arc::new(scalar(bound));
            let ti = model.terminal_ingredients();
            let cert = DissipativityCertificate::zero();
            let x0 = DVector::from_element(1, x);
            let inst = OcpInstance::new(model.as_ref(), &ti, &cert, &x0, 1).unwrap();
            let sol = solve_ocp(&inst, &LtiBackend::new(model.clone())).unwrap();
            assert_relative_eq!(sol.inputs[0][0], u_star, epsilon = 1e-10);
            assert_relative_eq!(sol.value, v_star, epsilon = 1e-10);
            assert!(sol.kkt_residual.unwrap() <= 1e-9);
            let oracle = brute_force_solve(&inst, &grid, DEFAULT_GRID_BUDGET).unwrap();
            assert!((oracle.value - sol.value).abs() <= 1e-6);
        }
    }
}
