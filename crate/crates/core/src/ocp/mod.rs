//! Finite-horizon problem `min Σ ℓ(x(i), u(i)) + V_f(x(N))` over admissible input
//! sequences with `x(N) ∈ X_f`, plus the shifted candidate used to certify decrease.

mod grid;
mod lti;

pub use grid::{brute_force_solve, GridBackend, InputGrid, DEFAULT_GRID_BUDGET};
pub use lti::{LtiBackend, LtiModel};

use crate::error::{Error, Result};
use crate::horizon::CyclicHorizon;
use crate::model::{
    is_admissible, rotated_stage_cost_unchecked, DissipativityCertificate, Input, ProblemModel,
    State, TerminalIngredients,
};

/// Admissibility tolerance when replaying a solver's input sequence.
pub const REPLAY_TOL: f64 = 1e-8;

#[derive(Clone, Copy)]
pub struct OcpInstance<'a> {
    pub model: &'a dyn ProblemModel,
    pub terminal: &'a TerminalIngredients,
    pub certificate: &'a DissipativityCertificate,
    pub initial_state: &'a State,
    pub horizon: usize,
}

impl<'a> OcpInstance<'a> {
    pub fn new(
        model: &'a dyn ProblemModel,
        terminal: &'a TerminalIngredients,
        certificate: &'a DissipativityCertificate,
        initial_state: &'a State,
        horizon: usize,
    ) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::InvalidArgument("horizon must be at least 1".into()));
        }
        if initial_state.len() != model.state_dim() {
            return Err(Error::Dimension(format!(
                "initial state has length {}, model state dimension is {}",
                initial_state.len(),
                model.state_dim()
            )));
        }
        Ok(Self {
            model,
            terminal,
            certificate,
            initial_state,
            horizon,
        })
    }

    pub fn with_horizon(&self, horizon: usize) -> Result<Self> {
        Self::new(
            self.model,
            self.terminal,
            self.certificate,
            self.initial_state,
            horizon,
        )
    }

    /// Plain and rotated objective of `inputs`, or `None` if the sequence is inadmissible
    /// or misses the terminal region.
    pub fn evaluate(&self, inputs: &[Input]) -> Option<(f64, f64, Vec<State>)> {
        if inputs.len() != self.horizon {
            return None;
        }
        let mut states = Vec::with_capacity(inputs.len() + 1);
        states.push(self.initial_state.clone());
        let mut value = 0.0;
        let mut rotated = 0.0;
        for u in inputs {
            let x = states.last().expect("nonempty");
            if u.len() != self.model.input_dim() || !is_admissible(self.model, x, u, REPLAY_TOL) {
                return None;
            }
            value += self.model.stage_cost(x, u);
            rotated += rotated_stage_cost_unchecked(self.model, self.certificate, x, u);
            let next = self.model.dynamics(x, u);
            states.push(next);
        }
        let terminal = states.last().expect("nonempty");
        if self.terminal.violation(terminal) > REPLAY_TOL.max(self.terminal.tolerance()) {
            return None;
        }
        let vf = self.terminal.cost(terminal);
        value += vf;
        rotated += vf + self.certificate.storage(terminal);
        Some((value, rotated, states))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OcpSolution {
    pub inputs: Vec<Input>,
    pub value: f64,
    pub rotated_value: f64,
    pub predicted_states: Vec<State>,
    pub feasible: bool,
    pub kkt_residual: Option<f64>,
}

impl OcpSolution {
    pub fn infeasible(initial_state: &State) -> Self {
        Self {
            inputs: vec![],
            value: f64::INFINITY,
            rotated_value: f64::INFINITY,
            predicted_states: vec![initial_state.clone()],
            feasible: false,
            kkt_residual: None,
        }
    }

    /// Replays `inputs` through the model and records both objectives.
    pub fn from_inputs(
        inst: &OcpInstance<'_>,
        inputs: Vec<Input>,
        kkt_residual: Option<f64>,
    ) -> Result<Self> {
        let (value, rotated_value, predicted_states) = inst.evaluate(&inputs).ok_or_else(|| {
            Error::SolverFailure("solver returned an input sequence that fails replay".into())
        })?;
        Ok(Self {
            inputs,
            value,
            rotated_value,
            predicted_states,
            feasible: true,
            kkt_residual,
        })
    }

    pub fn terminal_state(&self) -> &State {
        self.predicted_states
            .last()
            .expect("trajectory holds the initial state")
    }

    pub fn first_input(&self) -> Option<&Input> {
        self.inputs.first()
    }
}

pub trait OcpBackend: Send + Sync {
    fn name(&self) -> &str;

    /// `warm_start` is a feasible input sequence of the right length when available.
    fn solve(&self, inst: &OcpInstance<'_>, warm_start: Option<&[Input]>) -> Result<OcpSolution>;
}

pub fn solve_ocp(inst: &OcpInstance<'_>, backend: &dyn OcpBackend) -> Result<OcpSolution> {
    backend.solve(inst, None)
}

/// Candidate for step `k + 1` built from the optimal solution at step `k`: the tail of
/// the previous optimizer, extended at the end of a cycle by the `M` terminal controllers
/// applied from the previous terminal state.
pub fn shifted_candidate(
    model: &dyn ProblemModel,
    prev: &OcpSolution,
    ti: &TerminalIngredients,
    h: &CyclicHorizon,
    k: u64,
) -> Result<Vec<Input>> {
    if !prev.feasible {
        return Err(Error::InvalidArgument(
            "shifted candidate needs a feasible solution".into(),
        ));
    }
    if prev.inputs.len() != h.length(k) {
        return Err(Error::InvalidArgument(format!(
            "previous solution has {} inputs, horizon at step {k} is {}",
            prev.inputs.len(),
            h.length(k)
        )));
    }
    let mut out: Vec<Input> = prev.inputs[1..].to_vec();
    if h.is_cycle_end(k) {
        let mut x = prev.terminal_state().clone();
        for i in 0..ti.cycle_length() {
            let u = ti.control(i, &x);
            if let Some(v) = model
                .constraint_violation(&x, &u)
                .filter(|v| v.amount > ti.tolerance())
            {
                return Err(Error::CertificateFailure {
                    step: Some(k),
                    reason: format!("terminal controller {i} leaves the constraint set: {v}"),
                });
            }
            x = model.dynamics(&x, &u);
            out.push(u);
        }
        let excess = ti.violation(&x);
        if excess > ti.tolerance() {
            return Err(Error::CertificateFailure {
                step: Some(k),
                reason: format!("terminal controllers do not return to the terminal region (excess {excess:.3e})"),
            });
        }
    }
    debug_assert_eq!(out.len(), h.length(k + 1));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{FnModel, Vector};
    use std::sync::Arc;

    fn integrator() -> (FnModel, TerminalIngredients) {
        let model = FnModel::new(1, 1, |x, u| x + u, |x, u| x[0] * x[0] + u[0] * u[0]);
        let ti = TerminalIngredients::new(
            Arc::new(|_| 0.0),
            Arc::new(|x: &State| x[0] * x[0]),
            vec![Arc::new(|x: &State| -x * 0.5)],
        )
        .unwrap();
        (model, ti)
    }

    #[test]
    fn zero_horizon_is_rejected() {
        let (model, ti) = integrator();
        let cert = DissipativityCertificate::zero();
        let x0 = Vector::from_vec(vec![1.0]);
        assert!(matches!(
            OcpInstance::new(&model, &ti, &cert, &x0, 0),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn tail_shift_inside_cycle() {
        let (model, ti) = integrator();
        let cert = DissipativityCertificate::zero();
        let x0 = Vector::from_vec(vec![1.0]);
        let inst = OcpInstance::new(&model, &ti, &cert, &x0, 5).unwrap();
        let inputs: Vec<_> = (0..5)
            .map(|i| Vector::from_vec(vec![-0.1 * i as f64]))
            .collect();
        let sol = OcpSolution::from_inputs(&inst, inputs.clone(), None).unwrap();
        let h = CyclicHorizon::new(5, 3).unwrap();
        let cand = shifted_candidate(&model, &sol, &ti, &h, 0).unwrap();
        assert_eq!(cand, inputs[1..].to_vec());
    }

    #[test]
    fn cycle_end_appends_terminal_controllers() {
        let (model, _) = integrator();
        let ti = TerminalIngredients::new(
            Arc::new(|_| 0.0),
            Arc::new(|x: &State| x[0] * x[0]),
            vec![
                Arc::new(|x: &State| -x * 0.5),
                Arc::new(|x: &State| -x * 0.25),
                Arc::new(|_: &State| Vector::zeros(1)),
            ],
        )
        .unwrap();
        let cert = DissipativityCertificate::zero();
        let x0 = Vector::from_vec(vec![2.0]);
        let inst = OcpInstance::new(&model, &ti, &cert, &x0, 1).unwrap();
        let sol =
            OcpSolution::from_inputs(&inst, vec![Vector::from_vec(vec![-1.0])], None).unwrap();
        let h = CyclicHorizon::new(3, 3).unwrap();
        let cand = shifted_candidate(&model, &sol, &ti, &h, 2).unwrap();
        // Terminal state x₁ = 1: κ₀ = −0.5, then x = 0.5, κ₁ = −0.125, κ₂ = 0.
        assert_eq!(cand.len(), 3);
        assert_eq!(cand[0][0], -0.5);
        assert_eq!(cand[1][0], -0.125);
        assert_eq!(cand[2][0], 0.0);
    }

    #[test]
    fn unit_cycle_keeps_full_length() {
        let (model, ti) = integrator();
        let cert = DissipativityCertificate::zero();
        let x0 = Vector::from_vec(vec![1.0]);
        let inst = OcpInstance::new(&model, &ti, &cert, &x0, 4).unwrap();
        let inputs = vec![Vector::from_vec(vec![-0.5]); 4];
        let sol = OcpSolution::from_inputs(&inst, inputs, None).unwrap();
        let h = CyclicHorizon::new(4, 1).unwrap();
        for k in [0, 1, 7] {
            assert_eq!(
                shifted_candidate(&model, &sol, &ti, &h, k).unwrap().len(),
                4
            );
        }
    }

    #[test]
    fn broken_terminal_controller_is_a_certificate_failure() {
        let model = FnModel::new(1, 1, |x, u| x + u, |x, u| x[0] * x[0] + u[0] * u[0])
            .with_constraints(|_, u| {
                (u[0].abs() > 1.0).then(|| {
                    crate::error::ConstraintViolation::new("input bound", u[0].abs() - 1.0)
                })
            });
        let ti = TerminalIngredients::new(
            Arc::new(|_| 0.0),
            Arc::new(|x: &State| x[0] * x[0]),
            vec![Arc::new(|x: &State| -x * 10.0)],
        )
        .unwrap();
        let cert = DissipativityCertificate::zero();
        let x0 = Vector::from_vec(vec![1.0]);
        let inst = OcpInstance::new(&model, &ti, &cert, &x0, 1).unwrap();
        let sol =
            OcpSolution::from_inputs(&inst, vec![Vector::from_vec(vec![-0.5])], None).unwrap();
        let h = CyclicHorizon::new(1, 1).unwrap();
        assert!(matches!(
            shifted_candidate(&model, &sol, &ti, &h, 0),
            Err(Error::CertificateFailure { step: Some(0), .. })
        ));
    }
}
