//! Receding-horizon closed loop with the cyclic horizon, its CSV trace, and the
//! comparison against re-solving the full horizon once per cycle.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{ConstraintViolation, Error, Result};
use crate::horizon::CyclicHorizon;
use crate::model::{
    rotated_stage_cost_unchecked, set_distance, DissipativityCertificate, Input, ProblemModel,
    State, TerminalIngredients,
};
use crate::ocp::{shifted_candidate, OcpBackend, OcpInstance, OcpSolution};

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub k: u64,
    pub horizon: usize,
    pub state: State,
    pub input: Input,
    pub stage_cost: f64,
    /// `V*(x(k), k)`.
    pub value: f64,
    /// `V̄*(x(k), k)`.
    pub rotated_value: f64,
    /// `L(x(k), u(k))`.
    pub rotated_stage_cost: f64,
    pub set_distance: f64,
    pub bucket_level: Option<i64>,
    /// Rotated cost of the shifted candidate that warm-started this solve.
    pub candidate_value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceMetadata {
    pub backend: String,
    pub max_horizon: usize,
    pub cycle_length: usize,
    pub steps: u64,
    pub seed: u64,
    pub tolerance: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
    pub state_labels: Vec<String>,
    pub input_labels: Vec<String>,
    pub initial_state: Vec<f64>,
    pub final_state: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct MetadataBlock {
    trace: TraceMetadata,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    config: Option<toml::Table>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoopTrace {
    pub metadata: TraceMetadata,
    /// Embedded experiment configuration, written into the CSV comment block.
    pub config: Option<toml::Table>,
    pub rows: Vec<TraceRow>,
}

/// Seed, tolerance and config provenance recorded in a trace.
#[derive(Debug, Clone, Default)]
pub struct RunInfo {
    pub seed: u64,
    pub tolerance: f64,
    pub config_hash: Option<String>,
    pub config: Option<toml::Table>,
}

impl ClosedLoopTrace {
    pub fn final_state(&self) -> State {
        State::from_vec(self.metadata.final_state.clone())
    }

    pub fn states(&self) -> Vec<State> {
        self.rows
            .iter()
            .map(|r| r.state.clone())
            .chain(std::iter::once(self.final_state()))
            .collect()
    }

    pub fn header(&self) -> Vec<String> {
        let mut h = vec!["k".to_string(), "horizon".to_string()];
        h.extend(self.metadata.state_labels.iter().cloned());
        h.extend(self.metadata.input_labels.iter().cloned());
        h.extend(
            [
                "stage_cost",
                "value",
                "rotated_value",
                "rotated_stage_cost",
                "set_distance",
                "bucket_level",
                "candidate_value",
            ]
            .map(String::from),
        );
        h
    }

    /// Metadata as `# `-prefixed TOML lines, then the header and one row per step.
    pub fn to_csv(&self) -> Result<String> {
        let block = MetadataBlock {
            trace: self.metadata.clone(),
            config: self.config.clone(),
        };
        let meta = toml::to_string(&block).map_err(|e| Error::Config(e.to_string()))?;
        let mut out = String::new();
        for line in meta.lines() {
            if line.is_empty() {
                out.push_str("#\n");
            } else {
                let _ = writeln!(out, "# {line}");
            }
        }
        out.push_str(&self.header().join(","));
        out.push('\n');
        for r in &self.rows {
            let mut fields = vec![r.k.to_string(), r.horizon.to_string()];
            fields.extend(r.state.iter().map(|v| v.to_string()));
            fields.extend(r.input.iter().map(|v| v.to_string()));
            fields.extend(
                [
                    r.stage_cost,
                    r.value,
                    r.rotated_value,
                    r.rotated_stage_cost,
                    r.set_distance,
                ]
                .map(|v| v.to_string()),
            );
            fields.push(r.bucket_level.map(|b| b.to_string()).unwrap_or_default());
            fields.push(r.candidate_value.map(|v| v.to_string()).unwrap_or_default());
            out.push_str(&fields.join(","));
            out.push('\n');
        }
        Ok(out)
    }

    /// Rechecks the trace against the model: each successor state is reproduced by the
    /// dynamics, the horizon column follows the cyclic law, and the cost columns match.
    pub fn validate(&self, model: &dyn ProblemModel, h: &CyclicHorizon, tol: f64) -> Result<()> {
        let states = self.states();
        for (i, r) in self.rows.iter().enumerate() {
            let fail = |reason: String| Error::CertificateFailure {
                step: Some(r.k),
                reason,
            };
            if r.k != i as u64 {
                return Err(fail(format!("row {i} carries step index {}", r.k)));
            }
            if r.horizon != h.length(r.k) {
                return Err(fail(format!(
                    "horizon {} differs from N(k) = {}",
                    r.horizon,
                    h.length(r.k)
                )));
            }
            let next = model.dynamics(&r.state, &r.input);
            let dev = (&next - &states[i + 1]).amax();
            if !(dev <= tol) {
                return Err(fail(format!(
                    "successor state deviates from the dynamics by {dev:.3e}"
                )));
            }
            let cost = model.stage_cost(&r.state, &r.input);
            if !((cost - r.stage_cost).abs() <= tol * cost.abs().max(1.0)) {
                return Err(fail(format!(
                    "stage cost column {} differs from {cost}",
                    r.stage_cost
                )));
            }
        }
        Ok(())
    }
}

/// Parses the metadata block of a trace CSV.
pub fn parse_trace_metadata(csv: &str) -> Result<(TraceMetadata, Option<toml::Table>)> {
    let mut toml_text = String::new();
    for line in csv.lines() {
        let Some(rest) = line.strip_prefix('#') else {
            break;
        };
        toml_text.push_str(rest.strip_prefix(' ').unwrap_or(rest));
        toml_text.push('\n');
    }
    let block: MetadataBlock =
        toml::from_str(&toml_text).map_err(|e| Error::Config(e.to_string()))?;
    Ok((block.trace, block.config))
}

/// Receding-horizon loop: at step `k` solve with horizon `N(k)`, apply the first input,
/// and warm-start the next solve with the shifted candidate.
#[allow(clippy::too_many_arguments)]
pub fn run_closed_loop(
    model: &dyn ProblemModel,
    ti: &TerminalIngredients,
    cert: &DissipativityCertificate,
    h: &CyclicHorizon,
    x0: &State,
    steps: u64,
    backend: &dyn OcpBackend,
    info: &RunInfo,
) -> Result<ClosedLoopTrace> {
    if x0.len() != model.state_dim() {
        return Err(Error::Dimension(format!(
            "initial state has length {}, model state dimension is {}",
            x0.len(),
            model.state_dim()
        )));
    }
    if ti.cycle_length() != h.cycle_length() {
        return Err(Error::InvalidArgument(format!(
            "terminal ingredients have cycle length {}, horizon uses {}",
            ti.cycle_length(),
            h.cycle_length()
        )));
    }
    let mut rows = Vec::with_capacity(steps as usize);
    let mut x = x0.clone();
    let mut warm: Option<Vec<Input>> = None;
    for k in 0..steps {
        let horizon = h.length(k);
        let inst = OcpInstance::new(model, ti, cert, &x, horizon)?;
        let candidate_value = warm
            .as_ref()
            .and_then(|w| inst.evaluate(w))
            .map(|(_, rotated, _)| rotated);
        let sol = backend.solve(&inst, warm.as_deref())?;
        if !sol.feasible {
            if k == 0 {
                return Err(Error::InitialInfeasible);
            }
            return Err(Error::CertificateFailure {
                step: Some(k),
                reason: "optimal control problem became infeasible".into(),
            });
        }
        let u = sol.inputs[0].clone();
        rows.push(TraceRow {
            k,
            horizon,
            stage_cost: model.stage_cost(&x, &u),
            value: sol.value,
            rotated_value: sol.rotated_value,
            rotated_stage_cost: rotated_stage_cost_unchecked(model, cert, &x, &u),
            set_distance: set_distance(model.target_set(), &x),
            bucket_level: model.bucket_level(&x),
            candidate_value,
            state: x.clone(),
            input: u.clone(),
        });
        warm = Some(shifted_candidate(model, &sol, ti, h, k)?);
        x = model.dynamics(&x, &u);
    }
    Ok(ClosedLoopTrace {
        metadata: TraceMetadata {
            backend: backend.name().to_string(),
            max_horizon: h.max_horizon(),
            cycle_length: h.cycle_length(),
            steps,
            seed: info.seed,
            tolerance: info.tolerance,
            config_hash: info.config_hash.clone(),
            state_labels: model.state_labels(),
            input_labels: model.input_labels(),
            initial_state: x0.iter().copied().collect(),
            final_state: x.iter().copied().collect(),
        },
        config: info.config.clone(),
        rows,
    })
}

/// `(1/K) Σ_{k<K} ℓ(x(k), u(k))`.
pub fn running_average_cost(trace: &ClosedLoopTrace, count: usize) -> Result<f64> {
    window_average_cost(trace, 0, count)
}

/// Mean stage cost over the steps `start..end`.
pub fn window_average_cost(trace: &ClosedLoopTrace, start: usize, end: usize) -> Result<f64> {
    if end <= start {
        return Err(Error::Domain(ConstraintViolation::new(
            "averaging window is nonempty",
            1.0,
        )));
    }
    if end > trace.rows.len() {
        return Err(Error::InvalidArgument(format!(
            "window end {end} exceeds trace length {}",
            trace.rows.len()
        )));
    }
    let sum: f64 = trace.rows[start..end].iter().map(|r| r.stage_cost).sum();
    Ok(sum / (end - start) as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquivalenceReport {
    /// Largest `‖·‖∞` gap between the two state trajectories.
    pub max_deviation: f64,
    /// Step at which the largest gap occurs.
    pub worst_step: u64,
    pub steps: u64,
    pub cyclic: ClosedLoopTrace,
    pub block_states: Vec<State>,
}

impl EquivalenceReport {
    pub fn identical(&self, tol: f64) -> bool {
        self.max_deviation <= tol
    }
}

/// Runs the cyclic-horizon loop and the loop that solves the full horizon once per
/// cycle and applies its first `M` inputs, over `cycles` cycles.
#[allow(clippy::too_many_arguments)]
pub fn multi_step_equivalence(
    model: &dyn ProblemModel,
    ti: &TerminalIngredients,
    cert: &DissipativityCertificate,
    h: &CyclicHorizon,
    x0: &State,
    cycles: u64,
    backend: &dyn OcpBackend,
    info: &RunInfo,
) -> Result<EquivalenceReport> {
    let m = h.cycle_length();
    let steps = cycles * m as u64;
    let cyclic = run_closed_loop(model, ti, cert, h, x0, steps, backend, info)?;

    let mut block_states = vec![x0.clone()];
    let mut x = x0.clone();
    for c in 0..cycles {
        let inst = OcpInstance::new(model, ti, cert, &x, h.max_horizon())?;
        let sol: OcpSolution = backend.solve(&inst, None)?;
        if !sol.feasible {
            if c == 0 {
                return Err(Error::InitialInfeasible);
            }
            return Err(Error::CertificateFailure {
                step: Some(c * m as u64),
                reason: "full-horizon problem became infeasible".into(),
            });
        }
        for u in &sol.inputs[..m] {
            x = model.dynamics(&x, u);
            block_states.push(x.clone());
        }
    }

    let (mut max_deviation, mut worst_step) = (0.0f64, 0u64);
    for (k, (a, b)) in cyclic.states().iter().zip(&block_states).enumerate() {
        let d = (a - b).amax();
        if d > max_deviation {
            max_deviation = d;
            worst_step = k as u64;
        }
    }
    Ok(EquivalenceReport {
        max_deviation,
        worst_step,
        steps,
        cyclic,
        block_states,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::BoxSet;
    use crate::ocp::{LtiBackend, LtiModel};
    use nalgebra::{DMatrix, DVector};
    use std::sync::Arc;

    fn scalar_lti() -> Arc<LtiModel> {
        let one = DMatrix::from_element(1, 1, 1.0);
        // P solves the scalar Riccati equation p = 1 + p − p²/(1 + p).
        let p = (1.0 + 5f64.sqrt()) / 2.0;
        Arc::new(
            LtiModel::new(
                one.clone(),
                one.clone(),
                one.clone(),
                one,
                DMatrix::from_element(1, 1, p),
            )
            .unwrap()
            .with_input_box(
                BoxSet::new(
                    DVector::from_element(1, -2.0),
                    DVector::from_element(1, 2.0),
                )
                .unwrap(),
            )
            .unwrap(),
        )
    }

    fn run(model: &Arc<LtiModel>, x0: f64, steps: u64, h: &CyclicHorizon) -> ClosedLoopTrace {
        let ti = model.terminal_ingredients();
        let cert = DissipativityCertificate::zero();
        let backend = LtiBackend::new(model.clone());
        run_closed_loop(
            model.as_ref(),
            &ti,
            &cert,
            h,
            &DVector::from_element(1, x0),
            steps,
            &backend,
            &RunInfo {
                seed: 1,
                tolerance: 1e-9,
                ..Default::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn start_on_target_stays_there() {
        let model = scalar_lti();
        let h = CyclicHorizon::new(3, 1).unwrap();
        let trace = run(&model, 0.0, 6, &h);
        assert_eq!(trace.rows.len(), 6);
        assert!(trace
            .rows
            .iter()
            .all(|r| r.stage_cost == 0.0 && r.state[0] == 0.0));
    }

    #[test]
    fn zero_steps_keeps_metadata() {
        let model = scalar_lti();
        let h = CyclicHorizon::new(3, 1).unwrap();
        let trace = run(&model, 0.7, 0, &h);
        assert!(trace.rows.is_empty());
        assert_eq!(trace.metadata.final_state, vec![0.7]);
        let csv = trace.to_csv().unwrap();
        let (meta, _) = parse_trace_metadata(&csv).unwrap();
        assert_eq!(meta, trace.metadata);
        assert!(csv.lines().last().unwrap().starts_with("k,horizon,x0,u0,"));
    }

    #[test]
    fn trace_is_self_consistent_and_decreasing() {
        let model = scalar_lti();
        let h = CyclicHorizon::new(3, 1).unwrap();
        let trace = run(&model, 3.0, 8, &h);
        trace.validate(model.as_ref(), &h, 1e-12).unwrap();
        for w in trace.rows.windows(2) {
            assert!(w[1].rotated_value <= w[0].rotated_value - w[0].rotated_stage_cost + 1e-8);
        }
        assert!(trace.rows[1].candidate_value.is_some());
    }

    #[test]
    fn validate_detects_corruption() {
        let model = scalar_lti();
        let h = CyclicHorizon::new(3, 1).unwrap();
        let mut trace = run(&model, 1.0, 4, &h);
        trace.rows[2].input[0] += 0.1;
        assert!(matches!(
            trace.validate(model.as_ref(), &h, 1e-12),
            Err(Error::CertificateFailure { step: Some(2), .. })
        ));
    }

    #[test]
    fn averages() {
        let model = scalar_lti();
        let h = CyclicHorizon::new(3, 1).unwrap();
        let mut trace = run(&model, 1.0, 3, &h);
        for (r, c) in trace.rows.iter_mut().zip([2.0, 0.0, 4.0]) {
            r.stage_cost = c;
        }
        assert_eq!(running_average_cost(&trace, 3).unwrap(), 2.0);
        assert_eq!(window_average_cost(&trace, 1, 3).unwrap(), 2.0);
        assert!(matches!(
            running_average_cost(&trace, 0),
            Err(Error::Domain(_))
        ));
        assert!(running_average_cost(&trace, 4).is_err());
    }

    #[test]
    fn unit_cycle_equivalence_is_exact() {
        let model = scalar_lti();
        let h = CyclicHorizon::new(2, 1).unwrap();
        let ti = model.terminal_ingredients();
        let cert = DissipativityCertificate::zero();
        let rep = multi_step_equivalence(
            model.as_ref(),
            &ti,
            &cert,
            &h,
            &DVector::from_element(1, 2.5),
            5,
            &LtiBackend::new(model.clone()),
            &RunInfo::default(),
        )
        .unwrap();
        assert_eq!(rep.max_deviation, 0.0);
        assert_eq!(rep.block_states.len(), 6);
    }
}
