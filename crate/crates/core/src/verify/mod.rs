//! Sampled numerical checks of the stabilizing conditions and of the closed-loop
//! guarantees. Failures are reported, never thrown.

mod ncs;
mod oracle;
pub mod sampling;

pub use ncs::{ncs_certificate_suite, NcsSampler, SuiteOptions};
pub use oracle::{aligned_axis, compare_with_grid, OracleOptions, OracleReport};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    rotated_stage_cost_unchecked, set_distance, DissipativityCertificate, Input, ProblemModel,
    State, TerminalIngredients,
};
use crate::ocp::{OcpBackend, OcpInstance};
use crate::sim::{window_average_cost, ClosedLoopTrace};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateReport {
    pub name: String,
    pub pass: bool,
    pub worst_violation: f64,
    pub tolerance: f64,
    /// Offending sample or time index, if any violation was found.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub witness: Option<String>,
    pub samples: usize,
    /// Reported for information only; does not affect the overall verdict.
    #[serde(default)]
    pub informational: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub estimate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl CertificateReport {
    pub fn new(
        name: impl Into<String>,
        worst_violation: f64,
        tolerance: f64,
        witness: Option<String>,
        samples: usize,
    ) -> Self {
        Self {
            name: name.into(),
            // NaN never passes.
            pass: worst_violation <= tolerance,
            worst_violation,
            tolerance,
            witness,
            samples,
            informational: false,
            estimate: None,
            note: None,
        }
    }

    pub fn informational(mut self) -> Self {
        self.informational = true;
        self
    }

    pub fn with_estimate(mut self, value: f64) -> Self {
        self.estimate = Some(value);
        self
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.note = Some(note.into());
        self
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportSet {
    pub certificate: Vec<CertificateReport>,
}

impl ReportSet {
    pub fn all_pass(&self) -> bool {
        self.certificate.iter().all(|r| r.pass || r.informational)
    }

    pub fn failing(&self) -> impl Iterator<Item = &CertificateReport> {
        self.certificate
            .iter()
            .filter(|r| !r.pass && !r.informational)
    }

    pub fn find(&self, name: &str) -> Option<&CertificateReport> {
        self.certificate.iter().find(|r| r.name == name)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }
}

pub(crate) fn fmt_vec(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.6e}")).collect();
    format!("[{}]", parts.join(", "))
}

/// Largest violation over `items` and its index; ties keep the earliest index and NaN
/// counts as infinite, so the result does not depend on the parallel split.
fn worst<T: Sync>(items: &[T], f: impl Fn(&T) -> f64 + Sync) -> (f64, Option<usize>) {
    items
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let v = f(s);
            (if v.is_nan() { f64::INFINITY } else { v }, Some(i))
        })
        .reduce(
            || (f64::NEG_INFINITY, None),
            |a, b| match (a.1, b.1) {
                (None, _) => b,
                (_, None) => a,
                (Some(ia), Some(ib)) => {
                    if b.0 > a.0 || (b.0 == a.0 && ib < ia) {
                        b
                    } else {
                        a
                    }
                }
            },
        )
}

fn report_from<T: Sync>(
    name: &str,
    items: &[T],
    tol: f64,
    f: impl Fn(&T) -> f64 + Sync,
    describe: impl Fn(&T) -> String,
) -> CertificateReport {
    let (v, idx) = worst(items, f);
    let v = if idx.is_none() { 0.0 } else { v };
    let witness = idx.filter(|_| v > 0.0).map(|i| describe(&items[i]));
    CertificateReport::new(name, v, tol, witness, items.len())
}

/// `λ(f(x,u)) − λ(x) ≤ ℓ(x,u) − ℓ*_av − ρ(|x|_X̄)` on admissible samples.
pub fn check_dissipativity(
    model: &dyn ProblemModel,
    cert: &DissipativityCertificate,
    samples: &[(State, Input)],
    tol: f64,
) -> CertificateReport {
    let rho = cert.lower_bound();
    let ell_av = model.optimal_average_cost();
    report_from(
        "dissipativity",
        samples,
        tol,
        |(x, u)| {
            let lhs = cert.storage(&model.dynamics(x, u)) - cert.storage(x);
            let rhs =
                model.stage_cost(x, u) - ell_av - rho.eval(set_distance(model.target_set(), x));
            lhs - rhs
        },
        |(x, u)| {
            format!(
                "x = {}, u = {}",
                fmt_vec(x.as_slice()),
                fmt_vec(u.as_slice())
            )
        },
    )
}

/// Amount by which the terminal controllers fail `M`-step invariance from
/// `x`, with the violated predicate.
fn invariance_violation(
    model: &dyn ProblemModel,
    ti: &TerminalIngredients,
    x: &State,
) -> (f64, String) {
    let mut worst = (0.0, String::new());
    let mut z = x.clone();
    for i in 0..ti.cycle_length() {
        let u = ti.control(i, &z);
        if let Some(v) = model.constraint_violation(&z, &u) {
            if v.amount > worst.0 {
                worst = (v.amount, format!("step {i}: {}", v.predicate));
            }
        }
        z = model.dynamics(&z, &u);
    }
    let excess = ti.violation(&z);
    if excess > worst.0 {
        worst = (
            excess,
            format!("step {}: terminal region", ti.cycle_length()),
        );
    }
    worst
}

/// From every sampled `x ∈ X_f` the terminal controllers keep `(x, u)` admissible for
/// `M` steps and return to `X_f`.
pub fn check_m_step_invariance(
    model: &dyn ProblemModel,
    ti: &TerminalIngredients,
    samples: &[State],
    tol: f64,
) -> CertificateReport {
    report_from(
        "m_step_invariance",
        samples,
        tol,
        |x| invariance_violation(model, ti, x).0,
        |x| {
            format!(
                "x = {} ({})",
                fmt_vec(x.as_slice()),
                invariance_violation(model, ti, x).1
            )
        },
    )
}

/// Residuals of the plain and rotated terminal decrease conditions along the `M`-step
/// terminal-controller trajectory from `x`.
pub fn terminal_decrease_residuals(
    model: &dyn ProblemModel,
    ti: &TerminalIngredients,
    cert: &DissipativityCertificate,
    x: &State,
) -> (f64, f64) {
    let ell_av = model.optimal_average_cost();
    let mut z = x.clone();
    let mut plain = 0.0;
    let mut rotated = 0.0;
    for i in 0..ti.cycle_length() {
        let u = ti.control(i, &z);
        plain += model.stage_cost(&z, &u) - ell_av;
        rotated += rotated_stage_cost_unchecked(model, cert, &z, &u);
        z = model.dynamics(&z, &u);
    }
    let plain = ti.cost(&z) - ti.cost(x) + plain;
    let rotated = (ti.cost(&z) + cert.storage(&z)) - (ti.cost(x) + cert.storage(x)) + rotated;
    (plain, rotated)
}

/// Three reports: the plain decrease `V_f(x_M) − V_f(x) + Σ(ℓ − ℓ*_av) ≤ 0`, its rotated
/// counterpart, and the gap between the two residuals, which vanishes identically.
pub fn check_terminal_decrease(
    model: &dyn ProblemModel,
    ti: &TerminalIngredients,
    cert: &DissipativityCertificate,
    samples: &[State],
    tol: f64,
    identity_tol: f64,
) -> Vec<CertificateReport> {
    let residuals: Vec<(f64, f64)> = samples
        .par_iter()
        .map(|x| terminal_decrease_residuals(model, ti, cert, x))
        .collect();
    let describe = |i: usize| format!("x = {}", fmt_vec(samples[i].as_slice()));
    let idx: Vec<usize> = (0..samples.len()).collect();
    let scale = |i: usize| 1.0 + ti.cost(&samples[i]).abs() + cert.storage(&samples[i]).abs();
    vec![
        report_from(
            "terminal_decrease",
            &idx,
            tol,
            |&i| residuals[i].0,
            |&i| describe(i),
        ),
        report_from(
            "rotated_terminal_decrease",
            &idx,
            tol,
            |&i| residuals[i].1,
            |&i| describe(i),
        ),
        report_from(
            "terminal_decrease_identity",
            &idx,
            identity_tol,
            |&i| (residuals[i].1 - residuals[i].0).abs() / scale(i),
            |&i| describe(i),
        )
        .with_note("relative to 1 + |V_f(x)| + |λ(x)|"),
    ]
}

/// `V̄_f ≥ 0` on the terminal region, `V̄_f = 0` and `x ∈ X_f` on the target set, and no
/// sample away from the target set attains the minimum.
pub fn check_terminal_minimum(
    model: &dyn ProblemModel,
    ti: &TerminalIngredients,
    cert: &DissipativityCertificate,
    terminal_samples: &[State],
    target_samples: &[State],
    tol: f64,
) -> CertificateReport {
    let rotated = |x: &State| ti.cost(x) + cert.storage(x);
    let all: Vec<(&State, bool)> = terminal_samples
        .iter()
        .map(|x| (x, false))
        .chain(target_samples.iter().map(|x| (x, true)))
        .collect();
    let violation = |&(x, on_target): &(&State, bool)| {
        let v = rotated(x);
        if on_target {
            v.abs().max(ti.violation(x))
        } else {
            let d = set_distance(model.target_set(), x);
            // A minimizer away from the target set is a violation of size d.
            let off_target = if v <= 0.0 && d > tol { d } else { 0.0 };
            (-v).max(off_target)
        }
    };
    report_from("terminal_minimum", &all, tol, violation, |(x, _)| {
        format!(
            "x = {}, rotated terminal cost {:.6e}",
            fmt_vec(x.as_slice()),
            rotated(x)
        )
    })
}

/// Membership predicates compared by [`check_interior_condition`].
pub struct InteriorSets<'a> {
    pub constraint_set: &'a (dyn Fn(&State) -> bool + Sync),
    pub terminal_set: &'a (dyn Fn(&State) -> bool + Sync),
    /// Points of the target set used as ball centers.
    pub centers: &'a [State],
    /// Coordinates that are perturbed; the others stay at the center value.
    pub continuous: &'a [bool],
}

/// For each radius `a` of the ascending grid, samples `X̄ ⊕ B_a` and compares membership
/// in the terminal set and in the constraint set. The estimate `â` is the largest grid
/// radius up to which every sample agrees; the check passes iff `â > 0`, that is, the
/// smallest ball shows no disagreement.
pub fn check_interior_condition<R: Rng>(
    name: &str,
    sets: &InteriorSets<'_>,
    radii: &[f64],
    samples_per_radius: usize,
    rng: &mut R,
) -> Result<CertificateReport> {
    if radii.is_empty() || radii.windows(2).any(|w| !(w[0] < w[1])) || !(radii[0] > 0.0) {
        return Err(Error::InvalidArgument(
            "radii must be positive and strictly increasing".into(),
        ));
    }
    if sets.centers.is_empty() {
        return Err(Error::InvalidArgument(
            "at least one target-set point is required".into(),
        ));
    }
    let dim = sets.centers[0].len();
    if sets.continuous.len() != dim {
        return Err(Error::Dimension("continuous-coordinate mask length".into()));
    }
    let free: Vec<usize> = (0..dim).filter(|&i| sets.continuous[i]).collect();

    let mut a_hat = 0.0;
    let mut first_disagreement: Option<(f64, State)> = None;
    let mut smallest_count = 0usize;
    let mut total = 0usize;
    for (j, &r) in radii.iter().enumerate() {
        let pts: Vec<State> = (0..samples_per_radius)
            .map(|s| {
                let mut x = sets.centers[s % sets.centers.len()].clone();
                let d = sampling::gaussian_direction(free.len(), rng);
                let scale = r * rng.random::<f64>().powf(1.0 / free.len().max(1) as f64);
                for (c, &i) in free.iter().enumerate() {
                    x[i] += scale * d[c];
                }
                x
            })
            .collect();
        total += pts.len();
        let disagree: Vec<&State> = pts
            .par_iter()
            .filter(|x| (sets.terminal_set)(x) != (sets.constraint_set)(x))
            .collect();
        if j == 0 {
            smallest_count = disagree.len();
        }
        if let Some(x) = disagree.first() {
            first_disagreement.get_or_insert((r, (*x).clone()));
            break;
        }
        a_hat = r;
    }
    let witness =
        first_disagreement.map(|(r, x)| format!("radius {r:.3e}: x = {}", fmt_vec(x.as_slice())));
    Ok(CertificateReport::new(name, smallest_count as f64, 0.0, witness, total)
        .with_estimate(a_hat)
        .with_note("worst violation counts disagreeing samples in the smallest ball; estimate is the agreement radius"))
}

/// Largest `V̄*(x, 0) − V̄_f(x)` over sampled terminal states, solved with horizon
/// `horizon` (a multiple of the cycle length), together with a fitted quadratic
/// bound `V̄_f(x) ≤ c·|x|²_X̄`.
pub fn check_value_bound(
    model: &dyn ProblemModel,
    ti: &TerminalIngredients,
    cert: &DissipativityCertificate,
    backend: &dyn OcpBackend,
    horizon: usize,
    samples: &[State],
    tol: f64,
) -> Result<Vec<CertificateReport>> {
    if horizon == 0 || !horizon.is_multiple_of(ti.cycle_length()) {
        return Err(Error::InvalidArgument(format!(
            "value bound needs a horizon that is a positive multiple of {}",
            ti.cycle_length()
        )));
    }
    let gaps: Vec<Result<f64>> = samples
        .par_iter()
        .map(|x| {
            let inst = OcpInstance::new(model, ti, cert, x, horizon)?;
            let sol = backend.solve(&inst, None)?;
            let vf = ti.cost(x) + cert.storage(x);
            Ok(if sol.feasible {
                sol.rotated_value - vf
            } else {
                f64::INFINITY
            })
        })
        .collect();
    let gaps = gaps.into_iter().collect::<Result<Vec<f64>>>()?;
    let idx: Vec<usize> = (0..samples.len()).collect();
    let bound = report_from(
        "value_bound",
        &idx,
        tol,
        |&i| gaps[i] / (1.0 + (ti.cost(&samples[i]) + cert.storage(&samples[i])).abs()),
        |&i| format!("x = {}", fmt_vec(samples[i].as_slice())),
    )
    .with_note("relative to 1 + |rotated terminal cost|");

    let alpha = samples
        .iter()
        .filter_map(|x| {
            let d = set_distance(model.target_set(), x);
            (d > 1e-9).then(|| (ti.cost(x) + cert.storage(x)) / (d * d))
        })
        .fold(0.0, f64::max);
    let fitted = CertificateReport::new("alpha_candidate", 0.0, tol, None, samples.len())
        .informational()
        .with_estimate(alpha)
        .with_note("fitted coefficient c with rotated terminal cost ≤ c·dist² on the samples");
    Ok(vec![bound, fitted])
}

/// Fitted coefficient `c` with `V̄*(x, 0) ≤ c·|x|²_X̄` on sampled feasible states. This is
/// only a surrogate for the existence of a class-K∞ upper bound on the feasible set.
pub fn fit_value_growth(
    model: &dyn ProblemModel,
    ti: &TerminalIngredients,
    cert: &DissipativityCertificate,
    backend: &dyn OcpBackend,
    horizon: usize,
    samples: &[State],
) -> Result<CertificateReport> {
    let ratios: Vec<Result<Option<f64>>> = samples
        .par_iter()
        .map(|x| {
            let inst = OcpInstance::new(model, ti, cert, x, horizon)?;
            let sol = backend.solve(&inst, None)?;
            let d = set_distance(model.target_set(), x);
            Ok((sol.feasible && d > 1e-9).then(|| sol.rotated_value / (d * d)))
        })
        .collect();
    let ratios = ratios.into_iter().collect::<Result<Vec<_>>>()?;
    let feasible = ratios.iter().flatten().count();
    let sigma = ratios.iter().flatten().copied().fold(0.0, f64::max);
    Ok(
        CertificateReport::new("sigma_candidate", 0.0, 0.0, None, feasible)
            .informational()
            .with_estimate(sigma)
            .with_note("surrogate: fitted quadratic bound on sampled feasible states"),
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClosedLoopCheckOptions {
    pub tolerance: f64,
    pub epsilon: f64,
    pub burn_in: usize,
}

impl Default for ClosedLoopCheckOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-6,
            epsilon: 1e-3,
            burn_in: 10,
        }
    }
}

/// Checks a completed trace: (i) `V̄*(k+1) ≤ V̄*(k) − L(k)`, (ii) the average stage cost
/// after the burn-in stays within `ε` of `ℓ*_av`, (iii) `|x(k)|_X̄ ≤ ρ⁻¹(V̄*(x(0), 0))`.
/// Also reports monotonicity of `V̄*` and the average over the whole run (informational).
pub fn check_closed_loop(
    trace: &ClosedLoopTrace,
    model: &dyn ProblemModel,
    cert: &DissipativityCertificate,
    opts: &ClosedLoopCheckOptions,
) -> Vec<CertificateReport> {
    let rows = &trace.rows;
    let n = rows.len();
    let step_witness = |k: u64| Some(format!("k = {k}"));

    let mut decrease = (0.0f64, None);
    let mut monotone = (0.0f64, None);
    for w in rows.windows(2) {
        let v = w[1].rotated_value - (w[0].rotated_value - w[0].rotated_stage_cost);
        if v > decrease.0 {
            decrease = (v, step_witness(w[0].k));
        }
        let v = w[1].rotated_value - w[0].rotated_value;
        if v > monotone.0 {
            monotone = (v, step_witness(w[0].k));
        }
    }
    let transitions = n.saturating_sub(1);
    let tol = opts.tolerance;

    let ell_av = model.optimal_average_cost();
    let mut perf = (0.0f64, None);
    let mut windowed = None;
    if n > opts.burn_in {
        for end in opts.burn_in + 1..=n {
            let avg =
                window_average_cost(trace, opts.burn_in, end).expect("window inside the trace");
            let v = avg - ell_av - opts.epsilon;
            if v > perf.0 {
                perf = (v, step_witness(end as u64 - 1));
            }
            windowed = Some(avg);
        }
    }
    let whole = (n > 0).then(|| window_average_cost(trace, 0, n).expect("nonempty"));

    let radius = rows
        .first()
        .map(|r| cert.lower_bound().inverse(r.rotated_value))
        .unwrap_or(0.0);
    let mut stability = (0.0f64, None);
    for r in rows {
        let v = r.set_distance - radius;
        if v > stability.0 {
            stability = (v, step_witness(r.k));
        }
    }
    let final_distance = set_distance(model.target_set(), &trace.final_state());
    if n > 0 && final_distance - radius > stability.0 {
        stability = (final_distance - radius, step_witness(n as u64));
    }

    let mut out = vec![
        CertificateReport::new("value_decrease", decrease.0, tol, decrease.1, transitions),
        CertificateReport::new(
            "value_monotonicity",
            monotone.0,
            tol,
            monotone.1,
            transitions,
        ),
        CertificateReport::new(
            "average_performance",
            perf.0,
            0.0,
            perf.1,
            n.saturating_sub(opts.burn_in),
        )
        .with_note(format!(
            "average stage cost over steps {}..k against optimal average + {:e}",
            opts.burn_in, opts.epsilon
        )),
        CertificateReport::new(
            "stability_bound",
            stability.0,
            tol,
            stability.1,
            n + usize::from(n > 0),
        )
        .with_estimate(radius),
    ];
    if let Some(avg) = windowed {
        out[2].estimate = Some(avg);
    }
    if let Some(avg) = whole {
        out.push(
            CertificateReport::new(
                "average_cost_from_start",
                (avg - ell_av - opts.epsilon).max(0.0),
                0.0,
                None,
                n,
            )
            .informational()
            .with_estimate(avg)
            .with_note("includes the transient from x(0)"),
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::FnModel;
    use nalgebra::DVector;
    use std::sync::Arc;

    fn scalar_model() -> FnModel {
        // x⁺ = x + u with an indefinite cost ℓ = x² − u².
        FnModel::new(1, 1, |x, u| x + u, |x, u| x[0] * x[0] - u[0] * u[0])
    }

    fn v(x: f64) -> State {
        DVector::from_element(1, x)
    }

    #[test]
    fn indefinite_cost_without_storage_fails() {
        let model = scalar_model();
        let cert = DissipativityCertificate::zero();
        let samples: Vec<(State, Input)> = [(0.0, 0.0), (0.0, 1.0), (0.5, 0.2)]
            .iter()
            .map(|&(x, u)| (v(x), v(u)))
            .collect();
        let r = check_dissipativity(&model, &cert, &samples, 1e-9);
        assert!(!r.pass);
        assert_eq!(r.worst_violation, 1.0);
        assert!(r.witness.unwrap().contains("1.000000e0"));
    }

    #[test]
    fn target_samples_hold_with_zero_slack() {
        // ℓ = x² + u², λ = 0: on X̄ = {0} with u = 0 both sides vanish.
        let model = FnModel::new(1, 1, |x, u| x + u, |x, u| x[0] * x[0] + u[0] * u[0]);
        let cert = DissipativityCertificate::zero();
        let r = check_dissipativity(&model, &cert, &[(v(0.0), v(0.0))], 0.0);
        assert!(r.pass);
        assert_eq!(r.worst_violation, 0.0);
    }

    fn stable_terminal(level: f64) -> TerminalIngredients {
        TerminalIngredients::new(
            Arc::new(move |x: &State| (x[0].abs() - level).max(0.0)),
            Arc::new(|x: &State| 2.0 * x[0] * x[0]),
            vec![Arc::new(|x: &State| -x * 0.5)],
        )
        .unwrap()
    }

    #[test]
    fn terminal_set_equal_to_target_is_invariant() {
        let model = FnModel::new(1, 1, |x, u| x + u, |x, u| x[0] * x[0] + u[0] * u[0]);
        let ti = stable_terminal(0.0);
        let r = check_m_step_invariance(&model, &ti, &[v(0.0)], 0.0);
        assert!(r.pass && r.worst_violation == 0.0);
    }

    #[test]
    fn invariance_reports_input_witness() {
        let model = FnModel::new(1, 1, |x, u| x + u, |x, u| x[0] * x[0] + u[0] * u[0])
            .with_constraints(|_, u: &Input| {
                (u[0].abs() > 0.25)
                    .then(|| crate::ConstraintViolation::new("input bound", u[0].abs() - 0.25))
            });
        let ti = stable_terminal(1.0);
        let samples: Vec<State> = [-1.0, -0.2, 0.3, 1.0].iter().map(|&x| v(x)).collect();
        let r = check_m_step_invariance(&model, &ti, &samples, 1e-12);
        assert!(!r.pass);
        assert!((r.worst_violation - 0.25).abs() < 1e-15);
        assert!(r.witness.unwrap().contains("input bound"));
    }

    #[test]
    fn terminal_decrease_and_identity() {
        // x⁺ = x + u, κ = −x/2: V_f(x/2) − V_f(x) + ℓ = 2x²/4 − 2x² + x² + x²/4 = −x²/4.
        let model = FnModel::new(1, 1, |x, u| x + u, |x, u| x[0] * x[0] + u[0] * u[0]);
        let ti = stable_terminal(10.0);
        let cert = DissipativityCertificate::new(
            |x: &State| 3.0 * x[0].sin(),
            crate::QuadraticKInf::new(1.0).unwrap(),
        );
        let samples: Vec<State> = (0..50).map(|i| v(-2.0 + 0.08 * i as f64)).collect();
        let reps = check_terminal_decrease(&model, &ti, &cert, &samples, 1e-12, 1e-10);
        assert!(reps.iter().all(|r| r.pass), "{reps:?}");
        let (plain, rotated) = terminal_decrease_residuals(&model, &ti, &cert, &v(2.0));
        assert!((plain + 1.0).abs() < 1e-12);
        assert!((rotated - plain).abs() < 1e-12);

        let weak = ti.with_cost_scale(0.1);
        let reps = check_terminal_decrease(&model, &weak, &cert, &samples, 1e-12, 1e-10);
        assert!(!reps[0].pass && !reps[1].pass && reps[2].pass);
    }

    #[test]
    fn target_point_with_zero_controller_has_zero_residual() {
        let model = FnModel::new(1, 1, |x, u| x + u, |x, u| x[0] * x[0] + u[0] * u[0]);
        let ti = TerminalIngredients::new(
            Arc::new(|x: &State| x[0].abs()),
            Arc::new(|x: &State| x[0] * x[0]),
            vec![Arc::new(|_| v(0.0))],
        )
        .unwrap();
        let (plain, rotated) =
            terminal_decrease_residuals(&model, &ti, &DissipativityCertificate::zero(), &v(0.0));
        assert_eq!((plain, rotated), (0.0, 0.0));
        let r = check_terminal_minimum(
            &model,
            &ti,
            &DissipativityCertificate::zero(),
            &[v(0.5)],
            &[v(0.0)],
            1e-12,
        );
        assert!(r.pass);
    }

    #[test]
    fn interior_condition_on_shared_boundary() {
        // X = [−2, 2] × [0, 2], X_f = [−1.5, 1.5] × [0, 1], X̄ = [−1, 1] × {0}: the target
        // set touches the common lower boundary and the sets agree up to radius 0.5.
        let in_x = |x: &State| x[0].abs() <= 2.0 && (0.0..=2.0).contains(&x[1]);
        let in_xf = |x: &State| x[0].abs() <= 1.5 && (0.0..=1.0).contains(&x[1]);
        let centers: Vec<State> = (0..=20)
            .map(|i| DVector::from_vec(vec![-1.0 + 0.1 * i as f64, 0.0]))
            .collect();
        let sets = InteriorSets {
            constraint_set: &in_x,
            terminal_set: &in_xf,
            centers: &centers,
            continuous: &[true, true],
        };
        let radii = [0.01, 0.1, 0.3, 0.45, 0.6, 1.0];
        let mut rng = sampling::rng_from_seed(5);
        let r = check_interior_condition("interior", &sets, &radii, 2000, &mut rng).unwrap();
        assert!(r.pass, "{r:?}");
        assert_eq!(r.estimate, Some(0.45));

        // Once X extends below the target set the boundaries no longer coincide.
        let in_x_lower = |x: &State| x[0].abs() <= 2.0 && (-1.0..=2.0).contains(&x[1]);
        let sets = InteriorSets {
            constraint_set: &in_x_lower,
            ..sets
        };
        let r = check_interior_condition("interior", &sets, &radii, 2000, &mut rng).unwrap();
        assert!(!r.pass);
        assert_eq!(r.estimate, Some(0.0));
    }

    #[test]
    fn worst_is_split_independent() {
        let vals: Vec<f64> = (0..10_000).map(|i| ((i * 7919) % 1000) as f64).collect();
        let (v, i) = worst(&vals, |x| *x);
        assert_eq!(v, 999.0);
        assert_eq!(i, vals.iter().position(|&x| x == 999.0));
        let (_, i) = worst(&[1.0, f64::NAN, 3.0], |x| *x);
        assert_eq!(i, Some(1));
    }

    #[test]
    fn report_set_round_trip() {
        let set = ReportSet {
            certificate: vec![
                CertificateReport::new("a", 0.0, 1e-8, None, 10),
                CertificateReport::new("b", 2.0, 1e-8, Some("k = 3".into()), 5)
                    .with_estimate(0.5)
                    .informational(),
            ],
        };
        let text = set.to_toml().unwrap();
        assert_eq!(ReportSet::from_toml(&text).unwrap(), set);
        assert!(set.all_pass());
    }
}
