//! Dense strictly convex quadratic programming.
//!
//! Solves
//!
//! ```text
//! minimize    ½ xᵀHx + fᵀx
//! subject to  G x ≤ h
//!             E x = e
//! ```
//!
//! Equalities are eliminated through an SVD null-space basis; the reduced problem is
//! solved with the Goldfarb–Idnani dual active-set method, which starts from the
//! unconstrained minimizer and adds violated constraints one at a time. A constraint
//! that cannot be added without an unbounded dual step proves infeasibility of the
//! current active set plus that constraint.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct QuadraticProgram {
    hessian: DMatrix<f64>,
    linear: DVector<f64>,
    ineq_matrix: DMatrix<f64>,
    ineq_rhs: DVector<f64>,
    eq_matrix: DMatrix<f64>,
    eq_rhs: DVector<f64>,
}

impl QuadraticProgram {
    pub fn new(hessian: DMatrix<f64>, linear: DVector<f64>) -> Result<Self> {
        let n = linear.len();
        if hessian.nrows() != n || hessian.ncols() != n {
            return Err(Error::Dimension(format!(
                "hessian is {}x{}, linear term has length {n}",
                hessian.nrows(),
                hessian.ncols()
            )));
        }
        let asym = (&hessian - hessian.transpose()).amax();
        if asym > 1e-9 * hessian.amax().max(1.0) {
            return Err(Error::InvalidArgument(format!(
                "hessian is not symmetric (asymmetry {asym:.3e})"
            )));
        }
        Ok(Self {
            hessian,
            linear,
            ineq_matrix: DMatrix::zeros(0, n),
            ineq_rhs: DVector::zeros(0),
            eq_matrix: DMatrix::zeros(0, n),
            eq_rhs: DVector::zeros(0),
        })
    }

    pub fn with_inequalities(mut self, g: DMatrix<f64>, h: DVector<f64>) -> Result<Self> {
        check_rows(&g, &h, self.dim(), "inequality")?;
        self.ineq_matrix = g;
        self.ineq_rhs = h;
        Ok(self)
    }

    pub fn with_equalities(mut self, e: DMatrix<f64>, rhs: DVector<f64>) -> Result<Self> {
        check_rows(&e, &rhs, self.dim(), "equality")?;
        self.eq_matrix = e;
        self.eq_rhs = rhs;
        Ok(self)
    }

    /// Appends equality rows to the existing ones.
    pub fn add_equalities(mut self, e: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<Self> {
        check_rows(e, rhs, self.dim(), "equality")?;
        self.eq_matrix = stack_rows(&self.eq_matrix, e);
        self.eq_rhs = stack_vec(&self.eq_rhs, rhs);
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.linear.len()
    }

    pub fn hessian(&self) -> &DMatrix<f64> {
        &self.hessian
    }

    pub fn linear(&self) -> &DVector<f64> {
        &self.linear
    }

    pub fn inequalities(&self) -> (&DMatrix<f64>, &DVector<f64>) {
        (&self.ineq_matrix, &self.ineq_rhs)
    }

    pub fn equalities(&self) -> (&DMatrix<f64>, &DVector<f64>) {
        (&self.eq_matrix, &self.eq_rhs)
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.hessian * x)) + self.linear.dot(x)
    }

    /// Same constraints with a modified objective.
    pub fn with_objective(&self, hessian: DMatrix<f64>, linear: DVector<f64>) -> Self {
        Self {
            hessian,
            linear,
            ..self.clone()
        }
    }

    /// Scaled KKT residual: the largest of stationarity, primal feasibility, dual
    /// feasibility and complementarity, each in the infinity norm. Stationarity is
    /// divided by `max(1, ‖Hx‖, ‖f‖)` and constraint terms by `max(1, ‖rhs‖)`;
    /// complementarity is additionally divided by `max(1, |yᵢ|)`.
    pub fn kkt_residual(&self, x: &DVector<f64>, y: &DVector<f64>, nu: &DVector<f64>) -> f64 {
        self.kkt_residual_with(x, y, nu, None)
    }

    pub(crate) fn kkt_residual_with(
        &self,
        x: &DVector<f64>,
        y: &DVector<f64>,
        nu: &DVector<f64>,
        extra_gradient: Option<&DVector<f64>>,
    ) -> f64 {
        let hx = &self.hessian * x;
        let mut grad = &hx + &self.linear;
        if !self.ineq_rhs.is_empty() {
            grad += self.ineq_matrix.transpose() * y;
        }
        if !self.eq_rhs.is_empty() {
            grad += self.eq_matrix.transpose() * nu;
        }
        if let Some(g) = extra_gradient {
            grad += g;
        }
        let stat_scale = 1f64.max(hx.amax()).max(self.linear.amax());
        let mut res = grad.amax() / stat_scale;

        if !self.ineq_rhs.is_empty() {
            let scale = 1f64.max(self.ineq_rhs.amax());
            let slack = &self.ineq_rhs - &self.ineq_matrix * x;
            for i in 0..slack.len() {
                res = res.max((-slack[i]).max(0.0) / scale);
                res = res.max((-y[i]).max(0.0));
                res = res.max((y[i] * slack[i]).abs() / (scale * y[i].abs().max(1.0)));
            }
        }
        if !self.eq_rhs.is_empty() {
            let scale = 1f64.max(self.eq_rhs.amax());
            res = res.max((&self.eq_matrix * x - &self.eq_rhs).amax() / scale);
        }
        res
    }
}

fn check_rows(m: &DMatrix<f64>, rhs: &DVector<f64>, n: usize, what: &str) -> Result<()> {
    if m.ncols() != n || m.nrows() != rhs.len() {
        return Err(Error::Dimension(format!(
            "{what} block is {}x{} with {} right-hand sides, expected {n} columns",
            m.nrows(),
            m.ncols(),
            rhs.len()
        )));
    }
    Ok(())
}

pub(crate) fn stack_rows(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(a.nrows() + b.nrows(), a.ncols().max(b.ncols()));
    out.view_mut((0, 0), (a.nrows(), a.ncols())).copy_from(a);
    out.view_mut((a.nrows(), 0), (b.nrows(), b.ncols()))
        .copy_from(b);
    out
}

pub(crate) fn stack_vec(a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
    DVector::from_iterator(a.len() + b.len(), a.iter().chain(b.iter()).copied())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpOptions {
    pub max_iterations: usize,
    pub tolerance: f64,
}

impl Default for QpOptions {
    fn default() -> Self {
        Self {
            max_iterations: 10_000,
            tolerance: 1e-9,
        }
    }
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub value: f64,
    pub ineq_multipliers: DVector<f64>,
    pub eq_multipliers: DVector<f64>,
    pub kkt_residual: f64,
    pub iterations: usize,
}

/// Rows that are jointly infeasible.
#[derive(Debug, Clone, PartialEq)]
pub struct InfeasibilityCertificate {
    pub inequality_rows: Vec<usize>,
    pub equalities_inconsistent: bool,
    pub detail: String,
}

#[derive(Debug, Clone)]
pub enum QpOutcome {
    Optimal(QpSolution),
    Infeasible(InfeasibilityCertificate),
}

impl QpOutcome {
    pub fn optimal(self) -> Option<QpSolution> {
        match self {
            QpOutcome::Optimal(s) => Some(s),
            QpOutcome::Infeasible(_) => None,
        }
    }
}

pub fn solve_qp(qp: &QuadraticProgram, opts: &QpOptions) -> Result<QpOutcome> {
    let n = qp.dim();
    let (eq, eq_rhs) = qp.equalities();

    // Null-space parametrization x = x0 + Z w of the equality manifold.
    let (x0, basis) = if eq.nrows() > 0 {
        match equality_manifold(eq, eq_rhs)? {
            Some(m) => m,
            None => {
                return Ok(QpOutcome::Infeasible(InfeasibilityCertificate {
                    inequality_rows: vec![],
                    equalities_inconsistent: true,
                    detail: "equality constraints are inconsistent".into(),
                }))
            }
        }
    } else {
        (DVector::zeros(n), DMatrix::identity(n, n))
    };

    let (g, h) = qp.inequalities();
    let h_red = basis.transpose() * qp.hessian() * &basis;
    let f_red = basis.transpose() * (qp.hessian() * &x0 + qp.linear());
    let g_red = g * &basis;
    let rhs_red = h - g * &x0;

    let (w, y, iterations) = if basis.ncols() == 0 {
        let slack = &rhs_red;
        let scale = 1f64.max(h.amax());
        if let Some(i) = (0..slack.len()).find(|&i| slack[i] < -opts.tolerance * scale) {
            return Ok(QpOutcome::Infeasible(InfeasibilityCertificate {
                inequality_rows: vec![i],
                equalities_inconsistent: false,
                detail: "the equality-determined point violates an inequality".into(),
            }));
        }
        (DVector::zeros(0), DVector::zeros(g.nrows()), 0)
    } else {
        match dual_active_set(&h_red, &f_red, &g_red, &rhs_red, opts)? {
            ActiveSetResult::Optimal { x, y, iterations } => (x, y, iterations),
            ActiveSetResult::Infeasible(rows) => {
                return Ok(QpOutcome::Infeasible(InfeasibilityCertificate {
                    inequality_rows: rows,
                    equalities_inconsistent: false,
                    detail: "dual step unbounded while adding a violated constraint".into(),
                }))
            }
        }
    };

    let x = &x0 + &basis * &w;
    let nu = equality_multipliers(qp, &x, &y);
    let kkt_residual = qp.kkt_residual(&x, &y, &nu);
    if !(kkt_residual <= opts.tolerance) {
        return Err(Error::SolverFailure(format!(
            "active-set QP finished with KKT residual {kkt_residual:.3e} above tolerance {:.1e}",
            opts.tolerance
        )));
    }
    Ok(QpOutcome::Optimal(QpSolution {
        value: qp.objective(&x),
        x,
        ineq_multipliers: y,
        eq_multipliers: nu,
        kkt_residual,
        iterations,
    }))
}

/// Particular solution and null-space basis of `E x = e`; `None` if inconsistent.
fn equality_manifold(
    e: &DMatrix<f64>,
    rhs: &DVector<f64>,
) -> Result<Option<(DVector<f64>, DMatrix<f64>)>> {
    let n = e.ncols();
    let p = e.nrows();
    // Pad to at least n rows so the thin SVD yields a full right basis.
    let (padded, padded_rhs) = if p < n {
        (
            stack_rows(e, &DMatrix::zeros(n - p, n)),
            stack_vec(rhs, &DVector::zeros(n - p)),
        )
    } else {
        (e.clone(), rhs.clone())
    };
    let svd = padded.svd(true, true);
    let smax = svd.singular_values.max();
    let threshold = smax * (p.max(n) as f64) * 1e-13;
    let x0 = if smax > 0.0 {
        svd.solve(&padded_rhs, threshold)
            .map_err(|e| Error::SolverFailure(format!("equality elimination failed: {e}")))?
    } else {
        DVector::zeros(n)
    };
    let scale = 1f64.max(rhs.amax());
    if (e * &x0 - rhs).amax() > 1e-9 * scale {
        return Ok(None);
    }
    let v_t = svd.v_t.as_ref().expect("right singular vectors requested");
    let null: Vec<_> = (0..svd.singular_values.len())
        .filter(|&i| svd.singular_values[i] <= threshold)
        .map(|i| v_t.row(i).transpose())
        .collect();
    let basis = if null.is_empty() {
        DMatrix::zeros(n, 0)
    } else {
        DMatrix::from_columns(&null)
    };
    Ok(Some((x0, basis)))
}

fn equality_multipliers(qp: &QuadraticProgram, x: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
    let (e, _) = qp.equalities();
    if e.nrows() == 0 {
        return DVector::zeros(0);
    }
    let (g, _) = qp.inequalities();
    let mut target = -(qp.hessian() * x + qp.linear());
    if g.nrows() > 0 {
        target -= g.transpose() * y;
    }
    let et = e.transpose();
    let svd = et.clone().svd(true, true);
    let threshold = svd.singular_values.max() * 1e-13 * (e.nrows().max(e.ncols()) as f64);
    svd.solve(&target, threshold)
        .unwrap_or_else(|_| DVector::zeros(e.nrows()))
}

enum ActiveSetResult {
    Optimal {
        x: DVector<f64>,
        y: DVector<f64>,
        iterations: usize,
    },
    Infeasible(Vec<usize>),
}

/// Goldfarb–Idnani on `min ½xᵀHx + fᵀx s.t. Gx ≤ h` with `H` positive definite.
fn dual_active_set(
    hess: &DMatrix<f64>,
    f: &DVector<f64>,
    g: &DMatrix<f64>,
    h: &DVector<f64>,
    opts: &QpOptions,
) -> Result<ActiveSetResult> {
    let n = f.len();
    let chol = hess
        .clone()
        .cholesky()
        .ok_or_else(|| Error::SolverFailure("hessian is not positive definite".into()))?;

    // Work with unit-norm rows written as nᵢᵀx ≥ bᵢ, nᵢ = −gᵢ/‖gᵢ‖.
    let m = g.nrows();
    let mut normals = Vec::with_capacity(m);
    let mut bounds = Vec::with_capacity(m);
    let mut norms = Vec::with_capacity(m);
    let mut usable = Vec::with_capacity(m);
    for i in 0..m {
        let row = g.row(i).transpose();
        let norm = row.norm();
        norms.push(norm);
        if norm <= 1e-14 {
            if h[i] < -opts.tolerance * 1f64.max(h.amax()) {
                return Ok(ActiveSetResult::Infeasible(vec![i]));
            }
            normals.push(DVector::zeros(n));
            bounds.push(0.0);
            usable.push(false);
        } else {
            normals.push(-row / norm);
            bounds.push(-h[i] / norm);
            usable.push(true);
        }
    }
    let slack_tol = 1e-12 * 1f64.max(bounds.iter().fold(0.0, |a: f64, b| a.max(b.abs())));
    let l = chol.l();
    let transformed: Vec<DVector<f64>> = normals
        .iter()
        .map(|v| {
            l.solve_lower_triangular(v)
                .expect("cholesky factor is nonsingular")
        })
        .collect();

    let mut x = -chol.solve(f);
    let mut active: Vec<usize> = Vec::new();
    let mut mult: Vec<f64> = Vec::new();
    let mut iterations = 0usize;

    loop {
        // Most violated constraint.
        let mut p = None;
        let mut worst = -slack_tol;
        for i in 0..m {
            if !usable[i] || active.contains(&i) {
                continue;
            }
            let s = normals[i].dot(&x) - bounds[i];
            if s < worst {
                worst = s;
                p = Some(i);
            }
        }
        let Some(p) = p else { break };
        let mut mult_p = 0.0;

        loop {
            iterations += 1;
            if iterations > opts.max_iterations {
                return Err(Error::SolverFailure(format!(
                    "active-set QP exceeded {} iterations",
                    opts.max_iterations
                )));
            }
            let np = &normals[p];
            let dp = &transformed[p];
            // Step directions from a QR factorization of the active normals in the
            // metric of H: z is the part of H⁻¹nₚ orthogonal to them, r its coefficients.
            let (w, r) = if active.is_empty() {
                (dp.clone(), DVector::zeros(0))
            } else {
                let dmat = DMatrix::from_columns(
                    &active
                        .iter()
                        .map(|&j| transformed[j].clone())
                        .collect::<Vec<_>>(),
                );
                let qr = dmat.qr();
                let q = qr.q();
                let coef = q.transpose() * dp;
                let mut w = dp - &q * &coef;
                w -= &q * (q.transpose() * &w);
                if active.len() >= n {
                    w.fill(0.0);
                }
                let r = qr.r().solve_upper_triangular(&coef).ok_or_else(|| {
                    Error::SolverFailure("active constraint normals became dependent".into())
                })?;
                (w, r)
            };
            let z = l
                .tr_solve_lower_triangular(&w)
                .expect("cholesky factor is nonsingular");
            // Partial step: largest dual step keeping active multipliers nonnegative.
            let mut t1 = f64::INFINITY;
            let mut block = None;
            for (idx, &rj) in r.iter().enumerate() {
                if rj > 1e-14 {
                    let t = mult[idx] / rj;
                    if t < t1 {
                        t1 = t;
                        block = Some(idx);
                    }
                }
            }
            // Full step: makes constraint p active.
            let curvature = w.norm_squared();
            let reference = dp.norm_squared();
            let slack = np.dot(&x) - bounds[p];
            let t2 = if curvature > 1e-12 * reference {
                -slack / curvature
            } else {
                f64::INFINITY
            };

            if t1.is_infinite() && t2.is_infinite() {
                let mut rows: Vec<usize> = active.clone();
                rows.push(p);
                rows.sort_unstable();
                return Ok(ActiveSetResult::Infeasible(rows));
            }
            if t2.is_infinite() {
                for (idx, rj) in r.iter().enumerate() {
                    mult[idx] -= t1 * rj;
                }
                mult_p += t1;
                let k = block.expect("finite partial step has a blocking index");
                active.remove(k);
                mult.remove(k);
                continue;
            }
            let t = t1.min(t2);
            x += t * &z;
            for (idx, rj) in r.iter().enumerate() {
                mult[idx] -= t * rj;
            }
            mult_p += t;
            if t2 <= t1 {
                active.push(p);
                mult.push(mult_p);
                break;
            }
            let k = block.expect("partial step has a blocking index");
            active.remove(k);
            mult.remove(k);
        }
    }

    // The incremental updates accumulate rounding; re-solve the KKT system of the final
    // working set and keep it when it stays primal and dual feasible.
    if !active.is_empty() {
        if let Some((xp, lam)) = polish(hess, &chol, f, &active, &normals, &bounds) {
            let feasible =
                (0..m).all(|i| !usable[i] || normals[i].dot(&xp) - bounds[i] >= -slack_tol);
            if feasible && lam.iter().all(|&l| l >= 0.0) {
                x = xp;
                mult = lam.iter().copied().collect();
            }
        }
    }

    let mut y = DVector::zeros(m);
    for (&j, &u) in active.iter().zip(mult.iter()) {
        y[j] = u.max(0.0) / norms[j];
    }
    Ok(ActiveSetResult::Optimal { x, y, iterations })
}

/// `min ½xᵀHx + fᵀx` with the working-set rows held as equalities, solved through the
/// Schur complement with a few rounds of iterative refinement.
fn polish(
    hess: &DMatrix<f64>,
    chol: &nalgebra::Cholesky<f64, nalgebra::Dyn>,
    f: &DVector<f64>,
    active: &[usize],
    normals: &[DVector<f64>],
    bounds: &[f64],
) -> Option<(DVector<f64>, DVector<f64>)> {
    let nmat = DMatrix::from_columns(
        &active
            .iter()
            .map(|&j| normals[j].clone())
            .collect::<Vec<_>>(),
    );
    let b = DVector::from_iterator(active.len(), active.iter().map(|&j| bounds[j]));
    let hinv_n = chol.solve(&nmat);
    let schur = (nmat.transpose() * &hinv_n).cholesky()?;
    // KKT system: Hx − Nλ = −f, Nᵀx = b.
    let solve = |r1: &DVector<f64>, r2: &DVector<f64>| {
        let hinv_r1 = chol.solve(r1);
        let lam = schur.solve(&(r2 - nmat.transpose() * &hinv_r1));
        let x = hinv_r1 + &hinv_n * &lam;
        (x, lam)
    };
    let (mut x, mut lam) = solve(&(-f), &b);
    for _ in 0..3 {
        let r1 = -f - (hess * &x - &nmat * &lam);
        let r2 = &b - nmat.transpose() * &x;
        let (dx, dl) = solve(&r1, &r2);
        x += dx;
        lam += dl;
    }
    Some((x, lam))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn scalar(h: f64, f: f64) -> QuadraticProgram {
        QuadraticProgram::new(DMatrix::from_element(1, 1, h), DVector::from_element(1, f)).unwrap()
    }

    #[test]
    fn clamped_scalar() {
        // (u − 1)² = u² − 2u + 1 → H = 2, f = −2, constant 1.
        let qp = scalar(2.0, -2.0)
            .with_inequalities(
                DMatrix::from_element(1, 1, 1.0),
                DVector::from_element(1, 0.5),
            )
            .unwrap();
        let sol = solve_qp(&qp, &QpOptions::default())
            .unwrap()
            .optimal()
            .unwrap();
        assert_relative_eq!(sol.x[0], 0.5, epsilon = 1e-12);
        assert_relative_eq!(sol.value + 1.0, 0.25, epsilon = 1e-12);
        assert!(sol.kkt_residual <= 1e-9);
        assert_relative_eq!(sol.ineq_multipliers[0], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn unconstrained_origin() {
        let sol = solve_qp(&scalar(2.0, 0.0), &QpOptions::default())
            .unwrap()
            .optimal()
            .unwrap();
        assert_eq!(sol.x[0], 0.0);
        assert_eq!(sol.value, 0.0);
    }

    #[test]
    fn symmetric_halfspace() {
        // (u1−2)² + (u2−2)², u1 + u2 ≤ 2 → (1, 1), value 2.
        let qp = QuadraticProgram::new(
            DMatrix::identity(2, 2) * 2.0,
            DVector::from_vec(vec![-4.0, -4.0]),
        )
        .unwrap()
        .with_inequalities(
            DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
            DVector::from_element(1, 2.0),
        )
        .unwrap();
        let sol = solve_qp(&qp, &QpOptions::default())
            .unwrap()
            .optimal()
            .unwrap();
        assert_relative_eq!(sol.x[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(sol.x[1], 1.0, epsilon = 1e-12);
        assert_relative_eq!(sol.value + 8.0, 2.0, epsilon = 1e-12);
        assert!(sol.kkt_residual <= 1e-9);
    }

    #[test]
    fn detects_infeasible_inequalities() {
        // u ≤ −1 and −u ≤ −1 (u ≥ 1).
        let qp = scalar(2.0, 0.0)
            .with_inequalities(
                DMatrix::from_column_slice(2, 1, &[1.0, -1.0]),
                DVector::from_vec(vec![-1.0, -1.0]),
            )
            .unwrap();
        match solve_qp(&qp, &QpOptions::default()).unwrap() {
            QpOutcome::Infeasible(cert) => assert_eq!(cert.inequality_rows, vec![0, 1]),
            other => panic!("expected infeasible, got {other:?}"),
        }
    }

    #[test]
    fn equality_elimination() {
        // min x1² + x2² + x3² s.t. x1 + x2 + x3 = 3, x3 ≤ 0.5.
        let qp = QuadraticProgram::new(DMatrix::identity(3, 3) * 2.0, DVector::zeros(3))
            .unwrap()
            .with_equalities(
                DMatrix::from_row_slice(1, 3, &[1.0, 1.0, 1.0]),
                DVector::from_element(1, 3.0),
            )
            .unwrap()
            .with_inequalities(
                DMatrix::from_row_slice(1, 3, &[0.0, 0.0, 1.0]),
                DVector::from_element(1, 0.5),
            )
            .unwrap();
        let sol = solve_qp(&qp, &QpOptions::default())
            .unwrap()
            .optimal()
            .unwrap();
        assert_relative_eq!(sol.x[0], 1.25, epsilon = 1e-12);
        assert_relative_eq!(sol.x[1], 1.25, epsilon = 1e-12);
        assert_relative_eq!(sol.x[2], 0.5, epsilon = 1e-12);
        assert!(sol.kkt_residual <= 1e-9);
    }

    #[test]
    fn inconsistent_equalities() {
        let qp = QuadraticProgram::new(DMatrix::identity(2, 2), DVector::zeros(2))
            .unwrap()
            .with_equalities(
                DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 2.0, 2.0]),
                DVector::from_vec(vec![1.0, 3.0]),
            )
            .unwrap();
        match solve_qp(&qp, &QpOptions::default()).unwrap() {
            QpOutcome::Infeasible(cert) => assert!(cert.equalities_inconsistent),
            other => panic!("expected infeasible, got {other:?}"),
        }
    }

    #[test]
    fn redundant_equalities_are_fine() {
        let qp = QuadraticProgram::new(DMatrix::identity(2, 2) * 2.0, DVector::zeros(2))
            .unwrap()
            .with_equalities(
                DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 2.0, 2.0]),
                DVector::from_vec(vec![1.0, 2.0]),
            )
            .unwrap();
        let sol = solve_qp(&qp, &QpOptions::default())
            .unwrap()
            .optimal()
            .unwrap();
        assert_relative_eq!(sol.x[0], 0.5, epsilon = 1e-12);
        assert_relative_eq!(sol.x[1], 0.5, epsilon = 1e-12);
        assert!(sol.kkt_residual <= 1e-9);
    }

    #[test]
    fn fully_determined_by_equalities() {
        let qp = QuadraticProgram::new(DMatrix::identity(1, 1), DVector::zeros(1))
            .unwrap()
            .with_equalities(DMatrix::identity(1, 1), DVector::from_element(1, 2.0))
            .unwrap()
            .with_inequalities(DMatrix::identity(1, 1), DVector::from_element(1, 1.0))
            .unwrap();
        assert!(matches!(
            solve_qp(&qp, &QpOptions::default()).unwrap(),
            QpOutcome::Infeasible(_)
        ));
    }

    #[test]
    fn rejects_bad_dimensions() {
        assert!(QuadraticProgram::new(DMatrix::identity(2, 2), DVector::zeros(3)).is_err());
        let qp = scalar(1.0, 0.0);
        assert!(qp
            .with_inequalities(DMatrix::zeros(1, 2), DVector::zeros(1))
            .is_err());
    }

    #[test]
    fn detects_infeasibility_from_nearly_dependent_row() {
        // Box rows plus a cut that pushes v₁ just past its upper bound.
        let g: Vec<f64> = vec![
            1.0,
            0.0,
            -1.0,
            -0.0,
            0.0,
            1.0,
            -0.0,
            -1.0,
            0.004486,
            -0.087578,
            -0.004486,
            0.087578,
            0.46716,
            0.001245,
            -0.46716,
            -0.001245,
            0.213173,
            -0.235263,
            -0.213173,
            0.235263,
            0.213074,
            -0.016123,
            -0.213074,
            0.016123,
            0.03356574045700002,
            -0.304610870063,
            -0.03356574045700002,
            0.304610870063,
            0.786857087767,
            0.008181649262,
            -0.786857087767,
            -0.008181649262,
            0.5710295015289999,
            -0.379572581465,
            -0.5710295015289999,
            0.379572581465,
            0.569722301028,
            -0.050354271088,
            -0.569722301028,
            0.050354271088,
            0.10751797487161992,
            -0.6203264287111995,
            -0.10751797487161992,
            0.6203264287111995,
            1.0148852807450683,
            0.023434235129621037,
            -1.0148852807450683,
            -0.023434235129621037,
            1.0173546024295548,
            -0.4877684308773905,
            -1.0173546024295548,
            0.4877684308773905,
            1.0117928643126202,
            -0.08985719324200145,
            -1.0117928643126202,
            0.08985719324200145,
            0.0010732391737665,
            -0.9999994240786721,
        ];
        let h: Vec<f64> = vec![
            2.0,
            2.0,
            2.0,
            2.0,
            -0.1471560247074628,
            2.547156024707463,
            1.3226007442073535,
            1.0773992557926464,
            1.1051000457288405,
            1.2948999542711594,
            1.2420206800803422,
            1.1579793199196577,
            -0.4525314718795992,
            2.8525314718795993,
            1.3540935432417662,
            1.0459064567582337,
            1.1013437232444958,
            1.298656276755504,
            1.2691604109281627,
            1.1308395890718372,
            -0.8251453892215734,
            3.2251453892215736,
            1.3923575557858658,
            1.007642444214134,
            1.0969095267951157,
            1.3030904732048842,
            1.302626615473922,
            1.097373384526078,
            -2.048268977729354,
        ];
        let qp = QuadraticProgram::new(
            DMatrix::from_row_slice(
                2,
                2,
                &[
                    186.07261700077046,
                    -28.901432097491487,
                    -28.901432097491487,
                    81.03202912878902,
                ],
            ),
            DVector::from_vec(vec![-10.676907829604193, -182.99142165817386]),
        )
        .unwrap()
        .with_inequalities(
            DMatrix::from_row_slice(h.len(), 2, &g),
            DVector::from_vec(h),
        )
        .unwrap();
        assert!(matches!(
            solve_qp(&qp, &QpOptions::default()).unwrap(),
            QpOutcome::Infeasible(_)
        ));
    }
}
