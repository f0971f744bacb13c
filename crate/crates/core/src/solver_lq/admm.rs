//! Operator-splitting solver for a QP with one ellipsoidal constraint.
//!
//! Constraint rows `A = [G; E; Φ]` are split off into `z ∈ C`, where `C` is a box for the
//! polyhedral rows and the shifted ellipsoid for the `Φ` block; the `z`-update is an
//! exact projection. The penalty is rebalanced from the residual ratio.

use nalgebra::{DMatrix, DVector};

use super::ellipsoid::project_onto_ellipsoid;
use super::qp::{stack_rows, stack_vec, InfeasibilityCertificate, QpOptions, QuadraticProgram};
use super::subproblem::{EllipsoidConstraint, SubproblemOutcome, SubproblemSolution};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct SplittingOptions {
    pub max_iterations: usize,
    pub tolerance: f64,
    pub rho: f64,
    pub sigma: f64,
    pub relaxation: f64,
}

impl From<&QpOptions> for SplittingOptions {
    fn from(o: &QpOptions) -> Self {
        Self {
            max_iterations: o.max_iterations.max(1) * 20,
            tolerance: o.tolerance,
            rho: 1.0,
            sigma: 1e-8,
            relaxation: 1.6,
        }
    }
}

pub(crate) fn solve_splitting(
    qp: &QuadraticProgram,
    ell: &EllipsoidConstraint,
    opts: &SplittingOptions,
) -> Result<SubproblemOutcome> {
    let n = qp.dim();
    let (g, h) = qp.inequalities();
    let (e, erhs) = qp.equalities();
    let a_mat = stack_rows(&stack_rows(g, e), &ell.map);
    let (mi, me, mq) = (g.nrows(), e.nrows(), ell.map.nrows());
    let rows = mi + me + mq;
    let upper_poly = stack_vec(h, erhs);

    let project = |w: &DVector<f64>| -> DVector<f64> {
        let mut z = w.clone();
        for i in 0..mi {
            z[i] = z[i].min(h[i]);
        }
        for i in 0..me {
            z[mi + i] = erhs[i];
        }
        let shifted = w.rows(mi + me, mq) + &ell.offset;
        let p = project_onto_ellipsoid(&ell.shape, ell.level, &shifted.into_owned()) - &ell.offset;
        z.rows_mut(mi + me, mq).copy_from(&p);
        z
    };

    let hess = qp.hessian();
    let f = qp.linear();
    let at = a_mat.transpose();
    let ata = &at * &a_mat;
    let factor = |rho: f64| {
        (hess + DMatrix::identity(n, n) * opts.sigma + &ata * rho)
            .cholesky()
            .ok_or_else(|| Error::SolverFailure("splitting system is not positive definite".into()))
    };

    let mut rho = opts.rho;
    let mut chol = factor(rho)?;
    let mut x = DVector::zeros(n);
    let mut z = project(&DVector::zeros(rows));
    let mut y = DVector::zeros(rows);
    let scale_f = 1f64.max(f.amax());
    let scale_b = 1f64.max(upper_poly.amax()).max(ell.offset.amax());

    for it in 0..opts.max_iterations {
        let rhs = opts.sigma * &x - f + &at * (rho * &z - &y);
        let x_new = chol.solve(&rhs);
        let ax = &a_mat * &x_new;
        let relaxed = opts.relaxation * &ax + (1.0 - opts.relaxation) * &z;
        let z_new = project(&(&relaxed + &y / rho));
        y += rho * (&relaxed - &z_new);
        x = x_new;
        z = z_new;

        if it % 10 == 0 || it + 1 == opts.max_iterations {
            let ax = &a_mat * &x;
            let r_prim = (&ax - &z).amax() / scale_b.max(ax.amax());
            let grad = hess * &x + f + &at * &y;
            let r_dual = grad.amax() / scale_f.max((hess * &x).amax());
            if r_prim <= opts.tolerance && r_dual <= opts.tolerance {
                // Report violations of the original constraints, not of the split copy.
                let viol = (g * &x - h)
                    .iter()
                    .fold(0.0f64, |m, v| m.max(*v))
                    .max((e * &x - erhs).amax())
                    .max((ell.value(&x) - ell.level).max(0.0));
                let mu = y.rows(mi + me, mq).norm()
                    / (2.0 * (&ell.shape * ell.image(&x)).norm()).max(1e-300);
                return Ok(SubproblemOutcome::Solved(SubproblemSolution {
                    value: qp.objective(&x),
                    x,
                    kkt_residual: r_prim.max(r_dual).max(viol / scale_b),
                    ellipsoid_multiplier: mu,
                }));
            }
            if it > 0 && it % 50 == 0 {
                let ratio = (r_prim / r_dual.max(1e-300)).sqrt();
                if !(0.2..=5.0).contains(&ratio) {
                    rho = (rho * ratio).clamp(1e-6, 1e6);
                    chol = factor(rho)?;
                }
            }
            if y.amax() > 1e12 {
                return Ok(SubproblemOutcome::Infeasible(InfeasibilityCertificate {
                    inequality_rows: vec![],
                    equalities_inconsistent: false,
                    detail: "splitting dual iterates diverge".into(),
                }));
            }
        }
    }
    Err(Error::SolverFailure(format!(
        "operator splitting did not reach tolerance {:.1e} in {} iterations",
        opts.tolerance, opts.max_iterations
    )))
}
