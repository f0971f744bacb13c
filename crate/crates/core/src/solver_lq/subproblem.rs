//! Convex subproblem of one transmission schedule: a strictly convex QP whose
//! terminal constraint is either linear or an ellipsoid `(Φv + c)ᵀP(Φv + c) ≤ a`.

use nalgebra::{DMatrix, DVector};

use super::admm::{solve_splitting, SplittingOptions};
use super::qp::{
    solve_qp, stack_rows, stack_vec, InfeasibilityCertificate, QpOptions, QpOutcome, QpSolution,
    QuadraticProgram,
};
use crate::error::{Error, Result};

/// `{v : (Φv + c)ᵀ P (Φv + c) ≤ a}`.
#[derive(Debug, Clone)]
pub struct EllipsoidConstraint {
    pub map: DMatrix<f64>,
    pub offset: DVector<f64>,
    pub shape: DMatrix<f64>,
    pub level: f64,
}

impl EllipsoidConstraint {
    pub fn image(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.map * v + &self.offset
    }

    pub fn value(&self, v: &DVector<f64>) -> f64 {
        let z = self.image(v);
        z.dot(&(&self.shape * &z))
    }
}

#[derive(Debug, Clone)]
pub struct QuadraticSubproblem {
    pub qp: QuadraticProgram,
    pub ellipsoid: Option<EllipsoidConstraint>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EllipsoidMethod {
    /// Root-finding on the multiplier of the ellipsoid constraint.
    #[default]
    Multiplier,
    /// Operator splitting with exact ellipsoid projection.
    Splitting,
}

#[derive(Debug, Clone)]
pub struct SubproblemSolution {
    pub x: DVector<f64>,
    pub value: f64,
    pub kkt_residual: f64,
    pub ellipsoid_multiplier: f64,
}

#[derive(Debug, Clone)]
pub enum SubproblemOutcome {
    Solved(SubproblemSolution),
    Infeasible(InfeasibilityCertificate),
}

impl QuadraticSubproblem {
    pub fn solve(&self, opts: &QpOptions, method: EllipsoidMethod) -> Result<SubproblemOutcome> {
        let Some(ell) = &self.ellipsoid else {
            return Ok(from_qp(solve_qp(&self.qp, opts)?, 0.0));
        };
        if ell.level <= 0.0 {
            // The set reduces to Φv + c = 0.
            let qp = self.qp.clone().add_equalities(&ell.map, &(-&ell.offset))?;
            return Ok(from_qp(solve_qp(&qp, opts)?, 0.0));
        }
        match method {
            EllipsoidMethod::Multiplier => solve_by_multiplier(&self.qp, ell, opts),
            EllipsoidMethod::Splitting => {
                solve_splitting(&self.qp, ell, &SplittingOptions::from(opts))
            }
        }
    }
}

fn from_qp(outcome: QpOutcome, mu: f64) -> SubproblemOutcome {
    match outcome {
        QpOutcome::Optimal(s) => SubproblemOutcome::Solved(SubproblemSolution {
            x: s.x,
            value: s.value,
            kkt_residual: s.kkt_residual,
            ellipsoid_multiplier: mu,
        }),
        QpOutcome::Infeasible(c) => SubproblemOutcome::Infeasible(c),
    }
}

/// For fixed `μ ≥ 0` the Lagrangian term `μ(q(v) − a)` is a quadratic, so each
/// evaluation is a polyhedral QP. `q(v(μ)) − a` is nonincreasing in `μ`; the root is
/// bracketed by growth and refined with Illinois regula falsi, always keeping the
/// feasible endpoint. When the ellipsoid is barely reachable the multiplier blows up
/// and the QPs lose conditioning; those cases go to [`solve_by_cuts`].
fn solve_by_multiplier(
    base: &QuadraticProgram,
    ell: &EllipsoidConstraint,
    opts: &QpOptions,
) -> Result<SubproblemOutcome> {
    let (s0, g0) = match solve_qp(base, opts)? {
        QpOutcome::Optimal(s) => {
            let g = ell.value(&s.x) - ell.level;
            (s, g)
        }
        QpOutcome::Infeasible(c) => return Ok(SubproblemOutcome::Infeasible(c)),
    };
    let mut incumbent = None;
    match multiplier_search(base, ell, opts, s0, g0, &mut incumbent) {
        Ok(Some(out)) => Ok(out),
        Ok(None) | Err(Error::SolverFailure(_)) => solve_by_cuts(base, ell, opts, incumbent),
        Err(e) => Err(e),
    }
}

/// `None` hands over to the cutting-plane fallback; `incumbent` collects the last
/// ellipsoid-feasible point seen.
fn multiplier_search(
    base: &QuadraticProgram,
    ell: &EllipsoidConstraint,
    opts: &QpOptions,
    s0: QpSolution,
    g0: f64,
    incumbent: &mut Option<DVector<f64>>,
) -> Result<Option<SubproblemOutcome>> {
    let phi_t_p = ell.map.transpose() * &ell.shape;
    let curvature = 2.0 * &phi_t_p * &ell.map;
    let slope = 2.0 * &phi_t_p * &ell.offset;
    let level = ell.level;
    let gap_tol = 1e-13 * level.max(1e-300);
    // Search iterates only steer μ; the returned point is certified separately.
    let search_opts = QpOptions {
        tolerance: opts.tolerance.max(1e-6),
        ..*opts
    };

    let eval = |mu: f64| -> Option<(QpSolution, f64)> {
        let qp = if mu == 0.0 {
            base.clone()
        } else {
            base.with_objective(
                base.hessian() + mu * &curvature,
                base.linear() + mu * &slope,
            )
        };
        let s = solve_qp(&qp, &search_opts).ok()?.optimal()?;
        let gap = ell.value(&s.x) - level;
        Some((s, gap))
    };
    let finish = |s: QpSolution, mu: f64| -> Option<SubproblemOutcome> {
        let x = s.x;
        let gap = ell.value(&x) - level;
        let extra = mu * (&curvature * &x + &slope);
        let mut kkt =
            base.kkt_residual_with(&x, &s.ineq_multipliers, &s.eq_multipliers, Some(&extra));
        kkt = kkt
            .max(gap.max(0.0) / level.max(1.0))
            .max((mu * gap).abs() / level.max(1.0));
        (kkt <= opts.tolerance).then(|| {
            SubproblemOutcome::Solved(SubproblemSolution {
                value: base.objective(&x),
                x,
                kkt_residual: kkt,
                ellipsoid_multiplier: mu,
            })
        })
    };

    if g0 <= gap_tol {
        return Ok(finish(s0, 0.0));
    }

    let scale = base.hessian().amax() / curvature.amax().max(1e-300);
    let mu_cap = scale.max(1.0) * 1e8;
    let mut mu_lo = 0.0;
    let mut g_lo = g0;
    let mut mu_hi = scale.max(1e-12);
    let (mut s_hi, mut g_hi) = loop {
        let Some((s, g)) = eval(mu_hi) else {
            return Ok(None);
        };
        if g <= 0.0 {
            break (s, g);
        }
        mu_lo = mu_hi;
        g_lo = g;
        mu_hi *= 10.0;
        if mu_hi > mu_cap {
            return Ok(None);
        }
    };
    *incumbent = Some(s_hi.x.clone());

    let mut side = 0i8;
    for _ in 0..300 {
        if -g_hi <= gap_tol || (mu_hi - mu_lo) <= 1e-15 * mu_hi {
            break;
        }
        let mut mu = (mu_lo * g_hi - mu_hi * g_lo) / (g_hi - g_lo);
        if !(mu > mu_lo && mu < mu_hi) {
            mu = 0.5 * (mu_lo + mu_hi);
        }
        let Some((s, g)) = eval(mu) else {
            return Ok(None);
        };
        if g > 0.0 {
            mu_lo = mu;
            g_lo = g;
            if side == 1 {
                g_hi *= 0.5;
            }
            side = 1;
        } else {
            mu_hi = mu;
            g_hi = g;
            s_hi = s;
            *incumbent = Some(s_hi.x.clone());
            if side == -1 {
                g_lo *= 0.5;
            }
            side = -1;
        }
    }
    Ok(finish(s_hi, mu_hi))
}

const MAX_CUTS: usize = 500;

/// Outer approximation of the ellipsoid by tangent planes at radial boundary points.
/// Every relaxation keeps the original Hessian. An infeasible relaxation proves the
/// subproblem infeasible. A relaxation optimum inside the ellipsoid is optimal;
/// otherwise it is a lower bound, and pulling it towards a feasible point gives an
/// upper bound, so the returned residual is the relative optimality gap.
fn solve_by_cuts(
    base: &QuadraticProgram,
    ell: &EllipsoidConstraint,
    opts: &QpOptions,
    incumbent: Option<DVector<f64>>,
) -> Result<SubproblemOutcome> {
    let level = ell.level;
    let n = base.dim();
    let (g0, h0) = base.inequalities();
    let base_rows = g0.nrows();
    let mut cut_rows: Vec<DVector<f64>> = Vec::new();
    let mut cut_rhs: Vec<f64> = Vec::new();
    let mut best = incumbent.map(|v| {
        let j = base.objective(&v);
        (v, j)
    });
    let gradient = |x: &DVector<f64>| 2.0 * ell.map.transpose() * (&ell.shape * ell.image(x));
    let multiplier_estimate = |x: &DVector<f64>, extra: &DVector<f64>| {
        let g = gradient(x);
        (extra.dot(&g) / g.norm_squared().max(1e-300)).max(0.0)
    };

    for _ in 0..MAX_CUTS {
        let qp = if cut_rows.is_empty() {
            base.clone()
        } else {
            let cuts = DMatrix::from_fn(cut_rows.len(), n, |i, j| cut_rows[i][j]);
            base.clone().with_inequalities(
                stack_rows(g0, &cuts),
                stack_vec(h0, &DVector::from_vec(cut_rhs.clone())),
            )?
        };
        let s = match solve_qp(&qp, opts)? {
            QpOutcome::Optimal(s) => s,
            QpOutcome::Infeasible(c) => {
                return Ok(SubproblemOutcome::Infeasible(InfeasibilityCertificate {
                    inequality_rows: c
                        .inequality_rows
                        .into_iter()
                        .filter(|&i| i < base_rows)
                        .collect(),
                    equalities_inconsistent: c.equalities_inconsistent,
                    detail: format!(
                        "ellipsoid level {level:.3e} unreachable within the polyhedron"
                    ),
                }))
            }
        };
        let lower = s.value;
        let mut extra = DVector::zeros(n);
        for (j, row) in cut_rows.iter().enumerate() {
            extra += s.ineq_multipliers[base_rows + j] * row;
        }

        let z = ell.image(&s.x);
        let q = z.dot(&(&ell.shape * &z));
        let gap = q - level;
        if gap <= 0.5 * opts.tolerance * level.max(1.0) {
            let y = s.ineq_multipliers.rows(0, base_rows).into_owned();
            let kkt = base
                .kkt_residual_with(&s.x, &y, &s.eq_multipliers, Some(&extra))
                .max(gap.max(0.0) / level.max(1.0));
            if kkt <= opts.tolerance {
                let mu = multiplier_estimate(&s.x, &extra);
                return Ok(SubproblemOutcome::Solved(SubproblemSolution {
                    value: base.objective(&s.x),
                    x: s.x,
                    kkt_residual: kkt,
                    ellipsoid_multiplier: mu,
                }));
            }
        }

        if let Some((v_f, j_f)) = &best {
            let d = &s.x - v_f;
            let zf = ell.image(v_f);
            let zd = &ell.map * &d;
            let pzd = &ell.shape * &zd;
            let (qa, qb, qc) = (
                zd.dot(&pzd),
                zf.dot(&pzd),
                zf.dot(&(&ell.shape * &zf)) - level,
            );
            let theta = if qa <= 0.0 {
                1.0
            } else {
                ((-qb + (qb * qb - qa * qc).max(0.0).sqrt()) / qa).clamp(0.0, 1.0)
            };
            let v = v_f + theta * d;
            let j = base.objective(&v);
            if j < *j_f && ell.value(&v) <= level {
                best = Some((v, j));
            }
        }
        if let Some((v, j)) = &best {
            let rel_gap = (j - lower).max(0.0) / 1f64.max(lower.abs());
            if rel_gap <= opts.tolerance {
                return Ok(SubproblemOutcome::Solved(SubproblemSolution {
                    x: v.clone(),
                    value: *j,
                    kkt_residual: rel_gap,
                    ellipsoid_multiplier: multiplier_estimate(v, &extra),
                }));
            }
        }

        let zb = z * (level / q).sqrt();
        let normal = &ell.shape * &zb;
        let row = ell.map.transpose() * &normal;
        let norm = row.norm();
        if !(norm > 1e-300) {
            break;
        }
        cut_rhs.push(normal.dot(&(&zb - &ell.offset)) / norm);
        cut_rows.push(row / norm);
    }
    Err(Error::SolverFailure(format!(
        "tangent-cut refinement of the ellipsoid constraint did not converge in {MAX_CUTS} cuts"
    )))
}
