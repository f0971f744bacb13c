//! Terminal ingredients from the M-step lifted problem: one transmission at the start
//! of a cycle, hold for the remaining `M − 1` steps.

use nalgebra::DMatrix;

use super::NcsPlant;
use crate::error::{Error, Result};
use crate::linalg::{is_positive_definite, max_eigenvalue, powers, symmetrize};

/// `x(M) = A_M x + B_M v` with cycle cost `xᵀQ̄x + 2xᵀN̄v + vᵀR̄v`.
#[derive(Debug, Clone, PartialEq)]
pub struct LiftedSystem {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub n: DMatrix<f64>,
}

/// `G_k = Σ_{i<k} AⁱB` for `k = 0..=M`.
pub(crate) fn held_input_maps(a: &DMatrix<f64>, b: &DMatrix<f64>, m: usize) -> Vec<DMatrix<f64>> {
    let mut out = Vec::with_capacity(m + 1);
    out.push(DMatrix::zeros(b.nrows(), b.ncols()));
    let mut term = b.clone();
    for k in 1..=m {
        let next = &out[k - 1] + &term;
        out.push(next);
        term = a * term;
    }
    out
}

pub fn lifted_system(plant: &NcsPlant, m: usize) -> Result<LiftedSystem> {
    if m == 0 {
        return Err(Error::InvalidArgument(
            "cycle length must be at least 1".into(),
        ));
    }
    let (a, b, q, r) = (plant.a(), plant.b(), plant.q(), plant.r());
    let pw = powers(a, m);
    let g = held_input_maps(a, b, m);
    let mut qbar = DMatrix::zeros(a.nrows(), a.ncols());
    let mut nbar = DMatrix::zeros(a.nrows(), b.ncols());
    let mut rbar = r * m as f64;
    for k in 0..m {
        qbar += pw[k].transpose() * q * &pw[k];
        nbar += pw[k].transpose() * q * &g[k];
        rbar += g[k].transpose() * q * &g[k];
    }
    Ok(LiftedSystem {
        a: pw[m].clone(),
        b: g[m].clone(),
        q: symmetrize(&qbar),
        r: symmetrize(&rbar),
        n: nbar,
    })
}

#[derive(Debug, Clone)]
pub struct RiccatiSolution {
    pub p: DMatrix<f64>,
    pub k: DMatrix<f64>,
    pub residual: f64,
    pub iterations: usize,
}

/// Relative residual of `P = AᵀPA + Q − (AᵀPB + N)(R + BᵀPB)⁻¹(BᵀPA + Nᵀ)`.
pub fn dare_residual(sys: &LiftedSystem, p: &DMatrix<f64>) -> f64 {
    let (a, b) = (&sys.a, &sys.b);
    let s = &sys.r + b.transpose() * p * b;
    let cross = a.transpose() * p * b + &sys.n;
    let Some(sol) = s.clone().lu().solve(&cross.transpose()) else {
        return f64::INFINITY;
    };
    let rhs = a.transpose() * p * a + &sys.q - &cross * sol;
    (rhs - p).amax() / p.amax().max(1.0)
}

fn optimal_gain(sys: &LiftedSystem, p: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let s = &sys.r + sys.b.transpose() * p * &sys.b;
    let rhs = sys.b.transpose() * p * &sys.a + sys.n.transpose();
    s.cholesky()
        .map(|c| -c.solve(&rhs))
        .ok_or_else(|| Error::SolverFailure("R + BᵀPB is not positive definite".into()))
}

/// Stabilizing solution of the lifted DARE with cross term.
///
/// The cross term is removed by completing the square (`Ã = A − BR⁻¹Nᵀ`,
/// `Q̃ = Q − NR⁻¹Nᵀ`); the resulting standard equation is solved by the structured
/// doubling algorithm and, if needed, polished with Riccati fixed-point sweeps until
/// the residual certificate is met.
pub fn dare_solve(sys: &LiftedSystem, tol: f64) -> Result<RiccatiSolution> {
    let n = sys.a.nrows();
    if sys.a.ncols() != n || sys.b.nrows() != n || sys.q.shape() != (n, n) {
        return Err(Error::Dimension(
            "lifted system matrices are inconsistent".into(),
        ));
    }
    if !is_positive_definite(&sys.r) {
        return Err(Error::InvalidArgument(
            "lifted input weight is not positive definite".into(),
        ));
    }
    let r_chol = sys.r.clone().cholesky().expect("checked positive definite");
    let rinv_nt = r_chol.solve(&sys.n.transpose());
    let a_t = &sys.a - &sys.b * &rinv_nt;
    let q_t = symmetrize(&(&sys.q - &sys.n * &rinv_nt));
    let g0 = symmetrize(&(&sys.b * r_chol.solve(&sys.b.transpose())));

    let eye = DMatrix::<f64>::identity(n, n);
    let (mut ak, mut gk, mut hk) = (a_t, g0, q_t);
    let mut iterations = 0;
    while iterations < 64 {
        iterations += 1;
        let w = &eye + &gk * &hk;
        let lu = w.lu();
        let (Some(w_a), Some(w_g)) = (lu.solve(&ak), lu.solve(&gk)) else {
            return Err(Error::RiccatiNonConvergence {
                iterations,
                residual: f64::INFINITY,
            });
        };
        let a_next = &ak * &w_a;
        let g_next = symmetrize(&(&gk + &ak * w_g * ak.transpose()));
        let h_next = symmetrize(&(&hk + ak.transpose() * &hk * &w_a));
        let change = (&h_next - &hk).amax();
        ak = a_next;
        gk = g_next;
        hk = h_next;
        if !hk.amax().is_finite() {
            break;
        }
        if change <= 1e-15 * hk.amax().max(1.0) {
            break;
        }
    }

    let mut p = hk;
    let mut residual = dare_residual(sys, &p);
    let mut polish = 0;
    while !(residual <= tol) && polish < 10_000 && p.amax().is_finite() {
        let s = &sys.r + sys.b.transpose() * &p * &sys.b;
        let cross = sys.a.transpose() * &p * &sys.b + &sys.n;
        let Some(sol) = s.lu().solve(&cross.transpose()) else {
            break;
        };
        p = symmetrize(&(sys.a.transpose() * &p * &sys.a + &sys.q - &cross * sol));
        residual = dare_residual(sys, &p);
        polish += 1;
    }
    if !(residual <= tol) || !is_positive_definite(&p) {
        return Err(Error::RiccatiNonConvergence {
            iterations: iterations + polish,
            residual,
        });
    }
    let k = optimal_gain(sys, &p)?;
    Ok(RiccatiSolution {
        p,
        k,
        residual,
        iterations: iterations + polish,
    })
}

/// Largest `a` for which the ellipsoid `{x : xᵀPx ≤ a}` satisfies the input box under `K`
/// and the state box at every in-cycle state `Φ_k x`, `Φ_k = A^k + G_k K`, `k = 0..=M`.
/// `k = 0` keeps the terminal region inside the state set.
pub fn terminal_level(
    plant: &NcsPlant,
    p: &DMatrix<f64>,
    k: &DMatrix<f64>,
    m: usize,
) -> Result<f64> {
    let n = plant.plant_dim();
    if p.shape() != (n, n) || k.shape() != (plant.input_dim(), n) {
        return Err(Error::Dimension(
            "terminal matrices do not match the plant".into(),
        ));
    }
    let p_chol = p.clone().cholesky().ok_or_else(|| {
        Error::InvalidArgument("terminal cost matrix is not positive definite".into())
    })?;
    let p_inv = p_chol.inverse();

    let mut level = f64::INFINITY;
    let mut bound_rows =
        |phi: &DMatrix<f64>, lower: &nalgebra::DVector<f64>, upper: &nalgebra::DVector<f64>| {
            let spread = phi * &p_inv * phi.transpose();
            for j in 0..phi.nrows() {
                let s = spread[(j, j)];
                if s <= 1e-300 {
                    continue;
                }
                let d = upper[j].min(-lower[j]);
                level = level.min(d * d / s);
            }
        };
    bound_rows(k, plant.input_box().lower(), plant.input_box().upper());
    let pw = powers(plant.a(), m);
    let g = held_input_maps(plant.a(), plant.b(), m);
    for step in 0..=m {
        let phi = &pw[step] + &g[step] * k;
        bound_rows(&phi, plant.state_box().lower(), plant.state_box().upper());
    }

    // Return to the ellipsoid after one cycle: closed-loop lifted map must not expand P.
    let closed = &pw[m] + &g[m] * k;
    let l = p_chol.l();
    let l_inv = l
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::SolverFailure("terminal cost factor is singular".into()))?;
    let contraction =
        max_eigenvalue(&(&l_inv * closed.transpose() * p * &closed * l_inv.transpose()));
    if contraction > 1.0 + 1e-9 {
        return Err(Error::CertificateFailure {
            step: None,
            reason: format!(
                "lifted closed loop expands the terminal ellipsoid (factor {contraction:.6})"
            ),
        });
    }
    Ok(if level.is_finite() {
        level.max(0.0)
    } else {
        f64::MAX
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::BoxSet;
    use approx::assert_relative_eq;
    use nalgebra::DVector;

    fn scalar_plant(a: f64, b: f64) -> NcsPlant {
        NcsPlant::new(
            DMatrix::from_element(1, 1, a),
            DMatrix::from_element(1, 1, b),
            BoxSet::new(
                DVector::from_element(1, -10.0),
                DVector::from_element(1, 10.0),
            )
            .unwrap(),
            BoxSet::new(
                DVector::from_element(1, -2.0),
                DVector::from_element(1, 2.0),
            )
            .unwrap(),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
        )
        .unwrap()
    }

    #[test]
    fn scalar_two_step_lift() {
        let sys = lifted_system(&scalar_plant(1.0, 1.0), 2).unwrap();
        assert_eq!(sys.a[(0, 0)], 1.0);
        assert_eq!(sys.b[(0, 0)], 2.0);
        assert_eq!(sys.q[(0, 0)], 2.0);
        assert_eq!(sys.n[(0, 0)], 1.0);
        assert_eq!(sys.r[(0, 0)], 3.0);
    }

    #[test]
    fn unit_lift_is_identity() {
        let plant = scalar_plant(0.7, 0.3);
        let sys = lifted_system(&plant, 1).unwrap();
        assert_eq!(&sys.a, plant.a());
        assert_eq!(&sys.b, plant.b());
        assert_eq!(&sys.q, plant.q());
        assert_eq!(&sys.r, plant.r());
        assert_eq!(sys.n[(0, 0)], 0.0);
    }

    #[test]
    fn lifted_cost_matches_trajectory_sum() {
        // Random 3-state plant; cycle cost summed along the held-input trajectory.
        let a = DMatrix::from_row_slice(3, 3, &[0.9, 0.2, -0.1, 0.0, 1.1, 0.3, 0.05, -0.2, 0.8]);
        let b = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.5, -0.3, 0.0, 0.7]);
        let q = DMatrix::from_row_slice(3, 3, &[2.0, 0.1, 0.0, 0.1, 1.0, 0.2, 0.0, 0.2, 3.0]);
        let r = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 0.5]);
        let plant = NcsPlant::new(
            a.clone(),
            b.clone(),
            BoxSet::new(
                DVector::from_element(3, -5.0),
                DVector::from_element(3, 5.0),
            )
            .unwrap(),
            BoxSet::new(
                DVector::from_element(2, -5.0),
                DVector::from_element(2, 5.0),
            )
            .unwrap(),
            q.clone(),
            r.clone(),
        )
        .unwrap();
        let m = 4;
        let sys = lifted_system(&plant, m).unwrap();
        let x0 = DVector::from_vec(vec![0.3, -1.2, 0.7]);
        let v = DVector::from_vec(vec![0.4, -0.9]);
        let mut x = x0.clone();
        let mut total = 0.0;
        for _ in 0..m {
            total += x.dot(&(&q * &x)) + v.dot(&(&r * &v));
            x = &a * &x + &b * &v;
        }
        let lifted = x0.dot(&(&sys.q * &x0)) + 2.0 * x0.dot(&(&sys.n * &v)) + v.dot(&(&sys.r * &v));
        assert_relative_eq!(total, lifted, max_relative = 1e-12);
        assert_relative_eq!(x, &sys.a * &x0 + &sys.b * &v, epsilon = 1e-12);
    }

    #[test]
    fn scalar_dare_closed_form() {
        let sys = LiftedSystem {
            a: DMatrix::from_element(1, 1, 0.5),
            b: DMatrix::from_element(1, 1, 1.0),
            q: DMatrix::from_element(1, 1, 1.0),
            r: DMatrix::from_element(1, 1, 1.0),
            n: DMatrix::zeros(1, 1),
        };
        let sol = dare_solve(&sys, 1e-12).unwrap();
        let expected = (0.25 + 4.0625f64.sqrt()) / 2.0;
        assert_relative_eq!(sol.p[(0, 0)], expected, epsilon = 1e-12);
        assert_relative_eq!(sol.p[(0, 0)], 1.132782, epsilon = 1e-6);
        assert!(sol.residual <= 1e-12);
    }

    #[test]
    fn deadbeat_lift() {
        let sys = LiftedSystem {
            a: DMatrix::zeros(2, 2),
            b: DMatrix::from_row_slice(2, 1, &[1.0, 0.0]),
            q: DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 3.0])),
            r: DMatrix::identity(1, 1),
            n: DMatrix::zeros(2, 1),
        };
        let sol = dare_solve(&sys, 1e-12).unwrap();
        assert_relative_eq!(sol.p, sys.q, epsilon = 1e-12);
        assert!(sol.k.amax() <= 1e-12);
    }

    #[test]
    fn cross_term_dare_decrease_identity() {
        let plant = scalar_plant(1.2, 0.5);
        let sys = lifted_system(&plant, 3).unwrap();
        let sol = dare_solve(&sys, 1e-10).unwrap();
        let closed = &sys.a + &sys.b * &sol.k;
        let lhs = closed.transpose() * &sol.p * &closed - &sol.p;
        let stage = &sys.q
            + sol.k.transpose() * sys.n.transpose()
            + &sys.n * &sol.k
            + sol.k.transpose() * &sys.r * &sol.k;
        assert!((lhs + stage).amax() <= 1e-8);
    }

    #[test]
    fn unstable_uncontrollable_mode_fails() {
        let sys = LiftedSystem {
            a: DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 0.5])),
            b: DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
            q: DMatrix::identity(2, 2),
            r: DMatrix::identity(1, 1),
            n: DMatrix::zeros(2, 1),
        };
        assert!(matches!(
            dare_solve(&sys, 1e-9),
            Err(Error::RiccatiNonConvergence { .. })
        ));
    }

    #[test]
    fn level_from_input_rows() {
        // A = 0 so the state rows bind only through Φ₀ = I with a wide box.
        let plant = NcsPlant::new(
            DMatrix::zeros(2, 2),
            DMatrix::zeros(2, 1),
            BoxSet::new(
                DVector::from_element(2, -10.0),
                DVector::from_element(2, 10.0),
            )
            .unwrap(),
            BoxSet::new(
                DVector::from_element(1, -2.0),
                DVector::from_element(1, 2.0),
            )
            .unwrap(),
            DMatrix::identity(2, 2),
            DMatrix::identity(1, 1),
        )
        .unwrap();
        let k = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let a = terminal_level(&plant, &DMatrix::identity(2, 2), &k, 1).unwrap();
        assert_relative_eq!(a, 4.0, epsilon = 1e-12);
    }

    #[test]
    fn level_from_state_rows() {
        let plant = NcsPlant::new(
            DMatrix::zeros(1, 1),
            DMatrix::zeros(1, 1),
            BoxSet::new(
                DVector::from_element(1, -1.2),
                DVector::from_element(1, 1.2),
            )
            .unwrap(),
            BoxSet::new(
                DVector::from_element(1, -100.0),
                DVector::from_element(1, 100.0),
            )
            .unwrap(),
            DMatrix::identity(1, 1),
            DMatrix::identity(1, 1),
        )
        .unwrap();
        let a = terminal_level(&plant, &DMatrix::identity(1, 1), &DMatrix::zeros(1, 1), 1).unwrap();
        assert_relative_eq!(a, 1.44, epsilon = 1e-12);
    }
}
