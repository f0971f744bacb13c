//! Linear plant closed over a token-bucket network.
//!
//! Overall state `x = [x_p, u_s, β]`, input `u = [u_c, γ]`. The plant applies the
//! transmitted input when `γ = 1` and holds the last applied one otherwise; every
//! transmission spends `c` tokens, `g` are generated per step, and the bucket saturates
//! at `b`. The bucket level is an exact integer.

mod synthesis;

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

pub use synthesis::{
    dare_residual, dare_solve, lifted_system, terminal_level, LiftedSystem, RiccatiSolution,
};

use crate::error::{ConstraintViolation, Error, Result};
use crate::linalg::{controllability_rank, is_positive_definite, min_eigenvalue};
use crate::model::{
    BoxSet, DissipativityCertificate, Input, ProblemModel, QuadraticKInf, State, StateFn,
    TargetSet, TerminalIngredients,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct TokenBucketParams {
    generation: i64,
    cost: i64,
    size: i64,
}

impl TokenBucketParams {
    pub fn new(generation: i64, cost: i64, size: i64) -> Result<Self> {
        if generation < 1 || cost < generation || size < cost {
            return Err(Error::InvalidArgument(format!(
                "token bucket needs 1 ≤ g ≤ c ≤ b, got g={generation}, c={cost}, b={size}"
            )));
        }
        Ok(Self {
            generation,
            cost,
            size,
        })
    }

    pub fn generation(&self) -> i64 {
        self.generation
    }

    pub fn cost(&self) -> i64 {
        self.cost
    }

    pub fn size(&self) -> i64 {
        self.size
    }

    /// `c − g`: the level from which a transmission can be followed by `M − 1` holds
    /// and still allow the next one.
    pub fn threshold(&self) -> i64 {
        self.cost - self.generation
    }
}

/// Next bucket level, or `None` if the transmission would drain the bucket.
pub fn bucket_step(p: &TokenBucketParams, level: i64, transmit: bool) -> Option<i64> {
    let next = level + p.generation - if transmit { p.cost } else { 0 };
    (next >= 0).then(|| next.min(p.size))
}

/// `⌈c/g⌉`.
pub fn min_cycle_length(p: &TokenBucketParams) -> usize {
    ((p.cost + p.generation - 1) / p.generation) as usize
}

#[derive(Debug, Clone, PartialEq)]
pub struct NcsPlant {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    state_box: BoxSet,
    input_box: BoxSet,
    q: DMatrix<f64>,
    r: DMatrix<f64>,
}

impl NcsPlant {
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        state_box: BoxSet,
        input_box: BoxSet,
        q: DMatrix<f64>,
        r: DMatrix<f64>,
    ) -> Result<Self> {
        let n = a.nrows();
        let m = b.ncols();
        let dims_ok = a.ncols() == n
            && b.nrows() == n
            && q.shape() == (n, n)
            && r.shape() == (m, m)
            && state_box.dim() == n
            && input_box.dim() == m;
        if !dims_ok || n == 0 || m == 0 {
            return Err(Error::Dimension(format!(
                "plant blocks A {:?}, B {:?}, Q {:?}, R {:?}, boxes {}/{} are inconsistent",
                a.shape(),
                b.shape(),
                q.shape(),
                r.shape(),
                state_box.dim(),
                input_box.dim()
            )));
        }
        if !is_positive_definite(&q) || !is_positive_definite(&r) {
            return Err(Error::InvalidArgument(
                "Q and R must be symmetric positive definite".into(),
            ));
        }
        if !state_box.contains(&DVector::zeros(n), 0.0)
            || !input_box.contains(&DVector::zeros(m), 0.0)
        {
            return Err(Error::InvalidArgument(
                "state and input boxes must contain the origin".into(),
            ));
        }
        Ok(Self {
            a,
            b,
            state_box,
            input_box,
            q,
            r,
        })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }

    pub fn state_box(&self) -> &BoxSet {
        &self.state_box
    }

    pub fn input_box(&self) -> &BoxSet {
        &self.input_box
    }

    pub fn plant_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    /// Checks that `(A^M, Σ_{i<M} AⁱB)` is controllable.
    pub fn check_lifted_controllable(&self, m: usize) -> Result<()> {
        let lifted = lifted_system(self, m)?;
        let rank = controllability_rank(&lifted.a, &lifted.b);
        if rank < self.plant_dim() {
            return Err(Error::NotControllable {
                rank,
                dim: self.plant_dim(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NcsState {
    pub xp: DVector<f64>,
    pub us: DVector<f64>,
    pub beta: i64,
}

impl NcsState {
    pub fn new(xp: DVector<f64>, us: DVector<f64>, beta: i64) -> Self {
        Self { xp, us, beta }
    }

    pub fn to_vector(&self) -> State {
        State::from_iterator(
            self.xp.len() + self.us.len() + 1,
            self.xp
                .iter()
                .chain(self.us.iter())
                .copied()
                .chain(std::iter::once(self.beta as f64)),
        )
    }

    /// Splits a flat state; the bucket component must be an exact integer.
    pub fn from_vector(plant: &NcsPlant, x: &State) -> Result<Self> {
        let (n, m) = (plant.plant_dim(), plant.input_dim());
        if x.len() != n + m + 1 {
            return Err(Error::Dimension(format!(
                "NCS state has length {}, expected {}",
                x.len(),
                n + m + 1
            )));
        }
        let beta = x[n + m];
        if beta.fract() != 0.0 || !beta.is_finite() {
            return Err(Error::Domain(ConstraintViolation::new(
                "bucket level is an integer",
                beta.fract().abs(),
            )));
        }
        Ok(Self {
            xp: x.rows(0, n).into_owned(),
            us: x.rows(n, m).into_owned(),
            beta: beta as i64,
        })
    }
}

pub fn applied_input(uc: &DVector<f64>, us: &DVector<f64>, transmit: bool) -> DVector<f64> {
    if transmit {
        uc.clone()
    } else {
        us.clone()
    }
}

pub fn overall_step(
    plant: &NcsPlant,
    p: &TokenBucketParams,
    x: &NcsState,
    uc: &DVector<f64>,
    transmit: bool,
) -> Result<NcsState> {
    let beta = bucket_step(p, x.beta, transmit).ok_or_else(|| {
        Error::Domain(ConstraintViolation::new(
            "bucket level stays nonnegative",
            (p.cost - x.beta - p.generation) as f64,
        ))
    })?;
    let up = applied_input(uc, &x.us, transmit);
    Ok(NcsState {
        xp: &plant.a * &x.xp + &plant.b * &up,
        us: up,
        beta,
    })
}

pub fn ncs_stage_cost(plant: &NcsPlant, x: &NcsState, uc: &DVector<f64>, transmit: bool) -> f64 {
    let up = applied_input(uc, &x.us, transmit);
    x.xp.dot(&(&plant.q * &x.xp)) + up.dot(&(&plant.r * &up))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NcsOptions {
    /// Storage matrix `S = storage_scale · R`; needs `0 < storage_scale < 1`.
    pub storage_scale: f64,
    /// Multiplies the synthesized terminal level.
    pub level_scale: f64,
    /// Multiplies the terminal cost.
    pub cost_scale: f64,
    pub riccati_tolerance: f64,
}

impl Default for NcsOptions {
    fn default() -> Self {
        Self {
            storage_scale: 0.5,
            level_scale: 1.0,
            cost_scale: 1.0,
            riccati_tolerance: 1e-10,
        }
    }
}

/// Terminal design: `V_f = x_pᵀPx_p`, gain `K` and ellipsoid level `a`.
#[derive(Debug, Clone, PartialEq)]
pub struct TerminalDesign {
    pub p: DMatrix<f64>,
    pub k: DMatrix<f64>,
    pub level: f64,
    pub cycle_length: usize,
    pub riccati_residual: f64,
}

#[derive(Debug, Clone)]
pub struct NcsSystem {
    plant: NcsPlant,
    bucket: TokenBucketParams,
    storage: DMatrix<f64>,
    design: TerminalDesign,
    cost_scale: f64,
    target: BoxSet,
}

impl NcsSystem {
    pub fn new(plant: NcsPlant, bucket: TokenBucketParams, opts: NcsOptions) -> Result<Self> {
        if !(opts.storage_scale > 0.0 && opts.storage_scale < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "storage scale must lie in (0, 1), got {}",
                opts.storage_scale
            )));
        }
        let m = min_cycle_length(&bucket);
        plant.check_lifted_controllable(m)?;
        let lifted = lifted_system(&plant, m)?;
        let riccati = dare_solve(&lifted, opts.riccati_tolerance)?;
        let level = terminal_level(&plant, &riccati.p, &riccati.k, m)? * opts.level_scale;
        let (n, mi) = (plant.plant_dim(), plant.input_dim());
        let mut upper = DVector::zeros(n + mi + 1);
        upper[n + mi] = bucket.size as f64;
        let target = BoxSet::new(DVector::zeros(n + mi + 1), upper)?;
        Ok(Self {
            storage: plant.r() * opts.storage_scale,
            design: TerminalDesign {
                p: riccati.p,
                k: riccati.k,
                level,
                cycle_length: m,
                riccati_residual: riccati.residual,
            },
            cost_scale: opts.cost_scale,
            plant,
            bucket,
            target,
        })
    }

    pub fn plant(&self) -> &NcsPlant {
        &self.plant
    }

    pub fn bucket(&self) -> &TokenBucketParams {
        &self.bucket
    }

    pub fn design(&self) -> &TerminalDesign {
        &self.design
    }

    pub fn storage_matrix(&self) -> &DMatrix<f64> {
        &self.storage
    }

    pub fn cycle_length(&self) -> usize {
        self.design.cycle_length
    }

    /// Terminal cost matrix actually used, including any configured scaling.
    pub fn terminal_cost_matrix(&self) -> DMatrix<f64> {
        &self.design.p * self.cost_scale
    }

    pub fn split(&self, x: &State) -> Result<NcsState> {
        NcsState::from_vector(&self.plant, x)
    }

    /// Decodes `[u_c, γ]`; `γ` must be exactly 0 or 1.
    pub fn split_input(&self, u: &Input) -> Result<(DVector<f64>, bool)> {
        let m = self.plant.input_dim();
        if u.len() != m + 1 {
            return Err(Error::Dimension(format!(
                "NCS input has length {}, expected {}",
                u.len(),
                m + 1
            )));
        }
        let g = u[m];
        if g != 0.0 && g != 1.0 {
            return Err(Error::Domain(ConstraintViolation::new(
                "transmission decision is binary",
                g.abs().min((g - 1.0).abs()),
            )));
        }
        Ok((u.rows(0, m).into_owned(), g == 1.0))
    }

    pub fn join_input(uc: &DVector<f64>, transmit: bool) -> Input {
        Input::from_iterator(
            uc.len() + 1,
            uc.iter()
                .copied()
                .chain(std::iter::once(if transmit { 1.0 } else { 0.0 })),
        )
    }

    /// Excursion outside `X_f` (0 inside). The bucket branch is chosen by integer
    /// comparison with `c − g`.
    pub fn terminal_violation(&self, x: &State) -> f64 {
        let Ok(s) = self.split(x) else {
            return f64::INFINITY;
        };
        if s.beta < 0 || s.beta > self.bucket.size {
            return (s.beta - s.beta.clamp(0, self.bucket.size)).abs() as f64;
        }
        if s.beta < self.bucket.threshold() {
            s.xp.amax().max(s.us.amax())
        } else {
            let q = s.xp.dot(&(&self.design.p * &s.xp));
            (q - self.design.level)
                .max(0.0)
                .max(self.plant.input_box.excess(&s.us))
                .max(self.plant.state_box.excess(&s.xp))
        }
    }

    pub fn storage_value(&self, x: &State) -> f64 {
        let m = self.plant.input_dim();
        let n = self.plant.plant_dim();
        let us = x.rows(n, m);
        us.dot(&(&self.storage * us))
    }

    /// `c_ρ = λ_min(diag(Q, S))`.
    pub fn lower_bound_coefficient(&self) -> f64 {
        min_eigenvalue(&self.plant.q).min(min_eigenvalue(&self.storage))
    }

    pub fn certificate(&self) -> DissipativityCertificate {
        let this = self.storage_fn();
        DissipativityCertificate::new(
            move |x| this(x),
            QuadraticKInf::new(self.lower_bound_coefficient())
                .expect("Q and S are positive definite"),
        )
    }

    fn storage_fn(&self) -> StateFn<f64> {
        let (n, m) = (self.plant.plant_dim(), self.plant.input_dim());
        let s = self.storage.clone();
        Arc::new(move |x: &State| {
            let us = x.rows(n, m);
            us.dot(&(&s * us))
        })
    }

    pub fn terminal_ingredients(&self) -> TerminalIngredients {
        let this = Arc::new(self.clone());
        let violation: StateFn<f64> = {
            let t = this.clone();
            Arc::new(move |x| t.terminal_violation(x))
        };
        let cost: StateFn<f64> = {
            let p = self.terminal_cost_matrix();
            let n = self.plant.plant_dim();
            Arc::new(move |x: &State| {
                let xp = x.rows(0, n);
                xp.dot(&(&p * xp))
            })
        };
        let m = self.plant.input_dim();
        let n = self.plant.plant_dim();
        let mut controllers: Vec<StateFn<Input>> = Vec::with_capacity(self.cycle_length());
        {
            let k = self.design.k.clone();
            let threshold = self.bucket.threshold();
            controllers.push(Arc::new(move |x: &State| {
                let beta = x[n + m].round() as i64;
                if beta >= threshold {
                    NcsSystem::join_input(&(&k * x.rows(0, n)), true)
                } else {
                    Input::zeros(m + 1)
                }
            }));
        }
        for _ in 1..self.cycle_length() {
            controllers.push(Arc::new(move |_| Input::zeros(m + 1)));
        }
        TerminalIngredients::new(violation, cost, controllers).expect("cycle length is positive")
    }
}

/// Terminal ingredients and dissipativity certificate with default options.
pub fn build_ncs_terminal(
    plant: &NcsPlant,
    bucket: &TokenBucketParams,
) -> Result<(TerminalIngredients, DissipativityCertificate)> {
    let sys = NcsSystem::new(plant.clone(), *bucket, NcsOptions::default())?;
    Ok((sys.terminal_ingredients(), sys.certificate()))
}

impl ProblemModel for NcsSystem {
    fn state_dim(&self) -> usize {
        self.plant.plant_dim() + self.plant.input_dim() + 1
    }

    fn input_dim(&self) -> usize {
        self.plant.input_dim() + 1
    }

    fn dynamics(&self, x: &State, u: &Input) -> State {
        let (n, m) = (self.plant.plant_dim(), self.plant.input_dim());
        let transmit = u[m] >= 0.5;
        let us = x.rows(n, m).into_owned();
        let up = applied_input(&u.rows(0, m).into_owned(), &us, transmit);
        let xp = &self.plant.a * x.rows(0, n) + &self.plant.b * &up;
        let beta = x[n + m].round() as i64 + self.bucket.generation
            - if transmit { self.bucket.cost } else { 0 };
        let beta = beta.min(self.bucket.size);
        State::from_iterator(
            n + m + 1,
            xp.iter()
                .chain(up.iter())
                .copied()
                .chain(std::iter::once(beta as f64)),
        )
    }

    fn stage_cost(&self, x: &State, u: &Input) -> f64 {
        let (n, m) = (self.plant.plant_dim(), self.plant.input_dim());
        let xp = x.rows(0, n);
        let up = if u[m] >= 0.5 {
            u.rows(0, m)
        } else {
            x.rows(n, m)
        };
        xp.dot(&(&self.plant.q * xp)) + up.dot(&(&self.plant.r * up))
    }

    fn constraint_violation(&self, x: &State, u: &Input) -> Option<ConstraintViolation> {
        let state = self.state_violation(x);
        let m = self.plant.input_dim();
        if u.len() != m + 1 {
            return Some(ConstraintViolation::new("input dimension", f64::INFINITY));
        }
        let uc = u.rows(0, m).into_owned();
        let mut pair = None;
        let excess = self.plant.input_box.excess(&uc);
        if excess > 0.0 {
            pair = Some(ConstraintViolation::new("transmitted input in U_p", excess));
        }
        let g = u[m];
        if g != 0.0 && g != 1.0 {
            pair = ConstraintViolation::worst(
                pair,
                Some(ConstraintViolation::new(
                    "transmission decision is binary",
                    g.abs().min((g - 1.0).abs()),
                )),
            );
        }
        let beta = x[x.len() - 1];
        if beta.fract() == 0.0 {
            let drained =
                beta as i64 + self.bucket.generation - if g >= 0.5 { self.bucket.cost } else { 0 };
            if drained < 0 {
                pair = ConstraintViolation::worst(
                    pair,
                    Some(ConstraintViolation::new(
                        "bucket level stays nonnegative",
                        -drained as f64,
                    )),
                );
            }
        }
        ConstraintViolation::worst(state, pair)
    }

    fn state_violation(&self, x: &State) -> Option<ConstraintViolation> {
        let (n, m) = (self.plant.plant_dim(), self.plant.input_dim());
        if x.len() != n + m + 1 {
            return Some(ConstraintViolation::new("state dimension", f64::INFINITY));
        }
        let mut worst = None;
        let xp_excess = self.plant.state_box.excess(&x.rows(0, n).into_owned());
        if xp_excess > 0.0 {
            worst = Some(ConstraintViolation::new("plant state in X_p", xp_excess));
        }
        let us_excess = self.plant.input_box.excess(&x.rows(n, m).into_owned());
        if us_excess > 0.0 {
            worst = ConstraintViolation::worst(
                worst,
                Some(ConstraintViolation::new("held input in U_p", us_excess)),
            );
        }
        let beta = x[n + m];
        let off_grid = (beta - beta.round()).abs();
        let outside = (-beta).max(beta - self.bucket.size as f64).max(0.0);
        if off_grid > 0.0 || outside > 0.0 {
            worst = ConstraintViolation::worst(
                worst,
                Some(ConstraintViolation::new(
                    "bucket level in {0..b}",
                    off_grid.max(outside),
                )),
            );
        }
        worst
    }

    fn optimal_average_cost(&self) -> f64 {
        0.0
    }

    fn target_set(&self) -> &dyn TargetSet {
        &self.target
    }

    fn state_labels(&self) -> Vec<String> {
        let (n, m) = (self.plant.plant_dim(), self.plant.input_dim());
        (1..=n)
            .map(|i| format!("x_p{i}"))
            .chain((1..=m).map(|i| format!("u_s{i}")))
            .chain(std::iter::once("beta".to_string()))
            .collect()
    }

    fn input_labels(&self) -> Vec<String> {
        (1..=self.plant.input_dim())
            .map(|i| format!("u_c{i}"))
            .chain(std::iter::once("gamma".to_string()))
            .collect()
    }

    fn bucket_level(&self, x: &State) -> Option<i64> {
        Some(x[x.len() - 1].round() as i64)
    }
}
