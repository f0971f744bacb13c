//! Affine elimination of linear dynamics in terms of a stacked decision vector.

use nalgebra::{DMatrix, DVector};

/// `y = M v + c`.
#[derive(Debug, Clone)]
pub(crate) struct Affine {
    pub matrix: DMatrix<f64>,
    pub offset: DVector<f64>,
}

impl Affine {
    pub fn constant(offset: DVector<f64>, vars: usize) -> Self {
        Self {
            matrix: DMatrix::zeros(offset.len(), vars),
            offset,
        }
    }

    /// Picks the `width`-long block of `v` starting at `start`.
    pub fn select(start: usize, width: usize, vars: usize) -> Self {
        let mut matrix = DMatrix::zeros(width, vars);
        for i in 0..width {
            matrix[(i, start + i)] = 1.0;
        }
        Self {
            matrix,
            offset: DVector::zeros(width),
        }
    }

    #[cfg(test)]
    pub fn eval(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.matrix * v + &self.offset
    }
}

/// States `x(0..=N)` of `x⁺ = A x + B u(j)` with affine inputs.
pub(crate) fn propagate(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    x0: &DVector<f64>,
    inputs: &[Affine],
    vars: usize,
) -> Vec<Affine> {
    let mut states = Vec::with_capacity(inputs.len() + 1);
    states.push(Affine::constant(x0.clone(), vars));
    for u in inputs {
        let x = states.last().expect("nonempty");
        states.push(Affine {
            matrix: a * &x.matrix + b * &u.matrix,
            offset: a * &x.offset + b * &u.offset,
        });
    }
    states
}

/// `½ vᵀHv + fᵀv + c`.
#[derive(Debug, Clone)]
pub(crate) struct Quadratic {
    pub hessian: DMatrix<f64>,
    pub linear: DVector<f64>,
    pub constant: f64,
}

impl Quadratic {
    pub fn zero(vars: usize) -> Self {
        Self {
            hessian: DMatrix::zeros(vars, vars),
            linear: DVector::zeros(vars),
            constant: 0.0,
        }
    }

    /// Adds `(Mv + c)ᵀ W (Mv + c)`.
    pub fn add_form(&mut self, map: &Affine, weight: &DMatrix<f64>) {
        let wm = weight * &map.matrix;
        let wc = weight * &map.offset;
        self.hessian += 2.0 * map.matrix.transpose() * wm;
        self.linear += 2.0 * map.matrix.transpose() * &wc;
        self.constant += map.offset.dot(&wc);
    }

    #[cfg(test)]
    pub fn eval(&self, v: &DVector<f64>) -> f64 {
        0.5 * v.dot(&(&self.hessian * v)) + self.linear.dot(v) + self.constant
    }

    pub fn symmetrized(mut self) -> Self {
        self.hessian = (&self.hessian + self.hessian.transpose()) * 0.5;
        self
    }
}

/// Collects `hᵀv ≤ d` rows; rows with no dependence on `v` are checked immediately.
#[derive(Debug)]
pub(crate) struct RowBuilder {
    vars: usize,
    rows: Vec<DVector<f64>>,
    rhs: Vec<f64>,
    feasible: bool,
    tol: f64,
}

impl RowBuilder {
    pub fn new(vars: usize, tol: f64) -> Self {
        Self {
            vars,
            rows: Vec::new(),
            rhs: Vec::new(),
            feasible: true,
            tol,
        }
    }

    pub fn feasible(&self) -> bool {
        self.feasible
    }

    fn push(&mut self, row: DVector<f64>, rhs: f64) {
        if row.amax() <= 1e-14 {
            if rhs < -self.tol {
                self.feasible = false;
            }
        } else {
            self.rows.push(row);
            self.rhs.push(rhs);
        }
    }

    /// `lower ≤ Mv + c ≤ upper`, skipping infinite bounds.
    pub fn add_box(&mut self, map: &Affine, lower: &DVector<f64>, upper: &DVector<f64>) {
        for i in 0..map.offset.len() {
            let row = map.matrix.row(i).transpose();
            if upper[i].is_finite() {
                self.push(row.clone(), upper[i] - map.offset[i]);
            }
            if lower[i].is_finite() {
                self.push(-row, map.offset[i] - lower[i]);
            }
        }
    }

    pub fn build(self) -> (DMatrix<f64>, DVector<f64>) {
        let mut g = DMatrix::zeros(self.rows.len(), self.vars);
        for (i, r) in self.rows.iter().enumerate() {
            g.set_row(i, &r.transpose());
        }
        (g, DVector::from_vec(self.rhs))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn condensed_cost_matches_rollout() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, -0.2, 0.9]);
        let b = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let q = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let x0 = DVector::from_vec(vec![1.0, -0.5]);
        let inputs: Vec<_> = (0..3).map(|j| Affine::select(j, 1, 3)).collect();
        let states = propagate(&a, &b, &x0, &inputs, 3);
        let mut cost = Quadratic::zero(3);
        for x in &states {
            cost.add_form(x, &q);
        }
        let v = DVector::from_vec(vec![0.3, -0.7, 1.1]);
        let mut x = x0.clone();
        let mut total = x.dot(&(&q * &x));
        for j in 0..3 {
            x = &a * &x + &b * DVector::from_element(1, v[j]);
            total += x.dot(&(&q * &x));
        }
        assert_relative_eq!(cost.eval(&v), total, max_relative = 1e-13);
        assert_relative_eq!(states[3].eval(&v), x, epsilon = 1e-13);
    }

    #[test]
    fn constant_rows_are_prefiltered() {
        let mut rows = RowBuilder::new(1, 1e-12);
        rows.add_box(
            &Affine::constant(DVector::from_element(1, 0.5), 1),
            &DVector::from_element(1, -1.0),
            &DVector::from_element(1, 1.0),
        );
        assert!(rows.feasible());
        assert_eq!(rows.build().0.nrows(), 0);
        let mut rows = RowBuilder::new(1, 1e-12);
        rows.add_box(
            &Affine::constant(DVector::from_element(1, 2.0), 1),
            &DVector::from_element(1, -1.0),
            &DVector::from_element(1, 1.0),
        );
        assert!(!rows.feasible());
    }
}
