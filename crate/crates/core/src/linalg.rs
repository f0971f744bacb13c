use nalgebra::DMatrix;

pub(crate) fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub(crate) fn is_symmetric(m: &DMatrix<f64>) -> bool {
    m.is_square() && (m - m.transpose()).amax() <= 1e-12 * m.amax().max(1.0)
}

pub(crate) fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    symmetrize(m).symmetric_eigenvalues().min()
}

pub(crate) fn max_eigenvalue(m: &DMatrix<f64>) -> f64 {
    symmetrize(m).symmetric_eigenvalues().max()
}

pub(crate) fn is_positive_definite(m: &DMatrix<f64>) -> bool {
    is_symmetric(m) && m.nrows() > 0 && min_eigenvalue(m) > 0.0
}

/// `[I, A, A², …, A^count]`.
pub(crate) fn powers(a: &DMatrix<f64>, count: usize) -> Vec<DMatrix<f64>> {
    let mut out = Vec::with_capacity(count + 1);
    out.push(DMatrix::identity(a.nrows(), a.ncols()));
    for k in 1..=count {
        out.push(a * &out[k - 1]);
    }
    out
}

pub(crate) fn rank(m: &DMatrix<f64>) -> usize {
    if m.is_empty() {
        return 0;
    }
    let s = m.clone().svd(false, false).singular_values;
    let tol = s.max() * (m.nrows().max(m.ncols()) as f64) * f64::EPSILON * 16.0;
    s.iter().filter(|&&v| v > tol).count()
}

/// Rank of the Kalman controllability matrix `[B, AB, …, A^{n−1}B]`.
pub(crate) fn controllability_rank(a: &DMatrix<f64>, b: &DMatrix<f64>) -> usize {
    let n = a.nrows();
    let m = b.ncols();
    let mut ctrb = DMatrix::zeros(n, n * m);
    let mut block = b.clone();
    for i in 0..n {
        ctrb.view_mut((0, i * m), (n, m)).copy_from(&block);
        block = a * block;
    }
    rank(&ctrb)
}
