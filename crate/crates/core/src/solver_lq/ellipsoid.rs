use nalgebra::{DMatrix, DVector};

/// Euclidean projection of `x` onto `{z : zᵀPz ≤ a}`.
///
/// In the eigenbasis of `P` the projection is `zᵢ = yᵢ / (1 + μλᵢ)` with the
/// multiplier `μ ≥ 0` fixing the boundary. Newton runs on `1/‖w(μ)‖ − 1/√a`, where
/// `wᵢ = √λᵢ zᵢ`; that function is concave and increasing, so the iteration climbs
/// monotonically to the root from `μ = 0`.
pub fn project_onto_ellipsoid(p: &DMatrix<f64>, level: f64, x: &DVector<f64>) -> DVector<f64> {
    if x.dot(&(p * x)) <= level {
        return x.clone();
    }
    if level <= 0.0 {
        return DVector::zeros(x.len());
    }
    let eig = p.clone().symmetric_eigen();
    let lambda = &eig.eigenvalues;
    let y = eig.eigenvectors.transpose() * x;

    let weighted = |mu: f64| -> (f64, f64) {
        // (‖w‖², Σ wᵢ² λᵢ/(1+μλᵢ))
        let mut norm2 = 0.0;
        let mut slope = 0.0;
        for i in 0..y.len() {
            let d = 1.0 + mu * lambda[i];
            let w2 = lambda[i] * y[i] * y[i] / (d * d);
            norm2 += w2;
            slope += w2 * lambda[i] / d;
        }
        (norm2, slope)
    };

    let target = 1.0 / level.sqrt();
    let mut mu = 0.0;
    for _ in 0..200 {
        let (norm2, slope) = weighted(mu);
        if (norm2 - level).abs() <= 1e-14 * level || slope <= 0.0 {
            break;
        }
        let norm = norm2.sqrt();
        let psi = 1.0 / norm - target;
        let dpsi = slope / (norm2 * norm);
        let step = -psi / dpsi;
        if !step.is_finite() {
            break;
        }
        let next = (mu + step).max(0.0);
        if (next - mu).abs() <= 1e-16 * next.max(1.0) {
            mu = next;
            break;
        }
        mu = next;
    }

    let z = DVector::from_iterator(y.len(), (0..y.len()).map(|i| y[i] / (1.0 + mu * lambda[i])));
    let mut out = &eig.eigenvectors * z;
    // Newton from the left may stop a rounding error outside; pull back radially.
    let q = out.dot(&(p * &out));
    if q > level {
        out *= (level / q).sqrt();
    }
    out
}
