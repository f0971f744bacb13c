//! Seeded sample generators: shifted Halton points over boxes and Gaussian-direction
//! points in and on ellipsoids.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

const PRIMES: [u64; 24] = [
    2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89,
];

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let mut inv = 1.0 / base as f64;
    let mut factor = inv;
    let mut out = 0.0;
    while i > 0 {
        out += (i % base) as f64 * factor;
        i /= base;
        factor *= inv;
    }
    inv = out;
    inv
}

/// Halton sequence with a seeded Cranley–Patterson rotation.
#[derive(Debug, Clone)]
pub struct Halton {
    shift: Vec<f64>,
    index: u64,
}

impl Halton {
    pub fn new(dim: usize, seed: u64) -> Result<Self> {
        if dim > PRIMES.len() {
            return Err(Error::InvalidArgument(format!(
                "Halton dimension {dim} exceeds {}",
                PRIMES.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Self {
            shift: (0..dim).map(|_| rng.random::<f64>()).collect(),
            index: 1,
        })
    }

    pub fn next_point(&mut self) -> Vec<f64> {
        let i = self.index;
        self.index += 1;
        self.shift
            .iter()
            .enumerate()
            .map(|(d, s)| (radical_inverse(i, PRIMES[d]) + s).fract())
            .collect()
    }
}

/// Points of `[lower, upper]` from a shifted Halton sequence.
pub fn box_samples(
    lower: &DVector<f64>,
    upper: &DVector<f64>,
    count: usize,
    seed: u64,
) -> Result<Vec<DVector<f64>>> {
    let mut h = Halton::new(lower.len(), seed)?;
    Ok((0..count)
        .map(|_| {
            let p = h.next_point();
            DVector::from_iterator(
                lower.len(),
                (0..lower.len()).map(|i| lower[i] + p[i] * (upper[i] - lower[i])),
            )
        })
        .collect())
}

pub fn gaussian_direction<R: Rng>(dim: usize, rng: &mut R) -> DVector<f64> {
    loop {
        let d = DVector::from_iterator(dim, (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let n = d.norm();
        if n > 1e-12 {
            return d / n;
        }
    }
}

/// Point on `{z : zᵀPz = level}` along a random Gaussian direction.
pub fn ellipsoid_boundary_point<R: Rng>(p: &DMatrix<f64>, level: f64, rng: &mut R) -> DVector<f64> {
    let d = gaussian_direction(p.nrows(), rng);
    let q = d.dot(&(p * &d));
    d * (level.max(0.0) / q).sqrt()
}

/// Point of `{z : zᵀPz ≤ level}`: boundary point scaled by `U^{1/n}`.
pub fn ellipsoid_interior_point<R: Rng>(p: &DMatrix<f64>, level: f64, rng: &mut R) -> DVector<f64> {
    let n = p.nrows() as f64;
    let s: f64 = rng.random::<f64>().powf(1.0 / n);
    ellipsoid_boundary_point(p, level, rng) * s
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
