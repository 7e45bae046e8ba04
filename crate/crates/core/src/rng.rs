//! Counter-based random streams.
//!
//! Every stochastic routine draws from a stream keyed by `(seed, purpose, index)`, so work items
//! can be evaluated in any order (or in parallel) and still see the same numbers.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Purpose tags keep streams of different routines disjoint under a shared user seed.
#[derive(Debug, Clone, Copy)]
#[repr(u64)]
pub enum Purpose {
    BsubSample = 1,
    MultiplierStart = 2,
    CriticalDirection = 3,
    TiltSample = 4,
    Multistart = 5,
    Scan = 6,
    Mscq = 7,
}

pub fn stream(seed: u64, purpose: Purpose, index: u64) -> ChaCha8Rng {
    let key = seed ^ (purpose as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    rng.set_stream(index);
    rng
}

pub fn normal_vector<R: Rng>(rng: &mut R, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

pub fn normal_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// Uniform sample from the closed Euclidean ball of the given radius.
pub fn uniform_in_ball<R: Rng>(rng: &mut R, n: usize, radius: f64) -> DVector<f64> {
    let mut dir = normal_vector(rng, n);
    let norm = dir.norm();
    if norm == 0.0 {
        return DVector::zeros(n);
    }
    dir /= norm;
    let u: f64 = rng.random();
    dir * (radius * u.powf(1.0 / n as f64))
}

/// Random unit vector (uniform on the sphere).
pub fn unit_vector<R: Rng>(rng: &mut R, n: usize) -> DVector<f64> {
    loop {
        let v = normal_vector(rng, n);
        let norm = v.norm();
        if norm > 1e-12 {
            return v / norm;
        }
    }
}
