//! Seeded generators for structures and controls, shared by the test
//! sweeps and the benchmarks.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::endpoint::Control;
use crate::structure::CarnotStructure;

/// Deterministic RNG for a given seed.
pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_skew(d: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let a = DMatrix::from_fn(d, d, |_, _| rng.gen::<f64>() * 2.0 - 1.0);
    (&a - a.transpose()) * 0.5
}

/// A random structure with horizontal rank `d` and corank `l`.
pub fn random_structure(d: usize, l: usize, rng: &mut ChaCha8Rng) -> CarnotStructure {
    loop {
        let mats = (0..l).map(|_| random_skew(d, rng)).collect();
        if let Ok(s) = CarnotStructure::new(mats) {
            return s;
        }
    }
}

/// A random structure whose matrices commute: block-diagonal rotation blocks
/// `Diag(v_j^i J_2)` conjugated by one common random orthogonal matrix.
/// `d` must be even; the rows of the returned matrix are the `v_j` tuples.
pub fn random_commuting_structure(
    d: usize,
    l: usize,
    rng: &mut ChaCha8Rng,
) -> (CarnotStructure, Vec<Vec<f64>>) {
    assert!(d % 2 == 0, "commuting sampler needs even d");
    let planes = d / 2;
    loop {
        let v: Vec<Vec<f64>> = (0..planes)
            .map(|_| (0..l).map(|_| rng.gen::<f64>() * 4.0 - 2.0).collect())
            .collect();
        // Common orthogonal conjugation via QR of a random matrix.
        let g = DMatrix::from_fn(d, d, |_, _| rng.gen::<f64>() * 2.0 - 1.0);
        let q = g.qr().q();
        let mats: Vec<DMatrix<f64>> = (0..l)
            .map(|i| {
                let mut m = DMatrix::zeros(d, d);
                for (j, vj) in v.iter().enumerate() {
                    m[(2 * j, 2 * j + 1)] = vj[i];
                    m[(2 * j + 1, 2 * j)] = -vj[i];
                }
                &q * m * q.transpose()
            })
            .collect();
        if let Ok(s) = CarnotStructure::new(mats) {
            return (s, v);
        }
    }
}

/// A random zero-mean control of order `order`.
pub fn random_zero_mean_control(d: usize, order: usize, rng: &mut ChaCha8Rng) -> Control {
    let mut c = Control::zero(d, order);
    for (u, v) in &mut c.coeffs {
        *u = DVector::from_fn(d, |_, _| rng.gen::<f64>() * 2.0 - 1.0);
        *v = DVector::from_fn(d, |_, _| rng.gen::<f64>() * 2.0 - 1.0);
    }
    c
}

/// A random control of order `order` with a nonzero mean.
pub fn random_control(d: usize, order: usize, rng: &mut ChaCha8Rng) -> Control {
    let mut c = random_zero_mean_control(d, order, rng);
    c.mean = DVector::from_fn(d, |_, _| rng.gen::<f64>() * 2.0 - 1.0);
    c
}
