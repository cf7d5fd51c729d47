use rand::Rng;

use crate::numerics::{c, CMatrix, CVector, C64};
use crate::rng::{complex_gaussian, rng_from_seed};

pub fn random_matrix(rows: usize, cols: usize, seed: u64) -> CMatrix {
    let mut rng = rng_from_seed(seed);
    CMatrix::from_fn(rows, cols, |_, _| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
}

pub fn random_hermitian(n: usize, seed: u64) -> CMatrix {
    let a = random_matrix(n, n, seed);
    a.add(&a.adjoint()).unwrap().scale(c(0.5, 0.0))
}

/// Random full-rank unit-trace PSD matrix.
pub fn random_psd(n: usize, seed: u64) -> CMatrix {
    let a = random_matrix(n, n, seed);
    let m = a.matmul(&a.adjoint()).unwrap();
    let t = m.trace().re;
    m.scale(c(1.0 / t, 0.0))
}

pub fn random_unit_vector(dim: usize, seed: u64) -> CVector {
    let mut rng = rng_from_seed(seed);
    let v: Vec<C64> = (0..dim).map(|_| complex_gaussian(&mut rng)).collect();
    CVector::new(v).normalized().unwrap()
}
