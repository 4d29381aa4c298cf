#![allow(dead_code)]

use polyq::{Matrix, SymMatrix};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::new(rows, cols, (0..rows * cols).map(|_| StandardNormal.sample(rng)).collect()).unwrap()
}

pub fn random_sym(rng: &mut ChaCha8Rng, n: usize) -> SymMatrix {
    SymMatrix::from_symmetric_part(&gaussian(rng, n, n))
}

/// `GGᵀ + I`.
pub fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> SymMatrix {
    let g = gaussian(rng, n, n);
    let mut m = &g * &g.transpose();
    for i in 0..n {
        m[(i, i)] += 1.0;
    }
    SymMatrix::from_symmetric_part(&m)
}

pub fn max_abs_diff(a: &Matrix, b: &Matrix) -> f64 {
    a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn scalar_system() -> polyq::PolytopicSystem {
    polyq::PolytopicSystem::new(
        vec![Matrix::scalar(0.5), Matrix::scalar(2.0)],
        Matrix::scalar(1.0),
        Matrix::scalar(1.0),
        true,
    )
    .unwrap()
}
