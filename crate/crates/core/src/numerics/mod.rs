//! Dense real-matrix kernel: storage, symmetric eigendecomposition,
//! Cholesky, SPD solves and definiteness tests.
//!
//! Tolerances are relative to `max(1, ‖M‖)` so scalar toy systems and scaled
//! systems behave the same.

mod eigen;
mod matrix;

pub use eigen::{
    cholesky, condition_number, is_pd, min_eigenvalue, solve_spd, spd_inverse, spectral_norm,
    spectral_radius, sym_eig, EigResult, SymMatrix, SYMMETRY_TOL,
};
pub use matrix::Matrix;
