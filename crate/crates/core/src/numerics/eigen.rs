use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::numerics::matrix::Matrix;

/// Relative symmetry tolerance accepted by [`SymMatrix::new`].
pub const SYMMETRY_TOL: f64 = 1e-12;

/// A square matrix known to be symmetric within [`SYMMETRY_TOL`].
#[derive(Clone, Debug, PartialEq)]
pub struct SymMatrix(Matrix);

impl SymMatrix {
    pub fn new(m: Matrix) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::invalid(format!("symmetric matrix must be square, got {}x{}", m.rows(), m.cols())));
        }
        let tol = SYMMETRY_TOL * m.frobenius_norm().max(1.0);
        let asym = m.max_asymmetry();
        if asym > tol {
            return Err(Error::invalid(format!("matrix is not symmetric (asymmetry {asym:e})")));
        }
        Ok(SymMatrix(m))
    }

    /// Symmetric part of an arbitrary square matrix.
    pub fn from_symmetric_part(m: &Matrix) -> Self {
        SymMatrix(m.symmetric_part())
    }

    pub fn identity(n: usize) -> Self {
        SymMatrix(Matrix::identity(n))
    }

    pub fn zeros(n: usize) -> Self {
        SymMatrix(Matrix::zeros(n, n))
    }

    pub fn scalar(v: f64) -> Self {
        SymMatrix(Matrix::scalar(v))
    }

    pub fn diag(values: &[f64]) -> Self {
        SymMatrix(Matrix::diag(values))
    }

    pub fn dim(&self) -> usize {
        self.0.rows()
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }
}

impl Serialize for SymMatrix {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        self.0.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for SymMatrix {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        SymMatrix::new(Matrix::deserialize(deserializer)?).map_err(serde::de::Error::custom)
    }
}

impl AsRef<Matrix> for SymMatrix {
    fn as_ref(&self) -> &Matrix {
        &self.0
    }
}

/// Spectral decomposition `M = V diag(λ) Vᵀ`.
#[derive(Clone, Debug)]
pub struct EigResult {
    /// Ascending.
    pub eigenvalues: Vec<f64>,
    /// Orthonormal eigenvectors as columns, aligned with `eigenvalues`.
    pub eigenvectors: Matrix,
}

impl EigResult {
    pub fn eigenvector(&self, k: usize) -> Vec<f64> {
        (0..self.eigenvectors.rows()).map(|i| self.eigenvectors[(i, k)]).collect()
    }
}

/// Full eigendecomposition of a symmetric matrix by Householder
/// tridiagonalization followed by implicit QL with Wilkinson-style shifts.
pub fn sym_eig(m: &SymMatrix) -> Result<EigResult> {
    let a = m.as_matrix();
    if !a.is_finite() {
        return Err(Error::invalid("sym_eig: non-finite entry"));
    }
    let n = a.rows();
    let mut v: Vec<Vec<f64>> = a.to_rows();
    let mut d = vec![0.0; n];
    let mut e = vec![0.0; n];
    tridiagonalize(&mut v, &mut d, &mut e);
    ql_implicit(&mut v, &mut d, &mut e)?;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| d[x].total_cmp(&d[y]));
    let eigenvalues = order.iter().map(|&k| d[k]).collect();
    let mut eigenvectors = Matrix::zeros(n, n);
    for (col, &k) in order.iter().enumerate() {
        for (row, vr) in v.iter().enumerate() {
            eigenvectors[(row, col)] = vr[k];
        }
    }
    Ok(EigResult { eigenvalues, eigenvectors })
}

// Householder reduction to tridiagonal form (EISPACK tred2 lineage).
// On exit `v` holds the accumulated orthogonal transform, `d` the diagonal
// and `e[1..]` the subdiagonal.
fn tridiagonalize(v: &mut [Vec<f64>], d: &mut [f64], e: &mut [f64]) {
    let n = d.len();
    d.copy_from_slice(&v[n - 1]);

    for i in (1..n).rev() {
        let scale: f64 = d[..i].iter().map(|x| x.abs()).sum();
        let mut h = 0.0;
        if scale == 0.0 {
            e[i] = d[i - 1];
            for j in 0..i {
                d[j] = v[i - 1][j];
                v[i][j] = 0.0;
                v[j][i] = 0.0;
            }
        } else {
            for dk in d[..i].iter_mut() {
                *dk /= scale;
                h += *dk * *dk;
            }
            let f = d[i - 1];
            let mut g = h.sqrt();
            if f > 0.0 {
                g = -g;
            }
            e[i] = scale * g;
            h -= f * g;
            d[i - 1] = f - g;
            e[..i].fill(0.0);

            for j in 0..i {
                let f = d[j];
                v[j][i] = f;
                let mut g = e[j] + v[j][j] * f;
                for k in (j + 1)..i {
                    g += v[k][j] * d[k];
                    e[k] += v[k][j] * f;
                }
                e[j] = g;
            }
            let mut f = 0.0;
            for j in 0..i {
                e[j] /= h;
                f += e[j] * d[j];
            }
            let hh = f / (h + h);
            for j in 0..i {
                e[j] -= hh * d[j];
            }
            for j in 0..i {
                let f = d[j];
                let g = e[j];
                for k in j..i {
                    v[k][j] -= f * e[k] + g * d[k];
                }
                d[j] = v[i - 1][j];
                v[i][j] = 0.0;
            }
        }
        d[i] = h;
    }

    for i in 0..n.saturating_sub(1) {
        v[n - 1][i] = v[i][i];
        v[i][i] = 1.0;
        let h = d[i + 1];
        if h != 0.0 {
            for k in 0..=i {
                d[k] = v[k][i + 1] / h;
            }
            for j in 0..=i {
                let mut g = 0.0;
                for k in 0..=i {
                    g += v[k][i + 1] * v[k][j];
                }
                for k in 0..=i {
                    v[k][j] -= g * d[k];
                }
            }
        }
        for row in v.iter_mut().take(i + 1) {
            row[i + 1] = 0.0;
        }
    }
    for j in 0..n {
        d[j] = v[n - 1][j];
        v[n - 1][j] = 0.0;
    }
    v[n - 1][n - 1] = 1.0;
    e[0] = 0.0;
}

// Implicit QL on the symmetric tridiagonal (d, e), accumulating into `v`.
fn ql_implicit(v: &mut [Vec<f64>], d: &mut [f64], e: &mut [f64]) -> Result<()> {
    let n = d.len();
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = 0.0;

    let max_sweeps = 60 * n.max(1);
    let mut f = 0.0;
    let mut tst1 = 0.0_f64;
    let eps = f64::EPSILON;
    for l in 0..n {
        tst1 = tst1.max(d[l].abs() + e[l].abs());
        let mut m = l;
        while m < n {
            if e[m].abs() <= eps * tst1 {
                break;
            }
            m += 1;
        }
        if m > l {
            let mut sweeps = 0;
            loop {
                sweeps += 1;
                if sweeps > max_sweeps {
                    return Err(Error::NumericalFailure(format!(
                        "sym_eig: QL iteration did not converge for eigenvalue {l}"
                    )));
                }
                let g = d[l];
                let mut p = (d[l + 1] - g) / (2.0 * e[l]);
                let mut r = p.hypot(1.0);
                if p < 0.0 {
                    r = -r;
                }
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                let dl1 = d[l + 1];
                let h = g - d[l];
                for di in d.iter_mut().skip(l + 2) {
                    *di -= h;
                }
                f += h;

                p = d[m];
                let mut c = 1.0;
                let mut c2 = c;
                let mut c3 = c;
                let el1 = e[l + 1];
                let mut s = 0.0;
                let mut s2 = 0.0;
                for i in (l..m).rev() {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    let g = c * e[i];
                    let h = c * p;
                    r = p.hypot(e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g;
                    d[i + 1] = h + s * (c * g + s * d[i]);
                    for row in v.iter_mut() {
                        let h = row[i + 1];
                        row[i + 1] = s * row[i] + c * h;
                        row[i] = c * row[i] - s * h;
                    }
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;
                if e[l].abs() <= eps * tst1 {
                    break;
                }
            }
        }
        d[l] += f;
        e[l] = 0.0;
    }
    Ok(())
}

pub fn min_eigenvalue(m: &SymMatrix) -> Result<f64> {
    Ok(sym_eig(m)?.eigenvalues[0])
}

/// Spectral norm `max |λ|` of a symmetric matrix.
pub fn spectral_norm(m: &SymMatrix) -> Result<f64> {
    let eig = sym_eig(m)?;
    let lo = eig.eigenvalues[0].abs();
    let hi = eig.eigenvalues[eig.eigenvalues.len() - 1].abs();
    Ok(lo.max(hi))
}

/// Lower-triangular Cholesky factor, or `None` when a pivot is not
/// strictly positive.
pub fn cholesky(m: &SymMatrix) -> Option<Matrix> {
    let a = m.as_matrix();
    let n = a.rows();
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut diag = a[(j, j)];
        for k in 0..j {
            diag -= l[(j, k)] * l[(j, k)];
        }
        if !(diag > 0.0) {
            return None;
        }
        let ljj = diag.sqrt();
        l[(j, j)] = ljj;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / ljj;
        }
    }
    Some(l)
}

/// True iff `λ_min(M) ≥ eps · max(1, ‖M‖₂)`.
///
/// A Cholesky factorization of `M − eps·max(1, ‖M‖_F)·I` settles the clear
/// cases since `‖M‖_F ≥ ‖M‖₂`; anything close to the boundary goes through the
/// eigenvalues.
pub fn is_pd(m: &SymMatrix, eps: f64) -> Result<bool> {
    if eps < 0.0 {
        return Err(Error::invalid("is_pd: eps must be nonnegative"));
    }
    let a = m.as_matrix();
    if !a.is_finite() {
        return Err(Error::invalid("is_pd: non-finite entry"));
    }
    let n = a.rows();
    let fro = a.frobenius_norm().max(1.0);
    let mut shifted = a.clone();
    for i in 0..n {
        shifted[(i, i)] -= eps * fro;
    }
    if let Some(l) = cholesky(&SymMatrix(shifted)) {
        let min_pivot = (0..n).map(|i| l[(i, i)] * l[(i, i)]).fold(f64::INFINITY, f64::min);
        if min_pivot > 1e-8 * fro {
            return Ok(true);
        }
    }
    let eig = sym_eig(m)?;
    let lo = eig.eigenvalues[0];
    let norm2 = lo.abs().max(eig.eigenvalues[n - 1].abs());
    Ok(lo >= eps * norm2.max(1.0))
}

/// Solves `M X = RHS` for symmetric positive-definite `M` via Cholesky.
pub fn solve_spd(m: &SymMatrix, rhs: &Matrix) -> Result<Matrix> {
    let n = m.dim();
    if rhs.rows() != n {
        return Err(Error::invalid(format!("solve_spd: {n}x{n} system with {} right-hand rows", rhs.rows())));
    }
    if !is_pd(m, 1e-12)? {
        return Err(Error::NotPositiveDefinite("solve_spd: coefficient matrix".into()));
    }
    let l = cholesky(m).ok_or_else(|| Error::NotPositiveDefinite("solve_spd: Cholesky breakdown".into()))?;
    let mut x = rhs.clone();
    for c in 0..rhs.cols() {
        // forward: L y = b
        for i in 0..n {
            let mut s = x[(i, c)];
            for k in 0..i {
                s -= l[(i, k)] * x[(k, c)];
            }
            x[(i, c)] = s / l[(i, i)];
        }
        // backward: Lᵀ x = y
        for i in (0..n).rev() {
            let mut s = x[(i, c)];
            for k in (i + 1)..n {
                s -= l[(k, i)] * x[(k, c)];
            }
            x[(i, c)] = s / l[(i, i)];
        }
    }
    Ok(x)
}

/// Inverse of an SPD matrix, symmetrized.
pub fn spd_inverse(m: &SymMatrix) -> Result<SymMatrix> {
    let inv = solve_spd(m, &Matrix::identity(m.dim()))?;
    Ok(SymMatrix::from_symmetric_part(&inv))
}

/// 2-norm condition number estimate of an SPD matrix from its extreme eigenvalues.
pub fn condition_number(m: &SymMatrix) -> Result<f64> {
    let eig = sym_eig(m)?;
    let lo = eig.eigenvalues[0];
    let hi = eig.eigenvalues[eig.eigenvalues.len() - 1];
    Ok(if lo > 0.0 { hi / lo } else { f64::INFINITY })
}

/// Spectral radius of a general square matrix (via a real Schur form).
pub fn spectral_radius(m: &Matrix) -> Result<f64> {
    if !m.is_square() {
        return Err(Error::invalid("spectral_radius: matrix must be square"));
    }
    let n = m.rows();
    let dm = nalgebra::DMatrix::from_row_slice(n, n, m.as_slice());
    let eig = dm
        .try_schur(f64::EPSILON, 10_000)
        .ok_or_else(|| Error::NumericalFailure("spectral_radius: Schur iteration did not converge".into()))?
        .complex_eigenvalues();
    Ok(eig.iter().map(|z| z.norm()).fold(0.0, f64::max))
}
