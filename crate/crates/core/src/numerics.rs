//! Small dense real-matrix kernel.
//!
//! Everything here is domain-agnostic and operates on `nalgebra::DMatrix<f64>`.
//! Dimensions in this crate never exceed `(d + k)² = 49`, so the Kronecker
//! vectorized solves below are tiny dense systems.

use nalgebra::{linalg::Schur, DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

pub type Mat = DMatrix<f64>;

const EIGEN_MAX_ITER: usize = 10_000;

/// Builds a matrix from row-major nested rows, rejecting ragged or non-finite input.
pub fn from_rows(rows: &[Vec<f64>]) -> Result<Mat> {
    let nrows = rows.len();
    if nrows == 0 {
        return Err(Error::DimensionMismatch("matrix has no rows".into()));
    }
    let ncols = rows[0].len();
    if ncols == 0 {
        return Err(Error::DimensionMismatch("matrix has no columns".into()));
    }
    if let Some(bad) = rows.iter().position(|r| r.len() != ncols) {
        return Err(Error::DimensionMismatch(format!(
            "row {bad} has {} entries, expected {ncols}",
            rows[bad].len()
        )));
    }
    let m = Mat::from_fn(nrows, ncols, |i, j| rows[i][j]);
    check_finite(&m)?;
    Ok(m)
}

pub fn to_rows(m: &Mat) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

pub fn check_finite(m: &Mat) -> Result<()> {
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            if !m[(i, j)].is_finite() {
                return Err(Error::NonFinite { row: i, col: j });
            }
        }
    }
    Ok(())
}

fn require_square(m: &Mat, what: &str) -> Result<usize> {
    if m.nrows() != m.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "{what} must be square, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(m.nrows())
}

/// Largest absolute difference between `m` and its transpose.
pub fn asymmetry(m: &Mat) -> f64 {
    let n = m.nrows().min(m.ncols());
    let mut worst = 0.0_f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

pub fn is_symmetric(m: &Mat, rel_tol: f64) -> bool {
    m.is_square() && asymmetry(m) <= rel_tol * frobenius_norm(m).max(1.0)
}

pub fn symmetrize(m: &Mat) -> Mat {
    (m + m.transpose()) * 0.5
}

pub fn frobenius_norm(m: &Mat) -> f64 {
    m.norm()
}

/// Largest singular value.
pub fn operator_norm(m: &Mat) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().max()
}

/// Cholesky factor `L` with `L Lᵀ = M` (or `M + jitter·I` when the plain
/// factorization fails and `jitter > 0`).
pub fn cholesky(m: &Mat, jitter: f64) -> Result<Mat> {
    let n = require_square(m, "cholesky input")?;
    if !is_symmetric(m, 1e-10) {
        return Err(Error::NotSymmetric {
            asymmetry: asymmetry(m),
        });
    }
    let sym = symmetrize(m);
    if let Some(c) = sym.clone().cholesky() {
        return Ok(c.l());
    }
    if jitter > 0.0 {
        let shifted = sym + Mat::identity(n, n) * jitter;
        if let Some(c) = shifted.cholesky() {
            return Ok(c.l());
        }
    }
    Err(Error::NotPsd { jitter })
}

/// Largest eigenvalue modulus, from a real Schur decomposition.
pub fn spectral_radius(m: &Mat) -> Result<f64> {
    let n = require_square(m, "spectral radius input")?;
    if n == 0 {
        return Ok(0.0);
    }
    if n == 1 {
        return Ok(m[(0, 0)].abs());
    }
    let schur = Schur::try_new(m.clone(), f64::EPSILON, EIGEN_MAX_ITER).ok_or(
        Error::NonConvergence {
            iterations: EIGEN_MAX_ITER,
        },
    )?;
    Ok(schur
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max))
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue_sym(m: &Mat) -> Result<f64> {
    require_square(m, "symmetric eigenvalue input")?;
    Ok(SymmetricEigen::new(symmetrize(m)).eigenvalues.min())
}

/// Solves `X = W + F·X·G` for `X` through the vectorized system
/// `(I − Gᵀ ⊗ F) vec(X) = vec(W)`.
///
/// `F` is m×m, `G` is n×n, `W` is m×n. One step of iterative refinement is
/// applied to the LU solution.
pub fn solve_kron_linear(f: &Mat, g: &Mat, w: &Mat) -> Result<Mat> {
    let m = require_square(f, "F")?;
    let n = require_square(g, "G")?;
    if w.nrows() != m || w.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "W must be {m}x{n}, got {}x{}",
            w.nrows(),
            w.ncols()
        )));
    }
    let size = m * n;
    let system = Mat::identity(size, size) - g.transpose().kronecker(f);
    let rhs = DVector::from_column_slice(w.as_slice());
    let lu = system.clone().lu();
    let mut sol = lu.solve(&rhs).ok_or(Error::SingularSystem)?;
    let resid = &rhs - &system * &sol;
    if let Some(corr) = lu.solve(&resid) {
        sol += corr;
    }
    if sol.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularSystem);
    }
    Ok(Mat::from_column_slice(m, n, sol.as_slice()))
}

/// `[[a, b], [c, d]]` assembled from blocks.
pub fn block2x2(a: &Mat, b: &Mat, c: &Mat, d: &Mat) -> Mat {
    let (r1, c1) = a.shape();
    let (r2, c2) = d.shape();
    debug_assert_eq!(b.shape(), (r1, c2));
    debug_assert_eq!(c.shape(), (r2, c1));
    let mut out = Mat::zeros(r1 + r2, c1 + c2);
    out.view_mut((0, 0), (r1, c1)).copy_from(a);
    out.view_mut((0, c1), (r1, c2)).copy_from(b);
    out.view_mut((r1, 0), (r2, c1)).copy_from(c);
    out.view_mut((r1, c1), (r2, c2)).copy_from(d);
    out
}

pub fn block_diag(a: &Mat, d: &Mat) -> Mat {
    block2x2(
        a,
        &Mat::zeros(a.nrows(), d.ncols()),
        &Mat::zeros(d.nrows(), a.ncols()),
        d,
    )
}

/// Trace inner product `⟨X, Y⟩ = Tr(Xᵀ Y)`.
pub fn inner(x: &Mat, y: &Mat) -> f64 {
    x.dot(y)
}
