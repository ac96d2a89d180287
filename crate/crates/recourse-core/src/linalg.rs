//! Small dense linear-algebra helpers shared by the solvers.
//!
//! Everything here operates on matrices of at most a few hundred rows, so
//! plain O(n^3) factorizations without blocking are entirely adequate.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};

/// Solves `a x = b` by LU factorization with partial pivoting.
///
/// Fails with a numeric error when a pivot falls below `1e-12` times the
/// largest absolute entry of `a` (treated as singular).
pub fn solve_lu(a: &Array2<f64>, b: &Array1<f64>) -> Result<Array1<f64>> {
    let n = a.nrows();
    if a.ncols() != n || b.len() != n {
        return Err(Error::InvalidInput(format!(
            "solve_lu expects square system, got {}x{} with rhs {}",
            a.nrows(),
            a.ncols(),
            b.len()
        )));
    }
    if n == 0 {
        return Ok(Array1::zeros(0));
    }
    let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    let tol = 1e-12 * scale;

    // Work on a flattened copy; `lu[r][c]` = lu[r * n + c].
    let mut lu: Vec<f64> = a.iter().copied().collect();
    let mut perm: Vec<usize> = (0..n).collect();
    for col in 0..n {
        let (mut pivot_row, mut pivot_abs) = (col, lu[col * n + col].abs());
        for row in col + 1..n {
            let v = lu[row * n + col].abs();
            if v > pivot_abs {
                pivot_row = row;
                pivot_abs = v;
            }
        }
        if pivot_abs < tol {
            return Err(Error::Numeric(format!(
                "singular system: pivot {pivot_abs:.3e} below tolerance at column {col}"
            )));
        }
        if pivot_row != col {
            for c in 0..n {
                lu.swap(col * n + c, pivot_row * n + c);
            }
            perm.swap(col, pivot_row);
        }
        let pivot = lu[col * n + col];
        for row in col + 1..n {
            let factor = lu[row * n + col] / pivot;
            lu[row * n + col] = factor;
            for c in col + 1..n {
                lu[row * n + c] -= factor * lu[col * n + c];
            }
        }
    }

    // Forward then back substitution on the permuted right-hand side.
    let mut x: Vec<f64> = perm.iter().map(|&p| b[p]).collect();
    for row in 1..n {
        for c in 0..row {
            x[row] -= lu[row * n + c] * x[c];
        }
    }
    for row in (0..n).rev() {
        for c in row + 1..n {
            x[row] -= lu[row * n + c] * x[c];
        }
        x[row] /= lu[row * n + row];
    }
    Ok(Array1::from_vec(x))
}

/// Attempts a Cholesky factorization of `m + shift * I`.
///
/// Success certifies that the shifted matrix is positive definite; the error
/// path reports the first column where a non-positive diagonal appeared.
/// Only the lower triangle of `m` is read.
pub fn cholesky_shifted(m: &Array2<f64>, shift: f64) -> Result<()> {
    let n = m.nrows();
    if m.ncols() != n {
        return Err(Error::InvalidInput(format!(
            "cholesky expects square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    let mut l = vec![0.0f64; n * n];
    for j in 0..n {
        let mut d = m[(j, j)] + shift;
        for k in 0..j {
            d -= l[j * n + k] * l[j * n + k];
        }
        if !(d > 0.0) {
            return Err(Error::Numeric(format!(
                "matrix not positive definite after shift {shift:.3e}: \
                 diagonal {d:.3e} at column {j}"
            )));
        }
        let dj = d.sqrt();
        l[j * n + j] = dj;
        for i in j + 1..n {
            let mut v = m[(i, j)] + if i == j { shift } else { 0.0 };
            for k in 0..j {
                v -= l[i * n + k] * l[j * n + k];
            }
            l[i * n + j] = v / dj;
        }
    }
    Ok(())
}

/// Largest absolute difference between `m` and its transpose.
pub fn max_asymmetry(m: &Array2<f64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in i + 1..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}
