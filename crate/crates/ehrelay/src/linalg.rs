//! Small dense linear-algebra routines used by the chain solvers: an LU
//! solve with partial pivoting, stationary-vector extraction with a
//! normalization constraint, and a power-iteration spectral radius.
//!
//! Matrices here are a few hundred rows at most, so plain dense O(n^3)
//! routines are adequate.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Marker for a numerically singular system; callers map it onto their
/// own error variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Singular;

/// Solves `a x = b` by LU decomposition with partial pivoting.
pub fn lu_solve(a: &Array2<f64>, b: &Array1<f64>) -> Result<Array1<f64>, Singular> {
    let n = a.nrows();
    assert_eq!(a.ncols(), n, "lu_solve needs a square matrix");
    assert_eq!(b.len(), n);

    let mut lu = a.clone();
    let mut x = b.clone();

    for col in 0..n {
        let mut pivot_row = col;
        let mut pivot_val = lu[[col, col]].abs();
        for row in col + 1..n {
            let v = lu[[row, col]].abs();
            if v > pivot_val {
                pivot_val = v;
                pivot_row = row;
            }
        }
        if !pivot_val.is_finite() || pivot_val < 1e-300 {
            return Err(Singular);
        }
        if pivot_row != col {
            for j in 0..n {
                lu.swap([col, j], [pivot_row, j]);
            }
            x.swap(col, pivot_row);
        }
        let inv_pivot = 1.0 / lu[[col, col]];
        for row in col + 1..n {
            let factor = lu[[row, col]] * inv_pivot;
            if factor != 0.0 {
                lu[[row, col]] = factor;
                for j in col + 1..n {
                    lu[[row, j]] -= factor * lu[[col, j]];
                }
                x[row] -= factor * x[col];
            } else {
                lu[[row, col]] = 0.0;
            }
        }
    }

    // Back substitution on the upper triangle.
    for col in (0..n).rev() {
        x[col] /= lu[[col, col]];
        let xc = x[col];
        for row in 0..col {
            x[row] -= lu[[row, col]] * xc;
        }
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Singular);
    }
    Ok(x)
}

/// Solves the left fixed-point equation `pi P = pi` subject to the
/// normalization `sum_i pi_i w_i = 1`.
///
/// The balance system is rank-deficient by one for a chain with a single
/// recurrent class; replacing the last equation with the normalization
/// restores uniqueness.
pub fn stationary_with_weights(
    p: &Array2<f64>,
    weights: &Array1<f64>,
) -> Result<Array1<f64>, Singular> {
    let n = p.nrows();
    assert_eq!(p.ncols(), n);
    assert_eq!(weights.len(), n);

    // (I - P)^T pi^T = 0 with the last row swapped for the weights.
    let mut sys = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            sys[[i, j]] = -p[[j, i]];
        }
        sys[[i, i]] += 1.0;
    }
    for j in 0..n {
        sys[[n - 1, j]] = weights[j];
    }
    let mut rhs = Array1::<f64>::zeros(n);
    rhs[n - 1] = 1.0;

    lu_solve(&sys, &rhs)
}

/// Spectral radius of a non-negative matrix by power iteration.
///
/// Iterates on `a + I` (a strictly positive diagonal removes periodicity)
/// and subtracts the shift at the end. The start vector is a seeded random
/// positive vector so repeated runs are bit-identical.
pub fn spectral_radius(a: &Array2<f64>, rel_tol: f64, max_iter: usize, seed: u64) -> f64 {
    let n = a.nrows();
    assert_eq!(a.ncols(), n);
    if n == 0 {
        return 0.0;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v = Array1::from_shape_fn(n, |_| rng.gen_range(0.5..1.5));
    let norm: f64 = v.iter().sum();
    v.mapv_inplace(|x| x / norm);

    let mut lambda_prev = f64::NAN;
    for _ in 0..max_iter {
        // w = v (a + I)
        let mut w = v.dot(a);
        w += &v;
        let lambda: f64 = w.iter().sum();
        if lambda <= 0.0 {
            return 0.0;
        }
        w.mapv_inplace(|x| x / lambda);
        v = w;
        if lambda_prev.is_finite() && (lambda - lambda_prev).abs() <= rel_tol * lambda.abs() {
            return lambda - 1.0;
        }
        lambda_prev = lambda;
    }
    lambda_prev - 1.0
}

/// Largest absolute entry-wise difference between two matrices.
pub fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Largest absolute deviation of each row sum from one.
pub fn max_row_sum_error(a: &Array2<f64>) -> f64 {
    a.rows()
        .into_iter()
        .map(|row| (row.sum() - 1.0).abs())
        .fold(0.0, f64::max)
}
