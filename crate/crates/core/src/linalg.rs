//! Small dense linear-algebra helpers shared across the crate.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Relative discrepancy `‖a − b‖ / max(1, ‖a‖)` in the Frobenius norm.
pub fn rel_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / a.norm().max(1.0)
}

/// 2-norm condition number from singular values. Returns `inf` when singular.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.max();
    let min = sv.min();
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Numerical rank with tolerance `max(rows, cols) · ε · σ_max`.
pub fn rank(m: &DMatrix<f64>) -> usize {
    let sv = m.clone().svd(false, false).singular_values;
    let tol = m.nrows().max(m.ncols()) as f64 * f64::EPSILON * sv.max();
    sv.iter().filter(|&&s| s > tol).count()
}

/// Inverse via LU with partial pivoting.
pub fn lu_inverse(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    if !m.is_square() {
        return None;
    }
    m.clone().lu().try_inverse()
}

/// Solves `a·X + X·aᵀ + q = 0` through the Kronecker-vectorized linear system.
///
/// Intended for the small state dimensions handled here (n up to a few tens).
pub fn lyapunov(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if !a.is_square() || q.shape() != (n, n) {
        return Err(Error::dims("lyapunov", format!("{n}x{n}"), format!("{:?}", q.shape())));
    }
    let eye = DMatrix::<f64>::identity(n, n);
    // vec(aX) = (I ⊗ a) vec X, vec(X aᵀ) = (a ⊗ I) vec X   (column-major vec)
    let op = eye.kronecker(a) + a.kronecker(&eye);
    let rhs = DVector::from_column_slice((-q).as_slice());
    let sol = op
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::InvalidArgument("Lyapunov operator is singular".into()))?;
    let x = DMatrix::from_column_slice(n, n, sol.as_slice());
    Ok((&x + x.transpose()) * 0.5)
}

/// Solves the complex system `m·X = rhs`, failing when the pivot growth
/// indicates a numerically singular `m`.
pub fn complex_solve(m: DMatrix<Complex64>, rhs: &DMatrix<Complex64>) -> Option<DMatrix<Complex64>> {
    let scale = m.iter().map(|z| z.norm()).fold(0.0_f64, f64::max).max(1e-300);
    let lu = m.lu();
    let u = lu.u();
    let min_pivot = u.diagonal().iter().map(|z| z.norm()).fold(f64::INFINITY, f64::min);
    if !(min_pivot > 1e-13 * scale) {
        return None;
    }
    lu.solve(rhs)
}

/// Builds an `n×n` diagonal matrix from a slice.
pub fn diag(values: &[f64]) -> DMatrix<f64> {
    DMatrix::from_diagonal(&DVector::from_column_slice(values))
}

/// Copies `src` into `dst` with its top-left corner at `(r, c)`.
pub fn set_block(dst: &mut DMatrix<f64>, r: usize, c: usize, src: &DMatrix<f64>) {
    dst.view_mut((r, c), src.shape()).copy_from(src);
}

pub fn to_complex(m: &DMatrix<f64>) -> DMatrix<Complex64> {
    m.map(|v| Complex64::new(v, 0.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lyapunov_scalar() {
        // -2x + 1 = 0 for a = -1, q = 1
        let x = lyapunov(&DMatrix::from_element(1, 1, -1.0), &DMatrix::from_element(1, 1, 1.0)).unwrap();
        assert!((x[(0, 0)] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn lyapunov_residual_small() {
        let a = DMatrix::from_row_slice(3, 3, &[-1.0, 2.0, 0.0, -0.5, -3.0, 1.0, 0.2, 0.0, -2.0]);
        let q = DMatrix::<f64>::identity(3, 3);
        let x = lyapunov(&a, &q).unwrap();
        let res = &a * &x + &x * a.transpose() + &q;
        assert!(res.norm() < 1e-12);
    }

    #[test]
    fn rank_and_condition() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        assert_eq!(rank(&m), 1);
        assert!(condition_number(&DMatrix::<f64>::identity(3, 3)) - 1.0 < 1e-14);
    }
}
