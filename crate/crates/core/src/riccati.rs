//! Continuous algebraic Riccati equation by Newton–Kleinman iteration.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg;
use crate::lti;

const MAX_ITER: usize = 100;
const CONVERGENCE_RATIO: f64 = 1e-12;
/// Accepted CARE residual, relative to `max(1, ‖Q‖)`.
pub const RESIDUAL_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct CareSolution {
    /// Stabilizing solution `P = Pᵀ ⪰ 0`.
    pub p: DMatrix<f64>,
    /// Optimal gain `K = R⁻¹BᵀP`.
    pub k: DMatrix<f64>,
    /// `‖AᵀP + PA − PBR⁻¹BᵀP + Q‖`.
    pub residual: f64,
    pub iterations: usize,
}

/// `AᵀP + PA − PBR⁻¹BᵀP + Q`.
pub fn care_residual(a: &DMatrix<f64>, b: &DMatrix<f64>, q: &DMatrix<f64>, r_inv: &DMatrix<f64>, p: &DMatrix<f64>) -> DMatrix<f64> {
    a.transpose() * p + p * a - p * b * r_inv * b.transpose() * p + q
}

/// PBH test on the eigenvalues with nonnegative real part.
pub fn is_stabilizable(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<bool> {
    let n = a.nrows();
    let ac = linalg::to_complex(a);
    let bc = linalg::to_complex(b);
    for lambda in lti::eigenvalues(a)? {
        if lambda.re < -1e-9 {
            continue;
        }
        let mut pbh = DMatrix::<Complex64>::zeros(n, n + b.ncols());
        pbh.view_mut((0, 0), (n, n))
            .copy_from(&(&ac - DMatrix::<Complex64>::identity(n, n) * lambda));
        pbh.view_mut((0, n), (n, b.ncols())).copy_from(&bc);
        let sv = pbh.svd(false, false).singular_values;
        let tol = (n + b.ncols()) as f64 * f64::EPSILON * sv.max().max(1.0) * 10.0;
        if sv.iter().filter(|&&s| s > tol).count() < n {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Stabilizing gain from the shifted Lyapunov equation
/// `(A + βI)Z + Z(A + βI)ᵀ = 2BBᵀ`, `K₀ = BᵀZ⁻¹`.
fn bootstrap_gain(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let eig = lti::eigenvalues(a)?;
    let min_re = eig.iter().map(|z| z.re).fold(f64::INFINITY, f64::min);
    let max_re = eig.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
    if max_re < -1e-9 {
        return Ok(DMatrix::zeros(b.ncols(), n));
    }
    let beta = 1.0 + (-min_re).max(0.0);
    let shifted = -(a + DMatrix::<f64>::identity(n, n) * beta);
    let z = linalg::lyapunov(&shifted, &(b * b.transpose() * 2.0))?;
    let z_inv = z.cholesky().map(|c| c.inverse()).ok_or(Error::NonStabilizable)?;
    Ok(b.transpose() * z_inv)
}

/// Solves `AᵀP + PA − PBR⁻¹BᵀP + Q = 0` for the stabilizing `P`.
pub fn solve_care(a: &DMatrix<f64>, b: &DMatrix<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<CareSolution> {
    let n = a.nrows();
    let m = b.ncols();
    if !a.is_square() || b.nrows() != n {
        return Err(Error::dims("CARE (A, B)", format!("{n}×{n}, {n}×m"), format!("{:?}, {:?}", a.shape(), b.shape())));
    }
    if q.shape() != (n, n) || r.shape() != (m, m) {
        return Err(Error::dims("CARE (Q, R)", format!("{n}×{n}, {m}×{m}"), format!("{:?}, {:?}", q.shape(), r.shape())));
    }
    let r_inv = r
        .clone()
        .cholesky()
        .map(|c| c.inverse())
        .ok_or_else(|| Error::InvalidArgument("R must be symmetric positive definite".into()))?;
    if !is_stabilizable(a, b)? {
        return Err(Error::NonStabilizable);
    }

    let mut k = bootstrap_gain(a, b)?;
    if !lti::hurwitz(&(a - b * &k), 0.0)?.stable {
        return Err(Error::NonStabilizable);
    }
    let q_scale = q.norm().max(1.0);
    let mut p = DMatrix::zeros(n, n);
    let mut iterations = 0;
    for it in 1..=MAX_ITER {
        iterations = it;
        let a_k = a - b * &k;
        let rhs = q + k.transpose() * r * &k;
        let p_next = linalg::lyapunov(&a_k.transpose(), &rhs)?;
        let step = (&p_next - &p).norm() / p_next.norm().max(f64::MIN_POSITIVE);
        p = p_next;
        k = &r_inv * b.transpose() * &p;
        let residual = care_residual(a, b, q, &r_inv, &p).norm();
        if step < CONVERGENCE_RATIO || residual / q_scale < CONVERGENCE_RATIO {
            break;
        }
    }
    let residual = care_residual(a, b, q, &r_inv, &p).norm();
    if !(residual <= RESIDUAL_TOL * q_scale) {
        return Err(Error::RiccatiNoConvergence { iterations, residual });
    }
    let verdict = lti::hurwitz(&(a - b * &k), 0.0)?;
    if !verdict.stable {
        return Err(Error::NotHurwitz { abscissa: verdict.abscissa });
    }
    Ok(CareSolution {
        p,
        k,
        residual,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_integrator() {
        let one = DMatrix::from_element(1, 1, 1.0);
        let sol = solve_care(&DMatrix::zeros(1, 1), &one, &one, &one).unwrap();
        assert!((sol.p[(0, 0)] - 1.0).abs() < 1e-12);
        assert!((sol.k[(0, 0)] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn unstable_scalar() {
        // a = 1, b = 1, q = 1, r = 1: p² − 2p − 1 = 0 → p = 1 + √2
        let one = DMatrix::from_element(1, 1, 1.0);
        let sol = solve_care(&one, &one, &one, &one).unwrap();
        assert!((sol.p[(0, 0)] - (1.0 + 2f64.sqrt())).abs() < 1e-12);
    }

    #[test]
    fn double_integrator() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        let b = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let q = DMatrix::<f64>::identity(2, 2);
        let r = DMatrix::from_element(1, 1, 1.0);
        let sol = solve_care(&a, &b, &q, &r).unwrap();
        // known: K = [1, √3]
        assert!((sol.k[(0, 0)] - 1.0).abs() < 1e-10);
        assert!((sol.k[(0, 1)] - 3f64.sqrt()).abs() < 1e-10);
    }

    #[test]
    fn uncontrollable_unstable_mode_rejected() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        let b = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let q = DMatrix::<f64>::identity(2, 2);
        let r = DMatrix::from_element(1, 1, 1.0);
        assert_eq!(solve_care(&a, &b, &q, &r), Err(Error::NonStabilizable));
    }

    #[test]
    fn rejects_indefinite_r() {
        let one = DMatrix::from_element(1, 1, 1.0);
        assert!(solve_care(&one, &one, &one, &(-one.clone())).is_err());
    }
}
