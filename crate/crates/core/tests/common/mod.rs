//! Independent oracles and random fixtures shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use opcon_core::cbf::{self, CbfDesign, ConstraintBox, PolynomialBank};
use opcon_core::lti::{self, RelativeDegree, StateSpaceModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-scale..scale))
}

pub fn uniform_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(-scale..scale))
}

/// Random `(A, B, C)` with `C_i B = 0` on the channels flagged in `second_order`.
pub fn random_model(rng: &mut ChaCha8Rng, n: usize, m: usize, second_order: &[bool]) -> StateSpaceModel {
    let a = uniform(rng, n, n, 1.0);
    let b = uniform(rng, n, m, 1.0);
    let mut c = uniform(rng, m, n, 1.0);
    let proj = DMatrix::identity(n, n) - &b * (b.transpose() * &b).try_inverse().unwrap() * b.transpose();
    for (i, &flag) in second_order.iter().enumerate() {
        if flag {
            let row = c.row(i) * &proj;
            c.set_row(i, &row);
        }
    }
    StateSpaceModel::new(a, b, c).unwrap()
}

/// Random model, bank and design with `cond(H_u) ≤ max_cond`; retries until one qualifies.
pub fn random_design(rng: &mut ChaCha8Rng, max_cond: f64) -> (StateSpaceModel, CbfDesign) {
    loop {
        let n = rng.random_range(2..=6);
        let m = rng.random_range(1..=3.min(n));
        let flags: Vec<bool> = (0..m).map(|_| n > m && rng.random_bool(0.25)).collect();
        let model = random_model(rng, n, m, &flags);
        let Ok(r) = lti::relative_degree(&model, lti::DEFAULT_ZERO_TOL) else { continue };
        let roots = r.as_slice().iter().map(|&ri| (0..ri).map(|_| -rng.random_range(0.2..5.0)).collect()).collect();
        let bank = PolynomialBank::new(roots).unwrap();
        let Ok(design) = cbf::build_design(&model, &bank, &r) else { continue };
        if design.cond_h_u() <= max_cond {
            return (model, design);
        }
    }
}

pub fn random_box(rng: &mut ChaCha8Rng, m: usize) -> ConstraintBox {
    let lo = DVector::from_fn(m, |_, _| -rng.random_range(0.1..2.0));
    let hi = DVector::from_fn(m, |_, _| rng.random_range(0.1..2.0));
    ConstraintBox::new(lo, hi).unwrap()
}

/// Exhaustive active-set solver for
/// `min πᵀ H_uᵀH_u π` s.t. `α y_min ≤ H_x x + H_u(u_bl + π) ≤ α y_max`.
///
/// Every subset of the 2m inequality rows is treated as an equality system;
/// the cheapest primal-feasible candidate is the optimum of the strictly convex problem.
/// Each equality-constrained subproblem is solved in the null space of the active rows,
/// so the weight `H_uᵀH_u` is never formed; the winner is then polished by Newton steps on
/// its KKT system with residuals accumulated in double-double arithmetic.
pub fn qp_oracle(h_x: &DMatrix<f64>, h_u: &DMatrix<f64>, alpha: &DVector<f64>, bx: &ConstraintBox, x: &DVector<f64>, u_bl: &DVector<f64>) -> DVector<f64> {
    let m = h_u.nrows();
    let base = h_x * x + h_u * u_bl;
    let lo = alpha.component_mul(bx.min()) - &base;
    let hi = alpha.component_mul(bx.max()) - &base;
    let feasible = |p: &DVector<f64>| {
        let g = h_u * p;
        (0..m).all(|i| {
            let scale = 1e-9 * (1.0 + lo[i].abs() + hi[i].abs());
            g[i] >= lo[i] - scale && g[i] <= hi[i] + scale
        })
    };
    let mut best: Option<(f64, DVector<f64>, Vec<usize>, Vec<f64>)> = None;
    for mask in 0..(1usize << (2 * m)) {
        let mut rows = Vec::new();
        let mut rhs = Vec::new();
        let mut clash = false;
        for i in 0..m {
            let (min_on, max_on) = (mask >> (2 * i) & 1 == 1, mask >> (2 * i + 1) & 1 == 1);
            clash |= min_on && max_on;
            if min_on {
                rows.push(i);
                rhs.push(lo[i]);
            }
            if max_on {
                rows.push(i);
                rhs.push(hi[i]);
            }
        }
        if clash {
            continue;
        }
        let Some(p) = equality_min_norm(h_u, &rows, &rhs) else { continue };
        if !feasible(&p) {
            continue;
        }
        let cost = (h_u * &p).norm_squared();
        if best.as_ref().is_none_or(|(c, ..)| cost < *c) {
            best = Some((cost, p, rows, rhs));
        }
    }
    let (_, p, rows, rhs) = best.expect("box is nonempty so some candidate is feasible");
    polish_kkt(h_u, &rows, &rhs, p)
}

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

/// `Σ a_j (hi_j + lo_j)` as an unevaluated pair.
fn dd_dot(a: impl Iterator<Item = f64>, hi: &[f64], lo: &[f64]) -> (f64, f64) {
    let (mut s, mut c) = (0.0, 0.0);
    for (j, aj) in a.enumerate() {
        let p = aj * hi[j];
        let (s2, e) = two_sum(s, p);
        s = s2;
        c += e + aj.mul_add(hi[j], -p) + aj * lo[j];
    }
    two_sum(s, c)
}

/// Refines `π` for `min ‖Hπ‖²` s.t. `H[rows] π = rhs` through the KKT system
/// `[2HᵀH Gᵀ; G 0] (π, −μ) = (0, rhs)`.
fn polish_kkt(h: &DMatrix<f64>, rows: &[usize], rhs: &[f64], p: DVector<f64>) -> DVector<f64> {
    let (m, k) = (h.nrows(), rows.len());
    if k == 0 {
        return p;
    }
    let mut kkt = DMatrix::zeros(m + k, m + k);
    kkt.view_mut((0, 0), (m, m)).copy_from(&(h.transpose() * h * 2.0));
    for (r, &i) in rows.iter().enumerate() {
        for j in 0..m {
            kkt[(m + r, j)] = h[(i, j)];
            kkt[(j, m + r)] = h[(i, j)];
        }
    }
    let lu = kkt.lu();
    let mut z = DVector::zeros(m + k);
    z.rows_mut(0, m).copy_from(&p);
    let (zero, zero_k) = (vec![0.0; m], vec![0.0; k]);
    for _ in 0..4 {
        let pi: Vec<f64> = z.rows(0, m).iter().copied().collect();
        let w: Vec<(f64, f64)> = (0..m).map(|i| dd_dot(h.row(i).iter().copied(), &pi, &zero)).collect();
        let (w_hi, w_lo): (Vec<f64>, Vec<f64>) = w.into_iter().unzip();
        let mut res = DVector::zeros(m + k);
        let nu: Vec<f64> = z.rows(m, k).iter().copied().collect();
        for j in 0..m {
            let (a, b) = dd_dot(h.column(j).iter().map(|v| 2.0 * v), &w_hi, &w_lo);
            let (c, d) = dd_dot(rows.iter().map(|&i| h[(i, j)]), &nu, &zero_k);
            res[j] = -((a + c) + (b + d));
        }
        for (r, &i) in rows.iter().enumerate() {
            res[m + r] = (rhs[r] - w_hi[i]) - w_lo[i];
        }
        let Some(step) = lu.solve(&res) else { break };
        z += step;
    }
    z.rows(0, m).clone_owned()
}

/// `argmin ‖H π‖` subject to `H[rows] π = rhs`, or `None` if the active rows are dependent.
fn equality_min_norm(h: &DMatrix<f64>, rows: &[usize], rhs: &[f64]) -> Option<DVector<f64>> {
    let m = h.nrows();
    let k = rows.len();
    if k == 0 {
        return Some(DVector::zeros(m));
    }
    let mut g = DMatrix::zeros(m, m);
    let mut b = DVector::zeros(m);
    for (r, &i) in rows.iter().enumerate() {
        g.set_row(r, &h.row(i));
        b[r] = rhs[r];
    }
    let svd = g.svd(true, true);
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &c| svd.singular_values[c].total_cmp(&svd.singular_values[a]));
    let top = svd.singular_values[order[0]];
    if svd.singular_values[order[k - 1]] <= 1e-13 * top {
        return None;
    }
    let p0 = svd.solve(&b, 1e-13 * top).ok()?;
    if k == m {
        return Some(p0);
    }
    let v_t = svd.v_t.as_ref()?;
    let z = DMatrix::from_fn(m, m - k, |i, j| v_t[(order[k + j], i)]);
    let hz = h * &z;
    let tol = 1e-13 * hz.amax();
    let y = hz.svd(true, true).solve(&-(h * &p0), tol).ok()?;
    Some(p0 + z * y)
}

/// `x(t)` of `ẋ = A x + B u` for constant `u`, via the exponential of the augmented matrix.
pub fn forced_response(a: &DMatrix<f64>, b: &DMatrix<f64>, x0: &DVector<f64>, u: &DVector<f64>, t: f64) -> DVector<f64> {
    let (n, m) = (a.nrows(), b.ncols());
    let mut big = DMatrix::zeros(n + m, n + m);
    big.view_mut((0, 0), (n, n)).copy_from(a);
    big.view_mut((0, n), (n, m)).copy_from(b);
    let phi = (big * t).exp();
    let mut z = DVector::zeros(n + m);
    z.rows_mut(0, n).copy_from(x0);
    z.rows_mut(n, m).copy_from(u);
    (phi * z).rows(0, n).clone_owned()
}

/// Relative degree by measuring the leading power of the step response
/// `y_i(t) ~ t^r` from `y(2t)/y(t)` at small `t`.
pub fn relative_degree_oracle(model: &StateSpaceModel) -> Vec<usize> {
    let (n, m) = (model.n(), model.m());
    let t = 2e-3;
    (0..model.c_lim().nrows())
        .map(|i| {
            (0..m)
                .map(|j| {
                    let mut u = DVector::zeros(m);
                    u[j] = 1.0;
                    let x0 = DVector::zeros(n);
                    let y1 = (model.c_lim().row(i) * forced_response(model.a(), model.b(), &x0, &u, t))[0];
                    let y2 = (model.c_lim().row(i) * forced_response(model.a(), model.b(), &x0, &u, 2.0 * t))[0];
                    if y1.abs() < 1e-30 {
                        usize::MAX
                    } else {
                        (y2 / y1).abs().log2().round() as usize
                    }
                })
                .min()
                .unwrap()
        })
        .collect()
}

/// Characteristic polynomial coefficients `[1, c_1, …, c_n]` by Faddeev–LeVerrier.
pub fn char_poly(a: &DMatrix<f64>) -> Vec<f64> {
    let n = a.nrows();
    let mut coeffs = vec![1.0];
    let mut m = DMatrix::<f64>::zeros(n, n);
    for k in 1..=n {
        m = a * &m + DMatrix::identity(n, n) * coeffs[k - 1];
        let c = -(a * &m).trace() / k as f64;
        coeffs.push(c);
    }
    coeffs
}

/// Routh–Hurwitz test on a monic polynomial; `None` if a first-column pivot vanishes.
pub fn routh_stable(coeffs: &[f64]) -> Option<bool> {
    let n = coeffs.len() - 1;
    let mut rows: Vec<Vec<f64>> = vec![
        coeffs.iter().step_by(2).copied().collect(),
        coeffs.iter().skip(1).step_by(2).copied().collect(),
    ];
    let width = rows[0].len();
    for r in rows.iter_mut() {
        r.resize(width + 1, 0.0);
    }
    let scale = coeffs.iter().map(|c| c.abs()).fold(0.0, f64::max);
    for k in 2..=n {
        let (p, q) = (&rows[k - 2], &rows[k - 1]);
        if q[0].abs() <= 1e-14 * scale {
            return None;
        }
        let next: Vec<f64> = (0..width).map(|j| (q[0] * p[j + 1] - p[0] * q[j + 1]) / q[0]).chain([0.0]).collect();
        rows.push(next);
    }
    Some(rows.iter().take(n + 1).all(|r| r[0] > 0.0))
}

/// Decoupled-channel model `ẋ = Ax + Bu`, `y = x` with diagonal everything; handy for structural checks.
pub fn diagonal_model(a: &[f64], b: &[f64]) -> StateSpaceModel {
    let n = a.len();
    StateSpaceModel::new(
        DMatrix::from_diagonal(&DVector::from_row_slice(a)),
        DMatrix::from_diagonal(&DVector::from_row_slice(b)),
        DMatrix::identity(n, n),
    )
    .unwrap()
}

pub fn ones(m: usize, n: usize) -> RelativeDegree {
    RelativeDegree::new(vec![1; m], n).unwrap()
}

pub fn max_abs(v: &[DVector<f64>], i: usize) -> f64 {
    v.iter().map(|x| x[i].abs()).fold(0.0, f64::max)
}

/// Random plant with regulated output, LQR PI gains and an extended design.
/// Retries until every construction step succeeds.
pub fn random_servo_design(rng: &mut ChaCha8Rng) -> (StateSpaceModel, opcon_core::servo::ExtendedServoDesign) {
    use opcon_core::servo;
    loop {
        let n = 3;
        let m = rng.random_range(1..=2);
        let second: Vec<bool> = (0..m).map(|_| rng.random_bool(0.3)).collect();
        let base = random_model(rng, n, m, &second);
        let c_reg = uniform(rng, m, n, 1.0);
        let d_reg = if rng.random_bool(0.5) { DMatrix::zeros(m, m) } else { uniform(rng, m, m, 0.5) };
        let Ok(plant) = base.with_regulated(c_reg, d_reg) else { continue };
        let Ok((bl, _)) = servo::lqr_pi_design(&plant, &vec![1.0; n + m], &vec![1.0; m]) else { continue };
        let gains = bl.pi_gains().unwrap();
        let Ok(r_z) = lti::relative_degree(&plant, lti::DEFAULT_ZERO_TOL) else { continue };
        let roots = r_z.as_slice().iter().map(|&ri| (0..ri).map(|_| -rng.random_range(0.5..5.0)).collect()).collect();
        let z_bank = PolynomialBank::new(roots).unwrap();
        let u_roots: Vec<f64> = (0..m).map(|_| -rng.random_range(0.5..20.0)).collect();
        let u_box = random_box(rng, m);
        let z_box = random_box(rng, m);
        let spec = servo::ExtendedSpec {
            plant: &plant,
            k_i: &gains.k_i,
            k_p: &gains.k_p,
            u_bl_roots: &u_roots,
            z_bank: &z_bank,
            u_box: &u_box,
            z_box: &z_box,
            zero_tol: lti::DEFAULT_ZERO_TOL,
        };
        match servo::build_extended(&spec) {
            Ok(ext) => return (plant, ext),
            Err(opcon_core::Error::BlockMismatch { what, error }) => panic!("closed form disagrees on {what}: {error:e}"),
            Err(_) => continue,
        }
    }
}
