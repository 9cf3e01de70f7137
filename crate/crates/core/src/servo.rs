//! Baseline servo controllers and the extended PI design with input and
//! output limits.
//!
//! The PI servo integrates the tracking error with an anti-windup input `v`,
//! `ė_yI = y_reg − y_cmd + v`, and the plant sees `u = u_bl + w` with
//! `u_bl = −K_I e_yI − K_P x_p`. Stacking `x = (e_yI, x_p)` and
//! `ũ = (v_bl + v, u_bl + w)` with `v_bl = −y_cmd` gives an LTI system of the
//! same shape as the proportional case, so the generic barrier policy applies
//! to the limited output `(u_bl, z_lim) = C_lim x`.

use nalgebra::{DMatrix, DVector};

use crate::cbf::{self, CbfDesign, ConstraintBox, PolynomialBank};
use crate::error::{Error, Result};
use crate::linalg::{self, rel_diff, set_block};
use crate::lti::{self, RelativeDegree, StateSpaceModel};
use crate::policy;
use crate::riccati::{self, CareSolution};

/// Agreement required between closed-form and generic sensitivity blocks.
pub const BLOCK_TOL: f64 = 1e-10;
/// Accepted deviation of the closed-loop DC gain from identity.
pub const DC_GAIN_TOL: f64 = 1e-8;

/// Integral/proportional split of a PI state-feedback gain.
#[derive(Debug, Clone, PartialEq)]
pub struct PiGains {
    pub k_i: DMatrix<f64>,
    pub k_p: DMatrix<f64>,
}

/// `u_bl = −K_x x + K_ff y_cmd`, optionally in PI form `K_x = (K_I K_P)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineController {
    k_x: DMatrix<f64>,
    k_ff: Option<DMatrix<f64>>,
    pi: Option<PiGains>,
}

impl BaselineController {
    /// Proportional baseline for `model`. Validates that `A − B K_x` is
    /// Hurwitz and, when the model has a regulated output, attaches the
    /// DC-unity feedforward gain.
    pub fn proportional(model: &StateSpaceModel, k_x: DMatrix<f64>) -> Result<Self> {
        if k_x.shape() != (model.m(), model.n()) {
            return Err(Error::dims("K_x", format!("{}×{}", model.m(), model.n()), format!("{:?}", k_x.shape())));
        }
        let verdict = lti::hurwitz(&(model.a() - model.b() * &k_x), lti::DEFAULT_HURWITZ_MARGIN)?;
        if !verdict.stable {
            return Err(Error::NotHurwitz { abscissa: verdict.abscissa });
        }
        let k_ff = match model.c_reg() {
            Some(_) => Some(feedforward_gain(model, &k_x)?),
            None => None,
        };
        Ok(Self { k_x, k_ff, pi: None })
    }

    pub fn k_x(&self) -> &DMatrix<f64> {
        &self.k_x
    }

    pub fn k_ff(&self) -> Option<&DMatrix<f64>> {
        self.k_ff.as_ref()
    }

    pub fn pi_gains(&self) -> Option<&PiGains> {
        self.pi.as_ref()
    }

    /// `−K_x x + K_ff y_cmd` (the feedforward term is skipped when absent).
    pub fn control(&self, x: &DVector<f64>, y_cmd: &DVector<f64>) -> DVector<f64> {
        let mut u = -(&self.k_x * x);
        if let Some(k_ff) = &self.k_ff {
            u += k_ff * y_cmd;
        }
        u
    }
}

/// `K_ff = (K_x I) [[A, B], [C_reg, D_reg]]⁻¹ (0; I)`, verified by evaluating
/// the closed-loop DC gain from command to regulated output.
pub fn feedforward_gain(model: &StateSpaceModel, k_x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (n, m) = (model.n(), model.m());
    let (c_reg, d_reg) = regulated(model)?;
    let mut servo = DMatrix::zeros(n + m, n + m);
    set_block(&mut servo, 0, 0, model.a());
    set_block(&mut servo, 0, n, model.b());
    set_block(&mut servo, n, 0, c_reg);
    set_block(&mut servo, n, n, d_reg);
    if !(linalg::condition_number(&servo) <= lti::SINGULAR_COND) {
        return Err(Error::SingularServoMatrix);
    }
    let inv = linalg::lu_inverse(&servo).ok_or(Error::SingularServoMatrix)?;
    let mut left = DMatrix::zeros(m, n + m);
    set_block(&mut left, 0, 0, k_x);
    set_block(&mut left, 0, n, &DMatrix::identity(m, m));
    let k_ff = left * inv.columns(n, m);
    let residual = (dc_gain(model, k_x, &k_ff)? - DMatrix::<f64>::identity(m, m)).amax();
    if !(residual <= DC_GAIN_TOL) {
        return Err(Error::DcGainMismatch { residual });
    }
    Ok(k_ff)
}

/// Closed-loop DC gain `G(0)` from `y_cmd` to `y_reg` under `u = −K_x x + K_ff y_cmd`.
pub fn dc_gain(model: &StateSpaceModel, k_x: &DMatrix<f64>, k_ff: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (c_reg, d_reg) = regulated(model)?;
    let a_cl = model.a() - model.b() * k_x;
    let x_ss = a_cl
        .lu()
        .solve(&(-(model.b() * k_ff)))
        .ok_or(Error::SingularServoMatrix)?;
    Ok((c_reg - d_reg * k_x) * x_ss + d_reg * k_ff)
}

fn regulated(model: &StateSpaceModel) -> Result<(&DMatrix<f64>, &DMatrix<f64>)> {
    match (model.c_reg(), model.d_reg()) {
        (Some(c), Some(d)) => Ok((c, d)),
        _ => Err(Error::InvalidArgument("model has no regulated output".into())),
    }
}

/// Error-integrator extension of a plant with regulated output:
/// returns `A = [[0, C_reg], [0, A_p]]` and the plant-input map `[D_reg; B_p]`.
pub fn integrator_extension(plant: &StateSpaceModel) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let (c_reg, d_reg) = regulated(plant)?;
    let (n, m) = (plant.n(), plant.m());
    let mut a = DMatrix::zeros(m + n, m + n);
    set_block(&mut a, 0, m, c_reg);
    set_block(&mut a, m, m, plant.a());
    let mut b_u = DMatrix::zeros(m + n, m);
    set_block(&mut b_u, 0, 0, d_reg);
    set_block(&mut b_u, m, 0, plant.b());
    Ok((a, b_u))
}

/// LQR design of `K = (K_I K_P)` for the error-integrator extended plant.
pub fn lqr_pi_design(plant: &StateSpaceModel, q_diag: &[f64], r_diag: &[f64]) -> Result<(BaselineController, CareSolution)> {
    let (n, m) = (plant.n(), plant.m());
    if q_diag.len() != n + m {
        return Err(Error::dims("Q weights", n + m, q_diag.len()));
    }
    if r_diag.len() != m {
        return Err(Error::dims("R weights", m, r_diag.len()));
    }
    if q_diag.iter().any(|&q| !(q >= 0.0)) {
        return Err(Error::InvalidArgument("Q weights must be nonnegative".into()));
    }
    if r_diag.iter().any(|&r| !(r > 0.0)) {
        return Err(Error::InvalidArgument("R weights must be positive".into()));
    }
    let (a, b_u) = integrator_extension(plant)?;
    let sol = riccati::solve_care(&a, &b_u, &linalg::diag(q_diag), &linalg::diag(r_diag))?;
    let k_i = sol.k.columns(0, m).clone_owned();
    let k_p = sol.k.columns(m, n).clone_owned();
    let controller = BaselineController {
        k_x: sol.k.clone(),
        k_ff: None,
        pi: Some(PiGains { k_i, k_p }),
    };
    Ok((controller, sol))
}

impl BaselineController {
    /// PI baseline from explicit gains; validates the extended closed loop.
    pub fn pi(plant: &StateSpaceModel, k_i: DMatrix<f64>, k_p: DMatrix<f64>) -> Result<Self> {
        let (n, m) = (plant.n(), plant.m());
        if k_i.shape() != (m, m) || k_p.shape() != (m, n) {
            return Err(Error::dims("PI gains", format!("{m}×{m}, {m}×{n}"), format!("{:?}, {:?}", k_i.shape(), k_p.shape())));
        }
        let (a, b_u) = integrator_extension(plant)?;
        let mut k_x = DMatrix::zeros(m, m + n);
        set_block(&mut k_x, 0, 0, &k_i);
        set_block(&mut k_x, 0, m, &k_p);
        let verdict = lti::hurwitz(&(a - b_u * &k_x), lti::DEFAULT_HURWITZ_MARGIN)?;
        if !verdict.stable {
            return Err(Error::NotHurwitz { abscissa: verdict.abscissa });
        }
        Ok(Self {
            k_x,
            k_ff: None,
            pi: Some(PiGains { k_i, k_p }),
        })
    }
}

/// Extended PI servo design with limits on `u_bl` and `z_lim`.
#[derive(Debug, Clone)]
pub struct ExtendedServoDesign {
    m: usize,
    k_i: DMatrix<f64>,
    k_p: DMatrix<f64>,
    k_x: DMatrix<f64>,
    a_ext: DMatrix<f64>,
    b_ext: DMatrix<f64>,
    b_u: DMatrix<f64>,
    c_lim_ext: DMatrix<f64>,
    lambda_u: DVector<f64>,
    h_u_plant: DMatrix<f64>,
    h_xp: DMatrix<f64>,
    h_u_tilde_inv_closed: DMatrix<f64>,
    k_cbf_closed: DMatrix<f64>,
    generic: CbfDesign,
    bx: ConstraintBox,
    r_z: RelativeDegree,
}

/// Inputs to [`build_extended`].
#[derive(Debug, Clone)]
pub struct ExtendedSpec<'a> {
    pub plant: &'a StateSpaceModel,
    pub k_i: &'a DMatrix<f64>,
    pub k_p: &'a DMatrix<f64>,
    /// One negative root per baseline-control channel (the diagonal of `Λ_u`).
    pub u_bl_roots: &'a [f64],
    /// Filter roots for `z_lim`, orders equal to its relative degree.
    pub z_bank: &'a PolynomialBank,
    pub u_box: &'a ConstraintBox,
    pub z_box: &'a ConstraintBox,
    pub zero_tol: f64,
}

pub fn build_extended(spec: &ExtendedSpec<'_>) -> Result<ExtendedServoDesign> {
    let plant = spec.plant;
    let (n, m) = (plant.n(), plant.m());
    if spec.k_i.shape() != (m, m) || spec.k_p.shape() != (m, n) {
        return Err(Error::dims(
            "PI gains",
            format!("{m}×{m}, {m}×{n}"),
            format!("{:?}, {:?}", spec.k_i.shape(), spec.k_p.shape()),
        ));
    }
    if spec.u_bl_roots.len() != m {
        return Err(Error::dims("u_bl roots", m, spec.u_bl_roots.len()));
    }
    if spec.u_box.len() != m || spec.z_box.len() != m {
        return Err(Error::dims("extended boxes", m, format!("{}, {}", spec.u_box.len(), spec.z_box.len())));
    }
    if !(linalg::condition_number(spec.k_i) <= lti::SINGULAR_COND) {
        return Err(Error::SingularKI);
    }
    let k_i_inv = linalg::lu_inverse(spec.k_i).ok_or(Error::SingularKI)?;

    let r_z = lti::relative_degree(plant, spec.zero_tol)?;
    let (a_ext, b_u) = integrator_extension(plant)?;
    let mut b_ext = DMatrix::zeros(m + n, 2 * m);
    set_block(&mut b_ext, 0, 0, &DMatrix::identity(m, m));
    set_block(&mut b_ext, 0, m, &b_u);
    let mut k_x = DMatrix::zeros(m, m + n);
    set_block(&mut k_x, 0, 0, spec.k_i);
    set_block(&mut k_x, 0, m, spec.k_p);
    let mut c_lim_ext = DMatrix::zeros(2 * m, m + n);
    set_block(&mut c_lim_ext, 0, 0, &(-&k_x));
    set_block(&mut c_lim_ext, m, m, plant.c_lim());

    // Generic construction on the stacked system.
    let ext_model = StateSpaceModel::new(a_ext.clone(), b_ext.clone(), c_lim_ext.clone())?;
    let r_ext = lti::relative_degree(&ext_model, spec.zero_tol)?;
    let expected: Vec<usize> = std::iter::repeat(1).take(m).chain(r_z.as_slice().iter().copied()).collect();
    if r_ext.as_slice() != expected.as_slice() {
        return Err(Error::InvalidArgument(format!(
            "extended relative degree {r_ext} differs from (1 … 1, r_z) = {}",
            RelativeDegree::new(expected, m + n)?
        )));
    }
    let mut roots: Vec<Vec<f64>> = spec.u_bl_roots.iter().map(|&l| vec![l]).collect();
    if spec.z_bank.channels() != m {
        return Err(Error::dims("z_lim bank channels", m, spec.z_bank.channels()));
    }
    roots.extend((0..m).map(|i| spec.z_bank.roots(i).to_vec()));
    let bank = PolynomialBank::new(roots)?;
    let generic = cbf::build_design(&ext_model, &bank, &r_ext)?;

    // Closed-form blocks.
    let z_design = cbf::build_design(plant, spec.z_bank, &r_z)?;
    let h_u_plant = z_design.h_u().clone();
    let h_xp = z_design.h_x().clone();
    let h_u_plant_inv = z_design.h_u_inv().clone();
    let lambda_u = DVector::from_column_slice(spec.u_bl_roots);
    let lambda_mat = DMatrix::from_diagonal(&lambda_u);

    let kxb = &k_x * &b_u;
    let mut h_u_tilde = DMatrix::zeros(2 * m, 2 * m);
    set_block(&mut h_u_tilde, 0, 0, &(-spec.k_i));
    set_block(&mut h_u_tilde, 0, m, &(-&kxb));
    set_block(&mut h_u_tilde, m, m, &h_u_plant);

    let mut h_x = DMatrix::zeros(2 * m, m + n);
    set_block(&mut h_x, 0, 0, &(&lambda_mat * &k_x - &k_x * &a_ext));
    set_block(&mut h_x, m, m, &h_xp);

    let mut h_inv = DMatrix::zeros(2 * m, 2 * m);
    set_block(&mut h_inv, 0, 0, &(-&k_i_inv));
    set_block(&mut h_inv, 0, m, &(-(&k_i_inv * &kxb * &h_u_plant_inv)));
    set_block(&mut h_inv, m, m, &h_u_plant_inv);

    let k_cbf_closed = closed_form_gain(spec.k_i, &k_i_inv, spec.k_p, &lambda_mat, &k_x, &a_ext, &b_u, &h_u_plant_inv, &h_xp);

    check_block("H_ũ", generic.h_u(), &h_u_tilde)?;
    check_block("H_x", generic.h_x(), &h_x)?;
    check_block("H_ũ⁻¹", generic.h_u_inv(), &h_inv)?;
    check_block("K_CBF", generic.k_cbf(), &k_cbf_closed)?;

    Ok(ExtendedServoDesign {
        m,
        k_i: spec.k_i.clone(),
        k_p: spec.k_p.clone(),
        k_x,
        a_ext,
        b_ext,
        b_u,
        c_lim_ext,
        lambda_u,
        h_u_plant,
        h_xp,
        h_u_tilde_inv_closed: h_inv,
        k_cbf_closed,
        generic,
        bx: spec.u_box.stack(spec.z_box),
        r_z,
    })
}

/// Explicit barrier gain on the extended state:
///
/// ```text
///   [ −K_I⁻¹ Λ_u K_I    K_I⁻¹ (−Λ_u K_P + K_x [C_reg − D_reg M; A_p − B_p M]) ]
///   [        0                          M                                    ]
/// ```
/// with `M = H_u⁻¹ H_xp`.
#[allow(clippy::too_many_arguments)]
fn closed_form_gain(
    k_i: &DMatrix<f64>,
    k_i_inv: &DMatrix<f64>,
    k_p: &DMatrix<f64>,
    lambda: &DMatrix<f64>,
    k_x: &DMatrix<f64>,
    a_ext: &DMatrix<f64>,
    b_u: &DMatrix<f64>,
    h_u_inv: &DMatrix<f64>,
    h_xp: &DMatrix<f64>,
) -> DMatrix<f64> {
    let m = k_i.nrows();
    let n = k_p.ncols();
    let feedback = h_u_inv * h_xp;
    // last n columns of A_ext − B_u (0 M)
    let replaced = a_ext.columns(m, n) - b_u * &feedback;
    let top_right = k_i_inv * (-(lambda * k_p) + k_x * replaced);
    let mut k = DMatrix::zeros(2 * m, m + n);
    set_block(&mut k, 0, 0, &(-(k_i_inv * lambda * k_i)));
    set_block(&mut k, 0, m, &top_right);
    set_block(&mut k, m, m, &feedback);
    k
}

fn check_block(what: &'static str, generic: &DMatrix<f64>, closed: &DMatrix<f64>) -> Result<()> {
    let error = rel_diff(generic, closed);
    if !(error <= BLOCK_TOL) {
        return Err(Error::BlockMismatch { what, error });
    }
    Ok(())
}

/// Barrier gain from the closed-form blocks, cross-checked against `H_ũ⁻¹ H_x`.
pub fn extended_cbf_gain(design: &ExtendedServoDesign) -> Result<DMatrix<f64>> {
    check_block("K_CBF", design.generic.k_cbf(), &design.k_cbf_closed)?;
    Ok(design.k_cbf_closed.clone())
}

/// Anti-windup and plant-input parts of the extended augmentation.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtendedPolicy {
    pub v: DVector<f64>,
    pub w: DVector<f64>,
    pub infeasible: Vec<usize>,
}

impl ExtendedServoDesign {
    pub fn m(&self) -> usize {
        self.m
    }

    /// Extended state dimension `m + n_p`.
    pub fn n(&self) -> usize {
        self.a_ext.nrows()
    }

    pub fn k_i(&self) -> &DMatrix<f64> {
        &self.k_i
    }

    pub fn k_p(&self) -> &DMatrix<f64> {
        &self.k_p
    }

    /// `K_x = (K_I K_P)`.
    pub fn k_x(&self) -> &DMatrix<f64> {
        &self.k_x
    }

    pub fn a_ext(&self) -> &DMatrix<f64> {
        &self.a_ext
    }

    /// `B̃ = [[I, D_reg], [0, B_p]]`.
    pub fn b_ext(&self) -> &DMatrix<f64> {
        &self.b_ext
    }

    /// Plant-input columns of `B̃`.
    pub fn b_u(&self) -> &DMatrix<f64> {
        &self.b_u
    }

    pub fn c_lim_ext(&self) -> &DMatrix<f64> {
        &self.c_lim_ext
    }

    pub fn lambda_u(&self) -> &DVector<f64> {
        &self.lambda_u
    }

    pub fn h_u_plant(&self) -> &DMatrix<f64> {
        &self.h_u_plant
    }

    pub fn h_xp(&self) -> &DMatrix<f64> {
        &self.h_xp
    }

    pub fn h_u_tilde(&self) -> &DMatrix<f64> {
        self.generic.h_u()
    }

    pub fn h_u_tilde_inv_closed(&self) -> &DMatrix<f64> {
        &self.h_u_tilde_inv_closed
    }

    pub fn h_x_ext(&self) -> &DMatrix<f64> {
        self.generic.h_x()
    }

    pub fn alpha_pi_ext(&self) -> &DVector<f64> {
        self.generic.alpha_pi()
    }

    /// The generic design on the stacked system.
    pub fn design(&self) -> &CbfDesign {
        &self.generic
    }

    /// Stacked `(u_bl, z_lim)` box.
    pub fn constraint_box(&self) -> &ConstraintBox {
        &self.bx
    }

    pub fn z_relative_degree(&self) -> &RelativeDegree {
        &self.r_z
    }

    /// Relative degree of the stacked limited output.
    pub fn relative_degree(&self) -> &RelativeDegree {
        self.generic.relative_degree()
    }

    /// `Ã_cl = A − B̃ K_CBF`.
    pub fn a_cl(&self) -> &DMatrix<f64> {
        self.generic.a_cl()
    }

    /// `u_bl = −K_x x`.
    pub fn baseline(&self, x_ext: &DVector<f64>) -> DVector<f64> {
        -(&self.k_x * x_ext)
    }

    /// `ũ_bl = (−y_cmd, u_bl)`.
    pub fn stacked_baseline(&self, u_bl: &DVector<f64>, y_cmd: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(2 * self.m, y_cmd.iter().map(|c| -c).chain(u_bl.iter().copied()))
    }
}

/// `π* = (v, w)` from the generic policy on the stacked system.
pub fn extended_policy(design: &ExtendedServoDesign, x_ext: &DVector<f64>, u_bl: &DVector<f64>, y_cmd: &DVector<f64>) -> ExtendedPolicy {
    let m = design.m;
    let u_tilde_bl = design.stacked_baseline(u_bl, y_cmd);
    let eval = policy::pi_star(&design.generic, &design.bx, x_ext, &u_tilde_bl);
    ExtendedPolicy {
        v: eval.pi.rows(0, m).clone_owned(),
        w: eval.pi.rows(m, m).clone_owned(),
        infeasible: eval.infeasible,
    }
}

/// Hard saturation `max(min, min(u, max))`, component-wise.
pub fn saturate(u: &DVector<f64>, bx: &ConstraintBox) -> DVector<f64> {
    DVector::from_iterator(
        u.len(),
        u.iter()
            .zip(bx.min().iter().zip(bx.max().iter()))
            .map(|(&v, (&lo, &hi))| lo.max(v.min(hi))),
    )
}
