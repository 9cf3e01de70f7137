//! Modified-output machinery: stable polynomial banks, state and control
//! sensitivity matrices, the bound scaling `α_π`, and the barrier feedback gain.
//!
//! Each limited channel `i` with relative degree `r_i` is filtered through
//! `φ_i(s) = ∏_j (s − λ_ij)`. The filtered output is affine in the control,
//! `Y_lim = H_x x + H_u u`, and the box `y_min ≤ y_lim ≤ y_max` becomes
//! `α_π y_min ≤ Y_lim ≤ α_π y_max` with `α_π = diag(∏_j (−λ_ij))`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::lti::{self, RelativeDegree, StateSpaceModel};

/// Condition number of `H_u` above which a design is flagged (but kept).
pub const WARN_COND: f64 = 1e8;

/// Per-channel strictly negative real roots of the stable filters `φ_i(s)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolynomialBank {
    roots: Vec<Vec<f64>>,
}

impl PolynomialBank {
    pub fn new(roots: Vec<Vec<f64>>) -> Result<Self> {
        for channel in &roots {
            if channel.is_empty() {
                return Err(Error::InvalidArgument("every channel needs at least one root".into()));
            }
            if let Some(&root) = channel.iter().find(|&&r| !(r < 0.0) || !r.is_finite()) {
                return Err(Error::NonNegativeRoot { root });
            }
        }
        Ok(Self { roots })
    }

    /// Inverts `c_i0 = ∏ (−λ_ij)` with a repeated root `λ = −c_i0^{1/r_i}`.
    ///
    /// For `r_i = 1` this is `λ = −c_i0`, for `r_i = 2` it is `λ = −√c_i0`.
    pub fn from_alpha(alpha: &[f64], r: &RelativeDegree) -> Result<Self> {
        if alpha.len() != r.len() {
            return Err(Error::dims("alpha_pi targets", r.len(), alpha.len()));
        }
        let roots = alpha
            .iter()
            .zip(r.as_slice())
            .map(|(&c0, &ri)| {
                if !(c0 > 0.0) || !c0.is_finite() {
                    return Err(Error::InvalidArgument(format!("alpha_pi entry {c0} must be positive")));
                }
                let root = match ri {
                    1 => -c0,
                    2 => -c0.sqrt(),
                    _ => -c0.powf(1.0 / ri as f64),
                };
                Ok(vec![root; ri])
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(roots)
    }

    pub fn channels(&self) -> usize {
        self.roots.len()
    }

    pub fn roots(&self, channel: usize) -> &[f64] {
        &self.roots[channel]
    }

    /// Zero-order coefficient `c_i0 = ∏_j (−λ_ij)` for each channel.
    pub fn alpha(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.roots.len(),
            self.roots.iter().map(|rs| rs.iter().map(|&l| -l).product::<f64>()),
        )
    }

    /// Coefficients `c_i0 … c_ir` (ascending powers) of `φ_i(s)`.
    pub fn coefficients(&self, channel: usize) -> Vec<f64> {
        let mut coeffs = vec![1.0];
        for &lambda in &self.roots[channel] {
            // multiply by (s − λ)
            let mut next = vec![0.0; coeffs.len() + 1];
            for (k, &c) in coeffs.iter().enumerate() {
                next[k + 1] += c;
                next[k] -= lambda * c;
            }
            coeffs = next;
        }
        coeffs
    }

    pub fn check_orders(&self, r: &RelativeDegree) -> Result<()> {
        if self.channels() != r.len() {
            return Err(Error::dims("polynomial bank channels", r.len(), self.channels()));
        }
        for (i, (roots, &ri)) in self.roots.iter().zip(r.as_slice()).enumerate() {
            if roots.len() != ri {
                return Err(Error::InvalidArgument(format!(
                    "channel {i}: bank has {} roots but relative degree is {ri}",
                    roots.len()
                )));
            }
        }
        Ok(())
    }
}

/// Component-wise box `y_min < y_max`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintBox {
    min: DVector<f64>,
    max: DVector<f64>,
}

impl ConstraintBox {
    pub fn new(min: DVector<f64>, max: DVector<f64>) -> Result<Self> {
        if min.len() != max.len() {
            return Err(Error::dims("constraint box", min.len(), max.len()));
        }
        for i in 0..min.len() {
            if !(min[i] < max[i]) || !min[i].is_finite() || !max[i].is_finite() {
                return Err(Error::InvalidBox {
                    channel: i,
                    min: min[i],
                    max: max[i],
                });
            }
        }
        Ok(Self { min, max })
    }

    pub fn symmetric(half_width: &[f64]) -> Result<Self> {
        let max = DVector::from_column_slice(half_width);
        Self::new(-&max, max)
    }

    /// Stacks two boxes (used for the `(u_bl, z_lim)` extended limits).
    pub fn stack(&self, other: &ConstraintBox) -> ConstraintBox {
        let cat = |a: &DVector<f64>, b: &DVector<f64>| {
            DVector::from_iterator(a.len() + b.len(), a.iter().chain(b.iter()).copied())
        };
        ConstraintBox {
            min: cat(&self.min, &other.min),
            max: cat(&self.max, &other.max),
        }
    }

    pub fn len(&self) -> usize {
        self.min.len()
    }

    pub fn is_empty(&self) -> bool {
        self.min.is_empty()
    }

    pub fn min(&self) -> &DVector<f64> {
        &self.min
    }

    pub fn max(&self) -> &DVector<f64> {
        &self.max
    }

    pub fn span(&self) -> DVector<f64> {
        &self.max - &self.min
    }

    pub fn center(&self) -> DVector<f64> {
        (&self.max + &self.min) * 0.5
    }

    pub fn scaled(&self, s: f64) -> ConstraintBox {
        ConstraintBox {
            min: &self.min * s,
            max: &self.max * s,
        }
    }
}

/// A validated barrier augmentation design.
#[derive(Debug, Clone, PartialEq)]
pub struct CbfDesign {
    h_x: DMatrix<f64>,
    h_u: DMatrix<f64>,
    h_u_inv: DMatrix<f64>,
    alpha_pi: DVector<f64>,
    k_cbf: DMatrix<f64>,
    a_cl: DMatrix<f64>,
    cond_h_u: f64,
    relative_degree: RelativeDegree,
    bank: PolynomialBank,
}

/// Assembles `H_x`, `H_u`, `α_π`, `K_CBF = H_u⁻¹ H_x` and `A_cl = A − B K_CBF`.
pub fn build_design(model: &StateSpaceModel, bank: &PolynomialBank, r: &RelativeDegree) -> Result<CbfDesign> {
    if r.len() != model.m() {
        return Err(Error::dims("relative degree", model.m(), r.len()));
    }
    bank.check_orders(r)?;
    let n = model.n();
    let mut h_x = DMatrix::zeros(model.m(), n);
    for i in 0..model.m() {
        let phi = lti::matrix_polynomial(model.a(), bank.roots(i))?;
        h_x.row_mut(i).copy_from(&(model.c_lim().row(i) * phi));
    }
    let h_u = lti::control_sensitivity(model, r);
    let cond_h_u = linalg::condition_number(&h_u);
    if !(cond_h_u <= lti::SINGULAR_COND) {
        return Err(Error::SingularHu { cond: cond_h_u });
    }
    if cond_h_u > WARN_COND {
        log::warn!("control sensitivity matrix is ill-conditioned (cond {cond_h_u:.3e})");
    }
    let h_u_inv = linalg::lu_inverse(&h_u).ok_or(Error::SingularHu { cond: cond_h_u })?;
    let k_cbf = &h_u_inv * &h_x;
    let a_cl = model.a() - model.b() * &k_cbf;
    Ok(CbfDesign {
        h_x,
        h_u,
        h_u_inv,
        alpha_pi: bank.alpha(),
        k_cbf,
        a_cl,
        cond_h_u,
        relative_degree: r.clone(),
        bank: bank.clone(),
    })
}

impl CbfDesign {
    pub fn channels(&self) -> usize {
        self.h_u.nrows()
    }

    pub fn h_x(&self) -> &DMatrix<f64> {
        &self.h_x
    }

    pub fn h_u(&self) -> &DMatrix<f64> {
        &self.h_u
    }

    pub fn h_u_inv(&self) -> &DMatrix<f64> {
        &self.h_u_inv
    }

    /// Diagonal of `α_π`.
    pub fn alpha_pi(&self) -> &DVector<f64> {
        &self.alpha_pi
    }

    pub fn k_cbf(&self) -> &DMatrix<f64> {
        &self.k_cbf
    }

    /// Closed-loop matrix under full barrier feedback.
    pub fn a_cl(&self) -> &DMatrix<f64> {
        &self.a_cl
    }

    pub fn cond_h_u(&self) -> f64 {
        self.cond_h_u
    }

    /// True when `H_u` is usable but its condition number exceeds [`WARN_COND`].
    pub fn ill_conditioned(&self) -> bool {
        self.cond_h_u > WARN_COND
    }

    pub fn relative_degree(&self) -> &RelativeDegree {
        &self.relative_degree
    }

    pub fn bank(&self) -> &PolynomialBank {
        &self.bank
    }

    /// Modified box `(α_π y_min, α_π y_max)`.
    pub fn modified_box(&self, bx: &ConstraintBox) -> (DVector<f64>, DVector<f64>) {
        (
            self.alpha_pi.component_mul(bx.min()),
            self.alpha_pi.component_mul(bx.max()),
        )
    }
}

/// `‖H_u (H_uᵀ H_u)⁻¹ H_uᵀ − I‖`: how far the cost weight `R_π = H_uᵀH_u`
/// is from decoupling the multiplier equations.
///
/// Evaluated as `‖(H_u H_u⁻¹)(H_u H_u⁻¹)ᵀ − I‖` with the stored inverse, since
/// `R_π⁻¹ = H_u⁻¹H_u⁻ᵀ`; forming `R_π` explicitly would square the condition number.
pub fn weight_identity_check(design: &CbfDesign) -> f64 {
    let m = design.h_u().nrows();
    let y = design.h_u() * design.h_u_inv();
    (&y * y.transpose() - DMatrix::<f64>::identity(m, m)).norm()
}

/// `Y_lim = H_x x + H_u u`.
pub fn modified_output(design: &CbfDesign, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
    design.h_x() * x + design.h_u() * u
}
