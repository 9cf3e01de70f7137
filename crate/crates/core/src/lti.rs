//! State-space models, Markov parameters, vector relative degree, matrix
//! polynomials and Hurwitz tests.

use nalgebra::linalg::Schur;
use nalgebra::{DMatrix, RowDVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Default relative zero tolerance for Markov-parameter tests.
pub const DEFAULT_ZERO_TOL: f64 = 1e-9;
/// Default margin for [`hurwitz`].
pub const DEFAULT_HURWITZ_MARGIN: f64 = 1e-9;
/// Condition number above which a control sensitivity matrix is rejected.
pub const SINGULAR_COND: f64 = 1e12;

/// Continuous-time LTI plant `ẋ = Ax + Bu` with a limited output
/// `y_lim = C_lim x` and an optional regulated output `y_reg = C_reg x + D_reg u`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpaceModel {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c_lim: DMatrix<f64>,
    c_reg: Option<DMatrix<f64>>,
    d_reg: Option<DMatrix<f64>>,
}

impl StateSpaceModel {
    /// Builds a model, checking that `A` is `n×n`, `B` is `n×m` and `C_lim` is `m×n`.
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, c_lim: DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        if !a.is_square() || n == 0 {
            return Err(Error::dims("A", "square, non-empty", format!("{:?}", a.shape())));
        }
        if b.nrows() != n || b.ncols() == 0 {
            return Err(Error::dims("B", format!("{n}×m"), format!("{:?}", b.shape())));
        }
        let m = b.ncols();
        if c_lim.shape() != (m, n) {
            return Err(Error::dims("C_lim", format!("{m}×{n}"), format!("{:?}", c_lim.shape())));
        }
        if a.iter().chain(b.iter()).chain(c_lim.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("model matrices must be finite".into()));
        }
        Ok(Self {
            a,
            b,
            c_lim,
            c_reg: None,
            d_reg: None,
        })
    }

    /// Attaches a regulated output map `y_reg = C_reg x + D_reg u`.
    pub fn with_regulated(mut self, c_reg: DMatrix<f64>, d_reg: DMatrix<f64>) -> Result<Self> {
        let (n, m) = (self.n(), self.m());
        if c_reg.shape() != (m, n) {
            return Err(Error::dims("C_reg", format!("{m}×{n}"), format!("{:?}", c_reg.shape())));
        }
        if d_reg.shape() != (m, m) {
            return Err(Error::dims("D_reg", format!("{m}×{m}"), format!("{:?}", d_reg.shape())));
        }
        self.c_reg = Some(c_reg);
        self.d_reg = Some(d_reg);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn c_lim(&self) -> &DMatrix<f64> {
        &self.c_lim
    }

    pub fn c_reg(&self) -> Option<&DMatrix<f64>> {
        self.c_reg.as_ref()
    }

    pub fn d_reg(&self) -> Option<&DMatrix<f64>> {
        self.d_reg.as_ref()
    }

    /// Controllability of `(A, B)` via the rank of `[B AB … A^{n-1}B]`
    /// with tolerance `n·ε·σ_max`.
    pub fn is_controllable(&self) -> bool {
        let n = self.n();
        let m = self.m();
        let mut ctrb = DMatrix::zeros(n, n * m);
        let mut blk = self.b.clone();
        for k in 0..n {
            ctrb.view_mut((0, k * m), (n, m)).copy_from(&blk);
            blk = &self.a * blk;
        }
        let sv = ctrb.svd(false, false).singular_values;
        let tol = n as f64 * f64::EPSILON * sv.max();
        sv.iter().filter(|&&s| s > tol).count() == n
    }
}

/// Vector relative degree of the limited output, one entry per channel.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelativeDegree(Vec<usize>);

impl RelativeDegree {
    pub fn new(r: Vec<usize>, n: usize) -> Result<Self> {
        if let Some((i, &ri)) = r.iter().enumerate().find(|(_, &ri)| ri == 0 || ri > n) {
            return Err(Error::InvalidArgument(format!(
                "relative degree of channel {i} is {ri}, must lie in 1..={n}"
            )));
        }
        Ok(Self(r))
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl std::fmt::Display for RelativeDegree {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|r| r.to_string()).collect();
        write!(f, "({})", parts.join(" "))
    }
}

/// Markov row `(C_lim)_channel · A^power · B`.
pub fn markov_row(model: &StateSpaceModel, channel: usize, power: usize) -> Result<RowDVector<f64>> {
    if channel >= model.m() {
        return Err(Error::IndexOutOfRange {
            what: "limited output channel",
            index: channel,
            len: model.m(),
        });
    }
    if power >= model.n() {
        return Err(Error::IndexOutOfRange {
            what: "Markov power",
            index: power,
            len: model.n(),
        });
    }
    let mut row = model.c_lim.row(channel).clone_owned();
    for _ in 0..power {
        row = &row * &model.a;
    }
    Ok(row * &model.b)
}

/// Vector relative degree of `y_lim` with respect to `u`.
///
/// A Markov row counts as zero when its norm does not exceed
/// `zero_tol · ‖C_lim‖ · ‖B‖ · max(1, ‖A‖)^{k-1}` (Frobenius norms).
pub fn relative_degree(model: &StateSpaceModel, zero_tol: f64) -> Result<RelativeDegree> {
    if !(zero_tol > 0.0) {
        return Err(Error::InvalidArgument(format!("zero_tol must be positive, got {zero_tol}")));
    }
    let n = model.n();
    let base = model.c_lim.norm() * model.b.norm();
    let a_scale = model.a.norm().max(1.0);
    let mut degrees = Vec::with_capacity(model.m());
    for i in 0..model.m() {
        let mut row = model.c_lim.row(i).clone_owned();
        let mut found = None;
        for k in 1..=n {
            let markov = &row * &model.b;
            let scale = base * a_scale.powi(k as i32 - 1);
            if markov.norm() > zero_tol * scale {
                found = Some(k);
                break;
            }
            row = &row * &model.a;
        }
        degrees.push(found.ok_or(Error::NoRelativeDegree { channel: i, n })?);
    }
    let r = RelativeDegree(degrees);
    let h_u = control_sensitivity(model, &r);
    let cond = linalg::condition_number(&h_u);
    if !(cond <= SINGULAR_COND) {
        return Err(Error::SingularHu { cond });
    }
    Ok(r)
}

/// Stacked first-appearing input coefficients `(C_lim)_i A^{r_i - 1} B`.
pub fn control_sensitivity(model: &StateSpaceModel, r: &RelativeDegree) -> DMatrix<f64> {
    let m = model.m();
    let mut h_u = DMatrix::zeros(r.len(), m);
    for (i, &ri) in r.as_slice().iter().enumerate() {
        let mut row = model.c_lim.row(i).clone_owned();
        for _ in 1..ri {
            row = &row * &model.a;
        }
        h_u.row_mut(i).copy_from(&(row * &model.b));
    }
    h_u
}

/// `∏_j (A − λ_j I)` over the given strictly negative roots.
pub fn matrix_polynomial(a: &DMatrix<f64>, roots: &[f64]) -> Result<DMatrix<f64>> {
    if !a.is_square() {
        return Err(Error::dims("matrix_polynomial", "square", format!("{:?}", a.shape())));
    }
    let n = a.nrows();
    let eye = DMatrix::<f64>::identity(n, n);
    let mut acc = eye.clone();
    for &root in roots {
        if !(root < 0.0) || !root.is_finite() {
            return Err(Error::NonNegativeRoot { root });
        }
        acc = acc * (a - &eye * root);
    }
    Ok(acc)
}

/// Eigenvalues of a general real square matrix.
pub fn eigenvalues(m: &DMatrix<f64>) -> Result<Vec<Complex64>> {
    if !m.is_square() {
        return Err(Error::dims("eigenvalues", "square", format!("{:?}", m.shape())));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::EigenFailure);
    }
    let schur = Schur::try_new(m.clone(), f64::EPSILON, 10_000).ok_or(Error::EigenFailure)?;
    Ok(schur.complex_eigenvalues().iter().copied().collect())
}

/// Outcome of a Hurwitz test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HurwitzVerdict {
    pub stable: bool,
    /// Largest real part among the eigenvalues.
    pub abscissa: f64,
}

/// `stable` iff every eigenvalue has real part below `-margin_tol`.
pub fn hurwitz(m: &DMatrix<f64>, margin_tol: f64) -> Result<HurwitzVerdict> {
    let eig = eigenvalues(m)?;
    let abscissa = eig.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
    Ok(HurwitzVerdict {
        stable: abscissa < -margin_tol,
        abscissa,
    })
}
