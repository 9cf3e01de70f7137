//! Loop gains at the plant-input breakpoint with frozen constraint
//! activation, SISO and disk margins, and exhaustive activation sweeps.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::cbf::CbfDesign;
use crate::error::{Error, Result};
use crate::linalg::{self, set_block};
use crate::lti;
use crate::servo::ExtendedServoDesign;

/// Largest number of limited channels the sweep will enumerate.
pub const MAX_SWEEP_CHANNELS: usize = 16;
const REFINE_STEPS: usize = 20;

/// Frozen-activation loop `L(s) = K_eff (sI − A)⁻¹ B`.
#[derive(Debug, Clone, PartialEq)]
pub struct LoopGainModel {
    pub k_eff: DMatrix<f64>,
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    /// Activation bitstring, channel 0 first.
    pub label: String,
}

impl LoopGainModel {
    pub fn new(k_eff: DMatrix<f64>, a: DMatrix<f64>, b: DMatrix<f64>, label: impl Into<String>) -> Result<Self> {
        let n = a.nrows();
        if !a.is_square() || b.nrows() != n || k_eff.shape() != (b.ncols(), n) {
            return Err(Error::dims(
                "loop gain (K, A, B)",
                format!("m×{n}, {n}×{n}, {n}×m"),
                format!("{:?}, {:?}, {:?}", k_eff.shape(), a.shape(), b.shape()),
            ));
        }
        if k_eff.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("K_eff has non-finite entries".into()));
        }
        Ok(Self {
            k_eff,
            a,
            b,
            label: label.into(),
        })
    }

    pub fn inputs(&self) -> usize {
        self.b.ncols()
    }

    /// `A − B K_eff`.
    pub fn closed_loop(&self) -> DMatrix<f64> {
        &self.a - &self.b * &self.k_eff
    }
}

/// `(jωI − A)⁻¹ rhs`.
fn resolvent_apply(a: &DMatrix<f64>, rhs: &DMatrix<f64>, omega: f64) -> Result<DMatrix<Complex64>> {
    let n = a.nrows();
    let m = DMatrix::<Complex64>::identity(n, n) * Complex64::new(0.0, omega) - linalg::to_complex(a);
    linalg::complex_solve(m, &linalg::to_complex(rhs)).ok_or(Error::ResolventSingular { omega })
}

/// `K_eff (jωI − A)⁻¹ B`.
pub fn loop_gain_at(model: &LoopGainModel, omega: f64) -> Result<DMatrix<Complex64>> {
    Ok(linalg::to_complex(&model.k_eff) * resolvent_apply(&model.a, &model.b, omega)?)
}

fn pattern_label(pattern: &[bool]) -> String {
    pattern.iter().map(|&d| if d { '1' } else { '0' }).collect()
}

/// What the activation pattern is applied to.
#[derive(Debug, Clone, Copy)]
pub enum LoopTarget<'a> {
    /// State feedback `u_bl = −K_x x` on `(A, B)` with barrier design on the same channels.
    Proportional { design: &'a CbfDesign, a: &'a DMatrix<f64>, b: &'a DMatrix<f64>, k_x: &'a DMatrix<f64> },
    /// Extended PI servo; the pattern covers `(u_bl, z_lim)`.
    Extended(&'a ExtendedServoDesign),
}

impl LoopTarget<'_> {
    pub fn pattern_len(&self) -> usize {
        match self {
            LoopTarget::Proportional { design, .. } => design.channels(),
            LoopTarget::Extended(d) => 2 * d.m(),
        }
    }
}

/// Frozen-pattern loop model.
///
/// Proportional case: `K_eff = (I − H_u⁻¹δH_u)K_x + H_u⁻¹δH_x`.
///
/// Extended case: with `E = (0; I)` and commands zeroed the stacked control is
/// `ũ = −G x`, `G = (I − H_ũ⁻¹δ̃H_ũ) E K_x + H_ũ⁻¹δ̃H_x`. The plant-input rows
/// of `G` are the loop gain; the anti-windup rows stay closed inside the loop
/// dynamics, `A = A_ext − (I; 0) G_v`.
pub fn effective_gain(target: &LoopTarget<'_>, pattern: &[bool]) -> Result<LoopGainModel> {
    let p = target.pattern_len();
    if pattern.len() != p {
        return Err(Error::dims("activation pattern", p, pattern.len()));
    }
    let delta = DMatrix::from_diagonal(&DVector::from_iterator(p, pattern.iter().map(|&d| if d { 1.0 } else { 0.0 })));
    let label = pattern_label(pattern);
    match *target {
        LoopTarget::Proportional { design, a, b, k_x } => {
            if k_x.shape() != (p, a.nrows()) {
                return Err(Error::dims("K_x", format!("{p}×{}", a.nrows()), format!("{:?}", k_x.shape())));
            }
            let hd = design.h_u_inv() * &delta;
            let k_eff = (DMatrix::identity(p, p) - &hd * design.h_u()) * k_x + hd * design.h_x();
            LoopGainModel::new(k_eff, a.clone(), b.clone(), label)
        }
        LoopTarget::Extended(ext) => {
            let m = ext.m();
            let n = ext.n();
            let generic = ext.design();
            let mut e_kx = DMatrix::zeros(2 * m, n);
            set_block(&mut e_kx, m, 0, ext.k_x());
            let hd = generic.h_u_inv() * &delta;
            let g = (DMatrix::identity(2 * m, 2 * m) - &hd * generic.h_u()) * e_kx + hd * generic.h_x();
            let mut b_v = DMatrix::zeros(n, m);
            set_block(&mut b_v, 0, 0, &DMatrix::identity(m, m));
            let a = ext.a_ext() - b_v * g.rows(0, m);
            LoopGainModel::new(g.rows(m, m).clone_owned(), a, ext.b_u().clone(), label)
        }
    }
}

/// `δ = (0 I) H_ũ⁻¹ δ̃`, the plant-input rows of the active-constraint map.
pub fn output_activation(design: &ExtendedServoDesign, pattern: &[bool]) -> Result<DMatrix<f64>> {
    let m = design.m();
    if pattern.len() != 2 * m {
        return Err(Error::dims("activation pattern", 2 * m, pattern.len()));
    }
    let delta = DMatrix::from_diagonal(&DVector::from_iterator(2 * m, pattern.iter().map(|&d| if d { 1.0 } else { 0.0 })));
    Ok(design.design().h_u_inv().rows(m, m) * delta)
}

/// One-loop-at-a-time margins of a single input channel.
#[derive(Debug, Clone, PartialEq)]
pub struct SisoMargin {
    /// Distance in dB from unit gain to the nearest critical gain, i.e. the
    /// smaller of the upper and lower gain margins; `+∞` when the phase never
    /// crosses −180°.
    pub gm_db: f64,
    /// `180° − |∠L|` at the worst gain crossover; `+∞` when `|L|` never crosses one.
    pub pm_deg: f64,
    pub gain_crossover: Option<f64>,
    pub phase_crossover: Option<f64>,
    /// Set when a crossover may lie outside the grid.
    pub note: Option<String>,
}

/// Symmetric disk margin from `d = min_ω σ_min(I + L(jω))`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiskMargin {
    pub d: f64,
    pub omega: f64,
    /// `20 log10((1 + d)/(1 − d))`, `+∞` for `d ≥ 1`.
    pub gm_db: f64,
    /// `2 asin(d/2)` in degrees, 180° for `d ≥ 2`.
    pub pm_deg: f64,
}

impl DiskMargin {
    pub fn from_d(d: f64, omega: f64) -> Self {
        let gm_db = if d < 1.0 { 20.0 * ((1.0 + d) / (1.0 - d)).log10() } else { f64::INFINITY };
        let pm_deg = 2.0 * (d / 2.0).min(1.0).asin().to_degrees();
        Self { d, omega, gm_db, pm_deg }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarginReport {
    pub label: String,
    pub hurwitz: bool,
    pub abscissa: f64,
    /// Empty when the nominal loop is unstable.
    pub siso: Vec<SisoMargin>,
    pub mimo: Option<DiskMargin>,
}

impl MarginReport {
    pub fn min_gm_db(&self) -> f64 {
        self.siso.iter().map(|s| s.gm_db).fold(f64::INFINITY, f64::min)
    }

    pub fn min_pm_deg(&self) -> f64 {
        self.siso.iter().map(|s| s.pm_deg).fold(f64::INFINITY, f64::min)
    }

    /// Stable nominal loop with every margin a positive number (`+∞` allowed
    /// for SISO margins without a crossover) and a positive disk margin.
    pub fn margins_positive(&self) -> bool {
        self.hurwitz
            && !self.siso.is_empty()
            && self.siso.iter().all(|s| s.gm_db > 0.0 && s.pm_deg > 0.0)
            && self.mimo.as_ref().is_some_and(|d| d.d > 0.0 && d.gm_db > 0.0 && d.pm_deg > 0.0 && d.d.is_finite())
    }
}

/// Log-spaced grid with `points` entries over `[lo, hi]`.
pub fn log_grid(lo: f64, hi: f64, points: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0 && hi > lo) || points < 2 {
        return Err(Error::InvalidArgument(format!("bad frequency grid [{lo}, {hi}] with {points} points")));
    }
    let (l0, l1) = (lo.log10(), hi.log10());
    Ok((0..points)
        .map(|k| 10f64.powf(l0 + (l1 - l0) * k as f64 / (points - 1) as f64))
        .collect())
}

/// 400 points over `[1e-3, 1e3]` rad/s.
pub fn default_grid() -> Vec<f64> {
    log_grid(1e-3, 1e3, 400).expect("static grid")
}

/// Scalar loop of channel `i` with all other channels closed.
fn siso_loop(model: &LoopGainModel, i: usize) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let b_i = model.b.columns(i, 1).clone_owned();
    let k_i = model.k_eff.rows(i, 1).clone_owned();
    let a_i = model.closed_loop() + &b_i * &k_i;
    (a_i, b_i, k_i)
}

fn scalar_response(a: &DMatrix<f64>, b: &DMatrix<f64>, k: &DMatrix<f64>, omega: f64) -> Result<Complex64> {
    Ok((linalg::to_complex(k) * resolvent_apply(a, b, omega)?)[(0, 0)])
}

/// Bisection in `log ω` for a sign change of `f` between `lo` and `hi`.
fn refine<F: Fn(f64) -> Result<f64>>(f: F, mut lo: f64, mut hi: f64) -> Result<f64> {
    let mut f_lo = f(lo)?;
    for _ in 0..REFINE_STEPS {
        let mid = (lo * hi).sqrt();
        let f_mid = f(mid)?;
        if (f_mid > 0.0) == (f_lo > 0.0) {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
        }
    }
    Ok((lo * hi).sqrt())
}

fn siso_margin(model: &LoopGainModel, i: usize, grid: &[f64]) -> Result<SisoMargin> {
    let (a, b, k) = siso_loop(model, i);
    let resp = |w: f64| scalar_response(&a, &b, &k, w);
    let values: Vec<Complex64> = grid.iter().map(|&w| resp(w)).collect::<Result<_>>()?;
    let mut pm_deg = f64::INFINITY;
    let mut gm_db = f64::INFINITY;
    let mut gain_crossover = None;
    let mut phase_crossover = None;
    // A real-axis crossing at ω = 0 (open-loop unstable loops) is also critical.
    if let Ok(l) = resp(0.0) {
        if l.re < 0.0 {
            gm_db = (20.0 * l.norm().log10()).abs();
            phase_crossover = Some(0.0);
        }
    }
    for k in 1..grid.len() {
        let (l0, l1) = (values[k - 1], values[k]);
        if (l0.norm() - 1.0) * (l1.norm() - 1.0) <= 0.0 && l0.norm() != l1.norm() {
            let wc = refine(|w| Ok(resp(w)?.norm() - 1.0), grid[k - 1], grid[k])?;
            let pm = 180.0 - resp(wc)?.arg().to_degrees().abs();
            if pm < pm_deg {
                pm_deg = pm;
                gain_crossover = Some(wc);
            }
        }
        if l0.im * l1.im <= 0.0 && l0.im != l1.im && (l0.re < 0.0 || l1.re < 0.0) {
            let wp = refine(|w| Ok(resp(w)?.im), grid[k - 1], grid[k])?;
            let l = resp(wp)?;
            if l.re < 0.0 {
                let gm = (20.0 * l.norm().log10()).abs();
                if gm < gm_db {
                    gm_db = gm;
                    phase_crossover = Some(wp);
                }
            }
        }
    }
    let top = values[values.len() - 1].norm();
    let note = (top > 1.0).then(|| format!("|L| = {top:.3} at the top of the grid; crossover beyond {} rad/s", grid[grid.len() - 1]));
    Ok(SisoMargin {
        gm_db,
        pm_deg,
        gain_crossover,
        phase_crossover,
        note,
    })
}

/// `σ_min(I + L(jω))`.
pub fn return_difference_min_sv(model: &LoopGainModel, omega: f64) -> Result<f64> {
    let m = model.inputs();
    let rd = DMatrix::<Complex64>::identity(m, m) + loop_gain_at(model, omega)?;
    Ok(rd.singular_values().min())
}

/// SISO margins per channel (other loops closed) and the disk margin.
pub fn margins(model: &LoopGainModel, grid: &[f64]) -> Result<MarginReport> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("empty frequency grid".into()));
    }
    let verdict = lti::hurwitz(&model.closed_loop(), lti::DEFAULT_HURWITZ_MARGIN)?;
    if !verdict.stable {
        return Ok(MarginReport {
            label: model.label.clone(),
            hurwitz: false,
            abscissa: verdict.abscissa,
            siso: Vec::new(),
            mimo: None,
        });
    }
    let siso = (0..model.inputs()).map(|i| siso_margin(model, i, grid)).collect::<Result<Vec<_>>>()?;
    let mut best = (f64::INFINITY, grid[0]);
    for &w in grid {
        let d = return_difference_min_sv(model, w)?;
        if d < best.0 {
            best = (d, w);
        }
    }
    Ok(MarginReport {
        label: model.label.clone(),
        hurwitz: true,
        abscissa: verdict.abscissa,
        siso,
        mimo: Some(DiskMargin::from_d(best.0, best.1)),
    })
}

/// Pattern `k` of `p` channels, channel 0 as the most significant bit.
pub fn pattern_from_index(k: usize, p: usize) -> Vec<bool> {
    (0..p).map(|i| (k >> (p - 1 - i)) & 1 == 1).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepEntry {
    pub pattern: Vec<bool>,
    pub model: LoopGainModel,
    pub report: MarginReport,
}

/// Every activation pattern in binary-counter order, evaluated in parallel.
pub fn activation_sweep(target: &LoopTarget<'_>, grid: &[f64]) -> Result<Vec<SweepEntry>> {
    let p = target.pattern_len();
    if p > MAX_SWEEP_CHANNELS {
        return Err(Error::EnumerationCap {
            channels: p,
            cap: MAX_SWEEP_CHANNELS,
        });
    }
    let count = 1usize << p;
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(count);
    let chunk = count.div_ceil(workers);
    let eval = |k: usize| -> Result<SweepEntry> {
        let pattern = pattern_from_index(k, p);
        let model = effective_gain(target, &pattern)?;
        let report = margins(&model, grid)?;
        Ok(SweepEntry { pattern, model, report })
    };
    let parts: Vec<Result<Vec<SweepEntry>>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                let eval = &eval;
                s.spawn(move || (w * chunk..((w + 1) * chunk).min(count)).map(eval).collect::<Result<Vec<_>>>())
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("sweep worker panicked")).collect()
    });
    let mut out = Vec::with_capacity(count);
    for part in parts {
        out.extend(part?);
    }
    Ok(out)
}

/// CSV `pattern,gm_db,pm_deg,mimo_gm_db,mimo_pm_deg,hurwitz`; SISO columns
/// hold the minimum over channels.
pub fn write_margin_csv<W: Write>(entries: &[SweepEntry], mut w: W) -> Result<()> {
    writeln!(w, "pattern,gm_db,pm_deg,mimo_gm_db,mimo_pm_deg,hurwitz")?;
    for e in entries {
        let r = &e.report;
        let (mgm, mpm) = r.mimo.as_ref().map_or((f64::NAN, f64::NAN), |d| (d.gm_db, d.pm_deg));
        let (gm, pm) = if r.hurwitz { (r.min_gm_db(), r.min_pm_deg()) } else { (f64::NAN, f64::NAN) };
        writeln!(w, "{},{},{},{},{},{}", r.label, gm, pm, mgm, mpm, r.hurwitz)?;
    }
    Ok(())
}
