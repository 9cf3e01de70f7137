//! Scenario pipelines: design, simulation, margin analysis, the scalar
//! augmentor comparison, and the hashed artifact manifest.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::analysis::{self, LoopTarget, SweepEntry};
use crate::cbf::{self, CbfDesign, ConstraintBox, PolynomialBank};
use crate::error::{Error, Result};
use crate::linalg::{self, rel_diff};
use crate::lti::{self, RelativeDegree};
use crate::policy;
use crate::riccati::CareSolution;
use crate::scenario::{BankSpec, BaselineSpec, Scenario, ScenarioKind};
use crate::servo::{self, BaselineController, ExtendedServoDesign, ExtendedSpec};
use crate::sim::{self, Augmentor, ClosedLoop, ProjectionParams, ServoLoop, StateFeedbackLoop, Trajectory};

/// Accepted deviation of the weight identity `H_u R_π⁻¹ H_uᵀ = I`.
pub const WEIGHT_IDENTITY_TOL: f64 = 1e-10;
/// Accepted difference between logged and replayed controls.
pub const REPLAY_TOL: f64 = 1e-12;
/// Tolerance handed to the boundary-dynamics check.
pub const BOUNDARY_TOL: f64 = 5e-3;
const SELF_CHECK_SAMPLES: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verb {
    Design,
    Simulate,
    Analyze,
    Run,
    Compare,
}

impl Verb {
    pub fn name(self) -> &'static str {
        match self {
            Verb::Design => "design",
            Verb::Simulate => "simulate",
            Verb::Analyze => "analyze",
            Verb::Run => "run",
            Verb::Compare => "compare",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RunOptions {
    /// Overrides the scenario step size.
    pub dt: Option<f64>,
    /// Seed of the randomized policy self-check.
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ManifestEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Manifest {
    pub scenario: String,
    pub verb: String,
    pub seed: u64,
    pub dt: f64,
    pub files: Vec<ManifestEntry>,
    pub checks: Vec<Check>,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub manifest: Manifest,
    pub out_dir: PathBuf,
}

impl Outcome {
    pub fn passed(&self) -> bool {
        self.manifest.passed
    }

    pub fn checks(&self) -> &[Check] {
        &self.manifest.checks
    }
}

/// Constructed controllers of a scenario.
#[derive(Debug, Clone)]
pub enum Designed {
    Proportional {
        baseline: BaselineController,
        design: CbfDesign,
        bx: ConstraintBox,
    },
    Servo {
        baseline: BaselineController,
        care: Option<CareSolution>,
        ext: Box<ExtendedServoDesign>,
    },
}

impl Designed {
    /// Generic design acting on the limited channels.
    pub fn cbf_design(&self) -> &CbfDesign {
        match self {
            Designed::Proportional { design, .. } => design,
            Designed::Servo { ext, .. } => ext.design(),
        }
    }

    pub fn constraint_box(&self) -> &ConstraintBox {
        match self {
            Designed::Proportional { bx, .. } => bx,
            Designed::Servo { ext, .. } => ext.constraint_box(),
        }
    }

    pub fn relative_degree(&self) -> &RelativeDegree {
        self.cbf_design().relative_degree()
    }

    pub fn loop_target<'a>(&'a self, s: &'a Scenario) -> LoopTarget<'a> {
        match self {
            Designed::Proportional { baseline, design, .. } => LoopTarget::Proportional {
                design,
                a: s.plant.a(),
                b: s.plant.b(),
                k_x: baseline.k_x(),
            },
            Designed::Servo { ext, .. } => LoopTarget::Extended(ext),
        }
    }
}

fn bank_for(spec: &BankSpec, range: std::ops::Range<usize>, r: &RelativeDegree) -> Result<PolynomialBank> {
    match spec {
        BankSpec::Alpha(alpha) => PolynomialBank::from_alpha(&alpha[range], r),
        BankSpec::Roots(roots) => {
            let bank = PolynomialBank::new(roots[range].to_vec())?;
            bank.check_orders(r).map_err(|e| Error::config("barrier.roots", e.to_string()))?;
            Ok(bank)
        }
    }
}

/// Builds baseline and barrier design for a validated scenario.
pub fn design(s: &Scenario) -> Result<Designed> {
    let m = s.plant.m();
    match s.kind {
        ScenarioKind::Proportional => {
            let BaselineSpec::Proportional { k_x } = &s.baseline else {
                unreachable!("validated scenario kind matches baseline")
            };
            let baseline = BaselineController::proportional(&s.plant, k_x.clone())?;
            let r = lti::relative_degree(&s.plant, s.zero_tol)?;
            let bank = bank_for(&s.bank, 0..m, &r)?;
            let design = cbf::build_design(&s.plant, &bank, &r)?;
            Ok(Designed::Proportional {
                baseline,
                design,
                bx: s.limited_box.clone(),
            })
        }
        ScenarioKind::Servo => {
            let (baseline, care) = match &s.baseline {
                BaselineSpec::LqrPi { q, r } => {
                    let (b, sol) = servo::lqr_pi_design(&s.plant, q, r)?;
                    (b, Some(sol))
                }
                BaselineSpec::Pi { k_i, k_p } => (BaselineController::pi(&s.plant, k_i.clone(), k_p.clone())?, None),
                BaselineSpec::Proportional { .. } => unreachable!("validated scenario kind matches baseline"),
            };
            let gains = baseline.pi_gains().expect("PI baseline");
            let r_z = lti::relative_degree(&s.plant, s.zero_tol)?;
            let ones = RelativeDegree::new(vec![1; m], s.plant.n() + m)?;
            let u_bank = bank_for(&s.bank, 0..m, &ones)?;
            let u_roots: Vec<f64> = (0..m).map(|i| u_bank.roots(i)[0]).collect();
            let z_bank = bank_for(&s.bank, m..2 * m, &r_z)?;
            let ext = servo::build_extended(&ExtendedSpec {
                plant: &s.plant,
                k_i: &gains.k_i,
                k_p: &gains.k_p,
                u_bl_roots: &u_roots,
                z_bank: &z_bank,
                u_box: s.input_box.as_ref().expect("servo scenario has input limits"),
                z_box: &s.limited_box,
                zero_tol: s.zero_tol,
            })?;
            Ok(Designed::Servo {
                baseline,
                care,
                ext: Box::new(ext),
            })
        }
    }
}

fn rows(m: &DMatrix<f64>) -> Value {
    Value::Array((0..m.nrows()).map(|i| json!(m.row(i).iter().copied().collect::<Vec<_>>())).collect())
}

fn vector(v: &DVector<f64>) -> Value {
    json!(v.iter().copied().collect::<Vec<_>>())
}

/// Design summary as JSON plus the design-time checks.
pub fn design_summary(s: &Scenario, d: &Designed, seed: u64) -> Result<(Value, Vec<Check>)> {
    let g = d.cbf_design();
    let mut checks = Vec::new();
    let weight = cbf::weight_identity_check(g);
    checks.push(Check::new(
        "weight-identity",
        weight <= WEIGHT_IDENTITY_TOL,
        format!("max |H_u R_pi^-1 H_u^T - I| = {weight:.3e}"),
    ));
    let cl = lti::hurwitz(g.a_cl(), lti::DEFAULT_HURWITZ_MARGIN)?;
    checks.push(Check::new("a-cl-hurwitz", cl.stable, format!("spectral abscissa {:.6}", cl.abscissa)));
    let self_check = policy_self_check(g, d.constraint_box(), seed);
    checks.push(Check::new(
        "policy-self-check",
        self_check <= 1e-10,
        format!("{SELF_CHECK_SAMPLES} seeded samples, max relative spread {self_check:.3e}"),
    ));
    let bank = g.bank();
    let mut summary = json!({
        "scenario": s.name(),
        "kind": match s.kind { ScenarioKind::Proportional => "proportional", ScenarioKind::Servo => "pi-servo" },
        "limited_channels": s.limited_names(),
        "relative_degree": d.relative_degree().to_string(),
        "filter_roots": (0..bank.channels()).map(|i| bank.roots(i).to_vec()).collect::<Vec<_>>(),
        "alpha_pi": vector(g.alpha_pi()),
        "h_u": rows(g.h_u()),
        "h_x": rows(g.h_x()),
        "h_u_inv": rows(g.h_u_inv()),
        "cond_h_u": g.cond_h_u(),
        "k_cbf": rows(g.k_cbf()),
        "a_cl_hurwitz": cl.stable,
        "a_cl_abscissa": cl.abscissa,
        "weight_identity_residual": weight,
    });
    let obj = summary.as_object_mut().expect("object");
    match d {
        Designed::Proportional { baseline, .. } => {
            obj.insert("k_x".into(), rows(baseline.k_x()));
            if let Some(k_ff) = baseline.k_ff() {
                let dc = servo::dc_gain(&s.plant, baseline.k_x(), k_ff)?;
                let residual = (dc - DMatrix::<f64>::identity(s.plant.m(), s.plant.m())).amax();
                obj.insert("k_ff".into(), rows(k_ff));
                obj.insert("dc_gain_residual".into(), json!(residual));
                checks.push(Check::new("dc-gain-unity", residual <= servo::DC_GAIN_TOL, format!("max |G(0) - I| = {residual:.3e}")));
            }
        }
        Designed::Servo { baseline, care, ext } => {
            let gains = baseline.pi_gains().expect("PI baseline");
            obj.insert("k_i".into(), rows(&gains.k_i));
            obj.insert("k_p".into(), rows(&gains.k_p));
            obj.insert("z_relative_degree".into(), json!(ext.z_relative_degree().to_string()));
            let inv_err = rel_diff(ext.design().h_u_inv(), ext.h_u_tilde_inv_closed());
            let k_err = rel_diff(ext.design().k_cbf(), &servo::extended_cbf_gain(ext)?);
            obj.insert("block_inverse_error".into(), json!(inv_err));
            obj.insert("k_cbf_closed_form_error".into(), json!(k_err));
            checks.push(Check::new(
                "dual-path-blocks",
                inv_err <= servo::BLOCK_TOL && k_err <= servo::BLOCK_TOL,
                format!("H_u~^-1 {inv_err:.3e}, K_CBF {k_err:.3e}"),
            ));
            let bl = lti::hurwitz(&(ext.a_ext() - ext.b_u() * ext.k_x()), lti::DEFAULT_HURWITZ_MARGIN)?;
            obj.insert("baseline_abscissa".into(), json!(bl.abscissa));
            if let Some(sol) = care {
                let q_norm = match &s.baseline {
                    BaselineSpec::LqrPi { q, .. } => linalg::diag(q).norm(),
                    _ => 0.0,
                };
                obj.insert("riccati_residual".into(), json!(sol.residual));
                obj.insert("riccati_iterations".into(), json!(sol.iterations));
                obj.insert("riccati_p".into(), rows(&sol.p));
                checks.push(Check::new(
                    "riccati-residual",
                    sol.residual <= crate::riccati::RESIDUAL_TOL * q_norm.max(1.0),
                    format!("residual {:.3e} after {} iterations", sol.residual, sol.iterations),
                ));
            }
        }
    }
    Ok((summary, checks))
}

/// Largest relative disagreement between the max form, the algebraic form
/// and the switched form of the policy on seeded random points.
pub fn policy_self_check(design: &CbfDesign, bx: &ConstraintBox, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = design.h_x().ncols();
    let m = design.channels();
    let scale = bx.span().amax().max(1.0);
    let mut worst = 0.0f64;
    for _ in 0..SELF_CHECK_SAMPLES {
        let x = DVector::from_fn(n, |_, _| rng.random_range(-scale..scale));
        let u = DVector::from_fn(m, |_, _| rng.random_range(-scale..scale));
        let a = policy::pi_star(design, bx, &x, &u).pi;
        let b = policy::pi_star_algebraic(design, bx, &x, &u);
        let act = policy::activation(design, bx, &x, &u);
        let c = policy::switched_form(design, &act, &x, &u);
        let norm = a.amax().max(1.0);
        worst = worst.max((&a - b).amax() / norm).max((&a - c).amax() / norm);
    }
    worst
}

fn loops(s: &Scenario, d: &Designed) -> Result<(Box<dyn ClosedLoop + Send + Sync>, Box<dyn ClosedLoop + Send + Sync>)> {
    Ok(match d {
        Designed::Proportional { baseline, design, bx } => (
            Box::new(StateFeedbackLoop::new(
                s.plant.clone(),
                baseline.clone(),
                Augmentor::Cbf {
                    design: design.clone(),
                    bx: bx.clone(),
                },
            )?),
            Box::new(StateFeedbackLoop::new(s.plant.clone(), baseline.clone(), Augmentor::None)?),
        ),
        Designed::Servo { ext, .. } => (
            Box::new(ServoLoop::new(s.plant.clone(), (**ext).clone(), true)?),
            Box::new(ServoLoop::new(s.plant.clone(), (**ext).clone(), false)?),
        ),
    })
}

fn names(s: &Scenario) -> sim::SignalNames {
    let mut states = Vec::new();
    if s.kind == ScenarioKind::Servo {
        states.extend(s.command_names().iter().map(|c| format!("e_{}", c.trim_end_matches("_cmd"))));
    }
    states.extend(s.normalized.plant.states.iter().cloned());
    sim::SignalNames {
        states,
        controls: s.normalized.plant.inputs.clone(),
        limited: s.limited_names().iter().map(|n| format!("lim_{n}")).collect(),
    }
}

/// Simulated augmented and (optionally) baseline runs with their checks.
pub struct SimulationResult {
    pub augmented: Trajectory,
    pub baseline: Option<Trajectory>,
    pub report: sim::InvarianceReport,
    pub checks: Vec<Check>,
    pub details: Value,
}

pub fn simulate(s: &Scenario, d: &Designed, dt: f64) -> Result<SimulationResult> {
    let horizon = s.normalized.simulation.horizon.unwrap_or_else(|| s.command.default_horizon());
    let (aug, base) = loops(s, d)?;
    let frac = s.normalized.simulation.tolerance_fraction;
    let bx = d.constraint_box();
    let augmented = sim::simulate(aug.as_ref(), &s.command, &s.x0, dt, horizon)?.with_names(names(s));
    let baseline = if s.normalized.simulation.compare_baseline {
        Some(sim::simulate(base.as_ref(), &s.command, &s.x0, dt, horizon)?.with_names(names(s)))
    } else {
        None
    };
    let report = sim::invariance_report_relative(&augmented, bx, Some(d.cbf_design()), frac)?;
    let mut checks = Vec::new();
    let lim = s.limited_names();
    for (i, c) in report.raw.iter().enumerate() {
        checks.push(Check::new(
            format!("invariance-{}", lim[i]),
            c.first_violation.is_none(),
            format!("worst excursion {:.3e} (allowed {:.3e})", c.worst, frac * bx.span()[i]),
        ));
    }
    let modified_ok = report.modified.iter().all(|c| c.first_violation.is_none());
    let modified_worst = report.modified.iter().map(|c| c.worst).fold(0.0, f64::max);
    checks.push(Check::new("invariance-modified-set", modified_ok, format!("worst excursion {modified_worst:.3e}")));
    let replay = sim::replay_error(&augmented, aug.as_ref());
    checks.push(Check::new("policy-replay", replay <= REPLAY_TOL, format!("max |u - u_replayed| = {replay:.3e}")));

    let mut details = json!({
        "dt": dt,
        "horizon": horizon,
        "tolerance_fraction": frac,
        "channels": lim,
        "worst_excursion": report.raw.iter().map(|c| c.worst).collect::<Vec<_>>(),
        "first_violation": report.raw.iter().map(|c| c.first_violation).collect::<Vec<_>>(),
        "modified_worst_excursion": report.modified.iter().map(|c| c.worst).collect::<Vec<_>>(),
        "replay_error": replay,
    });
    let obj = details.as_object_mut().expect("object");
    match d {
        Designed::Proportional { design, bx, .. } => {
            let mut residuals = Vec::new();
            for ch in 0..design.channels() {
                if design.bank().roots(ch).len() != 1 {
                    continue;
                }
                let bc = sim::boundary_dynamics_check(&augmented, design, bx, ch, BOUNDARY_TOL)?;
                checks.push(Check::new(
                    format!("boundary-dynamics-{}", lim[ch]),
                    bc.passed(),
                    format!("max residual {:.3e} over {} active samples (allowed {:.3e})", bc.max_residual, bc.active_samples, bc.threshold),
                ));
                residuals.push(json!({"channel": lim[ch], "max_residual": bc.max_residual, "active_samples": bc.active_samples}));
            }
            obj.insert("boundary_dynamics".into(), Value::Array(residuals));
        }
        Designed::Servo { ext, .. } => {
            let (first, last) = sim::tail_growth(&augmented.integrator, 0.25);
            let bounded = first.is_finite() && last.is_finite() && last <= first * (1.0 + 1e-9) + 1e-12;
            checks.push(Check::new(
                "integrator-bounded",
                bounded,
                format!("max |e_yI| over final quarter halves: {first:.4e} then {last:.4e}"),
            ));
            // Total plant input against the baseline-control limits; reported, not gated.
            let ubox = ConstraintBox::new(
                ext.constraint_box().min().rows(0, ext.m()).clone_owned(),
                ext.constraint_box().max().rows(0, ext.m()).clone_owned(),
            )?;
            let total: Vec<f64> = (0..ext.m())
                .map(|i| {
                    augmented
                        .u
                        .iter()
                        .map(|u| (u[i] - ubox.max()[i]).max(ubox.min()[i] - u[i]).max(0.0) / ubox.span()[i])
                        .fold(0.0, f64::max)
                })
                .collect();
            obj.insert("total_control_excursion_fraction".into(), json!(total));
            obj.insert("integrator_tail_max".into(), json!([first, last]));
        }
    }
    Ok(SimulationResult {
        augmented,
        baseline,
        report,
        checks,
        details,
    })
}

/// Activation sweep with the scenario grid.
pub fn analyze(s: &Scenario, d: &Designed) -> Result<(Vec<SweepEntry>, Vec<Check>)> {
    let a = &s.normalized.analysis;
    let grid = analysis::log_grid(a.grid_lo, a.grid_hi, a.grid_points)?;
    let entries = analysis::activation_sweep(&d.loop_target(s), &grid)?;
    let bad: Vec<&str> = entries.iter().filter(|e| !e.report.margins_positive()).map(|e| e.report.label.as_str()).collect();
    let checks = vec![Check::new(
        "margins-all-patterns",
        bad.is_empty(),
        if bad.is_empty() {
            format!("{} patterns Hurwitz with positive margins", entries.len())
        } else {
            format!("patterns failing: {}", bad.join(" "))
        },
    )];
    Ok((entries, checks))
}

struct Writer {
    dir: PathBuf,
    files: Vec<ManifestEntry>,
}

impl Writer {
    fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    fn put(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        fs::write(self.dir.join(name), bytes)?;
        self.files.push(ManifestEntry {
            path: name.to_string(),
            sha256: hex::encode(Sha256::digest(bytes)),
            bytes: bytes.len() as u64,
        });
        Ok(())
    }

    fn json(&mut self, name: &str, v: &Value) -> Result<()> {
        let mut text = serde_json::to_string_pretty(v).map_err(|e| Error::Io(e.to_string()))?;
        text.push('\n');
        self.put(name, text.as_bytes())
    }

    fn trajectory(&mut self, name: &str, t: &Trajectory) -> Result<()> {
        let mut buf = Vec::new();
        t.write_csv(&mut buf)?;
        self.put(name, &buf)
    }
}

fn plot_script(s: &Scenario, with_baseline: bool, with_margins: bool) -> String {
    let mut out = String::from("# gnuplot script; run from this directory\nset datafile separator ','\nset key autotitle columnhead\n");
    let n_states = names(s).states.len();
    let m = s.plant.m();
    let first_lim = 2 + n_states + m;
    for (k, name) in s.limited_names().iter().enumerate() {
        let col = first_lim + k;
        out.push_str(&format!("set title '{name}'\nplot 'trajectory.csv' using 1:{col} with lines"));
        if with_baseline {
            out.push_str(&format!(", 'trajectory_baseline.csv' using 1:{col} with lines"));
        }
        out.push_str("\npause -1\n");
    }
    if with_margins {
        out.push_str("set title 'disk margin'\nset style data histograms\nplot 'margins.csv' using 4:xtic(1)\npause -1\n");
    }
    out
}

/// Runs `verb` for a scenario, writes artifacts into `out` and returns the manifest.
pub fn execute(s: &Scenario, verb: Verb, out: &Path, opts: &RunOptions) -> Result<Outcome> {
    let dt = opts.dt.unwrap_or(s.normalized.simulation.dt);
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::config("--dt", "must be positive"));
    }
    if verb == Verb::Compare {
        return compare_augmentors(s, out, dt, opts.seed);
    }
    let mut w = Writer::new(out)?;
    let d = design(s)?;
    let (summary, mut checks) = design_summary(s, &d, opts.seed)?;
    w.json("design.json", &summary)?;
    let mut sim_done = false;
    let mut margins_done = false;
    if matches!(verb, Verb::Simulate | Verb::Run) {
        let r = simulate(s, &d, dt)?;
        w.trajectory("trajectory.csv", &r.augmented)?;
        if let Some(b) = &r.baseline {
            w.trajectory("trajectory_baseline.csv", b)?;
        }
        w.json("invariance.json", &r.details)?;
        checks.extend(r.checks);
        sim_done = r.baseline.is_some();
    }
    if matches!(verb, Verb::Analyze | Verb::Run) && s.normalized.analysis.margins {
        let (entries, c) = analyze(s, &d)?;
        let mut buf = Vec::new();
        analysis::write_margin_csv(&entries, &mut buf)?;
        w.put("margins.csv", &buf)?;
        checks.extend(c);
        margins_done = true;
    }
    if matches!(verb, Verb::Simulate | Verb::Run) {
        w.put("plot.gp", plot_script(s, sim_done, margins_done).as_bytes())?;
    }
    finish(w, s, verb, dt, opts.seed, checks)
}

fn finish(mut w: Writer, s: &Scenario, verb: Verb, dt: f64, seed: u64, checks: Vec<Check>) -> Result<Outcome> {
    for c in &checks {
        if c.passed {
            log::info!("{}: {} ok ({})", s.name(), c.name, c.detail);
        } else {
            log::warn!("{}: {} FAILED ({})", s.name(), c.name, c.detail);
        }
    }
    let passed = checks.iter().all(|c| c.passed);
    let mut manifest = Manifest {
        scenario: s.name().to_string(),
        verb: verb.name().to_string(),
        seed,
        dt,
        files: Vec::new(),
        checks,
        passed,
    };
    manifest.files = std::mem::take(&mut w.files);
    let mut text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Io(e.to_string()))?;
    text.push('\n');
    fs::write(w.dir.join("manifest.json"), text)?;
    Ok(Outcome {
        manifest,
        out_dir: w.dir,
    })
}

/// Boundary layers used for the projection sweep.
pub const PROJECTION_SWEEP: [f64; 5] = [0.2, 0.1, 0.05, 0.02, 0.01];

/// Side-by-side barrier and projection-operator runs for a scalar scenario.
pub fn compare_augmentors(s: &Scenario, out: &Path, dt: f64, seed: u64) -> Result<Outcome> {
    let scalar = s.kind == ScenarioKind::Proportional && s.plant.n() == 1 && s.plant.m() == 1 && s.plant.c_lim()[(0, 0)] == 1.0;
    if !scalar {
        return Err(Error::config("plant", "compare needs a scalar proportional scenario with y_lim = x"));
    }
    let d = design(s)?;
    let Designed::Proportional { baseline, design, bx } = &d else {
        unreachable!("scalar scenario is proportional")
    };
    let horizon = s.normalized.simulation.horizon.unwrap_or_else(|| s.command.default_horizon());
    let frac = s.normalized.simulation.tolerance_fraction;
    let k_ff = baseline.k_ff().map_or(0.0, |k| k[(0, 0)]);
    let params = |tol: f64| {
        ProjectionParams::new(
            s.plant.a()[(0, 0)],
            s.plant.b()[(0, 0)],
            baseline.k_x()[(0, 0)],
            k_ff,
            bx.min()[0],
            bx.max()[0],
            tol,
        )
    };
    let run = |aug: Augmentor| -> Result<Trajectory> {
        let cl = StateFeedbackLoop::new(s.plant.clone(), baseline.clone(), aug)?;
        sim::simulate(&cl, &s.command, &s.x0, dt, horizon)
    };
    let cbf_run = run(Augmentor::Cbf {
        design: design.clone(),
        bx: bx.clone(),
    })?;
    let proj_run = run(Augmentor::Projection(params(s.normalized.simulation.projection_tol)?))?;
    let clamp_run = run(Augmentor::HardClamp(params(s.normalized.simulation.projection_tol)?))?;

    let mut w = Writer::new(out)?;
    let mut csv = String::from("t,x_cmd,x_cbf,u_cbf,pi_cbf,x_proj,u_proj,pi_proj\n");
    for k in 0..cbf_run.len() {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            cbf_run.t[k], cbf_run.y_cmd[k][0], cbf_run.x[k][0], cbf_run.u[k][0], cbf_run.pi[k][0], proj_run.x[k][0], proj_run.u[k][0], proj_run.pi[k][0]
        ));
    }
    w.put("compare.csv", csv.as_bytes())?;

    let tol = frac * bx.span()[0];
    let excursion = |t: &Trajectory| sim::invariance_report(t, bx, None, tol).map(|r| r.worst_raw());
    let (cbf_ex, proj_ex) = (excursion(&cbf_run)?, excursion(&proj_run)?);
    let peak_rate = |t: &Trajectory| {
        t.x.windows(2).map(|p| ((p[1][0] - p[0][0]) / dt).abs()).fold(0.0, f64::max)
    };

    let mut sweep = String::from("projection_tol,worst_excursion,max_deviation_from_clamp\n");
    let mut deviations = Vec::new();
    for &tol_p in &PROJECTION_SWEEP {
        let r = run(Augmentor::Projection(params(tol_p)?))?;
        let dev = r.x.iter().zip(&clamp_run.x).map(|(a, b)| (a[0] - b[0]).abs()).fold(0.0, f64::max);
        sweep.push_str(&format!("{tol_p},{},{dev}\n", excursion(&r)?));
        deviations.push(dev);
    }
    w.put("projection_sweep.csv", sweep.as_bytes())?;
    let monotone = deviations.windows(2).all(|p| p[1] <= p[0]);

    let stats = json!({
        "tolerance": tol,
        "cbf": {"worst_excursion": cbf_ex, "peak_rate": peak_rate(&cbf_run), "peak_control": cbf_run.u.iter().map(|u| u[0].abs()).fold(0.0, f64::max)},
        "projection": {"worst_excursion": proj_ex, "peak_rate": peak_rate(&proj_run), "peak_control": proj_run.u.iter().map(|u| u[0].abs()).fold(0.0, f64::max)},
        "projection_sweep": PROJECTION_SWEEP.iter().zip(&deviations).map(|(t, d)| json!({"projection_tol": t, "max_deviation_from_clamp": d})).collect::<Vec<_>>(),
    });
    w.json("compare.json", &stats)?;
    let checks = vec![
        Check::new("cbf-within-box", cbf_ex <= tol, format!("worst excursion {cbf_ex:.3e} (allowed {tol:.3e})")),
        Check::new("projection-within-box", proj_ex <= tol, format!("worst excursion {proj_ex:.3e} (allowed {tol:.3e})")),
        Check::new("projection-approaches-clamp", monotone, format!("deviation from hard clamp {deviations:?}")),
    ];
    finish(w, s, Verb::Compare, dt, seed, checks)
}
