//! Fixed-step closed-loop simulation, command schedules, the scalar
//! projection-operator comparator and invariance checks on trajectories.

use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::cbf::{self, CbfDesign, ConstraintBox};
use crate::error::{Error, Result};
use crate::lti::StateSpaceModel;
use crate::policy::{self, ActivationState, SelectedBound};
use crate::servo::{self, BaselineController, ExtendedServoDesign};

pub const DEFAULT_DT: f64 = 1e-3;
/// Settling time appended to the last command step for the default horizon.
pub const SETTLE_TIME: f64 = 5.0;
pub const DEFAULT_PROJECTION_TOL: f64 = 0.01;

/// Per-channel piecewise-constant schedule of `(start time, level)` pairs.
/// Before the first start time a channel reads zero.
#[derive(Debug, Clone, PartialEq)]
pub struct CommandSignal {
    channels: Vec<Vec<(f64, f64)>>,
}

impl CommandSignal {
    pub fn new(channels: Vec<Vec<(f64, f64)>>) -> Result<Self> {
        for (i, sched) in channels.iter().enumerate() {
            for (j, &(t, level)) in sched.iter().enumerate() {
                if !t.is_finite() || !level.is_finite() {
                    return Err(Error::InvalidArgument(format!("command channel {i}: non-finite entry {j}")));
                }
                if j > 0 && !(t > sched[j - 1].0) {
                    return Err(Error::InvalidArgument(format!(
                        "command channel {i}: times must be strictly increasing"
                    )));
                }
            }
        }
        Ok(Self { channels })
    }

    pub fn zero(m: usize) -> Self {
        Self {
            channels: vec![Vec::new(); m],
        }
    }

    pub fn constant(levels: &[f64]) -> Self {
        Self {
            channels: levels.iter().map(|&l| vec![(0.0, l)]).collect(),
        }
    }

    pub fn channels(&self) -> usize {
        self.channels.len()
    }

    pub fn schedule(&self, channel: usize) -> &[(f64, f64)] {
        &self.channels[channel]
    }

    pub fn at(&self, t: f64) -> DVector<f64> {
        DVector::from_iterator(
            self.channels.len(),
            self.channels.iter().map(|sched| {
                sched
                    .iter()
                    .take_while(|&&(start, _)| start <= t)
                    .last()
                    .map_or(0.0, |&(_, level)| level)
            }),
        )
    }

    /// Latest start time over all channels.
    pub fn last_event(&self) -> f64 {
        self.channels
            .iter()
            .filter_map(|s| s.last().map(|&(t, _)| t))
            .fold(0.0, f64::max)
    }

    /// Last command event plus [`SETTLE_TIME`].
    pub fn default_horizon(&self) -> f64 {
        self.last_event() + SETTLE_TIME
    }
}

/// Column labels for trajectory export.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalNames {
    pub states: Vec<String>,
    pub controls: Vec<String>,
    pub limited: Vec<String>,
}

impl SignalNames {
    pub fn indexed(n: usize, m: usize, p: usize) -> Self {
        let gen = |prefix: &str, k: usize| (0..k).map(|i| format!("{prefix}{i}")).collect();
        Self {
            states: gen("x", n),
            controls: gen("u", m),
            limited: gen("y", p),
        }
    }
}

/// Everything a closed loop produces at one `(x, y_cmd)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub xdot: DVector<f64>,
    pub u_bl: DVector<f64>,
    pub pi: DVector<f64>,
    pub u: DVector<f64>,
    pub y_lim: DVector<f64>,
    pub y_reg: Option<DVector<f64>>,
    /// Modified output of the barrier design, when one is attached.
    pub y_mod: Option<DVector<f64>>,
    pub activation: ActivationState,
    pub integrator: Option<DVector<f64>>,
}

/// A closed loop `ẋ = f(x, y_cmd)` with logging hooks.
pub trait ClosedLoop {
    fn state_dim(&self) -> usize;

    fn evaluate(&self, x: &DVector<f64>, y_cmd: &DVector<f64>) -> Evaluation;

    fn derivative(&self, x: &DVector<f64>, y_cmd: &DVector<f64>) -> DVector<f64> {
        self.evaluate(x, y_cmd).xdot
    }

    /// Total control recomputed from a logged state and baseline control.
    fn replay_control(&self, x: &DVector<f64>, u_bl: &DVector<f64>, y_cmd: &DVector<f64>) -> DVector<f64>;

    /// Rejects initial conditions outside the operating set.
    fn check_initial(&self, _x0: &DVector<f64>, _y_cmd: &DVector<f64>) -> Result<()> {
        Ok(())
    }

    fn names(&self) -> SignalNames;
}

/// Augmentation attached to a proportional state-feedback loop.
#[derive(Debug, Clone)]
pub enum Augmentor {
    None,
    Cbf { design: CbfDesign, bx: ConstraintBox },
    Projection(ProjectionParams),
    /// Limit of the projection operator as its boundary layer vanishes.
    HardClamp(ProjectionParams),
}

/// `ẋ = Ax + B(u_bl + π)`, `u_bl = −K_x x + K_ff y_cmd`.
#[derive(Debug, Clone)]
pub struct StateFeedbackLoop {
    model: StateSpaceModel,
    baseline: BaselineController,
    augmentor: Augmentor,
}

impl StateFeedbackLoop {
    pub fn new(model: StateSpaceModel, baseline: BaselineController, augmentor: Augmentor) -> Result<Self> {
        if baseline.k_x().shape() != (model.m(), model.n()) {
            return Err(Error::dims("K_x", format!("{}×{}", model.m(), model.n()), format!("{:?}", baseline.k_x().shape())));
        }
        match &augmentor {
            Augmentor::Cbf { design, bx } => {
                if design.channels() != model.m() || bx.len() != model.m() {
                    return Err(Error::dims("barrier design channels", model.m(), bx.len()));
                }
            }
            Augmentor::Projection(_) | Augmentor::HardClamp(_) => {
                if model.n() != 1 || model.m() != 1 || model.c_lim()[(0, 0)] != 1.0 {
                    return Err(Error::InvalidArgument("projection operator needs a scalar plant with y_lim = x".into()));
                }
            }
            Augmentor::None => {}
        }
        Ok(Self {
            model,
            baseline,
            augmentor,
        })
    }

    pub fn model(&self) -> &StateSpaceModel {
        &self.model
    }

    pub fn augmentor(&self) -> &Augmentor {
        &self.augmentor
    }

    fn augmentation(&self, x: &DVector<f64>, u_bl: &DVector<f64>, y_cmd: &DVector<f64>) -> (DVector<f64>, ActivationState) {
        let m = self.model.m();
        match &self.augmentor {
            Augmentor::None => (DVector::zeros(m), inactive(m)),
            Augmentor::Cbf { design, bx } => {
                let inc = policy::increments(design, bx, x, u_bl);
                let act = policy::activation_from_increments(&inc, bx);
                (policy::pi_star(design, bx, x, u_bl).pi, act)
            }
            Augmentor::Projection(p) | Augmentor::HardClamp(p) => {
                let clamp = matches!(self.augmentor, Augmentor::HardClamp(_));
                let pi = if clamp { p.clamp_augmentation(x[0], y_cmd[0]) } else { p.augmentation(x[0], y_cmd[0]) };
                let xdot_bl = p.baseline_rate(x[0], y_cmd[0]);
                let sel = if clamp { p.clamp_branch(x[0], xdot_bl) } else { p.branch(x[0], xdot_bl) };
                (
                    DVector::from_element(1, pi),
                    ActivationState {
                        delta: vec![!matches!(sel, SelectedBound::None)],
                        selected_bound: vec![sel],
                    },
                )
            }
        }
    }
}

fn inactive(m: usize) -> ActivationState {
    ActivationState {
        delta: vec![false; m],
        selected_bound: vec![SelectedBound::None; m],
    }
}

impl ClosedLoop for StateFeedbackLoop {
    fn state_dim(&self) -> usize {
        self.model.n()
    }

    fn evaluate(&self, x: &DVector<f64>, y_cmd: &DVector<f64>) -> Evaluation {
        let u_bl = self.baseline.control(x, y_cmd);
        let (pi, activation) = self.augmentation(x, &u_bl, y_cmd);
        let u = &u_bl + &pi;
        let xdot = self.model.a() * x + self.model.b() * &u;
        let y_reg = match (self.model.c_reg(), self.model.d_reg()) {
            (Some(c), Some(d)) => Some(c * x + d * &u),
            _ => None,
        };
        let y_mod = match &self.augmentor {
            Augmentor::Cbf { design, .. } => Some(cbf::modified_output(design, x, &u)),
            _ => None,
        };
        Evaluation {
            xdot,
            y_lim: self.model.c_lim() * x,
            u_bl,
            pi,
            u,
            y_reg,
            y_mod,
            activation,
            integrator: None,
        }
    }

    fn derivative(&self, x: &DVector<f64>, y_cmd: &DVector<f64>) -> DVector<f64> {
        let u_bl = self.baseline.control(x, y_cmd);
        let pi = match &self.augmentor {
            Augmentor::None => return self.model.a() * x + self.model.b() * u_bl,
            Augmentor::Cbf { design, bx } => policy::pi_star(design, bx, x, &u_bl).pi,
            Augmentor::Projection(p) => DVector::from_element(1, p.augmentation(x[0], y_cmd[0])),
            Augmentor::HardClamp(p) => DVector::from_element(1, p.clamp_augmentation(x[0], y_cmd[0])),
        };
        self.model.a() * x + self.model.b() * (u_bl + pi)
    }

    fn replay_control(&self, x: &DVector<f64>, u_bl: &DVector<f64>, y_cmd: &DVector<f64>) -> DVector<f64> {
        u_bl + self.augmentation(x, u_bl, y_cmd).0
    }

    fn check_initial(&self, x0: &DVector<f64>, _y_cmd: &DVector<f64>) -> Result<()> {
        let bx = match &self.augmentor {
            Augmentor::Cbf { bx, .. } => bx.clone(),
            Augmentor::Projection(p) | Augmentor::HardClamp(p) => ConstraintBox::new(DVector::from_element(1, p.x_min), DVector::from_element(1, p.x_max))?,
            Augmentor::None => return Ok(()),
        };
        strictly_inside(&(self.model.c_lim() * x0), &bx)
    }

    fn names(&self) -> SignalNames {
        SignalNames::indexed(self.model.n(), self.model.m(), self.model.c_lim().nrows())
    }
}

fn strictly_inside(y: &DVector<f64>, bx: &ConstraintBox) -> Result<()> {
    for i in 0..y.len() {
        if !(y[i] > bx.min()[i] && y[i] < bx.max()[i]) {
            return Err(Error::InvalidArgument(format!(
                "initial limited output {i} = {} is not strictly inside [{}, {}]",
                y[i],
                bx.min()[i],
                bx.max()[i]
            )));
        }
    }
    Ok(())
}

/// PI servo loop on the extended state `(e_yI, x_p)`:
/// `ė_yI = y_reg − y_cmd + v`, `ẋ_p = A_p x_p + B_p u`, `u = u_bl + w`.
#[derive(Debug, Clone)]
pub struct ServoLoop {
    plant: StateSpaceModel,
    design: ExtendedServoDesign,
    augmented: bool,
    saturation: Option<ConstraintBox>,
}

impl ServoLoop {
    /// `augmented = false` runs the PI baseline alone.
    pub fn new(plant: StateSpaceModel, design: ExtendedServoDesign, augmented: bool) -> Result<Self> {
        if plant.c_reg().is_none() {
            return Err(Error::InvalidArgument("servo plant needs a regulated output".into()));
        }
        if design.n() != plant.n() + plant.m() {
            return Err(Error::dims("extended state", plant.n() + plant.m(), design.n()));
        }
        Ok(Self {
            plant,
            design,
            augmented,
            saturation: None,
        })
    }

    /// Hard saturation of the total plant input, applied after augmentation.
    pub fn with_saturation(mut self, bx: ConstraintBox) -> Result<Self> {
        if bx.len() != self.plant.m() {
            return Err(Error::dims("saturation box", self.plant.m(), bx.len()));
        }
        self.saturation = Some(bx);
        Ok(self)
    }

    pub fn design(&self) -> &ExtendedServoDesign {
        &self.design
    }

    fn control(&self, x: &DVector<f64>, u_bl: &DVector<f64>, y_cmd: &DVector<f64>) -> (DVector<f64>, DVector<f64>, DVector<f64>, ActivationState) {
        let m = self.plant.m();
        let (v, w, act) = if self.augmented {
            let pol = servo::extended_policy(&self.design, x, u_bl, y_cmd);
            let u_tilde = self.design.stacked_baseline(u_bl, y_cmd);
            let bx = self.design.constraint_box();
            let inc = policy::increments(self.design.design(), bx, x, &u_tilde);
            (pol.v, pol.w, policy::activation_from_increments(&inc, bx))
        } else {
            (DVector::zeros(m), DVector::zeros(m), inactive(2 * m))
        };
        let mut u = u_bl + &w;
        if let Some(bx) = &self.saturation {
            u = servo::saturate(&u, bx);
        }
        (v, w, u, act)
    }

    fn split<'a>(&self, x: &'a DVector<f64>) -> (nalgebra::DVectorView<'a, f64>, nalgebra::DVectorView<'a, f64>) {
        let m = self.plant.m();
        (x.rows(0, m), x.rows(m, self.plant.n()))
    }

    fn regulated(&self, x_p: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let c = self.plant.c_reg().expect("checked at construction");
        let d = self.plant.d_reg().expect("checked at construction");
        c * x_p + d * u
    }
}

impl ClosedLoop for ServoLoop {
    fn state_dim(&self) -> usize {
        self.design.n()
    }

    fn evaluate(&self, x: &DVector<f64>, y_cmd: &DVector<f64>) -> Evaluation {
        let m = self.plant.m();
        let u_bl = self.design.baseline(x);
        let (v, w, u, activation) = self.control(x, &u_bl, y_cmd);
        let (e, x_p) = self.split(x);
        let x_p = x_p.clone_owned();
        let y_reg = self.regulated(&x_p, &u);
        let mut xdot = DVector::zeros(x.len());
        xdot.rows_mut(0, m).copy_from(&(&y_reg - y_cmd + &v));
        xdot.rows_mut(m, self.plant.n()).copy_from(&(self.plant.a() * &x_p + self.plant.b() * &u));
        let u_tilde = DVector::from_iterator(2 * m, (&v - y_cmd).iter().chain((&u_bl + &w).iter()).copied());
        let y_mod = Some(cbf::modified_output(self.design.design(), x, &u_tilde));
        let y_lim = self.design.c_lim_ext() * x;
        let pi = DVector::from_iterator(2 * m, v.iter().chain(w.iter()).copied());
        Evaluation {
            xdot,
            u_bl,
            pi,
            u,
            y_lim,
            y_reg: Some(y_reg),
            y_mod,
            activation,
            integrator: Some(e.clone_owned()),
        }
    }

    fn derivative(&self, x: &DVector<f64>, y_cmd: &DVector<f64>) -> DVector<f64> {
        let m = self.plant.m();
        let u_bl = self.design.baseline(x);
        let (v, u) = if self.augmented {
            let pol = servo::extended_policy(&self.design, x, &u_bl, y_cmd);
            (pol.v, &u_bl + pol.w)
        } else {
            (DVector::zeros(m), u_bl)
        };
        let u = match &self.saturation {
            Some(bx) => servo::saturate(&u, bx),
            None => u,
        };
        let x_p = x.rows(m, self.plant.n()).clone_owned();
        let mut xdot = DVector::zeros(x.len());
        xdot.rows_mut(0, m).copy_from(&(self.regulated(&x_p, &u) - y_cmd + v));
        xdot.rows_mut(m, self.plant.n()).copy_from(&(self.plant.a() * &x_p + self.plant.b() * &u));
        xdot
    }

    fn replay_control(&self, x: &DVector<f64>, u_bl: &DVector<f64>, y_cmd: &DVector<f64>) -> DVector<f64> {
        self.control(x, u_bl, y_cmd).2
    }

    fn check_initial(&self, x0: &DVector<f64>, _y_cmd: &DVector<f64>) -> Result<()> {
        if !self.augmented {
            return Ok(());
        }
        strictly_inside(&(self.design.c_lim_ext() * x0), self.design.constraint_box())
    }

    fn names(&self) -> SignalNames {
        let m = self.plant.m();
        let mut names = SignalNames::indexed(self.design.n(), m, 2 * m);
        for i in 0..m {
            names.states[i] = format!("e{i}");
        }
        for (k, name) in names.states.iter_mut().skip(m).enumerate() {
            *name = format!("x{k}");
        }
        names
    }
}

/// Logged closed-loop evolution on a uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub dt: f64,
    pub t: Vec<f64>,
    pub x: Vec<DVector<f64>>,
    pub y_cmd: Vec<DVector<f64>>,
    pub u_bl: Vec<DVector<f64>>,
    pub pi: Vec<DVector<f64>>,
    pub u: Vec<DVector<f64>>,
    pub y_lim: Vec<DVector<f64>>,
    pub y_reg: Vec<DVector<f64>>,
    pub y_mod: Vec<DVector<f64>>,
    pub activation: Vec<ActivationState>,
    pub integrator: Vec<DVector<f64>>,
    pub names: SignalNames,
}

impl Trajectory {
    fn new(dt: f64, names: SignalNames, capacity: usize) -> Self {
        Self {
            dt,
            t: Vec::with_capacity(capacity),
            x: Vec::with_capacity(capacity),
            y_cmd: Vec::with_capacity(capacity),
            u_bl: Vec::with_capacity(capacity),
            pi: Vec::with_capacity(capacity),
            u: Vec::with_capacity(capacity),
            y_lim: Vec::with_capacity(capacity),
            y_reg: Vec::new(),
            y_mod: Vec::new(),
            activation: Vec::with_capacity(capacity),
            integrator: Vec::new(),
            names,
        }
    }

    fn push(&mut self, t: f64, x: &DVector<f64>, y_cmd: DVector<f64>, ev: Evaluation) {
        self.t.push(t);
        self.x.push(x.clone());
        self.y_cmd.push(y_cmd);
        self.u_bl.push(ev.u_bl);
        self.pi.push(ev.pi);
        self.u.push(ev.u);
        self.y_lim.push(ev.y_lim);
        if let Some(y) = ev.y_reg {
            self.y_reg.push(y);
        }
        if let Some(y) = ev.y_mod {
            self.y_mod.push(y);
        }
        self.activation.push(ev.activation);
        if let Some(e) = ev.integrator {
            self.integrator.push(e);
        }
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn with_names(mut self, names: SignalNames) -> Self {
        self.names = names;
        self
    }

    /// Component `i` of a logged signal over time.
    pub fn channel(signal: &[DVector<f64>], i: usize) -> Vec<f64> {
        signal.iter().map(|v| v[i]).collect()
    }

    /// CSV with header `t,<states>,<controls>,<limited>,<delta flags>`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let n_delta = self.activation.first().map_or(0, |a| a.delta.len());
        let mut header = vec!["t".to_string()];
        header.extend(self.names.states.iter().cloned());
        header.extend(self.names.controls.iter().cloned());
        header.extend(self.names.limited.iter().cloned());
        header.extend((0..n_delta).map(|i| format!("delta{i}")));
        writeln!(w, "{}", header.join(","))?;
        for k in 0..self.len() {
            let mut row = vec![self.t[k].to_string()];
            row.extend(self.x[k].iter().map(f64::to_string));
            row.extend(self.u[k].iter().map(f64::to_string));
            row.extend(self.y_lim[k].iter().map(f64::to_string));
            row.extend(self.activation[k].delta.iter().map(|&d| if d { "1" } else { "0" }.to_string()));
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Classical RK4 on `cl` with the command sampled at every sub-stage.
pub fn simulate(cl: &dyn ClosedLoop, command: &CommandSignal, x0: &DVector<f64>, dt: f64, horizon: f64) -> Result<Trajectory> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
    }
    if !(horizon >= dt && horizon.is_finite()) {
        return Err(Error::InvalidArgument(format!("horizon {horizon} shorter than dt {dt}")));
    }
    if x0.len() != cl.state_dim() {
        return Err(Error::dims("x0", cl.state_dim(), x0.len()));
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteState { last_finite_step: 0 });
    }
    cl.check_initial(x0, &command.at(0.0))?;
    let steps = (horizon / dt).round() as usize;
    let mut traj = Trajectory::new(dt, cl.names(), steps + 1);
    let mut x = x0.clone();
    for k in 0..=steps {
        let t = k as f64 * dt;
        let cmd = command.at(t);
        let ev = cl.evaluate(&x, &cmd);
        traj.push(t, &x, cmd.clone(), ev);
        if k == steps {
            break;
        }
        let mid = command.at(t + 0.5 * dt);
        let end = command.at(t + dt);
        let k1 = cl.derivative(&x, &cmd);
        let k2 = cl.derivative(&(&x + &k1 * (0.5 * dt)), &mid);
        let k3 = cl.derivative(&(&x + &k2 * (0.5 * dt)), &mid);
        let k4 = cl.derivative(&(&x + &k3 * dt), &end);
        x += (k1 + (k2 + k3) * 2.0 + k4) * (dt / 6.0);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteState { last_finite_step: k });
        }
    }
    Ok(traj)
}

/// Largest deviation between logged controls and controls recomputed from
/// the logged `(x, u_bl)`.
pub fn replay_error(traj: &Trajectory, cl: &dyn ClosedLoop) -> f64 {
    (0..traj.len())
        .map(|k| (cl.replay_control(&traj.x[k], &traj.u_bl[k], &traj.y_cmd[k]) - &traj.u[k]).amax())
        .fold(0.0, f64::max)
}

/// Scalar rectangular projection operator comparator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectionParams {
    pub a: f64,
    pub b: f64,
    pub k_x: f64,
    pub k_ff: f64,
    pub x_min: f64,
    pub x_max: f64,
    pub tol: f64,
}

impl ProjectionParams {
    pub fn new(a: f64, b: f64, k_x: f64, k_ff: f64, x_min: f64, x_max: f64, tol: f64) -> Result<Self> {
        if !(tol > 0.0) {
            return Err(Error::InvalidArgument(format!("projection tolerance must be positive, got {tol}")));
        }
        if !(x_min < x_max) {
            return Err(Error::InvalidBox { channel: 0, min: x_min, max: x_max });
        }
        if b == 0.0 {
            return Err(Error::InvalidArgument("projection needs b ≠ 0".into()));
        }
        Ok(Self { a, b, k_x, k_ff, x_min, x_max, tol })
    }

    /// `ẋ|_bl = (a − b k_x) x + b k_ff x_cmd`.
    pub fn baseline_rate(&self, x: f64, x_cmd: f64) -> f64 {
        (self.a - self.b * self.k_x) * x + self.b * self.k_ff * x_cmd
    }

    fn branch(&self, x: f64, y: f64) -> SelectedBound {
        if x > self.x_max - self.tol && y > 0.0 {
            SelectedBound::Max(self.x_max)
        } else if x < self.x_min + self.tol && y < 0.0 {
            SelectedBound::Min(self.x_min)
        } else {
            SelectedBound::None
        }
    }

    fn clamp_branch(&self, x: f64, y: f64) -> SelectedBound {
        if x >= self.x_max && y > 0.0 {
            SelectedBound::Max(self.x_max)
        } else if x <= self.x_min && y < 0.0 {
            SelectedBound::Min(self.x_min)
        } else {
            SelectedBound::None
        }
    }

    /// Cancels the outward baseline rate on or beyond a bound.
    pub fn clamp_augmentation(&self, x: f64, x_cmd: f64) -> f64 {
        let y = self.baseline_rate(x, x_cmd);
        match self.clamp_branch(x, y) {
            SelectedBound::None => 0.0,
            _ => -y / self.b,
        }
    }

    pub fn proj(&self, x: f64, y: f64) -> f64 {
        match self.branch(x, y) {
            SelectedBound::Max(_) => (self.x_max - x) / self.tol * y,
            SelectedBound::Min(_) => (x - self.x_min) / self.tol * y,
            SelectedBound::None => y,
        }
    }

    /// `π_proj = b⁻¹ (Proj(x, ẋ|_bl) − ẋ|_bl)`.
    pub fn augmentation(&self, x: f64, x_cmd: f64) -> f64 {
        let y = self.baseline_rate(x, x_cmd);
        (self.proj(x, y) - y) / self.b
    }
}

pub fn projection_augmentation(p: &ProjectionParams, x: f64, x_cmd: f64) -> f64 {
    p.augmentation(x, x_cmd)
}

/// Excursion of one channel beyond its bounds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelViolation {
    /// Worst excursion, zero when the channel stays inside.
    pub worst: f64,
    /// First time the excursion exceeds the tolerance.
    pub first_violation: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InvarianceReport {
    /// Absolute tolerance, or the span fraction for relative reports.
    pub tol: f64,
    pub raw: Vec<ChannelViolation>,
    /// Excursions of the modified output beyond `α_π`-scaled bounds.
    pub modified: Vec<ChannelViolation>,
}

impl InvarianceReport {
    pub fn holds(&self) -> bool {
        self.raw.iter().chain(self.modified.iter()).all(|c| c.first_violation.is_none())
    }

    pub fn worst_raw(&self) -> f64 {
        self.raw.iter().map(|c| c.worst).fold(0.0, f64::max)
    }
}

fn violations(t: &[f64], y: &[DVector<f64>], lo: &DVector<f64>, hi: &DVector<f64>, tol: &[f64]) -> Vec<ChannelViolation> {
    (0..lo.len())
        .map(|i| {
            let mut worst = 0.0f64;
            let mut first = None;
            for (k, yk) in y.iter().enumerate() {
                let ex = (yk[i] - hi[i]).max(lo[i] - yk[i]).max(0.0);
                worst = worst.max(ex);
                if first.is_none() && ex > tol[i] {
                    first = Some(t[k]);
                }
            }
            ChannelViolation {
                worst,
                first_violation: first,
            }
        })
        .collect()
}

/// Box excursions of `y_lim` and, when a design is given and the trajectory
/// logged it, of the modified output, against one absolute tolerance.
pub fn invariance_report(traj: &Trajectory, bx: &ConstraintBox, design: Option<&CbfDesign>, tol: f64) -> Result<InvarianceReport> {
    let raw = vec![tol; bx.len()];
    let modified = match design {
        Some(d) => d.alpha_pi().iter().map(|_| tol).collect(),
        None => Vec::new(),
    };
    report_with(traj, bx, design, &raw, &modified, tol)
}

/// As [`invariance_report`] with the tolerance of each channel set to
/// `fraction` of its span (scaled by `α_π` for the modified output).
pub fn invariance_report_relative(traj: &Trajectory, bx: &ConstraintBox, design: Option<&CbfDesign>, fraction: f64) -> Result<InvarianceReport> {
    let span = bx.span();
    let raw: Vec<f64> = span.iter().map(|s| fraction * s).collect();
    let modified = match design {
        Some(d) => span.iter().zip(d.alpha_pi().iter()).map(|(s, a)| fraction * s * a).collect(),
        None => Vec::new(),
    };
    report_with(traj, bx, design, &raw, &modified, fraction)
}

fn report_with(traj: &Trajectory, bx: &ConstraintBox, design: Option<&CbfDesign>, raw_tol: &[f64], mod_tol: &[f64], tol: f64) -> Result<InvarianceReport> {
    if let Some(y) = traj.y_lim.first() {
        if y.len() != bx.len() {
            return Err(Error::dims("limited output", bx.len(), y.len()));
        }
    }
    let raw = violations(&traj.t, &traj.y_lim, bx.min(), bx.max(), raw_tol);
    let modified = match design {
        Some(d) if traj.y_mod.len() == traj.len() => {
            let (lo, hi) = d.modified_box(bx);
            violations(&traj.t, &traj.y_mod, &lo, &hi, mod_tol)
        }
        _ => Vec::new(),
    };
    Ok(InvarianceReport { tol, raw, modified })
}

/// Largest norm over the two halves of the final `fraction` of a signal.
pub fn tail_growth(signal: &[DVector<f64>], fraction: f64) -> (f64, f64) {
    let len = signal.len();
    let start = len - ((len as f64 * fraction).round() as usize).min(len);
    let mid = start + (len - start) / 2;
    let max_norm = |s: &[DVector<f64>]| s.iter().map(|v| v.amax()).fold(0.0, f64::max);
    (max_norm(&signal[start..mid]), max_norm(&signal[mid..]))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryCheck {
    pub max_residual: f64,
    pub active_samples: usize,
    /// `tol·(1 + |λ|·span)`.
    pub threshold: f64,
}

impl BoundaryCheck {
    pub fn passed(&self) -> bool {
        self.max_residual <= self.threshold
    }
}

/// On samples where `channel` tracks the same bound across the difference
/// stencil, compares the central-difference
/// rate of `y_lim` with `λ (y_lim − y_bound)`. Requires relative degree one.
pub fn boundary_dynamics_check(traj: &Trajectory, design: &CbfDesign, bx: &ConstraintBox, channel: usize, tol: f64) -> Result<BoundaryCheck> {
    if channel >= design.channels() {
        return Err(Error::IndexOutOfRange {
            what: "channel",
            index: channel,
            len: design.channels(),
        });
    }
    let roots = design.bank().roots(channel);
    if roots.len() != 1 {
        return Err(Error::InvalidArgument(format!(
            "boundary dynamics check needs relative degree one on channel {channel}, got {}",
            roots.len()
        )));
    }
    let lambda = roots[0];
    let threshold = tol * (1.0 + lambda.abs() * bx.span()[channel]);
    let mut max_residual = 0.0f64;
    let mut active_samples = 0;
    for k in 1..traj.len().saturating_sub(1) {
        let sel = traj.activation[k].selected_bound[channel];
        let bound = match sel {
            SelectedBound::Min(v) | SelectedBound::Max(v) => v,
            SelectedBound::None => continue,
        };
        // The stencil must not straddle a switch of the selected bound.
        if traj.activation[k - 1].selected_bound[channel] != sel || traj.activation[k + 1].selected_bound[channel] != sel {
            continue;
        }
        let (t0, t1) = (traj.t[k - 1], traj.t[k + 1]);
        let rate = (traj.y_lim[k + 1][channel] - traj.y_lim[k - 1][channel]) / (t1 - t0);
        let residual = (rate - lambda * (traj.y_lim[k][channel] - bound)).abs();
        max_residual = max_residual.max(residual);
        active_samples += 1;
    }
    Ok(BoundaryCheck {
        max_residual,
        active_samples,
        threshold,
    })
}

/// `A − B K` for a proportional loop; handy for oracles.
pub fn closed_loop_matrix(model: &StateSpaceModel, k_x: &DMatrix<f64>) -> DMatrix<f64> {
    model.a() - model.b() * k_x
}
