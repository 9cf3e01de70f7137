//! Scenario configuration: TOML schema, unit handling and validation.
//!
//! Matrices are written as `{ rows, cols, data }` with `data` in row-major
//! order. Every limit, command level and initial state carries a unit tag;
//! values are converted to internal units (radians, rad/s, g) once, at
//! validation time.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::cbf::ConstraintBox;
use crate::error::{Error, Result};
use crate::lti::{self, StateSpaceModel};
use crate::sim::{self, CommandSignal};

/// Gravitational acceleration in ft/s².
pub const G_FT: f64 = 32.174;
/// Gravitational acceleration in m/s².
pub const G_SI: f64 = 9.80665;

const SCALAR_SERVO: &str = include_str!("../scenarios/scalar-servo.toml");
const AIRCRAFT_LATERAL: &str = include_str!("../scenarios/aircraft-lateral.toml");

/// Names and sources of the scenarios shipped with the crate.
pub const BUILTINS: [(&str, &str); 2] = [("scalar-servo", SCALAR_SERVO), ("aircraft-lateral", AIRCRAFT_LATERAL)];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum UnitSystem {
    #[default]
    #[serde(rename = "si")]
    Si,
    #[serde(rename = "ft-lb")]
    FtLb,
}

/// Multiplier from a tagged value to internal units, and the internal tag.
pub fn unit_factor(tag: &str, system: UnitSystem) -> Option<(f64, &'static str)> {
    let deg = std::f64::consts::PI / 180.0;
    Some(match (tag, system) {
        ("" | "1", _) => (1.0, "1"),
        ("rad", _) => (1.0, "rad"),
        ("rad/s", _) => (1.0, "rad/s"),
        ("deg", _) => (deg, "rad"),
        ("deg/s", _) => (deg, "rad/s"),
        ("g", _) => (1.0, "g"),
        ("ft/s^2", UnitSystem::FtLb) => (1.0 / G_FT, "g"),
        ("m/s^2", UnitSystem::Si) => (1.0 / G_SI, "g"),
        ("s", _) => (1.0, "s"),
        ("ft", UnitSystem::FtLb) => (1.0, "ft"),
        ("ft/s", UnitSystem::FtLb) => (1.0, "ft/s"),
        ("m", UnitSystem::Si) => (1.0, "m"),
        ("m/s", UnitSystem::Si) => (1.0, "m/s"),
        _ => return None,
    })
}

/// Internal value → tagged value.
pub fn from_internal(value: f64, tag: &str, system: UnitSystem) -> Option<f64> {
    unit_factor(tag, system).map(|(f, _)| value / f)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixConfig {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl MatrixConfig {
    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        Self {
            rows: m.nrows(),
            cols: m.ncols(),
            data: m.transpose().iter().copied().collect(),
        }
    }

    fn to_matrix(&self, field: &str) -> Result<DMatrix<f64>> {
        if self.rows * self.cols != self.data.len() {
            return Err(Error::config(
                field,
                format!("{}×{} needs {} entries, found {}", self.rows, self.cols, self.rows * self.cols, self.data.len()),
            ));
        }
        if let Some(i) = self.data.iter().position(|v| !v.is_finite()) {
            return Err(Error::config(format!("{field}.data[{i}]"), "entry is not finite"));
        }
        Ok(DMatrix::from_row_slice(self.rows, self.cols, &self.data))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantConfig {
    pub states: Vec<String>,
    pub inputs: Vec<String>,
    pub a: MatrixConfig,
    pub b: MatrixConfig,
}

/// Limited output `y_lim = C x` and its box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LimitedConfig {
    pub names: Vec<String>,
    pub units: Vec<String>,
    pub c: MatrixConfig,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegulatedConfig {
    pub names: Vec<String>,
    pub units: Vec<String>,
    pub c: MatrixConfig,
    pub d: MatrixConfig,
}

/// Limits on the baseline control of a PI servo.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputLimitConfig {
    pub units: Vec<String>,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

/// Filter polynomials, given either by `α_π` or by explicit roots. For a PI
/// servo the channels are the baseline controls followed by the limited outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct BarrierConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub roots: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum BaselineConfig {
    Proportional { k_x: MatrixConfig },
    Pi { k_i: MatrixConfig, k_p: MatrixConfig },
    LqrPi { q: Vec<f64>, r: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommandConfig {
    pub units: Vec<String>,
    /// Per channel, a list of `[start time, level]` pairs.
    pub channels: Vec<Vec<[f64; 2]>>,
}

fn default_dt() -> f64 {
    sim::DEFAULT_DT
}
fn default_true() -> bool {
    true
}
fn default_tolerance_fraction() -> f64 {
    0.02
}
fn default_projection_tol() -> f64 {
    sim::DEFAULT_PROJECTION_TOL
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    /// Initial state, tagged per entry with `x0_units`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0_units: Option<Vec<String>>,
    /// Also simulate the baseline without augmentation.
    #[serde(default = "default_true")]
    pub compare_baseline: bool,
    /// Allowed excursion beyond each limit as a fraction of its span.
    #[serde(default = "default_tolerance_fraction")]
    pub tolerance_fraction: f64,
    /// Boundary layer of the projection comparator (scalar scenarios).
    #[serde(default = "default_projection_tol")]
    pub projection_tol: f64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            dt: default_dt(),
            horizon: None,
            x0: None,
            x0_units: None,
            compare_baseline: true,
            tolerance_fraction: default_tolerance_fraction(),
            projection_tol: default_projection_tol(),
        }
    }
}

fn default_grid_lo() -> f64 {
    1e-3
}
fn default_grid_hi() -> f64 {
    1e3
}
fn default_grid_points() -> usize {
    400
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    #[serde(default = "default_true")]
    pub margins: bool,
    #[serde(default = "default_grid_lo")]
    pub grid_lo: f64,
    #[serde(default = "default_grid_hi")]
    pub grid_hi: f64,
    #[serde(default = "default_grid_points")]
    pub grid_points: usize,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            margins: true,
            grid_lo: default_grid_lo(),
            grid_hi: default_grid_hi(),
            grid_points: default_grid_points(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub unit_system: UnitSystem,
    /// Relative threshold below which a Markov parameter counts as zero.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zero_tol: Option<f64>,
    pub plant: PlantConfig,
    pub limited: LimitedConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regulated: Option<RegulatedConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_limits: Option<InputLimitConfig>,
    pub barrier: BarrierConfig,
    pub baseline: BaselineConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub command: Option<CommandConfig>,
    #[serde(default)]
    pub simulation: SimulationConfig,
    #[serde(default)]
    pub analysis: AnalysisConfig,
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            let field = e.span().map_or_else(|| "<document>".to_string(), |s| locate(text, s.start));
            Error::config(field, e.message().to_string())
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config("<document>", e.to_string()))
    }
}

/// Nearest preceding `key =` or `[table]` for a parse error position.
fn locate(text: &str, offset: usize) -> String {
    let head = &text[..offset.min(text.len())];
    let mut table = String::new();
    let mut key = String::new();
    for line in head.lines() {
        let l = line.trim();
        if l.starts_with('[') {
            table = l.trim_matches(|c| c == '[' || c == ']').to_string();
            key.clear();
        } else if let Some((k, _)) = l.split_once('=') {
            key = k.trim().to_string();
        }
    }
    match (table.is_empty(), key.is_empty()) {
        (true, true) => "<document>".into(),
        (true, false) => key,
        (false, true) => table,
        (false, false) => format!("{table}.{key}"),
    }
}

/// Servo or plain state-feedback scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScenarioKind {
    Proportional,
    Servo,
}

/// Filter specification after validation.
#[derive(Debug, Clone, PartialEq)]
pub enum BankSpec {
    Alpha(Vec<f64>),
    Roots(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum BaselineSpec {
    Proportional { k_x: DMatrix<f64> },
    Pi { k_i: DMatrix<f64>, k_p: DMatrix<f64> },
    LqrPi { q: Vec<f64>, r: Vec<f64> },
}

/// Validated scenario in internal units.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    /// The configuration with every value converted to internal units.
    pub normalized: ScenarioConfig,
    pub kind: ScenarioKind,
    pub plant: StateSpaceModel,
    pub limited_box: ConstraintBox,
    pub input_box: Option<ConstraintBox>,
    pub bank: BankSpec,
    pub baseline: BaselineSpec,
    pub command: CommandSignal,
    pub x0: DVector<f64>,
    pub zero_tol: f64,
}

impl Scenario {
    pub fn name(&self) -> &str {
        &self.normalized.name
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        validate(&ScenarioConfig::from_toml(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::config("--config", format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn builtin(name: &str) -> Result<Self> {
        let text = BUILTINS
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, t)| *t)
            .ok_or_else(|| {
                let known: Vec<_> = BUILTINS.iter().map(|(n, _)| *n).collect();
                Error::config("--builtin", format!("unknown scenario '{name}', expected one of {known:?}"))
            })?;
        Self::from_toml(text)
    }

    /// Limited-output channel names in design order (baseline controls first for a servo).
    pub fn limited_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        if self.kind == ScenarioKind::Servo {
            names.extend(self.normalized.plant.inputs.iter().map(|n| format!("{n}_bl")));
        }
        names.extend(self.normalized.limited.names.iter().cloned());
        names
    }

    /// Command channel names; the regulated outputs for a servo.
    pub fn command_names(&self) -> Vec<String> {
        match &self.normalized.regulated {
            Some(r) => r.names.iter().map(|n| format!("{n}_cmd")).collect(),
            None => (0..self.plant.m()).map(|i| format!("cmd{i}")).collect(),
        }
    }
}

fn check_len(field: &str, expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::config(field, format!("expected {expected} entries, found {found}")));
    }
    Ok(())
}

fn check_shape(field: &str, m: &MatrixConfig, rows: usize, cols: usize) -> Result<()> {
    if (m.rows, m.cols) != (rows, cols) {
        return Err(Error::config(field, format!("expected {rows}×{cols}, found {}×{}", m.rows, m.cols)));
    }
    Ok(())
}

/// Converts `values` tagged with `units` to internal units; returns the
/// converted values and the internal tags.
fn convert(field: &str, values: &[f64], units: &[String], system: UnitSystem) -> Result<(Vec<f64>, Vec<String>)> {
    check_len(&format!("{field}.units"), values.len(), units.len())?;
    let mut out = Vec::with_capacity(values.len());
    let mut tags = Vec::with_capacity(values.len());
    for (i, (v, u)) in values.iter().zip(units).enumerate() {
        if !v.is_finite() {
            return Err(Error::config(format!("{field}[{i}]"), "value is not finite"));
        }
        let (f, tag) = unit_factor(u, system).ok_or_else(|| Error::config(format!("{field}.units[{i}]"), format!("unknown unit '{u}' for {system:?}")))?;
        out.push(v * f);
        tags.push(tag.to_string());
    }
    Ok((out, tags))
}

fn make_box(field: &str, min: &[f64], max: &[f64]) -> Result<ConstraintBox> {
    for i in 0..min.len() {
        if !(min[i] < max[i]) {
            return Err(Error::config(
                format!("{field}.min[{i}]"),
                format!("min {} must be below max {}", min[i], max[i]),
            ));
        }
    }
    ConstraintBox::new(DVector::from_column_slice(min), DVector::from_column_slice(max))
}

/// Checks a configuration and converts it to internal units.
pub fn validate(cfg: &ScenarioConfig) -> Result<Scenario> {
    let mut norm = cfg.clone();
    let sys = cfg.unit_system;
    if cfg.name.trim().is_empty() {
        return Err(Error::config("name", "must not be empty"));
    }
    if cfg.name.contains(['/', '\\']) {
        return Err(Error::config("name", "must not contain path separators"));
    }
    let n = cfg.plant.states.len();
    let m = cfg.plant.inputs.len();
    if n == 0 || m == 0 {
        return Err(Error::config("plant.states", "plant needs at least one state and one input"));
    }
    check_shape("plant.a", &cfg.plant.a, n, n)?;
    check_shape("plant.b", &cfg.plant.b, n, m)?;
    let a = cfg.plant.a.to_matrix("plant.a")?;
    let b = cfg.plant.b.to_matrix("plant.b")?;

    let lim = &cfg.limited;
    check_shape("limited.c", &lim.c, m, n)?;
    check_len("limited.names", m, lim.names.len())?;
    check_len("limited.min", m, lim.min.len())?;
    check_len("limited.max", m, lim.max.len())?;
    let c_lim = lim.c.to_matrix("limited.c")?;
    let (lo, tags) = convert("limited.min", &lim.min, &lim.units, sys)?;
    let (hi, _) = convert("limited.max", &lim.max, &lim.units, sys)?;
    let limited_box = make_box("limited", &lo, &hi)?;
    norm.limited.min = lo;
    norm.limited.max = hi;
    norm.limited.units = tags;

    let mut plant = StateSpaceModel::new(a, b, c_lim).map_err(|e| Error::config("plant", e.to_string()))?;
    if let Some(reg) = &cfg.regulated {
        check_shape("regulated.c", &reg.c, m, n)?;
        check_shape("regulated.d", &reg.d, m, m)?;
        check_len("regulated.names", m, reg.names.len())?;
        check_len("regulated.units", m, reg.units.len())?;
        for (i, u) in reg.units.iter().enumerate() {
            let (_, tag) = unit_factor(u, sys).ok_or_else(|| Error::config(format!("regulated.units[{i}]"), format!("unknown unit '{u}'")))?;
            norm.regulated.as_mut().expect("present").units[i] = tag.to_string();
        }
        plant = plant
            .with_regulated(reg.c.to_matrix("regulated.c")?, reg.d.to_matrix("regulated.d")?)
            .map_err(|e| Error::config("regulated", e.to_string()))?;
    }

    let (kind, baseline) = match &cfg.baseline {
        BaselineConfig::Proportional { k_x } => {
            check_shape("baseline.k_x", k_x, m, n)?;
            (ScenarioKind::Proportional, BaselineSpec::Proportional { k_x: k_x.to_matrix("baseline.k_x")? })
        }
        BaselineConfig::Pi { k_i, k_p } => {
            check_shape("baseline.k_i", k_i, m, m)?;
            check_shape("baseline.k_p", k_p, m, n)?;
            (
                ScenarioKind::Servo,
                BaselineSpec::Pi {
                    k_i: k_i.to_matrix("baseline.k_i")?,
                    k_p: k_p.to_matrix("baseline.k_p")?,
                },
            )
        }
        BaselineConfig::LqrPi { q, r } => {
            check_len("baseline.q", n + m, q.len())?;
            check_len("baseline.r", m, r.len())?;
            if let Some(i) = q.iter().position(|v| !(*v >= 0.0 && v.is_finite())) {
                return Err(Error::config(format!("baseline.q[{i}]"), "weights must be finite and nonnegative"));
            }
            if let Some(i) = r.iter().position(|v| !(*v > 0.0 && v.is_finite())) {
                return Err(Error::config(format!("baseline.r[{i}]"), "weights must be finite and positive"));
            }
            (ScenarioKind::Servo, BaselineSpec::LqrPi { q: q.clone(), r: r.clone() })
        }
    };

    let input_box = match (kind, &cfg.input_limits) {
        (ScenarioKind::Servo, Some(il)) => {
            check_len("input_limits.min", m, il.min.len())?;
            check_len("input_limits.max", m, il.max.len())?;
            let (lo, tags) = convert("input_limits.min", &il.min, &il.units, sys)?;
            let (hi, _) = convert("input_limits.max", &il.max, &il.units, sys)?;
            let bx = make_box("input_limits", &lo, &hi)?;
            let nl = norm.input_limits.as_mut().expect("present");
            nl.min = lo;
            nl.max = hi;
            nl.units = tags;
            Some(bx)
        }
        (ScenarioKind::Servo, None) => return Err(Error::config("input_limits", "a PI servo scenario needs baseline-control limits")),
        (ScenarioKind::Proportional, Some(_)) => {
            return Err(Error::config("input_limits", "only PI servo scenarios take baseline-control limits"))
        }
        (ScenarioKind::Proportional, None) => None,
    };
    if kind == ScenarioKind::Servo && cfg.regulated.is_none() {
        return Err(Error::config("regulated", "a PI servo scenario needs a regulated output"));
    }

    let channels = if kind == ScenarioKind::Servo { 2 * m } else { m };
    let bank = match (&cfg.barrier.alpha, &cfg.barrier.roots) {
        (Some(alpha), None) => {
            check_len("barrier.alpha", channels, alpha.len())?;
            if let Some(i) = alpha.iter().position(|v| !(*v > 0.0 && v.is_finite())) {
                return Err(Error::config(format!("barrier.alpha[{i}]"), "must be positive"));
            }
            BankSpec::Alpha(alpha.clone())
        }
        (None, Some(roots)) => {
            check_len("barrier.roots", channels, roots.len())?;
            for (i, r) in roots.iter().enumerate() {
                if r.is_empty() || r.iter().any(|v| !(*v < 0.0 && v.is_finite())) {
                    return Err(Error::config(format!("barrier.roots[{i}]"), "roots must be finite and negative"));
                }
            }
            BankSpec::Roots(roots.clone())
        }
        _ => return Err(Error::config("barrier", "give exactly one of 'alpha' or 'roots'")),
    };

    let command = match &cfg.command {
        Some(cc) => {
            check_len("command.channels", m, cc.channels.len())?;
            check_len("command.units", m, cc.units.len())?;
            let mut sched = Vec::with_capacity(m);
            let mut tags = Vec::with_capacity(m);
            for (i, ch) in cc.channels.iter().enumerate() {
                let (f, tag) = unit_factor(&cc.units[i], sys)
                    .ok_or_else(|| Error::config(format!("command.units[{i}]"), format!("unknown unit '{}'", cc.units[i])))?;
                sched.push(ch.iter().map(|&[t, v]| (t, v * f)).collect::<Vec<_>>());
                tags.push(tag.to_string());
            }
            let signal = CommandSignal::new(sched.clone()).map_err(|e| Error::config("command.channels", e.to_string()))?;
            let nc = norm.command.as_mut().expect("present");
            nc.units = tags;
            nc.channels = sched.iter().map(|ch| ch.iter().map(|&(t, v)| [t, v]).collect()).collect();
            signal
        }
        None => CommandSignal::zero(m),
    };

    let simc = &cfg.simulation;
    if !(simc.dt > 0.0 && simc.dt.is_finite()) {
        return Err(Error::config("simulation.dt", "must be positive"));
    }
    if let Some(h) = simc.horizon {
        if !(h >= simc.dt && h.is_finite()) {
            return Err(Error::config("simulation.horizon", "must be at least one step"));
        }
    }
    if !(simc.tolerance_fraction >= 0.0 && simc.tolerance_fraction.is_finite()) {
        return Err(Error::config("simulation.tolerance_fraction", "must be nonnegative"));
    }
    if !(simc.projection_tol > 0.0) {
        return Err(Error::config("simulation.projection_tol", "must be positive"));
    }
    let state_dim = if kind == ScenarioKind::Servo { n + m } else { n };
    let x0 = match &simc.x0 {
        Some(x0) => {
            check_len("simulation.x0", state_dim, x0.len())?;
            let units = simc.x0_units.clone().unwrap_or_else(|| vec!["1".into(); x0.len()]);
            let (v, tags) = convert("simulation.x0", x0, &units, sys)?;
            norm.simulation.x0 = Some(v.clone());
            norm.simulation.x0_units = Some(tags);
            DVector::from_vec(v)
        }
        None => {
            if simc.x0_units.is_some() {
                return Err(Error::config("simulation.x0_units", "given without simulation.x0"));
            }
            DVector::zeros(state_dim)
        }
    };

    let an = &cfg.analysis;
    if !(an.grid_lo > 0.0 && an.grid_hi > an.grid_lo) || an.grid_points < 2 {
        return Err(Error::config("analysis.grid_lo", "grid needs 0 < grid_lo < grid_hi and at least 2 points"));
    }

    let zero_tol = cfg.zero_tol.unwrap_or(lti::DEFAULT_ZERO_TOL);
    if !(zero_tol > 0.0 && zero_tol < 1.0) {
        return Err(Error::config("zero_tol", "must lie in (0, 1)"));
    }

    Ok(Scenario {
        normalized: norm,
        kind,
        plant,
        limited_box,
        input_box,
        bank,
        baseline,
        command,
        x0,
        zero_tol,
    })
}
