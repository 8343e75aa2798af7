//! Run configuration: a flat `key = value` file with `#` comments.
//!
//! Numbers may be written as plain decimals, `inf`, or products and
//! quotients involving `pi` such as `2*pi` or `pi/4`. Lists are comma
//! separated. Unknown keys, malformed values and out-of-range values are
//! rejected with the offending line number.
//!
//! [`RunConfig::manifest`] echoes every resolved value, defaults included,
//! in the same syntax; parsing a manifest reproduces the configuration.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::diagnostics::NormField;
use crate::error::{Error, Result};
use crate::integrator::{StepControl, Stepping};
use crate::model::{Flow, ModelParams, PotentialSpec, State, Variant};
use crate::output;
use crate::spectral::{Grid, ScalarField, VectorField};
use crate::verification::ExperimentKind;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IcKind {
    /// `amp · exp(−r²/(2w²))`, `r` the periodic distance to the center.
    Gaussian,
    /// `amp · (1 + cos(2π m·x/L))`.
    CosineMode,
    /// `amp · cos(2π m·x/L)`, for signed fields.
    Cosine,
    Uniform,
    /// Field of the same name read from a snapshot file.
    File,
    Zero,
}

impl IcKind {
    fn name(self) -> &'static str {
        match self {
            IcKind::Gaussian => "gaussian",
            IcKind::CosineMode => "cosine_mode",
            IcKind::Cosine => "cosine",
            IcKind::Uniform => "uniform",
            IcKind::File => "file",
            IcKind::Zero => "zero",
        }
    }

    fn parse(s: &str) -> Option<IcKind> {
        [
            IcKind::Gaussian,
            IcKind::CosineMode,
            IcKind::Cosine,
            IcKind::Uniform,
            IcKind::File,
            IcKind::Zero,
        ]
        .into_iter()
        .find(|k| k.name() == s)
    }
}

/// Initial condition of one scalar field.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldIc {
    pub kind: IcKind,
    pub amplitude: f64,
    pub center: Vec<f64>,
    pub width: f64,
    pub mode: Vec<i64>,
    pub file: Option<PathBuf>,
}

impl FieldIc {
    pub fn gaussian(amplitude: f64, center: Vec<f64>, width: f64) -> FieldIc {
        let dim = center.len();
        FieldIc {
            kind: IcKind::Gaussian,
            amplitude,
            center,
            width,
            mode: unit_mode(dim),
            file: None,
        }
    }

    pub fn zero(dim: usize, length: f64) -> FieldIc {
        FieldIc {
            kind: IcKind::Zero,
            amplitude: 0.0,
            center: vec![0.5 * length; dim],
            width: length / 16.0,
            mode: unit_mode(dim),
            file: None,
        }
    }

    pub fn with_kind(mut self, kind: IcKind, amplitude: f64, mode: Vec<i64>) -> FieldIc {
        self.kind = kind;
        self.amplitude = amplitude;
        self.mode = mode;
        self
    }

    /// Samples the field, reading `name` from the snapshot for `file` kinds.
    pub fn build(&self, grid: &Grid, name: &str) -> Result<ScalarField> {
        let length = grid.length();
        let dim = grid.dim();
        let amp = self.amplitude;
        let phase = |x: &[f64]| {
            2.0 * PI
                * self
                    .mode
                    .iter()
                    .zip(x)
                    .map(|(&m, &xi)| m as f64 * xi)
                    .sum::<f64>()
                / length
        };
        Ok(match self.kind {
            IcKind::Zero => ScalarField::zeros(grid),
            IcKind::Uniform => ScalarField::constant(grid, amp),
            IcKind::CosineMode => ScalarField::from_fn(grid, |x| amp * (1.0 + phase(x).cos())),
            IcKind::Cosine => ScalarField::from_fn(grid, |x| amp * phase(x).cos()),
            IcKind::Gaussian => {
                let two_w2 = 2.0 * self.width * self.width;
                ScalarField::from_fn(grid, |x| {
                    let r2: f64 = (0..dim)
                        .map(|a| {
                            let mut d = (x[a] - self.center[a]).rem_euclid(length);
                            if d > 0.5 * length {
                                d -= length;
                            }
                            d * d
                        })
                        .sum();
                    amp * (-r2 / two_w2).exp()
                })
            }
            IcKind::File => {
                let path = self
                    .file
                    .as_ref()
                    .ok_or_else(|| Error::param(&format!("{name}_file"), "missing path"))?;
                let snap = output::read_snapshot(path)?;
                if snap.dim != dim || snap.n != grid.n() || snap.length != length {
                    return Err(Error::ResolutionMismatch(format!(
                        "{} holds a {}D N={} L={} grid, run uses {}D N={} L={}",
                        path.display(),
                        snap.dim,
                        snap.n,
                        snap.length,
                        dim,
                        grid.n(),
                        length
                    )));
                }
                let values = snap.field(name).ok_or_else(|| Error::Snapshot {
                    path: path.clone(),
                    reason: format!("no field named `{name}`"),
                })?;
                ScalarField::new(grid, values.to_vec())?
            }
        })
    }
}

fn unit_mode(dim: usize) -> Vec<i64> {
    let mut m = vec![0; dim];
    m[0] = 1;
    m
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VelocityKind {
    Zero,
    /// `U (−sin kx cos ky, cos kx sin ky, 0)` with `k = 2π m/L`.
    Cellular,
}

/// A divergence-free velocity: the prescribed flow of variants `Single`,
/// `Kr` and `A`, or the initial velocity of 3D variant B.
#[derive(Clone, Debug, PartialEq)]
pub struct VelocitySpec {
    pub kind: VelocityKind,
    pub amplitude: f64,
    pub mode: i64,
}

impl VelocitySpec {
    pub fn none() -> VelocitySpec {
        VelocitySpec {
            kind: VelocityKind::Zero,
            amplitude: 1.0,
            mode: 1,
        }
    }

    pub fn cellular(amplitude: f64, mode: i64) -> VelocitySpec {
        VelocitySpec {
            kind: VelocityKind::Cellular,
            amplitude,
            mode,
        }
    }

    pub fn build(&self, grid: &Grid) -> VectorField {
        match self.kind {
            VelocityKind::Zero => VectorField::zeros(grid),
            VelocityKind::Cellular => {
                let k = 2.0 * PI * self.mode as f64 / grid.length();
                let u = self.amplitude;
                VectorField::from_fn(grid, |x| {
                    let (a, b) = (k * x[0], k * x[1]);
                    [-u * a.sin() * b.cos(), u * a.cos() * b.sin(), 0.0]
                })
            }
        }
    }
}

/// A complete, validated run description.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub variant: Variant,
    pub dim: usize,
    pub n: usize,
    pub length: f64,
    pub t_end: f64,
    pub chi: f64,
    pub eps: f64,
    pub q: f64,
    pub kappa: u8,
    pub kappa1: f64,
    pub kappa2: f64,
    pub phi: PotentialSpec,
    /// Prescribed velocity (`Single`, `Kr`, `A`).
    pub flow: VelocitySpec,
    /// Egg density, or `n` for the single-density variant.
    pub e_ic: FieldIc,
    pub s_ic: FieldIc,
    pub c_ic: FieldIc,
    pub omega_ic: FieldIc,
    /// Initial velocity of 3D variant B.
    pub u_ic: VelocitySpec,
    /// Fixed step; `None` selects CFL control.
    pub dt: Option<f64>,
    pub control: StepControl,
    pub record_interval: f64,
    /// Zero disables snapshots.
    pub snapshot_interval: f64,
    pub output: Option<PathBuf>,
    pub track_norms: Vec<(NormField, f64)>,
    pub experiment: Option<ExperimentKind>,
    pub lambda: u32,
    pub dt_list: Vec<f64>,
    pub chi_list: Vec<f64>,
    pub fit_window: Option<(f64, f64)>,
    pub epsilon1: f64,
    pub smallness_threshold: f64,
}

impl RunConfig {
    /// Configuration with every optional key at its default.
    pub fn new(variant: Variant, dim: usize, n: usize, length: f64, t_end: f64) -> RunConfig {
        let center = vec![0.5 * length; dim];
        let width = length / 16.0;
        let params = ModelParams::new(variant, dim);
        RunConfig {
            variant,
            dim,
            n,
            length,
            t_end,
            chi: params.chi,
            eps: params.eps,
            q: params.q,
            kappa: params.kappa,
            kappa1: params.kappa1,
            kappa2: params.kappa2,
            phi: PotentialSpec {
                amplitude: 0.0,
                mode: unit_mode(dim),
            },
            flow: VelocitySpec::none(),
            e_ic: FieldIc::gaussian(1.0, center.clone(), width),
            s_ic: FieldIc::gaussian(1.0, center, width),
            c_ic: FieldIc::zero(dim, length),
            omega_ic: FieldIc::zero(dim, length),
            u_ic: VelocitySpec::none(),
            dt: None,
            control: StepControl::default(),
            record_interval: t_end,
            snapshot_interval: 0.0,
            output: None,
            track_norms: Vec::new(),
            experiment: None,
            lambda: 2,
            dt_list: Vec::new(),
            chi_list: vec![0.0, 5.0, 20.0],
            fit_window: None,
            epsilon1: 0.05,
            smallness_threshold: 0.125,
        }
    }

    pub fn model_params(&self) -> ModelParams {
        ModelParams {
            variant: self.variant,
            chi: self.chi,
            eps: self.eps,
            q: self.q,
            kappa: self.kappa,
            kappa1: self.kappa1,
            kappa2: self.kappa2,
            phi: self.phi.clone(),
        }
    }

    pub fn grid(&self) -> Result<Grid> {
        Grid::new(self.dim, self.n, self.length)
    }

    pub fn stepping(&self) -> Stepping {
        match self.dt {
            Some(dt) => Stepping::Fixed(dt),
            None => Stepping::Adaptive(self.control.clone()),
        }
    }

    /// Prescribed velocity, `None` when absent or for variant B.
    pub fn prescribed_flow(&self, grid: &Grid) -> Result<Option<VectorField>> {
        if self.variant == Variant::B || self.flow.kind == VelocityKind::Zero {
            return Ok(None);
        }
        Ok(Some(self.flow.build(grid)))
    }

    pub fn initial_state(&self, grid: &Grid) -> Result<State> {
        Ok(match self.variant {
            Variant::Single => State::single(self.e_ic.build(grid, "n")?),
            Variant::Kr | Variant::A => {
                State::pair(self.e_ic.build(grid, "e")?, self.s_ic.build(grid, "s")?)
            }
            Variant::B => {
                let flow = if self.dim == 2 {
                    Flow::Vorticity(self.omega_ic.build(grid, "omega")?)
                } else {
                    Flow::Velocity(crate::spectral::leray_project(&self.u_ic.build(grid)))
                };
                State::coupled(
                    self.e_ic.build(grid, "e")?,
                    self.s_ic.build(grid, "s")?,
                    self.c_ic.build(grid, "c")?,
                    flow,
                )
            }
        })
    }

    fn field_ics(&self) -> [(&'static str, &FieldIc); 4] {
        [
            ("e", &self.e_ic),
            ("s", &self.s_ic),
            ("c", &self.c_ic),
            ("omega", &self.omega_ic),
        ]
    }

    /// Checks every range; errors name the offending key.
    pub fn validate(&self) -> Result<()> {
        if self.dim != 2 && self.dim != 3 {
            return Err(Error::param("d", format!("must be 2 or 3, got {}", self.dim)));
        }
        if self.n < 8 || self.n % 2 != 0 {
            return Err(Error::param("N", format!("must be even and >= 8, got {}", self.n)));
        }
        if !(self.length > 0.0 && self.length.is_finite()) {
            return Err(Error::param("L", "must be positive and finite"));
        }
        if !(self.t_end >= 0.0 && self.t_end.is_finite()) {
            return Err(Error::param("t_end", "must be >= 0 and finite"));
        }
        self.model_params().validate(self.dim)?;
        for (name, ic) in self.field_ics() {
            let key = |suffix: &str| format!("{name}_{suffix}");
            if ic.center.len() != self.dim {
                return Err(Error::param(&key("center"), format!("needs {} entries", self.dim)));
            }
            if ic.mode.len() != self.dim {
                return Err(Error::param(&key("mode"), format!("needs {} entries", self.dim)));
            }
            if !(ic.width > 0.0 && ic.width.is_finite()) {
                return Err(Error::param(&key("width"), "must be > 0"));
            }
            if !ic.amplitude.is_finite() {
                return Err(Error::param(&key("amplitude"), "must be finite"));
            }
            if name != "omega" && ic.amplitude < 0.0 {
                return Err(Error::param(&key("amplitude"), "densities need amplitude >= 0"));
            }
            if name != "omega" && ic.kind == IcKind::Cosine {
                return Err(Error::param(&key("ic"), "cosine is signed; use cosine_mode for densities"));
            }
            if ic.kind == IcKind::File && ic.file.is_none() {
                return Err(Error::param(&key("file"), "required when the kind is file"));
            }
        }
        for (name, v) in [("flow", &self.flow), ("u", &self.u_ic)] {
            if !v.amplitude.is_finite() {
                return Err(Error::param(&format!("{name}_amplitude"), "must be finite"));
            }
        }
        if let Some(dt) = self.dt {
            if !(dt > 0.0 && dt.is_finite()) {
                return Err(Error::param("dt", "must be > 0"));
            }
        }
        self.control.validate()?;
        if !(self.record_interval.is_finite() && (self.record_interval > 0.0 || self.t_end == 0.0))
            || self.record_interval < 0.0
        {
            return Err(Error::param("record_interval", "must be > 0"));
        }
        if !(self.snapshot_interval >= 0.0 && self.snapshot_interval.is_finite()) {
            return Err(Error::param("snapshot_interval", "must be >= 0"));
        }
        for &(_, p) in &self.track_norms {
            if p.is_nan() || p < 1.0 {
                return Err(Error::param("track_norms", "exponents must be >= 1"));
            }
        }
        if self.lambda < 1 {
            return Err(Error::param("lambda", "must be >= 1"));
        }
        if self.dt_list.iter().any(|&d| !(d > 0.0 && d.is_finite())) {
            return Err(Error::param("dt_list", "entries must be > 0"));
        }
        if self.chi_list.iter().any(|&c| !(c >= 0.0 && c.is_finite())) {
            return Err(Error::param("chi_list", "entries must be >= 0"));
        }
        if self.chi_list.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::param("chi_list", "must be increasing"));
        }
        if let Some((t0, t1)) = self.fit_window {
            if !(t0 > 0.0 && t1 > t0) {
                return Err(Error::param("fit_window", "needs 0 < t0 < t1"));
            }
        }
        if !(self.epsilon1 > 0.0 && self.epsilon1.is_finite()) {
            return Err(Error::param("epsilon1", "must be > 0"));
        }
        if !(self.smallness_threshold > 0.0) {
            return Err(Error::param("smallness_threshold", "must be > 0"));
        }
        Ok(())
    }

    /// Every key with its resolved value, in parseable form.
    pub fn manifest(&self) -> String {
        let mut out = String::new();
        let mut put = |key: &str, value: String| {
            let _ = writeln!(out, "{key} = {value}");
        };
        put("variant", self.variant.name().into());
        put("d", self.dim.to_string());
        put("N", self.n.to_string());
        put("L", fmt_f64(self.length));
        put("t_end", fmt_f64(self.t_end));
        put("chi", fmt_f64(self.chi));
        put("eps", fmt_f64(self.eps));
        put("q", fmt_f64(self.q));
        put("kappa", self.kappa.to_string());
        put("kappa1", fmt_f64(self.kappa1));
        put("kappa2", fmt_f64(self.kappa2));
        put("phi_amplitude", fmt_f64(self.phi.amplitude));
        put("phi_mode", fmt_ints(&self.phi.mode));
        for (name, v) in [("flow", &self.flow), ("u", &self.u_ic)] {
            let kind = match v.kind {
                VelocityKind::Zero if name == "flow" => "none",
                VelocityKind::Zero => "zero",
                VelocityKind::Cellular => "cellular",
            };
            put(if name == "flow" { "flow" } else { "u_ic" }, kind.into());
            put(&format!("{name}_amplitude"), fmt_f64(v.amplitude));
            put(&format!("{name}_mode"), v.mode.to_string());
        }
        for (name, ic) in self.field_ics() {
            put(&format!("{name}_ic"), ic.kind.name().into());
            put(&format!("{name}_amplitude"), fmt_f64(ic.amplitude));
            put(&format!("{name}_center"), fmt_floats(&ic.center));
            put(&format!("{name}_width"), fmt_f64(ic.width));
            put(&format!("{name}_mode"), fmt_ints(&ic.mode));
            if let Some(f) = &ic.file {
                put(&format!("{name}_file"), f.display().to_string());
            }
        }
        if let Some(dt) = self.dt {
            put("dt", fmt_f64(dt));
        }
        put("cfl", fmt_f64(self.control.cfl));
        put("dt_max", fmt_f64(self.control.dt_max));
        put("dt_min", fmt_f64(self.control.dt_min));
        put("tol_neg", fmt_f64(self.control.tol_neg));
        put("record_interval", fmt_f64(self.record_interval));
        put("snapshot_interval", fmt_f64(self.snapshot_interval));
        if let Some(o) = &self.output {
            put("output", o.display().to_string());
        }
        let norms: Vec<String> = self
            .track_norms
            .iter()
            .map(|(f, p)| format!("{}:{}", f.name(), fmt_f64(*p)))
            .collect();
        put("track_norms", norms.join(", "));
        if let Some(kind) = self.experiment {
            put("experiment", kind.name().into());
        }
        put("lambda", self.lambda.to_string());
        put("dt_list", fmt_floats(&self.dt_list));
        put("chi_list", fmt_floats(&self.chi_list));
        if let Some((t0, t1)) = self.fit_window {
            put("fit_window", format!("{}:{}", fmt_f64(t0), fmt_f64(t1)));
        }
        put("epsilon1", fmt_f64(self.epsilon1));
        put("smallness_threshold", fmt_f64(self.smallness_threshold));
        out
    }
}

/// Shortest decimal that parses back to the same `f64`.
pub fn fmt_f64(x: f64) -> String {
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    ryu::Buffer::new().format(x).to_string()
}

fn fmt_floats(values: &[f64]) -> String {
    values.iter().map(|&v| fmt_f64(v)).collect::<Vec<_>>().join(", ")
}

fn fmt_ints(values: &[i64]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(", ")
}

/// Parses a number, allowing `inf` and `*` / `/` chains with `pi`.
pub fn parse_number(text: &str) -> std::result::Result<f64, String> {
    let text = text.trim();
    if text.is_empty() {
        return Err("expected a number".into());
    }
    if let Ok(v) = text.parse::<f64>() {
        return Ok(v);
    }
    let mut value = 1.0;
    let mut divide = false;
    let mut rest = text;
    loop {
        let end = rest.find(['*', '/']).unwrap_or(rest.len());
        let token = rest[..end].trim();
        let factor = match token {
            "pi" => PI,
            "-pi" => -PI,
            t => t.parse::<f64>().map_err(|_| format!("`{text}` is not a number"))?,
        };
        if divide {
            value /= factor;
        } else {
            value *= factor;
        }
        if end == rest.len() {
            break;
        }
        divide = rest.as_bytes()[end] == b'/';
        rest = &rest[end + 1..];
    }
    Ok(value)
}

fn parse_list<T>(text: &str, item: impl Fn(&str) -> std::result::Result<T, String>) -> std::result::Result<Vec<T>, String> {
    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    text.split(',').map(|s| item(s.trim())).collect()
}

fn parse_int(text: &str) -> std::result::Result<i64, String> {
    text.trim()
        .parse::<i64>()
        .map_err(|_| format!("`{}` is not an integer", text.trim()))
}

fn parse_count(text: &str) -> std::result::Result<usize, String> {
    text.trim()
        .parse::<usize>()
        .map_err(|_| format!("`{}` is not a non-negative integer", text.trim()))
}

/// Parses `t0:t1`.
pub fn parse_window(text: &str) -> std::result::Result<(f64, f64), String> {
    let (a, b) = text
        .split_once(':')
        .ok_or_else(|| format!("`{text}` is not a window t0:t1"))?;
    Ok((parse_number(a)?, parse_number(b)?))
}

const REQUIRED: [&str; 5] = ["variant", "d", "N", "L", "t_end"];

/// Parses a configuration; relative `file` and `output` paths are resolved
/// against `base` when given.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    parse_config_in(text, None)
}

pub fn parse_config_in(text: &str, base: Option<&Path>) -> Result<RunConfig> {
    let mut entries: Vec<(usize, String, String)> = Vec::new();
    let mut lines: HashMap<String, usize> = HashMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content.split_once('=').ok_or_else(|| Error::Config {
            line,
            message: format!("expected `key = value`, got `{content}`"),
        })?;
        let key = key.trim().to_string();
        if lines.insert(key.clone(), line).is_some() {
            return Err(Error::Config {
                line,
                message: format!("duplicate key `{key}`"),
            });
        }
        entries.push((line, key, value.trim().to_string()));
    }
    for key in REQUIRED {
        if !lines.contains_key(key) {
            return Err(Error::Config {
                line: 0,
                message: format!("missing required key `{key}`"),
            });
        }
    }
    let lookup = |key: &str| -> (usize, &str) {
        let (line, _, value) = entries.iter().find(|(_, k, _)| k == key).expect("checked");
        (*line, value.as_str())
    };
    let wrap = |line: usize, key: &str, r: std::result::Result<f64, String>| {
        r.map_err(|m| Error::Config {
            line,
            message: format!("`{key}`: {m}"),
        })
    };

    let (line, v) = lookup("variant");
    let variant: Variant = v.parse().map_err(|m| Error::Config { line, message: m })?;
    let (line, v) = lookup("d");
    let dim = parse_count(v).map_err(|m| Error::Config {
        line,
        message: format!("`d`: {m}"),
    })?;
    if dim != 2 && dim != 3 {
        return Err(Error::Config {
            line,
            message: format!("`d` must be 2 or 3, got {dim}"),
        });
    }
    let (line, v) = lookup("N");
    let n = parse_count(v).map_err(|m| Error::Config {
        line,
        message: format!("`N`: {m}"),
    })?;
    let (line, v) = lookup("L");
    let length = wrap(line, "L", parse_number(v))?;
    let (line, v) = lookup("t_end");
    let t_end = wrap(line, "t_end", parse_number(v))?;

    let mut cfg = RunConfig::new(variant, dim, n, length, t_end);
    let resolve = |p: &str| -> PathBuf {
        let path = PathBuf::from(p);
        match base {
            Some(b) if path.is_relative() => b.join(path),
            _ => path,
        }
    };

    for (line, key, value) in &entries {
        let line = *line;
        let err = |m: String| Error::Config {
            line,
            message: format!("`{key}`: {m}"),
        };
        let num = || parse_number(value).map_err(err);
        let key_str = key.as_str();
        if REQUIRED.contains(&key_str) {
            continue;
        }
        if let Some((field, attr)) = key_str.split_once('_') {
            let ic = match field {
                "e" => Some(&mut cfg.e_ic),
                "s" => Some(&mut cfg.s_ic),
                "c" => Some(&mut cfg.c_ic),
                "omega" => Some(&mut cfg.omega_ic),
                _ => None,
            };
            if let Some(ic) = ic {
                match attr {
                    "ic" => {
                        ic.kind = IcKind::parse(value).ok_or_else(|| {
                            err(format!(
                                "unknown kind `{value}` (gaussian, cosine_mode, cosine, uniform, file, zero)"
                            ))
                        })?
                    }
                    "amplitude" => ic.amplitude = num()?,
                    "center" => ic.center = parse_list(value, parse_number).map_err(err)?,
                    "width" => ic.width = num()?,
                    "mode" => ic.mode = parse_list(value, parse_int).map_err(err)?,
                    "file" => ic.file = Some(resolve(value)),
                    _ => {
                        return Err(Error::Config {
                            line,
                            message: format!("unknown key `{key}`"),
                        })
                    }
                }
                continue;
            }
        }
        let velocity_kind = |v: &str| match v {
            "none" | "zero" => Ok(VelocityKind::Zero),
            "cellular" => Ok(VelocityKind::Cellular),
            other => Err(format!("unknown flow `{other}` (none, zero, cellular)")),
        };
        match key_str {
            "chi" => cfg.chi = num()?,
            "eps" => cfg.eps = num()?,
            "q" => cfg.q = num()?,
            "kappa" => {
                cfg.kappa = match value.as_str() {
                    "0" => 0,
                    "1" => 1,
                    other => return Err(err(format!("must be 0 or 1, got `{other}`"))),
                }
            }
            "kappa1" => cfg.kappa1 = num()?,
            "kappa2" => cfg.kappa2 = num()?,
            "phi_amplitude" => cfg.phi.amplitude = num()?,
            "phi_mode" => cfg.phi.mode = parse_list(value, parse_int).map_err(err)?,
            "flow" => cfg.flow.kind = velocity_kind(value).map_err(err)?,
            "flow_amplitude" => cfg.flow.amplitude = num()?,
            "flow_mode" => cfg.flow.mode = parse_int(value).map_err(err)?,
            "u_ic" => cfg.u_ic.kind = velocity_kind(value).map_err(err)?,
            "u_amplitude" => cfg.u_ic.amplitude = num()?,
            "u_mode" => cfg.u_ic.mode = parse_int(value).map_err(err)?,
            "dt" => cfg.dt = Some(num()?),
            "cfl" => cfg.control.cfl = num()?,
            "dt_max" => cfg.control.dt_max = num()?,
            "dt_min" => cfg.control.dt_min = num()?,
            "tol_neg" => cfg.control.tol_neg = num()?,
            "record_interval" => cfg.record_interval = num()?,
            "snapshot_interval" => cfg.snapshot_interval = num()?,
            "output" => cfg.output = Some(resolve(value)),
            "track_norms" => {
                cfg.track_norms = parse_list(value, |item| {
                    let (f, p) = item
                        .split_once(':')
                        .ok_or_else(|| format!("`{item}` is not field:p"))?;
                    Ok((f.trim().parse::<NormField>()?, parse_number(p)?))
                })
                .map_err(err)?
            }
            "experiment" => {
                cfg.experiment = Some(value.parse::<ExperimentKind>().map_err(err)?)
            }
            "lambda" => {
                cfg.lambda = value
                    .parse::<u32>()
                    .map_err(|_| err(format!("`{value}` is not a positive integer")))?
            }
            "dt_list" => cfg.dt_list = parse_list(value, parse_number).map_err(err)?,
            "chi_list" => cfg.chi_list = parse_list(value, parse_number).map_err(err)?,
            "fit_window" => cfg.fit_window = Some(parse_window(value).map_err(err)?),
            "epsilon1" => cfg.epsilon1 = num()?,
            "smallness_threshold" => cfg.smallness_threshold = num()?,
            _ => {
                return Err(Error::Config {
                    line,
                    message: format!("unknown key `{key}`"),
                })
            }
        }
    }

    // defaults that depend on other keys
    if !lines.contains_key("kappa") {
        cfg.kappa = if dim == 2 { 1 } else { 0 };
    }
    if !lines.contains_key("record_interval") {
        cfg.record_interval = cfg.t_end;
    }
    if !lines.contains_key("phi_mode") {
        cfg.phi.mode = unit_mode(dim);
    }
    for (name, ic) in [
        ("e", &mut cfg.e_ic),
        ("s", &mut cfg.s_ic),
        ("c", &mut cfg.c_ic),
        ("omega", &mut cfg.omega_ic),
    ] {
        if !lines.contains_key(&format!("{name}_center")) {
            ic.center = vec![0.5 * length; dim];
        }
        if !lines.contains_key(&format!("{name}_width")) {
            ic.width = length / 16.0;
        }
        if !lines.contains_key(&format!("{name}_mode")) {
            ic.mode = unit_mode(dim);
        }
    }

    cfg.validate().map_err(|e| match e {
        Error::InvalidParameter { name, reason } => Error::Config {
            line: lines.get(&name).copied().unwrap_or(0),
            message: format!("`{name}` {reason}"),
        },
        other => other,
    })?;
    Ok(cfg)
}

/// Reads and parses a configuration file; relative paths inside it are
/// taken relative to the file's directory.
pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config_in(&text, path.parent())
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "variant = a\nd = 2\nN = 32\nL = 2*pi\nt_end = 1\n";

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = parse_config(MINIMAL).unwrap();
        assert_eq!(cfg.variant, Variant::A);
        assert_eq!(cfg.length, 2.0 * PI);
        assert_eq!(cfg.chi, 1.0);
        assert_eq!(cfg.q, 2.0);
        assert_eq!(cfg.kappa, 1);
        assert_eq!(cfg.record_interval, 1.0);
        assert_eq!(cfg.e_ic.center, vec![PI, PI]);
        assert_eq!(cfg.dt, None);
        assert_eq!(cfg.control, StepControl::default());
        assert_eq!(cfg, RunConfig::new(Variant::A, 2, 32, 2.0 * PI, 1.0));
    }

    #[test]
    fn range_errors_name_key_and_line() {
        let text = format!("{MINIMAL}# comment\nchi = -1\n");
        match parse_config(&text) {
            Err(Error::Config { line, message }) => {
                assert_eq!(line, 7);
                assert!(message.contains("chi"), "{message}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        let cases = [
            (format!("{MINIMAL}colour = red\n"), 6),
            (format!("{MINIMAL}eps = lots\n"), 6),
            (format!("{MINIMAL}e_shape = round\n"), 6),
            (format!("{MINIMAL}chi = 1\nchi = 2\n"), 7),
            (format!("{MINIMAL}q = 3\n"), 6),
            (format!("{MINIMAL}s_amplitude = -2\n"), 6),
            (format!("{MINIMAL}dt = 0.3\n\ncfl = 2\n"), 8),
            ("variant = z\nd = 2\nN = 32\nL = 1\nt_end = 1\n".to_string(), 1),
            ("variant = a\nd = 2\nN = 31\nL = 1\nt_end = 1\n".to_string(), 3),
        ];
        for (text, expect) in cases {
            match parse_config(&text) {
                Err(Error::Config { line, .. }) => assert_eq!(line, expect, "{text}"),
                other => panic!("{text}: {other:?}"),
            }
        }
        assert!(matches!(
            parse_config("variant = a\nd = 2\n"),
            Err(Error::Config { line: 0, .. })
        ));
    }

    #[test]
    fn manifest_round_trips() {
        let text = "variant = b\nd = 3\nN = 16\nL = 24\nt_end = 2.5\nchi = 0.3\n\
                    phi_amplitude = 0.7\nphi_mode = 1, 0, 2\nu_ic = cellular\nu_amplitude = 0.1\n\
                    e_ic = cosine_mode\ne_mode = 1, 1, 0\ns_center = 1, 2, 3\ns_width = 0.9\n\
                    c_ic = uniform\nc_amplitude = 0.25\ndt = 0.05\nrecord_interval = 0.5\n\
                    track_norms = s:1.5, grad_c:inf\nexperiment = chi_sweep\nchi_list = 0, 1.5, 3\n\
                    fit_window = 1:8\ndt_list = 0.1, 0.05, 0.025\n";
        let cfg = parse_config(text).unwrap();
        let manifest = cfg.manifest();
        let again = parse_config(&manifest).unwrap();
        assert_eq!(cfg, again);
        assert_eq!(manifest, again.manifest());
        assert!(manifest.contains("kappa = 0"));
        assert!(manifest.contains("tol_neg = 1e-10"));
    }

    #[test]
    fn number_syntax() {
        assert_eq!(parse_number("pi").unwrap(), PI);
        assert_eq!(parse_number("64*pi").unwrap(), 64.0 * PI);
        assert_eq!(parse_number("pi/4").unwrap(), PI / 4.0);
        assert_eq!(parse_number("inf").unwrap(), f64::INFINITY);
        assert_eq!(parse_number("1e-3").unwrap(), 1e-3);
        assert!(parse_number("two").is_err());
        assert_eq!(parse_window("1:10").unwrap(), (1.0, 10.0));
    }

    #[test]
    fn gaussian_uses_periodic_distance() {
        let g = Grid::new(2, 16, 8.0).unwrap();
        let ic = FieldIc::gaussian(2.0, vec![0.0, 0.0], 1.0);
        let f = ic.build(&g, "e").unwrap();
        assert_eq!(f.values()[0], 2.0);
        // x = (7.5, 0) is 0.5 away from the center through the boundary
        let idx = 15 * 16;
        assert!((f.values()[idx] - 2.0 * (-0.125f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn cellular_flow_is_solenoidal() {
        let g = Grid::new(3, 16, 2.0 * PI).unwrap();
        let u = VelocitySpec::cellular(1.5, 2).build(&g);
        assert!(crate::spectral::divergence(&u).max_abs() < 1e-12);
        assert!((u.max_magnitude() - 1.5).abs() < 1e-12);
    }
}
