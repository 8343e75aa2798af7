//! Time stepping.
//!
//! Every evolved field is advanced in spectral space by the second-order
//! exponential time differencing rule of Cox and Matthews:
//!
//! ```text
//! a   = E û + h φ₁(z) N(û)
//! û'  = a + h φ₂(z) (N(a) − N(û))        z = −κ|k|²h,  E = e^z
//! ```
//!
//! with `φ₁(z) = (e^z − 1)/z` and `φ₂(z) = (e^z − 1 − z)/z²`. Diffusion is
//! integrated exactly; on the zero mode the rule reduces to Heun's method.

use std::collections::HashMap;
use std::path::PathBuf;

use log::warn;
use rustfft::num_complex::Complex64;

use crate::config::RunConfig;
use crate::diagnostics::{field_norm, DiagnosticRecord, NormField, RECORD_P};
use crate::error::{Error, Result};
use crate::model::{Model, ModelParams, State};
use crate::output;
use crate::spectral::{Spectrum, VectorField};

/// Adaptive step-size settings.
#[derive(Clone, Debug, PartialEq)]
pub struct StepControl {
    /// Courant factor.
    pub cfl: f64,
    pub dt_max: f64,
    pub dt_min: f64,
    /// Allowed negative undershoot relative to the field maximum.
    pub tol_neg: f64,
}

impl Default for StepControl {
    fn default() -> Self {
        StepControl {
            cfl: 0.4,
            dt_max: 0.1,
            dt_min: 1e-8,
            tol_neg: 1e-10,
        }
    }
}

impl StepControl {
    pub fn validate(&self) -> Result<()> {
        if !(self.cfl > 0.0 && self.cfl <= 1.0) {
            return Err(Error::param("cfl", format!("must be in (0, 1], got {}", self.cfl)));
        }
        if !(self.dt_min > 0.0 && self.dt_min.is_finite()) {
            return Err(Error::param("dt_min", "must be > 0"));
        }
        if !(self.dt_max >= self.dt_min && self.dt_max.is_finite()) {
            return Err(Error::param("dt_max", "must be finite and >= dt_min"));
        }
        if !(self.tol_neg >= 0.0 && self.tol_neg.is_finite()) {
            return Err(Error::param("tol_neg", "must be >= 0"));
        }
        Ok(())
    }

    fn pick(&self, speed: f64, spacing: f64) -> Result<f64> {
        if !speed.is_finite() {
            return Err(Error::Blowup {
                field: "velocity".into(),
                t: f64::NAN,
            });
        }
        let dt = if speed > 0.0 {
            self.dt_max.min(self.cfl * spacing / speed)
        } else {
            self.dt_max
        };
        Ok(dt.max(self.dt_min))
    }
}

/// A density that dipped below `-tol_neg · max` during a run.
#[derive(Clone, Debug, PartialEq)]
pub struct PositivityBreach {
    pub t: f64,
    pub field: &'static str,
    pub min: f64,
    pub max: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SnapshotEntry {
    pub t: f64,
    pub path: PathBuf,
}

/// Norm `‖field‖_p` sampled at every record.
#[derive(Clone, Debug, PartialEq)]
pub struct TrackedNorm {
    pub field: NormField,
    pub p: f64,
    pub values: Vec<f64>,
}

/// Breaches kept in detail; later ones are only counted.
const MAX_BREACHES: usize = 256;

#[derive(Clone, Debug)]
pub struct SimHistory {
    pub records: Vec<DiagnosticRecord>,
    pub tracked: Vec<TrackedNorm>,
    pub snapshots: Vec<SnapshotEntry>,
    pub breaches: Vec<PositivityBreach>,
    pub breach_count: usize,
    pub steps: usize,
    pub final_state: State,
}

impl SimHistory {
    pub fn empty(state: State) -> SimHistory {
        SimHistory {
            records: Vec::new(),
            tracked: Vec::new(),
            snapshots: Vec::new(),
            breaches: Vec::new(),
            breach_count: 0,
            steps: 0,
            final_state: state,
        }
    }

    pub fn times(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.t).collect()
    }

    /// `(t, value)` pairs of a CSV column; records without the value are skipped.
    pub fn series(&self, column: &str) -> Vec<(f64, f64)> {
        self.records
            .iter()
            .filter_map(|r| r.column(column).map(|v| (r.t, v)))
            .collect()
    }

    /// `(t, ‖field‖_p)` from the record tables or from a tracked norm.
    pub fn norm_series(&self, field: NormField, p: f64) -> Option<Vec<(f64, f64)>> {
        let slot = RECORD_P.iter().position(|&q| q == p);
        let from_records: Option<Vec<(f64, f64)>> = match (field, slot) {
            (NormField::E, Some(i)) => Some(self.records.iter().map(|r| (r.t, r.lp_e[i])).collect()),
            (NormField::S, Some(i)) => self
                .records
                .iter()
                .map(|r| r.lp_s.map(|t| (r.t, t[i])))
                .collect(),
            (NormField::GradC, Some(3)) => self
                .records
                .iter()
                .map(|r| r.grad_c_inf.map(|v| (r.t, v)))
                .collect(),
            _ => None,
        };
        from_records.or_else(|| {
            self.tracked
                .iter()
                .find(|n| n.field == field && n.p == p)
                .map(|n| self.records.iter().map(|r| r.t).zip(n.values.iter().copied()).collect())
        })
    }

    /// True when any density breached the positivity tolerance.
    pub fn flagged(&self) -> bool {
        self.breach_count > 0
    }

    fn push_breach(&mut self, breach: PositivityBreach) {
        self.breach_count += 1;
        if self.breaches.len() < MAX_BREACHES {
            self.breaches.push(breach);
        }
    }
}

/// `φ₂(z) = (e^z − 1 − z)/z²`, by series near zero.
fn phi2(z: f64) -> f64 {
    if z.abs() < 0.5 {
        // Σ z^j / (j+2)!
        let mut term = 0.5;
        let mut sum = 0.5;
        for j in 1..20 {
            term *= z / (j + 2) as f64;
            sum += term;
        }
        sum
    } else {
        (z.exp_m1() - z) / (z * z)
    }
}

fn phi1(z: f64) -> f64 {
    if z == 0.0 {
        1.0
    } else {
        z.exp_m1() / z
    }
}

struct Coefficients {
    decay: Vec<f64>,
    p1: Vec<f64>,
    p2: Vec<f64>,
}

impl Coefficients {
    fn new(k2: &[f64], kappa: f64, dt: f64) -> Coefficients {
        let mut decay = Vec::with_capacity(k2.len());
        let mut p1 = Vec::with_capacity(k2.len());
        let mut p2 = Vec::with_capacity(k2.len());
        for &kk in k2 {
            let z = -kappa * kk * dt;
            decay.push(z.exp());
            p1.push(dt * phi1(z));
            p2.push(dt * phi2(z));
        }
        Coefficients { decay, p1, p2 }
    }
}

/// Spectral time stepper for one model.
pub struct Integrator {
    model: Model,
    spectra: Vec<Spectrum>,
    t: f64,
    tol_neg: f64,
    cache: HashMap<(u64, u64), Coefficients>,
}

/// What happened during one step.
pub(crate) struct StepReport {
    pub breaches: Vec<PositivityBreach>,
}

impl Integrator {
    pub fn new(model: Model, state: &State, tol_neg: f64) -> Result<Integrator> {
        let spectra = model.to_spectra(state)?;
        Ok(Integrator {
            model,
            spectra,
            t: state.t,
            tol_neg,
            cache: HashMap::new(),
        })
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn state(&self) -> State {
        self.model.state_from_spectra(&self.spectra, self.t)
    }

    /// Overrides the clock, used by fixed-step runs to avoid drift.
    pub fn set_time(&mut self, t: f64) {
        self.t = t;
    }

    fn check_densities(&self, densities: &[(&'static str, Vec<f64>)]) -> Result<Vec<PositivityBreach>> {
        let mut out = Vec::new();
        for (name, values) in densities {
            let mut min = f64::INFINITY;
            let mut max = f64::NEG_INFINITY;
            for &v in values {
                if !v.is_finite() {
                    return Err(Error::Blowup {
                        field: name.to_string(),
                        t: self.t,
                    });
                }
                min = min.min(v);
                max = max.max(v);
            }
            if min < -self.tol_neg * max.max(0.0) && min < 0.0 {
                out.push(PositivityBreach {
                    t: self.t,
                    field: name,
                    min,
                    max,
                });
            }
        }
        Ok(out)
    }

    /// One step whose size is chosen by `pick` from the current speed bound.
    pub(crate) fn advance_with(&mut self, pick: impl FnOnce(f64) -> Result<f64>) -> Result<StepReport> {
        let start = self.model.evaluate(&self.spectra);
        let breaches = self.check_densities(&start.densities)?;
        let dt = pick(start.speed).map_err(|e| match e {
            Error::Blowup { field, .. } => Error::Blowup { field, t: self.t },
            other => other,
        })?;
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::param("dt", format!("must be > 0, got {dt}")));
        }
        let kappas = self.model.diffusivities();
        let k2 = self.model.grid().k_squared();
        for &kappa in &kappas {
            self.cache
                .entry((kappa.to_bits(), dt.to_bits()))
                .or_insert_with(|| Coefficients::new(k2, kappa, dt));
        }
        let coeffs: Vec<&Coefficients> = kappas
            .iter()
            .map(|k| &self.cache[&(k.to_bits(), dt.to_bits())])
            .collect();

        let stage: Vec<Spectrum> = self
            .spectra
            .iter()
            .zip(&start.tendencies)
            .zip(&coeffs)
            .map(|((u, n), c)| {
                u.iter()
                    .zip(n)
                    .enumerate()
                    .map(|(i, (uv, nv))| uv * c.decay[i] + nv * c.p1[i])
                    .collect()
            })
            .collect();
        let mid = self.model.evaluate(&stage);
        let mut next: Vec<Spectrum> = stage;
        for (((a, na), nn), c) in next.iter_mut().zip(&mid.tendencies).zip(&start.tendencies).zip(&coeffs) {
            for (i, av) in a.iter_mut().enumerate() {
                *av += (na[i] - nn[i]) * c.p2[i];
            }
        }
        let t_next = self.t + dt;
        for (name, spec) in self.model.field_names().into_iter().zip(&next) {
            if spec.iter().any(|c: &Complex64| !(c.re.is_finite() && c.im.is_finite())) {
                return Err(Error::Blowup {
                    field: name.to_string(),
                    t: t_next,
                });
            }
        }
        self.spectra = next;
        self.t = t_next;
        Ok(StepReport { breaches })
    }

    /// One step of size `dt`.
    pub fn advance(&mut self, dt: f64) -> Result<Vec<PositivityBreach>> {
        self.advance_with(|_| Ok(dt)).map(|r| r.breaches)
    }

    /// Current advective plus chemotactic speed bound.
    pub fn speed(&self) -> f64 {
        self.model.evaluate(&self.spectra).speed
    }
}

/// Advances `state` by one step of size `dt`.
pub fn step(state: &State, params: &ModelParams, u_given: Option<&VectorField>, dt: f64) -> Result<State> {
    let model = Model::new(state.grid(), params, u_given)?;
    let mut integrator = Integrator::new(model, state, StepControl::default().tol_neg)?;
    let breaches = integrator.advance(dt).map_err(|e| Error::StepFailed {
        t: state.t,
        source: Box::new(e),
    })?;
    for b in breaches {
        warn!("{} undershoots to {:e} (max {:e}) at t = {}", b.field, b.min, b.max, b.t);
    }
    Ok(integrator.state())
}

/// CFL step `min(dt_max, cfl·h/V)` floored at `dt_min`, where `V` bounds the
/// advective plus chemotactic speed.
pub fn cfl_dt(
    state: &State,
    params: &ModelParams,
    u_given: Option<&VectorField>,
    control: &StepControl,
) -> Result<f64> {
    control.validate()?;
    let model = Model::new(state.grid(), params, u_given)?;
    let spacing = model.grid().spacing();
    let integrator = Integrator::new(model, state, control.tol_neg)?;
    control.pick(integrator.speed(), spacing).map_err(|e| match e {
        Error::Blowup { field, .. } => Error::Blowup { field, t: state.t },
        other => other,
    })
}

/// Time stepping policy of a run.
#[derive(Clone, Debug, PartialEq)]
pub enum Stepping {
    Fixed(f64),
    Adaptive(StepControl),
}

/// Relative tolerance for output times that must be multiples of `dt`.
const MULTIPLE_TOL: f64 = 1e-9;

fn steps_per(interval: f64, dt: f64, name: &str) -> Result<usize> {
    let ratio = interval / dt;
    let rounded = ratio.round();
    if (ratio - rounded).abs() > MULTIPLE_TOL * ratio.max(1.0) {
        return Err(Error::param(
            name,
            format!("{interval} is not a multiple of dt = {dt}"),
        ));
    }
    Ok(rounded as usize)
}

struct Recorder<'a> {
    config: &'a RunConfig,
    history: SimHistory,
}

impl Recorder<'_> {
    fn record(&mut self, state: &State) -> Result<()> {
        self.history.records.push(DiagnosticRecord::from_state(state));
        for tracked in self.history.tracked.iter_mut() {
            let value = field_norm(state, tracked.field, tracked.p)?.ok_or_else(|| {
                Error::param(
                    "track_norms",
                    format!("state has no field {}", tracked.field),
                )
            })?;
            tracked.values.push(value);
        }
        Ok(())
    }

    fn snapshot(&mut self, state: &State) -> Result<()> {
        let Some(dir) = &self.config.output else {
            return Ok(());
        };
        let index = self.history.snapshots.len();
        let path = dir.join(format!("snapshot_{index:05}.csim"));
        output::write_snapshot(&path, state)?;
        self.history.snapshots.push(SnapshotEntry { t: state.t, path });
        Ok(())
    }
}

/// Integrates the configured model from `t = 0` to `t_end`.
pub fn run(config: &RunConfig) -> Result<SimHistory> {
    config.validate()?;
    let grid = config.grid()?;
    let state = config.initial_state(&grid)?;
    run_from(config, state)
}

/// Like [`run`], starting from an explicit initial state.
pub fn run_from(config: &RunConfig, state: State) -> Result<SimHistory> {
    let grid = config.grid()?;
    if *state.grid() != grid {
        return Err(Error::GridMismatch("initial state and configured grid".into()));
    }
    if config.snapshot_interval > 0.0 && config.output.is_none() {
        return Err(Error::param("snapshot_interval", "snapshots need an output directory"));
    }
    let params = config.model_params();
    let flow = config.prescribed_flow(&grid)?;
    let model = Model::new(&grid, &params, flow.as_ref())?;
    crate::verification::smallness_gate(config, &state);

    let control = config.control.clone();
    let mut integrator = Integrator::new(model, &state, control.tol_neg)?;
    let mut rec = Recorder {
        config,
        history: SimHistory::empty(state.clone()),
    };
    rec.history.tracked = config
        .track_norms
        .iter()
        .map(|&(field, p)| TrackedNorm {
            field,
            p,
            values: Vec::new(),
        })
        .collect();
    if let Some(dir) = &config.output {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }

    rec.record(&state)?;
    if config.snapshot_interval > 0.0 {
        rec.snapshot(&state)?;
    }
    let fail = |t: f64, e: Error| Error::StepFailed {
        t,
        source: Box::new(e),
    };
    let t_end = config.t_end;
    let spacing = grid.spacing();

    match config.stepping() {
        Stepping::Fixed(dt) => {
            let total = steps_per(t_end, dt, "t_end")?;
            let every = steps_per(config.record_interval, dt, "record_interval")?.max(1);
            let snap_every = if config.snapshot_interval > 0.0 {
                Some(steps_per(config.snapshot_interval, dt, "snapshot_interval")?.max(1))
            } else {
                None
            };
            for n in 1..=total {
                let t0 = integrator.time();
                let report = integrator.advance_with(|_| Ok(dt)).map_err(|e| fail(t0, e))?;
                for b in report.breaches {
                    rec.history.push_breach(b);
                }
                integrator.set_time(n as f64 * dt);
                rec.history.steps += 1;
                let want_record = n % every == 0 || n == total;
                let want_snap = snap_every.is_some_and(|k| n % k == 0);
                if want_record || want_snap {
                    let state = integrator.state();
                    if want_record {
                        rec.record(&state)?;
                    }
                    if want_snap {
                        rec.snapshot(&state)?;
                    }
                }
            }
        }
        Stepping::Adaptive(control) => {
            let mut k_record = 1usize;
            let mut k_snap = 1usize;
            let snap = config.snapshot_interval;
            while integrator.time() < t_end {
                let t0 = integrator.time();
                let next_record = (k_record as f64 * config.record_interval).min(t_end);
                let next_snap = if snap > 0.0 { k_snap as f64 * snap } else { f64::INFINITY };
                let target = next_record.min(next_snap);
                let report = integrator
                    .advance_with(|speed| {
                        let dt = control.pick(speed, spacing)?;
                        // land exactly on output times
                        if t0 + dt >= target * (1.0 - 1e-12) {
                            Ok(target - t0)
                        } else {
                            Ok(dt)
                        }
                    })
                    .map_err(|e| fail(t0, e))?;
                if integrator.time() >= target * (1.0 - 1e-12) {
                    integrator.set_time(target);
                }
                for b in report.breaches {
                    rec.history.push_breach(b);
                }
                rec.history.steps += 1;
                let t = integrator.time();
                let want_record = t >= next_record;
                let want_snap = t >= next_snap;
                if want_record || want_snap {
                    let state = integrator.state();
                    if want_record {
                        rec.record(&state)?;
                        k_record += 1;
                    }
                    if want_snap {
                        rec.snapshot(&state)?;
                        k_snap += 1;
                    }
                }
            }
        }
    }

    let final_state = integrator.state();
    // positivity of the final state is otherwise never inspected
    let densities: Vec<(&'static str, Vec<f64>)> = final_state
        .named_fields()
        .into_iter()
        .filter(|(name, _)| matches!(*name, "n" | "e" | "s" | "c"))
        .map(|(name, f)| (name, f.values().to_vec()))
        .collect();
    for b in integrator.check_densities(&densities)? {
        rec.history.push_breach(b);
    }
    if rec.history.flagged() {
        warn!(
            "positivity tolerance breached {} times; first at t = {}",
            rec.history.breach_count, rec.history.breaches[0].t
        );
    }
    rec.history.final_state = final_state;
    Ok(rec.history)
}
