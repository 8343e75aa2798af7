//! Ready-made configurations and pass/fail checks used by `coralsim verify`
//! and the acceptance test target.

use std::f64::consts::PI;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{FieldIc, IcKind, RunConfig, VelocitySpec};
use crate::error::{Error, Result};
use crate::integrator::{run, SimHistory};
use crate::model::{Flow, ModelParams, PotentialSpec, State, Variant};
use crate::spectral::{leray_project, Grid, ScalarField, VectorField};
use crate::verification::{
    self, check_scaling, chi_sweep, convergence_order, rhs_fd_deviation, ExperimentKind, ExperimentSpec,
    OrderEstimate,
};

/// Result of one named check.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
    pub metrics: Vec<(String, f64)>,
}

impl CheckOutcome {
    fn new(name: &str, passed: bool, detail: String, metrics: Vec<(String, f64)>) -> CheckOutcome {
        CheckOutcome {
            name: name.to_string(),
            passed,
            detail,
            metrics,
        }
    }

    fn failed(name: &str, err: &Error) -> CheckOutcome {
        CheckOutcome::new(name, false, format!("error: {err}"), Vec::new())
    }

    /// `PASS name: detail` or `FAIL name: detail`.
    pub fn line(&self) -> String {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        format!("{tag} {}: {}", self.name, self.detail)
    }
}

/// Groups of checks selectable from the command line.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    Heat,
    Scaling,
    Convergence,
    Decay,
    Plateau,
    ChiSweep,
    SmallData,
    Conservation,
    Oracle,
    Determinism,
    All,
}

impl Suite {
    pub const ALL: [Suite; 11] = [
        Suite::Heat,
        Suite::Scaling,
        Suite::Convergence,
        Suite::Decay,
        Suite::Plateau,
        Suite::ChiSweep,
        Suite::SmallData,
        Suite::Conservation,
        Suite::Oracle,
        Suite::Determinism,
        Suite::All,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Heat => "heat",
            Suite::Scaling => "scaling",
            Suite::Convergence => "convergence",
            Suite::Decay => "decay",
            Suite::Plateau => "plateau",
            Suite::ChiSweep => "chi_sweep",
            Suite::SmallData => "small_data",
            Suite::Conservation => "conservation",
            Suite::Oracle => "oracle",
            Suite::Determinism => "determinism",
            Suite::All => "all",
        }
    }

    /// Names of the checks the suite runs, in order.
    pub fn checks(self) -> &'static [&'static str] {
        match self {
            Suite::Heat => &["heat_oracle"],
            Suite::Scaling => &["scaling_invariance"],
            Suite::Convergence => &["temporal_order"],
            Suite::Decay => &["decay_exponents"],
            Suite::Plateau => &["mass_plateau"],
            Suite::ChiSweep => &["chi_dependence"],
            Suite::SmallData => &["small_data_norms"],
            Suite::Conservation => &["mass_difference", "monotone_mass", "c_mass_budget"],
            Suite::Oracle => &["operator_cross_check"],
            Suite::Determinism => &["determinism"],
            Suite::All => &CRITERIA,
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Suite> {
        Suite::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::param("suite", format!("unknown suite `{s}`")))
    }
}

/// Every acceptance check, in criterion order.
pub const CRITERIA: [&str; 12] = [
    "mass_difference",
    "monotone_mass",
    "heat_oracle",
    "temporal_order",
    "decay_exponents",
    "mass_plateau",
    "chi_dependence",
    "scaling_invariance",
    "c_mass_budget",
    "small_data_norms",
    "operator_cross_check",
    "determinism",
];

/// Options shared by all checks.
#[derive(Clone, Debug)]
pub struct SuiteOptions {
    /// Seeds the random smooth fields of the operator and determinism checks.
    pub seed: u64,
    /// Only checks whose name contains this string are run.
    pub filter: Option<String>,
    /// Directory for files written by the determinism check.
    pub scratch: PathBuf,
}

impl Default for SuiteOptions {
    fn default() -> SuiteOptions {
        SuiteOptions {
            seed: 0,
            filter: None,
            scratch: std::env::temp_dir().join("coralsim-verify"),
        }
    }
}

/// Sum of a few random Fourier modes, defined independently of the grid so
/// the same function can be sampled at several resolutions.
#[derive(Clone, Debug, PartialEq)]
pub struct RandomModes {
    pub mean: f64,
    /// `(mode, amplitude, phase)`.
    pub terms: Vec<(Vec<i64>, f64, f64)>,
}

impl RandomModes {
    /// Every mode with entries in `-max_mode..=max_mode` gets a random
    /// amplitude and phase; amplitudes are scaled so they sum to `amplitude`,
    /// so the field stays within `mean ± amplitude`.
    pub fn random(rng: &mut ChaCha8Rng, dim: usize, max_mode: i64, mean: f64, amplitude: f64) -> RandomModes {
        let side = (2 * max_mode + 1) as usize;
        let mut terms = Vec::new();
        for flat in 0..side.pow(dim as u32) {
            let mode: Vec<i64> = (0..dim)
                .map(|a| ((flat / side.pow(a as u32)) % side) as i64 - max_mode)
                .collect();
            // one of each ±m pair
            let first = mode.iter().copied().find(|&m| m != 0);
            if first.is_none_or(|m| m < 0) {
                continue;
            }
            let amp: f64 = rng.gen_range(0.1..1.0);
            let phase: f64 = rng.gen_range(0.0..2.0 * PI);
            terms.push((mode, amp, phase));
        }
        let total: f64 = terms.iter().map(|t| t.1).sum();
        for t in terms.iter_mut() {
            t.1 *= amplitude / total;
        }
        RandomModes { mean, terms }
    }

    pub fn value_at(&self, x: &[f64], length: f64) -> f64 {
        self.mean
            + self
                .terms
                .iter()
                .map(|(m, a, p)| {
                    let k: f64 = m.iter().zip(x).map(|(&mi, &xi)| mi as f64 * xi).sum();
                    a * (2.0 * PI * k / length + p).cos()
                })
                .sum::<f64>()
    }

    pub fn sample(&self, grid: &Grid) -> ScalarField {
        let length = grid.length();
        ScalarField::from_fn(grid, |x| self.value_at(x, length))
    }
}

/// Random smooth fields for every unknown of a variant, sampled on any grid.
#[derive(Clone, Debug)]
pub struct RandomState {
    variant: Variant,
    fields: Vec<RandomModes>,
}

impl RandomState {
    /// Densities lie in `[0.5, 1.5]`; vorticity and velocity are mean free.
    pub fn new(seed: u64, variant: Variant, dim: usize, max_mode: i64) -> RandomState {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fields = Vec::new();
        let count = match (variant, dim) {
            (Variant::Single, _) => 1,
            (Variant::Kr | Variant::A, _) => 2,
            (Variant::B, 2) => 4,
            (Variant::B, _) => 6,
        };
        for i in 0..count {
            let mean = if i < 3 { 1.0 } else { 0.0 };
            fields.push(RandomModes::random(&mut rng, dim, max_mode, mean, 0.5));
        }
        RandomState { variant, fields }
    }

    pub fn sample(&self, grid: &Grid) -> State {
        let f: Vec<ScalarField> = self.fields.iter().map(|m| m.sample(grid)).collect();
        match self.variant {
            Variant::Single => State::single(f[0].clone()),
            Variant::Kr | Variant::A => State::pair(f[0].clone(), f[1].clone()),
            Variant::B if grid.dim() == 2 => {
                State::coupled(f[0].clone(), f[1].clone(), f[2].clone(), Flow::Vorticity(f[3].clone()))
            }
            Variant::B => {
                let u = VectorField::new(f[3..6].to_vec()).expect("same grid");
                State::coupled(f[0].clone(), f[1].clone(), f[2].clone(), Flow::Velocity(leray_project(&u)))
            }
        }
    }
}

fn gaussian(amplitude: f64, center: Vec<f64>, width: f64) -> FieldIc {
    FieldIc::gaussian(amplitude, center, width)
}

fn offset_center(length: f64, dim: usize, shift: f64) -> Vec<f64> {
    let mut c = vec![0.5 * length; dim];
    c[0] += shift;
    c
}

fn unit_potential(dim: usize, amplitude: f64) -> PotentialSpec {
    let mut mode = vec![0; dim];
    mode[0] = 1;
    PotentialSpec { amplitude, mode }
}

/// Runs used by the mass-difference, monotonicity and `c`-budget checks:
/// 5000 fixed steps each, with separated egg and sperm bumps.
pub fn conservation_configs() -> Vec<(&'static str, RunConfig)> {
    let build = |variant: Variant, dim: usize, n: usize| {
        let length = 20.0;
        let mut cfg = RunConfig::new(variant, dim, n, length, 10.0);
        cfg.chi = 1.0;
        cfg.eps = 1.0;
        cfg.e_ic = gaussian(1.0, offset_center(length, dim, -1.5), 1.25);
        cfg.s_ic = gaussian(1.0, offset_center(length, dim, 1.5), 1.25);
        if variant == Variant::B {
            cfg.phi = unit_potential(dim, 1.0);
        }
        cfg.dt = Some(0.002);
        cfg.record_interval = 0.01;
        cfg
    };
    vec![
        ("a_2d", build(Variant::A, 2, 128)),
        ("b_2d", build(Variant::B, 2, 128)),
        ("b_3d", build(Variant::B, 3, 48)),
    ]
}

/// Diffusion-only runs compared against the exact heat semigroup.
pub fn heat_configs() -> Vec<(&'static str, RunConfig)> {
    let mut out = Vec::new();
    for (name, variant, dim, n) in [
        ("a_2d", Variant::A, 2, 64),
        ("kr_2d", Variant::Kr, 2, 64),
        ("single_3d", Variant::Single, 3, 32),
    ] {
        let mut cfg = RunConfig::new(variant, dim, n, 2.0 * PI, 1.0);
        cfg.chi = 0.0;
        cfg.eps = 0.0;
        cfg.kappa1 = 0.5;
        cfg.kappa2 = 2.0;
        cfg.s_ic = gaussian(2.0, offset_center(2.0 * PI, dim, 1.0), 0.5);
        cfg.dt = Some(0.05);
        cfg.record_interval = 0.25;
        cfg.experiment = Some(ExperimentKind::HeatOracle);
        out.push((name, cfg));
    }
    out
}

/// 2D variant A in a cellular flow, for the temporal-order study.
pub fn convergence_config(variant: Variant) -> RunConfig {
    let length = 2.0 * PI;
    let mut cfg = RunConfig::new(variant, 2, 64, length, 0.5);
    cfg.chi = 1.0;
    cfg.eps = 1.0;
    cfg.flow = VelocitySpec::cellular(1.0, 1);
    cfg.e_ic = gaussian(1.0, offset_center(length, 2, -0.6), 0.5);
    cfg.s_ic = gaussian(1.0, offset_center(length, 2, 0.6), 0.5);
    cfg.dt_list = vec![0.02, 0.01, 0.005, 0.0025];
    cfg.experiment = Some(ExperimentKind::Convergence);
    cfg
}

/// Concentrated co-located bumps on a large box, for decay fits.
pub fn decay_config(dim: usize) -> RunConfig {
    let (n, length, t_end, width, dt, window) = if dim == 2 {
        (512, 64.0 * PI, 40.0, 1.0, 0.1, (2.0, 40.0))
    } else {
        (96, 8.0 * PI, 8.0, 0.6, 0.05, (1.0, 8.0))
    };
    // weak reaction in 2D, where the masses decay only slowly
    let amplitude = if dim == 2 { 0.25 } else { 1.0 };
    let mut cfg = RunConfig::new(Variant::A, dim, n, length, t_end);
    cfg.e_ic = gaussian(amplitude, vec![0.5 * length; dim], width);
    cfg.s_ic = gaussian(amplitude, vec![0.5 * length; dim], width);
    cfg.dt = Some(dt);
    cfg.record_interval = if dim == 2 { 0.5 } else { 0.25 };
    cfg.fit_window = Some(window);
    cfg.experiment = Some(ExperimentKind::Decay);
    cfg
}

/// 3D variant A run long enough for both masses to level off. The late
/// reaction loss scales like `m/√t`, so the bumps are weak and the box wide
/// enough that spreading does not reach the boundary by `t_end`.
pub fn plateau_config() -> RunConfig {
    let length = 16.0 * PI;
    let mut cfg = RunConfig::new(Variant::A, 3, 64, length, 32.0);
    cfg.e_ic = gaussian(0.05, offset_center(length, 3, -2.0), 2.0);
    cfg.s_ic = gaussian(0.05, offset_center(length, 3, 2.0), 2.0);
    cfg.record_interval = 1.0;
    cfg.experiment = Some(ExperimentKind::MassPlateau);
    cfg
}

/// 3D variant A with equal egg and sperm masses, swept over χ.
pub fn chi_sweep_config() -> RunConfig {
    let mut cfg = plateau_config();
    cfg.chi_list = vec![0.0, 5.0, 20.0];
    cfg.experiment = Some(ExperimentKind::ChiSweep);
    cfg
}

/// 2D variant B with smooth cosine data and potential `cos x₁`.
pub fn scaling_config() -> RunConfig {
    let length = 2.0 * PI;
    let mut cfg = RunConfig::new(Variant::B, 2, 32, length, 0.5);
    cfg.chi = 1.0;
    cfg.eps = 1.0;
    cfg.phi = unit_potential(2, 1.0);
    let base = FieldIc::zero(2, length);
    cfg.e_ic = base.clone().with_kind(IcKind::CosineMode, 0.5, vec![1, 0]);
    cfg.s_ic = base.clone().with_kind(IcKind::CosineMode, 0.4, vec![0, 1]);
    cfg.c_ic = base.clone().with_kind(IcKind::CosineMode, 0.2, vec![1, 1]);
    cfg.omega_ic = base.with_kind(IcKind::Cosine, 0.3, vec![1, -1]);
    cfg.dt = Some(0.01);
    cfg.record_interval = 0.1;
    cfg.lambda = 2;
    cfg.experiment = Some(ExperimentKind::Scaling);
    cfg
}

/// The scaling configuration with every coupling switched off.
pub fn scaling_control_config() -> RunConfig {
    let mut cfg = scaling_config();
    cfg.chi = 0.0;
    cfg.eps = 0.0;
    cfg.phi.amplitude = 0.0;
    cfg.omega_ic.kind = IcKind::Zero;
    cfg
}

/// Small 2D variant-B data whose chemical starts self-similar:
/// `c₀ = τ₀ e₀` with `τ₀ = w²/2`, so `c(t) = (t + τ₀)·(heat flow of e₀)`.
pub fn small_data_config() -> RunConfig {
    let length = 32.0 * PI;
    let width = 1.5;
    let tau0 = 0.5 * width * width;
    let mut cfg = RunConfig::new(Variant::B, 2, 256, length, 40.0);
    let center = vec![0.5 * length; 2];
    cfg.e_ic = gaussian(1.0, center.clone(), width);
    cfg.s_ic = gaussian(1.0, center.clone(), width);
    cfg.c_ic = gaussian(tau0, center, width);
    cfg.phi = PotentialSpec {
        amplitude: 1.0,
        mode: vec![4, 0],
    };
    cfg.dt = Some(0.1);
    cfg.record_interval = 0.5;
    cfg.fit_window = Some((2.0, 40.0));
    cfg.epsilon1 = 0.05;
    cfg.track_norms = vec![(crate::diagnostics::NormField::Omega, 1.5)];
    cfg.experiment = Some(ExperimentKind::SmallData2d);
    cfg
}

/// 2D variant B run with random smooth data read from `init`, for
/// determinism checks.
pub fn determinism_config(init: &Path) -> RunConfig {
    let length = 2.0 * PI;
    let mut cfg = RunConfig::new(Variant::B, 2, 64, length, 0.2);
    cfg.phi = unit_potential(2, 1.0);
    for ic in [&mut cfg.e_ic, &mut cfg.s_ic, &mut cfg.c_ic, &mut cfg.omega_ic] {
        ic.kind = IcKind::File;
        ic.file = Some(init.to_path_buf());
    }
    cfg.dt = Some(0.005);
    cfg.record_interval = 0.01;
    cfg.snapshot_interval = 0.05;
    cfg
}

fn metric(key: &str, value: f64) -> (String, f64) {
    (key.to_string(), value)
}

/// One of the [`conservation_configs`] runs.
pub struct ConservationRun {
    pub name: &'static str,
    pub config: RunConfig,
    pub history: SimHistory,
    pub seconds: f64,
}

/// Histories of [`conservation_configs`], computed once and shared.
pub struct ConservationRuns {
    pub runs: Vec<ConservationRun>,
}

impl ConservationRuns {
    pub fn compute() -> Result<ConservationRuns> {
        let mut runs = Vec::new();
        for (name, config) in conservation_configs() {
            let start = Instant::now();
            let history = run(&config)?;
            runs.push(ConservationRun {
                name,
                config,
                history,
                seconds: start.elapsed().as_secs_f64(),
            });
        }
        Ok(ConservationRuns { runs })
    }
}

/// Wall-time budget of the 2D variant-A conservation run.
pub const CONSERVATION_BUDGET_SECONDS: f64 = 120.0;

/// `(m_s − m_e)` drift relative to `max(m_s(0), 1)` at every record.
pub fn check_mass_difference(runs: &ConservationRuns) -> CheckOutcome {
    let mut metrics = Vec::new();
    let mut worst = 0.0f64;
    for ConservationRun { name, history: h, .. } in &runs.runs {
        let d0 = h.records[0].mass_diff.unwrap_or(0.0);
        let scale = h.records[0].m_s.unwrap_or(0.0).max(1.0);
        let drift = h
            .records
            .iter()
            .map(|r| (r.mass_diff.unwrap_or(0.0) - d0).abs() / scale)
            .fold(0.0, f64::max);
        metrics.push(metric(&format!("drift_{name}"), drift));
        worst = worst.max(drift);
    }
    let mut within_budget = true;
    let mut timing = Vec::new();
    for r in &runs.runs {
        metrics.push(metric(&format!("seconds_{}", r.name), r.seconds));
        timing.push(format!("{} {} steps {:.0}s", r.name, r.history.steps, r.seconds));
        if r.name == "a_2d" {
            within_budget = r.seconds <= CONSERVATION_BUDGET_SECONDS;
        }
    }
    CheckOutcome::new(
        "mass_difference",
        worst <= 1e-6 && within_budget,
        format!(
            "max relative drift {worst:.3e} (tol 1e-6); {} (a_2d budget {CONSERVATION_BUDGET_SECONDS}s)",
            timing.join(", ")
        ),
        metrics,
    )
}

/// `m_e` and `m_s` nonincreasing between consecutive records.
pub fn check_monotone_mass(runs: &ConservationRuns) -> CheckOutcome {
    let mut metrics = Vec::new();
    let mut worst = 0.0f64;
    for ConservationRun { name, history: h, .. } in &runs.runs {
        let mut rise = 0.0f64;
        for w in h.records.windows(2) {
            let pairs = [(w[0].m_e, w[1].m_e), (w[0].m_s.unwrap_or(0.0), w[1].m_s.unwrap_or(0.0))];
            for (a, b) in pairs {
                if a > 0.0 {
                    rise = rise.max((b - a) / a);
                }
            }
        }
        metrics.push(metric(&format!("max_rise_{name}"), rise));
        worst = worst.max(rise);
    }
    CheckOutcome::new(
        "monotone_mass",
        worst <= 1e-9,
        format!("largest relative increase {worst:.3e} (tol 1e-9)"),
        metrics,
    )
}

/// `m_c(T) − m_c(0) − ∫ m_e dt` with the integral taken by the trapezoid
/// rule over records, relative to `max(m_c(T), ∫ m_e dt)`.
pub fn check_c_budget(runs: &ConservationRuns) -> CheckOutcome {
    let mut metrics = Vec::new();
    let mut worst = 0.0f64;
    let mut count = 0;
    for ConservationRun { name, history: h, .. } in runs.runs.iter().filter(|r| r.config.variant == Variant::B) {
        count += 1;
        let integral: f64 = h
            .records
            .windows(2)
            .map(|w| 0.5 * (w[1].t - w[0].t) * (w[0].m_e + w[1].m_e))
            .sum();
        let first = h.records[0].m_c.unwrap_or(0.0);
        let last = h.records.last().expect("records").m_c.unwrap_or(0.0);
        let rel = (last - first - integral).abs() / last.abs().max(integral.abs());
        metrics.push(metric(&format!("budget_{name}"), rel));
        worst = worst.max(rel);
    }
    CheckOutcome::new(
        "c_mass_budget",
        count > 0 && worst <= 1e-6,
        format!("max relative budget error {worst:.3e} over {count} runs (tol 1e-6)"),
        metrics,
    )
}

fn with_report(cfg: &RunConfig) -> Result<verification::ExperimentReport> {
    verification::run_experiment(&ExperimentSpec::from_config(cfg)?)
}

/// Diffusion-only runs against the exact semigroup.
pub fn check_heat() -> Result<CheckOutcome> {
    let mut worst = 0.0f64;
    let mut metrics = Vec::new();
    for (name, cfg) in heat_configs() {
        let dev = with_report(&cfg)?.get("max_rel_deviation").unwrap_or(f64::INFINITY);
        metrics.push(metric(&format!("deviation_{name}"), dev));
        worst = worst.max(dev);
    }
    metrics.push(metric("max_deviation", worst));
    Ok(CheckOutcome::new(
        "heat_oracle",
        worst <= 1e-10,
        format!("max relative L-inf deviation {worst:.3e} (tol 1e-10)"),
        metrics,
    ))
}

/// Temporal order of variants A and KR.
pub fn check_order() -> Result<CheckOutcome> {
    let mut metrics = Vec::new();
    let mut passed = true;
    let mut parts = Vec::new();
    for variant in [Variant::A, Variant::Kr] {
        let cfg = convergence_config(variant);
        let conv = convergence_order(&cfg, &cfg.dt_list)?;
        let order = match conv.estimate {
            OrderEstimate::Order(p) => p,
            _ => f64::NAN,
        };
        passed &= (1.9..=2.3).contains(&order);
        metrics.push(metric(&format!("order_{variant}"), order));
        parts.push(format!("{variant} {order:.3}"));
    }
    Ok(CheckOutcome::new(
        "temporal_order",
        passed,
        format!("orders {} (want [1.9, 2.3])", parts.join(", ")),
        metrics,
    ))
}

/// Fitted decay exponents of `‖e‖₂`, `‖e‖∞` and `‖s‖₂` in 2D and 3D.
pub fn check_decay() -> Result<CheckOutcome> {
    let mut metrics = Vec::new();
    let mut passed = true;
    let mut parts = Vec::new();
    for dim in [2usize, 3] {
        let start = Instant::now();
        let report = with_report(&decay_config(dim))?;
        let seconds = start.elapsed().as_secs_f64();
        let budget = if dim == 2 { 600.0 } else { 1800.0 };
        passed &= seconds <= budget;
        metrics.push(metric(&format!("seconds_{dim}d"), seconds));
        parts.push(format!("{dim}D run {seconds:.0}s (budget {budget}s)"));
        let l2 = -(dim as f64) / 4.0;
        let targets = if dim == 2 {
            vec![("L2_e", l2, 0.1), ("Linf_e", -1.0, 0.15), ("L2_s", l2, 0.1)]
        } else {
            vec![("L2_e", l2, 0.15), ("L2_s", l2, 0.15)]
        };
        for (column, want, tol) in targets {
            let got = report.get(&format!("exponent_{column}")).unwrap_or(f64::NAN);
            passed &= (got - want).abs() <= tol;
            metrics.push(metric(&format!("exponent_{column}_{dim}d"), got));
            parts.push(format!("{dim}D {column} {got:.3} ({want}±{tol})"));
        }
    }
    Ok(CheckOutcome::new("decay_exponents", passed, parts.join(", "), metrics))
}

/// Both masses level off and stay positive in 3D.
pub fn check_plateau() -> Result<CheckOutcome> {
    let report = with_report(&plateau_config())?;
    let get = |k: &str| report.get(k).unwrap_or(f64::NAN);
    let passed = report.get_flag("plateau") == Some(true);
    Ok(CheckOutcome::new(
        "mass_plateau",
        passed,
        format!(
            "final-half change m_s {:.3e}, m_e {:.3e} (tol 1e-2); final m_s {:.4}, m_e {:.4}",
            get("change_m_s"),
            get("change_m_e"),
            get("m_s_final"),
            get("m_e_final")
        ),
        report.metrics.clone(),
    ))
}

/// Limiting egg mass falls as χ grows while `m_s − m_e` is conserved.
pub fn check_chi_sweep() -> Result<CheckOutcome> {
    let cfg = chi_sweep_config();
    let rows = chi_sweep(&cfg, &cfg.chi_list)?;
    let nonincreasing = rows.windows(2).all(|w| w[1].m_e <= w[0].m_e + 1e-6);
    let drift = rows.iter().map(|r| r.diff_drift).fold(0.0, f64::max);
    let metrics = rows
        .iter()
        .flat_map(|r| {
            [
                metric(&format!("m_e_chi{}", r.chi), r.m_e),
                metric(&format!("m_s_chi{}", r.chi), r.m_s),
            ]
        })
        .chain([metric("max_diff_drift", drift)])
        .collect();
    let listing: Vec<String> = rows
        .iter()
        .map(|r| format!("chi={} m_e={:.5}{}", r.chi, r.m_e, if r.plateau { "" } else { " (no plateau)" }))
        .collect();
    Ok(CheckOutcome::new(
        "chi_dependence",
        nonincreasing && drift <= 1e-6,
        format!("{}; difference drift {drift:.2e} (tol 1e-6)", listing.join(", ")),
        metrics,
    ))
}

/// Paired runs under `x → λx`, `t → λ²t`.
pub fn check_scaling_pair() -> Result<CheckOutcome> {
    let full = check_scaling(&scaling_config(), 2)?;
    let control = check_scaling(&scaling_control_config(), 2)?;
    Ok(CheckOutcome::new(
        "scaling_invariance",
        full <= 1e-5 && control <= 1e-12,
        format!("coupled deviation {full:.3e} (tol 1e-5), diffusion-only {control:.3e} (tol 1e-12)"),
        vec![metric("deviation", full), metric("deviation_control", control)],
    ))
}

/// Similarity-norm decay for small 2D data.
pub fn check_small_data() -> Result<CheckOutcome> {
    let report = with_report(&small_data_config())?;
    let get = |k: &str| report.get(k).unwrap_or(f64::NAN);
    let gc = get("exponent_grad_c_Linf");
    let s = get("exponent_Linf_s");
    let stable = report.get_flag("stable") == Some(true);
    let passed = (gc + 0.5).abs() <= 0.15 && (s + 1.0).abs() <= 0.2 && stable;
    Ok(CheckOutcome::new(
        "small_data_norms",
        passed,
        format!(
            "grad_c exponent {gc:.3} (-0.5±0.15), s exponent {s:.3} (-1±0.2), kato s {:.4}, grad_c {:.4}, omega {:.3e}, stable {stable}",
            get("kato_s"),
            get("kato_grad_c"),
            get("kato_omega"),
        ),
        report.metrics.clone(),
    ))
}

/// Spectral and finite-difference right-hand sides on a coarse/fine pair.
pub fn fd_refinement(variant: Variant, dim: usize, seed: u64) -> Result<(f64, f64)> {
    let fine_n = if dim == 2 { 32 } else { 24 };
    let data = RandomState::new(seed, variant, dim, 1);
    let mut params = ModelParams::new(variant, dim);
    if variant == Variant::B {
        params.phi = unit_potential(dim, 1.0);
    }
    if variant == Variant::Kr {
        params.kappa1 = 0.5;
        params.kappa2 = 2.0;
    }
    let mut out = [0.0; 2];
    for (slot, n) in out.iter_mut().zip([fine_n / 2, fine_n]) {
        let grid = Grid::new(dim, n, 2.0 * PI)?;
        let state = data.sample(&grid);
        let flow = match variant {
            Variant::B => None,
            _ => Some(VelocitySpec::cellular(0.5, 1).build(&grid)),
        };
        *slot = rhs_fd_deviation(&state, &params, flow.as_ref())?;
    }
    Ok((out[0], out[1]))
}

/// Finite-difference cross-check for every variant in 2D and 3D.
pub fn check_operators(seed: u64) -> Result<CheckOutcome> {
    let mut metrics = Vec::new();
    let mut passed = true;
    let mut parts = Vec::new();
    for dim in [2usize, 3] {
        for variant in [Variant::Single, Variant::Kr, Variant::A, Variant::B] {
            let (coarse, fine) = fd_refinement(variant, dim, seed)?;
            let ratio = coarse / fine;
            passed &= ratio >= 3.5;
            metrics.push(metric(&format!("deviation_{variant}_{dim}d"), fine));
            metrics.push(metric(&format!("ratio_{variant}_{dim}d"), ratio));
            parts.push(format!("{variant}/{dim}D {fine:.2e} x{ratio:.2}"));
        }
    }
    Ok(CheckOutcome::new(
        "operator_cross_check",
        passed,
        format!("{} (ratio >= 3.5)", parts.join(", ")),
        metrics,
    ))
}

fn directory_files(dir: &Path) -> Result<Vec<(String, Vec<u8>)>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let name = path.file_name().unwrap_or_default().to_string_lossy().into_owned();
        // the manifest names its own directory
        if name.ends_with(".csv") || name.ends_with(".csim") {
            out.push((name, bytes));
        }
    }
    out.sort();
    Ok(out)
}

/// Runs the determinism configuration twice, on thread pools of different
/// sizes, and compares every output file byte for byte.
pub fn check_determinism(seed: u64, scratch: &Path) -> Result<CheckOutcome> {
    std::fs::create_dir_all(scratch).map_err(|e| Error::io(scratch, e))?;
    let init = scratch.join("init.csim");
    let grid = Grid::new(2, 64, 2.0 * PI)?;
    let state = RandomState::new(seed, Variant::B, 2, 2).sample(&grid);
    crate::output::write_snapshot(&init, &state)?;
    let cfg = determinism_config(&init);
    let mut listings = Vec::new();
    for (i, threads) in [1usize, 4].into_iter().enumerate() {
        let dir = scratch.join(format!("run_{i}"));
        if dir.exists() {
            std::fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::param("threads", e.to_string()))?;
        pool.install(|| crate::cli::execute_run(&cfg, &dir))?;
        listings.push(directory_files(&dir)?);
    }
    let identical = listings[0] == listings[1];
    let files = listings[0].len();
    Ok(CheckOutcome::new(
        "determinism",
        identical && files > 2,
        format!("{files} files per run, byte-identical {identical}"),
        vec![metric("files", files as f64)],
    ))
}

/// Runs one named check.
pub fn run_check(name: &str, opts: &SuiteOptions, conservation: &mut Option<ConservationRuns>) -> CheckOutcome {
    let shared = |slot: &mut Option<ConservationRuns>| -> Result<()> {
        if slot.is_none() {
            *slot = Some(ConservationRuns::compute()?);
        }
        Ok(())
    };
    let result = match name {
        "mass_difference" | "monotone_mass" | "c_mass_budget" => shared(conservation).map(|_| {
            let runs = conservation.as_ref().expect("computed");
            match name {
                "mass_difference" => check_mass_difference(runs),
                "monotone_mass" => check_monotone_mass(runs),
                _ => check_c_budget(runs),
            }
        }),
        "heat_oracle" => check_heat(),
        "temporal_order" => check_order(),
        "decay_exponents" => check_decay(),
        "mass_plateau" => check_plateau(),
        "chi_dependence" => check_chi_sweep(),
        "scaling_invariance" => check_scaling_pair(),
        "small_data_norms" => check_small_data(),
        "operator_cross_check" => check_operators(opts.seed),
        "determinism" => check_determinism(opts.seed, &opts.scratch),
        other => Err(Error::param("check", format!("unknown check `{other}`"))),
    };
    result.unwrap_or_else(|e| CheckOutcome::failed(name, &e))
}

/// Runs every check of `suite` that passes the filter, calling `done` after
/// each one.
pub fn run_suite(suite: Suite, opts: &SuiteOptions, mut done: impl FnMut(&CheckOutcome)) -> Vec<CheckOutcome> {
    let mut conservation = None;
    let mut out = Vec::new();
    for name in suite.checks() {
        if opts.filter.as_deref().is_some_and(|f| !name.contains(f)) {
            continue;
        }
        let outcome = run_check(name, opts, &mut conservation);
        done(&outcome);
        out.push(outcome);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suites_parse_and_cover_criteria() {
        for s in Suite::ALL {
            assert_eq!(s.name().parse::<Suite>().unwrap(), s);
        }
        assert!("nope".parse::<Suite>().is_err());
        let mut covered: Vec<&str> = Suite::ALL
            .iter()
            .filter(|&&s| s != Suite::All)
            .flat_map(|s| s.checks().iter().copied())
            .collect();
        covered.sort();
        let mut all = CRITERIA.to_vec();
        all.sort();
        assert_eq!(covered, all);
    }

    #[test]
    fn random_modes_are_bounded_and_seeded() {
        let g = Grid::new(2, 16, 3.0).unwrap();
        let a = RandomState::new(7, Variant::A, 2, 2).sample(&g);
        let b = RandomState::new(7, Variant::A, 2, 2).sample(&g);
        let c = RandomState::new(8, Variant::A, 2, 2).sample(&g);
        assert_eq!(a.e.values(), b.e.values());
        assert_ne!(a.e.values(), c.e.values());
        assert!(a.e.min() >= 0.5 - 1e-12 && a.e.max() <= 1.5 + 1e-12);
        assert!((a.e.mean() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn random_velocity_is_solenoidal() {
        let g = Grid::new(3, 8, 2.0 * PI).unwrap();
        let state = RandomState::new(3, Variant::B, 3, 1).sample(&g);
        let Some(Flow::Velocity(u)) = &state.flow else {
            panic!("3D variant B carries a velocity");
        };
        assert!(crate::spectral::divergence(u).max_abs() < 1e-12);
        state.check(Variant::B).unwrap();
    }

    #[test]
    fn presets_validate() {
        let mut all: Vec<RunConfig> = conservation_configs().into_iter().map(|(_, c)| c).collect();
        all.extend(heat_configs().into_iter().map(|(_, c)| c));
        all.extend([
            convergence_config(Variant::A),
            convergence_config(Variant::Kr),
            decay_config(2),
            decay_config(3),
            plateau_config(),
            chi_sweep_config(),
            scaling_config(),
            scaling_control_config(),
            small_data_config(),
        ]);
        for cfg in &all {
            cfg.validate().unwrap();
            if cfg.experiment.is_some() {
                ExperimentSpec::from_config(cfg).unwrap();
            }
        }
    }

    #[test]
    fn outcome_lines() {
        let ok = CheckOutcome::new("x", true, "fine".into(), Vec::new());
        assert_eq!(ok.line(), "PASS x: fine");
        let bad = CheckOutcome::failed("y", &Error::param("dt", "bad"));
        assert!(bad.line().starts_with("FAIL y: error:"));
    }
}
