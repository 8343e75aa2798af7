//! Right-hand sides of the four model variants.
//!
//! | variant  | evolved fields            | non-stiff terms                                  |
//! |----------|---------------------------|--------------------------------------------------|
//! | `Single` | n                         | advection, `χ∇·(n∇Δ⁻¹n)`, `-ε n^q`               |
//! | `Kr`     | e, s (diffusivities κ₂, κ₁) | advection, `-ε (se)^{q/2}`                     |
//! | `A`      | e, s                      | advection, `χ∇·(s∇Δ⁻¹e)`, `-ε se`                |
//! | `B`      | e, s, c, ω (2D) or u (3D) | advection, `-χ∇·(s∇c)`, `-ε se`, source `e`, buoyancy |
//!
//! All transport terms are evaluated in conservative form `-∇·(flux)` with the
//! flux formed in physical space and 2/3-rule truncated in spectral space, so
//! their zero mode vanishes identically and the mass budgets of the discrete
//! system reduce to the reaction and source integrals.

use std::fmt;
use std::str::FromStr;

use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fluid;
use crate::spectral::{Grid, ScalarField, Spectrum, VectorField};

/// Fluid viscosity. The fluid equations carry unit coefficients.
pub const VISCOSITY: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    /// One density `n` with nonlocal self-attraction and reaction `-ε n^q`.
    Single,
    /// Sperm/egg pair with separate diffusivities and reaction `-ε (se)^{q/2}`.
    Kr,
    /// Egg/sperm chemotaxis with a prescribed divergence-free velocity.
    A,
    /// Chemotaxis coupled to Navier–Stokes (2D) or Stokes (3D) flow.
    B,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Single => "single",
            Variant::Kr => "kr",
            Variant::A => "a",
            Variant::B => "b",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "single" => Ok(Variant::Single),
            "kr" => Ok(Variant::Kr),
            "a" => Ok(Variant::A),
            "b" => Ok(Variant::B),
            other => Err(format!("unknown variant `{other}` (expected single, kr, a or b)")),
        }
    }
}

/// Potential `φ(x) = A cos(2π m·x / L)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PotentialSpec {
    pub amplitude: f64,
    pub mode: Vec<i64>,
}

impl PotentialSpec {
    pub fn zero(dim: usize) -> PotentialSpec {
        PotentialSpec {
            amplitude: 0.0,
            mode: vec![0; dim],
        }
    }

    fn phase(&self, x: &[f64], length: f64) -> f64 {
        let dot: f64 = self.mode.iter().zip(x).map(|(&m, &xi)| m as f64 * xi).sum();
        2.0 * std::f64::consts::PI * dot / length
    }

    pub fn value_at(&self, x: &[f64], length: f64) -> f64 {
        self.amplitude * self.phase(x, length).cos()
    }

    /// Analytic gradient `-A (2π m/L) sin(2π m·x/L)`.
    pub fn gradient_at(&self, x: &[f64], length: f64) -> [f64; 3] {
        let factor = -self.amplitude * self.phase(x, length).sin() * 2.0 * std::f64::consts::PI
            / length;
        let mut g = [0.0; 3];
        for (gi, &m) in g.iter_mut().zip(&self.mode) {
            *gi = factor * m as f64;
        }
        g
    }

    pub fn gradient_field(&self, grid: &Grid) -> VectorField {
        let length = grid.length();
        VectorField::from_fn(grid, |x| self.gradient_at(x, length))
    }

    /// `‖∇φ‖∞ = |A| 2π|m| / L`.
    pub fn gradient_sup(&self, length: f64) -> f64 {
        let m2: f64 = self.mode.iter().map(|&m| (m * m) as f64).sum();
        self.amplitude.abs() * 2.0 * std::f64::consts::PI * m2.sqrt() / length
    }

    pub fn is_zero(&self) -> bool {
        self.amplitude == 0.0 || self.mode.iter().all(|&m| m == 0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub variant: Variant,
    /// Chemotactic sensitivity χ.
    pub chi: f64,
    /// Fertilization rate ε.
    pub eps: f64,
    /// Reaction exponent; forced to 2 for variants A and B.
    pub q: f64,
    /// Fluid nonlinearity flag: 1 (Navier–Stokes, 2D) or 0 (Stokes, 3D).
    pub kappa: u8,
    /// Sperm diffusivity of the `Kr` variant.
    pub kappa1: f64,
    /// Egg diffusivity of the `Kr` variant.
    pub kappa2: f64,
    pub phi: PotentialSpec,
}

impl ModelParams {
    pub fn new(variant: Variant, dim: usize) -> ModelParams {
        ModelParams {
            variant,
            chi: 1.0,
            eps: 1.0,
            q: 2.0,
            kappa: if dim == 2 { 1 } else { 0 },
            kappa1: 1.0,
            kappa2: 1.0,
            phi: PotentialSpec::zero(dim),
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if !(self.chi.is_finite() && self.chi >= 0.0) {
            return Err(Error::param("chi", format!("must be >= 0, got {}", self.chi)));
        }
        if !(self.eps.is_finite() && self.eps >= 0.0) {
            return Err(Error::param("eps", format!("must be >= 0, got {}", self.eps)));
        }
        if !(self.kappa1.is_finite() && self.kappa1 > 0.0) {
            return Err(Error::param("kappa1", format!("must be > 0, got {}", self.kappa1)));
        }
        if !(self.kappa2.is_finite() && self.kappa2 > 0.0) {
            return Err(Error::param("kappa2", format!("must be > 0, got {}", self.kappa2)));
        }
        if !(self.q.is_finite() && self.q >= 2.0) {
            return Err(Error::param("q", format!("must be >= 2, got {}", self.q)));
        }
        if matches!(self.variant, Variant::A | Variant::B) && self.q != 2.0 {
            return Err(Error::param("q", "variants a and b require q = 2"));
        }
        if self.variant == Variant::B {
            let required = if dim == 2 { 1 } else { 0 };
            if self.kappa != required {
                return Err(Error::param(
                    "kappa",
                    format!("variant b in {dim}D requires kappa = {required}"),
                ));
            }
        } else if self.kappa > 1 {
            return Err(Error::param("kappa", "must be 0 or 1"));
        }
        if self.phi.mode.len() != dim {
            return Err(Error::param(
                "phi_mode",
                format!("needs {dim} entries, got {}", self.phi.mode.len()),
            ));
        }
        if !self.phi.amplitude.is_finite() {
            return Err(Error::param("phi_amplitude", "must be finite"));
        }
        Ok(())
    }
}

/// Velocity degrees of freedom of variant B.
#[derive(Clone, Debug, PartialEq)]
pub enum Flow {
    /// 2D vorticity; the velocity is recovered by Biot–Savart.
    Vorticity(ScalarField),
    /// 3D divergence-free velocity.
    Velocity(VectorField),
}

/// Model state at time `t`.
///
/// `e` holds the egg density, or the lone density `n` of the `Single`
/// variant. `s` is the sperm density (absent for `Single`), `c` the chemical
/// concentration and `flow` the fluid state (variant B only).
#[derive(Clone, Debug, PartialEq)]
pub struct State {
    pub t: f64,
    pub e: ScalarField,
    pub s: Option<ScalarField>,
    pub c: Option<ScalarField>,
    pub flow: Option<Flow>,
}

impl State {
    pub fn single(n: ScalarField) -> State {
        State {
            t: 0.0,
            e: n,
            s: None,
            c: None,
            flow: None,
        }
    }

    /// State of the `Kr` and `A` variants.
    pub fn pair(e: ScalarField, s: ScalarField) -> State {
        State {
            t: 0.0,
            e,
            s: Some(s),
            c: None,
            flow: None,
        }
    }

    pub fn coupled(e: ScalarField, s: ScalarField, c: ScalarField, flow: Flow) -> State {
        State {
            t: 0.0,
            e,
            s: Some(s),
            c: Some(c),
            flow: Some(flow),
        }
    }

    pub fn grid(&self) -> &Grid {
        self.e.grid()
    }

    pub fn with_time(mut self, t: f64) -> State {
        self.t = t;
        self
    }

    /// Evolved fields in the fixed order used by tendencies and snapshots.
    pub fn named_fields(&self) -> Vec<(&'static str, &ScalarField)> {
        let mut out = Vec::new();
        if self.s.is_none() {
            out.push(("n", &self.e));
            return out;
        }
        out.push(("e", &self.e));
        if let Some(s) = &self.s {
            out.push(("s", s));
        }
        if let Some(c) = &self.c {
            out.push(("c", c));
        }
        match &self.flow {
            Some(Flow::Vorticity(w)) => out.push(("omega", w)),
            Some(Flow::Velocity(u)) => {
                for (name, comp) in ["u1", "u2", "u3"].into_iter().zip(u.components()) {
                    out.push((name, comp));
                }
            }
            None => {}
        }
        out
    }

    /// Checks that the state carries exactly the fields of `variant`.
    pub fn check(&self, variant: Variant) -> Result<()> {
        let grid = self.grid();
        let mismatch = |reason: &str| Error::StateMismatch {
            variant: variant.to_string(),
            reason: reason.to_string(),
        };
        for field in [&self.s, &self.c].into_iter().flatten() {
            if field.grid() != grid {
                return Err(Error::GridMismatch("state fields live on different grids".into()));
            }
        }
        match variant {
            Variant::Single => {
                if self.s.is_some() || self.c.is_some() || self.flow.is_some() {
                    return Err(mismatch("single carries only one density"));
                }
            }
            Variant::Kr | Variant::A => {
                if self.s.is_none() {
                    return Err(mismatch("missing sperm density s"));
                }
                if self.c.is_some() || self.flow.is_some() {
                    return Err(mismatch("unexpected chemical or flow fields"));
                }
            }
            Variant::B => {
                if self.s.is_none() || self.c.is_none() {
                    return Err(mismatch("missing s or c"));
                }
                match (&self.flow, grid.dim()) {
                    (Some(Flow::Vorticity(w)), 2) if w.grid() == grid => {}
                    (Some(Flow::Velocity(u)), 3) if u.grid() == grid => {}
                    _ => return Err(mismatch("needs vorticity in 2D or velocity in 3D")),
                }
            }
        }
        Ok(())
    }
}

/// Pointwise reaction `-ε (s⁺e⁺)^{q/2}`; negative samples are clipped to zero.
pub fn reaction(s: &ScalarField, e: &ScalarField, eps: f64, q: f64) -> ScalarField {
    s.zip_map(e, |sv, ev| -reaction_rate(sv, ev, eps, q))
}

#[inline]
fn reaction_rate(s: f64, e: f64, eps: f64, q: f64) -> f64 {
    let p = s.max(0.0) * e.max(0.0);
    if q == 2.0 {
        eps * p
    } else {
        eps * p.powf(0.5 * q)
    }
}

/// `-∇·(f w)` with the product truncated by the 2/3 rule.
fn neg_flux_divergence(grid: &Grid, f: &[f64], drift: &[Vec<f64>]) -> Spectrum {
    let comps: Vec<Spectrum> = drift
        .iter()
        .map(|w| {
            let prod: Vec<f64> = f.iter().zip(w).map(|(a, b)| a * b).collect();
            grid.forward(&prod)
        })
        .collect();
    let mut div = grid.divergence_spectrum(&comps);
    grid.dealias_in_place(&mut div);
    for c in div.iter_mut() {
        *c = -*c;
    }
    div
}

fn gradient_physical(grid: &Grid, spec: &[Complex64]) -> Vec<Vec<f64>> {
    (0..grid.dim())
        .map(|a| grid.inverse(&grid.derivative_spectrum(spec, a)))
        .collect()
}

fn max_magnitude(comps: &[Vec<f64>]) -> f64 {
    let len = comps.first().map_or(0, |c| c.len());
    let mut best = 0.0f64;
    for i in 0..len {
        let m2: f64 = comps.iter().map(|c| c[i] * c[i]).sum();
        best = best.max(m2);
    }
    best.sqrt()
}

/// `χ∇·(s∇Δ⁻¹e)` evaluated pseudo-spectrally.
pub fn chemo_flux_div_nonlocal(s: &ScalarField, e: &ScalarField, chi: f64) -> ScalarField {
    let grid = s.grid();
    let g = gradient_physical(grid, &grid.inv_laplacian_spectrum(&e.spectrum()));
    // -∇·(s g) negated
    let spec: Spectrum = neg_flux_divergence(grid, s.values(), &g)
        .into_iter()
        .map(|c| -c * chi)
        .collect();
    ScalarField::from_spectrum(grid, &spec)
}

/// `-χ∇·(s∇c)` evaluated pseudo-spectrally.
pub fn chemo_flux_div_local(s: &ScalarField, c: &ScalarField, chi: f64) -> ScalarField {
    let grid = s.grid();
    let g = gradient_physical(grid, &c.spectrum());
    let spec: Spectrum = neg_flux_divergence(grid, s.values(), &g)
        .into_iter()
        .map(|v| v * chi)
        .collect();
    ScalarField::from_spectrum(grid, &spec)
}

/// Relative divergence bound accepted for prescribed velocities.
const SOLENOIDAL_TOL: f64 = 1e-8;

fn check_solenoidal(u: &VectorField) -> Result<()> {
    let grid = u.grid();
    let div = grid.inverse(&grid.divergence_spectrum(&u.spectra()));
    let worst = div.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let kmax = std::f64::consts::PI / grid.spacing();
    if worst > SOLENOIDAL_TOL * (1.0f64).max(kmax * u.max_abs()) {
        return Err(Error::NotSolenoidal { divergence: worst });
    }
    Ok(())
}

/// Advection tendency `-(u·∇)f`, computed as `-∇·(u f)`.
pub fn advect(f: &ScalarField, u: &VectorField) -> Result<ScalarField> {
    if f.grid() != u.grid() {
        return Err(Error::GridMismatch("advected field and velocity".into()));
    }
    check_solenoidal(u)?;
    let grid = f.grid();
    let drift: Vec<Vec<f64>> = u.components().iter().map(|c| c.values().to_vec()).collect();
    Ok(ScalarField::from_spectrum(
        grid,
        &neg_flux_divergence(grid, f.values(), &drift),
    ))
}

/// Buoyancy force `-(s+e)∇φ` with `∇φ` evaluated analytically.
pub fn buoyancy_force(s: &ScalarField, e: &ScalarField, phi: &PotentialSpec) -> VectorField {
    let grid = s.grid();
    let grad = phi.gradient_field(grid);
    let total = s.zip_map(e, |a, b| a + b);
    let comps = grad
        .components()
        .iter()
        .map(|g| total.zip_map(g, |m, gi| -m * gi))
        .collect();
    VectorField::new(comps).expect("components share the grid")
}

/// One evolved field's tendency, split into the diffusive part (integrated
/// exactly) and everything else.
#[derive(Clone, Debug)]
pub struct Tendency {
    pub name: &'static str,
    pub nonstiff: ScalarField,
    pub diffusion: ScalarField,
}

impl Tendency {
    pub fn total(&self) -> ScalarField {
        self.nonstiff.zip_map(&self.diffusion, |a, b| a + b)
    }
}

#[derive(Clone, Debug)]
pub struct Tendencies {
    pub fields: Vec<Tendency>,
}

impl Tendencies {
    pub fn get(&self, name: &str) -> Option<&Tendency> {
        self.fields.iter().find(|t| t.name == name)
    }
}

/// Output of one non-stiff evaluation on spectral data.
pub(crate) struct Evaluation {
    pub tendencies: Vec<Spectrum>,
    /// Physical densities `(name, samples)` seen by this evaluation.
    pub densities: Vec<(&'static str, Vec<f64>)>,
    /// Advective plus chemotactic speed bound.
    pub speed: f64,
}

/// Assembled model on one grid: the evaluator behind [`rhs`] and the integrator.
#[derive(Clone, Debug)]
pub struct Model {
    grid: Grid,
    params: ModelParams,
    prescribed: Option<Vec<Vec<f64>>>,
    grad_phi: Vec<Vec<f64>>,
}

impl Model {
    /// `prescribed` is the externally given velocity of the `Single`, `Kr` and
    /// `A` variants; it must be solenoidal and is rejected for variant B.
    pub fn new(grid: &Grid, params: &ModelParams, prescribed: Option<&VectorField>) -> Result<Model> {
        params.validate(grid.dim())?;
        let prescribed = match prescribed {
            Some(_) if params.variant == Variant::B => {
                return Err(Error::StateMismatch {
                    variant: "b".into(),
                    reason: "variant b evolves its own velocity".into(),
                })
            }
            Some(u) => {
                if u.grid() != grid {
                    return Err(Error::GridMismatch("prescribed velocity".into()));
                }
                check_solenoidal(u)?;
                Some(u.components().iter().map(|c| c.values().to_vec()).collect())
            }
            None => None,
        };
        let grad_phi = if params.variant == Variant::B {
            params
                .phi
                .gradient_field(grid)
                .into_components()
                .into_iter()
                .map(|c| c.into_values())
                .collect()
        } else {
            Vec::new()
        };
        Ok(Model {
            grid: grid.clone(),
            params: params.clone(),
            prescribed,
            grad_phi,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn field_names(&self) -> Vec<&'static str> {
        match (self.params.variant, self.grid.dim()) {
            (Variant::Single, _) => vec!["n"],
            (Variant::Kr | Variant::A, _) => vec!["e", "s"],
            (Variant::B, 2) => vec!["e", "s", "c", "omega"],
            (Variant::B, _) => vec!["e", "s", "c", "u1", "u2", "u3"],
        }
    }

    /// Diffusion coefficient of each evolved field, in `field_names` order.
    pub fn diffusivities(&self) -> Vec<f64> {
        match self.params.variant {
            Variant::Kr => vec![self.params.kappa2, self.params.kappa1],
            _ => vec![1.0; self.field_names().len()],
        }
    }

    pub(crate) fn to_spectra(&self, state: &State) -> Result<Vec<Spectrum>> {
        state.check(self.params.variant)?;
        if *state.grid() != self.grid {
            return Err(Error::GridMismatch("state and model grids differ".into()));
        }
        Ok(state
            .named_fields()
            .into_iter()
            .map(|(_, f)| f.spectrum())
            .collect())
    }

    pub(crate) fn state_from_spectra(&self, spectra: &[Spectrum], t: f64) -> State {
        let fields = spectra
            .iter()
            .map(|sp| ScalarField::from_spectrum(&self.grid, sp))
            .collect();
        self.state_from_fields(fields, t)
    }

    /// Assembles a state from evolved fields given in `field_names` order.
    pub(crate) fn state_from_fields(&self, fields: Vec<ScalarField>, t: f64) -> State {
        let mut it = fields.into_iter();
        let mut next = || it.next().expect("one field per evolved unknown");
        match (self.params.variant, self.grid.dim()) {
            (Variant::Single, _) => State::single(next()).with_time(t),
            (Variant::Kr | Variant::A, _) => {
                let e = next();
                State::pair(e, next()).with_time(t)
            }
            (Variant::B, dim) => {
                let (e, s, c) = (next(), next(), next());
                let flow = if dim == 2 {
                    Flow::Vorticity(next())
                } else {
                    let u = VectorField::new(vec![next(), next(), next()]).expect("three components");
                    Flow::Velocity(u)
                };
                State::coupled(e, s, c, flow).with_time(t)
            }
        }
    }

    /// Drift velocity `u + coeff·g`, or `None` when both parts are absent.
    fn drift(&self, u: Option<&[Vec<f64>]>, g: Option<(&[Vec<f64>], f64)>) -> Option<Vec<Vec<f64>>> {
        match (u, g) {
            (None, None) => None,
            (Some(u), None) => Some(u.to_vec()),
            (None, Some((g, coeff))) => Some(
                g.iter()
                    .map(|c| c.iter().map(|v| coeff * v).collect())
                    .collect(),
            ),
            (Some(u), Some((g, coeff))) => Some(
                u.iter()
                    .zip(g)
                    .map(|(uc, gc)| uc.iter().zip(gc).map(|(a, b)| a + coeff * b).collect())
                    .collect(),
            ),
        }
    }

    fn transport(&self, f: &[f64], drift: &Option<Vec<Vec<f64>>>) -> Spectrum {
        match drift {
            Some(w) => neg_flux_divergence(&self.grid, f, w),
            None => vec![Complex64::default(); self.grid.spectral_len()],
        }
    }

    fn reaction_spectrum(&self, s: &[f64], e: &[f64]) -> Spectrum {
        let p = &self.params;
        let rate: Vec<f64> = s
            .iter()
            .zip(e)
            .map(|(&sv, &ev)| reaction_rate(sv, ev, p.eps, p.q))
            .collect();
        let mut spec = self.grid.forward(&rate);
        self.grid.dealias_in_place(&mut spec);
        spec
    }

    fn single_reaction_spectrum(&self, n: &[f64]) -> Spectrum {
        let p = &self.params;
        let rate: Vec<f64> = n
            .iter()
            .map(|&v| {
                let v = v.max(0.0);
                if p.q == 2.0 {
                    p.eps * v * v
                } else {
                    p.eps * v.powf(p.q)
                }
            })
            .collect();
        let mut spec = self.grid.forward(&rate);
        self.grid.dealias_in_place(&mut spec);
        spec
    }

    /// Non-stiff tendencies of the evolved spectra.
    pub(crate) fn evaluate(&self, spectra: &[Spectrum]) -> Evaluation {
        let grid = &self.grid;
        let chi = self.params.chi;
        let sub = |a: Spectrum, b: &Spectrum| -> Spectrum {
            a.into_iter().zip(b).map(|(x, y)| x - y).collect()
        };
        match self.params.variant {
            Variant::Single => {
                let n = grid.inverse(&spectra[0]);
                let g = (chi != 0.0)
                    .then(|| gradient_physical(grid, &grid.inv_laplacian_spectrum(&spectra[0])));
                let u = self.prescribed.as_deref();
                let speed = u.map_or(0.0, max_magnitude) + g.as_deref().map_or(0.0, |g| chi * max_magnitude(g));
                let drift = self.drift(u, g.as_deref().map(|g| (g, -chi)));
                let tend = sub(self.transport(&n, &drift), &self.single_reaction_spectrum(&n));
                Evaluation {
                    tendencies: vec![tend],
                    densities: vec![("n", n)],
                    speed,
                }
            }
            Variant::Kr | Variant::A => {
                let e = grid.inverse(&spectra[0]);
                let s = grid.inverse(&spectra[1]);
                let u = self.prescribed.as_deref();
                let g = (self.params.variant == Variant::A && chi != 0.0)
                    .then(|| gradient_physical(grid, &grid.inv_laplacian_spectrum(&spectra[0])));
                let speed = u.map_or(0.0, max_magnitude) + g.as_deref().map_or(0.0, |g| chi * max_magnitude(g));
                let drift_e = self.drift(u, None);
                let drift_s = self.drift(u, g.as_deref().map(|g| (g, -chi)));
                let r = self.reaction_spectrum(&s, &e);
                let te = sub(self.transport(&e, &drift_e), &r);
                let ts = sub(self.transport(&s, &drift_s), &r);
                Evaluation {
                    tendencies: vec![te, ts],
                    densities: vec![("e", e), ("s", s)],
                    speed,
                }
            }
            Variant::B => self.evaluate_coupled(spectra),
        }
    }

    fn evaluate_coupled(&self, spectra: &[Spectrum]) -> Evaluation {
        let grid = &self.grid;
        let dim = grid.dim();
        let chi = self.params.chi;
        let e = grid.inverse(&spectra[0]);
        let s = grid.inverse(&spectra[1]);
        let c = grid.inverse(&spectra[2]);
        let u: Vec<Vec<f64>> = if dim == 2 {
            fluid::biot_savart_spectra(grid, &spectra[3])
                .iter()
                .map(|sp| grid.inverse(sp))
                .collect()
        } else {
            spectra[3..6].iter().map(|sp| grid.inverse(sp)).collect()
        };
        let g = (chi != 0.0).then(|| gradient_physical(grid, &spectra[2]));
        let speed = max_magnitude(&u) + g.as_deref().map_or(0.0, |g| chi * max_magnitude(g));

        let drift_u = Some(u.clone());
        let drift_s = self.drift(Some(&u), g.as_deref().map(|g| (g, chi)));
        let r = self.reaction_spectrum(&s, &e);

        let mut tendencies = Vec::with_capacity(spectra.len());
        tendencies.push(
            self.transport(&e, &drift_u)
                .into_iter()
                .zip(&r)
                .map(|(a, b)| a - b)
                .collect(),
        );
        tendencies.push(
            self.transport(&s, &drift_s)
                .into_iter()
                .zip(&r)
                .map(|(a, b)| a - b)
                .collect(),
        );
        tendencies.push(
            self.transport(&c, &drift_u)
                .into_iter()
                .zip(&spectra[0])
                .map(|(a, b)| a + b)
                .collect(),
        );

        // buoyancy -(s+e)∇φ, truncated like every other product
        let mut force: Vec<Spectrum> = self
            .grad_phi
            .iter()
            .map(|gphi| {
                let f: Vec<f64> = s
                    .iter()
                    .zip(&e)
                    .zip(gphi)
                    .map(|((sv, ev), gv)| -(sv + ev) * gv)
                    .collect();
                let mut spec = grid.forward(&f);
                grid.dealias_in_place(&mut spec);
                spec
            })
            .collect();

        if dim == 2 {
            let omega = grid.inverse(&spectra[3]);
            let curl = fluid::curl2d_spectrum(grid, &force[0], &force[1]);
            tendencies.push(
                self.transport(&omega, &drift_u)
                    .into_iter()
                    .zip(&curl)
                    .map(|(a, b)| a + b)
                    .collect(),
            );
        } else {
            grid.project_in_place(&mut force);
            tendencies.extend(force);
        }

        Evaluation {
            tendencies,
            densities: vec![("e", e), ("s", s), ("c", c)],
            speed,
        }
    }

    /// Spectral diffusion term `κ Δ f̂` of field `index`.
    pub(crate) fn diffusion_spectrum(&self, index: usize, spectrum: &[Complex64]) -> Spectrum {
        let kappa = self.diffusivities()[index];
        spectrum
            .iter()
            .zip(self.grid.k_squared())
            .map(|(c, &k2)| -c * (kappa * k2))
            .collect()
    }
}

/// Tendencies of every evolved field of `state`, with diffusion split off.
///
/// `u_given` is the prescribed velocity for the `Single`, `Kr` and `A`
/// variants; variant B derives its velocity from the state.
pub fn rhs(state: &State, u_given: Option<&VectorField>, params: &ModelParams) -> Result<Tendencies> {
    let model = Model::new(state.grid(), params, u_given)?;
    let spectra = model.to_spectra(state)?;
    let eval = model.evaluate(&spectra);
    let grid = model.grid();
    let fields = model
        .field_names()
        .into_iter()
        .enumerate()
        .map(|(i, name)| Tendency {
            name,
            nonstiff: ScalarField::from_spectrum(grid, &eval.tendencies[i]),
            diffusion: ScalarField::from_spectrum(grid, &model.diffusion_spectrum(i, &spectra[i])),
        })
        .collect();
    Ok(Tendencies { fields })
}
