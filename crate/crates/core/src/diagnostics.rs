//! Scalar functionals of fields and time series.
//!
//! All domain sums use sequential compensated summation so that results do
//! not depend on the number of worker threads.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::integrator::SimHistory;
use crate::model::{Flow, State};
use crate::spectral::{ScalarField, VectorField};

/// Neumaier-compensated sum, evaluated strictly left to right.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// `(Σ|f|^p h^d)^{1/p}`, or `max|f|` for `p = ∞`.
pub fn lp_norm(f: &ScalarField, p: f64) -> Result<f64> {
    if p.is_nan() || p < 1.0 {
        return Err(Error::param("p", format!("must be >= 1, got {p}")));
    }
    if p.is_infinite() {
        return Ok(f.max_abs());
    }
    let h = f.grid().cell_volume();
    let v = f.values();
    let norm = if p == 1.0 {
        compensated_sum(v.iter().map(|x| x.abs())) * h
    } else if p == 2.0 {
        (compensated_sum(v.iter().map(|x| x * x)) * h).sqrt()
    } else {
        (compensated_sum(v.iter().map(|x| x.abs().powf(p))) * h).powf(1.0 / p)
    };
    Ok(norm)
}

/// `Σ f h^d`; exact quadrature for band-limited fields.
pub fn total_mass(f: &ScalarField) -> f64 {
    compensated_sum(f.values().iter().copied()) * f.grid().cell_volume()
}

/// `Σ s log s h^d`, with non-positive samples contributing zero.
pub fn entropy(s: &ScalarField) -> f64 {
    let terms = s
        .values()
        .iter()
        .map(|&v| if v > 0.0 { v * v.ln() } else { 0.0 });
    compensated_sum(terms) * s.grid().cell_volume()
}

/// `(V Σ_k (1+|k|²)^m |c_k|²)^{1/2}` with `c_k` the Fourier-series coefficients.
pub fn sobolev_norm(f: &ScalarField, m: u32) -> Result<f64> {
    if m > 3 {
        return Err(Error::param("m", format!("must be in 0..=3, got {m}")));
    }
    let grid = f.grid();
    let spec = f.spectrum();
    let scale = 1.0 / grid.len() as f64;
    let terms = spec
        .iter()
        .zip(grid.k_squared())
        .zip(grid.hermitian_weight())
        .map(|((c, &k2), &w)| w * (1.0 + k2).powi(m as i32) * (c * scale).norm_sqr());
    Ok((grid.volume() * compensated_sum(terms)).sqrt())
}

/// `Σ (|f| + |∇f|)(1 + r^n) h^d` with `r` the distance to the domain center.
pub fn weighted_moment(f: &ScalarField, n: u32) -> Result<f64> {
    if n == 0 {
        return Err(Error::param("n", "must be >= 1"));
    }
    let grid = f.grid();
    let grad = crate::spectral::gradient(f);
    let center = 0.5 * grid.length();
    let terms = (0..grid.len()).map(|i| {
        let x = grid.coordinates(i);
        let r = x[..grid.dim()]
            .iter()
            .map(|xi| (xi - center).powi(2))
            .sum::<f64>()
            .sqrt();
        let g = grad
            .components()
            .iter()
            .map(|c| c.values()[i].powi(2))
            .sum::<f64>()
            .sqrt();
        (f.values()[i].abs() + g) * (1.0 + r.powi(n as i32))
    });
    Ok(compensated_sum(terms) * grid.cell_volume())
}

fn magnitude(v: &VectorField) -> ScalarField {
    let grid = v.grid();
    let values = (0..grid.len())
        .map(|i| {
            v.components()
                .iter()
                .map(|c| c.values()[i].powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    ScalarField::from_raw(grid, values)
}

/// Field whose norms can be tracked over a run and fed to [`kato_norm`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum NormField {
    E,
    S,
    Omega,
    GradC,
}

impl NormField {
    pub fn name(self) -> &'static str {
        match self {
            NormField::E => "e",
            NormField::S => "s",
            NormField::Omega => "omega",
            NormField::GradC => "grad_c",
        }
    }

    /// Exponent `a` of the time weight `t^a` in the similarity norm.
    pub fn weight_exponent(self, p: f64) -> f64 {
        match self {
            NormField::GradC => 0.5 - 1.0 / p,
            _ => 1.0 - 1.0 / p,
        }
    }
}

impl fmt::Display for NormField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for NormField {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "e" => Ok(NormField::E),
            "s" => Ok(NormField::S),
            "omega" => Ok(NormField::Omega),
            "grad_c" => Ok(NormField::GradC),
            other => Err(format!("unknown norm field `{other}`")),
        }
    }
}

/// `‖field‖_p` of a state, or `None` when the state lacks the field.
pub fn field_norm(state: &State, field: NormField, p: f64) -> Result<Option<f64>> {
    let target = match field {
        NormField::E => Some(state.e.clone()),
        NormField::S => state.s.clone(),
        NormField::Omega => match &state.flow {
            Some(Flow::Vorticity(w)) => Some(w.clone()),
            _ => None,
        },
        NormField::GradC => state
            .c
            .as_ref()
            .map(|c| magnitude(&crate::spectral::gradient(c))),
    };
    target.map(|f| lp_norm(&f, p)).transpose()
}

/// Norm exponents stored in every record.
pub const RECORD_P: [f64; 4] = [1.0, 2.0, 4.0, f64::INFINITY];

/// Diagnostics of one state. Fields the variant does not carry are `None`;
/// for the single-density variant the `e` entries describe `n`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiagnosticRecord {
    pub t: f64,
    pub m_e: f64,
    pub m_s: Option<f64>,
    pub m_c: Option<f64>,
    pub mass_diff: Option<f64>,
    /// `‖e‖_p` for `p` in [`RECORD_P`].
    pub lp_e: [f64; 4],
    pub lp_s: Option<[f64; 4]>,
    pub grad_c_inf: Option<f64>,
    pub entropy_s: Option<f64>,
    pub enstrophy: Option<f64>,
    pub h1_e: f64,
    pub h1_s: Option<f64>,
    pub min_e: f64,
    pub min_s: Option<f64>,
}

fn lp_table(f: &ScalarField) -> [f64; 4] {
    RECORD_P.map(|p| lp_norm(f, p).expect("record exponents are valid"))
}

impl DiagnosticRecord {
    pub fn from_state(state: &State) -> DiagnosticRecord {
        let m_e = total_mass(&state.e);
        let m_s = state.s.as_ref().map(total_mass);
        let grad_c_inf = state
            .c
            .as_ref()
            .map(|c| crate::spectral::gradient(c).max_magnitude());
        let enstrophy = match &state.flow {
            Some(Flow::Vorticity(w)) => Some(lp_norm(w, 2.0).expect("p = 2").powi(2)),
            _ => None,
        };
        DiagnosticRecord {
            t: state.t,
            m_e,
            m_s,
            m_c: state.c.as_ref().map(total_mass),
            mass_diff: m_s.map(|ms| ms - m_e),
            lp_e: lp_table(&state.e),
            lp_s: state.s.as_ref().map(lp_table),
            grad_c_inf,
            entropy_s: state.s.as_ref().map(entropy),
            enstrophy,
            h1_e: sobolev_norm(&state.e, 1).expect("m = 1"),
            h1_s: state.s.as_ref().map(|s| sobolev_norm(s, 1).expect("m = 1")),
            min_e: state.e.min(),
            min_s: state.s.as_ref().map(|s| s.min()),
        }
    }

    /// Value of a CSV column, `None` for empty cells or unknown names.
    pub fn column(&self, name: &str) -> Option<f64> {
        let lp = |table: Option<[f64; 4]>, i: usize| table.map(|t| t[i]);
        match name {
            "t" => Some(self.t),
            "m_e" => Some(self.m_e),
            "m_s" => self.m_s,
            "m_c" => self.m_c,
            "mass_diff" => self.mass_diff,
            "L1_e" => Some(self.lp_e[0]),
            "L2_e" => Some(self.lp_e[1]),
            "L4_e" => Some(self.lp_e[2]),
            "Linf_e" => Some(self.lp_e[3]),
            "L1_s" => lp(self.lp_s, 0),
            "L2_s" => lp(self.lp_s, 1),
            "L4_s" => lp(self.lp_s, 2),
            "Linf_s" => lp(self.lp_s, 3),
            "grad_c_Linf" => self.grad_c_inf,
            "entropy_s" => self.entropy_s,
            "enstrophy" => self.enstrophy,
            "H1_e" => Some(self.h1_e),
            "H1_s" => self.h1_s,
            "min_e" => Some(self.min_e),
            "min_s" => self.min_s,
            _ => None,
        }
    }
}

/// Result of a power-law fit `value ≈ constant · t^exponent` on a window.
#[derive(Clone, Debug, PartialEq)]
pub struct FitResult {
    pub exponent: f64,
    pub constant: f64,
    pub residual: f64,
    pub window: (f64, f64),
}

fn window_samples(series: &[(f64, f64)], t0: f64, t1: f64) -> Result<Vec<(f64, f64)>> {
    if !(t0 < t1) || t0 <= 0.0 {
        return Err(Error::Fit(format!("invalid window [{t0}, {t1}]")));
    }
    let samples: Vec<(f64, f64)> = series
        .iter()
        .copied()
        .filter(|&(t, _)| t >= t0 && t <= t1)
        .collect();
    if samples.len() < 8 {
        return Err(Error::Fit(format!(
            "need at least 8 samples in [{t0}, {t1}], got {}",
            samples.len()
        )));
    }
    if let Some(&(t, v)) = samples.iter().find(|&&(_, v)| !(v > 0.0 && v.is_finite())) {
        return Err(Error::Fit(format!("non-positive value {v} at t = {t}")));
    }
    Ok(samples)
}

/// Least-squares line through `(log t, log value)` on `[t0, t1]`.
pub fn decay_fit(series: &[(f64, f64)], t0: f64, t1: f64) -> Result<FitResult> {
    let samples = window_samples(series, t0, t1)?;
    let n = samples.len() as f64;
    let xs: Vec<f64> = samples.iter().map(|(t, _)| t.ln()).collect();
    let ys: Vec<f64> = samples.iter().map(|(_, v)| v.ln()).collect();
    let xm = compensated_sum(xs.iter().copied()) / n;
    let ym = compensated_sum(ys.iter().copied()) / n;
    let sxy = compensated_sum(xs.iter().zip(&ys).map(|(x, y)| (x - xm) * (y - ym)));
    let sxx = compensated_sum(xs.iter().map(|x| (x - xm).powi(2)));
    let slope = sxy / sxx;
    let intercept = ym - slope * xm;
    let constant = intercept.exp();
    let residual = samples
        .iter()
        .map(|&(t, v)| ((constant * t.powf(slope) - v) / v).abs())
        .fold(0.0, f64::max);
    Ok(FitResult {
        exponent: slope,
        constant,
        residual,
        window: (t0, t1),
    })
}

/// Envelope `K = max value·t^α` on the window. The residual is the fraction
/// of samples within 5% of `K`.
pub fn bound_check(series: &[(f64, f64)], alpha: f64, window: (f64, f64)) -> Result<FitResult> {
    let samples = window_samples(series, window.0, window.1)?;
    let weighted: Vec<f64> = samples.iter().map(|&(t, v)| v * t.powf(alpha)).collect();
    let k = weighted.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let tight = weighted.iter().filter(|&&w| w >= 0.95 * k).count();
    Ok(FitResult {
        exponent: -alpha,
        constant: k,
        residual: tight as f64 / weighted.len() as f64,
        window,
    })
}

/// Time-weighted series `(t, t^a ‖field‖_p)` over the records with `t > 0`.
pub fn weighted_series(history: &SimHistory, field: NormField, p: f64) -> Result<Vec<(f64, f64)>> {
    if history.records.is_empty() {
        return Err(Error::EmptyHistory);
    }
    let norms = history.norm_series(field, p).ok_or_else(|| {
        Error::Fit(format!(
            "norm of {field} with p = {p} is neither recorded nor tracked"
        ))
    })?;
    let a = field.weight_exponent(p);
    Ok(norms
        .into_iter()
        .filter(|&(t, _)| t > 0.0)
        .map(|(t, v)| (t, t.powf(a) * v))
        .collect())
}

/// Similarity norm `sup_t t^a ‖field(t)‖_p` over the recorded times.
pub fn kato_norm(history: &SimHistory, field: NormField, p: f64) -> Result<f64> {
    let series = weighted_series(history, field, p)?;
    if series.is_empty() {
        // only the initial record: the weight is 1 there by convention
        return history
            .norm_series(field, p)
            .and_then(|s| s.first().map(|&(_, v)| v))
            .ok_or(Error::EmptyHistory);
    }
    Ok(series.iter().map(|&(_, v)| v).fold(f64::NEG_INFINITY, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrator::TrackedNorm;
    use crate::spectral::Grid;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn grid2(n: usize) -> Grid {
        Grid::new(2, n, 2.0 * PI).unwrap()
    }

    #[test]
    fn compensated_sum_recovers_cancelled_terms() {
        assert_eq!(compensated_sum([1e100, 1.0, -1e100]), 1.0);
        assert_eq!(compensated_sum(std::iter::empty()), 0.0);
    }

    #[test]
    fn lp_examples() {
        let g = grid2(16);
        let one = ScalarField::constant(&g, 1.0);
        assert!((lp_norm(&one, 2.0).unwrap() - 2.0 * PI).abs() < 1e-13);
        assert_eq!(lp_norm(&one, f64::INFINITY).unwrap(), 1.0);
        let s = ScalarField::from_fn(&g, |x| x[0].sin());
        assert!((lp_norm(&s, 2.0).unwrap() - PI * 2f64.sqrt()).abs() < 1e-13);
        assert!(lp_norm(&s, 0.5).is_err());
        assert!((lp_norm(&one, 3.0).unwrap() - (4.0 * PI * PI).powf(1.0 / 3.0)).abs() < 1e-13);
    }

    #[test]
    fn mass_examples() {
        let g = Grid::new(3, 8, 2.0).unwrap();
        assert!((total_mass(&ScalarField::constant(&g, 3.0)) - 24.0).abs() < 1e-13);
        let g = grid2(16);
        assert!(total_mass(&ScalarField::from_fn(&g, |x| x[0].sin())).abs() < 1e-14);

        let g = Grid::new(2, 64, 20.0).unwrap();
        let w: f64 = 1.0;
        let bump = ScalarField::from_fn(&g, |x| {
            let r2 = (x[0] - 10.0).powi(2) + (x[1] - 10.0).powi(2);
            (-r2 / (2.0 * w * w)).exp() / (2.0 * PI * w * w)
        });
        assert!((total_mass(&bump) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn entropy_examples() {
        let g = grid2(8);
        assert_eq!(entropy(&ScalarField::constant(&g, 1.0)), 0.0);
        let euler = ScalarField::constant(&g, std::f64::consts::E);
        assert!((entropy(&euler) - std::f64::consts::E * g.volume()).abs() < 1e-12);
        assert_eq!(entropy(&ScalarField::zeros(&g)), 0.0);
    }

    #[test]
    fn sobolev_examples() {
        let g = grid2(16);
        assert_eq!(sobolev_norm(&ScalarField::zeros(&g), 2).unwrap(), 0.0);
        let f = ScalarField::from_fn(&g, |x| 0.3 + x[0].sin() - 0.5 * (x[1] * 3.0).cos());
        let l2 = lp_norm(&f, 2.0).unwrap();
        assert!((sobolev_norm(&f, 0).unwrap() - l2).abs() < 1e-12 * l2);
        let s = ScalarField::from_fn(&g, |x| x[0].sin());
        assert!((sobolev_norm(&s, 1).unwrap() - 2.0 * PI).abs() < 1e-12);
        assert!(sobolev_norm(&s, 4).is_err());
    }

    #[test]
    fn weighted_moment_examples() {
        let g = grid2(16);
        assert_eq!(weighted_moment(&ScalarField::zeros(&g), 2).unwrap(), 0.0);
        let one = ScalarField::constant(&g, 1.0);
        let mut direct = 0.0;
        for i in 0..g.len() {
            let x = g.coordinates(i);
            let r = ((x[0] - PI).powi(2) + (x[1] - PI).powi(2)).sqrt();
            direct += (1.0 + r * r) * g.cell_volume();
        }
        let got = weighted_moment(&one, 2).unwrap();
        assert!((got - direct).abs() < 1e-12 * direct);

        let g = Grid::new(2, 32, 12.0).unwrap();
        let f = ScalarField::from_fn(&g, |x| 1.0 + 0.3 * (2.0 * PI * x[0] / 12.0).cos());
        let m1 = weighted_moment(&f, 1).unwrap();
        let m2 = weighted_moment(&f, 2).unwrap();
        let m3 = weighted_moment(&f, 3).unwrap();
        assert!(m1 <= m2 && m2 <= m3);
        assert!(weighted_moment(&f, 0).is_err());
    }

    #[test]
    fn decay_fit_examples() {
        let series: Vec<(f64, f64)> = (1..=20)
            .map(|i| {
                let t = i as f64 * 0.5;
                (t, 5.0 * t.powf(-0.75))
            })
            .collect();
        let fit = decay_fit(&series, 1.0, 10.0).unwrap();
        assert!((fit.exponent + 0.75).abs() < 1e-12);
        assert!((fit.constant - 5.0).abs() < 1e-11);
        assert!(fit.residual < 1e-12);

        let flat: Vec<(f64, f64)> = (1..=10).map(|i| (i as f64, 3.0)).collect();
        assert!(decay_fit(&flat, 1.0, 10.0).unwrap().exponent.abs() < 1e-14);
        assert!(decay_fit(&flat, 1.0, 5.0).is_err());
        let mut bad = flat.clone();
        bad[3].1 = 0.0;
        assert!(decay_fit(&bad, 1.0, 10.0).is_err());
    }

    #[test]
    fn bound_check_examples() {
        let series: Vec<(f64, f64)> = (1..=16).map(|i| (i as f64, 1.0 / i as f64)).collect();
        let fit = bound_check(&series, 1.0, (1.0, 16.0)).unwrap();
        assert!((fit.constant - 1.0).abs() < 1e-15);
        assert_eq!(fit.residual, 1.0);
        let fit = bound_check(&series, 0.5, (1.0, 16.0)).unwrap();
        assert!((fit.constant - 1.0).abs() < 1e-15);
        let fit = bound_check(&series, 0.5, (2.0, 16.0)).unwrap();
        assert!((fit.constant - 2f64.powf(-0.5)).abs() < 1e-15);
    }

    fn synthetic_history(field: NormField, p: f64, times: &[f64], value: impl Fn(f64) -> f64) -> SimHistory {
        let g = grid2(8);
        let state = State::single(ScalarField::zeros(&g));
        let mut history = SimHistory::empty(state);
        history.tracked.push(TrackedNorm {
            field,
            p,
            values: times.iter().map(|&t| value(t)).collect(),
        });
        for &t in times {
            let mut rec = DiagnosticRecord::from_state(&history.final_state);
            rec.t = t;
            history.records.push(rec);
        }
        history
    }

    #[test]
    fn kato_norm_examples() {
        let times: Vec<f64> = (0..=10).map(|i| i as f64).collect();
        for &p in &[1.5, 2.0, 3.0, 7.0] {
            let h = synthetic_history(NormField::S, p, &times, |t| 2.5 * t.powf(-(1.0 - 1.0 / p)));
            assert!((kato_norm(&h, NormField::S, p).unwrap() - 2.5).abs() < 1e-13);
        }
        let h = synthetic_history(NormField::GradC, 4.0, &times, |t| t.powf(-0.25));
        assert!((kato_norm(&h, NormField::GradC, 4.0).unwrap() - 1.0).abs() < 1e-13);

        let h = synthetic_history(NormField::Omega, 1.5, &[1.0], |_| 0.7);
        assert_eq!(kato_norm(&h, NormField::Omega, 1.5).unwrap(), 0.7);
        assert!(kato_norm(&h, NormField::E, 1.5).is_err());

        let g = grid2(8);
        let empty = SimHistory::empty(State::single(ScalarField::zeros(&g)));
        assert!(matches!(kato_norm(&empty, NormField::S, 2.0), Err(Error::EmptyHistory)));
    }

    fn random_field(g: &Grid, coeffs: &[f64]) -> ScalarField {
        ScalarField::from_fn(g, |x| {
            coeffs
                .chunks(3)
                .enumerate()
                .map(|(i, c)| {
                    let k = (i % 3 + 1) as f64;
                    c[0] * (k * x[0] + c[2]).cos() + c[1] * ((i + 1) as f64 * x[1] - c[2]).sin()
                })
                .sum::<f64>()
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn parseval_matches_l2(coeffs in proptest::collection::vec(-1.0f64..1.0, 9)) {
            let g = grid2(16);
            let f = random_field(&g, &coeffs);
            let l2 = lp_norm(&f, 2.0).unwrap();
            let s0 = sobolev_norm(&f, 0).unwrap();
            prop_assert!((l2 * l2 - s0 * s0).abs() <= 1e-11 * (1.0 + l2 * l2));
        }

        #[test]
        fn mass_is_linear_and_shift_invariant(
            a in proptest::collection::vec(-1.0f64..1.0, 9),
            b in proptest::collection::vec(-1.0f64..1.0, 9),
            alpha in -3.0f64..3.0,
            cells in 0isize..16,
        ) {
            let g = grid2(16);
            let (f, h) = (random_field(&g, &a).map(|v| v + 0.5), random_field(&g, &b));
            let combo = f.zip_map(&h, |x, y| x + alpha * y);
            let expect = total_mass(&f) + alpha * total_mass(&h);
            prop_assert!((total_mass(&combo) - expect).abs() <= 1e-12 * (1.0 + expect.abs()) + 1e-12);
            prop_assert!((total_mass(&f.shifted(0, cells)) - total_mass(&f)).abs() <= 1e-12);
        }

        #[test]
        fn entropy_obeys_jensen(coeffs in proptest::collection::vec(-1.0f64..1.0, 9)) {
            let g = grid2(16);
            let raw = random_field(&g, &coeffs);
            let shift = raw.min().abs() + 0.1;
            let s = raw.map(|v| v + shift);
            let m = total_mass(&s);
            prop_assert!(entropy(&s) >= m * (m / g.volume()).ln() - 1e-12 * m.abs());
        }

        #[test]
        fn fit_recovers_power_laws(alpha in -2.0f64..1.0, k in 0.1f64..10.0) {
            let series: Vec<(f64, f64)> = (1..=30).map(|i| {
                let t = 0.3 * i as f64;
                (t, k * t.powf(alpha))
            }).collect();
            let fit = decay_fit(&series, 0.3, 9.0).unwrap();
            prop_assert!((fit.exponent - alpha).abs() < 1e-10);
            prop_assert!((fit.constant - k).abs() < 1e-9 * k);
        }
    }
}
