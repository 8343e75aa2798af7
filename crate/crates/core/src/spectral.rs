//! Periodic-domain spectral calculus.
//!
//! The simulation domain is the torus `[0, L)^d`, sampled on `N` points per
//! axis (`d` = 2 or 3). Real fields are stored row-major with the last axis
//! fastest. Spectra use the real-to-complex half layout: all axes carry `N`
//! complex entries except the last, which carries `N/2 + 1`.
//!
//! # Transform normalization
//!
//! The forward transform is the unnormalized DFT
//! `f̂_k = Σ_x f(x) e^{-i k·x}` and the inverse carries the `1/N^d` factor, so
//! the Fourier-series coefficient of mode `k` is `c_k = f̂_k / N^d` and
//!
//! ```text
//! Σ_x f(x)² h^d  =  V Σ_k |c_k|²        (V = L^d, sum over the full spectrum)
//! ```
//!
//! Modes with `0 < j < N/2` on the last axis stand for themselves and their
//! conjugate partner, so they enter full-spectrum sums with weight 2 (see
//! [`Grid::hermitian_weight`]).
//!
//! Odd derivatives zero the Nyquist mode of the differentiated axis; every
//! operator here keeps Hermitian symmetry, so inverse transforms are real.

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// Complex spectral coefficients in the half layout of a [`Grid`].
pub type Spectrum = Vec<Complex64>;

const I: Complex64 = Complex64::new(0.0, 1.0);

/// Uniform periodic grid with cached FFT plans and wavenumber tables.
///
/// Cloning is cheap: all tables live behind an `Arc`.
#[derive(Clone)]
pub struct Grid {
    inner: Arc<GridInner>,
}

struct GridInner {
    dim: usize,
    n: usize,
    length: f64,
    /// Signed wavenumbers of a full axis, `2π/L · (j or j - N)`.
    axis_k: Vec<f64>,
    /// Per spectral entry: `|k|²` including Nyquist components.
    k2: Vec<f64>,
    /// Per axis, per spectral entry: derivative wavenumber (Nyquist zeroed).
    kd: Vec<Vec<f64>>,
    /// Per spectral entry: `|kd|²`.
    kd2: Vec<f64>,
    /// 2/3-rule mask.
    keep: Vec<bool>,
    /// Multiplicity of each stored mode in the full Hermitian spectrum.
    weight: Vec<f64>,
    r2c: Arc<dyn RealToComplex<f64>>,
    c2r: Arc<dyn ComplexToReal<f64>>,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Grid")
            .field("dim", &self.inner.dim)
            .field("n", &self.inner.n)
            .field("length", &self.inner.length)
            .finish()
    }
}

impl PartialEq for Grid {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.inner, &other.inner)
            || (self.inner.dim == other.inner.dim
                && self.inner.n == other.inner.n
                && self.inner.length == other.inner.length)
    }
}

/// Signed integer mode of index `j` on a full axis of `n` points.
fn signed_mode(j: usize, n: usize) -> i64 {
    if j <= n / 2 {
        j as i64
    } else {
        j as i64 - n as i64
    }
}

impl Grid {
    pub fn new(dim: usize, n: usize, length: f64) -> Result<Grid> {
        if dim != 2 && dim != 3 {
            return Err(Error::InvalidGrid(format!("dimension must be 2 or 3, got {dim}")));
        }
        if n < 8 || n % 2 != 0 {
            return Err(Error::InvalidGrid(format!(
                "points per axis must be even and at least 8, got {n}"
            )));
        }
        if !(length.is_finite() && length > 0.0) {
            return Err(Error::InvalidGrid(format!("axis length must be positive, got {length}")));
        }

        let half = n / 2 + 1;
        let unit = 2.0 * std::f64::consts::PI / length;
        let axis_k: Vec<f64> = (0..n).map(|j| unit * signed_mode(j, n) as f64).collect();
        let spec_len = n.pow(dim as u32 - 1) * half;

        let mut k2 = Vec::with_capacity(spec_len);
        let mut kd = vec![Vec::with_capacity(spec_len); dim];
        let mut kd2 = Vec::with_capacity(spec_len);
        let mut keep = Vec::with_capacity(spec_len);
        let mut weight = Vec::with_capacity(spec_len);
        let mut modes = vec![0i64; dim];
        for idx in 0..spec_len {
            let mut rest = idx;
            let last = rest % half;
            rest /= half;
            modes[dim - 1] = last as i64;
            for a in (0..dim - 1).rev() {
                modes[a] = signed_mode(rest % n, n);
                rest /= n;
            }
            let mut sum2 = 0.0;
            let mut sumd2 = 0.0;
            let mut inside = true;
            for (a, &m) in modes.iter().enumerate() {
                let k = unit * m as f64;
                sum2 += k * k;
                let d = if m.unsigned_abs() as usize == n / 2 { 0.0 } else { k };
                kd[a].push(d);
                sumd2 += d * d;
                if 3 * m.unsigned_abs() as usize > n {
                    inside = false;
                }
            }
            k2.push(sum2);
            kd2.push(sumd2);
            keep.push(inside);
            weight.push(if last == 0 || last == n / 2 { 1.0 } else { 2.0 });
        }

        let mut real_planner = RealFftPlanner::<f64>::new();
        let mut planner = FftPlanner::<f64>::new();
        Ok(Grid {
            inner: Arc::new(GridInner {
                dim,
                n,
                length,
                axis_k,
                k2,
                kd,
                kd2,
                keep,
                weight,
                r2c: real_planner.plan_fft_forward(n),
                c2r: real_planner.plan_fft_inverse(n),
                fwd: planner.plan_fft_forward(n),
                inv: planner.plan_fft_inverse(n),
            }),
        })
    }

    pub fn dim(&self) -> usize {
        self.inner.dim
    }

    /// Points per axis.
    pub fn n(&self) -> usize {
        self.inner.n
    }

    /// Axis length `L`.
    pub fn length(&self) -> f64 {
        self.inner.length
    }

    /// Grid spacing `h = L / N`.
    pub fn spacing(&self) -> f64 {
        self.inner.length / self.inner.n as f64
    }

    /// Quadrature weight of every node, `h^d`.
    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.inner.dim as i32)
    }

    /// Domain volume `L^d`.
    pub fn volume(&self) -> f64 {
        self.inner.length.powi(self.inner.dim as i32)
    }

    /// Number of real samples, `N^d`.
    pub fn len(&self) -> usize {
        self.inner.n.pow(self.inner.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Number of stored spectral coefficients.
    pub fn spectral_len(&self) -> usize {
        self.inner.k2.len()
    }

    /// Signed wavenumbers of one axis in FFT order.
    pub fn axis_wavenumbers(&self) -> &[f64] {
        &self.inner.axis_k
    }

    /// `|k|²` per stored spectral entry.
    pub fn k_squared(&self) -> &[f64] {
        &self.inner.k2
    }

    /// Derivative wavenumbers of `axis` per stored spectral entry (Nyquist zeroed).
    pub fn derivative_wavenumbers(&self, axis: usize) -> &[f64] {
        &self.inner.kd[axis]
    }

    /// Multiplicity (1 or 2) of each stored mode in the full spectrum.
    pub fn hermitian_weight(&self) -> &[f64] {
        &self.inner.weight
    }

    /// 2/3-rule mask per stored spectral entry.
    pub fn dealias_mask(&self) -> &[bool] {
        &self.inner.keep
    }

    /// Per-axis integer indices of a flat sample index.
    pub fn unravel(&self, index: usize) -> [usize; 3] {
        let n = self.inner.n;
        let mut out = [0usize; 3];
        let mut rest = index;
        for a in (0..self.inner.dim).rev() {
            out[a] = rest % n;
            rest /= n;
        }
        out
    }

    /// Physical coordinates of a flat sample index (unused axes are zero).
    pub fn coordinates(&self, index: usize) -> [f64; 3] {
        let h = self.spacing();
        let idx = self.unravel(index);
        let mut x = [0.0; 3];
        for a in 0..self.inner.dim {
            x[a] = idx[a] as f64 * h;
        }
        x
    }

    /// Forward real-to-complex transform (unnormalized).
    pub fn forward(&self, real: &[f64]) -> Spectrum {
        assert_eq!(real.len(), self.len(), "sample count does not match grid");
        let n = self.inner.n;
        let half = n / 2 + 1;
        let r2c = &self.inner.r2c;
        let mut out = vec![Complex64::default(); self.spectral_len()];
        out.par_chunks_mut(half)
            .zip(real.par_chunks(n))
            .for_each_init(
                || (vec![0.0; n], r2c.make_scratch_vec()),
                |(buf, scratch), (dst, src)| {
                    buf.copy_from_slice(src);
                    r2c.process_with_scratch(buf, dst, scratch)
                        .expect("buffer lengths match the plan");
                },
            );
        self.complex_passes(&mut out, &self.inner.fwd);
        out
    }

    /// Inverse complex-to-real transform, including the `1/N^d` factor.
    pub fn inverse(&self, spectrum: &[Complex64]) -> Vec<f64> {
        assert_eq!(spectrum.len(), self.spectral_len(), "spectrum length does not match grid");
        let n = self.inner.n;
        let half = n / 2 + 1;
        let mut work = spectrum.to_vec();
        self.complex_passes(&mut work, &self.inner.inv);
        let scale = 1.0 / self.len() as f64;
        let c2r = &self.inner.c2r;
        let mut out = vec![0.0; self.len()];
        out.par_chunks_mut(n)
            .zip(work.par_chunks_mut(half))
            .for_each_init(
                || c2r.make_scratch_vec(),
                |scratch, (dst, src)| {
                    // DC and Nyquist bins of a real row are real.
                    src[0].im = 0.0;
                    src[half - 1].im = 0.0;
                    c2r.process_with_scratch(src, dst, scratch)
                        .expect("buffer lengths match the plan");
                    for v in dst.iter_mut() {
                        *v *= scale;
                    }
                },
            );
        out
    }

    /// Complex FFT along every axis except the last.
    fn complex_passes(&self, data: &mut [Complex64], fft: &Arc<dyn Fft<f64>>) {
        let n = self.inner.n;
        let half = n / 2 + 1;
        let dim = self.inner.dim;
        for axis in 0..dim - 1 {
            let stride = n.pow((dim - 2 - axis) as u32) * half;
            let block = n * stride;
            data.par_chunks_mut(block).for_each_init(
                || {
                    (
                        vec![Complex64::default(); block],
                        vec![Complex64::default(); fft.get_inplace_scratch_len()],
                    )
                },
                |(lines, scratch), chunk| {
                    for i in 0..n {
                        for m in 0..stride {
                            lines[m * n + i] = chunk[i * stride + m];
                        }
                    }
                    fft.process_with_scratch(lines, scratch);
                    for i in 0..n {
                        for m in 0..stride {
                            chunk[i * stride + m] = lines[m * n + i];
                        }
                    }
                },
            );
        }
    }

    /// Multiplies by `i·k_axis` (Nyquist zeroed).
    pub fn derivative_spectrum(&self, spectrum: &[Complex64], axis: usize) -> Spectrum {
        spectrum
            .iter()
            .zip(&self.inner.kd[axis])
            .map(|(c, &k)| I * k * c)
            .collect()
    }

    /// `Σ_a i k_a F̂_a` for a list of component spectra.
    pub fn divergence_spectrum(&self, components: &[Spectrum]) -> Spectrum {
        let mut out = vec![Complex64::default(); self.spectral_len()];
        for (axis, comp) in components.iter().enumerate() {
            for ((o, c), &k) in out.iter_mut().zip(comp).zip(&self.inner.kd[axis]) {
                *o += I * k * c;
            }
        }
        out
    }

    /// Multiplier `-1/|k|²`, zero mode gauged to zero.
    pub fn inv_laplacian_spectrum(&self, spectrum: &[Complex64]) -> Spectrum {
        spectrum
            .iter()
            .zip(&self.inner.k2)
            .map(|(c, &k2)| if k2 > 0.0 { -c / k2 } else { Complex64::default() })
            .collect()
    }

    /// Zeroes every mode outside the 2/3-rule band, in place.
    pub fn dealias_in_place(&self, spectrum: &mut [Complex64]) {
        for (c, &keep) in spectrum.iter_mut().zip(&self.inner.keep) {
            if !keep {
                *c = Complex64::default();
            }
        }
    }

    /// Leray projection `v̂ - kd (kd·v̂)/|kd|²` of component spectra, in place.
    pub fn project_in_place(&self, components: &mut [Spectrum]) {
        let dim = self.inner.dim;
        for idx in 0..self.spectral_len() {
            let kd2 = self.inner.kd2[idx];
            if kd2 == 0.0 {
                continue;
            }
            let mut dot = Complex64::default();
            for a in 0..dim {
                dot += components[a][idx] * self.inner.kd[a][idx];
            }
            let dot = dot / kd2;
            for a in 0..dim {
                let k = self.inner.kd[a][idx];
                components[a][idx] -= dot * k;
            }
        }
    }

    /// Full-spectrum sum `Σ_k w(k) |f̂_k|²` with the Hermitian multiplicity.
    pub fn spectral_energy(&self, spectrum: &[Complex64]) -> f64 {
        spectrum
            .iter()
            .zip(&self.inner.weight)
            .map(|(c, &w)| w * c.norm_sqr())
            .sum()
    }
}

/// Real samples of a scalar quantity on a [`Grid`].
#[derive(Clone, Debug)]
pub struct ScalarField {
    grid: Grid,
    values: Vec<f64>,
}

impl PartialEq for ScalarField {
    fn eq(&self, other: &Self) -> bool {
        self.grid == other.grid && self.values == other.values
    }
}

impl ScalarField {
    /// Wraps samples, rejecting wrong lengths and non-finite values.
    pub fn new(grid: &Grid, values: Vec<f64>) -> Result<ScalarField> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "expected {} samples, got {}",
                grid.len(),
                values.len()
            )));
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(ScalarField {
            grid: grid.clone(),
            values,
        })
    }

    pub(crate) fn from_raw(grid: &Grid, values: Vec<f64>) -> ScalarField {
        debug_assert_eq!(values.len(), grid.len());
        ScalarField {
            grid: grid.clone(),
            values,
        }
    }

    pub fn zeros(grid: &Grid) -> ScalarField {
        Self::constant(grid, 0.0)
    }

    pub fn constant(grid: &Grid, value: f64) -> ScalarField {
        assert!(value.is_finite(), "constant field value must be finite");
        Self::from_raw(grid, vec![value; grid.len()])
    }

    /// Samples `f` at every node. Panics if `f` returns a non-finite value.
    pub fn from_fn(grid: &Grid, f: impl Fn(&[f64]) -> f64) -> ScalarField {
        let dim = grid.dim();
        let values: Vec<f64> = (0..grid.len())
            .map(|i| {
                let x = grid.coordinates(i);
                let v = f(&x[..dim]);
                assert!(v.is_finite(), "sampled function returned {v} at {:?}", &x[..dim]);
                v
            })
            .collect();
        Self::from_raw(grid, values)
    }

    /// Inverse-transforms a spectrum.
    pub fn from_spectrum(grid: &Grid, spectrum: &[Complex64]) -> ScalarField {
        Self::from_raw(grid, grid.inverse(spectrum))
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn spectrum(&self) -> Spectrum {
        self.grid.forward(&self.values)
    }

    pub fn mean(&self) -> f64 {
        crate::diagnostics::compensated_sum(self.values.iter().copied()) / self.values.len() as f64
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ScalarField {
        Self::from_raw(&self.grid, self.values.iter().map(|&v| f(v)).collect())
    }

    /// Pointwise combination with another field on the same grid.
    pub fn zip_map(&self, other: &ScalarField, f: impl Fn(f64, f64) -> f64) -> ScalarField {
        assert!(self.grid == other.grid, "fields live on different grids");
        Self::from_raw(
            &self.grid,
            self.values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        )
    }

    pub fn scaled(&self, factor: f64) -> ScalarField {
        self.map(|v| v * factor)
    }

    /// `‖self - other‖∞`.
    pub fn max_abs_diff(&self, other: &ScalarField) -> f64 {
        assert!(self.grid == other.grid, "fields live on different grids");
        self.values
            .iter()
            .zip(&other.values)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    /// Periodic shift by `cells` grid cells along `axis`: `out(x) = f(x - cells·h)`.
    pub fn shifted(&self, axis: usize, cells: isize) -> ScalarField {
        let n = self.grid.n();
        let dim = self.grid.dim();
        let stride = n.pow((dim - 1 - axis) as u32);
        let shift = cells.rem_euclid(n as isize) as usize;
        let mut out = vec![0.0; self.values.len()];
        for (i, v) in self.values.iter().enumerate() {
            let along = (i / stride) % n;
            let moved = (along + shift) % n;
            out[i + moved * stride - along * stride] = *v;
        }
        Self::from_raw(&self.grid, out)
    }
}

/// `d` scalar components on one grid.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorField {
    grid: Grid,
    components: Vec<ScalarField>,
}

impl VectorField {
    pub fn new(components: Vec<ScalarField>) -> Result<VectorField> {
        let grid = components
            .first()
            .map(|c| c.grid().clone())
            .ok_or_else(|| Error::GridMismatch("vector field needs components".into()))?;
        if components.len() != grid.dim() {
            return Err(Error::GridMismatch(format!(
                "expected {} components, got {}",
                grid.dim(),
                components.len()
            )));
        }
        if components.iter().any(|c| *c.grid() != grid) {
            return Err(Error::GridMismatch("components live on different grids".into()));
        }
        Ok(VectorField { grid, components })
    }

    pub fn zeros(grid: &Grid) -> VectorField {
        VectorField {
            grid: grid.clone(),
            components: (0..grid.dim()).map(|_| ScalarField::zeros(grid)).collect(),
        }
    }

    /// Samples a vector-valued function; `f` returns a length-3 array of which
    /// the first `d` entries are used.
    pub fn from_fn(grid: &Grid, f: impl Fn(&[f64]) -> [f64; 3]) -> VectorField {
        let components = (0..grid.dim())
            .map(|a| ScalarField::from_fn(grid, |x| f(x)[a]))
            .collect();
        VectorField {
            grid: grid.clone(),
            components,
        }
    }

    pub(crate) fn from_spectra(grid: &Grid, spectra: &[Spectrum]) -> VectorField {
        VectorField {
            grid: grid.clone(),
            components: spectra
                .iter()
                .map(|s| ScalarField::from_spectrum(grid, s))
                .collect(),
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn components(&self) -> &[ScalarField] {
        &self.components
    }

    pub fn component(&self, axis: usize) -> &ScalarField {
        &self.components[axis]
    }

    pub fn into_components(self) -> Vec<ScalarField> {
        self.components
    }

    /// Largest pointwise Euclidean magnitude.
    pub fn max_magnitude(&self) -> f64 {
        let mut best = 0.0f64;
        for i in 0..self.grid.len() {
            let m2: f64 = self.components.iter().map(|c| c.values[i] * c.values[i]).sum();
            best = best.max(m2);
        }
        best.sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.components.iter().fold(0.0, |m, c| m.max(c.max_abs()))
    }

    pub fn max_abs_diff(&self, other: &VectorField) -> f64 {
        self.components
            .iter()
            .zip(&other.components)
            .fold(0.0, |m, (a, b)| m.max(a.max_abs_diff(b)))
    }

    pub fn scaled(&self, factor: f64) -> VectorField {
        VectorField {
            grid: self.grid.clone(),
            components: self.components.iter().map(|c| c.scaled(factor)).collect(),
        }
    }

    pub fn shifted(&self, axis: usize, cells: isize) -> VectorField {
        VectorField {
            grid: self.grid.clone(),
            components: self.components.iter().map(|c| c.shifted(axis, cells)).collect(),
        }
    }

    pub(crate) fn spectra(&self) -> Vec<Spectrum> {
        self.components.iter().map(|c| c.spectrum()).collect()
    }
}

/// Spectral gradient; exact for resolved trigonometric modes.
pub fn gradient(f: &ScalarField) -> VectorField {
    let grid = f.grid();
    let spec = f.spectrum();
    let spectra: Vec<Spectrum> = (0..grid.dim())
        .map(|a| grid.derivative_spectrum(&spec, a))
        .collect();
    VectorField::from_spectra(grid, &spectra)
}

/// Spectral divergence.
pub fn divergence(v: &VectorField) -> ScalarField {
    let grid = v.grid();
    ScalarField::from_spectrum(grid, &grid.divergence_spectrum(&v.spectra()))
}

/// Spectral Laplacian, multiplier `-|k|²`.
pub fn laplacian(f: &ScalarField) -> ScalarField {
    let grid = f.grid();
    let spec: Spectrum = f
        .spectrum()
        .iter()
        .zip(grid.k_squared())
        .map(|(c, &k2)| -c * k2)
        .collect();
    ScalarField::from_spectrum(grid, &spec)
}

/// Inverse Laplacian with the zero mode of the result set to zero.
pub fn inv_laplacian(f: &ScalarField) -> ScalarField {
    let grid = f.grid();
    ScalarField::from_spectrum(grid, &grid.inv_laplacian_spectrum(&f.spectrum()))
}

/// 2/3-rule truncation.
pub fn dealias(f: &ScalarField) -> ScalarField {
    let grid = f.grid();
    let mut spec = f.spectrum();
    grid.dealias_in_place(&mut spec);
    ScalarField::from_spectrum(grid, &spec)
}

/// Leray projection onto divergence-free fields; the mean flow is kept.
pub fn leray_project(v: &VectorField) -> VectorField {
    let grid = v.grid();
    let mut spectra = v.spectra();
    grid.project_in_place(&mut spectra);
    VectorField::from_spectra(grid, &spectra)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn grid2(n: usize) -> Grid {
        Grid::new(2, n, 2.0 * PI).unwrap()
    }

    fn close(a: &ScalarField, b: &ScalarField, tol: f64) {
        let d = a.max_abs_diff(b);
        assert!(d <= tol, "max deviation {d:e} > {tol:e}");
    }

    #[test]
    fn grid_validation() {
        assert!(Grid::new(1, 16, 1.0).is_err());
        assert!(Grid::new(2, 7, 1.0).is_err());
        assert!(Grid::new(2, 6, 1.0).is_err());
        assert!(Grid::new(2, 16, 0.0).is_err());
        assert!(Grid::new(3, 8, 1.0).is_ok());
    }

    #[test]
    fn wavenumber_table() {
        let g = Grid::new(2, 16, 4.0).unwrap();
        let k = g.axis_wavenumbers();
        assert_eq!(k.iter().filter(|&&v| v == 0.0).count(), 1);
        let kmax = k.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!((kmax - 8.0 * 2.0 * PI / 4.0).abs() < 1e-12);
        assert!((g.cell_volume() - 0.25f64.powi(2)).abs() < 1e-15);
    }

    #[test]
    fn transform_round_trip() {
        for (dim, n) in [(2, 16), (3, 8)] {
            let g = Grid::new(dim, n, 3.0).unwrap();
            let f = ScalarField::from_fn(&g, |x| (x[0] * 1.7).sin() + x[dim - 1].powi(2));
            let back = ScalarField::from_spectrum(&g, &f.spectrum());
            close(&back, &f, 1e-12);
        }
    }

    #[test]
    fn gradient_examples() {
        let g = grid2(32);
        let grad = gradient(&ScalarField::from_fn(&g, |x| x[0].sin()));
        close(grad.component(0), &ScalarField::from_fn(&g, |x| x[0].cos()), 1e-13);
        close(grad.component(1), &ScalarField::zeros(&g), 1e-13);

        let grad = gradient(&ScalarField::constant(&g, 3.5));
        assert!(grad.max_abs() < 1e-14);

        let f = ScalarField::from_fn(&g, |x| (2.0 * x[0]).sin() * (3.0 * x[1]).cos());
        let grad = gradient(&f);
        close(
            grad.component(0),
            &ScalarField::from_fn(&g, |x| 2.0 * (2.0 * x[0]).cos() * (3.0 * x[1]).cos()),
            1e-12,
        );
        close(
            grad.component(1),
            &ScalarField::from_fn(&g, |x| -3.0 * (2.0 * x[0]).sin() * (3.0 * x[1]).sin()),
            1e-12,
        );
    }

    #[test]
    fn nyquist_derivative_is_zero() {
        let g = grid2(16);
        // cos(8 x) sampled at x_j = j·2π/16 is (-1)^j: the Nyquist mode.
        let f = ScalarField::from_fn(&g, |x| (8.0 * x[0]).cos());
        assert!(gradient(&f).max_abs() < 1e-12);
        assert!(dealias(&f).max_abs() < 1e-12);
    }

    #[test]
    fn laplacian_examples() {
        let g = grid2(32);
        close(
            &laplacian(&ScalarField::from_fn(&g, |x| x[0].cos())),
            &ScalarField::from_fn(&g, |x| -x[0].cos()),
            1e-13,
        );
        assert!(laplacian(&ScalarField::constant(&g, 2.0)).max_abs() < 1e-13);
        close(
            &laplacian(&ScalarField::from_fn(&g, |x| (2.0 * x[0]).sin())),
            &ScalarField::from_fn(&g, |x| -4.0 * (2.0 * x[0]).sin()),
            1e-12,
        );
    }

    #[test]
    fn inv_laplacian_examples() {
        let g = grid2(32);
        close(
            &inv_laplacian(&ScalarField::from_fn(&g, |x| x[0].cos())),
            &ScalarField::from_fn(&g, |x| -x[0].cos()),
            1e-13,
        );
        assert!(inv_laplacian(&ScalarField::constant(&g, 7.0)).max_abs() < 1e-14);
        close(
            &inv_laplacian(&ScalarField::from_fn(&g, |x| (2.0 * x[0]).sin())),
            &ScalarField::from_fn(&g, |x| -(2.0 * x[0]).sin() / 4.0),
            1e-13,
        );
    }

    #[test]
    fn dealias_examples() {
        let g = grid2(24);
        // |k| = 8 = N/3 is kept.
        let f = ScalarField::from_fn(&g, |x| (8.0 * x[0]).cos() + (3.0 * x[1]).sin() + 1.0);
        close(&dealias(&f), &f, 1e-13);
        let f = ScalarField::from_fn(&g, |x| (12.0 * x[1]).cos());
        assert!(dealias(&f).max_abs() < 1e-13);
        let f = ScalarField::from_fn(&g, |x| (9.0 * x[1]).cos());
        assert!(dealias(&f).max_abs() < 1e-13);
    }

    #[test]
    fn leray_examples() {
        let g = grid2(32);
        let v = VectorField::from_fn(&g, |x| [x[0].sin(), 0.0, 0.0]);
        assert!(leray_project(&v).max_abs() < 1e-14);

        let tg = VectorField::from_fn(&g, |x| {
            [-x[0].sin() * x[1].cos(), x[0].cos() * x[1].sin(), 0.0]
        });
        assert!(leray_project(&tg).max_abs_diff(&tg) < 1e-14);

        let mean = VectorField::from_fn(&g, |_| [0.3, -1.2, 0.0]);
        assert!(leray_project(&mean).max_abs_diff(&mean) < 1e-14);
    }

    #[test]
    fn shift_moves_samples() {
        let g = Grid::new(3, 8, 1.0).unwrap();
        let f = ScalarField::from_fn(&g, |x| x[0] + 10.0 * x[1] + 100.0 * x[2]);
        let s = f.shifted(1, 1);
        let h = g.spacing();
        let expect = ScalarField::from_fn(&g, |x| {
            let y = (x[1] - h).rem_euclid(1.0);
            x[0] + 10.0 * y + 100.0 * x[2]
        });
        close(&s, &expect, 1e-12);
        assert_eq!(s.shifted(1, -1), f);
    }

    #[test]
    fn parseval_with_documented_normalization() {
        let g = Grid::new(3, 8, 2.5).unwrap();
        let f = ScalarField::from_fn(&g, |x| {
            1.0 + (x[0] * 2.5).sin() * (x[2] * 5.0).cos() + 0.3 * x[1].cos()
        });
        let physical: f64 = f.values().iter().map(|v| v * v).sum::<f64>() * g.cell_volume();
        let nd = g.len() as f64;
        let spectral = g.volume() * g.spectral_energy(&f.spectrum()) / (nd * nd);
        assert!((physical - spectral).abs() <= 1e-12 * physical);
    }
}
