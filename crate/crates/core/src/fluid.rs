//! Fluid dynamics of variant B: 2D Navier–Stokes in vorticity form and 3D
//! Stokes flow, both with unit viscosity.

use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};
use crate::model::{buoyancy_force, PotentialSpec, Tendency, VISCOSITY};
use crate::spectral::{Grid, ScalarField, Spectrum, VectorField};

fn require_dim(grid: &Grid, dim: usize, op: &str) -> Result<()> {
    if grid.dim() != dim {
        return Err(Error::InvalidGrid(format!(
            "{op} needs a {dim}D grid, got {}D",
            grid.dim()
        )));
    }
    Ok(())
}

/// `∂₁a₂ − ∂₂a₁` on spectral components.
pub(crate) fn curl2d_spectrum(grid: &Grid, a1: &[Complex64], a2: &[Complex64]) -> Spectrum {
    let d1 = grid.derivative_spectrum(a2, 0);
    let d2 = grid.derivative_spectrum(a1, 1);
    d1.into_iter().zip(d2).map(|(x, y)| x - y).collect()
}

/// Velocity spectra `(−∂₂ψ, ∂₁ψ)` with `ψ = Δ⁻¹ω`.
pub(crate) fn biot_savart_spectra(grid: &Grid, omega: &[Complex64]) -> [Spectrum; 2] {
    let psi = grid.inv_laplacian_spectrum(omega);
    let u1 = grid
        .derivative_spectrum(&psi, 1)
        .into_iter()
        .map(|c| -c)
        .collect();
    let u2 = grid.derivative_spectrum(&psi, 0);
    [u1, u2]
}

/// Vorticity `ω = ∂₁u₂ − ∂₂u₁` of a 2D velocity.
pub fn curl2d(u: &VectorField) -> Result<ScalarField> {
    let grid = u.grid();
    require_dim(grid, 2, "curl2d")?;
    let spectra = u.spectra();
    Ok(ScalarField::from_spectrum(
        grid,
        &curl2d_spectrum(grid, &spectra[0], &spectra[1]),
    ))
}

/// Mean-free velocity `∇^⊥Δ⁻¹ω` whose curl is `ω − mean(ω)`.
pub fn biot_savart2d(omega: &ScalarField) -> Result<VectorField> {
    let grid = omega.grid();
    require_dim(grid, 2, "biot_savart2d")?;
    Ok(VectorField::from_spectra(
        grid,
        &biot_savart_spectra(grid, &omega.spectrum()),
    ))
}

/// Vorticity tendency `−(u·∇)ω + curl(−(s+e)∇φ)` with `Δω` split off.
pub fn ns2d_rhs(
    omega: &ScalarField,
    s: &ScalarField,
    e: &ScalarField,
    phi: &PotentialSpec,
) -> Result<Tendency> {
    let grid = omega.grid();
    require_dim(grid, 2, "ns2d_rhs")?;
    if s.grid() != grid || e.grid() != grid {
        return Err(Error::GridMismatch("ns2d_rhs inputs".into()));
    }
    let w_hat = omega.spectrum();
    let u: Vec<Vec<f64>> = biot_savart_spectra(grid, &w_hat)
        .iter()
        .map(|sp| grid.inverse(sp))
        .collect();
    let flux: Vec<Spectrum> = u
        .iter()
        .map(|uc| {
            let prod: Vec<f64> = uc.iter().zip(omega.values()).map(|(a, b)| a * b).collect();
            grid.forward(&prod)
        })
        .collect();
    let mut adv = grid.divergence_spectrum(&flux);
    grid.dealias_in_place(&mut adv);

    let force = buoyancy_force(s, e, phi);
    let mut f_hat = force.spectra();
    for f in f_hat.iter_mut() {
        grid.dealias_in_place(f);
    }
    let curl = curl2d_spectrum(grid, &f_hat[0], &f_hat[1]);
    let nonstiff: Spectrum = curl.into_iter().zip(adv).map(|(c, a)| c - a).collect();
    let diffusion: Spectrum = w_hat
        .iter()
        .zip(grid.k_squared())
        .map(|(c, &k2)| -c * (VISCOSITY * k2))
        .collect();
    Ok(Tendency {
        name: "omega",
        nonstiff: ScalarField::from_spectrum(grid, &nonstiff),
        diffusion: ScalarField::from_spectrum(grid, &diffusion),
    })
}

/// Advances `∂ₜu − Δu + ∇p = f` over `dt` with `f` frozen: each mode is
/// updated by the exact semigroup formula and the mean by `dt·mean(Pf)`.
pub fn stokes3d_step(u: &VectorField, force: &VectorField, dt: f64) -> Result<VectorField> {
    let grid = u.grid();
    require_dim(grid, 3, "stokes3d_step")?;
    if force.grid() != grid {
        return Err(Error::GridMismatch("stokes3d_step force".into()));
    }
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::param("dt", format!("must be > 0, got {dt}")));
    }
    let mut f_hat = force.spectra();
    grid.project_in_place(&mut f_hat);
    let mut u_hat = u.spectra();
    grid.project_in_place(&mut u_hat);
    let k2 = grid.k_squared();
    for (uc, fc) in u_hat.iter_mut().zip(&f_hat) {
        for ((uv, fv), &kk) in uc.iter_mut().zip(fc).zip(k2) {
            let z = VISCOSITY * kk * dt;
            if kk == 0.0 {
                *uv += fv * dt;
            } else {
                let decay = (-z).exp();
                *uv = *uv * decay + fv * (-(-z).exp_m1() / (VISCOSITY * kk));
            }
        }
    }
    Ok(VectorField::from_spectra(grid, &u_hat))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diagnostics::total_mass;
    use crate::spectral::{divergence, gradient};
    use std::f64::consts::PI;

    fn grid(dim: usize, n: usize) -> Grid {
        Grid::new(dim, n, 2.0 * PI).unwrap()
    }

    fn taylor_green(g: &Grid) -> VectorField {
        VectorField::from_fn(g, |x| [-x[0].sin() * x[1].cos(), x[0].cos() * x[1].sin(), 0.0])
    }

    fn smooth_vorticity(g: &Grid) -> ScalarField {
        ScalarField::from_fn(g, |x| {
            0.3 + (x[0] + 0.2).sin() * (2.0 * x[1]).cos() - 0.7 * (3.0 * x[0] - x[1]).cos()
                + 0.2 * (x[1] - 1.0).sin()
        })
    }

    #[test]
    fn curl_examples() {
        let g = grid(2, 32);
        assert_eq!(curl2d(&VectorField::zeros(&g)).unwrap().max_abs(), 0.0);
        let w = curl2d(&taylor_green(&g)).unwrap();
        let expect = ScalarField::from_fn(&g, |x| -2.0 * x[0].sin() * x[1].sin());
        assert!(w.max_abs_diff(&expect) < 1e-13);
        let psi = ScalarField::from_fn(&g, |x| (x[0] + 2.0 * x[1]).sin() * x[0].cos());
        assert!(curl2d(&gradient(&psi)).unwrap().max_abs() < 1e-12);
        assert!(curl2d(&VectorField::zeros(&grid(3, 8))).is_err());
    }

    #[test]
    fn biot_savart_examples() {
        let g = grid(2, 32);
        assert_eq!(biot_savart2d(&ScalarField::zeros(&g)).unwrap().max_abs(), 0.0);
        let w = ScalarField::from_fn(&g, |x| -2.0 * x[0].sin() * x[1].sin());
        let u = biot_savart2d(&w).unwrap();
        assert!(u.max_abs_diff(&taylor_green(&g)) < 1e-13);

        let w = smooth_vorticity(&g);
        let u = biot_savart2d(&w).unwrap();
        let back = curl2d(&u).unwrap();
        let mean = w.mean();
        assert!(back.max_abs_diff(&w.map(|v| v - mean)) < 1e-11);
        assert!(divergence(&u).max_abs() < 1e-12);
        let u = taylor_green(&g);
        assert!(biot_savart2d(&curl2d(&u).unwrap()).unwrap().max_abs_diff(&u) < 1e-11);
    }

    #[test]
    fn ns_rhs_examples() {
        let g = grid(2, 32);
        let zero = ScalarField::zeros(&g);
        let phi = PotentialSpec {
            amplitude: 1.3,
            mode: vec![1, 2],
        };
        let w = ScalarField::from_fn(&g, |x| -2.0 * x[0].sin() * x[1].sin());
        let t = ns2d_rhs(&w, &zero, &zero, &phi).unwrap();
        assert!(t.nonstiff.max_abs() < 1e-13);
        let d = t.diffusion.max_abs_diff(&w.scaled(-2.0));
        assert!(d < 1e-12, "{d}");

        let half = ScalarField::constant(&g, 0.5);
        let t = ns2d_rhs(&zero, &half, &half, &phi).unwrap();
        assert!(t.nonstiff.max_abs() < 1e-12);

        let s = ScalarField::from_fn(&g, |x| 1.0 + 0.5 * (x[0] - x[1]).cos());
        let e = ScalarField::from_fn(&g, |x| 2.0 + (2.0 * x[1]).sin());
        let t = ns2d_rhs(&smooth_vorticity(&g), &s, &e, &phi).unwrap();
        assert!(total_mass(&t.nonstiff).abs() < 1e-12);
        assert!(total_mass(&t.diffusion).abs() < 1e-12);
    }

    #[test]
    fn stokes_without_force_is_heat_flow() {
        let g = grid(3, 16);
        let u = VectorField::from_fn(&g, |x| [x[1].sin(), (2.0 * x[2]).cos(), x[0].cos()]);
        let out = stokes3d_step(&u, &VectorField::zeros(&g), 0.3).unwrap();
        let expect = VectorField::from_fn(&g, |x| {
            [
                (-0.3f64).exp() * x[1].sin(),
                (-1.2f64).exp() * (2.0 * x[2]).cos(),
                (-0.3f64).exp() * x[0].cos(),
            ]
        });
        assert!(out.max_abs_diff(&expect) < 1e-14);
    }

    #[test]
    fn stokes_ignores_gradient_forcing() {
        let g = grid(3, 16);
        let u = VectorField::from_fn(&g, |x| [x[1].sin(), 0.0, 0.0]);
        let psi = ScalarField::from_fn(&g, |x| (x[0] + x[2]).sin() * x[1].cos());
        let with = stokes3d_step(&u, &gradient(&psi), 0.1).unwrap();
        let without = stokes3d_step(&u, &VectorField::zeros(&g), 0.1).unwrap();
        assert!(with.max_abs_diff(&without) < 1e-14);
    }

    #[test]
    fn stokes_reaches_steady_state() {
        let g = grid(3, 16);
        let f = VectorField::from_fn(&g, |x| [0.0, 0.0, 3.0 * (x[0] + x[1]).cos()]);
        let out = stokes3d_step(&VectorField::zeros(&g), &f, 60.0).unwrap();
        assert!(out.max_abs_diff(&f.scaled(0.5)) < 1e-10);
        assert!(divergence(&out).max_abs() < 1e-12);
    }

    #[test]
    fn stokes_commutes_with_shifts() {
        let g = grid(3, 16);
        let u = VectorField::from_fn(&g, |x| [x[1].sin() * x[2].cos(), 0.0, x[0].sin()]);
        let f = VectorField::from_fn(&g, |x| [x[2].cos(), (x[0] - x[1]).sin(), 0.5]);
        let a = stokes3d_step(&u, &f, 0.05).unwrap().shifted(1, 3);
        let b = stokes3d_step(&u.shifted(1, 3), &f.shifted(1, 3), 0.05).unwrap();
        assert!(a.max_abs_diff(&b) < 1e-14);
    }
}
