//! Neumann-to-Dirichlet map of `-Δu + u = 0` on the unit ball.
//!
//! Separating variables, `u = sum c_lm i_l(r) Y_lm`, so Neumann data with
//! coefficients `h_lm` produces the boundary trace `lambda_l h_lm` with
//! `lambda_l = i_l(1) / i_l'(1) = 1 / (l + rho_{l+1}(1))`.

use serde::{Deserialize, Serialize};

use super::bessel::{ratio_table, RadialProfile, MAX_ORDER};
use super::coeffs::HarmonicCoeffs;
use super::grid::{SphereGrid, MAX_BAND};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NtdSpectrum {
    pub l_max: usize,
    pub lambda: Vec<f64>,
}

impl NtdSpectrum {
    /// Eigenvalues for `l = 0..=l_max`. The ratio form never divides two
    /// underflowed Bessel values, so no extrapolation is needed at high `l`.
    pub fn new(l_max: usize) -> Result<Self> {
        if l_max > MAX_BAND.max(MAX_ORDER) {
            return Err(Error::invalid(format!("band limit {l_max} too large")));
        }
        let rho = ratio_table(l_max + 1, 1.0);
        let lambda = (0..=l_max).map(|l| 1.0 / (l as f64 + rho[l + 1])).collect();
        Ok(Self { l_max, lambda })
    }

    pub fn get(&self, l: usize) -> f64 {
        self.lambda[l]
    }

    /// Dirichlet trace of the solution with Neumann data `h`.
    pub fn apply(&self, h: &HarmonicCoeffs) -> Result<HarmonicCoeffs> {
        self.check(h)?;
        Ok(h.scale_by_degree(|l| self.lambda[l]))
    }

    /// Neumann data of the solution with Dirichlet trace `u`.
    pub fn apply_inverse(&self, u: &HarmonicCoeffs) -> Result<HarmonicCoeffs> {
        self.check(u)?;
        Ok(u.scale_by_degree(|l| 1.0 / self.lambda[l]))
    }

    /// `||u||_{H^1(B)}^2 = sum lambda_l h_lm^2` for Neumann data `h`.
    pub fn energy_from_neumann(&self, h: &HarmonicCoeffs) -> Result<f64> {
        self.check(h)?;
        Ok(h.iter().map(|(l, _, c)| self.lambda[l] * c * c).sum())
    }

    /// The same energy from the Dirichlet trace, `sum u_lm^2 / lambda_l`.
    pub fn energy_from_trace(&self, u: &HarmonicCoeffs) -> Result<f64> {
        self.check(u)?;
        Ok(u.iter().map(|(l, _, c)| c * c / self.lambda[l]).sum())
    }

    fn check(&self, c: &HarmonicCoeffs) -> Result<()> {
        if c.l_max() > self.l_max {
            return Err(Error::BandLimitMismatch {
                expected: self.l_max,
                got: c.l_max(),
            });
        }
        Ok(())
    }
}

/// Coefficients on the sphere of radius `r` of the solution with Dirichlet
/// trace `trace`: `c_lm i_l(r) / i_l(1)`.
pub fn extension_coeffs(trace: &HarmonicCoeffs, r: f64) -> Result<HarmonicCoeffs> {
    let profile = RadialProfile::new(trace.l_max(), r)?;
    Ok(trace.scale_by_degree(|l| profile.value[l]))
}

/// Values on `grid`, scaled to the sphere of radius `r`, of the solution of
/// `-Δu + u = 0` whose boundary trace has coefficients `trace`.
pub fn harmonic_extension(grid: &SphereGrid, trace: &HarmonicCoeffs, r: f64) -> Result<Vec<f64>> {
    grid.synthesize(&extension_coeffs(trace, r)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sphere::bessel::bessel_i;
    use std::f64::consts::{E, PI};

    #[test]
    fn lambda0_closed_form() {
        let s = NtdSpectrum::new(4).unwrap();
        let exact = (E * E - 1.0) / 2.0;
        assert!((s.get(0) / exact - 1.0).abs() < 1e-14);
        assert!((s.get(0) - 3.1945280495).abs() < 1e-9);
    }

    #[test]
    fn lambda1_from_closed_forms() {
        let s = NtdSpectrum::new(4).unwrap();
        let i0 = 1f64.sinh();
        let i1 = 1f64.cosh() - 1f64.sinh();
        let exact = i1 / (i0 - 2.0 * i1);
        assert!((s.get(1) / exact - 1.0).abs() < 1e-14);
        assert!((s.get(1) - 0.8371507060).abs() < 1e-10);
    }

    #[test]
    fn agrees_with_bessel_quotient() {
        let s = NtdSpectrum::new(60).unwrap();
        for l in 0..=60 {
            let b = bessel_i(l, 1.0).unwrap();
            assert!((s.get(l) / (b.value / b.deriv) - 1.0).abs() < 1e-13);
        }
    }

    #[test]
    fn spectrum_positive_decreasing_vanishing() {
        let s = NtdSpectrum::new(256).unwrap();
        assert!(s.lambda.iter().all(|&l| l > 0.0));
        assert!(s.lambda.windows(2).all(|w| w[1] < w[0]));
        assert!(s.lambda[2..].iter().all(|&l| l < 1.0));
        assert!(s.get(256) < 1.0 / 256.0);
    }

    #[test]
    fn extension_of_constant() {
        let grid = SphereGrid::new(2).unwrap();
        let c = HarmonicCoeffs::single(2, 0, 0, (4.0 * PI).sqrt() * 1.7).unwrap();
        for &r in &[0.1, 0.5, 0.9, 1.0] {
            let v = harmonic_extension(&grid, &c, r).unwrap();
            let exact = 1.7 * r.sinh() / (r * 1f64.sinh());
            assert!(v.iter().all(|x| (x - exact).abs() < 1e-13), "r = {r}");
        }
        assert!(harmonic_extension(&grid, &c, 0.0).is_err());
        assert!(harmonic_extension(&grid, &c, 1.1).is_err());
    }

    #[test]
    fn extension_at_boundary_is_identity() {
        let grid = SphereGrid::new(5).unwrap();
        let c = HarmonicCoeffs::from_vec(5, (0..36).map(|i| (i as f64).sin()).collect()).unwrap();
        assert_eq!(harmonic_extension(&grid, &c, 1.0).unwrap(), grid.synthesize(&c).unwrap());
    }
}
