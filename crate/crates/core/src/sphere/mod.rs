//! Spectral machinery on the unit sphere and the unit ball in three
//! dimensions.

pub mod bessel;
pub mod coeffs;
pub mod grid;
pub mod ntd;
pub mod quadrature;

use serde::Serialize;

pub use bessel::{bessel_i, bessel_i_all, BesselI, RadialProfile};
pub use coeffs::{coeff_count, lm_index, HarmonicCoeffs};
pub use grid::{eval_point, normalized_legendre, SphereGrid, Synthesis, MAX_BAND};
pub use ntd::{extension_coeffs, harmonic_extension, NtdSpectrum};

use crate::error::Result;

/// Residuals reported by `nlbc sphere selftest`.
#[derive(Debug, Clone, Serialize)]
pub struct SelfTestReport {
    pub l_max: usize,
    /// Max entry of `|G - I|` for the quadrature Gram matrix.
    pub orthonormality_defect: f64,
    /// `|sum w / 4 pi - 1|`.
    pub weight_sum_defect: f64,
    /// Max relative residual of `i_{l-1} - i_{l+1} = (2l+1) i_l / r`.
    pub bessel_recurrence_residual: f64,
    /// `|lambda_0 / ((e^2 - 1)/2) - 1|`.
    pub lambda0_defect: f64,
    pub lambda: Vec<f64>,
}

pub fn selftest(l_max: usize) -> Result<SelfTestReport> {
    let grid = SphereGrid::new(l_max)?;
    let n = coeff_count(l_max);
    let w = grid.weights();
    let basis: Vec<Vec<f64>> = crate::par::map_range(n, |i| {
        let mut c = HarmonicCoeffs::zeros(l_max);
        c.as_mut_slice()[i] = 1.0;
        grid.synthesize(&c).expect("band matches grid")
    });
    let rows = crate::par::map_range(n, |a| {
        let mut worst: f64 = 0.0;
        for b in 0..n {
            let q: f64 = (0..grid.len()).map(|i| w[i] * basis[a][i] * basis[b][i]).sum();
            let exact = if a == b { 1.0 } else { 0.0 };
            worst = worst.max((q - exact).abs());
        }
        worst
    });
    let orthonormality_defect = rows.into_iter().fold(0.0, f64::max);
    let weight_sum_defect = (grid.total_weight() / (4.0 * std::f64::consts::PI) - 1.0).abs();

    let mut bessel_recurrence_residual: f64 = 0.0;
    for &r in &[0.25, 0.5, 1.0] {
        let all = bessel_i_all((l_max + 1).max(2), r)?;
        for l in 1..=l_max.max(1) {
            if all[l + 1].underflow {
                break;
            }
            let lhs = all[l - 1].value - all[l + 1].value;
            let rhs = (2 * l + 1) as f64 * all[l].value / r;
            bessel_recurrence_residual = bessel_recurrence_residual.max((lhs / rhs - 1.0).abs());
        }
    }
    let spectrum = NtdSpectrum::new(l_max)?;
    let e2 = std::f64::consts::E * std::f64::consts::E;
    Ok(SelfTestReport {
        l_max,
        orthonormality_defect,
        weight_sum_defect,
        bessel_recurrence_residual,
        lambda0_defect: (spectrum.get(0) / ((e2 - 1.0) / 2.0) - 1.0).abs(),
        lambda: spectrum.lambda,
    })
}
