//! Gauss-Legendre x equispaced grids on the unit sphere and the dense real
//! spherical-harmonic transforms that live on them.

use std::f64::consts::{PI, SQRT_2};

use super::coeffs::{coeff_count, HarmonicCoeffs};
use super::quadrature::gauss_legendre;
use crate::error::{Error, Result};
use crate::par;

/// Largest supported band limit.
pub const MAX_BAND: usize = 256;

/// Packed index of `(l, m)`, `0 <= m <= l`, in a Legendre table.
#[inline]
fn plm_index(l: usize, m: usize) -> usize {
    l * (l + 1) / 2 + m
}

/// Normalized associated Legendre functions `Pbar_l^m(x)` for
/// `0 <= m <= l <= l_max`, packed by [`plm_index`]. With these,
/// `Y_{l0} = Pbar_l^0`, `Y_{lm} = sqrt(2) Pbar_l^m cos(m phi)` and
/// `Y_{l,-m} = sqrt(2) Pbar_l^m sin(m phi)` are orthonormal on `S^2`.
/// No Condon-Shortley phase.
pub fn normalized_legendre(l_max: usize, x: f64) -> Vec<f64> {
    let s = (1.0 - x * x).max(0.0).sqrt();
    let mut p = vec![0.0; plm_index(l_max, l_max) + 1];
    let mut pmm = (0.25 / PI).sqrt();
    for m in 0..=l_max {
        if m > 0 {
            let mf = m as f64;
            pmm *= ((2.0 * mf + 1.0) / (2.0 * mf)).sqrt() * s;
        }
        p[plm_index(m, m)] = pmm;
        if m == l_max {
            break;
        }
        let mut prev2 = pmm;
        let mut prev1 = (2.0 * m as f64 + 3.0).sqrt() * x * pmm;
        p[plm_index(m + 1, m)] = prev1;
        let m2 = (m * m) as f64;
        for l in (m + 2)..=l_max {
            let lf = l as f64;
            let a = ((4.0 * lf * lf - 1.0) / (lf * lf - m2)).sqrt();
            let b = (((lf - 1.0) * (lf - 1.0) - m2) / (4.0 * (lf - 1.0) * (lf - 1.0) - 1.0)).sqrt();
            let cur = a * (x * prev1 - b * prev2);
            p[plm_index(l, m)] = cur;
            prev2 = prev1;
            prev1 = cur;
        }
    }
    p
}

/// `d Pbar_l^m / d theta` at `x = cos(theta)`, `sin(theta) = s > 0`, from a
/// table produced by [`normalized_legendre`].
fn legendre_dtheta(p: &[f64], l_max: usize, x: f64, s: f64) -> Vec<f64> {
    let mut d = vec![0.0; p.len()];
    for l in 0..=l_max {
        let lf = l as f64;
        for m in 0..=l {
            let mf = m as f64;
            let lower = if m < l {
                ((2.0 * lf + 1.0) * (lf * lf - mf * mf) / (2.0 * lf - 1.0)).sqrt()
                    * p[plm_index(l - 1, m)]
            } else {
                0.0
            };
            d[plm_index(l, m)] = (lf * x * p[plm_index(l, m)] - lower) / s;
        }
    }
    d
}

/// Which pointwise quantity a synthesis produces.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Synthesis {
    Value,
    /// `d/d theta`.
    DTheta,
    /// `(1 / sin theta) d/d phi`.
    DPhiOverSin,
}

/// Quadrature grid on `S^2` for fields band-limited to `l_max`.
///
/// Colatitudes are Gauss-Legendre nodes in `cos(theta)`, azimuths are
/// equispaced. With `oversample = k` the grid carries `k (l_max + 1)`
/// colatitudes and `k (2 l_max + 1)` azimuths, so products of up to `2k`
/// band-`l_max` factors are integrated exactly.
#[derive(Debug, Clone)]
pub struct SphereGrid {
    l_max: usize,
    oversample: usize,
    cos_theta: Vec<f64>,
    sin_theta: Vec<f64>,
    theta_weights: Vec<f64>,
    phis: Vec<f64>,
    phi_weight: f64,
    /// Per colatitude: packed `Pbar_l^m` table.
    legendre: Vec<Vec<f64>>,
    /// Per colatitude: packed `d Pbar_l^m / d theta` table.
    legendre_dtheta: Vec<Vec<f64>>,
    /// `cos(m phi_k)` and `sin(m phi_k)`, row `m`, for `m <= l_max`.
    cos_mphi: Vec<Vec<f64>>,
    sin_mphi: Vec<Vec<f64>>,
}

impl SphereGrid {
    /// Minimal exact-quadrature grid for band limit `l_max`.
    pub fn new(l_max: usize) -> Result<Self> {
        Self::with_oversample(l_max, 1)
    }

    pub fn with_oversample(l_max: usize, oversample: usize) -> Result<Self> {
        if l_max > MAX_BAND {
            return Err(Error::invalid(format!(
                "band limit {l_max} outside 0..={MAX_BAND}"
            )));
        }
        if oversample == 0 {
            return Err(Error::invalid("oversample factor must be >= 1"));
        }
        let n_theta = oversample * (l_max + 1);
        let n_phi = oversample * (2 * l_max + 1);
        let (x, w) = gauss_legendre(n_theta);
        // Order colatitudes from north pole to south pole.
        let cos_theta: Vec<f64> = x.into_iter().rev().collect();
        let theta_weights: Vec<f64> = w.into_iter().rev().collect();
        let sin_theta: Vec<f64> = cos_theta.iter().map(|c| (1.0 - c * c).sqrt()).collect();
        let phis: Vec<f64> = (0..n_phi).map(|k| 2.0 * PI * k as f64 / n_phi as f64).collect();

        let rows = par::map_range(n_theta, |j| {
            let p = normalized_legendre(l_max, cos_theta[j]);
            let d = legendre_dtheta(&p, l_max, cos_theta[j], sin_theta[j]);
            (p, d)
        });
        let (legendre, legendre_dtheta): (Vec<_>, Vec<_>) = rows.into_iter().unzip();

        let cos_mphi = (0..=l_max)
            .map(|m| phis.iter().map(|p| (m as f64 * p).cos()).collect())
            .collect();
        let sin_mphi = (0..=l_max)
            .map(|m| phis.iter().map(|p| (m as f64 * p).sin()).collect())
            .collect();

        Ok(Self {
            l_max,
            oversample,
            cos_theta,
            sin_theta,
            theta_weights,
            phis,
            phi_weight: 2.0 * PI / n_phi as f64,
            legendre,
            legendre_dtheta,
            cos_mphi,
            sin_mphi,
        })
    }

    pub fn l_max(&self) -> usize {
        self.l_max
    }

    pub fn oversample(&self) -> usize {
        self.oversample
    }

    pub fn n_theta(&self) -> usize {
        self.cos_theta.len()
    }

    pub fn n_phi(&self) -> usize {
        self.phis.len()
    }

    pub fn len(&self) -> usize {
        self.n_theta() * self.n_phi()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cos_theta(&self) -> &[f64] {
        &self.cos_theta
    }

    pub fn sin_theta(&self) -> &[f64] {
        &self.sin_theta
    }

    pub fn thetas(&self) -> Vec<f64> {
        self.cos_theta.iter().map(|c| c.acos()).collect()
    }

    pub fn phis(&self) -> &[f64] {
        &self.phis
    }

    /// Quadrature weight of node `(j, k)`; independent of `k`.
    #[inline]
    pub fn weight(&self, j: usize) -> f64 {
        self.theta_weights[j] * self.phi_weight
    }

    /// Weights for every node in row-major `(theta, phi)` order.
    pub fn weights(&self) -> Vec<f64> {
        let n_phi = self.n_phi();
        (0..self.len()).map(|i| self.weight(i / n_phi)).collect()
    }

    /// Sum of all node weights, accumulated per colatitude ring.
    pub fn total_weight(&self) -> f64 {
        let ring = self.phi_weight * self.n_phi() as f64;
        self.theta_weights.iter().map(|w| w * ring).sum()
    }

    /// `(theta_j, phi_k)` of flat node index `i`.
    pub fn node(&self, i: usize) -> (f64, f64) {
        let n_phi = self.n_phi();
        (self.cos_theta[i / n_phi].acos(), self.phis[i % n_phi])
    }

    /// Quadrature of `values` over the sphere.
    pub fn integrate(&self, values: &[f64]) -> f64 {
        debug_assert_eq!(values.len(), self.len());
        let n_phi = self.n_phi();
        values
            .chunks(n_phi)
            .enumerate()
            .map(|(j, row)| self.weight(j) * row.iter().sum::<f64>())
            .sum()
    }

    /// Value of `Y_{lm}` at grid node `(j, k)`.
    pub fn ylm(&self, l: usize, m: i64, j: usize, k: usize) -> f64 {
        let mu = m.unsigned_abs() as usize;
        let p = self.legendre[j][plm_index(l, mu)];
        match m.cmp(&0) {
            std::cmp::Ordering::Equal => p,
            std::cmp::Ordering::Greater => SQRT_2 * p * self.cos_mphi[mu][k],
            std::cmp::Ordering::Less => SQRT_2 * p * self.sin_mphi[mu][k],
        }
    }

    /// `(Y, dY/dtheta, (1/sin) dY/dphi)` of `Y_{lm}` at node `(j, k)`.
    pub fn ylm_with_gradient(&self, l: usize, m: i64, j: usize, k: usize) -> (f64, f64, f64) {
        let mu = m.unsigned_abs() as usize;
        let p = self.legendre[j][plm_index(l, mu)];
        let dp = self.legendre_dtheta[j][plm_index(l, mu)];
        let s = self.sin_theta[j];
        let muf = mu as f64;
        match m.cmp(&0) {
            std::cmp::Ordering::Equal => (p, dp, 0.0),
            std::cmp::Ordering::Greater => {
                let (c, sn) = (self.cos_mphi[mu][k], self.sin_mphi[mu][k]);
                (SQRT_2 * p * c, SQRT_2 * dp * c, -SQRT_2 * muf * p * sn / s)
            }
            std::cmp::Ordering::Less => {
                let (c, sn) = (self.cos_mphi[mu][k], self.sin_mphi[mu][k]);
                (SQRT_2 * p * sn, SQRT_2 * dp * sn, SQRT_2 * muf * p * c / s)
            }
        }
    }

    fn check_band(&self, coeffs: &HarmonicCoeffs) -> Result<()> {
        if coeffs.l_max() > self.l_max {
            return Err(Error::BandLimitMismatch {
                expected: self.l_max,
                got: coeffs.l_max(),
            });
        }
        Ok(())
    }

    /// Quadrature projection of grid samples onto `Y_{lm}`, `l <= l_max`.
    pub fn analyze(&self, values: &[f64]) -> Result<HarmonicCoeffs> {
        if values.len() != self.len() {
            return Err(Error::invalid(format!(
                "expected {} grid values, got {}",
                self.len(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("grid values must be finite"));
        }
        let l_max = self.l_max;
        let n_phi = self.n_phi();
        // Weighted azimuthal Fourier sums per colatitude.
        let fourier: Vec<(Vec<f64>, Vec<f64>)> = par::map_range(self.n_theta(), |j| {
            let row = &values[j * n_phi..(j + 1) * n_phi];
            let w = self.weight(j);
            let mut a = vec![0.0; l_max + 1];
            let mut b = vec![0.0; l_max + 1];
            for m in 0..=l_max {
                let (cm, sm) = (&self.cos_mphi[m], &self.sin_mphi[m]);
                let mut sa = 0.0;
                let mut sb = 0.0;
                for k in 0..n_phi {
                    sa += row[k] * cm[k];
                    sb += row[k] * sm[k];
                }
                a[m] = w * sa;
                b[m] = w * sb;
            }
            (a, b)
        });
        let per_degree: Vec<Vec<f64>> = par::map_range(l_max + 1, |l| {
            let mut out = vec![0.0; 2 * l + 1];
            for (j, (a, b)) in fourier.iter().enumerate() {
                let p = &self.legendre[j];
                out[l] += p[plm_index(l, 0)] * a[0];
                for m in 1..=l {
                    let pm = SQRT_2 * p[plm_index(l, m)];
                    out[l + m] += pm * a[m];
                    out[l - m] += pm * b[m];
                }
            }
            out
        });
        let mut data = Vec::with_capacity(coeff_count(l_max));
        for block in per_degree {
            data.extend(block);
        }
        HarmonicCoeffs::from_vec(l_max, data)
    }

    /// Evaluate a band-limited expansion (or one of its angular derivatives)
    /// at every grid node.
    pub fn synthesize_kind(&self, coeffs: &HarmonicCoeffs, kind: Synthesis) -> Result<Vec<f64>> {
        self.check_band(coeffs)?;
        let band = coeffs.l_max();
        let n_phi = self.n_phi();
        let mut out = vec![0.0; self.len()];
        par::for_each_chunk_mut(&mut out, n_phi, |j, row| {
            let table = match kind {
                Synthesis::DTheta => &self.legendre_dtheta[j],
                _ => &self.legendre[j],
            };
            // Per-order sums: cosine part in `a`, sine part in `b`.
            let mut a = vec![0.0; band + 1];
            let mut b = vec![0.0; band + 1];
            for l in 0..=band {
                a[0] += coeffs.get(l, 0) * table[plm_index(l, 0)];
                for m in 1..=l {
                    let pm = SQRT_2 * table[plm_index(l, m)];
                    a[m] += coeffs.get(l, m as i64) * pm;
                    b[m] += coeffs.get(l, -(m as i64)) * pm;
                }
            }
            if kind == Synthesis::DPhiOverSin {
                // d/dphi maps (cos, sin) parts (a, b) to m (b, -a).
                let s = self.sin_theta[j];
                for m in 0..=band {
                    let mf = m as f64 / s;
                    let (am, bm) = (a[m], b[m]);
                    a[m] = mf * bm;
                    b[m] = -mf * am;
                }
            }
            for (k, v) in row.iter_mut().enumerate() {
                let mut acc = a[0];
                for m in 1..=band {
                    acc += a[m] * self.cos_mphi[m][k] + b[m] * self.sin_mphi[m][k];
                }
                *v = acc;
            }
        });
        Ok(out)
    }

    pub fn synthesize(&self, coeffs: &HarmonicCoeffs) -> Result<Vec<f64>> {
        self.synthesize_kind(coeffs, Synthesis::Value)
    }
}

/// Evaluate an expansion at an arbitrary point `(theta, phi)`.
pub fn eval_point(coeffs: &HarmonicCoeffs, theta: f64, phi: f64) -> f64 {
    let l_max = coeffs.l_max();
    let p = normalized_legendre(l_max, theta.cos());
    let mut acc = 0.0;
    for l in 0..=l_max {
        acc += coeffs.get(l, 0) * p[plm_index(l, 0)];
        for m in 1..=l {
            let (s, c) = (m as f64 * phi).sin_cos();
            let mi = m as i64;
            acc += SQRT_2 * p[plm_index(l, m)] * (coeffs.get(l, mi) * c + coeffs.get(l, -mi) * s);
        }
    }
    acc
}
