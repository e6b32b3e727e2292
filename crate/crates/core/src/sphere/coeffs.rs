use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Flat index of `(l, m)` in an `(L+1)^2` coefficient vector.
#[inline]
pub fn lm_index(l: usize, m: i64) -> usize {
    ((l * l + l) as i64 + m) as usize
}

/// Number of real harmonics with degree at most `l_max`.
#[inline]
pub fn coeff_count(l_max: usize) -> usize {
    (l_max + 1) * (l_max + 1)
}

/// Coefficients in the real orthonormal spherical-harmonic basis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarmonicCoeffs {
    l_max: usize,
    data: Vec<f64>,
}

impl HarmonicCoeffs {
    pub fn zeros(l_max: usize) -> Self {
        Self {
            l_max,
            data: vec![0.0; coeff_count(l_max)],
        }
    }

    pub fn from_vec(l_max: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != coeff_count(l_max) {
            return Err(Error::invalid(format!(
                "expected {} coefficients for band limit {l_max}, got {}",
                coeff_count(l_max),
                data.len()
            )));
        }
        Ok(Self { l_max, data })
    }

    /// Single harmonic `amplitude * Y_{lm}`.
    pub fn single(l_max: usize, l: usize, m: i64, amplitude: f64) -> Result<Self> {
        if l > l_max || m.unsigned_abs() as usize > l {
            return Err(Error::invalid(format!(
                "harmonic ({l}, {m}) outside band limit {l_max}"
            )));
        }
        let mut c = Self::zeros(l_max);
        c.set(l, m, amplitude);
        Ok(c)
    }

    pub fn l_max(&self) -> usize {
        self.l_max
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, l: usize, m: i64) -> f64 {
        self.data[lm_index(l, m)]
    }

    pub fn set(&mut self, l: usize, m: i64, value: f64) {
        self.data[lm_index(l, m)] = value;
    }

    /// Iterate `(l, m, value)` in storage order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, i64, f64)> + '_ {
        (0..=self.l_max).flat_map(move |l| {
            let li = l as i64;
            (-li..=li).map(move |m| (l, m, self.data[lm_index(l, m)]))
        })
    }

    /// Euclidean norm of the coefficient vector, i.e. the `L^2(S^2)` norm.
    pub fn norm(&self) -> f64 {
        self.data.iter().map(|c| c * c).sum::<f64>().sqrt()
    }

    /// Multiply every degree-`l` block by `factor(l)`.
    pub fn scale_by_degree(&self, factor: impl Fn(usize) -> f64) -> Self {
        let mut out = self.clone();
        for l in 0..=self.l_max {
            let f = factor(l);
            let start = l * l;
            for c in &mut out.data[start..start + 2 * l + 1] {
                *c *= f;
            }
        }
        out
    }

    /// Copy into a different band limit, truncating or zero-padding.
    pub fn resized(&self, l_max: usize) -> Self {
        let mut out = Self::zeros(l_max);
        let n = coeff_count(l_max.min(self.l_max));
        out.data[..n].copy_from_slice(&self.data[..n]);
        out
    }

    /// Rotate the represented function about the polar axis:
    /// `f(theta, phi) -> f(theta, phi - alpha)`.
    pub fn rotate_z(&self, alpha: f64) -> Self {
        let mut out = self.clone();
        for l in 1..=self.l_max {
            for m in 1..=l as i64 {
                let (s, c) = (m as f64 * alpha).sin_cos();
                let a = self.get(l, m);
                let b = self.get(l, -m);
                out.set(l, m, a * c - b * s);
                out.set(l, -m, a * s + b * c);
            }
        }
        out
    }

    pub fn axpy(&mut self, alpha: f64, other: &Self) {
        debug_assert_eq!(self.l_max, other.l_max);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
    }
}
