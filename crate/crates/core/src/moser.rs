//! Truncated-power test functions and the integrability ladder.
//!
//! With `M(u) = min{|u|^s, L}` the truncated powers `u M(u)` have the
//! piecewise gradient `(s+1)|u|^s ∇u` where `|u|^s < L` and `L ∇u` elsewhere.
//! This module checks the resulting energy identity, the weak form tested
//! against `u min{|u|^{2s}, L^2}`, the boundary `L^r` ladder, and the
//! two-variable constrained supremum used to bound products of norms.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exponents::moser_ladder_exponents;
use crate::fields::{boundary_norm, evaluate_in_ball, ntd_relation_defect, sup_norm, BoundaryField, VolumeSamples, VolumeEval, NTD_RELATION_TOL, DEFAULT_RADIAL_NODES};
use crate::par;
use crate::solver::SolutionPair;
use crate::sphere::{NtdSpectrum, SphereGrid};

/// Largest ladder index; `r_12 = 16384` already.
pub const MAX_LADDER_INDEX: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruncationParams {
    pub s: f64,
    /// Cap on `|u|^s`. `f64::INFINITY` switches the truncation off.
    #[serde(rename = "L")]
    pub cap: f64,
}

impl TruncationParams {
    pub fn new(s: f64, cap: f64) -> Result<Self> {
        if !(s >= 0.0 && s.is_finite()) {
            return Err(Error::invalid(format!("truncation power s = {s} must be finite and >= 0")));
        }
        if !(cap > 0.0) {
            return Err(Error::invalid(format!("truncation level L = {cap} must be > 0")));
        }
        Ok(Self { s, cap })
    }

    /// `|u|^s <= L`: the power is not cut.
    #[inline]
    fn active(&self, u: f64) -> bool {
        u.abs().powf(self.s) <= self.cap
    }

    /// `min{|u|^s, L}`.
    #[inline]
    fn min_pow(&self, u: f64) -> f64 {
        u.abs().powf(self.s).min(self.cap)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdentityReport {
    pub lhs: f64,
    pub rhs: f64,
    pub rel_err: f64,
}

impl IdentityReport {
    pub fn new(lhs: f64, rhs: f64) -> Self {
        let rel_err = (lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(1e-300);
        Self { lhs, rhs, rel_err }
    }
}

/// Squared `H^1` energy of `w = u min{|u|^s, L}` two ways: `lhs` directly
/// from the piecewise gradient of `w`, `rhs` from the split
/// `s(s+2) ∫_{|u|^s<=L} |∇u|^2 |u|^{2s} + ∫ |∇u|^2 min^2 + ∫ u^2 min^2`.
pub fn truncation_identity(
    trace: &BoundaryField,
    neumann: &BoundaryField,
    t: TruncationParams,
    volume: &VolumeSamples,
) -> Result<IdentityReport> {
    TruncationParams::new(t.s, t.cap)?;
    let l_max = trace.coeffs().l_max().max(neumann.coeffs().l_max());
    let spectrum = NtdSpectrum::new(l_max)?;
    let defect = ntd_relation_defect(&spectrum, trace.coeffs(), neumann.coeffs())?;
    if defect > NTD_RELATION_TOL {
        return Err(Error::DataMismatch { defect });
    }
    let eval = evaluate_in_ball(volume, trace.coeffs())?;
    Ok(truncation_identity_on(&eval, volume, t))
}

fn truncation_identity_on(eval: &VolumeEval, volume: &VolumeSamples, t: TruncationParams) -> IdentityReport {
    let s = t.s;
    let lhs = volume.integrate(|i| {
        let u = eval.value[i];
        let g2 = eval.grad_sq(i);
        let m = t.min_pow(u);
        let dw2 = if t.active(u) {
            (s + 1.0).powi(2) * u.abs().powf(2.0 * s) * g2
        } else {
            m * m * g2
        };
        dw2 + u * u * m * m
    });
    let rhs_active = volume.integrate(|i| {
        let u = eval.value[i];
        if t.active(u) {
            eval.grad_sq(i) * u.abs().powf(2.0 * s)
        } else {
            0.0
        }
    });
    let rhs_grad = volume.integrate(|i| {
        let m = t.min_pow(eval.value[i]);
        eval.grad_sq(i) * m * m
    });
    let rhs_mass = volume.integrate(|i| {
        let u = eval.value[i];
        let m = t.min_pow(u);
        u * u * m * m
    });
    IdentityReport::new(lhs, s * (s + 2.0) * rhs_active + rhs_grad + rhs_mass)
}

/// The weak form for `u` tested against `φ = u min{|u|^{2s}, L^2}`:
/// `lhs = ∫ |∇u|^2 min^2 + 2s ∫_{|u|^s<=L} |∇u|^2 |u|^{2s} + ∫ u^2 min^2`
/// over the ball, `rhs = ∫_∂B f(x, v) φ`.
pub fn weak_truncation_balance(sol: &SolutionPair, t: TruncationParams) -> Result<IdentityReport> {
    let volume = VolumeSamples::new(Arc::new(SphereGrid::with_oversample(sol.l_max(), 2)?), DEFAULT_RADIAL_NODES)?;
    weak_truncation_balance_on(sol, t, &volume)
}

pub fn weak_truncation_balance_on(sol: &SolutionPair, t: TruncationParams, volume: &VolumeSamples) -> Result<IdentityReport> {
    TruncationParams::new(t.s, t.cap)?;
    let eval = evaluate_in_ball(volume, sol.u.coeffs())?;
    let s = t.s;
    let lhs = volume.integrate(|i| {
        let u = eval.value[i];
        let g2 = eval.grad_sq(i);
        let m = t.min_pow(u);
        let extra = if t.active(u) { 2.0 * s * u.abs().powf(2.0 * s) * g2 } else { 0.0 };
        g2 * m * m + extra + u * u * m * m
    });
    let grid = sol.grid();
    let phi: Vec<f64> = sol
        .u
        .values()
        .iter()
        .zip(sol.fu.values())
        .map(|(&u, &f)| {
            let m = t.min_pow(u);
            f * u * m * m
        })
        .collect();
    let rhs = grid.integrate(&phi);
    Ok(IdentityReport::new(lhs, rhs))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LadderRow {
    pub i: usize,
    pub s: f64,
    pub r: f64,
    pub norm_u: f64,
    pub norm_v: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LadderReport {
    pub rows: Vec<LadderRow>,
    pub linf_u: f64,
    pub linf_v: f64,
}

impl LadderReport {
    /// `(4π)^{-1/r} ||.||_{L^r}` for `u` and `v`, row by row.
    pub fn normalized(&self) -> Vec<(f64, f64)> {
        let area = 4.0 * std::f64::consts::PI;
        self.rows
            .iter()
            .map(|row| {
                let k = area.powf(-1.0 / row.r);
                (row.norm_u * k, row.norm_v * k)
            })
            .collect()
    }
}

/// Boundary norms of both traces at the ladder exponents `r_0..=r_{i_max}`.
pub fn ladder(sol: &SolutionPair, i_max: usize) -> Result<LadderReport> {
    if i_max > MAX_LADDER_INDEX {
        return Err(Error::invalid(format!("ladder index {i_max} exceeds {MAX_LADDER_INDEX}")));
    }
    let steps = moser_ladder_exponents(3, i_max)?;
    let rows = steps
        .iter()
        .map(|st| {
            Ok(LadderRow {
                i: st.i,
                s: st.s,
                r: st.r,
                norm_u: boundary_norm(&sol.u, st.r)?,
                norm_v: boundary_norm(&sol.v, st.r)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LadderReport { rows, linf_u: sup_norm(&sol.u), linf_v: sup_norm(&sol.v) })
}

/// Bounds of the `(x, y)` search box.
pub const BOX_MIN: f64 = 1e-6;
pub const BOX_MAX: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AppendixBResult {
    /// Refined supremum of `x y` over the feasible set in the box.
    pub sup: f64,
    /// Best value over the raw grid.
    pub grid_sup: f64,
    pub x: f64,
    pub y: f64,
}

struct Constraint {
    c: f64,
    ct: f64,
    a: f64,
    b: f64,
}

impl Constraint {
    /// `½x²y² − C̃(x^a y^b + x^b y^a)`; feasible iff `<= C`.
    #[inline]
    fn phi(&self, x: f64, y: f64) -> f64 {
        0.5 * x * x * y * y - self.ct * (x.powf(self.a) * y.powf(self.b) + x.powf(self.b) * y.powf(self.a))
    }

    #[inline]
    fn feasible(&self, x: f64, y: f64) -> bool {
        self.phi(x, y) <= self.c
    }

    /// Largest feasible `y` in the box for this `x`, or `None` if even
    /// `y = BOX_MIN` is infeasible. For fixed `x` the map `y -> phi` first
    /// decreases and then increases, so the feasible set is `[0, y*]`.
    fn y_star(&self, x: f64) -> Option<f64> {
        if !self.feasible(x, BOX_MIN) {
            return None;
        }
        if self.feasible(x, BOX_MAX) {
            return Some(BOX_MAX);
        }
        let (mut lo, mut hi) = (BOX_MIN.ln(), BOX_MAX.ln());
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.feasible(x, mid.exp()) {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < 1e-15 {
                break;
            }
        }
        Some(lo.exp())
    }

    fn product(&self, log_x: f64) -> f64 {
        let x = log_x.exp();
        self.y_star(x).map_or(0.0, |y| x * y)
    }
}

/// Sup of `x y` subject to
/// `½x²y² <= C + C̃(x^{2/(s+1)} y^{2s/(s+1)} + x^{2s/(s+1)} y^{2/(s+1)})`
/// on `[1e-6, 1e6]^2`: brute force on a `grid_n x grid_n` log grid, then
/// bisection for the active constraint along rows and a golden-section
/// search in `x` around the best row.
pub fn appendix_b_sup(c: f64, ct: f64, s: f64, grid_n: usize) -> Result<AppendixBResult> {
    if !(c >= 0.0 && c.is_finite()) || !(ct >= 0.0 && ct.is_finite()) {
        return Err(Error::invalid(format!("constants C = {c}, C~ = {ct} must be finite and >= 0")));
    }
    if !(s > 0.0 && s.is_finite()) {
        return Err(Error::invalid(format!("s = {s} must be > 0")));
    }
    if grid_n < 100 {
        return Err(Error::invalid(format!("grid_n = {grid_n} must be >= 100")));
    }
    let k = Constraint { c, ct, a: 2.0 / (s + 1.0), b: 2.0 * s / (s + 1.0) };
    let (l0, l1) = (BOX_MIN.ln(), BOX_MAX.ln());
    let h = (l1 - l0) / (grid_n - 1) as f64;
    let coord = |i: usize| (l0 + h * i as f64).exp();

    // Brute force, one row of the grid per task.
    let rows: Vec<(f64, f64, f64)> = par::map_range(grid_n, |i| {
        let x = coord(i);
        let mut best = (0.0, x, 0.0);
        for j in 0..grid_n {
            let y = coord(j);
            if k.feasible(x, y) && x * y > best.0 {
                best = (x * y, x, y);
            }
        }
        best
    });
    let (grid_sup, gx, gy) = rows.iter().copied().fold((0.0, 0.0, 0.0), |a, b| if b.0 > a.0 { b } else { a });
    if grid_sup == 0.0 {
        return Ok(AppendixBResult { sup: 0.0, grid_sup: 0.0, x: 0.0, y: 0.0 });
    }

    // Exact row maxima, then golden section around the best row.
    let row_best: Vec<f64> = par::map_range(grid_n, |i| k.product(l0 + h * i as f64));
    let (bi, _) = row_best
        .iter()
        .enumerate()
        .fold((0, f64::MIN), |a, (i, &v)| if v > a.1 { (i, v) } else { a });
    let (mut a, mut b) = ((l0 + h * (bi as f64 - 1.0)).max(l0), (l0 + h * (bi as f64 + 1.0)).min(l1));
    let gr = 0.5 * (5f64.sqrt() - 1.0);
    let mut c1 = b - gr * (b - a);
    let mut c2 = a + gr * (b - a);
    let (mut f1, mut f2) = (k.product(c1), k.product(c2));
    for _ in 0..120 {
        if f1 >= f2 {
            b = c2;
            c2 = c1;
            f2 = f1;
            c1 = b - gr * (b - a);
            f1 = k.product(c1);
        } else {
            a = c1;
            c1 = c2;
            f1 = f2;
            c2 = a + gr * (b - a);
            f2 = k.product(c2);
        }
        if b - a < 1e-14 {
            break;
        }
    }
    let mut best = (row_best[bi], l0 + h * bi as f64);
    for (v, lx) in [(f1, c1), (f2, c2)] {
        if v > best.0 {
            best = (v, lx);
        }
    }
    let (sup, lx) = if best.0 >= grid_sup { best } else { (grid_sup, gx.ln()) };
    let x = lx.exp();
    let y = if sup == grid_sup && best.0 < grid_sup { gy } else { k.y_star(x).unwrap_or(0.0) };
    Ok(AppendixBResult { sup, grid_sup, x, y })
}
