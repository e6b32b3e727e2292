//! Fixed-point solver for the coupled boundary system on the unit ball.
//!
//! With `K` the Neumann-to-Dirichlet map, the traces satisfy
//! `u = K f(., v)` and `v = K g(., u)`. Nonlinear terms are evaluated
//! pointwise on an oversampled grid and projected back to the band limit;
//! the iteration is damped Picard, optionally Anderson-mixed.

use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{sup_of_expansion, BoundaryField, FieldSpec, VolumeSamples, DEFAULT_RADIAL_NODES};
use crate::par;
use crate::sphere::{coeff_count, HarmonicCoeffs, NtdSpectrum, RadialProfile, SphereGrid};

/// Regularization of the Anderson least-squares normal equations, relative
/// to their trace.
const ANDERSON_RIDGE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum NonlinearityKind {
    /// `b |s|^{p-1} s`
    PurePowerOdd,
    /// `b (1 + |s|^p)`
    AffinePower,
    /// `b (1 + min(|s|, M)^p)`
    Saturated { cap: f64 },
    /// `w(x) b (1 + |s|^p)` with `|w| <= 1`.
    Weighted { weight: HarmonicCoeffs },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Nonlinearity {
    pub kind: NonlinearityKind,
    pub b: f64,
    pub p: f64,
}

fn check_bp(b: f64, p: f64) -> Result<()> {
    if !(b > 0.0 && b.is_finite()) {
        return Err(Error::invalid(format!("coefficient b = {b} must be a finite positive number")));
    }
    if !(p > 1.0 && p.is_finite()) {
        return Err(Error::invalid(format!("exponent p = {p} must be finite and > 1")));
    }
    Ok(())
}

impl Nonlinearity {
    pub fn pure_power_odd(b: f64, p: f64) -> Result<Self> {
        check_bp(b, p)?;
        Ok(Self { kind: NonlinearityKind::PurePowerOdd, b, p })
    }

    pub fn affine_power(b: f64, p: f64) -> Result<Self> {
        check_bp(b, p)?;
        Ok(Self { kind: NonlinearityKind::AffinePower, b, p })
    }

    pub fn saturated(b: f64, p: f64, cap: f64) -> Result<Self> {
        check_bp(b, p)?;
        if !(cap > 0.0 && cap.is_finite()) {
            return Err(Error::invalid(format!("saturation cap M = {cap} must be > 0")));
        }
        Ok(Self { kind: NonlinearityKind::Saturated { cap }, b, p })
    }

    /// The weight is taken as its band-limited expansion and must satisfy
    /// `|w| <= 1` everywhere on the sphere.
    pub fn weighted(b: f64, p: f64, weight: &BoundaryField) -> Result<Self> {
        Self::weighted_coeffs(b, p, weight.coeffs().clone())
    }

    pub fn weighted_coeffs(b: f64, p: f64, weight: HarmonicCoeffs) -> Result<Self> {
        check_bp(b, p)?;
        let sup = sup_of_expansion(&weight);
        if !(sup <= 1.0 + 1e-12) {
            return Err(Error::invalid(format!("weight sup norm {sup} exceeds 1")));
        }
        Ok(Self { kind: NonlinearityKind::Weighted { weight }, b, p })
    }

    /// `f(x, s)` given the weight value `w` at `x` (ignored unless weighted).
    #[inline]
    pub fn eval(&self, w: f64, s: f64) -> f64 {
        let (b, p) = (self.b, self.p);
        match &self.kind {
            NonlinearityKind::PurePowerOdd => b * s.abs().powf(p - 1.0) * s,
            NonlinearityKind::AffinePower => b * (1.0 + s.abs().powf(p)),
            NonlinearityKind::Saturated { cap } => b * (1.0 + s.abs().min(*cap).powf(p)),
            NonlinearityKind::Weighted { .. } => w * b * (1.0 + s.abs().powf(p)),
        }
    }

    /// `b (1 + |s|^p)`.
    #[inline]
    pub fn growth_bound(&self, s: f64) -> f64 {
        self.b * (1.0 + s.abs().powf(self.p))
    }

    pub fn kind_name(&self) -> &'static str {
        match self.kind {
            NonlinearityKind::PurePowerOdd => "PurePowerOdd",
            NonlinearityKind::AffinePower => "AffinePower",
            NonlinearityKind::Saturated { .. } => "Saturated",
            NonlinearityKind::Weighted { .. } => "Weighted",
        }
    }

    /// Same nonlinearity with a different coefficient.
    pub fn with_b(&self, b: f64) -> Result<Self> {
        check_bp(b, self.p)?;
        Ok(Self { b, ..self.clone() })
    }

    /// Weight samples on `grid` (all ones for unweighted kinds).
    fn weight_values(&self, grid: &SphereGrid) -> Result<Vec<f64>> {
        match &self.kind {
            NonlinearityKind::Weighted { weight } => {
                if weight.l_max() > grid.l_max() {
                    return Err(Error::BandLimitMismatch { expected: grid.l_max(), got: weight.l_max() });
                }
                grid.synthesize(weight)
            }
            _ => Ok(vec![1.0; grid.len()]),
        }
    }

    /// Pointwise `f(x, s(x))` on `grid`.
    pub fn apply(&self, arg: &BoundaryField) -> Result<BoundaryField> {
        let w = self.weight_values(arg.grid())?;
        let vals = arg.values().iter().zip(&w).map(|(&s, &w)| self.eval(w, s)).collect();
        BoundaryField::from_values(arg.grid().clone(), vals)
    }
}

/// Flat, file-friendly description of a nonlinearity, as used in configs:
/// `{ kind = "AffinePower", b = 0.1, p = 2 }`, with `M` for `Saturated` and
/// `weight` (a [`FieldSpec`]) for `Weighted`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NonlinearityConfig {
    pub kind: String,
    pub b: f64,
    pub p: f64,
    #[serde(rename = "M", default, skip_serializing_if = "Option::is_none")]
    pub cap: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight: Option<FieldSpec>,
}

impl NonlinearityConfig {
    pub fn build(&self, l_max: usize) -> Result<Nonlinearity> {
        match self.kind.as_str() {
            "PurePowerOdd" => Nonlinearity::pure_power_odd(self.b, self.p),
            "AffinePower" => Nonlinearity::affine_power(self.b, self.p),
            "Saturated" => {
                let cap = self.cap.ok_or_else(|| Error::invalid("Saturated needs M"))?;
                Nonlinearity::saturated(self.b, self.p, cap)
            }
            "Weighted" => {
                let spec = self.weight.as_ref().ok_or_else(|| Error::invalid("Weighted needs weight"))?;
                Nonlinearity::weighted_coeffs(self.b, self.p, spec.coeffs(l_max)?)
            }
            other => Err(Error::invalid(format!(
                "unknown nonlinearity kind {other:?} (expected PurePowerOdd, AffinePower, Saturated or Weighted)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Init {
    #[serde(alias = "zero")]
    Zero,
    /// Both traces start at the same constant.
    #[serde(alias = "constant")]
    Constant(f64),
    /// `(u, v)` start at two constants.
    #[serde(alias = "constant_pair")]
    ConstantPair(f64, f64),
    /// Both traces start at the same field.
    #[serde(alias = "field")]
    Field(FieldSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    #[serde(rename = "Lmax")]
    pub l_max: usize,
    #[serde(default = "default_oversample")]
    pub oversample: usize,
    #[serde(default = "default_damping")]
    pub damping: f64,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default)]
    pub anderson_depth: usize,
    #[serde(default = "default_blowup")]
    pub blowup: f64,
    #[serde(default = "default_init")]
    pub init: Init,
}

fn default_oversample() -> usize {
    3
}
fn default_damping() -> f64 {
    0.5
}
fn default_tol() -> f64 {
    1e-10
}
fn default_max_iter() -> usize {
    500
}
fn default_blowup() -> f64 {
    1e8
}
fn default_init() -> Init {
    Init::Zero
}

impl SolverConfig {
    pub fn new(l_max: usize) -> Self {
        Self {
            l_max,
            oversample: default_oversample(),
            damping: default_damping(),
            tol: default_tol(),
            max_iter: default_max_iter(),
            anderson_depth: 0,
            blowup: default_blowup(),
            init: default_init(),
        }
    }

    pub fn with_init(mut self, init: Init) -> Self {
        self.init = init;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.oversample == 0 {
            return Err(Error::invalid("oversample must be >= 1"));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::invalid(format!("damping {} outside (0, 1]", self.damping)));
        }
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(Error::invalid("tol must be positive"));
        }
        if self.max_iter == 0 {
            return Err(Error::invalid("max_iter must be >= 1"));
        }
        if !(self.blowup > 0.0) {
            return Err(Error::invalid("blowup threshold must be positive"));
        }
        match &self.init {
            Init::Constant(c) if !c.is_finite() => Err(Error::invalid("init constant must be finite")),
            Init::ConstantPair(a, b) if !(a.is_finite() && b.is_finite()) => {
                Err(Error::invalid("init constants must be finite"))
            }
            _ => Ok(()),
        }
    }
}

/// How a solve ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    Converged,
    Blowup,
    MaxIterations,
}

impl Outcome {
    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Converged => "Converged",
            Outcome::Blowup => "Blowup",
            Outcome::MaxIterations => "MaxIterations",
        }
    }
}

impl std::fmt::Display for Outcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Outcome {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "Converged" => Ok(Outcome::Converged),
            "Blowup" => Ok(Outcome::Blowup),
            "MaxIterations" => Ok(Outcome::MaxIterations),
            _ => Err(Error::Parse(format!("unknown outcome {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, thiserror::Error)]
pub enum SolveError {
    #[error("no convergence in {} iterations (last residual {:e})", history.len(), history.last().copied().unwrap_or(f64::NAN))]
    MaxIterations { history: Vec<f64> },

    #[error("iterate sup norm {linf:e} exceeded the blow-up threshold at iteration {iteration}")]
    Blowup { iteration: usize, linf: f64 },

    #[error("non-finite iterate at iteration {iteration}")]
    NonFinite { iteration: usize },
}

impl SolveError {
    /// Non-finite iterates count as blow-up.
    pub fn outcome(&self) -> Outcome {
        match self {
            SolveError::MaxIterations { .. } => Outcome::MaxIterations,
            SolveError::Blowup { .. } | SolveError::NonFinite { .. } => Outcome::Blowup,
        }
    }
}

/// A converged pair of traces with the Neumann data they induce.
#[derive(Debug, Clone)]
pub struct SolutionPair {
    pub u: BoundaryField,
    pub v: BoundaryField,
    /// `f(., v)`; samples are authoritative.
    pub fu: BoundaryField,
    /// `g(., u)`; samples are authoritative.
    pub gv: BoundaryField,
    pub f: Nonlinearity,
    pub g: Nonlinearity,
    pub iterations: usize,
    pub residual: f64,
    pub history: Vec<f64>,
}

impl SolutionPair {
    /// Rebuild a pair from stored trace coefficients, recomputing the
    /// Neumann data and the one-step residual.
    pub fn from_traces(
        f: Nonlinearity,
        g: Nonlinearity,
        grid: Arc<SphereGrid>,
        u: &HarmonicCoeffs,
        v: &HarmonicCoeffs,
    ) -> Result<Self> {
        let map = CoupledMap::new(&f, &g, grid)?;
        let x = map.pack(u, v);
        let eval = map.eval(&x)?;
        let residual = map.residual_norm(&x, &eval.next);
        let (u, v) = (map.field(&x, 0)?, map.field(&x, 1)?);
        Ok(Self { u, v, fu: eval.fu, gv: eval.gv, f, g, iterations: 0, residual, history: vec![residual] })
    }

    pub fn l_max(&self) -> usize {
        self.u.coeffs().l_max()
    }

    pub fn grid(&self) -> &Arc<SphereGrid> {
        self.u.grid()
    }
}

/// `K h`: multiply every degree block by `lambda_l`.
pub fn apply_ntd(h: &BoundaryField) -> Result<BoundaryField> {
    let spectrum = NtdSpectrum::new(h.coeffs().l_max())?;
    BoundaryField::from_coeffs(h.grid().clone(), &spectrum.apply(h.coeffs())?)
}

struct MapEval {
    next: Vec<f64>,
    fu: BoundaryField,
    gv: BoundaryField,
}

/// The map `(u, v) -> (K f(., v), K g(., u))` on packed coefficient vectors.
struct CoupledMap<'a> {
    f: &'a Nonlinearity,
    g: &'a Nonlinearity,
    grid: Arc<SphereGrid>,
    spectrum: NtdSpectrum,
    wf: Vec<f64>,
    wg: Vec<f64>,
    n: usize,
}

impl<'a> CoupledMap<'a> {
    fn new(f: &'a Nonlinearity, g: &'a Nonlinearity, grid: Arc<SphereGrid>) -> Result<Self> {
        let l_max = grid.l_max();
        Ok(Self {
            wf: f.weight_values(&grid)?,
            wg: g.weight_values(&grid)?,
            spectrum: NtdSpectrum::new(l_max)?,
            n: coeff_count(l_max),
            f,
            g,
            grid,
        })
    }

    fn pack(&self, u: &HarmonicCoeffs, v: &HarmonicCoeffs) -> Vec<f64> {
        let l = self.grid.l_max();
        let mut x = u.resized(l).into_vec();
        x.extend(v.resized(l).into_vec());
        x
    }

    fn coeffs(&self, x: &[f64], which: usize) -> HarmonicCoeffs {
        let part = &x[which * self.n..(which + 1) * self.n];
        HarmonicCoeffs::from_vec(self.grid.l_max(), part.to_vec()).expect("packed length")
    }

    fn field(&self, x: &[f64], which: usize) -> Result<BoundaryField> {
        BoundaryField::from_coeffs(self.grid.clone(), &self.coeffs(x, which))
    }

    /// Grid samples of both traces.
    fn samples(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        Ok((self.grid.synthesize(&self.coeffs(x, 0))?, self.grid.synthesize(&self.coeffs(x, 1))?))
    }

    fn eval_samples(&self, u: &[f64], v: &[f64], iteration: usize) -> Result<MapEval> {
        let fv: Vec<f64> = v.iter().zip(&self.wf).map(|(&s, &w)| self.f.eval(w, s)).collect();
        let gu: Vec<f64> = u.iter().zip(&self.wg).map(|(&s, &w)| self.g.eval(w, s)).collect();
        if fv.iter().chain(&gu).any(|x| !x.is_finite()) {
            return Err(SolveError::NonFinite { iteration }.into());
        }
        let fu = BoundaryField::from_values(self.grid.clone(), fv)?;
        let gv = BoundaryField::from_values(self.grid.clone(), gu)?;
        let mut next = self.spectrum.apply(fu.coeffs())?.into_vec();
        next.extend(self.spectrum.apply(gv.coeffs())?.into_vec());
        Ok(MapEval { next, fu, gv })
    }

    fn eval(&self, x: &[f64]) -> Result<MapEval> {
        let (u, v) = self.samples(x)?;
        self.eval_samples(&u, &v, 0)
    }

    /// `max(||u - K f(v)||, ||v - K g(u)||)` in `L^2(∂B)`.
    fn residual_norm(&self, x: &[f64], next: &[f64]) -> f64 {
        let n = self.n;
        let part = |k: usize| {
            x[k * n..(k + 1) * n]
                .iter()
                .zip(&next[k * n..(k + 1) * n])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
        };
        part(0).max(part(1))
    }
}

fn initial_state(cfg: &SolverConfig, l_max: usize) -> Result<Vec<f64>> {
    let n = coeff_count(l_max);
    let c0 = (4.0 * PI).sqrt();
    let mut x = vec![0.0; 2 * n];
    match &cfg.init {
        Init::Zero => {}
        Init::Constant(c) => {
            x[0] = c * c0;
            x[n] = c * c0;
        }
        Init::ConstantPair(a, b) => {
            x[0] = a * c0;
            x[n] = b * c0;
        }
        Init::Field(spec) => {
            let c = spec.coeffs(l_max)?.into_vec();
            x[..n].copy_from_slice(&c);
            x[n..].copy_from_slice(&c);
        }
    }
    Ok(x)
}

/// Solve `A gamma = rhs` for a small dense SPD-ish system by Gaussian
/// elimination with partial pivoting. Returns `None` when singular.
fn solve_small(mut a: Vec<Vec<f64>>, mut rhs: Vec<f64>) -> Option<Vec<f64>> {
    let m = rhs.len();
    for col in 0..m {
        let piv = (col..m).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, piv);
        rhs.swap(col, piv);
        for row in col + 1..m {
            let factor = a[row][col] / a[col][col];
            for k in col..m {
                a[row][k] -= factor * a[col][k];
            }
            rhs[row] -= factor * rhs[col];
        }
    }
    let mut out = vec![0.0; m];
    for row in (0..m).rev() {
        let s: f64 = (row + 1..m).map(|k| a[row][k] * out[k]).sum();
        out[row] = (rhs[row] - s) / a[row][row];
    }
    out.iter().all(|g| g.is_finite()).then_some(out)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Damped Picard iteration with optional Anderson mixing. `iterations`
/// counts evaluations of the map, including the one that certified
/// convergence.
pub fn solve_coupled(f: &Nonlinearity, g: &Nonlinearity, cfg: &SolverConfig) -> Result<SolutionPair> {
    cfg.validate()?;
    let grid = Arc::new(SphereGrid::with_oversample(cfg.l_max, cfg.oversample)?);
    let map = CoupledMap::new(f, g, grid.clone())?;
    let mut x = initial_state(cfg, cfg.l_max)?;
    let theta = cfg.damping;
    let depth = cfg.anderson_depth;
    let mut history = Vec::new();
    let mut dx: Vec<Vec<f64>> = Vec::new();
    let mut dr: Vec<Vec<f64>> = Vec::new();
    let mut prev: Option<(Vec<f64>, Vec<f64>)> = None;

    for iteration in 1..=cfg.max_iter {
        let (us, vs) = map.samples(&x)?;
        let linf = us.iter().chain(&vs).fold(0.0f64, |m, s| m.max(s.abs()));
        if !linf.is_finite() {
            return Err(SolveError::NonFinite { iteration }.into());
        }
        if linf > cfg.blowup {
            return Err(SolveError::Blowup { iteration, linf }.into());
        }
        let eval = map.eval_samples(&us, &vs, iteration)?;
        let res_norm = map.residual_norm(&x, &eval.next);
        history.push(res_norm);
        if !res_norm.is_finite() {
            return Err(SolveError::NonFinite { iteration }.into());
        }
        if res_norm <= cfg.tol {
            let (u, v) = (map.field(&x, 0)?, map.field(&x, 1)?);
            return Ok(SolutionPair {
                u,
                v,
                fu: eval.fu,
                gv: eval.gv,
                f: f.clone(),
                g: g.clone(),
                iterations: iteration,
                residual: res_norm,
                history,
            });
        }
        let r: Vec<f64> = eval.next.iter().zip(&x).map(|(a, b)| a - b).collect();
        let mut step: Vec<f64> = r.iter().map(|ri| theta * ri).collect();
        if depth > 0 {
            if let Some((px, pr)) = prev.take() {
                dx.push(x.iter().zip(&px).map(|(a, b)| a - b).collect());
                dr.push(r.iter().zip(&pr).map(|(a, b)| a - b).collect());
                if dx.len() > depth {
                    dx.remove(0);
                    dr.remove(0);
                }
            }
            if !dr.is_empty() {
                let m = dr.len();
                let mut gram: Vec<Vec<f64>> = (0..m).map(|i| (0..m).map(|j| dot(&dr[i], &dr[j])).collect()).collect();
                let ridge = ANDERSON_RIDGE * (0..m).map(|i| gram[i][i]).sum::<f64>().max(1e-300);
                for (i, row) in gram.iter_mut().enumerate() {
                    row[i] += ridge;
                }
                let rhs: Vec<f64> = dr.iter().map(|d| dot(d, &r)).collect();
                if let Some(gamma) = solve_small(gram, rhs) {
                    for (j, gj) in gamma.iter().enumerate() {
                        for ((s, a), b) in step.iter_mut().zip(&dx[j]).zip(&dr[j]) {
                            *s -= gj * (a + theta * b);
                        }
                    }
                } else {
                    dx.clear();
                    dr.clear();
                }
            }
            prev = Some((x.clone(), r));
        }
        for (xi, si) in x.iter_mut().zip(&step) {
            *xi += si;
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(SolveError::NonFinite { iteration }.into());
        }
    }
    Err(SolveError::MaxIterations { history }.into())
}

/// One undamped step from a solution: `(||K f(v) - u||, ||K g(u) - v||)`.
pub fn fixed_point_step(sol: &SolutionPair) -> Result<(f64, f64)> {
    let map = CoupledMap::new(&sol.f, &sol.g, sol.grid().clone())?;
    let x = map.pack(sol.u.coeffs(), sol.v.coeffs());
    let eval = map.eval(&x)?;
    let n = map.n;
    let d = |k: usize| {
        x[k * n..(k + 1) * n]
            .iter()
            .zip(&eval.next[k * n..(k + 1) * n])
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    };
    Ok((d(0), d(1)))
}

/// Max over `Y_lm`, `l <= test_band`, of the weak-form defect
/// `|∫_B ∇u·∇φ + u φ - ∫_∂B f(x, v) φ|` (and likewise for `v`), where `φ` is
/// the solution of the homogeneous equation with trace `Y_lm`. Both volume
/// integrals are evaluated by brute-force quadrature on the ball.
pub fn weak_residual(sol: &SolutionPair, test_band: usize) -> Result<f64> {
    let l_max = sol.l_max();
    let band = l_max.max(test_band);
    let volume = VolumeSamples::new(Arc::new(SphereGrid::with_oversample(band, 2)?), DEFAULT_RADIAL_NODES)?;
    let eu = crate::fields::evaluate_in_ball(&volume, sol.u.coeffs())?;
    let ev = crate::fields::evaluate_in_ball(&volume, sol.v.coeffs())?;
    let vgrid = volume.grid().clone();
    let profiles: Vec<RadialProfile> = volume
        .radii()
        .iter()
        .map(|&r| RadialProfile::new(test_band, r))
        .collect::<Result<_>>()?;
    let bgrid = sol.grid().clone();
    let lm: Vec<(usize, i64)> = (0..=test_band)
        .flat_map(|l| (-(l as i64)..=l as i64).map(move |m| (l, m)))
        .collect();
    let defects = par::map_slice(&lm, |&(l, m)| {
        let (nt, np) = (vgrid.n_theta(), vgrid.n_phi());
        let mut y = Vec::with_capacity(vgrid.len());
        for j in 0..nt {
            for k in 0..np {
                y.push(vgrid.ylm_with_gradient(l, m, j, k));
            }
        }
        let n = vgrid.len();
        let volume_term = |e: &crate::fields::VolumeEval| {
            let mut total = 0.0;
            for (shell, prof) in profiles.iter().enumerate() {
                let r = volume.radii()[shell];
                let (g, dg) = (prof.value[l], prof.deriv[l]);
                let wr = volume.radial_weights()[shell];
                let mut s = 0.0;
                for j in 0..nt {
                    let mut row = 0.0;
                    for k in 0..np {
                        let i = j * np + k;
                        let idx = shell * n + i;
                        let (yv, yt, yp) = y[i];
                        row += e.d_r[idx] * dg * yv
                            + (e.d_theta[idx] * yt + e.d_phi[idx] * yp) * g / r
                            + e.value[idx] * g * yv;
                    }
                    s += vgrid.weight(j) * row;
                }
                total += wr * s;
            }
            total
        };
        let boundary_term = |h: &BoundaryField| {
            let vals: Vec<f64> = (0..bgrid.len())
                .map(|i| h.values()[i] * bgrid.ylm(l, m, i / bgrid.n_phi(), i % bgrid.n_phi()))
                .collect();
            bgrid.integrate(&vals)
        };
        let du = (volume_term(&eu) - boundary_term(&sol.fu)).abs();
        let dv = (volume_term(&ev) - boundary_term(&sol.gv)).abs();
        du.max(dv)
    });
    Ok(defects.into_iter().fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::E;

    fn lambda0() -> f64 {
        (E * E - 1.0) / 2.0
    }

    fn const_of(f: &BoundaryField) -> f64 {
        f.coeffs().get(0, 0) / (4.0 * PI).sqrt()
    }

    #[test]
    fn ntd_application() {
        let g = Arc::new(SphereGrid::with_oversample(6, 2).unwrap());
        let one = BoundaryField::constant(g.clone(), 1.0);
        let k1 = apply_ntd(&one).unwrap();
        assert!(k1.values().iter().all(|&v| (v - lambda0()).abs() < 1e-12));
        assert!((lambda0() - 3.194528).abs() < 1e-6);
        let y53 = BoundaryField::from_coeffs(g.clone(), &HarmonicCoeffs::single(6, 5, 3, 1.0).unwrap()).unwrap();
        let ky = apply_ntd(&y53).unwrap();
        let lam5 = NtdSpectrum::new(6).unwrap().get(5);
        for (l, m, c) in ky.coeffs().iter() {
            let expected = if (l, m) == (5, 3) { lam5 } else { 0.0 };
            assert!((c - expected).abs() < 1e-14);
        }
        let zero = BoundaryField::constant(g, 0.0);
        assert!(apply_ntd(&zero).unwrap().values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_is_a_fixed_point() {
        let f = Nonlinearity::pure_power_odd(3.0, 2.5).unwrap();
        let sol = solve_coupled(&f, &f, &SolverConfig::new(4)).unwrap();
        assert_eq!(sol.iterations, 1);
        assert_eq!(sol.residual, 0.0);
        assert!(sol.u.values().iter().chain(sol.v.values()).all(|&x| x == 0.0));
    }

    /// Independent scalar Newton solve of `U = c (1 + U^2)` (the symmetric
    /// branch of the constant system with `c = lambda0 b`).
    fn scalar_newton(c: f64) -> f64 {
        let mut u = 0.0;
        for _ in 0..100 {
            let r = u - c * (1.0 + u * u);
            let d = 1.0 - 2.0 * c * u;
            u -= r / d;
        }
        u
    }

    #[test]
    fn affine_power_constant_solution() {
        let b = 0.1 / lambda0();
        let f = Nonlinearity::affine_power(b, 2.0).unwrap();
        let sol = solve_coupled(&f, &f, &SolverConfig::new(4)).unwrap();
        let oracle = scalar_newton(0.1);
        assert!((oracle - (1.0 - 0.96f64.sqrt()) / 0.2).abs() < 1e-15);
        assert!((const_of(&sol.u) / oracle - 1.0).abs() < 1e-9);
        assert!((const_of(&sol.v) / oracle - 1.0).abs() < 1e-9);
        assert!(sol.residual <= 1e-10);
        assert!(weak_residual(&sol, 2).unwrap() < 1e-8);
    }

    #[test]
    fn pure_power_constant_solution() {
        let (b1, b2) = (0.2, 0.2);
        let l0 = lambda0();
        let ustar = (l0 * b1 * (l0 * b2).powi(2)).powf(-1.0 / 3.0);
        let vstar = l0 * b2 * ustar * ustar;
        let f = Nonlinearity::pure_power_odd(b1, 2.0).unwrap();
        let g = Nonlinearity::pure_power_odd(b2, 2.0).unwrap();
        let cfg = SolverConfig::new(4).with_init(Init::Constant(ustar));
        let sol = solve_coupled(&f, &g, &cfg).unwrap();
        assert!((const_of(&sol.u) / ustar - 1.0).abs() < 1e-9);
        assert!((const_of(&sol.v) / vstar - 1.0).abs() < 1e-9);
    }

    #[test]
    fn anderson_finds_unsymmetric_pure_power_solution() {
        let (b1, b2) = (0.3, 0.15);
        let l0 = lambda0();
        let ustar = (l0 * b1 * (l0 * b2).powi(2)).powf(-1.0 / 3.0);
        let vstar = l0 * b2 * ustar * ustar;
        let f = Nonlinearity::pure_power_odd(b1, 2.0).unwrap();
        let g = Nonlinearity::pure_power_odd(b2, 2.0).unwrap();
        let mut cfg = SolverConfig::new(4).with_init(Init::ConstantPair(1.05 * ustar, 0.95 * vstar));
        cfg.anderson_depth = 5;
        let sol = solve_coupled(&f, &g, &cfg).unwrap();
        assert!((const_of(&sol.u) / ustar - 1.0).abs() < 1e-9);
        assert!((const_of(&sol.v) / vstar - 1.0).abs() < 1e-9);
    }

    #[test]
    fn picard_leaves_unstable_fixed_point() {
        let (b1, b2) = (0.3, 0.15);
        let l0 = lambda0();
        let ustar = (l0 * b1 * (l0 * b2).powi(2)).powf(-1.0 / 3.0);
        let f = Nonlinearity::pure_power_odd(b1, 2.0).unwrap();
        let g = Nonlinearity::pure_power_odd(b2, 2.0).unwrap();
        let mut cfg = SolverConfig::new(2).with_init(Init::Constant(1.5 * ustar));
        cfg.damping = 1.0;
        cfg.max_iter = 200;
        let err = solve_coupled(&f, &g, &cfg).unwrap_err();
        assert!(matches!(err, Error::Solve(SolveError::Blowup { .. } | SolveError::NonFinite { .. })));
    }

    #[test]
    fn max_iterations_carries_history() {
        let f = Nonlinearity::affine_power(0.1 / lambda0(), 2.0).unwrap();
        let mut cfg = SolverConfig::new(2);
        cfg.max_iter = 3;
        match solve_coupled(&f, &f, &cfg) {
            Err(Error::Solve(SolveError::MaxIterations { history })) => {
                assert_eq!(history.len(), 3);
                assert!(history[2] < history[0]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn growth_bound_sampled() {
        let g = Arc::new(SphereGrid::with_oversample(6, 2).unwrap());
        let w = FieldSpec::Random { seed: 9, amplitude: 0.4, offset: 0.5, decay: 1.0 }.build(g).unwrap();
        let kinds = [
            Nonlinearity::pure_power_odd(1.3, 2.5).unwrap(),
            Nonlinearity::affine_power(0.7, 1.5).unwrap(),
            Nonlinearity::saturated(2.0, 3.0, 1.2).unwrap(),
            Nonlinearity::weighted(0.9, 2.0, &w).unwrap(),
        ];
        for nl in &kinds {
            for i in 0..400 {
                let s = -20.0 + 0.1 * i as f64;
                for wv in [-1.0, -0.3, 0.0, 0.8, 1.0] {
                    assert!(nl.eval(wv, s).abs() <= nl.growth_bound(s) * (1.0 + 1e-12));
                }
            }
        }
    }

    #[test]
    fn invalid_configs_rejected() {
        assert!(Nonlinearity::affine_power(0.0, 2.0).is_err());
        assert!(Nonlinearity::affine_power(1.0, 1.0).is_err());
        assert!(Nonlinearity::saturated(1.0, 2.0, 0.0).is_err());
        let big = HarmonicCoeffs::single(2, 0, 0, 2.0 * (4.0 * PI).sqrt()).unwrap();
        assert!(Nonlinearity::weighted_coeffs(1.0, 2.0, big).is_err());
        let f = Nonlinearity::affine_power(1.0, 2.0).unwrap();
        let mut cfg = SolverConfig::new(2);
        cfg.damping = 0.0;
        assert!(matches!(solve_coupled(&f, &f, &cfg), Err(Error::InvalidParams(_))));
    }

    #[test]
    fn config_parses_from_toml() {
        let src = r#"
            Lmax = 8
            damping = 0.7
            init = { Constant = 0.25 }
        "#;
        let cfg: SolverConfig = toml::from_str(src).unwrap();
        assert_eq!(cfg.l_max, 8);
        assert_eq!(cfg.oversample, 3);
        assert_eq!(cfg.init, Init::Constant(0.25));
        let nl: NonlinearityConfig = toml::from_str("kind = \"Saturated\"\nb = 1.0\np = 2.0\nM = 3.0").unwrap();
        assert_eq!(nl.build(4).unwrap().kind, NonlinearityKind::Saturated { cap: 3.0 });
        let bad: NonlinearityConfig = toml::from_str("kind = \"Cubic\"\nb = 1.0\np = 2.0").unwrap();
        assert!(bad.build(4).is_err());
    }

    #[test]
    fn from_traces_reproduces_solution() {
        let f = Nonlinearity::affine_power(0.05 / lambda0(), 2.0).unwrap();
        let sol = solve_coupled(&f, &f, &SolverConfig::new(3)).unwrap();
        let back = SolutionPair::from_traces(f.clone(), f, sol.grid().clone(), sol.u.coeffs(), sol.v.coeffs()).unwrap();
        assert!(back.residual <= 2e-10);
        let (du, dv) = fixed_point_step(&sol).unwrap();
        assert!(du <= 2.0 * 1e-10 && dv <= 2.0 * 1e-10);
    }
}
