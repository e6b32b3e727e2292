//! Boundary and volume fields on the unit ball and the norms used by the
//! a priori estimates: `L^r(∂B)`, `L^q(B)`, `H^1(B)`, `W^{1,m}(B)` and sup
//! norms, plus the linearized coefficient fields `a(x)`.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;
use crate::sphere::quadrature::gauss_legendre_interval;
use crate::sphere::{
    coeff_count, eval_point, normalized_legendre, HarmonicCoeffs, NtdSpectrum, RadialProfile,
    SphereGrid, Synthesis,
};

/// Default number of radial Gauss-Legendre nodes in the ball.
pub const DEFAULT_RADIAL_NODES: usize = 48;

/// Oversampling of the grid used to locate sup norms.
pub const SUP_OVERSAMPLE: usize = 3;

/// Relative tolerance on the NtD relation between trace and Neumann data.
pub const NTD_RELATION_TOL: f64 = 1e-8;

/// Samples of a function on `∂B` together with its harmonic projection.
///
/// For band-limited content the two agree; for aliased content (pointwise
/// nonlinearities) the stored values are authoritative and the coefficients
/// are their quadrature projection.
#[derive(Debug, Clone)]
pub struct BoundaryField {
    grid: Arc<SphereGrid>,
    values: Vec<f64>,
    coeffs: HarmonicCoeffs,
}

impl BoundaryField {
    pub fn from_coeffs(grid: Arc<SphereGrid>, coeffs: &HarmonicCoeffs) -> Result<Self> {
        let values = grid.synthesize(coeffs)?;
        let coeffs = coeffs.resized(grid.l_max());
        Ok(Self {
            grid,
            values,
            coeffs,
        })
    }

    pub fn from_values(grid: Arc<SphereGrid>, values: Vec<f64>) -> Result<Self> {
        let coeffs = grid.analyze(&values)?;
        Ok(Self {
            grid,
            values,
            coeffs,
        })
    }

    pub fn constant(grid: Arc<SphereGrid>, c: f64) -> Self {
        let mut coeffs = HarmonicCoeffs::zeros(grid.l_max());
        coeffs.set(0, 0, c * (4.0 * PI).sqrt());
        let values = vec![c; grid.len()];
        Self {
            grid,
            values,
            coeffs,
        }
    }

    pub fn grid(&self) -> &Arc<SphereGrid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn coeffs(&self) -> &HarmonicCoeffs {
        &self.coeffs
    }

    pub fn integrate(&self) -> f64 {
        self.grid.integrate(&self.values)
    }

    /// Pointwise map of the samples; the result is aliased in general.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::from_values(self.grid.clone(), self.values.iter().map(|&v| f(v)).collect())
    }

    /// Max relative deviation between the stored samples and the synthesis
    /// of the stored coefficients.
    pub fn sync_defect(&self) -> f64 {
        let synth = self.grid.synthesize(&self.coeffs).expect("band matches grid");
        let scale = self.values.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
        self.values
            .iter()
            .zip(&synth)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
            / scale
    }
}

/// A boundary Lebesgue exponent, `r >= 1` or infinity.
fn check_exponent(r: f64) -> Result<()> {
    if r.is_nan() || r < 1.0 {
        return Err(Error::invalid(format!("Lebesgue exponent {r} must be >= 1")));
    }
    Ok(())
}

/// `(∫ |w|^r)^{1/r}` for quadrature weights `w_i` and samples `f_i`,
/// evaluated with the max factored out so large `r` does not overflow.
fn weighted_lr(weights: impl Iterator<Item = f64>, values: &[f64], r: f64) -> f64 {
    let max = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if max == 0.0 {
        return 0.0;
    }
    let s: f64 = weights
        .zip(values)
        .map(|(w, v)| w * (v.abs() / max).powf(r))
        .sum();
    max * s.powf(1.0 / r)
}

/// `||f||_{L^r(∂B)}` by quadrature on the field's grid; `r = ∞` gives the
/// refined sup norm of [`sup_norm`].
pub fn boundary_norm(field: &BoundaryField, r: f64) -> Result<f64> {
    check_exponent(r)?;
    if r.is_infinite() {
        return Ok(sup_norm(field));
    }
    let grid = &field.grid;
    let n_phi = grid.n_phi();
    Ok(weighted_lr(
        (0..grid.len()).map(|i| grid.weight(i / n_phi)),
        &field.values,
        r,
    ))
}

/// Max of `|f|` over `∂B`: a 3x oversampled equiangular search grid that
/// includes both poles, followed by a local pattern search around the best
/// nodes. The result is attained at a point, so it never exceeds the true
/// sup. For aliased fields the stored samples also take part.
pub fn sup_norm(field: &BoundaryField) -> f64 {
    let stored = field.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    stored.max(sup_of_expansion(&field.coeffs))
}

/// Refined max of `|sum c_lm Y_lm|` over the sphere.
pub fn sup_of_expansion(coeffs: &HarmonicCoeffs) -> f64 {
    let l_max = coeffs.l_max();
    if coeffs.as_slice().iter().all(|&c| c == 0.0) {
        return 0.0;
    }
    if l_max == 0 {
        return coeffs.get(0, 0).abs() / (4.0 * PI).sqrt();
    }
    let n_theta = SUP_OVERSAMPLE * (l_max + 1) + 1;
    let n_phi = SUP_OVERSAMPLE * (2 * l_max + 1);
    let dtheta = PI / (n_theta - 1) as f64;
    let dphi = 2.0 * PI / n_phi as f64;
    let rows: Vec<Vec<f64>> = par::map_range(n_theta, |j| {
        let theta = j as f64 * dtheta;
        let p = normalized_legendre(l_max, theta.cos());
        (0..n_phi)
            .map(|k| eval_with_table(coeffs, &p, k as f64 * dphi).abs())
            .collect()
    });
    let mut cands: Vec<(f64, f64, f64)> = Vec::with_capacity(n_theta * n_phi);
    for (j, row) in rows.iter().enumerate() {
        for (k, &v) in row.iter().enumerate() {
            cands.push((v, j as f64 * dtheta, k as f64 * dphi));
        }
    }
    cands.sort_by(|a, b| b.0.total_cmp(&a.0));
    let best_grid = cands[0].0;
    let refined = par::map_slice(&cands[..cands.len().min(8)], |&(v, t, p)| {
        pattern_search(coeffs, v, t, p, dtheta.max(dphi))
    });
    refined.into_iter().fold(best_grid, f64::max)
}

fn eval_with_table(coeffs: &HarmonicCoeffs, p: &[f64], phi: f64) -> f64 {
    let mut acc = 0.0;
    let mut idx = 0;
    for l in 0..=coeffs.l_max() {
        acc += coeffs.get(l, 0) * p[idx];
        for m in 1..=l {
            let (s, c) = (m as f64 * phi).sin_cos();
            let mi = m as i64;
            acc += std::f64::consts::SQRT_2 * p[idx + m] * (coeffs.get(l, mi) * c + coeffs.get(l, -mi) * s);
        }
        idx += l + 1;
    }
    acc
}

/// Compass search maximizing `|f|` from `(theta, phi)`.
fn pattern_search(coeffs: &HarmonicCoeffs, start: f64, theta: f64, phi: f64, step0: f64) -> f64 {
    let f = |t: f64, p: f64| eval_point(coeffs, t.clamp(0.0, PI), p).abs();
    let (mut t, mut p, mut best) = (theta, phi, start);
    let mut step = step0;
    while step > 1e-10 {
        let mut moved = false;
        for (dt, dp) in [(step, 0.0), (-step, 0.0), (0.0, step), (0.0, -step)] {
            let nt = (t + dt).clamp(0.0, PI);
            let v = f(nt, p + dp);
            if v > best {
                best = v;
                t = nt;
                p += dp;
                moved = true;
                break;
            }
        }
        if !moved {
            step *= 0.5;
        }
    }
    best
}

/// Radial Gauss-Legendre shells in `(0, 1)` carrying a sphere grid each.
/// The radial weights include the Jacobian `r^2`.
#[derive(Debug, Clone)]
pub struct VolumeSamples {
    grid: Arc<SphereGrid>,
    radii: Vec<f64>,
    radial_weights: Vec<f64>,
}

impl VolumeSamples {
    pub fn new(grid: Arc<SphereGrid>, n_radial: usize) -> Result<Self> {
        if n_radial == 0 {
            return Err(Error::invalid("at least one radial node is required"));
        }
        let (radii, w) = gauss_legendre_interval(n_radial, 0.0, 1.0);
        let radial_weights = radii.iter().zip(&w).map(|(r, w)| w * r * r).collect();
        Ok(Self {
            grid,
            radii,
            radial_weights,
        })
    }

    /// Default layout: 48 radial nodes on a 2x oversampled shell grid.
    pub fn standard(l_max: usize) -> Result<Self> {
        Self::new(Arc::new(SphereGrid::with_oversample(l_max, 2)?), DEFAULT_RADIAL_NODES)
    }

    pub fn grid(&self) -> &Arc<SphereGrid> {
        &self.grid
    }

    pub fn radii(&self) -> &[f64] {
        &self.radii
    }

    /// Radial weights including `r^2`.
    pub fn radial_weights(&self) -> &[f64] {
        &self.radial_weights
    }

    pub fn n_shells(&self) -> usize {
        self.radii.len()
    }

    /// Number of sample points, `shells * grid nodes`.
    pub fn len(&self) -> usize {
        self.radii.len() * self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Quadrature weight of flat sample index `idx`.
    #[inline]
    pub fn weight(&self, idx: usize) -> f64 {
        let n = self.grid.len();
        let (shell, node) = (idx / n, idx % n);
        self.radial_weights[shell] * self.grid.weight(node / self.grid.n_phi())
    }

    /// `∫_B f` where `f` is given per flat sample index.
    pub fn integrate(&self, f: impl Fn(usize) -> f64) -> f64 {
        let n = self.grid.len();
        let n_phi = self.grid.n_phi();
        let mut total = 0.0;
        for (shell, wr) in self.radial_weights.iter().enumerate() {
            let mut shell_sum = 0.0;
            for j in 0..self.grid.n_theta() {
                let base = shell * n + j * n_phi;
                let row: f64 = (0..n_phi).map(|k| f(base + k)).sum();
                shell_sum += self.grid.weight(j) * row;
            }
            total += wr * shell_sum;
        }
        total
    }

    pub fn volume(&self) -> f64 {
        self.integrate(|_| 1.0)
    }
}

/// A solution of `-Δu + u = 0` sampled on [`VolumeSamples`], with its
/// gradient in the orthonormal spherical frame `(r, theta, phi)`. All arrays
/// are flat, shell-major.
#[derive(Debug, Clone)]
pub struct VolumeEval {
    pub value: Vec<f64>,
    pub d_r: Vec<f64>,
    pub d_theta: Vec<f64>,
    pub d_phi: Vec<f64>,
}

impl VolumeEval {
    #[inline]
    pub fn grad_sq(&self, i: usize) -> f64 {
        self.d_r[i] * self.d_r[i] + self.d_theta[i] * self.d_theta[i] + self.d_phi[i] * self.d_phi[i]
    }

    #[inline]
    pub fn grad_dot(&self, other: &VolumeEval, i: usize) -> f64 {
        self.d_r[i] * other.d_r[i] + self.d_theta[i] * other.d_theta[i] + self.d_phi[i] * other.d_phi[i]
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

/// Evaluate the solution with Dirichlet trace `trace` and its analytic
/// gradient: radial derivatives from `i_l'(r) / i_l(1)` and tangential
/// derivatives of `Y_lm`.
pub fn evaluate_in_ball(volume: &VolumeSamples, trace: &HarmonicCoeffs) -> Result<VolumeEval> {
    let grid = &volume.grid;
    if trace.l_max() > grid.l_max() {
        return Err(Error::BandLimitMismatch {
            expected: grid.l_max(),
            got: trace.l_max(),
        });
    }
    let shells = par::map_slice(&volume.radii, |&r| -> Result<[Vec<f64>; 4]> {
        let profile = RadialProfile::new(trace.l_max(), r)?;
        let c = trace.scale_by_degree(|l| profile.value[l]);
        let dc = trace.scale_by_degree(|l| profile.deriv[l]);
        let value = grid.synthesize_kind(&c, Synthesis::Value)?;
        let d_r = grid.synthesize_kind(&dc, Synthesis::Value)?;
        let mut d_theta = grid.synthesize_kind(&c, Synthesis::DTheta)?;
        let mut d_phi = grid.synthesize_kind(&c, Synthesis::DPhiOverSin)?;
        d_theta.iter_mut().for_each(|x| *x /= r);
        d_phi.iter_mut().for_each(|x| *x /= r);
        Ok([value, d_r, d_theta, d_phi])
    });
    let mut out = VolumeEval {
        value: Vec::with_capacity(volume.len()),
        d_r: Vec::with_capacity(volume.len()),
        d_theta: Vec::with_capacity(volume.len()),
        d_phi: Vec::with_capacity(volume.len()),
    };
    for shell in shells {
        let [v, dr, dt, dp] = shell?;
        out.value.extend(v);
        out.d_r.extend(dr);
        out.d_theta.extend(dt);
        out.d_phi.extend(dp);
    }
    Ok(out)
}

/// `||u||_{L^q(B)}`.
pub fn volume_lq(volume: &VolumeSamples, eval: &VolumeEval, q: f64) -> Result<f64> {
    check_exponent(q)?;
    if q.is_infinite() {
        return Ok(eval.value.iter().fold(0.0, |m, v| m.max(v.abs())));
    }
    Ok(weighted_lr((0..eval.len()).map(|i| volume.weight(i)), &eval.value, q))
}

/// `(||∇u||_{L^m}^m + ||u||_{L^m}^m)^{1/m}` with `|∇u|` the Euclidean length.
pub fn volume_w1m(volume: &VolumeSamples, eval: &VolumeEval, m: f64) -> Result<f64> {
    check_exponent(m)?;
    if m.is_infinite() {
        return Err(Error::invalid("W^{1,m} norm needs a finite m"));
    }
    let s = volume.integrate(|i| eval.grad_sq(i).powf(0.5 * m) + eval.value[i].abs().powf(m));
    Ok(s.powf(1.0 / m))
}

/// `∫_B |∇u|^2 + u^2` by volume quadrature.
pub fn volume_h1_squared(volume: &VolumeSamples, eval: &VolumeEval) -> f64 {
    volume.integrate(|i| eval.grad_sq(i) + eval.value[i] * eval.value[i])
}

/// Exponent lists requested from [`solution_norms`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormExponents {
    pub boundary: Vec<f64>,
    pub volume: Vec<f64>,
    pub w1m: Vec<f64>,
}

impl Default for NormExponents {
    fn default() -> Self {
        // 2_* = 4, 2^* = 6 and m = 2N = 6 for N = 3.
        Self {
            boundary: vec![1.0, 2.0, 4.0, 8.0],
            volume: vec![2.0, 6.0],
            w1m: vec![2.0, 3.0, 6.0],
        }
    }
}

fn exponent_key(r: f64) -> String {
    if r.is_infinite() {
        "inf".to_string()
    } else {
        format!("{r}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormReport {
    pub boundary_lr: BTreeMap<String, f64>,
    pub volume_lq: BTreeMap<String, f64>,
    /// Spectral route `sqrt(sum lambda_l h_lm^2)`.
    pub h1: f64,
    /// Volume quadrature route `sqrt(∫ |∇u|^2 + u^2)`.
    pub h1_volume: f64,
    pub linf_boundary: f64,
    /// Sup over the closed ball: volume samples and the boundary sphere.
    pub linf_volume: f64,
    pub w1m: BTreeMap<String, f64>,
}

/// Check the NtD relation `u_lm = lambda_l h_lm`, returning the relative
/// defect.
pub fn ntd_relation_defect(
    spectrum: &NtdSpectrum,
    trace: &HarmonicCoeffs,
    neumann: &HarmonicCoeffs,
) -> Result<f64> {
    let l_max = trace.l_max().max(neumann.l_max());
    let expected = spectrum.apply(&neumann.resized(l_max))?;
    let mut diff = trace.resized(l_max);
    diff.axpy(-1.0, &expected);
    let scale = trace.norm().max(expected.norm());
    Ok(if scale == 0.0 { 0.0 } else { diff.norm() / scale })
}

/// Every norm of one homogeneous-equation solution given by its Dirichlet
/// and Neumann boundary data.
pub fn solution_norms(
    trace_u: &BoundaryField,
    neumann_h: &BoundaryField,
    volume: &VolumeSamples,
    exps: &NormExponents,
) -> Result<NormReport> {
    let l_max = trace_u.coeffs.l_max().max(neumann_h.coeffs.l_max());
    let spectrum = NtdSpectrum::new(l_max)?;
    let defect = ntd_relation_defect(&spectrum, &trace_u.coeffs, &neumann_h.coeffs)?;
    if defect > NTD_RELATION_TOL {
        return Err(Error::DataMismatch { defect });
    }
    let eval = evaluate_in_ball(volume, trace_u.coeffs())?;
    let h1 = spectrum.energy_from_neumann(&neumann_h.coeffs.resized(l_max))?.sqrt();
    let h1_volume = volume_h1_squared(volume, &eval).sqrt();

    let mut boundary_lr = BTreeMap::new();
    for &r in &exps.boundary {
        boundary_lr.insert(exponent_key(r), boundary_norm(trace_u, r)?);
    }
    let mut volume_lq = BTreeMap::new();
    for &q in &exps.volume {
        volume_lq.insert(exponent_key(q), self::volume_lq(volume, &eval, q)?);
    }
    let mut w1m = BTreeMap::new();
    for &m in &exps.w1m {
        w1m.insert(exponent_key(m), volume_w1m(volume, &eval, m)?);
    }
    let linf_boundary = sup_norm(trace_u);
    let interior = eval.value.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    Ok(NormReport {
        boundary_lr,
        volume_lq,
        h1,
        h1_volume,
        linf_boundary,
        linf_volume: interior.max(linf_boundary),
        w1m,
    })
}

/// `a(x) = b (1 + |v|^p) / (1 + |v|)`, the coefficient that linearizes a
/// growth bound of order `p` into `|f| <= a(x) (1 + |v|)`.
#[derive(Debug, Clone)]
pub struct CoefficientField {
    pub a: BoundaryField,
    /// `||a||_{L^{N-1}(∂B)}`.
    pub norm: f64,
    /// `a <= b (1 + |v|^{p-1})` held at every node.
    pub bound_holds: bool,
}

pub fn coefficient_field(v: &BoundaryField, p: f64, b: f64, n: u32) -> Result<CoefficientField> {
    if !(p > 1.0 && p.is_finite()) {
        return Err(Error::invalid(format!("exponent p = {p} must be > 1")));
    }
    if !(b > 0.0 && b.is_finite()) {
        return Err(Error::invalid(format!("coefficient b = {b} must be > 0")));
    }
    if n < 3 {
        return Err(Error::invalid(format!("dimension N = {n} must be >= 3")));
    }
    let mut bound_holds = true;
    let values: Vec<f64> = v
        .values()
        .iter()
        .map(|&s| {
            let t = s.abs();
            let a = b * (1.0 + t.powf(p)) / (1.0 + t);
            if a > b * (1.0 + t.powf(p - 1.0)) * (1.0 + 1e-14) {
                bound_holds = false;
            }
            a
        })
        .collect();
    let a = BoundaryField::from_values(v.grid().clone(), values)?;
    let norm = boundary_norm(&a, f64::from(n - 1))?;
    Ok(CoefficientField {
        a,
        norm,
        bound_holds,
    })
}

/// `(m, ||u||_{W^{1,m}(B)} / ||h||_{L^q(∂B)})` with `m = N q / (N - 1)`,
/// `N = 3`, for the solution `u` with Neumann data `h`.
pub fn neumann_estimate_ratio(h: &BoundaryField, q: f64, volume: &VolumeSamples) -> Result<(f64, f64)> {
    check_exponent(q)?;
    if q.is_infinite() {
        return Err(Error::invalid("q must be finite"));
    }
    let denom = boundary_norm(h, q)?;
    if denom == 0.0 {
        return Err(Error::ZeroData);
    }
    let spectrum = NtdSpectrum::new(h.coeffs().l_max())?;
    let trace = spectrum.apply(h.coeffs())?;
    let eval = evaluate_in_ball(volume, &trace)?;
    let m = 3.0 * q / 2.0;
    Ok((m, volume_w1m(volume, &eval, m)? / denom))
}

/// Recipe for a boundary field, used by the CLI and by test batches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum FieldSpec {
    Constant {
        value: f64,
    },
    Harmonic {
        l: usize,
        m: i64,
        #[serde(default = "one")]
        amplitude: f64,
    },
    /// Gaussian coefficients with spectral decay `(1 + l)^-decay`, rescaled
    /// so the refined sup norm equals `amplitude`, then shifted by `offset`.
    Random {
        seed: u64,
        #[serde(default = "one")]
        amplitude: f64,
        #[serde(default)]
        offset: f64,
        #[serde(default = "default_decay")]
        decay: f64,
    },
}

fn one() -> f64 {
    1.0
}

fn default_decay() -> f64 {
    1.0
}

impl FieldSpec {
    pub fn coeffs(&self, l_max: usize) -> Result<HarmonicCoeffs> {
        match *self {
            FieldSpec::Constant { value } => {
                let mut c = HarmonicCoeffs::zeros(l_max);
                c.set(0, 0, value * (4.0 * PI).sqrt());
                Ok(c)
            }
            FieldSpec::Harmonic { l, m, amplitude } => HarmonicCoeffs::single(l_max, l, m, amplitude),
            FieldSpec::Random {
                seed,
                amplitude,
                offset,
                decay,
            } => {
                let mut c = random_coeffs(l_max, seed, decay);
                let sup = sup_of_expansion(&c);
                let scale = if sup > 0.0 { amplitude / sup } else { 0.0 };
                c.as_mut_slice().iter_mut().for_each(|x| *x *= scale);
                c.set(0, 0, c.get(0, 0) + offset * (4.0 * PI).sqrt());
                Ok(c)
            }
        }
    }

    pub fn build(&self, grid: Arc<SphereGrid>) -> Result<BoundaryField> {
        let c = self.coeffs(grid.l_max())?;
        BoundaryField::from_coeffs(grid, &c)
    }
}

/// Standard-normal coefficients scaled by `(1 + l)^-decay`.
pub fn random_coeffs(l_max: usize, seed: u64, decay: f64) -> HarmonicCoeffs {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(coeff_count(l_max));
    for l in 0..=l_max {
        let s = (1.0 + l as f64).powf(-decay);
        for _ in 0..(2 * l + 1) {
            let z: f64 = StandardNormal.sample(&mut rng);
            data.push(s * z);
        }
    }
    HarmonicCoeffs::from_vec(l_max, data).expect("length matches band")
}
