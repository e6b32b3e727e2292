//! Exponent calculus for the coupled system with boundary growth
//! `|f| <= b1 (1 + |s|^p2)`, `|g| <= b2 (1 + |s|^p1)`.
//!
//! Everything here is a rational function of `(N, p1, p2)`, evaluated in
//! double precision.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Equality tolerance used to decide whether a point sits on the hyperbola.
pub const HYPERBOLA_TOL: f64 = 1e-12;

/// Largest admissible ladder length; `r_i` grows geometrically.
pub const MAX_LADDER_STEPS: usize = 40;

/// Dimension and growth exponents, normalized so that `p1 <= p2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    pub n: u32,
    pub p1: f64,
    pub p2: f64,
    /// Set when the inputs arrived with `p1 > p2` and were exchanged.
    pub swapped: bool,
}

impl SystemParams {
    pub fn new(n: u32, p1: f64, p2: f64) -> Result<Self> {
        if n < 3 {
            return Err(Error::invalid(format!("dimension N = {n} must be >= 3")));
        }
        check_growth_exponent("p1", p1)?;
        check_growth_exponent("p2", p2)?;
        let swapped = p1 > p2;
        let (p1, p2) = if swapped { (p2, p1) } else { (p1, p2) };
        Ok(Self { n, p1, p2, swapped })
    }

    pub fn dim(&self) -> f64 {
        f64::from(self.n)
    }
}

fn check_growth_exponent(name: &str, p: f64) -> Result<()> {
    if !p.is_finite() || p <= 1.0 {
        return Err(Error::invalid(format!("{name} = {p} must be a finite real > 1")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RegionClass {
    StrictlyBelow,
    OnHyperbola,
    Above,
}

impl RegionClass {
    pub fn from_delta0(delta0: f64) -> Self {
        if delta0.abs() <= HYPERBOLA_TOL {
            RegionClass::OnHyperbola
        } else if delta0 > 0.0 {
            RegionClass::StrictlyBelow
        } else {
            RegionClass::Above
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            RegionClass::StrictlyBelow => "StrictlyBelow",
            RegionClass::OnHyperbola => "OnHyperbola",
            RegionClass::Above => "Above",
        }
    }
}

impl std::fmt::Display for RegionClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for RegionClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "StrictlyBelow" => Ok(RegionClass::StrictlyBelow),
            "OnHyperbola" => Ok(RegionClass::OnHyperbola),
            "Above" => Ok(RegionClass::Above),
            other => Err(Error::Parse(format!("unknown region class {other:?}"))),
        }
    }
}

/// `1/(p1+1) + 1/(p2+1) - (N-2)/(N-1)` for a real dimension `n`.
pub fn delta0(n: f64, p1: f64, p2: f64) -> f64 {
    1.0 / (p1 + 1.0) + 1.0 / (p2 + 1.0) - (n - 2.0) / (n - 1.0)
}

/// Classify a point for a possibly non-integer dimension. Shared by
/// [`classify_region`] and the region grid so both agree bit-for-bit.
pub fn classify_point(n: f64, p1: f64, p2: f64) -> (RegionClass, f64) {
    let d = delta0(n, p1, p2);
    (RegionClass::from_delta0(d), d)
}

pub fn classify_region(params: &SystemParams) -> (RegionClass, f64) {
    classify_point(params.dim(), params.p1, params.p2)
}

/// Trace exponent `2_*`, Sobolev exponent `2^*` and the trace conjugate
/// `(2_*)'`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SobolevIndices {
    pub two_star_trace: f64,
    pub two_star_volume: f64,
    pub trace_conjugate: f64,
}

pub fn sobolev_indices(n: u32) -> Result<SobolevIndices> {
    if n < 3 {
        return Err(Error::invalid(format!("dimension N = {n} must be >= 3")));
    }
    let n = f64::from(n);
    Ok(SobolevIndices {
        two_star_trace: 2.0 * (n - 1.0) / (n - 2.0),
        two_star_volume: 2.0 * n / (n - 2.0),
        trace_conjugate: 2.0 * (n - 1.0) / n,
    })
}

/// Every exponent of the L-infinity a priori estimate for one `(N, p1, p2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExponentTable {
    pub two_star_trace: f64,
    pub two_star_volume: f64,
    pub trace_conjugate: f64,
    pub delta0: f64,
    pub q1: f64,
    pub q2: f64,
    pub m1: f64,
    pub m2: f64,
    pub sigma1: f64,
    pub sigma2: f64,
    /// `1 - sigma1 sigma2 (p1 - 2_*/q1)(p2 - 2_*/q2)`.
    pub eta: f64,
    /// `(N-2)/(N-1) (p1+1)(p2+1) delta0`; must agree with `eta`.
    pub eta_from_delta0: f64,
    #[serde(rename = "A")]
    pub a: f64,
    #[serde(rename = "B")]
    pub b: f64,
    #[serde(rename = "At1")]
    pub a_tilde1: f64,
    #[serde(rename = "At2")]
    pub a_tilde2: f64,
    #[serde(rename = "Bt1")]
    pub b_tilde1: f64,
    #[serde(rename = "Bt2")]
    pub b_tilde2: f64,
}

impl ExponentTable {
    /// Relative defect between the two routes to `eta`.
    pub fn eta_defect(&self) -> f64 {
        rel_diff(self.eta, self.eta_from_delta0)
    }

    /// Relative defects of `At1 + At2 = A` and `Bt1 + Bt2 = B`.
    pub fn tilde_sum_defects(&self) -> (f64, f64) {
        (
            rel_diff(self.a_tilde1 + self.a_tilde2, self.a),
            rel_diff(self.b_tilde1 + self.b_tilde2, self.b),
        )
    }
}

pub(crate) fn rel_diff(x: f64, y: f64) -> f64 {
    let scale = x.abs().max(y.abs());
    if scale == 0.0 {
        0.0
    } else {
        (x - y).abs() / scale
    }
}

/// Gagliardo-Nirenberg weight for `L^inf <= C ||.||_{W^{1,m}}^sigma ||.||_{L^{2^*}}^{1-sigma}`
/// with the Neumann integrability index `q` feeding `m = N q / (N-1)`.
fn interpolation_weight(n: f64, q: f64) -> f64 {
    let two_star_volume = 2.0 * n / (n - 2.0);
    1.0 / (1.0 + two_star_volume / n * (1.0 - (n - 1.0) / q))
}

pub fn derive_exponents(params: &SystemParams) -> Result<ExponentTable> {
    let (class, d0) = classify_region(params);
    if class != RegionClass::StrictlyBelow {
        return Err(Error::NotStrictlySubcritical { delta0: d0 });
    }
    let idx = sobolev_indices(params.n)?;
    let n = params.dim();
    let (p1, p2) = (params.p1, params.p2);
    let trace = idx.two_star_trace;

    // Lebesgue index matching the hyperbola coefficients: 2_*/q = 1/(N-2).
    let q = 2.0 * (n - 1.0);
    let m = n * q / (n - 1.0);
    // sigma1 is driven by q2 and sigma2 by q1; both q are equal here.
    let sigma1 = interpolation_weight(n, q);
    let sigma2 = interpolation_weight(n, q);

    let eta = 1.0 - sigma1 * sigma2 * (p1 - trace / q) * (p2 - trace / q);
    let eta_from_delta0 = (n - 2.0) / (n - 1.0) * (p1 + 1.0) * (p2 + 1.0) * d0;

    let a = 1.0 / ((n - 1.0) * (p1 + 1.0) * d0);
    let b = 1.0 / ((n - 1.0) * (p2 + 1.0) * d0);

    let lead = (n - 2.0) / ((n - 1.0) * (n - 1.0));
    let a_tilde1 = lead * (p2 - 1.0 / (n - 2.0)) / eta;
    let b_tilde1 = lead * (p1 - 1.0 / (n - 2.0)) / eta;
    let a_tilde2 = 1.0 / ((n - 1.0) * eta);
    let b_tilde2 = a_tilde2;

    Ok(ExponentTable {
        two_star_trace: idx.two_star_trace,
        two_star_volume: idx.two_star_volume,
        trace_conjugate: idx.trace_conjugate,
        delta0: d0,
        q1: q,
        q2: q,
        m1: m,
        m2: m,
        sigma1,
        sigma2,
        eta,
        eta_from_delta0,
        a,
        b,
        a_tilde1,
        a_tilde2,
        b_tilde1,
        b_tilde2,
    })
}

/// One rung `(i, s_i, r_i)` of the integrability ladder on the boundary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LadderStep {
    pub i: usize,
    pub s: f64,
    pub r: f64,
}

/// `s_i = (2_*/2)^i - 1` and `r_i = 2_* (s_i + 1)` for `i = 1..=i_max`.
pub fn moser_ladder_exponents(n: u32, i_max: usize) -> Result<Vec<LadderStep>> {
    if i_max < 1 {
        return Err(Error::invalid("ladder length i_max must be >= 1"));
    }
    if i_max > MAX_LADDER_STEPS {
        return Err(Error::invalid(format!(
            "ladder length i_max = {i_max} exceeds the cap {MAX_LADDER_STEPS}"
        )));
    }
    let trace = sobolev_indices(n)?.two_star_trace;
    let ratio = trace / 2.0;
    Ok((1..=i_max)
        .map(|i| {
            let gain = ratio.powi(i as i32);
            LadderStep {
                i,
                s: gain - 1.0,
                r: trace * gain,
            }
        })
        .collect())
}

/// Lebesgue indices that make the boundary integrals of the weak
/// formulation finite.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeakFormIndices {
    pub trace_conjugate: f64,
    /// Integrability of `g(., u)` from the trace embedding: `2_*/p1`.
    pub g_integrability: f64,
    /// Extra boundary integrability demanded of `v` when `p2 > 2_* - 1`.
    pub v_boundary_index: f64,
    /// `2_* - 1`, the threshold on `p2`.
    pub threshold: f64,
    pub needs_extra_integrability: bool,
    /// `p2 == 2_* - 1` within [`HYPERBOLA_TOL`].
    pub on_threshold: bool,
}

pub fn weak_form_indices(params: &SystemParams) -> Result<WeakFormIndices> {
    let idx = sobolev_indices(params.n)?;
    let n = params.dim();
    let threshold = idx.two_star_trace - 1.0;
    let gap = params.p2 - threshold;
    let on_threshold = gap.abs() <= HYPERBOLA_TOL * threshold.max(1.0);
    Ok(WeakFormIndices {
        trace_conjugate: idx.trace_conjugate,
        g_integrability: idx.two_star_trace / params.p1,
        v_boundary_index: (n - 1.0) * (params.p2 - 1.0),
        threshold,
        needs_extra_integrability: gap > 0.0 && !on_threshold,
        on_threshold,
    })
}

/// Upper branch `p2(p1)` of the hyperbola, or `None` when `p1` is so large
/// that no `p2 > -1` completes the equality.
pub fn hyperbola_partner(n: f64, p1: f64) -> Option<f64> {
    let rest = (n - 2.0) / (n - 1.0) - 1.0 / (p1 + 1.0);
    (rest > 0.0).then(|| 1.0 / rest - 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn params(n: u32, p1: f64, p2: f64) -> SystemParams {
        SystemParams::new(n, p1, p2).unwrap()
    }

    #[test]
    fn classify_examples() {
        let (c, d) = classify_region(&params(3, 3.0, 3.0));
        assert_eq!(c, RegionClass::OnHyperbola);
        assert!(d.abs() < 1e-15);

        let (c, d) = classify_region(&params(3, 2.0, 2.0));
        assert_eq!(c, RegionClass::StrictlyBelow);
        assert_relative_eq!(d, 1.0 / 6.0, max_relative = 1e-15);

        let (c, d) = classify_region(&params(4, 3.0, 3.0));
        assert_eq!(c, RegionClass::Above);
        assert_relative_eq!(d, -1.0 / 6.0, max_relative = 1e-14);
    }

    #[test]
    fn invalid_params_rejected() {
        assert!(matches!(SystemParams::new(2, 2.0, 2.0), Err(Error::InvalidParams(_))));
        assert!(matches!(SystemParams::new(3, 1.0, 2.0), Err(Error::InvalidParams(_))));
        assert!(matches!(SystemParams::new(3, 2.0, 0.5), Err(Error::InvalidParams(_))));
        assert!(SystemParams::new(3, f64::NAN, 2.0).is_err());
        assert!(sobolev_indices(2).is_err());
    }

    #[test]
    fn swap_is_recorded() {
        let p = params(3, 3.0, 2.0);
        assert!(p.swapped);
        assert_eq!((p.p1, p.p2), (2.0, 3.0));
        assert!(!params(3, 2.0, 3.0).swapped);
    }

    #[test]
    fn sobolev_index_values() {
        let i3 = sobolev_indices(3).unwrap();
        assert_eq!(
            (i3.two_star_trace, i3.two_star_volume),
            (4.0, 6.0)
        );
        assert_relative_eq!(i3.trace_conjugate, 4.0 / 3.0, max_relative = 1e-15);
        let i4 = sobolev_indices(4).unwrap();
        assert_eq!((i4.two_star_trace, i4.two_star_volume, i4.trace_conjugate), (3.0, 4.0, 1.5));

        let mut prev = f64::INFINITY;
        for n in 3..200 {
            let t = sobolev_indices(n).unwrap().two_star_trace;
            assert!(t < prev && t > 2.0);
            prev = t;
        }
    }

    #[test]
    fn derive_symmetric_case() {
        let t = derive_exponents(&params(3, 2.0, 2.0)).unwrap();
        assert_relative_eq!(t.a, 1.0, max_relative = 1e-14);
        assert_relative_eq!(t.b, 1.0, max_relative = 1e-14);
        assert_relative_eq!(t.eta, 0.75, max_relative = 1e-14);
        assert_relative_eq!(t.sigma1, 0.5, max_relative = 1e-15);
        assert_relative_eq!(t.sigma2, 0.5, max_relative = 1e-15);
        assert_eq!((t.q1, t.q2, t.m1, t.m2), (4.0, 4.0, 6.0, 6.0));
    }

    #[test]
    fn derive_asymmetric_case() {
        let t = derive_exponents(&params(3, 2.0, 3.0)).unwrap();
        assert_relative_eq!(t.delta0, 1.0 / 12.0, max_relative = 1e-14);
        assert_relative_eq!(t.eta, 0.5, max_relative = 1e-14);
        assert_relative_eq!(t.a, 2.0, max_relative = 1e-14);
        assert_relative_eq!(t.b, 1.5, max_relative = 1e-14);
        assert_relative_eq!(t.a_tilde1, 1.0, max_relative = 1e-14);
        assert_relative_eq!(t.a_tilde2, 1.0, max_relative = 1e-14);
        assert_relative_eq!(t.b_tilde1, 0.5, max_relative = 1e-14);
        assert_relative_eq!(t.b_tilde2, 1.0, max_relative = 1e-14);
    }

    #[test]
    fn derive_rejects_hyperbola() {
        assert!(matches!(
            derive_exponents(&params(3, 3.0, 3.0)),
            Err(Error::NotStrictlySubcritical { .. })
        ));
        assert!(matches!(
            derive_exponents(&params(4, 3.0, 3.0)),
            Err(Error::NotStrictlySubcritical { .. })
        ));
    }

    #[test]
    fn ladder_examples() {
        let l = moser_ladder_exponents(3, 3).unwrap();
        let got: Vec<_> = l.iter().map(|s| (s.i, s.s, s.r)).collect();
        assert_eq!(got, vec![(1, 1.0, 8.0), (2, 3.0, 16.0), (3, 7.0, 32.0)]);

        let l = moser_ladder_exponents(4, 1).unwrap();
        assert_eq!((l[0].s, l[0].r), (0.5, 4.5));

        assert!(moser_ladder_exponents(3, 0).is_err());
        assert!(moser_ladder_exponents(3, MAX_LADDER_STEPS + 1).is_err());
        for n in 3..20 {
            let trace = sobolev_indices(n).unwrap().two_star_trace;
            let l = moser_ladder_exponents(n, MAX_LADDER_STEPS).unwrap();
            assert!(l[0].r > trace);
            assert!(l.windows(2).all(|w| w[1].r > w[0].r && w[1].s > w[0].s));
            assert!(l.iter().all(|s| s.r.is_finite()));
        }
    }

    #[test]
    fn weak_form_examples() {
        let w = weak_form_indices(&params(3, 2.0, 2.0)).unwrap();
        assert_eq!(w.threshold, 3.0);
        assert!(!w.needs_extra_integrability && !w.on_threshold);

        let w = weak_form_indices(&params(3, 2.0, 5.0)).unwrap();
        assert!(w.needs_extra_integrability);
        assert_eq!(w.v_boundary_index, 8.0);

        let w = weak_form_indices(&params(3, 3.0, 3.0)).unwrap();
        assert!(w.on_threshold && !w.needs_extra_integrability);
        assert_relative_eq!(w.trace_conjugate, 4.0 / 3.0, max_relative = 1e-15);
        assert_relative_eq!(w.g_integrability, 4.0 / 3.0, max_relative = 1e-15);
    }

    proptest! {
        #[test]
        fn classification_symmetric(n in 3u32..9, p1 in 1.001f64..12.0, p2 in 1.001f64..12.0) {
            let a = classify_point(f64::from(n), p1, p2);
            let b = classify_point(f64::from(n), p2, p1);
            prop_assert_eq!(a.0, b.0);
            prop_assert!((a.1 - b.1).abs() <= 1e-15);
        }

        #[test]
        fn identities_hold_below_hyperbola(n in 3u32..9, p1 in 1.001f64..6.0, p2 in 1.001f64..40.0) {
            let p = SystemParams::new(n, p1, p2).unwrap();
            if let Ok(t) = derive_exponents(&p) {
                prop_assert!(t.eta_defect() <= 1e-12);
                let (da, db) = t.tilde_sum_defects();
                prop_assert!(da <= 1e-12 && db <= 1e-12);
                for x in [t.a, t.b, t.a_tilde1, t.a_tilde2, t.b_tilde1, t.b_tilde2, t.eta] {
                    prop_assert!(x > 0.0);
                }
            }
        }

        #[test]
        fn hyperbola_curve_has_zero_delta(n in 3u32..9, p1 in 1.001f64..3.0) {
            let nf = f64::from(n);
            if let Some(p2) = hyperbola_partner(nf, p1) {
                if p2 > 1.0 {
                    prop_assert!(delta0(nf, p1, p2).abs() < 1e-12);
                }
            }
        }

        #[test]
        fn p1_bounded_by_trace_threshold(n in 3u32..9, p1 in 1.001f64..10.0, p2 in 1.001f64..10.0) {
            let p = SystemParams::new(n, p1, p2).unwrap();
            let (class, _) = classify_region(&p);
            if class != RegionClass::Above {
                let trace = sobolev_indices(n).unwrap().two_star_trace;
                prop_assert!(p.p1 <= trace - 1.0 + 1e-12);
            }
        }
    }
}
