//! Modified spherical Bessel functions of the first kind, `i_l(r)`.
//!
//! Values are assembled from the successive ratios `rho_l = i_l / i_{l-1}`,
//! which obey the downward recurrence `rho_l = 1 / ((2l+1)/r + rho_{l+1})`
//! (Miller's algorithm in ratio form) and are anchored at the closed form
//! `i_0(r) = sinh(r) / r`. Working with ratios keeps everything finite even
//! where `i_l` itself underflows.

use crate::error::{Error, Result};

/// Largest supported order.
pub const MAX_ORDER: usize = 300;

/// Values below this are reported as underflow.
pub const UNDERFLOW: f64 = 1e-300;

/// Extra orders used to seed the downward ratio recurrence.
const SEED_MARGIN: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BesselI {
    pub value: f64,
    pub deriv: f64,
    /// `i_l(r)` is below [`UNDERFLOW`]; `value` and `deriv` are then 0.
    pub underflow: bool,
}

/// `rho_l(r) = i_l(r) / i_{l-1}(r)` for `l = 1..=l_top`; index 0 is unused.
pub fn ratio_table(l_top: usize, r: f64) -> Vec<f64> {
    let mut rho = vec![0.0; l_top + 1];
    let mut next = 0.0;
    for l in (1..=l_top + SEED_MARGIN).rev() {
        let cur = 1.0 / ((2 * l + 1) as f64 / r + next);
        if l <= l_top {
            rho[l] = cur;
        }
        next = cur;
    }
    rho
}

/// `ln i_0(r)` without loss for small `r`.
fn ln_i0(r: f64) -> f64 {
    if r < 1e-4 {
        // sinh(r)/r = 1 + r^2/6 + r^4/120 + ...
        let r2 = r * r;
        (r2 / 6.0 + r2 * r2 / 120.0).ln_1p()
    } else {
        (r.sinh() / r).ln()
    }
}

fn check_args(l: usize, r: f64) -> Result<()> {
    if l > MAX_ORDER {
        return Err(Error::invalid(format!("order {l} exceeds {MAX_ORDER}")));
    }
    if !(r > 0.0 && r <= 1.0) {
        return Err(Error::invalid(format!("radius {r} outside (0, 1]")));
    }
    Ok(())
}

/// `ln i_l(r)` for `l = 0..=l_max`, plus the ratio table it was built from
/// (length `l_max + 2`, so `rho_{l+1}` is available for derivatives).
fn log_values(l_max: usize, r: f64) -> (Vec<f64>, Vec<f64>) {
    let rho = ratio_table(l_max + 1, r);
    let mut logs = Vec::with_capacity(l_max + 1);
    let mut acc = ln_i0(r);
    logs.push(acc);
    for &ratio in &rho[1..=l_max] {
        acc += ratio.ln();
        logs.push(acc);
    }
    (logs, rho)
}

/// `i_l(r)` and `i_l'(r)`.
pub fn bessel_i(l: usize, r: f64) -> Result<BesselI> {
    check_args(l, r)?;
    let (logs, rho) = log_values(l, r);
    let ln_value = logs[l];
    if ln_value < UNDERFLOW.ln() {
        return Ok(BesselI {
            value: 0.0,
            deriv: 0.0,
            underflow: true,
        });
    }
    let value = ln_value.exp();
    // i_l' = i_{l+1} + (l/r) i_l
    let deriv = value * (l as f64 / r + rho[l + 1]);
    Ok(BesselI {
        value,
        deriv,
        underflow: false,
    })
}

/// `i_l(r)` for every order up to `l_max` (underflowed entries are 0).
pub fn bessel_i_all(l_max: usize, r: f64) -> Result<Vec<BesselI>> {
    check_args(l_max, r)?;
    let (logs, rho) = log_values(l_max, r);
    Ok(logs
        .iter()
        .enumerate()
        .map(|(l, &ln_value)| {
            if ln_value < UNDERFLOW.ln() {
                BesselI {
                    value: 0.0,
                    deriv: 0.0,
                    underflow: true,
                }
            } else {
                let value = ln_value.exp();
                BesselI {
                    value,
                    deriv: value * (l as f64 / r + rho[l + 1]),
                    underflow: false,
                }
            }
        })
        .collect())
}

/// Radial profiles `g_l(r) = i_l(r) / i_l(1)` and `g_l'(r)` for
/// `l = 0..=l_max`. The quotient is formed in log space so it stays exact
/// where numerator and denominator both underflow.
#[derive(Debug, Clone)]
pub struct RadialProfile {
    pub r: f64,
    pub value: Vec<f64>,
    pub deriv: Vec<f64>,
}

impl RadialProfile {
    pub fn new(l_max: usize, r: f64) -> Result<Self> {
        check_args(l_max, r)?;
        let (logs_r, rho_r) = log_values(l_max, r);
        let (logs_1, _) = log_values(l_max, 1.0);
        let value: Vec<f64> = if r == 1.0 {
            vec![1.0; l_max + 1]
        } else {
            logs_r.iter().zip(&logs_1).map(|(a, b)| (a - b).exp()).collect()
        };
        let deriv = value
            .iter()
            .enumerate()
            .map(|(l, g)| g * (l as f64 / r + rho_r[l + 1]))
            .collect();
        Ok(Self { r, value, deriv })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::E;

    /// Power series `sum_k (r^2/2)^k / (k! (2l+2k+1)!!) * r^l`, summed to
    /// convergence; independent of the ratio recurrence.
    fn series(l: usize, r: f64) -> f64 {
        let mut dfact = 1.0;
        for k in (1..=2 * l + 1).step_by(2) {
            dfact *= k as f64;
        }
        let mut term = r.powi(l as i32) / dfact;
        let mut sum = term;
        for k in 1..200 {
            term *= r * r / (2.0 * k as f64 * (2 * l + 2 * k + 1) as f64);
            sum += term;
            if term < sum * 1e-18 {
                break;
            }
        }
        sum
    }

    #[test]
    fn order_zero_closed_form() {
        let b = bessel_i(0, 1.0).unwrap();
        assert!((b.value - 1f64.sinh()).abs() < 1e-15);
        assert!((b.value - 1.1752011936).abs() < 1e-10);
        assert!((b.deriv - 1.0 / E).abs() < 1e-15);
        assert!((b.deriv - 0.3678794412).abs() < 1e-10);
    }

    #[test]
    fn order_one_derivative() {
        let b = bessel_i(1, 1.0).unwrap();
        let i0 = 1f64.sinh();
        let i1 = 1f64.cosh() - 1f64.sinh();
        assert!((b.value - i1).abs() < 1e-15);
        assert!((b.deriv - (i0 - 2.0 * i1)).abs() < 1e-15);
        assert!((b.deriv - 0.4394423).abs() < 1e-7);
    }

    #[test]
    fn recurrence_holds() {
        for &r in &[1e-2, 0.3, 0.77, 1.0] {
            let all = bessel_i_all(40, r).unwrap();
            for l in 1..40 {
                if all[l + 1].underflow {
                    continue;
                }
                let lhs = all[l - 1].value - all[l + 1].value;
                let rhs = (2 * l + 1) as f64 * all[l].value / r;
                assert!((lhs / rhs - 1.0).abs() < 1e-10, "l = {l}, r = {r}");
                let d = all[l - 1].value - (l as f64 + 1.0) / r * all[l].value;
                assert!((d / all[l].deriv - 1.0).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn agrees_with_power_series() {
        for l in 0..30 {
            for &r in &[0.05, 0.5, 1.0] {
                let b = bessel_i(l, r).unwrap();
                let s = series(l, r);
                assert!((b.value / s - 1.0).abs() < 1e-13, "l = {l}, r = {r}");
            }
        }
    }

    #[test]
    fn small_argument_asymptotics() {
        let r = 1e-3;
        let mut dfact = 1.0;
        for l in 0..=5usize {
            if l > 0 {
                dfact *= (2 * l + 1) as f64;
            }
            let b = bessel_i(l, r).unwrap();
            let scaled = b.value / r.powi(l as i32);
            assert!((scaled * dfact - 1.0).abs() < 1e-5, "l = {l}");
        }
    }

    #[test]
    fn underflow_is_flagged() {
        let b = bessel_i(300, 1.0).unwrap();
        assert!(b.underflow);
        assert_eq!(b.value, 0.0);
        assert!(!bessel_i(100, 1.0).unwrap().underflow);
        assert!(bessel_i(301, 1.0).is_err());
        assert!(bessel_i(3, 0.0).is_err());
        assert!(bessel_i(3, 1.5).is_err());
    }

    #[test]
    fn radial_profile_unit_at_boundary_and_finite_at_high_order() {
        let p = RadialProfile::new(300, 1.0).unwrap();
        assert!(p.value.iter().all(|&v| v == 1.0));
        let q = RadialProfile::new(300, 0.5).unwrap();
        assert!(q.value.iter().all(|v| v.is_finite() && *v > 0.0));
        // g_300(0.5) ~ 0.5^300 within a modest factor.
        assert!(q.value[300] < 1e-85 && q.value[300] > 1e-95);
        let g0 = (0.5f64.sinh() / 0.5) / 1f64.sinh();
        assert!((q.value[0] - g0).abs() < 1e-15);
    }
}
