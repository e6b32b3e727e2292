use std::f64::consts::PI;
use std::sync::Arc;

use proptest::prelude::*;

use nlbc::fields::{
    boundary_norm, evaluate_in_ball, neumann_estimate_ratio, solution_norms, BoundaryField, FieldSpec, NormExponents,
    VolumeSamples,
};
use nlbc::moser::{truncation_identity, weak_truncation_balance, weak_truncation_balance_on, TruncationParams};
use nlbc::solver::{fixed_point_step, solve_coupled, weak_residual, Init, Nonlinearity, SolverConfig};
use nlbc::sphere::{HarmonicCoeffs, NtdSpectrum, SphereGrid};

fn lambda0() -> f64 {
    ((1f64).exp().powi(2) - 1.0) / 2.0
}

fn grid(l: usize, k: usize) -> Arc<SphereGrid> {
    Arc::new(SphereGrid::with_oversample(l, k).unwrap())
}

fn random_field(g: &Arc<SphereGrid>, seed: u64) -> BoundaryField {
    FieldSpec::Random { seed, amplitude: 1.0, offset: 0.0, decay: 1.0 }.build(g.clone()).unwrap()
}

/// `||u||_{L^4(∂B)} / ||u||_{H^1(B)}` for a random trace `u`.
fn trace_ratio(g: &Arc<SphereGrid>, seed: u64) -> f64 {
    let u = random_field(g, seed);
    let h1 = NtdSpectrum::new(g.l_max()).unwrap().energy_from_trace(u.coeffs()).unwrap().sqrt();
    boundary_norm(&u, 4.0).unwrap() / h1
}

#[test]
fn trace_embedding_constant_is_stable_across_batches() {
    let g = grid(8, 3);
    let batch = |range: std::ops::Range<u64>| range.map(|s| trace_ratio(&g, s)).fold(0.0, f64::max);
    let c1 = batch(0..60);
    let c2 = batch(60..120);
    assert!(c1.is_finite() && c2.is_finite() && c1 > 0.0);
    assert!((c1 / c2 - 1.0).abs() <= 0.2, "batch maxima {c1} vs {c2}");
}

#[test]
fn neumann_estimate_ratio_bounded_over_batches() {
    let g = grid(8, 2);
    let volume = VolumeSamples::new(g.clone(), 24).unwrap();
    for q in [1.0, 2.0, 4.0] {
        let ratios: Vec<f64> =
            (0..12).map(|s| neumann_estimate_ratio(&random_field(&g, 500 + s), q, &volume).unwrap().1).collect();
        let max = ratios.iter().copied().fold(0.0, f64::max);
        let min = ratios.iter().copied().fold(f64::INFINITY, f64::min);
        assert!(max.is_finite() && min > 0.0);
        assert!(max / min < 10.0, "q = {q}: spread {min}..{max}");
    }
}

#[test]
fn neumann_estimate_ratio_for_constant_data() {
    // u = lambda0 sinh r / (r sinh 1): W^{1,3} norm by a 1-D radial oracle.
    let g = grid(4, 2);
    let volume = VolumeSamples::new(g.clone(), 48).unwrap();
    let h = BoundaryField::constant(g, 1.0);
    let (m, ratio) = neumann_estimate_ratio(&h, 2.0, &volume).unwrap();
    assert_eq!(m, 3.0);
    let (r, w) = nlbc::sphere::quadrature::gauss_legendre_interval(400, 0.0, 1.0);
    let s1 = 1f64.sinh();
    let integral: f64 = r
        .iter()
        .zip(&w)
        .map(|(&r, &w)| {
            let u = lambda0() * r.sinh() / (r * s1);
            let du = lambda0() * (r * r.cosh() - r.sinh()) / (r * r * s1);
            w * r * r * (du.abs().powi(3) + u.powi(3))
        })
        .sum::<f64>()
        * 4.0
        * PI;
    let expected = integral.powf(1.0 / 3.0) / (4.0 * PI).sqrt();
    assert!((ratio / expected - 1.0).abs() < 1e-10);
}

#[test]
fn sup_of_solution_attained_on_boundary() {
    let g = grid(10, 2);
    let volume = VolumeSamples::new(g.clone(), 32).unwrap();
    let spectrum = NtdSpectrum::new(10).unwrap();
    for seed in 0..6 {
        let h = random_field(&g, 900 + seed);
        let u = BoundaryField::from_coeffs(g.clone(), &spectrum.apply(h.coeffs()).unwrap()).unwrap();
        let rep = solution_norms(&u, &h, &volume, &NormExponents::default()).unwrap();
        assert!((rep.linf_volume - rep.linf_boundary).abs() <= 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn normalized_boundary_norms_nondecreasing(seed in 0u64..10_000) {
        let g = grid(6, 3);
        let f = random_field(&g, seed);
        let rs = [1.0, 1.5, 2.0, 3.0, 4.0, 8.0, 16.0, 64.0];
        let vals: Vec<f64> = rs.iter().map(|&r| boundary_norm(&f, r).unwrap() * (4.0 * PI).powf(-1.0 / r)).collect();
        for w in vals.windows(2) {
            prop_assert!(w[1] >= w[0] * (1.0 - 1e-12));
        }
        prop_assert!(*vals.last().unwrap() <= boundary_norm(&f, f64::INFINITY).unwrap() * (1.0 + 1e-12));
    }

    #[test]
    fn transforms_round_trip(seed in 0u64..10_000, l in 1usize..12) {
        let g = grid(l, 1);
        let c = nlbc::fields::random_coeffs(l, seed, 0.5);
        let back = g.analyze(&g.synthesize(&c).unwrap()).unwrap();
        for (a, b) in c.as_slice().iter().zip(back.as_slice()) {
            prop_assert!((a - b).abs() <= 1e-11 * c.norm().max(1.0));
        }
    }

    #[test]
    fn growth_bound_holds_for_all_kinds(s in -1e3f64..1e3, b in 0.01f64..10.0, p in 1.01f64..6.0, w in -1.0f64..1.0, cap in 0.1f64..50.0) {
        let wc = HarmonicCoeffs::single(0, 0, 0, w * (4.0 * PI).sqrt()).unwrap();
        let kinds = [
            Nonlinearity::pure_power_odd(b, p).unwrap(),
            Nonlinearity::affine_power(b, p).unwrap(),
            Nonlinearity::saturated(b, p, cap).unwrap(),
            Nonlinearity::weighted_coeffs(b, p, wc).unwrap(),
        ];
        for k in &kinds {
            prop_assert!(k.eval(w, s).abs() <= k.growth_bound(s) * (1.0 + 1e-12));
        }
    }

    #[test]
    fn truncation_identity_holds_for_any_cap(seed in 0u64..1000, s in 0.0f64..3.0, log_cap in -6.0f64..3.0) {
        let g = grid(5, 2);
        let volume = VolumeSamples::new(g.clone(), 12).unwrap();
        let h = random_field(&g, seed);
        let u = BoundaryField::from_coeffs(g, &NtdSpectrum::new(5).unwrap().apply(h.coeffs()).unwrap()).unwrap();
        let rep = truncation_identity(&u, &h, TruncationParams::new(s, 10f64.powf(log_cap)).unwrap(), &volume).unwrap();
        prop_assert!(rep.rel_err <= 1e-10);
    }
}

#[test]
fn truncation_identity_against_refined_oracle() {
    // Default resolution versus a 4x refined volume: both sides converge to
    // the same continuum value.
    let g = grid(8, 2);
    let h = random_field(&g, 77);
    let u = BoundaryField::from_coeffs(g.clone(), &NtdSpectrum::new(8).unwrap().apply(h.coeffs()).unwrap()).unwrap();
    let coarse = VolumeSamples::new(g.clone(), 48).unwrap();
    let fine = VolumeSamples::new(grid(8, 8), 192).unwrap();
    let eval = evaluate_in_ball(&coarse, u.coeffs()).unwrap();
    let mut abs: Vec<f64> = eval.value.iter().map(|v| v.abs()).collect();
    abs.sort_by(f64::total_cmp);
    let t = TruncationParams::new(1.0, abs[abs.len() / 2]).unwrap();
    let a = truncation_identity(&u, &h, t, &coarse).unwrap();
    let b = truncation_identity(&u, &h, t, &fine).unwrap();
    assert!(a.rel_err <= 1e-6);
    let drift = (a.lhs - b.rhs).abs() / b.rhs;
    println!("truncation identity, s = 1, L = median: coarse vs refined drift {drift:.3e}");
    assert!(drift <= 1e-2);
}

fn weighted_solution(l: usize, seeds: (u64, u64)) -> nlbc::solver::SolutionPair {
    let g = grid(l, 3);
    let w = |seed| FieldSpec::Random { seed, amplitude: 0.3, offset: 0.6, decay: 1.0 }.build(g.clone()).unwrap();
    let f = Nonlinearity::weighted(0.08 / lambda0(), 2.0, &w(seeds.0)).unwrap();
    let gg = Nonlinearity::weighted(0.08 / lambda0(), 2.0, &w(seeds.1)).unwrap();
    solve_coupled(&f, &gg, &SolverConfig::new(l)).unwrap()
}

#[test]
fn converged_solution_is_a_fixed_point() {
    let sol = weighted_solution(8, (1, 2));
    let (du, dv) = fixed_point_step(&sol).unwrap();
    assert!(du <= 2e-10 && dv <= 2e-10, "{du} {dv}");
}

#[test]
fn weak_residual_of_random_solution() {
    let sol = weighted_solution(16, (3, 4));
    let defect = weak_residual(&sol, 8).unwrap();
    println!("weak residual at L = 16, test band 8: {defect:.3e}");
    assert!(defect.is_finite() && defect <= 100.0 * 1e-10);
}

#[test]
fn symmetric_problem_keeps_symmetric_iterates() {
    let g = grid(6, 3);
    let w = FieldSpec::Random { seed: 5, amplitude: 0.2, offset: 0.7, decay: 1.0 }.build(g).unwrap();
    let f = Nonlinearity::weighted(0.1 / lambda0(), 2.0, &w).unwrap();
    let init = Init::Field(FieldSpec::Random { seed: 6, amplitude: 0.05, offset: 0.1, decay: 1.0 });
    for depth in [0, 4] {
        let mut cfg = SolverConfig::new(6).with_init(init.clone());
        cfg.anderson_depth = depth;
        let sol = solve_coupled(&f, &f, &cfg).unwrap();
        for (a, b) in sol.u.coeffs().as_slice().iter().zip(sol.v.coeffs().as_slice()) {
            assert!((a - b).abs() <= 1e-10);
        }
    }
}

#[test]
fn rotating_the_weight_rotates_the_solution() {
    let l = 6;
    let g = grid(l, 3);
    let w = FieldSpec::Random { seed: 8, amplitude: 0.3, offset: 0.6, decay: 0.5 }.build(g.clone()).unwrap();
    let b = 0.1 / lambda0();
    let sol = solve_coupled(&Nonlinearity::weighted(b, 2.0, &w).unwrap(), &Nonlinearity::affine_power(b, 2.0).unwrap(), &SolverConfig::new(l)).unwrap();
    let alpha = 2.0 * PI * 5.0 / g.n_phi() as f64;
    let wr = w.coeffs().rotate_z(alpha);
    let rot = solve_coupled(
        &Nonlinearity::weighted_coeffs(b, 2.0, wr).unwrap(),
        &Nonlinearity::affine_power(b, 2.0).unwrap(),
        &SolverConfig::new(l),
    )
    .unwrap();
    let expected = sol.u.coeffs().rotate_z(alpha);
    for (a, b) in rot.u.coeffs().as_slice().iter().zip(expected.as_slice()) {
        assert!((a - b).abs() <= 1e-8);
    }
    let expected_v = sol.v.coeffs().rotate_z(alpha);
    for (a, b) in rot.v.coeffs().as_slice().iter().zip(expected_v.as_slice()) {
        assert!((a - b).abs() <= 1e-8);
    }
}

#[test]
fn truncated_weak_form_matches_plain_weak_form_at_s_zero() {
    // At s = 0 the test function is u itself, a combination of the Y_lm
    // extensions, so the imbalance is bounded by sum |u_lm| times the
    // per-harmonic weak defect.
    let sol = weighted_solution(8, (9, 10));
    let rep = weak_truncation_balance(&sol, TruncationParams::new(0.0, 2.0).unwrap()).unwrap();
    let defect = weak_residual(&sol, 8).unwrap();
    let l1: f64 = sol.u.coeffs().as_slice().iter().map(|c| c.abs()).sum();
    assert!((rep.lhs - rep.rhs).abs() <= 2.0 * l1 * defect + 1e-14, "{rep:?} vs {defect}");
}

#[test]
fn truncated_weak_form_of_random_solution() {
    let sol = weighted_solution(8, (13, 14));
    let sup = nlbc::fields::sup_norm(&sol.u);
    let volume = VolumeSamples::new(grid(8, 2), 48).unwrap();
    let rep = weak_truncation_balance_on(&sol, TruncationParams::new(1.0, 2.0 * sup).unwrap(), &volume).unwrap();
    println!("truncated weak form, s = 1, L above sup: rel err {:.3e}", rep.rel_err);
    assert!(rep.rel_err <= 1e-5);
}
