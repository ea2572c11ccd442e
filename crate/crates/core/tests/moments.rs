mod common;

use std::f64::consts::{FRAC_PI_2, PI};

use common::{expect, rel, spin_ops, to_vector};
use proptest::prelude::*;
use spinsqueeze::analytic::{chi_star_unrotated, solve_state1};
use spinsqueeze::moments::{compute_moments, kurtosis, min_variance_angle, rotated_xibar2, wineland_xi2};
use spinsqueeze::spinstate::{apply_rotation, apply_twist, coherent_x, gss, Axis, CollectiveState};
use spinsqueeze::Error;

fn twisted_gss(n: usize, s2: f64, chi: f64) -> CollectiveState {
    apply_twist(&gss(n, s2, Axis::Z).unwrap(), chi)
}

fn random_state(n: usize, steps: &[(f64, f64)]) -> CollectiveState {
    let mut s = coherent_x(n).unwrap();
    for &(chi, theta) in steps {
        s = apply_rotation(&apply_twist(&s, chi), Axis::X, theta);
    }
    s
}

#[test]
fn coherent_moments() {
    for n in [1, 2, 17, 400] {
        let m = compute_moments(&coherent_x(n).unwrap());
        let nf = n as f64;
        assert!((m.jx - nf / 2.0).abs() < 1e-12 * nf);
        assert!((m.jy2 - nf / 4.0).abs() < 1e-12 * nf);
        assert!((m.jz2 - nf / 4.0).abs() < 1e-12 * nf);
        assert!((wineland_xi2(&m).unwrap() - 1.0).abs() < 1e-14, "N = {n}");
        for sigma in [0.0, 0.3, 2.0] {
            let x = rotated_xibar2(&m, sigma).unwrap();
            assert!((x - 1.0).abs() < 1e-11, "N = {n}, sigma = {sigma}: {x}");
        }
    }
}

#[test]
fn gss_second_moment() {
    let jz2 = compute_moments(&gss(400, 1.0, Axis::Z).unwrap()).jz2;
    assert!(rel(jz2, 100.0) < 0.01);
}

#[test]
fn moments_match_dense_operators() {
    let n = 18;
    let s = apply_rotation(&random_state(n, &[(0.2, 0.5), (-0.1, 1.2)]), Axis::Z, 0.3);
    let psi = to_vector(s.amplitudes());
    let [jx, jy, jz] = spin_ops(n);
    let m = compute_moments(&s);
    let sq = |a: &nalgebra::DMatrix<num_complex::Complex64>| a * a;
    let checks = [
        (m.jx, expect(&jx, &psi)),
        (m.jy, expect(&jy, &psi)),
        (m.jz, expect(&jz, &psi)),
        (m.jx2, expect(&sq(&jx), &psi)),
        (m.jy2, expect(&sq(&jy), &psi)),
        (m.jz2, expect(&sq(&jz), &psi)),
        (m.anti_yz, expect(&(&jy * &jz + &jz * &jy), &psi)),
        (m.anti_xy, expect(&(&jx * &jy + &jy * &jx), &psi)),
        (m.jy4, expect(&sq(&sq(&jy)), &psi)),
        (m.jz4, expect(&sq(&sq(&jz)), &psi)),
    ];
    for (k, (got, want)) in checks.into_iter().enumerate() {
        assert!((got - want).abs() < 1e-9, "moment {k}: {got} vs {want}");
    }
}

/// Squeezing after twisting `|J_x = N/2>` by `chi` and rotating onto the
/// narrowest axis.
fn single_twist_xi2(n: usize, chi: f64) -> f64 {
    let s = apply_twist(&coherent_x(n).unwrap(), chi);
    let theta = min_variance_angle(&compute_moments(&s)).theta;
    wineland_xi2(&compute_moments(&apply_rotation(&s, Axis::X, theta))).unwrap()
}

#[test]
fn single_twist_optimum_squeezing() {
    let n = 1000;
    let target = 3f64.powf(2.0 / 3.0) / (2.0 * 1000f64.powf(2.0 / 3.0));
    assert!((target - 0.0104).abs() < 1e-4);
    // The optimal state: scan the twist around the root of the closed-form
    // stationarity condition.
    let root = solve_state1(n, 1.0).unwrap();
    let best = (0..=400)
        .map(|k| single_twist_xi2(n, root * (0.8 + 0.4 * k as f64 / 400.0)))
        .fold(f64::INFINITY, f64::min);
    assert!(rel(best, target) < 0.15, "xi2 = {best}, target {target}");
    assert!(best <= single_twist_xi2(n, root));
}

#[test]
fn orientation_degeneracy_is_an_error() {
    // Polarised along y: <J_x> = 0.
    let s = apply_rotation(&coherent_x(40).unwrap(), Axis::Z, FRAC_PI_2);
    let m = compute_moments(&s);
    assert!(matches!(wineland_xi2(&m), Err(Error::DegenerateOrientation { .. })));
    assert!(matches!(rotated_xibar2(&m, 0.1), Err(Error::DegenerateOrientation { .. })));
}

#[test]
fn rotated_xibar2_matches_the_twisted_gaussian_expression() {
    // N / <J_x>^2 [Var(J_y) + sigma^2 Var(J_x)] with the squeezed variance
    // and Var(J_x) of the twisted Gaussian closed forms. The bracketed
    // expressions below assume <J_x> = N/2; the exact mean N/2 exp(-u/2) is
    // restored so that only the spin-moment approximations are compared.
    let n = 2000;
    let nf = n as f64;
    let s2 = 1.0;
    let chi = chi_star_unrotated(n, s2).value;
    let state = twisted_gss(n, s2, chi);
    let theta = min_variance_angle(&compute_moments(&state)).theta;
    let m = compute_moments(&apply_rotation(&state, Axis::X, theta));
    let u = 1.0 / (s2 * nf) + chi * chi * s2 * nf;
    for sigma in [0.0, 0.005, 0.02] {
        let sig2: f64 = sigma * sigma;
        let bracket = (s2 - chi * chi * s2 * s2 * nf / u.sinh()) + nf * sig2 / 2.0 * (1.0 + (-2.0 * u).exp())
            - nf * sig2 * (-u).exp();
        let approx = bracket * u.exp();
        let exact = rotated_xibar2(&m, sigma).unwrap();
        assert!(rel(exact, approx) < 0.01, "sigma {sigma}: exact {exact}, approx {approx}");
    }
    assert!(rel(rotated_xibar2(&m, 0.0).unwrap(), wineland_xi2(&m).unwrap()) < 1e-14);
}

#[test]
fn variance_angle_examples() {
    let untwisted = compute_moments(&gss(300, 0.4, Axis::Y).unwrap());
    assert!(untwisted.var_z() > untwisted.var_y());
    let a = min_variance_angle(&untwisted);
    assert!(!a.degenerate);
    assert!(a.theta.abs() < 1e-12);

    for chi in [0.01, 0.03] {
        let plus = min_variance_angle(&compute_moments(&twisted_gss(500, 1.0, chi))).theta;
        let minus = min_variance_angle(&compute_moments(&twisted_gss(500, 1.0, -chi))).theta;
        assert!(plus.abs() > 1e-3);
        assert!((plus + minus).abs() < 1e-10, "{plus} vs {minus}");
        let m = compute_moments(&twisted_gss(500, 1.0, chi));
        for d in [-0.01, 0.01] {
            assert!(m.rotated_y_variance(plus) <= m.rotated_y_variance(plus + d));
        }
    }
}

#[test]
fn isotropic_moments_are_flagged() {
    // A single spin-1/2 along x has Var(J_y) = Var(J_z) and no covariance.
    let a = min_variance_angle(&compute_moments(&coherent_x(1).unwrap()));
    assert!(a.degenerate);
    assert_eq!(a.theta, 0.0);
}

#[test]
fn kurtosis_examples() {
    for n in [2, 10, 101, 1000] {
        let k = kurtosis(&coherent_x(n).unwrap(), Axis::Z).unwrap();
        assert!((k - (3.0 - 2.0 / n as f64)).abs() < 1e-12, "N = {n}: {k}");
    }
    for n in [400, 1000] {
        let k = kurtosis(&gss(n, 1.0, Axis::Z).unwrap(), Axis::Z).unwrap();
        assert!((k - 3.0).abs() < 0.06, "N = {n}: {k}");
    }
    // The outcome distribution is a sampled Gaussian whose tails are cut at
    // exp(-N/2), so its kurtosis already equals 3 to round-off.
    for n in [200, 800, 3200] {
        let gap = (kurtosis(&gss(n, 1.0, Axis::Z).unwrap(), Axis::Z).unwrap() - 3.0).abs();
        assert!(gap < 1e-12, "N = {n}: {gap:e}");
    }
    // The J_y profile of a y-oriented Gaussian is the same as the J_z one.
    let ky = kurtosis(&gss(300, 0.5, Axis::Y).unwrap(), Axis::Y).unwrap();
    let kz = kurtosis(&gss(300, 0.5, Axis::Z).unwrap(), Axis::Z).unwrap();
    assert!((ky - kz).abs() < 1e-9);
}

#[test]
fn kurtosis_needs_variance() {
    // |J_z = N/2> has no spread along z.
    let s = apply_rotation(&coherent_x(8).unwrap(), Axis::Y, -FRAC_PI_2);
    assert!(compute_moments(&s).var_z() < 1e-12);
    assert!(matches!(kurtosis(&s, Axis::Z), Err(Error::UndefinedKurtosis { .. })));
}

fn steps() -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec((-0.3..0.3f64, -PI..PI), 1..4)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 100, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn casimir(n in 1usize..300, st in steps(), phi in -PI..PI) {
        let m = compute_moments(&apply_rotation(&random_state(n, &st), Axis::Z, phi));
        let j = n as f64 / 2.0;
        prop_assert!((m.jx2 + m.jy2 + m.jz2 - j * (j + 1.0)).abs() < 1e-8);
    }

    #[test]
    fn min_variance_angle_beats_a_fine_grid(n in 4usize..250, st in steps()) {
        let m = compute_moments(&random_state(n, &st));
        let a = min_variance_angle(&m);
        prop_assume!(!a.degenerate);
        let best = m.rotated_y_variance(a.theta);
        let grid_min = (0..1000)
            .map(|k| m.rotated_y_variance(PI * k as f64 / 1000.0))
            .fold(f64::INFINITY, f64::min);
        prop_assert!(best <= grid_min + 1e-9, "{best} vs {grid_min}");
        prop_assert!((best - m.min_rotated_variance()).abs() < 1e-9 * (1.0 + best));
    }

    #[test]
    fn xibar2_is_monotone_in_sigma(n in 4usize..250, st in steps(), a in 0.0..1.0f64, b in 0.0..1.0f64) {
        let m = compute_moments(&random_state(n, &st));
        prop_assume!(m.jx.abs() > 1e-3 * n as f64);
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        prop_assert!(rotated_xibar2(&m, lo).unwrap() <= rotated_xibar2(&m, hi).unwrap());
    }

    #[test]
    fn squeezing_and_kurtosis_bounds(n in 2usize..250, st in steps()) {
        let s = random_state(n, &st);
        let m = compute_moments(&s);
        prop_assume!(m.jx.abs() > 1e-3 * n as f64);
        prop_assert!(wineland_xi2(&m).unwrap() > 0.0);
        for axis in [Axis::Y, Axis::Z] {
            if let Ok(k) = kurtosis(&s, axis) {
                prop_assert!(k >= 1.0 - 1e-12);
            }
        }
    }
}
