use proptest::prelude::*;
use spinsqueeze::estimator::{error_exact, ProtocolDesign};
use spinsqueeze::fitting::{nu_vs_sigma, powerlaw_fit, sigmoid_exp, sigmoid_exp_fit, sigmoid_exp_fit_fixed_p3};

const TRUTH: [f64; 4] = [0.5, 1.0, 12.0, 0.8];

fn synthetic_sweep(p: [f64; 4]) -> Vec<(f64, f64)> {
    (0..25)
        .map(|i| 0.1 + 1.2 * i as f64 / 24.0)
        .map(|c| (c, sigmoid_exp(p, c)))
        .collect()
}

/// `x^exponent` with a fixed, non-random multiplicative wobble of a few
/// per cent, so the slope has a non-zero standard error.
fn wobbly_law(xs: &[f64], exponent: f64) -> Vec<(f64, f64)> {
    xs.iter()
        .enumerate()
        .map(|(k, &x)| (x, x.powf(exponent) * (1.0 + 0.03 * (1.7 * k as f64).sin())))
        .collect()
}

fn geometric(n: usize) -> Vec<f64> {
    (0..n).map(|k| 64.0 * 2f64.powf(k as f64 / 2.0)).collect()
}

#[test]
fn exact_power_laws() {
    let pts: Vec<(f64, f64)> = (0..8)
        .map(|i| 50.0 * 1.8f64.powi(i))
        .map(|x| (x, 7.0 * x.powf(-5.0 / 3.0)))
        .collect();
    let f = powerlaw_fit(&pts).unwrap();
    assert!((f.exponent + 5.0 / 3.0).abs() < 1e-12);
    assert!((f.log_prefactor - 7f64.ln()).abs() < 1e-10);
    assert!(f.residual_rms < 1e-12);
    assert_eq!((f.x_min, f.x_max), (50.0, 50.0 * 1.8f64.powi(7)));
    let sql: Vec<(f64, f64)> = [64.0, 128.0, 256.0, 512.0].iter().map(|&x| (x, 0.4 / x)).collect();
    assert!((powerlaw_fit(&sql).unwrap().exponent + 1.0).abs() < 1e-12);
}

#[test]
fn powerlaw_preconditions() {
    assert!(powerlaw_fit(&[(1.0, 1.0), (2.0, 0.5)]).is_err());
    assert!(powerlaw_fit(&[(1.0, 1.0), (2.0, -0.5), (3.0, 0.2)]).is_err());
    assert!(powerlaw_fit(&[(0.0, 1.0), (2.0, 0.5), (3.0, 0.2)]).is_err());
    assert!(powerlaw_fit(&[(1.0, f64::NAN), (2.0, 0.5), (3.0, 0.2)]).is_err());
    assert!(powerlaw_fit(&[(2.0, 1.0), (2.0, 0.5), (2.0, 0.2)]).is_err());
}

#[test]
fn sigmoid_parameters_are_recovered() {
    let f = sigmoid_exp_fit(&synthetic_sweep(TRUTH)).unwrap();
    assert!(f.converged);
    for (got, want) in [f.p1, f.p2, f.p3, f.p4].into_iter().zip(TRUTH) {
        assert!((got - want).abs() < 1e-6, "{got} vs {want}");
    }
    assert!(f.residual_rms < 1e-9);
}

#[test]
fn fitted_model_reproduces_its_inputs() {
    // Data off the model family: the fit residual bounds the misfit.
    let pts: Vec<(f64, f64)> = (0..20)
        .map(|i| 0.1 + 1.2 * i as f64 / 19.0)
        .map(|c: f64| (c, 3.0 + 0.4 * (4.0 * (c - 0.7)).tanh().max(0.0) + 0.02 * c))
        .collect();
    let f = sigmoid_exp_fit(&pts).unwrap();
    let rms = (pts.iter().map(|&(c, k)| (f.eval(c) - k).powi(2)).sum::<f64>() / pts.len() as f64).sqrt();
    assert!((rms - f.residual_rms).abs() < 1e-12 * (1.0 + rms));
    assert!(f.residual_rms < 0.05, "{f:?}");
}

#[test]
fn freeing_the_steepness_lowers_the_residual() {
    let pts = synthetic_sweep(TRUTH);
    let free = sigmoid_exp_fit(&pts).unwrap();
    for p3 in [4.0, 30.0] {
        let fixed = sigmoid_exp_fit_fixed_p3(&pts, p3).unwrap();
        assert_eq!(fixed.p3, p3);
        assert!(free.residual_rms < fixed.residual_rms, "p3 = {p3}: {} vs {}", free.residual_rms, fixed.residual_rms);
    }
    // Holding it at the true value costs nothing.
    assert!(sigmoid_exp_fit_fixed_p3(&pts, TRUTH[2]).unwrap().residual_rms < 1e-9);
}

#[test]
fn sigmoid_fit_is_deterministic() {
    let pts = synthetic_sweep([0.3, 1.5, 8.0, 0.6]);
    assert_eq!(sigmoid_exp_fit(&pts).unwrap(), sigmoid_exp_fit(&pts).unwrap());
}

#[test]
fn sigmoid_preconditions() {
    assert!(sigmoid_exp_fit(&synthetic_sweep(TRUTH)[..7]).is_err());
    let mut pts = synthetic_sweep(TRUTH);
    pts[3].1 = f64::INFINITY;
    assert!(sigmoid_exp_fit(&pts).is_err());
}

#[test]
fn flat_synthetic_staircase() {
    let xs = geometric(6);
    let series: Vec<(f64, Vec<(f64, f64)>)> = [0.01, 0.1, 0.5]
        .iter()
        .map(|&s| (s, xs.iter().map(|&x| (x, 3.0 * s * x.powf(-1.889))).collect()))
        .collect();
    let nus = nu_vs_sigma(&series).unwrap();
    assert_eq!(nus.len(), 3);
    for (p, (s, _)) in nus.iter().zip(&series) {
        assert_eq!(p.sigma, *s);
        assert!((p.nu - 1.889).abs() < 1e-12);
        assert_eq!((p.n_min, p.n_max), (xs[0], xs[5]));
    }
}

#[test]
fn staircase_ordering_is_preserved() {
    let xs = geometric(7);
    let exponents = [1.95, 1.9, 1.7, 1.4, 1.1];
    let series: Vec<(f64, Vec<(f64, f64)>)> = exponents
        .iter()
        .enumerate()
        .map(|(k, &nu)| (0.1 * (k + 1) as f64, wobbly_law(&xs, -nu)))
        .collect();
    let nus = nu_vs_sigma(&series).unwrap();
    assert!(nus.windows(2).all(|w| w[0].nu > w[1].nu), "{nus:?}");
}

#[test]
fn stderr_shrinks_with_a_longer_grid() {
    let short = powerlaw_fit(&wobbly_law(&geometric(5), -1.5)).unwrap();
    let long = powerlaw_fit(&wobbly_law(&geometric(12), -1.5)).unwrap();
    assert!(short.exponent_stderr > 0.0);
    assert!(long.exponent_stderr < short.exponent_stderr, "{} vs {}", long.exponent_stderr, short.exponent_stderr);
}

#[test]
fn series_errors_name_the_prior_width() {
    let series = vec![(0.1, vec![(64.0, 1.0), (128.0, 0.5)])];
    let msg = nu_vs_sigma(&series).unwrap_err().to_string();
    assert!(msg.contains("sigma = 0.1"), "{msg}");
}

#[test]
fn adaptive_exponent_falls_at_wide_priors() {
    let sizes = [240, 480, 960, 1920];
    let series: Vec<(f64, Vec<(f64, f64)>)> = [0.05, 0.8]
        .iter()
        .map(|&sigma| {
            let pts = sizes
                .iter()
                .map(|&n| {
                    let p = ProtocolDesign::adaptive(n, 2).unwrap().build(sigma).unwrap();
                    (n as f64, error_exact(&p).unwrap().delta_phi2)
                })
                .collect();
            (sigma, pts)
        })
        .collect();
    let nus = nu_vs_sigma(&series).unwrap();
    assert!(nus[0].nu > nus[1].nu, "{nus:?}");
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn powerlaw_is_scale_equivariant(
        exponent in -3.0..1.0f64,
        scale in 1e-3..1e3f64,
        wobble in prop::collection::vec(-0.1..0.1f64, 4..12),
    ) {
        let pts: Vec<(f64, f64)> = wobble
            .iter()
            .enumerate()
            .map(|(k, w)| {
                let x = 10.0 * 1.6f64.powi(k as i32);
                (x, x.powf(exponent) * (1.0 + w))
            })
            .collect();
        let scaled: Vec<(f64, f64)> = pts.iter().map(|&(x, y)| (x, scale * y)).collect();
        let (a, b) = (powerlaw_fit(&pts).unwrap(), powerlaw_fit(&scaled).unwrap());
        prop_assert!((a.exponent - b.exponent).abs() < 1e-12);
        prop_assert!((b.log_prefactor - a.log_prefactor - scale.ln()).abs() < 1e-10);
    }

    #[test]
    fn synthetic_refit_recovers_the_exponent(exponent in -3.0..1.0f64, prefactor in 1e-3..1e3f64, n in 3usize..15) {
        let pts: Vec<(f64, f64)> = (0..n).map(|k| 5.0 * 1.5f64.powi(k as i32)).map(|x| (x, prefactor * x.powf(exponent))).collect();
        let f = powerlaw_fit(&pts).unwrap();
        prop_assert!((f.exponent - exponent).abs() < 1e-10);
        let again: Vec<(f64, f64)> = pts.iter().map(|&(x, _)| (x, f.log_prefactor.exp() * x.powf(f.exponent))).collect();
        prop_assert!((powerlaw_fit(&again).unwrap().exponent - exponent).abs() < 1e-10);
    }
}
