//! Closed-form moment theory of twisted Gaussian states.
//!
//! A Gaussian squeezed state with width parameter `s2` has Dicke amplitudes
//! `exp(-m^2 / (s2 N))`; applying a one-axis twist `exp(-i chi J_z^2)` gives a
//! twisted Gaussian state whose moments have simple approximate closed
//! forms. Throughout this module
//!
//! ```text
//! u = 1/(s2 N) + chi^2 s2 N
//! ```
//!
//! is the combination that controls how far the state has sheared around the
//! sphere. The module also provides the twist-angle root equations used to
//! build finite-size schedules, the analytic multi-twist recursions and the
//! optimum for weakly non-Gaussian states.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Approximate moments of `T(chi) |GSS(s2)>_z`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwistedGaussianMoments {
    pub n_particles: usize,
    pub s2: f64,
    pub chi: f64,
    /// `<J_x> = N/2 exp(-u/2)`.
    pub jx_mean: f64,
    /// Half the difference of the `z` and `y` second moments (scaled by 8/N)
    /// minus the width term: `N/2 (1 - exp(-2u)) - s2`.
    pub a_coef: f64,
    /// Scaled anticommutator `2 chi s2 N exp(-u/2)`; odd in `chi`.
    pub b_coef: f64,
    /// Anti-squeezed variance `N/8 [2 s2 + A + sqrt(A^2 + B^2)]`.
    pub v_plus: f64,
    /// Squeezed variance `N/8 [2 s2 + A - sqrt(A^2 + B^2)]`.
    pub v_minus: f64,
    /// `atan2(B, A) / 2`, the orientation of the squeezed axis.
    pub theta_star: f64,
    /// `Var(J_x) = N^2/8 (1 + exp(-2u)) - N^2/4 exp(-u)`.
    pub var_x: f64,
}

impl TwistedGaussianMoments {
    /// The combination `u = 1/(s2 N) + chi^2 s2 N`.
    pub fn shear(&self) -> f64 {
        shear(self.n_particles as f64, self.s2, self.chi)
    }

    /// Leading-order expansion of `Var(J_x)`, valid for `u << 1`:
    /// `N^2/8 (1/(s2^2 N^2) + chi^4 s2^2 N^2 + 2 chi^2)`.
    pub fn var_x_taylor(&self) -> f64 {
        let n = self.n_particles as f64;
        let (s2, c2) = (self.s2, self.chi * self.chi);
        n * n / 8.0 * (1.0 / (s2 * s2 * n * n) + c2 * c2 * s2 * s2 * n * n + 2.0 * c2)
    }

    /// Intermediate form `N/4 [s2 - chi^2 s2^2 N / sinh(u)]` of the squeezed
    /// variance.
    pub fn v_minus_sinh(&self) -> f64 {
        let n = self.n_particles as f64;
        let u = self.shear();
        n / 4.0 * (self.s2 - self.chi * self.chi * self.s2 * self.s2 * n / u.sinh())
    }

    /// Fully expanded form `s2 N/4 [1/(chi^2 s2^2 N^2) + chi^4 s2^2 N^2 / 6]`
    /// of the squeezed variance.
    pub fn v_minus_taylor(&self) -> f64 {
        let n = self.n_particles as f64;
        let (s2, c2) = (self.s2, self.chi * self.chi);
        s2 * n / 4.0 * (1.0 / (c2 * s2 * s2 * n * n) + c2 * c2 * s2 * s2 * n * n / 6.0)
    }

    /// Whether `1/(s2 N) < chi^2 s2 N < 0.3`, the window in which the twist
    /// is strong enough to matter yet weak enough for the closed forms.
    pub fn in_regime(&self) -> bool {
        let n = self.n_particles as f64;
        let lo = 1.0 / (self.s2 * n);
        let x = self.chi * self.chi * self.s2 * n;
        lo < x && x < 0.3
    }
}

fn shear(n: f64, s2: f64, chi: f64) -> f64 {
    1.0 / (s2 * n) + chi * chi * s2 * n
}

/// Closed-form moments of a twisted Gaussian state.
pub fn tg_moments(n: usize, s2: f64, chi: f64) -> Result<TwistedGaussianMoments> {
    if n == 0 {
        return invalid("particle number must be positive");
    }
    if !(s2 > 0.0 && s2.is_finite()) {
        return invalid(format!("width s2 must be positive, got {s2}"));
    }
    let nf = n as f64;
    let u = shear(nf, s2, chi);
    let half_decay = (-0.5 * u).exp();
    let a = nf / 2.0 * -(-2.0 * u).exp_m1() - s2;
    let b = 2.0 * chi * s2 * nf * half_decay;
    let root = a.hypot(b);
    Ok(TwistedGaussianMoments {
        n_particles: n,
        s2,
        chi,
        jx_mean: nf / 2.0 * half_decay,
        a_coef: a,
        b_coef: b,
        v_plus: nf / 8.0 * (2.0 * s2 + a + root),
        v_minus: nf / 8.0 * (2.0 * s2 + a - root),
        theta_star: 0.5 * b.atan2(a),
        var_x: nf * nf / 8.0 * (1.0 + (-2.0 * u).exp()) - nf * nf / 4.0 * (-u).exp(),
    })
}

/// A value together with a flag saying whether its inputs lie in the regime
/// where the approximation behind it holds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegimeValue {
    pub value: f64,
    pub in_regime: bool,
}

/// Twist angle `3^(1/6) / (s2 N)^(2/3)` minimising the squeezed variance of a
/// twisted Gaussian state. Flagged out of regime when `s2 N <= 1`.
pub fn chi_star_unrotated(n: usize, s2: f64) -> RegimeValue {
    let sn = s2 * n as f64;
    RegimeValue {
        value: 3f64.powf(1.0 / 6.0) / sn.powf(2.0 / 3.0),
        in_regime: sn > 1.0,
    }
}

/// Upper end of the twist-angle bracket.
const CHI_BRACKET_HI: f64 = std::f64::consts::PI;
/// Lower end of the twist-angle bracket.
const CHI_BRACKET_LO: f64 = 1e-12;
/// Residual accepted by the root solver.
const ROOT_RESIDUAL: f64 = 1e-12;

/// Left-hand side of the single-ensemble twist equation,
/// `chi^2 xi2 N - tanh(1/(xi2 N) + chi^2 xi2 N)`.
pub fn state1_residual(n: f64, xi2: f64, chi: f64) -> f64 {
    let x = chi * chi * xi2 * n;
    x - (1.0 / (xi2 * n) + x).tanh()
}

/// The factor `L(chi)` multiplying the carried phase variance in the
/// chained twist equation, `N sinh(u) / (xi2 coth(u)) (e^-u - e^-2u)` with
/// `u = 1/(xi2 N) + chi^2 xi2 N`.
///
/// Evaluated as `N/xi2 tanh(u) (1 - e^-2u)/2 (1 - e^-u)`, which is the same
/// quantity without the overflow of `sinh` at large `u`.
pub fn carry_factor(n: f64, xi2: f64, chi: f64) -> f64 {
    let u = shear(n, xi2, chi);
    n / xi2 * u.tanh() * 0.5 * -(-2.0 * u).exp_m1() * -(-u).exp_m1()
}

/// The same factor evaluated exactly as printed with `sinh` and `coth`.
/// Overflows for large `u`; kept to check [`carry_factor`] against.
pub fn carry_factor_hyperbolic(n: f64, xi2: f64, chi: f64) -> f64 {
    let u = shear(n, xi2, chi);
    n * u.sinh() / (xi2 / u.tanh()) * ((-u).exp() - (-2.0 * u).exp())
}

/// Left-hand side of the chained twist equation:
/// [`state1_residual`] plus `carry * L(chi)`.
pub fn state3_residual(n: f64, xi2: f64, carry: f64, chi: f64) -> f64 {
    let base = state1_residual(n, xi2, chi);
    if carry == 0.0 {
        base
    } else {
        base + carry * carry_factor(n, xi2, chi)
    }
}

/// Root of the single-ensemble twist equation for an ensemble of `n`
/// particles whose current squeezing parameter is `xi2_prev`.
pub fn solve_state1(n: usize, xi2_prev: f64) -> Result<f64> {
    check_root_inputs(n, xi2_prev)?;
    let nf = n as f64;
    bracketed_root("state1", CHI_BRACKET_LO, CHI_BRACKET_HI, |chi| {
        state1_residual(nf, xi2_prev, chi)
    })
}

/// Root of the chained twist equation: the single-ensemble equation plus a
/// term penalising the anti-squeezed `J_x` variance in proportion to the
/// phase variance `carry` left by the earlier ensembles.
///
/// The caller decides what `carry` is; see [`CarryRule`].
pub fn solve_state3(n_k: usize, xi2_prev: f64, carry: f64) -> Result<f64> {
    check_root_inputs(n_k, xi2_prev)?;
    if !(carry >= 0.0 && carry.is_finite()) {
        return invalid(format!("carry must be non-negative, got {carry}"));
    }
    let nf = n_k as f64;
    bracketed_root("state3", CHI_BRACKET_LO, CHI_BRACKET_HI, |chi| {
        state3_residual(nf, xi2_prev, carry, chi)
    })
}

fn check_root_inputs(n: usize, xi2: f64) -> Result<()> {
    if !(xi2 > 0.0 && xi2.is_finite()) {
        return invalid(format!("squeezing parameter must be positive, got {xi2}"));
    }
    if xi2 * n as f64 <= 1.0 {
        return invalid(format!("need xi2 * N > 1, got xi2 = {xi2}, N = {n}"));
    }
    Ok(())
}

/// How the chained twist equation's carried phase variance is formed from
/// the previous ensemble's size `n_prev` and rotated squeezing `xibar2_prev`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CarryRule {
    /// `xibar2_prev / n_prev`: the phase variance left after measuring the
    /// previous ensemble, which is what the derivative of the rotated
    /// squeezing parameter multiplies.
    #[default]
    ResidualVariance,
    /// `n_prev * xibar2_prev`, the product form as typeset.
    Product,
}

impl CarryRule {
    /// The carry value for a previous ensemble.
    pub fn carry(self, n_prev: usize, xibar2_prev: f64) -> f64 {
        match self {
            CarryRule::ResidualVariance => xibar2_prev / n_prev as f64,
            CarryRule::Product => n_prev as f64 * xibar2_prev,
        }
    }
}

/// Bisection with secant steps on a bracket where `f` changes sign.
///
/// Each iteration tries the secant point of the current bracket and falls
/// back to the midpoint whenever the secant point is not well inside the
/// bracket or the bracket failed to halve on the previous step. Stops when
/// `|f| < ROOT_RESIDUAL` or the bracket can no longer shrink, returning the
/// endpoint with the smaller residual.
pub(crate) fn bracketed_root<F>(equation: &'static str, lo: f64, hi: f64, f: F) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    let (mut a, mut b) = (lo, hi);
    let (mut fa, mut fb) = (f(a), f(b));
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if fa.signum() == fb.signum() || !fa.is_finite() || !fb.is_finite() {
        return Err(Error::NoRoot {
            equation,
            lo,
            hi,
            f_lo: fa,
            f_hi: fb,
        });
    }
    let mut last_width = b - a;
    for _ in 0..400 {
        let width = b - a;
        let secant = b - fb * (b - a) / (fb - fa);
        let margin = 1e-3 * width;
        let x = if width < 0.5 * last_width && secant > a + margin && secant < b - margin {
            secant
        } else {
            0.5 * (a + b)
        };
        last_width = width;
        let fx = f(x);
        if fx.abs() < ROOT_RESIDUAL || x <= a || x >= b {
            return Ok(x);
        }
        if fx.signum() == fa.signum() {
            a = x;
            fa = fx;
        } else {
            b = x;
            fb = fx;
        }
    }
    Ok(if fa.abs() < fb.abs() { a } else { b })
}

/// One step of the analytic multi-twist recursion in which each twist
/// minimises the prior-averaged rotated squeezing parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecursionState {
    /// 1-based index of the twist this step describes.
    pub stage: usize,
    /// Width of the Gaussian state the twist acts on.
    pub s2: f64,
    /// Optimal twist angle
    /// `[1 / ((s2/3 + N sigma^2) s2^3 N^4)]^(1/6)`.
    pub chi_star: f64,
    /// Rotated squeezing parameter reached at `chi_star`.
    pub xibar2: f64,
    /// Width of the Gaussian state the twisted state is treated as.
    pub s2_next: f64,
}

impl RecursionState {
    /// The following step, acting on `s2_next`.
    pub fn next(&self, n: usize, sigma: f64) -> Result<RecursionState> {
        let mut st = tg_recursion(n, self.s2_next, sigma)?;
        st.stage = self.stage + 1;
        Ok(st)
    }
}

/// First step of the rotated-squeezing recursion from width `s2` with prior
/// standard deviation `sigma`.
pub fn tg_recursion(n: usize, s2: f64, sigma: f64) -> Result<RecursionState> {
    if !(s2 > 0.0) || n == 0 {
        return invalid("need N >= 1 and s2 > 0");
    }
    if !(sigma >= 0.0) {
        return invalid(format!("prior width must be non-negative, got {sigma}"));
    }
    let nf = n as f64;
    let sig2 = sigma * sigma;
    let g = s2 / 3.0 + nf * sig2;
    let chi_star = (1.0 / (g * s2.powi(3) * nf.powi(4))).powf(1.0 / 6.0);
    let xibar2 = (9.0 * s2 + 27.0 * nf * sig2).cbrt() / (2.0 * nf.powf(2.0 / 3.0))
        + sig2 / (2.0 * s2 * s2 * nf)
        + sig2 / (g.cbrt() * s2 * nf.cbrt());
    let s2_next = s2 * (g.cbrt() / (s2 * nf.powf(2.0 / 3.0)) + 1.0 / (6.0 * nf.powf(2.0 / 3.0) * g.powf(2.0 / 3.0)));
    Ok(RecursionState {
        stage: 1,
        s2,
        chi_star,
        xibar2,
        s2_next,
    })
}

/// Width of the state the `j`-th twist acts on when every twist minimises
/// the squeezed variance: `(3 / (2^(3/2) N))^(1 - 3^-(j-1))`.
pub fn s2_pattern(j: u32, n: usize) -> f64 {
    assert!(j >= 1, "twist index is 1-based");
    let e = 1.0 - 3f64.powi(-(j as i32 - 1));
    (3.0 / (2f64.powf(1.5) * n as f64)).powf(e)
}

/// Optimal `j`-th twist angle in the same sequence:
/// `2^(1 - 3^-(j-1)) / (3^(1/2 - 2/3^j) N^(2/3^j))`.
pub fn chi_pattern(j: u32, n: usize) -> f64 {
    assert!(j >= 1, "twist index is 1-based");
    let j = j as i32;
    let num = 2f64.powf(1.0 - 3f64.powi(-(j - 1)));
    let den = 3f64.powf(0.5 - 2.0 / 3f64.powi(j)) * (n as f64).powf(2.0 / 3f64.powi(j));
    num / den
}

/// Optimum of a weakly non-Gaussian, minimum-uncertainty probe whose
/// anti-squeezed kurtosis is bounded by `w_z`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeaklyNonGaussianOptimum {
    /// `Var(J_y) = (N^2 sigma^2 w_z / 2)^(1/3)`.
    pub delta_jy2: f64,
    /// `xi^2 = (32 sigma^2 w_z / N)^(1/3)`.
    pub xi2: f64,
    /// `[32^(1/3) + (1/(16 * 64^2))^(1/3)] (sigma^2 w_z / N)^(1/3)`.
    pub xibar2: f64,
}

/// Closed-form optimum for weakly non-Gaussian probes.
pub fn weakly_ng_optimum(n: usize, sigma: f64, w_z: f64) -> Result<WeaklyNonGaussianOptimum> {
    if n == 0 || !(sigma > 0.0) || !(w_z > 0.0) {
        return invalid("need N, sigma and w_z all positive");
    }
    let nf = n as f64;
    let q = sigma * sigma * w_z;
    Ok(WeaklyNonGaussianOptimum {
        delta_jy2: (nf * nf * q / 2.0).cbrt(),
        xi2: (32.0 * q / nf).cbrt(),
        xibar2: (32f64.cbrt() + (1.0f64 / (16.0 * 64.0 * 64.0)).cbrt()) * (q / nf).cbrt(),
    })
}
