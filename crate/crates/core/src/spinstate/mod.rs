//! Pure states of `N` spin-1/2 particles in the symmetric subspace.
//!
//! Amplitudes are stored in the `J_z` eigenbasis with index `i = m + N/2`,
//! `m = -N/2, ..., N/2`. Rotations follow `R_a(theta) = exp(-i theta J_a)`,
//! twists `T(chi) = exp(-i chi J_z^2)`. With these conventions
//! `R_x(theta)^dag J_y R_x(theta) = cos(theta) J_y - sin(theta) J_z` and
//! `R_z(phi)^dag J_y R_z(phi) = cos(phi) J_y + sin(phi) J_x`.
//!
//! `J_y` eigenstates are defined as `|J_y = lambda> = R_z(pi/2) |J_x = lambda>`.

pub mod basis;

use std::f64::consts::FRAC_PI_2;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
pub use basis::{x_basis, XBasis};

/// A collective spin component.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    /// Lower-case axis name.
    pub fn name(self) -> &'static str {
        match self {
            Axis::X => "x",
            Axis::Y => "y",
            Axis::Z => "z",
        }
    }
}

/// A normalised state vector over the `N + 1` Dicke states.
#[derive(Debug, Clone, PartialEq)]
pub struct CollectiveState {
    n: usize,
    amplitudes: Vec<Complex64>,
}

impl CollectiveState {
    /// Wraps `amplitudes` (length `n + 1`), normalising them.
    pub fn new(n: usize, mut amplitudes: Vec<Complex64>) -> Result<Self> {
        if n == 0 {
            return invalid("particle number must be at least 1");
        }
        if amplitudes.len() != n + 1 {
            return invalid(format!(
                "expected {} amplitudes for N = {n}, got {}",
                n + 1,
                amplitudes.len()
            ));
        }
        let norm = amplitudes.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        if !norm.is_finite() || norm == 0.0 {
            return invalid("amplitudes must have a finite, nonzero norm");
        }
        for a in &mut amplitudes {
            *a /= norm;
        }
        Ok(CollectiveState { n, amplitudes })
    }

    /// Wraps amplitudes that are already normalised.
    pub(crate) fn from_normalized(n: usize, amplitudes: Vec<Complex64>) -> Self {
        debug_assert_eq!(amplitudes.len(), n + 1);
        CollectiveState { n, amplitudes }
    }

    /// Particle number `N`.
    pub fn n_particles(&self) -> usize {
        self.n
    }

    /// Hilbert-space dimension `N + 1`.
    pub fn dim(&self) -> usize {
        self.n + 1
    }

    /// Amplitudes in the `J_z` basis.
    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amplitudes
    }

    /// Magnetic quantum number of index `i`.
    pub fn m_value(&self, i: usize) -> f64 {
        m_value(self.n, i)
    }

    /// Squared norm (1 up to rounding).
    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum()
    }

    /// Inner product `<self|other>`.
    pub fn inner(&self, other: &CollectiveState) -> Complex64 {
        assert_eq!(self.n, other.n, "particle numbers differ");
        self.amplitudes
            .iter()
            .zip(&other.amplitudes)
            .map(|(a, b)| a.conj() * b)
            .sum()
    }
}

/// `m = i - N/2`.
pub fn m_value(n: usize, i: usize) -> f64 {
    i as f64 - n as f64 / 2.0
}

/// `ln C(N, k)` for `k = 0..=N`, accumulated as a running sum of logs, so
/// nothing overflows for large `N`.
pub fn ln_binomials(n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n + 1);
    let mut acc = 0.0;
    out.push(0.0);
    for k in 0..n {
        acc += ((n - k) as f64).ln() - ((k + 1) as f64).ln();
        out.push(acc);
    }
    out
}

/// The coherent state `|J_x = N/2>`:
/// `a_m = 2^(-N/2) sqrt(C(N, N/2 + m))`.
pub fn coherent_x(n: usize) -> Result<CollectiveState> {
    if n == 0 {
        return invalid("coherent_x: N must be at least 1");
    }
    let half_ln2 = 0.5 * n as f64 * std::f64::consts::LN_2;
    let amps = ln_binomials(n)
        .into_iter()
        .map(|l| Complex64::new((0.5 * l - half_ln2).exp(), 0.0))
        .collect();
    CollectiveState::new(n, amps)
}

/// Gaussian squeezed state with amplitudes proportional to
/// `exp(-m^2 / (s2 N))` along `axis`.
///
/// For `Z` this is the Dicke-basis profile itself, polarised along `+x`.
/// For `Y` it is the same state rotated by `R_x(-pi/2)`, so that the `J_y`
/// outcome distribution carries the Gaussian profile and the polarisation
/// stays along `+x`.
pub fn gss(n: usize, s2: f64, axis: Axis) -> Result<CollectiveState> {
    if n == 0 {
        return invalid("gss: N must be at least 1");
    }
    if !(s2 > 0.0) || !s2.is_finite() {
        return invalid(format!("gss: s2 must be positive and finite, got {s2}"));
    }
    let width = s2 * n as f64;
    let amps = (0..=n)
        .map(|i| {
            let m = m_value(n, i);
            Complex64::new((-m * m / width).exp(), 0.0)
        })
        .collect();
    let z = CollectiveState::new(n, amps)?;
    match axis {
        Axis::Z => Ok(z),
        Axis::Y => Ok(apply_rotation(&z, Axis::X, -FRAC_PI_2)),
        Axis::X => invalid("gss: axis must be y or z"),
    }
}

/// Multiplies each amplitude by `exp(-i phase_per_m * m)`.
fn phase_by_m(n: usize, amps: &[Complex64], phase_per_m: f64) -> Vec<Complex64> {
    amps.iter()
        .enumerate()
        .map(|(i, a)| a * Complex64::from_polar(1.0, -phase_per_m * m_value(n, i)))
        .collect()
}

/// One-axis twist `exp(-i chi J_z^2)`.
pub fn apply_twist(state: &CollectiveState, chi: f64) -> CollectiveState {
    let n = state.n;
    let amps = state
        .amplitudes
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let m = m_value(n, i);
            a * Complex64::from_polar(1.0, -chi * m * m)
        })
        .collect();
    CollectiveState::from_normalized(n, amps)
}

/// Rotation `exp(-i theta J_axis)`.
pub fn apply_rotation(state: &CollectiveState, axis: Axis, theta: f64) -> CollectiveState {
    let n = state.n;
    match axis {
        Axis::Z => CollectiveState::from_normalized(n, phase_by_m(n, &state.amplitudes, theta)),
        Axis::X => {
            let b = x_basis(n);
            let mut c = b.project(&state.amplitudes);
            for (mu, cm) in c.iter_mut().enumerate() {
                *cm *= Complex64::from_polar(1.0, -theta * b.eigenvalue(mu));
            }
            CollectiveState::from_normalized(n, b.expand(&c))
        }
        Axis::Y => {
            // R_y(theta) = R_z(pi/2) R_x(theta) R_z(-pi/2)
            let s = apply_rotation(state, Axis::Z, -FRAC_PI_2);
            let s = apply_rotation(&s, Axis::X, theta);
            apply_rotation(&s, Axis::Z, FRAC_PI_2)
        }
    }
}

/// Outcome probabilities `p_m = |<J_axis = m|psi>|^2`, indexed by `m + N/2`.
pub fn measurement_distribution(state: &CollectiveState, axis: Axis) -> Vec<f64> {
    match axis {
        Axis::Z => state.amplitudes.iter().map(|a| a.norm_sqr()).collect(),
        Axis::X => x_basis(state.n)
            .project(&state.amplitudes)
            .iter()
            .map(|c| c.norm_sqr())
            .collect(),
        Axis::Y => conditional_y_distribution(state, 0.0),
    }
}

/// `J_y` outcome probabilities after the signal rotation `R_z(residual)`:
/// `p(m | r) = |<J_y = m| R_z(r) |psi>|^2`.
pub fn conditional_y_distribution(state: &CollectiveState, residual: f64) -> Vec<f64> {
    let phased = y_phased(state, residual);
    x_basis(state.n)
        .project(&phased)
        .iter()
        .map(|c| c.norm_sqr())
        .collect()
}

/// [`conditional_y_distribution`] for many residuals at once, using a
/// blocked matrix product when the basis is stored.
pub fn conditional_y_distributions(state: &CollectiveState, residuals: &[f64]) -> Vec<Vec<f64>> {
    let inputs: Vec<Vec<Complex64>> = residuals.iter().map(|&r| y_phased(state, r)).collect();
    x_basis(state.n).batch_probabilities(&inputs)
}

/// `R_z(pi/2)^dag R_z(r) psi`, whose `J_x`-basis coefficients are the
/// `J_y`-basis coefficients of `R_z(r) psi`.
fn y_phased(state: &CollectiveState, residual: f64) -> Vec<Complex64> {
    phase_by_m(state.n, &state.amplitudes, residual - FRAC_PI_2)
}

/// Husimi function `Q(polar, azimuth) = |<polar, azimuth|psi>|^2` with the
/// coherent state `R_z(azimuth) R_y(polar) |J_z = N/2>`. Values lie in
/// `[0, 1]`; `coherent_x` peaks at `(pi/2, 0)`.
pub fn husimi_q(state: &CollectiveState, grid: &[(f64, f64)]) -> Vec<f64> {
    let n = state.n;
    let lnb = ln_binomials(n);
    crate::par::map_slice(grid, |&(polar, azimuth)| {
        let (ln_c, ln_s) = ((polar / 2.0).cos().abs().ln(), (polar / 2.0).sin().abs().ln());
        let sign_c = (polar / 2.0).cos().signum();
        let sign_s = (polar / 2.0).sin().signum();
        let mut acc = Complex64::new(0.0, 0.0);
        for (i, a) in state.amplitudes.iter().enumerate() {
            let k = i;
            let up = if k == 0 { 0.0 } else { k as f64 * ln_c };
            let down = if n - k == 0 { 0.0 } else { (n - k) as f64 * ln_s };
            let mag = (0.5 * lnb[k] + up + down).exp();
            if mag == 0.0 {
                continue;
            }
            let sign = sign_c.powi(k as i32) * sign_s.powi((n - k) as i32);
            let m = m_value(n, i);
            acc += a * Complex64::from_polar(sign * mag, m * azimuth);
        }
        acc.norm_sqr().clamp(0.0, 1.0)
    })
}
