//! Spin moments, squeezing parameters, minimum-variance directions and
//! kurtoses of a [`CollectiveState`].
//!
//! All moments are evaluated by applying the banded operators `J_x`, `J_y`,
//! `J_z` to the state vector (O(N) each), e.g. `<J_y^2> = ||J_y psi||^2` and
//! `<J_y^4> = ||J_y^2 psi||^2`. This is exact and avoids any basis change.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spinstate::{basis::ladder_coefficients, m_value, Axis, CollectiveState};

/// First, second and fourth collective-spin moments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentSet {
    pub n_particles: usize,
    pub jx: f64,
    pub jy: f64,
    pub jz: f64,
    pub jx2: f64,
    pub jy2: f64,
    pub jz2: f64,
    /// `<{J_y, J_z}>`.
    pub anti_yz: f64,
    /// `<{J_x, J_y}>`.
    pub anti_xy: f64,
    /// `Cov(J_y, J_z) = <{J_y, J_z}>/2 - <J_y><J_z>`.
    pub cov_yz: f64,
    pub jy4: f64,
    pub jz4: f64,
}

impl MomentSet {
    /// `Var(J_x)`.
    pub fn var_x(&self) -> f64 {
        self.jx2 - self.jx * self.jx
    }
    /// `Var(J_y)`.
    pub fn var_y(&self) -> f64 {
        self.jy2 - self.jy * self.jy
    }
    /// `Var(J_z)`.
    pub fn var_z(&self) -> f64 {
        self.jz2 - self.jz * self.jz
    }

    /// Variance of `J(theta) = cos(theta) J_y - sin(theta) J_z`, i.e. of `J_y`
    /// after `R_x(theta)`.
    pub fn rotated_y_variance(&self, theta: f64) -> f64 {
        let (s, c) = theta.sin_cos();
        c * c * self.var_y() + s * s * self.var_z() - 2.0 * c * s * self.cov_yz
    }

    /// Smallest variance over all `R_x` rotations,
    /// `(V_y + V_z)/2 - sqrt(((V_y - V_z)/2)^2 + Cov^2)`.
    pub fn min_rotated_variance(&self) -> f64 {
        let (y, z) = (self.var_y(), self.var_z());
        0.5 * (y + z) - (0.25 * (y - z).powi(2) + self.cov_yz.powi(2)).sqrt()
    }
}

/// Helpers applying the ladder operators to a state vector.
pub(crate) struct Ops {
    n: usize,
    ladder: Vec<f64>,
}

impl Ops {
    pub(crate) fn new(n: usize) -> Self {
        Ops {
            n,
            ladder: ladder_coefficients(n),
        }
    }

    /// Returns `(J_+ v, J_- v)`.
    fn ladders(&self, v: &[Complex64]) -> (Vec<Complex64>, Vec<Complex64>) {
        let dim = self.n + 1;
        let zero = Complex64::new(0.0, 0.0);
        let mut up = vec![zero; dim];
        let mut down = vec![zero; dim];
        for i in 0..self.n {
            up[i + 1] = v[i] * self.ladder[i];
            down[i] = v[i + 1] * self.ladder[i];
        }
        (up, down)
    }

    pub(crate) fn jx(&self, v: &[Complex64]) -> Vec<Complex64> {
        let (u, d) = self.ladders(v);
        u.iter().zip(&d).map(|(a, b)| (a + b) * 0.5).collect()
    }

    pub(crate) fn jy(&self, v: &[Complex64]) -> Vec<Complex64> {
        // (J_+ - J_-) / (2i) = -i (J_+ - J_-) / 2
        let (u, d) = self.ladders(v);
        u.iter()
            .zip(&d)
            .map(|(a, b)| (a - b) * Complex64::new(0.0, -0.5))
            .collect()
    }

    pub(crate) fn jz(&self, v: &[Complex64]) -> Vec<Complex64> {
        v.iter()
            .enumerate()
            .map(|(i, a)| a * m_value(self.n, i))
            .collect()
    }
}

fn dot(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

fn norm_sqr(a: &[Complex64]) -> f64 {
    a.iter().map(|x| x.norm_sqr()).sum()
}

/// Computes all moments of `state`.
pub fn compute_moments(state: &CollectiveState) -> MomentSet {
    let n = state.n_particles();
    let psi = state.amplitudes();
    let ops = Ops::new(n);
    let x = ops.jx(psi);
    let y = ops.jy(psi);
    let z = ops.jz(psi);
    let yy = ops.jy(&y);
    let jy = dot(psi, &y).re;
    let jz = dot(psi, &z).re;
    let anti_yz = 2.0 * dot(&y, &z).re;
    let jz4 = psi
        .iter()
        .enumerate()
        .map(|(i, a)| m_value(n, i).powi(4) * a.norm_sqr())
        .sum();
    MomentSet {
        n_particles: n,
        jx: dot(psi, &x).re,
        jy,
        jz,
        jx2: norm_sqr(&x),
        jy2: norm_sqr(&y),
        jz2: norm_sqr(&z),
        anti_yz,
        anti_xy: 2.0 * dot(&x, &y).re,
        cov_yz: 0.5 * anti_yz - jy * jz,
        jy4: norm_sqr(&yy),
        jz4,
    }
}

fn check_jx(m: &MomentSet) -> Result<()> {
    let n = m.n_particles as f64;
    if m.jx.abs() <= 1e-12 * n {
        return Err(Error::DegenerateOrientation { jx: m.jx });
    }
    Ok(())
}

/// Wineland squeezing parameter `xi^2 = N Var(J_y) / <J_x>^2`.
pub fn wineland_xi2(m: &MomentSet) -> Result<f64> {
    check_jx(m)?;
    Ok(m.n_particles as f64 * m.var_y() / (m.jx * m.jx))
}

/// Prior-averaged rotated squeezing parameter
/// `N / <J_x>^2 * [Var(J_y) + sigma^2 Var(J_x)]`, with `sigma` the prior
/// standard deviation.
pub fn rotated_xibar2(m: &MomentSet, sigma: f64) -> Result<f64> {
    check_jx(m)?;
    Ok(m.n_particles as f64 / (m.jx * m.jx) * (m.var_y() + sigma * sigma * m.var_x()))
}

/// Result of [`min_variance_angle`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VarianceAngle {
    /// `theta* = atan2(2 Cov(J_y, J_z), Var(J_z) - Var(J_y)) / 2`.
    pub theta: f64,
    /// Set when the `y`-`z` covariance matrix is isotropic; `theta` is 0.
    pub degenerate: bool,
}

/// Angle `theta*` such that `R_x(theta*)` minimises the `J_y` variance among
/// all `x` rotations; equivalently `J(theta*) = cos J_y - sin J_z` has the
/// least variance.
pub fn min_variance_angle(m: &MomentSet) -> VarianceAngle {
    let num = 2.0 * m.cov_yz;
    let den = m.var_z() - m.var_y();
    let scale = 1e-12 * (m.n_particles as f64).powi(2);
    if num.abs() <= scale && den.abs() <= scale {
        return VarianceAngle {
            theta: 0.0,
            degenerate: true,
        };
    }
    VarianceAngle {
        theta: 0.5 * num.atan2(den),
        degenerate: false,
    }
}

/// Kurtosis `<(J_a - <J_a>)^4> / Var(J_a)^2` along `y` or `z`.
pub fn kurtosis(state: &CollectiveState, axis: Axis) -> Result<f64> {
    let n = state.n_particles();
    let psi = state.amplitudes();
    let (var, fourth) = match axis {
        Axis::Z => {
            let p: Vec<f64> = psi.iter().map(|a| a.norm_sqr()).collect();
            let mean: f64 = p.iter().enumerate().map(|(i, q)| m_value(n, i) * q).sum();
            let (mut v, mut f) = (0.0, 0.0);
            for (i, q) in p.iter().enumerate() {
                let d = m_value(n, i) - mean;
                v += d * d * q;
                f += d.powi(4) * q;
            }
            (v, f)
        }
        Axis::Y => {
            let ops = Ops::new(n);
            let y = ops.jy(psi);
            let mean = dot(psi, &y).re;
            let centred: Vec<Complex64> = y.iter().zip(psi).map(|(a, p)| a - p * mean).collect();
            let c2 = ops.jy(&centred);
            let c2: Vec<Complex64> = c2.iter().zip(&centred).map(|(a, c)| a - c * mean).collect();
            (norm_sqr(&centred), norm_sqr(&c2))
        }
        Axis::X => {
            return Err(Error::InvalidArgument("kurtosis axis must be y or z".into()));
        }
    };
    if var <= 1e-12 * (n as f64).powi(2) * f64::EPSILON {
        return Err(Error::UndefinedKurtosis { axis: axis.name() });
    }
    Ok(fourth / (var * var))
}
