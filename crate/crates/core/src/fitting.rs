//! Scaling-exponent extraction and the sigmoid-exponential kurtosis fit.

use levenberg_marquardt::{LeastSquaresProblem, LevenbergMarquardt};
use nalgebra::{storage::Owned, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::par;

/// Straight-line fit of `ln y` against `ln x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    /// Slope of `ln y` against `ln x`.
    pub exponent: f64,
    /// Intercept, so that `y ~ exp(log_prefactor) x^exponent`.
    pub log_prefactor: f64,
    /// Root-mean-square residual in `ln y`.
    pub residual_rms: f64,
    /// Standard error of the slope from the least-squares covariance.
    pub exponent_stderr: f64,
    /// Smallest and largest `x` in the fit.
    pub x_min: f64,
    pub x_max: f64,
}

/// Least-squares power law through `points` (all coordinates positive).
pub fn powerlaw_fit(points: &[(f64, f64)]) -> Result<PowerLawFit> {
    if points.len() < 3 {
        return invalid("a power-law fit needs at least three points");
    }
    if points.iter().any(|&(x, y)| !(x > 0.0 && y > 0.0 && x.is_finite() && y.is_finite())) {
        return invalid("power-law fit points must be positive and finite");
    }
    let n = points.len() as f64;
    let lx: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx <= 0.0 {
        return invalid("power-law fit needs at least two distinct x values");
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ssr: f64 = lx
        .iter()
        .zip(&ly)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    let stderr = (ssr / (n - 2.0) / sxx).sqrt();
    let xs = points.iter().map(|p| p.0);
    Ok(PowerLawFit {
        exponent: slope,
        log_prefactor: intercept,
        residual_rms: (ssr / n).sqrt(),
        exponent_stderr: stderr,
        x_min: xs.clone().fold(f64::INFINITY, f64::min),
        x_max: xs.fold(f64::NEG_INFINITY, f64::max),
    })
}

/// Fitted error exponent at one prior width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NuPoint {
    pub sigma: f64,
    /// `nu = -slope` of `ln(dphi^2)` against `ln N`.
    pub nu: f64,
    pub stderr: f64,
    /// Fit window in `N`.
    pub n_min: f64,
    pub n_max: f64,
}

/// Error exponents `nu(sigma)` from `(sigma, [(N, dphi^2)])` series; each
/// series needs at least three points.
pub fn nu_vs_sigma(series: &[(f64, Vec<(f64, f64)>)]) -> Result<Vec<NuPoint>> {
    par::map_slice(series, |(sigma, pts)| {
            let f = powerlaw_fit(pts).map_err(|e| Error::Fit(format!("sigma = {sigma}: {e}")))?;
            Ok(NuPoint {
                sigma: *sigma,
                nu: -f.exponent,
                stderr: f.exponent_stderr,
                n_min: f.x_min,
                n_max: f.x_max,
            })
    })
    .into_iter()
    .collect()
}

/// Parameters of `K(c) = 3 + p1 exp(p2 c) / (1 + exp(-p3 (c - p4)))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SigmoidExpFit {
    pub p1: f64,
    pub p2: f64,
    pub p3: f64,
    pub p4: f64,
    pub converged: bool,
    pub residual_rms: f64,
}

impl SigmoidExpFit {
    /// Model value at `c`.
    pub fn eval(&self, c: f64) -> f64 {
        sigmoid_exp([self.p1, self.p2, self.p3, self.p4], c)
    }
}

/// The sigmoid-exponential model.
pub fn sigmoid_exp(p: [f64; 4], c: f64) -> f64 {
    3.0 + p[0] * (p[1] * c).exp() * logistic(p[2] * (c - p[3]))
}

fn logistic(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Turn-on locations tried as starting points.
const P4_STARTS: [f64; 4] = [0.3, 0.6, 0.9, 1.2];
/// Starting growth rate and steepness.
const P2_START: f64 = 1.0;
const P3_START: f64 = 10.0;
/// Residual-evaluation cap per start.
const LM_PATIENCE: usize = 400;

/// Least-squares problem for the model, optionally with `p3` held fixed.
struct SigmoidProblem<'a> {
    points: &'a [(f64, f64)],
    fixed_p3: Option<f64>,
    params: DVector<f64>,
}

impl SigmoidProblem<'_> {
    fn full(&self) -> [f64; 4] {
        let p = &self.params;
        match self.fixed_p3 {
            None => [p[0], p[1], p[2], p[3]],
            Some(p3) => [p[0], p[1], p3, p[2]],
        }
    }
}

impl LeastSquaresProblem<f64, Dyn, Dyn> for SigmoidProblem<'_> {
    type ParameterStorage = Owned<f64, Dyn>;
    type ResidualStorage = Owned<f64, Dyn>;
    type JacobianStorage = Owned<f64, Dyn, Dyn>;

    fn set_params(&mut self, p: &DVector<f64>) {
        self.params.copy_from(p);
    }

    fn params(&self) -> DVector<f64> {
        self.params.clone()
    }

    fn residuals(&self) -> Option<DVector<f64>> {
        let p = self.full();
        let r = DVector::from_iterator(self.points.len(), self.points.iter().map(|&(c, k)| sigmoid_exp(p, c) - k));
        r.iter().all(|v| v.is_finite()).then_some(r)
    }

    fn jacobian(&self) -> Option<DMatrix<f64>> {
        let [p1, p2, p3, p4] = self.full();
        let cols = self.params.len();
        let mut jac = DMatrix::zeros(self.points.len(), cols);
        for (row, &(c, _)) in self.points.iter().enumerate() {
            let e = (p2 * c).exp();
            let s = logistic(p3 * (c - p4));
            let core = e * s;
            let ds = s * (1.0 - s);
            let d = [core, p1 * c * core, p1 * e * ds * (c - p4), -p1 * e * ds * p3];
            match self.fixed_p3 {
                None => {
                    for (col, v) in d.iter().enumerate() {
                        jac[(row, col)] = *v;
                    }
                }
                Some(_) => {
                    jac[(row, 0)] = d[0];
                    jac[(row, 1)] = d[1];
                    jac[(row, 2)] = d[3];
                }
            }
        }
        jac.iter().all(|v| v.is_finite()).then_some(jac)
    }
}

/// Fits the sigmoid-exponential model to `(c, kurtosis)` points by
/// Levenberg–Marquardt from each of a fixed list of turn-on locations,
/// keeping the best converged fit (or the best fit if none converged).
pub fn sigmoid_exp_fit(points: &[(f64, f64)]) -> Result<SigmoidExpFit> {
    fit_sigmoid(points, None)
}

/// As [`sigmoid_exp_fit`] with the steepness `p3` held at a given value.
pub fn sigmoid_exp_fit_fixed_p3(points: &[(f64, f64)], p3: f64) -> Result<SigmoidExpFit> {
    fit_sigmoid(points, Some(p3))
}

fn fit_sigmoid(points: &[(f64, f64)], fixed_p3: Option<f64>) -> Result<SigmoidExpFit> {
    if points.len() < 8 {
        return invalid("the sigmoid-exponential fit needs at least eight points");
    }
    if points.iter().any(|&(c, k)| !(c.is_finite() && k.is_finite())) {
        return invalid("fit points must be finite");
    }
    let c_max = points.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    let excess = points.iter().map(|p| p.1 - 3.0).fold(f64::NEG_INFINITY, f64::max);
    let p1_start = excess.abs().max(1e-3) * (-P2_START * c_max).exp();
    let lm = LevenbergMarquardt::new().with_patience(LM_PATIENCE);
    let mut best: Option<SigmoidExpFit> = None;
    for p4 in P4_STARTS {
        let start: Vec<f64> = match fixed_p3 {
            None => vec![p1_start, P2_START, P3_START, p4],
            Some(_) => vec![p1_start, P2_START, p4],
        };
        let problem = SigmoidProblem {
            points,
            fixed_p3,
            params: DVector::from_vec(start),
        };
        let (solved, report) = lm.minimize(problem);
        let [p1, p2, p3, p4] = solved.full();
        let Some(res) = solved.residuals() else { continue };
        let fit = SigmoidExpFit {
            p1,
            p2,
            p3,
            p4,
            converged: report.termination.was_successful(),
            residual_rms: (res.norm_squared() / points.len() as f64).sqrt(),
        };
        let better = match &best {
            None => true,
            Some(b) => (fit.converged, -fit.residual_rms) > (b.converged, -b.residual_rms),
        };
        if better {
            best = Some(fit);
        }
    }
    best.ok_or_else(|| Error::Fit("every start produced non-finite residuals".into()))
}
