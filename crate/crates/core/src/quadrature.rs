//! Gauss-Hermite quadrature for expectations over a Gaussian prior.

use std::num::NonZeroUsize;

use gauss_quad::hermite::GaussHermite;

use crate::error::{invalid, Result};

/// Default number of quadrature nodes.
pub const DEFAULT_NODES: usize = 101;

/// Nodes and weights for `E[f(phi)]` with `phi ~ Normal(0, sigma^2)`.
///
/// Built from the physicists' Hermite rule: `phi_q = sqrt(2) sigma x_q` and
/// `w_q = omega_q / sqrt(pi)`, so the weights sum to one. The rule is
/// symmetrised (`phi_q = -phi_{n-1-q}`, equal weights) to remove the
/// eigen-solver's last-digit asymmetry.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianRule {
    pub sigma: f64,
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussianRule {
    /// Builds an `n`-node rule for prior standard deviation `sigma >= 0`.
    pub fn new(n: usize, sigma: f64) -> Result<Self> {
        let Some(deg) = NonZeroUsize::new(n) else {
            return invalid("quadrature needs at least one node");
        };
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return invalid(format!("prior standard deviation must be non-negative, got {sigma}"));
        }
        let mut pairs: Vec<(f64, f64)> = GaussHermite::new(deg).into_node_weight_pairs().into_vec();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let scale = std::f64::consts::SQRT_2 * sigma;
        let inv_sqrt_pi = 1.0 / std::f64::consts::PI.sqrt();
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        for q in 0..n {
            let r = n - 1 - q;
            let x = 0.5 * (pairs[q].0 - pairs[r].0);
            let w = 0.5 * (pairs[q].1 + pairs[r].1);
            nodes[q] = scale * x;
            weights[q] = w * inv_sqrt_pi;
        }
        Ok(GaussianRule { sigma, nodes, weights })
    }

    /// Number of nodes.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    /// Whether the rule is empty (never true for a constructed rule).
    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// `sum_q w_q f(phi_q)`.
    pub fn expect<F: FnMut(f64) -> f64>(&self, mut f: F) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&x, &w)| w * f(x)).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn gaussian_moments() {
        let r = GaussianRule::new(101, 0.3).unwrap();
        assert_relative_eq!(r.expect(|_| 1.0), 1.0, max_relative = 1e-13);
        assert!(r.expect(|x| x).abs() < 1e-15);
        assert_relative_eq!(r.expect(|x| x * x), 0.09, max_relative = 1e-12);
        assert_relative_eq!(r.expect(|x| x.powi(4)), 3.0 * 0.09f64.powi(2), max_relative = 1e-12);
        assert_relative_eq!(r.expect(|x| x.cos()), (-0.045f64).exp(), max_relative = 1e-13);
    }

    #[test]
    fn symmetric_nodes() {
        let r = GaussianRule::new(20, 1.0).unwrap();
        for q in 0..20 {
            assert_eq!(r.nodes[q], -r.nodes[19 - q]);
            assert_eq!(r.weights[q], r.weights[19 - q]);
        }
    }

    #[test]
    fn rejects_bad_input() {
        assert!(GaussianRule::new(0, 1.0).is_err());
        assert!(GaussianRule::new(5, -1.0).is_err());
    }
}
