//! Collective-spin squeezing and adaptive phase estimation.
//!
//! The crate simulates `N` spin-1/2 particles in the symmetric subspace,
//! prepares one-axis-twisted probe states, evaluates the Bayesian mean
//! squared error of multi-ensemble adaptive phase-estimation protocols and
//! extracts scaling exponents from the results.
//!
//! Modules, bottom-up:
//!
//! * [`spinstate`]: state vectors in the Dicke basis, twists, rotations and
//!   measurement distributions.
//! * [`moments`]: spin moments, squeezing parameters and kurtoses.
//! * [`analytic`]: closed-form twisted-Gaussian moment theory and the
//!   twist-angle root equations.
//! * [`schedule`]: multi-twist state-preparation schedules.
//! * [`estimator`]: exact and Monte Carlo evaluation of the estimation error.
//! * [`robustness`]: particle-number noise, feedback noise and contrast loss.
//! * [`fitting`]: power-law and sigmoid-exponential fits.

// `!(x > 0.0)` also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analytic;
pub mod error;
pub mod estimator;
pub mod fitting;
pub mod moments;
pub mod par;
pub mod quadrature;
pub mod rng;
pub mod robustness;
pub mod schedule;
pub mod spinstate;

pub use error::{Error, Result};
