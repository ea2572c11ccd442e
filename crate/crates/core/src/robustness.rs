//! Imperfection models: uncertain particle number, noisy feedback rotations
//! and cavity-induced contrast loss.

use rand_distr::{Binomial, Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::estimator::{build_operator, mean_and_stderr, EstimationResult, NoiseHook, NoiseKeying, ProtocolSpec};
use crate::moments::{compute_moments, wineland_xi2};
use crate::par::map_range;
use crate::rng::stream;
use crate::schedule::{prepare_state_for, TwistSchedule};

pub use crate::estimator::FeedbackAccounting;

/// Draws of a negative or too-small particle number before giving up.
pub const MAX_RESAMPLES: usize = 100;

/// Shape of the particle-number distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum NumberKind {
    /// Always exactly the target.
    Delta,
    /// Poisson with mean equal to the target.
    Poisson,
    /// `ceil(N/p)` trials with success probability `p`.
    Binomial { p: f64 },
}

/// A particle-number distribution around a target size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NumberDistribution {
    pub kind: NumberKind,
    pub target_n: usize,
}

impl NumberDistribution {
    pub fn new(kind: NumberKind, target_n: usize) -> Result<Self> {
        if target_n < 2 {
            return invalid("target particle number must be at least 2");
        }
        if let NumberKind::Binomial { p } = kind {
            if !(p > 0.0 && p <= 1.0) {
                return invalid(format!("binomial success probability must lie in (0, 1], got {p}"));
            }
        }
        Ok(NumberDistribution { kind, target_n })
    }

    /// Number of binomial trials, `ceil(N/p)`.
    pub fn trials(&self) -> Option<u64> {
        match self.kind {
            NumberKind::Binomial { p } => Some((self.target_n as f64 / p).ceil() as u64),
            _ => None,
        }
    }

    /// Distribution mean.
    pub fn mean(&self) -> f64 {
        match self.kind {
            NumberKind::Delta | NumberKind::Poisson => self.target_n as f64,
            NumberKind::Binomial { p } => p * self.trials().expect("binomial") as f64,
        }
    }

    /// One draw.
    pub fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> usize {
        match self.kind {
            NumberKind::Delta => self.target_n,
            NumberKind::Poisson => {
                let d = Poisson::new(self.target_n as f64).expect("positive mean");
                d.sample(rng) as usize
            }
            NumberKind::Binomial { p } => {
                let d = Binomial::new(self.trials().expect("binomial"), p).expect("valid probability");
                d.sample(rng) as usize
            }
        }
    }
}

/// Squeezing averaged over the particle-number distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NumberFluctuation {
    pub target_n: usize,
    /// `xi^2` at exactly the target size.
    pub noiseless: f64,
    pub mean: f64,
    /// Sample standard deviation (0 for one sample).
    pub std: f64,
    /// `(N_s, xi^2(N_s))` per sample.
    pub samples: Vec<(usize, f64)>,
}

/// Draws `samples` particle numbers from `dist`, runs the circuit built for
/// the target size on each (`build` maps the target size to its schedule)
/// and returns the mean and spread of the Wineland `xi^2`. Draws below 2 are
/// redrawn up to [`MAX_RESAMPLES`] times.
pub fn number_fluctuation_xi2<F>(
    dist: &NumberDistribution,
    build: F,
    samples: usize,
    seed: u64,
) -> Result<NumberFluctuation>
where
    F: Fn(usize) -> Result<TwistSchedule>,
{
    if samples == 0 {
        return invalid("at least one sample is needed");
    }
    let schedule = build(dist.target_n)?;
    let xi2_at = |n: usize| -> Result<f64> { wineland_xi2(&compute_moments(&prepare_state_for(&schedule, n)?)) };
    let noiseless = xi2_at(dist.target_n)?;
    let sizes = (0..samples)
        .map(|s| {
            (0..MAX_RESAMPLES)
                .map(|attempt| dist.sample(&mut stream(seed, &[s as u64, attempt as u64])))
                .find(|&n| n >= 2)
                .ok_or_else(|| {
                    Error::InvalidArgument(format!(
                        "sample {s}: no particle number >= 2 in {MAX_RESAMPLES} draws"
                    ))
                })
        })
        .collect::<Result<Vec<usize>>>()?;
    let xi2s = map_range(sizes.len(), |i| xi2_at(sizes[i])).into_iter().collect::<Result<Vec<f64>>>()?;
    let (mean, se) = mean_and_stderr(&xi2s);
    Ok(NumberFluctuation {
        target_n: dist.target_n,
        noiseless,
        mean,
        std: se * (samples as f64).sqrt(),
        samples: sizes.into_iter().zip(xi2s).collect(),
    })
}

/// How feedback-noise draws are organised across the branch sum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeedbackEstimator {
    /// A fixed list of `outer` draws per ensemble, averaged over every
    /// combination; draws are shared by all branches.
    Grid,
    /// `outer` draws of the whole noise vector, shared by all branches.
    SharedVector,
    /// Fresh draws for every branch, `inner` per branch point, one replica.
    PerTerm,
    /// `outer` replicas, each with fresh per-branch draws (`inner` per
    /// branch point).
    #[default]
    Hybrid,
}

/// Feedback-rotation noise `r_j ~ Normal(0, sigma_fb^2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeedbackNoise {
    pub sigma_fb: f64,
    pub outer: usize,
    pub inner: usize,
    pub seed: u64,
    pub estimator: FeedbackEstimator,
    pub accounting: FeedbackAccounting,
}

impl FeedbackNoise {
    /// The hybrid estimator with one inner and ten outer samples.
    pub fn new(sigma_fb: f64, seed: u64) -> Self {
        FeedbackNoise {
            sigma_fb,
            outer: 10,
            inner: 1,
            seed,
            estimator: FeedbackEstimator::Hybrid,
            accounting: FeedbackAccounting::Absorbed,
        }
    }
}

/// Error of `protocol` when every counter-rotation is perturbed by
/// feedback noise; all outcome sums are exact. Returns the mean over noise
/// replicas and its standard error.
pub fn feedback_error(protocol: &ProtocolSpec, noise: &FeedbackNoise) -> Result<EstimationResult> {
    let m = protocol.ensembles().len();
    if m < 2 {
        return invalid("feedback noise needs at least two ensembles");
    }
    if !(noise.sigma_fb >= 0.0 && noise.sigma_fb.is_finite()) {
        return invalid("feedback noise must have a non-negative standard deviation");
    }
    if noise.outer == 0 || noise.inner == 0 {
        return invalid("feedback noise needs at least one outer and one inner sample");
    }
    let hook = |keying: NoiseKeying, inner: usize| NoiseHook {
        sigma_fb: noise.sigma_fb,
        inner,
        accounting: noise.accounting,
        keying,
    };
    let seed = noise.seed;
    let hooks: Vec<NoiseHook> = match noise.estimator {
        FeedbackEstimator::Hybrid => (0..noise.outer)
            .map(|j| hook(NoiseKeying::PerTerm { seed, replica: j as u64 }, noise.inner))
            .collect(),
        FeedbackEstimator::PerTerm => vec![hook(NoiseKeying::PerTerm { seed, replica: 0 }, noise.inner)],
        FeedbackEstimator::SharedVector => (0..noise.outer)
            .map(|j| hook(NoiseKeying::Shared { seed, replica: j as u64 }, 1))
            .collect(),
        FeedbackEstimator::Grid => {
            let levels = m - 1;
            let count = noise.outer.checked_pow(levels as u32).ok_or_else(|| Error::BranchBudget {
                terms: (noise.outer as f64).powi(levels as i32),
                budget: protocol.branch_budget,
            })?;
            (0..count)
                .map(|mut idx| {
                    let combo = (0..levels)
                        .map(|_| {
                            let d = idx % noise.outer;
                            idx /= noise.outer;
                            d
                        })
                        .collect();
                    hook(NoiseKeying::Grid { seed, combo }, 1)
                })
                .collect()
        }
    };
    let moments = protocol.last().moments();
    let mut values = Vec::with_capacity(hooks.len());
    let mut branches = 0;
    for h in &hooks {
        let op = build_operator(protocol, true, Some(h))?;
        values.push(op.expectation(moments));
        branches += op.branches;
    }
    let (mean, se) = mean_and_stderr(&values);
    Ok(EstimationResult {
        n_total: protocol.n_total(),
        sigma: protocol.prior_sigma,
        delta_phi2: mean,
        standard_error: se,
        replica_values: values,
        branches,
    })
}

/// Contrast retained after cavity-mediated twisting,
/// `exp(-2 gamma sqrt(N) sum|chi|)`.
pub fn contrast_factor(n: usize, total_twist: f64, gamma: f64) -> Result<f64> {
    if !(gamma >= 0.0 && gamma.is_finite()) {
        return invalid(format!("contrast-loss rate must be non-negative, got {gamma}"));
    }
    Ok((-2.0 * gamma * (n as f64).sqrt() * total_twist).exp())
}

/// `xi^2 / C` with `C` the contrast retained by `schedule`.
pub fn contrast_adjusted_xi2(xi2: f64, schedule: &TwistSchedule, gamma: f64) -> Result<f64> {
    if !(xi2 > 0.0 && xi2.is_finite()) {
        return invalid(format!("squeezing parameter must be positive, got {xi2}"));
    }
    Ok(xi2 / contrast_factor(schedule.n_particles, schedule.total_twist(), gamma)?)
}
