//! Bayesian mean squared error of multi-ensemble adaptive protocols.
//!
//! A protocol measures ensembles `1..M` in order. The phase `phi` is drawn
//! from `Normal(0, sigma^2)`; ensemble `k` sees the residual
//! `phi - sum_{j<k} phihat_j`, is measured along `J_y` with outcome `m_k`,
//! and reports `phihat_k = 2 m_k / N_k`. The error is
//! `E[(phi - sum_k phihat_k)^2]`.
//!
//! The prior is integrated by Gauss-Hermite quadrature and the outcomes of
//! the first `M - 1` ensembles are summed over branch by branch, either
//! exactly or by sampling. The last ensemble is never enumerated: given its
//! residual `r`, its conditional error is
//!
//! ```text
//! r^2 - (4/N) r <J_y(r)> + (4/N^2) <J_y(r)^2>,
//! J_y(r) = cos(r) J_y + sin(r) J_x,
//! ```
//!
//! so summing over branches leaves an operator on the last ensemble with six
//! scalar coefficients, [`ErrorOperator`], whose expectation is the error.

use argmin::core::{CostFunction, Executor, State};
use argmin::solver::neldermead::NelderMead;
use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::RngExt;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::analytic::CarryRule;
use crate::error::{invalid, Error, Result};
use crate::moments::{compute_moments, rotated_xibar2, MomentSet};
use crate::par::{map_range, pairwise_sum};
use crate::quadrature::{GaussianRule, DEFAULT_NODES};
use crate::rng::{stream, stream_key};
use crate::schedule::{
    build_schedule_with, prepare_state, ScheduleContext, ScheduleOptions, TwistSchedule, DEFAULT_C,
    DEFAULT_C_THREE_ENSEMBLES,
};
use crate::spinstate::{
    apply_rotation, apply_twist, basis::ladder_coefficients, conditional_y_distribution,
    conditional_y_distributions, m_value, Axis, CollectiveState,
};

/// Branches lighter than this are dropped.
pub const PRUNE_WEIGHT: f64 = 1e-18;
/// Default cap on the number of accumulated terms.
pub const DEFAULT_BRANCH_BUDGET: f64 = 1e9;
/// Default number of samples per branch in Monte Carlo mode.
pub const DEFAULT_SAMPLES: usize = 10;
/// Branches whose outcome distributions are computed together.
const BRANCH_CHUNK: usize = 256;

/// Ensemble sizes for an `m`-ensemble protocol with `n_total` particles.
///
/// `m = 1` uses every particle; `m = 2, 3, 4` use the fixed fractions
/// `(N/5, rest)`, `(N/20, 4 N/20, rest)` and `(N/50, 4 N/50, 12 N/50, rest)`.
pub fn allocate_ensembles(n_total: usize, m: usize) -> Result<Vec<usize>> {
    let sizes = match m {
        1 => vec![n_total],
        2 => {
            let a = n_total / 5;
            vec![a, n_total.saturating_sub(a)]
        }
        3 => {
            let a = n_total / 20;
            vec![a, 4 * a, n_total.saturating_sub(5 * a)]
        }
        4 => {
            let a = n_total / 50;
            vec![a, 4 * a, 12 * a, n_total.saturating_sub(17 * a)]
        }
        _ => return Err(Error::InvalidAllocation(format!("unsupported ensemble count {m}; expected 1 to 4"))),
    };
    if let Some(&small) = sizes.iter().find(|&&s| s < 2) {
        return Err(Error::InvalidAllocation(format!(
            "N = {n_total} with {m} ensembles gives an ensemble of {small} particles; every ensemble needs at least 2"
        )));
    }
    Ok(sizes)
}

/// `J_y` outcome probabilities of `state` at signal residual `residual`,
/// indexed by `m + N/2`; outcome `m` reports the estimate `2m/N`.
pub fn conditional_outcome_dist(state: &CollectiveState, residual: f64) -> Vec<f64> {
    conditional_y_distribution(state, residual)
}

/// One ensemble: its circuit and the prepared probe state.
#[derive(Debug, Clone)]
pub struct EnsembleSpec {
    pub schedule: TwistSchedule,
    state: CollectiveState,
    moments: MomentSet,
}

impl EnsembleSpec {
    /// Prepares the probe state of `schedule`.
    pub fn new(schedule: TwistSchedule) -> Result<Self> {
        let state = prepare_state(&schedule)?;
        let moments = compute_moments(&state);
        Ok(EnsembleSpec { schedule, state, moments })
    }

    /// An unsqueezed ensemble of `n` particles.
    pub fn unsqueezed(n: usize) -> Result<Self> {
        Self::new(TwistSchedule::unsqueezed(n))
    }

    pub fn n_particles(&self) -> usize {
        self.schedule.n_particles
    }

    pub fn state(&self) -> &CollectiveState {
        &self.state
    }

    pub fn moments(&self) -> &MomentSet {
        &self.moments
    }
}

/// How the outcome sums of the first `M - 1` ensembles are evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum EstimatorMode {
    /// Every outcome branch is summed.
    Exact,
    /// Ensemble 1 is summed exactly; every later branch point draws
    /// `samples` outcomes. From ensemble `gaussian_from` (1-based) on,
    /// outcomes are drawn from a Gaussian with the exact conditional mean
    /// and variance instead of the exact distribution.
    MonteCarlo {
        samples: usize,
        seed: u64,
        gaussian_from: Option<usize>,
    },
}

/// A complete protocol: ensembles in measurement order, prior and
/// evaluation settings.
#[derive(Debug, Clone)]
pub struct ProtocolSpec {
    ensembles: Vec<EnsembleSpec>,
    pub prior_sigma: f64,
    pub quadrature_nodes: usize,
    pub mode: EstimatorMode,
    /// Cap on `nodes * prod(branching factors)`.
    pub branch_budget: f64,
}

impl ProtocolSpec {
    /// Exact-mode protocol with default quadrature. Ensemble sizes must be
    /// nondecreasing.
    pub fn new(ensembles: Vec<EnsembleSpec>, prior_sigma: f64) -> Result<Self> {
        if ensembles.is_empty() {
            return invalid("a protocol needs at least one ensemble");
        }
        if !(prior_sigma >= 0.0 && prior_sigma.is_finite()) {
            return invalid(format!("prior standard deviation must be non-negative, got {prior_sigma}"));
        }
        if ensembles.windows(2).any(|w| w[1].n_particles() < w[0].n_particles()) {
            return invalid("ensemble sizes must be nondecreasing in measurement order");
        }
        Ok(ProtocolSpec {
            ensembles,
            prior_sigma,
            quadrature_nodes: DEFAULT_NODES,
            mode: EstimatorMode::Exact,
            branch_budget: DEFAULT_BRANCH_BUDGET,
        })
    }

    pub fn with_mode(mut self, mode: EstimatorMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_quadrature_nodes(mut self, nodes: usize) -> Self {
        self.quadrature_nodes = nodes;
        self
    }

    pub fn with_branch_budget(mut self, budget: f64) -> Self {
        self.branch_budget = budget;
        self
    }

    pub fn ensembles(&self) -> &[EnsembleSpec] {
        &self.ensembles
    }

    /// Total particle number.
    pub fn n_total(&self) -> usize {
        self.ensembles.iter().map(EnsembleSpec::n_particles).sum()
    }

    /// The last ensemble.
    pub fn last(&self) -> &EnsembleSpec {
        self.ensembles.last().expect("protocols are non-empty")
    }

    /// The protocol with the last ensemble's circuit replaced.
    pub fn with_last_schedule(&self, schedule: TwistSchedule) -> Result<Self> {
        if schedule.n_particles != self.last().n_particles() {
            return invalid("replacement schedule has the wrong particle number");
        }
        let mut out = self.clone();
        *out.ensembles.last_mut().expect("protocols are non-empty") = EnsembleSpec::new(schedule)?;
        Ok(out)
    }
}

/// Recipe for building a protocol: sizes, twist depths and shrink factor.
///
/// Squeezed ensembles get chained schedules whose last twist accounts for the
/// phase variance left by the ensembles before them; that variance starts at
/// `sigma^2` and after each ensemble becomes `carry_rule.carry(N_k, Xi_k)`
/// with `Xi_k` the rotated squeezing parameter of ensemble `k` at the
/// incoming variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolDesign {
    pub sizes: Vec<usize>,
    /// Number of twists per ensemble; 0 is unsqueezed.
    pub depths: Vec<usize>,
    pub c: f64,
    pub carry_rule: CarryRule,
    pub schedule_options: ScheduleOptions,
}

impl ProtocolDesign {
    /// The standard `m`-ensemble protocol: ensemble `k` gets `k - 1`
    /// twists, with `C = 0.35` for three ensembles and `0.7` otherwise.
    pub fn adaptive(n_total: usize, m: usize) -> Result<Self> {
        let sizes = allocate_ensembles(n_total, m)?;
        let c = if m == 3 { DEFAULT_C_THREE_ENSEMBLES } else { DEFAULT_C };
        Ok(ProtocolDesign {
            depths: (0..sizes.len()).collect(),
            sizes,
            c,
            carry_rule: CarryRule::default(),
            schedule_options: ScheduleOptions::default(),
        })
    }

    /// A single ensemble of `n` particles with `depth` twists.
    pub fn single(n: usize, depth: usize) -> Self {
        ProtocolDesign {
            sizes: vec![n],
            depths: vec![depth],
            c: DEFAULT_C,
            carry_rule: CarryRule::default(),
            schedule_options: ScheduleOptions::default(),
        }
    }

    pub fn with_c(mut self, c: f64) -> Self {
        self.c = c;
        self
    }

    /// Builds the schedules for prior width `sigma`.
    pub fn schedules(&self, sigma: f64) -> Result<Vec<TwistSchedule>> {
        if self.sizes.len() != self.depths.len() || self.sizes.is_empty() {
            return invalid("a design needs one depth per ensemble");
        }
        let mut carry = sigma * sigma;
        let mut out = Vec::with_capacity(self.sizes.len());
        for (&n, &depth) in self.sizes.iter().zip(&self.depths) {
            let schedule = if depth == 0 {
                TwistSchedule::unsqueezed(n)
            } else {
                build_schedule_with(n, depth, self.c, ScheduleContext::Chained { carry }, self.schedule_options)?
            };
            let moments = compute_moments(&prepare_state(&schedule)?);
            carry = self.carry_rule.carry(n, rotated_xibar2(&moments, carry.sqrt())?);
            out.push(schedule);
        }
        Ok(out)
    }

    /// Builds the exact-mode protocol for prior width `sigma`.
    pub fn build(&self, sigma: f64) -> Result<ProtocolSpec> {
        let ensembles = self
            .schedules(sigma)?
            .into_iter()
            .map(EnsembleSpec::new)
            .collect::<Result<Vec<_>>>()?;
        ProtocolSpec::new(ensembles, sigma)
    }
}

/// Branch sums `sum w rho^2`, `sum w rho cos`, ... that define an
/// [`ErrorOperator`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ErrorCoefficients {
    /// `sum w rho^2`.
    pub a: f64,
    /// `sum w rho cos(r)`.
    pub b_y: f64,
    /// `sum w rho sin(r)`.
    pub b_x: f64,
    /// `sum w cos^2(r)`.
    pub c_yy: f64,
    /// `sum w sin^2(r)`.
    pub c_xx: f64,
    /// `sum w cos(r) sin(r)`.
    pub c_xy: f64,
}

impl ErrorCoefficients {
    /// Adds a branch of weight `w` whose error offset is `rho` and whose
    /// last ensemble sees the residual rotation `r`.
    fn add(&mut self, w: f64, rho: f64, r: f64) {
        let (s, c) = r.sin_cos();
        self.a += w * rho * rho;
        self.b_y += w * rho * c;
        self.b_x += w * rho * s;
        self.c_yy += w * c * c;
        self.c_xx += w * s * s;
        self.c_xy += w * c * s;
    }

    fn to_array(self) -> [f64; 6] {
        [self.a, self.b_y, self.b_x, self.c_yy, self.c_xx, self.c_xy]
    }

    fn from_array(v: [f64; 6]) -> Self {
        ErrorCoefficients {
            a: v[0],
            b_y: v[1],
            b_x: v[2],
            c_yy: v[3],
            c_xx: v[4],
            c_xy: v[5],
        }
    }

    /// Coefficient-wise pairwise sum.
    fn sum(parts: &[ErrorCoefficients]) -> Self {
        let mut out = [0.0; 6];
        for (j, o) in out.iter_mut().enumerate() {
            let col: Vec<f64> = parts.iter().map(|p| p.to_array()[j]).collect();
            *o = pairwise_sum(&col);
        }
        Self::from_array(out)
    }
}

/// The effective error operator on the last ensemble,
///
/// ```text
/// W = a - (4/N)(b_y J_y + b_x J_x)
///       + (4/N^2)(c_yy J_y^2 + c_xx J_x^2 + c_xy {J_x, J_y}).
/// ```
///
/// In Monte Carlo mode each replica has its own coefficients and
/// `coefficients` is their mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorOperator {
    pub n_particles: usize,
    pub coefficients: ErrorCoefficients,
    pub replicas: Vec<ErrorCoefficients>,
    /// Branches that reached the last ensemble.
    pub branches: u64,
}

impl ErrorOperator {
    /// `<W>` from the moments of a last-ensemble state.
    pub fn expectation(&self, m: &MomentSet) -> f64 {
        expectation_of(&self.coefficients, self.n_particles, m)
    }

    /// `<W>` for a last-ensemble state.
    pub fn evaluate(&self, state: &CollectiveState) -> f64 {
        self.expectation(&compute_moments(state))
    }

    /// `<W_replica>` for each replica.
    pub fn replica_expectations(&self, m: &MomentSet) -> Vec<f64> {
        self.replicas
            .iter()
            .map(|c| expectation_of(c, self.n_particles, m))
            .collect()
    }

    /// `W` as a dense matrix in the `J_z` basis.
    pub fn dense(&self) -> DMatrix<Complex64> {
        let n = self.n_particles;
        let dim = n + 1;
        let ladder = ladder_coefficients(n);
        let mut jx = DMatrix::<Complex64>::zeros(dim, dim);
        let mut jy = DMatrix::<Complex64>::zeros(dim, dim);
        for (i, &c) in ladder.iter().enumerate() {
            // J_+ |i> = c_i |i+1>
            jx[(i + 1, i)] = Complex64::new(0.5 * c, 0.0);
            jx[(i, i + 1)] = Complex64::new(0.5 * c, 0.0);
            jy[(i + 1, i)] = Complex64::new(0.0, -0.5 * c);
            jy[(i, i + 1)] = Complex64::new(0.0, 0.5 * c);
        }
        let k = &self.coefficients;
        let nf = n as f64;
        let r = |v: f64| Complex64::new(v, 0.0);
        DMatrix::<Complex64>::identity(dim, dim) * r(k.a) - (&jy * r(k.b_y) + &jx * r(k.b_x)) * r(4.0 / nf)
            + (&jy * &jy * r(k.c_yy) + &jx * &jx * r(k.c_xx) + (&jx * &jy + &jy * &jx) * r(k.c_xy)) * r(4.0 / (nf * nf))
    }
}

fn expectation_of(k: &ErrorCoefficients, n: usize, m: &MomentSet) -> f64 {
    let nf = n as f64;
    k.a - 4.0 / nf * (k.b_y * m.jy + k.b_x * m.jx)
        + 4.0 / (nf * nf) * (k.c_yy * m.jy2 + k.c_xx * m.jx2 + k.c_xy * m.anti_xy)
}

/// Error estimate and diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationResult {
    pub n_total: usize,
    pub sigma: f64,
    pub delta_phi2: f64,
    /// Zero in exact mode.
    pub standard_error: f64,
    /// Per-replica estimates (one entry in exact mode).
    pub replica_values: Vec<f64>,
    /// Branches that reached the last ensemble.
    pub branches: u64,
}

/// Who is charged for the feedback noise on a counter-rotation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeedbackAccounting {
    /// The applied rotation `phihat_j + r_j` enters the final estimate, so
    /// the noise only perturbs which residual later ensembles see.
    #[default]
    Absorbed,
    /// The final estimate is `sum phihat_j`; the noise also biases it.
    RotationOnly,
}

/// Which noise draws are shared between branches.
#[derive(Debug, Clone, PartialEq)]
pub(crate) enum NoiseKeying {
    /// Independent draws for every branch of replica `replica`.
    PerTerm { seed: u64, replica: u64 },
    /// One draw per ensemble, shared by every branch of replica `replica`.
    Shared { seed: u64, replica: u64 },
    /// Draw `combo[level]` from a fixed list of draws per ensemble.
    Grid { seed: u64, combo: Vec<usize> },
}

/// Gaussian counter-rotation noise injected into the branch sum.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct NoiseHook {
    pub sigma_fb: f64,
    /// Draws averaged per branch point (`PerTerm` only).
    pub inner: usize,
    pub accounting: FeedbackAccounting,
    pub keying: NoiseKeying,
}

impl NoiseHook {
    fn draws_per_branch(&self) -> usize {
        match self.keying {
            NoiseKeying::PerTerm { .. } => self.inner.max(1),
            _ => 1,
        }
    }

    fn draw(&self, level: usize, key: u64, inner: usize) -> f64 {
        let mut rng = match &self.keying {
            NoiseKeying::PerTerm { seed, replica } => stream(*seed, &[*replica, level as u64, key, inner as u64]),
            NoiseKeying::Shared { seed, replica } => stream(*seed, &[*replica, level as u64]),
            NoiseKeying::Grid { seed, combo } => stream(*seed, &[level as u64, combo[level] as u64]),
        };
        let z: f64 = rng.sample(StandardNormal);
        self.sigma_fb * z
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum LevelRule {
    Exact,
    Sample,
    Gaussian,
}

#[derive(Debug, Clone, Copy)]
struct Branch {
    weight: f64,
    /// Residual rotation seen by the next ensemble.
    resid: f64,
    /// Extra error not removed by counter-rotations.
    offset: f64,
    key: u64,
    rep: u32,
}

struct Engine<'a> {
    ensembles: &'a [EnsembleSpec],
    rules: Vec<LevelRule>,
    samples: usize,
    seed: u64,
    first_sampled: Option<usize>,
    noise: Option<&'a NoiseHook>,
    replicas: usize,
}

impl<'a> Engine<'a> {
    fn new(protocol: &'a ProtocolSpec, exact: bool, noise: Option<&'a NoiseHook>) -> Result<Self> {
        let levels = protocol.ensembles.len() - 1;
        let (rules, samples, seed) = match (exact, protocol.mode) {
            (false, EstimatorMode::MonteCarlo { samples, seed, gaussian_from }) => {
                if samples == 0 {
                    return invalid("Monte Carlo mode needs at least one sample per branch");
                }
                let rules = (0..levels)
                    .map(|l| match (l, gaussian_from) {
                        (0, _) => LevelRule::Exact,
                        (l, Some(g)) if l + 1 >= g => LevelRule::Gaussian,
                        _ => LevelRule::Sample,
                    })
                    .collect();
                (rules, samples, seed)
            }
            _ => (vec![LevelRule::Exact; levels], 1, 0),
        };
        let first_sampled = rules.iter().position(|r| *r != LevelRule::Exact);
        let replicas = if first_sampled.is_some() { samples } else { 1 };
        Ok(Engine {
            ensembles: &protocol.ensembles,
            rules,
            samples,
            seed,
            first_sampled,
            noise,
            replicas,
        })
    }

    fn check_budget(&self, nodes: usize, budget: f64) -> Result<()> {
        let inner = self.noise.map_or(1, NoiseHook::draws_per_branch) as f64;
        let terms = self
            .rules
            .iter()
            .zip(self.ensembles)
            .fold(nodes as f64, |t, (rule, e)| match rule {
                LevelRule::Exact => t * (e.n_particles() + 1) as f64 * inner,
                _ => t * self.samples as f64 * inner,
            });
        if terms > budget {
            return Err(Error::BranchBudget { terms, budget });
        }
        Ok(())
    }

    /// Accumulates the coefficients of every replica over all nodes.
    fn run(&self, rule: &GaussianRule) -> (Vec<ErrorCoefficients>, u64) {
        let per_node = map_range(rule.len(), |q| {
            let w = rule.weights[q];
            if w < PRUNE_WEIGHT {
                (vec![ErrorCoefficients::default(); self.replicas], 0)
            } else {
                self.run_node(q, rule.nodes[q], w)
            }
        });
        let branches = per_node.iter().map(|p| p.1).sum();
        let coefs = (0..self.replicas)
            .map(|r| {
                let parts: Vec<ErrorCoefficients> = per_node.iter().map(|p| p.0[r]).collect();
                ErrorCoefficients::sum(&parts)
            })
            .collect();
        (coefs, branches)
    }

    fn run_node(&self, q: usize, phi: f64, weight: f64) -> (Vec<ErrorCoefficients>, u64) {
        let mut branches = vec![Branch {
            weight,
            resid: phi,
            offset: 0.0,
            key: stream_key(0, &[q as u64]),
            rep: 0,
        }];
        for level in 0..self.rules.len() {
            let mut next = Vec::new();
            for chunk in branches.chunks(BRANCH_CHUNK) {
                self.expand(level, chunk, &mut next);
            }
            branches = next;
        }
        let mut coefs = vec![ErrorCoefficients::default(); self.replicas];
        for b in &branches {
            coefs[b.rep as usize].add(b.weight, b.resid + b.offset, b.resid);
        }
        (coefs, branches.len() as u64)
    }

    /// Pushes the children of `parents` through ensemble `level`.
    fn expand(&self, level: usize, parents: &[Branch], out: &mut Vec<Branch>) {
        let ens = &self.ensembles[level];
        let nf = ens.n_particles() as f64;
        let rule = self.rules[level];
        let first = self.first_sampled == Some(level);
        let dists = match rule {
            LevelRule::Gaussian => Vec::new(),
            _ => {
                let resids: Vec<f64> = parents.iter().map(|b| b.resid).collect();
                conditional_y_distributions(ens.state(), &resids)
            }
        };
        for (bi, b) in parents.iter().enumerate() {
            match rule {
                LevelRule::Exact => {
                    for (i, &p) in dists[bi].iter().enumerate() {
                        let w = b.weight * p;
                        if w < PRUNE_WEIGHT {
                            continue;
                        }
                        let est = 2.0 * m_value(ens.n_particles(), i) / nf;
                        let key = stream_key(b.key, &[level as u64, i as u64]);
                        self.push_children(level, b, w, b.rep, est, key, out);
                    }
                }
                LevelRule::Sample => {
                    let dist = &dists[bi];
                    let mode = argmax(dist);
                    for s in 0..self.samples {
                        let mut rng = stream(self.seed, &[level as u64, b.key, s as u64]);
                        let i = sample_from_mode(dist, mode, rng.random::<f64>());
                        let est = 2.0 * m_value(ens.n_particles(), i) / nf;
                        let (w, rep) = self.sample_weight(b, s, first);
                        let key = stream_key(b.key, &[level as u64, s as u64]);
                        self.push_children(level, b, w, rep, est, key, out);
                    }
                }
                LevelRule::Gaussian => {
                    let m = ens.moments();
                    let (sn, cs) = b.resid.sin_cos();
                    let mean = cs * m.jy + sn * m.jx;
                    let second = cs * cs * m.jy2 + sn * sn * m.jx2 + cs * sn * m.anti_xy;
                    let sd = (second - mean * mean).max(0.0).sqrt();
                    for s in 0..self.samples {
                        let mut rng = stream(self.seed, &[level as u64, b.key, s as u64]);
                        let z: f64 = rng.sample(StandardNormal);
                        let est = 2.0 * (mean + sd * z) / nf;
                        let (w, rep) = self.sample_weight(b, s, first);
                        let key = stream_key(b.key, &[level as u64, s as u64]);
                        self.push_children(level, b, w, rep, est, key, out);
                    }
                }
            }
        }
    }

    /// Weight and replica of the `s`-th sample of `b`: the first sampled
    /// level splits branches into replicas, later ones average.
    fn sample_weight(&self, b: &Branch, s: usize, first: bool) -> (f64, u32) {
        if first {
            (b.weight, s as u32)
        } else {
            (b.weight / self.samples as f64, b.rep)
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn push_children(&self, level: usize, b: &Branch, w: f64, rep: u32, est: f64, key: u64, out: &mut Vec<Branch>) {
        match self.noise {
            None => out.push(Branch {
                weight: w,
                resid: b.resid - est,
                offset: b.offset,
                key,
                rep,
            }),
            Some(hook) => {
                let k = hook.draws_per_branch();
                for j in 0..k {
                    let r = hook.draw(level, key, j);
                    let offset = match hook.accounting {
                        FeedbackAccounting::Absorbed => b.offset,
                        FeedbackAccounting::RotationOnly => b.offset + r,
                    };
                    out.push(Branch {
                        weight: w / k as f64,
                        resid: b.resid - est - r,
                        offset,
                        key: stream_key(key, &[j as u64]),
                        rep,
                    });
                }
            }
        }
    }
}

fn argmax(p: &[f64]) -> usize {
    p.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
        .0
}

/// Inverse-CDF draw for uniform `u`, accumulating outcomes in the order
/// mode, mode+1, mode-1, mode+2, ... instead of from the lowest outcome.
fn sample_from_mode(p: &[f64], mode: usize, u: f64) -> usize {
    let mut acc = 0.0;
    let mut last = mode;
    for step in 0..2 * p.len() {
        let offset = step.div_ceil(2);
        let idx = if step % 2 == 1 {
            mode.checked_add(offset).filter(|&i| i < p.len())
        } else {
            mode.checked_sub(offset)
        };
        let Some(i) = idx else { continue };
        if p[i] > 0.0 {
            acc += p[i];
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}

/// Accumulates the error operator of `protocol` (exactly when `exact`,
/// otherwise per the protocol's mode), optionally with feedback noise.
pub(crate) fn build_operator(protocol: &ProtocolSpec, exact: bool, noise: Option<&NoiseHook>) -> Result<ErrorOperator> {
    let rule = GaussianRule::new(protocol.quadrature_nodes, protocol.prior_sigma)?;
    let engine = Engine::new(protocol, exact, noise)?;
    engine.check_budget(rule.len(), protocol.branch_budget)?;
    let (replicas, branches) = engine.run(&rule);
    let mean: Vec<f64> = (0..6)
        .map(|j| pairwise_sum(&replicas.iter().map(|c| c.to_array()[j]).collect::<Vec<_>>()) / replicas.len() as f64)
        .collect();
    Ok(ErrorOperator {
        n_particles: protocol.last().n_particles(),
        coefficients: ErrorCoefficients::from_array(mean.try_into().expect("six coefficients")),
        replicas,
        branches,
    })
}

/// The error operator with every preliminary outcome summed exactly.
pub fn error_operator(protocol: &ProtocolSpec) -> Result<ErrorOperator> {
    build_operator(protocol, true, None)
}

fn result_from(protocol: &ProtocolSpec, op: &ErrorOperator) -> EstimationResult {
    let values = op.replica_expectations(protocol.last().moments());
    let (mean, se) = mean_and_stderr(&values);
    EstimationResult {
        n_total: protocol.n_total(),
        sigma: protocol.prior_sigma,
        delta_phi2: mean,
        standard_error: se,
        replica_values: values,
        branches: op.branches,
    }
}

/// Mean and standard error of the mean (0 for a single value).
pub(crate) fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    // Shifting by the first value keeps identical samples exactly zero-spread.
    let shift = values.first().copied().unwrap_or(0.0);
    let deviations: Vec<f64> = values.iter().map(|v| v - shift).collect();
    let offset = pairwise_sum(&deviations) / n;
    let mean = shift + offset;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = pairwise_sum(&deviations.iter().map(|d| (d - offset).powi(2)).collect::<Vec<_>>()) / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Exact error: every quadrature node and outcome branch is summed.
pub fn error_exact(protocol: &ProtocolSpec) -> Result<EstimationResult> {
    let op = build_operator(protocol, true, None)?;
    Ok(result_from(protocol, &op))
}

/// Monte Carlo error per the protocol's [`EstimatorMode::MonteCarlo`]
/// settings. The standard error is over the sample replicas.
pub fn error_monte_carlo(protocol: &ProtocolSpec) -> Result<EstimationResult> {
    if protocol.mode == EstimatorMode::Exact {
        return invalid("error_monte_carlo needs a protocol in Monte Carlo mode");
    }
    let op = build_operator(protocol, false, None)?;
    Ok(result_from(protocol, &op))
}

/// Dispatches on the protocol's mode.
pub fn estimate(protocol: &ProtocolSpec) -> Result<EstimationResult> {
    match protocol.mode {
        EstimatorMode::Exact => error_exact(protocol),
        EstimatorMode::MonteCarlo { .. } => error_monte_carlo(protocol),
    }
}

/// Settings of the final-ensemble polish.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolishSettings {
    /// Stop once the simplex's objective spread falls below this.
    pub tolerance: f64,
    pub max_iterations: u64,
    /// Initial simplex step in the twist, relative to the starting twist.
    pub chi_step: f64,
    /// Initial simplex step in the rotation angle.
    pub theta_step: f64,
}

impl Default for PolishSettings {
    fn default() -> Self {
        PolishSettings {
            tolerance: 1e-15,
            max_iterations: 2000,
            chi_step: 0.1,
            theta_step: 0.01,
        }
    }
}

/// Result of [`optimize_last_ensemble`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizedSchedule {
    pub schedule: TwistSchedule,
    pub objective: f64,
    pub initial_objective: f64,
    /// False when the iteration cap was hit first.
    pub converged: bool,
    pub iterations: u64,
}

struct LastStepCost<'a> {
    prefix: &'a CollectiveState,
    op: &'a ErrorOperator,
}

impl LastStepCost<'_> {
    fn value(&self, chi: f64, theta: f64) -> f64 {
        let s = apply_rotation(&apply_twist(self.prefix, chi), Axis::X, theta);
        self.op.evaluate(&s)
    }
}

impl CostFunction for LastStepCost<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, p: &Self::Param) -> std::result::Result<f64, argmin::core::Error> {
        Ok(self.value(p[0], p[1]))
    }
}

/// Minimises `<W>` over the last twist and rotation of the last ensemble
/// with a Nelder-Mead simplex, starting from `initial` (a schedule for the
/// last ensemble of depth at least 1). Returns the starting point if the
/// search does not improve on it.
pub fn optimize_last_ensemble(
    protocol: &ProtocolSpec,
    initial: &TwistSchedule,
    settings: PolishSettings,
) -> Result<OptimizedSchedule> {
    let Some(start) = initial.steps.last().copied() else {
        return invalid("the final-ensemble polish needs a schedule with at least one twist");
    };
    if initial.n_particles != protocol.last().n_particles() {
        return invalid("initial schedule has the wrong particle number");
    }
    let op = build_operator(protocol, matches!(protocol.mode, EstimatorMode::Exact), None)?;
    let mut prefix_schedule = initial.clone();
    prefix_schedule.steps.pop();
    let prefix = prepare_state(&prefix_schedule)?;
    let cost = LastStepCost { prefix: &prefix, op: &op };
    let initial_objective = cost.value(start.chi, start.theta);
    let dchi = if start.chi != 0.0 { settings.chi_step * start.chi.abs() } else { settings.chi_step };
    let simplex = vec![
        vec![start.chi, start.theta],
        vec![start.chi + dchi, start.theta],
        vec![start.chi, start.theta + settings.theta_step],
    ];
    let solver = NelderMead::new(simplex)
        .with_sd_tolerance(settings.tolerance)
        .map_err(|e| Error::Fit(e.to_string()))?;
    let res = Executor::new(cost, solver)
        .configure(|s| s.max_iters(settings.max_iterations))
        .run()
        .map_err(|e| Error::Fit(e.to_string()))?;
    let state = res.state();
    let iterations = state.get_iter();
    let converged = iterations < settings.max_iterations;
    let best = state.get_best_param().cloned().unwrap_or_else(|| vec![start.chi, start.theta]);
    let best_cost = state.get_best_cost();
    let (schedule, objective) = if best_cost < initial_objective {
        (initial.with_last(best[0], best[1]), best_cost)
    } else {
        (initial.clone(), initial_objective)
    };
    Ok(OptimizedSchedule {
        schedule,
        objective,
        initial_objective,
        converged,
        iterations,
    })
}
