//! Multi-twist state-preparation schedules.
//!
//! A schedule of depth `d` prepares
//!
//! ```text
//! R_x(theta_d) T(chi_d) ... R_x(theta_1) T(chi_1) |J_x = N/2>
//! ```
//!
//! Each twist magnitude is the root of a finite-size optimality equation at
//! the squeezing reached so far, all but the last are shrunk by a constant
//! factor `C`, consecutive twists alternate in sign and each rotation turns
//! the squeezed axis onto `z`, except the last one, which turns it onto `y`
//! (the measured axis).

use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use crate::analytic::{solve_state1, solve_state3, tg_moments};
use crate::error::{invalid, Error, Result};
use crate::moments::compute_moments;
use crate::spinstate::{apply_rotation, apply_twist, coherent_x, Axis, CollectiveState};

/// Default shrink factor for standalone schedules and four-ensemble
/// protocols.
pub const DEFAULT_C: f64 = 0.7;
/// Default shrink factor for the three-ensemble protocol.
pub const DEFAULT_C_THREE_ENSEMBLES: f64 = 0.35;

/// One twist-and-rotate step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwistStep {
    /// Signed twist angle actually applied.
    pub chi: f64,
    /// Signed `x`-rotation angle applied after the twist.
    pub theta: f64,
    /// Factor the root was multiplied by.
    pub c_applied: f64,
}

/// A state-preparation circuit for one ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwistSchedule {
    pub n_particles: usize,
    /// Configured shrink factor.
    pub c: f64,
    pub steps: Vec<TwistStep>,
}

impl TwistSchedule {
    /// The empty schedule: an unsqueezed coherent state.
    pub fn unsqueezed(n: usize) -> Self {
        TwistSchedule {
            n_particles: n,
            c: 1.0,
            steps: Vec::new(),
        }
    }

    /// Number of twists.
    pub fn depth(&self) -> usize {
        self.steps.len()
    }

    /// The schedule with every `(chi, theta)` negated.
    pub fn negated(&self) -> Self {
        let mut out = self.clone();
        for s in &mut out.steps {
            s.chi = -s.chi;
            s.theta = -s.theta;
        }
        out
    }

    /// Sum of applied twist magnitudes.
    pub fn total_twist(&self) -> f64 {
        self.steps.iter().map(|s| s.chi.abs()).sum()
    }

    /// Replaces the last step's twist and rotation.
    pub fn with_last(&self, chi: f64, theta: f64) -> Self {
        let mut out = self.clone();
        if let Some(last) = out.steps.last_mut() {
            last.chi = chi;
            last.theta = theta;
        }
        out
    }
}

/// What the last twist of a schedule is optimised for.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum ScheduleContext {
    /// Squeezing alone: every twist solves the single-ensemble equation.
    Standalone,
    /// Phase estimation after earlier ensembles left a phase variance
    /// `carry`: the last twist solves the chained equation.
    Chained { carry: f64 },
}

/// Which twist magnitude the rotation angles are computed from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AngleMode {
    /// The applied, `C`-scaled magnitude.
    #[default]
    PostScale,
    /// The unscaled root.
    PreScale,
}

/// Less common schedule options.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ScheduleOptions {
    pub angle_mode: AngleMode,
    /// Also scale the last twist by `C` (used for shrink-factor sweeps of
    /// single-twist states).
    pub scale_last: bool,
}

/// Builds a schedule with default options.
pub fn build_schedule(n: usize, depth: usize, c: f64, context: ScheduleContext) -> Result<TwistSchedule> {
    build_schedule_with(n, depth, c, context, ScheduleOptions::default())
}

/// Builds a schedule.
///
/// Step `k` solves for the root at the squeezing `xi2_k` of the partial
/// circuit (`xi2_1 = 1`), using the chained equation for the last step in a
/// chained context. The applied magnitude is `c_k * root` with `c_k = c`
/// except on the last step (unless `scale_last`), the rotation is
/// `-atan2(B, A) / 2` of the twisted Gaussian state with width `xi2_k`
/// (plus `pi/2` on the last step) and step `k` carries sign `(-1)^(k+1)`.
///
/// `xi2_{k+1}` is evaluated on the simulated partial state as
/// `N V_min / <J_x>^2`, with `V_min` the least variance over `x` rotations,
/// i.e. the squeezing the circuit would reach if it stopped there.
pub fn build_schedule_with(
    n: usize,
    depth: usize,
    c: f64,
    context: ScheduleContext,
    options: ScheduleOptions,
) -> Result<TwistSchedule> {
    if depth == 0 {
        return invalid("schedule depth must be at least 1");
    }
    if !(c > 0.0 && c.is_finite()) {
        return invalid(format!("shrink factor must be positive, got {c}"));
    }
    if !options.scale_last && c > 1.0 {
        return invalid(format!("shrink factor must lie in (0, 1], got {c}"));
    }
    let mut state = coherent_x(n)?;
    let mut xi2 = 1.0;
    let mut steps = Vec::with_capacity(depth);
    for k in 1..=depth {
        let last = k == depth;
        let at_step = |e: Error| Error::ScheduleStep {
            step: k,
            source: Box::new(e),
        };
        let root = match (last, context) {
            (true, ScheduleContext::Chained { carry }) => solve_state3(n, xi2, carry),
            _ => solve_state1(n, xi2),
        }
        .map_err(at_step)?;
        let c_k = if last && !options.scale_last { 1.0 } else { c };
        let magnitude = c_k * root;
        let angle_chi = match options.angle_mode {
            AngleMode::PostScale => magnitude,
            AngleMode::PreScale => root,
        };
        let tg = tg_moments(n, xi2, angle_chi).map_err(at_step)?;
        let mut theta = -0.5 * tg.b_coef.atan2(tg.a_coef);
        if last {
            theta += FRAC_PI_2;
        }
        let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
        let step = TwistStep {
            chi: sign * magnitude,
            theta: sign * theta,
            c_applied: c_k,
        };
        steps.push(step);
        if !last {
            state = apply_step(&state, &step);
            let m = compute_moments(&state);
            if m.jx.abs() <= 1e-12 * n as f64 {
                return Err(at_step(Error::DegenerateOrientation { jx: m.jx }));
            }
            xi2 = n as f64 * m.min_rotated_variance() / (m.jx * m.jx);
        }
    }
    Ok(TwistSchedule { n_particles: n, c, steps })
}

fn apply_step(state: &CollectiveState, step: &TwistStep) -> CollectiveState {
    apply_rotation(&apply_twist(state, step.chi), Axis::X, step.theta)
}

/// Runs the schedule on `|J_x = N/2>`.
pub fn prepare_state(schedule: &TwistSchedule) -> Result<CollectiveState> {
    prepare_state_for(schedule, schedule.n_particles)
}

/// Runs the schedule's angles on `n` particles, which may differ from the
/// size the schedule was built for.
pub fn prepare_state_for(schedule: &TwistSchedule, n: usize) -> Result<CollectiveState> {
    let mut state = coherent_x(n)?;
    for step in &schedule.steps {
        state = apply_step(&state, step);
    }
    Ok(state)
}

/// An exact rational number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rational {
    pub num: i64,
    pub den: i64,
}

impl Rational {
    fn new(num: i64, den: i64) -> Self {
        let g = gcd(num.abs(), den.abs()).max(1);
        Rational {
            num: num / g,
            den: den / g,
        }
    }

    /// Floating-point value.
    pub fn value(self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn pow3(k: u32) -> i64 {
    3i64.pow(k)
}

/// Scaling exponents of the adaptive protocol family.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScalingExponents;

impl ScalingExponents {
    /// Error exponent `nu(j) = 2 - 3^-j` of a protocol with `j + 1`
    /// ensembles.
    pub fn nu(&self, j: u32) -> Rational {
        let d = pow3(j);
        Rational::new(2 * d - 1, d)
    }

    /// Squeezing exponent `mu(k) = 1 - 3^-(k-1)` of the `k`-th ensemble.
    pub fn mu(&self, k: u32) -> Rational {
        assert!(k >= 1, "ensemble index is 1-based");
        let d = pow3(k - 1);
        Rational::new(d - 1, d)
    }

    /// Twist-angle exponent `gamma(m) = 2 / 3^m` of the `m`-th twist.
    pub fn gamma(&self, m: u32) -> Rational {
        Rational::new(2, pow3(m))
    }

    /// Rotation-angle exponent `alpha(n) = 1 - 2 / 3^n` of the `n`-th
    /// rotation.
    pub fn alpha(&self, n: u32) -> Rational {
        let d = pow3(n);
        Rational::new(d - 2, d)
    }

    /// Exponent `beta(k) = 1 - 2 / 3^(k-1)` of `pi/2 - theta` for the last
    /// rotation on the `k`-th ensemble.
    pub fn beta(&self, k: u32) -> Rational {
        assert!(k >= 1, "ensemble index is 1-based");
        let d = pow3(k - 1);
        Rational::new(d - 2, d)
    }
}

/// The table of scaling exponents.
pub fn table_exponents() -> ScalingExponents {
    ScalingExponents
}
