//! Run configuration: flags, optional TOML file, validation and hashing.
//!
//! Every setting can come from a command-line flag or from a flat TOML file
//! passed with `--config`; keys in the file use the flag names with
//! underscores (`quadrature_nodes = 201`). Flags override the file.

use std::fmt;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use spinsqueeze::estimator::allocate_ensembles;

/// The study a run performs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Squeeze,
    Estimate,
    Robustness,
    Fit,
    Predict,
    Qdist,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Squeeze => "squeeze",
            Command::Estimate => "estimate",
            Command::Robustness => "robustness",
            Command::Fit => "fit",
            Command::Predict => "predict",
            Command::Qdist => "qdist",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ContextKind {
    Standalone,
    Chained,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum AngleModeArg {
    PostScale,
    PreScale,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ModeArg {
    Exact,
    Mc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Study {
    Number,
    Feedback,
    Contrast,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum DistArg {
    Delta,
    Poisson,
    Binomial,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum FeedbackEstimatorArg {
    Grid,
    SharedVector,
    PerTerm,
    Hybrid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum AccountingArg {
    Absorbed,
    RotationOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum FitKind {
    /// Power law through two CSV columns.
    Powerlaw,
    /// Sigmoid-exponential through two CSV columns.
    Sigmoid,
    /// Kurtosis sweep over the shrink factor, then a sigmoid-exponential fit.
    Kurtosis,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Formula {
    /// Optimal twist of a Gaussian state without the final rotation.
    ChiStar,
    /// Twisted-Gaussian moments at `(n, s2, chi)`.
    TgMoments,
    /// Rotated-squeezing recursion for `j` twists.
    Recursion,
    /// Weakly non-Gaussian optimum.
    WeaklyNg,
    /// Width and twist-angle patterns for twist `j`.
    Pattern,
    /// Exponent table for index `j`.
    Exponents,
    /// Root of the finite-size twist equation.
    Root,
}

/// All settings. Each is optional so that file and flag values can be
/// merged; defaults are applied by the commands.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize, Args)]
#[serde(deny_unknown_fields)]
pub struct Settings {
    /// Particle numbers (total for `estimate`, target for `robustness`).
    #[arg(long, value_delimiter = ',')]
    pub n: Option<Vec<usize>>,
    /// Prior standard deviations.
    #[arg(long, value_delimiter = ',')]
    pub sigma: Option<Vec<f64>>,
    /// Number of ensembles (1 to 4).
    #[arg(long)]
    pub ensembles: Option<usize>,
    /// Twists per schedule.
    #[arg(long)]
    pub depth: Option<usize>,
    /// Shrink factor for all but the last twist.
    #[arg(long)]
    pub c: Option<f64>,
    #[arg(long, value_enum)]
    pub context: Option<ContextKind>,
    /// Phase variance left by earlier ensembles (chained context).
    #[arg(long)]
    pub carry: Option<f64>,
    #[arg(long, value_enum)]
    pub angle_mode: Option<AngleModeArg>,
    /// Also scale the last twist by C.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub scale_last: Option<bool>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    /// Monte Carlo samples per branch.
    #[arg(long)]
    pub samples: Option<usize>,
    /// First ensemble (1-based) sampled from the Gaussian approximation.
    #[arg(long)]
    pub gaussian_from: Option<usize>,
    /// Polish the last ensemble's final twist and rotation.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub optimize_last: Option<bool>,
    #[arg(long)]
    pub branch_budget: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (results do not depend on it).
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub quadrature_nodes: Option<usize>,
    /// Results CSV path; the reproducibility record goes next to it.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub study: Option<Study>,
    #[arg(long, value_enum)]
    pub dist: Option<DistArg>,
    /// Binomial success probability.
    #[arg(long)]
    pub p: Option<f64>,
    /// Feedback noise standard deviations.
    #[arg(long, value_delimiter = ',')]
    pub feedback_sigma: Option<Vec<f64>>,
    #[arg(long)]
    pub outer: Option<usize>,
    #[arg(long)]
    pub inner: Option<usize>,
    #[arg(long, value_enum)]
    pub feedback_estimator: Option<FeedbackEstimatorArg>,
    #[arg(long, value_enum)]
    pub accounting: Option<AccountingArg>,
    /// Contrast-loss rates.
    #[arg(long, value_delimiter = ',')]
    pub gamma: Option<Vec<f64>>,
    #[arg(long, value_enum)]
    pub kind: Option<FitKind>,
    /// Input CSV for `fit`.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub x_col: Option<String>,
    #[arg(long)]
    pub y_col: Option<String>,
    #[arg(long)]
    pub c_min: Option<f64>,
    #[arg(long)]
    pub c_max: Option<f64>,
    /// Points in a sweep or per grid axis.
    #[arg(long)]
    pub points: Option<usize>,
    #[arg(long, value_enum)]
    pub formula: Option<Formula>,
    #[arg(long)]
    pub s2: Option<f64>,
    #[arg(long)]
    pub chi: Option<f64>,
    /// Kurtosis bound for the weakly non-Gaussian optimum.
    #[arg(long)]
    pub w: Option<f64>,
    /// Twist or exponent index.
    #[arg(long)]
    pub j: Option<u32>,
}

macro_rules! overlay {
    ($base:expr, $top:expr, $($f:ident),* $(,)?) => {
        Settings { $($f: $top.$f.clone().or_else(|| $base.$f.clone()),)* }
    };
}

impl Settings {
    /// `self` with every field set in `top` replaced.
    pub fn overlaid(&self, top: &Settings) -> Settings {
        overlay!(
            self, top, n, sigma, ensembles, depth, c, context, carry, angle_mode, scale_last, mode, samples,
            gaussian_from, optimize_last, branch_budget, seed, threads, quadrature_nodes, out, study, dist, p,
            feedback_sigma, outer, inner, feedback_estimator, accounting, gamma, kind, input, x_col, y_col, c_min,
            c_max, points, formula, s2, chi, w, j,
        )
    }
}

/// A merged configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub command: Command,
    pub settings: Settings,
    /// Source file, for diagnostics.
    #[serde(skip)]
    pub file: Option<(PathBuf, String)>,
}

/// One violated constraint.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub field: String,
    pub message: String,
    /// `(path, line)` when the field came from the config file.
    pub location: Option<(PathBuf, usize)>,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.location {
            Some((path, line)) => write!(f, "{}:{line}: field `{}`: {}", path.display(), self.field, self.message),
            None => write!(f, "field `{}`: {}", self.field, self.message),
        }
    }
}

/// Reads a TOML settings file.
pub fn read_file(path: &Path) -> anyhow::Result<(Settings, String)> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| anyhow::anyhow!("cannot read config {}: {e}", path.display()))?;
    let settings: Settings = toml::from_str(&text).map_err(|e| {
        let line = e.span().map(|s| text[..s.start].lines().count().max(1));
        match line {
            Some(l) => anyhow::anyhow!("{}:{l}: {}", path.display(), e.message()),
            None => anyhow::anyhow!("{}: {}", path.display(), e.message()),
        }
    })?;
    Ok((settings, text))
}

impl RunConfig {
    /// Every violated constraint; never runs numerics.
    pub fn validate(&self) -> Vec<Diagnostic> {
        let s = &self.settings;
        let mut out = Vec::new();
        let mut bad = |field: &str, message: String| {
            out.push(Diagnostic {
                field: field.to_string(),
                message,
                location: self.locate(field),
            })
        };
        let needs_n = !matches!(self.command, Command::Fit | Command::Predict | Command::Qdist)
            || (self.command == Command::Fit && s.kind == Some(FitKind::Kurtosis));
        match &s.n {
            Some(v) if v.is_empty() => bad("n", "grid must not be empty".into()),
            None if needs_n => bad("n", format!("`{}` needs a particle-number grid", self.command.name())),
            Some(v) => {
                if let Some(x) = v.iter().find(|&&x| x < 2) {
                    bad("n", format!("particle numbers must be at least 2, got {x}"));
                }
            }
            None => {}
        }
        if let Some(v) = &s.sigma {
            if v.is_empty() {
                bad("sigma", "grid must not be empty".into());
            } else if v.iter().any(|x| !(*x >= 0.0 && x.is_finite())) {
                bad("sigma", "prior widths must be non-negative".into());
            }
        }
        if self.command == Command::Estimate {
            if s.sigma.is_none() {
                bad("sigma", "`estimate` needs at least one prior width".into());
            }
            let m = s.ensembles.unwrap_or(2);
            if !(1..=4).contains(&m) {
                bad("ensembles", format!("must be between 1 and 4, got {m}"));
            } else if m > 1 {
                for &n in s.n.iter().flatten() {
                    if let Err(e) = allocate_ensembles(n, m) {
                        bad("n", format!("{e} (allocation rule for {m} ensembles)"));
                    }
                }
            }
        }
        let mc = s.mode == Some(ModeArg::Mc);
        let seeded = mc
            || self.command == Command::Robustness && matches!(s.study, Some(Study::Number | Study::Feedback));
        if seeded && s.seed.is_none() {
            bad("seed", "a seed is required for Monte Carlo and sampled studies".into());
        }
        if s.samples == Some(0) {
            bad("samples", "must be at least 1".into());
        }
        if let Some(c) = s.c {
            if !(c > 0.0 && c.is_finite()) {
                bad("c", format!("shrink factor must be positive, got {c}"));
            } else if c > 1.0 && s.scale_last != Some(true) {
                bad("c", format!("shrink factor must lie in (0, 1], got {c}"));
            }
        }
        if s.depth == Some(0) && matches!(self.command, Command::Squeeze | Command::Qdist) {
            bad("depth", "must be at least 1".into());
        }
        if s.context == Some(ContextKind::Chained) && s.carry.is_none() {
            bad("carry", "a chained context needs the carried phase variance".into());
        }
        if s.quadrature_nodes == Some(0) {
            bad("quadrature_nodes", "must be at least 1".into());
        }
        if s.threads == Some(0) {
            bad("threads", "must be at least 1".into());
        }
        if self.command == Command::Robustness {
            match s.study {
                None => bad("study", "`robustness` needs a study (number, feedback or contrast)".into()),
                Some(Study::Feedback) => {
                    if s.sigma.as_ref().is_none_or(|v| v.len() != 1) {
                        bad("sigma", "the feedback study needs exactly one prior width".into());
                    }
                    if s.ensembles.is_some_and(|m| !(2..=4).contains(&m)) {
                        bad("ensembles", "the feedback study needs 2 to 4 ensembles".into());
                    }
                }
                Some(Study::Number) => {
                    if s.dist == Some(DistArg::Binomial) && s.p.is_none_or(|p| !(p > 0.0 && p <= 1.0)) {
                        bad("p", "binomial distribution needs p in (0, 1]".into());
                    }
                }
                Some(Study::Contrast) => {
                    if s.gamma.as_ref().is_some_and(|g| g.iter().any(|x| x.is_nan() || *x < 0.0)) {
                        bad("gamma", "contrast-loss rates must be non-negative".into());
                    }
                }
            }
        }
        if self.command == Command::Fit {
            match s.kind {
                None => bad("kind", "`fit` needs a kind (powerlaw, sigmoid or kurtosis)".into()),
                Some(FitKind::Powerlaw | FitKind::Sigmoid) => {
                    if s.input.is_none() {
                        bad("input", "a CSV input is required".into());
                    }
                    if s.x_col.is_none() {
                        bad("x_col", "name the x column".into());
                    }
                    if s.y_col.is_none() {
                        bad("y_col", "name the y column".into());
                    }
                }
                Some(FitKind::Kurtosis) => {
                    if s.points.is_some_and(|p| p < 8) {
                        bad("points", "the sigmoid fit needs at least 8 sweep points".into());
                    }
                }
            }
        }
        if self.command == Command::Predict {
            match s.formula {
                None => bad("formula", "`predict` needs a formula".into()),
                Some(f) => {
                    let n_ok = s.n.as_ref().is_some_and(|v| !v.is_empty());
                    let needs = |name: &str| match name {
                        "n" => !n_ok,
                        "s2" => s.s2.is_none(),
                        "chi" => s.chi.is_none(),
                        "w" => s.w.is_none(),
                        "j" => s.j.is_none(),
                        "sigma" => s.sigma.is_none(),
                        _ => false,
                    };
                    let required: &[&str] = match f {
                        Formula::ChiStar => &["n", "s2"],
                        Formula::TgMoments => &["n", "s2", "chi"],
                        Formula::Recursion => &["n", "sigma", "j"],
                        Formula::WeaklyNg => &["n", "sigma", "w"],
                        Formula::Pattern => &["n", "j"],
                        Formula::Exponents => &["j"],
                        Formula::Root => &["n", "s2"],
                    };
                    for field in required.iter().filter(|f| needs(f)) {
                        bad(field, format!("required by formula {f:?}"));
                    }
                }
            }
        }
        if self.command == Command::Qdist && s.n.as_ref().is_none_or(|v| v.len() != 1) {
            bad("n", "`qdist` needs exactly one particle number".into());
        }
        out
    }

    /// Line of `field` in the config file, when it was set there.
    fn locate(&self, field: &str) -> Option<(PathBuf, usize)> {
        let (path, text) = self.file.as_ref()?;
        text.lines().enumerate().find_map(|(i, line)| {
            let key = line.split('=').next()?.trim();
            (key == field).then(|| (path.clone(), i + 1))
        })
    }

    /// SHA-256 of the canonical JSON of everything that affects results
    /// (the command and settings other than `threads` and `out`).
    pub fn hash(&self) -> String {
        let mut s = self.settings.clone();
        s.threads = None;
        s.out = None;
        let canonical = serde_json::to_string(&(self.command, &s)).expect("settings serialise");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }
}
