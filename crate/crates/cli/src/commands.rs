//! The six studies.

use std::f64::consts::PI;

use anyhow::{anyhow, bail, Context, Result};
use clap::ValueEnum;

use spinsqueeze::analytic::{
    chi_pattern, chi_star_unrotated, s2_pattern, solve_state1, solve_state3, tg_moments, tg_recursion,
    weakly_ng_optimum,
};
use spinsqueeze::estimator::{
    estimate, optimize_last_ensemble, EstimatorMode, PolishSettings, ProtocolDesign, ProtocolSpec,
    DEFAULT_SAMPLES,
};
use spinsqueeze::fitting::{powerlaw_fit, sigmoid_exp_fit, PowerLawFit, SigmoidExpFit};
use spinsqueeze::moments::{compute_moments, kurtosis, wineland_xi2};
use spinsqueeze::par::map_slice;
use spinsqueeze::robustness::{
    contrast_adjusted_xi2, feedback_error, number_fluctuation_xi2, FeedbackAccounting, FeedbackEstimator,
    FeedbackNoise, NumberDistribution, NumberKind,
};
use spinsqueeze::schedule::{
    build_schedule_with, prepare_state, table_exponents, AngleMode, ScheduleContext, ScheduleOptions,
    TwistSchedule, DEFAULT_C,
};
use spinsqueeze::spinstate::{husimi_q, Axis};

use crate::config::{
    AccountingArg, AngleModeArg, Command, ContextKind, DistArg, FeedbackEstimatorArg, FitKind, Formula, ModeArg,
    RunConfig, Settings, Study,
};
use crate::output::{num, opt, Table};

/// Runs the configured study.
pub fn run(config: &RunConfig) -> Result<Table> {
    let s = &config.settings;
    match config.command {
        Command::Squeeze => squeeze(s),
        Command::Estimate => estimate_grid(s),
        Command::Robustness => match s.study.expect("validated") {
            Study::Number => number_study(s),
            Study::Feedback => feedback_study(s),
            Study::Contrast => contrast_study(s),
        },
        Command::Fit => fit(s),
        Command::Predict => predict(s),
        Command::Qdist => qdist(s),
    }
}

fn grid(s: &Settings) -> &[usize] {
    s.n.as_deref().unwrap_or_default()
}

fn schedule_options(s: &Settings) -> ScheduleOptions {
    ScheduleOptions {
        angle_mode: match s.angle_mode {
            Some(AngleModeArg::PreScale) => AngleMode::PreScale,
            _ => AngleMode::PostScale,
        },
        scale_last: s.scale_last.unwrap_or(false),
    }
}

fn schedule_for(s: &Settings, n: usize, default_depth: usize) -> Result<TwistSchedule> {
    let depth = s.depth.unwrap_or(default_depth);
    build_core_schedule(s, n, default_depth).with_context(|| format!("schedule: N = {n}, depth = {depth}"))
}

fn build_core_schedule(s: &Settings, n: usize, default_depth: usize) -> spinsqueeze::Result<TwistSchedule> {
    let depth = s.depth.unwrap_or(default_depth);
    let context = match s.context {
        Some(ContextKind::Chained) => ScheduleContext::Chained {
            carry: s.carry.expect("validated"),
        },
        _ => ScheduleContext::Standalone,
    };
    build_schedule_with(n, depth, s.c.unwrap_or(DEFAULT_C), context, schedule_options(s))
}

fn fitted(points: &[(f64, f64)]) -> Option<PowerLawFit> {
    (points.len() >= 3).then(|| powerlaw_fit(points).ok()).flatten()
}

fn squeeze(s: &Settings) -> Result<Table> {
    let rows = map_slice(grid(s), |&n| -> Result<(usize, f64, f64)> {
        let state = prepare_state(&schedule_for(s, n, 1)?)?;
        let xi2 = wineland_xi2(&compute_moments(&state)).with_context(|| format!("moments: N = {n}"))?;
        let k = kurtosis(&state, Axis::Y).with_context(|| format!("moments: N = {n}"))?;
        Ok((n, xi2, k))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let pts: Vec<(f64, f64)> = rows.iter().map(|r| (r.0 as f64, r.1)).collect();
    let mu = fitted(&pts).map(|f| -f.exponent);
    let mut t = Table::new(&["n", "depth", "c", "xi2", "kurtosis_y", "fitted_mu"]);
    for (n, xi2, k) in rows {
        t.push(vec![
            n.to_string(),
            s.depth.unwrap_or(1).to_string(),
            num(s.c.unwrap_or(DEFAULT_C)),
            num(xi2),
            num(k),
            opt(mu),
        ]);
    }
    Ok(t)
}

fn protocol_for(s: &Settings, n: usize, sigma: f64) -> Result<ProtocolSpec> {
    let m = s.ensembles.unwrap_or(2);
    let mut design = if m == 1 {
        ProtocolDesign::single(n, s.depth.unwrap_or(1))
    } else {
        ProtocolDesign::adaptive(n, m)?
    };
    if let Some(c) = s.c {
        design = design.with_c(c);
    }
    design.schedule_options = schedule_options(s);
    let mut p = design.build(sigma)?;
    if let Some(q) = s.quadrature_nodes {
        p = p.with_quadrature_nodes(q);
    }
    if let Some(b) = s.branch_budget {
        p = p.with_branch_budget(b);
    }
    if s.mode == Some(ModeArg::Mc) {
        p = p.with_mode(EstimatorMode::MonteCarlo {
            samples: s.samples.unwrap_or(DEFAULT_SAMPLES),
            seed: s.seed.expect("validated"),
            gaussian_from: s.gaussian_from,
        });
    }
    Ok(p)
}

fn estimate_grid(s: &Settings) -> Result<Table> {
    let mut t = Table::new(&[
        "n_total",
        "sigma",
        "ensembles",
        "mode",
        "delta_phi2",
        "stderr",
        "seed",
        "nu",
    ]);
    let m = s.ensembles.unwrap_or(2);
    for &sigma in s.sigma.as_deref().unwrap_or_default() {
        let mut rows = Vec::new();
        for &n in grid(s) {
            let ctx = || format!("estimator: N = {n}, sigma = {sigma}, ensembles = {m}");
            let mut p = protocol_for(s, n, sigma).with_context(ctx)?;
            if s.optimize_last == Some(true) && p.last().schedule.depth() > 0 {
                let init = p.last().schedule.clone();
                let best = optimize_last_ensemble(&p, &init, PolishSettings::default()).with_context(ctx)?;
                p = p.with_last_schedule(best.schedule).with_context(ctx)?;
            }
            let r = estimate(&p).with_context(ctx)?;
            rows.push(r);
        }
        let pts: Vec<(f64, f64)> = rows.iter().map(|r| (r.n_total as f64, r.delta_phi2)).collect();
        let nu = fitted(&pts).map(|f| -f.exponent);
        for r in rows {
            t.push(vec![
                r.n_total.to_string(),
                num(sigma),
                m.to_string(),
                if s.mode == Some(ModeArg::Mc) { "mc" } else { "exact" }.into(),
                num(r.delta_phi2),
                num(r.standard_error),
                s.seed.map(|x| x.to_string()).unwrap_or_default(),
                opt(nu),
            ]);
        }
    }
    Ok(t)
}

fn robustness_table() -> Table {
    Table::new(&["study", "n_target", "parameter", "mean", "std", "seed"])
}

fn seed_str(s: &Settings) -> String {
    s.seed.map(|x| x.to_string()).unwrap_or_default()
}

fn number_study(s: &Settings) -> Result<Table> {
    let (kind, label) = match s.dist.unwrap_or(DistArg::Poisson) {
        DistArg::Delta => (NumberKind::Delta, "delta".to_string()),
        DistArg::Poisson => (NumberKind::Poisson, "poisson".to_string()),
        DistArg::Binomial => {
            let p = s.p.expect("validated");
            (NumberKind::Binomial { p }, format!("binomial-{p}"))
        }
    };
    let samples = s.samples.unwrap_or(200);
    let mut t = robustness_table();
    for &n in grid(s) {
        let dist = NumberDistribution::new(kind, n)?;
        let r = number_fluctuation_xi2(&dist, |n| build_core_schedule(s, n, 2), samples, s.seed.expect("validated"))
            .with_context(|| format!("robustness: N = {n}, distribution {label}"))?;
        t.push(vec!["number".into(), n.to_string(), "noiseless".into(), num(r.noiseless), num(0.0), seed_str(s)]);
        t.push(vec!["number".into(), n.to_string(), label.clone(), num(r.mean), num(r.std), seed_str(s)]);
    }
    Ok(t)
}

fn feedback_study(s: &Settings) -> Result<Table> {
    let sigma = s.sigma.as_ref().expect("validated")[0];
    let levels = s.feedback_sigma.clone().unwrap_or_else(|| vec![0.0, 1e-3, 1e-2]);
    let mut t = robustness_table();
    let settings = Settings {
        ensembles: Some(s.ensembles.unwrap_or(3)),
        mode: None,
        ..s.clone()
    };
    for &n in grid(s) {
        let p = protocol_for(&settings, n, sigma).with_context(|| format!("robustness: N = {n}"))?;
        for &sfb in &levels {
            let noise = FeedbackNoise {
                sigma_fb: sfb,
                outer: s.outer.unwrap_or(10),
                inner: s.inner.unwrap_or(1),
                seed: s.seed.expect("validated"),
                estimator: match s.feedback_estimator.unwrap_or(FeedbackEstimatorArg::Hybrid) {
                    FeedbackEstimatorArg::Grid => FeedbackEstimator::Grid,
                    FeedbackEstimatorArg::SharedVector => FeedbackEstimator::SharedVector,
                    FeedbackEstimatorArg::PerTerm => FeedbackEstimator::PerTerm,
                    FeedbackEstimatorArg::Hybrid => FeedbackEstimator::Hybrid,
                },
                accounting: match s.accounting.unwrap_or(AccountingArg::Absorbed) {
                    AccountingArg::Absorbed => FeedbackAccounting::Absorbed,
                    AccountingArg::RotationOnly => FeedbackAccounting::RotationOnly,
                },
            };
            let r = feedback_error(&p, &noise)
                .with_context(|| format!("robustness: feedback at N = {n}, Sigma = {sfb}"))?;
            t.push(vec![
                "feedback".into(),
                n.to_string(),
                num(sfb),
                num(r.delta_phi2),
                num(r.standard_error),
                seed_str(s),
            ]);
        }
    }
    Ok(t)
}

fn contrast_study(s: &Settings) -> Result<Table> {
    let gammas = s.gamma.clone().unwrap_or_else(|| vec![0.0, 0.1, 0.2, 0.3, 0.4]);
    let mut t = robustness_table();
    for &n in grid(s) {
        let schedule = schedule_for(s, n, 2)?;
        let xi2 = wineland_xi2(&compute_moments(&prepare_state(&schedule)?))?;
        for &g in &gammas {
            let v = contrast_adjusted_xi2(xi2, &schedule, g)?;
            t.push(vec!["contrast".into(), n.to_string(), num(g), num(v), num(0.0), seed_str(s)]);
        }
    }
    Ok(t)
}

fn read_columns(s: &Settings) -> Result<Vec<(f64, f64)>> {
    let path = s.input.as_ref().expect("validated");
    let (xc, yc) = (s.x_col.as_ref().expect("validated"), s.y_col.as_ref().expect("validated"));
    let mut rdr = csv::Reader::from_path(path).with_context(|| format!("cannot read {}", path.display()))?;
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| anyhow!("{}: no column `{name}`", path.display()))
    };
    let (xi, yi) = (col(xc)?, col(yc)?);
    let mut out = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let parse = |i: usize| -> Result<f64> {
            rec.get(i)
                .unwrap_or_default()
                .trim()
                .parse()
                .with_context(|| format!("{}: row {}: not a number", path.display(), line + 2))
        };
        out.push((parse(xi)?, parse(yi)?));
    }
    Ok(out)
}

fn fit_table() -> Table {
    Table::new(&["n", "quantity", "x", "value"])
}

fn push_sigmoid(t: &mut Table, n: &str, f: &SigmoidExpFit) {
    for (q, v) in [("p1", f.p1), ("p2", f.p2), ("p3", f.p3), ("p4", f.p4), ("residual_rms", f.residual_rms)] {
        t.push(vec![n.into(), q.into(), String::new(), num(v)]);
    }
    t.push(vec![n.into(), "converged".into(), String::new(), u8::from(f.converged).to_string()]);
}

fn fit(s: &Settings) -> Result<Table> {
    let mut t = fit_table();
    match s.kind.expect("validated") {
        FitKind::Powerlaw => {
            let f = powerlaw_fit(&read_columns(s)?).context("fitting: power law")?;
            for (q, v) in [
                ("exponent", f.exponent),
                ("log_prefactor", f.log_prefactor),
                ("residual_rms", f.residual_rms),
                ("exponent_stderr", f.exponent_stderr),
            ] {
                t.push(vec![String::new(), q.into(), String::new(), num(v)]);
            }
        }
        FitKind::Sigmoid => {
            let f = sigmoid_exp_fit(&read_columns(s)?).context("fitting: sigmoid-exponential")?;
            push_sigmoid(&mut t, "", &f);
        }
        FitKind::Kurtosis => {
            let (lo, hi) = (s.c_min.unwrap_or(0.1), s.c_max.unwrap_or(1.0));
            let k = s.points.unwrap_or(25);
            let cs: Vec<f64> = (0..k).map(|i| lo + (hi - lo) * i as f64 / (k - 1) as f64).collect();
            for &n in grid(s) {
                let settings = Settings {
                    depth: Some(s.depth.unwrap_or(1)),
                    scale_last: Some(true),
                    ..s.clone()
                };
                let sweep = map_slice(&cs, |&c| -> Result<(f64, f64)> {
                    let sched = schedule_for(&Settings { c: Some(c), ..settings.clone() }, n, 1)?;
                    Ok((c, kurtosis(&prepare_state(&sched)?, Axis::Y)?))
                })
                .into_iter()
                .collect::<Result<Vec<_>>>()
                .with_context(|| format!("fitting: kurtosis sweep at N = {n}"))?;
                for &(c, kv) in &sweep {
                    t.push(vec![n.to_string(), "kurtosis".into(), num(c), num(kv)]);
                }
                let f = sigmoid_exp_fit(&sweep).with_context(|| format!("fitting: N = {n}"))?;
                push_sigmoid(&mut t, &n.to_string(), &f);
            }
        }
    }
    Ok(t)
}

fn predict(s: &Settings) -> Result<Table> {
    let mut t = Table::new(&["formula", "quantity", "n", "value", "in_regime"]);
    let formula = s.formula.expect("validated");
    let name = formula.to_possible_value().expect("listed").get_name().to_string();
    let mut row = |q: &str, n: Option<usize>, v: f64, regime: Option<bool>| {
        t.push(vec![
            name.clone(),
            q.into(),
            n.map(|n| n.to_string()).unwrap_or_default(),
            num(v),
            regime.map(|b| b.to_string()).unwrap_or_default(),
        ]);
    };
    if formula == Formula::Exponents {
        let j = s.j.expect("validated");
        let e = table_exponents();
        row("nu", None, e.nu(j).value(), None);
        row("gamma", None, e.gamma(j).value(), None);
        row("alpha", None, e.alpha(j).value(), None);
        if j >= 1 {
            row("mu", None, e.mu(j).value(), None);
            row("beta", None, e.beta(j).value(), None);
        }
        return Ok(t);
    }
    let sigma = s.sigma.as_ref().and_then(|v| v.first().copied());
    for &n in grid(s) {
        match formula {
            Formula::ChiStar => {
                let v = chi_star_unrotated(n, s.s2.expect("validated"));
                row("chi_star", Some(n), v.value, Some(v.in_regime));
            }
            Formula::TgMoments => {
                let m = tg_moments(n, s.s2.expect("validated"), s.chi.expect("validated"))?;
                let r = Some(m.in_regime());
                for (q, v) in [
                    ("jx_mean", m.jx_mean),
                    ("v_plus", m.v_plus),
                    ("v_minus", m.v_minus),
                    ("theta_star", m.theta_star),
                    ("var_x", m.var_x),
                ] {
                    row(q, Some(n), v, r);
                }
            }
            Formula::Recursion => {
                let j = s.j.expect("validated").max(1);
                let mut st = tg_recursion(n, s.s2.unwrap_or(1.0), sigma.expect("validated"))?;
                for k in 1..=j {
                    if k > 1 {
                        st = st.next(n, sigma.expect("validated"))?;
                    }
                    row(&format!("chi_star_{k}"), Some(n), st.chi_star, None);
                    row(&format!("xibar2_{k}"), Some(n), st.xibar2, None);
                    row(&format!("s2_next_{k}"), Some(n), st.s2_next, None);
                }
            }
            Formula::WeaklyNg => {
                let o = weakly_ng_optimum(n, sigma.expect("validated"), s.w.expect("validated"))?;
                row("delta_jy2", Some(n), o.delta_jy2, None);
                row("xi2", Some(n), o.xi2, None);
                row("xibar2", Some(n), o.xibar2, None);
            }
            Formula::Pattern => {
                let j = s.j.expect("validated");
                if j == 0 {
                    bail!("analytic: twist index j is 1-based");
                }
                row("s2", Some(n), s2_pattern(j, n), None);
                row("chi", Some(n), chi_pattern(j, n), None);
            }
            Formula::Root => {
                let s2 = s.s2.expect("validated");
                row("state1", Some(n), solve_state1(n, s2)?, None);
                if let Some(carry) = s.carry {
                    row("state3", Some(n), solve_state3(n, s2, carry)?, None);
                }
            }
            Formula::Exponents => unreachable!(),
        }
    }
    Ok(t)
}

fn qdist(s: &Settings) -> Result<Table> {
    let n = grid(s)[0];
    let state = prepare_state(&schedule_for(s, n, 1)?)?;
    let k = s.points.unwrap_or(61).max(2);
    let pts: Vec<(f64, f64)> = (0..k)
        .flat_map(|i| {
            let polar = PI * i as f64 / (k - 1) as f64;
            (0..2 * k).map(move |j| (polar, -PI + PI * j as f64 / k as f64))
        })
        .collect();
    let q = husimi_q(&state, &pts);
    let mut t = Table::new(&["polar", "azimuth", "q"]);
    for ((p, a), v) in pts.into_iter().zip(q) {
        t.push(vec![num(p), num(a), num(v)]);
    }
    Ok(t)
}
