//! Named end-to-end experiments. Each one runs a complete scenario,
//! evaluates its pass/fail checks, and (optionally) writes CSV/JSON
//! artifacts with fixed formatting so reruns with the same seed are
//! byte-identical.

use crate::error::Error;
use crate::fundsol::{fit_decay, fundamental_retarded};
use crate::measures::{Segment, SignedMeasure};
use crate::simulate::{
    generate_increments, run_with_increments, DiffusionFunctional, JumpLaw, ModelKind,
    ModelSpec, NoiseSpec,
};
use crate::spectrum::{rightmost_roots, stability_interval_check, CharSpec};
use crate::stationarity::{
    coupling_contraction, segment_moment_bound, stationarity_convergence_test, Trend, Verdict,
};
use num_complex::Complex64;
use rayon::prelude::*;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

pub const EXPERIMENT_NAMES: &[&str] =
    &["ex36", "ex38", "ex43", "thm51", "thm54", "ou_closed_form"];

/// One pass/fail observation of an experiment.
#[derive(Debug, Clone, serde::Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct ExperimentReport {
    pub name: String,
    pub checks: Vec<Check>,
    pub artifacts: Vec<PathBuf>,
}

impl ExperimentReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// Optional parameter overrides (`key=value` arguments of the CLI).
#[derive(Debug, Clone, Copy, Default)]
pub struct Overrides {
    pub a: Option<f64>,
    pub b: Option<f64>,
    pub replicas: Option<u64>,
    pub t_max: Option<f64>,
}

/// Fixed 17-significant-digit float formatting for artifact files.
pub fn fmt_g17(x: f64) -> String {
    format!("{x:.16e}")
}

struct Ctx<'a> {
    checks: Vec<Check>,
    artifacts: Vec<PathBuf>,
    out_dir: Option<&'a Path>,
}

impl Ctx<'_> {
    fn check(&mut self, name: &str, passed: bool, detail: String) {
        self.checks.push(Check { name: name.to_string(), passed, detail });
    }

    fn artifact(&mut self, file: &str, contents: &str) -> Result<(), Error> {
        if let Some(dir) = self.out_dir {
            std::fs::create_dir_all(dir)?;
            let path = dir.join(file);
            std::fs::write(&path, contents)?;
            self.artifacts.push(path);
        }
        Ok(())
    }
}

pub fn run_named_experiment(
    name: &str,
    overrides: &Overrides,
    seed: u64,
    out_dir: Option<&Path>,
) -> Result<ExperimentReport, Error> {
    let mut ctx = Ctx { checks: Vec::new(), artifacts: Vec::new(), out_dir };
    match name {
        "ex36" => ex36(&mut ctx, overrides, seed)?,
        "ex38" => ex38(&mut ctx, overrides)?,
        "ex43" => ex43(&mut ctx, overrides, seed)?,
        "thm51" => thm51(&mut ctx, overrides, seed)?,
        "thm54" => thm54(&mut ctx, overrides, seed)?,
        "ou_closed_form" => ou_closed_form(&mut ctx, overrides, seed)?,
        other => {
            return Err(Error::InvalidModel(format!(
                "unknown experiment `{other}`; known: {EXPERIMENT_NAMES:?}"
            )))
        }
    }
    Ok(ExperimentReport { name: name.to_string(), checks: ctx.checks, artifacts: ctx.artifacts })
}

/// Equally spaced checkpoints snapped to the simulation grid.
fn grid_checkpoints(t_max: f64, dt: f64, k: usize) -> Vec<f64> {
    (1..=k)
        .map(|j| (t_max * j as f64 / k as f64 / dt).round() * dt)
        .collect()
}

fn pure_delay() -> SignedMeasure {
    SignedMeasure::atom(1.0, -1.0, -1.0).expect("pure delay measure")
}

fn roots_csv(roots: &[Complex64]) -> String {
    let mut out = String::from("re,im\n");
    for r in roots {
        let _ = writeln!(out, "{},{}", fmt_g17(r.re), fmt_g17(r.im));
    }
    out
}

fn curve_csv(rows: &[(String, f64, f64)]) -> String {
    let mut out = String::from("curve,t,value\n");
    for (curve, t, v) in rows {
        let _ = writeln!(out, "{curve},{},{}", fmt_g17(*t), fmt_g17(*v));
    }
    out
}

/// Rightmost-root location and decay-rate bridge for the pure-delay drift,
/// plus the coupled stationarity verdicts for its small multiplicative
/// perturbation.
fn ex36(ctx: &mut Ctx, ov: &Overrides, seed: u64) -> Result<(), Error> {
    let mu = pure_delay();
    let report = rightmost_roots(&CharSpec::retarded(mu.clone()), 4)?;
    let target = Complex64::new(-0.3181, 1.3372);
    let hit = report
        .roots
        .iter()
        .any(|r| (r.re - target.re).abs() < 1e-3 && (r.im.abs() - target.im).abs() < 1e-3);
    ctx.check(
        "rightmost_root",
        hit,
        format!("looked for {target} among {:?}", report.roots),
    );
    ctx.check(
        "certified_negative",
        report.certified_negative,
        format!("v0 estimate {}", report.v0_estimate),
    );
    ctx.artifact("ex36_roots.csv", &roots_csv(&report.roots))?;

    let r = fundamental_retarded(&mu, 40.0, 1e-3)?;
    let fit = fit_decay(&r)?;
    ctx.check(
        "decay_rate_matches_v0",
        (fit.gamma - report.v0_estimate).abs() < 0.05,
        format!("fitted gamma {} vs v0 {}", fit.gamma, report.v0_estimate),
    );

    // Small delayed multiplicative noise around the same drift.
    let model = ModelSpec {
        kind: ModelKind::RetardedDiffusion,
        mu,
        rho: None,
        sigma: Some(DiffusionFunctional::AffineEndpoint { base: 0.0, slope: 0.1, lag: 1.0 }),
        noise: NoiseSpec::Brownian,
    };
    let replicas = ov.replicas.unwrap_or(4000);
    let t_max = ov.t_max.unwrap_or(60.0);
    let dt = 0.01;
    let n = 100;
    let xi = Segment::constant(1.0, n, 1.0);
    let eta = Segment::constant(1.0, n, -1.0);
    let contraction = coupling_contraction(&model, &xi, &eta, t_max, dt, replicas, seed)?;
    ctx.check(
        "contraction_rate",
        contraction.fitted_rate < -0.1,
        format!("fitted msd rate {}", contraction.fitted_rate),
    );
    let mut rows = Vec::new();
    for (i, (&t, &v)) in contraction.times.iter().zip(&contraction.msd).enumerate() {
        if i % 10 == 0 {
            rows.push(("msd".to_string(), t, v));
        }
    }
    ctx.artifact("ex36_contraction.csv", &curve_csv(&rows))?;

    let checkpoints = grid_checkpoints(t_max, dt, 6);
    let conv =
        stationarity_convergence_test(&model, &xi, &eta, &checkpoints, dt, replicas, seed)?;
    ctx.check(
        "cross_initial_w1",
        *conv.cross_distance.last().unwrap() < 3.0 * conv.floor,
        format!(
            "W1 at T = {} vs floor {}",
            conv.cross_distance.last().unwrap(),
            conv.floor
        ),
    );
    let mut rows = Vec::new();
    for (k, &t) in conv.checkpoints.iter().enumerate() {
        if k > 0 {
            rows.push(("self_w1".to_string(), t, conv.self_distance[k - 1]));
        }
        rows.push(("cross_w1".to_string(), t, conv.cross_distance[k]));
        rows.push(("msd".to_string(), t, conv.msd[k]));
    }
    ctx.artifact("ex36_convergence.csv", &curve_csv(&rows))?;

    let moments = segment_moment_bound(&model, &xi, t_max, dt, replicas, seed, 2)?;
    ctx.check(
        "second_moment_bounded",
        moments.verdict == Verdict::Bounded,
        format!("running max {}", moments.running_max.last().unwrap()),
    );
    Ok(())
}

/// Two-atom drift `a delta_0 + b delta_{-1}`: the closed-form interval
/// check against the computed rightmost root, on a grid or at an
/// overridden single point.
fn ex38(ctx: &mut Ctx, ov: &Overrides) -> Result<(), Error> {
    let points: Vec<(f64, f64)> = match (ov.a, ov.b) {
        (Some(a), Some(b)) => vec![(a, b)],
        _ => {
            let mut pts = Vec::new();
            for i in 0..7 {
                for j in 0..7 {
                    let a = -3.0 + 2.5 * i as f64 / 6.0;
                    let b = -3.0 + 6.0 * j as f64 / 6.0;
                    pts.push((a, b));
                }
            }
            pts
        }
    };
    let results: Vec<(f64, f64, bool, bool, f64)> = points
        .par_iter()
        .map(|&(a, b)| -> Result<(f64, f64, bool, bool, f64), Error> {
            // Points within 0.1 of the interval's own boundary b = a or
            // b = -a are skipped (root sign is numerically ambiguous
            // there); they are reported but never counted as disagreeing.
            let boundary = (b - a).abs() < 0.1 || (b + a).abs() < 0.1;
            let mu = SignedMeasure::new(1.0, vec![(0.0, a), (-1.0, b)], vec![])?;
            let report = rightmost_roots(&CharSpec::retarded(mu), 2)?;
            Ok((a, b, boundary, stability_interval_check(a, b), report.v0_estimate))
        })
        .collect::<Result<Vec<_>, Error>>()?;
    let mut out = String::from("a,b,boundary,interval_check,v0,agree\n");
    let mut disagreements = Vec::new();
    for &(a, b, boundary, interval, v0) in &results {
        let agree = interval == (v0 < 0.0);
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            fmt_g17(a),
            fmt_g17(b),
            boundary,
            interval,
            fmt_g17(v0),
            agree
        );
        if !agree && !boundary {
            disagreements.push((a, b, v0));
        }
    }
    ctx.artifact("ex38_grid.csv", &out)?;
    ctx.check(
        "interval_check_agrees_with_root_finder",
        disagreements.is_empty(),
        if disagreements.is_empty() {
            format!("{} points agree", results.len())
        } else {
            format!("disagreements at {disagreements:?}")
        },
    );
    Ok(())
}

/// Neutral example: characteristic root, root chain near the essential
/// abscissa, and the stationarity verdicts of its stochastic version.
fn ex43(ctx: &mut Ctx, ov: &Overrides, seed: u64) -> Result<(), Error> {
    let mu = pure_delay();
    let rho = SignedMeasure::atom(1.0, -1.0, -1.0 / 3.0)?;
    let spec = CharSpec::neutral(rho.clone(), mu.clone())?;
    let principal_root = Complex64::new(-2.313474269, 0.0);
    let residual = spec.eval(principal_root).norm();
    ctx.check(
        "principal_root_residual",
        residual < 1e-6,
        format!("|Delta0(-2.313474269)| = {residual:.3e}"),
    );

    let report = rightmost_roots(&spec, 16)?;
    let chain = report
        .roots
        .iter()
        .filter(|r| (-1.2..-0.9).contains(&r.re))
        .count();
    ctx.check("root_chain", chain >= 3, format!("{chain} roots with Re in (-1.2, -0.9)"));
    ctx.check(
        "v0_negative",
        report.v0_estimate < 0.0,
        format!("v0 estimate {}", report.v0_estimate),
    );
    ctx.artifact("ex43_roots.csv", &roots_csv(&report.roots))?;

    let kappa = rho.total_variation();
    ctx.check("kappa_below_half", kappa < 0.5, format!("Var(rho) = {kappa}"));

    let a = ov.a.unwrap_or(0.05);
    let model = ModelSpec {
        kind: ModelKind::NeutralDiffusion,
        mu,
        rho: Some(rho),
        sigma: Some(DiffusionFunctional::AffineIntegral { coeff: a }),
        noise: NoiseSpec::Brownian,
    };
    let replicas = ov.replicas.unwrap_or(1000);
    let t_max = ov.t_max.unwrap_or(50.0);
    let dt = 0.01;
    let xi = Segment::constant(1.0, 100, 1.0);
    let eta = Segment::constant(1.0, 100, -1.0);
    let contraction = coupling_contraction(&model, &xi, &eta, t_max, dt, replicas, seed)?;
    ctx.check(
        "contraction_rate",
        contraction.fitted_rate < -0.1,
        format!("fitted msd rate {}", contraction.fitted_rate),
    );
    let checkpoints = grid_checkpoints(t_max, dt, 5);
    let conv =
        stationarity_convergence_test(&model, &xi, &eta, &checkpoints, dt, replicas, seed)?;
    ctx.check(
        "cross_initial_w1",
        *conv.cross_distance.last().unwrap() < 3.0 * conv.floor,
        format!(
            "W1 at T = {} vs floor {}",
            conv.cross_distance.last().unwrap(),
            conv.floor
        ),
    );
    let moments = segment_moment_bound(&model, &xi, t_max, dt, replicas, seed, 2)?;
    ctx.check(
        "second_moment_bounded",
        moments.verdict == Verdict::Bounded,
        format!("running max {}", moments.running_max.last().unwrap()),
    );
    let mut rows = Vec::new();
    for (k, &t) in conv.checkpoints.iter().enumerate() {
        rows.push(("cross_w1".to_string(), t, conv.cross_distance[k]));
        rows.push(("msd".to_string(), t, conv.msd[k]));
    }
    ctx.artifact("ex43_convergence.csv", &curve_csv(&rows))?;
    Ok(())
}

/// Levy OU with compound-Poisson jumps: bounded first moments and the
/// first-moment balance; the alpha-stable variant keeps E|X| bounded
/// while the sample second moment misbehaves.
fn thm51(ctx: &mut Ctx, ov: &Overrides, seed: u64) -> Result<(), Error> {
    let mu = pure_delay();
    let model = ModelSpec {
        kind: ModelKind::LevyOu,
        mu: mu.clone(),
        rho: None,
        sigma: None,
        noise: NoiseSpec::CompoundPoisson { rate: 1.0, jumps: JumpLaw::Exponential { mean: 1.0 } },
    };
    let replicas = ov.replicas.unwrap_or(2000);
    let t_max = ov.t_max.unwrap_or(200.0);
    let dt = 0.01;
    let xi = Segment::constant(1.0, 100, 0.0);
    let moments = segment_moment_bound(&model, &xi, t_max, dt, replicas, seed, 1)?;
    ctx.check(
        "first_moment_bounded",
        moments.verdict == Verdict::Bounded,
        format!("running max {}", moments.running_max.last().unwrap()),
    );
    let mut rows = Vec::new();
    for (i, (&t, &v)) in moments.times.iter().zip(&moments.moments).enumerate() {
        if i % 100 == 0 {
            rows.push(("mean_sup".to_string(), t, v));
        }
    }
    ctx.artifact("thm51_moments.csv", &curve_csv(&rows))?;

    // Long-run mean: time average over the second half, averaged over
    // replicas; stationary balance gives exactly 1.
    let steps = (t_max / dt).ceil() as usize;
    let long_run: Vec<f64> = (0..replicas)
        .into_par_iter()
        .map(|rep| -> Result<f64, Error> {
            let inc = generate_increments(&model.noise, dt, steps, seed, rep)?;
            let p = run_with_increments(&model, &xi, t_max, dt, &inc)?;
            let half = p.values.len() / 2;
            Ok(p.values[half..].iter().sum::<f64>() / (p.values.len() - half) as f64)
        })
        .collect::<Result<Vec<_>, Error>>()?;
    let mean = long_run.iter().sum::<f64>() / long_run.len() as f64;
    ctx.check("stationary_mean", (mean - 1.0).abs() < 0.05, format!("long-run mean {mean}"));

    // Alpha-stable driving noise: first moment still stabilizes, while
    // the terminal sample second moment is dominated by single extreme
    // replicas (infinite variance). The mean-curve estimator trims the
    // top 5% of replicas per time point: the raw sample mean inherits
    // the same extreme-replica domination the second-moment check
    // demonstrates, so an untrimmed verdict flaps at any feasible
    // replica count.
    let stable = ModelSpec {
        noise: NoiseSpec::AlphaStable { alpha: 1.5, scale: 1.0 },
        ..model
    };
    let t_stable = 100.0f64.min(t_max);
    let stable_steps = (t_stable / dt).ceil() as usize;
    let thin = 25usize;
    let curves: Vec<Vec<f64>> = (0..replicas)
        .into_par_iter()
        .map(|rep| -> Result<Vec<f64>, Error> {
            let inc = generate_increments(&stable.noise, dt, stable_steps, seed + 1, rep)?;
            let p = run_with_increments(&stable, &xi, t_stable, dt, &inc)?;
            let sups = crate::stationarity::sliding_sup(&p.values, p.n_delay());
            Ok(sups.into_iter().step_by(thin).collect())
        })
        .collect::<Result<Vec<_>, Error>>()?;
    let n_times = curves[0].len();
    let cut = (replicas as usize * 5 / 100).max(1);
    let mut trimmed = Vec::with_capacity(n_times);
    for j in 0..n_times {
        let mut col: Vec<f64> = curves.iter().map(|c| c[j]).collect();
        col.sort_by(|x, y| x.partial_cmp(y).unwrap());
        let kept = &col[..col.len() - cut];
        trimmed.push(kept.iter().sum::<f64>() / kept.len() as f64);
    }
    let stable_times: Vec<f64> = (0..n_times).map(|j| (j * thin) as f64 * dt).collect();
    let mut running = Vec::with_capacity(n_times);
    let mut acc = 0.0f64;
    for &v in &trimmed {
        acc = acc.max(v);
        running.push(acc);
    }
    let stable_verdict = crate::stationarity::boundedness_verdict(&stable_times, &running);
    ctx.check(
        "stable_first_moment_bounded",
        stable_verdict == Verdict::Bounded,
        format!("trimmed-mean running max {}", running.last().unwrap()),
    );
    let terminals: Vec<f64> = (0..replicas)
        .into_par_iter()
        .map(|rep| -> Result<f64, Error> {
            let inc = generate_increments(&stable.noise, dt, stable_steps, seed + 1, rep)?;
            let p = run_with_increments(&stable, &xi, t_stable, dt, &inc)?;
            Ok(*p.values.last().unwrap())
        })
        .collect::<Result<Vec<_>, Error>>()?;
    let m2 = |xs: &[f64]| xs.iter().map(|x| x * x).sum::<f64>() / xs.len() as f64;
    let m2_half = m2(&terminals[..terminals.len() / 2]);
    let m2_full = m2(&terminals);
    let top_share = terminals.iter().map(|x| x * x).fold(0.0f64, f64::max)
        / terminals.iter().map(|x| x * x).sum::<f64>();
    ctx.check(
        "stable_second_moment_diverges",
        top_share > 0.05 || (m2_full / m2_half).max(m2_half / m2_full) > 1.5,
        format!("m2(half) = {m2_half}, m2(full) = {m2_full}, top share {top_share:.3}"),
    );
    Ok(())
}

/// Multiplicative jump-diffusion with square-integrable noise: bounded
/// second moments and forgetting of the initial condition.
fn thm54(ctx: &mut Ctx, ov: &Overrides, seed: u64) -> Result<(), Error> {
    let model = ModelSpec {
        kind: ModelKind::LevyMultiplicative,
        mu: pure_delay(),
        rho: None,
        sigma: Some(DiffusionFunctional::AffineEndpoint { base: 0.0, slope: 0.1, lag: 1.0 }),
        noise: NoiseSpec::BrownianPlusCompoundPoisson {
            drift: 0.0,
            rate: 1.0,
            jumps: JumpLaw::Normal { sd: 1.0 },
        },
    };
    let replicas = ov.replicas.unwrap_or(2000);
    let t_max = ov.t_max.unwrap_or(60.0);
    let dt = 0.01;
    let xi = Segment::constant(1.0, 100, 1.0);
    let eta = Segment::constant(1.0, 100, -1.0);
    let moments = segment_moment_bound(&model, &xi, t_max, dt, replicas, seed, 2)?;
    ctx.check(
        "second_moment_bounded",
        moments.verdict == Verdict::Bounded,
        format!("running max {}", moments.running_max.last().unwrap()),
    );
    let checkpoints = grid_checkpoints(t_max, dt, 6);
    let conv =
        stationarity_convergence_test(&model, &xi, &eta, &checkpoints, dt, replicas, seed)?;
    ctx.check(
        "cross_initial_w1_decays",
        conv.cross_verdict == Trend::Converging,
        format!("cross W1 curve {:?}", conv.cross_distance),
    );
    let mut rows = Vec::new();
    for (k, &t) in conv.checkpoints.iter().enumerate() {
        rows.push(("cross_w1".to_string(), t, conv.cross_distance[k]));
    }
    ctx.artifact("thm54_convergence.csv", &curve_csv(&rows))?;
    Ok(())
}

/// Abramowitz-Stegun 7.1.26 rational approximation (error < 1.5e-7).
fn erf(x: f64) -> f64 {
    let sign = x.signum();
    let x = x.abs();
    let t = 1.0 / (1.0 + 0.3275911 * x);
    let y = 1.0
        - (((((1.061405429 * t - 1.453152027) * t) + 1.421413741) * t - 0.284496736) * t
            + 0.254829592)
            * t
            * (-x * x).exp();
    sign * y
}

fn normal_cdf(x: f64, sd: f64) -> f64 {
    0.5 * (1.0 + erf(x / (sd * std::f64::consts::SQRT_2)))
}

/// No-delay linear model with additive noise: terminal law against the
/// exact Gaussian stationary distribution.
fn ou_closed_form(ctx: &mut Ctx, ov: &Overrides, seed: u64) -> Result<(), Error> {
    let model = ModelSpec {
        kind: ModelKind::RetardedDiffusion,
        mu: SignedMeasure::atom(1.0, 0.0, -1.0)?,
        rho: None,
        sigma: Some(DiffusionFunctional::Constant { value: 1.0 }),
        noise: NoiseSpec::Brownian,
    };
    let replicas = ov.replicas.unwrap_or(10_000);
    let t_max = ov.t_max.unwrap_or(50.0);
    let dt = 0.01;
    let steps = (t_max / dt).ceil() as usize;
    let xi = Segment::constant(1.0, 100, 0.0);
    let mut terminal: Vec<f64> = (0..replicas)
        .into_par_iter()
        .map(|rep| -> Result<f64, Error> {
            let inc = generate_increments(&model.noise, dt, steps, seed, rep)?;
            let p = run_with_increments(&model, &xi, t_max, dt, &inc)?;
            Ok(*p.values.last().unwrap())
        })
        .collect::<Result<Vec<_>, Error>>()?;
    let mean = terminal.iter().sum::<f64>() / terminal.len() as f64;
    let var = terminal.iter().map(|x| (x - mean).powi(2)).sum::<f64>()
        / (terminal.len() - 1) as f64;
    ctx.check(
        "terminal_variance",
        (var - 0.5).abs() < 0.025,
        format!("sample variance {var} (want 0.5 within 5%)"),
    );
    terminal.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = terminal.len() as f64;
    let sd = 0.5f64.sqrt();
    let ks = terminal
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = normal_cdf(x, sd);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0f64, f64::max);
    let critical = 1.63 / n.sqrt();
    ctx.check(
        "ks_normality",
        ks < critical,
        format!("KS statistic {ks:.5} vs 1% critical value {critical:.5}"),
    );
    let mut out = String::from("replica,x\n");
    for (i, x) in terminal.iter().enumerate() {
        if i % 10 == 0 {
            let _ = writeln!(out, "{i},{}", fmt_g17(*x));
        }
    }
    ctx.artifact("ou_terminal.csv", &out)?;
    Ok(())
}
