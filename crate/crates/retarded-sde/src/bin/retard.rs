//! Command-line front end: spectral diagnostics, fundamental solutions,
//! variation-of-constants checks, path simulation, stationarity
//! diagnostics, and the named reproducibility experiments.

use clap::{Parser, Subcommand};
use retarded_sde::config::{parse_config, RunConfig};
use retarded_sde::error::Error;
use retarded_sde::experiments::{fmt_g17, run_named_experiment, Overrides, EXPERIMENT_NAMES};
use retarded_sde::fundsol::{fit_decay, fundamental_neutral, fundamental_retarded};
use retarded_sde::measures::Segment;
use retarded_sde::simulate::{
    generate_increments, run_with_increments, sigma_along_path, simulate_path, ModelKind,
};
use retarded_sde::spectrum::{rightmost_roots, CharSpec};
use retarded_sde::stationarity::{
    coupling_contraction, segment_moment_bound, stationarity_convergence_test, Trend, Verdict,
};
use retarded_sde::voc::{stochastic_convolution, voc_deterministic, VocContext};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "retard",
    about = "Stationary-distribution diagnostics for stochastic delay equations",
    version
)]
struct Cli {
    /// Run configuration file (line-oriented `section.key = value`).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `run.seed` from the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Write CSV/JSON artifacts here instead of stdout.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Nonzero exit code when any diagnostic verdict fails.
    #[arg(long, global = true)]
    strict: bool,
    /// Emit reports as JSON instead of tables.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Locate the rightmost characteristic roots of the configured model.
    Roots {
        /// How many roots to report.
        #[arg(long, default_value_t = 8)]
        count: usize,
    },
    /// Compute the fundamental solution and its exponential-decay fit.
    Fundsol {
        /// Horizon override (defaults to `run.T`).
        #[arg(long)]
        t_max: Option<f64>,
    },
    /// Deterministic variation-of-constants solve; `--check` also
    /// verifies the stochastic representation against an Euler path on
    /// shared noise.
    Voc {
        #[arg(long)]
        check: bool,
    },
    /// Simulate replica paths of the configured model.
    Simulate {
        /// Replica count override.
        #[arg(long)]
        replicas: Option<u64>,
        /// Emit every k-th grid point.
        #[arg(long, default_value_t = 1)]
        thin: usize,
        /// Output CSV path (overrides --out-dir naming).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Coupling, moment-bound, and law-convergence diagnostics.
    Stationarity,
    /// Run one of the named end-to-end experiments.
    Experiment {
        /// One of: ex36, ex38, ex43, thm51, thm54, ou_closed_form.
        name: String,
        /// `key=value` overrides (a, b, replicas, t_max).
        overrides: Vec<String>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(code) => code,
        Err(Error::Config(msgs)) => {
            eprintln!("configuration errors:");
            for m in &msgs {
                eprintln!("  {m}");
            }
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cli: &Cli) -> Result<ExitCode, Error> {
    match &cli.cmd {
        Cmd::Roots { count } => cmd_roots(cli, *count),
        Cmd::Fundsol { t_max } => cmd_fundsol(cli, *t_max),
        Cmd::Voc { check } => cmd_voc(cli, *check),
        Cmd::Simulate { replicas, thin, out } => cmd_simulate(cli, *replicas, *thin, out.as_deref()),
        Cmd::Stationarity => cmd_stationarity(cli),
        Cmd::Experiment { name, overrides } => cmd_experiment(cli, name, overrides),
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig, Error> {
    let path = cli.config.as_ref().ok_or_else(|| {
        Error::InvalidModel("this subcommand needs --config <file>".into())
    })?;
    let text = std::fs::read_to_string(path)?;
    let mut cfg = parse_config(&text)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn emit(cli: &Cli, file: &str, contents: &str) -> Result<(), Error> {
    match &cli.out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            std::fs::write(dir.join(file), contents)?;
            Ok(())
        }
        None => {
            print!("{contents}");
            Ok(())
        }
    }
}

fn char_spec(cfg: &RunConfig) -> Result<CharSpec, Error> {
    match (&cfg.model.kind, &cfg.model.rho) {
        (ModelKind::NeutralDiffusion, Some(rho)) => {
            CharSpec::neutral(rho.clone(), cfg.model.mu.clone())
        }
        _ => Ok(CharSpec::retarded(cfg.model.mu.clone())),
    }
}

fn cmd_roots(cli: &Cli, count: usize) -> Result<ExitCode, Error> {
    let cfg = load_config(cli)?;
    let report = rightmost_roots(&char_spec(&cfg)?, count.max(1))?;
    if cli.json {
        println!("{}", serde_json::to_string_pretty(&report.to_json()).expect("serialize"));
    } else {
        println!("{:>14} {:>14}", "re", "im");
        for r in &report.roots {
            println!("{:>14.6} {:>14.6}", r.re, r.im);
        }
        println!("v0 estimate      {:.6}", report.v0_estimate);
        if let Some(ess) = report.essential_abscissa {
            println!("essential absc.  {ess:.6}");
        }
        println!("certified negative: {}", report.certified_negative);
    }
    Ok(if report.certified_negative { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn build_fundsol(
    cfg: &RunConfig,
    t_max: f64,
) -> Result<retarded_sde::fundsol::FundamentalSolution, Error> {
    match (&cfg.model.kind, &cfg.model.rho) {
        (ModelKind::NeutralDiffusion, Some(rho)) => {
            fundamental_neutral(rho, &cfg.model.mu, t_max, cfg.dt)
        }
        _ => fundamental_retarded(&cfg.model.mu, t_max, cfg.dt),
    }
}

fn cmd_fundsol(cli: &Cli, t_max: Option<f64>) -> Result<ExitCode, Error> {
    let cfg = load_config(cli)?;
    let t_max = t_max.unwrap_or(cfg.t_max);
    let r = build_fundsol(&cfg, t_max)?;
    let mut csv = String::from("t,r\n");
    for (t, v) in r.times().zip(r.values()) {
        let _ = writeln!(csv, "{},{}", fmt_g17(t), fmt_g17(*v));
    }
    emit(cli, "fundsol.csv", &csv)?;
    let fit = fit_decay(&r)?;
    let fit_json = serde_json::json!({ "c": fit.c, "gamma": fit.gamma });
    let fit_text = format!("{}\n", serde_json::to_string_pretty(&fit_json).expect("serialize"));
    if cli.out_dir.is_some() {
        emit(cli, "fundsol_fit.json", &fit_text)?;
    } else {
        print!("{fit_text}");
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_voc(cli: &Cli, check: bool) -> Result<ExitCode, Error> {
    let cfg = load_config(cli)?;
    let n = (cfg.model.mu.tau() / cfg.dt).round() as usize;
    let xi = Segment::constant(cfg.model.mu.tau(), n, cfg.xi_value);
    let r = build_fundsol(&cfg, cfg.t_max)?;
    let ctx = VocContext { r: &r, mu: &cfg.model.mu, rho: cfg.model.rho.as_ref(), xi: &xi };
    let steps = (cfg.t_max / cfg.dt).round() as usize;
    let mut csv = String::from("t,x\n");
    for i in 0..=steps {
        let t = i as f64 * cfg.dt;
        let _ = writeln!(csv, "{},{}", fmt_g17(t), fmt_g17(voc_deterministic(&ctx, t)?));
    }
    emit(cli, "voc.csv", &csv)?;
    if !check {
        return Ok(ExitCode::SUCCESS);
    }

    // Identity check: one Euler path and its variation-of-constants
    // reconstruction on the same noise must agree pathwise.
    let sigma = cfg.model.sigma.as_ref().ok_or_else(|| {
        Error::InvalidModel("the identity check needs a diffusion functional".into())
    })?;
    let inc = generate_increments(&cfg.model.noise, cfg.dt, steps, cfg.seed, 0)?;
    let path = run_with_increments(&cfg.model, &xi, cfg.t_max, cfg.dt, &inc)?;
    let integrand = sigma_along_path(sigma, &path);
    let mut sq = 0.0;
    let mut count = 0usize;
    for i in (0..=steps).step_by((steps / 500).max(1)) {
        let t = i as f64 * cfg.dt;
        let recon =
            voc_deterministic(&ctx, t)? + stochastic_convolution(&r, &integrand, &inc, t)?;
        let gap = recon - path.at_time(t)?;
        sq += gap * gap;
        count += 1;
    }
    let rms = (sq / count as f64).sqrt();
    let pass = rms < 0.02;
    if cli.json {
        println!(
            "{}",
            serde_json::json!({ "rms_gap": rms, "tolerance": 0.02, "pass": pass })
        );
    } else {
        println!("identity RMS gap {rms:.6} (tolerance 0.02): {}", if pass { "pass" } else { "FAIL" });
    }
    Ok(if pass || !cli.strict { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn cmd_simulate(
    cli: &Cli,
    replicas: Option<u64>,
    thin: usize,
    out: Option<&Path>,
) -> Result<ExitCode, Error> {
    let cfg = load_config(cli)?;
    let replicas = replicas.unwrap_or(cfg.replicas);
    let thin = thin.max(1);
    let tau = cfg.model.mu.tau();
    let n = (tau / cfg.dt).round() as usize;
    let xi = Segment::constant(tau, n, cfg.xi_value);
    let mut csv = String::from("replica,t,x\n");
    for rep in 0..replicas {
        let path = simulate_path(&cfg.model, &xi, cfg.t_max, cfg.dt, cfg.seed, rep)?;
        for (i, v) in path.values.iter().enumerate().skip(n).step_by(thin) {
            let t = (i - n) as f64 * cfg.dt;
            let _ = writeln!(csv, "{rep},{},{}", fmt_g17(t), fmt_g17(*v));
        }
    }
    match out {
        Some(path) => {
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent)?;
            }
            std::fs::write(path, csv)?;
        }
        None => emit(cli, "paths.csv", &csv)?,
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_stationarity(cli: &Cli) -> Result<ExitCode, Error> {
    let cfg = load_config(cli)?;
    let tau = cfg.model.mu.tau();
    let n = (tau / cfg.dt).round() as usize;
    let xi = Segment::constant(tau, n, cfg.xi_value);
    let eta = Segment::constant(tau, n, cfg.eta_value);

    let contraction =
        coupling_contraction(&cfg.model, &xi, &eta, cfg.t_max, cfg.dt, cfg.replicas, cfg.seed)?;
    let conv = stationarity_convergence_test(
        &cfg.model,
        &xi,
        &eta,
        &cfg.checkpoints,
        cfg.dt,
        cfg.replicas,
        cfg.seed,
    )?;
    let p = if cfg.model.noise.second_moment_finite() { 2 } else { 1 };
    let moments =
        segment_moment_bound(&cfg.model, &xi, cfg.t_max, cfg.dt, cfg.replicas, cfg.seed, p)?;

    let mut csv = String::from("curve,t,value\n");
    for (i, (&t, &v)) in contraction.times.iter().zip(&contraction.msd).enumerate() {
        if i % 10 == 0 {
            let _ = writeln!(csv, "coupling_msd,{},{}", fmt_g17(t), fmt_g17(v));
        }
    }
    for (i, (&t, &v)) in moments.times.iter().zip(&moments.moments).enumerate() {
        if i % 10 == 0 {
            let _ = writeln!(csv, "moment_p{p},{},{}", fmt_g17(t), fmt_g17(v));
        }
    }
    for (k, &t) in conv.checkpoints.iter().enumerate() {
        if k > 0 {
            let _ = writeln!(csv, "self_w1,{},{}", fmt_g17(t), fmt_g17(conv.self_distance[k - 1]));
        }
        let _ = writeln!(csv, "cross_w1,{},{}", fmt_g17(t), fmt_g17(conv.cross_distance[k]));
    }
    emit(cli, "stationarity.csv", &csv)?;

    let ok = moments.verdict == Verdict::Bounded
        && conv.cross_verdict == Trend::Converging
        && contraction.fitted_rate < 0.0;
    let report = serde_json::json!({
        "coupling_rate": contraction.fitted_rate,
        "coupling_rate_window": contraction.fitted_at,
        "moment_order": p,
        "moment_verdict": format!("{:?}", moments.verdict),
        "self_trend": format!("{:?}", conv.self_verdict),
        "cross_trend": format!("{:?}", conv.cross_verdict),
        "msd_trend": format!("{:?}", conv.msd_verdict),
        "statistical_floor": conv.floor,
        "all_pass": ok,
    });
    let text = format!("{}\n", serde_json::to_string_pretty(&report).expect("serialize"));
    if cli.out_dir.is_some() {
        emit(cli, "stationarity.json", &text)?;
    }
    print!("{text}");
    Ok(if ok || !cli.strict { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn parse_overrides(pairs: &[String]) -> Result<Overrides, Error> {
    let mut ov = Overrides::default();
    for pair in pairs {
        let (key, value) = pair.split_once('=').ok_or_else(|| {
            Error::InvalidModel(format!("override must be `key=value`, got `{pair}`"))
        })?;
        let bad = |what: &str| Error::InvalidModel(format!("bad {what} override `{value}`"));
        match key {
            "a" => ov.a = Some(value.parse().map_err(|_| bad("a"))?),
            "b" => ov.b = Some(value.parse().map_err(|_| bad("b"))?),
            "replicas" => ov.replicas = Some(value.parse().map_err(|_| bad("replicas"))?),
            "t_max" | "T" => ov.t_max = Some(value.parse().map_err(|_| bad("t_max"))?),
            other => {
                return Err(Error::InvalidModel(format!(
                    "unknown override `{other}` (known: a, b, replicas, t_max)"
                )))
            }
        }
    }
    Ok(ov)
}

fn cmd_experiment(cli: &Cli, name: &str, pairs: &[String]) -> Result<ExitCode, Error> {
    if !EXPERIMENT_NAMES.contains(&name) {
        return Err(Error::InvalidModel(format!(
            "unknown experiment `{name}`; known: {}",
            EXPERIMENT_NAMES.join(", ")
        )));
    }
    let ov = parse_overrides(pairs)?;
    let seed = cli.seed.unwrap_or(1);
    let report = run_named_experiment(name, &ov, seed, cli.out_dir.as_deref())?;
    if cli.json {
        println!("{}", serde_json::to_string_pretty(&report).expect("serialize"));
    } else {
        for c in &report.checks {
            println!("[{}] {}: {}", if c.passed { "pass" } else { "FAIL" }, c.name, c.detail);
        }
        for a in &report.artifacts {
            println!("wrote {}", a.display());
        }
    }
    if report.passed() {
        Ok(ExitCode::SUCCESS)
    } else {
        // Machine-readable failure list on stderr regardless of --json.
        let failures: Vec<&str> =
            report.checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
        eprintln!("{}", serde_json::json!({ "experiment": name, "failed_checks": failures }));
        Ok(ExitCode::FAILURE)
    }
}
