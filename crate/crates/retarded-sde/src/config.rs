//! Line-oriented run configuration: `section.key = value` with `#`
//! comments. All validation problems are reported together, each with its
//! line number.
//!
//! ```text
//! model.kind = retarded_diffusion
//! model.tau = 1.0
//! model.mu.atom = -1.0 @ -1.0        # weight @ theta
//! model.mu.density = 0.5 on [-1,0]
//! model.sigma.form = affine_endpoint
//! model.sigma.slope = 0.1
//! noise.kind = brownian
//! run.T = 60
//! run.dt = 0.01
//! ```

use crate::error::Error;
use crate::measures::{DensityPiece, SignedMeasure};
use crate::simulate::{DiffusionFunctional, JumpLaw, ModelKind, ModelSpec, NoiseSpec};
use std::collections::BTreeMap;

/// Fully validated run description.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub model: ModelSpec,
    pub t_max: f64,
    pub dt: f64,
    pub replicas: u64,
    pub seed: u64,
    pub checkpoints: Vec<f64>,
    pub offsets: Vec<f64>,
    /// Constant initial segments for the coupled runs.
    pub xi_value: f64,
    pub eta_value: f64,
    pub out_paths: Option<String>,
}

#[derive(Default)]
struct RawMeasure {
    atoms: Vec<(f64, f64)>,
    density: Vec<DensityPiece>,
    mentioned: bool,
}

struct Line<'a> {
    no: usize,
    key: &'a str,
    value: &'a str,
}

pub fn parse_config(text: &str) -> Result<RunConfig, Error> {
    let mut errors: Vec<String> = Vec::new();
    let mut lines = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let no = i + 1;
        let stripped = match raw.find('#') {
            Some(p) => &raw[..p],
            None => raw,
        }
        .trim();
        if stripped.is_empty() {
            continue;
        }
        match stripped.split_once('=') {
            Some((k, v)) => lines.push(Line { no, key: k.trim(), value: v.trim() }),
            None => errors.push(format!("line {no}: expected `key = value`, got `{stripped}`")),
        }
    }

    let mut scalars: BTreeMap<&str, (usize, &str)> = BTreeMap::new();
    let mut mu = RawMeasure::default();
    let mut rho = RawMeasure::default();
    for line in &lines {
        match line.key {
            "model.mu.atom" | "model.rho.atom" => {
                let m = if line.key.contains("mu") { &mut mu } else { &mut rho };
                m.mentioned = true;
                match parse_atom(line.value) {
                    Ok(pair) => m.atoms.push(pair),
                    Err(e) => errors.push(format!("line {}: {e}", line.no)),
                }
            }
            "model.mu.density" | "model.rho.density" => {
                let m = if line.key.contains("mu") { &mut mu } else { &mut rho };
                m.mentioned = true;
                match parse_density(line.value) {
                    Ok(piece) => m.density.push(piece),
                    Err(e) => errors.push(format!("line {}: {e}", line.no)),
                }
            }
            _ => {
                if scalars.insert(line.key, (line.no, line.value)).is_some() {
                    errors.push(format!("line {}: duplicate key `{}`", line.no, line.key));
                }
            }
        }
    }

    const KNOWN: &[&str] = &[
        "model.kind",
        "model.tau",
        "model.sigma.form",
        "model.sigma.value",
        "model.sigma.base",
        "model.sigma.slope",
        "model.sigma.lag",
        "model.sigma.coeff",
        "model.sigma.bound",
        "noise.kind",
        "noise.rate",
        "noise.drift",
        "noise.alpha",
        "noise.scale",
        "noise.jump_law",
        "noise.mean",
        "noise.sd",
        "noise.x_min",
        "run.T",
        "run.dt",
        "run.replicas",
        "run.seed",
        "run.checkpoints",
        "run.offsets",
        "run.xi",
        "run.eta",
        "output.paths",
    ];
    for (key, (no, _)) in &scalars {
        if !KNOWN.contains(key) {
            errors.push(format!("line {no}: unknown key `{key}`"));
        }
    }

    let get = |key: &str| scalars.get(key).copied();
    let num = |key: &str, errors: &mut Vec<String>| -> Option<f64> {
        let (no, v) = get(key)?;
        match v.parse::<f64>() {
            Ok(x) if x.is_finite() => Some(x),
            _ => {
                errors.push(format!("line {no}: `{key}` is not a finite number: `{v}`"));
                None
            }
        }
    };

    let tau = num("model.tau", &mut errors).unwrap_or_else(|| {
        if !scalars.contains_key("model.tau") {
            errors.push("missing required key `model.tau`".into());
        }
        1.0
    });

    let kind = match get("model.kind") {
        Some((no, v)) => match v {
            "retarded_diffusion" => ModelKind::RetardedDiffusion,
            "neutral_diffusion" => ModelKind::NeutralDiffusion,
            "levy_ou" => ModelKind::LevyOu,
            "levy_multiplicative" => ModelKind::LevyMultiplicative,
            other => {
                errors.push(format!("line {no}: unknown model kind `{other}`"));
                ModelKind::RetardedDiffusion
            }
        },
        None => {
            errors.push("missing required key `model.kind`".into());
            ModelKind::RetardedDiffusion
        }
    };

    if !mu.mentioned {
        errors.push("model needs at least one `model.mu.atom` or `model.mu.density` line".into());
    }
    let build_measure = |raw: &RawMeasure, label: &str, errors: &mut Vec<String>| {
        match SignedMeasure::new(tau, raw.atoms.clone(), raw.density.clone()) {
            Ok(m) => m,
            Err(e) => {
                errors.push(format!("{label}: {e}"));
                SignedMeasure::zero(tau.max(f64::MIN_POSITIVE))
            }
        }
    };
    let mu_measure = build_measure(&mu, "model.mu", &mut errors);
    let rho_measure = if rho.mentioned || kind == ModelKind::NeutralDiffusion {
        Some(build_measure(&rho, "model.rho", &mut errors))
    } else {
        None
    };

    let sigma = match get("model.sigma.form") {
        Some((no, form)) => {
            let mut p = |key: &str, default: f64| num(key, &mut errors).unwrap_or(default);
            match form {
                "constant" => Some(DiffusionFunctional::Constant {
                    value: p("model.sigma.value", 0.0),
                }),
                "affine_endpoint" => Some(DiffusionFunctional::AffineEndpoint {
                    base: p("model.sigma.base", 0.0),
                    slope: p("model.sigma.slope", 0.0),
                    lag: p("model.sigma.lag", tau),
                }),
                "affine_integral" => Some(DiffusionFunctional::AffineIntegral {
                    coeff: p("model.sigma.coeff", 0.0),
                }),
                "bounded_saturating" => Some(DiffusionFunctional::BoundedSaturating {
                    bound: p("model.sigma.bound", 1.0),
                    lag: p("model.sigma.lag", tau),
                }),
                other => {
                    errors.push(format!("line {no}: unknown sigma form `{other}`"));
                    None
                }
            }
        }
        None => None,
    };

    let jump_law = |errors: &mut Vec<String>, scalars: &BTreeMap<&str, (usize, &str)>| {
        match scalars.get("noise.jump_law").copied() {
            Some((no, law)) => match law {
                "exponential" => JumpLaw::Exponential {
                    mean: parse_num_or(scalars, "noise.mean", 1.0, errors),
                },
                "normal" => JumpLaw::Normal {
                    sd: parse_num_or(scalars, "noise.sd", 1.0, errors),
                },
                "pareto" => JumpLaw::Pareto {
                    alpha: parse_num_or(scalars, "noise.alpha", 1.5, errors),
                    x_min: parse_num_or(scalars, "noise.x_min", 1.0, errors),
                },
                other => {
                    errors.push(format!("line {no}: unknown jump law `{other}`"));
                    JumpLaw::Exponential { mean: 1.0 }
                }
            },
            None => {
                errors.push("compound-Poisson noise needs `noise.jump_law`".into());
                JumpLaw::Exponential { mean: 1.0 }
            }
        }
    };
    let noise = match get("noise.kind") {
        Some((no, v)) => match v {
            "brownian" => NoiseSpec::Brownian,
            "compound_poisson" => NoiseSpec::CompoundPoisson {
                rate: num("noise.rate", &mut errors).unwrap_or(1.0),
                jumps: jump_law(&mut errors, &scalars),
            },
            "alpha_stable" => NoiseSpec::AlphaStable {
                alpha: num("noise.alpha", &mut errors).unwrap_or(1.5),
                scale: num("noise.scale", &mut errors).unwrap_or(1.0),
            },
            "brownian_plus_compound_poisson" => NoiseSpec::BrownianPlusCompoundPoisson {
                drift: num("noise.drift", &mut errors).unwrap_or(0.0),
                rate: num("noise.rate", &mut errors).unwrap_or(1.0),
                jumps: jump_law(&mut errors, &scalars),
            },
            other => {
                errors.push(format!("line {no}: unknown noise kind `{other}`"));
                NoiseSpec::Brownian
            }
        },
        None => NoiseSpec::Brownian,
    };

    let t_max = num("run.T", &mut errors).unwrap_or_else(|| {
        if !scalars.contains_key("run.T") {
            errors.push("missing required key `run.T`".into());
        }
        1.0
    });
    let dt = num("run.dt", &mut errors).unwrap_or_else(|| {
        if !scalars.contains_key("run.dt") {
            errors.push("missing required key `run.dt`".into());
        }
        0.01
    });
    if dt > 0.0 && tau > 0.0 {
        let cells = tau / dt;
        if (cells - cells.round()).abs() > 1e-9 * cells.max(1.0) {
            let dt_line = scalars.get("run.dt").map(|(no, _)| *no).unwrap_or(0);
            let tau_line = scalars.get("model.tau").map(|(no, _)| *no).unwrap_or(0);
            errors.push(format!(
                "run.dt (line {dt_line}) = {dt} must divide model.tau (line {tau_line}) = {tau}"
            ));
        }
    }

    let replicas = match get("run.replicas") {
        Some((no, v)) => v.parse::<u64>().unwrap_or_else(|_| {
            errors.push(format!("line {no}: `run.replicas` is not an integer: `{v}`"));
            1000
        }),
        None => 1000,
    };
    let seed = match get("run.seed") {
        Some((no, v)) => v.parse::<u64>().unwrap_or_else(|_| {
            errors.push(format!("line {no}: `run.seed` is not an integer: `{v}`"));
            0
        }),
        None => 0,
    };
    let parse_list = |key: &str, errors: &mut Vec<String>| -> Option<Vec<f64>> {
        let (no, v) = scalars.get(key).copied()?;
        let mut out = Vec::new();
        for part in v.split(',') {
            match part.trim().parse::<f64>() {
                Ok(x) => out.push(x),
                Err(_) => {
                    errors.push(format!("line {no}: bad number `{part}` in `{key}`"));
                    return None;
                }
            }
        }
        Some(out)
    };
    let checkpoints = parse_list("run.checkpoints", &mut errors)
        .unwrap_or_else(|| default_checkpoints(t_max));
    let offsets =
        parse_list("run.offsets", &mut errors).unwrap_or_else(|| vec![0.0, -tau / 2.0, -tau]);
    let xi_value = num("run.xi", &mut errors).unwrap_or(1.0);
    let eta_value = num("run.eta", &mut errors).unwrap_or(-1.0);
    let out_paths = get("output.paths").map(|(_, v)| v.to_string());

    let model = ModelSpec { kind, mu: mu_measure, rho: rho_measure, sigma, noise };
    if errors.is_empty() {
        if let Err(e) = model.validate() {
            errors.push(e.to_string());
        }
    }
    if !errors.is_empty() {
        return Err(Error::Config(errors));
    }
    Ok(RunConfig {
        model,
        t_max,
        dt,
        replicas,
        seed,
        checkpoints,
        offsets,
        xi_value,
        eta_value,
        out_paths,
    })
}

fn default_checkpoints(t_max: f64) -> Vec<f64> {
    (1..=5).map(|k| t_max * k as f64 / 5.0).collect()
}

fn parse_num_or(
    scalars: &BTreeMap<&str, (usize, &str)>,
    key: &str,
    default: f64,
    errors: &mut Vec<String>,
) -> f64 {
    match scalars.get(key) {
        Some((no, v)) => v.parse::<f64>().unwrap_or_else(|_| {
            errors.push(format!("line {no}: `{key}` is not a number: `{v}`"));
            default
        }),
        None => default,
    }
}

/// `weight @ theta`.
fn parse_atom(value: &str) -> Result<(f64, f64), String> {
    let (w, theta) = value
        .split_once('@')
        .ok_or_else(|| format!("atom must be `weight @ theta`, got `{value}`"))?;
    let w: f64 = w.trim().parse().map_err(|_| format!("bad atom weight `{}`", w.trim()))?;
    let theta: f64 =
        theta.trim().parse().map_err(|_| format!("bad atom position `{}`", theta.trim()))?;
    Ok((theta, w))
}

/// `value on [a,b]`.
fn parse_density(value: &str) -> Result<DensityPiece, String> {
    let (v, range) = value
        .split_once("on")
        .ok_or_else(|| format!("density must be `value on [a,b]`, got `{value}`"))?;
    let v: f64 = v.trim().parse().map_err(|_| format!("bad density value `{}`", v.trim()))?;
    let range = range.trim();
    let inner = range
        .strip_prefix('[')
        .and_then(|r| r.strip_suffix(']'))
        .ok_or_else(|| format!("density range must look like [a,b], got `{range}`"))?;
    let (a, b) = inner
        .split_once(',')
        .ok_or_else(|| format!("density range must look like [a,b], got `{range}`"))?;
    let start: f64 = a.trim().parse().map_err(|_| format!("bad range start `{}`", a.trim()))?;
    let end: f64 = b.trim().parse().map_err(|_| format!("bad range end `{}`", b.trim()))?;
    Ok(DensityPiece { start, end, value: v })
}
