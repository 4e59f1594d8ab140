//! Euler-Maruyama path simulation for the four model classes: semilinear
//! retarded diffusion, neutral diffusion, Levy-driven Ornstein-Uhlenbeck,
//! and Levy-driven multiplicative, with reproducible per-replica noise
//! streams (one ChaCha stream per replica so coupled runs can share
//! increments).

use crate::error::Error;
use crate::fundsol::{check_grid, rho_mass_near_zero};
use crate::measures::{Segment, SignedMeasure};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal, Pareto, Poisson, StandardNormal};

/// Jump size law of a compound-Poisson component.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum JumpLaw {
    Exponential { mean: f64 },
    Normal { sd: f64 },
    Pareto { alpha: f64, x_min: f64 },
}

impl JumpLaw {
    fn validate(&self) -> Result<(), Error> {
        let ok = match *self {
            JumpLaw::Exponential { mean } => mean > 0.0 && mean.is_finite(),
            JumpLaw::Normal { sd } => sd > 0.0 && sd.is_finite(),
            JumpLaw::Pareto { alpha, x_min } => alpha > 0.0 && x_min > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidNoise(format!("bad jump law parameters: {self:?}")))
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        match *self {
            JumpLaw::Exponential { mean } => Exp::new(1.0 / mean).unwrap().sample(rng),
            JumpLaw::Normal { sd } => Normal::new(0.0, sd).unwrap().sample(rng),
            JumpLaw::Pareto { alpha, x_min } => Pareto::new(x_min, alpha).unwrap().sample(rng),
        }
    }

    /// Whether E|J| is finite.
    fn first_moment_finite(&self) -> bool {
        match *self {
            JumpLaw::Pareto { alpha, .. } => alpha > 1.0,
            _ => true,
        }
    }

    /// Whether E|J|^2 is finite.
    fn second_moment_finite(&self) -> bool {
        match *self {
            JumpLaw::Pareto { alpha, .. } => alpha > 2.0,
            _ => true,
        }
    }
}

/// Driving noise of a model.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum NoiseSpec {
    Brownian,
    CompoundPoisson { rate: f64, jumps: JumpLaw },
    AlphaStable { alpha: f64, scale: f64 },
    BrownianPlusCompoundPoisson { drift: f64, rate: f64, jumps: JumpLaw },
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<(), Error> {
        match *self {
            NoiseSpec::Brownian => Ok(()),
            NoiseSpec::CompoundPoisson { rate, jumps } => {
                if !(rate >= 0.0 && rate.is_finite()) {
                    return Err(Error::InvalidNoise(format!("bad Poisson rate {rate}")));
                }
                jumps.validate()
            }
            NoiseSpec::AlphaStable { alpha, scale } => {
                if !(alpha > 0.0 && alpha <= 2.0) {
                    return Err(Error::InvalidNoise(format!(
                        "stable index must lie in (0, 2], got {alpha}"
                    )));
                }
                if !(scale > 0.0 && scale.is_finite()) {
                    return Err(Error::InvalidNoise(format!("bad stable scale {scale}")));
                }
                Ok(())
            }
            NoiseSpec::BrownianPlusCompoundPoisson { drift, rate, jumps } => {
                if !drift.is_finite() || !(rate >= 0.0 && rate.is_finite()) {
                    return Err(Error::InvalidNoise(format!(
                        "bad drift/rate ({drift}, {rate})"
                    )));
                }
                jumps.validate()
            }
        }
    }

    /// Finite first absolute moment of the big jumps (the standing
    /// integrability hypothesis for the Levy OU class).
    pub fn first_moment_finite(&self) -> bool {
        match *self {
            NoiseSpec::Brownian => true,
            NoiseSpec::CompoundPoisson { jumps, .. } => jumps.first_moment_finite(),
            NoiseSpec::AlphaStable { alpha, .. } => alpha > 1.0,
            NoiseSpec::BrownianPlusCompoundPoisson { jumps, .. } => jumps.first_moment_finite(),
        }
    }

    /// Finite second moment of the increments (required for second-moment
    /// diagnostics).
    pub fn second_moment_finite(&self) -> bool {
        match *self {
            NoiseSpec::Brownian => true,
            NoiseSpec::CompoundPoisson { jumps, .. } => jumps.second_moment_finite(),
            NoiseSpec::AlphaStable { alpha, .. } => alpha >= 2.0,
            NoiseSpec::BrownianPlusCompoundPoisson { jumps, .. } => jumps.second_moment_finite(),
        }
    }
}

/// One increment of the driving process over a step of length `dt`,
/// exact in law for every supported noise kind.
pub fn sample_levy_increment(
    noise: &NoiseSpec,
    dt: f64,
    rng: &mut ChaCha8Rng,
) -> f64 {
    match *noise {
        NoiseSpec::Brownian => dt.sqrt() * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng),
        NoiseSpec::CompoundPoisson { rate, jumps } => compound_poisson(rate, &jumps, dt, rng),
        NoiseSpec::AlphaStable { alpha, scale } => {
            scale * dt.powf(1.0 / alpha) * standard_stable(alpha, rng)
        }
        NoiseSpec::BrownianPlusCompoundPoisson { drift, rate, jumps } => {
            drift * dt
                + dt.sqrt() * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng)
                + compound_poisson(rate, &jumps, dt, rng)
        }
    }
}

fn compound_poisson(rate: f64, jumps: &JumpLaw, dt: f64, rng: &mut ChaCha8Rng) -> f64 {
    let lambda = rate * dt;
    if lambda == 0.0 {
        return 0.0;
    }
    let count = Poisson::new(lambda).unwrap().sample(rng) as usize;
    (0..count).map(|_| jumps.sample(rng)).sum()
}

/// Symmetric standard alpha-stable draw (characteristic function
/// `exp(-|u|^alpha)`) via the Chambers-Mallows-Stuck transform; `alpha = 2`
/// degenerates to a Gaussian of variance 2.
fn standard_stable(alpha: f64, rng: &mut ChaCha8Rng) -> f64 {
    use std::f64::consts::FRAC_PI_2;
    if (alpha - 2.0).abs() < 1e-12 {
        return std::f64::consts::SQRT_2
            * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng);
    }
    let u: f64 = rng.gen_range(-FRAC_PI_2..FRAC_PI_2);
    let w: f64 = Exp::new(1.0).unwrap().sample(rng);
    if (alpha - 1.0).abs() < 1e-12 {
        return u.tan();
    }
    let s = (alpha * u).sin() / u.cos().powf(1.0 / alpha);
    s * (((1.0 - alpha) * u).cos() / w).powf((1.0 - alpha) / alpha)
}

/// Named diffusion functional acting on the current segment, each with an
/// analytically known Lipschitz constant with respect to the sup norm.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum DiffusionFunctional {
    Constant { value: f64 },
    /// `sigma0 + sigma1 * xi(-lag)`.
    AffineEndpoint { base: f64, slope: f64, lag: f64 },
    /// `coeff * integral_{-tau}^0 xi(theta) dtheta`.
    AffineIntegral { coeff: f64 },
    /// `bound * tanh(xi(-lag) / bound)`.
    BoundedSaturating { bound: f64, lag: f64 },
}

impl DiffusionFunctional {
    pub fn lipschitz(&self, tau: f64) -> f64 {
        match *self {
            DiffusionFunctional::Constant { .. } => 0.0,
            DiffusionFunctional::AffineEndpoint { slope, .. } => slope.abs(),
            DiffusionFunctional::AffineIntegral { coeff } => coeff.abs() * tau,
            DiffusionFunctional::BoundedSaturating { .. } => 1.0,
        }
    }

    pub fn is_bounded(&self) -> bool {
        matches!(
            self,
            DiffusionFunctional::Constant { .. } | DiffusionFunctional::BoundedSaturating { .. }
        )
    }

    fn validate(&self, tau: f64) -> Result<(), Error> {
        let lag_ok = |lag: f64| (0.0..=tau).contains(&lag);
        let ok = match *self {
            DiffusionFunctional::Constant { value } => value.is_finite(),
            DiffusionFunctional::AffineEndpoint { base, slope, lag } => {
                base.is_finite() && slope.is_finite() && lag_ok(lag)
            }
            DiffusionFunctional::AffineIntegral { coeff } => coeff.is_finite(),
            DiffusionFunctional::BoundedSaturating { bound, lag } => bound > 0.0 && lag_ok(lag),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidModel(format!("bad diffusion functional: {self:?}")))
        }
    }

    fn eval(&self, view: &SegmentView) -> f64 {
        match *self {
            DiffusionFunctional::Constant { value } => value,
            DiffusionFunctional::AffineEndpoint { base, slope, lag } => {
                base + slope * view.at_offset(-lag)
            }
            DiffusionFunctional::AffineIntegral { coeff } => coeff * view.integral(),
            DiffusionFunctional::BoundedSaturating { bound, lag } => {
                bound * (view.at_offset(-lag) / bound).tanh()
            }
        }
    }
}

/// Read-only window of the path buffer ending at grid index `idx`,
/// interpreted as the segment on `[-tau, 0]`.
struct SegmentView<'a> {
    buf: &'a [f64],
    idx: usize,
    n: usize,
    dt: f64,
}

impl SegmentView<'_> {
    fn at_offset(&self, theta: f64) -> f64 {
        let x = self.idx as f64 + theta / self.dt;
        let lo = x.floor();
        let frac = x - lo;
        let i = (lo.max(0.0)) as usize;
        if frac < 1e-9 || i + 1 >= self.buf.len() {
            self.buf[i.min(self.buf.len() - 1)]
        } else {
            self.buf[i] * (1.0 - frac) + self.buf[i + 1] * frac
        }
    }

    /// Trapezoid of the segment over `[-tau, 0]`.
    fn integral(&self) -> f64 {
        let lo = self.idx - self.n;
        let mut acc = 0.5 * (self.buf[lo] + self.buf[self.idx]);
        acc += self.buf[lo + 1..self.idx].iter().sum::<f64>();
        acc * self.dt
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum ModelKind {
    RetardedDiffusion,
    NeutralDiffusion,
    LevyOu,
    LevyMultiplicative,
}

/// Full model description: drift measure, optional neutral measure,
/// diffusion functional and driving noise.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub mu: SignedMeasure,
    pub rho: Option<SignedMeasure>,
    pub sigma: Option<DiffusionFunctional>,
    pub noise: NoiseSpec,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<(), Error> {
        self.noise.validate()?;
        if let Some(sigma) = &self.sigma {
            sigma.validate(self.mu.tau())?;
        }
        match self.kind {
            ModelKind::NeutralDiffusion => {
                let rho = self
                    .rho
                    .as_ref()
                    .ok_or_else(|| Error::InvalidModel("neutral model requires rho".into()))?;
                if (rho.tau() - self.mu.tau()).abs() > 1e-12 {
                    return Err(Error::InvalidModel("rho and mu delay mismatch".into()));
                }
            }
            _ => {
                if self.rho.is_some() {
                    return Err(Error::InvalidModel(format!(
                        "rho only applies to neutral models, not {:?}",
                        self.kind
                    )));
                }
            }
        }
        match self.kind {
            ModelKind::LevyOu => {
                if self.sigma.is_some() {
                    return Err(Error::InvalidModel(
                        "Levy OU has additive noise; sigma must be absent".into(),
                    ));
                }
            }
            _ => {
                if self.sigma.is_none() {
                    return Err(Error::InvalidModel(format!(
                        "{:?} requires a diffusion functional",
                        self.kind
                    )));
                }
            }
        }
        if matches!(
            self.kind,
            ModelKind::RetardedDiffusion | ModelKind::NeutralDiffusion
        ) && self.noise != NoiseSpec::Brownian
        {
            return Err(Error::InvalidModel(
                "diffusion models are driven by Brownian noise".into(),
            ));
        }
        Ok(())
    }

    pub fn tau(&self) -> f64 {
        self.mu.tau()
    }
}

/// One simulated path on the grid `{-tau, ..., T}`; index 0 is `t = -tau`.
#[derive(Debug, Clone)]
pub struct PathGrid {
    pub dt: f64,
    pub tau: f64,
    pub seed: u64,
    pub replica_id: u64,
    pub values: Vec<f64>,
}

impl PathGrid {
    pub fn n_delay(&self) -> usize {
        (self.tau / self.dt).round() as usize
    }

    pub fn horizon(&self) -> f64 {
        (self.values.len() - 1 - self.n_delay()) as f64 * self.dt
    }

    pub fn at_time(&self, t: f64) -> Result<f64, Error> {
        let x = (t + self.tau) / self.dt;
        let i = x.round();
        if (x - i).abs() > 1e-6 || i < 0.0 || i as usize >= self.values.len() {
            return Err(Error::OffGrid { t, dt: self.dt });
        }
        Ok(self.values[i as usize])
    }

    /// Grid index of time `t >= -tau`.
    pub fn index_of(&self, t: f64) -> Result<usize, Error> {
        let x = (t + self.tau) / self.dt;
        let i = x.round();
        if (x - i).abs() > 1e-6 || i < 0.0 || i as usize >= self.values.len() {
            return Err(Error::OffGrid { t, dt: self.dt });
        }
        Ok(i as usize)
    }

    /// Sup norm of the segment ending at time `t`.
    pub fn segment_sup(&self, t: f64) -> Result<f64, Error> {
        let i = self.index_of(t)?;
        let n = self.n_delay();
        if i < n {
            return Err(Error::OffGrid { t, dt: self.dt });
        }
        Ok(self.values[i - n..=i].iter().fold(0.0f64, |m, v| m.max(v.abs())))
    }
}

/// The per-replica RNG: one ChaCha stream per `(seed, replica)` pair, so
/// replicas are independent and order-insensitive.
pub fn replica_rng(seed: u64, replica: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replica);
    rng
}

/// Pre-generates the driving increments for one replica. Coupled runs
/// reuse the same array for both initial conditions.
pub fn generate_increments(
    noise: &NoiseSpec,
    dt: f64,
    steps: usize,
    seed: u64,
    replica: u64,
) -> Result<Vec<f64>, Error> {
    noise.validate()?;
    let mut rng = replica_rng(seed, replica);
    Ok((0..steps)
        .map(|_| sample_levy_increment(noise, dt, &mut rng))
        .collect())
}

/// Evaluates the diffusion functional on each left-endpoint segment of a
/// simulated path: entry `i` is `sigma(X_{t_i})`, the predictable
/// integrand multiplying the `i`-th noise increment.
pub fn sigma_along_path(sigma: &DiffusionFunctional, path: &PathGrid) -> Vec<f64> {
    let n = path.n_delay();
    let steps = path.values.len() - 1 - n;
    (0..steps)
        .map(|i| sigma.eval(&SegmentView { buf: &path.values, idx: n + i, n, dt: path.dt }))
        .collect()
}

fn init_buffer(xi: &Segment, n: usize, steps: usize, dt: f64) -> Result<Vec<f64>, Error> {
    if xi.n() != n || (xi.dt() - dt).abs() > 1e-9 * dt {
        return Err(Error::InvalidModel(format!(
            "initial segment grid ({} cells) does not match simulation grid ({n} cells)",
            xi.n()
        )));
    }
    let mut buf = Vec::with_capacity(n + 1 + steps);
    buf.extend_from_slice(xi.values());
    buf.resize(n + 1 + steps, 0.0);
    Ok(buf)
}

/// Shared Euler core. `amplitude(view)` multiplies the pre-generated
/// increment; it reads the segment *before* the increment is applied, so
/// the stochastic integrand is predictable.
fn euler_core(
    model: &ModelSpec,
    xi: &Segment,
    t_max: f64,
    dt: f64,
    increments: &[f64],
) -> Result<Vec<f64>, Error> {
    model.validate()?;
    let tau = model.tau();
    let n = check_grid(tau, t_max, dt)?;
    let steps = (t_max / dt).ceil() as usize;
    if increments.len() < steps {
        return Err(Error::LengthMismatch(format!(
            "{} increments for {steps} steps",
            increments.len()
        )));
    }
    let mut buf = init_buffer(xi, n, steps, dt)?;

    match model.kind {
        ModelKind::NeutralDiffusion => {
            let rho = model.rho.as_ref().unwrap();
            let sigma = model.sigma.as_ref().unwrap();
            let contraction = rho_mass_near_zero(rho, dt);
            if contraction >= 1.0 {
                return Err(Error::NeutralRecoveryFailure);
            }
            let apply_rho = |buf: &[f64], idx: usize| {
                let view = SegmentView { buf, idx, n, dt };
                rho.integrate_against(|theta| view.at_offset(theta))
            };
            let recover = |buf: &mut Vec<f64>, idx: usize, m_val: f64| -> Result<(), Error> {
                // Recover X from M: explicit when rho has no mass within
                // one step of 0, contraction iteration otherwise.
                buf[idx] = m_val;
                if contraction == 0.0 {
                    buf[idx] = m_val + apply_rho(buf, idx);
                    return Ok(());
                }
                for _ in 0..200 {
                    let next = m_val + apply_rho(buf, idx);
                    let done = (next - buf[idx]).abs() <= 1e-12 * (1.0 + next.abs());
                    buf[idx] = next;
                    if done {
                        return Ok(());
                    }
                }
                Err(Error::NeutralRecoveryFailure)
            };
            let mut m_val = buf[n] - apply_rho(&buf, n);
            for i in 0..steps {
                let idx = n + i;
                let view = SegmentView { buf: &buf, idx, n, dt };
                let drift = model.mu.integrate_against(|theta| view.at_offset(theta));
                let amp = sigma.eval(&view);
                // Heun half-step on M (noise stays left-point Ito).
                let m_pred = m_val + dt * drift + amp * increments[i];
                recover(&mut buf, idx + 1, m_pred)?;
                let view = SegmentView { buf: &buf, idx: idx + 1, n, dt };
                let drift_next = model.mu.integrate_against(|theta| view.at_offset(theta));
                m_val += 0.5 * dt * (drift + drift_next) + amp * increments[i];
                recover(&mut buf, idx + 1, m_val)?;
            }
        }
        _ => {
            // The noise term is left-point (Ito, predictable integrand);
            // the drift takes a Heun half-step so the sigma = 0 reduction
            // reproduces the deterministic solution at second order.
            for i in 0..steps {
                let idx = n + i;
                let view = SegmentView { buf: &buf, idx, n, dt };
                let drift = model.mu.integrate_against(|theta| view.at_offset(theta));
                let amp = match model.kind {
                    ModelKind::LevyOu => 1.0,
                    _ => model.sigma.as_ref().unwrap().eval(&view),
                };
                buf[idx + 1] = buf[idx] + dt * drift + amp * increments[i];
                let view = SegmentView { buf: &buf, idx: idx + 1, n, dt };
                let drift_next = model.mu.integrate_against(|theta| view.at_offset(theta));
                buf[idx + 1] =
                    buf[idx] + 0.5 * dt * (drift + drift_next) + amp * increments[i];
            }
        }
    }
    Ok(buf)
}

fn run(
    model: &ModelSpec,
    xi: &Segment,
    t_max: f64,
    dt: f64,
    seed: u64,
    replica: u64,
) -> Result<PathGrid, Error> {
    model.validate()?;
    let steps = (t_max / dt).ceil() as usize;
    let increments = generate_increments(&model.noise, dt, steps, seed, replica)?;
    let values = euler_core(model, xi, t_max, dt, &increments)?;
    Ok(PathGrid { dt, tau: model.tau(), seed, replica_id: replica, values })
}

/// Run on externally supplied increments (shared-noise coupling, strong
/// convergence probes). `seed`/`replica_id` are recorded as 0.
pub fn run_with_increments(
    model: &ModelSpec,
    xi: &Segment,
    t_max: f64,
    dt: f64,
    increments: &[f64],
) -> Result<PathGrid, Error> {
    let values = euler_core(model, xi, t_max, dt, increments)?;
    Ok(PathGrid { dt, tau: model.tau(), seed: 0, replica_id: 0, values })
}

pub fn euler_retarded(
    model: &ModelSpec,
    xi: &Segment,
    t_max: f64,
    dt: f64,
    seed: u64,
    replica: u64,
) -> Result<PathGrid, Error> {
    expect_kind(model, ModelKind::RetardedDiffusion)?;
    run(model, xi, t_max, dt, seed, replica)
}

pub fn euler_neutral(
    model: &ModelSpec,
    xi: &Segment,
    t_max: f64,
    dt: f64,
    seed: u64,
    replica: u64,
) -> Result<PathGrid, Error> {
    expect_kind(model, ModelKind::NeutralDiffusion)?;
    run(model, xi, t_max, dt, seed, replica)
}

pub fn euler_levy_ou(
    model: &ModelSpec,
    xi: &Segment,
    t_max: f64,
    dt: f64,
    seed: u64,
    replica: u64,
) -> Result<PathGrid, Error> {
    expect_kind(model, ModelKind::LevyOu)?;
    if !model.noise.first_moment_finite() {
        return Err(Error::InvalidNoise(
            "Levy OU requires a finite first moment of the big jumps".into(),
        ));
    }
    run(model, xi, t_max, dt, seed, replica)
}

pub fn euler_levy_multiplicative(
    model: &ModelSpec,
    xi: &Segment,
    t_max: f64,
    dt: f64,
    seed: u64,
    replica: u64,
) -> Result<PathGrid, Error> {
    expect_kind(model, ModelKind::LevyMultiplicative)?;
    run(model, xi, t_max, dt, seed, replica)
}

/// Kind-agnostic driver used by the statistics layer.
pub fn simulate_path(
    model: &ModelSpec,
    xi: &Segment,
    t_max: f64,
    dt: f64,
    seed: u64,
    replica: u64,
) -> Result<PathGrid, Error> {
    run(model, xi, t_max, dt, seed, replica)
}

fn expect_kind(model: &ModelSpec, kind: ModelKind) -> Result<(), Error> {
    if model.kind != kind {
        return Err(Error::InvalidModel(format!(
            "expected a {kind:?} model, got {:?}",
            model.kind
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fundsol::{fundamental_neutral, fundamental_retarded};
    use crate::voc::{voc_deterministic, VocContext};
    use rayon::prelude::*;

    fn delta(theta: f64, w: f64) -> SignedMeasure {
        SignedMeasure::atom(1.0, theta, w).unwrap()
    }

    fn retarded_model(sigma: DiffusionFunctional) -> ModelSpec {
        ModelSpec {
            kind: ModelKind::RetardedDiffusion,
            mu: delta(-1.0, -1.0),
            rho: None,
            sigma: Some(sigma),
            noise: NoiseSpec::Brownian,
        }
    }

    #[test]
    fn zero_sigma_matches_voc() {
        let model = retarded_model(DiffusionFunctional::Constant { value: 0.0 });
        let dt = 1e-3;
        let xi = Segment::constant(1.0, 1000, 1.0);
        let path = euler_retarded(&model, &xi, 5.0, dt, 1, 0).unwrap();
        let r = fundamental_retarded(&model.mu, 5.0, dt).unwrap();
        let ctx = VocContext { r: &r, mu: &model.mu, rho: None, xi: &xi };
        for &t in &[0.5, 1.0, 2.5, 4.0, 5.0] {
            let want = voc_deterministic(&ctx, t).unwrap();
            let got = path.at_time(t).unwrap();
            assert!((got - want).abs() < 5e-4, "t={t}: {got} vs {want}");
        }
    }

    #[test]
    fn ou_terminal_variance() {
        let model = ModelSpec {
            kind: ModelKind::RetardedDiffusion,
            mu: delta(0.0, -1.0),
            rho: None,
            sigma: Some(DiffusionFunctional::Constant { value: 1.0 }),
            noise: NoiseSpec::Brownian,
        };
        let dt = 0.01;
        let xi = Segment::constant(1.0, 100, 0.0);
        let terminal: Vec<f64> = (0..10_000u64)
            .into_par_iter()
            .map(|rep| {
                let p = euler_retarded(&model, &xi, 50.0, dt, 11, rep).unwrap();
                *p.values.last().unwrap()
            })
            .collect();
        let mean = terminal.iter().sum::<f64>() / terminal.len() as f64;
        let var = terminal.iter().map(|x| (x - mean).powi(2)).sum::<f64>()
            / (terminal.len() - 1) as f64;
        assert!((var - 0.5).abs() < 0.025, "sample variance {var}");
    }

    #[test]
    fn linear_delayed_sigma_stays_bounded() {
        let model = retarded_model(DiffusionFunctional::AffineEndpoint {
            base: 0.0,
            slope: 0.1,
            lag: 1.0,
        });
        let dt = 0.01;
        let xi = Segment::constant(1.0, 100, 1.0);
        let second_moments: Vec<Vec<f64>> = (0..200u64)
            .into_par_iter()
            .map(|rep| {
                let p = euler_retarded(&model, &xi, 50.0, dt, 5, rep).unwrap();
                p.values.iter().map(|x| x * x).collect()
            })
            .collect();
        let len = second_moments[0].len();
        let mut sup = 0.0f64;
        let mut last = 0.0;
        for j in 0..len {
            let m = second_moments.iter().map(|v| v[j]).sum::<f64>() / 200.0;
            sup = sup.max(m);
            last = m;
        }
        assert!(sup.is_finite() && sup < 10.0, "sup E|X|^2 = {sup}");
        assert!(last < 1.0, "terminal E|X|^2 = {last} has not settled");
    }

    #[test]
    fn neutral_zero_rho_identical_to_retarded() {
        let retarded = retarded_model(DiffusionFunctional::AffineEndpoint {
            base: 0.5,
            slope: 0.1,
            lag: 1.0,
        });
        let neutral = ModelSpec {
            kind: ModelKind::NeutralDiffusion,
            rho: Some(SignedMeasure::zero(1.0)),
            ..retarded.clone()
        };
        let xi = Segment::constant(1.0, 100, 1.0);
        let a = euler_retarded(&retarded, &xi, 5.0, 0.01, 7, 3).unwrap();
        let b = euler_neutral(&neutral, &xi, 5.0, 0.01, 7, 3).unwrap();
        // Identical noise stream and dynamics; the only difference is the
        // (exact) M-step bookkeeping, which introduces no discrepancy for
        // rho = 0 beyond float reassociation.
        for (x, y) in a.values.iter().zip(&b.values) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn neutral_deterministic_matches_fundsol() {
        let model = ModelSpec {
            kind: ModelKind::NeutralDiffusion,
            mu: delta(-1.0, -1.0),
            rho: Some(delta(-1.0, -1.0 / 3.0)),
            sigma: Some(DiffusionFunctional::Constant { value: 0.0 }),
            noise: NoiseSpec::Brownian,
        };
        let dt = 1e-3;
        let xi = Segment::constant(1.0, 1000, 0.0);
        // With xi = 0 except a unit value at 0 we would recover r itself;
        // instead compare against the neutral deterministic solution for
        // xi = 1 via the oracle stepping in the voc tests' spirit: here we
        // reuse r and the constant-1 segment's known structure.
        let xi_one = Segment::constant(1.0, 1000, 1.0);
        let path = euler_neutral(&model, &xi_one, 5.0, dt, 3, 0).unwrap();
        let r = fundamental_neutral(model.rho.as_ref().unwrap(), &model.mu, 5.0, dt).unwrap();
        let ctx = VocContext {
            r: &r,
            mu: &model.mu,
            rho: model.rho.as_ref(),
            xi: &xi_one,
        };
        for &t in &[0.5, 2.0, 5.0] {
            let want = crate::voc::voc_neutral_deterministic(&ctx, t).unwrap();
            let got = path.at_time(t).unwrap();
            assert!((got - want).abs() < 1e-3, "t={t}: {got} vs {want}");
        }
        let _ = xi;
    }

    #[test]
    fn neutral_example_second_moment_bounded() {
        let model = ModelSpec {
            kind: ModelKind::NeutralDiffusion,
            mu: delta(-1.0, -1.0),
            rho: Some(delta(-1.0, -1.0 / 3.0)),
            sigma: Some(DiffusionFunctional::AffineIntegral { coeff: 0.05 }),
            noise: NoiseSpec::Brownian,
        };
        let dt = 0.01;
        let xi = Segment::constant(1.0, 100, 1.0);
        let terminal_moment: f64 = (0..500u64)
            .into_par_iter()
            .map(|rep| {
                let p = euler_neutral(&model, &xi, 50.0, dt, 13, rep).unwrap();
                p.values.last().unwrap().powi(2)
            })
            .sum::<f64>()
            / 500.0;
        assert!(terminal_moment < 1.0, "E|X(50)|^2 = {terminal_moment}");
    }

    #[test]
    fn compound_poisson_moments() {
        let noise = NoiseSpec::CompoundPoisson {
            rate: 2.0,
            jumps: JumpLaw::Exponential { mean: 1.0 },
        };
        let mut rng = replica_rng(100, 0);
        let draws: Vec<f64> =
            (0..100_000).map(|_| sample_levy_increment(&noise, 1.0, &mut rng)).collect();
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        let var =
            draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (draws.len() - 1) as f64;
        // mean = rate * E[J] = 2; var = rate * E[J^2] = 2 * 2 = 4.
        // SE(mean) = sqrt(var/n) ~ 0.0063.
        assert!((mean - 2.0).abs() < 3.0 * (4.0f64 / 1e5).sqrt(), "mean {mean}");
        assert!((var - 4.0).abs() < 0.2, "var {var}");
    }

    /// Abramowitz-Stegun 7.1.26 (max error 1.5e-7), enough for a KS check.
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

    fn std_normal_cdf(x: f64) -> f64 {
        0.5 * (1.0 + erf(x / std::f64::consts::SQRT_2))
    }

    #[test]
    fn stable_alpha_two_is_gaussian() {
        let noise = NoiseSpec::AlphaStable { alpha: 2.0, scale: 1.0 / 2.0f64.sqrt() };
        let mut rng = replica_rng(200, 0);
        let mut draws: Vec<f64> =
            (0..100_000).map(|_| sample_levy_increment(&noise, 1.0, &mut rng)).collect();
        draws.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = draws.len() as f64;
        let ks = draws
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let f = std_normal_cdf(x);
                (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
            })
            .fold(0.0f64, f64::max);
        // 1% critical value 1.63 / sqrt(n).
        assert!(ks < 1.63 / n.sqrt(), "KS statistic {ks}");
    }

    #[test]
    fn stable_characteristic_function() {
        let noise = NoiseSpec::AlphaStable { alpha: 1.5, scale: 1.0 };
        let mut rng = replica_rng(300, 0);
        let draws: Vec<f64> =
            (0..100_000).map(|_| sample_levy_increment(&noise, 1.0, &mut rng)).collect();
        for &u in &[0.5f64, 1.0, 2.0] {
            let emp = draws.iter().map(|x| (u * x).cos()).sum::<f64>() / draws.len() as f64;
            let want = (-u.abs().powf(1.5)).exp();
            assert!((emp - want).abs() < 0.01, "u={u}: {emp} vs {want}");
        }
    }

    #[test]
    fn levy_ou_zero_rate_is_deterministic() {
        let model = ModelSpec {
            kind: ModelKind::LevyOu,
            mu: delta(-1.0, -1.0),
            rho: None,
            sigma: None,
            noise: NoiseSpec::CompoundPoisson {
                rate: 0.0,
                jumps: JumpLaw::Exponential { mean: 1.0 },
            },
        };
        let dt = 1e-3;
        let xi = Segment::constant(1.0, 1000, 1.0);
        let path = euler_levy_ou(&model, &xi, 3.0, dt, 17, 0).unwrap();
        let r = fundamental_retarded(&model.mu, 3.0, dt).unwrap();
        let ctx = VocContext { r: &r, mu: &model.mu, rho: None, xi: &xi };
        for &t in &[0.5, 1.5, 3.0] {
            let want = voc_deterministic(&ctx, t).unwrap();
            assert!((path.at_time(t).unwrap() - want).abs() < 5e-4);
        }
    }

    #[test]
    fn levy_ou_stationary_mean() {
        let model = ModelSpec {
            kind: ModelKind::LevyOu,
            mu: delta(-1.0, -1.0),
            rho: None,
            sigma: None,
            noise: NoiseSpec::CompoundPoisson {
                rate: 1.0,
                jumps: JumpLaw::Exponential { mean: 1.0 },
            },
        };
        let dt = 0.01;
        let xi = Segment::constant(1.0, 100, 0.0);
        let long_run: Vec<f64> = (0..4000u64)
            .into_par_iter()
            .map(|rep| {
                let p = euler_levy_ou(&model, &xi, 100.0, dt, 23, rep).unwrap();
                // Time average over the second half (well past the
                // transient; averaging beats a single terminal read).
                let half = p.values.len() / 2;
                p.values[half..].iter().sum::<f64>() / (p.values.len() - half) as f64
            })
            .collect();
        let mean = long_run.iter().sum::<f64>() / long_run.len() as f64;
        // Stationary first-moment balance: 0 = -m + rate * E[J].
        assert!((mean - 1.0).abs() < 0.05, "long-run mean {mean}");
    }

    #[test]
    fn levy_ou_rejects_infinite_first_moment() {
        let model = ModelSpec {
            kind: ModelKind::LevyOu,
            mu: delta(-1.0, -1.0),
            rho: None,
            sigma: None,
            noise: NoiseSpec::AlphaStable { alpha: 0.8, scale: 1.0 },
        };
        let xi = Segment::constant(1.0, 100, 0.0);
        assert!(matches!(
            euler_levy_ou(&model, &xi, 1.0, 0.01, 1, 0),
            Err(Error::InvalidNoise(_))
        ));
    }

    #[test]
    fn multiplicative_bounded_sigma_stable_noise() {
        let model = ModelSpec {
            kind: ModelKind::LevyMultiplicative,
            mu: delta(-1.0, -1.0),
            rho: None,
            sigma: Some(DiffusionFunctional::BoundedSaturating { bound: 1.0, lag: 1.0 }),
            noise: NoiseSpec::AlphaStable { alpha: 1.5, scale: 1.0 },
        };
        let dt = 0.01;
        let xi = Segment::constant(1.0, 100, 1.0);
        let abs_terminal: Vec<f64> = (0..500u64)
            .into_par_iter()
            .map(|rep| {
                let p = euler_levy_multiplicative(&model, &xi, 100.0, dt, 31, rep).unwrap();
                p.values.last().unwrap().abs()
            })
            .collect();
        let mean_abs = abs_terminal.iter().sum::<f64>() / abs_terminal.len() as f64;
        assert!(mean_abs.is_finite() && mean_abs < 20.0, "E|X(100)| = {mean_abs}");
    }

    #[test]
    fn multiplicative_predictable_integrand() {
        let model = ModelSpec {
            kind: ModelKind::LevyMultiplicative,
            mu: delta(-1.0, -1.0),
            rho: None,
            sigma: Some(DiffusionFunctional::AffineEndpoint {
                base: 0.0,
                slope: 0.1,
                lag: 0.0,
            }),
            noise: NoiseSpec::CompoundPoisson {
                rate: 5.0,
                jumps: JumpLaw::Normal { sd: 1.0 },
            },
        };
        let dt = 0.01;
        let steps = 200;
        let xi = Segment::constant(1.0, 100, 1.0);
        let mut inc = generate_increments(&model.noise, dt, steps, 41, 0).unwrap();
        let a = run_with_increments(&model, &xi, 2.0, dt, &inc).unwrap();
        // Zero the largest jump in the second half of the horizon (most
        // compound-Poisson increments are already zero).
        let k = (100..150)
            .max_by(|&i, &j| inc[i].abs().partial_cmp(&inc[j].abs()).unwrap())
            .unwrap();
        assert!(inc[k] != 0.0);
        inc[k] = 0.0;
        let b = run_with_increments(&model, &xi, 2.0, dt, &inc).unwrap();
        let n = 100;
        // The state (and hence sigma's integrand) agrees through index k.
        for j in 0..=n + k {
            assert_eq!(a.values[j], b.values[j], "diverged before the zeroed jump");
        }
        assert_ne!(a.values[n + k + 1], b.values[n + k + 1]);
    }

    #[test]
    fn reproducible_and_order_independent() {
        let model = retarded_model(DiffusionFunctional::AffineEndpoint {
            base: 0.3,
            slope: 0.1,
            lag: 0.5,
        });
        let xi = Segment::constant(1.0, 100, 1.0);
        let a = euler_retarded(&model, &xi, 3.0, 0.01, 99, 4).unwrap();
        // Interleave an unrelated replica; replica 4 must be unaffected.
        let _ = euler_retarded(&model, &xi, 3.0, 0.01, 99, 5).unwrap();
        let b = euler_retarded(&model, &xi, 3.0, 0.01, 99, 4).unwrap();
        assert_eq!(a.values, b.values);
    }

    #[test]
    fn strong_order_half_probe() {
        let model = retarded_model(DiffusionFunctional::AffineEndpoint {
            base: 0.3,
            slope: 0.1,
            lag: 1.0,
        });
        let fine_dt = 1e-4f64;
        let t_end = 2.0;
        let fine_steps = (t_end / fine_dt).round() as usize;
        let err_at = |dt: f64, reference: &[f64], fine_inc: &[f64]| {
            let ratio = (dt / fine_dt).round() as usize;
            let coarse_inc: Vec<f64> = fine_inc
                .chunks(ratio)
                .map(|c| c.iter().sum::<f64>())
                .collect();
            let n = (1.0 / dt).round() as usize;
            let xi = Segment::constant(1.0, n, 1.0);
            let p = run_with_increments(&model, &xi, t_end, dt, &coarse_inc).unwrap();
            (p.values.last().unwrap() - reference.last().unwrap()).abs()
        };
        let mut e_coarse = 0.0;
        let mut e_mid = 0.0;
        let replicas = 48;
        for rep in 0..replicas {
            let fine_inc =
                generate_increments(&NoiseSpec::Brownian, fine_dt, fine_steps, 77, rep).unwrap();
            let xi = Segment::constant(1.0, 10_000, 1.0);
            let reference =
                run_with_increments(&model, &xi, t_end, fine_dt, &fine_inc).unwrap();
            e_coarse += err_at(1e-2, &reference.values, &fine_inc).powi(2);
            e_mid += err_at(1e-3, &reference.values, &fine_inc).powi(2);
        }
        let e_coarse = (e_coarse / replicas as f64).sqrt();
        let e_mid = (e_mid / replicas as f64).sqrt();
        assert!(
            e_mid < e_coarse / 1.8,
            "errors did not shrink with dt: {e_coarse} -> {e_mid}"
        );
    }

    #[test]
    fn model_validation() {
        let mut model = retarded_model(DiffusionFunctional::Constant { value: 1.0 });
        model.rho = Some(SignedMeasure::zero(1.0));
        assert!(model.validate().is_err());
        let bad_noise = NoiseSpec::AlphaStable { alpha: 2.5, scale: 1.0 };
        assert!(bad_noise.validate().is_err());
        let ou = ModelSpec {
            kind: ModelKind::LevyOu,
            mu: delta(-1.0, -1.0),
            rho: None,
            sigma: Some(DiffusionFunctional::Constant { value: 1.0 }),
            noise: NoiseSpec::Brownian,
        };
        assert!(ou.validate().is_err());
    }
}
