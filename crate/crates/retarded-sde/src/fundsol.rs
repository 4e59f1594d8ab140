//! Fundamental solutions of the linear retarded and neutral delay
//! equations, computed window-by-window (method of steps) with an explicit
//! trapezoidal predictor-corrector, plus exponential-envelope fitting of
//! the decay rate.
//!
//! `r` jumps at `t = 0` (initial data 0 on `[-tau, 0)`, `r(0) = 1`) and, in
//! the neutral case, at later multiples of `tau`. Grid values are
//! right-limits; a parallel left-limit array lets delayed reads that land
//! exactly on a jump pick the correct one-sided value, which keeps the
//! stepping at order 2 across the jump crossings.

use crate::error::Error;
use crate::measures::SignedMeasure;

/// Grid values of the fundamental solution `r` on `[-tau, T]`. Index 0
/// corresponds to `t = -tau`; index `n_delay` to `t = 0`.
#[derive(Debug, Clone)]
pub struct FundamentalSolution {
    tau: f64,
    dt: f64,
    /// Right-limits r(t+).
    values: Vec<f64>,
    /// Left-limits r(t-); differs from `values` only at jumps.
    left_values: Vec<f64>,
}

impl FundamentalSolution {
    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Number of grid intervals per delay window.
    pub fn n_delay(&self) -> usize {
        (self.tau / self.dt).round() as usize
    }

    pub fn horizon(&self) -> f64 {
        (self.values.len() - 1 - self.n_delay()) as f64 * self.dt
    }

    /// Right-limit grid values from `t = -tau`.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Value at grid-aligned time `t` in `[-tau, T]` (right-limit); errors
    /// when `t` is more than 1e-6 grid cells off-grid.
    pub fn at_time(&self, t: f64) -> Result<f64, Error> {
        let x = (t + self.tau) / self.dt;
        let i = x.round();
        if (x - i).abs() > 1e-6 || i < 0.0 || i as usize >= self.values.len() {
            return Err(Error::OffGrid { t, dt: self.dt });
        }
        Ok(self.values[i as usize])
    }

    /// Right-limit by grid index measured from `t = 0`; reads below `-tau`
    /// return 0.
    pub fn at_index_from_zero(&self, i: isize) -> f64 {
        let idx = i + self.n_delay() as isize;
        if idx < 0 {
            0.0
        } else {
            self.values[idx as usize]
        }
    }

    /// Left-limit by grid index measured from `t = 0`.
    pub fn at_index_from_zero_left(&self, i: isize) -> f64 {
        let idx = i + self.n_delay() as isize;
        if idx < 0 {
            0.0
        } else {
            self.left_values[idx as usize]
        }
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        let tau = self.tau;
        let dt = self.dt;
        (0..self.values.len()).map(move |i| -tau + i as f64 * dt)
    }
}

pub(crate) fn check_grid(tau: f64, t_max: f64, dt: f64) -> Result<usize, Error> {
    if !(dt > 0.0 && t_max > 0.0) {
        return Err(Error::InvalidModel(format!(
            "need dt > 0 and T > 0, got dt={dt}, T={t_max}"
        )));
    }
    let n = tau / dt;
    if (n - n.round()).abs() > 1e-9 * n.max(1.0) {
        return Err(Error::InvalidModel(format!("dt = {dt} must divide tau = {tau}")));
    }
    Ok(n.round() as usize)
}

/// Whether delayed reads landing exactly on a grid point take the left or
/// right limit. Trapezoid endpoints of a cadlag integrand over
/// `(t_i, t_{i+1}]` use the right limit at `t_i` and the left limit at
/// `t_{i+1}`.
#[derive(Clone, Copy, PartialEq, Eq)]
enum GridSide {
    Right,
    Left,
}

/// `integral r(t_idx + theta) m(dtheta)` read from the history buffers.
/// Interpolation inside a cell `(t_j, t_{j+1})` uses the right limit at
/// `t_j` and the left limit at `t_{j+1}`, so cells adjacent to a jump
/// interpolate the correct branch.
fn apply_measure(
    m: &SignedMeasure,
    vals: &[f64],
    left_vals: &[f64],
    idx: usize,
    dt: f64,
    side: GridSide,
) -> f64 {
    m.integrate_against(|theta| {
        let x = idx as f64 + theta / dt;
        let lo = x.floor();
        let frac = x - lo;
        let i = lo as isize;
        if frac < 1e-9 {
            if i < 0 {
                return 0.0;
            }
            return match side {
                GridSide::Right => vals[i as usize],
                GridSide::Left => left_vals[i as usize],
            };
        }
        let a = if i < 0 { 0.0 } else { vals[i as usize] };
        let b = if i + 1 < 0 { 0.0 } else { left_vals[(i + 1) as usize] };
        a * (1.0 - frac) + b * frac
    })
}

/// Fundamental solution of the linear retarded equation
/// `r'(t) = integral r(t + theta) mu(dtheta)`, `r(0) = 1`, `r = 0` on
/// `[-tau, 0)`. Order 2 in `dt` on smooth pieces.
pub fn fundamental_retarded(
    mu: &SignedMeasure,
    t_max: f64,
    dt: f64,
) -> Result<FundamentalSolution, Error> {
    let tau = mu.tau();
    let n = check_grid(tau, t_max, dt)?;
    let steps = (t_max / dt).ceil() as usize;
    let mut vals = vec![0.0; n + 1 + steps];
    vals[n] = 1.0;
    // r is continuous on (0, infinity); the only jump is the initial one.
    let mut left = vals.clone();
    left[n] = 0.0;
    for i in 0..steps {
        let idx = n + i;
        let f_now = apply_measure(mu, &vals, &left, idx, dt, GridSide::Right);
        vals[idx + 1] = vals[idx] + dt * f_now;
        left[idx + 1] = vals[idx + 1];
        let f_next = apply_measure(mu, &vals, &left, idx + 1, dt, GridSide::Left);
        vals[idx + 1] = vals[idx] + 0.5 * dt * (f_now + f_next);
        left[idx + 1] = vals[idx + 1];
    }
    Ok(FundamentalSolution { tau, dt, values: vals, left_values: left })
}

pub(crate) fn rho_mass_near_zero(rho: &SignedMeasure, dt: f64) -> f64 {
    let mut mass: f64 = rho
        .atoms()
        .iter()
        .filter(|&&(theta, _)| theta > -dt)
        .map(|&(_, w)| w.abs())
        .sum();
    for p in rho.density() {
        if p.end > -dt {
            mass += p.value.abs() * (p.end - p.start.max(-dt));
        }
    }
    mass
}

/// Solve `x = m_val + integral x-branch rho` where the rho-integral may
/// reference the unknown value at `idx` through the last grid cell.
/// Explicit when rho has no mass in `(-dt, 0]`; otherwise fixed-point
/// iteration whose contraction constant is the rho mass near zero.
fn recover_state(
    rho: &SignedMeasure,
    vals: &mut [f64],
    left_vals: &mut [f64],
    idx: usize,
    dt: f64,
    m_val: f64,
    side: GridSide,
    contraction: f64,
) -> Result<f64, Error> {
    let write = |vals: &mut [f64], left_vals: &mut [f64], x: f64| match side {
        GridSide::Right => vals[idx] = x,
        GridSide::Left => left_vals[idx] = x,
    };
    write(vals, left_vals, m_val);
    if contraction == 0.0 {
        let x = m_val + apply_measure(rho, vals, left_vals, idx, dt, side);
        write(vals, left_vals, x);
        return Ok(x);
    }
    if contraction >= 1.0 {
        return Err(Error::NeutralRecoveryFailure);
    }
    let mut x = m_val;
    for _ in 0..200 {
        write(vals, left_vals, x);
        let next = m_val + apply_measure(rho, vals, left_vals, idx, dt, side);
        if (next - x).abs() <= 1e-12 * (1.0 + next.abs()) {
            write(vals, left_vals, next);
            return Ok(next);
        }
        x = next;
    }
    Err(Error::NeutralRecoveryFailure)
}

/// Fundamental solution of the linear neutral equation
/// `d(r(t) - integral r(t+theta) rho(dtheta)) = (integral r(t+theta)
/// mu(dtheta)) dt` with `r(0) = 1`, `r = 0` on `[-tau, 0)`. Grid values at
/// discontinuities are right-limits.
pub fn fundamental_neutral(
    rho: &SignedMeasure,
    mu: &SignedMeasure,
    t_max: f64,
    dt: f64,
) -> Result<FundamentalSolution, Error> {
    if rho.is_zero() {
        return fundamental_retarded(mu, t_max, dt);
    }
    let tau = mu.tau();
    let n = check_grid(tau, t_max, dt)?;
    let steps = (t_max / dt).ceil() as usize;
    let contraction = rho_mass_near_zero(rho, dt);

    let mut vals = vec![0.0; n + 1 + steps];
    vals[n] = 1.0;
    let mut left = vals.clone();
    left[n] = 0.0;
    // M(0) from the initial history.
    let mut m_val = vals[n] - apply_measure(rho, &vals, &left, n, dt, GridSide::Right);
    for i in 0..steps {
        let idx = n + i;
        let f_now = apply_measure(mu, &vals, &left, idx, dt, GridSide::Right);
        let m_pred = m_val + dt * f_now;
        recover_state(rho, &mut vals, &mut left, idx + 1, dt, m_pred, GridSide::Right, contraction)?;
        recover_state(rho, &mut vals, &mut left, idx + 1, dt, m_pred, GridSide::Left, contraction)?;
        let f_next = apply_measure(mu, &vals, &left, idx + 1, dt, GridSide::Left);
        m_val += 0.5 * dt * (f_now + f_next);
        recover_state(rho, &mut vals, &mut left, idx + 1, dt, m_val, GridSide::Right, contraction)?;
        recover_state(rho, &mut vals, &mut left, idx + 1, dt, m_val, GridSide::Left, contraction)?;
    }
    Ok(FundamentalSolution { tau, dt, values: vals, left_values: left })
}

/// Exponential envelope `|r(t)| <= c e^{gamma t}`: `gamma` from a
/// log-linear least-squares fit of the peak envelope over windows of
/// length tau, `c` the smallest constant making the bound hold at every
/// grid point.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct DecayFit {
    pub c: f64,
    pub gamma: f64,
}

pub fn fit_decay(r: &FundamentalSolution) -> Result<DecayFit, Error> {
    let tau = r.tau();
    if r.horizon() < 5.0 * tau {
        return Err(Error::InvalidModel(format!(
            "decay fit needs T >= 5 tau, got T = {}",
            r.horizon()
        )));
    }
    let n = r.n_delay();
    let vals = &r.values()[n..]; // t >= 0
    let per_window = n.max(1);
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut window_start = 0;
    while window_start < vals.len() {
        let window_end = (window_start + per_window).min(vals.len());
        let (peak_at, peak) = vals[window_start..window_end]
            .iter()
            .enumerate()
            .fold((window_start, 0.0f64), |(at, m), (j, v)| {
                if v.abs() > m {
                    (window_start + j, v.abs())
                } else {
                    (at, m)
                }
            });
        if peak > 1e-280 {
            xs.push(peak_at as f64 * r.dt());
            ys.push(peak.ln());
        }
        window_start = window_end;
    }
    if xs.len() < 2 {
        // |r| underflowed everywhere past t = 0.
        return Ok(DecayFit { c: 1.0, gamma: f64::NEG_INFINITY });
    }
    let len = xs.len() as f64;
    let mean_x = xs.iter().sum::<f64>() / len;
    let mean_y = ys.iter().sum::<f64>() / len;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (x, y) in xs.iter().zip(&ys) {
        sxx += (x - mean_x).powi(2);
        sxy += (x - mean_x) * (y - mean_y);
    }
    let gamma = sxy / sxx;
    let mut c = 0.0f64;
    for (i, v) in vals.iter().enumerate() {
        let t = i as f64 * r.dt();
        c = c.max(v.abs() * (-gamma * t).exp());
    }
    let fit = DecayFit { c, gamma };
    debug_assert!(envelope_holds(r, &fit));
    Ok(fit)
}

fn envelope_holds(r: &FundamentalSolution, fit: &DecayFit) -> bool {
    r.times().zip(r.values()).all(|(t, v)| {
        t < 0.0 || v.abs() <= fit.c * (fit.gamma * t).exp() * (1.0 + 1e-12) + 1e-300
    })
}
