//! Empirical stationarity diagnostics: synchronous-coupling contraction
//! curves, segment moment boundedness verdicts, finite-dimensional
//! marginal laws with Wasserstein-1 comparisons, and the combined
//! convergence test.

use crate::error::Error;
use crate::measures::Segment;
use crate::simulate::{generate_increments, run_with_increments, ModelSpec, PathGrid};
use rayon::prelude::*;

/// Parallel sum of per-replica curves with a schedule-independent result:
/// replicas are grouped into fixed chunks, each chunk is summed in replica
/// order, and the ordered chunk sums are folded sequentially. Floating
/// point addition order therefore never depends on thread timing, which
/// keeps repeated runs byte-identical.
fn sum_replica_curves<F>(replicas: u64, len: usize, per_replica: F) -> Result<Vec<f64>, Error>
where
    F: Fn(u64) -> Result<Vec<f64>, Error> + Sync,
{
    const CHUNK: u64 = 32;
    let chunks = replicas.div_ceil(CHUNK);
    let partials: Vec<Vec<f64>> = (0..chunks)
        .into_par_iter()
        .map(|c| -> Result<Vec<f64>, Error> {
            let mut acc = vec![0.0; len];
            for rep in c * CHUNK..((c + 1) * CHUNK).min(replicas) {
                let v = per_replica(rep)?;
                for (a, x) in acc.iter_mut().zip(&v) {
                    *a += x;
                }
            }
            Ok(acc)
        })
        .collect::<Result<Vec<_>, Error>>()?;
    let mut total = vec![0.0; len];
    for part in partials {
        for (a, x) in total.iter_mut().zip(&part) {
            *a += x;
        }
    }
    Ok(total)
}

/// Finite-dimensional proxy for the law of the segment process at time
/// `t`: one row per replica, one column per offset.
#[derive(Debug, Clone)]
pub struct EmpiricalLaw {
    pub t: f64,
    pub offsets: Vec<f64>,
    /// replica-major: `samples[replica][offset]`.
    pub samples: Vec<Vec<f64>>,
}

/// Mean-square gap of two solutions driven by the same noise, with a
/// log-linear rate fitted past the initial transient.
#[derive(Debug, Clone, serde::Serialize)]
pub struct ContractionReport {
    pub times: Vec<f64>,
    pub msd: Vec<f64>,
    pub fitted_rate: f64,
    /// Window `[t_lo, t_hi]` the rate was fitted over.
    pub fitted_at: (f64, f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum Verdict {
    Bounded,
    Unbounded,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct MomentReport {
    pub times: Vec<f64>,
    pub moments: Vec<f64>,
    pub running_max: Vec<f64>,
    pub verdict: Verdict,
}

/// Simulates `X(.; xi)` and `X(.; eta)` on identical per-replica noise
/// (synchronous coupling) and reports the sample mean-square difference
/// curve with its fitted exponential rate.
pub fn coupling_contraction(
    model: &ModelSpec,
    xi: &Segment,
    eta: &Segment,
    t_max: f64,
    dt: f64,
    replicas: u64,
    seed: u64,
) -> Result<ContractionReport, Error> {
    model.validate()?;
    let steps = (t_max / dt).ceil() as usize;
    let n = (model.tau() / dt).round() as usize;
    let sum_sq = sum_replica_curves(replicas, steps + 1, |rep| {
        let inc = generate_increments(&model.noise, dt, steps, seed, rep)?;
        let a = run_with_increments(model, xi, t_max, dt, &inc)?;
        let b = run_with_increments(model, eta, t_max, dt, &inc)?;
        Ok(a.values[n..]
            .iter()
            .zip(&b.values[n..])
            .map(|(x, y)| (x - y).powi(2))
            .collect())
    })?;
    let msd: Vec<f64> = sum_sq.iter().map(|s| s / replicas as f64).collect();
    let times: Vec<f64> = (0..=steps).map(|i| i as f64 * dt).collect();
    let window = (2.0 * model.tau(), t_max);
    let fitted_rate = fit_log_rate(&times, &msd, window.0, n.max(1));
    Ok(ContractionReport { times, msd, fitted_rate, fitted_at: window })
}

/// Log-linear least-squares slope of the peak envelope of `ys` (peaks
/// over windows of `per_window` points) restricted to `t >= t_lo`.
/// Returns negative infinity when the curve has no positive mass
/// (exact-zero gap).
fn fit_log_rate(times: &[f64], ys: &[f64], t_lo: f64, per_window: usize) -> f64 {
    let mut xs = Vec::new();
    let mut ls = Vec::new();
    let mut start = 0;
    while start < ys.len() {
        let end = (start + per_window).min(ys.len());
        let mut peak_at = start;
        let mut peak = 0.0f64;
        for j in start..end {
            if ys[j].abs() > peak {
                peak = ys[j].abs();
                peak_at = j;
            }
        }
        if peak > 1e-280 && times[peak_at] >= t_lo {
            xs.push(times[peak_at]);
            ls.push(peak.ln());
        }
        start = end;
    }
    if xs.len() < 2 {
        return f64::NEG_INFINITY;
    }
    let len = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / len;
    let my = ls.iter().sum::<f64>() / len;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (x, y) in xs.iter().zip(&ls) {
        sxx += (x - mx).powi(2);
        sxy += (x - mx) * (y - my);
    }
    if sxx == 0.0 {
        return f64::NEG_INFINITY;
    }
    sxy / sxx
}

/// Sample `E ||X_t||_infty^p` along the horizon with a running-max
/// stabilization verdict: `Unbounded` when the running max still climbs
/// over the last quarter of the horizon faster than `1e-3 * scale` per
/// unit time.
pub fn segment_moment_bound(
    model: &ModelSpec,
    xi: &Segment,
    t_max: f64,
    dt: f64,
    replicas: u64,
    seed: u64,
    p: u32,
) -> Result<MomentReport, Error> {
    model.validate()?;
    if !(p == 1 || p == 2) {
        return Err(Error::InvalidModel(format!("moment order must be 1 or 2, got {p}")));
    }
    if p == 2 && !model.noise.second_moment_finite() {
        return Err(Error::InvalidNoise(
            "second-moment diagnostics need square-integrable noise".into(),
        ));
    }
    let steps = (t_max / dt).ceil() as usize;
    let n = (model.tau() / dt).round() as usize;
    let sums = sum_replica_curves(replicas, steps + 1, |rep| {
        let inc = generate_increments(&model.noise, dt, steps, seed, rep)?;
        let path = run_with_increments(model, xi, t_max, dt, &inc)?;
        Ok(sliding_sup(&path.values, n)
            .into_iter()
            .map(|sup| sup.powi(p as i32))
            .collect())
    })?;
    let moments: Vec<f64> = sums.iter().map(|s| s / replicas as f64).collect();
    let times: Vec<f64> = (0..=steps).map(|i| i as f64 * dt).collect();
    let mut running_max = Vec::with_capacity(moments.len());
    let mut m = 0.0f64;
    for &v in &moments {
        m = m.max(v);
        running_max.push(m);
    }
    let verdict = boundedness_verdict(&times, &running_max);
    Ok(MomentReport { times, moments, running_max, verdict })
}

/// Sup of `|values|` over each trailing window of `n + 1` points, emitted
/// from index `n` on (monotone-deque sliding maximum, O(len)).
pub(crate) fn sliding_sup(values: &[f64], n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len() - n);
    let mut deque: std::collections::VecDeque<usize> = std::collections::VecDeque::new();
    for i in 0..values.len() {
        let v = values[i].abs();
        while deque.back().is_some_and(|&j| values[j].abs() <= v) {
            deque.pop_back();
        }
        deque.push_back(i);
        if *deque.front().unwrap() + n + 1 <= i {
            deque.pop_front();
        }
        if i >= n {
            out.push(values[*deque.front().unwrap()].abs());
        }
    }
    out
}

pub(crate) fn boundedness_verdict(times: &[f64], running_max: &[f64]) -> Verdict {
    let len = times.len();
    let start = len - len / 4;
    let scale = running_max.last().copied().unwrap_or(0.0).max(1e-12);
    if !scale.is_finite() {
        return Verdict::Unbounded;
    }
    // Least-squares slope of the running max over the last quarter.
    let xs = &times[start..];
    let ys = &running_max[start..];
    let k = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxx += (x - mx).powi(2);
        sxy += (x - mx) * (y - my);
    }
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    if slope > 1e-3 * scale {
        Verdict::Unbounded
    } else {
        Verdict::Bounded
    }
}

/// Extracts the marginal vector `X(t + theta_j)` per replica.
pub fn empirical_marginal_law(
    paths: &[PathGrid],
    t: f64,
    offsets: &[f64],
) -> Result<EmpiricalLaw, Error> {
    if paths.is_empty() {
        return Err(Error::EmptySamples);
    }
    let tau = paths[0].tau;
    for &theta in offsets {
        if t + theta < -tau - 1e-12 {
            return Err(Error::OutOfDomain { theta, tau });
        }
    }
    let samples = paths
        .iter()
        .map(|p| offsets.iter().map(|&theta| p.at_time(t + theta)).collect())
        .collect::<Result<Vec<Vec<f64>>, Error>>()?;
    Ok(EmpiricalLaw { t, offsets: offsets.to_vec(), samples })
}

/// One-dimensional W1 between the two laws at a shared offset: mean
/// absolute difference of sorted samples (quantile-resampled to the
/// smaller replica count when they differ).
pub fn wasserstein1(a: &EmpiricalLaw, b: &EmpiricalLaw, offset: f64) -> Result<f64, Error> {
    let col = |law: &EmpiricalLaw| -> Result<Vec<f64>, Error> {
        let j = law
            .offsets
            .iter()
            .position(|&o| (o - offset).abs() < 1e-9)
            .ok_or(Error::OutOfDomain { theta: offset, tau: f64::NAN })?;
        Ok(law.samples.iter().map(|row| row[j]).collect())
    };
    let xs = col(a)?;
    let ys = col(b)?;
    wasserstein1_samples(&xs, &ys)
}

/// W1 of two raw sample sets.
pub fn wasserstein1_samples(xs: &[f64], ys: &[f64]) -> Result<f64, Error> {
    if xs.is_empty() || ys.is_empty() {
        return Err(Error::EmptySamples);
    }
    let mut xs = xs.to_vec();
    let mut ys = ys.to_vec();
    xs.sort_by(|p, q| p.partial_cmp(q).unwrap());
    ys.sort_by(|p, q| p.partial_cmp(q).unwrap());
    let k = xs.len().min(ys.len());
    let at = |v: &[f64], i: usize| v[i * v.len() / k];
    let mut acc = 0.0;
    for i in 0..k {
        acc += (at(&xs, i) - at(&ys, i)).abs();
    }
    Ok(acc / k as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum Trend {
    Converging,
    NotConverging,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct ConvergenceReport {
    pub checkpoints: Vec<f64>,
    /// W1 between consecutive-checkpoint laws from xi.
    pub self_distance: Vec<f64>,
    /// W1 between the xi- and eta-laws at each checkpoint.
    pub cross_distance: Vec<f64>,
    /// Coupling mean-square gap at each checkpoint.
    pub msd: Vec<f64>,
    pub floor: f64,
    pub self_verdict: Trend,
    pub cross_verdict: Trend,
    pub msd_verdict: Trend,
    pub contraction_rate: f64,
}

/// Verdict rule shared by the three curves: converged once the tail sits
/// at the statistical floor, or clearly decayed relative to its start.
fn trend_verdict(curve: &[f64], floor: f64) -> Trend {
    if curve.is_empty() {
        return Trend::NotConverging;
    }
    let last = *curve.last().unwrap();
    let first = curve[0];
    if last <= 3.0 * floor || (first > 0.0 && last <= 0.2 * first) {
        Trend::Converging
    } else {
        Trend::NotConverging
    }
}

/// Runs the coupled simulation once and derives the three convergence
/// curves of the stationarity check: self-convergence of the law from
/// `xi`, forgetting of the initial condition (`xi` vs `eta`), and the
/// pathwise contraction curve.
pub fn stationarity_convergence_test(
    model: &ModelSpec,
    xi: &Segment,
    eta: &Segment,
    checkpoints: &[f64],
    dt: f64,
    replicas: u64,
    seed: u64,
) -> Result<ConvergenceReport, Error> {
    model.validate()?;
    if checkpoints.is_empty() || checkpoints.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidModel("checkpoints must be strictly increasing".into()));
    }
    let t_max = *checkpoints.last().unwrap();
    let steps = (t_max / dt).ceil() as usize;
    let results: Vec<(Vec<f64>, Vec<f64>)> = (0..replicas)
        .into_par_iter()
        .map(|rep| -> Result<(Vec<f64>, Vec<f64>), Error> {
            let inc = generate_increments(&model.noise, dt, steps, seed, rep)?;
            let a = run_with_increments(model, xi, t_max, dt, &inc)?;
            let b = run_with_increments(model, eta, t_max, dt, &inc)?;
            let xa = checkpoints
                .iter()
                .map(|&t| a.at_time(t))
                .collect::<Result<Vec<f64>, Error>>()?;
            let xb = checkpoints
                .iter()
                .map(|&t| b.at_time(t))
                .collect::<Result<Vec<f64>, Error>>()?;
            Ok((xa, xb))
        })
        .collect::<Result<Vec<_>, Error>>()?;
    let column = |which: usize, k: usize| -> Vec<f64> {
        results
            .iter()
            .map(|(xa, xb)| if which == 0 { xa[k] } else { xb[k] })
            .collect()
    };
    let floor = 2.0 / (replicas as f64).sqrt();
    let mut self_distance = Vec::new();
    for k in 1..checkpoints.len() {
        self_distance.push(wasserstein1_samples(&column(0, k - 1), &column(0, k))?);
    }
    let mut cross_distance = Vec::new();
    let mut msd = Vec::new();
    for k in 0..checkpoints.len() {
        cross_distance.push(wasserstein1_samples(&column(0, k), &column(1, k))?);
        let gap: f64 = results
            .iter()
            .map(|(xa, xb)| (xa[k] - xb[k]).powi(2))
            .sum::<f64>()
            / replicas as f64;
        msd.push(gap);
    }
    let contraction_rate = fit_log_rate(checkpoints, &msd, 2.0 * model.tau(), 1);
    Ok(ConvergenceReport {
        checkpoints: checkpoints.to_vec(),
        self_verdict: trend_verdict(&self_distance, floor),
        cross_verdict: trend_verdict(&cross_distance, floor),
        // The msd curve is quadratic in the gap; compare against the
        // squared floor so the scales match.
        msd_verdict: trend_verdict(&msd, floor * floor),
        self_distance,
        cross_distance,
        msd,
        floor,
        contraction_rate,
    })
}
