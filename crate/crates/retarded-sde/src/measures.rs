//! Finite signed measures on `[-tau, 0]` and segment paths.
//!
//! A [`SignedMeasure`] is a finite combination of atoms plus an optional
//! piecewise-constant density; this covers Dirac combinations like
//! `a*delta_0 + b*delta_{-1}` as well as Lebesgue densities. A [`Segment`]
//! is a path on `[-tau, 0]` sampled on a uniform grid with linear
//! interpolation in between.

use num_complex::Complex64;

use crate::error::Error;

/// One piece of a piecewise-constant density: `value` mass per unit time on
/// `[start, end]`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DensityPiece {
    pub start: f64,
    pub end: f64,
    pub value: f64,
}

/// A finite signed measure on `[-tau, 0]`: atoms plus an optional
/// piecewise-constant density.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SignedMeasure {
    tau: f64,
    /// `(theta, weight)` pairs with distinct `theta` in `[-tau, 0]`.
    atoms: Vec<(f64, f64)>,
    density: Vec<DensityPiece>,
}

impl SignedMeasure {
    pub fn new(
        tau: f64,
        atoms: Vec<(f64, f64)>,
        density: Vec<DensityPiece>,
    ) -> Result<Self, Error> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::InvalidMeasure(format!("tau must be positive, got {tau}")));
        }
        for &(theta, weight) in &atoms {
            if !(-tau..=0.0).contains(&theta) {
                return Err(Error::InvalidMeasure(format!(
                    "atom location {theta} outside [-{tau}, 0]"
                )));
            }
            if !weight.is_finite() {
                return Err(Error::InvalidMeasure(format!("non-finite atom weight {weight}")));
            }
        }
        for i in 0..atoms.len() {
            for j in (i + 1)..atoms.len() {
                if atoms[i].0 == atoms[j].0 {
                    return Err(Error::InvalidMeasure(format!(
                        "duplicate atom location {}",
                        atoms[i].0
                    )));
                }
            }
        }
        for p in &density {
            if !(p.start < p.end) || p.start < -tau || p.end > 0.0 || !p.value.is_finite() {
                return Err(Error::InvalidMeasure(format!(
                    "bad density piece {} on [{}, {}] for tau {tau}",
                    p.value, p.start, p.end
                )));
            }
        }
        Ok(Self { tau, atoms, density })
    }

    /// The zero measure on `[-tau, 0]`.
    pub fn zero(tau: f64) -> Self {
        Self { tau, atoms: Vec::new(), density: Vec::new() }
    }

    /// A single atom `weight * delta_theta`.
    pub fn atom(tau: f64, theta: f64, weight: f64) -> Result<Self, Error> {
        Self::new(tau, vec![(theta, weight)], Vec::new())
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn atoms(&self) -> &[(f64, f64)] {
        &self.atoms
    }

    pub fn density(&self) -> &[DensityPiece] {
        &self.density
    }

    pub fn is_zero(&self) -> bool {
        self.atoms.is_empty() && self.density.is_empty()
    }

    /// Total variation `sum |c_k| + integral |density|`.
    pub fn total_variation(&self) -> f64 {
        let atom_part: f64 = self.atoms.iter().map(|&(_, w)| w.abs()).sum();
        let density_part: f64 = self
            .density
            .iter()
            .map(|p| p.value.abs() * (p.end - p.start))
            .sum();
        atom_part + density_part
    }

    /// `integral f(theta) m(dtheta)`: atoms exactly, density pieces by
    /// composite trapezoid.
    pub fn integrate_against(&self, mut f: impl FnMut(f64) -> f64) -> f64 {
        let mut total: f64 = self.atoms.iter().map(|&(theta, w)| w * f(theta)).sum();
        for p in &self.density {
            total += p.value * trapezoid(&mut f, p.start, p.end, DENSITY_QUAD_POINTS);
        }
        total
    }

    /// Laplace transform `integral e^{lambda*theta} m(dtheta)`, exact for
    /// atoms and (in closed form) for piecewise-constant densities.
    pub fn laplace(&self, lambda: Complex64) -> Complex64 {
        let mut total: Complex64 = self
            .atoms
            .iter()
            .map(|&(theta, w)| w * (lambda * theta).exp())
            .sum();
        for p in &self.density {
            total += p.value * exp_integral(lambda, p.start, p.end);
        }
        total
    }

    /// `integral theta * e^{lambda*theta} m(dtheta)`, the lambda-derivative
    /// of [`SignedMeasure::laplace`]. Used by Newton refinement of
    /// characteristic roots.
    pub fn laplace_theta(&self, lambda: Complex64) -> Complex64 {
        let mut total: Complex64 = self
            .atoms
            .iter()
            .map(|&(theta, w)| w * theta * (lambda * theta).exp())
            .sum();
        for p in &self.density {
            total += p.value * theta_exp_integral(lambda, p.start, p.end);
        }
        total
    }
}

const DENSITY_QUAD_POINTS: usize = 256;

fn trapezoid(f: &mut impl FnMut(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut sum = 0.5 * (f(a) + f(b));
    for i in 1..n {
        sum += f(a + i as f64 * h);
    }
    sum * h
}

/// `integral_a^b e^{lambda*s} ds`, stable near `lambda = 0`.
fn exp_integral(lambda: Complex64, a: f64, b: f64) -> Complex64 {
    if lambda.norm() < 1e-8 {
        // Second-order expansion in lambda.
        let len = b - a;
        return Complex64::new(len, 0.0)
            + lambda * (b * b - a * a) / 2.0
            + lambda * lambda * (b * b * b - a * a * a) / 6.0;
    }
    ((lambda * b).exp() - (lambda * a).exp()) / lambda
}

/// `integral_a^b s * e^{lambda*s} ds`, stable near `lambda = 0`.
fn theta_exp_integral(lambda: Complex64, a: f64, b: f64) -> Complex64 {
    if lambda.norm() < 1e-8 {
        return Complex64::new((b * b - a * a) / 2.0, 0.0)
            + lambda * (b * b * b - a * a * a) / 3.0;
    }
    let prim = |s: f64| (lambda * s).exp() * (s / lambda - 1.0 / (lambda * lambda));
    prim(b) - prim(a)
}

/// An initial-condition path on `[-tau, 0]` on a uniform grid, linearly
/// interpolated off-grid. `derivative_values` is only needed by the neutral
/// variation-of-constants formula.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    tau: f64,
    values: Vec<f64>,
    derivative_values: Option<Vec<f64>>,
}

impl Segment {
    pub fn new(tau: f64, values: Vec<f64>) -> Result<Self, Error> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::InvalidSegment(format!("tau must be positive, got {tau}")));
        }
        if values.len() < 2 {
            return Err(Error::InvalidSegment(
                "segment needs at least 2 grid values".into(),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidSegment("non-finite segment value".into()));
        }
        Ok(Self { tau, values, derivative_values: None })
    }

    pub fn with_derivative(mut self, derivative_values: Vec<f64>) -> Result<Self, Error> {
        if derivative_values.len() != self.values.len() {
            return Err(Error::InvalidSegment(
                "derivative grid must match value grid".into(),
            ));
        }
        self.derivative_values = Some(derivative_values);
        Ok(self)
    }

    /// Constant segment `value` on `n + 1` grid points.
    pub fn constant(tau: f64, n: usize, value: f64) -> Self {
        let mut s = Self::new(tau, vec![value; n + 1]).expect("constant segment");
        s.derivative_values = Some(vec![0.0; n + 1]);
        s
    }

    /// Sample `f` (and optionally `f'`) on the uniform grid.
    pub fn from_fn(tau: f64, n: usize, f: impl Fn(f64) -> f64) -> Self {
        let values = (0..=n).map(|i| f(-tau + i as f64 * tau / n as f64)).collect();
        Self::new(tau, values).expect("sampled segment")
    }

    pub fn from_fn_with_derivative(
        tau: f64,
        n: usize,
        f: impl Fn(f64) -> f64,
        df: impl Fn(f64) -> f64,
    ) -> Self {
        let grid = |i: usize| -tau + i as f64 * tau / n as f64;
        let values = (0..=n).map(|i| f(grid(i))).collect();
        let derivs = (0..=n).map(|i| df(grid(i))).collect();
        Self::new(tau, values)
            .and_then(|s| s.with_derivative(derivs))
            .expect("sampled segment")
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// Number of grid intervals.
    pub fn n(&self) -> usize {
        self.values.len() - 1
    }

    pub fn dt(&self) -> f64 {
        self.tau / self.n() as f64
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn derivative_values(&self) -> Option<&[f64]> {
        self.derivative_values.as_deref()
    }

    /// Linear interpolation; exact at grid points.
    pub fn eval(&self, theta: f64) -> Result<f64, Error> {
        interp_grid(&self.values, self.tau, theta)
    }

    /// Interpolated derivative path; requires `derivative_values`.
    pub fn eval_derivative(&self, theta: f64) -> Result<f64, Error> {
        let d = self
            .derivative_values
            .as_ref()
            .ok_or(Error::MissingDerivative)?;
        interp_grid(d, self.tau, theta)
    }

    /// `max_i |value_i|`, exact for the piecewise-linear representative.
    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

fn interp_grid(values: &[f64], tau: f64, theta: f64) -> Result<f64, Error> {
    let n = values.len() - 1;
    let dt = tau / n as f64;
    // Allow a half-ulp of slack at the endpoints.
    let slack = 1e-9 * tau;
    if theta < -tau - slack || theta > slack {
        return Err(Error::OutOfDomain { theta, tau });
    }
    let x = ((theta + tau) / dt).clamp(0.0, n as f64);
    let i = (x.floor() as usize).min(n - 1);
    let frac = x - i as f64;
    Ok(values[i] * (1.0 - frac) + values[i + 1] * frac)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn total_variation_unit_atom() {
        let m = SignedMeasure::atom(1.0, 0.0, 1.0).unwrap();
        assert_eq!(m.total_variation(), 1.0);
    }

    #[test]
    fn total_variation_sums_abs_weights() {
        let m = SignedMeasure::new(1.0, vec![(0.0, -1.0), (-1.0, 0.5)], vec![]).unwrap();
        assert_eq!(m.total_variation(), 1.5);
    }

    #[test]
    fn total_variation_example_neutral_measure() {
        // rho = -(1/3) delta_{-1}: Var = 1/3 < 1/2.
        let rho = SignedMeasure::atom(1.0, -1.0, -1.0 / 3.0).unwrap();
        assert_relative_eq!(rho.total_variation(), 1.0 / 3.0);
        assert!(rho.total_variation() < 0.5);
    }

    #[test]
    fn integrate_against_atoms() {
        let m = SignedMeasure::atom(1.0, -1.0, 1.0).unwrap();
        assert_eq!(m.integrate_against(|_| 3.0), 3.0);

        let m = SignedMeasure::new(1.0, vec![(0.0, 1.0), (-1.0, 2.0)], vec![]).unwrap();
        assert_eq!(m.integrate_against(|theta| theta), -2.0);
    }

    #[test]
    fn integrate_against_lebesgue_density() {
        let m = SignedMeasure::new(
            1.0,
            vec![],
            vec![DensityPiece { start: -1.0, end: 0.0, value: 1.0 }],
        )
        .unwrap();
        // integral_{-1}^0 theta dtheta = -1/2 (trapezoid is exact for linear f).
        assert_relative_eq!(m.integrate_against(|theta| theta), -0.5, epsilon = 1e-12);
        // Smooth non-polynomial integrand stays within quadrature tolerance.
        let exact = 1.0 - (-1.0f64).exp();
        assert_relative_eq!(m.integrate_against(f64::exp), exact, epsilon = 1e-5);
    }

    #[test]
    fn laplace_matches_quadrature_on_density() {
        let m = SignedMeasure::new(
            1.0,
            vec![(-0.5, 2.0)],
            vec![DensityPiece { start: -1.0, end: -0.25, value: -1.5 }],
        )
        .unwrap();
        for &lam in &[
            Complex64::new(0.7, -1.3),
            Complex64::new(-2.0, 4.0),
            Complex64::new(0.0, 0.0),
            Complex64::new(1e-10, 0.0),
        ] {
            let re = m.integrate_against(|theta| (lam * theta).exp().re);
            let im = m.integrate_against(|theta| (lam * theta).exp().im);
            let l = m.laplace(lam);
            // Closed form vs 256-point trapezoid: trapezoid error dominates.
            assert_relative_eq!(l.re, re, epsilon = 1e-4, max_relative = 1e-4);
            assert_relative_eq!(l.im, im, epsilon = 1e-4, max_relative = 1e-4);
        }
    }

    #[test]
    fn laplace_theta_is_derivative_in_lambda() {
        let m = SignedMeasure::new(
            1.0,
            vec![(-1.0, -1.0)],
            vec![DensityPiece { start: -0.75, end: 0.0, value: 0.8 }],
        )
        .unwrap();
        let lam = Complex64::new(-0.4, 0.9);
        let h = 1e-6;
        let fd = (m.laplace(lam + h) - m.laplace(lam - h)) / (2.0 * h);
        assert!((fd - m.laplace_theta(lam)).norm() < 1e-6);
    }

    #[test]
    fn rejects_bad_measures() {
        assert!(SignedMeasure::atom(1.0, -2.0, 1.0).is_err());
        assert!(SignedMeasure::new(1.0, vec![(0.0, 1.0), (0.0, 2.0)], vec![]).is_err());
        assert!(SignedMeasure::new(-1.0, vec![], vec![]).is_err());
        assert!(SignedMeasure::new(
            1.0,
            vec![],
            vec![DensityPiece { start: 0.0, end: -1.0, value: 1.0 }]
        )
        .is_err());
    }

    #[test]
    fn segment_constant_eval() {
        let s = Segment::constant(1.0, 10, 2.0);
        for &theta in &[-1.0, -0.77, -0.5, 0.0] {
            assert_eq!(s.eval(theta).unwrap(), 2.0);
        }
        assert_eq!(s.sup_norm(), 2.0);
    }

    #[test]
    fn segment_linear_midpoint() {
        let s = Segment::new(1.0, vec![-1.0, 1.0]).unwrap();
        assert_relative_eq!(s.eval(-0.5).unwrap(), 0.0);
    }

    #[test]
    fn segment_interpolation_error_bound() {
        let s = Segment::from_fn(1.0, 100, |theta| (std::f64::consts::PI * theta).sin());
        let got = s.eval(-0.25).unwrap();
        let exact = (-std::f64::consts::FRAC_PI_4).sin();
        assert!((got - exact).abs() < 1e-3);
    }

    #[test]
    fn segment_rejects_out_of_domain() {
        let s = Segment::constant(1.0, 4, 1.0);
        assert!(s.eval(-1.5).is_err());
        assert!(s.eval(0.5).is_err());
    }

    #[test]
    fn derivative_requires_values() {
        let s = Segment::constant(1.0, 4, 1.0);
        assert!(s.eval_derivative(-0.5).is_ok());
        let bare = Segment::new(1.0, vec![0.0, 1.0]).unwrap();
        assert!(matches!(bare.eval_derivative(-0.5), Err(Error::MissingDerivative)));
    }

    proptest! {
        /// |integral f dm| <= Var(m) * sup |f| for piecewise-linear f.
        #[test]
        fn integrate_bounded_by_variation(
            weights in proptest::collection::vec(-3.0f64..3.0, 1..4),
            fvals in proptest::collection::vec(-5.0f64..5.0, 5),
            dens in -2.0f64..2.0,
        ) {
            let atoms: Vec<(f64, f64)> = weights
                .iter()
                .enumerate()
                .map(|(i, &w)| (-(i as f64) * 0.25, w))
                .collect();
            let m = SignedMeasure::new(
                1.0,
                atoms,
                vec![DensityPiece { start: -1.0, end: 0.0, value: dens }],
            ).unwrap();
            let seg = Segment::new(1.0, fvals.clone()).unwrap();
            let sup = seg.sup_norm();
            let val = m.integrate_against(|theta| seg.eval(theta).unwrap());
            prop_assert!(val.abs() <= m.total_variation() * sup + 1e-9);
        }

        /// integrate_against is linear in f.
        #[test]
        fn integrate_linear_in_f(
            a in -3.0f64..3.0,
            b in -3.0f64..3.0,
            f1 in proptest::collection::vec(-5.0f64..5.0, 9),
            f2 in proptest::collection::vec(-5.0f64..5.0, 9),
        ) {
            let m = SignedMeasure::new(
                2.0,
                vec![(0.0, 1.0), (-2.0, -0.5), (-0.7, 2.0)],
                vec![DensityPiece { start: -1.5, end: -0.5, value: 1.0 }],
            ).unwrap();
            let s1 = Segment::new(2.0, f1).unwrap();
            let s2 = Segment::new(2.0, f2).unwrap();
            let combo = m.integrate_against(|t| {
                a * s1.eval(t).unwrap() + b * s2.eval(t).unwrap()
            });
            let separate = a * m.integrate_against(|t| s1.eval(t).unwrap())
                + b * m.integrate_against(|t| s2.eval(t).unwrap());
            prop_assert!((combo - separate).abs() < 1e-8 * (1.0 + separate.abs()));
        }

        /// Grid-point evaluation is exact.
        #[test]
        fn segment_exact_at_grid(vals in proptest::collection::vec(-10.0f64..10.0, 2..20)) {
            let s = Segment::new(1.0, vals.clone()).unwrap();
            let n = s.n();
            for (i, &v) in vals.iter().enumerate() {
                let theta = -1.0 + i as f64 / n as f64;
                prop_assert!((s.eval(theta).unwrap() - v).abs() < 1e-12);
            }
            let max = vals.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            prop_assert_eq!(s.sup_norm(), max);
        }
    }
}
