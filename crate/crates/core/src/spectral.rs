//! Contour-integral machinery shared by the transition densities and the
//! correlation kernel.
//!
//! Everything here revolves around two rational families attached to a rate
//! field lambda:
//!
//! ```text
//!   p_x(w)   = prod_{k=0}^{x-1} (lambda(k) - w) / lambda(k)      (degree-x polynomial, p_0 = 1)
//!   psi_x(w) = prod_{k=0}^{x}   lambda(k) / (lambda(k) - w)      (poles at lambda(0), .., lambda(x))
//! ```
//!
//! so `psi_x(w) * p_{x+1}(w) = 1` identically. Closed-contour integrals of
//! `psi * polynomial * exp(-t w) * w^power` are evaluated two independent
//! ways: a residue sum when the enclosed rates are pairwise distinct, and
//! trapezoidal quadrature on a circle otherwise. The trapezoid rule on a
//! circle converges geometrically in the node count for integrands analytic
//! in a neighbourhood of the contour, so node doubling with a cap is enough.

use num_complex::Complex64;
use thiserror::Error;

use crate::rate_field::RateField;

/// Absolute tolerance on successive quadrature refinements.
pub const DEFAULT_QUAD_TOL: f64 = 1e-12;
/// Node count the role contours start from.
pub const DEFAULT_INITIAL_NODES: usize = 256;
/// Hard cap on quadrature nodes before giving up.
pub const DEFAULT_MAX_NODES: usize = 16384;
/// Contraction factor 1/R used by `Contour::distant`: on that circle
/// |lambda/(lambda - w)| <= 1/R for every rate.
pub const DEFAULT_CONTRACTION: f64 = 0.25;

#[derive(Debug, Error, PartialEq)]
pub enum SpectralError {
    #[error("evaluation point {w} hits the pole at rate site {site}")]
    PoleHit { w: Complex64, site: usize },
    #[error("quadrature did not converge: {nodes} nodes, last refinement delta {last_delta:e}")]
    NoConvergence { nodes: usize, last_delta: f64 },
    #[error("rates in sites {lo}..={hi} are not pairwise distinct; residue path unavailable")]
    RepeatedRates { lo: usize, hi: usize },
    #[error("telescoping bound needs sup |lambda/(lambda-w)| < 1, got {factor}")]
    ContractionViolated { factor: f64 },
    #[error("coordinates must be strictly increasing")]
    NotAChamberPoint,
    #[error("contour invalid: {reason}")]
    BadContour { reason: String },
}

/// Degree-x polynomial p_x at a complex point.
pub fn p_poly(f: &RateField, x: usize, w: Complex64) -> Complex64 {
    let mut acc = Complex64::new(1.0, 0.0);
    for k in 0..x {
        let l = f.rate(k);
        acc *= (l - w) / l;
    }
    acc
}

/// psi_x at a complex point; errors if w collides with an enclosed rate.
pub fn psi_fn(f: &RateField, x: usize, w: Complex64) -> Result<Complex64, SpectralError> {
    let mut acc = Complex64::new(1.0, 0.0);
    for k in 0..=x {
        let l = f.rate(k);
        if (w - l).norm() <= 1e-12 * l {
            return Err(SpectralError::PoleHit { w, site: k });
        }
        acc *= l / (l - w);
    }
    Ok(acc)
}

/// Circle contour with an initial quadrature resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct Contour {
    pub center: Complex64,
    pub radius: f64,
    pub nodes: usize,
}

impl Contour {
    pub fn new(center: Complex64, radius: f64, nodes: usize) -> Result<Self, SpectralError> {
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(SpectralError::BadContour { reason: format!("radius {radius}") });
        }
        if nodes < 8 || nodes % 2 != 0 {
            return Err(SpectralError::BadContour {
                reason: format!("nodes {nodes}, need an even count >= 8"),
            });
        }
        Ok(Contour { center, radius, nodes })
    }

    /// Circle enclosing 0 and every rate: center M/2, radius M/2 + s/2.
    /// Margin to the nearest enclosed singularity is at least s/2.
    pub fn around_rates(f: &RateField) -> Self {
        let m = f.sup_rate();
        let s = f.inf_rate();
        Contour {
            center: Complex64::new(m / 2.0, 0.0),
            radius: m / 2.0 + s / 2.0,
            nodes: DEFAULT_INITIAL_NODES,
        }
    }

    /// Small circle around the origin excluding every rate: radius s/2.
    pub fn around_origin(f: &RateField) -> Self {
        Contour {
            center: Complex64::new(0.0, 0.0),
            radius: f.inf_rate() / 2.0,
            nodes: DEFAULT_INITIAL_NODES,
        }
    }

    /// Origin-centered circle so large that |lambda/(lambda - w)| <= q < 1 on
    /// it for every rate lambda: radius M (1/q + 1).
    pub fn distant(f: &RateField, q: f64) -> Self {
        assert!(q > 0.0 && q < 1.0, "contraction factor must lie in (0,1)");
        let m = f.sup_rate();
        Contour {
            center: Complex64::new(0.0, 0.0),
            radius: m * (1.0 / q + 1.0),
            nodes: DEFAULT_INITIAL_NODES,
        }
    }

    pub fn with_nodes(mut self, nodes: usize) -> Self {
        self.nodes = nodes.max(8);
        if self.nodes % 2 != 0 {
            self.nodes += 1;
        }
        self
    }

    pub fn encloses(&self, p: Complex64) -> bool {
        (p - self.center).norm() < self.radius
    }

    pub fn point(&self, theta: f64) -> Complex64 {
        self.center + self.radius * Complex64::new(theta.cos(), theta.sin())
    }
}

/// Refinement policy for trapezoidal contour quadrature.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureSettings {
    pub tol: f64,
    pub max_nodes: usize,
    /// Starting grid size; raised to the contour's own node count if larger.
    pub initial_nodes: usize,
}

impl Default for QuadratureSettings {
    fn default() -> Self {
        QuadratureSettings {
            tol: DEFAULT_QUAD_TOL,
            max_nodes: DEFAULT_MAX_NODES,
            initial_nodes: DEFAULT_INITIAL_NODES,
        }
    }
}

/// (1/2 pi i) times the closed integral of `g` over the circle, by the
/// trapezoid rule with node doubling. Doubling reuses previous evaluations
/// (the old grid is the even half of the new one) and stops when successive
/// values differ by less than `settings.tol` plus the summation noise floor.
/// The floor is a multiple of machine epsilon times the L1 mass of the
/// integrand on the contour: refinements below it only shuffle roundoff, so
/// demanding more would loop to the cap on integrals with heavy cancellation.
pub fn contour_integrate(
    g: impl Fn(Complex64) -> Complex64,
    contour: &Contour,
    settings: &QuadratureSettings,
) -> Result<Complex64, SpectralError> {
    let mut n = contour.nodes.max(settings.initial_nodes).max(8);
    if n % 2 == 1 {
        n += 1;
    }
    if n > settings.max_nodes {
        n = settings.max_nodes.max(8);
    }
    let eval_at = |j: usize, n: usize| -> Complex64 {
        let theta = 2.0 * std::f64::consts::PI * j as f64 / n as f64;
        let dir = Complex64::new(theta.cos(), theta.sin());
        g(contour.center + contour.radius * dir) * dir
    };
    let mut sum = Complex64::new(0.0, 0.0);
    let mut sum_abs = 0.0;
    for j in 0..n {
        let v = eval_at(j, n);
        sum += v;
        sum_abs += v.norm();
    }
    let mut current = sum * (contour.radius / n as f64);
    loop {
        if 2 * n > settings.max_nodes {
            return Err(SpectralError::NoConvergence { nodes: n, last_delta: f64::NAN });
        }
        n *= 2;
        for j in (1..n).step_by(2) {
            let v = eval_at(j, n);
            sum += v;
            sum_abs += v.norm();
        }
        let refined = sum * (contour.radius / n as f64);
        let noise_floor = 4e-15 * sum_abs * contour.radius / n as f64;
        let delta = (refined - current).norm();
        if delta <= settings.tol + noise_floor {
            return Ok(refined);
        }
        current = refined;
        if n >= settings.max_nodes {
            return Err(SpectralError::NoConvergence { nodes: n, last_delta: delta });
        }
    }
}

/// Polynomial factor of a spectral integrand.
#[derive(Debug, Clone, PartialEq)]
pub enum PolyFactor {
    One,
    /// Ascending coefficients in w.
    Coeffs(Vec<f64>),
    /// prod_{j=lo}^{hi} (1 - w/lambda(j)); the factors p carries that survive
    /// cancellation against psi. Kept in product form so its zeros at rate
    /// points stay exact.
    RateRoots { lo: usize, hi: usize },
}

impl PolyFactor {
    fn eval(&self, f: &RateField, w: Complex64) -> Complex64 {
        match self {
            PolyFactor::One => Complex64::new(1.0, 0.0),
            PolyFactor::Coeffs(c) => {
                let mut acc = Complex64::new(0.0, 0.0);
                for &coeff in c.iter().rev() {
                    acc = acc * w + coeff;
                }
                acc
            }
            PolyFactor::RateRoots { lo, hi } => {
                let mut acc = Complex64::new(1.0, 0.0);
                for j in *lo..=*hi {
                    acc *= 1.0 - w / f.rate(j);
                }
                acc
            }
        }
    }

    fn eval_real(&self, f: &RateField, w: f64) -> f64 {
        match self {
            PolyFactor::One => 1.0,
            PolyFactor::Coeffs(c) => {
                let mut acc = 0.0;
                for &coeff in c.iter().rev() {
                    acc = acc * w + coeff;
                }
                acc
            }
            PolyFactor::RateRoots { lo, hi } => {
                let mut acc = 1.0;
                for j in *lo..=*hi {
                    acc *= 1.0 - w / f.rate(j);
                }
                acc
            }
        }
    }

    fn coeffs(&self, f: &RateField, len: usize) -> Vec<f64> {
        match self {
            PolyFactor::One => {
                let mut c = vec![0.0; len];
                if len > 0 {
                    c[0] = 1.0;
                }
                c
            }
            PolyFactor::Coeffs(c) => {
                let mut out = c.clone();
                out.resize(len, 0.0);
                out.truncate(len);
                out
            }
            PolyFactor::RateRoots { lo, hi } => {
                let mut out = vec![0.0; len];
                if len == 0 {
                    return out;
                }
                out[0] = 1.0;
                let mut degree = 0usize;
                for j in *lo..=*hi {
                    let inv = 1.0 / f.rate(j);
                    let top = (degree + 1).min(len - 1);
                    for i in (1..=top).rev() {
                        out[i] -= inv * out[i - 1];
                    }
                    degree += 1;
                }
                out
            }
        }
    }
}

/// Integrand `prod_{k in poles} lambda(k)/(lambda(k)-w) * poly(w)
/// * exp(-exp_rate * w) * w^{w_power}` for closed integrals around the rates.
///
/// The constructors cancel common factors between psi and p analytically, so
/// the pole range only carries genuine poles.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralIntegrand {
    pub poles: Option<(usize, usize)>,
    pub poly: PolyFactor,
    pub exp_rate: f64,
    pub w_power: i32,
}

impl SpectralIntegrand {
    /// psi_{x_psi}(w) * p_{x_poly}(w) * exp(-t w) * w^power, reduced.
    pub fn psi_times_p(x_psi: usize, x_poly: usize, exp_rate: f64, w_power: i32) -> Self {
        if x_poly > x_psi {
            let poly = if x_poly >= x_psi + 2 {
                PolyFactor::RateRoots { lo: x_psi + 1, hi: x_poly - 1 }
            } else {
                PolyFactor::One
            };
            SpectralIntegrand { poles: None, poly, exp_rate, w_power }
        } else {
            SpectralIntegrand {
                poles: Some((x_poly, x_psi)),
                poly: PolyFactor::One,
                exp_rate,
                w_power,
            }
        }
    }

    /// psi_x(w) * exp(-t w) * w^power.
    pub fn psi(x: usize, exp_rate: f64, w_power: i32) -> Self {
        SpectralIntegrand::psi_times_p(x, 0, exp_rate, w_power)
    }

    /// psi_x(w) * (given polynomial) * exp(-t w) * w^power. No cancellation
    /// is attempted, so the residue path requires lambda(0..=x) distinct.
    pub fn psi_times_coeffs(x: usize, coeffs: Vec<f64>, exp_rate: f64, w_power: i32) -> Self {
        SpectralIntegrand { poles: Some((0, x)), poly: PolyFactor::Coeffs(coeffs), exp_rate, w_power }
    }

    pub fn eval(&self, f: &RateField, w: Complex64) -> Complex64 {
        let mut acc = Complex64::new(1.0, 0.0);
        if let Some((lo, hi)) = self.poles {
            for k in lo..=hi {
                let l = f.rate(k);
                acc *= l / (l - w);
            }
        }
        acc *= self.poly.eval(f, w);
        if self.exp_rate != 0.0 {
            acc *= (-self.exp_rate * w).exp();
        }
        if self.w_power != 0 {
            acc *= w.powi(self.w_power);
        }
        acc
    }

    /// Residue at w=0 (pole order -w_power) when w_power < 0: read the
    /// required Taylor coefficient off the product series. All series
    /// involved are exact finite recursions, so no truncation enters.
    fn origin_residue(&self, f: &RateField) -> f64 {
        let order = (-self.w_power) as usize;
        debug_assert!(order >= 1);
        let len = order;
        // Series of prod 1/(1 - w/lambda(k)) by repeated synthetic division:
        // multiplying a series c by 1/(1 - w/lambda) is the forward recurrence
        // c'[i] = c[i] + c'[i-1]/lambda, which runs in place.
        let mut series = vec![0.0; len];
        series[0] = 1.0;
        if let Some((lo, hi)) = self.poles {
            for k in lo..=hi {
                let inv = 1.0 / f.rate(k);
                for i in 1..len {
                    series[i] += series[i - 1] * inv;
                }
            }
        }
        let poly = self.poly.coeffs(f, len);
        let mut with_poly = vec![0.0; len];
        for i in 0..len {
            for j in 0..=i {
                with_poly[i] += series[j] * poly[i - j];
            }
        }
        let mut exp_coeff = 1.0;
        let mut total = vec![0.0; len];
        for j in 0..len {
            if j > 0 {
                exp_coeff *= -self.exp_rate / j as f64;
            }
            for i in j..len {
                total[i] += with_poly[i - j] * exp_coeff;
            }
        }
        total[order - 1]
    }

    /// (1/2 pi i) closed integral around all rates and the origin, as a sum
    /// of residues. Requires the enclosed rates pairwise distinct.
    pub fn residue_closed(&self, f: &RateField) -> Result<f64, SpectralError> {
        let mut sum = 0.0;
        if let Some((lo, hi)) = self.poles {
            if !f.distinct_in(lo, hi) {
                return Err(SpectralError::RepeatedRates { lo, hi });
            }
            for k in lo..=hi {
                let lk = f.rate(k);
                let mut prod = 1.0;
                for j in lo..=hi {
                    if j != k {
                        let lj = f.rate(j);
                        prod *= lj / (lj - lk);
                    }
                }
                sum += -lk
                    * prod
                    * self.poly.eval_real(f, lk)
                    * (-self.exp_rate * lk).exp()
                    * lk.powi(self.w_power);
            }
        }
        if self.w_power < 0 {
            sum += self.origin_residue(f);
        }
        Ok(sum)
    }

    /// Circle for quadrature of this integrand, centered at M/2 like the
    /// default rate contour but with its radius tuned to the integrand.
    ///
    /// A pole of total order d at the rates makes the integrand as large as
    /// (M/margin)^d on the contour while the integral itself can be tiny, so
    /// on the default margin s/2 long products drown in cancellation. Against
    /// an exp(-t w) factor the magnitude bound (M/margin)^d e^{t margin} is
    /// minimized at margin = d/t, where it matches the scale of the integral
    /// and double precision survives. The enlarged circle still encloses
    /// every rate and the origin, so the value is unchanged.
    pub fn conditioned_contour(&self, f: &RateField) -> Contour {
        let base = Contour::around_rates(f);
        let d = match self.poles {
            Some((lo, hi)) => (hi - lo + 1) as f64,
            None => 0.0,
        };
        if d == 0.0 {
            return base;
        }
        let margin = if self.exp_rate > 1e-12 { d / self.exp_rate } else { d };
        let radius = f.sup_rate() / 2.0 + margin.max(f.inf_rate() / 2.0);
        Contour { radius: radius.max(base.radius), ..base }
    }

    /// Quadrature on an explicit closed contour around all rates and the
    /// origin.
    pub fn quadrature_on(
        &self,
        f: &RateField,
        contour: &Contour,
        settings: &QuadratureSettings,
    ) -> Result<f64, SpectralError> {
        let value = contour_integrate(|w| self.eval(f, w), contour, settings)?;
        debug_assert!(
            value.im.abs() <= 1e-8 * (1.0 + value.re.abs()),
            "imaginary residue {value} for a real integrand"
        );
        Ok(value.re)
    }

    /// Quadrature on the conditioned contour.
    pub fn quadrature_closed(
        &self,
        f: &RateField,
        settings: &QuadratureSettings,
    ) -> Result<f64, SpectralError> {
        self.quadrature_on(f, &self.conditioned_contour(f), settings)
    }

    /// Residues when available, quadrature fallback when rates repeat.
    pub fn closed(&self, f: &RateField, settings: &QuadratureSettings) -> Result<f64, SpectralError> {
        match self.residue_closed(f) {
            Ok(v) => Ok(v),
            Err(SpectralError::RepeatedRates { .. }) => self.quadrature_closed(f, settings),
            Err(e) => Err(e),
        }
    }
}

/// Ascending coefficients of the degree-x polynomial p_x, exact up to
/// floating point: repeated synthetic multiplication by (1 - w/lambda(k)).
pub fn p_coefficients(f: &RateField, x: usize) -> Vec<f64> {
    if x == 0 {
        return vec![1.0];
    }
    PolyFactor::RateRoots { lo: 0, hi: x - 1 }.coeffs(f, x + 1)
}

/// Entries J_i of the determinant defining the chamber harmonic function:
/// J_0 = 1, J_i(x) = sum_{y<x} J_{i-1}(y)/lambda(y). Row i vanishes below x=i.
#[derive(Debug, Clone)]
pub struct HarmonicTable {
    rows: Vec<Vec<f64>>,
}

impl HarmonicTable {
    pub fn build(f: &RateField, i_max: usize, x_max: usize) -> Self {
        let mut rows = Vec::with_capacity(i_max + 1);
        rows.push(vec![1.0; x_max + 1]);
        for i in 1..=i_max {
            let prev = &rows[i - 1];
            let mut row = vec![0.0; x_max + 1];
            let mut acc = 0.0;
            for x in 1..=x_max {
                acc += prev[x - 1] / f.rate(x - 1);
                row[x] = acc;
            }
            rows.push(row);
        }
        HarmonicTable { rows }
    }

    pub fn entry(&self, i: usize, x: usize) -> f64 {
        self.rows[i][x]
    }

    pub fn i_max(&self) -> usize {
        self.rows.len() - 1
    }

    pub fn x_max(&self) -> usize {
        self.rows[0].len() - 1
    }

    /// det [ J_{i}(x_j) ]_{i=0..N-1, j} over strictly increasing coordinates.
    pub fn harmonic(&self, coords: &[usize]) -> Result<f64, SpectralError> {
        let n = coords.len();
        if coords.windows(2).any(|p| p[0] >= p[1]) {
            return Err(SpectralError::NotAChamberPoint);
        }
        assert!(n >= 1, "harmonic function needs at least one coordinate");
        assert!(n - 1 <= self.i_max() && *coords.last().unwrap() <= self.x_max());
        let mut m = Vec::with_capacity(n * n);
        for i in 0..n {
            for &x in coords {
                m.push(self.entry(i, x));
            }
        }
        Ok(crate::linalg::det_in_place(&mut m, n))
    }
}

/// Single J_i(x) without keeping a table.
pub fn harmonic_entry(f: &RateField, i: usize, x: usize) -> f64 {
    HarmonicTable::build(f, i, x).entry(i, x)
}

/// Chamber harmonic function at one point, building a throwaway table.
pub fn harmonic(f: &RateField, coords: &[usize]) -> Result<f64, SpectralError> {
    let n = coords.len();
    assert!(n >= 1);
    let x_max = *coords.iter().max().unwrap();
    HarmonicTable::build(f, n - 1, x_max).harmonic(coords)
}

/// Both sides of the truncated geometric-telescoping identity
///
/// ```text
///   sum_{l=0}^{k} 1/a_l prod_{i=0}^{l} a_i/(a_i - w)
///     = -1/w (1 - prod_{l=0}^{k} a_l/(a_l - w)),   a_l = lambda(y+1+l),
/// ```
///
/// returned as (lhs, rhs). Demands strict contraction
/// sup_x |lambda(x)/(lambda(x)-w)| < 1, which also keeps w off the poles.
pub fn telescoping_sides(
    f: &RateField,
    y: usize,
    w: Complex64,
    k: usize,
) -> Result<(Complex64, Complex64), SpectralError> {
    let factor = f
        .value_range()
        .map(|l| (l / (l - w)).norm())
        .fold(0.0_f64, f64::max);
    if !(factor < 1.0) {
        return Err(SpectralError::ContractionViolated { factor });
    }
    let mut lhs = Complex64::new(0.0, 0.0);
    let mut prod = Complex64::new(1.0, 0.0);
    for l in 0..=k {
        let a = f.rate(y + 1 + l);
        prod *= a / (a - w);
        lhs += prod / a;
    }
    let rhs = -(1.0 - prod) / w;
    Ok((lhs, rhs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use proptest::prelude::*;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    #[test]
    fn p_poly_examples() {
        let f = RateField::new(vec![1.0, 2.0], 1.0).unwrap();
        // (1-1)(2-1)/(1*2) = 0 at w=1.
        assert_eq!(p_poly(&f, 2, c(1.0)), c(0.0));
        assert_eq!(p_poly(&f, 0, c(5.0)), c(1.0));
        // p_x(0) = 1 always.
        for x in 0..6 {
            assert_relative_eq!(p_poly(&f, x, c(0.0)).re, 1.0);
        }
    }

    #[test]
    fn psi_pole_hit() {
        let f = RateField::homogeneous();
        assert_eq!(
            psi_fn(&f, 2, c(1.0)),
            Err(SpectralError::PoleHit { w: c(1.0), site: 0 })
        );
        assert!(psi_fn(&f, 2, c(0.5)).is_ok());
    }

    proptest! {
        // psi_x * p_{x+1} = 1 wherever psi is defined.
        #[test]
        fn psi_p_reciprocal(
            x in 0usize..8,
            re in -3.0f64..4.0,
            im in -3.0f64..3.0,
            r0 in 0.5f64..3.0,
            r1 in 0.5f64..3.0,
            tail in 0.5f64..3.0,
        ) {
            let f = RateField::new(vec![r0, r1], tail).unwrap();
            let w = Complex64::new(re, im);
            if let Ok(psi) = psi_fn(&f, x, w) {
                let prod = psi * p_poly(&f, x + 1, w);
                prop_assert!((prod - 1.0).norm() < 1e-10, "product {prod}");
            }
        }
    }

    #[test]
    fn contour_roles() {
        let f = RateField::new(vec![1.0, 2.0], 1.0).unwrap();
        let around = Contour::around_rates(&f);
        assert!(around.encloses(c(0.0)));
        assert!(around.encloses(c(1.0)));
        assert!(around.encloses(c(2.0)));
        let origin = Contour::around_origin(&f);
        assert!(origin.encloses(c(0.0)));
        assert!(!origin.encloses(c(1.0)));
        let far = Contour::distant(&f, DEFAULT_CONTRACTION);
        // Radius 2 * (4 + 1) = 10; contraction holds for every rate.
        assert_relative_eq!(far.radius, 10.0);
        for l in f.value_range() {
            let worst = (0..256)
                .map(|j| {
                    let w = far.point(2.0 * std::f64::consts::PI * j as f64 / 256.0);
                    (l / (l - w)).norm()
                })
                .fold(0.0_f64, f64::max);
            assert!(worst <= DEFAULT_CONTRACTION + 1e-9, "rate {l}: {worst}");
        }
    }

    #[test]
    fn contour_rejects_bad_parameters() {
        assert!(Contour::new(c(0.0), 0.0, 256).is_err());
        assert!(Contour::new(c(0.0), 1.0, 7).is_err());
        assert!(Contour::new(c(0.0), 1.0, 10).is_ok());
    }

    #[test]
    fn cauchy_integral_of_reciprocal() {
        // (1/2 pi i) closed integral of 1/(w - a) = 1 when a is inside.
        let f = RateField::homogeneous();
        let contour = Contour::around_rates(&f);
        let settings = QuadratureSettings::default();
        let one =
            contour_integrate(|w| 1.0 / (w - 1.0), &contour, &settings).unwrap();
        assert_abs_diff_eq!(one.re, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(one.im, 0.0, epsilon = 1e-12);
        // Entire integrand integrates to zero.
        let zero = contour_integrate(|w| w.exp(), &contour, &settings).unwrap();
        assert_abs_diff_eq!(zero.norm(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn quadrature_cap_reports_no_convergence() {
        let f = RateField::homogeneous();
        let contour = Contour::around_rates(&f).with_nodes(8);
        let settings = QuadratureSettings { tol: 0.0, max_nodes: 16, initial_nodes: 8 };
        let err = contour_integrate(|w| 1.0 / (w - 1.0), &contour, &settings).unwrap_err();
        assert!(matches!(err, SpectralError::NoConvergence { .. }));
    }

    #[test]
    fn residue_matches_quadrature_on_distinct_rates() {
        let f = RateField::new(vec![1.0, 2.0, 4.0], 3.0).unwrap();
        let contour = Contour::around_rates(&f);
        let settings = QuadratureSettings::default();
        for (x_psi, x_poly, t, power) in
            [(2, 0, 0.7, 0), (3, 1, 0.3, 0), (2, 2, 1.1, 1), (3, 0, 0.5, -2), (1, 4, 0.2, -1)]
        {
            let ig = SpectralIntegrand::psi_times_p(x_psi, x_poly, t, power);
            let by_residue = ig.residue_closed(&f).unwrap();
            // Same value on the pinned contour and on the conditioned one:
            // the integrand is analytic between them.
            let on_default = ig.quadrature_on(&f, &contour, &settings).unwrap();
            let on_conditioned = ig.quadrature_closed(&f, &settings).unwrap();
            assert_abs_diff_eq!(by_residue, on_default, epsilon = 1e-10);
            assert_abs_diff_eq!(by_residue, on_conditioned, epsilon = 1e-10);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn residue_quadrature_agree_randomized(
            x_psi in 0usize..7,
            x_poly in 0usize..9,
            t in 0.0f64..1.2,
            power in -3i32..3,
            seed in 0u64..10_000,
        ) {
            // Well-separated distinct rates keep the residue sum conditioned.
            let base = [0.6, 1.1, 1.7, 2.3, 2.9, 3.4, 0.85, 1.45, 2.05, 2.65];
            let rotate = (seed % 7) as usize;
            let mut rates: Vec<f64> = (0..8).map(|i| base[(i + rotate) % 10]).collect();
            rates.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
            let f = RateField::new(rates, 3.8).unwrap();
            let ig = SpectralIntegrand::psi_times_p(x_psi, x_poly, t, power);
            let by_residue = ig.residue_closed(&f).unwrap();
            let by_quadrature =
                ig.quadrature_closed(&f, &QuadratureSettings::default()).unwrap();
            prop_assert!(
                (by_residue - by_quadrature).abs() < 1e-10 * (1.0 + by_residue.abs()),
                "residue {by_residue} vs quadrature {by_quadrature}"
            );
        }
    }

    #[test]
    fn residue_total_mass_examples() {
        // psi_1 alone: residues at 1 and 2 cancel (transition 0 -> 1 at t=0).
        let f = RateField::new(vec![1.0, 2.0], 1.0).unwrap();
        let ig = SpectralIntegrand::psi(1, 0.0, 0);
        assert_abs_diff_eq!(ig.residue_closed(&f).unwrap(), 0.0, epsilon = 1e-14);

        // Repeated rates refuse the residue path.
        let g = RateField::homogeneous();
        let ig2 = SpectralIntegrand::psi(1, 0.0, 0);
        assert_eq!(
            ig2.residue_closed(&g),
            Err(SpectralError::RepeatedRates { lo: 0, hi: 1 })
        );
        // ... but the automatic path still evaluates it.
        let v = ig2.closed(&g, &QuadratureSettings::default()).unwrap();
        assert_abs_diff_eq!(v, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn origin_residue_reads_taylor_coefficient() {
        // Integrand p_3(w)/w^2 for unit rates: p_3 = (1-w)^3, coefficient of
        // w^1 is -3. No rate poles (poles=None).
        let f = RateField::homogeneous();
        let ig = SpectralIntegrand::psi_times_p(0, 4, 0.0, -2);
        // psi_0 p_4 = (1-w)^3: check against quadrature too.
        let by_residue = ig.residue_closed(&f).unwrap();
        let by_quadrature =
            ig.quadrature_closed(&f, &QuadratureSettings::default()).unwrap();
        assert_abs_diff_eq!(by_residue, -3.0, epsilon = 1e-13);
        assert_abs_diff_eq!(by_quadrature, -3.0, epsilon = 1e-11);
    }

    #[test]
    fn harmonic_entries_match_hand_recursion() {
        let f = RateField::homogeneous();
        // Unit rates: J_1(x) = x, J_2(x) = x(x-1)/2.
        assert_relative_eq!(harmonic_entry(&f, 1, 4), 4.0);
        assert_relative_eq!(harmonic_entry(&f, 2, 4), 6.0);
        assert_relative_eq!(harmonic_entry(&f, 3, 2), 0.0);

        let g = RateField::new(vec![1.0, 2.0], 2.0).unwrap();
        // J_1(2) = 1/1 + 1/2.
        assert_relative_eq!(harmonic_entry(&g, 1, 2), 1.5);
        assert_relative_eq!(harmonic_entry(&g, 1, 3), 2.0);
    }

    #[test]
    fn harmonic_unit_rates_closed_form() {
        let f = RateField::homogeneous();
        // prod_{i<j} (x_j - x_i) / prod_j (j-1)!
        let cases: [(&[usize], f64); 3] =
            [(&[0, 1, 2], 1.0), (&[0, 2], 2.0), (&[1, 3, 4], 3.0)];
        for (coords, expect) in cases.iter() {
            assert_relative_eq!(harmonic(&f, coords).unwrap(), *expect, max_relative = 1e-12);
        }
        let coords = [0usize, 1, 2, 3, 7];
        let mut vandermonde = 1.0;
        for i in 0..coords.len() {
            for j in (i + 1)..coords.len() {
                vandermonde *= (coords[j] - coords[i]) as f64;
            }
        }
        let factorials: f64 = (1..coords.len()).map(|j| {
            (1..=j).map(|v| v as f64).product::<f64>()
        }).product();
        assert_relative_eq!(
            harmonic(&f, &coords).unwrap(),
            vandermonde / factorials,
            max_relative = 1e-12
        );
    }

    #[test]
    fn harmonic_inhomogeneous_hand_value() {
        let g = RateField::new(vec![1.0, 2.0], 2.0).unwrap();
        // det [[1, 1], [J_1(0), J_1(2)]] = J_1(2) = 1.5.
        assert_relative_eq!(harmonic(&g, &[0, 2]).unwrap(), 1.5, max_relative = 1e-14);
        // Single coordinate: always 1.
        assert_relative_eq!(harmonic(&g, &[5]).unwrap(), 1.0);
    }

    #[test]
    fn harmonic_rejects_non_chamber() {
        let f = RateField::homogeneous();
        assert_eq!(harmonic(&f, &[2, 2]), Err(SpectralError::NotAChamberPoint));
        assert_eq!(harmonic(&f, &[3, 1]), Err(SpectralError::NotAChamberPoint));
    }

    #[test]
    fn harmonic_positive_on_chamber() {
        let f = RateField::new(vec![0.7, 2.0, 1.3], 1.9).unwrap();
        let table = HarmonicTable::build(&f, 3, 9);
        for a in 0..7usize {
            for b in (a + 1)..8 {
                for c_ in (b + 1)..9 {
                    let h = table.harmonic(&[a, b, c_]).unwrap();
                    assert!(h > 0.0, "h({a},{b},{c_}) = {h}");
                }
            }
        }
    }

    #[test]
    fn telescoping_identity_holds() {
        let f = RateField::homogeneous();
        let (lhs, rhs) = telescoping_sides(&f, 0, c(10.0), 30).unwrap();
        assert!((lhs - rhs).norm() < 1e-12, "{lhs} vs {rhs}");

        let g = RateField::new(vec![1.0, 2.0], 1.0).unwrap();
        let (lhs, rhs) = telescoping_sides(&g, 1, c(8.0), 25).unwrap();
        assert!((lhs - rhs).norm() < 1e-12);

        // Complex evaluation point on a distant circle.
        let w = Contour::distant(&g, 0.25).point(1.1);
        let (lhs, rhs) = telescoping_sides(&g, 0, w, 12).unwrap();
        assert!((lhs - rhs).norm() < 1e-12);
    }

    #[test]
    fn telescoping_requires_contraction() {
        let f = RateField::homogeneous();
        let err = telescoping_sides(&f, 0, c(1.5), 5).unwrap_err();
        assert!(matches!(err, SpectralError::ContractionViolated { .. }));
    }
}
