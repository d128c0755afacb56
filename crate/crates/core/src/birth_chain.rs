//! One-particle pure-birth chain: jumps x -> x+1 at rate lambda(x).
//!
//! The transition density has the spectral form
//!
//! ```text
//!   e^{tL}(x,y) = -(1/lambda(y)) (1/2 pi i) closed-int  psi_y(w) p_x(w) e^{-tw} dw
//!               = -(1/lambda(y)) (1/2 pi i) closed-int  prod_{k=x}^{y} lambda(k)/(lambda(k)-w) e^{-tw} dw
//! ```
//!
//! after cancelling p against psi. Three evaluation routes coexist on
//! purpose: a residue sum (distinct rates in x..y), contour quadrature
//! (always), and an adaptive Runge-Kutta integration of the forward equation
//! on a truncated state space. The ODE route shares no code with the contour
//! routes and serves as the ground truth they are tested against.

use thiserror::Error;

use crate::rate_field::RateField;
use crate::spectral::{QuadratureSettings, SpectralError, SpectralIntegrand};
use crate::stats::poisson_tail_above;

/// Densities this far below zero are treated as roundoff and clamped.
/// Anything more negative signals a real defect and errors out.
pub const NEGATIVE_DENSITY_HARD_LIMIT: f64 = 1e-9;

/// A certified truncation tail above this bound invalidates an ODE solve.
pub const ODE_TAIL_LIMIT: f64 = 1e-10;

#[derive(Debug, Error, PartialEq)]
pub enum BirthChainError {
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error("density {value:e} below the negative clamp limit")]
    NegativeDensity { value: f64 },
    #[error("certified truncation tail {bound:e} exceeds {limit:e}; enlarge the state space")]
    TruncationTooTight { bound: f64, limit: f64 },
    #[error("time must be finite and >= 0, got {t}")]
    BadTime { t: f64 },
}

fn check_time(t: f64) -> Result<(), BirthChainError> {
    if t.is_finite() && t >= 0.0 {
        Ok(())
    } else {
        Err(BirthChainError::BadTime { t })
    }
}

fn clamp_density(v: f64) -> Result<f64, BirthChainError> {
    if v < -NEGATIVE_DENSITY_HARD_LIMIT {
        return Err(BirthChainError::NegativeDensity { value: v });
    }
    Ok(v.clamp(0.0, 1.0))
}

/// Which evaluation route to take; `Auto` prefers residues and falls back to
/// quadrature when rates repeat in the active window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DensityPath {
    Auto,
    Residue,
    Quadrature,
}

/// P(X_t = y | X_0 = x) through the spectral representation.
pub fn transition_density(f: &RateField, t: f64, x: usize, y: usize) -> Result<f64, BirthChainError> {
    transition_density_via(f, t, x, y, DensityPath::Auto, &QuadratureSettings::default())
}

pub fn transition_density_via(
    f: &RateField,
    t: f64,
    x: usize,
    y: usize,
    path: DensityPath,
    settings: &QuadratureSettings,
) -> Result<f64, BirthChainError> {
    check_time(t)?;
    if y < x {
        return Ok(0.0);
    }
    if t == 0.0 {
        return Ok(if x == y { 1.0 } else { 0.0 });
    }
    let ig = SpectralIntegrand::psi_times_p(y, x, t, 0);
    let integral = match path {
        DensityPath::Residue => ig.residue_closed(f)?,
        DensityPath::Quadrature => ig.quadrature_closed(f, settings)?,
        DensityPath::Auto => ig.closed(f, settings)?,
    };
    clamp_density(-integral / f.rate(y))
}

/// Dense cache of densities and cumulative sums for one (field, time) pair.
/// `cdf` values beyond `x_max` are truncated at the table edge; callers
/// choose `x_max` with enough Poisson headroom for their tolerance.
#[derive(Debug, Clone)]
pub struct TransitionTable {
    t: f64,
    x_max: usize,
    dens: Vec<f64>,
    cum: Vec<f64>,
}

impl TransitionTable {
    pub fn build(f: &RateField, t: f64, x_max: usize) -> Result<Self, BirthChainError> {
        check_time(t)?;
        let n = x_max + 1;
        let mut dens = vec![0.0; n * n];
        let mut cum = vec![0.0; n * n];
        let settings = QuadratureSettings::default();
        for x in 0..=x_max {
            let mut acc = 0.0;
            for y in 0..=x_max {
                let d = if y < x {
                    0.0
                } else {
                    transition_density_via(f, t, x, y, DensityPath::Auto, &settings)?
                };
                dens[x * n + y] = d;
                acc += d;
                cum[x * n + y] = acc.min(1.0);
            }
        }
        Ok(TransitionTable { t, x_max, dens, cum })
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn x_max(&self) -> usize {
        self.x_max
    }

    pub fn density(&self, x: usize, y: usize) -> f64 {
        assert!(x <= self.x_max, "start {x} beyond table edge {}", self.x_max);
        if y > self.x_max {
            return 0.0;
        }
        self.dens[x * (self.x_max + 1) + y]
    }

    /// P(X_t <= y | X_0 = x), truncated at the table edge.
    pub fn cdf(&self, x: usize, y: usize) -> f64 {
        assert!(x <= self.x_max);
        self.cum[x * (self.x_max + 1) + y.min(self.x_max)]
    }

    /// P(X_t < y | X_0 = x); zero for y = 0.
    pub fn cdf_below(&self, x: usize, y: usize) -> f64 {
        if y == 0 {
            0.0
        } else {
            self.cdf(x, y - 1)
        }
    }
}

/// Default truncation edge for the ODE route: generous Poisson headroom past
/// the drift so the certified tail sits far below `ODE_TAIL_LIMIT`.
pub fn default_ode_truncation(f: &RateField, t: f64, x: usize) -> usize {
    let drift = f.sup_rate() * t;
    x + (drift + 12.0 * drift.sqrt() + 20.0).ceil() as usize
}

/// Ground-truth route: integrate the forward equation
/// d p(z)/dt = lambda(z-1) p(z-1) - lambda(z) p(z) on states x..=x_max with
/// an adaptive Dormand-Prince pair. The mass escaping past `x_max` is
/// dominated by a Poisson(M t) tail, which is certified before solving.
pub fn transition_density_ode(
    f: &RateField,
    t: f64,
    x: usize,
    y: usize,
    x_max: Option<usize>,
) -> Result<f64, BirthChainError> {
    check_time(t)?;
    if y < x {
        return Ok(0.0);
    }
    let x_max = x_max.unwrap_or_else(|| default_ode_truncation(f, t, x)).max(y);
    let bound = poisson_tail_above(f.sup_rate() * t, (x_max - x) as i64);
    if bound > ODE_TAIL_LIMIT {
        return Err(BirthChainError::TruncationTooTight { bound, limit: ODE_TAIL_LIMIT });
    }
    let dim = x_max - x + 1;
    let rates: Vec<f64> = (x..=x_max).map(|z| f.rate(z)).collect();
    let rhs = |p: &[f64], dp: &mut [f64]| {
        dp[0] = -rates[0] * p[0];
        for i in 1..dim {
            dp[i] = rates[i - 1] * p[i - 1] - rates[i] * p[i];
        }
    };
    let mut state = vec![0.0; dim];
    state[0] = 1.0;
    // Explicit stability: eigenvalues lie in [-M, 0], so cap the step well
    // inside the Dormand-Prince real-axis stability interval.
    let h_max = (1.0 / f.sup_rate()).min(t.max(1e-12));
    integrate_rk45(rhs, &mut state, t, h_max, 1e-13, 1e-11);
    clamp_density(state[y - x])
}

/// Dormand-Prince 5(4) with a standard step controller. The right-hand side
/// is autonomous, which is all this crate needs.
fn integrate_rk45(
    rhs: impl Fn(&[f64], &mut [f64]),
    state: &mut [f64],
    t_end: f64,
    h_max: f64,
    atol: f64,
    rtol: f64,
) {
    const A: [[f64; 6]; 6] = [
        [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
        [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
        [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
        [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
        [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
    ];
    const B5: [f64; 7] =
        [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
    const B4: [f64; 7] = [
        5179.0 / 57600.0,
        0.0,
        7571.0 / 16695.0,
        393.0 / 640.0,
        -92097.0 / 339200.0,
        187.0 / 2100.0,
        1.0 / 40.0,
    ];
    let dim = state.len();
    let mut k = vec![vec![0.0; dim]; 7];
    let mut stage = vec![0.0; dim];
    let mut next = vec![0.0; dim];
    let mut t = 0.0;
    let mut h = h_max.min(t_end);
    while t < t_end {
        h = h.min(t_end - t);
        for s in 0..7 {
            if s == 0 {
                let (k0, rest) = k.split_first_mut().unwrap();
                let _ = rest;
                rhs(state, k0);
                continue;
            }
            let row = &A[s - 1];
            for i in 0..dim {
                let mut acc = state[i];
                for j in 0..s {
                    if row[j] != 0.0 {
                        acc += h * row[j] * k[j][i];
                    }
                }
                stage[i] = acc;
            }
            let (head, tail) = k.split_at_mut(s);
            let _ = head;
            rhs(&stage, &mut tail[0]);
        }
        let mut err: f64 = 0.0;
        for i in 0..dim {
            let mut sol5 = state[i];
            let mut sol4 = state[i];
            for j in 0..7 {
                sol5 += h * B5[j] * k[j][i];
                sol4 += h * B4[j] * k[j][i];
            }
            next[i] = sol5;
            let scale = atol + rtol * state[i].abs().max(sol5.abs());
            err = err.max(((sol5 - sol4) / scale).abs());
        }
        if err <= 1.0 || h <= 1e-13 {
            t += h;
            state.copy_from_slice(&next);
        }
        let grow = if err > 0.0 { 0.9 * err.powf(-0.2) } else { 5.0 };
        h = (h * grow.clamp(0.2, 5.0)).min(h_max).max(1e-14);
    }
}

/// Residual of the gradient-duality identity
/// `e^{tL}(x,y) = -(lambda(x)/lambda(y)) grad^+_x [e^{tL} 1_{[0,y]}](x)`,
/// with every term taken from the spectral route.
pub fn duality_residual(f: &RateField, t: f64, x: usize, y: usize) -> Result<f64, BirthChainError> {
    let table = TransitionTable::build(f, t, (x + 1).max(y))?;
    let lhs = table.density(x, y);
    let grad = table.cdf(x + 1, y) - table.cdf(x, y);
    Ok((lhs + f.rate(x) / f.rate(y) * grad).abs())
}

/// Residual of the eigenfunction relation
/// `lambda(x) [p_{x+1}(u) - p_x(u)] + u p_x(u) = 0`.
pub fn eigen_relation_residual(f: &RateField, u: num_complex::Complex64, x: usize) -> f64 {
    let px = crate::spectral::p_poly(f, x, u);
    let px1 = crate::spectral::p_poly(f, x + 1, u);
    (f.rate(x) * (px1 - px) + u * px).norm()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use num_complex::Complex64;

    fn hypoexp_two_rates(t: f64) -> f64 {
        // Density of reaching state 1 from 0 with rates (1, 2) at time t.
        (-t).exp() - (-2.0 * t).exp()
    }

    // Oracle validation: the ODE route against closed forms it shares no
    // code with. Everything else in the crate leans on this route.
    #[test]
    fn ode_matches_poisson_closed_form() {
        let f = RateField::homogeneous();
        let t = 1.0;
        for y in 0..=20usize {
            let expect = crate::stats::poisson_pmf(t, y as u64);
            let got = transition_density_ode(&f, t, 0, y, None).unwrap();
            assert_abs_diff_eq!(got, expect, epsilon = 1e-11);
        }
        // Shift invariance of the homogeneous chain.
        let shifted = transition_density_ode(&f, 0.6, 3, 7, None).unwrap();
        assert_abs_diff_eq!(shifted, crate::stats::poisson_pmf(0.6, 4), epsilon = 1e-11);
    }

    #[test]
    fn ode_matches_hypoexponential_closed_form() {
        let f = RateField::new(vec![1.0, 2.0], 1.0).unwrap();
        let t = 2.0_f64.ln();
        let got = transition_density_ode(&f, t, 0, 1, None).unwrap();
        assert_abs_diff_eq!(got, 0.25, epsilon = 1e-11);
        for t in [0.1, 0.45, 1.3] {
            let got = transition_density_ode(&f, t, 0, 1, None).unwrap();
            assert_abs_diff_eq!(got, hypoexp_two_rates(t), epsilon = 1e-11);
        }
    }

    #[test]
    fn ode_rejects_tight_truncation() {
        let f = RateField::homogeneous();
        let err = transition_density_ode(&f, 2.0, 0, 2, Some(3)).unwrap_err();
        assert!(matches!(err, BirthChainError::TruncationTooTight { .. }));
    }

    #[test]
    fn spectral_matches_hypoexponential() {
        let f = RateField::new(vec![1.0, 2.0], 1.0).unwrap();
        let t = 2.0_f64.ln();
        assert_abs_diff_eq!(transition_density(&f, t, 0, 1).unwrap(), 0.25, epsilon = 1e-12);
    }

    #[test]
    fn spectral_matches_poisson_with_repeated_rates() {
        let f = RateField::homogeneous();
        for y in [0usize, 1, 2, 5, 12, 20] {
            let got = transition_density(&f, 1.0, 0, y).unwrap();
            assert_abs_diff_eq!(got, crate::stats::poisson_pmf(1.0, y as u64), epsilon = 1e-10);
        }
    }

    #[test]
    fn oracle_triangle_small() {
        // Residue, quadrature, and ODE pairwise on a distinct-rate field.
        let f = RateField::new(
            vec![0.6, 1.9, 1.1, 2.7, 0.9, 2.2, 1.5, 3.0, 0.7, 2.5],
            1.25,
        )
        .unwrap();
        let settings = QuadratureSettings::default();
        for (t, x, y) in [(0.4, 0, 3), (0.9, 2, 8), (1.5, 1, 10), (0.2, 5, 6), (0.8, 4, 4)] {
            let residue =
                transition_density_via(&f, t, x, y, DensityPath::Residue, &settings).unwrap();
            let quadrature =
                transition_density_via(&f, t, x, y, DensityPath::Quadrature, &settings).unwrap();
            let ode = transition_density_ode(&f, t, x, y, None).unwrap();
            assert_abs_diff_eq!(residue, quadrature, epsilon = 1e-10);
            assert_abs_diff_eq!(residue, ode, epsilon = 1e-9);
        }
    }

    #[test]
    fn zero_time_is_identity() {
        let f = RateField::new(vec![1.0, 2.0], 1.0).unwrap();
        assert_eq!(transition_density(&f, 0.0, 3, 3).unwrap(), 1.0);
        assert_eq!(transition_density(&f, 0.0, 3, 4).unwrap(), 0.0);
        assert_eq!(transition_density_ode(&f, 0.0, 2, 2, None).unwrap(), 1.0);
    }

    #[test]
    fn support_and_stochasticity() {
        let f = RateField::new(vec![1.0, 3.0, 2.0], 1.5).unwrap();
        let t = 0.7;
        let table = TransitionTable::build(&f, t, 30).unwrap();
        for x in 0..=5usize {
            for y in 0..30 {
                let d = table.density(x, y);
                if y < x {
                    assert_eq!(d, 0.0);
                } else if y <= x + 8 {
                    assert!(d > 0.0, "density({x},{y}) = {d} should be positive");
                }
            }
            let tail = poisson_tail_above(f.sup_rate() * t, (30 - x) as i64);
            let row_sum = table.cdf(x, 30);
            assert!(row_sum <= 1.0 + 1e-12);
            assert!(row_sum >= 1.0 - tail - 1e-10, "row {x} sums to {row_sum}");
        }
    }

    #[test]
    fn semigroup_property() {
        let f = RateField::new(vec![1.0, 2.0, 4.0], 3.0).unwrap();
        let (t, s) = (0.3, 0.5);
        let edge = 25usize;
        let tab_t = TransitionTable::build(&f, t, edge).unwrap();
        let tab_s = TransitionTable::build(&f, s, edge).unwrap();
        let tab_ts = TransitionTable::build(&f, t + s, edge).unwrap();
        for (x, y) in [(0usize, 0usize), (0, 3), (1, 6), (2, 2), (0, 9)] {
            let conv: f64 = (x..=edge).map(|z| tab_t.density(x, z) * tab_s.density(z, y)).sum();
            assert_abs_diff_eq!(conv, tab_ts.density(x, y), epsilon = 1e-9);
        }
    }

    #[test]
    fn duality_residual_small() {
        let f = RateField::homogeneous();
        assert!(duality_residual(&f, 0.7, 1, 3).unwrap() < 1e-10);
        let g = RateField::new(vec![1.0, 2.0, 4.0], 3.0).unwrap();
        for (t, x, y) in [(0.2, 0, 0), (0.5, 1, 4), (1.0, 3, 3), (0.8, 2, 6)] {
            assert!(duality_residual(&g, t, x, y).unwrap() < 1e-10);
        }
    }

    #[test]
    fn eigen_relation_holds() {
        let f = RateField::new(vec![1.0, 2.0, 4.0], 3.0).unwrap();
        for x in 0..6 {
            for u in [
                Complex64::new(0.3, 0.0),
                Complex64::new(-1.2, 0.7),
                Complex64::new(2.4, -1.9),
            ] {
                assert!(eigen_relation_residual(&f, u, x) < 1e-12);
            }
        }
    }

    #[test]
    fn negative_time_rejected() {
        let f = RateField::homogeneous();
        assert!(matches!(
            transition_density(&f, -0.1, 0, 0),
            Err(BirthChainError::BadTime { .. })
        ));
    }
}
