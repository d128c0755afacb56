//! Determinantal semigroups built from the one-particle densities.
//!
//! For rows x, y of equal length N the Karlin-McGregor determinant
//! `det [ e^{tL}(x_i, y_j) ]` is the density of N independent birth chains
//! killed when any two meet; its Doob transform by the chamber harmonic
//! function h is an honest Markov semigroup on strictly increasing rows. For
//! a pair (y, x) with y of length N interlacing below x of length N+1, the
//! (2N+1)-square block determinant
//!
//! ```text
//!   | A  B |   A_ij = e^{tL}(x_i, x'_j)     B_ij = (F(x_i, y'_j) - 1(j>=i)) / lambda(y'_j)
//!   | C  D |   C_ij = -lambda(y_i) (e^{tL}(y_i+1, x'_j) - e^{tL}(y_i, x'_j))
//!              D_ij = e^{tL}(y_i, y'_j),    F(a, z) = e^{tL} 1_{[0,z]}(a)
//! ```
//!
//! is the sub-Markov transition kernel of the coupled two-level dynamics
//! (x blocked and pushed by y) killed at y-collisions. The residual checks
//! in this module verify, numerically and with certified truncation tails,
//! the algebra tying these kernels together: marginalizing the x'-row out of
//! the block kernel returns the N-level determinant, the unnormalized link
//! intertwines the N+1-level determinant with both the block kernel and the
//! N-level determinant, h is harmonic, and the packed-initial-condition
//! laws are consistent across levels.

use thiserror::Error;

use crate::birth_chain::{BirthChainError, TransitionTable};
use crate::interlacing::{
    chamber_points, interlaces, interlacings_below, ChamberPoint, GibbsMeasure, InterlacingError,
};
use crate::linalg::det_in_place;
use crate::rate_field::RateField;
use crate::spectral::HarmonicTable;
use crate::stats::poisson_tail_above;

#[derive(Debug, Error, PartialEq)]
pub enum SemigroupError {
    #[error(transparent)]
    BirthChain(#[from] BirthChainError),
    #[error(transparent)]
    Interlacing(#[from] InterlacingError),
    #[error("row lengths {0} and {1} do not match")]
    LengthMismatch(usize, usize),
    #[error("coordinate {coord} exceeds the context edge {edge}")]
    BeyondEdge { coord: usize, edge: usize },
}

/// A residual together with the certified truncation tail that must be
/// granted on top of the numerical tolerance.
#[derive(Debug, Clone, Copy)]
pub struct CheckedResidual {
    pub value: f64,
    pub tail_bound: f64,
}

/// Interlaced pair (y, x): y of length N strictly below x of length N+1.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TwoLevelState {
    y: Vec<usize>,
    x: Vec<usize>,
}

impl TwoLevelState {
    pub fn new(y: Vec<usize>, x: Vec<usize>) -> Result<Self, InterlacingError> {
        if x.len() != y.len() + 1 {
            return Err(InterlacingError::LengthMismatch { lower: y.len(), upper: x.len() });
        }
        if !interlaces(&y, &x) {
            return Err(InterlacingError::NotInterlacing);
        }
        Ok(TwoLevelState { y, x })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn y(&self) -> &[usize] {
        &self.y
    }

    pub fn x(&self) -> &[usize] {
        &self.x
    }

    pub fn max_coord(&self) -> usize {
        *self.x.last().unwrap()
    }
}

/// Every (y, x) pair with x coordinates bounded by `max_coord`.
pub fn two_level_states(n: usize, max_coord: usize) -> Vec<TwoLevelState> {
    let mut out = Vec::new();
    for x in chamber_points(n + 1, max_coord) {
        for y in interlacings_below(&x) {
            out.push(TwoLevelState { y, x: x.clone() });
        }
    }
    out
}

/// Shared caches for one (rate field, time) pair: the one-particle density
/// table up to `x_max` and harmonic entries up to row length `n_max`.
pub struct SemigroupContext<'a> {
    f: &'a RateField,
    t: f64,
    table: TransitionTable,
    harmonics: HarmonicTable,
    x_max: usize,
}

impl<'a> SemigroupContext<'a> {
    pub fn new(f: &'a RateField, t: f64, n_max: usize, x_max: usize) -> Result<Self, SemigroupError> {
        let table = TransitionTable::build(f, t, x_max)?;
        let harmonics = HarmonicTable::build(f, n_max.saturating_sub(1), x_max);
        Ok(SemigroupContext { f, t, table, harmonics, x_max })
    }

    pub fn f(&self) -> &RateField {
        self.f
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn table(&self) -> &TransitionTable {
        &self.table
    }

    pub fn harmonics(&self) -> &HarmonicTable {
        &self.harmonics
    }

    pub fn x_max(&self) -> usize {
        self.x_max
    }

    fn check_edge(&self, coords: &[usize]) -> Result<(), SemigroupError> {
        match coords.iter().max() {
            Some(&c) if c > self.x_max => Err(SemigroupError::BeyondEdge { coord: c, edge: self.x_max }),
            _ => Ok(()),
        }
    }

    /// Karlin-McGregor density det [ e^{tL}(from_i, to_j) ].
    pub fn km_density(&self, from: &[usize], to: &[usize]) -> Result<f64, SemigroupError> {
        if from.len() != to.len() {
            return Err(SemigroupError::LengthMismatch(from.len(), to.len()));
        }
        self.check_edge(from)?;
        self.check_edge(to)?;
        let n = from.len();
        let mut m = Vec::with_capacity(n * n);
        for &a in from {
            for &b in to {
                m.push(self.table.density(a, b));
            }
        }
        Ok(det_in_place(&mut m, n))
    }

    /// Doob-transformed density (h(to)/h(from)) det[..]: an honest Markov
    /// kernel on strictly increasing rows.
    pub fn doob_km_density(&self, from: &[usize], to: &[usize]) -> Result<f64, SemigroupError> {
        let km = self.km_density(from, to)?;
        if km == 0.0 {
            return Ok(0.0);
        }
        let h_from = self.harmonics.harmonic(from).map_err(BirthChainError::Spectral)?;
        let h_to = self.harmonics.harmonic(to).map_err(BirthChainError::Spectral)?;
        Ok(km * h_to / h_from)
    }

    /// Two-level block-determinant kernel from (y, x) to (y', x').
    pub fn block_kernel(&self, from: &TwoLevelState, to: &TwoLevelState) -> Result<f64, SemigroupError> {
        let n = from.n();
        if to.n() != n {
            return Err(SemigroupError::LengthMismatch(from.n(), to.n()));
        }
        self.check_edge(from.x())?;
        self.check_edge(to.x())?;
        if *from.y().last().unwrap() + 1 > self.x_max {
            return Err(SemigroupError::BeyondEdge {
                coord: from.y().last().unwrap() + 1,
                edge: self.x_max,
            });
        }
        let dim = 2 * n + 1;
        let mut m = vec![0.0; dim * dim];
        let (y, x) = (from.y(), from.x());
        let (yp, xp) = (to.y(), to.x());
        for i in 0..=n {
            for j in 0..=n {
                m[i * dim + j] = self.table.density(x[i], xp[j]);
            }
            for j in 0..n {
                let indicator = if j >= i { 1.0 } else { 0.0 };
                m[i * dim + (n + 1 + j)] =
                    (self.table.cdf(x[i], yp[j]) - indicator) / self.f.rate(yp[j]);
            }
        }
        for i in 0..n {
            let row = n + 1 + i;
            let rate = self.f.rate(y[i]);
            for j in 0..=n {
                m[row * dim + j] =
                    -rate * (self.table.density(y[i] + 1, xp[j]) - self.table.density(y[i], xp[j]));
            }
            for j in 0..n {
                m[row * dim + (n + 1 + j)] = self.table.density(y[i], yp[j]);
            }
        }
        Ok(det_in_place(&mut m, dim))
    }

    /// Doob transform of the block kernel by the harmonic function of the
    /// y-rows; the y-marginal of the transformed dynamics is the Doob
    /// Karlin-McGregor chain.
    pub fn doob_block_kernel(
        &self,
        from: &TwoLevelState,
        to: &TwoLevelState,
    ) -> Result<f64, SemigroupError> {
        let u = self.block_kernel(from, to)?;
        if u == 0.0 {
            return Ok(0.0);
        }
        let h_from = self.harmonics.harmonic(from.y()).map_err(BirthChainError::Spectral)?;
        let h_to = self.harmonics.harmonic(to.y()).map_err(BirthChainError::Spectral)?;
        Ok(u * h_to / h_from)
    }

    /// Certified bound on the mass `n_chains` independent chains started at
    /// or below `start_max` place beyond `cutoff` by time t.
    pub fn chain_escape_tail(&self, n_chains: usize, start_max: usize, cutoff: usize) -> f64 {
        let mu = self.f.sup_rate() * self.t;
        n_chains as f64 * poisson_tail_above(mu, cutoff as i64 - start_max as i64)
    }

    /// Certified tail for sums of |block kernel| over the unbounded top
    /// coordinate x'_{N+1} > cutoff: expand the determinant along that
    /// column, bound the complementary minors by Leibniz with the uniform
    /// entry bounds (1 for densities, 1/s for the B block, 2M for the C
    /// block), and dominate the column entries by one-particle escape
    /// probabilities.
    fn block_column_tail(&self, from: &TwoLevelState, cutoff: usize) -> f64 {
        let n = from.n();
        let m_rate = self.f.sup_rate();
        let entry_bound = (1.0 / self.f.inf_rate()).max(2.0 * m_rate).max(1.0);
        let minor_bound = factorial(2 * n) * entry_bound.powi(2 * n as i32);
        let q = poisson_tail_above(m_rate * self.t, cutoff as i64 - from.max_coord() as i64);
        minor_bound * ((n as f64 + 1.0) + 2.0 * n as f64 * m_rate) * q
    }

    /// Residual of x'-marginalization: summing the block kernel over all x'
    /// interlacing above y' (top coordinate truncated at `cutoff`) against
    /// the N-level Karlin-McGregor density from y to y'.
    pub fn marginalization_residual(
        &self,
        from: &TwoLevelState,
        y_to: &[usize],
        cutoff: usize,
    ) -> Result<CheckedResidual, SemigroupError> {
        let n = from.n();
        if y_to.len() != n {
            return Err(SemigroupError::LengthMismatch(y_to.len(), n));
        }
        let mut sum = 0.0;
        for to in interlacings_above_truncated(y_to, cutoff) {
            sum += self.block_kernel(from, &to)?;
        }
        let km = self.km_density(from.y(), y_to)?;
        Ok(CheckedResidual {
            value: (sum - km).abs(),
            tail_bound: self.block_column_tail(from, cutoff),
        })
    }

    /// Residual of the link intertwining at the (N+1 vs N)-level
    /// determinants: sum_{x''} P^{N+1}(x, x'') Lambda(x'', y') against
    /// sum_{y''} Lambda(x, y'') P^N(y'', y'). The right side is finite; the
    /// left is truncated at `cutoff` with a certified tail.
    pub fn km_link_intertwining_residual(
        &self,
        x_from: &[usize],
        y_to: &[usize],
        cutoff: usize,
    ) -> Result<CheckedResidual, SemigroupError> {
        let n = y_to.len();
        if x_from.len() != n + 1 {
            return Err(SemigroupError::LengthMismatch(x_from.len(), n + 1));
        }
        let mut lhs = 0.0;
        for x_mid in chamber_points(n + 1, cutoff) {
            let link = crate::interlacing::link_weight(self.f, &x_mid, y_to);
            if link > 0.0 {
                lhs += self.km_density(x_from, &x_mid)? * link;
            }
        }
        let mut rhs = 0.0;
        for y_mid in interlacings_below(x_from) {
            let link = crate::interlacing::link_weight(self.f, x_from, &y_mid);
            rhs += link * self.km_density(&y_mid, y_to)?;
        }
        let link_sup = (1.0 / self.f.inf_rate()).powi(n as i32);
        let tail = link_sup * self.chain_escape_tail(n + 1, *x_from.last().unwrap(), cutoff);
        Ok(CheckedResidual { value: (lhs - rhs).abs(), tail_bound: tail })
    }

    /// Residual of the link intertwining between the (N+1)-level determinant
    /// and the block kernel, evaluated entrywise at (x, (y', x')):
    /// P^{N+1}(x, x') Lambda(x', y') against
    /// sum_{y'' below x} Lambda(x, y'') U[(y'', x), (y', x')]. Both sides are
    /// finite sums, so the residual carries no truncation tail.
    pub fn km_block_intertwining_residual(
        &self,
        x_from: &[usize],
        to: &TwoLevelState,
    ) -> Result<f64, SemigroupError> {
        let n = to.n();
        if x_from.len() != n + 1 {
            return Err(SemigroupError::LengthMismatch(x_from.len(), n + 1));
        }
        let lhs = self.km_density(x_from, to.x())?
            * crate::interlacing::link_weight(self.f, to.x(), to.y());
        let mut rhs = 0.0;
        for y_mid in interlacings_below(x_from) {
            let link = crate::interlacing::link_weight(self.f, x_from, &y_mid);
            let from = TwoLevelState { y: y_mid, x: x_from.to_vec() };
            rhs += link * self.block_kernel(&from, to)?;
        }
        Ok((lhs - rhs).abs())
    }

    /// Relative residual of harmonicity: sum_y P_t(x, y) h(y) = h(x), with
    /// the sum truncated at `cutoff` and a certified dominated tail.
    pub fn harmonicity_residual(
        &self,
        x_from: &[usize],
        cutoff: usize,
    ) -> Result<CheckedResidual, SemigroupError> {
        let n = x_from.len();
        let mut sum = 0.0;
        for y in chamber_points(n, cutoff) {
            let km = self.km_density(x_from, &y)?;
            if km != 0.0 {
                sum += km * self.harmonics.harmonic(&y).map_err(BirthChainError::Spectral)?;
            }
        }
        let h_x = self.harmonics.harmonic(x_from).map_err(BirthChainError::Spectral)?;
        // Dominated tail: rows with top coordinate j > cutoff carry KM mass
        // at most N P(Poisson(Mt) >= j - x_N) and harmonic value at most
        // N! (1 + j/s)^{N(N-1)} (Leibniz with J_i(y) <= (y/s)^i / i!).
        let s = self.f.inf_rate();
        let mu = self.f.sup_rate() * self.t;
        let x_top = *x_from.last().unwrap();
        let mut tail = 0.0;
        let mut j = cutoff + 1;
        loop {
            let mass = n as f64 * poisson_tail_above(mu, j as i64 - x_top as i64 - 1);
            let h_bound =
                factorial(n) * (1.0 + j as f64 / s).powi((n * n.saturating_sub(1)) as i32);
            let term = mass * h_bound;
            tail += term;
            j += 1;
            if term < 1e-18 * h_x.abs() || j > cutoff + 400 {
                break;
            }
        }
        Ok(CheckedResidual { value: (sum - h_x).abs() / h_x, tail_bound: tail / h_x })
    }

    /// Doob law of one level started densely packed: row y of
    /// P-hat^n_t(packed_n, .).
    pub fn packed_level_density(&self, n: usize, y: &[usize]) -> Result<f64, SemigroupError> {
        let packed: Vec<usize> = (0..n).collect();
        self.doob_km_density(&packed, y)
    }

    /// Residual of consistency across levels from packed starts: pushing the
    /// packed (n+1)-level law through the Markov link against the packed
    /// n-level law, at row y. The x-sum is truncated at `cutoff`; by
    /// positivity of the honest Markov row, the escaped mass is exactly
    /// 1 - (captured mass), which bounds the truncation error since the link
    /// is a probability.
    pub fn packed_consistency_residual(
        &self,
        n: usize,
        y: &[usize],
        cutoff: usize,
    ) -> Result<CheckedResidual, SemigroupError> {
        if y.len() != n {
            return Err(SemigroupError::LengthMismatch(y.len(), n));
        }
        let mut lhs = 0.0;
        let mut captured = 0.0;
        for x in chamber_points(n + 1, cutoff) {
            let p = self.packed_level_density(n + 1, &x)?;
            if p == 0.0 {
                continue;
            }
            captured += p;
            let link = crate::interlacing::markov_link_with(&self.harmonics, self.f, &x, y);
            if link > 0.0 {
                lhs += p * link;
            }
        }
        let rhs = self.packed_level_density(n, y)?;
        Ok(CheckedResidual { value: (lhs - rhs).abs(), tail_bound: (1.0 - captured).max(0.0) })
    }

    /// The time-t law of the whole array started densely packed, as a Gibbs
    /// measure: the exact top-row law truncated at `edge`, pushed down
    /// through the Markov links. The escaped top-row mass (one minus the
    /// captured honest-Markov row sum) is allowed as extra slack on the
    /// weight normalization and is recoverable from the measure's total
    /// mass, so callers can certify truncation errors.
    pub fn evolved_gibbs(
        &self,
        n_levels: usize,
        edge: usize,
        cap: usize,
    ) -> Result<GibbsMeasure, SemigroupError> {
        let mut tops = Vec::new();
        let mut captured = 0.0;
        for z in chamber_points(n_levels, edge) {
            let w = self.packed_level_density(n_levels, &z)?.max(0.0);
            if w > 0.0 {
                captured += w;
                tops.push((ChamberPoint::new(z)?, w));
            }
        }
        let tail = (1.0 - captured).max(0.0);
        Ok(GibbsMeasure::from_top_truncated(self.f, &tops, cap, tail + 1e-9)?)
    }
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|v| v as f64).product()
}

/// All x' of length n+1 interlacing above y' with the unbounded top
/// coordinate truncated at `cutoff`.
pub fn interlacings_above_truncated(y_to: &[usize], cutoff: usize) -> Vec<TwoLevelState> {
    let n = y_to.len();
    let mut out = Vec::new();
    // x'_j ranges over (y'_{j-1}, y'_j] for j < n (0-based: [prev+1, y_j]),
    // the first over [0, y'_0], the last over (y'_{n-1}, cutoff].
    let mut x = vec![0usize; n + 1];
    fn rec(out: &mut Vec<TwoLevelState>, x: &mut Vec<usize>, y: &[usize], j: usize, cutoff: usize) {
        let n = y.len();
        if j == n {
            for v in (y[n - 1] + 1)..=cutoff {
                x[n] = v;
                out.push(TwoLevelState { y: y.to_vec(), x: x.clone() });
            }
            return;
        }
        let lo = if j == 0 { 0 } else { y[j - 1] + 1 };
        for v in lo..=y[j] {
            x[j] = v;
            rec(out, x, y, j + 1, cutoff);
        }
    }
    if cutoff > y_to[n - 1] {
        rec(&mut out, &mut x, y_to, 0, cutoff);
    }
    out
}
