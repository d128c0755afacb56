//! Interlacing integer arrays and the Gibbs measures living on them.
//!
//! A row of level n is a strictly increasing n-tuple of nonnegative
//! integers. Row y (length n) interlaces below row x (length n+1) when
//!
//! ```text
//!   x_1 <= y_1 < x_2 <= y_2 < ... <= y_n < x_{n+1}
//! ```
//!
//! so each y_i lives in the gap [x_i, x_{i+1} - 1] and the gaps are disjoint:
//! interlacing rows below x form a product of independent ranges, which makes
//! exact enumeration and exact sampling cheap. A pattern stacks rows of
//! levels 1..N with every adjacent pair interlacing. The canonical link
//! weight prod_i 1/lambda(y_i), normalized by the ratio of chamber harmonic
//! functions, is a Markov kernel from level n+1 rows to level n rows; chains
//! of those links under a top-row law are the Gibbs measures sampled here.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rate_field::RateField;
use crate::spectral::HarmonicTable;

/// Guard for exhaustive pattern enumeration.
pub const DEFAULT_SUPPORT_CAP: usize = 10_000_000;

#[derive(Debug, Error, PartialEq)]
pub enum InterlacingError {
    #[error("coordinates must be strictly increasing nonnegative integers")]
    NotAChamberPoint,
    #[error("row of length {lower} cannot interlace below a row of length {upper}")]
    LengthMismatch { lower: usize, upper: usize },
    #[error("rows do not interlace")]
    NotInterlacing,
    #[error("pattern enumeration exceeded the cap of {cap} patterns")]
    SupportTooLarge { cap: usize },
    #[error("top-row weights must be nonnegative and sum to 1, got total {total}")]
    BadWeights { total: f64 },
}

/// Strictly increasing tuple of nonnegative integers (one row of an array).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct ChamberPoint(Vec<usize>);

impl TryFrom<Vec<usize>> for ChamberPoint {
    type Error = InterlacingError;
    fn try_from(coords: Vec<usize>) -> Result<Self, Self::Error> {
        ChamberPoint::new(coords)
    }
}

impl From<ChamberPoint> for Vec<usize> {
    fn from(p: ChamberPoint) -> Self {
        p.0
    }
}

impl ChamberPoint {
    pub fn new(coords: Vec<usize>) -> Result<Self, InterlacingError> {
        if coords.is_empty() || coords.windows(2).any(|w| w[0] >= w[1]) {
            return Err(InterlacingError::NotAChamberPoint);
        }
        Ok(ChamberPoint(coords))
    }

    /// Densely packed row (0, 1, .., n-1).
    pub fn packed(n: usize) -> Self {
        assert!(n >= 1);
        ChamberPoint((0..n).collect())
    }

    pub fn n(&self) -> usize {
        self.0.len()
    }

    pub fn coords(&self) -> &[usize] {
        &self.0
    }
}

/// All strictly increasing n-tuples with coordinates <= max_coord.
pub fn chamber_points(n: usize, max_coord: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut current = Vec::with_capacity(n);
    fn rec(out: &mut Vec<Vec<usize>>, current: &mut Vec<usize>, n: usize, from: usize, max: usize) {
        if current.len() == n {
            out.push(current.clone());
            return;
        }
        let remaining = n - current.len();
        for v in from..=(max + 1 - remaining) {
            current.push(v);
            rec(out, current, n, v + 1, max);
            current.pop();
        }
    }
    if n >= 1 && max_coord + 1 >= n {
        rec(&mut out, &mut current, n, 0, max_coord);
    }
    out
}

/// Strict interlacing of `lower` (length n) below `upper` (length n+1).
/// An empty `lower` interlaces below any single-coordinate row.
pub fn interlaces(lower: &[usize], upper: &[usize]) -> bool {
    if upper.len() != lower.len() + 1 {
        return false;
    }
    lower
        .iter()
        .enumerate()
        .all(|(i, &y)| upper[i] <= y && y < upper[i + 1])
}

/// The interlacing indicator written as a determinant: entries
/// -1(x_i > y_j) for j < n and a final column of ones. Evaluates to 1
/// exactly when the rows interlace, 0 otherwise.
pub fn interlace_indicator_det(lower: &[usize], upper: &[usize]) -> Result<f64, InterlacingError> {
    let n = upper.len();
    if lower.len() + 1 != n {
        return Err(InterlacingError::LengthMismatch { lower: lower.len(), upper: n });
    }
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n - 1 {
            m[i * n + j] = if upper[i] > lower[j] { -1.0 } else { 0.0 };
        }
        m[i * n + n - 1] = 1.0;
    }
    Ok(crate::linalg::det_in_place(&mut m, n))
}

/// Number of rows interlacing below `upper`: the product of gap widths.
pub fn interlacing_count_below(upper: &[usize]) -> usize {
    upper.windows(2).map(|w| w[1] - w[0]).product()
}

/// Every row interlacing below `upper`, in lexicographic order. The i-th
/// coordinate ranges over [x_i, x_{i+1}-1] independently of the others.
pub fn interlacings_below(upper: &[usize]) -> Vec<Vec<usize>> {
    let n = upper.len() - 1;
    let mut out = Vec::with_capacity(interlacing_count_below(upper));
    let mut current = vec![0usize; n];
    fn rec(out: &mut Vec<Vec<usize>>, current: &mut Vec<usize>, upper: &[usize], i: usize) {
        if i == upper.len() - 1 {
            out.push(current.clone());
            return;
        }
        for v in upper[i]..upper[i + 1] {
            current[i] = v;
            rec(out, current, upper, i + 1);
        }
    }
    if n == 0 {
        out.push(Vec::new());
        return out;
    }
    rec(&mut out, &mut current, upper, 0);
    out
}

/// Unnormalized link weight: prod_i 1/lambda(y_i) if y interlaces below x,
/// else 0.
pub fn link_weight(f: &RateField, upper: &[usize], lower: &[usize]) -> f64 {
    if !interlaces(lower, upper) {
        return 0.0;
    }
    lower.iter().map(|&y| 1.0 / f.rate(y)).product()
}

/// Markov link from level n+1 rows to level n rows: the link weight times
/// h_n(lower)/h_{n+1}(upper). Rows over `lower` sum to 1.
pub fn markov_link(f: &RateField, upper: &[usize], lower: &[usize]) -> f64 {
    let w = link_weight(f, upper, lower);
    if w == 0.0 {
        return 0.0;
    }
    let table = HarmonicTable::build(f, upper.len() - 1, *upper.last().unwrap());
    markov_link_with(&table, f, upper, lower)
}

/// Same as `markov_link` with a caller-supplied harmonic table (hot loops).
/// For a single-coordinate `lower` the numerator harmonic function is 1.
pub fn markov_link_with(
    table: &HarmonicTable,
    f: &RateField,
    upper: &[usize],
    lower: &[usize],
) -> f64 {
    let w = link_weight(f, upper, lower);
    if w == 0.0 {
        return 0.0;
    }
    let h_upper = table.harmonic(upper).expect("upper is a chamber point");
    let h_lower = if lower.is_empty() {
        1.0
    } else {
        table.harmonic(lower).expect("lower is a chamber point")
    };
    w * h_lower / h_upper
}

/// Interlacing array: levels 1..N, level k holding k coordinates.
/// Serialized as a plain array of arrays, level 1 first.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<usize>>", into = "Vec<Vec<usize>>")]
pub struct GtPattern {
    levels: Vec<Vec<usize>>,
}

impl TryFrom<Vec<Vec<usize>>> for GtPattern {
    type Error = InterlacingError;
    fn try_from(levels: Vec<Vec<usize>>) -> Result<Self, Self::Error> {
        GtPattern::new(levels)
    }
}

impl From<GtPattern> for Vec<Vec<usize>> {
    fn from(p: GtPattern) -> Self {
        p.levels
    }
}

impl GtPattern {
    pub fn new(levels: Vec<Vec<usize>>) -> Result<Self, InterlacingError> {
        if levels.is_empty() {
            return Err(InterlacingError::NotAChamberPoint);
        }
        for (k, row) in levels.iter().enumerate() {
            if row.len() != k + 1 {
                return Err(InterlacingError::LengthMismatch { lower: row.len(), upper: k + 1 });
            }
            if row.windows(2).any(|w| w[0] >= w[1]) {
                return Err(InterlacingError::NotAChamberPoint);
            }
        }
        for k in 0..levels.len() - 1 {
            if !interlaces(&levels[k], &levels[k + 1]) {
                return Err(InterlacingError::NotInterlacing);
            }
        }
        Ok(GtPattern { levels })
    }

    /// Fully packed array: level k is (0, 1, .., k-1).
    pub fn packed(n_levels: usize) -> Self {
        assert!(n_levels >= 1);
        GtPattern { levels: (1..=n_levels).map(|k| (0..k).collect()).collect() }
    }

    pub fn n_levels(&self) -> usize {
        self.levels.len()
    }

    /// Row of level k (1-based).
    pub fn level(&self, k: usize) -> &[usize] {
        &self.levels[k - 1]
    }

    pub fn levels(&self) -> &[Vec<usize>] {
        &self.levels
    }

    pub fn top(&self) -> &[usize] {
        self.levels.last().unwrap()
    }

    /// First particle of every level, bottom up.
    pub fn left_edge(&self) -> Vec<usize> {
        self.levels.iter().map(|row| row[0]).collect()
    }

    /// Last particle of every level, bottom up.
    pub fn right_edge(&self) -> Vec<usize> {
        self.levels.iter().map(|row| *row.last().unwrap()).collect()
    }

    /// True when level `n` has a particle at site `x`.
    pub fn occupies(&self, n: usize, x: usize) -> bool {
        self.levels[n - 1].binary_search(&x).is_ok()
    }
}

/// One exact sampling step: draw a row below `upper` from the Markov link.
pub fn sample_row_below(
    table: &HarmonicTable,
    f: &RateField,
    upper: &[usize],
    rng: &mut impl Rng,
) -> Vec<usize> {
    let candidates = interlacings_below(upper);
    debug_assert!(!candidates.is_empty());
    let weights: Vec<f64> =
        candidates.iter().map(|lower| markov_link_with(table, f, upper, lower)).collect();
    let total: f64 = weights.iter().sum();
    debug_assert!((total - 1.0).abs() < 1e-8, "link row sums to {total}");
    let mut u: f64 = rng.gen::<f64>() * total;
    for (cand, w) in candidates.iter().zip(&weights) {
        u -= w;
        if u <= 0.0 {
            return cand.clone();
        }
    }
    candidates.last().unwrap().clone()
}

/// Exact Gibbs sample of a full pattern below a fixed top row.
pub fn sample_pattern_below(f: &RateField, top: &ChamberPoint, rng: &mut impl Rng) -> GtPattern {
    let n = top.n();
    let table = HarmonicTable::build(f, n.saturating_sub(1), *top.coords().last().unwrap());
    let mut levels: Vec<Vec<usize>> = vec![Vec::new(); n];
    levels[n - 1] = top.coords().to_vec();
    for k in (1..n).rev() {
        levels[k - 1] = sample_row_below(&table, f, &levels[k], rng);
    }
    GtPattern { levels }
}

/// Finitely supported measure on patterns: a top-row law pushed down through
/// the Markov links, with every pattern enumerated explicitly.
#[derive(Debug, Clone)]
pub struct GibbsMeasure {
    n_levels: usize,
    patterns: Vec<GtPattern>,
    weights: Vec<f64>,
    cumulative: Vec<f64>,
}

impl GibbsMeasure {
    /// Build from a top-row distribution whose mass must reach 1 within
    /// 1e-10. Use `from_top_truncated` when the top law is deliberately
    /// truncated and carries a certified mass deficit.
    pub fn from_top(
        f: &RateField,
        top: &[(ChamberPoint, f64)],
        cap: usize,
    ) -> Result<Self, InterlacingError> {
        Self::from_top_truncated(f, top, cap, 1e-10)
    }

    pub fn from_top_truncated(
        f: &RateField,
        top: &[(ChamberPoint, f64)],
        cap: usize,
        mass_slack: f64,
    ) -> Result<Self, InterlacingError> {
        let total: f64 = top.iter().map(|(_, w)| w).sum();
        if top.iter().any(|(_, w)| *w < 0.0) || (total - 1.0).abs() > mass_slack {
            return Err(InterlacingError::BadWeights { total });
        }
        let n_levels = top.first().map(|(p, _)| p.n()).unwrap_or(0);
        if n_levels == 0 {
            return Err(InterlacingError::NotAChamberPoint);
        }
        let max_coord = top
            .iter()
            .map(|(p, _)| *p.coords().last().unwrap())
            .max()
            .unwrap();
        let table = HarmonicTable::build(f, n_levels.saturating_sub(1), max_coord);
        let mut patterns = Vec::new();
        let mut weights = Vec::new();
        // Depth-first expansion level by level; weights multiply link by link.
        struct Frame<'a> {
            table: &'a HarmonicTable,
            f: &'a RateField,
            cap: usize,
        }
        fn expand(
            ctx: &Frame,
            stack: &mut Vec<Vec<usize>>,
            weight: f64,
            patterns: &mut Vec<GtPattern>,
            weights: &mut Vec<f64>,
        ) -> Result<(), InterlacingError> {
            let current = stack.last().unwrap().clone();
            if current.len() == 1 {
                if patterns.len() == ctx.cap {
                    return Err(InterlacingError::SupportTooLarge { cap: ctx.cap });
                }
                let mut levels = stack.clone();
                levels.reverse();
                patterns.push(GtPattern { levels });
                weights.push(weight);
                return Ok(());
            }
            for lower in interlacings_below(&current) {
                let w = markov_link_with(ctx.table, ctx.f, &current, &lower);
                stack.push(lower);
                expand(ctx, stack, weight * w, patterns, weights)?;
                stack.pop();
            }
            Ok(())
        }
        let ctx = Frame { table: &table, f, cap };
        for (point, w) in top {
            if *w == 0.0 {
                continue;
            }
            if point.n() != n_levels {
                return Err(InterlacingError::LengthMismatch { lower: point.n(), upper: n_levels });
            }
            let mut stack = vec![point.coords().to_vec()];
            expand(&ctx, &mut stack, *w, &mut patterns, &mut weights)?;
        }
        let mut cumulative = Vec::with_capacity(weights.len());
        let mut acc = 0.0;
        for &w in &weights {
            acc += w;
            cumulative.push(acc);
        }
        Ok(GibbsMeasure { n_levels, patterns, weights, cumulative })
    }

    pub fn n_levels(&self) -> usize {
        self.n_levels
    }

    pub fn support(&self) -> &[GtPattern] {
        &self.patterns
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn total_mass(&self) -> f64 {
        *self.cumulative.last().unwrap_or(&0.0)
    }

    /// Categorical draw by inverse CDF; deterministic given the RNG state.
    pub fn sample(&self, rng: &mut impl Rng) -> &GtPattern {
        let u: f64 = rng.gen::<f64>() * self.total_mass();
        let idx = self.cumulative.partition_point(|&c| c < u);
        &self.patterns[idx.min(self.patterns.len() - 1)]
    }

    /// Expectation of the product of occupation indicators at the given
    /// (level, site) points: the correlation function of the measure.
    pub fn correlation(&self, points: &[(usize, usize)]) -> f64 {
        self.patterns
            .iter()
            .zip(&self.weights)
            .filter(|(p, _)| points.iter().all(|&(n, x)| p.occupies(n, x)))
            .map(|(_, w)| w)
            .sum()
    }
}
