//! Poisson tail estimates used by truncation certificates, and chi-square
//! goodness-of-fit / two-sample tests used to compare simulation ensembles
//! against exact laws.

use statrs::distribution::{ChiSquared, ContinuousCDF};
use statrs::function::gamma::ln_gamma;

/// P(Poisson(mu) = k).
pub fn poisson_pmf(mu: f64, k: u64) -> f64 {
    if mu <= 0.0 {
        return if k == 0 { 1.0 } else { 0.0 };
    }
    (k as f64 * mu.ln() - mu - ln_gamma(k as f64 + 1.0)).exp()
}

/// Upper bound on P(Poisson(mu) > k), tight to machine precision. For
/// negative `k` this is 1. Beyond the mode the terms decay geometrically, so
/// the truncated remainder is bounded by a geometric series and added back,
/// keeping the result a certified upper bound.
pub fn poisson_tail_above(mu: f64, k: i64) -> f64 {
    if k < 0 {
        return 1.0;
    }
    let start = (k + 1) as u64;
    let mut term = poisson_pmf(mu, start);
    let mut sum = term;
    let mut j = start;
    loop {
        j += 1;
        let ratio = mu / j as f64;
        term *= ratio;
        sum += term;
        if ratio < 1.0 {
            let remainder = term * ratio / (1.0 - ratio);
            if remainder < sum * 1e-15 + 1e-300 {
                return (sum + remainder).min(1.0);
            }
        }
        if j > start + 100_000 {
            return sum.min(1.0);
        }
    }
}

/// Outcome of a chi-square comparison after pooling sparse bins.
#[derive(Debug, Clone)]
pub struct ChiSquare {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
    /// Bin count after pooling, including the pooled remainder when present.
    pub bins_used: usize,
}

fn chi_square_p(statistic: f64, dof: usize) -> f64 {
    if dof == 0 {
        return 1.0;
    }
    let dist = ChiSquared::new(dof as f64).expect("dof > 0");
    dist.sf(statistic)
}

/// Goodness of fit of observed counts against given probabilities. Bins whose
/// expected count falls below `min_expected` are pooled into one remainder
/// bin; any probability mass not covered by `probs` joins the remainder.
pub fn chi_square_gof(observed: &[u64], probs: &[f64], min_expected: f64) -> ChiSquare {
    assert_eq!(observed.len(), probs.len());
    let total: u64 = observed.iter().sum();
    let n = total as f64;
    let mut statistic = 0.0;
    let mut bins_used = 0usize;
    let mut pooled_obs = 0.0;
    let mut pooled_exp = n * (1.0 - probs.iter().sum::<f64>()).max(0.0);
    for (&obs, &p) in observed.iter().zip(probs) {
        let expected = n * p;
        if expected < min_expected {
            pooled_obs += obs as f64;
            pooled_exp += expected;
        } else {
            statistic += (obs as f64 - expected).powi(2) / expected;
            bins_used += 1;
        }
    }
    if pooled_exp > 0.0 {
        statistic += (pooled_obs - pooled_exp).powi(2) / pooled_exp;
        bins_used += 1;
    }
    let dof = bins_used.saturating_sub(1);
    ChiSquare { statistic, dof, p_value: chi_square_p(statistic, dof), bins_used }
}

/// Two-sample chi-square on paired histograms over the same bins. Bins where
/// the combined count is below `min_combined` are pooled.
pub fn chi_square_two_sample(a: &[u64], b: &[u64], min_combined: f64) -> ChiSquare {
    assert_eq!(a.len(), b.len());
    let na: u64 = a.iter().sum();
    let nb: u64 = b.iter().sum();
    let (na, nb) = (na as f64, nb as f64);
    let grand = na + nb;
    let mut cells: Vec<(f64, f64)> = Vec::new();
    let mut pooled = (0.0, 0.0);
    let mut has_pooled = false;
    for (&ca, &cb) in a.iter().zip(b) {
        let rowsum = (ca + cb) as f64;
        if rowsum == 0.0 {
            continue;
        }
        if rowsum < min_combined {
            pooled.0 += ca as f64;
            pooled.1 += cb as f64;
            has_pooled = true;
        } else {
            cells.push((ca as f64, cb as f64));
        }
    }
    if has_pooled {
        cells.push(pooled);
    }
    let mut statistic = 0.0;
    for &(ca, cb) in &cells {
        let rowsum = ca + cb;
        let ea = rowsum * na / grand;
        let eb = rowsum * nb / grand;
        if ea > 0.0 {
            statistic += (ca - ea).powi(2) / ea;
        }
        if eb > 0.0 {
            statistic += (cb - eb).powi(2) / eb;
        }
    }
    let dof = cells.len().saturating_sub(1);
    ChiSquare { statistic, dof, p_value: chi_square_p(statistic, dof), bins_used: cells.len() }
}
