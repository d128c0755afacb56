//! Site-dependent jump rates: a finite prefix of per-site values followed by a
//! constant tail. Rates are uniformly bounded away from 0 and infinity, which
//! every downstream contour choice and tail estimate relies on.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Relative tolerance under which two rates count as equal. Residue evaluation
/// switches to quadrature when enclosed rates collide at this tolerance.
pub const RATE_EQ_REL_TOL: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum RateFieldError {
    #[error("rate at site {site} is {value}, must be finite and > 0")]
    NonPositiveRate { site: usize, value: f64 },
    #[error("tail rate is {value}, must be finite and > 0")]
    BadTail { value: f64 },
}

/// Jump-rate function x -> lambda(x) on the nonnegative integers.
///
/// `prefix[x]` gives the rate for sites below the cut, `tail` for every site at
/// or beyond it. Construction checks 0 < s <= lambda(x) <= M < infinity, with
/// s and M cached for contour placement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RateFieldSpec", into = "RateFieldSpec")]
pub struct RateField {
    prefix: Vec<f64>,
    tail: f64,
    inf: f64,
    sup: f64,
}

/// Wire form: `{"prefix": [..], "tail": r}`. `prefix` may be absent or empty;
/// `tail` is mandatory.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateFieldSpec {
    #[serde(default)]
    pub prefix: Vec<f64>,
    pub tail: f64,
}

impl TryFrom<RateFieldSpec> for RateField {
    type Error = RateFieldError;
    fn try_from(spec: RateFieldSpec) -> Result<Self, Self::Error> {
        RateField::new(spec.prefix, spec.tail)
    }
}

impl From<RateField> for RateFieldSpec {
    fn from(f: RateField) -> Self {
        RateFieldSpec { prefix: f.prefix, tail: f.tail }
    }
}

impl RateField {
    pub fn new(prefix: Vec<f64>, tail: f64) -> Result<Self, RateFieldError> {
        if !tail.is_finite() || tail <= 0.0 {
            return Err(RateFieldError::BadTail { value: tail });
        }
        for (site, &value) in prefix.iter().enumerate() {
            if !value.is_finite() || value <= 0.0 {
                return Err(RateFieldError::NonPositiveRate { site, value });
            }
        }
        let inf = prefix.iter().copied().fold(tail, f64::min);
        let sup = prefix.iter().copied().fold(tail, f64::max);
        Ok(RateField { prefix, tail, inf, sup })
    }

    /// Unit rates everywhere; the chain is then a standard Poisson counter.
    pub fn homogeneous() -> Self {
        RateField::new(Vec::new(), 1.0).expect("unit tail is valid")
    }

    pub fn rate(&self, x: usize) -> f64 {
        *self.prefix.get(x).unwrap_or(&self.tail)
    }

    /// Infimum s of the rates (attained: the range is finite).
    pub fn inf_rate(&self) -> f64 {
        self.inf
    }

    /// Supremum M of the rates.
    pub fn sup_rate(&self) -> f64 {
        self.sup
    }

    /// First site governed by the constant tail.
    pub fn cut(&self) -> usize {
        self.prefix.len()
    }

    pub fn prefix(&self) -> &[f64] {
        &self.prefix
    }

    pub fn tail(&self) -> f64 {
        self.tail
    }

    /// The distinct values the rate function takes (used for exact sup bounds
    /// over all sites, e.g. contraction factors on a contour).
    pub fn value_range(&self) -> impl Iterator<Item = f64> + '_ {
        self.prefix.iter().copied().chain(std::iter::once(self.tail))
    }

    /// Equality at the tolerance that gates residue evaluation.
    pub fn rates_equal(a: f64, b: f64) -> bool {
        (a - b).abs() <= RATE_EQ_REL_TOL * a.abs().max(b.abs())
    }

    /// True when lambda(lo), .., lambda(hi) are pairwise distinct at the
    /// equality tolerance. An empty or single-site range is trivially distinct.
    pub fn distinct_in(&self, lo: usize, hi: usize) -> bool {
        for i in lo..=hi {
            for j in (i + 1)..=hi {
                if Self::rates_equal(self.rate(i), self.rate(j)) {
                    return false;
                }
            }
            // Beyond the cut all rates repeat; two tail sites collide.
            if i >= self.cut() && hi > i {
                return false;
            }
        }
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prefix_then_tail_lookup() {
        let f = RateField::new(vec![1.0, 2.0], 1.0).unwrap();
        assert_eq!(f.rate(0), 1.0);
        assert_eq!(f.rate(1), 2.0);
        assert_eq!(f.rate(2), 1.0);
        assert_eq!(f.rate(100), 1.0);
        assert_eq!(f.inf_rate(), 1.0);
        assert_eq!(f.sup_rate(), 2.0);
        assert_eq!(f.cut(), 2);
    }

    #[test]
    fn empty_prefix_is_homogeneous() {
        let f = RateField::new(vec![], 1.0).unwrap();
        assert_eq!(f.rate(0), 1.0);
        assert_eq!(f.rate(7), 1.0);
        assert_eq!(f, RateField::homogeneous());
    }

    #[test]
    fn rejects_nonpositive_rates() {
        assert_eq!(
            RateField::new(vec![1.0, 0.0], 1.0),
            Err(RateFieldError::NonPositiveRate { site: 1, value: 0.0 })
        );
        assert!(RateField::new(vec![1.0, -2.0], 1.0).is_err());
        assert!(RateField::new(vec![1.0], 0.0).is_err());
        assert!(RateField::new(vec![1.0], f64::NAN).is_err());
        assert!(RateField::new(vec![f64::INFINITY], 1.0).is_err());
    }

    #[test]
    fn json_round_trip() {
        let f: RateField = serde_json::from_str(r#"{"prefix":[1.0,2.0],"tail":1.0}"#).unwrap();
        assert_eq!(f.rate(1), 2.0);
        let back = serde_json::to_string(&f).unwrap();
        let again: RateField = serde_json::from_str(&back).unwrap();
        assert_eq!(f, again);

        // Tail alone is fine; a missing tail or an unknown key is not.
        assert!(serde_json::from_str::<RateField>(r#"{"tail":2.5}"#).is_ok());
        assert!(serde_json::from_str::<RateField>(r#"{"prefix":[1.0]}"#).is_err());
        assert!(serde_json::from_str::<RateField>(r#"{"tail":1.0,"cut":3}"#).is_err());
        assert!(serde_json::from_str::<RateField>(r#"{"prefix":[0.0],"tail":1.0}"#).is_err());
    }

    #[test]
    fn distinctness_respects_tail_repeats() {
        let f = RateField::new(vec![1.0, 2.0, 4.0], 3.0).unwrap();
        assert!(f.distinct_in(0, 3)); // 1,2,4,3
        assert!(!f.distinct_in(0, 4)); // two tail sites
        assert!(f.distinct_in(3, 3)); // single tail site is fine
        assert!(f.distinct_in(2, 3));

        let g = RateField::new(vec![1.0, 2.0, 1.0 + 1e-15], 5.0).unwrap();
        assert!(!g.distinct_in(0, 2)); // sites 0 and 2 collide at tolerance
        assert!(g.distinct_in(0, 1));
    }
}
