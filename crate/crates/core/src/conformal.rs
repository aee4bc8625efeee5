//! Split conformal mechanics: threshold selection and prediction sets.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Calibration (or accessible) non-conformity scores, kept sorted.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSample {
    scores: Vec<f64>,
    lower_bound: f64,
}

impl ScoreSample {
    /// Sorts `scores`; rejects NaN and scores below `lower_bound`.
    pub fn new(mut scores: Vec<f64>, lower_bound: f64) -> Result<Self> {
        if lower_bound.is_nan() {
            return Err(Error::domain("score-space lower bound is NaN"));
        }
        if let Some(bad) = scores.iter().find(|s| s.is_nan() || **s == f64::INFINITY) {
            return Err(Error::domain(format!("non-finite score {bad}")));
        }
        scores.sort_unstable_by(f64::total_cmp);
        if let Some(&first) = scores.first() {
            if first < lower_bound {
                return Err(Error::domain(format!(
                    "score {first} lies below the score-space lower bound {lower_bound}"
                )));
            }
        }
        Ok(Self {
            scores,
            lower_bound,
        })
    }

    /// Scores on the whole real line.
    pub fn unbounded(scores: Vec<f64>) -> Result<Self> {
        Self::new(scores, f64::NEG_INFINITY)
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn lower_bound(&self) -> f64 {
        self.lower_bound
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn min(&self) -> Option<f64> {
        self.scores.first().copied()
    }

    pub fn max(&self) -> Option<f64> {
        self.scores.last().copied()
    }
}

/// Acceptance threshold; `+inf` when the augmented infinite score is selected.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct Threshold(f64);

impl Threshold {
    pub const INFINITE: Threshold = Threshold(f64::INFINITY);

    pub fn finite(value: f64) -> Self {
        Threshold(value)
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn is_infinite(self) -> bool {
        self.0 == f64::INFINITY
    }

    /// `score <= threshold`, with everything accepted by `+inf`.
    pub fn accepts(self, score: f64) -> bool {
        self.is_infinite() || score <= self.0
    }
}

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::domain(format!(
            "significance level must lie in (0, 1), got {alpha}"
        )));
    }
    Ok(())
}

/// `ceil((1 - alpha)(n + 1)) - 1`: how many calibration scores may fall
/// strictly below `r` while the threshold still reaches `r`.
pub fn n_alpha(n: usize, alpha: f64) -> Result<usize> {
    check_alpha(alpha)?;
    if n == 0 {
        return Err(Error::Empty("calibration size must be at least 1"));
    }
    let x = (1.0 - alpha) * (n as f64 + 1.0);
    // (1 - 0.1) * 10 must give rank 9, not 10.
    let rounded = x.round();
    let rank = if (x - rounded).abs() <= 1e-9 * rounded.max(1.0) {
        rounded
    } else {
        x.ceil()
    };
    Ok((rank as usize).saturating_sub(1).min(n))
}

/// The `ceil((1 - alpha)(n + 1))`-th smallest of the calibration scores
/// augmented with `+inf`.
pub fn compute_threshold(cal: &ScoreSample, alpha: f64) -> Result<Threshold> {
    if cal.is_empty() {
        return Err(Error::Empty("calibration scores"));
    }
    let rank = n_alpha(cal.len(), alpha)? + 1;
    Ok(threshold_at_rank(cal.scores(), rank))
}

/// The `rank`-th smallest (1-based) of sorted `scores` plus `+inf`.
pub(crate) fn threshold_at_rank(sorted: &[f64], rank: usize) -> Threshold {
    if rank > sorted.len() {
        Threshold::INFINITE
    } else {
        Threshold::finite(sorted[rank - 1])
    }
}

/// Labels whose test score is at most the threshold.
pub fn prediction_set_discrete<'a, L, I>(threshold: Threshold, test_scores: I) -> BTreeSet<L>
where
    L: Ord + Clone + 'a,
    I: IntoIterator<Item = (&'a L, &'a f64)>,
{
    test_scores
        .into_iter()
        .filter(|(_, &s)| threshold.accepts(s))
        .map(|(label, _)| label.clone())
        .collect()
}

/// Whether a test point with score `test_score` is covered.
pub fn coverage_trial(cal: &ScoreSample, test_score: f64, alpha: f64) -> Result<bool> {
    Ok(compute_threshold(cal, alpha)?.accepts(test_score))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn sample(xs: &[f64]) -> ScoreSample {
        ScoreSample::unbounded(xs.to_vec()).unwrap()
    }

    #[test]
    fn n_alpha_examples() {
        assert_eq!(n_alpha(100, 0.1).unwrap(), 90);
        assert_eq!(n_alpha(4, 0.5).unwrap(), 2);
        assert_eq!(n_alpha(9, 0.1).unwrap(), 8);
        assert_eq!(n_alpha(99, 0.1).unwrap(), 89);
        assert_eq!(n_alpha(1, 0.4).unwrap(), 1);
    }

    #[test]
    fn n_alpha_domain() {
        assert!(n_alpha(10, 0.0).is_err());
        assert!(n_alpha(10, 1.0).is_err());
        assert!(n_alpha(10, f64::NAN).is_err());
        assert!(n_alpha(0, 0.1).is_err());
    }

    #[test]
    fn threshold_examples() {
        let s = sample(&[4.0, 2.0, 3.0, 1.0]);
        assert_eq!(compute_threshold(&s, 0.5).unwrap(), Threshold::finite(3.0));
        assert!(compute_threshold(&s, 0.1).unwrap().is_infinite());
        // rank ceil(0.6 * 2) = 2 > n = 1
        assert!(compute_threshold(&sample(&[7.0]), 0.4).unwrap().is_infinite());
        assert!(matches!(
            compute_threshold(&sample(&[]), 0.1),
            Err(Error::Empty(_))
        ));
    }

    #[test]
    fn ties_use_the_multiset_order_statistic() {
        let s = sample(&[2.0, 2.0, 2.0, 5.0]);
        assert_eq!(compute_threshold(&s, 0.5).unwrap(), Threshold::finite(2.0));
    }

    #[test]
    fn prediction_set_examples() {
        let scores: BTreeMap<&str, f64> = [("a", 2.0), ("b", 3.0), ("c", 5.0)].into();
        let set = prediction_set_discrete(Threshold::finite(3.0), &scores);
        assert_eq!(set.into_iter().collect::<Vec<_>>(), vec!["a", "b"]);
        assert_eq!(prediction_set_discrete(Threshold::INFINITE, &scores).len(), 3);
        let low: BTreeMap<&str, f64> = [("a", 0.5), ("b", 1.0)].into();
        assert!(prediction_set_discrete(Threshold::finite(0.0), &low).is_empty());
    }

    #[test]
    fn coverage_examples() {
        let cal = sample(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0]);
        assert!(coverage_trial(&cal, 5.0, 0.1).unwrap());
        assert!(!coverage_trial(&cal, 9.5, 0.1).unwrap());
        assert!(coverage_trial(&sample(&[1.0, 2.0, 3.0, 4.0]), 100.0, 0.1).unwrap());
    }

    #[test]
    fn sample_validation() {
        assert!(ScoreSample::new(vec![0.5, -0.1], 0.0).is_err());
        assert!(ScoreSample::new(vec![f64::NAN], 0.0).is_err());
        let s = ScoreSample::new(vec![3.0, 0.0, 1.0], 0.0).unwrap();
        assert_eq!(s.scores(), &[0.0, 1.0, 3.0]);
        assert_eq!(s.max(), Some(3.0));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn threshold_is_non_increasing_in_alpha(
                xs in prop::collection::vec(-100.0f64..100.0, 1..60),
                a1 in 0.01f64..0.99,
                a2 in 0.01f64..0.99,
            ) {
                let s = sample(&xs);
                let (lo, hi) = if a1 <= a2 { (a1, a2) } else { (a2, a1) };
                let t_lo = compute_threshold(&s, lo).unwrap().value();
                let t_hi = compute_threshold(&s, hi).unwrap().value();
                prop_assert!(t_lo >= t_hi);
            }

            #[test]
            fn prediction_sets_grow_with_threshold(
                xs in prop::collection::vec(-10.0f64..10.0, 0..20),
                t1 in -12.0f64..12.0,
                t2 in -12.0f64..12.0,
            ) {
                let scores: BTreeMap<usize, f64> = xs.iter().copied().enumerate().collect();
                let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
                let small = prediction_set_discrete(Threshold::finite(lo), &scores);
                let big = prediction_set_discrete(Threshold::finite(hi), &scores);
                prop_assert!(small.is_subset(&big));
            }
        }
    }
}
