//! Point and interval estimates of the expected set size from accessible data.
//!
//! The unknown `tilde(r) = P{R < r}` is replaced by its empirical version over
//! `k` accessible scores. Shifting that step function by the DKW radius
//! `Δ = sqrt(ln(2/γ) / 2k)` in either direction and integrating again brackets
//! the true expected size with probability at least `1 - γ` (known factor).
//! The score-matrix variant applies the same shift but carries no such
//! guarantee, so its intervals are flagged heuristic.

use serde::Serialize;

use crate::conformal::{n_alpha, ScoreSample};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::factor::{FactorSpec, MeasureKind};
use crate::scorer::ScoreMatrix;
use crate::size::{check_weights, expected_size_from_tail, matrix_average, StepFunction, StepTildeCdf};
use crate::sum::compensated_sum;

/// Empirical `tilde(r) = (1/k) #{i : R'_i < r}`.
pub fn empirical_tilde_cdf(accessible: &ScoreSample) -> Result<StepTildeCdf> {
    let scores = accessible.scores();
    if scores.is_empty() {
        return Err(Error::Empty("accessible scores"));
    }
    let k = scores.len() as f64;
    let mut breakpoints = Vec::new();
    let mut values = vec![0.0];
    let mut i = 0;
    while i < scores.len() {
        let s = scores[i];
        let run = scores[i..].partition_point(|&x| x == s);
        i += run;
        breakpoints.push(s);
        values.push(i as f64 / k);
    }
    // The last value is exactly one; avoid i/k rounding.
    *values.last_mut().expect("non-empty") = 1.0;
    StepTildeCdf::new(breakpoints, values)
}

/// Dvoretzky-Kiefer-Wolfowitz radius `sqrt(ln(2/γ) / 2k)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DkwRadius {
    pub k: usize,
    pub gamma: f64,
    pub delta: f64,
}

impl DkwRadius {
    pub fn new(k: usize, gamma: f64) -> Result<Self> {
        if k == 0 {
            return Err(Error::domain("DKW radius needs k >= 1"));
        }
        check_gamma(gamma)?;
        Ok(Self {
            k,
            gamma,
            delta: ((2.0 / gamma).ln() / (2.0 * k as f64)).sqrt(),
        })
    }
}

pub fn dkw_radius(k: usize, gamma: f64) -> Result<DkwRadius> {
    DkwRadius::new(k, gamma)
}

pub(crate) fn check_gamma(gamma: f64) -> Result<()> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::domain(format!("confidence level gamma must lie in (0, 1), got {gamma}")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorKind {
    /// Analytic factor, exact piecewise integration.
    KnownFactor,
    /// Explicit score atoms with weights (counting measure on the score space).
    KnownAtoms,
    /// Nested average over a score matrix.
    UnknownFactor,
    /// Conditional on one test feature.
    FeatureConditional,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SizeInterval {
    pub lower: f64,
    pub upper: f64,
    pub gamma: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateMeta {
    pub k: usize,
    pub n: usize,
    pub alpha: f64,
    pub n_alpha: usize,
    pub factor: String,
    pub estimator: EstimatorKind,
    /// Upper limit applied to the upper-bound integral, when one was needed.
    pub integration_upper: Option<f64>,
    /// Set when the interval is not a proven confidence interval.
    pub heuristic: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SizeEstimate {
    pub point: f64,
    pub interval: Option<SizeInterval>,
    pub meta: EstimateMeta,
}

impl SizeEstimate {
    pub fn is_infinite(&self) -> bool {
        self.point.is_infinite()
    }

    pub fn lower(&self) -> Option<f64> {
        self.interval.map(|i| i.lower)
    }

    pub fn upper(&self) -> Option<f64> {
        self.interval.map(|i| i.upper)
    }

    /// `lower <= value <= upper`, with `slack` absolute tolerance.
    pub fn contains(&self, value: f64, slack: f64) -> bool {
        self.interval
            .is_some_and(|i| i.lower - slack <= value && value <= i.upper + slack)
    }
}

/// Known-factor estimator; the empirical tilde-CDF is built once and
/// queried for any `(n, alpha)`.
#[derive(Debug, Clone)]
pub struct KnownFactorEstimator {
    tilde: StepTildeCdf,
    factor: FactorSpec,
    k: usize,
    max_score: f64,
}

impl KnownFactorEstimator {
    pub fn new(accessible: &ScoreSample, factor: FactorSpec) -> Result<Self> {
        factor.validate()?;
        if !factor.is_analytic() {
            return Err(Error::unsupported(
                "the unknown factor needs a score matrix (use the unknown-factor estimator)",
            ));
        }
        let tilde = empirical_tilde_cdf(accessible)?;
        let support = factor.support();
        let (min, max) = (accessible.min().unwrap(), accessible.max().unwrap());
        match support.kind {
            MeasureKind::Continuous if min < support.lower => {
                return Err(Error::domain(format!(
                    "accessible score {min} lies below the support of {factor}"
                )));
            }
            MeasureKind::DiscreteAtoms => {
                if let Some(bad) = accessible.scores().iter().find(|&&s| s != 0.0 && s != 1.0) {
                    return Err(Error::domain(format!(
                        "accessible score {bad} is not an atom of {factor}"
                    )));
                }
            }
            _ => {}
        }
        Ok(Self {
            tilde,
            factor,
            k: accessible.len(),
            max_score: max,
        })
    }

    pub fn tilde(&self) -> &StepTildeCdf {
        &self.tilde
    }

    fn meta(&self, n: usize, alpha: f64, integration_upper: Option<f64>) -> Result<EstimateMeta> {
        Ok(EstimateMeta {
            k: self.k,
            n,
            alpha,
            n_alpha: n_alpha(n, alpha)?,
            factor: self.factor.to_string(),
            estimator: EstimatorKind::KnownFactor,
            integration_upper,
            heuristic: false,
        })
    }

    fn integrate(&self, n: usize, alpha: f64, shift: f64, upper: f64) -> Result<f64> {
        let tail = self.tilde.tail(n, alpha, shift)?;
        expected_size_from_tail(&tail, self.factor, upper)
    }

    pub fn point(&self, n: usize, alpha: f64) -> Result<SizeEstimate> {
        let meta = self.meta(n, alpha, None)?;
        Ok(SizeEstimate {
            point: self.integrate(n, alpha, 0.0, f64::INFINITY)?,
            interval: None,
            meta,
        })
    }

    /// Point estimate plus the DKW interval.
    ///
    /// On an unbounded support the upper-bound integral is cut at
    /// `integration_upper`, which defaults to the largest accessible score
    /// and may not be smaller than it.
    pub fn interval(
        &self,
        n: usize,
        alpha: f64,
        gamma: f64,
        integration_upper: Option<f64>,
    ) -> Result<SizeEstimate> {
        let dkw = DkwRadius::new(self.k, gamma)?;
        let bounded = self.factor.support().is_bounded();
        let cut = if bounded {
            None
        } else {
            let cut = integration_upper.unwrap_or(self.max_score);
            if !(cut >= self.max_score) {
                return Err(Error::domain(format!(
                    "integration upper limit {cut} is below the largest accessible score {}",
                    self.max_score
                )));
            }
            Some(cut)
        };
        let point = self.integrate(n, alpha, 0.0, f64::INFINITY)?;
        let lower = self.integrate(n, alpha, dkw.delta, f64::INFINITY)?;
        let (upper, cut) = if point.is_infinite() {
            // Infinite-threshold regime: every envelope is the whole support.
            (f64::INFINITY, None)
        } else {
            let limit = cut.unwrap_or(f64::INFINITY);
            (self.integrate(n, alpha, -dkw.delta, limit)?, cut)
        };
        Ok(SizeEstimate {
            point,
            interval: Some(SizeInterval {
                lower,
                upper,
                gamma,
                delta: dkw.delta,
            }),
            meta: self.meta(n, alpha, cut)?,
        })
    }
}

pub fn point_estimate_known(
    accessible: &ScoreSample,
    n: usize,
    alpha: f64,
    factor: FactorSpec,
) -> Result<SizeEstimate> {
    KnownFactorEstimator::new(accessible, factor)?.point(n, alpha)
}

pub fn interval_estimate_known(
    accessible: &ScoreSample,
    n: usize,
    alpha: f64,
    factor: FactorSpec,
    gamma: f64,
    integration_upper: Option<f64>,
) -> Result<SizeEstimate> {
    KnownFactorEstimator::new(accessible, factor)?.interval(n, alpha, gamma, integration_upper)
}

/// Estimator over an explicit finite score space `{atoms}` with per-atom
/// factor weights.
#[derive(Debug, Clone)]
pub struct AtomEstimator {
    tilde: StepTildeCdf,
    atoms: Vec<f64>,
    weights: Vec<f64>,
    k: usize,
}

impl AtomEstimator {
    pub fn new(accessible: &ScoreSample, atoms: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if atoms.len() != weights.len() {
            return Err(Error::Dimension {
                what: "weights per score atom",
                expected: atoms.len(),
                got: weights.len(),
            });
        }
        check_weights(&weights)?;
        Ok(Self {
            tilde: empirical_tilde_cdf(accessible)?,
            atoms,
            weights,
            k: accessible.len(),
        })
    }

    fn sum(&self, n: usize, alpha: f64, shift: f64) -> Result<f64> {
        let tail = self.tilde.tail(n, alpha, shift)?;
        Ok(compensated_sum(
            self.atoms
                .iter()
                .zip(&self.weights)
                .map(|(&r, &w)| tail.eval(r) * w),
        ))
    }

    fn meta(&self, n: usize, alpha: f64) -> Result<EstimateMeta> {
        Ok(EstimateMeta {
            k: self.k,
            n,
            alpha,
            n_alpha: n_alpha(n, alpha)?,
            factor: format!("atoms:{}", self.atoms.len()),
            estimator: EstimatorKind::KnownAtoms,
            integration_upper: None,
            heuristic: false,
        })
    }

    pub fn point(&self, n: usize, alpha: f64) -> Result<SizeEstimate> {
        Ok(SizeEstimate {
            point: self.sum(n, alpha, 0.0)?,
            interval: None,
            meta: self.meta(n, alpha)?,
        })
    }

    pub fn interval(&self, n: usize, alpha: f64, gamma: f64) -> Result<SizeEstimate> {
        let dkw = DkwRadius::new(self.k, gamma)?;
        Ok(SizeEstimate {
            point: self.sum(n, alpha, 0.0)?,
            interval: Some(SizeInterval {
                lower: self.sum(n, alpha, dkw.delta)?,
                upper: self.sum(n, alpha, -dkw.delta)?,
                gamma,
                delta: dkw.delta,
            }),
            meta: self.meta(n, alpha)?,
        })
    }
}

fn unknown_meta(matrix: &ScoreMatrix, n: usize, alpha: f64, heuristic: bool) -> Result<EstimateMeta> {
    Ok(EstimateMeta {
        k: matrix.rows(),
        n,
        alpha,
        n_alpha: n_alpha(n, alpha)?,
        factor: FactorSpec::Unknown.to_string(),
        estimator: EstimatorKind::UnknownFactor,
        integration_upper: None,
        heuristic,
    })
}

fn marginal_tilde(matrix: &ScoreMatrix) -> Result<StepTildeCdf> {
    empirical_tilde_cdf(&ScoreSample::unbounded(matrix.marginal().to_vec())?)
}

/// Nested estimate for an unknown factor; the matrix's true-label scores
/// build the tilde-CDF and its rows supply the outer average.
pub fn point_estimate_unknown(
    matrix: &ScoreMatrix,
    n: usize,
    alpha: f64,
    exec: Execution,
) -> Result<SizeEstimate> {
    let tilde = marginal_tilde(matrix)?;
    let tail = tilde.tail(n, alpha, 0.0)?;
    Ok(SizeEstimate {
        point: matrix_average(&tail, matrix, exec),
        interval: None,
        meta: unknown_meta(matrix, n, alpha, false)?,
    })
}

/// The nested estimate with `tilde ± Δ`; not a proven confidence interval.
pub fn interval_estimate_unknown(
    matrix: &ScoreMatrix,
    n: usize,
    alpha: f64,
    gamma: f64,
    exec: Execution,
) -> Result<SizeEstimate> {
    let dkw = DkwRadius::new(matrix.rows(), gamma)?;
    let tilde = marginal_tilde(matrix)?;
    let avg = |shift: f64| -> Result<f64> {
        let tail: StepFunction = tilde.tail(n, alpha, shift)?;
        Ok(matrix_average(&tail, matrix, exec))
    };
    Ok(SizeEstimate {
        point: avg(0.0)?,
        interval: Some(SizeInterval {
            lower: avg(dkw.delta)?,
            upper: avg(-dkw.delta)?,
            gamma,
            delta: dkw.delta,
        }),
        meta: unknown_meta(matrix, n, alpha, true)?,
    })
}

/// Estimated size for a single test feature with scores `R(x, y_j)`.
pub fn conditional_point_estimate_feature(
    accessible: &ScoreSample,
    row_scores: &[f64],
    row_weights: &[f64],
    n: usize,
    alpha: f64,
) -> Result<SizeEstimate> {
    let tilde = empirical_tilde_cdf(accessible)?;
    let point = crate::size::conditional_size_given_feature(&tilde, row_scores, row_weights, n, alpha)?;
    Ok(SizeEstimate {
        point,
        interval: None,
        meta: EstimateMeta {
            k: accessible.len(),
            n,
            alpha,
            n_alpha: n_alpha(n, alpha)?,
            factor: "feature-row".to_string(),
            estimator: EstimatorKind::FeatureConditional,
            integration_upper: None,
            heuristic: false,
        },
    })
}
