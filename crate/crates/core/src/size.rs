//! Exact expected prediction-set size.
//!
//! For i.i.d. calibration scores the threshold reaches `r` exactly when at
//! most `n_alpha` of the `n` calibration scores fall strictly below `r`, so
//!
//! ```text
//! E|C(X)| = ∫ P{B(n, tilde(r)) <= n_alpha} #_R(r) dr,   tilde(r) = P{R < r}.
//! ```
//!
//! With a step `tilde` the integrand is piecewise constant times the factor,
//! and every piece integrates exactly through the factor's antiderivative.

use crate::conformal::{check_alpha, n_alpha, Threshold};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::factor::{FactorSpec, MeasureKind};
use crate::scorer::ScoreMatrix;
use crate::special::{binomial_cdf, BinomialQuery};
use crate::sum::{compensated_sum, CompensatedSum};

/// Left-continuous step function: `values[j]` on `(breakpoints[j-1], breakpoints[j]]`,
/// `values[0]` on `(-inf, breakpoints[0]]` and the last value beyond the last breakpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct StepFunction {
    breakpoints: Vec<f64>,
    values: Vec<f64>,
}

impl StepFunction {
    pub fn new(breakpoints: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if values.len() != breakpoints.len() + 1 {
            return Err(Error::Dimension {
                what: "step values (one more than breakpoints)",
                expected: breakpoints.len() + 1,
                got: values.len(),
            });
        }
        if breakpoints.iter().any(|b| !b.is_finite()) {
            return Err(Error::malformed("breakpoints must be finite"));
        }
        if breakpoints.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::malformed("breakpoints must be strictly increasing"));
        }
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::malformed("step values must lie in [0, 1]"));
        }
        Ok(Self {
            breakpoints,
            values,
        })
    }

    pub fn constant(value: f64) -> Result<Self> {
        Self::new(Vec::new(), vec![value])
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Index of the piece containing `r`.
    pub fn piece(&self, r: f64) -> usize {
        self.breakpoints.partition_point(|&b| b < r)
    }

    pub fn eval(&self, r: f64) -> f64 {
        self.values[self.piece(r)]
    }

    /// `(left, right, value)` for each piece, with infinite outer ends.
    pub fn pieces(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        self.values.iter().enumerate().map(move |(j, &v)| {
            let left = if j == 0 {
                f64::NEG_INFINITY
            } else {
                self.breakpoints[j - 1]
            };
            let right = self
                .breakpoints
                .get(j)
                .copied()
                .unwrap_or(f64::INFINITY);
            (left, right, v)
        })
    }

    fn map_values(&self, f: impl Fn(f64) -> Result<f64>) -> Result<StepFunction> {
        Ok(StepFunction {
            breakpoints: self.breakpoints.clone(),
            values: self.values.iter().map(|&v| f(v)).collect::<Result<_>>()?,
        })
    }
}

/// `tilde(r) = P{R < r}` as a non-decreasing left-continuous step function.
#[derive(Debug, Clone, PartialEq)]
pub struct StepTildeCdf(StepFunction);

impl StepTildeCdf {
    pub fn new(breakpoints: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        let step = StepFunction::new(breakpoints, values)?;
        if step.values.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::malformed("tilde-CDF values must be non-decreasing"));
        }
        Ok(Self(step))
    }

    pub fn constant(value: f64) -> Result<Self> {
        Self::new(Vec::new(), vec![value])
    }

    pub fn eval(&self, r: f64) -> f64 {
        self.0.eval(r)
    }

    pub fn breakpoints(&self) -> &[f64] {
        self.0.breakpoints()
    }

    pub fn values(&self) -> &[f64] {
        self.0.values()
    }

    pub fn as_step(&self) -> &StepFunction {
        &self.0
    }

    /// `P{tau >= r} = P{B(n, clamp(tilde(r) + shift)) <= n_alpha}` per piece.
    ///
    /// `shift = 0` gives the exact tail; `±Δ` gives the DKW envelopes.
    pub fn tail(&self, n: usize, alpha: f64, shift: f64) -> Result<StepFunction> {
        let n_a = n_alpha(n, alpha)?;
        self.0
            .map_values(|v| binomial_tail(n, n_a, (v + shift).clamp(0.0, 1.0)))
    }
}

fn binomial_tail(n: usize, n_a: usize, p: f64) -> Result<f64> {
    binomial_cdf(BinomialQuery::new(n as u64, p, n_a as i64))
}

/// Calibration size, significance level, factor and upper integration limit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SizeQuery {
    pub n: usize,
    pub alpha: f64,
    pub factor: FactorSpec,
    pub integration_upper: f64,
}

impl SizeQuery {
    /// Integrates over the factor's whole support.
    pub fn new(n: usize, alpha: f64, factor: FactorSpec) -> Self {
        Self {
            n,
            alpha,
            factor,
            integration_upper: f64::INFINITY,
        }
    }

    pub fn with_upper(mut self, upper: f64) -> Self {
        self.integration_upper = upper;
        self
    }
}

/// `∫ tail(r) #_R(r) dr` over the factor support up to `upper`.
///
/// This is the general (not necessarily i.i.d.) form: `tail(r)` is any step
/// model of `P{tau >= r}`. Returns `+inf` when a positive tail piece reaches
/// an unbounded end of the support.
pub fn expected_size_from_tail(tail: &StepFunction, factor: FactorSpec, upper: f64) -> Result<f64> {
    factor.validate()?;
    let support = factor.support();
    if !factor.is_analytic() {
        return Err(Error::unsupported(
            "the unknown factor needs the score-matrix estimator",
        ));
    }
    if upper.is_nan() || upper < support.lower {
        return Err(Error::domain(format!(
            "integration upper limit {upper} lies below the support lower bound {}",
            support.lower
        )));
    }
    let upper = upper.min(support.upper);
    if support.kind == MeasureKind::DiscreteAtoms {
        let atoms = factor.atoms()?;
        return Ok(compensated_sum(
            atoms
                .into_iter()
                .filter(|&(r, _)| r <= upper)
                .map(|(r, w)| tail.eval(r) * w),
        ));
    }
    let mut acc = CompensatedSum::new();
    for (left, right, value) in tail.pieces() {
        let a = left.max(support.lower);
        let b = right.min(upper);
        if b <= a || value == 0.0 {
            continue;
        }
        if b.is_infinite() {
            return Ok(f64::INFINITY);
        }
        acc.add(value * (factor.antiderivative(b)? - factor.antiderivative(a)?));
    }
    Ok(acc.value())
}

/// Exact expected set size for a step tilde-CDF and an analytic factor.
pub fn expected_size_step(tilde: &StepTildeCdf, q: &SizeQuery) -> Result<f64> {
    if !q.factor.is_analytic() {
        return Err(Error::unsupported(
            "the unknown factor needs the score-matrix estimator",
        ));
    }
    let tail = tilde.tail(q.n, q.alpha, 0.0)?;
    expected_size_from_tail(&tail, q.factor, q.integration_upper)
}

/// Counting-measure form: `Σ_i P{B(n, tilde_i) <= n_alpha} w_i`.
pub fn expected_size_discrete_exact(
    tilde_values: &[f64],
    factor_weights: &[f64],
    n: usize,
    alpha: f64,
) -> Result<f64> {
    if tilde_values.len() != factor_weights.len() {
        return Err(Error::Dimension {
            what: "factor weights per score atom",
            expected: tilde_values.len(),
            got: factor_weights.len(),
        });
    }
    if tilde_values.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::malformed("tilde values must lie in [0, 1]"));
    }
    if tilde_values.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::malformed("tilde values must be non-decreasing"));
    }
    check_weights(factor_weights)?;
    let n_a = n_alpha(n, alpha)?;
    let mut acc = CompensatedSum::new();
    for (&t, &w) in tilde_values.iter().zip(factor_weights) {
        acc.add(binomial_tail(n, n_a, t)? * w);
    }
    Ok(acc.value())
}

/// Exact variance of the set size over calibration draws, for the same
/// discrete model as [`expected_size_discrete_exact`].
///
/// With `q_j = P{tau >= r_j}` decreasing in `j`, the second moment is
/// `Σ_j q_j (w_j^2 + 2 w_j Σ_{i<j} w_i)`.
pub fn size_variance_discrete_exact(
    tilde_values: &[f64],
    factor_weights: &[f64],
    n: usize,
    alpha: f64,
) -> Result<f64> {
    let mean = expected_size_discrete_exact(tilde_values, factor_weights, n, alpha)?;
    let n_a = n_alpha(n, alpha)?;
    let mut second = CompensatedSum::new();
    let mut below = CompensatedSum::new();
    for (&t, &w) in tilde_values.iter().zip(factor_weights) {
        let q = binomial_tail(n, n_a, t)?;
        second.add(q * w * (w + 2.0 * below.value()));
        below.add(w);
    }
    Ok((second.value() - mean * mean).max(0.0))
}

pub(crate) fn check_weights(weights: &[f64]) -> Result<()> {
    if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
        return Err(Error::domain("label/factor weights must be finite and non-negative"));
    }
    Ok(())
}

/// Factor-free form: `Σ_j w_j (1/k) Σ_i P{B(n, tilde(R(X'_i, y_j))) <= n_alpha}`.
pub fn expected_size_unknown_factor(
    tilde: &StepTildeCdf,
    matrix: &ScoreMatrix,
    n: usize,
    alpha: f64,
    exec: Execution,
) -> Result<f64> {
    let tail = tilde.tail(n, alpha, 0.0)?;
    Ok(matrix_average(&tail, matrix, exec))
}

/// `(1/k) Σ_i Σ_j w_j tail(R_ij)`, summed row by row in index order.
pub(crate) fn matrix_average(tail: &StepFunction, matrix: &ScoreMatrix, exec: Execution) -> f64 {
    let weights = matrix.weights();
    let row_sums = exec.map_indices(matrix.rows(), |i| {
        compensated_sum(
            matrix
                .row(i)
                .iter()
                .zip(weights)
                .map(|(&s, &w)| tail.eval(s) * w),
        )
    });
    compensated_sum(row_sums) / matrix.rows() as f64
}

/// Expected size given the test feature: `Σ_j w_j P{B(n, tilde(R(x, y_j))) <= n_alpha}`.
pub fn conditional_size_given_feature(
    tilde: &StepTildeCdf,
    feature_scores: &[f64],
    label_weights: &[f64],
    n: usize,
    alpha: f64,
) -> Result<f64> {
    if feature_scores.is_empty() {
        return Err(Error::Empty("label grid of the feature row"));
    }
    if feature_scores.len() != label_weights.len() {
        return Err(Error::Dimension {
            what: "label weights per feature-row score",
            expected: feature_scores.len(),
            got: label_weights.len(),
        });
    }
    check_weights(label_weights)?;
    let tail = tilde.tail(n, alpha, 0.0)?;
    Ok(compensated_sum(
        feature_scores
            .iter()
            .zip(label_weights)
            .map(|(&s, &w)| tail.eval(s) * w),
    ))
}

/// Expected size given the calibration data: the factor measure of `{r <= threshold}`.
pub fn conditional_size_given_calibration(threshold: Threshold, factor: FactorSpec) -> Result<f64> {
    factor.validate()?;
    if !factor.is_analytic() {
        return Err(Error::unsupported(
            "the unknown factor has no closed-form conditional size",
        ));
    }
    let support = factor.support();
    if support.kind == MeasureKind::DiscreteAtoms {
        return Ok(compensated_sum(
            factor
                .atoms()?
                .into_iter()
                .filter(|&(r, _)| threshold.accepts(r))
                .map(|(_, w)| w),
        ));
    }
    if threshold.is_infinite() {
        return Ok(f64::INFINITY);
    }
    let t = threshold.value().max(support.lower);
    Ok(factor.antiderivative(t)? - factor.antiderivative(support.lower)?)
}

/// `E|C|` is only finite on an unbounded support when `n_alpha < n`.
pub fn is_infinite_regime(n: usize, alpha: f64) -> Result<bool> {
    check_alpha(alpha)?;
    Ok(n_alpha(n, alpha)? == n)
}
