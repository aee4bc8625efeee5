//! Non-conformity functions, toy predictors and score matrices.
//!
//! A [`ScoreMatrix`] holds `R(X'_i, y_j)` for `k` accessible points over a
//! label grid, together with the label measure and the scores of the true
//! labels. It feeds the estimators that need no analytic factor.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factor::FactorSpec;
use crate::size::check_weights;

/// A non-conformity function `R: X × Y -> R`.
pub trait NonConformity<X: ?Sized, Y: ?Sized> {
    fn score(&self, x: &X, y: &Y) -> Result<f64>;

    /// The multiplicative factor this score induces.
    fn factor(&self) -> FactorSpec;

    /// Lower end of the score space.
    fn score_lower_bound(&self) -> f64;
}

/// Point regressor.
pub trait Predictor<X: ?Sized> {
    fn predict(&self, x: &X) -> f64;
}

/// Hard classifier over labels `0..num_labels`.
pub trait Classifier<X: ?Sized> {
    fn classify(&self, x: &X) -> usize;
}

/// Probabilistic classifier: one probability per label.
pub trait ProbabilityModel<X: ?Sized> {
    fn probabilities(&self, x: &X) -> Vec<f64>;
}

/// Lower/upper conditional quantile pair.
pub trait QuantileModel<X: ?Sized> {
    fn quantiles(&self, x: &X) -> (f64, f64);
}

impl<X: ?Sized, F: Fn(&X) -> f64> Predictor<X> for F {
    fn predict(&self, x: &X) -> f64 {
        self(x)
    }
}

// Toy models -----------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantPredictor(pub f64);

impl<X: ?Sized> Predictor<X> for ConstantPredictor {
    fn predict(&self, _x: &X) -> f64 {
        self.0
    }
}

/// Ordinary least squares `y = intercept + slope x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeastSquaresLine {
    pub intercept: f64,
    pub slope: f64,
}

impl LeastSquaresLine {
    pub fn fit(xs: &[f64], ys: &[f64]) -> Result<Self> {
        if xs.len() != ys.len() {
            return Err(Error::Dimension {
                what: "responses per feature",
                expected: xs.len(),
                got: ys.len(),
            });
        }
        if xs.is_empty() {
            return Err(Error::Empty("training data"));
        }
        let n = xs.len() as f64;
        let mx = xs.iter().sum::<f64>() / n;
        let my = ys.iter().sum::<f64>() / n;
        let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
        let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
        Ok(Self {
            intercept: my - slope * mx,
            slope,
        })
    }
}

impl Predictor<f64> for LeastSquaresLine {
    fn predict(&self, x: &f64) -> f64 {
        self.intercept + self.slope * x
    }
}

/// Always predicts the most frequent training label (lowest index on ties).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MajorityClassifier {
    pub label: usize,
}

impl MajorityClassifier {
    pub fn fit(labels: &[usize], num_labels: usize) -> Result<Self> {
        let counts = label_counts(labels, num_labels)?;
        let label = counts
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
            .map(|(i, _)| i)
            .ok_or(Error::Empty("label space"))?;
        Ok(Self { label })
    }
}

impl<X: ?Sized> Classifier<X> for MajorityClassifier {
    fn classify(&self, _x: &X) -> usize {
        self.label
    }
}

/// Feature-independent label frequencies.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyModel {
    pub probabilities: Vec<f64>,
}

impl FrequencyModel {
    pub fn fit(labels: &[usize], num_labels: usize) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::Empty("training labels"));
        }
        let counts = label_counts(labels, num_labels)?;
        let total = labels.len() as f64;
        Ok(Self {
            probabilities: counts.iter().map(|&c| c as f64 / total).collect(),
        })
    }
}

impl<X: ?Sized> ProbabilityModel<X> for FrequencyModel {
    fn probabilities(&self, _x: &X) -> Vec<f64> {
        self.probabilities.clone()
    }
}

fn label_counts(labels: &[usize], num_labels: usize) -> Result<Vec<usize>> {
    let mut counts = vec![0usize; num_labels];
    for &l in labels {
        *counts.get_mut(l).ok_or_else(|| {
            Error::domain(format!("label {l} outside 0..{num_labels}"))
        })? += 1;
    }
    Ok(counts)
}

/// A regression line widened by two constant residual offsets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualBand {
    pub line: LeastSquaresLine,
    pub lower_offset: f64,
    pub upper_offset: f64,
}

impl ResidualBand {
    /// Offsets are the empirical `level` and `1 - level` residual quantiles.
    pub fn fit(xs: &[f64], ys: &[f64], level: f64) -> Result<Self> {
        if !(level > 0.0 && level < 0.5) {
            return Err(Error::domain(format!("band level must lie in (0, 0.5), got {level}")));
        }
        let line = LeastSquaresLine::fit(xs, ys)?;
        let mut residuals: Vec<f64> = xs.iter().zip(ys).map(|(x, y)| y - line.predict(x)).collect();
        residuals.sort_unstable_by(f64::total_cmp);
        let at = |q: f64| {
            let idx = ((residuals.len() - 1) as f64 * q).round() as usize;
            residuals[idx]
        };
        Ok(Self {
            line,
            lower_offset: at(level),
            upper_offset: at(1.0 - level),
        })
    }
}

impl QuantileModel<f64> for ResidualBand {
    fn quantiles(&self, x: &f64) -> (f64, f64) {
        let c = self.line.predict(x);
        (c + self.lower_offset, c + self.upper_offset)
    }
}

// Score functions ------------------------------------------------------------

/// `|M(x) - y|`.
pub fn l1_score<X: ?Sized>(predictor: &impl Predictor<X>, x: &X, y: f64) -> f64 {
    (predictor.predict(x) - y).abs()
}

/// `|M(x) - y|^p`.
pub fn lp_score<X: ?Sized>(predictor: &impl Predictor<X>, x: &X, y: f64, p: f64) -> f64 {
    l1_score(predictor, x, y).powf(p)
}

/// `||M(x) - y||_p^p` for vector labels.
pub fn lp_vector_score(prediction: &[f64], y: &[f64], p: f64) -> Result<f64> {
    if prediction.len() != y.len() {
        return Err(Error::Dimension {
            what: "label dimension",
            expected: prediction.len(),
            got: y.len(),
        });
    }
    Ok(prediction.iter().zip(y).map(|(a, b)| (a - b).abs().powf(p)).sum())
}

pub fn zero_one_score<X: ?Sized>(classifier: &impl Classifier<X>, x: &X, y: usize) -> f64 {
    if classifier.classify(x) == y {
        0.0
    } else {
        1.0
    }
}

fn check_simplex(probs: &[f64]) -> Result<()> {
    if probs.is_empty() {
        return Err(Error::Empty("probability vector"));
    }
    if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(Error::domain("probabilities must lie in [0, 1]"));
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::domain(format!("probabilities sum to {total}, not 1")));
    }
    Ok(())
}

fn label_probability(probs: &[f64], y: usize) -> Result<f64> {
    check_simplex(probs)?;
    probs.get(y).copied().ok_or_else(|| {
        Error::domain(format!("label {y} outside 0..{}", probs.len()))
    })
}

/// Least ambiguous set-valued classifier score `1 - M_y(x)`.
pub fn lac_score(probs: &[f64], y: usize) -> Result<f64> {
    Ok(1.0 - label_probability(probs, y)?)
}

/// Conformalized quantile regression score `max(low - y, y - high)`.
pub fn cqr_score(low: f64, high: f64, y: f64) -> Result<f64> {
    if low > high {
        return Err(Error::domain(format!("inverted quantiles: low {low} > high {high}")));
    }
    Ok((low - y).max(y - high))
}

/// Adaptive prediction sets score `u M_y(x) + Σ_{y': M_y' > M_y} M_y'(x)`.
///
/// Labels tied with `y` contribute nothing to the sum.
pub fn aps_score(probs: &[f64], y: usize, u: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&u) {
        return Err(Error::domain(format!("APS randomization must lie in [0, 1], got {u}")));
    }
    let own = label_probability(probs, y)?;
    let above: f64 = probs.iter().filter(|&&p| p > own).sum();
    Ok(u * own + above)
}

// Scorer wrappers ------------------------------------------------------------

/// `|M(x) - y|^p` with scalar labels; `p = 1` is the plain absolute residual.
#[derive(Debug, Clone)]
pub struct LpScorer<P> {
    pub predictor: P,
    pub p: f64,
}

impl<P> LpScorer<P> {
    pub fn l1(predictor: P) -> Self {
        Self { predictor, p: 1.0 }
    }
}

impl<X: ?Sized, P: Predictor<X>> NonConformity<X, f64> for LpScorer<P> {
    fn score(&self, x: &X, y: &f64) -> Result<f64> {
        Ok(lp_score(&self.predictor, x, *y, self.p))
    }

    fn factor(&self) -> FactorSpec {
        if self.p == 1.0 {
            FactorSpec::L1
        } else {
            FactorSpec::Lp { p: self.p }
        }
    }

    fn score_lower_bound(&self) -> f64 {
        0.0
    }
}

/// `||M(x) - y||_p^p` for labels in `R^m`; `predict` maps a feature to `R^m`.
#[derive(Debug, Clone)]
pub struct LpVectorScorer<F> {
    pub predict: F,
    pub p: f64,
    pub dim: u32,
}

impl<X: ?Sized, F: Fn(&X) -> Vec<f64>> NonConformity<X, [f64]> for LpVectorScorer<F> {
    fn score(&self, x: &X, y: &[f64]) -> Result<f64> {
        lp_vector_score(&(self.predict)(x), y, self.p)
    }

    fn factor(&self) -> FactorSpec {
        FactorSpec::LpHighDim {
            p: self.p,
            m: self.dim,
        }
    }

    fn score_lower_bound(&self) -> f64 {
        0.0
    }
}

#[derive(Debug, Clone)]
pub struct ZeroOneScorer<C> {
    pub classifier: C,
    pub num_labels: u32,
}

impl<X: ?Sized, C: Classifier<X>> NonConformity<X, usize> for ZeroOneScorer<C> {
    fn score(&self, x: &X, y: &usize) -> Result<f64> {
        Ok(zero_one_score(&self.classifier, x, *y))
    }

    fn factor(&self) -> FactorSpec {
        FactorSpec::ZeroOne {
            num_labels: self.num_labels,
        }
    }

    fn score_lower_bound(&self) -> f64 {
        0.0
    }
}

#[derive(Debug, Clone)]
pub struct LacScorer<M>(pub M);

impl<X: ?Sized, M: ProbabilityModel<X>> NonConformity<X, usize> for LacScorer<M> {
    fn score(&self, x: &X, y: &usize) -> Result<f64> {
        lac_score(&self.0.probabilities(x), *y)
    }

    fn factor(&self) -> FactorSpec {
        FactorSpec::Unknown
    }

    fn score_lower_bound(&self) -> f64 {
        0.0
    }
}

#[derive(Debug, Clone)]
pub struct CqrScorer<Q>(pub Q);

impl<X: ?Sized, Q: QuantileModel<X>> NonConformity<X, f64> for CqrScorer<Q> {
    fn score(&self, x: &X, y: &f64) -> Result<f64> {
        let (low, high) = self.0.quantiles(x);
        cqr_score(low, high, *y)
    }

    fn factor(&self) -> FactorSpec {
        FactorSpec::Unknown
    }

    fn score_lower_bound(&self) -> f64 {
        f64::NEG_INFINITY
    }
}

/// A feature paired with its APS randomization draw.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Randomized<X> {
    pub feature: X,
    pub u: f64,
}

#[derive(Debug, Clone)]
pub struct ApsScorer<M>(pub M);

impl<X, M: ProbabilityModel<X>> NonConformity<Randomized<X>, usize> for ApsScorer<M> {
    fn score(&self, x: &Randomized<X>, y: &usize) -> Result<f64> {
        aps_score(&self.0.probabilities(&x.feature), *y, x.u)
    }

    fn factor(&self) -> FactorSpec {
        FactorSpec::Unknown
    }

    fn score_lower_bound(&self) -> f64 {
        0.0
    }
}

// Score matrices --------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelMeasure {
    /// Weight 1 per label.
    Counting,
    /// Trapezoid quadrature weights on a strictly increasing grid.
    Trapezoid,
}

impl std::str::FromStr for LabelMeasure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "counting" => Ok(LabelMeasure::Counting),
            "trapezoid" => Ok(LabelMeasure::Trapezoid),
            other => Err(Error::domain(format!("unknown label measure {other:?}"))),
        }
    }
}

pub fn counting_weights(len: usize) -> Vec<f64> {
    vec![1.0; len]
}

pub fn trapezoid_weights(grid: &[f64]) -> Result<Vec<f64>> {
    if grid.len() < 2 {
        return Err(Error::domain("trapezoid weights need at least two grid points"));
    }
    if grid.iter().any(|g| !g.is_finite()) || grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::malformed("label grid must be finite and strictly increasing"));
    }
    let last = grid.len() - 1;
    Ok((0..grid.len())
        .map(|j| {
            let left = if j == 0 { 0.0 } else { grid[j] - grid[j - 1] };
            let right = if j == last { 0.0 } else { grid[j + 1] - grid[j] };
            0.5 * (left + right)
        })
        .collect())
}

pub fn label_weights(measure: LabelMeasure, grid: &[f64]) -> Result<Vec<f64>> {
    match measure {
        LabelMeasure::Counting => Ok(counting_weights(grid.len())),
        LabelMeasure::Trapezoid => trapezoid_weights(grid),
    }
}

/// `k × G` scores over a label grid, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    entries: Vec<f64>,
    cols: usize,
    weights: Vec<f64>,
    marginal: Vec<f64>,
}

impl ScoreMatrix {
    /// `entries` is row-major with `weights.len()` columns; `marginal[i]`
    /// is the score of row `i` at its true label.
    pub fn new(entries: Vec<f64>, weights: Vec<f64>, marginal: Vec<f64>) -> Result<Self> {
        let cols = weights.len();
        if cols == 0 {
            return Err(Error::Empty("label grid"));
        }
        if marginal.is_empty() {
            return Err(Error::Empty("accessible points"));
        }
        if entries.len() != marginal.len() * cols {
            return Err(Error::Dimension {
                what: "matrix entries (rows × label grid)",
                expected: marginal.len() * cols,
                got: entries.len(),
            });
        }
        check_weights(&weights)?;
        if entries.iter().chain(&marginal).any(|s| s.is_nan()) {
            return Err(Error::domain("scores must not be NaN"));
        }
        Ok(Self {
            entries,
            cols,
            weights,
            marginal,
        })
    }

    pub fn from_rows(rows: Vec<Vec<f64>>, weights: Vec<f64>, marginal: Vec<f64>) -> Result<Self> {
        let cols = weights.len();
        if let Some(bad) = rows.iter().find(|r| r.len() != cols) {
            return Err(Error::Dimension {
                what: "scores per matrix row",
                expected: cols,
                got: bad.len(),
            });
        }
        Self::new(rows.concat(), weights, marginal)
    }

    pub fn rows(&self) -> usize {
        self.marginal.len()
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.cols..(i + 1) * self.cols]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn marginal(&self) -> &[f64] {
        &self.marginal
    }

    /// Total label measure `Σ_j w_j`.
    pub fn label_measure(&self) -> f64 {
        crate::sum::compensated_sum(self.weights.iter().copied())
    }
}

/// Evaluates `scorer` at every (accessible point, grid label) pair.
pub fn build_score_matrix<X, Y, S>(
    scorer: &S,
    features: &[X],
    labels: &[Y],
    grid: &[Y],
    weights: Vec<f64>,
) -> Result<ScoreMatrix>
where
    S: NonConformity<X, Y>,
{
    if features.is_empty() {
        return Err(Error::Empty("accessible points"));
    }
    if features.len() != labels.len() {
        return Err(Error::Dimension {
            what: "labels per accessible feature",
            expected: features.len(),
            got: labels.len(),
        });
    }
    if grid.len() != weights.len() {
        return Err(Error::Dimension {
            what: "weights per grid label",
            expected: grid.len(),
            got: weights.len(),
        });
    }
    let mut entries = Vec::with_capacity(features.len() * grid.len());
    let mut marginal = Vec::with_capacity(features.len());
    for (x, y) in features.iter().zip(labels) {
        for g in grid {
            entries.push(scorer.score(x, g)?);
        }
        marginal.push(scorer.score(x, y)?);
    }
    ScoreMatrix::new(entries, weights, marginal)
}
