//! Monte Carlo averages of realized set sizes and the classical interval
//! baselines built from i.i.d. size samples.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::Serialize;
use statrs::function::erf::erf_inv;

use crate::conformal::{compute_threshold, coverage_trial, ScoreSample, Threshold};
use crate::error::{Error, Result};
use crate::estimate::check_gamma;
use crate::exec::{derive_seed, seeded_rng, Execution, SeededRng};
use crate::factor::FactorSpec;
use crate::scorer::ScoreMatrix;
use crate::size::conditional_size_given_calibration;
use crate::sum::compensated_sum;

const MC_STREAM: u64 = 0x4d43;
const COVERAGE_STREAM: u64 = 0x434f;

/// A source of i.i.d. calibration/test scores.
pub trait ScoreModel: Sync {
    fn draw(&self, rng: &mut SeededRng) -> f64;

    fn lower_bound(&self) -> f64 {
        f64::NEG_INFINITY
    }

    fn calibration(&self, n: usize, rng: &mut SeededRng) -> Result<ScoreSample> {
        ScoreSample::new((0..n).map(|_| self.draw(rng)).collect(), self.lower_bound())
    }
}

/// A score model that also knows the size of the set built from a threshold.
pub trait SizeModel: ScoreModel {
    /// Size of the prediction set of a test point; may draw the test point from `rng`.
    fn set_size(&self, threshold: Threshold, rng: &mut SeededRng) -> Result<f64>;
}

/// Simple continuous score laws.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScoreLaw {
    Constant(f64),
    Uniform { low: f64, high: f64 },
    Exponential { rate: f64 },
}

impl ScoreLaw {
    /// `P{R < r}`; equal to the CDF except at the atom of `Constant`.
    pub fn tilde(&self, r: f64) -> f64 {
        match *self {
            ScoreLaw::Constant(c) => {
                if r > c {
                    1.0
                } else {
                    0.0
                }
            }
            ScoreLaw::Uniform { low, high } => ((r - low) / (high - low)).clamp(0.0, 1.0),
            ScoreLaw::Exponential { rate } => {
                if r <= 0.0 {
                    0.0
                } else {
                    -(-rate * r).exp_m1()
                }
            }
        }
    }
}

impl ScoreModel for ScoreLaw {
    fn draw(&self, rng: &mut SeededRng) -> f64 {
        match *self {
            ScoreLaw::Constant(c) => c,
            ScoreLaw::Uniform { low, high } => rng.random_range(low..high),
            ScoreLaw::Exponential { rate } => {
                let u: f64 = rng.random();
                -(-u).ln_1p() / rate
            }
        }
    }
}

/// Scores from `law`; set sizes are the factor measure below the threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FactorModel {
    pub law: ScoreLaw,
    pub factor: FactorSpec,
}

impl ScoreModel for FactorModel {
    fn draw(&self, rng: &mut SeededRng) -> f64 {
        self.law.draw(rng)
    }

    fn lower_bound(&self) -> f64 {
        self.factor.support().lower
    }
}

impl SizeModel for FactorModel {
    fn set_size(&self, threshold: Threshold, _rng: &mut SeededRng) -> Result<f64> {
        conditional_size_given_calibration(threshold, self.factor)
    }
}

/// Mean of realized set sizes over independent conformal runs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McAverage {
    pub mean: f64,
    pub std_dev: f64,
    pub runs: usize,
    #[serde(skip)]
    pub sizes: Vec<f64>,
}

impl McAverage {
    pub fn std_err(&self) -> f64 {
        self.std_dev / (self.runs as f64).sqrt()
    }

    /// `(mean - truth) / std_err`; zero spread counts as exact agreement only
    /// when the mean equals `truth` up to `1e-9` relative.
    pub fn studentized(&self, truth: f64) -> f64 {
        let se = self.std_err();
        let diff = self.mean - truth;
        if se > 0.0 {
            diff / se
        } else if diff.abs() <= 1e-9 * truth.abs().max(1.0) {
            0.0
        } else {
            diff.signum() * f64::INFINITY
        }
    }
}

fn mean_and_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = compensated_sum(xs.iter().copied()) / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let ss = compensated_sum(xs.iter().map(|x| (x - mean).powi(2)));
    (mean, (ss / (n - 1.0)).sqrt())
}

/// Runs split conformal `runs` times with `n` calibration points each.
///
/// Run `i` uses its own seed derived from `seed`, so the result does not
/// depend on `exec`.
pub fn mc_average<M: SizeModel>(
    model: &M,
    n: usize,
    alpha: f64,
    runs: usize,
    seed: u64,
    exec: Execution,
) -> Result<McAverage> {
    if runs == 0 {
        return Err(Error::domain("Monte Carlo average needs at least one run"));
    }
    let sizes = exec
        .map_indices(runs, |i| {
            let mut rng = seeded_rng(derive_seed(seed, MC_STREAM, i as u64));
            let cal = model.calibration(n, &mut rng)?;
            let threshold = compute_threshold(&cal, alpha)?;
            model.set_size(threshold, &mut rng)
        })
        .into_iter()
        .collect::<Result<Vec<f64>>>()?;
    let (mean, std_dev) = mean_and_sd(&sizes);
    Ok(McAverage {
        mean,
        std_dev,
        runs,
        sizes,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Miscoverage {
    pub rate: f64,
    pub errors: usize,
    pub trials: usize,
}

/// Fraction of trials where a fresh test score exceeds the threshold.
pub fn miscoverage<M: ScoreModel>(
    model: &M,
    n: usize,
    alpha: f64,
    trials: usize,
    seed: u64,
    exec: Execution,
) -> Result<Miscoverage> {
    if trials == 0 {
        return Err(Error::domain("coverage check needs at least one trial"));
    }
    let covered = exec
        .map_indices(trials, |i| {
            let mut rng = seeded_rng(derive_seed(seed, COVERAGE_STREAM, i as u64));
            let cal = model.calibration(n, &mut rng)?;
            let test = model.draw(&mut rng);
            coverage_trial(&cal, test, alpha)
        })
        .into_iter()
        .collect::<Result<Vec<bool>>>()?;
    let errors = covered.iter().filter(|c| !**c).count();
    Ok(Miscoverage {
        rate: errors as f64 / trials as f64,
        errors,
        trials,
    })
}

/// i.i.d. set sizes, optionally bounded by the label-space size.
#[derive(Debug, Clone, PartialEq)]
pub struct SizeSampleSet {
    sizes: Vec<f64>,
    bound: Option<f64>,
}

impl SizeSampleSet {
    pub fn new(sizes: Vec<f64>, bound: Option<f64>) -> Result<Self> {
        if sizes.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
            return Err(Error::domain("set sizes must be finite and non-negative"));
        }
        if let Some(b) = bound {
            if !(b >= 0.0) || !b.is_finite() {
                return Err(Error::domain(format!("invalid size bound {b}")));
            }
            if let Some(s) = sizes.iter().find(|&&s| s > b) {
                return Err(Error::domain(format!("set size {s} exceeds the bound {b}")));
            }
        }
        Ok(Self { sizes, bound })
    }

    pub fn sizes(&self) -> &[f64] {
        &self.sizes
    }

    pub fn bound(&self) -> Option<f64> {
        self.bound
    }

    pub fn len(&self) -> usize {
        self.sizes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sizes.is_empty()
    }

    pub fn mean(&self) -> f64 {
        mean_and_sd(&self.sizes).0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineMethod {
    Clt,
    Hoeffding,
    EmpiricalBernstein,
}

/// A clipped interval; `raw_*` keep the symmetric pre-clip endpoints.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BaselineInterval {
    pub method: BaselineMethod,
    pub lower: f64,
    pub upper: f64,
    pub raw_lower: f64,
    pub raw_upper: f64,
    pub gamma: f64,
    /// Not a finite-sample confidence interval.
    pub heuristic: bool,
}

impl BaselineInterval {
    fn symmetric(
        method: BaselineMethod,
        center: f64,
        half_width: f64,
        bound: Option<f64>,
        gamma: f64,
        heuristic: bool,
    ) -> Self {
        let raw_lower = center - half_width;
        let raw_upper = center + half_width;
        Self {
            method,
            lower: raw_lower.max(0.0),
            upper: bound.map_or(raw_upper, |b| raw_upper.min(b)),
            raw_lower,
            raw_upper,
            gamma,
            heuristic,
        }
    }

    pub fn contains(&self, value: f64) -> bool {
        self.lower <= value && value <= self.upper
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }
}

/// Two-sided standard normal quantile `z_{1 - γ/2}`.
pub fn normal_two_sided_quantile(gamma: f64) -> Result<f64> {
    check_gamma(gamma)?;
    Ok(std::f64::consts::SQRT_2 * erf_inv(1.0 - gamma))
}

/// `mean ± z_{1-γ/2} s / sqrt(N)`; only asymptotically valid.
pub fn clt_interval(samples: &SizeSampleSet, gamma: f64) -> Result<BaselineInterval> {
    if samples.len() < 2 {
        return Err(Error::domain("CLT interval needs at least two samples"));
    }
    let z = normal_two_sided_quantile(gamma)?;
    let (mean, sd) = mean_and_sd(samples.sizes());
    Ok(BaselineInterval::symmetric(
        BaselineMethod::Clt,
        mean,
        z * sd / (samples.len() as f64).sqrt(),
        samples.bound(),
        gamma,
        true,
    ))
}

fn require_bound(samples: &SizeSampleSet, method: &str) -> Result<f64> {
    samples.bound().ok_or_else(|| {
        Error::unsupported(format!(
            "{method} needs a known size bound (classification only)"
        ))
    })
}

/// `mean ± B sqrt(ln(2/γ) / 2N)`.
pub fn hoeffding_interval(samples: &SizeSampleSet, gamma: f64) -> Result<BaselineInterval> {
    let bound = require_bound(samples, "Hoeffding's inequality")?;
    check_gamma(gamma)?;
    if samples.is_empty() {
        return Err(Error::Empty("size samples"));
    }
    let n = samples.len() as f64;
    Ok(BaselineInterval::symmetric(
        BaselineMethod::Hoeffding,
        samples.mean(),
        bound * ((2.0 / gamma).ln() / (2.0 * n)).sqrt(),
        Some(bound),
        gamma,
        false,
    ))
}

/// Empirical Bernstein: `mean ± [sqrt(2 s² ln(3/γ) / N) + 3 B ln(3/γ) / N]`.
pub fn bernstein_interval(samples: &SizeSampleSet, gamma: f64) -> Result<BaselineInterval> {
    let bound = require_bound(samples, "Bernstein's inequality")?;
    check_gamma(gamma)?;
    if samples.len() < 2 {
        return Err(Error::domain("Bernstein interval needs at least two samples"));
    }
    let n = samples.len() as f64;
    let (mean, sd) = mean_and_sd(samples.sizes());
    let log_term = (3.0 / gamma).ln();
    let half = (2.0 * sd * sd * log_term / n).sqrt() + 3.0 * bound * log_term / n;
    Ok(BaselineInterval::symmetric(
        BaselineMethod::EmpiricalBernstein,
        mean,
        half,
        Some(bound),
        gamma,
        true,
    ))
}

/// Result of splitting the accessible data into pseudo-calibration and pseudo-test halves.
#[derive(Debug, Clone, PartialEq)]
pub struct SameDataMc {
    pub mean: f64,
    pub calibration_size: usize,
    pub samples: SizeSampleSet,
}

/// Same-data Monte Carlo average: `k/2` rows calibrate, the remaining rows
/// are test points whose set size is `Σ_j w_j 1{R_ij <= τ}`.
pub fn same_data_mc(
    matrix: &ScoreMatrix,
    alpha: f64,
    bound: Option<f64>,
    seed: u64,
) -> Result<SameDataMc> {
    let k = matrix.rows();
    if k < 2 {
        return Err(Error::domain("same-data Monte Carlo needs at least two accessible points"));
    }
    let mut order: Vec<usize> = (0..k).collect();
    order.shuffle(&mut seeded_rng(seed));
    let (cal_idx, test_idx) = order.split_at(k / 2);
    let cal = ScoreSample::unbounded(cal_idx.iter().map(|&i| matrix.marginal()[i]).collect())?;
    let threshold = compute_threshold(&cal, alpha)?;
    let weights = matrix.weights();
    let sizes: Vec<f64> = test_idx
        .iter()
        .map(|&i| {
            compensated_sum(
                matrix
                    .row(i)
                    .iter()
                    .zip(weights)
                    .filter(|(&s, _)| threshold.accepts(s))
                    .map(|(_, &w)| w),
            )
        })
        .collect();
    let samples = SizeSampleSet::new(sizes, bound)?;
    Ok(SameDataMc {
        mean: samples.mean(),
        calibration_size: cal.len(),
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degenerate_scores_give_constant_sizes() {
        let c = 1.75;
        let model = FactorModel {
            law: ScoreLaw::Constant(c),
            factor: FactorSpec::L1,
        };
        let mc = mc_average(&model, 20, 0.2, 50, 3, Execution::Sequential).unwrap();
        assert_eq!(mc.mean, 2.0 * c);
        assert_eq!(mc.std_dev, 0.0);
        assert_eq!(mc.studentized(2.0 * c), 0.0);
    }

    #[test]
    fn mc_is_deterministic_and_mode_independent() {
        let model = FactorModel {
            law: ScoreLaw::Exponential { rate: 2.0 },
            factor: FactorSpec::L1,
        };
        let a = mc_average(&model, 30, 0.1, 200, 11, Execution::Sequential).unwrap();
        let b = mc_average(&model, 30, 0.1, 200, 11, Execution::Parallel).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.mean.to_bits(), b.mean.to_bits());
        let c = mc_average(&model, 30, 0.1, 200, 12, Execution::Sequential).unwrap();
        assert_ne!(a.mean, c.mean);
        assert!(mc_average(&model, 30, 0.1, 0, 11, Execution::Sequential).is_err());
    }

    #[test]
    fn miscoverage_counts() {
        let m = miscoverage(&ScoreLaw::Uniform { low: 0.0, high: 1.0 }, 9, 0.1, 2000, 5, Execution::Parallel)
            .unwrap();
        assert_eq!(m.trials, 2000);
        assert!(m.rate > 0.05 && m.rate < 0.15, "{}", m.rate);
    }

    #[test]
    fn clt_examples() {
        let constant = SizeSampleSet::new(vec![3.0; 10], None).unwrap();
        let iv = clt_interval(&constant, 0.1).unwrap();
        assert_eq!((iv.lower, iv.upper), (3.0, 3.0));
        // gamma = P{|Z| > 1}
        let gamma = statrs::function::erf::erfc(std::f64::consts::FRAC_1_SQRT_2);
        assert!((normal_two_sided_quantile(gamma).unwrap() - 1.0).abs() < 1e-9);
        let s = SizeSampleSet::new(vec![1.0, 2.0, 3.0, 4.0], None).unwrap();
        let iv = clt_interval(&s, gamma).unwrap();
        let sd = (5.0f64 / 3.0).sqrt();
        assert!((iv.raw_upper - (2.5 + sd / 2.0)).abs() < 1e-9);
        assert!(clt_interval(&SizeSampleSet::new(vec![1.0], None).unwrap(), 0.1).is_err());
    }

    #[test]
    fn hoeffding_examples() {
        let s = SizeSampleSet::new(vec![1.0; 1000], Some(2.0)).unwrap();
        let iv = hoeffding_interval(&s, 0.1).unwrap();
        let half = (iv.raw_upper - iv.raw_lower) / 2.0;
        assert!((half - 0.0774).abs() < 1e-4);
        let other = SizeSampleSet::new(vec![0.0; 1000], Some(2.0)).unwrap();
        let iv2 = hoeffding_interval(&other, 0.1).unwrap();
        assert!(((iv2.raw_upper - iv2.raw_lower) / 2.0 - half).abs() < 1e-15);
        assert_eq!(iv2.lower, 0.0);
        let unbounded = SizeSampleSet::new(vec![1.0; 10], None).unwrap();
        assert!(matches!(hoeffding_interval(&unbounded, 0.1), Err(Error::Unsupported(_))));
    }

    #[test]
    fn bernstein_examples() {
        let s = SizeSampleSet::new(vec![1.0; 50], Some(2.0)).unwrap();
        let iv = bernstein_interval(&s, 0.1).unwrap();
        let want = 3.0 * 2.0 * 30f64.ln() / 50.0;
        assert!(((iv.raw_upper - iv.raw_lower) / 2.0 - want).abs() < 1e-12);
        assert!(iv.heuristic);
        assert!(bernstein_interval(&SizeSampleSet::new(vec![1.0; 5], None).unwrap(), 0.1).is_err());
    }

    #[test]
    fn bernstein_beats_hoeffding_for_small_variance() {
        // s = 0.1, B = 2, N = 10^4
        let sizes: Vec<f64> = (0..10_000).map(|i| if i % 2 == 0 { 0.9 } else { 1.1 }).collect();
        let s = SizeSampleSet::new(sizes, Some(2.0)).unwrap();
        let b = bernstein_interval(&s, 0.1).unwrap();
        let h = hoeffding_interval(&s, 0.1).unwrap();
        assert!(b.width() < h.width(), "{} vs {}", b.width(), h.width());
    }

    #[test]
    fn intervals_nest_in_gamma() {
        let sizes: Vec<f64> = (0..40).map(|i| (i % 5) as f64 * 0.5).collect();
        let s = SizeSampleSet::new(sizes, Some(4.0)).unwrap();
        type F = fn(&SizeSampleSet, f64) -> Result<BaselineInterval>;
        for f in [clt_interval as F, hoeffding_interval, bernstein_interval] {
            let wide = f(&s, 0.01).unwrap();
            let narrow = f(&s, 0.2).unwrap();
            assert!(wide.raw_lower <= narrow.raw_lower && narrow.raw_upper <= wide.raw_upper);
        }
    }

    #[test]
    fn size_samples_validate() {
        assert!(SizeSampleSet::new(vec![-1.0], None).is_err());
        assert!(SizeSampleSet::new(vec![3.0], Some(2.0)).is_err());
    }

    #[test]
    fn same_data_mc_examples() {
        // k = 2: one calibration row, one test row.
        let m = ScoreMatrix::from_rows(
            vec![vec![0.0, 1.0], vec![0.0, 1.0]],
            vec![1.0, 1.0],
            vec![0.0, 1.0],
        )
        .unwrap();
        let r = same_data_mc(&m, 0.5, Some(2.0), 1).unwrap();
        assert_eq!(r.calibration_size, 1);
        assert_eq!(r.samples.len(), 1);
        // A single calibration score always yields the infinite threshold at alpha = 0.5.
        assert_eq!(r.mean, 2.0);

        let dup = ScoreMatrix::from_rows(vec![vec![0.2, 0.8, 1.5]; 10], vec![1.0; 3], vec![0.8; 10])
            .unwrap();
        let sizes: Vec<f64> = (0..5).map(|s| same_data_mc(&dup, 0.1, None, s).unwrap().mean).collect();
        assert!(sizes.windows(2).all(|w| w[0] == w[1]));

        let one = ScoreMatrix::from_rows(vec![vec![0.0]], vec![1.0], vec![0.0]).unwrap();
        assert!(same_data_mc(&one, 0.1, None, 0).is_err());
    }
}
