//! Special functions behind every size formula.
//!
//! The binomial CDF is the workhorse: each expected-size integrand is
//! `P{B(n, p) <= n_alpha}` for some success probability `p`. Small trial
//! counts are summed directly; larger ones go through the regularized
//! incomplete beta function so that a query costs the same at `n = 10^6` as
//! at `n = 100`.

use crate::error::{Error, Result};
use crate::sum::{compensated_sum, CompensatedSum};

/// Trial counts up to this value use direct summation of the binomial PMF.
pub const DIRECT_SUMMATION_MAX_TRIALS: u64 = 64;

const CF_EPS: f64 = 1e-16;
const CF_TINY: f64 = 1e-300;

/// `ln Γ(x)` for `x > 0`.
pub fn log_gamma(x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::domain(format!("log_gamma requires x > 0, got {x}")));
    }
    Ok(statrs::function::gamma::ln_gamma(x))
}

fn ln_beta(a: f64, b: f64) -> f64 {
    use statrs::function::gamma::ln_gamma;
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

/// Regularized incomplete beta function `I_x(a, b)`.
pub fn regularized_incomplete_beta(a: f64, b: f64, x: f64) -> Result<f64> {
    if !(a > 0.0) || !(b > 0.0) || !a.is_finite() || !b.is_finite() {
        return Err(Error::domain(format!(
            "incomplete beta requires a, b > 0, got a={a}, b={b}"
        )));
    }
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::domain(format!(
            "incomplete beta requires 0 <= x <= 1, got {x}"
        )));
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    if x == 1.0 {
        return Ok(1.0);
    }
    // The continued fraction converges fast below the mean; use the
    // reflection I_x(a, b) = 1 - I_{1-x}(b, a) above it.
    let value = if x < (a + 1.0) / (a + b + 2.0) {
        prefactor(a, b, x) * beta_continued_fraction(a, b, x) / a
    } else {
        1.0 - prefactor(b, a, 1.0 - x) * beta_continued_fraction(b, a, 1.0 - x) / b
    };
    Ok(value.clamp(0.0, 1.0))
}

/// `x^a (1-x)^b / B(a, b)` in log space.
fn prefactor(a: f64, b: f64, x: f64) -> f64 {
    (a * x.ln() + b * (-x).ln_1p() - ln_beta(a, b)).exp()
}

/// Modified Lentz evaluation of the incomplete-beta continued fraction.
fn beta_continued_fraction(a: f64, b: f64, x: f64) -> f64 {
    let max_iter = 200 + (20.0 * (a + b).sqrt()) as usize;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let guard = |v: f64| if v.abs() < CF_TINY { CF_TINY } else { v };

    let mut c = 1.0;
    let mut d = 1.0 / guard(1.0 - qab * x / qap);
    let mut h = d;
    for m in 1..=max_iter {
        let m = m as f64;
        let m2 = 2.0 * m;

        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 / guard(1.0 + aa * d);
        c = guard(1.0 + aa / c);
        h *= d * c;

        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 / guard(1.0 + aa * d);
        c = guard(1.0 + aa / c);
        let delta = d * c;
        h *= delta;

        if (delta - 1.0).abs() <= CF_EPS {
            break;
        }
    }
    h
}

/// A binomial CDF evaluation `P{B(trials, p) <= k}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinomialQuery {
    pub trials: u64,
    pub p: f64,
    pub k: i64,
}

impl BinomialQuery {
    pub fn new(trials: u64, p: f64, k: i64) -> Self {
        Self { trials, p, k }
    }

    fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p) {
            return Err(Error::domain(format!(
                "binomial success probability must lie in [0, 1], got {}",
                self.p
            )));
        }
        Ok(())
    }

    /// Degenerate cases that need no numerics.
    fn trivial(&self) -> Option<f64> {
        let n = self.trials as i64;
        if self.k < 0 {
            Some(0.0)
        } else if self.k >= n || self.p == 0.0 {
            Some(1.0)
        } else if self.p == 1.0 {
            Some(0.0)
        } else {
            None
        }
    }
}

/// `P{B(n, p) <= k}`.
///
/// Uses direct summation for `n <= 64` and the incomplete-beta identity
/// `P{B(n,p) <= k} = I_{1-p}(n-k, k+1)` above that.
pub fn binomial_cdf(q: BinomialQuery) -> Result<f64> {
    q.validate()?;
    if let Some(v) = q.trivial() {
        return Ok(v);
    }
    if q.trials <= DIRECT_SUMMATION_MAX_TRIALS {
        Ok(binomial_cdf_sum(q.trials, q.p, q.k))
    } else {
        binomial_cdf_beta_unchecked(q.trials, q.p, q.k)
    }
}

/// `P{B(n, p) <= k}` always through the incomplete beta function.
pub fn binomial_cdf_beta(q: BinomialQuery) -> Result<f64> {
    q.validate()?;
    if let Some(v) = q.trivial() {
        return Ok(v);
    }
    binomial_cdf_beta_unchecked(q.trials, q.p, q.k)
}

fn binomial_cdf_beta_unchecked(n: u64, p: f64, k: i64) -> Result<f64> {
    let k = k as f64;
    regularized_incomplete_beta(n as f64 - k, k + 1.0, 1.0 - p)
}

/// Direct PMF summation; callers handle the trivial cases.
fn binomial_cdf_sum(n: u64, p: f64, k: i64) -> f64 {
    let ln_p = p.ln();
    let ln_q = (-p).ln_1p();
    let mut ln_term = n as f64 * ln_q;
    let mut acc = CompensatedSum::new();
    for j in 0..=k as u64 {
        acc.add(ln_term.exp());
        ln_term += ((n - j) as f64 / (j + 1) as f64).ln() + ln_p - ln_q;
    }
    acc.value().min(1.0)
}

fn check_beta_params(a: f64, b: f64) -> Result<()> {
    if !(a > 0.0) || !(b > 0.0) || !a.is_finite() || !b.is_finite() {
        return Err(Error::domain(format!(
            "beta-binomial requires a, b > 0, got a={a}, b={b}"
        )));
    }
    Ok(())
}

/// `P{BetaBin(trials, a, b) = k}`.
pub fn beta_binomial_pmf(trials: u64, a: f64, b: f64, k: i64) -> Result<f64> {
    check_beta_params(a, b)?;
    if k < 0 || k as u64 > trials {
        return Ok(0.0);
    }
    Ok(beta_binomial_pmf_unchecked(trials, a, b, k as u64))
}

fn beta_binomial_pmf_unchecked(trials: u64, a: f64, b: f64, k: u64) -> f64 {
    use statrs::function::gamma::ln_gamma;
    let t = trials as f64;
    let kf = k as f64;
    let ln_choose = ln_gamma(t + 1.0) - ln_gamma(kf + 1.0) - ln_gamma(t - kf + 1.0);
    (ln_choose + ln_beta(kf + a, t - kf + b) - ln_beta(a, b)).exp()
}

/// `P{BetaBin(trials, a, b) <= k}`.
pub fn beta_binomial_cdf(trials: u64, a: f64, b: f64, k: i64) -> Result<f64> {
    check_beta_params(a, b)?;
    if k < 0 {
        return Ok(0.0);
    }
    if k as u64 >= trials {
        return Ok(1.0);
    }
    let mut acc = CompensatedSum::new();
    for j in 0..=k as u64 {
        acc.add(beta_binomial_pmf_unchecked(trials, a, b, j));
    }
    Ok(acc.value().min(1.0))
}

/// Whole PMF from the ratio recurrence
/// `p(k + 1) / p(k) = (t - k)(a + k) / ((k + 1)(b + t - k - 1))`, accumulated
/// in log space and normalized to sum to one.
fn beta_binomial_pmf_table(trials: u64, a: f64, b: f64) -> Vec<f64> {
    let t = trials as f64;
    let mut logs = Vec::with_capacity(trials as usize + 1);
    let mut cur = 0.0;
    logs.push(cur);
    for k in 0..trials {
        let kf = k as f64;
        cur += ((t - kf) * (a + kf)).ln() - ((kf + 1.0) * (b + t - kf - 1.0)).ln();
        logs.push(cur);
    }
    let peak = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let unnorm: Vec<f64> = logs.iter().map(|l| (l - peak).exp()).collect();
    let total = compensated_sum(unnorm.iter().copied());
    unnorm.into_iter().map(|u| u / total).collect()
}

/// PMF and CDF tables of `BetaBin(trials, a, b)` over `0..=trials`.
///
/// The last CDF entry is pinned to exactly 1.
#[derive(Debug, Clone)]
pub struct BetaBinomialTable {
    pmf: Vec<f64>,
    cdf: Vec<f64>,
}

impl BetaBinomialTable {
    pub fn new(trials: u64, a: f64, b: f64) -> Result<Self> {
        check_beta_params(a, b)?;
        let pmf = beta_binomial_pmf_table(trials, a, b);
        let mut acc = CompensatedSum::new();
        let mut cdf: Vec<f64> = pmf
            .iter()
            .map(|&v| {
                acc.add(v);
                acc.value().min(1.0)
            })
            .collect();
        if let Some(last) = cdf.last_mut() {
            *last = 1.0;
        }
        Ok(Self { pmf, cdf })
    }

    pub fn pmf(&self) -> &[f64] {
        &self.pmf
    }

    pub fn cdf(&self) -> &[f64] {
        &self.cdf
    }

    /// `P{X <= k}` read from the table.
    pub fn cdf_at(&self, k: i64) -> f64 {
        if k < 0 {
            0.0
        } else {
            self.cdf[(k as usize).min(self.cdf.len() - 1)]
        }
    }

    /// Inverse-CDF draw from a uniform variate `u` in `[0, 1)`.
    pub fn quantile_index(&self, u: f64) -> usize {
        self.cdf
            .partition_point(|&c| c <= u)
            .min(self.cdf.len() - 1)
    }
}
