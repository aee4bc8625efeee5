//! Independent oracles shared by the integration and acceptance tests.
//!
//! Nothing here calls the crate's numerical routes: binomial probabilities
//! are summed term by term, integrals are Riemann sums, and expected sizes are
//! brute-forced over every calibration draw.
#![allow(dead_code)]

/// `C(n, j)` as a product of ratios.
pub fn choose(n: u64, j: u64) -> f64 {
    (0..j).map(|i| (n - i) as f64 / (i + 1) as f64).product()
}

/// `P{B(n, p) <= k}` by direct summation.
pub fn binom_cdf_oracle(n: u64, p: f64, k: i64) -> f64 {
    if k < 0 {
        return 0.0;
    }
    let k = (k as u64).min(n);
    (0..=k)
        .map(|j| choose(n, j) * p.powi(j as i32) * (1.0 - p).powi((n - j) as i32))
        .sum()
}

/// Beta-binomial PMF via `Γ` ratios of small integers-plus-reals, computed by
/// the rising-factorial product form `C(t,k) (a)_k (b)_{t-k} / (a+b)_t`.
pub fn beta_binomial_pmf_oracle(trials: u64, a: f64, b: f64, k: u64) -> f64 {
    let rising = |x: f64, m: u64| (0..m).map(|i| x + i as f64).product::<f64>();
    choose(trials, k) * rising(a, k) * rising(b, trials - k) / rising(a + b, trials)
}

/// Midpoint Riemann sum of `f` on `[lo, hi]` with `panels` panels.
pub fn midpoint<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, panels: usize) -> f64 {
    let h = (hi - lo) / panels as f64;
    let mut acc = 0.0;
    let mut carry = 0.0;
    for i in 0..panels {
        // Kahan summation keeps 10^6 panels at full precision.
        let y = f(lo + (i as f64 + 0.5) * h) * h - carry;
        let t = acc + y;
        carry = (t - acc) - y;
        acc = t;
    }
    acc
}

/// Adaptive Simpson quadrature.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
        let m = 0.5 * (a + b);
        let fm = f(m);
        (m, fm, (b - a) / 6.0 * (fa + 4.0 * fm + fb))
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse<F: Fn(f64) -> f64>(
        f: &F,
        a: f64,
        fa: f64,
        b: f64,
        fb: f64,
        m: f64,
        fm: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let (lm, flm, left) = simpson(f, a, fa, m, fm);
        let (rm, frm, right) = simpson(f, m, fm, b, fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        recurse(f, a, fa, m, fm, lm, flm, left, tol / 2.0, depth - 1)
            + recurse(f, m, fm, b, fb, rm, frm, right, tol / 2.0, depth - 1)
    }
    let (fa, fb) = (f(a), f(b));
    let (m, fm, whole) = simpson(f, a, fa, b, fb);
    recurse(f, a, fa, b, fb, m, fm, whole, tol, 48)
}

/// `ceil((1 - alpha)(n + 1))` computed with exact rational arithmetic for
/// `alpha = num / den`.
pub fn rank_rational(n: u64, num: u64, den: u64) -> u64 {
    let top = (den - num) * (n + 1);
    top.div_ceil(den)
}

/// Expected set size `Σ_i w_i 1{r_i <= τ}` averaged over every ordered
/// calibration draw of `n` atom indices, each weighted by its probability.
pub fn brute_force_expected_size(pmf: &[f64], weights: &[f64], n: usize, rank: usize) -> f64 {
    brute_force_size_moments(pmf, weights, n, rank).0
}

/// First and second moments of the set size by the same enumeration.
pub fn brute_force_size_moments(pmf: &[f64], weights: &[f64], n: usize, rank: usize) -> (f64, f64) {
    let m = pmf.len();
    let total_draws = m.pow(n as u32);
    let mut expected = 0.0;
    let mut second = 0.0;
    let mut draw = vec![0usize; n];
    for code in 0..total_draws {
        let mut c = code;
        let mut prob = 1.0;
        for slot in draw.iter_mut() {
            *slot = c % m;
            c /= m;
            prob *= pmf[*slot];
        }
        let mut sorted = draw.clone();
        sorted.sort_unstable();
        let size: f64 = if rank > n {
            weights.iter().sum()
        } else {
            let tau = sorted[rank - 1];
            weights[..=tau].iter().sum()
        };
        expected += prob * size;
        second += prob * size * size;
    }
    (expected, second)
}

/// One reported criterion.
pub struct Check {
    pub id: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn new(id: &'static str, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            id,
            passed,
            detail: detail.into(),
        }
    }
}
