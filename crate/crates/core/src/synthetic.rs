//! Beta-binomial validation model.
//!
//! Scores live on `m` atoms `r_1 < … < r_m`; the index of a calibration score
//! minus one follows `BetaBin(m - 1, a, b)`, so the exact tilde-CDF is
//! `tilde(r_i) = P{BetaBin(m - 1, a, b) <= i - 2}` and the true expected size
//! is available in closed form for any `(n, alpha)`.

use std::io::{self, Write};

use rand::Rng;
use serde::Serialize;

use crate::baseline::{mc_average, ScoreModel, SizeModel};
use crate::conformal::{ScoreSample, Threshold};
use crate::error::{Error, Result};
use crate::estimate::AtomEstimator;
use crate::exec::{derive_seed, seeded_rng, Execution, SeededRng};
use crate::size::{expected_size_discrete_exact, size_variance_discrete_exact};
use crate::special::BetaBinomialTable;
use crate::sum::compensated_sum;

/// Factor weight per atom used by default.
pub const DEFAULT_ATOM_WEIGHT: f64 = 2.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub scores: Vec<f64>,
    pub weights: Vec<f64>,
    pub a: f64,
    pub b: f64,
}

impl SyntheticConfig {
    /// Atoms `r_i = i` for `i = 1..=m`, each with weight 2.
    pub fn new(m: usize, a: f64, b: f64) -> Result<Self> {
        let scores = (1..=m).map(|i| i as f64).collect();
        Self::with_atoms(scores, vec![DEFAULT_ATOM_WEIGHT; m], a, b)
    }

    pub fn with_atoms(scores: Vec<f64>, weights: Vec<f64>, a: f64, b: f64) -> Result<Self> {
        if scores.is_empty() {
            return Err(Error::Empty("score atoms"));
        }
        if scores.len() != weights.len() {
            return Err(Error::Dimension {
                what: "weights per score atom",
                expected: scores.len(),
                got: weights.len(),
            });
        }
        if scores.iter().any(|s| !s.is_finite()) || scores.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::malformed("score atoms must be finite and strictly increasing"));
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::domain("atom weights must be finite and non-negative"));
        }
        if !(a > 0.0) || !(b > 0.0) {
            return Err(Error::domain(format!("beta-binomial needs a, b > 0, got a={a}, b={b}")));
        }
        Ok(Self { scores, weights, a, b })
    }

    pub fn m(&self) -> usize {
        self.scores.len()
    }

    /// Total label measure `Σ_i w_i`; the largest possible set size.
    pub fn total_weight(&self) -> f64 {
        compensated_sum(self.weights.iter().copied())
    }
}

/// `tilde(r_i)` for every atom.
pub fn exact_tilde_p(config: &SyntheticConfig) -> Result<Vec<f64>> {
    let table = BetaBinomialTable::new(config.m() as u64 - 1, config.a, config.b)?;
    Ok((0..config.m()).map(|i| table.cdf_at(i as i64 - 1)).collect())
}

/// Exact expected set size for `n` calibration scores at level `alpha`.
pub fn theoretical_size(config: &SyntheticConfig, n: usize, alpha: f64) -> Result<f64> {
    expected_size_discrete_exact(&exact_tilde_p(config)?, &config.weights, n, alpha)
}

/// Exact standard deviation of a single run's set size.
pub fn theoretical_size_sd(config: &SyntheticConfig, n: usize, alpha: f64) -> Result<f64> {
    Ok(size_variance_discrete_exact(&exact_tilde_p(config)?, &config.weights, n, alpha)?.sqrt())
}

/// Sampler over the atoms, with the CDF table precomputed.
#[derive(Debug, Clone)]
pub struct SyntheticModel {
    config: SyntheticConfig,
    table: BetaBinomialTable,
}

impl SyntheticModel {
    pub fn new(config: SyntheticConfig) -> Result<Self> {
        let table = BetaBinomialTable::new(config.m() as u64 - 1, config.a, config.b)?;
        Ok(Self { config, table })
    }

    pub fn config(&self) -> &SyntheticConfig {
        &self.config
    }

    pub fn draw_index(&self, rng: &mut SeededRng) -> usize {
        self.table.quantile_index(rng.random::<f64>())
    }
}

impl ScoreModel for SyntheticModel {
    fn draw(&self, rng: &mut SeededRng) -> f64 {
        self.config.scores[self.draw_index(rng)]
    }

    fn lower_bound(&self) -> f64 {
        self.config.scores[0]
    }
}

impl SizeModel for SyntheticModel {
    /// Every atom is a label "distance"; the set keeps those at most `threshold`.
    fn set_size(&self, threshold: Threshold, _rng: &mut SeededRng) -> Result<f64> {
        Ok(compensated_sum(
            self.config
                .scores
                .iter()
                .zip(&self.config.weights)
                .filter(|(&r, _)| threshold.accepts(r))
                .map(|(_, &w)| w),
        ))
    }
}

/// `n` i.i.d. scores by inverse-CDF sampling.
pub fn sample_scores(model: &SyntheticModel, n: usize, rng: &mut SeededRng) -> Result<ScoreSample> {
    if n == 0 {
        return Err(Error::domain("sample size must be at least 1"));
    }
    model.calibration(n, rng)
}

/// Parameter grid of the validation experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub m: Vec<usize>,
    pub n: Vec<usize>,
    pub gamma: Vec<f64>,
    pub alpha: f64,
    pub runs: usize,
    pub repeats: usize,
    pub seed: u64,
}

impl GridSpec {
    /// Reduced grid: `m <= 100`, `n <= 1000`, 200 runs per cell.
    pub fn desk_scale(seed: u64) -> Self {
        Self {
            a: vec![0.0625, 0.25, 1.0, 4.0, 16.0],
            b: vec![0.0625, 0.25, 1.0, 4.0, 16.0],
            m: vec![10, 100],
            n: vec![10, 100, 1000],
            gamma: vec![0.1, 0.01],
            alpha: 0.1,
            runs: 200,
            repeats: 10,
            seed,
        }
    }

    /// The full 800-setting grid with `m, n` up to `10^4`.
    pub fn full_scale(seed: u64) -> Self {
        Self {
            m: vec![10, 100, 1000, 10_000],
            n: vec![10, 100, 1000, 10_000],
            runs: 1000,
            ..Self::desk_scale(seed)
        }
    }

    fn validate(&self) -> Result<()> {
        if self.a.is_empty() || self.b.is_empty() || self.m.is_empty() || self.n.is_empty() {
            return Err(Error::Empty("grid axes"));
        }
        if self.gamma.is_empty() {
            return Err(Error::Empty("gamma values"));
        }
        if self.repeats == 0 || self.runs == 0 {
            return Err(Error::domain("runs and repeats must be positive"));
        }
        if self.m.contains(&0) || self.n.contains(&0) {
            return Err(Error::domain("m and n must be positive"));
        }
        Ok(())
    }

    /// `(a, b, m, n)` cells in canonical order.
    pub fn cells(&self) -> Vec<(f64, f64, usize, usize)> {
        let mut cells = Vec::new();
        for &a in &self.a {
            for &b in &self.b {
                for &m in &self.m {
                    for &n in &self.n {
                        cells.push((a, b, m, n));
                    }
                }
            }
        }
        cells
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridRecord {
    pub a: f64,
    pub b: f64,
    pub m: usize,
    pub n: usize,
    pub alpha: f64,
    pub gamma: f64,
    pub repeat: usize,
    pub theoretical: f64,
    pub theoretical_sd: f64,
    pub mc_avg: f64,
    pub mc_runs: usize,
    pub mc_std_err: f64,
    pub point: f64,
    pub lower: f64,
    pub upper: f64,
    pub contains_truth: bool,
}

impl GridRecord {
    pub const CSV_HEADER: &'static str =
        "a,b,m,n,alpha,gamma,repeat,theoretical,mc_avg,point,lower,upper,contains_truth";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.a,
            self.b,
            self.m,
            self.n,
            self.alpha,
            self.gamma,
            self.repeat,
            self.theoretical,
            self.mc_avg,
            self.point,
            self.lower,
            self.upper,
            self.contains_truth
        )
    }

    /// Deviation of the Monte Carlo average from the truth in units of its
    /// exact standard error `sd / sqrt(runs)`.
    ///
    /// The empirical standard error is not used: near-deterministic cells
    /// often produce identical sizes in every run, making it zero.
    pub fn mc_studentized(&self) -> f64 {
        let diff = self.mc_avg - self.theoretical;
        let se = self.theoretical_sd / (self.mc_runs as f64).sqrt();
        if se > 0.0 {
            diff / se
        } else if diff.abs() <= 1e-9 * self.theoretical.abs().max(1.0) {
            0.0
        } else {
            diff.signum() * f64::INFINITY
        }
    }
}

/// Absolute slack used when checking interval containment.
pub const CONTAINMENT_SLACK: f64 = 1e-9;

const ACCESSIBLE_STREAM: u64 = 0xACCE;

/// Runs every `(cell, repeat)` pair and returns records sorted by cell,
/// repeat and gamma (the order of [`GridSpec::cells`] and `spec.gamma`).
pub fn run_grid(spec: &GridSpec, exec: Execution) -> Result<Vec<GridRecord>> {
    spec.validate()?;
    let cells = spec.cells();
    let jobs: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..spec.repeats).map(move |r| (c, r)))
        .collect();
    let per_job = exec.map_slice(&jobs, |&(cell_idx, repeat)| {
        let (a, b, m, n) = cells[cell_idx];
        run_cell(spec, a, b, m, n, cell_idx as u64, repeat)
    });
    let mut records = Vec::with_capacity(jobs.len() * spec.gamma.len());
    for job in per_job {
        records.extend(job?);
    }
    Ok(records)
}

fn run_cell(
    spec: &GridSpec,
    a: f64,
    b: f64,
    m: usize,
    n: usize,
    cell: u64,
    repeat: usize,
) -> Result<Vec<GridRecord>> {
    let config = SyntheticConfig::new(m, a, b)?;
    let theoretical = theoretical_size(&config, n, spec.alpha)?;
    let theoretical_sd = theoretical_size_sd(&config, n, spec.alpha)?;
    let model = SyntheticModel::new(config)?;

    let job_seed = derive_seed(spec.seed, cell, repeat as u64);
    let mc = mc_average(&model, n, spec.alpha, spec.runs, job_seed, Execution::Sequential)?;
    let mut rng = seeded_rng(derive_seed(job_seed, ACCESSIBLE_STREAM, 0));
    let accessible = sample_scores(&model, n, &mut rng)?;
    let est = AtomEstimator::new(
        &accessible,
        model.config().scores.clone(),
        model.config().weights.clone(),
    )?;

    spec.gamma
        .iter()
        .map(|&gamma| {
            let e = est.interval(n, spec.alpha, gamma)?;
            Ok(GridRecord {
                a,
                b,
                m,
                n,
                alpha: spec.alpha,
                gamma,
                repeat,
                theoretical,
                theoretical_sd,
                mc_avg: mc.mean,
                mc_runs: mc.runs,
                mc_std_err: mc.std_err(),
                point: e.point,
                lower: e.lower().unwrap_or(f64::NAN),
                upper: e.upper().unwrap_or(f64::NAN),
                contains_truth: e.contains(theoretical, CONTAINMENT_SLACK),
            })
        })
        .collect()
}

/// Writes the records as CSV with [`GridRecord::CSV_HEADER`].
pub fn write_grid_csv<W: Write>(records: &[GridRecord], mut out: W) -> io::Result<()> {
    writeln!(out, "{}", GridRecord::CSV_HEADER)?;
    for r in records {
        writeln!(out, "{}", r.csv_row())?;
    }
    Ok(())
}
