//! `cpsize`: expected prediction-set size estimates from the command line.
//!
//! Exit codes: 0 success, 2 usage error, 3 data error, 4 infinite result.

// `!(x < y)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod input;
mod model;

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use cpsize::baseline::{
    bernstein_interval, clt_interval, hoeffding_interval, mc_average, miscoverage,
    BaselineInterval, FactorModel, ScoreLaw, SizeSampleSet,
};
use cpsize::estimate::{
    conditional_point_estimate_feature, interval_estimate_known, interval_estimate_unknown,
    point_estimate_known, point_estimate_unknown,
};
use cpsize::scorer::{label_weights, LabelMeasure};
use cpsize::synthetic::{
    run_grid, theoretical_size, write_grid_csv, GridSpec, SyntheticConfig, SyntheticModel,
};
use cpsize::{Execution, FactorSpec, ScoreMatrix, ScoreSample, SizeEstimate};
use serde::Serialize;

use model::ModelSpec;

/// Version of every JSON document this tool writes.
const SCHEMA_VERSION: u32 = 1;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    /// The result is `+inf`; the document has already been written.
    Infinite,
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Infinite => 4,
        }
    }
}

/// Errors raised while computing on parsed input are data errors, except a
/// request the library cannot serve at all.
fn lib(e: cpsize::Error) -> CliError {
    match e {
        cpsize::Error::Unsupported(msg) => CliError::Usage(msg),
        other => CliError::Data(other.to_string()),
    }
}

#[derive(Parser, Debug)]
#[command(name = "cpsize", version, about = "Expected prediction-set size for split conformal prediction")]
struct Cli {
    /// Worker threads for parallel sections.
    #[arg(long, global = true, env = "SIZE_CLI_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Level {
    /// Calibration set size.
    #[arg(long)]
    n: usize,
    /// Significance level in (0, 1).
    #[arg(long)]
    alpha: f64,
}

#[derive(Args, Debug)]
struct Output {
    /// Write to this file instead of stdout.
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Estimate from accessible scores with a known factor.
    Estimate {
        /// One score per line, optional `score` header.
        #[arg(long)]
        scores: PathBuf,
        #[command(flatten)]
        level: Level,
        /// `l1`, `lp:<p>`, `lp:<p>:<m>` or `zero-one:<L>`.
        #[arg(long)]
        factor: FactorSpec,
        /// Adds a DKW interval at confidence 1 - gamma.
        #[arg(long)]
        gamma: Option<f64>,
        /// Upper limit of the upper-bound integral (default: largest score).
        #[arg(long)]
        integration_max: Option<f64>,
        #[command(flatten)]
        out: Output,
    },
    /// Nested estimate from a score matrix (unknown factor).
    EstimateMatrix {
        /// Header row of label-grid values, then one row per accessible point.
        #[arg(long)]
        matrix: PathBuf,
        /// True-label score per accessible point, one per line.
        #[arg(long)]
        marginal: PathBuf,
        #[command(flatten)]
        level: Level,
        #[arg(long)]
        gamma: Option<f64>,
        /// `counting` or `trapezoid` over the header grid.
        #[arg(long, default_value = "counting")]
        label_measure: LabelMeasure,
        #[command(flatten)]
        out: Output,
    },
    /// Expected size for one test feature given its per-label scores.
    Conditional {
        #[arg(long)]
        scores: PathBuf,
        /// `score[,weight]` per candidate label; weight defaults to 1.
        #[arg(long)]
        row: PathBuf,
        #[command(flatten)]
        level: Level,
        #[command(flatten)]
        out: Output,
    },
    /// Beta-binomial validation grid, written as CSV.
    Synthetic {
        #[arg(long, value_delimiter = ',')]
        a: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        b: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        m: Option<Vec<usize>>,
        #[arg(long, value_delimiter = ',')]
        n: Option<Vec<usize>>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long, value_delimiter = ',')]
        gamma: Option<Vec<f64>>,
        #[arg(long)]
        runs: Option<usize>,
        #[arg(long)]
        repeats: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Start from the full grid (m, n up to 10^4, 1000 runs) instead of desk scale.
        #[arg(long)]
        full: bool,
        #[command(flatten)]
        out: Output,
    },
    /// Monte Carlo average of realized set sizes with baseline intervals.
    Mc {
        /// `synthetic:m:a:b`, `uniform:low:high`, `exponential:rate` or `constant:c`.
        #[arg(long)]
        model: ModelSpec,
        /// Factor for continuous models.
        #[arg(long, default_value = "l1")]
        factor: FactorSpec,
        #[command(flatten)]
        level: Level,
        #[arg(long, default_value_t = 1000)]
        runs: usize,
        #[arg(long, default_value_t = 0.1)]
        gamma: f64,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        out: Output,
    },
    /// Empirical miscoverage of split conformal.
    Coverage {
        #[arg(long)]
        model: ModelSpec,
        #[command(flatten)]
        level: Level,
        #[arg(long, default_value_t = 10_000)]
        trials: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        out: Output,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            match &e {
                CliError::Usage(msg) => eprintln!("error: {msg}"),
                CliError::Data(msg) => eprintln!("data error: {msg}"),
                CliError::Infinite => {
                    eprintln!("result is infinite: n_alpha = n, the threshold is +inf")
                }
            }
            ExitCode::from(e.code())
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let exec = configure_threads(cli.threads)?;
    match cli.command {
        Command::Estimate { scores, level, factor, gamma, integration_max, out } => {
            cmd_estimate(&scores, &level, factor, gamma, integration_max, &out)
        }
        Command::EstimateMatrix { matrix, marginal, level, gamma, label_measure, out } => {
            cmd_estimate_matrix(&matrix, &marginal, &level, gamma, label_measure, exec, &out)
        }
        Command::Conditional { scores, row, level, out } => cmd_conditional(&scores, &row, &level, &out),
        Command::Synthetic { a, b, m, n, alpha, gamma, runs, repeats, seed, full, out } => {
            let seed = seed_or_random(seed);
            eprintln!("seed: {seed}");
            let base = if full { GridSpec::full_scale(seed) } else { GridSpec::desk_scale(seed) };
            let spec = GridSpec {
                a: a.unwrap_or(base.a),
                b: b.unwrap_or(base.b),
                m: m.unwrap_or(base.m),
                n: n.unwrap_or(base.n),
                alpha: alpha.unwrap_or(base.alpha),
                gamma: gamma.unwrap_or(base.gamma),
                runs: runs.unwrap_or(base.runs),
                repeats: repeats.unwrap_or(base.repeats),
                seed,
            };
            check_alpha(spec.alpha)?;
            for &g in &spec.gamma {
                check_gamma(g)?;
            }
            let records = run_grid(&spec, exec).map_err(|e| CliError::Usage(e.to_string()))?;
            let mut sink = open_output(&out)?;
            write_grid_csv(&records, &mut sink).map_err(io_error)?;
            sink.flush().map_err(io_error)
        }
        Command::Mc { model, factor, level, runs, gamma, seed, out } => {
            cmd_mc(model, factor, &level, runs, gamma, seed, exec, &out)
        }
        Command::Coverage { model, level, trials, seed, out } => cmd_coverage(model, &level, trials, seed, exec, &out),
    }
}

fn configure_threads(threads: Option<usize>) -> Result<Execution, CliError> {
    match threads {
        Some(0) => Err(CliError::Usage("--threads must be at least 1".into())),
        Some(1) => Ok(Execution::Sequential),
        #[cfg(feature = "parallel")]
        Some(t) => {
            rayon::ThreadPoolBuilder::new()
                .num_threads(t)
                .build_global()
                .map_err(|e| CliError::Usage(format!("cannot start thread pool: {e}")))?;
            Ok(Execution::Parallel)
        }
        #[cfg(not(feature = "parallel"))]
        Some(_) => Ok(Execution::Sequential),
        None => Ok(Execution::default()),
    }
}

fn seed_or_random(seed: Option<u64>) -> u64 {
    seed.unwrap_or_else(rand::random)
}

fn check_alpha(alpha: f64) -> Result<(), CliError> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(CliError::Usage(format!("--alpha must lie in (0, 1), got {alpha}")))
    }
}

fn check_gamma(gamma: f64) -> Result<(), CliError> {
    if gamma > 0.0 && gamma < 1.0 {
        Ok(())
    } else {
        Err(CliError::Usage(format!("--gamma must lie in (0, 1), got {gamma}")))
    }
}

fn check_level(level: &Level) -> Result<(), CliError> {
    if level.n == 0 {
        return Err(CliError::Usage("--n must be at least 1".into()));
    }
    check_alpha(level.alpha)
}

fn io_error(e: io::Error) -> CliError {
    CliError::Usage(format!("cannot write output: {e}"))
}

fn open_output(out: &Output) -> Result<Box<dyn Write>, CliError> {
    Ok(match &out.output {
        Some(path) => Box::new(BufWriter::new(File::create(path).map_err(|e| {
            CliError::Usage(format!("cannot create {}: {e}", path.display()))
        })?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn emit<T: Serialize>(doc: &T, out: &Output) -> Result<(), CliError> {
    let mut sink = open_output(out)?;
    serde_json::to_writer_pretty(&mut sink, doc).map_err(|e| io_error(e.into()))?;
    writeln!(sink).map_err(io_error)?;
    sink.flush().map_err(io_error)
}

/// JSON document for every estimate command. Infinite values are `null`
/// with `infinite: true`.
#[derive(Serialize)]
struct EstimateDoc {
    schema_version: u32,
    command: &'static str,
    point: Option<f64>,
    lower: Option<f64>,
    upper: Option<f64>,
    gamma: Option<f64>,
    delta: Option<f64>,
    k: usize,
    n: usize,
    alpha: f64,
    n_alpha: usize,
    factor: String,
    estimator: cpsize::estimate::EstimatorKind,
    truncation: Option<f64>,
    heuristic: bool,
    infinite: bool,
}

fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

fn emit_estimate(command: &'static str, e: &SizeEstimate, out: &Output) -> Result<(), CliError> {
    let doc = EstimateDoc {
        schema_version: SCHEMA_VERSION,
        command,
        point: finite(e.point),
        lower: e.lower().and_then(finite),
        upper: e.upper().and_then(finite),
        gamma: e.interval.map(|i| i.gamma),
        delta: e.interval.map(|i| i.delta),
        k: e.meta.k,
        n: e.meta.n,
        alpha: e.meta.alpha,
        n_alpha: e.meta.n_alpha,
        factor: e.meta.factor.clone(),
        estimator: e.meta.estimator,
        truncation: e.meta.integration_upper,
        heuristic: e.meta.heuristic,
        infinite: e.is_infinite(),
    };
    emit(&doc, out)?;
    if e.is_infinite() {
        return Err(CliError::Infinite);
    }
    Ok(())
}

fn cmd_estimate(
    scores: &Path,
    level: &Level,
    factor: FactorSpec,
    gamma: Option<f64>,
    integration_max: Option<f64>,
    out: &Output,
) -> Result<(), CliError> {
    check_level(level)?;
    if factor == FactorSpec::Unknown {
        return Err(CliError::Usage(
            "the unknown factor needs a score matrix; use estimate-matrix".into(),
        ));
    }
    if let Some(g) = gamma {
        check_gamma(g)?;
    }
    if integration_max.is_some() && gamma.is_none() {
        return Err(CliError::Usage("--integration-max only applies with --gamma".into()));
    }
    let sample = ScoreSample::new(input::read_scores(scores)?, factor.support().lower).map_err(lib)?;
    let est = match gamma {
        Some(g) => interval_estimate_known(&sample, level.n, level.alpha, factor, g, integration_max),
        None => point_estimate_known(&sample, level.n, level.alpha, factor),
    }
    .map_err(lib)?;
    emit_estimate("estimate", &est, out)
}

fn cmd_estimate_matrix(
    matrix: &Path,
    marginal: &Path,
    level: &Level,
    gamma: Option<f64>,
    measure: LabelMeasure,
    exec: Execution,
    out: &Output,
) -> Result<(), CliError> {
    check_level(level)?;
    if let Some(g) = gamma {
        check_gamma(g)?;
    }
    // Both inputs must exist before either is parsed.
    for path in [matrix, marginal] {
        if !path.exists() {
            return Err(CliError::Usage(format!("no such file: {}", path.display())));
        }
    }
    let file = input::read_matrix(matrix)?;
    let marginal = input::read_scores(marginal)?;
    let weights = label_weights(measure, &file.grid).map_err(lib)?;
    let matrix = ScoreMatrix::from_rows(file.rows, weights, marginal).map_err(lib)?;
    let est = match gamma {
        Some(g) => interval_estimate_unknown(&matrix, level.n, level.alpha, g, exec),
        None => point_estimate_unknown(&matrix, level.n, level.alpha, exec),
    }
    .map_err(lib)?;
    emit_estimate("estimate-matrix", &est, out)
}

fn cmd_conditional(scores: &Path, row: &Path, level: &Level, out: &Output) -> Result<(), CliError> {
    check_level(level)?;
    let sample = ScoreSample::unbounded(input::read_scores(scores)?).map_err(lib)?;
    let (row_scores, row_weights) = input::read_row(row)?;
    let est = conditional_point_estimate_feature(&sample, &row_scores, &row_weights, level.n, level.alpha)
        .map_err(lib)?;
    emit_estimate("conditional", &est, out)
}

#[derive(Serialize)]
struct McDoc {
    schema_version: u32,
    command: &'static str,
    seed: u64,
    model: String,
    factor: Option<String>,
    n: usize,
    alpha: f64,
    runs: usize,
    mean: f64,
    std_dev: f64,
    std_err: f64,
    theoretical: Option<f64>,
    studentized: Option<f64>,
    bound: Option<f64>,
    intervals: Vec<BaselineInterval>,
}

#[allow(clippy::too_many_arguments)]
fn cmd_mc(
    spec: ModelSpec,
    factor: FactorSpec,
    level: &Level,
    runs: usize,
    gamma: f64,
    seed: Option<u64>,
    exec: Execution,
    out: &Output,
) -> Result<(), CliError> {
    check_level(level)?;
    check_gamma(gamma)?;
    if runs < 2 {
        return Err(CliError::Usage("--runs must be at least 2".into()));
    }
    let seed = seed_or_random(seed);
    let (mc, theoretical, bound, factor_name) = match spec {
        ModelSpec::Synthetic { m, a, b } => {
            let config = SyntheticConfig::new(m, a, b).map_err(|e| CliError::Usage(e.to_string()))?;
            let truth = theoretical_size(&config, level.n, level.alpha).map_err(lib)?;
            let bound = config.total_weight();
            let model = SyntheticModel::new(config).map_err(lib)?;
            let mc = mc_average(&model, level.n, level.alpha, runs, seed, exec).map_err(lib)?;
            (mc, Some(truth), Some(bound), None)
        }
        ModelSpec::Law(law) => {
            if !factor.is_analytic() || factor.is_discrete() {
                return Err(CliError::Usage(format!(
                    "continuous models need a continuous analytic factor, got {factor}"
                )));
            }
            let model = FactorModel { law, factor };
            let mc = mc_average(&model, level.n, level.alpha, runs, seed, exec).map_err(lib)?;
            let truth = match law {
                ScoreLaw::Constant(c) if c >= 0.0 => factor.antiderivative(c).ok(),
                _ => None,
            };
            (mc, truth, None, Some(factor.to_string()))
        }
    };
    let samples = SizeSampleSet::new(mc.sizes.clone(), bound).map_err(lib)?;
    let mut intervals = vec![clt_interval(&samples, gamma).map_err(lib)?];
    if bound.is_some() {
        intervals.push(hoeffding_interval(&samples, gamma).map_err(lib)?);
        intervals.push(bernstein_interval(&samples, gamma).map_err(lib)?);
    }
    let doc = McDoc {
        schema_version: SCHEMA_VERSION,
        command: "mc",
        seed,
        model: spec.to_string(),
        factor: factor_name,
        n: level.n,
        alpha: level.alpha,
        runs,
        mean: mc.mean,
        std_dev: mc.std_dev,
        std_err: mc.std_err(),
        theoretical,
        studentized: theoretical.map(|t| mc.studentized(t)).filter(|z| z.is_finite()),
        bound,
        intervals,
    };
    emit(&doc, out)
}

#[derive(Serialize)]
struct CoverageDoc {
    schema_version: u32,
    command: &'static str,
    seed: u64,
    model: String,
    n: usize,
    alpha: f64,
    trials: usize,
    miscoverage: f64,
    errors: usize,
    /// `[alpha - 1/(n+1), alpha]`, exact for continuous scores.
    nominal_band: [f64; 2],
    /// Nominal band widened by three Monte Carlo standard errors.
    within_band: bool,
}

fn cmd_coverage(
    spec: ModelSpec,
    level: &Level,
    trials: usize,
    seed: Option<u64>,
    exec: Execution,
    out: &Output,
) -> Result<(), CliError> {
    check_level(level)?;
    if trials == 0 {
        return Err(CliError::Usage("--trials must be at least 1".into()));
    }
    let seed = seed_or_random(seed);
    let result = match spec {
        ModelSpec::Synthetic { m, a, b } => {
            let config = SyntheticConfig::new(m, a, b).map_err(|e| CliError::Usage(e.to_string()))?;
            let model = SyntheticModel::new(config).map_err(lib)?;
            miscoverage(&model, level.n, level.alpha, trials, seed, exec)
        }
        ModelSpec::Law(law) => miscoverage(&law, level.n, level.alpha, trials, seed, exec),
    }
    .map_err(lib)?;
    let low = level.alpha - 1.0 / (level.n as f64 + 1.0);
    let slack = 3.0 * (level.alpha * (1.0 - level.alpha) / trials as f64).sqrt();
    let doc = CoverageDoc {
        schema_version: SCHEMA_VERSION,
        command: "coverage",
        seed,
        model: spec.to_string(),
        n: level.n,
        alpha: level.alpha,
        trials,
        miscoverage: result.rate,
        errors: result.errors,
        nominal_band: [low.max(0.0), level.alpha],
        within_band: result.rate >= low - slack && result.rate <= level.alpha + slack,
    };
    emit(&doc, out)
}
