//! Timing of the closed-form variance against the matrix-exponential route,
//! for bare variance evaluations and for whole calibrations.
//!
//! Measurements run on the calling thread with a monotonic clock. Each
//! configuration is warmed up once, then repeated; the median is reported.

use std::fmt::Write as _;
use std::hint::black_box;
use std::time::Instant;

use serde::Serialize;

use lyap_core::calibration::{calibrate, CalibrationConfig};
use lyap_core::data_io::OptionChainFile;
use lyap_core::{LmrGwParams, Matrix, ModelKind, ModelParams, Result, VarianceMethod};

/// Evaluation window for the variance benchmark, in years.
pub const WINDOW_YEARS: f64 = 30.0 / 365.0;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub evaluations: usize,
    pub analytical_s: f64,
    pub numerical_s: f64,
    pub speedup: f64,
    /// Median time of the bare timing loop.
    pub overhead_s: f64,
    /// False when the empty-loop baseline exceeds 1% of the analytical time.
    pub reliable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    pub repetitions: usize,
    pub aggregation: &'static str,
}

impl BenchReport {
    /// Aligned plain-text table, one row per evaluation count.
    pub fn to_table(&self) -> String {
        let mut out = format!(
            "{:>8}  {:>14}  {:>14}  {:>9}\n",
            "M", "analytical [s]", "numerical [s]", "speedup"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:>8}  {:>14.6}  {:>14.6}  {:>9.2}{}",
                r.evaluations,
                r.analytical_s,
                r.numerical_s,
                r.speedup,
                if r.reliable { "" } else { "  (unreliable)" }
            );
        }
        let _ = writeln!(out, "{} of {} repetitions", self.aggregation, self.repetitions);
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("evaluations,analytical_s,numerical_s,speedup\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                r.evaluations, r.analytical_s, r.numerical_s, r.speedup
            );
        }
        out
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn time<F: FnMut() -> Result<()>>(mut f: F) -> Result<f64> {
    let start = Instant::now();
    f()?;
    Ok(start.elapsed().as_secs_f64())
}

/// Median over `repetitions` runs after one untimed warm-up run.
fn median_time<F: FnMut() -> Result<()>>(repetitions: usize, mut f: F) -> Result<f64> {
    f()?;
    let mut samples = Vec::with_capacity(repetitions);
    for _ in 0..repetitions {
        samples.push(time(&mut f)?);
    }
    Ok(median(samples))
}

/// `m` equally spaced points in `(0, WINDOW_YEARS]`.
pub fn window_grid(m: usize) -> Vec<f64> {
    (1..=m).map(|i| WINDOW_YEARS * i as f64 / m as f64).collect()
}

fn check_args(m_values: &[usize], repetitions: usize) -> Result<()> {
    if m_values.is_empty() || m_values.contains(&0) {
        return Err(lyap_core::Error::InvalidInput(
            "evaluation counts must be a non-empty list of positive integers".into(),
        ));
    }
    if repetitions == 0 {
        return Err(lyap_core::Error::InvalidInput(
            "at least one repetition is required".into(),
        ));
    }
    Ok(())
}

fn assemble(m: usize, analytical_s: f64, numerical_s: f64, overhead_s: f64) -> BenchRow {
    BenchRow {
        evaluations: m,
        analytical_s,
        numerical_s,
        speedup: numerical_s / analytical_s,
        overhead_s,
        reliable: overhead_s <= 0.01 * analytical_s,
    }
}

fn empty_loop(grid: &[f64]) -> Result<()> {
    for &t in grid {
        black_box(t);
    }
    Ok(())
}

/// Times `M` separate single-point variance evaluations per method.
pub fn bench_variance(params: &LmrGwParams, m_values: &[usize], repetitions: usize) -> Result<BenchReport> {
    check_args(m_values, repetitions)?;
    let model = ModelParams::Lmrgw(*params);
    model.validate()?;
    let p0 = Matrix::zeros(2, 2);
    let mut rows = Vec::with_capacity(m_values.len());
    for &m in m_values {
        let grid = window_grid(m);
        let per_point = |method: VarianceMethod| {
            let (grid, model, p0) = (&grid, &model, &p0);
            move || -> Result<()> {
                for &t in grid {
                    black_box(model.variance_from(black_box(p0), black_box(t), method)?);
                }
                Ok(())
            }
        };
        let analytical = median_time(repetitions, per_point(VarianceMethod::Analytical))?;
        let numerical = median_time(repetitions, per_point(VarianceMethod::Numerical))?;
        let overhead = median_time(repetitions, || empty_loop(&grid))?;
        rows.push(assemble(m, analytical, numerical, overhead));
    }
    Ok(BenchReport {
        rows,
        repetitions,
        aggregation: "median",
    })
}

/// As [`bench_variance`] but with one call per method for all `M` points.
pub fn bench_variance_batched(params: &LmrGwParams, m_values: &[usize], repetitions: usize) -> Result<BenchReport> {
    check_args(m_values, repetitions)?;
    let model = ModelParams::Lmrgw(*params);
    model.validate()?;
    let p0 = Matrix::zeros(2, 2);
    let mut rows = Vec::with_capacity(m_values.len());
    for &m in m_values {
        let grid = window_grid(m);
        let batched = |method: VarianceMethod| {
            let (grid, model, p0) = (&grid, &model, &p0);
            move || -> Result<()> {
                black_box(model.variance_curve(black_box(p0), grid, method)?);
                Ok(())
            }
        };
        let analytical = median_time(repetitions, batched(VarianceMethod::Analytical))?;
        let numerical = median_time(repetitions, batched(VarianceMethod::Numerical))?;
        let overhead = median_time(repetitions, || empty_loop(&grid))?;
        rows.push(assemble(m, analytical, numerical, overhead));
    }
    Ok(BenchReport {
        rows,
        repetitions,
        aggregation: "median",
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChainTiming {
    pub market_label: String,
    pub n_quotes: usize,
    pub analytical_s: Option<f64>,
    pub numerical_s: Option<f64>,
    /// Largest relative difference between the two fits' model prices.
    pub max_price_rel_diff: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationBench {
    pub chains: Vec<ChainTiming>,
    pub total_analytical_s: f64,
    pub total_numerical_s: f64,
    pub speedup: f64,
}

impl CalibrationBench {
    pub fn to_table(&self) -> String {
        let mut out = format!(
            "{:<16}  {:>7}  {:>14}  {:>14}  {:>12}\n",
            "chain", "quotes", "analytical [s]", "numerical [s]", "max rel diff"
        );
        for c in &self.chains {
            match (&c.error, c.analytical_s, c.numerical_s, c.max_price_rel_diff) {
                (None, Some(a), Some(n), Some(d)) => {
                    let _ = writeln!(
                        out,
                        "{:<16}  {:>7}  {a:>14.4}  {n:>14.4}  {d:>12.3e}",
                        c.market_label, c.n_quotes
                    );
                }
                (err, ..) => {
                    let _ = writeln!(
                        out,
                        "{:<16}  {:>7}  error: {}",
                        c.market_label,
                        c.n_quotes,
                        err.as_deref().unwrap_or("incomplete")
                    );
                }
            }
        }
        let _ = writeln!(
            out,
            "{:<16}  {:>7}  {:>14.4}  {:>14.4}  speedup {:.2}",
            "total", "", self.total_analytical_s, self.total_numerical_s, self.speedup
        );
        out
    }
}

/// Calibrates every chain twice, once per variance method, with the same
/// configuration and seed. A failing chain is recorded and skipped.
pub fn bench_calibration(
    chains: &[OptionChainFile],
    kind: ModelKind,
    cfg: &CalibrationConfig,
) -> Result<CalibrationBench> {
    if chains.is_empty() {
        return Err(lyap_core::Error::InvalidInput("no chains to benchmark".into()));
    }
    let mut rows = Vec::with_capacity(chains.len());
    let (mut total_a, mut total_n) = (0.0, 0.0);
    for chain in chains {
        let run = |method: VarianceMethod| -> Result<(f64, lyap_core::CalibrationResult)> {
            let c = CalibrationConfig { method, ..cfg.clone() };
            let start = Instant::now();
            let res = calibrate(black_box(&chain.quotes), kind, &c)?;
            Ok((start.elapsed().as_secs_f64(), res))
        };
        let mut row = ChainTiming {
            market_label: chain.market_label.clone(),
            n_quotes: chain.quotes.len(),
            analytical_s: None,
            numerical_s: None,
            max_price_rel_diff: None,
            error: None,
        };
        match run(VarianceMethod::Analytical).and_then(|a| Ok((a, run(VarianceMethod::Numerical)?))) {
            Ok(((ta, ra), (tn, rn))) => {
                let diff = ra
                    .per_quote_fit
                    .iter()
                    .zip(&rn.per_quote_fit)
                    .map(|(a, n)| {
                        let scale = a.fitted_price.abs().max(n.fitted_price.abs());
                        if scale == 0.0 {
                            0.0
                        } else {
                            (a.fitted_price - n.fitted_price).abs() / scale
                        }
                    })
                    .fold(0.0, f64::max);
                total_a += ta;
                total_n += tn;
                row.analytical_s = Some(ta);
                row.numerical_s = Some(tn);
                row.max_price_rel_diff = Some(diff);
            }
            Err(e) => row.error = Some(e.to_string()),
        }
        rows.push(row);
    }
    Ok(CalibrationBench {
        chains: rows,
        total_analytical_s: total_a,
        total_numerical_s: total_n,
        speedup: if total_a > 0.0 { total_n / total_a } else { f64::NAN },
    })
}
