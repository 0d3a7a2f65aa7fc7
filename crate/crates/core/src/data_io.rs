//! Option-chain CSV files, synthetic chains and surface export.
//!
//! Chain files have the header
//! `quote_id,option_type,strike,maturity_years,underlying_price,market_price`,
//! LF line endings and `.` as decimal mark. Numbers are written in the
//! shortest form that parses back to the same `f64`.

use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::calibration::SurfacePoint;
use crate::error::{Error, Result};
use crate::lyapunov::VarianceMethod;
use crate::model::ModelParams;
use crate::pricing::{price_with_model, OptionKind, OptionQuote, PricingConfig};
use crate::rng::{stream, Stream};

pub const CHAIN_HEADER: [&str; 6] = [
    "quote_id",
    "option_type",
    "strike",
    "maturity_years",
    "underlying_price",
    "market_price",
];

pub const SURFACE_HEADER: [&str; 4] = ["maturity_years", "moneyness", "model_implied_vol", "market_implied_vol"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptionChainFile {
    pub trade_date: Option<NaiveDate>,
    pub market_label: String,
    pub quotes: Vec<OptionQuote>,
}

/// A skipped input row. `line` is the 1-based line number in the file
/// (the header is line 1).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowDiagnostic {
    pub line: u64,
    pub message: String,
}

impl fmt::Display for RowDiagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedChain {
    pub chain: OptionChainFile,
    pub diagnostics: Vec<RowDiagnostic>,
}

/// Reads a chain file. Invalid rows are skipped and reported in
/// `diagnostics`; the market label defaults to the file stem.
pub fn parse_chain(path: impl AsRef<Path>) -> Result<ParsedChain> {
    let path = path.as_ref();
    let file = File::open(path)?;
    let label = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    read_chain(BufReader::new(file), path, label)
}

/// As [`parse_chain`] for any reader; `source` only labels errors.
pub fn read_chain<R: Read>(reader: R, source: &Path, market_label: String) -> Result<ParsedChain> {
    let format_err = |message: String| Error::Format {
        path: source.to_path_buf(),
        message,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let header = rdr.headers().map_err(|e| format_err(e.to_string()))?;
    if header.iter().ne(CHAIN_HEADER.iter().copied()) {
        return Err(format_err(format!(
            "expected header '{}', found '{}'",
            CHAIN_HEADER.join(","),
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }

    let mut quotes = Vec::new();
    let mut diagnostics = Vec::new();
    let mut seen = HashSet::new();
    for record in rdr.records() {
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                let line = e.position().map_or(0, |p| p.line());
                diagnostics.push(RowDiagnostic {
                    line,
                    message: e.to_string(),
                });
                continue;
            }
        };
        let line = record.position().map_or(0, |p| p.line());
        match quote_from_record(&record) {
            Ok(q) if !seen.insert(q.id.clone()) => diagnostics.push(RowDiagnostic {
                line,
                message: format!("duplicate quote id '{}'", q.id),
            }),
            Ok(q) => quotes.push(q),
            Err(message) => diagnostics.push(RowDiagnostic { line, message }),
        }
    }
    if quotes.is_empty() {
        return Err(Error::EmptyChain(source.to_path_buf()));
    }
    Ok(ParsedChain {
        chain: OptionChainFile {
            trade_date: None,
            market_label,
            quotes,
        },
        diagnostics,
    })
}

fn quote_from_record(record: &csv::StringRecord) -> std::result::Result<OptionQuote, String> {
    if record.len() != CHAIN_HEADER.len() {
        return Err(format!(
            "expected {} fields, found {}",
            CHAIN_HEADER.len(),
            record.len()
        ));
    }
    let number = |i: usize| -> std::result::Result<f64, String> {
        let raw = record[i].trim();
        raw.parse::<f64>()
            .map_err(|_| format!("{}: cannot parse '{raw}' as a number", CHAIN_HEADER[i]))
    };
    let id = record[0].trim();
    if id.is_empty() {
        return Err("quote_id is empty".into());
    }
    let kind: OptionKind = record[1].trim().parse().map_err(|e: Error| e.to_string())?;
    OptionQuote::new(id, kind, number(2)?, number(3)?, number(4)?, number(5)?).map_err(|e| e.to_string())
}

fn writer_to<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(w)
}

pub fn write_chain_to<W: Write>(chain: &OptionChainFile, w: W) -> Result<()> {
    let mut wtr = writer_to(w);
    wtr.write_record(CHAIN_HEADER)?;
    for q in &chain.quotes {
        wtr.write_record([
            q.id.clone(),
            q.kind.to_string(),
            q.strike.to_string(),
            q.maturity.to_string(),
            q.underlying_price.to_string(),
            q.market_price.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_chain(chain: &OptionChainFile, path: impl AsRef<Path>) -> Result<()> {
    write_chain_to(chain, BufWriter::new(File::create(path)?))
}

/// Layout of a synthetic chain.
///
/// Quotes are spread as evenly as possible over `maturities`; within one
/// maturity strikes are evenly spaced in moneyness. Strikes at or above the
/// forward get calls, the rest puts, so every quote is out of (or at) the
/// money.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticChainSpec {
    pub n_quotes: usize,
    /// Years to expiry.
    pub maturities: Vec<f64>,
    pub moneyness_min: f64,
    pub moneyness_max: f64,
    /// Futures price per maturity; a single entry applies to all of them.
    pub underlying_prices: Vec<f64>,
    /// Standard deviation of the additive Gaussian price noise.
    pub noise_sd: f64,
    pub rng_seed: u64,
    pub market_label: String,
}

impl Default for SyntheticChainSpec {
    fn default() -> Self {
        Self {
            n_quotes: 500,
            maturities: monthly_maturities(12),
            moneyness_min: 0.8,
            moneyness_max: 1.2,
            underlying_prices: vec![100.0],
            noise_sd: 0.0,
            rng_seed: 0,
            market_label: "synthetic".into(),
        }
    }
}

/// `1/12, 2/12, …, n/12`.
pub fn monthly_maturities(n: usize) -> Vec<f64> {
    (1..=n).map(|m| m as f64 / 12.0).collect()
}

impl SyntheticChainSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_quotes == 0 {
            return Err(Error::InvalidInput("a synthetic chain needs at least one quote".into()));
        }
        if self.maturities.is_empty() || self.maturities.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
            return Err(Error::InvalidInput(
                "maturities must be a non-empty list of positive numbers".into(),
            ));
        }
        if !(self.moneyness_min > 0.0 && self.moneyness_min <= self.moneyness_max && self.moneyness_max.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "moneyness range [{}, {}] is invalid",
                self.moneyness_min, self.moneyness_max
            )));
        }
        let n_prices = self.underlying_prices.len();
        if n_prices != 1 && n_prices != self.maturities.len() {
            return Err(Error::InvalidInput(format!(
                "expected 1 or {} underlying prices, got {n_prices}",
                self.maturities.len()
            )));
        }
        if self.underlying_prices.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidInput("underlying prices must be positive".into()));
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "noise sd must be non-negative, got {}",
                self.noise_sd
            )));
        }
        Ok(())
    }
}

/// Chain priced by `params` (analytical variance, zero rate) plus
/// i.i.d. Gaussian noise clipped to the no-arbitrage bounds.
pub fn generate_synthetic_chain(params: &ModelParams, spec: &SyntheticChainSpec) -> Result<OptionChainFile> {
    spec.validate()?;
    params.validate()?;
    let cfg = PricingConfig::default();
    let noise = Normal::new(0.0, spec.noise_sd).map_err(|e| Error::InvalidInput(e.to_string()))?;
    let mut rng = stream(spec.rng_seed, Stream::SyntheticChain);

    let n_mat = spec.maturities.len();
    let width = spec.n_quotes.to_string().len().max(5);
    let mut quotes = Vec::with_capacity(spec.n_quotes);
    for (i, &t) in spec.maturities.iter().enumerate() {
        let count = spec.n_quotes / n_mat + usize::from(i < spec.n_quotes % n_mat);
        let s0 = if spec.underlying_prices.len() == 1 {
            spec.underlying_prices[0]
        } else {
            spec.underlying_prices[i]
        };
        for j in 0..count {
            let m = if count == 1 {
                0.5 * (spec.moneyness_min + spec.moneyness_max)
            } else {
                spec.moneyness_min + (spec.moneyness_max - spec.moneyness_min) * j as f64 / (count - 1) as f64
            };
            let kind = if m >= 1.0 { OptionKind::Call } else { OptionKind::Put };
            let mut q = OptionQuote {
                id: format!("q{:0width$}", quotes.len() + 1),
                kind,
                strike: m * s0,
                maturity: t,
                underlying_price: s0,
                market_price: 0.0,
            };
            let clean = price_with_model(&q, params, VarianceMethod::Analytical, &cfg)?;
            let noisy = if spec.noise_sd > 0.0 {
                clean + noise.sample(&mut rng)
            } else {
                clean
            };
            q.market_price = noisy.clamp(q.intrinsic(0.0), q.upper_bound(0.0));
            quotes.push(q);
        }
    }
    Ok(OptionChainFile {
        trade_date: None,
        market_label: spec.market_label.clone(),
        quotes,
    })
}

/// Writes surface points as CSV.
pub fn export_surface(points: &[SurfacePoint], path: impl AsRef<Path>) -> Result<()> {
    if points.is_empty() {
        return Err(Error::InvalidInput("no surface points to export".into()));
    }
    write_surface_to(points, BufWriter::new(File::create(path)?))
}

pub fn write_surface_to<W: Write>(points: &[SurfacePoint], w: W) -> Result<()> {
    let mut wtr = writer_to(w);
    wtr.write_record(SURFACE_HEADER)?;
    for p in points {
        wtr.write_record([
            p.maturity.to_string(),
            p.moneyness.to_string(),
            p.model_iv.to_string(),
            p.market_iv.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Reads a file written by [`export_surface`].
pub fn read_surface(path: impl AsRef<Path>) -> Result<Vec<SurfacePoint>> {
    let path = path.as_ref();
    let format_err = |message: String| Error::Format {
        path: PathBuf::from(path),
        message,
    };
    let mut rdr = csv::Reader::from_path(path)?;
    if rdr.headers()?.iter().ne(SURFACE_HEADER.iter().copied()) {
        return Err(format_err(format!("expected header '{}'", SURFACE_HEADER.join(","))));
    }
    let mut out = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let v: Vec<f64> = record
            .iter()
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|_| format_err(format!("cannot parse '{s}' as a number")))
            })
            .collect::<Result<_>>()?;
        if v.len() != 4 {
            return Err(format_err(format!("expected 4 fields, found {}", v.len())));
        }
        out.push(SurfacePoint {
            maturity: v[0],
            moneyness: v[1],
            model_iv: v[2],
            market_iv: v[3],
        });
    }
    Ok(out)
}

/// ACT/365 year fraction from `trade_date` to `expiry`.
pub fn year_fraction(trade_date: NaiveDate, expiry: NaiveDate) -> Result<f64> {
    let days = (expiry - trade_date).num_days();
    if days <= 0 {
        return Err(Error::InvalidInput(format!(
            "expiry {expiry} is not after trade date {trade_date}"
        )));
    }
    Ok(days as f64 / 365.0)
}
