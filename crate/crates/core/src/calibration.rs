//! Market calibration: least-squares fit of model parameters to listed
//! option prices, with a random train/test split and fit diagnostics.
//!
//! The objective is the plain sum of squared price errors. Parameters are
//! searched in an unconstrained space (logarithms of positive parameters,
//! `atanh` of correlations) by multi-start Nelder-Mead.

use std::collections::HashSet;

use log::warn;
use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lyapunov::VarianceMethod;
use crate::matrix::Matrix;
use crate::model::{GbmParams, LmrGwParams, ModelKind, ModelParams, OuParams, SchwartzParams};
use crate::optimize::{nelder_mead, NelderMeadOptions};
use crate::pricing::{black_unchecked, implied_vol, OptionQuote, PricingConfig};
use crate::rng::{stream, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationConfig {
    pub method: VarianceMethod,
    /// Starting point; `None` derives one from at-the-money implied vols.
    pub initial_guess: Option<ModelParams>,
    pub max_iterations: usize,
    /// Relative spread of simplex losses at which a run stops.
    pub loss_tolerance: f64,
    /// Simplex size (in transformed coordinates) at which a run stops.
    pub param_tolerance: f64,
    pub restarts: usize,
    pub rng_seed: u64,
    pub train_fraction: f64,
    pub pricing: PricingConfig,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            method: VarianceMethod::Analytical,
            initial_guess: None,
            max_iterations: 2000,
            loss_tolerance: 1e-10,
            param_tolerance: 1e-10,
            restarts: 3,
            rng_seed: 0,
            train_fraction: 0.7,
            pricing: PricingConfig::default(),
        }
    }
}

impl CalibrationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.train_fraction > 0.0 && self.train_fraction <= 1.0) {
            return Err(Error::InvalidInput(format!(
                "train fraction must lie in (0, 1], got {}",
                self.train_fraction
            )));
        }
        if self.restarts == 0 {
            return Err(Error::InvalidInput("at least one restart is required".into()));
        }
        if !(self.loss_tolerance >= 0.0) || !(self.param_tolerance >= 0.0) {
            return Err(Error::InvalidInput("tolerances must be non-negative".into()));
        }
        self.pricing.validate()
    }
}

/// Which part of the calibration a quote was used in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QuoteRole {
    Train,
    Test,
    /// Market price outside the no-arbitrage bounds; excluded from the fit.
    Dropped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuoteFit {
    pub id: String,
    pub role: QuoteRole,
    pub market_price: f64,
    pub fitted_price: f64,
    pub abs_error: f64,
    /// Relative to the market price; `null` when the market price is zero.
    pub rel_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestartSummary {
    pub initial_loss: f64,
    pub final_loss: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Outcome of [`calibrate`]. Field names are the JSON keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub model: ModelKind,
    pub method: VarianceMethod,
    pub params: ModelParams,
    /// Training-set sum of squared price errors.
    pub final_loss: f64,
    /// Iterations of the restart that produced the optimum.
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    pub restarts: Vec<RestartSummary>,
    pub train_rmse: f64,
    pub test_rmse: Option<f64>,
    pub n_train: usize,
    pub n_test: usize,
    pub n_dropped: usize,
    pub rng_seed: u64,
    /// One row per input quote, ordered by quote id.
    pub per_quote_fit: Vec<QuoteFit>,
}

/// One point of an implied-volatility surface.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurfacePoint {
    pub maturity: f64,
    pub moneyness: f64,
    pub model_iv: f64,
    pub market_iv: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub rmse: Option<f64>,
    pub rows: Vec<QuoteFit>,
    pub surface: Vec<SurfacePoint>,
}

/// Quotes grouped by maturity so each distinct maturity needs one variance.
struct PreparedChain<'a> {
    quotes: &'a [OptionQuote],
    maturities: Vec<f64>,
    group: Vec<usize>,
}

impl<'a> PreparedChain<'a> {
    fn new(quotes: &'a [OptionQuote]) -> Self {
        let mut maturities: Vec<f64> = quotes.iter().map(|q| q.maturity).collect();
        maturities.sort_by(f64::total_cmp);
        maturities.dedup();
        let group = quotes
            .iter()
            .map(|q| {
                maturities
                    .binary_search_by(|m| m.total_cmp(&q.maturity))
                    .expect("maturity present")
            })
            .collect();
        Self {
            quotes,
            maturities,
            group,
        }
    }

    fn model_prices(&self, params: &ModelParams, method: VarianceMethod, cfg: &PricingConfig) -> Result<Vec<f64>> {
        let n = params.kind().state_dim();
        let variances = params.variance_curve(&Matrix::zeros(n, n), &self.maturities, method)?;
        Ok(self
            .quotes
            .iter()
            .zip(&self.group)
            .map(|(q, &g)| black_unchecked(q.kind, q.underlying_price, q.strike, q.maturity, variances[g], cfg))
            .collect())
    }

    fn loss(&self, params: &ModelParams, method: VarianceMethod, cfg: &PricingConfig) -> Result<f64> {
        let n = params.kind().state_dim();
        let variances = params.variance_curve(&Matrix::zeros(n, n), &self.maturities, method)?;
        Ok(self
            .quotes
            .iter()
            .zip(&self.group)
            .map(|(q, &g)| {
                let r = q.market_price
                    - black_unchecked(q.kind, q.underlying_price, q.strike, q.maturity, variances[g], cfg);
                r * r
            })
            .sum())
    }
}

/// `Σ (market − model)²` over `quotes`. Variances are computed once per
/// distinct maturity.
pub fn loss(params: &ModelParams, quotes: &[OptionQuote], method: VarianceMethod, cfg: &PricingConfig) -> Result<f64> {
    if quotes.is_empty() {
        return Err(Error::InvalidInput("loss needs at least one quote".into()));
    }
    for q in quotes {
        q.validate_contract()?;
    }
    PreparedChain::new(quotes).loss(params, method, cfg)
}

/// Model prices for `quotes`, in order.
pub fn model_prices(
    params: &ModelParams,
    quotes: &[OptionQuote],
    method: VarianceMethod,
    cfg: &PricingConfig,
) -> Result<Vec<f64>> {
    for q in quotes {
        q.validate_contract()?;
    }
    PreparedChain::new(quotes).model_prices(params, method, cfg)
}

/// Uniform random partition without replacement. `round(fraction · n)`
/// quotes (at least one) go to the training set; both parts keep the input
/// order.
pub fn train_test_split(
    quotes: &[OptionQuote],
    train_fraction: f64,
    rng_seed: u64,
) -> Result<(Vec<OptionQuote>, Vec<OptionQuote>)> {
    if quotes.is_empty() {
        return Err(Error::InvalidInput("cannot split an empty quote list".into()));
    }
    if !(train_fraction > 0.0 && train_fraction <= 1.0) {
        return Err(Error::InvalidInput(format!(
            "train fraction must lie in (0, 1], got {train_fraction}"
        )));
    }
    let n = quotes.len();
    let n_train = ((train_fraction * n as f64).round() as usize).clamp(1, n);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream(rng_seed, Stream::TrainTestSplit));
    let mut in_train = vec![false; n];
    for &i in &order[..n_train] {
        in_train[i] = true;
    }
    let (train, test): (Vec<_>, Vec<_>) = quotes.iter().cloned().zip(in_train).partition(|(_, t)| *t);
    Ok((
        train.into_iter().map(|(q, _)| q).collect(),
        test.into_iter().map(|(q, _)| q).collect(),
    ))
}

fn to_unconstrained(p: &ModelParams) -> Vec<f64> {
    match p {
        ModelParams::Gbm(g) => vec![g.sigma.ln()],
        ModelParams::Ou(o) => vec![o.lambda.ln(), o.sigma.ln()],
        ModelParams::Lmrgw(l) => vec![l.lambda.ln(), l.sigma1.ln(), l.sigma2.ln()],
        ModelParams::Schwartz(s) => vec![
            s.k.ln(),
            s.sigma_chi.ln(),
            s.sigma_xi.ln(),
            s.rho.clamp(-0.999, 0.999).atanh(),
        ],
    }
}

/// Inverse of [`to_unconstrained`]; fields that do not enter the variance
/// are copied from `template`.
fn from_unconstrained(template: &ModelParams, x: &[f64]) -> ModelParams {
    match template {
        ModelParams::Gbm(_) => ModelParams::Gbm(GbmParams { sigma: x[0].exp() }),
        ModelParams::Ou(o) => ModelParams::Ou(OuParams {
            lambda: x[0].exp(),
            sigma: x[1].exp(),
            level: o.level,
        }),
        ModelParams::Lmrgw(l) => ModelParams::Lmrgw(LmrGwParams {
            lambda: x[0].exp(),
            sigma1: x[1].exp(),
            sigma2: x[2].exp(),
            mu: l.mu,
        }),
        ModelParams::Schwartz(s) => ModelParams::Schwartz(SchwartzParams {
            k: x[0].exp(),
            sigma_chi: x[1].exp(),
            sigma_xi: x[2].exp(),
            rho: x[3].tanh(),
            mu_xi: s.mu_xi,
        }),
    }
}

/// At-the-money implied vol of the shortest and longest maturity.
fn term_structure_endpoints(quotes: &[OptionQuote], cfg: &PricingConfig) -> (f64, f64) {
    let atm_iv = |maturity: f64| -> f64 {
        quotes
            .iter()
            .filter(|q| q.maturity == maturity)
            .min_by(|a, b| a.moneyness().ln().abs().total_cmp(&b.moneyness().ln().abs()))
            .and_then(|q| implied_vol(q, q.market_price, cfg).ok())
            .filter(|v| *v >= 0.01)
            .unwrap_or(0.3)
    };
    let shortest = quotes.iter().map(|q| q.maturity).fold(f64::INFINITY, f64::min);
    let longest = quotes.iter().map(|q| q.maturity).fold(0.0, f64::max);
    (atm_iv(shortest), atm_iv(longest))
}

/// Starting point derived from the term structure: mean reversion 1 and the
/// short and long factor vols set to the ATM implied vols at the two ends.
pub fn default_initial_guess(kind: ModelKind, quotes: &[OptionQuote], cfg: &PricingConfig) -> ModelParams {
    let (short, long) = term_structure_endpoints(quotes, cfg);
    match kind {
        ModelKind::Gbm => GbmParams {
            sigma: 0.5 * (short + long),
        }
        .into(),
        ModelKind::Ou => OuParams {
            lambda: 1.0,
            sigma: short,
            level: 0.0,
        }
        .into(),
        ModelKind::Lmrgw => LmrGwParams {
            lambda: 1.0,
            sigma1: short,
            sigma2: long,
            mu: 0.0,
        }
        .into(),
        ModelKind::Schwartz => SchwartzParams {
            k: 1.0,
            sigma_chi: short,
            sigma_xi: long,
            rho: 0.0,
            mu_xi: 0.0,
        }
        .into(),
    }
}

fn check_identifiable(kind: ModelKind, train: &[OptionQuote]) -> Result<()> {
    let free = kind.free_parameters();
    if train.len() < free {
        return Err(Error::Underdetermined(format!(
            "{kind} has {free} free parameters but only {} training quotes",
            train.len()
        )));
    }
    let distinct: HashSet<u64> = train.iter().map(|q| q.maturity.to_bits()).collect();
    if free >= 2 && distinct.len() < 2 {
        return Err(Error::Underdetermined(format!(
            "{kind} needs at least two distinct maturities, got {}",
            distinct.len()
        )));
    }
    Ok(())
}

fn quote_fit(q: &OptionQuote, fitted: f64, role: QuoteRole) -> QuoteFit {
    let abs_error = (fitted - q.market_price).abs();
    QuoteFit {
        id: q.id.clone(),
        role,
        market_price: q.market_price,
        fitted_price: fitted,
        abs_error,
        rel_error: (q.market_price > 0.0).then(|| abs_error / q.market_price),
    }
}

fn rmse(rows: &[QuoteFit]) -> Option<f64> {
    (!rows.is_empty()).then(|| (rows.iter().map(|r| r.abs_error * r.abs_error).sum::<f64>() / rows.len() as f64).sqrt())
}

/// Fits `kind` to `quotes`.
///
/// Quotes are first put in id order, so the result does not depend on the
/// order they were supplied in. Quotes priced outside the no-arbitrage
/// bounds are dropped with a warning, the rest are split into train and
/// test sets, and the training loss is minimised from `restarts` starting
/// points (the configured or default guess, then random perturbations of
/// it). The run is deterministic for a given `rng_seed`.
pub fn calibrate(quotes: &[OptionQuote], kind: ModelKind, cfg: &CalibrationConfig) -> Result<CalibrationResult> {
    cfg.validate()?;
    let mut ordered: Vec<OptionQuote> = quotes.to_vec();
    ordered.sort_by(|a, b| a.id.cmp(&b.id));
    if let Some(w) = ordered.windows(2).find(|w| w[0].id == w[1].id) {
        return Err(Error::InvalidInput(format!("duplicate quote id '{}'", w[0].id)));
    }
    for q in &ordered {
        q.validate_contract()?;
    }

    let r = cfg.pricing.risk_free_rate;
    let (usable, dropped): (Vec<_>, Vec<_>) = ordered.iter().cloned().partition(|q| q.within_arbitrage_bounds(r));
    for q in &dropped {
        warn!(
            "dropping quote {}: price {} outside [{}, {}]",
            q.id,
            q.market_price,
            q.intrinsic(r),
            q.upper_bound(r)
        );
    }
    if usable.is_empty() {
        return Err(Error::Underdetermined(
            "no quote lies within the no-arbitrage bounds".into(),
        ));
    }
    let (train, test) = train_test_split(&usable, cfg.train_fraction, cfg.rng_seed)?;
    check_identifiable(kind, &train)?;

    let guess = match &cfg.initial_guess {
        Some(g) if g.kind() == kind => {
            g.validate()?;
            *g
        }
        Some(g) => {
            return Err(Error::InvalidInput(format!(
                "initial guess is for {}, calibrating {kind}",
                g.kind()
            )))
        }
        None => default_initial_guess(kind, &train, &cfg.pricing),
    };

    let chain = PreparedChain::new(&train);
    let objective = |x: &[f64]| -> f64 {
        let p = from_unconstrained(&guess, x);
        chain.loss(&p, cfg.method, &cfg.pricing).unwrap_or(f64::INFINITY)
    };
    let opts = NelderMeadOptions {
        max_iterations: cfg.max_iterations,
        f_tolerance: cfg.loss_tolerance,
        x_tolerance: cfg.param_tolerance,
        ..Default::default()
    };

    let x0 = to_unconstrained(&guess);
    let mut rng = stream(cfg.rng_seed, Stream::Restarts);
    let jitter = Normal::new(0.0, 0.5).expect("valid normal");
    let mut runs = Vec::with_capacity(cfg.restarts);
    for restart in 0..cfg.restarts {
        let start: Vec<f64> = if restart == 0 {
            x0.clone()
        } else {
            x0.iter().map(|v| v + jitter.sample(&mut rng)).collect()
        };
        runs.push(nelder_mead(objective, &start, &opts));
    }
    let best = runs
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.f.total_cmp(&b.1.f).then(a.0.cmp(&b.0)))
        .map(|(_, r)| r)
        .expect("at least one restart");
    if !best.f.is_finite() {
        return Err(Error::NoSolution(
            "every optimiser run stayed in an infeasible region".into(),
        ));
    }
    let params = from_unconstrained(&guess, &best.x);
    params.validate()?;

    let train_ids: HashSet<&str> = train.iter().map(|q| q.id.as_str()).collect();
    let test_ids: HashSet<&str> = test.iter().map(|q| q.id.as_str()).collect();
    let fitted = model_prices(&params, &ordered, cfg.method, &cfg.pricing)?;
    let per_quote_fit: Vec<QuoteFit> = ordered
        .iter()
        .zip(&fitted)
        .map(|(q, &f)| {
            let role = if train_ids.contains(q.id.as_str()) {
                QuoteRole::Train
            } else if test_ids.contains(q.id.as_str()) {
                QuoteRole::Test
            } else {
                QuoteRole::Dropped
            };
            quote_fit(q, f, role)
        })
        .collect();
    let test_rows: Vec<QuoteFit> = per_quote_fit
        .iter()
        .filter(|r| r.role == QuoteRole::Test)
        .cloned()
        .collect();

    Ok(CalibrationResult {
        model: kind,
        method: cfg.method,
        params,
        final_loss: best.f,
        iterations: best.iterations,
        evaluations: runs.iter().map(|r| r.evaluations).sum(),
        converged: best.converged,
        restarts: runs
            .iter()
            .map(|r| RestartSummary {
                initial_loss: r.initial_f,
                final_loss: r.f,
                iterations: r.iterations,
                converged: r.converged,
            })
            .collect(),
        train_rmse: (best.f / train.len() as f64).sqrt(),
        test_rmse: rmse(&test_rows),
        n_train: train.len(),
        n_test: test.len(),
        n_dropped: dropped.len(),
        rng_seed: cfg.rng_seed,
        per_quote_fit,
    })
}

/// Implied-volatility surface points for `quotes` under `params`.
///
/// The model vol is `sqrt(variance / T)`, which is exactly the Black vol of
/// the model price. Quotes whose market price cannot be inverted (at or
/// beyond the bounds) are skipped.
pub fn surface_points(
    params: &ModelParams,
    quotes: &[OptionQuote],
    method: VarianceMethod,
    cfg: &PricingConfig,
) -> Result<Vec<SurfacePoint>> {
    let chain = PreparedChain::new(quotes);
    let n = params.kind().state_dim();
    let variances = params.variance_curve(&Matrix::zeros(n, n), &chain.maturities, method)?;
    let mut points = Vec::with_capacity(quotes.len());
    for (q, &g) in quotes.iter().zip(&chain.group) {
        q.validate_contract()?;
        let Ok(market_iv) = implied_vol(q, q.market_price, cfg) else {
            continue;
        };
        points.push(SurfacePoint {
            maturity: q.maturity,
            moneyness: q.moneyness(),
            model_iv: (variances[g] / q.maturity).sqrt(),
            market_iv,
        });
    }
    Ok(points)
}

/// Out-of-sample check of a calibrated model on held-out quotes.
pub fn evaluate_fit(
    result: &CalibrationResult,
    test: &[OptionQuote],
    method: VarianceMethod,
    cfg: &PricingConfig,
) -> Result<FitReport> {
    if test.is_empty() {
        return Ok(FitReport {
            rmse: None,
            rows: Vec::new(),
            surface: Vec::new(),
        });
    }
    let fitted = model_prices(&result.params, test, method, cfg)?;
    let rows: Vec<QuoteFit> = test
        .iter()
        .zip(&fitted)
        .map(|(q, &f)| quote_fit(q, f, QuoteRole::Test))
        .collect();
    Ok(FitReport {
        rmse: rmse(&rows),
        surface: surface_points(&result.params, test, method, cfg)?,
        rows,
    })
}
