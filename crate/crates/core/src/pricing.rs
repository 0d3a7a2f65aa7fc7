//! Black pricing of European options on futures with the total log-price
//! variance supplied by a model, plus implied-volatility inversion.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lyapunov::VarianceMethod;
use crate::model::ModelParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptionKind {
    Call,
    Put,
}

impl OptionKind {
    pub fn as_str(self) -> &'static str {
        match self {
            OptionKind::Call => "call",
            OptionKind::Put => "put",
        }
    }
}

impl fmt::Display for OptionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for OptionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "call" => Ok(OptionKind::Call),
            "put" => Ok(OptionKind::Put),
            other => Err(Error::InvalidInput(format!(
                "option type must be 'call' or 'put', got '{other}'"
            ))),
        }
    }
}

/// A listed European option on a future.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptionQuote {
    pub id: String,
    pub kind: OptionKind,
    pub strike: f64,
    /// Years to expiry.
    pub maturity: f64,
    pub underlying_price: f64,
    pub market_price: f64,
}

impl OptionQuote {
    pub fn new(
        id: impl Into<String>,
        kind: OptionKind,
        strike: f64,
        maturity: f64,
        underlying_price: f64,
        market_price: f64,
    ) -> Result<Self> {
        let q = Self {
            id: id.into(),
            kind,
            strike,
            maturity,
            underlying_price,
            market_price,
        };
        q.validate()?;
        Ok(q)
    }

    /// Strike, maturity and underlying strictly positive; market price
    /// non-negative and below the zero-rate upper bound (`S0` for calls,
    /// `K` for puts).
    pub fn validate(&self) -> Result<()> {
        self.validate_contract()?;
        if !(self.market_price >= 0.0 && self.market_price.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "market price must be non-negative, got {}",
                self.market_price
            )));
        }
        let upper = self.upper_bound(0.0);
        if self.market_price > upper {
            return Err(Error::InvalidInput(format!(
                "{} price {} exceeds the no-arbitrage bound {upper}",
                self.kind, self.market_price
            )));
        }
        Ok(())
    }

    /// Checks only the contract terms, ignoring the market price.
    pub fn validate_contract(&self) -> Result<()> {
        for (v, name) in [
            (self.strike, "strike"),
            (self.maturity, "maturity"),
            (self.underlying_price, "underlying price"),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidInput(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    /// `K / S0`.
    pub fn moneyness(&self) -> f64 {
        self.strike / self.underlying_price
    }

    /// Discounted intrinsic value.
    pub fn intrinsic(&self, r: f64) -> f64 {
        let df = (-r * self.maturity).exp();
        match self.kind {
            OptionKind::Call => df * (self.underlying_price - self.strike).max(0.0),
            OptionKind::Put => df * (self.strike - self.underlying_price).max(0.0),
        }
    }

    /// Discounted price of an option with infinite variance.
    pub fn upper_bound(&self, r: f64) -> f64 {
        let df = (-r * self.maturity).exp();
        match self.kind {
            OptionKind::Call => df * self.underlying_price,
            OptionKind::Put => df * self.strike,
        }
    }

    /// Whether the market price sits inside `[intrinsic, upper bound]`.
    pub fn within_arbitrage_bounds(&self, r: f64) -> bool {
        self.market_price >= self.intrinsic(r) && self.market_price <= self.upper_bound(r)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PricingConfig {
    pub risk_free_rate: f64,
    /// Below this total variance the intrinsic value is returned.
    pub variance_floor: f64,
}

impl Default for PricingConfig {
    fn default() -> Self {
        Self {
            risk_free_rate: 0.0,
            variance_floor: 1e-12,
        }
    }
}

impl PricingConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.risk_free_rate.is_finite() {
            return Err(Error::InvalidInput("risk-free rate must be finite".into()));
        }
        if !(self.variance_floor > 0.0) {
            return Err(Error::InvalidInput("variance floor must be positive".into()));
        }
        Ok(())
    }
}

/// Standard normal CDF via the complementary error function.
#[inline]
pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * std::f64::consts::FRAC_1_SQRT_2)
}

#[inline]
fn std_normal_pdf(x: f64) -> f64 {
    const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Black price for total log-price variance `total_variance` at expiry.
pub fn black_price(q: &OptionQuote, total_variance: f64, cfg: &PricingConfig) -> Result<f64> {
    if total_variance < 0.0 || total_variance.is_nan() {
        return Err(Error::NegativeVariance(total_variance));
    }
    Ok(black_unchecked(
        q.kind,
        q.underlying_price,
        q.strike,
        q.maturity,
        total_variance,
        cfg,
    ))
}

#[inline]
pub(crate) fn black_unchecked(kind: OptionKind, s0: f64, k: f64, t: f64, variance: f64, cfg: &PricingConfig) -> f64 {
    let df = if cfg.risk_free_rate == 0.0 {
        1.0
    } else {
        (-cfg.risk_free_rate * t).exp()
    };
    if variance < cfg.variance_floor {
        return df
            * match kind {
                OptionKind::Call => (s0 - k).max(0.0),
                OptionKind::Put => (k - s0).max(0.0),
            };
    }
    let sd = variance.sqrt();
    let d1 = ((s0 / k).ln() + 0.5 * variance) / sd;
    let d2 = d1 - sd;
    df * match kind {
        OptionKind::Call => s0 * std_normal_cdf(d1) - k * std_normal_cdf(d2),
        OptionKind::Put => k * std_normal_cdf(-d2) - s0 * std_normal_cdf(-d1),
    }
}

/// Prices `q` with the log-price variance of `model` at the option maturity.
pub fn price_with_model(
    q: &OptionQuote,
    model: &ModelParams,
    method: VarianceMethod,
    cfg: &PricingConfig,
) -> Result<f64> {
    q.validate_contract()?;
    let variance = model.variance(q.maturity, method)?;
    black_price(q, variance, cfg)
}

const IV_LOWER: f64 = 1e-8;
const IV_UPPER: f64 = 10.0;

/// Black (GBM) volatility reproducing `observed_price`.
///
/// Bracketed on `[1e-8, 10]`. Newton steps on the log price are taken while
/// they stay inside the bracket and keep shrinking, bisection otherwise.
/// Iteration stops on a relative price residual of about 1e-14 or a
/// collapsed bracket. A price equal to the intrinsic value yields 0.
pub fn implied_vol(q: &OptionQuote, observed_price: f64, cfg: &PricingConfig) -> Result<f64> {
    q.validate_contract()?;
    let r = cfg.risk_free_rate;
    let intrinsic = q.intrinsic(r);
    let upper = q.upper_bound(r);
    if !observed_price.is_finite() || observed_price < intrinsic || observed_price >= upper {
        return Err(Error::NoSolution(format!(
            "price {observed_price} outside the no-arbitrage range [{intrinsic}, {upper}) for {}",
            q.id
        )));
    }
    if observed_price == intrinsic {
        return Ok(0.0);
    }
    // In the money, solve on the out-of-the-money twin by put-call parity so
    // the tolerance applies to the time value alone.
    let (kind, observed_price) = if intrinsic > 0.0 {
        let twin = match q.kind {
            OptionKind::Call => OptionKind::Put,
            OptionKind::Put => OptionKind::Call,
        };
        (twin, observed_price - intrinsic)
    } else {
        (q.kind, observed_price)
    };
    let t = q.maturity;
    let price_at = |sigma: f64| black_unchecked(kind, q.underlying_price, q.strike, t, sigma * sigma * t, cfg);

    let (mut lo, mut hi) = (IV_LOWER, IV_UPPER);
    if price_at(lo) >= observed_price {
        return Ok(lo);
    }
    if price_at(hi) < observed_price {
        return Err(Error::NoSolution(format!(
            "price {observed_price} needs a volatility above {IV_UPPER} for {}",
            q.id
        )));
    }
    let df = (-r * t).exp();
    let sqrt_t = t.sqrt();
    let ln_target = observed_price.ln();
    let mut sigma = 0.5 * (lo + hi);
    let mut last_step = hi - lo;
    for _ in 0..200 {
        let price = price_at(sigma);
        if price <= 0.0 {
            lo = sigma;
            sigma = 0.5 * (lo + hi);
            continue;
        }
        // residual in log price keeps Newton well scaled for tiny prices
        let diff = price.ln() - ln_target;
        if diff.abs() <= 1e-14 {
            return Ok(sigma);
        }
        if diff > 0.0 {
            hi = sigma;
        } else {
            lo = sigma;
        }
        if hi - lo <= 4.0 * f64::EPSILON * hi {
            break;
        }
        let sd = sigma * sqrt_t;
        let d1 = ((q.underlying_price / q.strike).ln() + 0.5 * sd * sd) / sd;
        let slope = df * q.underlying_price * std_normal_pdf(d1) * sqrt_t / price;
        let step = if slope > 0.0 { diff / slope } else { f64::INFINITY };
        let newton = sigma - step;
        // Newton only while it stays in the bracket and at least halves the step
        if newton > lo && newton < hi && step.abs() < 0.5 * last_step {
            last_step = step.abs();
            sigma = newton;
        } else {
            last_step = hi - lo;
            sigma = 0.5 * (lo + hi);
        }
    }
    Ok(sigma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{GbmParams, LmrGwParams};

    fn atm_call() -> OptionQuote {
        OptionQuote::new("c", OptionKind::Call, 100.0, 1.0, 100.0, 0.0).unwrap()
    }

    #[test]
    fn cdf_values() {
        assert_eq!(std_normal_cdf(0.0), 0.5);
        for x in [0.1, 1.0, 3.0] {
            assert!((std_normal_cdf(x) + std_normal_cdf(-x) - 1.0).abs() < 1e-15);
        }
        // Simpson quadrature of the density on [0, 1] with 2^14 intervals
        let n = 1 << 14;
        let h = 1.0 / n as f64;
        let mut s = std_normal_pdf(0.0) + std_normal_pdf(1.0);
        for i in 1..n {
            s += if i % 2 == 1 { 4.0 } else { 2.0 } * std_normal_pdf(i as f64 * h);
        }
        let quad = 0.5 + s * h / 3.0;
        assert!((quad - 0.841344746068543).abs() < 1e-14);
        assert!((std_normal_cdf(1.0) - 0.841344746068543).abs() < 1e-12);
    }

    #[test]
    fn zero_variance_gives_intrinsic() {
        let mut q = atm_call();
        q.strike = 80.0;
        let cfg = PricingConfig::default();
        assert_eq!(black_price(&q, 0.0, &cfg).unwrap(), 20.0);
        assert_eq!(black_price(&q, 1e-14, &cfg).unwrap(), 20.0);
        q.kind = OptionKind::Put;
        assert_eq!(black_price(&q, 0.0, &cfg).unwrap(), 0.0);
    }

    #[test]
    fn atm_reference_price() {
        // Simpson rule on the lognormal payoff integral, ±12 sd
        let v: f64 = 0.04;
        let sd = v.sqrt();
        let n = 200_000;
        let (lo, hi) = (-12.0 * sd, 12.0 * sd);
        let h = (hi - lo) / n as f64;
        let payoff = |z: f64| {
            let s = 100.0 * (z - 0.5 * v).exp();
            (s - 100.0f64).max(0.0) * (-(z * z) / (2.0 * v)).exp() / (2.0 * std::f64::consts::PI * v).sqrt()
        };
        let mut acc = payoff(lo) + payoff(hi);
        for i in 1..n {
            acc += if i % 2 == 1 { 4.0 } else { 2.0 } * payoff(lo + i as f64 * h);
        }
        let oracle = acc * h / 3.0;
        let price = black_price(&atm_call(), 0.04, &PricingConfig::default()).unwrap();
        assert!((price - oracle).abs() < 1e-6, "{price} vs {oracle}");
        assert!((price - 7.9656).abs() < 1e-3);
        assert!((price - 100.0 * (2.0 * std_normal_cdf(0.1) - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn put_call_parity_at_zero_rate() {
        let c = black_price(&atm_call(), 0.04, &PricingConfig::default()).unwrap();
        let mut put = atm_call();
        put.kind = OptionKind::Put;
        let p = black_price(&put, 0.04, &PricingConfig::default()).unwrap();
        assert!((c - p).abs() < 1e-12);
    }

    #[test]
    fn negative_variance_rejected() {
        assert!(matches!(
            black_price(&atm_call(), -1e-3, &PricingConfig::default()),
            Err(Error::NegativeVariance(_))
        ));
    }

    #[test]
    fn gbm_model_is_black_base_case() {
        let m = ModelParams::from(GbmParams::new(0.2).unwrap());
        let cfg = PricingConfig::default();
        let a = price_with_model(&atm_call(), &m, VarianceMethod::Analytical, &cfg).unwrap();
        assert!((a - black_price(&atm_call(), 0.04, &cfg).unwrap()).abs() < 1e-14);
    }

    #[test]
    fn lmrgw_price_nondecreasing_in_short_vol() {
        let cfg = PricingConfig::default();
        let mut last = 0.0;
        for i in 0..20 {
            let m = ModelParams::from(LmrGwParams::new(2.0, 0.05 + 0.05 * i as f64, 0.2).unwrap());
            let p = price_with_model(&atm_call(), &m, VarianceMethod::Analytical, &cfg).unwrap();
            assert!(p >= last);
            last = p;
        }
    }

    #[test]
    fn implied_vol_round_trip() {
        let cfg = PricingConfig::default();
        let q = atm_call();
        let price = black_price(&q, 0.09, &cfg).unwrap();
        assert!((implied_vol(&q, price, &cfg).unwrap() - 0.3).abs() < 1e-8);
    }

    #[test]
    fn implied_vol_of_tiny_prices() {
        let cfg = PricingConfig::default();
        // the in-the-money call is solved through its put twin; below about
        // 0.1 vol its time value is lost when added to the intrinsic 20
        let cases = [
            (OptionKind::Call, 120.0, [0.01, 0.02, 2.9]),
            (OptionKind::Put, 85.0, [0.01, 0.02, 2.9]),
            (OptionKind::Call, 80.0, [0.1, 0.5, 2.9]),
        ];
        for (kind, k, sigmas) in cases {
            let q = OptionQuote::new("x", kind, k, 0.5, 100.0, 0.0).unwrap();
            for sigma in sigmas {
                let price = black_price(&q, sigma * sigma * 0.5, &cfg).unwrap();
                let iv = implied_vol(&q, price, &cfg).unwrap();
                assert!((iv - sigma).abs() < 1e-8, "{kind} {k} {sigma}: {iv}");
            }
        }
    }

    #[test]
    fn implied_vol_near_intrinsic_does_not_fail() {
        let cfg = PricingConfig::default();
        let mut q = atm_call();
        q.strike = 90.0;
        let iv = implied_vol(&q, 10.0 + 1e-12, &cfg).unwrap();
        assert!(iv < 0.05);
        assert_eq!(implied_vol(&q, 10.0, &cfg).unwrap(), 0.0);
    }

    #[test]
    fn implied_vol_rejects_out_of_bounds() {
        let cfg = PricingConfig::default();
        let mut q = atm_call();
        q.strike = 90.0;
        assert!(matches!(implied_vol(&q, 9.0, &cfg), Err(Error::NoSolution(_))));
        assert!(matches!(implied_vol(&q, 100.0, &cfg), Err(Error::NoSolution(_))));
        assert!(matches!(implied_vol(&q, 120.0, &cfg), Err(Error::NoSolution(_))));
    }

    #[test]
    fn quote_validation() {
        assert!(OptionQuote::new("a", OptionKind::Call, 0.0, 1.0, 100.0, 1.0).is_err());
        assert!(OptionQuote::new("a", OptionKind::Call, 90.0, 0.0, 100.0, 1.0).is_err());
        assert!(OptionQuote::new("a", OptionKind::Call, 90.0, 1.0, 100.0, -1.0).is_err());
        assert!(OptionQuote::new("a", OptionKind::Call, 90.0, 1.0, 100.0, 100.5).is_err());
        assert!(OptionQuote::new("a", OptionKind::Put, 90.0, 1.0, 100.0, 90.5).is_err());
        assert!(OptionQuote::new("a", OptionKind::Put, 90.0, 1.0, 100.0, 5.0).is_ok());
        assert!("CALL".parse::<OptionKind>().is_err());
    }
}
