//! Model catalog: the concrete price models and their linear state-space
//! form `dx = A x dt + B dw`, `y = C x`, with `E[dw dwᵀ] = S dt`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

// Tolerance for "positive semidefinite" checks on small matrices.
const PSD_TOL: f64 = 1e-12;

/// Linear stochastic system describing a log-price model.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSde {
    a: Matrix,
    b: Matrix,
    c: Vec<f64>,
    s: Matrix,
    x0_mean: Vec<f64>,
    p0: Matrix,
    diffusion: Matrix,
}

impl LinearSde {
    /// Validates dimensions, the noise correlation matrix (symmetric, unit
    /// diagonal, PSD) and the initial covariance (symmetric PSD).
    pub fn new(a: Matrix, b: Matrix, c: Vec<f64>, s: Matrix, x0_mean: Vec<f64>, p0: Matrix) -> Result<Self> {
        let n = a
            .order()
            .ok_or_else(|| Error::InvalidInput("drift matrix A must be square".into()))?;
        if b.rows() != n {
            return Err(Error::InvalidInput(format!("B must have {n} rows, got {}", b.rows())));
        }
        let m = b.cols();
        if s.order() != Some(m) {
            return Err(Error::InvalidInput(format!("S must be {m}x{m}")));
        }
        if c.len() != n || x0_mean.len() != n {
            return Err(Error::InvalidInput(format!("C and initial mean must have length {n}")));
        }
        if p0.order() != Some(n) {
            return Err(Error::InvalidInput(format!("P0 must be {n}x{n}")));
        }
        if !(a.is_finite() && b.is_finite() && s.is_finite() && p0.is_finite())
            || !c.iter().chain(&x0_mean).all(|v| v.is_finite())
        {
            return Err(Error::InvalidInput("state-space matrices must be finite".into()));
        }
        if s.asymmetry() > PSD_TOL || (0..m).any(|i| (s[(i, i)] - 1.0).abs() > PSD_TOL) {
            return Err(Error::InvalidInput("S must be symmetric with unit diagonal".into()));
        }
        if s.min_eigenvalue()? < -PSD_TOL {
            return Err(Error::InvalidInput("S must be positive semidefinite".into()));
        }
        check_covariance(&p0, "P0")?;
        let diffusion = (&(&b * &s) * &b.transpose()).symmetrized();
        Ok(Self {
            a,
            b,
            c,
            s,
            x0_mean,
            p0,
            diffusion,
        })
    }

    pub fn order(&self) -> usize {
        self.a.rows()
    }

    pub fn drift(&self) -> &Matrix {
        &self.a
    }

    pub fn noise_loading(&self) -> &Matrix {
        &self.b
    }

    pub fn output(&self) -> &[f64] {
        &self.c
    }

    pub fn noise_correlation(&self) -> &Matrix {
        &self.s
    }

    pub fn initial_mean(&self) -> &[f64] {
        &self.x0_mean
    }

    pub fn initial_covariance(&self) -> &Matrix {
        &self.p0
    }

    /// `B S Bᵀ`, the forcing term of the Lyapunov equation.
    pub fn diffusion(&self) -> &Matrix {
        &self.diffusion
    }

    pub fn with_initial_covariance(&self, p0: Matrix) -> Result<Self> {
        Self::new(
            self.a.clone(),
            self.b.clone(),
            self.c.clone(),
            self.s.clone(),
            self.x0_mean.clone(),
            p0,
        )
    }
}

/// Checks that `p` is a symmetric PSD covariance matrix.
pub(crate) fn check_covariance(p: &Matrix, name: &str) -> Result<()> {
    if !p.is_square() || !p.is_finite() {
        return Err(Error::InvalidInput(format!("{name} must be a finite square matrix")));
    }
    let scale = p.max_abs().max(1.0);
    if p.asymmetry() > PSD_TOL * scale {
        return Err(Error::InvalidInput(format!("{name} must be symmetric")));
    }
    if p.min_eigenvalue()? < -PSD_TOL * scale {
        return Err(Error::InvalidInput(format!("{name} must be positive semidefinite")));
    }
    Ok(())
}

/// Log-spot mean-reverting to generalised Wiener process: an OU factor
/// pulled towards a Brownian long-term level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LmrGwParams {
    pub lambda: f64,
    pub sigma1: f64,
    pub sigma2: f64,
    /// Drift of the long-term factor. Does not enter the variance.
    #[serde(default)]
    pub mu: f64,
}

impl LmrGwParams {
    pub fn new(lambda: f64, sigma1: f64, sigma2: f64) -> Result<Self> {
        let p = Self {
            lambda,
            sigma1,
            sigma2,
            mu: 0.0,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "lambda must be positive, got {}",
                self.lambda
            )));
        }
        check_vol(self.sigma1, "sigma1")?;
        check_vol(self.sigma2, "sigma2")?;
        if self.sigma1 == 0.0 && self.sigma2 == 0.0 {
            return Err(Error::InvalidParameter(
                "at least one of sigma1, sigma2 must be positive".into(),
            ));
        }
        if !self.mu.is_finite() {
            return Err(Error::InvalidParameter("mu must be finite".into()));
        }
        Ok(())
    }

    /// `A = [[-λ, λ], [0, 0]]`, `B = diag(σ1, σ2)`, `S = I`, `C = [1, 0]`.
    pub fn to_sde(&self, p0: &Matrix) -> Result<LinearSde> {
        self.validate()?;
        if p0.order() != Some(2) {
            return Err(Error::InvalidInput("LMR-GW initial covariance must be 2x2".into()));
        }
        LinearSde::new(
            Matrix::from_rows(&[[-self.lambda, self.lambda], [0.0, 0.0]])?,
            Matrix::diagonal(&[self.sigma1, self.sigma2]),
            vec![1.0, 0.0],
            Matrix::identity(2),
            vec![0.0, 0.0],
            p0.clone(),
        )
    }
}

/// Schwartz-Smith short-term/long-term model, `ln s = χ + ξ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SchwartzParams {
    pub k: f64,
    pub sigma_chi: f64,
    pub sigma_xi: f64,
    pub rho: f64,
    #[serde(default)]
    pub mu_xi: f64,
}

impl SchwartzParams {
    pub fn new(k: f64, sigma_chi: f64, sigma_xi: f64, rho: f64) -> Result<Self> {
        let p = Self {
            k,
            sigma_chi,
            sigma_xi,
            rho,
            mu_xi: 0.0,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.k > 0.0 && self.k.is_finite()) {
            return Err(Error::InvalidParameter(format!("k must be positive, got {}", self.k)));
        }
        check_vol(self.sigma_chi, "sigma_chi")?;
        check_vol(self.sigma_xi, "sigma_xi")?;
        if !(self.rho.abs() <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "rho must lie in [-1, 1], got {}",
                self.rho
            )));
        }
        if !self.mu_xi.is_finite() {
            return Err(Error::InvalidParameter("mu_xi must be finite".into()));
        }
        Ok(())
    }

    /// `A = diag(-k, 0)`, `B = diag(σχ, σξ)`, `C = [1, 1]`,
    /// `S = [[1, ρ], [ρ, 1]]`, `P0 = 0`.
    pub fn to_sde(&self) -> Result<LinearSde> {
        self.to_sde_from(&Matrix::zeros(2, 2))
    }

    pub fn to_sde_from(&self, p0: &Matrix) -> Result<LinearSde> {
        self.validate()?;
        LinearSde::new(
            Matrix::diagonal(&[-self.k, 0.0]),
            Matrix::diagonal(&[self.sigma_chi, self.sigma_xi]),
            vec![1.0, 1.0],
            Matrix::from_rows(&[[1.0, self.rho], [self.rho, 1.0]])?,
            vec![0.0, 0.0],
            p0.clone(),
        )
    }
}

/// One-factor Ornstein-Uhlenbeck log-price.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OuParams {
    pub lambda: f64,
    pub sigma: f64,
    #[serde(default)]
    pub level: f64,
}

impl OuParams {
    pub fn new(lambda: f64, sigma: f64) -> Result<Self> {
        let p = Self {
            lambda,
            sigma,
            level: 0.0,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "lambda must be positive, got {}",
                self.lambda
            )));
        }
        check_vol(self.sigma, "sigma")?;
        if !self.level.is_finite() {
            return Err(Error::InvalidParameter("level must be finite".into()));
        }
        Ok(())
    }

    pub fn to_sde(&self, p0: &Matrix) -> Result<LinearSde> {
        self.validate()?;
        LinearSde::new(
            Matrix::diagonal(&[-self.lambda]),
            Matrix::diagonal(&[self.sigma]),
            vec![1.0],
            Matrix::identity(1),
            vec![self.level],
            p0.clone(),
        )
    }
}

/// Geometric Brownian motion, the Black base case.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GbmParams {
    pub sigma: f64,
}

impl GbmParams {
    pub fn new(sigma: f64) -> Result<Self> {
        let p = Self { sigma };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        check_vol(self.sigma, "sigma")
    }

    pub fn to_sde(&self, p0: &Matrix) -> Result<LinearSde> {
        self.validate()?;
        LinearSde::new(
            Matrix::zeros(1, 1),
            Matrix::diagonal(&[self.sigma]),
            vec![1.0],
            Matrix::identity(1),
            vec![0.0],
            p0.clone(),
        )
    }
}

fn check_vol(v: f64, name: &str) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "{name} must be finite and non-negative, got {v}"
        )))
    }
}

fn check_horizon(t: f64) -> Result<()> {
    if t >= 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!(
            "time must be finite and non-negative, got {t}"
        )))
    }
}

/// `σ² t`.
pub fn gbm_variance(p: &GbmParams, t: f64) -> Result<f64> {
    check_horizon(t)?;
    p.validate()?;
    Ok(p.sigma * p.sigma * t)
}

/// `σ²/(2λ) (1 - e^{-2λt}) + P0₁₁ e^{-2λt}`.
pub fn ou_variance(p: &OuParams, p0_11: f64, t: f64) -> Result<f64> {
    check_horizon(t)?;
    p.validate()?;
    if !(p0_11 >= 0.0) {
        return Err(Error::InvalidInput(format!(
            "initial variance must be non-negative, got {p0_11}"
        )));
    }
    let decay = (-2.0 * p.lambda * t).exp();
    // -expm1 keeps full relative precision for small λt
    let grown = -(-2.0 * p.lambda * t).exp_m1();
    Ok(p.sigma * p.sigma / (2.0 * p.lambda) * grown + p0_11 * decay)
}

/// Catalog entry selector, as spelled on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Gbm,
    Ou,
    Lmrgw,
    Schwartz,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [ModelKind::Gbm, ModelKind::Ou, ModelKind::Lmrgw, ModelKind::Schwartz];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Gbm => "gbm",
            ModelKind::Ou => "ou",
            ModelKind::Lmrgw => "lmrgw",
            ModelKind::Schwartz => "schwartz",
        }
    }

    /// Dimension of the state vector.
    pub fn state_dim(self) -> usize {
        match self {
            ModelKind::Gbm | ModelKind::Ou => 1,
            ModelKind::Lmrgw | ModelKind::Schwartz => 2,
        }
    }

    /// Number of parameters that influence the variance (and are calibrated).
    pub fn free_parameters(self) -> usize {
        match self {
            ModelKind::Gbm => 1,
            ModelKind::Ou => 2,
            ModelKind::Lmrgw => 3,
            ModelKind::Schwartz => 4,
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown model '{s}', expected gbm|ou|lmrgw|schwartz")))
    }
}

/// Parameters of any catalog model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "lowercase")]
pub enum ModelParams {
    Gbm(GbmParams),
    Ou(OuParams),
    Lmrgw(LmrGwParams),
    Schwartz(SchwartzParams),
}

impl ModelParams {
    pub fn kind(&self) -> ModelKind {
        match self {
            ModelParams::Gbm(_) => ModelKind::Gbm,
            ModelParams::Ou(_) => ModelKind::Ou,
            ModelParams::Lmrgw(_) => ModelKind::Lmrgw,
            ModelParams::Schwartz(_) => ModelKind::Schwartz,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ModelParams::Gbm(p) => p.validate(),
            ModelParams::Ou(p) => p.validate(),
            ModelParams::Lmrgw(p) => p.validate(),
            ModelParams::Schwartz(p) => p.validate(),
        }
    }

    /// State-space form with the given initial covariance.
    pub fn to_sde(&self, p0: &Matrix) -> Result<LinearSde> {
        match self {
            ModelParams::Gbm(p) => p.to_sde(p0),
            ModelParams::Ou(p) => p.to_sde(p0),
            ModelParams::Lmrgw(p) => p.to_sde(p0),
            ModelParams::Schwartz(p) => p.to_sde_from(p0),
        }
    }
}

impl From<GbmParams> for ModelParams {
    fn from(p: GbmParams) -> Self {
        ModelParams::Gbm(p)
    }
}

impl From<OuParams> for ModelParams {
    fn from(p: OuParams) -> Self {
        ModelParams::Ou(p)
    }
}

impl From<LmrGwParams> for ModelParams {
    fn from(p: LmrGwParams) -> Self {
        ModelParams::Lmrgw(p)
    }
}

impl From<SchwartzParams> for ModelParams {
    fn from(p: SchwartzParams) -> Self {
        ModelParams::Schwartz(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lmrgw_state_space() {
        let p = LmrGwParams::new(2.0, 0.5, 0.2).unwrap();
        let sde = p.to_sde(&Matrix::zeros(2, 2)).unwrap();
        assert_eq!(sde.drift(), &Matrix::from_rows(&[[-2.0, 2.0], [0.0, 0.0]]).unwrap());
        assert_eq!(sde.noise_loading(), &Matrix::diagonal(&[0.5, 0.2]));
        assert_eq!(sde.noise_correlation(), &Matrix::identity(2));
        assert_eq!(sde.output(), &[1.0, 0.0]);
    }

    #[test]
    fn lmrgw_deterministic_long_term_factor() {
        let p = LmrGwParams::new(2.0, 0.5, 0.0).unwrap();
        let sde = p.to_sde(&Matrix::zeros(2, 2)).unwrap();
        let q = sde.diffusion();
        assert_eq!(q, &Matrix::diagonal(&[0.25, 0.0]));
        let eig = q.symmetric_eigenvalues().unwrap();
        assert_eq!(eig.iter().filter(|e| e.abs() > 0.0).count(), 1);
    }

    #[test]
    fn lmrgw_rejects_bad_params() {
        assert!(matches!(
            LmrGwParams::new(0.0, 0.5, 0.2),
            Err(Error::InvalidParameter(_))
        ));
        assert!(matches!(
            LmrGwParams::new(1.0, -0.5, 0.2),
            Err(Error::InvalidParameter(_))
        ));
        assert!(matches!(
            LmrGwParams::new(1.0, 0.0, 0.0),
            Err(Error::InvalidParameter(_))
        ));
        let p = LmrGwParams::new(1.0, 0.3, 0.1).unwrap();
        assert!(p.to_sde(&Matrix::zeros(3, 3)).is_err());
        let not_psd = Matrix::from_rows(&[[1.0, 2.0], [2.0, 1.0]]).unwrap();
        assert!(p.to_sde(&not_psd).is_err());
    }

    #[test]
    fn schwartz_state_space() {
        let p = SchwartzParams::new(1.5, 0.3, 0.15, 0.3).unwrap();
        let sde = p.to_sde().unwrap();
        assert_eq!(sde.drift(), &Matrix::diagonal(&[-1.5, 0.0]));
        assert_eq!(sde.noise_loading(), &Matrix::diagonal(&[0.3, 0.15]));
        assert_eq!(sde.output(), &[1.0, 1.0]);
        assert_eq!(
            sde.noise_correlation(),
            &Matrix::from_rows(&[[1.0, 0.3], [0.3, 1.0]]).unwrap()
        );
        assert_eq!(sde.initial_covariance(), &Matrix::zeros(2, 2));

        let uncorrelated = SchwartzParams::new(1.5, 0.3, 0.15, 0.0).unwrap().to_sde().unwrap();
        assert_eq!(uncorrelated.noise_correlation(), &Matrix::identity(2));
    }

    #[test]
    fn schwartz_accepts_perfect_correlation() {
        for rho in [-1.0, 1.0] {
            assert!(SchwartzParams::new(1.0, 0.3, 0.2, rho).unwrap().to_sde().is_ok());
        }
        assert!(SchwartzParams::new(1.0, 0.3, 0.2, 1.01).is_err());
    }

    #[test]
    fn simple_variances() {
        let v = gbm_variance(&GbmParams::new(0.3).unwrap(), 4.0).unwrap();
        assert!((v - 0.36).abs() < 1e-15);
        let ou = OuParams::new(2.0, 0.5).unwrap();
        assert_eq!(ou_variance(&ou, 0.05, 0.0).unwrap(), 0.05);
        assert!((ou_variance(&ou, 0.0, 50.0).unwrap() - 0.0625).abs() < 1e-15);
        assert!(gbm_variance(&GbmParams::new(0.3).unwrap(), -1.0).is_err());
        assert!(ou_variance(&ou, 0.0, -1.0).is_err());
    }

    #[test]
    fn model_kind_round_trip() {
        for k in ModelKind::ALL {
            assert_eq!(k.as_str().parse::<ModelKind>().unwrap(), k);
        }
        assert!("heston".parse::<ModelKind>().is_err());
    }
}
