//! State covariance of linear stochastic systems.
//!
//! The covariance `P(t)` of `dx = A x dt + B dw` solves the differential
//! Lyapunov equation `dP/dt = A P + P Aᵀ + B S Bᵀ`, `P(0) = P0`. Two routes
//! are provided:
//!
//! * closed forms for the LMR-GW and Schwartz-Smith models, O(1) per time
//!   point;
//! * a general numerical solver that exponentiates the block matrix
//!   `[[A, BSBᵀ], [0, -Aᵀ]] t` once and recovers
//!   `P(t) = (F11 P0 + F12) F22⁻¹` from its blocks.
//!
//! A third route, [`lagrange_covariance`], evaluates the Lagrange formula by
//! quadrature and exists only to cross-check the other two.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{mat_exp, solve_linear, Matrix};
use crate::model::{check_covariance, gbm_variance, ou_variance, LinearSde, LmrGwParams, ModelParams, SchwartzParams};

/// Round-off allowance below zero before a variance is reported as negative.
pub const NEGATIVE_VARIANCE_TOL: f64 = 1e-12;

/// How the variance is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VarianceMethod {
    /// Closed-form expressions.
    Analytical,
    /// Block matrix exponential.
    Numerical,
}

impl VarianceMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            VarianceMethod::Analytical => "analytical",
            VarianceMethod::Numerical => "numerical",
        }
    }
}

impl fmt::Display for VarianceMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for VarianceMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "analytical" => Ok(VarianceMethod::Analytical),
            "numerical" => Ok(VarianceMethod::Numerical),
            other => Err(Error::InvalidInput(format!(
                "unknown method '{other}', expected analytical|numerical"
            ))),
        }
    }
}

/// Covariance of the state at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateCovariance {
    pub t: f64,
    pub p: Matrix,
}

impl StateCovariance {
    pub fn order(&self) -> usize {
        self.p.rows()
    }

    /// Symmetry plus PSD to `-1e-12 · max(1, trace)` on the smallest eigenvalue.
    pub fn check(&self) -> Result<()> {
        if !(self.t >= 0.0) {
            return Err(Error::InvalidInput(format!("negative time {}", self.t)));
        }
        if self.p.asymmetry() > 0.0 {
            return Err(Error::Internal("state covariance is not symmetric".into()));
        }
        let floor = -NEGATIVE_VARIANCE_TOL * self.p.trace().abs().max(1.0);
        let min = self.p.min_eigenvalue()?;
        if min < floor {
            return Err(Error::Internal(format!("state covariance has eigenvalue {min:e}")));
        }
        Ok(())
    }
}

fn check_time(t: f64) -> Result<()> {
    if t >= 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!(
            "time must be finite and non-negative, got {t}"
        )))
    }
}

fn check_p0_2x2(p0: &Matrix) -> Result<()> {
    if p0.order() != Some(2) {
        return Err(Error::InvalidInput("initial covariance must be 2x2".into()));
    }
    check_covariance(p0, "P0")
}

// The closed forms below are written with u = 1 - e^{-λt} computed through
// expm1, which keeps them accurate for λt → 0.

/// Closed-form LMR-GW state covariance.
pub fn lmrgw_covariance_analytical(p: &LmrGwParams, p0: &Matrix, t: f64) -> Result<StateCovariance> {
    p.validate()?;
    check_time(t)?;
    check_p0_2x2(p0)?;
    let (p11, p12, p22) = lmrgw_entries(p, p0[(0, 0)], 0.5 * (p0[(0, 1)] + p0[(1, 0)]), p0[(1, 1)], t);
    Ok(StateCovariance {
        t,
        p: Matrix::from_vec(2, 2, vec![p11, p12, p12, p22])?,
    })
}

/// `P11(t)` only, the log-price variance used for pricing. Skips the
/// covariance validation done by [`lmrgw_covariance_analytical`].
pub fn lmrgw_variance_analytical(p: &LmrGwParams, p0: &Matrix, t: f64) -> Result<f64> {
    p.validate()?;
    check_time(t)?;
    if p0.order() != Some(2) {
        return Err(Error::InvalidInput("initial covariance must be 2x2".into()));
    }
    Ok(lmrgw_p11(p, p0[(0, 0)], p0[(0, 1)], p0[(1, 1)], t))
}

#[inline]
fn lmrgw_p11(p: &LmrGwParams, p11: f64, p12: f64, p22: f64, t: f64) -> f64 {
    let lambda = p.lambda;
    let x = lambda * t;
    let u = -(-x).exp_m1();
    let e1 = 1.0 - u;
    let s1 = p.sigma1 * p.sigma1;
    let s2 = p.sigma2 * p.sigma2;
    // (e^{At} P0 e^{Aᵀt})₁₁ with e^{At} = [[e1, u], [0, 1]]
    let free = e1 * e1 * p11 + 2.0 * e1 * u * p12 + u * u * p22;
    free + s1 / (2.0 * lambda) * u * (2.0 - u) + s2 * ((x - u) - 0.5 * u * u) / lambda
}

fn lmrgw_entries(p: &LmrGwParams, p11: f64, p12: f64, p22: f64, t: f64) -> (f64, f64, f64) {
    let x = p.lambda * t;
    let u = -(-x).exp_m1();
    let s2 = p.sigma2 * p.sigma2;
    let cov11 = lmrgw_p11(p, p11, p12, p22, t);
    let cov12 = (1.0 - u) * p12 + u * p22 + s2 * (x - u) / p.lambda;
    let cov22 = s2 * t + p22;
    (cov11, cov12, cov22)
}

/// Closed-form Schwartz-Smith state covariance for a general `P0`.
///
/// The short-term entry is `σχ²/(2k) (1 - e^{-2kt})`; note the square on σχ.
pub fn schwartz_covariance_analytical(p: &SchwartzParams, p0: &Matrix, t: f64) -> Result<StateCovariance> {
    p.validate()?;
    check_time(t)?;
    check_p0_2x2(p0)?;
    let (c11, c12, c22) = schwartz_entries(p, p0[(0, 0)], 0.5 * (p0[(0, 1)] + p0[(1, 0)]), p0[(1, 1)], t);
    Ok(StateCovariance {
        t,
        p: Matrix::from_vec(2, 2, vec![c11, c12, c12, c22])?,
    })
}

#[inline]
fn schwartz_entries(p: &SchwartzParams, p11: f64, p12: f64, p22: f64, t: f64) -> (f64, f64, f64) {
    let x = p.k * t;
    let u = -(-x).exp_m1();
    let e1 = 1.0 - u;
    let c11 = p11 * e1 * e1 + p.sigma_chi * p.sigma_chi / (2.0 * p.k) * u * (2.0 - u);
    let c12 = p12 * e1 + p.rho * p.sigma_chi * p.sigma_xi / p.k * u;
    let c22 = p22 + p.sigma_xi * p.sigma_xi * t;
    (c11, c12, c22)
}

/// Closed-form variance of `ln s = χ + ξ` started from `P0 = 0`:
/// `σχ²/(2k)(1 - e^{-2kt}) + 2ρσχσξ/k (1 - e^{-kt}) + σξ² t`.
pub fn schwartz_variance(p: &SchwartzParams, t: f64) -> Result<f64> {
    p.validate()?;
    check_time(t)?;
    let (c11, c12, c22) = schwartz_entries(p, 0.0, 0.0, 0.0, t);
    clamp_variance(c11 + 2.0 * c12 + c22)
}

/// Covariance by a single exponential of the `2n x 2n` block matrix
/// `[[A, BSBᵀ], [0, -Aᵀ]] t`, combined as `(F11 P0 + F12) F22⁻¹`.
///
/// `F22⁻¹` is applied by an LU solve on `F22ᵀ`; the result is symmetrised.
pub fn lyapunov_numerical(sde: &LinearSde, t: f64) -> Result<StateCovariance> {
    check_time(t)?;
    let n = sde.order();
    let a = sde.drift();
    let mut block = Matrix::zeros(2 * n, 2 * n);
    block.set_block(0, 0, &a.scale(t));
    block.set_block(0, n, &sde.diffusion().scale(t));
    block.set_block(n, n, &a.transpose().scale(-t));

    let f = mat_exp(&block)?;
    let f11 = f.block(0, 0, n, n);
    let f12 = f.block(0, n, n, n);
    let f22 = f.block(n, n, n, n);

    let x = &(&f11 * sde.initial_covariance()) + &f12;
    // P F22 = X  <=>  F22ᵀ Pᵀ = Xᵀ
    let pt = solve_linear(&f22.transpose(), &x.transpose()).map_err(|e| match e {
        Error::SingularMatrix => Error::Internal("F22 block of the matrix exponential is singular".into()),
        other => other,
    })?;
    Ok(StateCovariance { t, p: pt.symmetrized() })
}

/// Lagrange formula `e^{At} P0 e^{Aᵀt} + ∫₀ᵗ e^{As} BSBᵀ e^{Aᵀs} ds` with the
/// integral evaluated by composite Simpson quadrature on `quad_points`
/// equally spaced nodes. When the number of intervals is odd the last three
/// use Simpson's 3/8 rule; with two nodes it degrades to the trapezoid rule.
///
/// Cross-check only.
pub fn lagrange_covariance(sde: &LinearSde, t: f64, quad_points: usize) -> Result<StateCovariance> {
    check_time(t)?;
    if quad_points < 2 {
        return Err(Error::InvalidInput("quadrature needs at least two points".into()));
    }
    let a = sde.drift();
    let at = a.transpose();
    let q = sde.diffusion();
    let integrand = |s: f64| -> Result<Matrix> {
        let e = mat_exp(&a.scale(s))?;
        let et = mat_exp(&at.scale(s))?;
        Ok(&(&e * q) * &et)
    };

    let intervals = quad_points - 1;
    let h = t / intervals as f64;
    let nodes: Vec<Matrix> = (0..quad_points)
        .map(|i| integrand(i as f64 * h))
        .collect::<Result<_>>()?;

    let n = sde.order();
    let mut weights = vec![0.0; quad_points];
    if intervals == 1 {
        weights[0] = 0.5 * h;
        weights[1] = 0.5 * h;
    } else {
        let simpson_intervals = if intervals % 2 == 0 { intervals } else { intervals - 3 };
        for i in (0..simpson_intervals).step_by(2) {
            weights[i] += h / 3.0;
            weights[i + 1] += 4.0 * h / 3.0;
            weights[i + 2] += h / 3.0;
        }
        if simpson_intervals < intervals {
            let i = simpson_intervals;
            let w = 3.0 * h / 8.0;
            weights[i] += w;
            weights[i + 1] += 3.0 * w;
            weights[i + 2] += 3.0 * w;
            weights[i + 3] += w;
        }
    }
    let mut gramian = Matrix::zeros(n, n);
    for (node, w) in nodes.iter().zip(&weights) {
        gramian = &gramian + &node.scale(*w);
    }

    let e = mat_exp(&a.scale(t))?;
    let free = &(&e * sde.initial_covariance()) * &e.transpose();
    Ok(StateCovariance {
        t,
        p: (&free + &gramian).symmetrized(),
    })
}

/// `C P Cᵀ`. Values in `[-1e-12, 0)` are treated as round-off and clamped.
pub fn output_variance(sde: &LinearSde, p: &StateCovariance) -> Result<f64> {
    if p.order() != sde.order() {
        return Err(Error::InvalidInput(format!(
            "covariance is {0}x{0}, system has order {1}",
            p.order(),
            sde.order()
        )));
    }
    clamp_variance(p.p.quadratic_form(sde.output()))
}

#[inline]
fn clamp_variance(v: f64) -> Result<f64> {
    if v >= 0.0 {
        Ok(v)
    } else if v >= -NEGATIVE_VARIANCE_TOL {
        Ok(0.0)
    } else if v.is_nan() {
        Err(Error::Internal("variance evaluated to NaN".into()))
    } else {
        Err(Error::NegativeVariance(v))
    }
}

impl ModelParams {
    /// Log-price variance at `t`, starting from a known price (`P0 = 0`).
    pub fn variance(&self, t: f64, method: VarianceMethod) -> Result<f64> {
        let n = self.kind().state_dim();
        self.variance_from(&Matrix::zeros(n, n), t, method)
    }

    /// Log-price variance at `t` from initial state covariance `p0`.
    pub fn variance_from(&self, p0: &Matrix, t: f64, method: VarianceMethod) -> Result<f64> {
        Ok(self.variance_curve(p0, &[t], method)?[0])
    }

    /// Log-price variances for a list of times, in order. The state-space
    /// form is built once; each time point costs one closed-form evaluation
    /// or one matrix exponential.
    pub fn variance_curve(&self, p0: &Matrix, times: &[f64], method: VarianceMethod) -> Result<Vec<f64>> {
        self.validate()?;
        let n = self.kind().state_dim();
        if p0.order() != Some(n) {
            return Err(Error::InvalidInput(format!("initial covariance must be {n}x{n}")));
        }
        for &t in times {
            check_time(t)?;
        }
        match method {
            VarianceMethod::Analytical => times
                .iter()
                .map(|&t| match self {
                    ModelParams::Gbm(g) => Ok(gbm_variance(g, t)? + p0[(0, 0)]),
                    ModelParams::Ou(o) => ou_variance(o, p0[(0, 0)], t),
                    ModelParams::Lmrgw(l) => clamp_variance(lmrgw_p11(l, p0[(0, 0)], p0[(0, 1)], p0[(1, 1)], t)),
                    ModelParams::Schwartz(s) => {
                        let (c11, c12, c22) = schwartz_entries(s, p0[(0, 0)], p0[(0, 1)], p0[(1, 1)], t);
                        clamp_variance(c11 + 2.0 * c12 + c22)
                    }
                })
                .collect(),
            VarianceMethod::Numerical => {
                let sde = self.to_sde(p0)?;
                times
                    .iter()
                    .map(|&t| output_variance(&sde, &lyapunov_numerical(&sde, t)?))
                    .collect()
            }
        }
    }

    /// Full state covariance at `t` by the chosen route.
    pub fn covariance(&self, p0: &Matrix, t: f64, method: VarianceMethod) -> Result<StateCovariance> {
        match (method, self) {
            (VarianceMethod::Analytical, ModelParams::Lmrgw(l)) => lmrgw_covariance_analytical(l, p0, t),
            (VarianceMethod::Analytical, ModelParams::Schwartz(s)) => schwartz_covariance_analytical(s, p0, t),
            (VarianceMethod::Analytical, ModelParams::Gbm(_) | ModelParams::Ou(_)) => {
                let v = self.variance_from(p0, t, method)?;
                Ok(StateCovariance {
                    t,
                    p: Matrix::diagonal(&[v]),
                })
            }
            (VarianceMethod::Numerical, _) => lyapunov_numerical(&self.to_sde(p0)?, t),
        }
    }
}

/// Variances at a sorted list of times.
pub fn variance_batch(model: &ModelParams, times: &[f64], method: VarianceMethod) -> Result<Vec<f64>> {
    if times.windows(2).any(|w| !(w[0] <= w[1])) {
        return Err(Error::InvalidInput("evaluation times must be sorted ascending".into()));
    }
    let n = model.kind().state_dim();
    model.variance_curve(&Matrix::zeros(n, n), times, method)
}
