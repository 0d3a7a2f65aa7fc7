//! Cross-checks between the closed-form, block-exponential, Lagrange and
//! Runge-Kutta routes to the state covariance.

use lyap_core::lyapunov::{
    lagrange_covariance, lmrgw_covariance_analytical, lyapunov_numerical, output_variance, schwartz_variance,
    VarianceMethod,
};
use lyap_core::matrix::{integrate_lyapunov_ode, Matrix};
use lyap_core::model::{LinearSde, LmrGwParams, ModelParams, OuParams, SchwartzParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_psd(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Matrix {
    let data: Vec<f64> = (0..n * n).map(|_| rng.random_range(-1.0..1.0) * scale.sqrt()).collect();
    let l = Matrix::from_vec(n, n, data).unwrap();
    (&l * &l.transpose()).symmetrized()
}

fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| (lo.ln() + (hi.ln() - lo.ln()) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

#[test]
fn lmrgw_closed_form_equals_block_exponential_over_wide_ranges() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let times = log_grid(1e-4, 10.0, 15);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let p = LmrGwParams::new(
            rng.random_range(0.1..20.0),
            rng.random_range(0.01..2.0),
            rng.random_range(0.01..2.0),
        )
        .unwrap();
        let p0 = random_psd(&mut rng, 2, 0.1);
        let sde = p.to_sde(&p0).unwrap();
        for &t in &times {
            let a = lmrgw_covariance_analytical(&p, &p0, t).unwrap();
            let n = lyapunov_numerical(&sde, t).unwrap();
            for (i, j) in [(0, 0), (0, 1), (1, 1)] {
                let err = (a.p[(i, j)] - n.p[(i, j)]).abs() / a.p[(i, j)].abs().max(1.0);
                worst = worst.max(err);
            }
        }
    }
    assert!(worst <= 1e-10, "worst scaled error {worst:e}");
}

#[test]
fn ou_reduction_of_lmrgw() {
    for t in log_grid(1e-4, 10.0, 30) {
        let l = ModelParams::from(LmrGwParams::new(2.0, 0.5, 0.0).unwrap());
        let o = ModelParams::from(OuParams::new(2.0, 0.5).unwrap());
        let a = l.variance(t, VarianceMethod::Analytical).unwrap();
        let b = o.variance(t, VarianceMethod::Analytical).unwrap();
        assert!((a - b).abs() <= 1e-14 * b, "t={t}: {a} vs {b}");
    }
}

#[test]
fn lmrgw_variance_nondecreasing_in_time() {
    let m = ModelParams::from(LmrGwParams::new(2.0, 0.5, 0.2).unwrap());
    let v: Vec<f64> = log_grid(1e-4, 10.0, 200)
        .into_iter()
        .map(|t| m.variance(t, VarianceMethod::Analytical).unwrap())
        .collect();
    assert!(v.windows(2).all(|w| w[1] >= w[0]));
}

#[test]
fn schwartz_closed_form_equals_block_exponential() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let p = SchwartzParams::new(
            rng.random_range(0.1..5.0),
            rng.random_range(0.01..1.0),
            rng.random_range(0.01..1.0),
            rng.random_range(-1.0..1.0),
        )
        .unwrap();
        let t = rng.random_range(0.01..5.0);
        let sde = p.to_sde().unwrap();
        let num = output_variance(&sde, &lyapunov_numerical(&sde, t).unwrap()).unwrap();
        let ana = schwartz_variance(&p, t).unwrap();
        assert!((num - ana).abs() <= 1e-12 * ana, "{num} vs {ana}");
    }
}

#[test]
fn schwartz_perfect_correlation_stays_psd() {
    for rho in [-1.0, 1.0] {
        let p = SchwartzParams::new(1.2, 0.4, 0.3, rho).unwrap();
        let sde = p.to_sde().unwrap();
        for t in log_grid(1e-3, 10.0, 25) {
            let cov = lyapunov_numerical(&sde, t).unwrap();
            assert!(cov.p.min_eigenvalue().unwrap() >= -1e-12);
            cov.check().unwrap();
        }
    }
}

#[test]
fn lmrgw_round_trip_through_state_space() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let p = LmrGwParams::new(
            rng.random_range(0.1..10.0),
            rng.random_range(0.01..1.5),
            rng.random_range(0.01..1.5),
        )
        .unwrap();
        let m = ModelParams::from(p);
        let t = rng.random_range(0.01..3.0);
        let a = m.variance(t, VarianceMethod::Analytical).unwrap();
        let n = m.variance(t, VarianceMethod::Numerical).unwrap();
        assert!((a - n).abs() <= 1e-12 * a);
    }
}

#[test]
fn semigroup_time_consistency() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..20 {
        let p = LmrGwParams::new(
            rng.random_range(0.1..5.0),
            rng.random_range(0.05..1.0),
            rng.random_range(0.05..1.0),
        )
        .unwrap();
        let p0 = random_psd(&mut rng, 2, 0.05);
        let t = rng.random_range(0.2..4.0);
        let s = t * rng.random_range(0.1..0.9);
        let direct = lyapunov_numerical(&p.to_sde(&p0).unwrap(), t).unwrap();
        let mid = lyapunov_numerical(&p.to_sde(&p0).unwrap(), s).unwrap();
        let chained = lyapunov_numerical(&p.to_sde(&mid.p).unwrap(), t - s).unwrap();
        assert!((&direct.p - &chained.p).max_abs() <= 1e-10 * direct.p.max_abs().max(1.0));
    }
}

#[test]
fn lagrange_converges_at_simpson_order() {
    let sde = LmrGwParams::new(4.0, 0.8, 0.3)
        .unwrap()
        .to_sde(&Matrix::zeros(2, 2))
        .unwrap();
    let exact = lyapunov_numerical(&sde, 1.5).unwrap();
    let errors: Vec<f64> = [9, 17, 33, 65]
        .into_iter()
        .map(|n| (&lagrange_covariance(&sde, 1.5, n).unwrap().p - &exact.p).max_abs())
        .collect();
    for w in errors.windows(2) {
        let ratio = w[1] / w[0];
        assert!((ratio - 1.0 / 16.0).abs() < 0.02, "ratio {ratio}, errors {errors:?}");
    }
}

fn random_system(rng: &mut ChaCha8Rng) -> LinearSde {
    let a = Matrix::from_vec(2, 2, (0..4).map(|_| rng.random_range(-2.0..1.0)).collect()).unwrap();
    let b = Matrix::from_vec(2, 2, (0..4).map(|_| rng.random_range(-0.8..0.8)).collect()).unwrap();
    let rho = rng.random_range(-0.9..0.9);
    let s = Matrix::from_rows(&[[1.0, rho], [rho, 1.0]]).unwrap();
    let p0 = random_psd(rng, 2, 0.05);
    LinearSde::new(a, b, vec![1.0, 1.0], s, vec![0.0, 0.0], p0).unwrap()
}

#[test]
fn oracle_triangle_on_random_systems() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for _ in 0..5 {
        let sde = random_system(&mut rng);
        let t = rng.random_range(0.1..2.0);
        let num = lyapunov_numerical(&sde, t).unwrap();
        let lag = lagrange_covariance(&sde, t, 2001).unwrap();
        let ode = integrate_lyapunov_ode(sde.drift(), sde.diffusion(), sde.initial_covariance(), t, 20_000).unwrap();
        assert!((&num.p - &lag.p).max_abs() <= 1e-8);
        assert!((&num.p - &ode).max_abs() <= 1e-8);
    }
}

#[test]
fn rk4_matches_closed_form() {
    let p = LmrGwParams::new(2.0, 0.5, 0.2).unwrap();
    let sde = p.to_sde(&Matrix::zeros(2, 2)).unwrap();
    let ode = integrate_lyapunov_ode(sde.drift(), sde.diffusion(), sde.initial_covariance(), 1.0, 10_000).unwrap();
    let ana = lmrgw_covariance_analytical(&p, &Matrix::zeros(2, 2), 1.0).unwrap();
    assert!((&ode - &ana.p).max_abs() <= 1e-8);
    assert_eq!(ode.asymmetry(), 0.0);
}
