//! Derivative-free Nelder-Mead simplex minimisation.

/// Stopping rules and the initial simplex size.
#[derive(Debug, Clone, Copy)]
pub struct NelderMeadOptions {
    pub max_iterations: usize,
    /// Stop once `f_worst - f_best ≤ f_tolerance · |f_best|`.
    pub f_tolerance: f64,
    /// Stop once every vertex lies within this distance (max norm) of the best one.
    pub x_tolerance: f64,
    /// Offset of the initial vertices along each coordinate.
    pub initial_step: f64,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self {
            max_iterations: 2000,
            f_tolerance: 1e-10,
            x_tolerance: 1e-10,
            initial_step: 0.25,
        }
    }
}

#[derive(Debug, Clone)]
pub struct NelderMeadResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub initial_f: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
}

const REFLECT: f64 = 1.0;
const EXPAND: f64 = 2.0;
const CONTRACT: f64 = 0.5;
const SHRINK: f64 = 0.5;

/// Minimises `f` from `x0`. NaN objective values are treated as `+∞`, so an
/// objective may signal an infeasible point by returning either.
pub fn nelder_mead<F>(mut f: F, x0: &[f64], opts: &NelderMeadOptions) -> NelderMeadResult
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x0.len();
    let mut evaluations = 0usize;
    let mut eval = |x: &[f64]| {
        evaluations += 1;
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };

    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    let f0 = eval(x0);
    simplex.push((x0.to_vec(), f0));
    for i in 0..n {
        let mut x = x0.to_vec();
        x[i] += opts.initial_step;
        let fx = eval(&x);
        simplex.push((x, fx));
    }

    let mut iterations = 0;
    let mut converged = false;
    let mut centroid = vec![0.0; n];
    let point = |c: &[f64], towards: &[f64], coef: f64| -> Vec<f64> {
        c.iter().zip(towards).map(|(ci, ti)| ci + coef * (ti - ci)).collect()
    };

    loop {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let f_best = simplex[0].1;
        let f_worst = simplex[n].1;
        let spread = f_worst - f_best;
        let diameter = simplex[1..]
            .iter()
            .flat_map(|(x, _)| x.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        if f_best.is_finite() && (spread <= opts.f_tolerance * f_best.abs() || diameter <= opts.x_tolerance) {
            converged = true;
            break;
        }
        if iterations >= opts.max_iterations {
            break;
        }
        iterations += 1;

        centroid.iter_mut().for_each(|c| *c = 0.0);
        for (x, _) in &simplex[..n] {
            for (c, xi) in centroid.iter_mut().zip(x) {
                *c += xi / n as f64;
            }
        }
        let worst = simplex[n].0.clone();
        let reflected = point(&centroid, &worst, -REFLECT);
        let f_reflected = eval(&reflected);

        if f_reflected < f_best {
            let expanded = point(&centroid, &reflected, EXPAND);
            let f_expanded = eval(&expanded);
            simplex[n] = if f_expanded < f_reflected {
                (expanded, f_expanded)
            } else {
                (reflected, f_reflected)
            };
            continue;
        }
        if f_reflected < simplex[n - 1].1 {
            simplex[n] = (reflected, f_reflected);
            continue;
        }
        let (contracted, f_contracted, accept) = if f_reflected < f_worst {
            let c = point(&centroid, &reflected, CONTRACT);
            let fc = eval(&c);
            let ok = fc <= f_reflected;
            (c, fc, ok)
        } else {
            let c = point(&centroid, &worst, CONTRACT);
            let fc = eval(&c);
            let ok = fc < f_worst;
            (c, fc, ok)
        };
        if accept {
            simplex[n] = (contracted, f_contracted);
            continue;
        }
        let best = simplex[0].0.clone();
        for vertex in simplex.iter_mut().skip(1) {
            let x = point(&best, &vertex.0, SHRINK);
            let fx = eval(&x);
            *vertex = (x, fx);
        }
    }

    let (x, fx) = simplex.swap_remove(0);
    NelderMeadResult {
        x,
        f: fx,
        initial_f: f0,
        iterations,
        evaluations,
        converged,
    }
}
