//! Small dense matrices and the kernels the Lyapunov solvers are built on:
//! the matrix exponential, LU-based linear solves, a Jacobi eigenvalue
//! routine for symmetric matrices, and a Runge-Kutta integrator for the
//! Lyapunov differential equation (test oracle only).
//!
//! Every matrix in this crate is tiny (order ≤ 8), so storage is a plain
//! row-major `Vec<f64>` and there are no blocked or sparse paths.

use std::fmt;
use std::ops::{Add, Index, IndexMut, Mul, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major matrix.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn diagonal(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = d;
        }
        m
    }

    /// Builds a matrix from row-major data. Fails if the length does not
    /// match or if either dimension is zero.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidInput("matrix dimensions must be positive".into()));
        }
        if data.len() != rows * cols {
            return Err(Error::InvalidInput(format!(
                "expected {} entries for a {rows}x{cols} matrix, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from a slice of equally sized rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::InvalidInput("ragged matrix rows".into()));
            }
            data.extend_from_slice(r);
        }
        Self::from_vec(rows.len(), cols, data)
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Order of a square matrix; `None` if the matrix is not square.
    pub fn order(&self) -> Option<usize> {
        (self.rows == self.cols).then_some(self.rows)
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    /// Maximum absolute column sum.
    pub fn norm1(&self) -> f64 {
        (0..self.cols)
            .map(|j| (0..self.rows).map(|i| self[(i, j)].abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    /// Largest absolute asymmetry `|m_ij - m_ji|`; infinite for non-square input.
    pub fn asymmetry(&self) -> f64 {
        if !self.is_square() {
            return f64::INFINITY;
        }
        let mut worst: f64 = 0.0;
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        worst
    }

    /// `(M + Mᵀ) / 2`.
    pub fn symmetrized(&self) -> Self {
        let mut s = self.clone();
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                let avg = 0.5 * (self[(i, j)] + self[(j, i)]);
                s[(i, j)] = avg;
                s[(j, i)] = avg;
            }
        }
        s
    }

    /// Copies the `rows x cols` block whose top-left corner is `(r0, c0)`.
    pub fn block(&self, r0: usize, c0: usize, rows: usize, cols: usize) -> Self {
        let mut b = Self::zeros(rows, cols);
        for i in 0..rows {
            b.data[i * cols..(i + 1) * cols]
                .copy_from_slice(&self.data[(r0 + i) * self.cols + c0..(r0 + i) * self.cols + c0 + cols]);
        }
        b
    }

    pub fn set_block(&mut self, r0: usize, c0: usize, b: &Matrix) {
        for i in 0..b.rows {
            let dst = (r0 + i) * self.cols + c0;
            self.data[dst..dst + b.cols].copy_from_slice(b.row(i));
        }
    }

    /// `self * rhs` written into a fresh matrix. Panics on a dimension mismatch.
    pub fn matmul(&self, rhs: &Matrix) -> Matrix {
        assert_eq!(self.cols, rhs.rows, "matmul dimension mismatch");
        let mut out = Matrix::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let rhs_row = &rhs.data[k * rhs.cols..(k + 1) * rhs.cols];
                for (o, &b) in out_row.iter_mut().zip(rhs_row) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// `a * self + b * other`, elementwise.
    fn axpby(&self, a: f64, other: &Matrix, b: f64) -> Matrix {
        debug_assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(x, y)| a * x + b * y).collect(),
        }
    }

    fn add_scaled_identity(&mut self, s: f64) {
        for i in 0..self.rows.min(self.cols) {
            self.data[i * self.cols + i] += s;
        }
    }

    /// Quadratic form `v M vᵀ` for a row vector `v`.
    pub fn quadratic_form(&self, v: &[f64]) -> f64 {
        assert_eq!(v.len(), self.rows);
        assert_eq!(v.len(), self.cols);
        let mut acc = 0.0;
        for i in 0..self.rows {
            let mut row = 0.0;
            for j in 0..self.cols {
                row += self[(i, j)] * v[j];
            }
            acc += v[i] * row;
        }
        acc
    }

    /// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, in
    /// ascending order. Only the upper triangle is read.
    pub fn symmetric_eigenvalues(&self) -> Result<Vec<f64>> {
        let n = self
            .order()
            .ok_or_else(|| Error::InvalidInput("eigenvalues need a square matrix".into()))?;
        if !self.is_finite() {
            return Err(Error::InvalidInput("matrix has non-finite entries".into()));
        }
        let mut a = self.symmetrized();
        for _sweep in 0..64 {
            let off: f64 = (0..n)
                .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
                .map(|(i, j)| a[(i, j)] * a[(i, j)])
                .sum();
            if off <= f64::MIN_POSITIVE {
                break;
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    let apq = a[(p, q)];
                    if apq == 0.0 {
                        continue;
                    }
                    let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let t = if theta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let akp = a[(k, p)];
                        let akq = a[(k, q)];
                        a[(k, p)] = c * akp - s * akq;
                        a[(k, q)] = s * akp + c * akq;
                    }
                    for k in 0..n {
                        let apk = a[(p, k)];
                        let aqk = a[(q, k)];
                        a[(p, k)] = c * apk - s * aqk;
                        a[(q, k)] = s * apk + c * aqk;
                    }
                }
            }
        }
        let mut eig: Vec<f64> = (0..n).map(|i| a[(i, i)]).collect();
        eig.sort_by(f64::total_cmp);
        Ok(eig)
    }

    /// Smallest eigenvalue of a symmetric matrix.
    pub fn min_eigenvalue(&self) -> Result<f64> {
        Ok(self.symmetric_eigenvalues()?[0])
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

impl Mul for &Matrix {
    type Output = Matrix;

    fn mul(self, rhs: &Matrix) -> Matrix {
        self.matmul(rhs)
    }
}

impl Add for &Matrix {
    type Output = Matrix;

    fn add(self, rhs: &Matrix) -> Matrix {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        self.axpby(1.0, rhs, 1.0)
    }
}

impl Sub for &Matrix {
    type Output = Matrix;

    fn sub(self, rhs: &Matrix) -> Matrix {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        self.axpby(1.0, rhs, -1.0)
    }
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            writeln!(f, "  {:?}", self.row(i))?;
        }
        write!(f, "]")
    }
}

fn require_square(m: &Matrix, what: &str) -> Result<usize> {
    m.order()
        .ok_or_else(|| Error::InvalidInput(format!("{what} must be square, got {}x{}", m.rows, m.cols)))
}

// Padé [13/13] numerator coefficients for exp (Higham 2005).
const PADE13: [f64; 14] = [
    64_764_752_532_480_000.0,
    32_382_376_266_240_000.0,
    7_771_770_303_897_600.0,
    1_187_353_796_428_800.0,
    129_060_195_264_000.0,
    10_559_470_521_600.0,
    670_442_572_800.0,
    33_522_128_640.0,
    1_323_241_920.0,
    40_840_800.0,
    960_960.0,
    16_380.0,
    182.0,
    1.0,
];

// Largest 1-norm for which the degree-13 approximant is accurate to unit roundoff.
const THETA13: f64 = 5.371_920_351_148_152;

/// Matrix exponential by scaling and squaring with a degree-13 Padé
/// approximant. The squaring count is the smallest `s` with
/// `‖m‖₁ / 2^s ≤ θ₁₃`.
pub fn mat_exp(m: &Matrix) -> Result<Matrix> {
    let n = require_square(m, "matrix exponential input")?;
    if !m.is_finite() {
        return Err(Error::InvalidInput("matrix exponential of non-finite matrix".into()));
    }
    let norm = m.norm1();
    let squarings = if norm > THETA13 {
        (norm / THETA13).log2().ceil().max(0.0) as i32
    } else {
        0
    };
    let a = if squarings > 0 {
        m.scale(2f64.powi(-squarings))
    } else {
        m.clone()
    };

    let b = &PADE13;
    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;

    let mut u_inner = a6.axpby(b[13], &a4, b[11]).axpby(1.0, &a2, b[9]);
    u_inner = &a6 * &u_inner;
    let mut u_tail = a6.axpby(b[7], &a4, b[5]).axpby(1.0, &a2, b[3]);
    u_tail.add_scaled_identity(b[1]);
    let u = &a * &(&u_inner + &u_tail);

    let mut v_inner = a6.axpby(b[12], &a4, b[10]).axpby(1.0, &a2, b[8]);
    v_inner = &a6 * &v_inner;
    let mut v_tail = a6.axpby(b[6], &a4, b[4]).axpby(1.0, &a2, b[2]);
    v_tail.add_scaled_identity(b[0]);
    let v = &v_inner + &v_tail;

    let p = &v + &u;
    let q = &v - &u;
    let mut r =
        solve_linear(&q, &p).map_err(|_| Error::Internal(format!("Padé denominator singular for a {n}x{n} input")))?;
    for _ in 0..squarings {
        r = &r * &r;
    }
    Ok(r)
}

/// LU factorisation with partial pivoting, `P·M = L·U`, stored compactly.
#[derive(Debug, Clone)]
pub struct LuDecomposition {
    lu: Matrix,
    perm: Vec<usize>,
}

impl LuDecomposition {
    /// Factorises `m`. A pivot that is zero, or negligible against the
    /// largest entry of its original row, is reported as singular.
    pub fn new(m: &Matrix) -> Result<Self> {
        let n = require_square(m, "LU input")?;
        if !m.is_finite() {
            return Err(Error::InvalidInput("LU of non-finite matrix".into()));
        }
        let row_scale: Vec<f64> = (0..n)
            .map(|i| m.row(i).iter().fold(0.0f64, |a, v| a.max(v.abs())))
            .collect();
        let mut lu = m.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let tiny = f64::EPSILON * n as f64;
        for k in 0..n {
            let (pivot_row, pivot_abs) =
                (k..n)
                    .map(|i| (i, lu[(i, k)].abs()))
                    .fold((k, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
            if pivot_abs == 0.0 || pivot_abs <= tiny * row_scale[perm[pivot_row]] {
                return Err(Error::SingularMatrix);
            }
            if pivot_row != k {
                perm.swap(k, pivot_row);
                for j in 0..n {
                    lu.data.swap(k * n + j, pivot_row * n + j);
                }
            }
            let pivot = lu[(k, k)];
            for i in (k + 1)..n {
                let factor = lu[(i, k)] / pivot;
                lu[(i, k)] = factor;
                if factor != 0.0 {
                    for j in (k + 1)..n {
                        lu[(i, j)] -= factor * lu[(k, j)];
                    }
                }
            }
        }
        Ok(Self { lu, perm })
    }

    /// Solves `M X = rhs` for every column of `rhs`.
    pub fn solve(&self, rhs: &Matrix) -> Result<Matrix> {
        let n = self.lu.rows;
        if rhs.rows != n {
            return Err(Error::InvalidInput(format!(
                "right-hand side has {} rows, system has order {n}",
                rhs.rows
            )));
        }
        let cols = rhs.cols;
        let mut x = Matrix::zeros(n, cols);
        for i in 0..n {
            x.data[i * cols..(i + 1) * cols].copy_from_slice(rhs.row(self.perm[i]));
        }
        for c in 0..cols {
            for i in 1..n {
                let mut acc = x[(i, c)];
                for k in 0..i {
                    acc -= self.lu[(i, k)] * x[(k, c)];
                }
                x[(i, c)] = acc;
            }
            for i in (0..n).rev() {
                let mut acc = x[(i, c)];
                for k in (i + 1)..n {
                    acc -= self.lu[(i, k)] * x[(k, c)];
                }
                x[(i, c)] = acc / self.lu[(i, i)];
            }
        }
        Ok(x)
    }
}

/// Solves `m · X = rhs` without forming an explicit inverse.
pub fn solve_linear(m: &Matrix, rhs: &Matrix) -> Result<Matrix> {
    if !rhs.is_finite() {
        return Err(Error::InvalidInput("right-hand side has non-finite entries".into()));
    }
    LuDecomposition::new(m)?.solve(rhs)
}

/// Integrates `dP/dt = A P + P Aᵀ + Q` from `P(0) = p0` to `t` with classical
/// fourth-order Runge-Kutta, symmetrising after every step.
///
/// Test oracle only; the pricing paths never call it.
pub fn integrate_lyapunov_ode(a: &Matrix, q: &Matrix, p0: &Matrix, t: f64, steps: usize) -> Result<Matrix> {
    let n = require_square(a, "drift matrix")?;
    for (m, name) in [(q, "diffusion term"), (p0, "initial covariance")] {
        if m.order() != Some(n) {
            return Err(Error::InvalidInput(format!("{name} must be {n}x{n}")));
        }
    }
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::InvalidInput(format!(
            "horizon must be finite and non-negative, got {t}"
        )));
    }
    if steps == 0 {
        return Err(Error::InvalidInput("at least one integration step is required".into()));
    }
    let mut p = p0.symmetrized();
    if t == 0.0 {
        return Ok(p);
    }
    let at = a.transpose();
    let rhs = |p: &Matrix| -> Matrix {
        let ap = a * p;
        let pat = p * &at;
        &(&ap + &pat) + q
    };
    let h = t / steps as f64;
    for _ in 0..steps {
        let k1 = rhs(&p);
        let k2 = rhs(&p.axpby(1.0, &k1, 0.5 * h));
        let k3 = rhs(&p.axpby(1.0, &k2, 0.5 * h));
        let k4 = rhs(&p.axpby(1.0, &k3, h));
        let incr = k1.axpby(1.0, &k2, 2.0).axpby(1.0, &k3, 2.0).axpby(1.0, &k4, 1.0);
        p = p.axpby(1.0, &incr, h / 6.0).symmetrized();
    }
    Ok(p)
}
