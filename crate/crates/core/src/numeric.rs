//! Dense linear algebra for the small `d x d` blocks of a half-strip walk.
//!
//! Everything here is deliberately plain: Gaussian elimination with partial
//! pivoting, a shifted power iteration for the Perron root, and a direct solve
//! for left stationary vectors. Phase counts stay in the tens, so none of this
//! needs blocking or sparsity.

use std::fmt;
use std::ops::{Add, Index, IndexMut, Mul, Sub};

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Pivots smaller than this are treated as zero.
pub const PIVOT_EPS: f64 = 1e-12;

/// Tolerance on successive Perron-root estimates.
pub const SPECTRAL_TOL: f64 = 1e-12;

/// Iteration budget of the power method.
pub const SPECTRAL_MAX_ITER: usize = 1_000_000;

/// Row-sum tolerance for a matrix to count as stochastic.
pub const STOCHASTIC_TOL: f64 = 1e-9;

/// Dense row-major matrix of finite reals.
#[derive(Clone, PartialEq)]
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

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    /// Builds a matrix from row-major data; `data.len()` must equal `rows * cols`.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::Dimension(format!(
                "{rows}x{cols} matrix needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        if let Some(x) = data.iter().find(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "non-finite matrix entry {x}"
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::Dimension("ragged rows".into()));
        }
        Self::from_vec(r, c, rows.concat())
    }

    pub fn diagonal(values: &[f64]) -> Self {
        let mut m = Self::zeros(values.len(), values.len());
        for (i, v) in values.iter().enumerate() {
            m[(i, i)] = *v;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
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

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
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

    pub fn scale(&self, c: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|x| x * c).collect(),
        }
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.rows).map(|i| self.row(i).iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.cols];
        for i in 0..self.rows {
            for (acc, x) in s.iter_mut().zip(self.row(i)) {
                *acc += x;
            }
        }
        s
    }

    /// Largest absolute entry.
    pub fn norm_max(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    /// Induced infinity norm (largest absolute row sum).
    pub fn norm_inf(&self) -> f64 {
        (0..self.rows)
            .map(|i| self.row(i).iter().map(|x| x.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn is_nonnegative(&self) -> bool {
        self.data.iter().all(|x| *x >= 0.0)
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|x| *x == 0.0)
    }

    /// Largest deviation of a row sum from one.
    pub fn stochastic_defect(&self) -> f64 {
        self.row_sums()
            .iter()
            .fold(0.0, |m, s| m.max((s - 1.0).abs()))
    }

    /// `self * v` for a column vector `v`.
    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, v.len());
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// Permutes rows and columns: `out[(i, j)] = self[(perm[i], perm[j])]`.
    pub fn permute(&self, perm: &[usize]) -> Self {
        assert!(self.is_square() && perm.len() == self.rows);
        let mut out = Self::zeros(self.rows, self.cols);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[(i, j)] = self[(perm[i], perm[j])];
            }
        }
        out
    }

    fn check_same_shape(&self, other: &Matrix) {
        assert_eq!(
            (self.rows, self.cols),
            (other.rows, other.cols),
            "matrix shape mismatch"
        );
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

impl Add for &Matrix {
    type Output = Matrix;

    fn add(self, rhs: &Matrix) -> Matrix {
        self.check_same_shape(rhs);
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&rhs.data)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }
}

impl Sub for &Matrix {
    type Output = Matrix;

    fn sub(self, rhs: &Matrix) -> Matrix {
        self.check_same_shape(rhs);
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&rhs.data)
                .map(|(a, b)| a - b)
                .collect(),
        }
    }
}

impl Mul for &Matrix {
    type Output = Matrix;

    fn mul(self, rhs: &Matrix) -> Matrix {
        assert_eq!(self.cols, rhs.rows, "matrix product shape mismatch");
        let mut out = Matrix::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                let src = rhs.row(k);
                let dst = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
                for (d, b) in dst.iter_mut().zip(src) {
                    *d += a * b;
                }
            }
        }
        out
    }
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.to_rows()).finish()
    }
}

impl Serialize for Matrix {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_rows().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Matrix {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(deserializer)?;
        Matrix::from_rows(&rows).map_err(D::Error::custom)
    }
}

/// Row vector of masses or expected counts. Also used for column vectors such
/// as `u_n`, where the orientation is fixed by the operation applied.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RowVector(pub Vec<f64>);

impl RowVector {
    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    pub fn ones(n: usize) -> Self {
        Self(vec![1.0; n])
    }

    pub fn uniform(n: usize) -> Self {
        Self(vec![1.0 / n as f64; n])
    }

    pub fn unit(n: usize, i: usize) -> Self {
        let mut v = Self::zeros(n);
        v.0[i] = 1.0;
        v
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn sum(&self) -> f64 {
        self.0.iter().sum()
    }

    pub fn dot(&self, col: &[f64]) -> f64 {
        assert_eq!(self.0.len(), col.len());
        self.0.iter().zip(col).map(|(a, b)| a * b).sum()
    }

    /// `self * m`.
    pub fn mul_mat(&self, m: &Matrix) -> RowVector {
        assert_eq!(self.0.len(), m.rows());
        let mut out = vec![0.0; m.cols()];
        for (i, a) in self.0.iter().enumerate() {
            if *a == 0.0 {
                continue;
            }
            for (o, b) in out.iter_mut().zip(m.row(i)) {
                *o += a * b;
            }
        }
        RowVector(out)
    }

    pub fn scale(&self, c: f64) -> RowVector {
        RowVector(self.0.iter().map(|x| x * c).collect())
    }

    pub fn norm_l1(&self) -> f64 {
        self.0.iter().map(|x| x.abs()).sum()
    }

    pub fn max_abs_diff(&self, other: &RowVector) -> f64 {
        assert_eq!(self.len(), other.len());
        self.0
            .iter()
            .zip(&other.0)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn l1_diff(&self, other: &RowVector) -> f64 {
        assert_eq!(self.len(), other.len());
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).abs())
            .sum()
    }

    pub fn is_probability(&self, tol: f64) -> bool {
        self.0.iter().all(|x| *x >= -tol) && (self.sum() - 1.0).abs() <= tol
    }
}

impl Index<usize> for RowVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl fmt::Debug for RowVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

impl From<Vec<f64>> for RowVector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

fn require_square(m: &Matrix, what: &str) -> Result<()> {
    if m.is_square() {
        Ok(())
    } else {
        Err(Error::Dimension(format!(
            "{what} needs a square matrix, got {}x{}",
            m.rows(),
            m.cols()
        )))
    }
}

/// Solves `a * X = b` by Gaussian elimination with partial pivoting.
pub fn solve(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    require_square(a, "solve")?;
    if a.rows() != b.rows() {
        return Err(Error::Dimension(format!(
            "right-hand side has {} rows, system has {}",
            b.rows(),
            a.rows()
        )));
    }
    let n = a.rows();
    let m = b.cols();
    let mut lhs = a.clone();
    let mut rhs = b.clone();

    for col in 0..n {
        let (piv_row, piv_abs) =
            (col..n)
                .map(|r| (r, lhs[(r, col)].abs()))
                .fold(
                    (col, -1.0),
                    |best, cur| if cur.1 > best.1 { cur } else { best },
                );
        if piv_abs < PIVOT_EPS {
            return Err(Error::Singular {
                column: col,
                pivot: piv_abs,
            });
        }
        if piv_row != col {
            for j in 0..n {
                lhs.data.swap(col * n + j, piv_row * n + j);
            }
            for j in 0..m {
                rhs.data.swap(col * m + j, piv_row * m + j);
            }
        }
        let pivot = lhs[(col, col)];
        for r in col + 1..n {
            let factor = lhs[(r, col)] / pivot;
            if factor == 0.0 {
                continue;
            }
            lhs[(r, col)] = 0.0;
            for j in col + 1..n {
                lhs[(r, j)] -= factor * lhs[(col, j)];
            }
            for j in 0..m {
                rhs[(r, j)] -= factor * rhs[(col, j)];
            }
        }
    }

    for col in (0..n).rev() {
        let pivot = lhs[(col, col)];
        for j in 0..m {
            let mut acc = rhs[(col, j)];
            for k in col + 1..n {
                acc -= lhs[(col, k)] * rhs[(k, j)];
            }
            rhs[(col, j)] = acc / pivot;
        }
    }
    Ok(rhs)
}

pub fn invert(m: &Matrix) -> Result<Matrix> {
    require_square(m, "invert")?;
    solve(m, &Matrix::identity(m.rows()))
}

/// Perron root of a nonnegative square matrix.
///
/// Runs the power method on `A + I`, whose Perron root is strictly dominant
/// even when `A` is periodic, then subtracts the shift. Stops when the
/// Collatz-Wielandt bracket closes or when the mean-ratio estimate stops
/// moving.
pub fn spectral_radius(a: &Matrix) -> Result<f64> {
    spectral_radius_with(a, SPECTRAL_TOL, SPECTRAL_MAX_ITER)
}

pub fn spectral_radius_with(a: &Matrix, tol: f64, max_iter: usize) -> Result<f64> {
    require_square(a, "spectral_radius")?;
    if !a.is_nonnegative() {
        return Err(Error::InvalidArgument(
            "spectral_radius expects a nonnegative matrix".into(),
        ));
    }
    let n = a.rows();
    if n == 0 {
        return Ok(0.0);
    }
    let shifted = &Matrix::identity(n) + a;
    let mut x = vec![1.0; n];
    let mut prev = f64::NAN;
    let mut steady = 0;
    let mut estimate = 0.0;
    for iter in 0..max_iter {
        let y = shifted.mul_vec(&x);
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for (yi, xi) in y.iter().zip(&x) {
            let r = yi / xi;
            lo = lo.min(r);
            hi = hi.max(r);
        }
        estimate = y.iter().sum::<f64>() / x.iter().sum::<f64>();
        if hi - lo <= tol {
            return Ok((0.5 * (lo + hi) - 1.0).max(0.0));
        }
        if (estimate - prev).abs() <= tol {
            steady += 1;
            if steady >= 3 {
                return Ok((estimate - 1.0).max(0.0));
            }
        } else {
            steady = 0;
        }
        prev = estimate;
        let top = y.iter().fold(0.0_f64, |m, v| m.max(*v));
        x = y.into_iter().map(|v| v / top).collect();
        if iter + 1 == max_iter {
            break;
        }
    }
    Err(Error::NoConvergence {
        what: "power iteration",
        iterations: max_iter,
        estimate: (estimate - 1.0).max(0.0),
        residual: (estimate - prev).abs(),
    })
}

/// Unique probability vector `pi` with `pi * s = pi`.
pub fn stationary_left_vector(s: &Matrix) -> Result<RowVector> {
    require_square(s, "stationary_left_vector")?;
    let n = s.rows();
    if n == 0 {
        return Err(Error::Dimension("empty matrix".into()));
    }
    if let Some(x) = s.as_slice().iter().find(|x| **x < -STOCHASTIC_TOL) {
        return Err(Error::InvalidArgument(format!(
            "negative transition probability {x}"
        )));
    }
    for (row, sum) in s.row_sums().into_iter().enumerate() {
        if (sum - 1.0).abs() > STOCHASTIC_TOL {
            return Err(Error::NotStochastic { row, sum });
        }
    }

    // (S^T - I) pi^T = 0 with the last equation swapped for sum(pi) = 1.
    let mut system = &s.transpose() - &Matrix::identity(n);
    for j in 0..n {
        system[(n - 1, j)] = 1.0;
    }
    let mut rhs = Matrix::zeros(n, 1);
    rhs[(n - 1, 0)] = 1.0;
    let sol = match solve(&system, &rhs) {
        Ok(sol) => sol,
        Err(Error::Singular { .. }) => return Err(Error::Reducible),
        Err(e) => return Err(e),
    };

    let mut pi: Vec<f64> = sol.as_slice().to_vec();
    if pi.iter().any(|x| *x < -1e-9) {
        return Err(Error::Reducible);
    }
    for x in &mut pi {
        *x = x.max(0.0);
    }
    let total: f64 = pi.iter().sum();
    Ok(RowVector(pi.into_iter().map(|x| x / total).collect()))
}
