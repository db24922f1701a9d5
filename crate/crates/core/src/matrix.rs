//! Dense and sparse matrices with elimination-based determinants and solves.

use crate::scalar::Scalar;
use std::ops::{Index, IndexMut};

#[derive(Clone, Debug, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn from_rows(rows: Vec<Vec<T>>) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |v| v.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend(row);
        }
        Matrix { rows: r, cols: c, data }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
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

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)].clone())
    }

    pub fn map<U: Scalar>(&self, f: impl Fn(&T) -> U) -> Matrix<U> {
        Matrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(f).collect() }
    }

    pub fn mul(&self, other: &Matrix<T>) -> Matrix<T> {
        assert_eq!(self.cols, other.rows, "dimension mismatch");
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = &self[(i, k)];
                if a.is_zero() {
                    continue;
                }
                for j in 0..other.cols {
                    let prod = a.clone() * other[(k, j)].clone();
                    let cell: &mut T = &mut out[(i, j)];
                    *cell = cell.clone() + prod;
                }
            }
        }
        out
    }

    pub fn mul_vec(&self, v: &[T]) -> Vec<T> {
        assert_eq!(self.cols, v.len());
        (0..self.rows)
            .map(|i| {
                self.row(i)
                    .iter()
                    .zip(v)
                    .fold(T::zero(), |acc, (a, b)| acc + a.clone() * b.clone())
            })
            .collect()
    }

    pub fn sub(&self, other: &Matrix<T>) -> Matrix<T> {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a.clone() - b.clone()).collect(),
        }
    }

    /// Submatrix on the given row and column index lists.
    pub fn select(&self, rows: &[usize], cols: &[usize]) -> Matrix<T> {
        Self::from_fn(rows.len(), cols.len(), |i, j| self[(rows[i], cols[j])].clone())
    }

    /// Determinant: fraction-free Bareiss for exact scalars, partial-pivot LU otherwise.
    pub fn det(&self) -> T {
        assert!(self.is_square(), "determinant of a non-square matrix");
        if T::EXACT {
            self.det_bareiss()
        } else {
            self.det_lu()
        }
    }

    pub fn det_lu(&self) -> T {
        let n = self.rows;
        let mut a = self.clone();
        let mut det = T::one();
        for k in 0..n {
            let p = pivot_row(&a, k);
            let Some(p) = p else { return T::zero() };
            if p != k {
                a.swap_rows(p, k);
                det = -det;
            }
            let pivot = a[(k, k)].clone();
            det = det * pivot.clone();
            for i in k + 1..n {
                if a[(i, k)].is_zero() {
                    continue;
                }
                let f = a[(i, k)].clone() / pivot.clone();
                for j in k + 1..n {
                    let v = a[(i, j)].clone() - f.clone() * a[(k, j)].clone();
                    a[(i, j)] = v;
                }
            }
        }
        det
    }

    pub fn det_bareiss(&self) -> T {
        let n = self.rows;
        if n == 0 {
            return T::one();
        }
        let mut a = self.clone();
        let mut sign = T::one();
        let mut prev = T::one();
        for k in 0..n - 1 {
            let Some(p) = pivot_row(&a, k) else { return T::zero() };
            if p != k {
                a.swap_rows(p, k);
                sign = -sign;
            }
            for i in k + 1..n {
                for j in k + 1..n {
                    let v = (a[(i, j)].clone() * a[(k, k)].clone()
                        - a[(i, k)].clone() * a[(k, j)].clone())
                        / prev.clone();
                    a[(i, j)] = v;
                }
            }
            prev = a[(k, k)].clone();
        }
        sign * a[(n - 1, n - 1)].clone()
    }

    /// Solves `self * X = B`; `None` when singular.
    pub fn solve(&self, b: &Matrix<T>) -> Option<Matrix<T>> {
        assert!(self.is_square());
        assert_eq!(self.rows, b.rows);
        let n = self.rows;
        let m = b.cols;
        let mut a = self.clone();
        let mut x = b.clone();
        for k in 0..n {
            let p = pivot_row(&a, k)?;
            if p != k {
                a.swap_rows(p, k);
                x.swap_rows(p, k);
            }
            let pivot = a[(k, k)].clone();
            for i in 0..n {
                if i == k || a[(i, k)].is_zero() {
                    continue;
                }
                let f = a[(i, k)].clone() / pivot.clone();
                for j in k..n {
                    let v = a[(i, j)].clone() - f.clone() * a[(k, j)].clone();
                    a[(i, j)] = v;
                }
                for j in 0..m {
                    let v = x[(i, j)].clone() - f.clone() * x[(k, j)].clone();
                    x[(i, j)] = v;
                }
            }
        }
        for i in 0..n {
            let d = a[(i, i)].clone();
            for j in 0..m {
                let v = x[(i, j)].clone() / d.clone();
                x[(i, j)] = v;
            }
        }
        Some(x)
    }

    pub fn inverse(&self) -> Option<Matrix<T>> {
        self.solve(&Matrix::identity(self.rows))
    }

    fn swap_rows(&mut self, a: usize, b: usize) {
        if a == b {
            return;
        }
        for j in 0..self.cols {
            self.data.swap(a * self.cols + j, b * self.cols + j);
        }
    }
}

impl Matrix<f64> {
    /// max |entry|.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// (sign, log|det|) via LU.
    pub fn log_det(&self) -> (f64, f64) {
        let n = self.rows;
        let mut a = self.clone();
        let mut sign = 1.0;
        let mut log = 0.0;
        for k in 0..n {
            let Some(p) = pivot_row(&a, k) else { return (0.0, f64::NEG_INFINITY) };
            if p != k {
                a.swap_rows(p, k);
                sign = -sign;
            }
            let pivot = a[(k, k)];
            sign *= pivot.signum();
            log += pivot.abs().ln();
            for i in k + 1..n {
                let f = a[(i, k)] / pivot;
                if f == 0.0 {
                    continue;
                }
                for j in k + 1..n {
                    a[(i, j)] -= f * a[(k, j)];
                }
            }
        }
        (sign, log)
    }
}

fn pivot_row<T: Scalar>(a: &Matrix<T>, k: usize) -> Option<usize> {
    let mut best = None;
    let mut best_mag = 0.0;
    for i in k..a.rows {
        let mag = a[(i, k)].magnitude();
        if mag > best_mag {
            best_mag = mag;
            best = Some(i);
            if T::EXACT {
                break;
            }
        }
    }
    best
}

impl<T> Index<(usize, usize)> for Matrix<T> {
    type Output = T;
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.cols + j]
    }
}

impl<T> IndexMut<(usize, usize)> for Matrix<T> {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.cols + j]
    }
}

/// Compressed sparse row matrix over f64.
#[derive(Clone, Debug)]
pub struct Csr {
    pub n: usize,
    pub indptr: Vec<usize>,
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

impl Csr {
    /// Builds from triplets; duplicate entries are summed.
    pub fn from_triplets(n: usize, mut trip: Vec<(usize, usize, f64)>) -> Self {
        trip.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut indptr = vec![0; n + 1];
        let mut indices = Vec::with_capacity(trip.len());
        let mut values: Vec<f64> = Vec::with_capacity(trip.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, v) in trip {
            if last == Some((i, j)) {
                *values.last_mut().unwrap() += v;
                continue;
            }
            indices.push(j);
            values.push(v);
            indptr[i + 1] += 1;
            last = Some((i, j));
        }
        for i in 0..n {
            indptr[i + 1] += indptr[i];
        }
        Csr { n, indptr, indices, values }
    }

    pub fn mul_vec(&self, x: &[f64], out: &mut [f64]) {
        for i in 0..self.n {
            let mut s = 0.0;
            for k in self.indptr[i]..self.indptr[i + 1] {
                s += self.values[k] * x[self.indices[k]];
            }
            out[i] = s;
        }
    }

    pub fn to_dense(&self) -> Matrix<f64> {
        let mut m = Matrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for k in self.indptr[i]..self.indptr[i + 1] {
                m[(i, self.indices[k])] += self.values[k];
            }
        }
        m
    }

    /// BiCGSTAB with Jacobi preconditioning; returns `None` if the relative
    /// residual does not reach `tol` within `max_iter` iterations.
    pub fn bicgstab(&self, b: &[f64], tol: f64, max_iter: usize) -> Option<Vec<f64>> {
        let n = self.n;
        let diag: Vec<f64> = (0..n)
            .map(|i| {
                (self.indptr[i]..self.indptr[i + 1])
                    .find(|&k| self.indices[k] == i)
                    .map_or(1.0, |k| self.values[k])
            })
            .collect();
        let precond = |v: &[f64], out: &mut [f64]| {
            for i in 0..n {
                out[i] = v[i] / diag[i];
            }
        };
        let bnorm = norm(b).max(f64::MIN_POSITIVE);
        let mut x = vec![0.0; n];
        let mut r = b.to_vec();
        let r0 = r.clone();
        let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
        let mut v = vec![0.0; n];
        let mut p = vec![0.0; n];
        let mut y = vec![0.0; n];
        let mut z = vec![0.0; n];
        let mut s = vec![0.0; n];
        let mut t = vec![0.0; n];
        for _ in 0..max_iter {
            let rho_new = dot(&r0, &r);
            if rho_new == 0.0 {
                break;
            }
            let beta = (rho_new / rho) * (alpha / omega);
            rho = rho_new;
            for i in 0..n {
                p[i] = r[i] + beta * (p[i] - omega * v[i]);
            }
            precond(&p, &mut y);
            self.mul_vec(&y, &mut v);
            alpha = rho / dot(&r0, &v);
            for i in 0..n {
                s[i] = r[i] - alpha * v[i];
            }
            if norm(&s) / bnorm < tol {
                for i in 0..n {
                    x[i] += alpha * y[i];
                }
                return Some(x);
            }
            precond(&s, &mut z);
            self.mul_vec(&z, &mut t);
            omega = dot(&t, &s) / dot(&t, &t);
            for i in 0..n {
                x[i] += alpha * y[i] + omega * z[i];
                r[i] = s[i] - omega * t[i];
            }
            if norm(&r) / bnorm < tol {
                return Some(x);
            }
        }
        let mut ax = vec![0.0; n];
        self.mul_vec(&x, &mut ax);
        let res: f64 = ax.iter().zip(b).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        (res / bnorm < tol).then_some(x)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
