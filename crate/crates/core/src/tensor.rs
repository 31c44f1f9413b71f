//! Dense row-major matrices and the elementwise functions used by the models.

use std::fmt;
use std::ops::{Index, IndexMut, Range};

use crate::error::{shape_check, Error, Result};
use crate::scalar::Real;

/// Row-major dense matrix.
#[derive(Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: fmt::Debug> fmt::Debug for Matrix<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Matrix {}x{} ", self.rows, self.cols)?;
        f.debug_list().entries(self.data.iter().take(16)).finish()
    }
}

impl<T: Real> Matrix<T> {
    /// Builds a matrix from row-major data, rejecting a wrong length or non-finite entries.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dataset(format!(
                "{} values for a {}x{} matrix",
                data.len(),
                rows,
                cols
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Dataset("non-finite matrix entry".into()));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Dataset("ragged rows".into()));
        }
        Self::from_vec(rows.len(), cols, rows.concat())
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: T) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Converts between scalar types (e.g. `f64` to `f32`).
    pub fn cast<U: Real>(&self) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }

    pub fn matmul(&self, rhs: &Self) -> Result<Self> {
        shape_check("matmul", self.cols == rhs.rows, self.shape(), rhs.shape())?;
        let (m, d, k) = (self.rows, self.cols, rhs.cols);
        let mut out = vec![T::zero(); m * k];
        for i in 0..m {
            let out_row = &mut out[i * k..(i + 1) * k];
            for p in 0..d {
                let a = self.data[i * d + p];
                if a == T::zero() {
                    continue;
                }
                let rhs_row = &rhs.data[p * k..(p + 1) * k];
                for (o, &b) in out_row.iter_mut().zip(rhs_row) {
                    *o += a * b;
                }
            }
        }
        Ok(Self { rows: m, cols: k, data: out })
    }

    /// `selfᵀ · rhs` without materialising the transpose.
    pub fn t_matmul(&self, rhs: &Self) -> Result<Self> {
        shape_check("t_matmul", self.rows == rhs.rows, self.shape(), rhs.shape())?;
        let (d, k) = (self.cols, rhs.cols);
        let mut out = vec![T::zero(); d * k];
        for r in 0..self.rows {
            let a_row = self.row(r);
            let b_row = rhs.row(r);
            for (p, &a) in a_row.iter().enumerate() {
                if a == T::zero() {
                    continue;
                }
                let out_row = &mut out[p * k..(p + 1) * k];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(Self { rows: d, cols: k, data: out })
    }

    /// `self · rhsᵀ`.
    pub fn matmul_t(&self, rhs: &Self) -> Result<Self> {
        shape_check("matmul_t", self.cols == rhs.cols, self.shape(), rhs.shape())?;
        let mut out = Vec::with_capacity(self.rows * rhs.rows);
        for i in 0..self.rows {
            let a = self.row(i);
            for j in 0..rhs.rows {
                out.push(a.iter().zip(rhs.row(j)).map(|(&x, &y)| x * y).sum());
            }
        }
        Ok(Self {
            rows: self.rows,
            cols: rhs.rows,
            data: out,
        })
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    fn zip_with(&self, rhs: &Self, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Self> {
        shape_check(op, self.shape() == rhs.shape(), self.shape(), rhs.shape())?;
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn add(&self, rhs: &Self) -> Result<Self> {
        self.zip_with(rhs, "add", |a, b| a + b)
    }

    pub fn sub(&self, rhs: &Self) -> Result<Self> {
        self.zip_with(rhs, "sub", |a, b| a - b)
    }

    pub fn hadamard(&self, rhs: &Self) -> Result<Self> {
        self.zip_with(rhs, "hadamard", |a, b| a * b)
    }

    pub fn add_assign(&mut self, rhs: &Self) -> Result<()> {
        shape_check("add_assign", self.shape() == rhs.shape(), self.shape(), rhs.shape())?;
        self.data.iter_mut().zip(&rhs.data).for_each(|(a, &b)| *a += b);
        Ok(())
    }

    /// `self -= factor · rhs`, the shape of every gradient step.
    pub fn sub_scaled_assign(&mut self, factor: T, rhs: &Self) -> Result<()> {
        shape_check("sub_scaled", self.shape() == rhs.shape(), self.shape(), rhs.shape())?;
        self.data
            .iter_mut()
            .zip(&rhs.data)
            .for_each(|(a, &b)| *a -= factor * b);
        Ok(())
    }

    pub fn scale(&self, factor: T) -> Self {
        self.map(|v| v * factor)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Adds a `1 × cols` row vector to every row.
    pub fn add_row(&self, row: &Self) -> Result<Self> {
        shape_check(
            "add_row",
            row.rows == 1 && row.cols == self.cols,
            self.shape(),
            row.shape(),
        )?;
        let mut out = self.clone();
        for chunk in out.data.chunks_mut(self.cols.max(1)) {
            chunk.iter_mut().zip(&row.data).for_each(|(a, &b)| *a += b);
        }
        Ok(out)
    }

    /// Column sums as a `1 × cols` row.
    pub fn col_sums(&self) -> Self {
        let mut out = Self::zeros(1, self.cols);
        for chunk in self.data.chunks(self.cols.max(1)) {
            out.data.iter_mut().zip(chunk).for_each(|(a, &b)| *a += b);
        }
        out
    }

    /// Gathers the given rows, in order, into a new matrix.
    pub fn row_slice(&self, indices: &[usize]) -> Result<Self> {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            if i >= self.rows {
                return Err(Error::ShapeMismatch {
                    op: "row_slice",
                    left: self.shape(),
                    right: (i, 0),
                });
            }
            data.extend_from_slice(self.row(i));
        }
        Ok(Self {
            rows: indices.len(),
            cols: self.cols,
            data,
        })
    }

    pub fn row_range(&self, range: Range<usize>) -> Result<Self> {
        let idx: Vec<usize> = range.collect();
        self.row_slice(&idx)
    }

    pub fn col_range(&self, range: Range<usize>) -> Result<Self> {
        if range.end > self.cols || range.start > range.end {
            return Err(Error::ShapeMismatch {
                op: "col_range",
                left: self.shape(),
                right: (range.start, range.end),
            });
        }
        Ok(Self::from_fn(self.rows, range.len(), |i, j| {
            self[(i, range.start + j)]
        }))
    }

    /// Stacks blocks on top of each other (the vertical concatenation of weight slices).
    pub fn vstack(blocks: &[Self]) -> Result<Self> {
        let cols = blocks.first().map_or(0, |b| b.cols);
        let mut data = Vec::new();
        let mut rows = 0;
        for b in blocks {
            shape_check("vstack", b.cols == cols, (rows, cols), b.shape())?;
            data.extend_from_slice(&b.data);
            rows += b.rows;
        }
        Ok(Self { rows, cols, data })
    }

    /// Places blocks side by side (the feature concatenation of data slices).
    pub fn hstack(blocks: &[Self]) -> Result<Self> {
        let rows = blocks.first().map_or(0, |b| b.rows);
        for b in blocks {
            shape_check("hstack", b.rows == rows, (rows, 0), b.shape())?;
        }
        let cols = blocks.iter().map(|b| b.cols).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for b in blocks {
                data.extend_from_slice(b.row(i));
            }
        }
        Ok(Self { rows, cols, data })
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    pub fn max_abs_diff(&self, rhs: &Self) -> Result<T> {
        shape_check("max_abs_diff", self.shape() == rhs.shape(), self.shape(), rhs.shape())?;
        Ok(self
            .data
            .iter()
            .zip(&rhs.data)
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs())))
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    /// Index of the largest entry of each row.
    pub fn argmax_rows(&self) -> Vec<usize> {
        (0..self.rows)
            .map(|i| {
                self.row(i)
                    .iter()
                    .enumerate()
                    .fold((0, T::neg_infinity()), |(bi, bv), (j, &v)| {
                        if v > bv {
                            (j, v)
                        } else {
                            (bi, bv)
                        }
                    })
                    .0
            })
            .collect()
    }
}

impl<T> Index<(usize, usize)> for Matrix<T> {
    type Output = T;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &T {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl<T> IndexMut<(usize, usize)> for Matrix<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

#[inline]
pub fn sigmoid_scalar<T: Real>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

pub fn sigmoid<T: Real>(z: &Matrix<T>) -> Matrix<T> {
    z.map(sigmoid_scalar)
}

pub fn sigmoid_prime<T: Real>(z: &Matrix<T>) -> Matrix<T> {
    z.map(|v| {
        let s = sigmoid_scalar(v);
        s * (T::one() - s)
    })
}

pub fn tanh<T: Real>(z: &Matrix<T>) -> Matrix<T> {
    z.map(T::tanh)
}

pub fn tanh_prime<T: Real>(z: &Matrix<T>) -> Matrix<T> {
    z.map(|v| {
        let t = v.tanh();
        T::one() - t * t
    })
}

/// Row-wise softmax with per-row max subtraction.
pub fn softmax_rows<T: Real>(z: &Matrix<T>) -> Matrix<T> {
    let mut out = z.clone();
    let cols = z.cols().max(1);
    for row in out.as_mut_slice().chunks_mut(cols) {
        let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        let mut total = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    out
}

/// `ln(1 + e^z)` without overflow.
#[inline]
pub fn softplus<T: Real>(z: T) -> T {
    if z > T::zero() {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}
