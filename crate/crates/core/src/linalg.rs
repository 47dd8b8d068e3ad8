//! Dense row-major kernels.
//!
//! Every reduction runs in a fixed order: in the products below each output
//! element accumulates its terms with the shared index ascending, starting
//! from the value already present in the accumulator. Results are therefore
//! bit-identical to a naive triple loop and across repeated calls.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Vector {
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dim("Matrix::from_vec", (rows, cols), (data.len(), 1)));
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Builds a matrix from nested rows; panics on ragged input.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.as_ref().len(), cols, "ragged rows");
            data.extend_from_slice(r.as_ref());
        }
        Matrix {
            rows: rows.len(),
            cols,
            data,
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
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
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.cols + j] = value;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        t
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|x| *x = value);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Adds `v[i]` to every entry of row `i`.
    pub fn add_column_broadcast(&mut self, v: &Vector) -> Result<()> {
        if v.len() != self.rows {
            return Err(Error::dim(
                "add_column_broadcast",
                self.shape(),
                (v.len(), 1),
            ));
        }
        for (i, &b) in v.as_slice().iter().enumerate() {
            for x in self.row_mut(i) {
                *x += b;
            }
        }
        Ok(())
    }

    /// Row sums, accumulated left to right.
    pub fn sum_columns(&self) -> Vector {
        Vector::from_vec((0..self.rows).map(|i| self.row(i).iter().sum()).collect())
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    fn check_same_shape(&self, other: &Matrix, op: &'static str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::dim(op, self.shape(), other.shape()));
        }
        Ok(())
    }
}

impl Vector {
    pub fn zeros(len: usize) -> Self {
        Vector {
            data: vec![0.0; len],
        }
    }

    pub fn filled(len: usize, value: f64) -> Self {
        Vector {
            data: vec![value; len],
        }
    }

    pub fn from_vec(data: Vec<f64>) -> Self {
        Vector { data }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// The vector as an `n x 1` column.
    pub fn to_column(&self) -> Matrix {
        Matrix {
            rows: self.data.len(),
            cols: 1,
            data: self.data.clone(),
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `acc + a * b`.
pub fn gemm(a: &Matrix, b: &Matrix, mut acc: Matrix) -> Result<Matrix> {
    gemm_into(a, b, &mut acc)?;
    Ok(acc)
}

/// `acc += a * b` in place.
pub fn gemm_into(a: &Matrix, b: &Matrix, acc: &mut Matrix) -> Result<()> {
    if a.cols != b.rows {
        return Err(Error::dim("gemm", a.shape(), b.shape()));
    }
    if acc.shape() != (a.rows, b.cols) {
        return Err(Error::dim("gemm accumulator", acc.shape(), (a.rows, b.cols)));
    }
    let n = b.cols;
    for i in 0..a.rows {
        let out = &mut acc.data[i * n..(i + 1) * n];
        for k in 0..a.cols {
            let aik = a.data[i * a.cols + k];
            let b_row = &b.data[k * n..(k + 1) * n];
            for (c, &bv) in out.iter_mut().zip(b_row) {
                *c += aik * bv;
            }
        }
    }
    Ok(())
}

/// `acc += a^T * b` in place.
pub fn gemm_tn_into(a: &Matrix, b: &Matrix, acc: &mut Matrix) -> Result<()> {
    if a.rows != b.rows {
        return Err(Error::dim("gemm_tn", a.shape(), b.shape()));
    }
    if acc.shape() != (a.cols, b.cols) {
        return Err(Error::dim("gemm_tn accumulator", acc.shape(), (a.cols, b.cols)));
    }
    let n = b.cols;
    for i in 0..a.cols {
        let out = &mut acc.data[i * n..(i + 1) * n];
        for k in 0..a.rows {
            let aki = a.data[k * a.cols + i];
            let b_row = &b.data[k * n..(k + 1) * n];
            for (c, &bv) in out.iter_mut().zip(b_row) {
                *c += aki * bv;
            }
        }
    }
    Ok(())
}

/// `acc += a * b^T` in place.
pub fn gemm_nt_into(a: &Matrix, b: &Matrix, acc: &mut Matrix) -> Result<()> {
    if a.cols != b.cols {
        return Err(Error::dim("gemm_nt", a.shape(), b.shape()));
    }
    gemm_into(a, &b.transpose(), acc)
}

pub fn hadamard(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    a.check_same_shape(b, "hadamard")?;
    Ok(Matrix {
        rows: a.rows,
        cols: a.cols,
        data: a.data.iter().zip(&b.data).map(|(x, y)| x * y).collect(),
    })
}

pub fn map_sigmoid(a: &Matrix) -> Matrix {
    map(a, sigmoid)
}

pub fn map_tanh(a: &Matrix) -> Matrix {
    map(a, f64::tanh)
}

pub fn map(a: &Matrix, f: impl Fn(f64) -> f64) -> Matrix {
    Matrix {
        rows: a.rows,
        cols: a.cols,
        data: a.data.iter().map(|&x| f(x)).collect(),
    }
}

/// `y + alpha * x`.
pub fn axpy(alpha: f64, x: &Matrix, mut y: Matrix) -> Result<Matrix> {
    axpy_into(alpha, x, &mut y)?;
    Ok(y)
}

pub fn axpy_into(alpha: f64, x: &Matrix, y: &mut Matrix) -> Result<()> {
    y.check_same_shape(x, "axpy")?;
    for (yv, &xv) in y.data.iter_mut().zip(&x.data) {
        *yv += alpha * xv;
    }
    Ok(())
}
