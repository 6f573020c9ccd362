//! Dense row-major matrices and the reconstruction metrics built on them.
//!
//! Everything is `f64` with plain left-to-right accumulation. Shapes are small
//! (a few thousand rows, a few hundred columns at most), so there is no sparse
//! or blocked path.

use crate::error::{Error, Result};

/// Dense real matrix stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

/// Dense matrix whose elements are exactly 0 or 1.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMatrix {
    rows: usize,
    cols: usize,
    data: Vec<u8>,
}

fn check_shape(op: &'static str, rows: usize, cols: usize, len: usize) -> Result<()> {
    if rows == 0 || cols == 0 {
        return Err(Error::dim(op, format!("shape {rows}x{cols} has a zero extent")));
    }
    if rows.checked_mul(cols) != Some(len) {
        return Err(Error::dim(
            op,
            format!("{len} elements cannot fill a {rows}x{cols} matrix"),
        ));
    }
    Ok(())
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        check_shape("Matrix::new", rows, cols, data.len())?;
        Ok(Matrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "matrix extents must be positive");
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(size: usize) -> Self {
        let mut m = Matrix::zeros(size, size);
        for i in 0..size {
            m.data[i * size + i] = 1.0;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(rows > 0 && cols > 0, "matrix extents must be positive");
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Matrix { rows, cols, data }
    }

    /// Builds a matrix from equally long rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::dim("Matrix::from_rows", "ragged rows"));
        }
        Matrix::new(rows.len(), cols, rows.concat())
    }

    /// Builds a matrix whose columns are the given vectors.
    pub fn from_columns(columns: &[Vec<f64>]) -> Result<Self> {
        let rows = columns.first().map_or(0, Vec::len);
        if columns.iter().any(|c| c.len() != rows) {
            return Err(Error::dim("Matrix::from_columns", "ragged columns"));
        }
        let cols = columns.len();
        check_shape("Matrix::from_columns", rows, cols, rows * cols)?;
        Ok(Matrix::from_fn(rows, cols, |r, c| columns[c][r]))
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.data[row * self.cols + col] = value;
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.data[row * self.cols..(row + 1) * self.cols]
    }

    pub fn column(&self, col: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, col)).collect()
    }

    pub fn set_column(&mut self, col: usize, values: &[f64]) {
        assert_eq!(values.len(), self.rows);
        for (r, &v) in values.iter().enumerate() {
            self.set(r, col, v);
        }
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |r, c| self.get(c, r))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn is_nonnegative(&self) -> bool {
        self.data.iter().all(|&v| v >= 0.0)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Squared Frobenius norm.
    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }
}

impl BinaryMatrix {
    /// Rejects any element that is not 0 or 1.
    pub fn new(rows: usize, cols: usize, data: Vec<u8>) -> Result<Self> {
        check_shape("BinaryMatrix::new", rows, cols, data.len())?;
        if let Some(pos) = data.iter().position(|&b| b > 1) {
            return Err(Error::NotBinary {
                row: pos / cols,
                col: pos % cols,
                value: data[pos] as f64,
            });
        }
        Ok(BinaryMatrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "matrix extents must be positive");
        BinaryMatrix {
            rows,
            cols,
            data: vec![0; rows * cols],
        }
    }

    pub fn identity(size: usize) -> Self {
        let mut m = BinaryMatrix::zeros(size, size);
        for i in 0..size {
            m.data[i * size + i] = 1;
        }
        m
    }

    /// Converts a real matrix, requiring every element to be exactly 0.0 or 1.0.
    pub fn from_real(m: &Matrix) -> Result<Self> {
        let mut data = Vec::with_capacity(m.data.len());
        for (pos, &v) in m.data.iter().enumerate() {
            if v == 0.0 {
                data.push(0);
            } else if v == 1.0 {
                data.push(1);
            } else {
                return Err(Error::NotBinary {
                    row: pos / m.cols,
                    col: pos % m.cols,
                    value: v,
                });
            }
        }
        Ok(BinaryMatrix {
            rows: m.rows,
            cols: m.cols,
            data,
        })
    }

    /// Builds a matrix whose columns are the given bit vectors.
    pub fn from_columns(columns: &[Vec<u8>]) -> Result<Self> {
        let rows = columns.first().map_or(0, Vec::len);
        if columns.iter().any(|c| c.len() != rows) {
            return Err(Error::dim("BinaryMatrix::from_columns", "ragged columns"));
        }
        let cols = columns.len();
        let mut data = vec![0u8; rows * cols];
        for (c, col) in columns.iter().enumerate() {
            for (r, &b) in col.iter().enumerate() {
                data[r * cols + c] = b;
            }
        }
        BinaryMatrix::new(rows, cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.data[row * self.cols + col]
    }

    pub fn column(&self, col: usize) -> Vec<u8> {
        (0..self.rows).map(|r| self.get(r, col)).collect()
    }

    pub fn set_column(&mut self, col: usize, bits: &[u8]) -> Result<()> {
        if bits.len() != self.rows {
            return Err(Error::dim(
                "BinaryMatrix::set_column",
                format!("column of length {} for {} rows", bits.len(), self.rows),
            ));
        }
        if let Some(r) = bits.iter().position(|&b| b > 1) {
            return Err(Error::NotBinary {
                row: r,
                col,
                value: bits[r] as f64,
            });
        }
        for (r, &b) in bits.iter().enumerate() {
            self.data[r * self.cols + col] = b;
        }
        Ok(())
    }

    /// Promotes to a real matrix with entries 0.0 / 1.0.
    pub fn to_real(&self) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&b| b as f64).collect(),
        }
    }

    /// Fraction of ones.
    pub fn density(&self) -> f64 {
        self.data.iter().map(|&b| b as usize).sum::<usize>() as f64 / self.data.len() as f64
    }
}

fn same_shape(op: &'static str, a: &Matrix, b: &Matrix) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::dim(
            op,
            format!("{}x{} vs {}x{}", a.rows, a.cols, b.rows, b.cols),
        ));
    }
    Ok(())
}

/// `sqrt(sum_ij (a_ij - b_ij)^2)`.
pub fn frobenius_distance(a: &Matrix, b: &Matrix) -> Result<f64> {
    same_shape("frobenius_distance", a, b)?;
    let mut acc = 0.0;
    for (x, y) in a.data.iter().zip(&b.data) {
        let d = x - y;
        acc += d * d;
    }
    Ok(acc.sqrt())
}

/// Matrix product `a * b`.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(Error::dim(
            "matmul",
            format!("{}x{} times {}x{}", a.rows, a.cols, b.rows, b.cols),
        ));
    }
    let mut out = Matrix::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        let out_row = &mut out.data[i * b.cols..(i + 1) * b.cols];
        for (p, &aip) in a.row(i).iter().enumerate() {
            if aip == 0.0 {
                continue;
            }
            for (o, &bpj) in out_row.iter_mut().zip(b.row(p)) {
                *o += aip * bpj;
            }
        }
    }
    Ok(out)
}

/// Matrix product with a binary right operand promoted to {0.0, 1.0}.
pub fn matmul_binary(a: &Matrix, b: &BinaryMatrix) -> Result<Matrix> {
    matmul(a, &b.to_real())
}

/// `a * b^T` without materialising the transpose.
pub fn matmul_transpose_b(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.cols {
        return Err(Error::dim(
            "matmul_transpose_b",
            format!("{}x{} times ({}x{})^T", a.rows, a.cols, b.rows, b.cols),
        ));
    }
    Ok(Matrix::from_fn(a.rows, b.rows, |i, j| dot(a.row(i), b.row(j))))
}

pub(crate) fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

/// RMSE between column `col` of `v` and of `r`, averaged over the rows.
pub fn column_rmse(v: &Matrix, r: &Matrix, col: usize) -> Result<f64> {
    same_shape("column_rmse", v, r)?;
    if col >= v.cols {
        return Err(Error::Index {
            index: col,
            len: v.cols,
        });
    }
    let mut acc = 0.0;
    for row in 0..v.rows {
        let d = v.get(row, col) - r.get(row, col);
        acc += d * d;
    }
    Ok((acc / v.rows as f64).sqrt())
}

/// Mean of [`column_rmse`] over every column.
pub fn mean_rmse(v: &Matrix, r: &Matrix) -> Result<f64> {
    same_shape("mean_rmse", v, r)?;
    let mut total = 0.0;
    for col in 0..v.cols {
        total += column_rmse(v, r, col)?;
    }
    Ok(total / v.cols as f64)
}
