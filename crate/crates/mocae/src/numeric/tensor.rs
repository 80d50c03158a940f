use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense vector of f64 values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor1 {
    pub data: Vec<f64>,
}

/// Dense row-major matrix of f64 values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor2 {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor1 {
    pub fn new(data: Vec<f64>) -> Self {
        Tensor1 { data }
    }

    pub fn zeros(len: usize) -> Self {
        Tensor1 { data: vec![0.0; len] }
    }

    pub fn filled(len: usize, value: f64) -> Self {
        Tensor1 { data: vec![value; len] }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dot(&self, other: &Tensor1) -> Result<f64> {
        if self.len() != other.len() {
            return Err(Error::Shape(format!(
                "dot: lengths {} vs {}",
                self.len(),
                other.len()
            )));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a * b)
            .sum())
    }

    pub fn add(&self, other: &Tensor1) -> Result<Tensor1> {
        if self.len() != other.len() {
            return Err(Error::Shape(format!(
                "add: lengths {} vs {}",
                self.len(),
                other.len()
            )));
        }
        Ok(Tensor1::new(
            self.data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a + b)
                .collect(),
        ))
    }

    pub fn scale(&self, c: f64) -> Tensor1 {
        Tensor1::new(self.data.iter().map(|v| v * c).collect())
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Index of the largest component; first occurrence wins ties.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, v) in self.data.iter().enumerate() {
            if *v > self.data[best] {
                best = i;
            }
        }
        best
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

impl Tensor2 {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "Tensor2: data length {} != {}x{}",
                data.len(),
                rows,
                cols
            )));
        }
        Ok(Tensor2 { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor2 {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Tensor2::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Matrix-vector product.
    pub fn matvec(&self, x: &Tensor1) -> Result<Tensor1> {
        if self.cols != x.len() {
            return Err(Error::Shape(format!(
                "matvec: matrix {}x{} vs vector {}",
                self.rows,
                self.cols,
                x.len()
            )));
        }
        let mut out = vec![0.0; self.rows];
        for r in 0..self.rows {
            let row = self.row(r);
            let mut acc = 0.0;
            for (a, b) in row.iter().zip(&x.data) {
                acc += a * b;
            }
            out[r] = acc;
        }
        Ok(Tensor1::new(out))
    }

    /// Transposed matrix-vector product: self^T · x.
    pub fn matvec_t(&self, x: &Tensor1) -> Result<Tensor1> {
        if self.rows != x.len() {
            return Err(Error::Shape(format!(
                "matvec_t: matrix {}x{} vs vector {}",
                self.rows,
                self.cols,
                x.len()
            )));
        }
        let mut out = vec![0.0; self.cols];
        for r in 0..self.rows {
            let xv = x.data[r];
            let row = self.row(r);
            for (o, a) in out.iter_mut().zip(row) {
                *o += a * xv;
            }
        }
        Ok(Tensor1::new(out))
    }

    /// Dense matrix product self · other.
    pub fn matmul(&self, other: &Tensor2) -> Result<Tensor2> {
        if self.cols != other.rows {
            return Err(Error::Shape(format!(
                "matmul: {}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Tensor2::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(r, k);
                if a == 0.0 {
                    continue;
                }
                let orow = other.row(k);
                let dst = &mut out.data[r * other.cols..(r + 1) * other.cols];
                for (d, b) in dst.iter_mut().zip(orow) {
                    *d += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn add(&self, other: &Tensor2) -> Result<Tensor2> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::Shape(format!(
                "add: {}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(Tensor2 {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a + b)
                .collect(),
        })
    }

    pub fn scale(&self, c: f64) -> Tensor2 {
        Tensor2 {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * c).collect(),
        }
    }

    pub fn neg(&self) -> Tensor2 {
        self.scale(-1.0)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Frobenius inner product with another matrix of the same shape.
    pub fn frobenius_dot(&self, other: &Tensor2) -> Result<f64> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::Shape(format!(
                "frobenius_dot: {}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a * b)
            .sum())
    }
}

/// Outer product a·b^T as a (a.len x b.len) matrix.
pub fn outer(a: &Tensor1, b: &Tensor1) -> Tensor2 {
    let mut out = Tensor2::zeros(a.len(), b.len());
    for r in 0..a.len() {
        let av = a.data[r];
        let dst = &mut out.data[r * b.len()..(r + 1) * b.len()];
        for (d, bv) in dst.iter_mut().zip(&b.data) {
            *d = av * bv;
        }
    }
    out
}
