use std::fmt;

use super::NumericsError;

/// Dense row-major `f64` array.
///
/// Every operation in this crate works on rank-2 views: a rank-1 tensor of
/// length `n` is read as `1 x n` and a rank-0 tensor as `1 x 1`. Higher
/// ranks are not supported.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    // Right-aligned: rank 1 keeps `[1, n]`, rank 0 keeps `[1, 1]`.
    dims: [usize; 2],
    rank: usize,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, NumericsError> {
        let expected: usize = shape.iter().product();
        if shape.len() > 2 || expected != data.len() {
            return Err(NumericsError::Contract(format!(
                "shape {shape:?} needs {expected} values and rank at most 2, got {} values",
                data.len()
            )));
        }
        let mut dims = [1, 1];
        dims[2 - shape.len()..].copy_from_slice(&shape);
        Ok(Self {
            dims,
            rank: shape.len(),
            data,
        })
    }

    /// Same shape as `self`, new values.
    pub(crate) fn with_data(&self, data: Vec<f64>) -> Tensor {
        debug_assert_eq!(self.data.len(), data.len());
        Tensor {
            dims: self.dims,
            rank: self.rank,
            data,
        }
    }

    fn with_dims(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(rows * cols, data.len());
        Self {
            dims: [rows, cols],
            rank: 2,
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, NumericsError> {
        Self::new(vec![rows, cols], data)
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::with_dims(rows, cols, vec![0.0; rows * cols])
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self::with_dims(rows, cols, vec![value; rows * cols])
    }

    pub fn zeros_like(other: &Tensor) -> Self {
        Self {
            dims: other.dims,
            rank: other.rank,
            data: vec![0.0; other.data.len()],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Self::with_dims(1, 1, vec![v])
    }

    pub fn row(values: &[f64]) -> Self {
        Self::with_dims(1, values.len(), values.to_vec())
    }

    pub fn column(values: &[f64]) -> Self {
        Self::with_dims(values.len(), 1, values.to_vec())
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, NumericsError> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(NumericsError::Contract("ragged rows".into()));
        }
        Ok(Self::with_dims(rows.len(), cols, rows.iter().flatten().copied().collect()))
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(n, n);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.dims[2 - self.rank..]
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.dims[0]
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.dims[1]
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.dims[0], self.dims[1])
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
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

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols() + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        let cols = self.cols();
        self.data[r * cols + c] = v;
    }

    pub fn row_slice(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    /// The single value of a `1 x 1` tensor.
    pub fn item(&self) -> Result<f64, NumericsError> {
        if self.data.len() != 1 {
            return Err(NumericsError::Contract(format!(
                "expected a scalar, got shape {:?}",
                self.shape()
            )));
        }
        Ok(self.data[0])
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn sq_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            dims: self.dims,
            rank: self.rank,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale_in_place(&mut self, k: f64) {
        self.data.iter_mut().for_each(|v| *v *= k);
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn transpose(&self) -> Tensor {
        let (r, c) = self.dims();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Tensor::with_dims(c, r, out)
    }

    /// Plain `self * rhs` matrix product.
    pub fn matmul(&self, rhs: &Tensor) -> Result<Tensor, NumericsError> {
        let (m, k) = self.dims();
        let (k2, n) = rhs.dims();
        if k != k2 {
            return Err(NumericsError::shape("matmul", self, rhs));
        }
        let mut out = vec![0.0; m * n];
        matmul_into(&self.data, &rhs.data, &mut out, m, k, n);
        Ok(Tensor::with_dims(m, n, out))
    }

    pub(crate) fn reshaped(mut self, rows: usize, cols: usize) -> Tensor {
        debug_assert_eq!(rows * cols, self.data.len());
        self.dims = [rows, cols];
        self.rank = 2;
        self
    }
}

/// `out += a (m x k) * b (k x n)`.
pub(crate) fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}", self.shape())?;
        if self.data.len() <= 16 {
            write!(f, "{:?}", self.data)?;
        }
        Ok(())
    }
}
