//! Dense row-major kernels: vectors, matrices, and the order-3 / order-4
//! contractions used by the matrix-state recurrent cell.
//!
//! Everything is `f64`. Constructors that take caller data reject shape
//! mismatches and non-finite entries; the arithmetic helpers assume both.

use nalgebra::DMatrix;

use crate::error::{mismatch, Error, Result};

/// Condition number above which a square matrix is treated as singular.
pub const CONDITION_THRESHOLD: f64 = 1e12;
/// Singular values below `PINV_CUTOFF * s_max` are dropped by the pseudo-inverse.
pub const PINV_CUTOFF: f64 = 1e-10;

fn check_finite(what: &str, data: &[f64]) -> Result<()> {
    if data.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Vector {
    data: Vec<f64>,
}

impl Vector {
    pub fn new(data: Vec<f64>) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::Empty("Vector::new"));
        }
        check_finite("vector", &data)?;
        Ok(Self { data })
    }

    pub fn zeros(len: usize) -> Self {
        assert!(len > 0, "zero-length vector");
        Self {
            data: vec![0.0; len],
        }
    }

    pub fn basis(len: usize, index: usize) -> Self {
        let mut v = Self::zeros(len);
        v.data[index] = 1.0;
        v
    }

    /// Internal constructor for values produced by this crate's own arithmetic.
    pub(crate) fn from_raw(data: Vec<f64>) -> Self {
        debug_assert!(!data.is_empty());
        Self { data }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        false
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

    pub fn dot(&self, other: &Vector) -> f64 {
        dot(&self.data, &other.data)
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn scale(&self, k: f64) -> Vector {
        Vector::from_raw(self.data.iter().map(|x| x * k).collect())
    }

    pub fn add(&self, other: &Vector) -> Vector {
        Vector::from_raw(
            self.data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a + b)
                .collect(),
        )
    }

    pub fn sub(&self, other: &Vector) -> Vector {
        Vector::from_raw(
            self.data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a - b)
                .collect(),
        )
    }

    pub fn max_abs_diff(&self, other: &Vector) -> f64 {
        max_abs_diff(&self.data, &other.data)
    }

    /// Index of the largest entry; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        argmax(&self.data)
    }
}

impl std::ops::Index<usize> for Vector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.data[i]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Empty("Mat::new"));
        }
        if rows * cols != data.len() {
            return Err(mismatch("Mat::new", rows * cols, data.len()));
        }
        check_finite("matrix", &data)?;
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "empty matrix");
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m.data[i * cols + j] = f(i, j);
            }
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let m = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != m) {
            return Err(mismatch("Mat::from_rows", "equal row lengths", "ragged rows"));
        }
        Self::new(n, m, rows.concat())
    }

    /// Matrix whose columns are the given vectors.
    pub fn from_columns(cols: &[Vector]) -> Result<Self> {
        let first = cols.first().ok_or(Error::Empty("Mat::from_columns"))?;
        let rows = first.len();
        if let Some(bad) = cols.iter().find(|c| c.len() != rows) {
            return Err(mismatch("Mat::from_columns", rows, bad.len()));
        }
        Ok(Self::from_fn(rows, cols.len(), |i, j| cols[j][i]))
    }

    pub(crate) fn from_raw(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(rows * cols, data.len());
        Self { rows, cols, data }
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

    pub fn column(&self, j: usize) -> Vector {
        Vector::from_raw((0..self.rows).map(|i| self.get(i, j)).collect())
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

    pub fn transpose(&self) -> Mat {
        Mat::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn matvec(&self, x: &Vector) -> Result<Vector> {
        if x.len() != self.cols {
            return Err(mismatch("Mat::matvec", self.cols, x.len()));
        }
        let mut out = vec![0.0; self.rows];
        matvec_into(&self.data, self.rows, self.cols, x.as_slice(), &mut out);
        Ok(Vector::from_raw(out))
    }

    pub fn matmul(&self, other: &Mat) -> Result<Mat> {
        if self.cols != other.rows {
            return Err(mismatch("Mat::matmul", self.cols, other.rows));
        }
        let mut out = Mat::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out.data[i * other.cols + j] += a * other.get(k, j);
                }
            }
        }
        Ok(out)
    }

    pub fn add(&self, other: &Mat) -> Result<Mat> {
        if self.shape() != other.shape() {
            return Err(mismatch(
                "Mat::add",
                format!("{:?}", self.shape()),
                format!("{:?}", other.shape()),
            ));
        }
        Ok(Mat::from_raw(
            self.rows,
            self.cols,
            self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        ))
    }

    pub fn scale(&self, k: f64) -> Mat {
        Mat::from_raw(self.rows, self.cols, self.data.iter().map(|x| x * k).collect())
    }

    pub fn max_abs_diff(&self, other: &Mat) -> f64 {
        assert_eq!(self.shape(), other.shape());
        max_abs_diff(&self.data, &other.data)
    }

    pub(crate) fn to_nalgebra(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }

    pub(crate) fn from_nalgebra(m: &DMatrix<f64>) -> Mat {
        Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor3 {
    dims: [usize; 3],
    data: Vec<f64>,
}

impl Tensor3 {
    pub fn new(dims: [usize; 3], data: Vec<f64>) -> Result<Self> {
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::Empty("Tensor3::new"));
        }
        if dims.iter().product::<usize>() != data.len() {
            return Err(mismatch("Tensor3::new", dims.iter().product::<usize>(), data.len()));
        }
        check_finite("tensor3", &data)?;
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: [usize; 3]) -> Self {
        assert!(dims.iter().all(|&d| d > 0), "empty tensor");
        Self {
            dims,
            data: vec![0.0; dims.iter().product()],
        }
    }

    pub fn from_fn(dims: [usize; 3], mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut t = Self::zeros(dims);
        let mut n = 0;
        for i in 0..dims[0] {
            for j in 0..dims[1] {
                for k in 0..dims[2] {
                    t.data[n] = f(i, j, k);
                    n += 1;
                }
            }
        }
        t
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[(i * self.dims[1] + j) * self.dims[2] + k]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor4 {
    dims: [usize; 4],
    data: Vec<f64>,
}

impl Tensor4 {
    pub fn new(dims: [usize; 4], data: Vec<f64>) -> Result<Self> {
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::Empty("Tensor4::new"));
        }
        if dims.iter().product::<usize>() != data.len() {
            return Err(mismatch("Tensor4::new", dims.iter().product::<usize>(), data.len()));
        }
        check_finite("tensor4", &data)?;
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: [usize; 4]) -> Self {
        assert!(dims.iter().all(|&d| d > 0), "empty tensor");
        Self {
            dims,
            data: vec![0.0; dims.iter().product()],
        }
    }

    pub fn from_fn(
        dims: [usize; 4],
        mut f: impl FnMut(usize, usize, usize, usize) -> f64,
    ) -> Self {
        let mut t = Self::zeros(dims);
        let mut n = 0;
        for i in 0..dims[0] {
            for j in 0..dims[1] {
                for k in 0..dims[2] {
                    for l in 0..dims[3] {
                        t.data[n] = f(i, j, k, l);
                        n += 1;
                    }
                }
            }
        }
        t
    }

    pub fn dims(&self) -> [usize; 4] {
        self.dims
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize, l: usize) -> f64 {
        let [_, d1, d2, d3] = self.dims;
        self.data[((i * d1 + j) * d2 + k) * d3 + l]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }
}

/// `result[i][j] = a[i] * b[j]`.
pub fn outer_product(a: &Vector, b: &Vector) -> Result<Mat> {
    check_finite("outer_product lhs", a.as_slice())?;
    check_finite("outer_product rhs", b.as_slice())?;
    let mut data = Vec::with_capacity(a.len() * b.len());
    for &x in a.as_slice() {
        data.extend(b.as_slice().iter().map(|&y| x * y));
    }
    Ok(Mat::from_raw(a.len(), b.len(), data))
}

/// Contract the last index of `t` against `x`: `out[i][j] = sum_k t[i][j][k] x[k]`.
pub fn order3_apply(t: &Tensor3, x: &Vector) -> Result<Mat> {
    let [d0, d1, d2] = t.dims;
    if x.len() != d2 {
        return Err(mismatch("order3_apply", d2, x.len()));
    }
    let mut out = vec![0.0; d0 * d1];
    matvec_into(&t.data, d0 * d1, d2, x.as_slice(), &mut out);
    Ok(Mat::from_raw(d0, d1, out))
}

/// Contract the last two indices of `t` against `m`:
/// `out[i][j] = sum_{k,l} t[i][j][k][l] m[k][l]`.
pub fn order4_apply(t: &Tensor4, m: &Mat) -> Result<Mat> {
    let [d0, d1, d2, d3] = t.dims;
    if (d2, d3) != m.shape() {
        return Err(mismatch(
            "order4_apply",
            format!("({d2}, {d3})"),
            format!("{:?}", m.shape()),
        ));
    }
    let mut out = vec![0.0; d0 * d1];
    matvec_into(&t.data, d0 * d1, d2 * d3, m.as_slice(), &mut out);
    Ok(Mat::from_raw(d0, d1, out))
}

/// Result of [`invert_or_pinv`].
#[derive(Clone, Debug)]
pub struct Inverse {
    pub matrix: Mat,
    /// True when `matrix` is the exact inverse of a square, well-conditioned input.
    pub exact: bool,
    /// Ratio of largest to smallest singular value (infinite when rank deficient).
    pub condition: f64,
    /// Number of singular values above the pseudo-inverse cutoff.
    pub rank: usize,
}

/// Inverse for square well-conditioned matrices, Moore-Penrose pseudo-inverse otherwise.
pub fn invert_or_pinv(r: &Mat) -> Inverse {
    let m = r.to_nalgebra();
    let svd = m.clone().svd(true, true);
    let s_max = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let s_min = svd
        .singular_values
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    let full = r.rows().min(r.cols());
    let cutoff = PINV_CUTOFF * s_max;
    let rank = svd.singular_values.iter().filter(|&&s| s > cutoff).count();
    let condition = if rank < full || s_min == 0.0 {
        f64::INFINITY
    } else {
        s_max / s_min
    };

    if r.rows() == r.cols() && condition < CONDITION_THRESHOLD {
        if let Some(inv) = m.clone().lu().try_inverse() {
            return Inverse {
                matrix: Mat::from_nalgebra(&inv),
                exact: true,
                condition,
                rank,
            };
        }
    }

    let u = svd.u.as_ref().expect("svd computed with u");
    let v_t = svd.v_t.as_ref().expect("svd computed with v_t");
    let mut pinv = DMatrix::<f64>::zeros(r.cols(), r.rows());
    for (idx, &s) in svd.singular_values.iter().enumerate() {
        if s > cutoff && s > 0.0 {
            // pinv += v_i (1/s) u_i^T
            let v_i = v_t.row(idx).transpose();
            let u_i = u.column(idx);
            pinv += (v_i * u_i.transpose()) / s;
        }
    }
    Inverse {
        matrix: Mat::from_nalgebra(&pinv),
        exact: false,
        condition,
        rank,
    }
}

/// Max-subtracted softmax.
pub fn softmax(z: &Vector) -> Vector {
    Vector::from_raw(softmax_slice(z.as_slice()))
}

pub(crate) fn softmax_slice(z: &[f64]) -> Vec<f64> {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = z.iter().map(|&x| (x - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for p in &mut out {
        *p /= sum;
    }
    out
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

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `out = m x` for a row-major `rows x cols` slice.
#[inline]
pub(crate) fn matvec_into(m: &[f64], rows: usize, cols: usize, x: &[f64], out: &mut [f64]) {
    for (i, o) in out.iter_mut().enumerate().take(rows) {
        *o = dot(&m[i * cols..(i + 1) * cols], x);
    }
}

/// `out += m^T y` for a row-major `rows x cols` slice.
#[inline]
pub(crate) fn matvec_t_acc(m: &[f64], rows: usize, cols: usize, y: &[f64], out: &mut [f64]) {
    for i in 0..rows {
        let yi = y[i];
        if yi == 0.0 {
            continue;
        }
        for (o, &w) in out.iter_mut().zip(&m[i * cols..(i + 1) * cols]) {
            *o += yi * w;
        }
    }
}

/// `g += y x^T` into a row-major `len(y) x len(x)` slice.
#[inline]
pub(crate) fn outer_acc(g: &mut [f64], y: &[f64], x: &[f64]) {
    let cols = x.len();
    for (i, &yi) in y.iter().enumerate() {
        if yi == 0.0 {
            continue;
        }
        for (gv, &xv) in g[i * cols..(i + 1) * cols].iter_mut().zip(x) {
            *gv += yi * xv;
        }
    }
}

pub(crate) fn argmax(x: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in x.iter().enumerate().skip(1) {
        if v > x[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}
