//! Dense order-D tensors.
//!
//! Storage follows the unfolding convention used throughout the crate: the
//! first mode varies fastest, so the linear index of `[i_1, ..., i_D]`
//! (0-based) is `i_1 + i_2 p_1 + i_3 p_1 p_2 + ...`. Under this layout the
//! mode-0 unfolding is the flat buffer read column-major, and the unfolding
//! along mode `k` orders its columns by the remaining modes with the lowest
//! mode fastest.
//!
//! Mode indices in this API are 0-based.

use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::ops::{Add, Mul, Neg, Sub};
use std::path::Path;

use nalgebra::{DMatrix, DMatrixView, DMatrixViewMut};

use crate::error::{invalid, Error, Result};

pub type Matrix = DMatrix<f64>;

#[derive(Clone, Debug, PartialEq)]
pub struct DenseTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

fn check_shape(shape: &[usize]) -> Result<()> {
    if shape.is_empty() {
        return invalid("tensor shape must have at least one mode");
    }
    if shape.iter().any(|&p| p == 0) {
        return invalid(format!("tensor extents must be positive, got {shape:?}"));
    }
    Ok(())
}

impl DenseTensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        check_shape(&shape)?;
        let len: usize = shape.iter().product();
        if data.len() != len {
            return invalid(format!(
                "data length {} does not match shape {:?} (expected {len})",
                data.len(),
                shape
            ));
        }
        Ok(Self { shape, data })
    }

    /// Panics if `shape` is empty or has a zero extent.
    pub fn zeros(shape: &[usize]) -> Self {
        check_shape(shape).expect("valid shape");
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    /// Builds a tensor by evaluating `f` at every multi-index.
    pub fn from_fn(shape: &[usize], mut f: impl FnMut(&[usize]) -> f64) -> Self {
        let mut t = Self::zeros(shape);
        let mut idx = vec![0usize; shape.len()];
        for v in t.data.iter_mut() {
            *v = f(&idx);
            for (i, &p) in idx.iter_mut().zip(shape) {
                *i += 1;
                if *i < p {
                    break;
                }
                *i = 0;
            }
        }
        t
    }

    pub fn from_matrix(m: &Matrix) -> Self {
        Self {
            shape: vec![m.nrows(), m.ncols()],
            data: m.as_slice().to_vec(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn order(&self) -> usize {
        self.shape.len()
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

    pub fn linear_index(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.shape.len());
        let mut lin = 0;
        let mut stride = 1;
        for (&i, &p) in idx.iter().zip(&self.shape) {
            debug_assert!(i < p);
            lin += i * stride;
            stride *= p;
        }
        lin
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.data[self.linear_index(idx)]
    }

    /// Reinterprets the flat buffer with a new shape of equal size.
    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        Self::new(shape, self.data)
    }

    /// Reads the flat buffer as a `rows x cols` column-major matrix view.
    pub fn as_matrix(&self, rows: usize, cols: usize) -> DMatrixView<'_, f64> {
        assert_eq!(rows * cols, self.data.len());
        DMatrixView::from_slice(&self.data, rows, cols)
    }

    fn check_mode(&self, k: usize) -> Result<()> {
        if k >= self.order() {
            return invalid(format!(
                "mode {k} out of range for an order-{} tensor",
                self.order()
            ));
        }
        Ok(())
    }

    /// (left, extent, right) sizes around mode `k`.
    fn split(&self, k: usize) -> (usize, usize, usize) {
        let l = self.shape[..k].iter().product();
        let r = self.shape[k + 1..].iter().product();
        (l, self.shape[k], r)
    }

    /// Mode-`k` unfolding: a `p_k x prod_{j != k} p_j` matrix.
    pub fn matricize(&self, k: usize) -> Result<Matrix> {
        self.check_mode(k)?;
        let (l, p, r) = self.split(k);
        if l == 1 {
            return Ok(Matrix::from_column_slice(p, r, &self.data));
        }
        let mut out = vec![0.0; self.data.len()];
        for s in 0..r {
            for i in 0..p {
                let src = &self.data[l * (i + p * s)..l * (i + p * s + 1)];
                for (a, &v) in src.iter().enumerate() {
                    out[i + p * (a + l * s)] = v;
                }
            }
        }
        Ok(Matrix::from_vec(p, l * r, out))
    }

    /// Inverse of [`matricize`](Self::matricize).
    pub fn tensorize(m: &Matrix, k: usize, shape: &[usize]) -> Result<Self> {
        check_shape(shape)?;
        if k >= shape.len() {
            return invalid(format!("mode {k} out of range for shape {shape:?}"));
        }
        let l: usize = shape[..k].iter().product();
        let p = shape[k];
        let r: usize = shape[k + 1..].iter().product();
        if m.nrows() != p || m.ncols() != l * r {
            return invalid(format!(
                "matrix {}x{} cannot be folded along mode {k} into {shape:?}",
                m.nrows(),
                m.ncols()
            ));
        }
        if l == 1 {
            return Self::new(shape.to_vec(), m.as_slice().to_vec());
        }
        let src = m.as_slice();
        let mut out = vec![0.0; src.len()];
        for s in 0..r {
            for i in 0..p {
                let dst = &mut out[l * (i + p * s)..l * (i + p * s + 1)];
                for (a, v) in dst.iter_mut().enumerate() {
                    *v = src[i + p * (a + l * s)];
                }
            }
        }
        Self::new(shape.to_vec(), out)
    }

    /// Mode-`k` product `self x_k b`, replacing extent `p_k` by `b.nrows()`.
    pub fn mode_product(&self, b: &Matrix, k: usize) -> Result<Self> {
        self.check_mode(k)?;
        if b.ncols() != self.shape[k] {
            return invalid(format!(
                "mode-{k} product needs {} columns, matrix has {}",
                self.shape[k],
                b.ncols()
            ));
        }
        let (l, p, r) = self.split(k);
        let q = b.nrows();
        let mut out = vec![0.0; l * q * r];
        if l == 1 {
            let src = DMatrixView::from_slice(&self.data, p, r);
            let mut dst = DMatrixViewMut::from_slice(&mut out, q, r);
            dst.gemm(1.0, b, &src, 0.0);
        } else {
            let bt = b.transpose();
            for s in 0..r {
                let src = DMatrixView::from_slice(&self.data[s * l * p..(s + 1) * l * p], l, p);
                let mut dst =
                    DMatrixViewMut::from_slice(&mut out[s * l * q..(s + 1) * l * q], l, q);
                dst.gemm(1.0, &src, &bt, 0.0);
            }
        }
        let mut shape = self.shape.clone();
        shape[k] = q;
        Ok(Self { shape, data: out })
    }

    /// Mode-`k` product with the transpose of `b`.
    pub fn mode_product_t(&self, b: &Matrix, k: usize) -> Result<Self> {
        self.mode_product(&b.transpose(), k)
    }

    /// Applies `self x_{modes[i]} mats[i]` for every listed mode.
    pub fn multi_mode_product(&self, mats: &[&Matrix], modes: &[usize]) -> Result<Self> {
        if mats.len() != modes.len() {
            return invalid("one matrix per mode is required");
        }
        let mut out: Option<Self> = None;
        for (&m, &k) in mats.iter().zip(modes) {
            out = Some(out.as_ref().unwrap_or(self).mode_product(m, k)?);
        }
        Ok(out.unwrap_or_else(|| self.clone()))
    }

    pub fn inner(&self, other: &Self) -> Result<f64> {
        if self.shape != other.shape {
            return invalid(format!(
                "inner product of shapes {:?} and {:?}",
                self.shape, other.shape
            ));
        }
        Ok(dot(&self.data, &other.data))
    }

    pub fn frob_norm(&self) -> f64 {
        dot(&self.data, &self.data).sqrt()
    }

    /// Contracts `a` (order d) against the leading `d` modes of `x`, leaving
    /// the trailing modes. A full contraction yields a shape-`[1]` tensor.
    pub fn contracted_inner(a: &Self, x: &Self) -> Result<Self> {
        let d = a.order();
        if x.order() < d || x.shape[..d] != a.shape[..] {
            return invalid(format!(
                "cannot contract {:?} against the leading modes of {:?}",
                a.shape, x.shape
            ));
        }
        let pd = a.len();
        let rest: Vec<usize> = if x.order() == d {
            vec![1]
        } else {
            x.shape[d..].to_vec()
        };
        let data = x
            .data
            .chunks_exact(pd)
            .map(|col| dot(&a.data, col))
            .collect();
        Self::new(rest, data)
    }

    pub fn scale(&self, alpha: f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| alpha * v).collect(),
        }
    }

    /// `self += alpha * x`.
    pub fn axpy(&mut self, alpha: f64, x: &Self) {
        assert_eq!(self.shape, x.shape, "axpy shape mismatch");
        for (s, v) in self.data.iter_mut().zip(&x.data) {
            *s += alpha * v;
        }
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Frobenius distance `||self - other||_F`.
    pub fn distance(&self, other: &Self) -> f64 {
        assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    /// Serializes as a `shape` header line followed by one value per line.
    pub fn write_text<W: Write>(&self, mut w: W) -> Result<()> {
        let mut header = String::from("shape");
        for p in &self.shape {
            write!(header, " {p}").unwrap();
        }
        writeln!(w, "{header}")?;
        for v in &self.data {
            writeln!(w, "{v:.16e}")?;
        }
        Ok(())
    }

    pub fn read_text<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty tensor dump".into()))??;
        let mut fields = header.split_whitespace();
        if fields.next() != Some("shape") {
            return Err(Error::Parse(format!("bad tensor header {header:?}")));
        }
        let shape = fields
            .map(|f| f.parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Parse(format!("bad extent in {header:?}: {e}")))?;
        let mut data = Vec::with_capacity(shape.iter().product());
        for line in lines {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            data.push(
                line.parse::<f64>()
                    .map_err(|e| Error::Parse(format!("bad value {line:?}: {e}")))?,
            );
        }
        Self::new(shape, data)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write_text(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_text(std::io::BufReader::new(f))
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl Add for &DenseTensor {
    type Output = DenseTensor;
    fn add(self, rhs: &DenseTensor) -> DenseTensor {
        assert_eq!(self.shape, rhs.shape, "add shape mismatch");
        DenseTensor {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect(),
        }
    }
}

impl Sub for &DenseTensor {
    type Output = DenseTensor;
    fn sub(self, rhs: &DenseTensor) -> DenseTensor {
        assert_eq!(self.shape, rhs.shape, "sub shape mismatch");
        DenseTensor {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect(),
        }
    }
}

impl Mul<f64> for &DenseTensor {
    type Output = DenseTensor;
    fn mul(self, rhs: f64) -> DenseTensor {
        self.scale(rhs)
    }
}

impl Neg for &DenseTensor {
    type Output = DenseTensor;
    fn neg(self) -> DenseTensor {
        self.scale(-1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(shape: &[usize]) -> DenseTensor {
        let n: usize = shape.iter().product();
        DenseTensor::new(shape.to_vec(), (0..n).map(|v| v as f64 * 0.5 - 3.0).collect()).unwrap()
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(DenseTensor::new(vec![], vec![]).is_err());
        assert!(DenseTensor::new(vec![2, 0], vec![]).is_err());
        assert!(DenseTensor::new(vec![2, 2], vec![1.0; 3]).is_err());
    }

    #[test]
    fn matricize_order_two() {
        let m = Matrix::from_fn(3, 4, |i, j| (i * 10 + j) as f64);
        let t = DenseTensor::from_matrix(&m);
        assert_eq!(t.matricize(0).unwrap(), m);
        assert_eq!(t.matricize(1).unwrap(), m.transpose());
        assert!(t.matricize(2).is_err());
    }

    #[test]
    fn matricize_index_map_2x3x2() {
        // Brute-force column index: sum over the other modes of i_l * prod_{z<l, z!=k} p_z.
        let t = seq(&[2, 3, 2]);
        let shape = t.shape().to_vec();
        for k in 0..3 {
            let m = t.matricize(k).unwrap();
            for i0 in 0..2 {
                for i1 in 0..3 {
                    for i2 in 0..2 {
                        let idx = [i0, i1, i2];
                        let mut col = 0;
                        let mut stride = 1;
                        for l in 0..3 {
                            if l == k {
                                continue;
                            }
                            col += idx[l] * stride;
                            stride *= shape[l];
                        }
                        assert_eq!(m[(idx[k], col)], t.get(&idx));
                    }
                }
            }
            let back = DenseTensor::tensorize(&m, k, &shape).unwrap();
            assert_eq!(back, t);
        }
    }

    #[test]
    fn tensorize_dimension_mismatch() {
        let m = Matrix::zeros(3, 4);
        assert!(DenseTensor::tensorize(&m, 0, &[3, 5]).is_err());
        assert!(DenseTensor::tensorize(&m, 2, &[3, 4]).is_err());
    }

    #[test]
    fn mode_product_matches_triple_loop() {
        let t = seq(&[2, 2, 2]);
        let b = Matrix::from_fn(3, 2, |i, j| 1.0 + i as f64 - 2.0 * j as f64);
        let out = t.mode_product(&b, 1).unwrap();
        assert_eq!(out.shape(), &[2, 3, 2]);
        for i0 in 0..2 {
            for j in 0..3 {
                for i2 in 0..2 {
                    let expect: f64 = (0..2).map(|i1| t.get(&[i0, i1, i2]) * b[(j, i1)]).sum();
                    assert!((out.get(&[i0, j, i2]) - expect).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn mode_product_identity_and_matrix_case() {
        let t = seq(&[3, 2, 4]);
        for k in 0..3 {
            let id = Matrix::identity(t.shape()[k], t.shape()[k]);
            assert_eq!(t.mode_product(&id, k).unwrap(), t);
        }
        let m = Matrix::from_fn(3, 4, |i, j| (i + 2 * j) as f64);
        let b = Matrix::from_fn(2, 3, |i, j| (i as f64) - (j as f64));
        let out = DenseTensor::from_matrix(&m).mode_product(&b, 0).unwrap();
        assert_eq!(out.matricize(0).unwrap(), &b * &m);
        assert!(t.mode_product(&b, 1).is_err());
    }

    #[test]
    fn contracted_inner_cases() {
        let a = DenseTensor::new(vec![2], vec![1.5, -2.0]).unwrap();
        let xm = Matrix::from_fn(2, 3, |i, j| (i * 3 + j) as f64);
        let x = DenseTensor::from_matrix(&xm);
        let out = DenseTensor::contracted_inner(&a, &x).unwrap();
        let expect = xm.transpose() * nalgebra::DVector::from_vec(vec![1.5, -2.0]);
        assert_eq!(out.shape(), &[3]);
        for j in 0..3 {
            assert!((out.data()[j] - expect[j]).abs() < 1e-14);
        }
        let full = DenseTensor::contracted_inner(&x, &x).unwrap();
        assert_eq!(full.shape(), &[1]);
        assert_eq!(full.data()[0], x.inner(&x).unwrap());
        let zero = DenseTensor::contracted_inner(&DenseTensor::zeros(&[2]), &x).unwrap();
        assert!(zero.data().iter().all(|&v| v == 0.0));
        assert!(DenseTensor::contracted_inner(&DenseTensor::zeros(&[3]), &x).is_err());
    }

    #[test]
    fn norms() {
        let ones = DenseTensor::new(vec![2, 2, 2], vec![1.0; 8]).unwrap();
        assert!((ones.frob_norm() - 8f64.sqrt()).abs() < 1e-15);
        assert_eq!(ones.inner(&DenseTensor::zeros(&[2, 2, 2])).unwrap(), 0.0);
        assert!(ones.inner(&DenseTensor::zeros(&[2, 4])).is_err());
    }

    #[test]
    fn text_round_trip_is_exact() {
        let t = DenseTensor::from_fn(&[3, 2], |i| (i[0] as f64 + 0.1).sin() / (i[1] as f64 + 0.3));
        let mut buf = Vec::new();
        t.write_text(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("shape 3 2\n"));
        let back = DenseTensor::read_text(&buf[..]).unwrap();
        assert_eq!(back, t);
    }
}
