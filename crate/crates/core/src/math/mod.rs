//! Dense tensors, matrix products, 2D FFT with band masking, and seeded
//! initialization.

mod fft;
mod rng;

pub use fft::{band_split, fft2, ifft2, ifft2_complex, BandSplitter, ComplexSpectrum};
pub use rng::{init_uniform, Rng};

use crate::error::{Error, Result};
use crate::parallel;

/// Row-major tensor of 64-bit floats.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::dim(format!(
                "shape {shape:?} holds {n} values but {} were supplied",
                data.len()
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Build a 2D tensor from nested rows. Panics on ragged input; test helper.
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let cols = rows.first().map_or(0, |r| r.len());
        assert!(rows.iter().all(|r| r.len() == cols), "ragged rows");
        Self {
            shape: vec![rows.len(), cols],
            data: rows.iter().flat_map(|r| r.iter().copied()).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    /// Extent of the leading axis.
    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    /// Number of elements per leading-axis slice.
    pub fn row_len(&self) -> usize {
        self.shape.iter().skip(1).product()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.row_len();
        &self.data[i * n..(i + 1) * n]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let n = self.row_len();
        &mut self.data[i * n..(i + 1) * n]
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::dim(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn sq_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn norm(&self) -> f64 {
        self.sq_norm().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn scale(&mut self, alpha: f64) {
        self.data.iter_mut().for_each(|v| *v *= alpha);
    }

    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        self.check_same_shape(other, "add_assign")?;
        self.data
            .iter_mut()
            .zip(&other.data)
            .for_each(|(a, b)| *a += b);
        Ok(())
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn check_same_shape(&self, other: &Tensor, what: &str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::dim(format!(
                "{what}: shape {:?} does not match {:?}",
                self.shape, other.shape
            )));
        }
        Ok(())
    }

    /// Transpose of a 2D tensor.
    pub fn transpose(&self) -> Result<Tensor> {
        if self.ndim() != 2 {
            return Err(Error::dim(format!(
                "transpose needs a matrix, got {:?}",
                self.shape
            )));
        }
        let (r, c) = (self.shape[0], self.shape[1]);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Tensor::from_vec(&[c, r], out)
    }

    /// Mean over the leading axis of a `[T, rest...]` tensor.
    pub fn mean_over_leading(&self) -> Tensor {
        let t = self.rows().max(1);
        let n = self.row_len();
        let mut out = vec![0.0; n];
        for step in 0..self.rows() {
            for (o, v) in out.iter_mut().zip(self.row(step)) {
                *o += v;
            }
        }
        let inv = 1.0 / t as f64;
        out.iter_mut().for_each(|v| *v *= inv);
        Tensor {
            shape: self.shape[1..].to_vec(),
            data: out,
        }
    }
}

/// Rows of C handled per parallel task; fixed so results are independent of
/// the thread count.
const GEMM_ROW_BLOCK: usize = 32;

/// `C = alpha * op(A) * op(B) + beta * C` with `op(A)` of shape `m x k` and
/// `op(B)` of shape `k x n`, all row-major. `a_t`/`b_t` mean the stored
/// operand is the transpose (`k x m` / `n x k`).
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert_eq!(a.len(), m * k, "gemm: lhs length");
    assert_eq!(b.len(), k * n, "gemm: rhs length");
    assert_eq!(c.len(), m * n, "gemm: output length");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|v| *v *= beta);
        return;
    }
    let (rsa, csa) = if a_t { (1isize, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1isize, k as isize) } else { (n as isize, 1) };
    let a_addr = a.as_ptr() as usize;
    let b_addr = b.as_ptr() as usize;
    parallel::for_each_chunk_mut(c, GEMM_ROW_BLOCK * n, |block, chunk| {
        let rows = chunk.len() / n;
        let i0 = block * GEMM_ROW_BLOCK;
        let a_off = if a_t { i0 } else { i0 * k };
        // SAFETY: the offset row block lies inside `a` (rows i0..i0+rows of
        // op(A)) and the strides describe the checked `m x k` layout; `b` is
        // read-only and `chunk` is an exclusive row block of `c`.
        unsafe {
            let a_ptr = (a_addr as *const f64).add(a_off);
            matrixmultiply::dgemm(
                rows,
                k,
                n,
                alpha,
                a_ptr,
                rsa,
                csa,
                b_addr as *const f64,
                rsb,
                csb,
                beta,
                chunk.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    });
}

/// `A * B^T` for row-major `A: m x k`, `B: n x k`.
pub fn matmul_nt(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = (a.rows(), a.row_len());
    let (n, k2) = (b.rows(), b.row_len());
    if k != k2 {
        return Err(Error::dim(format!(
            "matmul_nt: inner extents {k} and {k2} differ"
        )));
    }
    let mut out = vec![0.0; m * n];
    gemm(m, k, n, 1.0, a.data(), false, b.data(), true, 0.0, &mut out);
    Tensor::from_vec(&[m, n], out)
}

/// `A^T * B` for row-major `A: k x m`, `B: k x n` (sum of outer products of rows).
pub fn matmul_tn(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (k, m) = (a.rows(), a.row_len());
    let (k2, n) = (b.rows(), b.row_len());
    if k != k2 {
        return Err(Error::dim(format!(
            "matmul_tn: leading extents {k} and {k2} differ"
        )));
    }
    let mut out = vec![0.0; m * n];
    gemm(m, k, n, 1.0, a.data(), true, b.data(), false, 0.0, &mut out);
    Tensor::from_vec(&[m, n], out)
}

/// Cosine of two equal-length vectors with the norm guard `eps`.
pub fn cosine(a: &[f64], b: &[f64], eps: f64) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(eps);
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt().max(eps);
    dot / (na * nb)
}
