//! Dense row-major containers and the few primitives everything else is
//! built from.
//!
//! All storage is `f64`. There is no broadcasting and no strided views:
//! a [`Tensor4`] is always contiguous in `(n, c, h, w)` order and a
//! [`Matrix`] is always contiguous row-major.

use std::io::{Read, Write};

use crate::error::{shape_err, Result};

/// Rank-4 tensor in `(batch, channel, height, width)` order.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4 {
    dims: [usize; 4],
    data: Vec<f64>,
}

impl Tensor4 {
    pub fn zeros(dims: [usize; 4]) -> Self {
        Tensor4 {
            dims,
            data: vec![0.0; dims.iter().product()],
        }
    }

    pub fn from_vec(dims: [usize; 4], data: Vec<f64>) -> Result<Self> {
        let expected: usize = dims.iter().product();
        if data.len() != expected {
            return Err(shape_err!(
                "tensor of dims {:?} needs {} elements, got {}",
                dims,
                expected,
                data.len()
            ));
        }
        Ok(Tensor4 { dims, data })
    }

    /// A `1 x 1 x 1 x len` tensor wrapping a flat vector.
    pub fn flat(data: Vec<f64>) -> Self {
        Tensor4 {
            dims: [1, 1, 1, data.len()],
            data,
        }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor4 {
            dims: [1, 1, 1, 1],
            data: vec![v],
        }
    }

    pub fn from_fn(dims: [usize; 4], mut f: impl FnMut(usize, usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(dims.iter().product());
        for n in 0..dims[0] {
            for c in 0..dims[1] {
                for i in 0..dims[2] {
                    for j in 0..dims[3] {
                        data.push(f(n, c, i, j));
                    }
                }
            }
        }
        Tensor4 { dims, data }
    }

    #[inline]
    pub fn dims(&self) -> [usize; 4] {
        self.dims
    }

    /// Element offsets for each axis; the width stride is always 1.
    pub fn strides(&self) -> [usize; 4] {
        let [_, c, h, w] = self.dims;
        [c * h * w, h * w, w, 1]
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn offset(&self, n: usize, c: usize, i: usize, j: usize) -> usize {
        let [_, cc, h, w] = self.dims;
        ((n * cc + c) * h + i) * w + j
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, i: usize, j: usize) -> f64 {
        self.data[self.offset(n, c, i, j)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, i: usize, j: usize, v: f64) {
        let o = self.offset(n, c, i, j);
        self.data[o] = v;
    }

    /// The `h x w` plane of sample `n`, channel `c`.
    #[inline]
    pub fn plane(&self, n: usize, c: usize) -> &[f64] {
        let sz = self.dims[2] * self.dims[3];
        let start = (n * self.dims[1] + c) * sz;
        &self.data[start..start + sz]
    }

    #[inline]
    pub fn plane_mut(&mut self, n: usize, c: usize) -> &mut [f64] {
        let sz = self.dims[2] * self.dims[3];
        let start = (n * self.dims[1] + c) * sz;
        &mut self.data[start..start + sz]
    }

    /// Largest absolute elementwise difference. Dims must match.
    pub fn max_abs_diff(&self, other: &Tensor4) -> Result<f64> {
        if self.dims != other.dims {
            return Err(shape_err!(
                "cannot compare tensors of dims {:?} and {:?}",
                self.dims,
                other.dims
            ));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    /// Serializes as four little-endian `u32` dims followed by the
    /// elements as little-endian `f64`.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        for d in self.dims {
            let d = u32::try_from(d).map_err(|_| shape_err!("dim {d} does not fit in u32"))?;
            w.write_all(&d.to_le_bytes())?;
        }
        for v in &self.data {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut header = [0u8; 16];
        r.read_exact(&mut header)?;
        let mut dims = [0usize; 4];
        for (k, d) in dims.iter_mut().enumerate() {
            let mut b = [0u8; 4];
            b.copy_from_slice(&header[4 * k..4 * k + 4]);
            *d = u32::from_le_bytes(b) as usize;
        }
        let len: usize = dims.iter().product();
        let mut bytes = vec![0u8; len * 8];
        r.read_exact(&mut bytes)?;
        let data = bytes
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        Ok(Tensor4 { dims, data })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 8 * self.len());
        self.write_to(&mut out)
            .expect("writing to a Vec cannot fail");
        out
    }
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
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

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(shape_err!(
                "{rows}x{cols} matrix needs {} elements, got {}",
                rows * cols,
                data.len()
            ));
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Builds a matrix from nested rows. Panics on ragged input.
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

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
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

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Dense product `a * b`.
///
/// The loop nest is fixed (`i`, `k`, `j`) so every output element is
/// accumulated over `k` in ascending order starting from `0.0`.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(shape_err!(
            "matmul: left operand is {}x{}, right operand is {}x{}",
            a.rows,
            a.cols,
            b.rows,
            b.cols
        ));
    }
    let mut out = Matrix::zeros(a.rows, b.cols);
    matmul_into(&a.data, &b.data, &mut out.data, a.rows, a.cols, b.cols);
    Ok(out)
}

/// `out += a * b` over raw row-major slices (`m x k` times `k x n`).
#[inline]
pub(crate) fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// Cyclic rotation along the two spatial axes.
///
/// Follows the usual "roll" convention: element `(i, j)` moves to
/// `((i + shift_h) mod h, (j + shift_w) mod w)`. Negative shifts rotate
/// the other way.
pub fn roll2d(x: &Tensor4, shift_h: isize, shift_w: isize) -> Tensor4 {
    let [n, c, h, w] = x.dims;
    let sh = shift_h.rem_euclid(h as isize) as usize;
    let sw = shift_w.rem_euclid(w as isize) as usize;
    let mut out = Tensor4::zeros(x.dims);
    for b in 0..n {
        for ch in 0..c {
            let src = x.plane(b, ch);
            let dst = out.plane_mut(b, ch);
            for i in 0..h {
                let oi = (i + sh) % h;
                for j in 0..w {
                    dst[oi * w + (j + sw) % w] = src[i * w + j];
                }
            }
        }
    }
    out
}
