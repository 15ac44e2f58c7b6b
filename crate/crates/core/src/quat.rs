//! Quaternion scalars and tensors.
//!
//! A [`QTensor`] keeps its four components in separate real planes
//! (structure-of-arrays). All four planes share one contiguous buffer, plane
//! `c` occupying `data[c * len..(c + 1) * len]`, so the planes of a batch can
//! be handed to a real GEMM as a single `4 x len` matrix.

use std::fmt;
use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use crate::error::{QvnnError, Result};

/// Plane index of each component inside a [`QTensor`].
pub const R: usize = 0;
pub const I: usize = 1;
pub const J: usize = 2;
pub const K: usize = 3;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Quaternion {
    pub r: f64,
    pub i: f64,
    pub j: f64,
    pub k: f64,
}

impl Quaternion {
    pub const ZERO: Quaternion = Quaternion::new(0.0, 0.0, 0.0, 0.0);
    pub const ONE: Quaternion = Quaternion::new(1.0, 0.0, 0.0, 0.0);
    pub const I: Quaternion = Quaternion::new(0.0, 1.0, 0.0, 0.0);
    pub const J: Quaternion = Quaternion::new(0.0, 0.0, 1.0, 0.0);
    pub const K: Quaternion = Quaternion::new(0.0, 0.0, 0.0, 1.0);

    pub const fn new(r: f64, i: f64, j: f64, k: f64) -> Self {
        Quaternion { r, i, j, k }
    }

    pub fn from_array(c: [f64; 4]) -> Self {
        Quaternion::new(c[0], c[1], c[2], c[3])
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.r, self.i, self.j, self.k]
    }

    pub fn conjugate(self) -> Self {
        conjugate(self)
    }

    pub fn norm(self) -> f64 {
        qnorm(self)
    }

    pub fn norm_sqr(self) -> f64 {
        self.r * self.r + self.i * self.i + self.j * self.j + self.k * self.k
    }

    pub fn scale(self, s: f64) -> Self {
        Quaternion::new(self.r * s, self.i * s, self.j * s, self.k * s)
    }

    /// Applies a real function to each component independently.
    pub fn map(self, f: impl Fn(f64) -> f64) -> Self {
        Quaternion::new(f(self.r), f(self.i), f(self.j), f(self.k))
    }

    pub fn is_finite(self) -> bool {
        self.r.is_finite() && self.i.is_finite() && self.j.is_finite() && self.k.is_finite()
    }
}

/// Hamilton product `x ⊗ y`, following i² = j² = k² = ijk = −1.
#[inline]
pub fn hamilton_mul(x: Quaternion, y: Quaternion) -> Quaternion {
    Quaternion {
        r: x.r * y.r - x.i * y.i - x.j * y.j - x.k * y.k,
        i: x.r * y.i + x.i * y.r + x.j * y.k - x.k * y.j,
        j: x.r * y.j - x.i * y.k + x.j * y.r + x.k * y.i,
        k: x.r * y.k + x.i * y.j - x.j * y.i + x.k * y.r,
    }
}

#[inline]
pub fn conjugate(x: Quaternion) -> Quaternion {
    Quaternion::new(x.r, -x.i, -x.j, -x.k)
}

#[inline]
pub fn qnorm(x: Quaternion) -> f64 {
    x.norm_sqr().sqrt()
}

/// Coefficients of the real 4x4 matrix `L(w)` with `L(w) · vec(h) = vec(w ⊗ h)`.
///
/// Row `a` is the output component, column `b` the input component.
#[inline]
pub fn left_matrix(w: Quaternion) -> [[f64; 4]; 4] {
    let Quaternion { r, i, j, k } = w;
    [
        [r, -i, -j, -k],
        [i, r, -k, j],
        [j, k, r, -i],
        [k, -j, i, r],
    ]
}

impl Add for Quaternion {
    type Output = Quaternion;
    fn add(self, o: Quaternion) -> Quaternion {
        Quaternion::new(self.r + o.r, self.i + o.i, self.j + o.j, self.k + o.k)
    }
}

impl AddAssign for Quaternion {
    fn add_assign(&mut self, o: Quaternion) {
        *self = *self + o;
    }
}

impl Sub for Quaternion {
    type Output = Quaternion;
    fn sub(self, o: Quaternion) -> Quaternion {
        Quaternion::new(self.r - o.r, self.i - o.i, self.j - o.j, self.k - o.k)
    }
}

impl Neg for Quaternion {
    type Output = Quaternion;
    fn neg(self) -> Quaternion {
        Quaternion::new(-self.r, -self.i, -self.j, -self.k)
    }
}

impl Mul for Quaternion {
    type Output = Quaternion;
    fn mul(self, o: Quaternion) -> Quaternion {
        hamilton_mul(self, o)
    }
}

impl fmt::Display for Quaternion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.r, self.i, self.j, self.k)
    }
}

/// Row-major real matrix, used for the real expansion of quaternion maps.
#[derive(Clone, Debug, PartialEq)]
pub struct RealMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl RealMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        RealMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.cols {
            return Err(QvnnError::Dimension(format!(
                "matrix has {} columns, vector has {} entries",
                self.cols,
                v.len()
            )));
        }
        Ok(self
            .data
            .chunks_exact(self.cols)
            .map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum())
            .collect())
    }
}

/// Quaternion tensor stored as four real planes with a common row-major shape.
#[derive(Clone, Debug, PartialEq)]
pub struct QTensor {
    shape: Vec<usize>,
    len: usize,
    data: Vec<f64>,
}

impl QTensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        QTensor {
            shape: shape.to_vec(),
            len,
            data: vec![0.0; 4 * len],
        }
    }

    /// Builds a tensor from its four planes (r, i, j, k).
    pub fn from_planes(shape: &[usize], planes: [Vec<f64>; 4]) -> Result<Self> {
        let len: usize = shape.iter().product();
        if planes.iter().any(|p| p.len() != len) {
            return Err(QvnnError::Dimension(format!(
                "planes of lengths {:?} do not match shape {:?}",
                planes.iter().map(Vec::len).collect::<Vec<_>>(),
                shape
            )));
        }
        let mut data = Vec::with_capacity(4 * len);
        for p in planes {
            data.extend(p);
        }
        Ok(QTensor {
            shape: shape.to_vec(),
            len,
            data,
        })
    }

    /// Builds a tensor from the concatenated planes `[r.., i.., j.., k..]`.
    pub fn from_raw(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if data.len() != 4 * len {
            return Err(QvnnError::Dimension(format!(
                "raw buffer of {} values does not hold shape {:?}",
                data.len(),
                shape
            )));
        }
        Ok(QTensor {
            shape: shape.to_vec(),
            len,
            data,
        })
    }

    pub fn from_quaternions(shape: &[usize], values: &[Quaternion]) -> Result<Self> {
        let mut t = QTensor::zeros(shape);
        if values.len() != t.len {
            return Err(QvnnError::Dimension(format!(
                "{} quaternions do not fill shape {:?}",
                values.len(),
                shape
            )));
        }
        for (n, q) in values.iter().enumerate() {
            t.set(n, *q);
        }
        Ok(t)
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> Quaternion) -> Self {
        let mut t = QTensor::zeros(shape);
        for n in 0..t.len {
            t.set(n, f(n));
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    /// Number of quaternions.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        &self.data[c * self.len..(c + 1) * self.len]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f64] {
        &mut self.data[c * self.len..(c + 1) * self.len]
    }

    pub fn planes_mut(&mut self) -> [&mut [f64]; 4] {
        let len = self.len;
        let (r, rest) = self.data.split_at_mut(len);
        let (i, rest) = rest.split_at_mut(len);
        let (j, k) = rest.split_at_mut(len);
        [r, i, j, k]
    }

    /// All four planes back to back.
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_raw(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, n: usize) -> Quaternion {
        let l = self.len;
        Quaternion::new(
            self.data[n],
            self.data[l + n],
            self.data[2 * l + n],
            self.data[3 * l + n],
        )
    }

    #[inline]
    pub fn set(&mut self, n: usize, q: Quaternion) {
        let l = self.len;
        self.data[n] = q.r;
        self.data[l + n] = q.i;
        self.data[2 * l + n] = q.j;
        self.data[3 * l + n] = q.k;
    }

    pub fn iter(&self) -> impl Iterator<Item = Quaternion> + '_ {
        (0..self.len).map(move |n| self.get(n))
    }

    pub fn to_quaternions(&self) -> Vec<Quaternion> {
        self.iter().collect()
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let len: usize = shape.iter().product();
        if len != self.len {
            return Err(QvnnError::Dimension(format!(
                "cannot reshape {:?} into {:?}",
                self.shape, shape
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn map_components(&self, f: impl Fn(f64) -> f64) -> QTensor {
        QTensor {
            shape: self.shape.clone(),
            len: self.len,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Copies the quaternions at the given leading-axis indices into a new tensor.
    pub fn select_rows(&self, rows: &[usize]) -> Result<QTensor> {
        let lead = *self.shape.first().ok_or_else(|| {
            QvnnError::Dimension("cannot select rows of a 0-d tensor".into())
        })?;
        let inner = if lead == 0 { 0 } else { self.len / lead };
        let mut shape = self.shape.clone();
        shape[0] = rows.len();
        let mut out = QTensor::zeros(&shape);
        for c in 0..4 {
            let src = self.plane(c);
            let dst = out.plane_mut(c);
            for (dst_row, &row) in rows.iter().enumerate() {
                if row >= lead {
                    return Err(QvnnError::Index(format!("row {row} of {lead}")));
                }
                dst[dst_row * inner..(dst_row + 1) * inner]
                    .copy_from_slice(&src[row * inner..(row + 1) * inner]);
            }
        }
        Ok(out)
    }
}

/// Quaternion matrix-vector product `out[p] = Σ_q W[p,q] ⊗ h[q]`.
pub fn qmatvec(w: &QTensor, h: &QTensor) -> Result<QTensor> {
    let (m, n) = match *w.shape() {
        [m, n] => (m, n),
        _ => {
            return Err(QvnnError::Dimension(format!(
                "qmatvec expects a 2-d matrix, got {:?}",
                w.shape()
            )))
        }
    };
    if h.shape() != [n] {
        return Err(QvnnError::Dimension(format!(
            "qmatvec: matrix {:?} cannot multiply vector {:?}",
            w.shape(),
            h.shape()
        )));
    }
    let mut out = QTensor::zeros(&[m]);
    for p in 0..m {
        let mut acc = Quaternion::ZERO;
        for q in 0..n {
            acc += hamilton_mul(w.get(p * n + q), h.get(q));
        }
        out.set(p, acc);
    }
    Ok(out)
}

/// Real `4m x 4n` matrix equivalent to left multiplication by `W`.
///
/// Vectors are flattened quaternion by quaternion, `[h0.r, h0.i, h0.j, h0.k, h1.r, ...]`.
pub fn real_expand(w: &QTensor) -> Result<RealMatrix> {
    let (m, n) = match *w.shape() {
        [m, n] => (m, n),
        _ => {
            return Err(QvnnError::Dimension(format!(
                "real_expand expects a 2-d matrix, got {:?}",
                w.shape()
            )))
        }
    };
    let mut out = RealMatrix::zeros(4 * m, 4 * n);
    for p in 0..m {
        for q in 0..n {
            let block = left_matrix(w.get(p * n + q));
            for (a, row) in block.iter().enumerate() {
                for (b, v) in row.iter().enumerate() {
                    out.data[(4 * p + a) * out.cols + 4 * q + b] = *v;
                }
            }
        }
    }
    Ok(out)
}

/// Flattens a quaternion vector as `[h0.r, h0.i, h0.j, h0.k, h1.r, ...]`.
pub fn interleave(h: &QTensor) -> Vec<f64> {
    h.iter().flat_map(|q| q.to_array()).collect()
}
