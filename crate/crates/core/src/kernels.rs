//! Real-valued kernels behind the quaternion layers.
//!
//! Quaternion weights are expanded into "plane-major" real matrices: row
//! `a * out + o` holds output component `a` of output unit `o`, column
//! `b * inner + c` multiplies input component `b` of input unit `c`. With this
//! ordering a whole Hamilton-product layer is one real GEMM.

use crate::quat::QTensor;

/// `LEFT[a][b] = (component, sign)`: entry `(a, b)` of the left-multiplication
/// matrix of `w` equals `sign * w[component]`.
pub(crate) const LEFT: [[(usize, f64); 4]; 4] = [
    [(0, 1.0), (1, -1.0), (2, -1.0), (3, -1.0)],
    [(1, 1.0), (0, 1.0), (3, -1.0), (2, 1.0)],
    [(2, 1.0), (3, 1.0), (0, 1.0), (1, -1.0)],
    [(3, 1.0), (2, -1.0), (1, 1.0), (0, 1.0)],
];

/// Expands `w` (`out * inner` quaternions, `[o, c]` order) to a `4out x 4inner`
/// plane-major real matrix.
pub(crate) fn expand_weights(w: &QTensor, out: usize, inner: usize) -> Vec<f64> {
    debug_assert_eq!(w.len(), out * inner);
    let cols = 4 * inner;
    let mut m = vec![0.0; 4 * out * cols];
    for (a, row_signs) in LEFT.iter().enumerate() {
        for (b, &(comp, sign)) in row_signs.iter().enumerate() {
            let src = w.plane(comp);
            for o in 0..out {
                let dst = &mut m[(a * out + o) * cols + b * inner..][..inner];
                let s = &src[o * inner..(o + 1) * inner];
                if sign > 0.0 {
                    dst.copy_from_slice(s);
                } else {
                    for (d, v) in dst.iter_mut().zip(s) {
                        *d = -v;
                    }
                }
            }
        }
    }
    m
}

/// Adjoint of [`expand_weights`]: folds a gradient w.r.t. the expanded matrix
/// back onto the quaternion components and adds it into `grad`.
pub(crate) fn reduce_expanded_grad(g: &[f64], out: usize, inner: usize, grad: &mut QTensor) {
    debug_assert_eq!(g.len(), 16 * out * inner);
    let cols = 4 * inner;
    for (a, row_signs) in LEFT.iter().enumerate() {
        for (b, &(comp, sign)) in row_signs.iter().enumerate() {
            let dst = grad.plane_mut(comp);
            for o in 0..out {
                let src = &g[(a * out + o) * cols + b * inner..][..inner];
                for (d, v) in dst[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *d += sign * v;
                }
            }
        }
    }
}

/// Strided view of a real matrix.
#[derive(Clone, Copy)]
pub(crate) struct View<'a> {
    pub data: &'a [f64],
    pub rs: usize,
    pub cs: usize,
}

impl<'a> View<'a> {
    pub fn row_major(data: &'a [f64], cols: usize) -> Self {
        View { data, rs: cols, cs: 1 }
    }

    /// The transpose of a row-major `rows x cols` matrix.
    pub fn transposed(data: &'a [f64], cols: usize) -> Self {
        View { data, rs: 1, cs: cols }
    }
}

fn extent(rows: usize, cols: usize, rs: usize, cs: usize) -> usize {
    if rows == 0 || cols == 0 {
        0
    } else {
        (rows - 1) * rs + (cols - 1) * cs + 1
    }
}

/// `c = a · b + beta · c` for `a: m x k`, `b: k x n`, `c: m x n` (row stride `rsc`).
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: View<'_>,
    b: View<'_>,
    beta: f64,
    c: &mut [f64],
    rsc: usize,
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(extent(m, k, a.rs, a.cs) <= a.data.len(), "gemm: lhs out of bounds");
    assert!(extent(k, n, b.rs, b.cs) <= b.data.len(), "gemm: rhs out of bounds");
    assert!(extent(m, n, rsc, 1) <= c.len(), "gemm: output out of bounds");
    if k == 0 {
        for row in 0..m {
            for v in &mut c[row * rsc..row * rsc + n] {
                *v *= beta;
            }
        }
        return;
    }
    // SAFETY: every index touched by dgemm lies inside the bounds asserted above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr(),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            1,
        );
    }
}

/// Geometry of a 2-D convolution over one sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    pub fn out_positions(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Rows of the unfolded matrix: `4 * channels * kh * kw`.
    pub fn col_rows(&self) -> usize {
        4 * self.channels * self.kh * self.kw
    }

    /// Unfolds sample `n` of `x` (`[B, C, H, W]`) into `cols`
    /// (`col_rows x out_positions`, row order `(component, c, dy, dx)`).
    pub fn im2col(&self, x: &QTensor, n: usize, cols: &mut [f64]) {
        let p = self.out_positions();
        let hw = self.height * self.width;
        let sample = self.channels * hw;
        for comp in 0..4 {
            let plane = &x.plane(comp)[n * sample..(n + 1) * sample];
            for c in 0..self.channels {
                let img = &plane[c * hw..(c + 1) * hw];
                for dy in 0..self.kh {
                    for dx in 0..self.kw {
                        let row = ((comp * self.channels + c) * self.kh + dy) * self.kw + dx;
                        let dst = &mut cols[row * p..(row + 1) * p];
                        for oy in 0..self.out_h {
                            let iy = (oy * self.stride + dy) as isize - self.pad as isize;
                            let line = &mut dst[oy * self.out_w..(oy + 1) * self.out_w];
                            if iy < 0 || iy >= self.height as isize {
                                line.fill(0.0);
                                continue;
                            }
                            let src = &img[iy as usize * self.width..][..self.width];
                            for (ox, v) in line.iter_mut().enumerate() {
                                let ix = (ox * self.stride + dx) as isize - self.pad as isize;
                                *v = if ix < 0 || ix >= self.width as isize {
                                    0.0
                                } else {
                                    src[ix as usize]
                                };
                            }
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`ConvGeom::im2col`]: scatters `cols` back into sample `n` of `dx`.
    pub fn col2im(&self, cols: &[f64], n: usize, dx: &mut QTensor) {
        let p = self.out_positions();
        let hw = self.height * self.width;
        let sample = self.channels * hw;
        for comp in 0..4 {
            let plane = &mut dx.plane_mut(comp)[n * sample..(n + 1) * sample];
            for c in 0..self.channels {
                let img = &mut plane[c * hw..(c + 1) * hw];
                for dy in 0..self.kh {
                    for ddx in 0..self.kw {
                        let row = ((comp * self.channels + c) * self.kh + dy) * self.kw + ddx;
                        let src = &cols[row * p..(row + 1) * p];
                        for oy in 0..self.out_h {
                            let iy = (oy * self.stride + dy) as isize - self.pad as isize;
                            if iy < 0 || iy >= self.height as isize {
                                continue;
                            }
                            let dst = &mut img[iy as usize * self.width..][..self.width];
                            let line = &src[oy * self.out_w..(oy + 1) * self.out_w];
                            for (ox, v) in line.iter().enumerate() {
                                let ix = (ox * self.stride + ddx) as isize - self.pad as isize;
                                if ix >= 0 && ix < self.width as isize {
                                    dst[ix as usize] += v;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}
