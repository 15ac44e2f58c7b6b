use rand::Rng;

use crate::autograd::LayerGrads;
use crate::error::{QvnnError, Result};
use crate::kernels::{expand_weights, gemm, reduce_expanded_grad, ConvGeom, View};
use crate::quat::QTensor;

use super::uniform_init;

/// 2-D quaternion convolution: sliding-window sums of Hamilton products with
/// zero-quaternion padding and one bias per output channel.
#[derive(Clone, Debug, PartialEq)]
pub struct QConv2d {
    /// `[out_channels, in_channels, kh, kw]`
    pub kernels: QTensor,
    /// `[out_channels]`
    pub bias: QTensor,
    pub stride: usize,
    pub padding: usize,
}

#[derive(Clone, Debug)]
pub struct ConvCache {
    geom: ConvGeom,
    batch: usize,
    unbatched: bool,
    /// Unfolded input of every sample, `batch * col_rows * out_positions`.
    cols: Vec<f64>,
    w_expanded: Vec<f64>,
}

impl QConv2d {
    pub fn zeros(
        out_channels: usize,
        in_channels: usize,
        kernel: (usize, usize),
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        if kernel.0 == 0 || kernel.1 == 0 || stride == 0 {
            return Err(QvnnError::Contract(format!(
                "kernel {kernel:?} and stride {stride} must be at least 1"
            )));
        }
        Ok(QConv2d {
            kernels: QTensor::zeros(&[out_channels, in_channels, kernel.0, kernel.1]),
            bias: QTensor::zeros(&[out_channels]),
            stride,
            padding,
        })
    }

    pub fn init<R: Rng + ?Sized>(
        out_channels: usize,
        in_channels: usize,
        kernel: (usize, usize),
        stride: usize,
        padding: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let mut layer = QConv2d::zeros(out_channels, in_channels, kernel, stride, padding)?;
        let fan_in = in_channels * kernel.0 * kernel.1;
        uniform_init(&mut layer.kernels, fan_in, rng);
        Ok(layer)
    }

    pub fn out_channels(&self) -> usize {
        self.kernels.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.kernels.shape()[1]
    }

    pub fn kernel_size(&self) -> (usize, usize) {
        (self.kernels.shape()[2], self.kernels.shape()[3])
    }

    /// Output spatial size for an `height x width` input.
    pub fn output_hw(&self, height: usize, width: usize) -> Result<(usize, usize)> {
        let (kh, kw) = self.kernel_size();
        let (ph, pw) = (height + 2 * self.padding, width + 2 * self.padding);
        if kh > ph || kw > pw {
            return Err(QvnnError::Dimension(format!(
                "kernel {kh}x{kw} larger than padded input {ph}x{pw}"
            )));
        }
        Ok(((ph - kh) / self.stride + 1, (pw - kw) / self.stride + 1))
    }

    fn geometry(&self, x: &QTensor) -> Result<(ConvGeom, usize, bool)> {
        let (batch, c, h, w, unbatched) = match *x.shape() {
            [b, c, h, w] => (b, c, h, w, false),
            [c, h, w] => (1, c, h, w, true),
            _ => {
                return Err(QvnnError::Dimension(format!(
                    "convolution expects [batch, channels, height, width], got {:?}",
                    x.shape()
                )))
            }
        };
        if c != self.in_channels() {
            return Err(QvnnError::Dimension(format!(
                "convolution with kernels {:?} cannot take input {:?}",
                self.kernels.shape(),
                x.shape()
            )));
        }
        let (out_h, out_w) = self.output_hw(h, w)?;
        let (kh, kw) = self.kernel_size();
        let geom = ConvGeom {
            channels: c,
            height: h,
            width: w,
            kh,
            kw,
            stride: self.stride,
            pad: self.padding,
            out_h,
            out_w,
        };
        Ok((geom, batch, unbatched))
    }

    pub fn forward(&self, x: &QTensor) -> Result<QTensor> {
        Ok(self.forward_cached(x)?.0)
    }

    pub fn forward_cached(&self, x: &QTensor) -> Result<(QTensor, ConvCache)> {
        let (geom, batch, unbatched) = self.geometry(x)?;
        let out_c = self.out_channels();
        let inner = self.in_channels() * geom.kh * geom.kw;
        let (rows, p) = (geom.col_rows(), geom.out_positions());
        let w_expanded = expand_weights(&self.kernels, out_c, inner);
        let mut cols = vec![0.0; batch * rows * p];
        let out_shape = if unbatched {
            vec![out_c, geom.out_h, geom.out_w]
        } else {
            vec![batch, out_c, geom.out_h, geom.out_w]
        };
        let mut out = QTensor::zeros(&out_shape);
        let plane_len = out.len();
        let data = out.as_mut_slice();
        for n in 0..batch {
            let sample_cols = &mut cols[n * rows * p..(n + 1) * rows * p];
            geom.im2col(x, n, sample_cols);
            for comp in 0..4 {
                let dst = &mut data[comp * plane_len + n * out_c * p..][..out_c * p];
                gemm(
                    out_c,
                    rows,
                    p,
                    View::row_major(&w_expanded[comp * out_c * rows..], rows),
                    View::row_major(sample_cols, p),
                    0.0,
                    dst,
                    p,
                );
                let bias = self.bias.plane(comp);
                for (o, chunk) in dst.chunks_exact_mut(p).enumerate() {
                    for v in chunk {
                        *v += bias[o];
                    }
                }
            }
        }
        let cache = ConvCache {
            geom,
            batch,
            unbatched,
            cols,
            w_expanded,
        };
        Ok((out, cache))
    }

    pub fn backward(&self, cache: ConvCache, grad: &QTensor) -> Result<(QTensor, LayerGrads)> {
        let ConvCache {
            geom,
            batch,
            unbatched,
            cols,
            w_expanded,
        } = cache;
        let out_c = self.out_channels();
        let inner = self.in_channels() * geom.kh * geom.kw;
        let (rows, p) = (geom.col_rows(), geom.out_positions());
        if grad.len() != batch * out_c * p {
            return Err(QvnnError::Dimension(format!(
                "convolution backward expects {} output gradients, got {:?}",
                batch * out_c * p,
                grad.shape()
            )));
        }
        let plane_len = grad.len();
        let dy = grad.as_slice();

        let mut dbias = QTensor::zeros(&[out_c]);
        for comp in 0..4 {
            let db = dbias.plane_mut(comp);
            let plane = &dy[comp * plane_len..(comp + 1) * plane_len];
            for n in 0..batch {
                for (o, chunk) in plane[n * out_c * p..(n + 1) * out_c * p].chunks_exact(p).enumerate() {
                    db[o] += chunk.iter().sum::<f64>();
                }
            }
        }

        let in_shape = if unbatched {
            vec![geom.channels, geom.height, geom.width]
        } else {
            vec![batch, geom.channels, geom.height, geom.width]
        };
        let mut dinput = QTensor::zeros(&in_shape);
        let mut dw_expanded = vec![0.0; 16 * out_c * inner];
        let mut dcols = vec![0.0; rows * p];
        for n in 0..batch {
            let sample_cols = &cols[n * rows * p..(n + 1) * rows * p];
            for comp in 0..4 {
                let dy_block = &dy[comp * plane_len + n * out_c * p..][..out_c * p];
                gemm(
                    out_c,
                    p,
                    rows,
                    View::row_major(dy_block, p),
                    View::transposed(sample_cols, p),
                    1.0,
                    &mut dw_expanded[comp * out_c * rows..],
                    rows,
                );
                gemm(
                    rows,
                    out_c,
                    p,
                    View::transposed(&w_expanded[comp * out_c * rows..], rows),
                    View::row_major(dy_block, p),
                    if comp == 0 { 0.0 } else { 1.0 },
                    &mut dcols,
                    p,
                );
            }
            geom.col2im(&dcols, n, &mut dinput);
        }
        let mut dkernels = QTensor::zeros(self.kernels.shape());
        reduce_expanded_grad(&dw_expanded, out_c, inner, &mut dkernels);
        let grads = LayerGrads {
            weight: Some(dkernels),
            bias: Some(dbias),
            ..LayerGrads::default()
        };
        Ok((dinput, grads))
    }
}

pub fn qconv2d_forward(layer: &QConv2d, x: &QTensor) -> Result<QTensor> {
    layer.forward(x)
}
