use crate::error::{QvnnError, Result};
use crate::quat::QTensor;

/// Max-pooling over whole quaternions: each window emits its element with the
/// largest norm, ties going to the first in row-major order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct QMaxPool {
    pub window: usize,
    pub stride: usize,
}

impl Default for QMaxPool {
    fn default() -> Self {
        QMaxPool { window: 2, stride: 2 }
    }
}

#[derive(Clone, Debug)]
pub struct PoolCache {
    input_shape: Vec<usize>,
    /// Flat input index of the winner of every output element.
    pub(crate) argmax: Vec<usize>,
}

impl QMaxPool {
    pub fn output_hw(&self, height: usize, width: usize) -> Result<(usize, usize)> {
        if self.window == 0 || self.stride == 0 || height < self.window || width < self.window {
            return Err(QvnnError::Dimension(format!(
                "pool window {} stride {} does not fit {height}x{width}",
                self.window, self.stride
            )));
        }
        Ok((
            (height - self.window) / self.stride + 1,
            (width - self.window) / self.stride + 1,
        ))
    }

    pub fn forward(&self, x: &QTensor) -> Result<QTensor> {
        Ok(self.forward_cached(x)?.0)
    }

    pub fn forward_cached(&self, x: &QTensor) -> Result<(QTensor, PoolCache)> {
        let (lead, h, w, out_shape): (usize, usize, usize, Vec<usize>) = match *x.shape() {
            [b, c, h, w] => {
                let (oh, ow) = self.output_hw(h, w)?;
                (b * c, h, w, vec![b, c, oh, ow])
            }
            [c, h, w] => {
                let (oh, ow) = self.output_hw(h, w)?;
                (c, h, w, vec![c, oh, ow])
            }
            _ => {
                return Err(QvnnError::Dimension(format!(
                    "max-pool expects [batch, channels, height, width], got {:?}",
                    x.shape()
                )))
            }
        };
        let (oh, ow) = self.output_hw(h, w)?;
        let mut norms = vec![0.0; x.len()];
        for comp in 0..4 {
            for (n, v) in norms.iter_mut().zip(x.plane(comp)) {
                *n += v * v;
            }
        }
        let mut argmax = Vec::with_capacity(lead * oh * ow);
        for m in 0..lead {
            let base = m * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = base + oy * self.stride * w + ox * self.stride;
                    for dy in 0..self.window {
                        for dx in 0..self.window {
                            let idx = base + (oy * self.stride + dy) * w + ox * self.stride + dx;
                            if norms[idx] > norms[best] {
                                best = idx;
                            }
                        }
                    }
                    argmax.push(best);
                }
            }
        }
        let mut out = QTensor::zeros(&out_shape);
        for comp in 0..4 {
            let src = x.plane(comp);
            for (d, &idx) in out.plane_mut(comp).iter_mut().zip(&argmax) {
                *d = src[idx];
            }
        }
        Ok((
            out,
            PoolCache {
                input_shape: x.shape().to_vec(),
                argmax,
            },
        ))
    }

    /// Routes each output gradient to its window's winner.
    pub fn backward(&self, cache: PoolCache, grad: &QTensor) -> Result<QTensor> {
        if grad.len() != cache.argmax.len() {
            return Err(QvnnError::Dimension(format!(
                "max-pool backward got gradient {:?} for {} outputs",
                grad.shape(),
                cache.argmax.len()
            )));
        }
        let mut dx = QTensor::zeros(&cache.input_shape);
        for comp in 0..4 {
            let g = grad.plane(comp);
            let dst = dx.plane_mut(comp);
            for (&idx, v) in cache.argmax.iter().zip(g) {
                dst[idx] += v;
            }
        }
        Ok(dx)
    }
}

/// 2x2, stride-2 quaternion max-pooling.
pub fn quat_maxpool(x: &QTensor) -> Result<QTensor> {
    QMaxPool::default().forward(x)
}
