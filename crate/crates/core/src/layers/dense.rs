use rand::Rng;

use crate::autograd::LayerGrads;
use crate::error::{QvnnError, Result};
use crate::kernels::{expand_weights, gemm, reduce_expanded_grad, View};
use crate::quat::QTensor;

use super::uniform_init;

/// Fully connected quaternion layer computing `W ⊗ h + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct QDense {
    /// `[out, in]`
    pub weight: QTensor,
    /// `[out]`
    pub bias: QTensor,
}

#[derive(Clone, Debug)]
pub struct DenseCache {
    input_shape: Vec<usize>,
    batch: usize,
    /// `batch x 4in`, row `n` = `[h_r(n), h_i(n), h_j(n), h_k(n)]`.
    x: Vec<f64>,
    w_expanded: Vec<f64>,
}

impl QDense {
    pub fn zeros(out_features: usize, in_features: usize) -> Self {
        QDense {
            weight: QTensor::zeros(&[out_features, in_features]),
            bias: QTensor::zeros(&[out_features]),
        }
    }

    pub fn init<R: Rng + ?Sized>(out_features: usize, in_features: usize, rng: &mut R) -> Self {
        let mut layer = QDense::zeros(out_features, in_features);
        uniform_init(&mut layer.weight, in_features, rng);
        layer
    }

    pub fn out_features(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn in_features(&self) -> usize {
        self.weight.shape()[1]
    }

    /// Interprets `h` as `[batch, ...]` (or a single unbatched `[in]` vector).
    fn batch_of(&self, h: &QTensor) -> Result<usize> {
        let in_f = self.in_features();
        if h.shape() == [in_f] {
            return Ok(1);
        }
        match h.shape().split_first() {
            Some((&b, rest)) if !rest.is_empty() && rest.iter().product::<usize>() == in_f => Ok(b),
            _ => Err(QvnnError::Dimension(format!(
                "dense layer {:?} cannot take input {:?}",
                self.weight.shape(),
                h.shape()
            ))),
        }
    }

    pub fn forward(&self, h: &QTensor) -> Result<QTensor> {
        Ok(self.forward_cached(h)?.0)
    }

    pub fn forward_cached(&self, h: &QTensor) -> Result<(QTensor, DenseCache)> {
        let batch = self.batch_of(h)?;
        let (out_f, in_f) = (self.out_features(), self.in_features());
        let mut x = vec![0.0; batch * 4 * in_f];
        for comp in 0..4 {
            let plane = h.plane(comp);
            for n in 0..batch {
                x[n * 4 * in_f + comp * in_f..][..in_f]
                    .copy_from_slice(&plane[n * in_f..(n + 1) * in_f]);
            }
        }
        let w_expanded = expand_weights(&self.weight, out_f, in_f);
        let mut y = vec![0.0; batch * 4 * out_f];
        gemm(
            batch,
            4 * in_f,
            4 * out_f,
            View::row_major(&x, 4 * in_f),
            View::transposed(&w_expanded, 4 * in_f),
            0.0,
            &mut y,
            4 * out_f,
        );
        let out_shape: Vec<usize> = if h.shape() == [in_f] {
            vec![out_f]
        } else {
            vec![batch, out_f]
        };
        let mut out = QTensor::zeros(&out_shape);
        for comp in 0..4 {
            let bias = self.bias.plane(comp);
            let plane = out.plane_mut(comp);
            for n in 0..batch {
                let src = &y[n * 4 * out_f + comp * out_f..][..out_f];
                for ((d, s), b) in plane[n * out_f..(n + 1) * out_f].iter_mut().zip(src).zip(bias) {
                    *d = s + b;
                }
            }
        }
        let cache = DenseCache {
            input_shape: h.shape().to_vec(),
            batch,
            x,
            w_expanded,
        };
        Ok((out, cache))
    }

    pub fn backward(&self, cache: DenseCache, grad: &QTensor) -> Result<(QTensor, LayerGrads)> {
        let (out_f, in_f) = (self.out_features(), self.in_features());
        let batch = cache.batch;
        if grad.len() != batch * out_f {
            return Err(QvnnError::Dimension(format!(
                "dense backward expects {} output gradients, got {:?}",
                batch * out_f,
                grad.shape()
            )));
        }
        let mut dy = vec![0.0; batch * 4 * out_f];
        let mut dbias = QTensor::zeros(&[out_f]);
        for comp in 0..4 {
            let plane = grad.plane(comp);
            let db = dbias.plane_mut(comp);
            for n in 0..batch {
                let src = &plane[n * out_f..(n + 1) * out_f];
                dy[n * 4 * out_f + comp * out_f..][..out_f].copy_from_slice(src);
                for (d, s) in db.iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
        let mut dw_expanded = vec![0.0; 16 * out_f * in_f];
        gemm(
            4 * out_f,
            batch,
            4 * in_f,
            View::transposed(&dy, 4 * out_f),
            View::row_major(&cache.x, 4 * in_f),
            0.0,
            &mut dw_expanded,
            4 * in_f,
        );
        let mut dweight = QTensor::zeros(self.weight.shape());
        reduce_expanded_grad(&dw_expanded, out_f, in_f, &mut dweight);

        let mut dx = vec![0.0; batch * 4 * in_f];
        gemm(
            batch,
            4 * out_f,
            4 * in_f,
            View::row_major(&dy, 4 * out_f),
            View::row_major(&cache.w_expanded, 4 * in_f),
            0.0,
            &mut dx,
            4 * in_f,
        );
        let mut dinput = QTensor::zeros(&cache.input_shape);
        for comp in 0..4 {
            let plane = dinput.plane_mut(comp);
            for n in 0..batch {
                plane[n * in_f..(n + 1) * in_f]
                    .copy_from_slice(&dx[n * 4 * in_f + comp * in_f..][..in_f]);
            }
        }
        let grads = LayerGrads {
            weight: Some(dweight),
            bias: Some(dbias),
            ..LayerGrads::default()
        };
        Ok((dinput, grads))
    }
}

/// Computes the pre-activation `W ⊗ h + b` of a dense layer.
pub fn qdense_forward(layer: &QDense, h: &QTensor) -> Result<QTensor> {
    layer.forward(h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quat::{hamilton_mul, qmatvec, Quaternion};

    #[test]
    fn zero_weights_return_bias() {
        let mut layer = QDense::zeros(3, 2);
        for o in 0..3 {
            layer.bias.set(o, Quaternion::new(1.0, 2.0, 3.0, 4.0));
        }
        let h = QTensor::from_fn(&[2], |n| Quaternion::new(n as f64, 1.0, 1.0, 1.0));
        let out = layer.forward(&h).unwrap();
        assert_eq!(out.shape(), &[3]);
        assert!(out.iter().all(|q| q == Quaternion::new(1.0, 2.0, 3.0, 4.0)));
    }

    #[test]
    fn single_unit_is_a_hamilton_product() {
        let mut layer = QDense::zeros(1, 1);
        let (w, x) = (Quaternion::new(1.0, 2.0, 3.0, 4.0), Quaternion::new(5.0, 6.0, 7.0, 8.0));
        layer.weight.set(0, w);
        let h = QTensor::from_quaternions(&[1], &[x]).unwrap();
        assert_eq!(layer.forward(&h).unwrap().get(0), hamilton_mul(w, x));
    }

    #[test]
    fn batched_rows_match_qmatvec_and_are_deterministic() {
        let layer = QDense::init(4, 3, &mut rand::rngs::mock::StepRng::new(1 << 60, 1 << 58));
        let row = QTensor::from_fn(&[3], |n| Quaternion::new(0.1 * n as f64, -0.2, 0.3, 1.0));
        let batch = QTensor::from_fn(&[2, 3], |n| row.get(n % 3));
        let out = layer.forward(&batch).unwrap();
        let expected = qmatvec(&layer.weight, &row).unwrap();
        for n in 0..2 {
            for o in 0..4 {
                assert!((out.get(n * 4 + o) - expected.get(o)).norm() < 1e-12);
            }
        }
        assert_eq!(out.get(1), out.get(5));
    }

    #[test]
    fn real_restriction_is_an_ordinary_dense_layer() {
        let mut layer = QDense::zeros(2, 3);
        let w = [[0.5, -1.0, 2.0], [1.5, 0.25, -0.75]];
        for o in 0..2 {
            for i in 0..3 {
                layer.weight.set(o * 3 + i, Quaternion::new(w[o][i], 0.0, 0.0, 0.0));
            }
            layer.bias.set(o, Quaternion::new(0.1 * o as f64, 0.0, 0.0, 0.0));
        }
        let x = [1.0, -2.0, 0.5];
        let h = QTensor::from_fn(&[3], |n| Quaternion::new(x[n], 0.0, 0.0, 0.0));
        let out = layer.forward(&h).unwrap();
        for o in 0..2 {
            let real: f64 = (0..3).map(|i| w[o][i] * x[i]).sum::<f64>() + 0.1 * o as f64;
            assert_eq!(out.get(o), Quaternion::new(real, 0.0, 0.0, 0.0));
        }
    }

    #[test]
    fn rejects_wrong_input_width() {
        let layer = QDense::zeros(2, 3);
        assert!(matches!(
            layer.forward(&QTensor::zeros(&[4])),
            Err(QvnnError::Dimension(_))
        ));
    }
}
