//! Quaternion batch normalization.
//!
//! Per channel, the batch mean is a quaternion and the variance is the real
//! scalar `(1/N) Σ |h − μ|²`. The output is `γ (h − μ) / sqrt(σ² + ε) + β` with
//! real `γ` and quaternion `β`. Convolutional inputs pool statistics over the
//! batch and all spatial positions of the channel.

use crate::autograd::LayerGrads;
use crate::error::{QvnnError, Result};
use crate::quat::{QTensor, Quaternion};

pub const DEFAULT_EPSILON: f64 = 1e-5;
pub const DEFAULT_MOMENTUM: f64 = 0.9;

#[derive(Clone, Debug, PartialEq)]
pub struct QBatchNorm {
    pub gamma: Vec<f64>,
    /// `[channels]`
    pub beta: QTensor,
    /// `[channels]`
    pub running_mean: QTensor,
    pub running_var: Vec<f64>,
    pub epsilon: f64,
    /// Running statistics follow `running = momentum * running + (1 − momentum) * batch`.
    pub momentum: f64,
}

/// Statistics of one training batch, and what backward needs.
#[derive(Clone, Debug)]
pub struct BnCache {
    pub(crate) mean: Vec<Quaternion>,
    pub(crate) var: Vec<f64>,
    xhat: QTensor,
    inv_std: Vec<f64>,
}

impl QBatchNorm {
    pub fn new(channels: usize) -> Self {
        QBatchNorm {
            gamma: vec![1.0; channels],
            beta: QTensor::zeros(&[channels]),
            running_mean: QTensor::zeros(&[channels]),
            running_var: vec![1.0; channels],
            epsilon: DEFAULT_EPSILON,
            momentum: DEFAULT_MOMENTUM,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    /// (batch, spatial) for an input `[batch, channels, ...]`.
    fn layout(&self, h: &QTensor) -> Result<(usize, usize)> {
        match h.shape() {
            [b, c, rest @ ..] if *c == self.channels() => Ok((*b, rest.iter().product())),
            _ => Err(QvnnError::Dimension(format!(
                "batch norm over {} channels cannot take input {:?}",
                self.channels(),
                h.shape()
            ))),
        }
    }

    fn normalize(&self, h: &QTensor, mean: &[Quaternion], inv_std: &[f64]) -> Result<(QTensor, QTensor)> {
        let (batch, spatial) = self.layout(h)?;
        let channels = self.channels();
        let mut xhat = QTensor::zeros(h.shape());
        let mut out = QTensor::zeros(h.shape());
        for comp in 0..4 {
            let src = h.plane(comp);
            let beta = self.beta.plane(comp);
            let xh = xhat.plane_mut(comp);
            let dst = out.plane_mut(comp);
            for n in 0..batch {
                for c in 0..channels {
                    let mu = mean[c].to_array()[comp];
                    let base = (n * channels + c) * spatial;
                    for s in base..base + spatial {
                        let v = (src[s] - mu) * inv_std[c];
                        xh[s] = v;
                        dst[s] = self.gamma[c] * v + beta[c];
                    }
                }
            }
        }
        Ok((out, xhat))
    }

    /// Training-mode forward using batch statistics. Running statistics are
    /// not touched here; see [`QBatchNorm::update_running`].
    pub fn forward_train(&self, h: &QTensor) -> Result<(QTensor, BnCache)> {
        let (batch, spatial) = self.layout(h)?;
        let count = batch * spatial;
        if count == 0 {
            return Err(QvnnError::Contract(
                "batch norm needs at least one sample in training mode".into(),
            ));
        }
        let channels = self.channels();
        let mut sums = vec![[0.0f64; 4]; channels];
        for comp in 0..4 {
            let src = h.plane(comp);
            for n in 0..batch {
                for (c, sum) in sums.iter_mut().enumerate() {
                    let base = (n * channels + c) * spatial;
                    sum[comp] += src[base..base + spatial].iter().sum::<f64>();
                }
            }
        }
        let mean: Vec<Quaternion> = sums
            .iter()
            .map(|s| Quaternion::from_array(s.map(|v| v / count as f64)))
            .collect();
        let mut var = vec![0.0; channels];
        for comp in 0..4 {
            let src = h.plane(comp);
            for n in 0..batch {
                for c in 0..channels {
                    let mu = mean[c].to_array()[comp];
                    let base = (n * channels + c) * spatial;
                    var[c] += src[base..base + spatial]
                        .iter()
                        .map(|v| (v - mu) * (v - mu))
                        .sum::<f64>();
                }
            }
        }
        for v in &mut var {
            *v /= count as f64;
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.epsilon).sqrt()).collect();
        let (out, xhat) = self.normalize(h, &mean, &inv_std)?;
        Ok((
            out,
            BnCache {
                mean,
                var,
                xhat,
                inv_std,
            },
        ))
    }

    /// Inference-mode forward using the running statistics.
    pub fn forward_eval(&self, h: &QTensor) -> Result<QTensor> {
        let mean = self.running_mean.to_quaternions();
        let inv_std: Vec<f64> = self
            .running_var
            .iter()
            .map(|v| 1.0 / (v + self.epsilon).sqrt())
            .collect();
        Ok(self.normalize(h, &mean, &inv_std)?.0)
    }

    pub fn update_running(&mut self, cache: &BnCache) {
        let m = self.momentum;
        for c in 0..self.channels() {
            let old = self.running_mean.get(c);
            self.running_mean
                .set(c, old.scale(m) + cache.mean[c].scale(1.0 - m));
            self.running_var[c] = m * self.running_var[c] + (1.0 - m) * cache.var[c];
        }
    }

    /// Full gradient through the batch statistics.
    pub fn backward(&self, cache: BnCache, grad: &QTensor) -> Result<(QTensor, LayerGrads)> {
        let (batch, spatial) = self.layout(grad)?;
        let channels = self.channels();
        let count = (batch * spatial) as f64;
        let xhat = &cache.xhat;

        let mut dgamma = vec![0.0; channels];
        let mut dbeta = QTensor::zeros(&[channels]);
        for comp in 0..4 {
            let g = grad.plane(comp);
            let xh = xhat.plane(comp);
            let db = dbeta.plane_mut(comp);
            for n in 0..batch {
                for c in 0..channels {
                    let base = (n * channels + c) * spatial;
                    for s in base..base + spatial {
                        db[c] += g[s];
                        dgamma[c] += g[s] * xh[s];
                    }
                }
            }
        }
        // With dx̂ = γ dy: mean(dx̂) = γ dβ / N and mean<dx̂, x̂> = γ dγ / N.
        let mut dinput = QTensor::zeros(grad.shape());
        for comp in 0..4 {
            let g = grad.plane(comp);
            let xh = xhat.plane(comp);
            let db = dbeta.plane(comp).to_vec();
            let dst = dinput.plane_mut(comp);
            for n in 0..batch {
                for c in 0..channels {
                    let gamma = self.gamma[c];
                    let mean_dxhat = gamma * db[c] / count;
                    let proj = gamma * dgamma[c] / count;
                    let scale = cache.inv_std[c];
                    let base = (n * channels + c) * spatial;
                    for s in base..base + spatial {
                        dst[s] = scale * (gamma * g[s] - mean_dxhat - xh[s] * proj);
                    }
                }
            }
        }
        let grads = LayerGrads {
            gamma: Some(dgamma),
            beta: Some(dbeta),
            ..LayerGrads::default()
        };
        Ok((dinput, grads))
    }
}

/// Batch-norm forward in training (batch statistics) or inference mode.
/// Training mode also advances the running statistics.
pub fn qbn_forward(layer: &mut QBatchNorm, h: &QTensor, training: bool) -> Result<QTensor> {
    if training {
        let (out, cache) = layer.forward_train(h)?;
        layer.update_running(&cache);
        Ok(out)
    } else {
        layer.forward_eval(h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_batch(shape: &[usize], seed: u64) -> QTensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        QTensor::from_fn(shape, |_| {
            Quaternion::new(
                rng.gen_range(-2.0..3.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(0.0..4.0),
                rng.gen_range(-3.0..0.5),
            )
        })
    }

    #[test]
    fn identical_batch_normalizes_to_zero() {
        let bn = QBatchNorm::new(1);
        let v = Quaternion::new(0.3, -1.0, 2.0, 5.0);
        let h = QTensor::from_fn(&[4, 1], |_| v);
        let (out, cache) = bn.forward_train(&h).unwrap();
        assert_eq!(cache.var[0], 0.0);
        assert!(out.as_slice().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn zero_gamma_outputs_beta_exactly() {
        let mut bn = QBatchNorm::new(2);
        bn.gamma = vec![0.0, 0.0];
        let beta = [Quaternion::new(1.0, -2.0, 0.5, 0.0), Quaternion::new(0.0, 0.0, 3.0, -1.0)];
        bn.beta = QTensor::from_quaternions(&[2], &beta).unwrap();
        let h = random_batch(&[5, 2, 3, 3], 1);
        let (out, _) = bn.forward_train(&h).unwrap();
        for n in 0..5 {
            for c in 0..2 {
                for s in 0..9 {
                    assert_eq!(out.get((n * 2 + c) * 9 + s), beta[c]);
                }
            }
        }
    }

    #[test]
    fn output_statistics_are_standardized() {
        let bn = QBatchNorm::new(3);
        let h = random_batch(&[64, 3], 2);
        let (out, _) = bn.forward_train(&h).unwrap();
        for c in 0..3 {
            let vals: Vec<Quaternion> = (0..64).map(|n| out.get(n * 3 + c)).collect();
            let mean = vals.iter().fold(Quaternion::ZERO, |a, &b| a + b).scale(1.0 / 64.0);
            let msq = vals.iter().map(|q| q.norm_sqr()).sum::<f64>() / 64.0;
            assert!(mean.norm() < 1e-6);
            assert!((msq - 1.0).abs() < 1e-3, "mean squared norm {msq}");
        }
    }

    #[test]
    fn inference_uses_running_statistics() {
        let mut bn = QBatchNorm::new(1);
        let h = random_batch(&[8, 1], 3);
        // Fresh layer: μ = 0, σ² = 1.
        let fresh = bn.forward_eval(&h).unwrap();
        let scale = 1.0 / (1.0 + bn.epsilon).sqrt();
        for n in 0..8 {
            assert!((fresh.get(n) - h.get(n).scale(scale)).norm() < 1e-12);
        }
        let trained = qbn_forward(&mut bn, &h, true).unwrap();
        assert!(bn.running_var[0] != 1.0);
        assert!(bn.running_var.iter().all(|&v| v >= 0.0));
        let frozen = qbn_forward(&mut bn, &h, false).unwrap();
        assert_ne!(trained, frozen);
        // Evaluation does not depend on how the data is batched.
        let half = bn.forward_eval(&h.select_rows(&[0, 1, 2, 3]).unwrap()).unwrap();
        for n in 0..4 {
            assert_eq!(half.get(n), frozen.get(n));
        }
    }

    #[test]
    fn zero_gamma_disconnects_the_input() {
        let mut bn = QBatchNorm::new(2);
        bn.gamma = vec![0.0, 0.7];
        let h = random_batch(&[6, 2, 2], 4);
        let (_, cache) = bn.forward_train(&h).unwrap();
        let g = random_batch(&[6, 2, 2], 5);
        let (dx, grads) = bn.backward(cache, &g).unwrap();
        for n in 0..6 {
            for s in 0..2 {
                assert_eq!(dx.get((n * 2) * 2 + s), Quaternion::ZERO);
            }
        }
        assert!(grads.gamma.unwrap()[0] != 0.0);
    }
}
