//! Layer types of a quaternion network and their forward/backward passes.

pub mod activation;
pub mod batchnorm;
pub mod conv;
pub mod dense;
pub mod dropout;
pub mod head;
pub mod pool;

use std::hash::{Hash, Hasher};

use rand::{Rng, RngCore};

pub use activation::{split_activation, ActivationKind, SplitActivation};
pub use batchnorm::{qbn_forward, QBatchNorm};
pub use conv::{qconv2d_forward, QConv2d};
pub use dense::{qdense_forward, QDense};
pub use dropout::{qdropout_forward, QDropout};
pub use head::{abs_head, softmax, softmax_xent};
pub use pool::{quat_maxpool, QMaxPool};

use crate::autograd::{LayerGrads, ParamKind};
use crate::error::{QvnnError, Result};
use crate::quat::QTensor;

/// Draws every weight component uniformly from `[−s, s]`, `s = sqrt(3 / (4 fan_in))`,
/// so that `E|w|² = 1 / fan_in`.
pub fn uniform_init<R: Rng + ?Sized>(w: &mut QTensor, fan_in: usize, rng: &mut R) {
    let s = (3.0 / (4.0 * fan_in.max(1) as f64)).sqrt();
    for v in w.as_mut_slice() {
        *v = rng.gen_range(-s..=s);
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    Dense(QDense),
    Conv2d(QConv2d),
    BatchNorm(QBatchNorm),
    Activation(SplitActivation),
    MaxPool(QMaxPool),
    Dropout(QDropout),
}

/// Forward state of one layer application.
#[derive(Clone, Debug)]
pub enum TapeNode {
    Dense(dense::DenseCache),
    Conv2d(conv::ConvCache),
    BatchNorm(batchnorm::BnCache),
    Activation(activation::ActivationCache),
    MaxPool(pool::PoolCache),
    Dropout(dropout::DropoutCache),
}

impl TapeNode {
    pub(crate) fn hash_branches<H: Hasher>(&self, h: &mut H) {
        match self {
            TapeNode::Activation(c) => {
                for s in &c.slope {
                    (*s > 0.0).hash(h);
                }
            }
            TapeNode::MaxPool(c) => c.argmax.hash(h),
            TapeNode::Dropout(c) => {
                if let Some(mask) = &c.mask {
                    for m in mask {
                        (*m > 0.0).hash(h);
                    }
                }
            }
            _ => {}
        }
    }
}

impl Layer {
    pub fn name(&self) -> &'static str {
        match self {
            Layer::Dense(_) => "dense",
            Layer::Conv2d(_) => "conv2d",
            Layer::BatchNorm(_) => "batchnorm",
            Layer::Activation(_) => "activation",
            Layer::MaxPool(_) => "maxpool",
            Layer::Dropout(_) => "dropout",
        }
    }

    /// Training-mode forward. Batch norm uses batch statistics but leaves its
    /// running statistics alone (the model applies them afterwards).
    pub fn forward_train(&self, x: &QTensor, rng: &mut dyn RngCore) -> Result<(QTensor, TapeNode)> {
        Ok(match self {
            Layer::Dense(l) => {
                let (y, c) = l.forward_cached(x)?;
                (y, TapeNode::Dense(c))
            }
            Layer::Conv2d(l) => {
                let (y, c) = l.forward_cached(x)?;
                (y, TapeNode::Conv2d(c))
            }
            Layer::BatchNorm(l) => {
                let (y, c) = l.forward_train(x)?;
                (y, TapeNode::BatchNorm(c))
            }
            Layer::Activation(l) => {
                let (y, c) = l.forward_cached(x);
                (y, TapeNode::Activation(c))
            }
            Layer::MaxPool(l) => {
                let (y, c) = l.forward_cached(x)?;
                (y, TapeNode::MaxPool(c))
            }
            Layer::Dropout(l) => {
                let (y, c) = l.forward_train(x, rng);
                (y, TapeNode::Dropout(c))
            }
        })
    }

    pub fn forward_eval(&self, x: &QTensor) -> Result<QTensor> {
        match self {
            Layer::Dense(l) => l.forward(x),
            Layer::Conv2d(l) => l.forward(x),
            Layer::BatchNorm(l) => l.forward_eval(x),
            Layer::Activation(l) => Ok(l.forward(x)),
            Layer::MaxPool(l) => l.forward(x),
            Layer::Dropout(_) => Ok(x.clone()),
        }
    }

    pub fn backward(&self, node: TapeNode, grad: &QTensor) -> Result<(QTensor, LayerGrads)> {
        match (self, node) {
            (Layer::Dense(l), TapeNode::Dense(c)) => l.backward(c, grad),
            (Layer::Conv2d(l), TapeNode::Conv2d(c)) => l.backward(c, grad),
            (Layer::BatchNorm(l), TapeNode::BatchNorm(c)) => l.backward(c, grad),
            (Layer::Activation(l), TapeNode::Activation(c)) => Ok((l.backward(c, grad)?, LayerGrads::default())),
            (Layer::MaxPool(l), TapeNode::MaxPool(c)) => Ok((l.backward(c, grad)?, LayerGrads::default())),
            (Layer::Dropout(l), TapeNode::Dropout(c)) => Ok((l.backward(c, grad)?, LayerGrads::default())),
            (layer, _) => Err(QvnnError::State(format!(
                "tape node does not belong to a {} layer",
                layer.name()
            ))),
        }
    }

    pub fn zero_grads(&self) -> LayerGrads {
        match self {
            Layer::Dense(l) => LayerGrads {
                weight: Some(QTensor::zeros(l.weight.shape())),
                bias: Some(QTensor::zeros(l.bias.shape())),
                ..LayerGrads::default()
            },
            Layer::Conv2d(l) => LayerGrads {
                weight: Some(QTensor::zeros(l.kernels.shape())),
                bias: Some(QTensor::zeros(l.bias.shape())),
                ..LayerGrads::default()
            },
            Layer::BatchNorm(l) => LayerGrads {
                gamma: Some(vec![0.0; l.channels()]),
                beta: Some(QTensor::zeros(l.beta.shape())),
                ..LayerGrads::default()
            },
            _ => LayerGrads::default(),
        }
    }

    /// Trainable parameters in canonical order (weight, bias, gamma, beta).
    pub fn params(&self) -> Vec<(ParamKind, &[f64])> {
        match self {
            Layer::Dense(l) => vec![
                (ParamKind::Weight, l.weight.as_slice()),
                (ParamKind::Bias, l.bias.as_slice()),
            ],
            Layer::Conv2d(l) => vec![
                (ParamKind::Weight, l.kernels.as_slice()),
                (ParamKind::Bias, l.bias.as_slice()),
            ],
            Layer::BatchNorm(l) => vec![
                (ParamKind::Gamma, l.gamma.as_slice()),
                (ParamKind::Beta, l.beta.as_slice()),
            ],
            _ => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<(ParamKind, &mut [f64])> {
        match self {
            Layer::Dense(l) => vec![
                (ParamKind::Weight, l.weight.as_mut_slice()),
                (ParamKind::Bias, l.bias.as_mut_slice()),
            ],
            Layer::Conv2d(l) => vec![
                (ParamKind::Weight, l.kernels.as_mut_slice()),
                (ParamKind::Bias, l.bias.as_mut_slice()),
            ],
            Layer::BatchNorm(l) => vec![
                (ParamKind::Gamma, l.gamma.as_mut_slice()),
                (ParamKind::Beta, l.beta.as_mut_slice()),
            ],
            _ => Vec::new(),
        }
    }

    /// Quaternion weight tensor (dense weights or convolution kernels).
    pub fn weight(&self) -> Option<&QTensor> {
        match self {
            Layer::Dense(l) => Some(&l.weight),
            Layer::Conv2d(l) => Some(&l.kernels),
            _ => None,
        }
    }

    pub fn param_value(&self, kind: ParamKind, idx: usize) -> f64 {
        self.params()
            .into_iter()
            .find(|(k, _)| *k == kind)
            .map(|(_, s)| s[idx])
            .unwrap_or(f64::NAN)
    }

    pub fn set_param_value(&mut self, kind: ParamKind, idx: usize, value: f64) {
        if let Some((_, s)) = self.params_mut().into_iter().find(|(k, _)| *k == kind) {
            s[idx] = value;
        }
    }

    /// Per-sample output shape for a per-sample input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match self {
            Layer::Dense(l) => {
                if input.iter().product::<usize>() != l.in_features() {
                    return Err(QvnnError::Dimension(format!(
                        "dense layer {:?} cannot take input {:?}",
                        l.weight.shape(),
                        input
                    )));
                }
                Ok(vec![l.out_features()])
            }
            Layer::Conv2d(l) => match *input {
                [c, h, w] if c == l.in_channels() => {
                    let (oh, ow) = l.output_hw(h, w)?;
                    Ok(vec![l.out_channels(), oh, ow])
                }
                _ => Err(QvnnError::Dimension(format!(
                    "convolution with kernels {:?} cannot take input {:?}",
                    l.kernels.shape(),
                    input
                ))),
            },
            Layer::BatchNorm(l) => match input.first() {
                Some(&c) if c == l.channels() => Ok(input.to_vec()),
                _ => Err(QvnnError::Dimension(format!(
                    "batch norm over {} channels cannot take input {:?}",
                    l.channels(),
                    input
                ))),
            },
            Layer::MaxPool(l) => match *input {
                [c, h, w] => {
                    let (oh, ow) = l.output_hw(h, w)?;
                    Ok(vec![c, oh, ow])
                }
                _ => Err(QvnnError::Dimension(format!(
                    "max-pool cannot take input {input:?}"
                ))),
            },
            Layer::Activation(_) | Layer::Dropout(_) => Ok(input.to_vec()),
        }
    }
}
