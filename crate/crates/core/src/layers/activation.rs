use crate::error::{QvnnError, Result};
use crate::quat::QTensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ActivationKind {
    Relu,
}

impl ActivationKind {
    pub fn code(self) -> u32 {
        match self {
            ActivationKind::Relu => 0,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(ActivationKind::Relu),
            _ => None,
        }
    }

    #[inline]
    pub fn apply(self, v: f64) -> f64 {
        match self {
            ActivationKind::Relu => v.max(0.0),
        }
    }

    /// Derivative, with the subgradient at the kink taken as 0.
    #[inline]
    pub fn derivative(self, v: f64) -> f64 {
        match self {
            ActivationKind::Relu => {
                if v > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Real nonlinearity applied to each of the four components independently.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SplitActivation {
    pub kind: ActivationKind,
}

#[derive(Clone, Debug)]
pub struct ActivationCache {
    /// Per-component derivative of the activation at the input.
    pub(crate) slope: Vec<f64>,
}

impl SplitActivation {
    pub fn relu() -> Self {
        SplitActivation {
            kind: ActivationKind::Relu,
        }
    }

    pub fn forward(&self, h: &QTensor) -> QTensor {
        h.map_components(|v| self.kind.apply(v))
    }

    pub fn forward_cached(&self, h: &QTensor) -> (QTensor, ActivationCache) {
        let slope = h.as_slice().iter().map(|&v| self.kind.derivative(v)).collect();
        (self.forward(h), ActivationCache { slope })
    }

    pub fn backward(&self, cache: ActivationCache, grad: &QTensor) -> Result<QTensor> {
        if grad.as_slice().len() != cache.slope.len() {
            return Err(QvnnError::Dimension(format!(
                "activation backward got gradient {:?} for {} cached components",
                grad.shape(),
                cache.slope.len()
            )));
        }
        let data = grad
            .as_slice()
            .iter()
            .zip(&cache.slope)
            .map(|(g, s)| g * s)
            .collect();
        QTensor::from_raw(grad.shape(), data)
    }
}

pub fn split_activation(h: &QTensor, kind: ActivationKind) -> QTensor {
    SplitActivation { kind }.forward(h)
}
