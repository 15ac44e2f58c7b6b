use rand::{Rng, RngCore};

use crate::error::{QvnnError, Result};
use crate::quat::QTensor;

/// Dropout over whole quaternions: all four components of an element are
/// kept or dropped together; survivors are scaled by `1 / (1 − p)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QDropout {
    pub p: f64,
}

#[derive(Clone, Debug)]
pub struct DropoutCache {
    /// Per-quaternion multiplier (0 or `1 / (1 − p)`); `None` when `p == 0`.
    pub(crate) mask: Option<Vec<f64>>,
}

impl QDropout {
    pub fn new(p: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&p) {
            return Err(QvnnError::Contract(format!(
                "dropout probability {p} outside [0, 1)"
            )));
        }
        Ok(QDropout { p })
    }

    pub fn is_active(&self) -> bool {
        self.p > 0.0
    }

    pub fn forward_train(&self, h: &QTensor, rng: &mut dyn RngCore) -> (QTensor, DropoutCache) {
        if !self.is_active() {
            return (h.clone(), DropoutCache { mask: None });
        }
        let scale = 1.0 / (1.0 - self.p);
        let mask: Vec<f64> = (0..h.len())
            .map(|_| if rng.gen::<f64>() < self.p { 0.0 } else { scale })
            .collect();
        (apply_mask(h, &mask), DropoutCache { mask: Some(mask) })
    }

    pub fn backward(&self, cache: DropoutCache, grad: &QTensor) -> Result<QTensor> {
        match cache.mask {
            None => Ok(grad.clone()),
            Some(mask) if mask.len() == grad.len() => Ok(apply_mask(grad, &mask)),
            Some(mask) => Err(QvnnError::Dimension(format!(
                "dropout backward got gradient {:?} for {} masked elements",
                grad.shape(),
                mask.len()
            ))),
        }
    }
}

fn apply_mask(h: &QTensor, mask: &[f64]) -> QTensor {
    let mut out = h.clone();
    for comp in 0..4 {
        for (v, m) in out.plane_mut(comp).iter_mut().zip(mask) {
            *v *= m;
        }
    }
    out
}

/// Training mode draws a fresh mask from `rng`; inference is the identity.
pub fn qdropout_forward(layer: &QDropout, h: &QTensor, training: bool, rng: &mut dyn RngCore) -> QTensor {
    if training {
        layer.forward_train(h, rng).0
    } else {
        h.clone()
    }
}
