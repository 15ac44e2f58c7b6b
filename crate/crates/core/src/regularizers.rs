//! Weight and batch-norm penalties with their subgradients.
//!
//! Penalties are returned unweighted; the trainer multiplies by λ. Only
//! quaternion weights (dense matrices, convolution kernels) and batch-norm
//! scales are penalized; biases and shifts never are.

use std::fmt;
use std::str::FromStr;

use crate::autograd::GradientSet;
use crate::error::{QvnnError, Result};
use crate::layers::Layer;
use crate::model::Model;
use crate::quat::QTensor;

/// Norms at or below this get a zero group subgradient.
const GROUP_FLOOR: f64 = 1e-12;

pub const DEFAULT_THRESHOLD: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum RegKind {
    None,
    /// `½ Σ w_c²` over every weight component.
    L2,
    /// `Σ |w_c|` over every weight component.
    L1,
    /// `(1/Q) Σ |w|` over quaternion weights, `Q` their count.
    RQ,
    /// `RQ + L1` under one shared λ.
    RQL,
    /// Mean `|γ|` over all batch-norm scales.
    BnL1,
    /// `RQ + BnL1` under one shared λ.
    RQBnL1,
}

impl RegKind {
    pub const ALL: [RegKind; 7] = [
        RegKind::None,
        RegKind::L2,
        RegKind::L1,
        RegKind::RQ,
        RegKind::RQL,
        RegKind::BnL1,
        RegKind::RQBnL1,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RegKind::None => "none",
            RegKind::L2 => "l2",
            RegKind::L1 => "l1",
            RegKind::RQ => "rq",
            RegKind::RQL => "rql",
            RegKind::BnL1 => "bn-l1",
            RegKind::RQBnL1 => "rq+bn-l1",
        }
    }

    pub fn needs_batchnorm(self) -> bool {
        matches!(self, RegKind::BnL1 | RegKind::RQBnL1)
    }
}

impl fmt::Display for RegKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RegKind {
    type Err = QvnnError;

    fn from_str(s: &str) -> Result<Self> {
        RegKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = RegKind::ALL.iter().map(|k| k.name()).collect();
                QvnnError::Contract(format!(
                    "unknown regularizer '{s}'; valid kinds: {}",
                    names.join(", ")
                ))
            })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RegConfig {
    pub kind: RegKind,
    pub lambda: f64,
    /// Magnitude below which a value counts as zero in sparsity metrics.
    pub threshold: f64,
}

impl Default for RegConfig {
    fn default() -> Self {
        RegConfig {
            kind: RegKind::None,
            lambda: 0.0,
            threshold: DEFAULT_THRESHOLD,
        }
    }
}

impl RegConfig {
    pub fn new(kind: RegKind, lambda: f64, threshold: f64) -> Result<Self> {
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(QvnnError::Contract(format!("lambda must be a finite value >= 0, got {lambda}")));
        }
        if !(threshold > 0.0) {
            return Err(QvnnError::Contract(format!("threshold must be positive, got {threshold}")));
        }
        Ok(RegConfig { kind, lambda, threshold })
    }

    /// The unweighted penalty `r(θ)` and its subgradient for `model`.
    pub fn penalty(&self, model: &Model) -> Result<(f64, GradientSet)> {
        match self.kind {
            RegKind::None => Ok((0.0, GradientSet::zeros_like(model))),
            RegKind::L2 => Ok(reg_l2_elem(model)),
            RegKind::L1 => Ok(reg_l1_elem(model)),
            RegKind::RQ => reg_rq(model),
            RegKind::RQL => reg_rql(model),
            RegKind::BnL1 => reg_bn_gamma(model),
            RegKind::RQBnL1 => {
                let (p1, mut g) = reg_rq(model)?;
                let (p2, g2) = reg_bn_gamma(model)?;
                g.add_scaled(&g2, 1.0)?;
                Ok((p1 + p2, g))
            }
        }
    }

    /// `λ · r(θ)` and its subgradient. Exactly zero when `λ = 0`.
    pub fn weighted_penalty(&self, model: &Model) -> Result<(f64, Option<GradientSet>)> {
        if self.kind == RegKind::None || self.lambda == 0.0 {
            return Ok((0.0, None));
        }
        let (p, mut g) = self.penalty(model)?;
        for layer in &mut g.layers {
            for (_, s) in layer.slices_mut() {
                s.iter_mut().for_each(|v| *v *= self.lambda);
            }
        }
        Ok((self.lambda * p, Some(g)))
    }
}

/// `Σ |w_c|` and `sign(w_c)` (0 at 0).
pub fn l1_elem(weights: &[&QTensor]) -> (f64, Vec<QTensor>) {
    let penalty = weights.iter().flat_map(|w| w.as_slice()).map(|v| v.abs()).sum();
    let grads = weights
        .iter()
        .map(|w| w.map_components(|v| if v > 0.0 { 1.0 } else if v < 0.0 { -1.0 } else { 0.0 }))
        .collect();
    (penalty, grads)
}

/// `½ Σ w_c²` and `w_c`.
pub fn l2_elem(weights: &[&QTensor]) -> (f64, Vec<QTensor>) {
    let penalty = 0.5 * weights.iter().flat_map(|w| w.as_slice()).map(|v| v * v).sum::<f64>();
    (penalty, weights.iter().map(|w| (*w).clone()).collect())
}

/// `(1/q) Σ |w|` and `w_c / (q |w|)` (0 where `|w| ≤ 1e-12`).
pub fn rq(weights: &[&QTensor], q: usize) -> Result<(f64, Vec<QTensor>)> {
    if q == 0 {
        return Err(QvnnError::Contract(
            "quaternion group penalty needs at least one weight (Q = 0)".into(),
        ));
    }
    let inv_q = 1.0 / q as f64;
    let mut penalty = 0.0;
    let mut grads = Vec::with_capacity(weights.len());
    for w in weights {
        let mut g = QTensor::zeros(w.shape());
        for n in 0..w.len() {
            let v = w.get(n);
            let norm = v.norm();
            penalty += norm;
            if norm > GROUP_FLOOR {
                g.set(n, v.scale(inv_q / norm));
            }
        }
        grads.push(g);
    }
    Ok((penalty * inv_q, grads))
}

/// `rq + l1_elem`.
pub fn rql(weights: &[&QTensor], q: usize) -> Result<(f64, Vec<QTensor>)> {
    let (p1, mut g1) = rq(weights, q)?;
    let (p2, g2) = l1_elem(weights);
    for (a, b) in g1.iter_mut().zip(&g2) {
        for (x, y) in a.as_mut_slice().iter_mut().zip(b.as_slice()) {
            *x += y;
        }
    }
    Ok((p1 + p2, g1))
}

/// `(1/|Γ|) Σ |γ|` and `sign(γ) / |Γ|` (0 at 0).
pub fn bn_gamma(gammas: &[f64]) -> Result<(f64, Vec<f64>)> {
    if gammas.is_empty() {
        return Err(QvnnError::Contract(
            "batch-norm scale penalty requested but the model has no batch-norm layers; \
             use a preset with batch norm (e.g. mnist-qcnn-bn)"
                .into(),
        ));
    }
    let inv = 1.0 / gammas.len() as f64;
    let penalty = gammas.iter().map(|g| g.abs()).sum::<f64>() * inv;
    let grad = gammas
        .iter()
        .map(|&g| if g > 0.0 { inv } else if g < 0.0 { -inv } else { 0.0 })
        .collect();
    Ok((penalty, grad))
}

/// Places per-weight-tensor gradients into a model-shaped gradient set.
fn weight_grads(model: &Model, grads: Vec<QTensor>) -> GradientSet {
    let mut set = GradientSet::zeros_like(model);
    let mut grads = grads.into_iter();
    for (layer, slot) in model.layers.iter().zip(&mut set.layers) {
        if layer.weight().is_some() {
            slot.weight = grads.next();
        }
    }
    set
}

pub fn reg_l1_elem(model: &Model) -> (f64, GradientSet) {
    let (p, g) = l1_elem(&model.weights());
    (p, weight_grads(model, g))
}

pub fn reg_l2_elem(model: &Model) -> (f64, GradientSet) {
    let (p, g) = l2_elem(&model.weights());
    (p, weight_grads(model, g))
}

pub fn reg_rq(model: &Model) -> Result<(f64, GradientSet)> {
    let (p, g) = rq(&model.weights(), model.weight_count())?;
    Ok((p, weight_grads(model, g)))
}

pub fn reg_rql(model: &Model) -> Result<(f64, GradientSet)> {
    let (p, g) = rql(&model.weights(), model.weight_count())?;
    Ok((p, weight_grads(model, g)))
}

pub fn reg_bn_gamma(model: &Model) -> Result<(f64, GradientSet)> {
    let (p, g) = bn_gamma(&model.gammas())?;
    let mut set = GradientSet::zeros_like(model);
    let mut offset = 0;
    for (layer, slot) in model.layers.iter().zip(&mut set.layers) {
        if let Layer::BatchNorm(bn) = layer {
            let n = bn.channels();
            slot.gamma = Some(g[offset..offset + n].to_vec());
            offset += n;
        }
    }
    Ok((p, set))
}
