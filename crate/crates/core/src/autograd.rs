//! Gradient containers, the per-forward tape, and the finite-difference checker.
//!
//! Gradients are plain partial derivatives with respect to every real component
//! of every parameter; a quaternion gradient is stored as a [`QTensor`] whose
//! four planes hold `∂J/∂w_r`, `∂J/∂w_i`, `∂J/∂w_j`, `∂J/∂w_k`.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{QvnnError, Result};
use crate::layers::{head, Layer, TapeNode};
use crate::model::Model;
use crate::quat::QTensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ParamKind {
    Weight,
    Bias,
    Gamma,
    Beta,
}

impl ParamKind {
    pub fn name(self) -> &'static str {
        match self {
            ParamKind::Weight => "weight",
            ParamKind::Bias => "bias",
            ParamKind::Gamma => "gamma",
            ParamKind::Beta => "beta",
        }
    }
}

/// Gradients of one layer. Present fields mirror the layer's parameters.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LayerGrads {
    pub weight: Option<QTensor>,
    pub bias: Option<QTensor>,
    pub gamma: Option<Vec<f64>>,
    pub beta: Option<QTensor>,
}

impl LayerGrads {
    /// Parameter slices in canonical order (weight, bias, gamma, beta).
    pub fn slices(&self) -> Vec<(ParamKind, &[f64])> {
        let mut out = Vec::new();
        if let Some(w) = &self.weight {
            out.push((ParamKind::Weight, w.as_slice()));
        }
        if let Some(b) = &self.bias {
            out.push((ParamKind::Bias, b.as_slice()));
        }
        if let Some(g) = &self.gamma {
            out.push((ParamKind::Gamma, g.as_slice()));
        }
        if let Some(b) = &self.beta {
            out.push((ParamKind::Beta, b.as_slice()));
        }
        out
    }

    pub fn slices_mut(&mut self) -> Vec<(ParamKind, &mut [f64])> {
        let mut out = Vec::new();
        if let Some(w) = &mut self.weight {
            out.push((ParamKind::Weight, w.as_mut_slice()));
        }
        if let Some(b) = &mut self.bias {
            out.push((ParamKind::Bias, b.as_mut_slice()));
        }
        if let Some(g) = &mut self.gamma {
            out.push((ParamKind::Gamma, g.as_mut_slice()));
        }
        if let Some(b) = &mut self.beta {
            out.push((ParamKind::Beta, b.as_mut_slice()));
        }
        out
    }
}

/// Gradients for a whole model, one entry per layer.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradientSet {
    pub layers: Vec<LayerGrads>,
}

impl GradientSet {
    /// All-zero gradients shaped like the model's parameters.
    pub fn zeros_like(model: &Model) -> Self {
        GradientSet {
            layers: model.layers.iter().map(Layer::zero_grads).collect(),
        }
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &GradientSet, scale: f64) -> Result<()> {
        if self.layers.len() != other.layers.len() {
            return Err(QvnnError::Dimension(format!(
                "gradient sets cover {} and {} layers",
                self.layers.len(),
                other.layers.len()
            )));
        }
        for (mine, theirs) in self.layers.iter_mut().zip(&other.layers) {
            let theirs = theirs.slices();
            let mine = mine.slices_mut();
            if mine.len() != theirs.len() {
                return Err(QvnnError::Dimension("gradient sets are not congruent".into()));
            }
            for ((k1, a), (k2, b)) in mine.into_iter().zip(theirs) {
                if k1 != k2 || a.len() != b.len() {
                    return Err(QvnnError::Dimension(format!(
                        "gradient {} of length {} vs {} of length {}",
                        k1.name(),
                        a.len(),
                        k2.name(),
                        b.len()
                    )));
                }
                for (x, y) in a.iter_mut().zip(b) {
                    *x += scale * y;
                }
            }
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.slices().iter().all(|(_, s)| s.iter().all(|v| v.is_finite())))
    }

    pub fn max_abs(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|l| l.slices())
            .flat_map(|(_, s)| s.iter().copied())
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
enum TapeState {
    #[default]
    Empty,
    Recorded,
    Consumed,
}

/// Forward state recorded by a training-mode pass, consumed by one backward pass.
#[derive(Debug, Default)]
pub struct Tape {
    state: TapeState,
    /// Index of the first layer covered by `nodes`.
    pub(crate) start: usize,
    pub(crate) nodes: Vec<TapeNode>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub(crate) fn record(&mut self, nodes: Vec<TapeNode>) {
        self.nodes = nodes;
        self.state = TapeState::Recorded;
    }

    pub(crate) fn take(&mut self) -> Result<Vec<TapeNode>> {
        match self.state {
            TapeState::Empty => Err(QvnnError::State(
                "backward called before any training-mode forward pass".into(),
            )),
            TapeState::Consumed => Err(QvnnError::State(
                "tape was already consumed by a previous backward pass".into(),
            )),
            TapeState::Recorded => {
                self.state = TapeState::Consumed;
                Ok(std::mem::take(&mut self.nodes))
            }
        }
    }

    pub fn is_recorded(&self) -> bool {
        self.state == TapeState::Recorded
    }

    /// Hash of every discrete branch taken in the pass (relu signs, pooling
    /// winners, dropout masks). Two passes with equal fingerprints are on the
    /// same smooth piece of the network function.
    pub fn branch_fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for node in &self.nodes {
            node.hash_branches(&mut h);
        }
        h.finish()
    }
}

/// Settings for [`finite_diff_check`].
#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub epsilon: f64,
    /// Checks at most this many randomly chosen components per parameter
    /// tensor; `None` checks every component.
    pub max_per_param: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            epsilon: 1e-5,
            max_per_param: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Components skipped because a perturbation changed a relu sign or a
    /// pooling winner.
    pub excluded: usize,
    /// Location of the worst component: (layer, parameter, flat index).
    pub worst: Option<(usize, ParamKind, usize)>,
    /// Every compared component.
    pub components: Vec<CheckedComponent>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CheckedComponent {
    pub layer: usize,
    pub kind: ParamKind,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl CheckedComponent {
    pub fn relative_error(&self) -> f64 {
        relative_error(self.analytic, self.numeric)
    }
}

/// Gradient magnitude below which [`relative_error`] measures absolute error.
///
/// With an O(1) loss, a one-ulp change in the loss moves a central difference
/// at step 1e-5 by about 2e-11, so smaller gradients (a bias feeding batch
/// norm has an exact zero) cannot be resolved to 1e-4 relative accuracy.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-6;

/// `|a − b| / max(|a|, |b|, RELATIVE_ERROR_FLOOR)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(RELATIVE_ERROR_FLOOR)
}

/// Compares backward gradients of the mean cross-entropy loss against central
/// finite differences.
///
/// The loss is evaluated in training mode (batch statistics in batch norm)
/// without touching running statistics. Stochastic layers must be disabled.
pub fn finite_diff_check(
    model: &Model,
    input: &QTensor,
    labels: &[usize],
    config: &GradCheckConfig,
) -> Result<GradCheckReport> {
    if model.has_active_dropout() {
        return Err(QvnnError::Contract(
            "finite-difference check needs a deterministic loss: set every dropout probability \
             to 0 before checking"
                .into(),
        ));
    }
    if !(config.epsilon > 0.0) {
        return Err(QvnnError::Contract("epsilon must be positive".into()));
    }
    // Dropout is off, so the generator is never drawn from.
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut pick = ChaCha8Rng::seed_from_u64(config.seed);

    // Inputs of every layer in the unperturbed pass, so a perturbation of
    // layer `l` only re-runs layers `l..`.
    let (activations, out, mut tape) = model.forward_train_frozen_with_inputs(input, &mut rng)?;
    let base_fingerprints = suffix_fingerprints(&tape);
    let (_, dout) = head::batch_loss_and_grad(&out, labels)?;
    let grads = model.backward(&mut tape, &dout)?;

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        excluded: 0,
        worst: None,
        components: Vec::new(),
    };
    let mut probe = model.clone();
    for (layer_idx, layer_grads) in grads.layers.iter().enumerate() {
        for (kind, analytic) in layer_grads.slices() {
            let n = analytic.len();
            let indices: Vec<usize> = match config.max_per_param {
                Some(cap) if cap < n => {
                    let mut v = sample(&mut pick, n, cap).into_vec();
                    v.sort_unstable();
                    v
                }
                _ => (0..n).collect(),
            };
            for idx in indices {
                let original = probe.layers[layer_idx].param_value(kind, idx);
                let mut eval = |value: f64, probe: &mut Model| -> Result<(f64, u64)> {
                    probe.layers[layer_idx].set_param_value(kind, idx, value);
                    let (out, tape) =
                        probe.forward_train_frozen_from(layer_idx, &activations[layer_idx], &mut rng)?;
                    let (loss, _) = head::batch_loss_and_grad(&out, labels)?;
                    Ok((loss, tape.branch_fingerprint()))
                };
                let (plus, fp_plus) = eval(original + config.epsilon, &mut probe)?;
                let (minus, fp_minus) = eval(original - config.epsilon, &mut probe)?;
                probe.layers[layer_idx].set_param_value(kind, idx, original);

                if fp_plus != base_fingerprints[layer_idx] || fp_minus != base_fingerprints[layer_idx] {
                    report.excluded += 1;
                    continue;
                }
                let numeric = (plus - minus) / (2.0 * config.epsilon);
                let err = relative_error(analytic[idx], numeric);
                report.checked += 1;
                report.components.push(CheckedComponent {
                    layer: layer_idx,
                    kind,
                    index: idx,
                    analytic: analytic[idx],
                    numeric,
                });
                if report.worst.is_none() || err > report.max_rel_error {
                    report.max_rel_error = err;
                    report.worst = Some((layer_idx, kind, idx));
                }
            }
        }
    }
    Ok(report)
}

/// Fingerprint of the nodes from each layer onwards, matching what a
/// suffix re-run starting at that layer would record.
fn suffix_fingerprints(tape: &Tape) -> Vec<u64> {
    (0..tape.nodes.len())
        .map(|start| {
            let mut h = DefaultHasher::new();
            for node in &tape.nodes[start..] {
                node.hash_branches(&mut h);
            }
            h.finish()
        })
        .collect()
}

/// Draws a random labelled batch for gradient checks.
pub fn random_batch(model: &Model, batch: usize, seed: u64) -> (QTensor, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut shape = vec![batch];
    shape.extend_from_slice(&model.input_shape);
    let mut x = QTensor::zeros(&shape);
    for v in x.as_mut_slice() {
        *v = rng.gen_range(0.0..1.0);
    }
    let labels = (0..batch).map(|_| rng.gen_range(0..model.classes)).collect();
    (x, labels)
}
