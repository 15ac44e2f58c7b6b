use rand::RngCore;

use crate::autograd::{GradientSet, Tape};
use crate::error::{QvnnError, Result};
use crate::layers::{head, Layer, TapeNode};
use crate::quat::QTensor;

/// A sequential quaternion network ending in the norm/softmax head.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    /// Per-sample input shape `[channels, height, width]`.
    pub input_shape: Vec<usize>,
    pub classes: usize,
    pub layers: Vec<Layer>,
}

impl Model {
    pub fn new(input_shape: Vec<usize>, classes: usize, layers: Vec<Layer>) -> Result<Self> {
        let model = Model {
            input_shape,
            classes,
            layers,
        };
        let shapes = model.layer_shapes()?;
        let out = shapes.last().expect("layer_shapes always holds the input shape");
        if out.as_slice() != [classes] {
            return Err(QvnnError::Dimension(format!(
                "network produces {:?} per sample, expected [{}] class outputs",
                out, classes
            )));
        }
        Ok(model)
    }

    /// Per-sample shapes: the input followed by every layer's output.
    pub fn layer_shapes(&self) -> Result<Vec<Vec<usize>>> {
        let mut shapes = vec![self.input_shape.clone()];
        for layer in &self.layers {
            let next = layer.output_shape(shapes.last().unwrap())?;
            shapes.push(next);
        }
        Ok(shapes)
    }

    fn check_input(&self, x: &QTensor) -> Result<()> {
        match x.shape().split_first() {
            Some((_, rest)) if rest == self.input_shape.as_slice() => Ok(()),
            _ => Err(QvnnError::Dimension(format!(
                "model expects [batch, {:?}], got {:?}",
                self.input_shape,
                x.shape()
            ))),
        }
    }

    /// Inference-mode forward pass (running batch-norm statistics, no dropout).
    /// Returns the `[batch, classes]` quaternion outputs.
    pub fn forward(&self, x: &QTensor) -> Result<QTensor> {
        self.check_input(x)?;
        let mut h = x.clone();
        for layer in &self.layers {
            h = layer.forward_eval(&h)?;
        }
        Ok(h)
    }

    /// Class probabilities (`[batch * classes]`, row-major) for an input batch.
    pub fn predict_proba(&self, x: &QTensor) -> Result<Vec<f64>> {
        let out = self.forward(x)?;
        Ok(head::abs_head(&out)
            .chunks_exact(self.classes)
            .flat_map(head::softmax)
            .collect())
    }

    fn run_train(
        &self,
        start: usize,
        x: &QTensor,
        rng: &mut dyn RngCore,
        mut inputs: Option<&mut Vec<QTensor>>,
    ) -> Result<(QTensor, Tape)> {
        let mut nodes = Vec::with_capacity(self.layers.len() - start);
        let mut h = x.clone();
        for layer in &self.layers[start..] {
            if let Some(store) = inputs.as_deref_mut() {
                store.push(h.clone());
            }
            let (next, node) = layer.forward_train(&h, rng)?;
            nodes.push(node);
            h = next;
        }
        let mut tape = Tape::new();
        tape.record(nodes);
        tape.start = start;
        Ok((h, tape))
    }

    /// Training-mode forward pass: batch statistics, active dropout. Records a
    /// tape for [`Model::backward`] and advances batch-norm running statistics.
    pub fn forward_train(&mut self, x: &QTensor, rng: &mut dyn RngCore) -> Result<(QTensor, Tape)> {
        self.check_input(x)?;
        let (out, tape) = self.run_train(0, x, rng, None)?;
        for (layer, node) in self.layers.iter_mut().zip(&tape.nodes) {
            if let (Layer::BatchNorm(bn), TapeNode::BatchNorm(cache)) = (layer, node) {
                bn.update_running(cache);
            }
        }
        Ok((out, tape))
    }

    /// Training-mode forward pass that leaves running statistics untouched.
    pub fn forward_train_frozen(&self, x: &QTensor, rng: &mut dyn RngCore) -> Result<(QTensor, Tape)> {
        self.check_input(x)?;
        self.run_train(0, x, rng, None)
    }

    /// As [`Model::forward_train_frozen`], also returning every layer's input.
    pub(crate) fn forward_train_frozen_with_inputs(
        &self,
        x: &QTensor,
        rng: &mut dyn RngCore,
    ) -> Result<(Vec<QTensor>, QTensor, Tape)> {
        self.check_input(x)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let (out, tape) = self.run_train(0, x, rng, Some(&mut inputs))?;
        Ok((inputs, out, tape))
    }

    /// Frozen training-mode pass over layers `start..`, given layer `start`'s input.
    pub(crate) fn forward_train_frozen_from(
        &self,
        start: usize,
        h: &QTensor,
        rng: &mut dyn RngCore,
    ) -> Result<(QTensor, Tape)> {
        self.run_train(start, h, rng, None)
    }

    /// Reverse pass over a recorded tape. Consumes the tape.
    pub fn backward(&self, tape: &mut Tape, grad_out: &QTensor) -> Result<GradientSet> {
        let start = tape.start;
        let nodes = tape.take()?;
        if start + nodes.len() != self.layers.len() {
            return Err(QvnnError::State(format!(
                "tape holds {} nodes from layer {start}, model has {} layers",
                nodes.len(),
                self.layers.len()
            )));
        }
        let mut grads = GradientSet::zeros_like(self);
        let mut g = grad_out.clone();
        for (offset, node) in nodes.into_iter().enumerate().rev() {
            let idx = start + offset;
            let (dx, layer_grads) = self.layers[idx].backward(node, &g)?;
            grads.layers[idx] = layer_grads;
            g = dx;
        }
        Ok(grads)
    }

    /// Mean cross-entropy over a labelled batch and its gradient, from one
    /// training-mode pass (running statistics are advanced).
    pub fn loss_and_grad(
        &mut self,
        x: &QTensor,
        labels: &[usize],
        rng: &mut dyn RngCore,
    ) -> Result<(f64, GradientSet)> {
        let (out, mut tape) = self.forward_train(x, rng)?;
        let (loss, dout) = head::batch_loss_and_grad(&out, labels)?;
        let grads = self.backward(&mut tape, &dout)?;
        Ok((loss, grads))
    }

    pub fn has_active_dropout(&self) -> bool {
        self.layers
            .iter()
            .any(|l| matches!(l, Layer::Dropout(d) if d.is_active()))
    }

    /// Sets every dropout probability to `p`.
    pub fn set_dropout(&mut self, p: f64) -> Result<()> {
        for layer in &mut self.layers {
            if let Layer::Dropout(d) = layer {
                *d = crate::layers::QDropout::new(p)?;
            }
        }
        Ok(())
    }

    pub fn has_batchnorm(&self) -> bool {
        self.layers.iter().any(|l| matches!(l, Layer::BatchNorm(_)))
    }

    /// Quaternion weight tensors (dense weights and convolution kernels).
    pub fn weights(&self) -> Vec<&QTensor> {
        self.layers.iter().filter_map(Layer::weight).collect()
    }

    /// Number of quaternion weights, excluding biases.
    pub fn weight_count(&self) -> usize {
        self.weights().iter().map(|w| w.len()).sum()
    }

    /// All batch-norm scales, in layer order.
    pub fn gammas(&self) -> Vec<f64> {
        self.layers
            .iter()
            .filter_map(|l| match l {
                Layer::BatchNorm(bn) => Some(bn.gamma.iter().copied()),
                _ => None,
            })
            .flatten()
            .collect()
    }

    /// Total number of real trainable scalars.
    pub fn real_param_count(&self) -> usize {
        self.layers
            .iter()
            .flat_map(|l| l.params())
            .map(|(_, s)| s.len())
            .sum()
    }
}
