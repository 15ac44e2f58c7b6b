//! Mini-batch training of the regularized objective, evaluation and the
//! per-epoch metrics log.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::Dataset;
use crate::error::{QvnnError, Result};
use crate::layers::head;
use crate::model::Model;
use crate::optim::{adam_step, AdamConfig, AdamState};
use crate::regularizers::RegConfig;
use crate::sparsity::sparsity_report;

/// Batch size used when only inference is needed.
pub const EVAL_BATCH: usize = 500;

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub reg: RegConfig,
    /// Seeds shuffling and dropout masks.
    pub seed: u64,
    /// Dropout probability applied to every dropout layer before training.
    pub dropout: f64,
    /// Train on the first `n` samples only.
    pub subset: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 32,
            adam: AdamConfig::default(),
            reg: RegConfig::default(),
            seed: 0,
            dropout: crate::presets::DEFAULT_DROPOUT,
            subset: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(QvnnError::Contract(format!(
                "epochs ({}) and batch size ({}) must be at least 1",
                self.epochs, self.batch_size
            )));
        }
        if !(self.adam.lr > 0.0) {
            return Err(QvnnError::Contract(format!("learning rate must be positive, got {}", self.adam.lr)));
        }
        RegConfig::new(self.reg.kind, self.reg.lambda, self.reg.threshold)?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Mean over mini-batches of cross-entropy plus `λ · r(θ)`.
    pub train_loss: f64,
    /// Accuracy on the evaluation set; `None` when none was given.
    pub test_acc: Option<f64>,
    pub component_sparsity: f64,
    pub quaternion_sparsity: f64,
    pub neuron_sparsity: f64,
    /// Time spent on the epoch's parameter updates (evaluation excluded).
    pub wall_seconds: f64,
}

fn check_labels(model: &Model, data: &Dataset, what: &str) -> Result<()> {
    if data.sample_shape().as_slice() != model.input_shape.as_slice() {
        return Err(QvnnError::Data(format!(
            "{what} samples have shape {:?}, the model expects {:?}",
            data.sample_shape(),
            model.input_shape
        )));
    }
    if let Some((n, l)) = data.labels().iter().enumerate().find(|(_, &l)| l >= model.classes) {
        return Err(QvnnError::Data(format!(
            "{what} sample {n} has label {l} outside the model's {} classes",
            model.classes
        )));
    }
    Ok(())
}

/// Trains `model` in place, calling `on_epoch` after every epoch.
pub fn train_with(
    model: &mut Model,
    train_set: &Dataset,
    eval_set: Option<&Dataset>,
    config: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochMetrics) -> Result<()>,
) -> Result<Vec<EpochMetrics>> {
    config.validate()?;
    let data = match config.subset {
        Some(n) => train_set.take(n),
        None => train_set.clone(),
    };
    if data.is_empty() {
        return Err(QvnnError::Data("training set is empty".into()));
    }
    check_labels(model, &data, "training")?;
    if let Some(eval) = eval_set {
        check_labels(model, eval, "evaluation")?;
    }
    if config.reg.kind.needs_batchnorm() && !model.has_batchnorm() {
        // Surface the misconfiguration before any work is done.
        config.reg.penalty(model)?;
    }
    model.set_dropout(config.dropout)?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = AdamState::new(model, config.adam);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        let start = Instant::now();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(config.batch_size) {
            let (x, labels) = data.batch(chunk)?;
            let (penalty, reg_grads) = config.reg.weighted_penalty(model)?;
            let (loss, mut grads) = model.loss_and_grad(&x, &labels, &mut rng)?;
            if let Some(g) = reg_grads {
                grads.add_scaled(&g, 1.0)?;
            }
            adam_step(&mut adam, model, &grads)?;
            total += loss + penalty;
            batches += 1;
        }
        let wall_seconds = start.elapsed().as_secs_f64();
        let train_loss = total / batches as f64;
        if !train_loss.is_finite() {
            return Err(QvnnError::NonFinite(format!("training loss became {train_loss} in epoch {epoch}")));
        }
        let test_acc = eval_set.map(|e| evaluate(model, e)).transpose()?;
        let report = sparsity_report(model, config.reg.threshold)?;
        let metrics = EpochMetrics {
            epoch,
            train_loss,
            test_acc,
            component_sparsity: report.component_sparsity,
            quaternion_sparsity: report.quaternion_sparsity,
            neuron_sparsity: report.neuron_sparsity,
            wall_seconds,
        };
        on_epoch(&metrics)?;
        history.push(metrics);
    }
    Ok(history)
}

pub fn train(
    model: &mut Model,
    train_set: &Dataset,
    eval_set: Option<&Dataset>,
    config: &TrainConfig,
) -> Result<Vec<EpochMetrics>> {
    train_with(model, train_set, eval_set, config, &mut |_| Ok(()))
}

/// Predicted class of every sample, in inference mode.
pub fn predict(model: &Model, data: &Dataset) -> Result<Vec<usize>> {
    check_labels(model, data, "evaluation")?;
    let mut out = Vec::with_capacity(data.len());
    let all: Vec<usize> = (0..data.len()).collect();
    for chunk in all.chunks(EVAL_BATCH) {
        let (x, _) = data.batch(chunk)?;
        out.extend(head::predict(&model.forward(&x)?)?);
    }
    Ok(out)
}

/// Fraction of samples whose highest-scoring class is the label.
pub fn evaluate(model: &Model, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let predictions = predict(model, data)?;
    let correct = predictions.iter().zip(data.labels()).filter(|(p, l)| p == l).count();
    Ok(correct as f64 / data.len() as f64)
}

/// Writes one CSV row per epoch, flushing after each.
pub struct MetricsWriter {
    out: BufWriter<File>,
    timing: bool,
}

impl MetricsWriter {
    pub const HEADER: &'static str =
        "epoch,train_loss,test_acc,component_sparsity,quaternion_sparsity,neuron_sparsity,wall_seconds";

    /// Creates the file and writes the metadata line and header. With
    /// `timing = false` the `wall_seconds` column holds `NA`, which makes
    /// logs of identical runs byte-identical.
    pub fn create(path: &Path, metadata: &str, timing: bool) -> Result<Self> {
        let mut out = BufWriter::new(File::create(path)?);
        writeln!(out, "# {metadata}")?;
        writeln!(out, "{}", Self::HEADER)?;
        out.flush()?;
        Ok(MetricsWriter { out, timing })
    }

    pub fn write(&mut self, m: &EpochMetrics) -> Result<()> {
        let acc = m.test_acc.map_or("NA".to_string(), |a| format!("{a:.6}"));
        let wall = if self.timing {
            format!("{:.3}", m.wall_seconds)
        } else {
            "NA".to_string()
        };
        writeln!(
            self.out,
            "{},{:.9},{},{:.6},{:.6},{:.6},{}",
            m.epoch, m.train_loss, acc, m.component_sparsity, m.quaternion_sparsity, m.neuron_sparsity, wall
        )?;
        self.out.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Encoding;
    use crate::layers::{Layer, QDense};
    use crate::quat::QTensor;
    use crate::regularizers::RegKind;

    fn toy(n: usize) -> Dataset {
        let pixels: Vec<u8> = (0..n * 4).map(|p| ((p * 37) % 256) as u8).collect();
        let labels = (0..n).map(|i| i % 3).collect();
        Dataset::new(Encoding::Gray, 2, 2, 3, pixels, labels).unwrap()
    }

    fn zero_model() -> Model {
        Model::new(
            vec![1, 2, 2],
            3,
            vec![Layer::Dense(QDense {
                weight: QTensor::zeros(&[3, 4]),
                bias: QTensor::zeros(&[3]),
            })],
        )
        .unwrap()
    }

    #[test]
    fn single_correct_sample_scores_one() {
        let mut model = zero_model();
        if let Layer::Dense(d) = &mut model.layers[0] {
            d.bias.set(1, crate::quat::Quaternion::ONE);
        }
        let data = Dataset::new(Encoding::Gray, 2, 2, 3, vec![9; 4], vec![1]).unwrap();
        assert_eq!(evaluate(&model, &data).unwrap(), 1.0);
    }

    #[test]
    fn evaluation_ignores_order() {
        let model = crate::presets::build("mnist-qcnn", 0, 0.0).unwrap();
        let pixels: Vec<u8> = (0..40 * 784).map(|p| ((p * 7919) % 256) as u8).collect();
        let data = Dataset::new(Encoding::Gray, 28, 28, 10, pixels, (0..40).map(|i| i % 10).collect()).unwrap();
        let reversed: Vec<usize> = (0..40).rev().collect();
        assert_eq!(
            evaluate(&model, &data).unwrap(),
            evaluate(&model, &data.select(&reversed).unwrap()).unwrap()
        );
    }

    #[test]
    fn same_seed_same_history() {
        let data = toy(30);
        let config = TrainConfig {
            epochs: 3,
            batch_size: 4,
            reg: RegConfig::new(RegKind::RQ, 1e-3, 1e-3).unwrap(),
            ..TrainConfig::default()
        };
        let run = || {
            let mut m = zero_model();
            if let Layer::Dense(d) = &mut m.layers[0] {
                d.weight.as_mut_slice().iter_mut().enumerate().for_each(|(n, v)| *v = (n as f64 * 0.37).sin() * 0.3);
            }
            train(&mut m, &data, Some(&data), &config).unwrap()
        };
        let (a, b) = (run(), run());
        let strip = |h: Vec<EpochMetrics>| h.into_iter().map(|m| (m.train_loss, m.test_acc)).collect::<Vec<_>>();
        assert_eq!(strip(a), strip(b));
    }

    #[test]
    fn rejects_out_of_range_labels_and_missing_batch_norm() {
        let data = Dataset::new(Encoding::Gray, 2, 2, 5, vec![0; 4], vec![4]).unwrap();
        let err = train(&mut zero_model(), &data, None, &TrainConfig::default()).unwrap_err();
        assert!(matches!(err, QvnnError::Data(_)));
        let config = TrainConfig {
            reg: RegConfig::new(RegKind::BnL1, 1e-3, 1e-3).unwrap(),
            ..TrainConfig::default()
        };
        let err = train(&mut zero_model(), &toy(4), None, &config).unwrap_err();
        assert!(matches!(err, QvnnError::Contract(_)));
    }
}
