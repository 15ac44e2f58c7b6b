//! Named network architectures.
//!
//! Filter counts are numbers of quaternion channels. Every preset uses split
//! relu, 2x2 quaternion max-pooling and the norm/softmax head.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{QvnnError, Result};
use crate::layers::{Layer, QBatchNorm, QConv2d, QDense, QDropout, QMaxPool, SplitActivation};
use crate::model::Model;
use crate::regularizers::RegKind;

pub const PRESETS: [&str; 4] = ["mnist-qcnn", "mnist-qcnn-bn", "cifar-qcnn-lite", "cifar-qcnn-paper"];

pub const DEFAULT_DROPOUT: f64 = 0.2;

/// Input shape `[channels, height, width]` expected by a preset.
pub fn input_shape(name: &str) -> Result<[usize; 3]> {
    match name {
        "mnist-qcnn" | "mnist-qcnn-bn" => Ok([1, 28, 28]),
        "cifar-qcnn-lite" | "cifar-qcnn-paper" => Ok([1, 32, 32]),
        _ => Err(unknown(name)),
    }
}

fn unknown(name: &str) -> QvnnError {
    QvnnError::Contract(format!(
        "unknown preset '{name}'; valid presets: {}",
        PRESETS.join(", ")
    ))
}

/// Regularization strength selected on MNIST validation data for each method
/// by `scripts/tune_lambda.sh`. The CIFAR presets reuse the same values.
pub fn default_lambda(name: &str, kind: RegKind) -> Result<f64> {
    input_shape(name)?;
    Ok(match kind {
        RegKind::None => 0.0,
        RegKind::L2 => 1e-2,
        RegKind::L1 => 1e-3,
        RegKind::RQ => 1e-2,
        RegKind::RQL => 1e-3,
        RegKind::BnL1 => 1e-2,
        RegKind::RQBnL1 => 1e-2,
    })
}

/// Builds a preset with weights initialized from `seed` and the given dropout
/// probability.
pub fn build(name: &str, seed: u64, dropout: f64) -> Result<Model> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let drop = QDropout::new(dropout)?;
    let relu = || Layer::Activation(SplitActivation::relu());
    let pool = || Layer::MaxPool(QMaxPool::default());
    let [c, h, w] = input_shape(name)?;
    let mut layers = Vec::new();
    match name {
        "mnist-qcnn" | "mnist-qcnn-bn" => {
            let bn = name.ends_with("-bn");
            let mut in_c = c;
            for out_c in [16, 32] {
                layers.push(Layer::Conv2d(QConv2d::init(out_c, in_c, (3, 3), 1, 0, &mut rng)?));
                if bn {
                    layers.push(Layer::BatchNorm(QBatchNorm::new(out_c)));
                }
                layers.push(relu());
                layers.push(pool());
                in_c = out_c;
            }
            layers.push(Layer::Dropout(drop));
            // 28 -> 26 -> 13 -> 11 -> 5
            layers.push(Layer::Dense(QDense::init(10, 32 * 5 * 5, &mut rng)));
        }
        "cifar-qcnn-lite" | "cifar-qcnn-paper" => {
            let widths: [usize; 5] = if name.ends_with("lite") {
                [8, 16, 32, 64, 128]
            } else {
                [32, 64, 128, 256, 512]
            };
            let mut in_c = c;
            for (n, &out_c) in widths.iter().enumerate() {
                layers.push(Layer::Conv2d(QConv2d::init(out_c, in_c, (3, 3), 1, 1, &mut rng)?));
                layers.push(relu());
                if n < 4 {
                    layers.push(pool());
                }
                if n % 2 == 1 {
                    layers.push(Layer::Dropout(drop));
                }
                in_c = out_c;
            }
            // 32 -> 16 -> 8 -> 4 -> 2
            layers.push(Layer::Dense(QDense::init(10, widths[4] * 2 * 2, &mut rng)));
        }
        _ => return Err(unknown(name)),
    }
    Model::new(vec![c, h, w], 10, layers)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::random_batch;

    #[test]
    fn parameter_counts_have_the_expected_magnitude() {
        let mnist = build("mnist-qcnn", 0, DEFAULT_DROPOUT).unwrap();
        let ratio = mnist.weight_count() as f64 / 1e4;
        assert!((0.1..=10.0).contains(&ratio), "{}", mnist.weight_count());
        let cifar = build("cifar-qcnn-paper", 0, DEFAULT_DROPOUT).unwrap();
        let ratio = cifar.weight_count() as f64 / 5e5;
        assert!((0.1..=10.0).contains(&ratio), "{}", cifar.weight_count());
    }

    #[test]
    fn every_preset_yields_ten_finite_probabilities() {
        for name in PRESETS {
            let model = build(name, 3, DEFAULT_DROPOUT).unwrap();
            let (x, _) = random_batch(&model, 2, 1);
            let p = model.predict_proba(&x).unwrap();
            assert_eq!(p.len(), 20);
            for row in p.chunks(10) {
                assert!(row.iter().all(|v| v.is_finite() && *v >= 0.0));
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn unknown_names_list_the_valid_ones() {
        let err = build("resnet", 0, 0.0).unwrap_err().to_string();
        for name in PRESETS {
            assert!(err.contains(name));
        }
    }

    #[test]
    fn bn_variant_places_norm_between_conv_and_activation() {
        let model = build("mnist-qcnn-bn", 0, 0.0).unwrap();
        let names: Vec<&str> = model.layers.iter().map(|l| l.name()).collect();
        assert_eq!(&names[..3], &["conv2d", "batchnorm", "activation"]);
    }
}
