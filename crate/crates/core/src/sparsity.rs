//! Sparsity metrics and batch-norm channel pruning.

use crate::error::{QvnnError, Result};
use crate::layers::{Layer, QBatchNorm};
use crate::model::Model;
use crate::quat::{QTensor, Quaternion};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SparsityReport {
    /// Fraction of weight components with `|w_c| < τ`.
    pub component_sparsity: f64,
    /// Fraction of quaternion weights whose four components are all below `τ`.
    pub quaternion_sparsity: f64,
    /// Fraction of batch-norm channels with `|γ| < τ`; 0 without batch norm.
    pub neuron_sparsity: f64,
    /// Quaternion weights and biases attached to live channels on both ends.
    pub live_params: usize,
    /// Quaternion multiply-accumulates per sample between live channels.
    pub live_macs: usize,
    pub total_params: usize,
    pub total_macs: usize,
}

impl SparsityReport {
    pub const CSV_HEADER: &'static str = "component_sparsity,quaternion_sparsity,neuron_sparsity,live_params,live_macs,total_params,total_macs";

    pub fn csv_row(&self) -> String {
        format!(
            "{:.6},{:.6},{:.6},{},{},{},{}",
            self.component_sparsity,
            self.quaternion_sparsity,
            self.neuron_sparsity,
            self.live_params,
            self.live_macs,
            self.total_params,
            self.total_macs
        )
    }
}

/// For every layer, the liveness of its output channels (`None` for layers
/// without channels of their own). A parameterized layer's outputs are dead
/// when the batch norm that follows it has `|γ| < τ`.
fn channel_liveness(model: &Model, tau: f64) -> Vec<Option<Vec<bool>>> {
    let mut live: Vec<Option<Vec<bool>>> = vec![None; model.layers.len()];
    for (idx, layer) in model.layers.iter().enumerate() {
        let outputs = match layer {
            Layer::Dense(l) => l.out_features(),
            Layer::Conv2d(l) => l.out_channels(),
            _ => continue,
        };
        let mut mask = vec![true; outputs];
        let next_bn = model.layers[idx + 1..]
            .iter()
            .take_while(|l| l.weight().is_none())
            .find_map(|l| match l {
                Layer::BatchNorm(bn) => Some(bn),
                _ => None,
            });
        if let Some(bn) = next_bn {
            for (m, g) in mask.iter_mut().zip(&bn.gamma) {
                *m = g.abs() >= tau;
            }
        }
        live[idx] = Some(mask);
    }
    live
}

pub fn sparsity_report(model: &Model, tau: f64) -> Result<SparsityReport> {
    if !(tau > 0.0) {
        return Err(QvnnError::Contract(format!("threshold must be positive, got {tau}")));
    }
    let weights = model.weights();
    let components: usize = weights.iter().map(|w| 4 * w.len()).sum();
    let quats: usize = weights.iter().map(|w| w.len()).sum();
    let zero_components = weights
        .iter()
        .flat_map(|w| w.as_slice())
        .filter(|v| v.abs() < tau)
        .count();
    let zero_quats = weights
        .iter()
        .flat_map(|w| w.iter())
        .filter(|q| q.to_array().iter().all(|v| v.abs() < tau))
        .count();
    let gammas = model.gammas();
    let dead = gammas.iter().filter(|g| g.abs() < tau).count();

    let shapes = model.layer_shapes()?;
    let liveness = channel_liveness(model, tau);
    // Live channels of the current activation; the input is fully live.
    let mut current = vec![true; model.input_shape[0]];
    let mut report = SparsityReport {
        component_sparsity: ratio(zero_components, components),
        quaternion_sparsity: ratio(zero_quats, quats),
        neuron_sparsity: ratio(dead, gammas.len()),
        live_params: 0,
        live_macs: 0,
        total_params: 0,
        total_macs: 0,
    };
    for (idx, layer) in model.layers.iter().enumerate() {
        let input = &shapes[idx];
        let output = &shapes[idx + 1];
        let out_live = match &liveness[idx] {
            Some(m) => m,
            None => continue,
        };
        let n_out = out_live.len();
        let live_out = out_live.iter().filter(|&&b| b).count();
        let live_in = current.iter().filter(|&&b| b).count();
        let (per_pair, positions) = match layer {
            Layer::Conv2d(l) => {
                let (kh, kw) = l.kernel_size();
                (kh * kw, output[1] * output[2])
            }
            // A dense layer sees every spatial position of each input channel.
            Layer::Dense(_) => (input[1..].iter().product::<usize>(), 1),
            _ => unreachable!("only parameterized layers carry liveness"),
        };
        let n_in = current.len();
        report.total_params += n_out * n_in * per_pair + n_out;
        report.live_params += live_out * live_in * per_pair + live_out;
        report.total_macs += positions * n_out * n_in * per_pair;
        report.live_macs += positions * live_out * live_in * per_pair;
        current = out_live.clone();
    }
    Ok(report)
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Copy of `model` with every `|γ| < τ` set to exactly 0.
pub fn mask_gamma(model: &Model, tau: f64) -> Model {
    let mut masked = model.clone();
    for layer in &mut masked.layers {
        if let Layer::BatchNorm(bn) = layer {
            for g in &mut bn.gamma {
                if g.abs() < tau {
                    *g = 0.0;
                }
            }
        }
    }
    masked
}

/// Keeps the given indices along `axis`.
fn select_axis(t: &QTensor, axis: usize, keep: &[usize]) -> QTensor {
    let shape = t.shape();
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    let extent = shape[axis];
    let mut new_shape = shape.to_vec();
    new_shape[axis] = keep.len();
    let mut out = QTensor::zeros(&new_shape);
    for comp in 0..4 {
        let src = t.plane(comp);
        let dst = out.plane_mut(comp);
        let mut d = 0;
        for o in 0..outer {
            for &k in keep {
                let s = (o * extent + k) * inner;
                dst[d..d + inner].copy_from_slice(&src[s..s + inner]);
                d += inner;
            }
        }
    }
    out
}

fn select_vec(v: &[f64], keep: &[usize]) -> Vec<f64> {
    keep.iter().map(|&k| v[k]).collect()
}

/// Removes every batch-norm channel with `|γ| < τ` together with the
/// producing layer's output channel and the consuming layer's input slice.
///
/// A removed channel's output after batch norm is the constant β (exactly,
/// when γ = 0). That constant is pushed through the layers between the batch
/// norm and the next parameterized layer and folded into that layer's bias.
/// The fold is exact for dense layers and unpadded convolutions; a padded
/// convolution sees zeros instead of the constant near the border.
pub fn prune_gamma(model: &Model, tau: f64) -> Result<Model> {
    if !(tau > 0.0) {
        return Err(QvnnError::Contract(format!("threshold must be positive, got {tau}")));
    }
    if !model.has_batchnorm() {
        return Err(QvnnError::Contract(
            "pruning removes channels with small batch-norm scales, but the model has no \
             batch-norm layers"
                .into(),
        ));
    }
    let mut pruned = model.clone();
    for bn_idx in 0..pruned.layers.len() {
        let bn = match &pruned.layers[bn_idx] {
            Layer::BatchNorm(bn) => bn.clone(),
            _ => continue,
        };
        let remove: Vec<usize> = (0..bn.channels()).filter(|&c| bn.gamma[c].abs() < tau).collect();
        if remove.is_empty() {
            continue;
        }
        let keep: Vec<usize> = (0..bn.channels()).filter(|&c| bn.gamma[c].abs() >= tau).collect();
        if keep.is_empty() {
            return Err(QvnnError::Contract(format!(
                "threshold {tau} would remove all {} channels of the batch norm at layer {bn_idx}; \
                 at least one must survive",
                bn.channels()
            )));
        }
        let producer = (0..bn_idx)
            .rev()
            .take_while(|&i| !matches!(pruned.layers[i], Layer::BatchNorm(_)))
            .find(|&i| pruned.layers[i].weight().is_some())
            .ok_or_else(|| {
                QvnnError::Contract(format!("batch norm at layer {bn_idx} has no producing layer"))
            })?;
        let consumer = (bn_idx + 1..pruned.layers.len())
            .find(|&i| pruned.layers[i].weight().is_some())
            .ok_or_else(|| {
                QvnnError::Contract(format!(
                    "batch norm at layer {bn_idx} feeds the output head directly; its channels \
                     cannot be removed"
                ))
            })?;

        // Constant carried by each removed channel into the consumer.
        let mut constants: Vec<Quaternion> = remove.iter().map(|&c| bn.beta.get(c)).collect();
        for layer in &pruned.layers[bn_idx + 1..consumer] {
            match layer {
                Layer::Activation(a) => {
                    for q in &mut constants {
                        *q = q.map(|v| a.kind.apply(v));
                    }
                }
                Layer::MaxPool(_) | Layer::Dropout(_) => {}
                other => {
                    return Err(QvnnError::Contract(format!(
                        "cannot fold a constant channel through a {} layer",
                        other.name()
                    )))
                }
            }
        }

        let consumer_input = pruned.layer_shapes()?[consumer].clone();
        match &mut pruned.layers[consumer] {
            Layer::Conv2d(conv) => {
                let [o_n, c_n, kh, kw] = *conv.kernels.shape() else { unreachable!() };
                for o in 0..o_n {
                    let mut acc = conv.bias.get(o);
                    for (&c, &k) in remove.iter().zip(&constants) {
                        for t in 0..kh * kw {
                            acc += conv.kernels.get((o * c_n + c) * kh * kw + t) * k;
                        }
                    }
                    conv.bias.set(o, acc);
                }
                conv.kernels = select_axis(&conv.kernels, 1, &keep);
            }
            Layer::Dense(dense) => {
                let channels = consumer_input[0];
                let spatial: usize = consumer_input[1..].iter().product();
                let out = dense.out_features();
                for o in 0..out {
                    let mut acc = dense.bias.get(o);
                    for (&c, &k) in remove.iter().zip(&constants) {
                        for s in 0..spatial {
                            acc += dense.weight.get(o * channels * spatial + c * spatial + s) * k;
                        }
                    }
                    dense.bias.set(o, acc);
                }
                let w = dense.weight.clone().reshape(&[out, channels, spatial])?;
                dense.weight = select_axis(&w, 1, &keep).reshape(&[out, keep.len() * spatial])?;
            }
            _ => unreachable!("consumer has weights"),
        }

        match &mut pruned.layers[producer] {
            Layer::Conv2d(conv) => {
                conv.kernels = select_axis(&conv.kernels, 0, &keep);
                conv.bias = select_axis(&conv.bias, 0, &keep);
            }
            Layer::Dense(dense) => {
                dense.weight = select_axis(&dense.weight, 0, &keep);
                dense.bias = select_axis(&dense.bias, 0, &keep);
            }
            _ => unreachable!("producer has weights"),
        }

        pruned.layers[bn_idx] = Layer::BatchNorm(QBatchNorm {
            gamma: select_vec(&bn.gamma, &keep),
            beta: select_axis(&bn.beta, 0, &keep),
            running_mean: select_axis(&bn.running_mean, 0, &keep),
            running_var: select_vec(&bn.running_var, &keep),
            epsilon: bn.epsilon,
            momentum: bn.momentum,
        });
    }
    pruned.layer_shapes()?;
    Ok(pruned)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::random_batch;
    use crate::presets;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn trained_like(seed: u64) -> Model {
        let mut model = presets::build("mnist-qcnn-bn", seed, 0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in &mut model.layers {
            if let Layer::BatchNorm(bn) = layer {
                for c in 0..bn.channels() {
                    bn.gamma[c] = rng.gen_range(0.5..1.5);
                    bn.beta.set(c, Quaternion::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
                    bn.running_mean.set(c, Quaternion::new(rng.gen_range(-0.1..0.1), 0.0, 0.0, 0.0));
                    bn.running_var[c] = rng.gen_range(0.5..2.0);
                }
            }
        }
        model
    }

    #[test]
    fn report_examples() {
        let mut model = presets::build("mnist-qcnn", 0, 0.0).unwrap();
        for layer in &mut model.layers {
            for (_, s) in layer.params_mut() {
                s.iter_mut().for_each(|v| *v = 0.0);
            }
        }
        let r = sparsity_report(&model, 1e-3).unwrap();
        assert_eq!((r.component_sparsity, r.quaternion_sparsity, r.neuron_sparsity), (1.0, 1.0, 0.0));
        assert_eq!(r.live_macs, r.total_macs);

        let single = Model::new(
            vec![1, 1, 1],
            1,
            vec![Layer::Dense(crate::layers::QDense {
                weight: QTensor::from_quaternions(&[1, 1], &[Quaternion::ONE]).unwrap(),
                bias: QTensor::zeros(&[1]),
            })],
        )
        .unwrap();
        let r = sparsity_report(&single, 1e-3).unwrap();
        assert_eq!((r.component_sparsity, r.quaternion_sparsity), (0.75, 0.0));
        assert_eq!((r.live_params, r.live_macs), (2, 1));
    }

    #[test]
    fn mac_counts_match_the_architecture() {
        let model = presets::build("mnist-qcnn", 0, 0.0).unwrap();
        let r = sparsity_report(&model, 1e-3).unwrap();
        let expected = 26 * 26 * 16 * 9 + 11 * 11 * 32 * 16 * 9 + 10 * 800;
        assert_eq!(r.total_macs, expected);
        assert_eq!(r.total_params, model.weight_count() + 16 + 32 + 10);
    }

    #[test]
    fn unchanged_when_no_channel_is_below_threshold() {
        let model = trained_like(1);
        let pruned = prune_gamma(&model, 1e-3).unwrap();
        assert_eq!(pruned, model);
    }

    #[test]
    fn zero_gamma_channels_fold_exactly() {
        let mut model = trained_like(2);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for layer in &mut model.layers {
            if let Layer::BatchNorm(bn) = layer {
                for c in 0..bn.channels() {
                    if rng.gen_bool(0.3) {
                        bn.gamma[c] = 0.0;
                    }
                }
            }
        }
        let pruned = prune_gamma(&model, 1e-3).unwrap();
        assert!(pruned.weight_count() < model.weight_count());
        let (x, _) = random_batch(&model, 8, 4);
        let a = model.forward(&x).unwrap();
        let b = pruned.forward(&x).unwrap();
        for (u, v) in a.as_slice().iter().zip(b.as_slice()) {
            assert!((u - v).abs() <= 1e-9 * u.abs().max(1.0), "{u} vs {v}");
        }
        let after = sparsity_report(&pruned, 1e-3).unwrap();
        assert_eq!(after.neuron_sparsity, 0.0);
        let before = sparsity_report(&model, 1e-3).unwrap();
        assert_eq!(after.total_macs, before.live_macs);
    }

    #[test]
    fn refuses_to_remove_every_channel_or_work_without_batch_norm() {
        let mut model = trained_like(3);
        if let Layer::BatchNorm(bn) = &mut model.layers[1] {
            bn.gamma.iter_mut().for_each(|g| *g = 0.0);
        }
        assert!(matches!(prune_gamma(&model, 1e-3), Err(QvnnError::Contract(_))));
        let plain = presets::build("mnist-qcnn", 0, 0.0).unwrap();
        assert!(matches!(prune_gamma(&plain, 1e-3), Err(QvnnError::Contract(_))));
    }

    #[test]
    fn masking_zeroes_small_scales_only() {
        let mut model = trained_like(5);
        if let Layer::BatchNorm(bn) = &mut model.layers[1] {
            bn.gamma[0] = 5e-4;
            bn.gamma[1] = -2e-4;
        }
        let masked = mask_gamma(&model, 1e-3);
        let g = masked.gammas();
        assert_eq!((g[0], g[1]), (0.0, 0.0));
        assert_eq!(&g[2..], &model.gammas()[2..]);
    }
}
