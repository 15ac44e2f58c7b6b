//! Bias-corrected Adam over every real component of every parameter.

use crate::autograd::GradientSet;
use crate::error::{QvnnError, Result};
use crate::model::Model;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    /// First and second moments, one flat vector per (layer, parameter) in
    /// canonical order.
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(model: &Model, config: AdamConfig) -> Self {
        let sizes: Vec<usize> = model
            .layers
            .iter()
            .flat_map(|l| l.params())
            .map(|(_, s)| s.len())
            .collect();
        AdamState {
            config,
            step: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn first_moments(&self) -> &[Vec<f64>] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Vec<f64>] {
        &self.v
    }
}

/// Applies one Adam update to `model`. Gradients are validated before any
/// parameter changes; a non-finite gradient aborts naming its layer.
pub fn adam_step(state: &mut AdamState, model: &mut Model, grads: &GradientSet) -> Result<()> {
    if grads.layers.len() != model.layers.len() {
        return Err(QvnnError::Dimension(format!(
            "gradients cover {} layers, model has {}",
            grads.layers.len(),
            model.layers.len()
        )));
    }
    for (idx, (layer, g)) in model.layers.iter().zip(&grads.layers).enumerate() {
        let params = layer.params();
        let slices = g.slices();
        if params.len() != slices.len()
            || params.iter().zip(&slices).any(|((k1, p), (k2, s))| k1 != k2 || p.len() != s.len())
        {
            return Err(QvnnError::Dimension(format!(
                "gradient for layer {idx} ({}) is not shaped like its parameters",
                layer.name()
            )));
        }
        for (kind, s) in slices {
            if let Some(pos) = s.iter().position(|v| !v.is_finite()) {
                return Err(QvnnError::NonFinite(format!(
                    "gradient of {} at layer {idx} ({}) is {} at component {pos}; training aborted",
                    kind.name(),
                    layer.name(),
                    s[pos]
                )));
            }
        }
    }

    state.step += 1;
    let AdamConfig { lr, beta1, beta2, epsilon } = state.config;
    let t = state.step as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    let mut slot = 0;
    for (layer, g) in model.layers.iter_mut().zip(&grads.layers) {
        for ((_, p), (_, s)) in layer.params_mut().into_iter().zip(g.slices()) {
            let m = &mut state.m[slot];
            let v = &mut state.v[slot];
            for n in 0..p.len() {
                let gn = s[n];
                m[n] = beta1 * m[n] + (1.0 - beta1) * gn;
                v[n] = beta2 * v[n] + (1.0 - beta2) * gn * gn;
                let m_hat = m[n] / c1;
                let v_hat = v[n] / c2;
                p[n] -= lr * m_hat / (v_hat.sqrt() + epsilon);
            }
            slot += 1;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::{Layer, QDense};
    use crate::quat::{QTensor, Quaternion};

    fn tiny() -> Model {
        let weight = QTensor::from_quaternions(
            &[1, 2],
            &[Quaternion::new(0.5, -0.5, 1.0, 2.0), Quaternion::new(0.5, -0.5, 1.0, 2.0)],
        )
        .unwrap();
        Model::new(
            vec![2, 1, 1],
            1,
            vec![Layer::Dense(QDense {
                weight,
                bias: QTensor::zeros(&[1]),
            })],
        )
        .unwrap()
    }

    #[test]
    fn zero_gradient_leaves_everything_unchanged() {
        let mut model = tiny();
        let before = model.clone();
        let mut state = AdamState::new(&model, AdamConfig::default());
        adam_step(&mut state, &mut model, &GradientSet::zeros_like(&before)).unwrap();
        assert_eq!(model, before);
        assert!(state.first_moments().iter().flatten().all(|&v| v == 0.0));
        assert!(state.second_moments().iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn constant_gradient_matches_scalar_recurrence() {
        let cfg = AdamConfig::default();
        let mut model = tiny();
        let mut state = AdamState::new(&model, cfg);
        let mut grads = GradientSet::zeros_like(&model);
        let g = 0.37;
        grads.layers[0].weight.as_mut().unwrap().as_mut_slice()[0] = g;
        let (mut m, mut v, mut w) = (0.0f64, 0.0f64, model.layers[0].params()[0].1[0]);
        for t in 1..=200 {
            adam_step(&mut state, &mut model, &grads).unwrap();
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let step = cfg.lr * (m / (1.0 - 0.9f64.powi(t))) / ((v / (1.0 - 0.999f64.powi(t))).sqrt() + cfg.epsilon);
            assert!(step <= cfg.lr * (1.0 + 1e-12));
            w -= step;
            assert!((model.layers[0].params()[0].1[0] - w).abs() < 1e-15);
        }
    }

    #[test]
    fn identical_gradients_give_identical_updates() {
        let mut model = tiny();
        let mut state = AdamState::new(&model, AdamConfig::default());
        let mut grads = GradientSet::zeros_like(&model);
        let w = grads.layers[0].weight.as_mut().unwrap();
        w.set(0, Quaternion::new(0.1, 0.2, -0.3, 0.4));
        w.set(1, Quaternion::new(0.1, 0.2, -0.3, 0.4));
        adam_step(&mut state, &mut model, &grads).unwrap();
        let weight = model.layers[0].weight().unwrap();
        assert_eq!(weight.get(0), weight.get(1));
    }

    #[test]
    fn nan_gradient_names_the_layer() {
        let mut model = tiny();
        let before = model.clone();
        let mut state = AdamState::new(&model, AdamConfig::default());
        let mut grads = GradientSet::zeros_like(&model);
        grads.layers[0].bias.as_mut().unwrap().as_mut_slice()[0] = f64::NAN;
        let err = adam_step(&mut state, &mut model, &grads).unwrap_err();
        assert!(matches!(err, QvnnError::NonFinite(_)));
        assert!(err.to_string().contains("layer 0 (dense)"));
        assert_eq!(model, before);
        assert_eq!(state.step, 0);
    }
}
