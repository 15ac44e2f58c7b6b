//! Classification head: quaternion norms as class scores, softmax, cross-entropy.

use crate::error::{QvnnError, Result};
use crate::quat::QTensor;

/// Norms below this are treated as zero; the norm's gradient there is 0.
const NORM_FLOOR: f64 = 1e-12;

/// `score[c] = |h[c]|`, over all elements of `h`.
pub fn abs_head(h: &QTensor) -> Vec<f64> {
    h.iter().map(|q| q.norm()).collect()
}

/// Numerically stable softmax.
pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// `−log softmax(scores)[label]`, stabilized by max subtraction.
pub fn softmax_xent(scores: &[f64], label: usize) -> Result<f64> {
    if label >= scores.len() {
        return Err(QvnnError::Index(format!(
            "label {label} outside {} classes",
            scores.len()
        )));
    }
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_sum = scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
    Ok(log_sum - (scores[label] - max))
}

/// Mean cross-entropy of a `[batch, classes]` network output and its gradient
/// with respect to that output.
pub fn batch_loss_and_grad(out: &QTensor, labels: &[usize]) -> Result<(f64, QTensor)> {
    let (batch, classes) = match *out.shape() {
        [b, c] => (b, c),
        _ => {
            return Err(QvnnError::Dimension(format!(
                "head expects [batch, classes], got {:?}",
                out.shape()
            )))
        }
    };
    if labels.len() != batch {
        return Err(QvnnError::Dimension(format!(
            "{} labels for a batch of {batch}",
            labels.len()
        )));
    }
    let scores = abs_head(out);
    let mut grad = QTensor::zeros(out.shape());
    let mut total = 0.0;
    for (n, &label) in labels.iter().enumerate() {
        let row = &scores[n * classes..(n + 1) * classes];
        total += softmax_xent(row, label)?;
        let probs = softmax(row);
        for c in 0..classes {
            let idx = n * classes + c;
            let dscore = (probs[c] - if c == label { 1.0 } else { 0.0 }) / batch as f64;
            let norm = row[c];
            if norm > NORM_FLOOR {
                grad.set(idx, out.get(idx).scale(dscore / norm));
            }
        }
    }
    Ok((total / batch as f64, grad))
}

/// Index of the largest score in each row of `[batch, classes]` scores.
pub fn predict(out: &QTensor) -> Result<Vec<usize>> {
    let classes = match *out.shape() {
        [_, c] if c > 0 => c,
        _ => {
            return Err(QvnnError::Dimension(format!(
                "head expects [batch, classes], got {:?}",
                out.shape()
            )))
        }
    };
    Ok(abs_head(out)
        .chunks_exact(classes)
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (c, &s)| if s > best.1 { (c, s) } else { best })
                .0
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quat::Quaternion;

    #[test]
    fn scores_are_norms() {
        let h = QTensor::from_quaternions(
            &[3],
            &[Quaternion::new(3.0, 0.0, 4.0, 0.0), Quaternion::ZERO, Quaternion::I],
        )
        .unwrap();
        assert_eq!(abs_head(&h), vec![5.0, 0.0, 1.0]);
        let p = softmax(&abs_head(&h));
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(p.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn cross_entropy_cases() {
        let c = 7;
        let loss = softmax_xent(&vec![0.3; c], 2).unwrap();
        assert!((loss - (c as f64).ln()).abs() < 1e-12);
        let loss = softmax_xent(&[1000.0, 0.0], 0).unwrap();
        assert!(loss.is_finite() && loss.abs() < 1e-12);
        let base = [0.1, 2.0, -0.5];
        let shifted: Vec<f64> = base.iter().map(|s| s + 123.0).collect();
        let (a, b) = (softmax_xent(&base, 1).unwrap(), softmax_xent(&shifted, 1).unwrap());
        assert!((a - b).abs() < 1e-12);
        assert!(matches!(softmax_xent(&base, 3), Err(QvnnError::Index(_))));
    }

    #[test]
    fn zero_output_has_zero_gradient() {
        let out = QTensor::zeros(&[1, 3]);
        let (loss, grad) = batch_loss_and_grad(&out, &[0]).unwrap();
        assert!((loss - 3f64.ln()).abs() < 1e-12);
        assert!(grad.as_slice().iter().all(|&v| v == 0.0));
    }
}
