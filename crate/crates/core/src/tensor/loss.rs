//! Loss heads: batch-mean squared 2-norm for regression, softmax
//! cross-entropy for classification. Both return the scalar loss and the
//! gradient with respect to the predictions.

use super::Tensor4;

/// Mean over the batch of squared 2-norms: (1/B)·Σ_b ‖pred_b − target_b‖².
/// The gradient is 2·(pred − target)/B elementwise.
pub fn mse_loss(pred: &Tensor4, target: &Tensor4) -> (f64, Tensor4) {
    assert_eq!(pred.dims(), target.dims(), "loss shape mismatch");
    let b = pred.batch as f64;
    let mut grad = Tensor4::zeros(pred.batch, pred.channels, pred.height, pred.width);
    let mut loss = 0.0;
    for ((g, p), t) in grad.data.iter_mut().zip(pred.data.iter()).zip(target.data.iter()) {
        let r = p - t;
        loss += r * r;
        *g = 2.0 * r / b;
    }
    (loss / b, grad)
}

/// Softmax cross-entropy over per-item logits of shape (B, T, 1, 1); labels
/// are class indices. Loss is the batch mean of −log p(label).
pub fn cross_entropy_loss(logits: &Tensor4, labels: &[usize]) -> (f64, Tensor4) {
    assert_eq!(logits.batch, labels.len(), "one label per batch item");
    assert_eq!(logits.height * logits.width, 1, "logits must be flat");
    let t = logits.channels;
    let b = logits.batch;
    let mut grad = Tensor4::zeros(b, t, 1, 1);
    let mut loss = 0.0;
    for bi in 0..b {
        assert!(labels[bi] < t, "label {} out of {t} classes", labels[bi]);
        let row = &logits.data[bi * t..(bi + 1) * t];
        let max = row.iter().fold(f64::NEG_INFINITY, |a, &v| a.max(v));
        let mut denom = 0.0;
        for &v in row {
            denom += (v - max).exp();
        }
        let log_denom = denom.ln() + max;
        loss += log_denom - row[labels[bi]];
        let grow = &mut grad.data[bi * t..(bi + 1) * t];
        for (k, g) in grow.iter_mut().enumerate() {
            let p = (row[k] - log_denom).exp();
            *g = (p - if k == labels[bi] { 1.0 } else { 0.0 }) / b as f64;
        }
    }
    (loss / b as f64, grad)
}
