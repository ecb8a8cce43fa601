use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Numerically stable log-softmax of a single row.
pub fn log_softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln() + max;
    row.iter().map(|&v| v - lse).collect()
}

pub fn softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|&v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Row-wise softmax of a `[batch, C]` matrix.
pub fn softmax_rows(logits: &Tensor) -> Tensor {
    let data = logits.iter_rows().flat_map(softmax).collect();
    Tensor::new(logits.shape().to_vec(), data).expect("shape preserved")
}

/// Mean cross-entropy of `labels` under `softmax(logits)` and its gradient
/// `(softmax − onehot) / batch` with respect to the logits.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    if logits.shape().len() != 2 {
        return Err(Error::Dimension(format!(
            "logits must be [batch, classes], got {:?}",
            logits.shape()
        )));
    }
    let (batch, classes) = (logits.rows(), logits.cols());
    if labels.len() != batch {
        return Err(Error::Dimension(format!(
            "{} labels for a batch of {batch}",
            labels.len()
        )));
    }
    if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= classes) {
        return Err(Error::Input(format!(
            "label {l} at row {i} is out of range for {classes} classes"
        )));
    }
    let scale = 1.0 / batch as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(batch * classes);
    for (row, &label) in logits.iter_rows().zip(labels) {
        let logp = log_softmax(row);
        loss -= logp[label];
        grad.extend(logp.iter().enumerate().map(|(k, &lp)| {
            let onehot = if k == label { 1.0 } else { 0.0 };
            (lp.exp() - onehot) * scale
        }));
    }
    Ok((loss * scale, Tensor::new(vec![batch, classes], grad)?))
}
