use crate::error::TensorError;
use crate::tensor::{Real, Tensor};

/// Row-wise softmax of an `N x K` tensor.
pub fn softmax<T: Real>(logits: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
    let (_, k) = logits.nf()?;
    let mut out = logits.clone();
    for row in out.data_mut().chunks_mut(k) {
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut z = T::zero();
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            z += *v;
        }
        for v in row.iter_mut() {
            *v = *v / z;
        }
    }
    Ok(out)
}

/// Mean cross-entropy over the batch and its gradient with respect to the
/// logits, `(softmax - onehot) / N`.
pub fn softmax_cross_entropy<T: Real>(logits: &Tensor<T>, labels: &[usize]) -> Result<(T, Tensor<T>), TensorError> {
    let (n, k) = logits.nf()?;
    if labels.len() != n {
        return Err(TensorError::LengthMismatch {
            shape: vec![n],
            len: labels.len(),
        });
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(TensorError::InvalidArgument(format!("label {bad} out of range for {k} classes")));
    }
    let mut grad = softmax(logits)?;
    let nn = T::from_count(n);
    let mut loss = T::zero();
    for ((row, probs), &label) in logits.data().chunks(k).zip(grad.data_mut().chunks_mut(k)).zip(labels) {
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = row.iter().map(|&v| (v - m).exp()).sum::<T>().ln() + m;
        loss += lse - row[label];
        probs[label] -= T::one();
        for p in probs.iter_mut() {
            *p = *p / nn;
        }
    }
    Ok((loss / nn, grad))
}
