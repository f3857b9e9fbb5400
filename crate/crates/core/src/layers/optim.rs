use crate::error::TensorError;
use crate::tensor::Real;

/// One SGD step with heavy-ball momentum:
/// `v <- momentum * v + g`, `p <- p - lr * v`. With `momentum = 0` this is
/// exactly `p <- p - lr * g`.
pub fn sgd_step<T: Real>(
    params: &mut [T],
    grads: &[T],
    velocity: &mut [T],
    lr: T,
    momentum: T,
) -> Result<(), TensorError> {
    if params.len() != grads.len() || params.len() != velocity.len() {
        return Err(TensorError::LengthMismatch {
            shape: vec![params.len()],
            len: grads.len().min(velocity.len()),
        });
    }
    if !(lr > T::zero()) {
        return Err(TensorError::InvalidArgument("learning rate must be positive".into()));
    }
    if !(momentum >= T::zero() && momentum < T::one()) {
        return Err(TensorError::InvalidArgument("momentum must lie in [0, 1)".into()));
    }
    if momentum == T::zero() {
        for (p, &g) in params.iter_mut().zip(grads) {
            *p -= lr * g;
        }
        return Ok(());
    }
    for ((p, &g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        *v = momentum * *v + g;
        *p -= lr * *v;
    }
    Ok(())
}
