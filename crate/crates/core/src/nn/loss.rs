use crate::error::Result;
use crate::tensor::{Element, Tensor};

/// Mean squared error and its gradient with respect to `denoised`.
pub fn mse_loss<T: Element>(denoised: &Tensor<T>, reference: &Tensor<T>) -> Result<(T, Tensor<T>)> {
    denoised.ensure_same_shape(reference, "mse_loss")?;
    let count = T::from_usize(denoised.len().max(1)).unwrap();
    let two = T::one() + T::one();
    let mut sum = T::zero();
    let grad = Tensor::from_fn(denoised.shape(), |i| {
        let d = denoised.data()[i] - reference.data()[i];
        sum = sum + d * d;
        two * d / count
    });
    Ok((sum / count, grad))
}
