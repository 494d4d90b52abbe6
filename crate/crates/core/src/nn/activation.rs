use crate::error::Result;
use crate::tensor::{Element, Tensor};

/// `max(0, x)` elementwise.
pub fn relu<T: Element>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| v.max(T::zero()))
}

pub fn relu_inplace<T: Element>(t: &mut Tensor<T>) {
    for v in t.data_mut() {
        *v = v.max(T::zero());
    }
}

/// Gradient of [`relu`]. `cache` may be either the ReLU input or its output:
/// the gradient passes exactly where the value is strictly positive, so the
/// subgradient at zero is zero.
pub fn relu_backward<T: Element>(grad_out: &Tensor<T>, cache: &Tensor<T>) -> Result<Tensor<T>> {
    grad_out.ensure_same_shape(cache, "relu_backward")?;
    let data = grad_out
        .data()
        .iter()
        .zip(cache.data())
        .map(|(&g, &x)| if x > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::from_vec(grad_out.shape(), data)
}
