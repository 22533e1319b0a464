use super::tensor::{Scalar, Tensor};

pub fn relu<T: Scalar>(t: &Tensor<T>) -> Tensor<T> {
    t.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Passes `grad_out` where the forward input was strictly positive.
pub fn relu_backward<T: Scalar>(input: &Tensor<T>, grad_out: &Tensor<T>) -> Tensor<T> {
    let mut g = grad_out.clone();
    for (d, &x) in g.data_mut().iter_mut().zip(input.data()) {
        if x <= T::zero() {
            *d = T::zero();
        }
    }
    g
}
