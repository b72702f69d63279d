use crate::error::{Error, Result};
use crate::tensor::{Dims, Scalar, Tensor};

/// Global average pooling: `(n, c, h, w) -> (n, c, 1, 1)`, each output the
/// mean of its plane.
pub fn gap<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let d = x.dims();
    let denom = T::of(d.plane() as f64);
    let data = x
        .data()
        .chunks(d.plane())
        .map(|p| p.iter().fold(T::zero(), |a, &v| a + v) / denom)
        .collect();
    Tensor::new([d.n, d.c, 1, 1], data).expect("gap output dims")
}

/// Spreads each pooled gradient uniformly as `g / (h w)` over its plane.
pub fn gap_backward<T: Scalar>(input: Dims, grad: &Tensor<T>) -> Result<Tensor<T>> {
    let want = Dims::new(input.n, input.c, 1, 1);
    if grad.dims() != want {
        return Err(Error::ShapeMismatch { op: "gap_backward", left: want, right: grad.dims() });
    }
    let denom = T::of(input.plane() as f64);
    let data = grad
        .data()
        .iter()
        .flat_map(|&g| std::iter::repeat_n(g / denom, input.plane()))
        .collect();
    Tensor::new(input, data)
}

/// `(n, c, h, w) -> (n, c h w, 1, 1)` without touching the data order.
pub fn flatten<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let d = x.dims();
    x.clone().reshape([d.n, d.c * d.plane(), 1, 1]).expect("flatten dims")
}

pub fn unflatten<T: Scalar>(x: &Tensor<T>, dims: Dims) -> Result<Tensor<T>> {
    x.clone().reshape(dims)
}
