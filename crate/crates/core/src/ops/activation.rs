use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Gradient is zero wherever `x <= 0`, including exactly at zero.
pub fn relu_backward<T: Scalar>(x: &Tensor<T>, grad: &Tensor<T>) -> Result<Tensor<T>> {
    x.zip_map(grad, "relu_backward", |v, g| if v > T::zero() { g } else { T::zero() })
}

#[inline]
pub fn sigmoid_scalar<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

pub fn sigmoid<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(sigmoid_scalar)
}

/// Takes the forward *output* `y` and uses `dy/dx = y (1 - y)`.
pub fn sigmoid_backward<T: Scalar>(y: &Tensor<T>, grad: &Tensor<T>) -> Result<Tensor<T>> {
    if y.dims() != grad.dims() {
        return Err(Error::ShapeMismatch { op: "sigmoid_backward", left: y.dims(), right: grad.dims() });
    }
    y.zip_map(grad, "sigmoid_backward", |y, g| g * y * (T::one() - y))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_values() {
        let x = Tensor::<f32>::new([1, 1, 1, 3], vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(relu(&x).data(), &[0.0, 0.0, 2.0]);
        let g = Tensor::full([1, 1, 1, 3], 1.0).unwrap();
        assert_eq!(relu_backward(&x, &g).unwrap().data(), &[0.0, 0.0, 1.0]);
        let pos = Tensor::<f32>::new([1, 1, 1, 3], vec![0.0, 1.0, 3.5]).unwrap();
        assert_eq!(relu(&pos), pos);
    }

    #[test]
    fn sigmoid_values_and_saturation() {
        let x = Tensor::<f32>::new([1, 1, 1, 3], vec![0.0, 40.0, -40.0]).unwrap();
        let y = sigmoid(&x);
        assert_eq!(y.data()[0], 0.5);
        assert_eq!(y.data()[1], 1.0);
        assert!(y.data()[2] >= 0.0 && y.data()[2] < 1e-17);
        assert!(y.is_finite());
        let big = Tensor::<f32>::new([1, 1, 1, 2], vec![1e6, -1e6]).unwrap();
        assert!(sigmoid(&big).is_finite());
    }
}
