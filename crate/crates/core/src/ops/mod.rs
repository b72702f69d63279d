//! Forward and backward implementations of the layer primitives.
//!
//! Forward functions are pure; backward functions take whatever the forward
//! needed (input, output or a cache), accumulate parameter gradients into the
//! parameter tensors and return the gradient with respect to the input.

pub mod activation;
pub mod conv;
pub mod linear;
pub mod norm;
pub mod pool;
pub mod reduce;

pub use activation::{relu, relu_backward, sigmoid, sigmoid_backward};
pub use conv::{conv2d, conv2d_backward, output_len, pwconv, ConvParams};
pub use linear::{fully_connected, fully_connected_backward, softmax_xent, softmax_xent_backward, FcParams};
pub use norm::{batchnorm, batchnorm_backward, BnCache, BnParams};
pub use pool::{maxpool2d, maxpool2d_backward, PoolCache};
pub use reduce::{flatten, gap, gap_backward, unflatten};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    Train,
    Eval,
}
