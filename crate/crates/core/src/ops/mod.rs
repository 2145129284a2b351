//! Forward operations and their hand-written vector-Jacobian products.
//!
//! Every function is pure. Shapes must match exactly; nothing broadcasts
//! implicitly (see [`broadcast_channels`] for the one explicit broadcast).

mod activation;
mod conv;
mod elementwise;
mod reduce;

pub use activation::{
    channel_softmax, channel_softmax_backward, relu_backward, relu_forward, sigmoid,
    sigmoid_backward, spatial_softmax, spatial_softmax_backward,
};
pub use conv::{
    conv1x1_backward, conv1x1_forward, conv3x3_backward, conv3x3_forward, conv3x3_output_extent,
    ConvGrads,
};
pub use elementwise::{
    add, broadcast_channels, channel_concat, channel_split, concat_height, hadamard,
    hadamard_backward, split_height, sum_channels,
};
pub use reduce::{reduce, reduce_backward, ReduceMode};

use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[inline]
pub(crate) fn checked<T: Scalar>(t: Tensor<T>) -> Tensor<T> {
    debug_assert!(t.is_finite(), "non-finite values in tensor {:?}", t.dims());
    t
}
