//! Differentiable layers with hand-written forward and backward passes.
//!
//! Activations carry an explicit leading batch axis (`N×C×T×H×W`); the
//! layer functions also accept unbatched `C×T×H×W` tensors.

mod batchnorm;
mod block;
mod conv;
mod ops;
mod spec;

pub use batchnorm::{BatchNorm, NormCache, NormMode, BN_EPSILON, BN_MOMENTUM};
pub use block::{BlockCache, ConvBlock};
pub use conv::{
    conv3d, conv3d_backward, conv_any, conv_any_backward, deconv3d, deconv3d_backward, ConvGrads, ConvParams,
};
pub use ops::{
    center_crop, center_crop_backward, channel_shuffle, channel_shuffle_backward, global_avg_pool,
    global_avg_pool_backward, leaky_relu, shuffle_source, tanh_act, Activation, LEAKY_SLOPE,
};
pub use spec::ConvSpec;

#[allow(unused_imports)]
pub(crate) use conv::{join_dims, split_dims};

use crate::tensor::{Real, Tensor};

/// A trainable tensor with its gradient accumulator.
#[derive(Clone, Debug)]
pub struct Param<T: Real> {
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
}

impl<T: Real> Param<T> {
    pub fn new(value: Tensor<T>) -> Self {
        let grad = Tensor::zeros(value.dims());
        Self { value, grad }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(T::zero());
    }
}

/// Mutable view of one named parameter and its gradient, as handed to the
/// optimizer and the checkpoint writer.
pub struct ParamRef<'a, T: Real> {
    pub name: String,
    pub value: &'a mut Tensor<T>,
    pub grad: &'a mut Tensor<T>,
}

impl<'a, T: Real> ParamRef<'a, T> {
    pub fn new(name: String, value: &'a mut Tensor<T>, grad: &'a mut Tensor<T>) -> Self {
        Self { name, value, grad }
    }
}
